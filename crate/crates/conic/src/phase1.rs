use nalgebra::{DMatrix, DVector};

use crate::program::{BlockLmi, Program, Sense};
use crate::solver::{solve, SolveError, SolverOptions, Status};
use crate::Real;

/// Result of the phase-I problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Margin<T: Real> {
    /// Optimal `t` in `max t s.t. G_b(x) ⪰ t I, t <= 1`.
    pub t_star: T,
    pub x: DVector<T>,
    pub status: Status,
    pub iterations: usize,
}

impl<T: Real> Margin<T> {
    /// Strictly feasible when the margin clears `feas_eps`.
    pub fn is_strictly_feasible(&self, feas_eps: T) -> bool {
        self.t_star > feas_eps
    }
}

/// Builds the phase-I program: one extra variable `t` (last index), every
/// cone block shifted by `-t I`, equality blocks kept as they are, and the
/// cap `t <= 1`.
pub fn phase1_program<T: Real>(program: &Program<T>) -> Program<T> {
    let n = program.num_vars;
    let mut out = Program::new(n + 1);
    out.objective[n] = T::one();
    for block in &program.blocks {
        let mut b = block.clone();
        if matches!(b.sense, Sense::Psd | Sense::Nonneg) {
            let d = b.dim();
            b.add_term(n, -DMatrix::identity(d, d));
        }
        out.push(b);
    }
    let mut cap = BlockLmi::new(DMatrix::from_element(1, 1, T::one()), Sense::Nonneg);
    cap.add_term(n, -DMatrix::identity(1, 1));
    out.push(cap);
    out
}

/// Largest uniform eigenvalue margin achievable by the program's cone blocks.
pub fn feasibility_margin<T: Real>(program: &Program<T>, opts: &SolverOptions<T>) -> Result<Margin<T>, SolveError> {
    program.validate()?;
    let p1 = phase1_program(program);
    let sol = solve(&p1, opts)?;
    let n = program.num_vars;
    Ok(Margin {
        t_star: sol.x[n],
        x: sol.x.rows(0, n).into_owned(),
        status: sol.status,
        iterations: sol.iterations,
    })
}
