//! Small reference instances and random generators shared by the test suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::model::{ConstraintRow, MultiplierCone, Problem, ProblemKind, StageData, Trajectory};
use crate::oracle::{finite_horizon_set, OracleError};
use crate::simulate::{rollout_with, DisturbanceSequence};

/// A nominal stage with `y = (x, u)` and no uncertainty channels.
pub fn nominal_stage(a: DMatrix<f64>, b1: DMatrix<f64>, f: DVector<f64>, constraints: Vec<ConstraintRow<f64>>) -> StageData<f64> {
    let (n, m) = (a.nrows(), b1.ncols());
    let mut c1 = DMatrix::zeros(n + m, n);
    c1.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut d11 = DMatrix::zeros(n + m, m);
    d11.view_mut((n, 0), (m, m)).fill_with_identity();
    StageData {
        f,
        a,
        b1,
        b2: DMatrix::zeros(n, 0),
        g1: DVector::zeros(n + m),
        c1,
        d11,
        d12: DMatrix::zeros(n + m, 0),
        constraints,
        g3: DVector::zeros(0),
        c3: DMatrix::zeros(0, n),
        d31: DMatrix::zeros(0, m),
        d32: DMatrix::zeros(0, 0),
    }
}

/// Scalar row `|c x + d u| <= 1`.
pub fn row(c: &[f64], d: &[f64]) -> ConstraintRow<f64> {
    ConstraintRow::new(
        DVector::zeros(1),
        DMatrix::from_row_slice(1, c.len(), c),
        DMatrix::from_row_slice(1, d.len(), d),
    )
}

/// `x+ = x + u`, `y = (x, u)`, `|x| <= 8`, `|u| <= 4`, `N = 1`, `Pf = diag(0, 1)`, `x_bar = 1`.
///
/// The optimal cost is `min_u 1 + u^2 + (1 + u)^2 = 1.5`.
pub fn scalar_qp() -> Problem<f64> {
    let stage = nominal_stage(
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
        DVector::zeros(1),
        vec![row(&[0.125], &[0.0]), row(&[0.0], &[0.25])],
    );
    Problem {
        stages: vec![stage.clone(), stage],
        pf: DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0])),
        x_bar: DVector::from_element(1, 1.0),
        cone: MultiplierCone::default(),
        kind: ProblemKind::NominalFinite,
    }
}

/// Scales every constraint output by `1 / factor`, widening the bounds by `factor`.
pub fn widen_constraints(mut problem: Problem<f64>, factor: f64) -> Problem<f64> {
    for s in &mut problem.stages {
        for r in &mut s.constraints {
            r.g /= factor;
            r.c /= factor;
            r.d /= factor;
        }
    }
    problem
}

/// The example's nominal dynamics as a finite-horizon LQR with constraints widened by `1e6`.
pub fn deconstrained_lqr(horizon: usize) -> Problem<f64> {
    let ex = crate::model::build_example(0.0, 0.0);
    let s = &ex.stages[0];
    let stage = nominal_stage(s.a.clone(), s.b1.clone(), DVector::zeros(2), s.constraints.clone());
    let mut pf = DMatrix::identity(3, 3);
    pf[(0, 0)] = 0.0;
    let p = Problem {
        stages: vec![stage; horizon + 1],
        pf,
        x_bar: DVector::from_vec(vec![3.0, -2.0]),
        cone: MultiplierCone::default(),
        kind: ProblemKind::NominalFinite,
    };
    widen_constraints(p, 1e6)
}

fn uniform_matrix(rng: &mut impl Rng, r: usize, c: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

fn uniform_vector(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// Rolls out an open-loop input sequence with no uncertainty.
pub fn open_loop(problem: &Problem<f64>, inputs: &[DVector<f64>]) -> Trajectory<f64> {
    let d = DisturbanceSequence::zero(&problem.cone, inputs.len());
    rollout_with(problem, &problem.x_bar, &d, inputs.len(), |k, _| inputs[k].clone())
        .expect("nominal rollout cannot fail")
}

/// A random nominal instance together with a trajectory that strictly satisfies its constraints.
///
/// Bounds are placed outside a random open-loop trajectory, so the
/// trajectory has `max v'v <= 0.64`.
pub fn random_feasible_nominal(rng: &mut impl Rng) -> (Problem<f64>, Trajectory<f64>) {
    let n = rng.random_range(1..=3usize);
    let m = rng.random_range(1..=2usize);
    let horizon = rng.random_range(1..=4usize);
    let a = uniform_matrix(rng, n, n, -1.0, 1.0);
    let b1 = uniform_matrix(rng, n, m, -1.0, 1.0);
    let f = if rng.random_bool(0.5) {
        uniform_vector(rng, n, -0.3, 0.3)
    } else {
        DVector::zeros(n)
    };
    let x_bar = uniform_vector(rng, n, -2.0, 2.0);
    let inputs: Vec<_> = (0..horizon).map(|_| uniform_vector(rng, m, -1.0, 1.0)).collect();
    let w = uniform_matrix(rng, n + 1, n + 1, -1.0, 1.0);
    let pf = w.transpose() * &w + DMatrix::identity(n + 1, n + 1) * 0.1;
    let mut problem = Problem {
        stages: vec![nominal_stage(a, b1, f, vec![]); horizon + 1],
        pf,
        x_bar,
        cone: MultiplierCone::default(),
        kind: ProblemKind::NominalFinite,
    };
    let free = open_loop(&problem, &inputs);
    let mut rows = Vec::new();
    for i in 0..n {
        let peak = (0..horizon).map(|k| free.x[k][i].abs()).fold(0.0, f64::max);
        let mut c = vec![0.0; n];
        c[i] = 1.0 / (1.25 * peak + 0.1);
        rows.push(row(&c, &vec![0.0; m]));
    }
    for j in 0..m {
        let peak = inputs.iter().map(|u| u[j].abs()).fold(0.0, f64::max);
        let mut d = vec![0.0; m];
        d[j] = 1.0 / (1.25 * peak + 0.1);
        rows.push(row(&vec![0.0; n], &d));
    }
    for s in &mut problem.stages {
        s.constraints = rows.clone();
    }
    let traj = open_loop(&problem, &inputs);
    (problem, traj)
}

/// A random nominal instance whose initial state lies inside the state box but
/// outside the exact `N`-step feasible set, by at least `gap`.
///
/// Dynamics are unstable and the input is weak; the exact set comes from
/// [`finite_horizon_set`].
pub fn random_infeasible_nominal(rng: &mut impl Rng, gap: f64) -> Result<Problem<f64>, OracleError> {
    loop {
        let n = rng.random_range(1..=2usize);
        let horizon = rng.random_range(1..=4usize);
        let mut a = uniform_matrix(rng, n, n, -0.3, 0.3);
        for i in 0..n {
            a[(i, i)] += rng.random_range(1.2..1.6) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        let b1 = uniform_matrix(rng, n, 1, -1.0, 1.0);
        let bound = rng.random_range(2.0..6.0);
        let u_max = rng.random_range(0.2..1.0);
        let mut rows: Vec<_> = (0..n)
            .map(|i| {
                let mut c = vec![0.0; n];
                c[i] = 1.0 / bound;
                row(&c, &[0.0])
            })
            .collect();
        rows.push(row(&vec![0.0; n], &[1.0 / u_max]));
        let pf = DMatrix::identity(n + 1, n + 1);
        let mut problem = Problem {
            stages: vec![nominal_stage(a, b1, DVector::zeros(n), rows); horizon + 1],
            pf,
            x_bar: DVector::zeros(n),
            cone: MultiplierCone::default(),
            kind: ProblemKind::NominalFinite,
        };
        let set = finite_horizon_set(&problem)?;
        for _ in 0..50 {
            let x = uniform_vector(rng, n, -0.98 * bound, 0.98 * bound);
            if set.rows() == 0 {
                break;
            }
            let excess = (&set.h_mat * &x - &set.h).max();
            if excess > gap {
                problem.x_bar = x;
                return Ok(problem);
            }
        }
    }
}
