//! Affine matrix constraints and the programs built from them.
//!
//! A [`BlockLmi`] is the map `x -> G0 + sum_j x_j G_j` from the flat decision
//! vector to a symmetric matrix, together with the sense in which it is
//! constrained. A [`Program`] maximizes a linear objective over a list of such
//! blocks.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::Real;

/// How the value of a block is constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    /// Positive semidefinite.
    Psd,
    /// Scalar (1x1) block that must be nonnegative.
    Nonneg,
    /// Every entry must vanish.
    Zero,
}

impl Sense {
    pub fn as_str(self) -> &'static str {
        match self {
            Sense::Psd => "psd",
            Sense::Nonneg => "nonneg",
            Sense::Zero => "zero",
        }
    }
}

/// An affine symmetric-matrix-valued function of the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLmi<T: Real> {
    pub constant: DMatrix<T>,
    /// `(variable index, coefficient matrix)`, sorted by index with no repeats.
    pub terms: Vec<(usize, DMatrix<T>)>,
    pub sense: Sense,
}

impl<T: Real> BlockLmi<T> {
    pub fn new(constant: DMatrix<T>, sense: Sense) -> Self {
        assert!(constant.is_square(), "block constant must be square");
        if sense == Sense::Nonneg {
            assert_eq!(constant.nrows(), 1, "nonneg blocks are scalar");
        }
        Self {
            constant,
            terms: Vec::new(),
            sense,
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    /// Adds `coeff` to the coefficient of variable `var`, merging repeats.
    pub fn add_term(&mut self, var: usize, coeff: DMatrix<T>) {
        assert_eq!(coeff.shape(), self.constant.shape(), "coefficient shape mismatch");
        match self.terms.binary_search_by_key(&var, |(v, _)| *v) {
            Ok(pos) => self.terms[pos].1 += coeff,
            Err(pos) => self.terms.insert(pos, (var, coeff)),
        }
    }

    /// Removes terms whose coefficient matrix is identically zero.
    pub fn prune_zero_terms(&mut self) {
        self.terms.retain(|(_, m)| m.iter().any(|v| *v != T::zero()));
    }

    pub fn coefficient(&self, var: usize) -> Option<&DMatrix<T>> {
        self.terms
            .binary_search_by_key(&var, |(v, _)| *v)
            .ok()
            .map(|pos| &self.terms[pos].1)
    }

    pub fn max_var(&self) -> Option<usize> {
        self.terms.last().map(|(v, _)| *v)
    }

    pub fn evaluate(&self, x: &DVector<T>) -> DMatrix<T> {
        let mut out = self.constant.clone();
        for (var, coeff) in &self.terms {
            out += coeff * x[*var];
        }
        out
    }

    /// True when the constant and every coefficient are symmetric to `tol`.
    pub fn is_symmetric(&self, tol: T) -> bool {
        let sym = |m: &DMatrix<T>| {
            (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
        };
        sym(&self.constant) && self.terms.iter().all(|(_, m)| sym(m))
    }

    /// Multiplies the constant and all coefficients by `s`.
    pub fn scaled(&self, s: T) -> Self {
        Self {
            constant: &self.constant * s,
            terms: self.terms.iter().map(|(v, m)| (*v, m * s)).collect(),
            sense: self.sense,
        }
    }
}

/// `maximize objective' x` subject to every block constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Program<T: Real> {
    pub num_vars: usize,
    pub objective: DVector<T>,
    pub blocks: Vec<BlockLmi<T>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProgramError {
    #[error("block {block} references variable {var} but the program has {num_vars} variables")]
    UnknownVariable {
        block: usize,
        var: usize,
        num_vars: usize,
    },
    #[error("objective has length {got}, expected {expected}")]
    ObjectiveLength { got: usize, expected: usize },
    #[error("block {block} is not symmetric")]
    Asymmetric { block: usize },
}

impl<T: Real> Program<T> {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: DVector::zeros(num_vars),
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, block: BlockLmi<T>) -> usize {
        self.blocks.push(block);
        self.blocks.len() - 1
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.objective.len() != self.num_vars {
            return Err(ProgramError::ObjectiveLength {
                got: self.objective.len(),
                expected: self.num_vars,
            });
        }
        let tol = T::lit(1e3) * T::eps();
        for (b, block) in self.blocks.iter().enumerate() {
            if let Some(var) = block.max_var() {
                if var >= self.num_vars {
                    return Err(ProgramError::UnknownVariable {
                        block: b,
                        var,
                        num_vars: self.num_vars,
                    });
                }
            }
            let scale = block
                .terms
                .iter()
                .map(|(_, m)| m.amax())
                .fold(block.constant.amax(), |a, b| a.max(b));
            if !block.is_symmetric(tol * (T::one() + scale)) {
                return Err(ProgramError::Asymmetric { block: b });
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &DVector<T>) -> T {
        self.objective.dot(x)
    }

    /// Multiplies every block and the objective by `s`.
    pub fn scaled(&self, s: T) -> Self {
        Self {
            num_vars: self.num_vars,
            objective: &self.objective * s,
            blocks: self.blocks.iter().map(|b| b.scaled(s)).collect(),
        }
    }

    /// Sparse text form: one line per nonzero upper-triangle entry,
    /// `block var row col value`, with `var = -1` for the constant term.
    /// Header lines start with `#`.
    pub fn dump_sparse(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# vars {}", self.num_vars);
        for (j, c) in self.objective.iter().enumerate() {
            if *c != T::zero() {
                let _ = writeln!(out, "# objective {} {:e}", j, c);
            }
        }
        for (b, block) in self.blocks.iter().enumerate() {
            let _ = writeln!(out, "# block {} dim {} {}", b, block.dim(), block.sense.as_str());
        }
        for (b, block) in self.blocks.iter().enumerate() {
            let mut emit = |var: i64, m: &DMatrix<T>| {
                for c in 0..m.ncols() {
                    for r in 0..=c {
                        if m[(r, c)] != T::zero() {
                            let _ = writeln!(out, "{} {} {} {} {:e}", b, var, r, c, m[(r, c)]);
                        }
                    }
                }
            };
            emit(-1, &block.constant);
            for (var, m) in &block.terms {
                emit(*var as i64, m);
            }
        }
        out
    }
}

/// Evaluation of one block at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockResidual<T> {
    /// Minimum eigenvalue of a `Psd` or `Nonneg` block (negative = violated).
    MinEig(T),
    /// Largest absolute entry of a `Zero` block.
    EqViolation(T),
}

impl<T: Real> BlockResidual<T> {
    /// Signed margin: the minimum eigenvalue, or minus the equality violation.
    pub fn margin(&self) -> T {
        match *self {
            BlockResidual::MinEig(v) => v,
            BlockResidual::EqViolation(v) => -v,
        }
    }
}

/// Per-block minimum eigenvalues and equality violations at `x`.
pub fn residuals<T: Real>(program: &Program<T>, x: &DVector<T>) -> Vec<BlockResidual<T>> {
    program
        .blocks
        .iter()
        .map(|block| {
            let value = block.evaluate(x);
            match block.sense {
                Sense::Psd | Sense::Nonneg => BlockResidual::MinEig(linalg::min_eigenvalue(&value)),
                Sense::Zero => BlockResidual::EqViolation(value.amax()),
            }
        })
        .collect()
}
