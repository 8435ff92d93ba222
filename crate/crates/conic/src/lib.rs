//! Dense semidefinite programming over block-diagonal affine matrix inequalities.
//!
//! Programs are stated as `maximize c'x` subject to blocks
//! `G0 + sum_j x_j G_j` that are positive semidefinite, scalar nonnegative, or
//! identically zero. [`solve`] runs a primal-dual interior point method and
//! [`feasibility_margin`] solves the associated phase-I problem.

pub mod linalg;
mod phase1;
mod program;
mod scalar;
mod solver;

pub use phase1::{feasibility_margin, phase1_program, Margin};
pub use program::{residuals, BlockLmi, BlockResidual, Program, ProgramError, Sense};
pub use scalar::Real;
pub use solver::{solve, Residuals, SolveError, Solution, SolverOptions, Status};

pub type Program64 = Program<f64>;
pub type BlockLmi64 = BlockLmi<f64>;
pub type Solution64 = Solution<f64>;
pub type SolverOptions64 = SolverOptions<f64>;
