//! Robust receding-horizon control of uncertain constrained affine systems.
//!
//! [`model`] holds the LFT plant data, [`lmi`] assembles the convexified
//! synthesis programs, [`synthesis`] solves and verifies them, [`simulate`]
//! and [`mpc`] close the loop, and [`oracle`] computes exact robust
//! controllable sets for comparison.

pub mod instances;
pub mod io;
pub mod lmi;
pub mod model;
pub mod mpc;
pub mod oracle;
pub mod simulate;
pub mod synthesis;

pub use lmih_conic::Real;

pub type Problem64 = model::Problem<f64>;
pub type StageData64 = model::StageData<f64>;
pub type Trajectory64 = model::Trajectory<f64>;
pub type Certificate64 = synthesis::Certificate<f64>;
pub type SynthOptions64 = synthesis::SynthOptions<f64>;
pub type Polytope64 = oracle::Polytope<f64>;
pub type DisturbanceSequence64 = simulate::DisturbanceSequence<f64>;
pub type ClosedLoop64 = mpc::ClosedLoop<f64>;
