//! Rollouts of the closed LFT loop under admissible disturbances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{lift, MultiplierCone, Problem, StageData, Trajectory};
use crate::synthesis::Certificate;
use crate::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("stage {0}: D32 is nonzero (algebraic loop)")]
    NonzeroD32(usize),
    #[error("policy has {got} gains, {need} steps requested")]
    PolicyTooShort { need: usize, got: usize },
    #[error("disturbance has {got} steps, {need} requested")]
    DisturbanceTooShort { need: usize, got: usize },
    #[error("delta at step {step} violates its bound")]
    OutOfBounds { step: usize },
    #[error("delta at step {step} has {got} entries, cone has {expected} channels")]
    ChannelCount { step: usize, got: usize, expected: usize },
    #[error("trajectory has {states} states for {steps} steps")]
    LengthMismatch { states: usize, steps: usize },
    #[error(transparent)]
    Csv(#[from] CsvError),
}

/// Thin wrapper so `SimError` stays `Clone + PartialEq`.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct CsvError(pub String);

impl From<csv::Error> for SimError {
    fn from(e: csv::Error) -> Self {
        SimError::Csv(CsvError(e.to_string()))
    }
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Csv(CsvError(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DisturbanceMode {
    /// Cycles through the vertices `+-gamma_i`; vertex `j` has channel `i`
    /// negative when bit `i` of `j` is set.
    Vertices,
    /// I.i.d. uniform on `[-gamma_i, gamma_i]`.
    Uniform,
    Custom,
}

impl DisturbanceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DisturbanceMode::Vertices => "vertices",
            DisturbanceMode::Uniform => "uniform",
            DisturbanceMode::Custom => "custom",
        }
    }
}

impl std::str::FromStr for DisturbanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vertices" | "vertex" => Ok(DisturbanceMode::Vertices),
            "uniform" => Ok(DisturbanceMode::Uniform),
            "custom" => Ok(DisturbanceMode::Custom),
            other => Err(format!("unknown disturbance mode `{other}`")),
        }
    }
}

/// Per-step channel scalars `delta_k` with `|delta_{k,i}| <= gamma_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSequence<T> {
    pub deltas: Vec<Vec<T>>,
    pub mode: DisturbanceMode,
}

impl<T: Real> DisturbanceSequence<T> {
    /// Zero disturbance for `steps` steps.
    pub fn zero(cone: &MultiplierCone<T>, steps: usize) -> Self {
        Self {
            deltas: vec![vec![T::zero(); cone.len()]; steps],
            mode: DisturbanceMode::Custom,
        }
    }

    /// A user supplied sequence, checked against the cone bounds.
    pub fn custom(cone: &MultiplierCone<T>, deltas: Vec<Vec<T>>) -> Result<Self, SimError> {
        let seq = Self {
            deltas,
            mode: DisturbanceMode::Custom,
        };
        seq.check(cone)?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn check(&self, cone: &MultiplierCone<T>) -> Result<(), SimError> {
        for (step, d) in self.deltas.iter().enumerate() {
            if d.len() != cone.len() {
                return Err(SimError::ChannelCount {
                    step,
                    got: d.len(),
                    expected: cone.len(),
                });
            }
            if d.iter().zip(&cone.channels).any(|(v, c)| !(v.abs() <= c.bound)) {
                return Err(SimError::OutOfBounds { step });
            }
        }
        Ok(())
    }

    /// Concatenates two sequences.
    pub fn chain(mut self, other: &Self) -> Self {
        self.deltas.extend(other.deltas.iter().cloned());
        if self.mode != other.mode {
            self.mode = DisturbanceMode::Custom;
        }
        self
    }
}

/// Samples `steps` channel scalars. Deterministic in `seed`; vertices ignore it.
pub fn sample_disturbances<T: Real>(
    cone: &MultiplierCone<T>,
    steps: usize,
    mode: DisturbanceMode,
    seed: u64,
) -> DisturbanceSequence<T> {
    let c = cone.len();
    let deltas = match mode {
        DisturbanceMode::Vertices => (0..steps)
            .map(|k| {
                let j = if c >= usize::BITS as usize { k } else { k % (1usize << c) };
                cone.channels
                    .iter()
                    .enumerate()
                    .map(|(i, ch)| if (j >> i) & 1 == 1 { -ch.bound } else { ch.bound })
                    .collect()
            })
            .collect(),
        DisturbanceMode::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..steps)
                .map(|_| {
                    cone.channels
                        .iter()
                        .map(|ch| {
                            let g = ch.bound.to_f64_lossy();
                            T::lit(rng.random_range(-g..=g)).max(-ch.bound).min(ch.bound)
                        })
                        .collect()
                })
                .collect()
        }
        DisturbanceMode::Custom => vec![vec![T::zero(); c]; steps],
    };
    DisturbanceSequence { deltas, mode }
}

/// Everything produced by one step of the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T: Real> {
    pub x_next: DVector<T>,
    pub w: DVector<T>,
    pub y: DVector<T>,
    pub v: Vec<DVector<T>>,
    pub z: DVector<T>,
}

/// One step with `w = diag(delta) z`; requires `D32 = 0`.
pub fn simulate_step<T: Real>(
    stage: &StageData<T>,
    cone: &MultiplierCone<T>,
    x: &DVector<T>,
    u: &DVector<T>,
    delta: &[T],
) -> StepOutput<T> {
    let z = stage.z_open(x, u);
    let w = cone.expand(delta).component_mul(&z);
    let (x_next, y, _) = stage.step(x, u, &w);
    let v = stage.constraints.iter().map(|c| c.eval(x, u)).collect();
    StepOutput { x_next, w, y, v, z }
}

fn check_d32<T: Real>(problem: &Problem<T>, steps: usize) -> Result<(), SimError> {
    for k in 0..steps.min(problem.stages.len()) {
        if problem.stage(k).d32.iter().any(|v| *v != T::zero()) {
            return Err(SimError::NonzeroD32(k));
        }
    }
    Ok(())
}

/// Rolls out an arbitrary state feedback `u_k = policy(k, x_k)` from `x0`.
pub fn rollout_with<T: Real>(
    problem: &Problem<T>,
    x0: &DVector<T>,
    disturbance: &DisturbanceSequence<T>,
    steps: usize,
    mut policy: impl FnMut(usize, &DVector<T>) -> DVector<T>,
) -> Result<Trajectory<T>, SimError> {
    check_d32(problem, steps)?;
    if disturbance.len() < steps {
        return Err(SimError::DisturbanceTooShort {
            need: steps,
            got: disturbance.len(),
        });
    }
    disturbance.check(&problem.cone)?;
    let mut traj = Trajectory {
        x: vec![x0.clone()],
        u: Vec::with_capacity(steps),
        w: Vec::with_capacity(steps),
        y: Vec::with_capacity(steps),
        v: Vec::with_capacity(steps),
        z: Vec::with_capacity(steps),
        cost: vec![T::zero()],
    };
    for k in 0..steps {
        let x = traj.x[k].clone();
        let u = policy(k, &x);
        let out = simulate_step(problem.stage(k), &problem.cone, &x, &u, &disturbance.deltas[k]);
        let cost = traj.cost[k] + out.y.norm_squared();
        traj.u.push(u);
        traj.x.push(out.x_next);
        traj.w.push(out.w);
        traj.y.push(out.y);
        traj.v.push(out.v);
        traj.z.push(out.z);
        traj.cost.push(cost);
    }
    Ok(traj)
}

/// Rolls out `u_k = K_k (1, x_k)` from `problem.x_bar`.
///
/// For the infinite kind the last gain is reused past the horizon.
pub fn rollout<T: Real>(
    problem: &Problem<T>,
    policy: &[DMatrix<T>],
    disturbance: &DisturbanceSequence<T>,
    steps: usize,
) -> Result<Trajectory<T>, SimError> {
    if policy.is_empty() || (problem.kind.is_finite() && policy.len() < steps) {
        return Err(SimError::PolicyTooShort {
            need: steps,
            got: policy.len(),
        });
    }
    rollout_with(problem, &problem.x_bar, disturbance, steps, |k, x| {
        &policy[k.min(policy.len() - 1)] * lift(x)
    })
}

/// `min_k V_k(x_k) - y_k' y_k - V_{k+1}(x_{k+1})` over the certified stages.
pub fn value_decrease_check<T: Real>(cert: &Certificate<T>, traj: &Trajectory<T>) -> Result<T, SimError> {
    let steps = traj.steps();
    if traj.x.len() != steps + 1 || traj.y.len() != steps {
        return Err(SimError::LengthMismatch {
            states: traj.x.len(),
            steps,
        });
    }
    let last = if cert.kind.is_finite() { steps.min(cert.horizon()) } else { steps };
    let mut worst = T::max_value().unwrap_or(T::lit(1e300));
    for k in 0..last {
        let m = cert.value(k, &traj.x[k]) - traj.y[k].norm_squared() - cert.value(k + 1, &traj.x[k + 1]);
        worst = worst.min(m);
    }
    Ok(worst)
}

/// Writes one row per step: `k, x.., u.., w.., y.., max_vtv[, V]`.
pub fn write_trajectory_csv<T: Real, W: std::io::Write>(
    out: W,
    traj: &Trajectory<T>,
    cert: Option<&Certificate<T>>,
) -> Result<(), SimError> {
    let mut wr = csv::Writer::from_writer(out);
    let dims = |v: &[DVector<T>]| v.first().map_or(0, |x| x.len());
    let mut header = vec!["k".to_string()];
    for (name, d) in [
        ("x", dims(&traj.x)),
        ("u", dims(&traj.u)),
        ("w", dims(&traj.w)),
        ("y", dims(&traj.y)),
    ] {
        header.extend((0..d).map(|i| format!("{name}{i}")));
    }
    header.push("max_vtv".into());
    if cert.is_some() {
        header.push("V".into());
    }
    wr.write_record(&header)?;
    for k in 0..traj.steps() {
        let mut row = vec![k.to_string()];
        for v in [&traj.x[k], &traj.u[k], &traj.w[k], &traj.y[k]] {
            row.extend(v.iter().map(|e| e.to_f64_lossy().to_string()));
        }
        row.push(traj.max_constraint(k).to_f64_lossy().to_string());
        if let Some(c) = cert {
            row.push(c.value(k, &traj.x[k]).to_f64_lossy().to_string());
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}
