//! Receding-horizon control on top of the infinite-horizon program.

use std::time::Instant;

use lmih_conic::linalg::{spd_inverse, symmetrize};
use nalgebra::DVector;

use crate::lmi::{assemble_program, sqrt_sigma, DecisionValues};
use crate::model::{dual_params, lift, Problem, ProblemKind, StageData, Trajectory};
use crate::simulate::{simulate_step, DisturbanceSequence, SimError};
use crate::synthesis::{certificate_from_point, prepare, synth, Certificate, SynthError, SynthOptions};
use crate::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MpcError {
    #[error("receding horizon control needs a robust_infinite problem, got {0}")]
    Kind(ProblemKind),
    #[error("step {step}: infeasible (phase-I margin {margin:e})")]
    Infeasible { step: usize, margin: f64 },
    #[error("step {step}: {source}")]
    Synth { step: usize, source: SynthError },
    #[error("cost budget exhausted: nu' = {0:e}")]
    Exhausted(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl MpcError {
    fn at(step: usize, e: SynthError) -> Self {
        match e {
            SynthError::Infeasible { margin } => MpcError::Infeasible { step, margin },
            source => MpcError::Synth { step, source },
        }
    }
}

/// Source of the data windows `(G_{j+k})_{k=0..=N}`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemStream<T: Real> {
    /// The same window at every step.
    Lti(Problem<T>),
    /// `stages[j]` is `G_j`; the last entry repeats forever.
    TimeVarying { template: Problem<T>, stages: Vec<StageData<T>> },
}

impl<T: Real> ProblemStream<T> {
    pub fn template(&self) -> &Problem<T> {
        match self {
            ProblemStream::Lti(p) => p,
            ProblemStream::TimeVarying { template, .. } => template,
        }
    }

    /// The window at time `j` with initial state `x`.
    pub fn window(&self, j: usize, x: &DVector<T>) -> Problem<T> {
        match self {
            ProblemStream::Lti(p) => p.clone().with_x_bar(x.clone()),
            ProblemStream::TimeVarying { template, stages } => {
                let nn = template.horizon();
                let last = stages.len() - 1;
                let mut p = template.clone().with_x_bar(x.clone());
                p.stages = (0..=nn).map(|k| stages[(j + k).min(last)].clone()).collect();
                p
            }
        }
    }

    /// True plant data at time `j`.
    pub fn stage(&self, j: usize) -> &StageData<T> {
        match self {
            ProblemStream::Lti(p) => p.stage(0),
            ProblemStream::TimeVarying { stages, .. } => &stages[j.min(stages.len() - 1)],
        }
    }
}

/// Solves the window and applies the first gain to `state`.
pub fn mpc_step<T: Real>(
    window: &Problem<T>,
    state: &DVector<T>,
    opts: &SynthOptions<T>,
) -> Result<(DVector<T>, Certificate<T>), SynthError> {
    if window.kind != ProblemKind::RobustInfinite {
        return Err(SynthError::Candidate(format!(
            "receding horizon control needs robust_infinite, got {}",
            window.kind
        )));
    }
    let problem = window.clone().with_x_bar(state.clone());
    let cert = synth(&problem, opts)?;
    let u = &cert.recovered.k[0] * lift(state);
    Ok((u, cert))
}

/// Shifts a certificate one step forward and re-inverts it for the next window.
///
/// `next` is the window at `j + 1` (with its initial state); the returned
/// certificate's margins are evaluated on that window's program.
pub fn shifted_candidate<T: Real>(
    cert: &Certificate<T>,
    next: &Problem<T>,
    y: &DVector<T>,
    opts: &SynthOptions<T>,
) -> Result<Certificate<T>, SynthError> {
    let next = prepare(next)?;
    let nn = cert.horizon();
    let rec = &cert.recovered;
    let shift = |k: usize| (k + 1).min(nn);
    let nu = rec.nu - y.norm_squared();
    if !(nu > T::zero()) {
        return Err(SynthError::Candidate(format!("cost budget exhausted (nu' = {:e})", nu.to_f64_lossy())));
    }
    let mut p_tilde = Vec::with_capacity(nn + 1);
    for k in 0..=nn {
        let mut inv = spd_inverse(&rec.p[shift(k)])
            .ok_or_else(|| SynthError::Recovery(format!("P_{} is not positive definite", shift(k))))?;
        symmetrize(&mut inv);
        p_tilde.push(inv);
    }
    let k_tilde = (0..rec.k.len())
        .map(|k| &rec.k[shift(k).min(rec.k.len() - 1)] * &p_tilde[k])
        .collect();
    let e_tilde = (0..rec.d.len())
        .map(|k| dual_params(&cert.cone, &rec.d[shift(k).min(rec.d.len() - 1)]))
        .collect();
    let mut nu_tilde = T::one() / nu;
    if let Some(cap) = opts.assemble.nu_cap {
        nu_tilde = nu_tilde.min(cap);
    }
    let s = sqrt_sigma(&next.x_bar);
    let z = &s * &rec.p[shift(0)] * &s * (nu_tilde * nu_tilde);
    let values = DecisionValues {
        p_tilde,
        k_tilde,
        nu_tilde,
        z,
        e_tilde,
    };
    let cp = assemble_program(&next, &opts.assemble)?;
    let x = cp.layout.encode(&values);
    certificate_from_point(&next, &cp, &x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcOptions<T> {
    pub synth: SynthOptions<T>,
    /// Evaluate the shifted candidate at every step after the first.
    pub check_candidate: bool,
    /// On an infeasible window apply the shifted previous policy instead of failing.
    pub fallback: bool,
}

impl<T: Real> Default for MpcOptions<T> {
    fn default() -> Self {
        Self {
            synth: SynthOptions::default(),
            check_candidate: true,
            fallback: false,
        }
    }
}

/// Log of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop<T: Real> {
    pub trajectory: Trajectory<T>,
    /// Certified bound `nu_j` per step (`NaN` where the window was infeasible).
    pub nu: Vec<T>,
    pub feasible: Vec<bool>,
    /// Cone margin of the shifted candidate at step `j` (`None` at `j = 0`).
    pub candidate_margin: Vec<Option<T>>,
    pub solve_ms: Vec<f64>,
    /// The certificate whose first gain was applied at step `j`.
    pub certificates: Vec<Certificate<T>>,
}

impl<T: Real> ClosedLoop<T> {
    pub fn all_feasible(&self) -> bool {
        self.feasible.iter().all(|f| *f)
    }

    /// Largest increase `nu_{j+1} - (nu_j - y_j' y_j)` over the run.
    pub fn worst_nu_increase(&self) -> T {
        let mut worst = T::lit(f64::NEG_INFINITY);
        for j in 0..self.nu.len().saturating_sub(1) {
            let d = self.nu[j + 1] - (self.nu[j] - self.trajectory.y[j].norm_squared());
            worst = worst.max(d);
        }
        worst
    }

    /// Writes `j, x.., u.., nu, yty, max_vtv, feasible, solve_ms`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), SimError> {
        let t = &self.trajectory;
        let mut wr = csv::Writer::from_writer(out);
        let mut header = vec!["j".to_string()];
        header.extend((0..t.x[0].len()).map(|i| format!("x{i}")));
        header.extend((0..t.u.first().map_or(0, |u| u.len())).map(|i| format!("u{i}")));
        header.extend(["nu", "yty", "max_vtv", "feasible", "solve_ms"].map(String::from));
        wr.write_record(&header)?;
        for j in 0..t.steps() {
            let mut row = vec![j.to_string()];
            row.extend(t.x[j].iter().map(|v| v.to_f64_lossy().to_string()));
            row.extend(t.u[j].iter().map(|v| v.to_f64_lossy().to_string()));
            row.push(self.nu[j].to_f64_lossy().to_string());
            row.push(t.y[j].norm_squared().to_f64_lossy().to_string());
            row.push(t.max_constraint(j).to_f64_lossy().to_string());
            row.push(self.feasible[j].to_string());
            row.push(format!("{:.3}", self.solve_ms[j]));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Runs the receding-horizon loop for `steps` steps on the true uncertain plant.
pub fn run_closed_loop<T: Real>(
    stream: &ProblemStream<T>,
    x0: &DVector<T>,
    disturbance: &DisturbanceSequence<T>,
    steps: usize,
    opts: &MpcOptions<T>,
) -> Result<ClosedLoop<T>, MpcError> {
    let template = stream.template();
    if template.kind != ProblemKind::RobustInfinite {
        return Err(MpcError::Kind(template.kind));
    }
    if disturbance.len() < steps {
        return Err(SimError::DisturbanceTooShort {
            need: steps,
            got: disturbance.len(),
        }
        .into());
    }
    disturbance.check(&template.cone)?;
    let mut log = ClosedLoop {
        trajectory: Trajectory {
            x: vec![x0.clone()],
            u: vec![],
            w: vec![],
            y: vec![],
            v: vec![],
            z: vec![],
            cost: vec![T::zero()],
        },
        nu: vec![],
        feasible: vec![],
        candidate_margin: vec![],
        solve_ms: vec![],
        certificates: vec![],
    };
    let mut prev: Option<Certificate<T>> = None;
    for j in 0..steps {
        let x = log.trajectory.x[j].clone();
        let window = stream.window(j, &x);
        let candidate = match (&prev, opts.check_candidate || opts.fallback) {
            (Some(c), true) => Some(
                shifted_candidate(c, &window, &log.trajectory.y[j - 1], &opts.synth).map_err(|e| MpcError::at(j, e))?,
            ),
            _ => None,
        };
        log.candidate_margin.push(candidate.as_ref().map(|c| c.program_margin));
        let start = Instant::now();
        let solved = mpc_step(&window, &x, &opts.synth);
        log.solve_ms.push(start.elapsed().as_secs_f64() * 1e3);
        let (u, cert) = match solved {
            Ok((u, cert)) => {
                log.nu.push(cert.nu());
                log.feasible.push(true);
                (u, cert)
            }
            Err(e) if j > 0 && opts.fallback && e.is_infeasible() => {
                let cert = candidate.expect("candidate is built when fallback is on");
                log.nu.push(T::lit(f64::NAN));
                log.feasible.push(false);
                (&cert.recovered.k[0] * lift(&x), cert)
            }
            Err(e) => return Err(MpcError::at(j, e)),
        };
        let out = simulate_step(stream.stage(j), &template.cone, &x, &u, &disturbance.deltas[j]);
        let t = &mut log.trajectory;
        let cost = t.cost[j] + out.y.norm_squared();
        t.u.push(u);
        t.x.push(out.x_next);
        t.w.push(out.w);
        t.y.push(out.y);
        t.v.push(out.v);
        t.z.push(out.z);
        t.cost.push(cost);
        log.certificates.push(cert.clone());
        prev = Some(cert);
    }
    Ok(log)
}
