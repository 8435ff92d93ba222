//! Synthesis programs, certificate recovery and verification, and the
//! closed-form open-loop candidate.

use lmih_conic::linalg::{max_eigenvalue, min_eigenvalue, spd_inverse, symmetrize};
use lmih_conic::{feasibility_margin, residuals, solve, BlockResidual, SolveError, SolverOptions, Status};
use nalgebra::{DMatrix, DVector};

use crate::lmi::{
    affine_state_map, assemble_program, sqrt_sigma, AssembleOptions, ConicProgram, DecisionLayout, DecisionValues,
    LmiError,
};
use crate::model::{
    hcat, lift, multiplier_from_params, validate, MultiplierCone, Problem, ProblemKind, StageData, Trajectory,
    ValidationError,
};
use crate::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid problem: {}", join(.0))]
    Invalid(Vec<ValidationError>),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Solver(#[from] SolveError),
    #[error("infeasible (phase-I margin {margin:e})")]
    Infeasible { margin: f64 },
    #[error("solver stopped with status {0}")]
    Numerical(&'static str),
    #[error("cannot recover certificate: {0}")]
    Recovery(String),
    #[error("candidate rejected: {0}")]
    Candidate(String),
}

fn join(errs: &[ValidationError]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

impl SynthError {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, SynthError::Infeasible { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions<T> {
    pub solver: SolverOptions<T>,
    pub assemble: AssembleOptions<T>,
    /// Strict-feasibility threshold on the phase-I margin.
    pub feas_eps: T,
    /// Maximize `nu~` after phase I; when false the phase-I point is returned.
    pub maximize: bool,
    /// Multiplies the objective; large values sharpen `nu~` when it is tiny.
    pub objective_scale: T,
}

impl<T: Real> Default for SynthOptions<T> {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            assemble: AssembleOptions::default(),
            feas_eps: T::lit(1e-7),
            maximize: true,
            objective_scale: T::one(),
        }
    }
}

/// Quantities recovered from the convexified variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovered<T: Real> {
    pub p: Vec<DMatrix<T>>,
    pub k: Vec<DMatrix<T>>,
    pub nu: T,
    /// Multiplier parameters `d_i` per stage.
    pub d: Vec<Vec<T>>,
    pub m: Vec<DMatrix<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub phase1_status: Status,
    pub phase1_iterations: usize,
    pub status: Option<Status>,
    pub iterations: usize,
    /// Weight given to the phase-I point when blending for strictness.
    pub blend: f64,
}

/// A solution of one of the synthesis programs, with recovered policy and value function.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate<T: Real> {
    pub kind: ProblemKind,
    /// Cone the multipliers refer to (degenerate channels removed).
    pub cone: MultiplierCone<T>,
    pub x: DVector<T>,
    pub values: DecisionValues<T>,
    pub recovered: Recovered<T>,
    /// Phase-I margin `t*`.
    pub feasibility_margin: T,
    /// Smallest cone-block margin of the program at `x`.
    pub program_margin: T,
    /// Largest violation of the equality blocks at `x`.
    pub equality_violation: T,
    pub stats: Option<SolveStats>,
}

impl<T: Real> Certificate<T> {
    pub fn horizon(&self) -> usize {
        self.recovered.p.len() - 1
    }

    pub fn nu(&self) -> T {
        self.recovered.nu
    }

    /// `V_k(x) = (1, x)' P_k (1, x)`, with `P_N` reused past the horizon.
    pub fn value(&self, k: usize, x: &DVector<T>) -> T {
        let p = &self.recovered.p[k.min(self.horizon())];
        let v = lift(x);
        (v.transpose() * p * &v)[(0, 0)]
    }

    /// `u = K_k (1, x)`, with the last gain reused past the horizon.
    pub fn input(&self, k: usize, x: &DVector<T>) -> Option<DVector<T>> {
        let gains = &self.recovered.k;
        let g = gains.get(k).or_else(|| if self.kind.is_finite() { None } else { gains.last() })?;
        Some(g * lift(x))
    }

    /// Uncertainty multiplier `M_k`, with the last one reused past the horizon.
    pub fn multiplier(&self, k: usize) -> Option<&DMatrix<T>> {
        let m = &self.recovered.m;
        m.get(k).or_else(|| if self.kind.is_finite() { None } else { m.last() })
    }
}

/// Prepares a problem for assembly: validation and removal of inactive channels.
pub fn prepare<T: Real>(problem: &Problem<T>) -> Result<Problem<T>, SynthError> {
    validate(problem).map_err(SynthError::Invalid)?;
    Ok(if problem.kind.is_robust() {
        problem.drop_degenerate_channels()
    } else {
        problem.clone()
    })
}

/// Smallest cone margin and largest equality violation of the program at `x`.
pub fn program_margins<T: Real>(cp: &ConicProgram<T>, x: &DVector<T>) -> (T, T) {
    let mut cone = T::max_value().unwrap_or(T::lit(1e300));
    let mut eq = T::zero();
    for r in residuals(&cp.program, x) {
        match r {
            BlockResidual::MinEig(v) => cone = cone.min(v),
            BlockResidual::EqViolation(v) => eq = eq.max(v),
        }
    }
    (cone, eq)
}

fn eq_tolerance<T: Real>(x: &DVector<T>) -> T {
    T::lit(1e-8) * x.amax().max(T::one())
}

/// Assembles, classifies via phase I, maximizes `nu~` and recovers the certificate.
pub fn synth<T: Real>(problem: &Problem<T>, opts: &SynthOptions<T>) -> Result<Certificate<T>, SynthError> {
    let problem = prepare(problem)?;
    let cp = assemble_program(&problem, &opts.assemble)?;
    let p1 = feasibility_margin(&cp.program, &opts.solver)?;
    let t_star = match p1.status {
        Status::Optimal => p1.t_star,
        Status::InfeasibleCertified => T::lit(-1.0),
        _ => {
            let (cone, eq) = program_margins(&cp, &p1.x);
            if eq <= eq_tolerance(&p1.x) {
                cone.min(p1.t_star)
            } else {
                -eq
            }
        }
    };
    if !(t_star > opts.feas_eps) {
        return Err(SynthError::Infeasible {
            margin: t_star.to_f64_lossy(),
        });
    }
    let mut stats = SolveStats {
        phase1_status: p1.status,
        phase1_iterations: p1.iterations,
        status: None,
        iterations: 0,
        blend: 1.0,
    };
    let mut x = p1.x.clone();
    if opts.maximize {
        let mut prog = cp.program.clone();
        prog.objective *= opts.objective_scale;
        let sol = solve(&prog, &opts.solver)?;
        stats.status = Some(sol.status);
        stats.iterations = sol.iterations;
        if matches!(sol.status, Status::Optimal | Status::IterationLimit | Status::NumericalFailure)
            && sol.x.iter().all(|v| v.is_finite())
        {
            // Smallest pull toward the phase-I point that restores every margin.
            for theta in [0.0, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
                let th = T::lit(theta);
                let cand = &sol.x * (T::one() - th) + &p1.x * th;
                let (cone, eq) = program_margins(&cp, &cand);
                if cone >= T::zero() && eq <= eq_tolerance(&cand) {
                    x = cand;
                    stats.blend = theta;
                    break;
                }
            }
        }
    }
    let mut cert = certificate_from_point(&problem, &cp, &x)?;
    cert.feasibility_margin = t_star;
    cert.stats = Some(stats);
    Ok(cert)
}

/// Recovers `P_k = P~_k^{-1}`, `K_k = K~_k P_k`, `nu = 1 / nu~` and the multipliers.
pub fn recover<T: Real>(problem: &Problem<T>, values: &DecisionValues<T>) -> Result<Recovered<T>, SynthError> {
    let mut p = Vec::with_capacity(values.p_tilde.len());
    for (k, pt) in values.p_tilde.iter().enumerate() {
        let mut inv = spd_inverse(pt).ok_or_else(|| SynthError::Recovery(format!("P~_{k} is not positive definite")))?;
        symmetrize(&mut inv);
        p.push(inv);
    }
    let k = values.k_tilde.iter().zip(&p).map(|(kt, pk)| kt * pk).collect();
    if !(values.nu_tilde > T::zero()) {
        return Err(SynthError::Recovery("nu~ is not positive".into()));
    }
    let cone = &problem.cone;
    let mut d = Vec::new();
    let mut m = Vec::new();
    for e in &values.e_tilde {
        if e.iter().any(|v| !(*v > T::zero())) {
            return Err(SynthError::Recovery("multiplier parameter is not positive".into()));
        }
        let di = crate::model::dual_params(cone, e);
        m.push(multiplier_from_params(cone, &di).map_err(|e| SynthError::Recovery(e.to_string()))?);
        d.push(di);
    }
    Ok(Recovered {
        p,
        k,
        nu: T::one() / values.nu_tilde,
        d,
        m,
    })
}

/// Builds a certificate from a point of an assembled program.
pub fn certificate_from_point<T: Real>(
    problem: &Problem<T>,
    cp: &ConicProgram<T>,
    x: &DVector<T>,
) -> Result<Certificate<T>, SynthError> {
    let values = cp.layout.decode(x);
    let recovered = recover(problem, &values)?;
    let (cone, eq) = program_margins(cp, x);
    Ok(Certificate {
        kind: problem.kind,
        cone: problem.cone.clone(),
        x: x.clone(),
        values,
        recovered,
        feasibility_margin: cone,
        program_margin: cone,
        equality_violation: eq,
        stats: None,
    })
}

/// Kinds of nonlinear condition checked by [`verify_certificate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckFamily {
    /// Stage-wise cost decrease.
    Cost,
    /// `nu >= V_0(x_bar)`.
    Initial,
    /// `P_N >= Pf`.
    Terminal,
    /// Stationary tail decrease on `P_N`.
    Tail,
    /// `P_k >= nu c_K' c_K`.
    Constraint,
    /// `P_k P~_k = I`, relative to the condition number of `P~_k`.
    Recovery,
}

impl CheckFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckFamily::Cost => "cost",
            CheckFamily::Initial => "initial",
            CheckFamily::Terminal => "terminal",
            CheckFamily::Tail => "tail",
            CheckFamily::Constraint => "constraint",
            CheckFamily::Recovery => "recovery",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport<T> {
    /// Worst normalized margin per family (negative = violated).
    pub worst: Vec<(CheckFamily, T)>,
    pub tol: T,
}

impl<T: Real> VerificationReport<T> {
    pub fn passed(&self) -> bool {
        self.worst.iter().all(|(_, m)| *m >= -self.tol)
    }

    pub fn margin(&self, family: CheckFamily) -> Option<T> {
        self.worst.iter().find(|(f, _)| *f == family).map(|(_, m)| *m)
    }

    fn record(&mut self, family: CheckFamily, margin: T) {
        match self.worst.iter_mut().find(|(f, _)| *f == family) {
            Some((_, m)) => *m = m.min(margin),
            None => self.worst.push((family, margin)),
        }
    }
}

/// `[I; K]`, the closed-loop substitution `(1, x, u) = [I; K](1, x)`.
fn closed_loop<T: Real>(k: &DMatrix<T>) -> DMatrix<T> {
    let d = k.ncols();
    crate::model::vcat(&[&DMatrix::identity(d, d), k])
}

/// The quadratic form of the stage decrease condition over `(1, x, w)`; it must be `<= 0`.
pub fn decrease_form<T: Real>(
    stage: &StageData<T>,
    p_now: &DMatrix<T>,
    p_next: &DMatrix<T>,
    k: &DMatrix<T>,
    m: Option<&DMatrix<T>>,
) -> DMatrix<T> {
    let n = stage.n();
    let d = 1 + n;
    let cl = closed_loop(k);
    let l = if m.is_some() { stage.l() } else { 0 };
    let dim = d + l;
    let mut lx = DMatrix::zeros(d, dim);
    lx.view_mut((0, 0), (d, d)).copy_from(&DMatrix::identity(d, d));
    let mut lp = DMatrix::zeros(d, dim);
    lp.view_mut((0, 0), (d, d)).copy_from(&(stage.dynamics_block() * &cl));
    let mut ly = DMatrix::zeros(stage.p(), dim);
    ly.view_mut((0, 0), (stage.p(), d)).copy_from(&(stage.output_block() * &cl));
    let mut f = -(lx.transpose() * p_now * &lx) + lp.transpose() * p_next * &lp;
    if let Some(m) = m {
        lp.view_mut((1, d), (n, l)).copy_from(&stage.b2);
        ly.view_mut((0, d), (stage.p(), l)).copy_from(&stage.d12);
        let q = stage.q();
        let mut lzw = DMatrix::zeros(q + l, dim);
        lzw.view_mut((0, 0), (q, d)).copy_from(&(stage.uncertainty_block() * &cl));
        lzw.view_mut((0, d), (q, l)).copy_from(&stage.d32);
        lzw.view_mut((q, d), (l, l)).copy_from(&DMatrix::identity(l, l));
        f = -(lx.transpose() * p_now * &lx) + lp.transpose() * p_next * &lp + lzw.transpose() * m * &lzw;
    }
    f += ly.transpose() * ly;
    symmetrize(&mut f);
    f
}

fn norm_scale<T: Real>(ms: &[&DMatrix<T>]) -> T {
    ms.iter().map(|m| m.amax()).fold(T::one(), |a, b| a.max(b))
}

/// Checks the recovered quantities against the original (nonconvex) conditions.
pub fn verify_certificate<T: Real>(
    problem: &Problem<T>,
    cert: &Certificate<T>,
    tol: T,
) -> Result<VerificationReport<T>, SynthError> {
    let problem = prepare(problem)?;
    let r = &cert.recovered;
    let nn = problem.horizon();
    if r.p.len() != nn + 1 {
        return Err(SynthError::Recovery(format!(
            "certificate has {} value matrices for horizon {nn}",
            r.p.len()
        )));
    }
    let mut report = VerificationReport { worst: Vec::new(), tol };
    for (pk, pt) in r.p.iter().zip(&cert.values.p_tilde) {
        let d = pk.nrows();
        let err = (pk * pt - DMatrix::identity(d, d)).amax();
        // inversion round-off grows with the condition number of P~
        let cond = max_eigenvalue(pt) / min_eigenvalue(pt).max(T::eps());
        report.record(CheckFamily::Recovery, -err / (cond * T::from_usize(d).unwrap()));
    }
    let robust = problem.kind.is_robust();
    for k in 0..nn {
        let m = if robust { Some(&r.m[k]) } else { None };
        let f = decrease_form(&problem.stages[k], &r.p[k], &r.p[k + 1], &r.k[k], m);
        let mut scales = vec![&r.p[k], &r.p[k + 1]];
        if let Some(m) = m {
            scales.push(m);
        }
        report.record(CheckFamily::Cost, -max_eigenvalue(&f) / norm_scale(&scales));
    }
    let v0 = cert.value(0, &problem.x_bar);
    report.record(CheckFamily::Initial, (r.nu - v0) / r.nu.max(T::one()));
    if problem.kind.is_finite() {
        let diff = &r.p[nn] - &problem.pf;
        report.record(CheckFamily::Terminal, min_eigenvalue(&diff) / norm_scale(&[&r.p[nn], &problem.pf]));
    } else {
        let f = decrease_form(&problem.stages[nn], &r.p[nn], &r.p[nn], &r.k[nn], Some(&r.m[nn]));
        report.record(CheckFamily::Tail, -max_eigenvalue(&f) / norm_scale(&[&r.p[nn], &r.m[nn]]));
    }
    let last = if problem.kind.is_finite() { nn } else { nn + 1 };
    for k in 0..last {
        let cl = closed_loop(&r.k[k]);
        for row in &problem.stages[k].constraints {
            let c = row.stacked() * &cl;
            let h = &r.p[k] - c.transpose() * &c * r.nu;
            let scale = norm_scale(&[&r.p[k]]).max(r.nu * c.amax() * c.amax());
            report.record(CheckFamily::Constraint, min_eigenvalue(&h) / scale);
        }
    }
    Ok(report)
}

/// How the `c_k` sequence of the open-loop candidate is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CRule {
    /// `c_j = sum_{k>=j} y'y + 2 max{eps^{-1} sum y'y, terminal}` with `nu~^{-1} = c_N / (1 - eps)`.
    #[default]
    Doubled,
    /// The same without the factor 2 and with `nu~^{-1} = c_0`.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuTildeChoice<T> {
    /// The value prescribed by the chosen `c_k` rule.
    Rule,
    /// A caller-supplied `nu~`, checked against `c_0 <= nu~^{-1}` and `c_k >= nu~^{-1} v'v`.
    Custom(T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateOptions<T> {
    pub rule: CRule,
    pub nu_tilde: NuTildeChoice<T>,
    /// Ridge added to the rank-one `P~_k`.
    pub ridge: T,
    /// Blend toward a strictly feasible point until every margin is positive.
    pub strict: bool,
}

impl<T: Real> Default for CandidateOptions<T> {
    fn default() -> Self {
        Self {
            rule: CRule::Doubled,
            nu_tilde: NuTildeChoice::Rule,
            ridge: T::lit(1e-9),
            strict: true,
        }
    }
}

/// The `c_k` sequence, margin and `nu~` of the open-loop construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateParams<T> {
    pub c: Vec<T>,
    pub eps: T,
    pub nu_tilde: T,
}

/// Computes `c_k`, `eps` and `nu~` from a nominal trajectory.
pub fn candidate_params<T: Real>(
    problem: &Problem<T>,
    traj: &Trajectory<T>,
    rule: CRule,
    choice: NuTildeChoice<T>,
) -> Result<CandidateParams<T>, SynthError> {
    let nn = problem.horizon();
    if traj.x.len() < nn + 1 || traj.u.len() < nn {
        return Err(SynthError::Candidate(format!("trajectory shorter than horizon {nn}")));
    }
    let worst = (0..nn).map(|k| traj.max_constraint(k)).fold(T::zero(), |a, b| a.max(b));
    let eps = T::one() - worst;
    if !(eps > T::zero()) {
        return Err(SynthError::Candidate("trajectory is not strictly feasible (eps <= 0)".into()));
    }
    let yy: Vec<T> = (0..nn).map(|k| traj.y[k].norm_squared()).collect();
    let total = yy.iter().fold(T::zero(), |a, b| a + *b);
    let xn = lift(&traj.x[nn]);
    let terminal = (xn.transpose() * &problem.pf * &xn)[(0, 0)];
    let factor = match rule {
        CRule::Doubled => T::lit(2.0),
        CRule::Plain => T::one(),
    };
    let base = factor * (total / eps).max(terminal);
    let mut c = vec![base; nn + 1];
    for j in (0..nn).rev() {
        c[j] = c[j + 1] + yy[j];
    }
    let nu_inv = match (choice, rule) {
        (NuTildeChoice::Custom(v), _) => {
            let inv = T::one() / v;
            let tol = T::lit(1e-12) * inv.max(T::one());
            if c[0] > inv + tol {
                return Err(SynthError::Candidate("custom nu~ violates c_0 <= nu~^{-1}".into()));
            }
            if (0..nn).any(|k| c[k] + tol < inv * traj.max_constraint(k)) {
                return Err(SynthError::Candidate("custom nu~ violates c_k >= nu~^{-1} v'v".into()));
            }
            inv
        }
        (NuTildeChoice::Rule, CRule::Doubled) if worst > T::zero() => c[nn] / (T::one() - eps),
        _ => c[0],
    };
    Ok(CandidateParams {
        c,
        eps,
        nu_tilde: T::one() / nu_inv,
    })
}

/// Strict value functions for `K = 0`: `P_N = Pf + I`, `P_k = Phi' P_{k+1} Phi + Psi' Psi + I`.
fn zero_gain_sweep<T: Real>(problem: &Problem<T>) -> Vec<DMatrix<T>> {
    let nn = problem.horizon();
    let d = 1 + problem.n();
    let mut p = vec![DMatrix::zeros(d, d); nn + 1];
    p[nn] = &problem.pf + DMatrix::identity(d, d);
    for k in (0..nn).rev() {
        let stage = &problem.stages[k];
        let phi = affine_state_map(stage);
        let psi = hcat(&[&crate::model::col(&stage.g1), &stage.c1]);
        let mut next = phi.transpose() * &p[k + 1] * &phi + psi.transpose() * psi + DMatrix::identity(d, d);
        symmetrize(&mut next);
        p[k] = next;
    }
    p
}

/// Builds a feasible point of the nominal program from a strictly feasible trajectory.
pub fn open_loop_candidate<T: Real>(
    problem: &Problem<T>,
    traj: &Trajectory<T>,
    opts: &CandidateOptions<T>,
) -> Result<Certificate<T>, SynthError> {
    if problem.kind != ProblemKind::NominalFinite {
        return Err(SynthError::Candidate("the open-loop construction needs a nominal_finite problem".into()));
    }
    let problem = prepare(problem)?;
    let params = candidate_params(&problem, traj, opts.rule, opts.nu_tilde)?;
    let nn = problem.horizon();
    let d = 1 + problem.n();
    let ridge = DMatrix::identity(d, d) * opts.ridge;
    let p_tilde = (0..=nn)
        .map(|k| {
            let v = lift(&traj.x[k]);
            &v * v.transpose() / params.c[k] + &ridge
        })
        .collect();
    let k_tilde = (0..nn)
        .map(|k| &traj.u[k] * lift(&traj.x[k]).transpose() / params.c[k])
        .collect();
    let xb = lift(&problem.x_bar);
    let nt = params.nu_tilde;
    let z = &xb * xb.transpose() * (params.c[0] * nt * nt / xb.norm_squared());
    let rank_one = DecisionValues {
        p_tilde,
        k_tilde,
        nu_tilde: nt,
        z,
        e_tilde: vec![],
    };
    let assemble = AssembleOptions {
        mu: T::zero(),
        nu_cap: None,
        pf_ridge: crate::lmi::terminal_inverse(&problem.pf, false).is_err(),
        ..AssembleOptions::default()
    };
    let cp = assemble_program(&problem, &assemble)?;
    let layout = &cp.layout;
    let mut x = layout.encode(&rank_one);
    if opts.strict && !(program_margins(&cp, &x).0 > T::zero()) {
        let mut hat = strict_point(&problem, layout, nt)?;
        if !(program_margins(&cp, &hat).0 > T::zero()) {
            // The scaled sweep can violate the trace bound; fall back to phase I.
            let p1 = feasibility_margin(&cp.program, &SolverOptions::default())?;
            if !(p1.t_star > T::zero()) {
                return Err(SynthError::Candidate("no strictly feasible reference point".into()));
            }
            hat = p1.x;
        }
        let mut alpha = T::lit(0.5);
        let mut found = false;
        for _ in 0..60 {
            let cand = &hat * alpha + &x * (T::one() - alpha);
            if program_margins(&cp, &cand).0 > T::zero() {
                x = cand;
                found = true;
                break;
            }
            alpha *= T::lit(0.5);
        }
        if !found {
            return Err(SynthError::Candidate("no strictly feasible blend found".into()));
        }
    }
    certificate_from_point(&problem, &cp, &x)
}

/// The point `(P^^~, K^^~, nu~, Z^)` built from the scaled zero-gain sweep.
fn strict_point<T: Real>(problem: &Problem<T>, layout: &DecisionLayout, nu_tilde: T) -> Result<DVector<T>, SynthError> {
    let nn = problem.horizon();
    let hat = zero_gain_sweep(problem);
    let nu = T::one() / nu_tilde;
    let mut beta = T::one();
    for (k, pk) in hat.iter().enumerate().take(nn) {
        let inv = spd_inverse(pk).ok_or_else(|| SynthError::Candidate("zero-gain sweep lost definiteness".into()))?;
        for row in &problem.stages[k].constraints {
            let c = hcat(&[&crate::model::col(&row.g), &row.c]);
            beta = beta.max(max_eigenvalue(&(&c * &inv * c.transpose())) * nu);
        }
    }
    beta *= T::lit(2.0);
    let mut p_tilde = Vec::new();
    for pk in &hat {
        let scaled = pk * beta;
        p_tilde.push(spd_inverse(&scaled).ok_or_else(|| SynthError::Candidate("singular sweep".into()))?);
    }
    let d = 1 + problem.n();
    let s = sqrt_sigma(&problem.x_bar);
    // The identity term makes the initial block definite off the range of S.
    let z = &s * (&hat[0] * beta) * &s * (T::lit(2.0) * nu_tilde * nu_tilde)
        + DMatrix::identity(d, d) * (nu_tilde / T::from_usize(2 * d).unwrap());
    let values = DecisionValues {
        p_tilde,
        k_tilde: vec![DMatrix::zeros(problem.m(), d); nn],
        nu_tilde,
        z,
        e_tilde: vec![],
    };
    Ok(layout.encode(&values))
}

/// Bound of the nominal program with terminal matrix `Pf + t e1 e1'`, minus `t`.
pub fn tightened_cost<T: Real>(problem: &Problem<T>, t: T, opts: &SynthOptions<T>) -> Result<T, SynthError> {
    if problem.kind != ProblemKind::NominalFinite {
        return Err(SynthError::Candidate("tightened cost needs a nominal_finite problem".into()));
    }
    let mut pf = problem.pf.clone();
    pf[(0, 0)] += t;
    let tightened = problem.clone().with_pf(pf);
    let mut o = *opts;
    o.objective_scale = opts.objective_scale * t.max(T::one());
    let cert = synth(&tightened, &o)?;
    Ok(cert.nu() - t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_example;

    #[test]
    fn outside_state_constraint_is_infeasible() {
        let p = build_example(0.1, 0.1)
            .with_horizon(1)
            .with_x_bar(DVector::from_vec(vec![100.0, 0.0]));
        let err = synth(&p, &SynthOptions::default()).unwrap_err();
        assert!(err.is_infeasible(), "{err}");
    }

    #[test]
    fn example_certificate_verifies() {
        let p = build_example(0.1, 0.1)
            .with_horizon(1)
            .with_x_bar(DVector::from_vec(vec![2.0, -1.0]));
        let cert = synth(&p, &SynthOptions::default()).unwrap();
        let rep = verify_certificate(&p, &cert, 1e-6).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(cert.program_margin >= 0.0);
        assert!(cert.nu() >= cert.value(0, &p.x_bar) - 1e-9);
    }

    #[test]
    fn zero_gain_sweep_is_strict() {
        let p = build_example(0.1, 0.1)
            .with_kind(ProblemKind::NominalFinite)
            .with_pf(DMatrix::identity(3, 3))
            .with_horizon(3);
        let hat = zero_gain_sweep(&p);
        for k in 0..3 {
            let f = decrease_form(&p.stages[k], &hat[k], &hat[k + 1], &DMatrix::zeros(1, 3), None);
            assert!(max_eigenvalue(&f) < 0.0);
        }
    }
}
