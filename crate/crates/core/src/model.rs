//! Uncertain constrained affine systems in LFT form.
//!
//! At time `k` the plant is
//!
//! ```text
//! x+ = f  + A  x + B1  u + B2  w
//! y  = g1 + C1 x + D11 u + D12 w
//! v_i = g2_i + C2_i x + D21_i u        (v_i' v_i <= 1)
//! z  = g3 + C3 x + D31 u + D32 w       (w = diag(delta) z)
//! ```
//!
//! and the uncertainty channels are repeated scalars `delta_i I` with
//! `|delta_i| <= gamma_i`.

use nalgebra::{DMatrix, DVector};

use crate::Real;

/// One constraint output `v_i = g + C x + D u`, required to satisfy `v_i' v_i <= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow<T: Real> {
    pub g: DVector<T>,
    pub c: DMatrix<T>,
    pub d: DMatrix<T>,
}

impl<T: Real> ConstraintRow<T> {
    pub fn new(g: DVector<T>, c: DMatrix<T>, d: DMatrix<T>) -> Self {
        Self { g, c, d }
    }

    pub fn rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn eval(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        &self.g + &self.c * x + &self.d * u
    }

    /// `[g, C, D]`, the row block acting on `(1, x, u)`.
    pub fn stacked(&self) -> DMatrix<T> {
        hcat(&[&DMatrix::from_column_slice(self.g.len(), 1, self.g.as_slice()), &self.c, &self.d])
    }
}

/// All system, cost, constraint and uncertainty matrices at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StageData<T: Real> {
    pub f: DVector<T>,
    pub a: DMatrix<T>,
    pub b1: DMatrix<T>,
    pub b2: DMatrix<T>,
    pub g1: DVector<T>,
    pub c1: DMatrix<T>,
    pub d11: DMatrix<T>,
    pub d12: DMatrix<T>,
    pub constraints: Vec<ConstraintRow<T>>,
    pub g3: DVector<T>,
    pub c3: DMatrix<T>,
    pub d31: DMatrix<T>,
    pub d32: DMatrix<T>,
}

impl<T: Real> StageData<T> {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b1.ncols()
    }
    pub fn l(&self) -> usize {
        self.b2.ncols()
    }
    pub fn p(&self) -> usize {
        self.c1.nrows()
    }
    pub fn q(&self) -> usize {
        self.c3.nrows()
    }
    pub fn s(&self) -> usize {
        self.constraints.len()
    }

    /// `[1 0 0; f A B1]`, mapping `(1, x, u)` to `(1, x+)` for `w = 0`.
    pub fn dynamics_block(&self) -> DMatrix<T> {
        let (n, m) = (self.n(), self.m());
        let mut top = DMatrix::zeros(1, 1 + n + m);
        top[(0, 0)] = T::one();
        vcat(&[&top, &hcat(&[&col(&self.f), &self.a, &self.b1])])
    }

    /// `[g1 C1 D11]`.
    pub fn output_block(&self) -> DMatrix<T> {
        hcat(&[&col(&self.g1), &self.c1, &self.d11])
    }

    /// `[g3 C3 D31]`.
    pub fn uncertainty_block(&self) -> DMatrix<T> {
        hcat(&[&col(&self.g3), &self.c3, &self.d31])
    }

    /// Next state, performance output and uncertainty output for a given `w`.
    pub fn step(&self, x: &DVector<T>, u: &DVector<T>, w: &DVector<T>) -> (DVector<T>, DVector<T>, DVector<T>) {
        let xp = &self.f + &self.a * x + &self.b1 * u + &self.b2 * w;
        let y = &self.g1 + &self.c1 * x + &self.d11 * u + &self.d12 * w;
        let z = &self.g3 + &self.c3 * x + &self.d31 * u + &self.d32 * w;
        (xp, y, z)
    }

    /// Uncertainty output with `w` ignored (valid when `D32 = 0`).
    pub fn z_open(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        &self.g3 + &self.c3 * x + &self.d31 * u
    }

    fn check(&self, stage: usize, dims: &Dims, errors: &mut Vec<ValidationError>) {
        let Dims { n, m, l, p, q } = *dims;
        let mut want = |field: &'static str, got: (usize, usize), expected: (usize, usize)| {
            if got != expected {
                errors.push(ValidationError::Dimension {
                    stage,
                    field,
                    expected,
                    got,
                });
            }
        };
        want("f", (self.f.len(), 1), (n, 1));
        want("A", self.a.shape(), (n, n));
        want("B1", self.b1.shape(), (n, m));
        want("B2", self.b2.shape(), (n, l));
        want("g1", (self.g1.len(), 1), (p, 1));
        want("C1", self.c1.shape(), (p, n));
        want("D11", self.d11.shape(), (p, m));
        want("D12", self.d12.shape(), (p, l));
        want("g3", (self.g3.len(), 1), (q, 1));
        want("C3", self.c3.shape(), (q, n));
        want("D31", self.d31.shape(), (q, m));
        want("D32", self.d32.shape(), (q, l));
        for row in &self.constraints {
            let r = row.rows();
            want("g2", (row.g.len(), 1), (r, 1));
            want("C2", row.c.shape(), (r, n));
            want("D21", row.d.shape(), (r, m));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dims {
    n: usize,
    m: usize,
    l: usize,
    p: usize,
    q: usize,
}

/// Which convex program a problem is meant for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    NominalFinite,
    RobustFinite,
    RobustInfinite,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::NominalFinite => "nominal_finite",
            ProblemKind::RobustFinite => "robust_finite",
            ProblemKind::RobustInfinite => "robust_infinite",
        }
    }

    pub fn is_robust(self) -> bool {
        !matches!(self, ProblemKind::NominalFinite)
    }

    pub fn is_finite(self) -> bool {
        !matches!(self, ProblemKind::RobustInfinite)
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nominal_finite" | "nominal" => Ok(ProblemKind::NominalFinite),
            "robust_finite" => Ok(ProblemKind::RobustFinite),
            "robust_infinite" | "infinite" => Ok(ProblemKind::RobustInfinite),
            other => Err(format!("unknown problem kind `{other}`")),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A repeated-scalar uncertainty block `delta I_size`, `|delta| <= bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel<T> {
    pub size: usize,
    pub bound: T,
}

/// Diagonal D-scaling multipliers for a list of repeated-scalar channels.
///
/// `M = blkdiag(M11, M22)` over `(z, w)` with `M11 = diag(gamma_i^2 d_i I)`
/// and `M22 = -diag(d_i I)`; the inverse cone is parametrized by
/// `e_i = 1 / (gamma_i^2 d_i)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiplierCone<T> {
    pub channels: Vec<Channel<T>>,
}

impl<T: Real> MultiplierCone<T> {
    pub fn new(channels: Vec<Channel<T>>) -> Self {
        Self { channels }
    }

    /// Total number of uncertainty outputs covered (`q = l`).
    pub fn dim(&self) -> usize {
        self.channels.iter().map(|c| c.size).sum()
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Row offset of each channel inside `z` (and `w`).
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.channels
            .iter()
            .map(|c| {
                let o = acc;
                acc += c.size;
                o
            })
            .collect()
    }

    /// Expands one scalar per channel to the diagonal `delta_i I_size`.
    pub fn expand(&self, per_channel: &[T]) -> DVector<T> {
        let mut out = DVector::zeros(self.dim());
        for ((ch, off), v) in self.channels.iter().zip(self.offsets()).zip(per_channel) {
            for r in 0..ch.size {
                out[off + r] = *v;
            }
        }
        out
    }
}

/// A finite or infinite horizon synthesis problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem<T: Real> {
    /// Stage data for `k = 0..=N`; stage `N` is the stationary tail for the infinite kind.
    pub stages: Vec<StageData<T>>,
    /// Terminal cost on `(1, x_N)` for the finite kinds.
    pub pf: DMatrix<T>,
    pub x_bar: DVector<T>,
    pub cone: MultiplierCone<T>,
    pub kind: ProblemKind,
}

impl<T: Real> Problem<T> {
    pub fn horizon(&self) -> usize {
        self.stages.len().saturating_sub(1)
    }

    /// Stage `k`, or the last stage for `k > N`.
    pub fn stage(&self, k: usize) -> &StageData<T> {
        &self.stages[k.min(self.stages.len() - 1)]
    }

    pub fn n(&self) -> usize {
        self.stages[0].n()
    }

    pub fn m(&self) -> usize {
        self.stages[0].m()
    }

    /// Replicates the last stage (or truncates) so that the horizon is `horizon`.
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        let last = self.stages.last().cloned().expect("problem has no stages");
        self.stages.resize(horizon + 1, last);
        self
    }

    pub fn with_x_bar(mut self, x_bar: DVector<T>) -> Self {
        self.x_bar = x_bar;
        self
    }

    pub fn with_kind(mut self, kind: ProblemKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_pf(mut self, pf: DMatrix<T>) -> Self {
        self.pf = pf;
        self
    }

    /// Removes channels with `gamma_i = 0` from the LFT.
    ///
    /// Their disturbance is identically zero, so the matching columns of
    /// `B2`, `D12`, `D32` and rows of `g3`, `C3`, `D31`, `D32` are dropped.
    pub fn drop_degenerate_channels(&self) -> Self {
        if self.cone.channels.iter().all(|c| c.bound > T::zero()) {
            return self.clone();
        }
        let offsets = self.cone.offsets();
        let mut keep = Vec::new();
        let mut channels = Vec::new();
        for (ch, off) in self.cone.channels.iter().zip(&offsets) {
            if ch.bound > T::zero() {
                keep.extend(*off..off + ch.size);
                channels.push(*ch);
            }
        }
        let stages = self
            .stages
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.b2 = s.b2.select_columns(&keep);
                s.d12 = s.d12.select_columns(&keep);
                s.g3 = s.g3.select_rows(&keep);
                s.c3 = s.c3.select_rows(&keep);
                s.d31 = s.d31.select_rows(&keep);
                s.d32 = s.d32.select_rows(&keep).select_columns(&keep);
                s
            })
            .collect();
        Self {
            stages,
            pf: self.pf.clone(),
            x_bar: self.x_bar.clone(),
            cone: MultiplierCone::new(channels),
            kind: self.kind,
        }
    }
}

/// The two-state example with uncertain `A(1,1)` and `B(2,1)`.
///
/// Returns a robust infinite-horizon problem with horizon 0 and `x_bar = 0`;
/// use [`Problem::with_horizon`] and [`Problem::with_x_bar`] to adjust.
pub fn build_example<T: Real>(gamma: T, eps2_bound: T) -> Problem<T> {
    let l = T::lit;
    let a = DMatrix::from_row_slice(2, 2, &[l(1.0), l(0.15), l(0.1), l(1.0)]);
    let b1 = DMatrix::from_column_slice(2, 1, &[l(0.1), l(1.1)]);
    let mut c1 = DMatrix::zeros(3, 2);
    c1[(0, 0)] = T::one();
    c1[(1, 1)] = T::one();
    let mut d11 = DMatrix::zeros(3, 1);
    d11[(2, 0)] = T::one();
    let row = |c: [f64; 2], d: f64| {
        ConstraintRow::new(
            DVector::zeros(1),
            DMatrix::from_row_slice(1, 2, &[l(c[0]), l(c[1])]),
            DMatrix::from_element(1, 1, l(d)),
        )
    };
    let mut c3 = DMatrix::zeros(2, 2);
    c3[(0, 0)] = T::one();
    let mut d31 = DMatrix::zeros(2, 1);
    d31[(1, 0)] = T::one();
    let stage = StageData {
        f: DVector::zeros(2),
        a,
        b1,
        b2: DMatrix::identity(2, 2),
        g1: DVector::zeros(3),
        c1,
        d11,
        d12: DMatrix::zeros(3, 2),
        constraints: vec![row([0.125, 0.0], 0.0), row([0.0, 0.125], 0.0), row([0.0, 0.0], 0.25)],
        g3: DVector::zeros(2),
        c3,
        d31,
        d32: DMatrix::zeros(2, 2),
    };
    Problem {
        stages: vec![stage],
        pf: DMatrix::zeros(3, 3),
        x_bar: DVector::zeros(2),
        cone: MultiplierCone::new(vec![
            Channel { size: 1, bound: gamma },
            Channel {
                size: 1,
                bound: eps2_bound,
            },
        ]),
        kind: ProblemKind::RobustInfinite,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("expected {expected} multiplier parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("multiplier parameter {index} must be strictly positive")]
    NonPositiveParam { index: usize },
    #[error("channel {index} has bound 0 and cannot be inverted")]
    DegenerateChannel { index: usize },
}

fn check_params<T: Real>(cone: &MultiplierCone<T>, params: &[T]) -> Result<(), ModelError> {
    if params.len() != cone.len() {
        return Err(ModelError::ParamCount {
            expected: cone.len(),
            got: params.len(),
        });
    }
    if let Some(index) = params.iter().position(|v| !(*v > T::zero())) {
        return Err(ModelError::NonPositiveParam { index });
    }
    Ok(())
}

/// `M = blkdiag(diag(gamma_i^2 d_i I), -diag(d_i I))` over `(z, w)`.
pub fn multiplier_from_params<T: Real>(cone: &MultiplierCone<T>, d: &[T]) -> Result<DMatrix<T>, ModelError> {
    check_params(cone, d)?;
    let q = cone.dim();
    let mut m = DMatrix::zeros(2 * q, 2 * q);
    for ((ch, off), di) in cone.channels.iter().zip(cone.offsets()).zip(d) {
        for r in 0..ch.size {
            m[(off + r, off + r)] = ch.bound * ch.bound * *di;
            m[(q + off + r, q + off + r)] = -*di;
        }
    }
    Ok(m)
}

/// `M~ = blkdiag(diag(e_i I), -diag(gamma_i^2 e_i I))`, the inverse cone.
pub fn inverse_multiplier_from_params<T: Real>(
    cone: &MultiplierCone<T>,
    e_tilde: &[T],
) -> Result<DMatrix<T>, ModelError> {
    check_params(cone, e_tilde)?;
    if let Some(index) = cone.channels.iter().position(|c| !(c.bound > T::zero())) {
        return Err(ModelError::DegenerateChannel { index });
    }
    let q = cone.dim();
    let mut m = DMatrix::zeros(2 * q, 2 * q);
    for ((ch, off), ei) in cone.channels.iter().zip(cone.offsets()).zip(e_tilde) {
        for r in 0..ch.size {
            m[(off + r, off + r)] = *ei;
            m[(q + off + r, q + off + r)] = -ch.bound * ch.bound * *ei;
        }
    }
    Ok(m)
}

/// Channel-wise conversion between `d` and `e~ = 1 / (gamma^2 d)`; the map is an involution.
pub fn dual_params<T: Real>(cone: &MultiplierCone<T>, params: &[T]) -> Vec<T> {
    cone.channels
        .iter()
        .zip(params)
        .map(|(c, p)| T::one() / (c.bound * c.bound * *p))
        .collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("problem has no stages")]
    NoStages,
    #[error("stage {stage}: {field} has shape {got:?}, expected {expected:?}")]
    Dimension {
        stage: usize,
        field: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("stage {stage}: constraint count {got} differs from stage 0 ({expected})")]
    ConstraintCount { stage: usize, expected: usize, got: usize },
    #[error("x_bar has length {got}, expected {expected}")]
    XBar { expected: usize, got: usize },
    #[error("Pf has shape {got:?}, expected {expected:?}")]
    PfShape { expected: (usize, usize), got: (usize, usize) },
    #[error("Pf is not symmetric")]
    PfAsymmetric,
    #[error("Pf is not positive semidefinite (min eigenvalue {min_eig:e})")]
    PfNotPsd { min_eig: f64 },
    #[error("channel {channel} has negative bound")]
    NegativeBound { channel: usize },
    #[error("channel {channel} has size 0")]
    EmptyChannel { channel: usize },
    #[error("cone covers {cone} uncertainty channels but stages have q = {q}, l = {l}")]
    ConeMismatch { cone: usize, q: usize, l: usize },
    #[error("stage {stage}: D32 is not strictly lower block triangular")]
    IllPosedLoop { stage: usize },
    #[error("stage {stage}: {field} contains a non-finite entry")]
    NonFinite { stage: usize, field: &'static str },
}

/// Checks every structural invariant and returns all violations found.
pub fn validate<T: Real>(problem: &Problem<T>) -> Result<(), Vec<ValidationError>> {
    let mut errors = Vec::new();
    let Some(first) = problem.stages.first() else {
        return Err(vec![ValidationError::NoStages]);
    };
    let dims = Dims {
        n: first.n(),
        m: first.m(),
        l: first.l(),
        p: first.p(),
        q: first.q(),
    };
    let s = first.s();
    for (k, stage) in problem.stages.iter().enumerate() {
        stage.check(k, &dims, &mut errors);
        if stage.s() != s {
            errors.push(ValidationError::ConstraintCount {
                stage: k,
                expected: s,
                got: stage.s(),
            });
        } else {
            for (i, (a, b)) in stage.constraints.iter().zip(&first.constraints).enumerate() {
                if a.rows() != b.rows() {
                    errors.push(ValidationError::Dimension {
                        stage: k,
                        field: "constraint rows",
                        expected: (b.rows(), i),
                        got: (a.rows(), i),
                    });
                }
            }
        }
        let finite = |m: &DMatrix<T>| m.iter().all(|v| v.is_finite());
        for (field, ok) in [
            ("A", finite(&stage.a)),
            ("B1", finite(&stage.b1)),
            ("B2", finite(&stage.b2)),
            ("C1", finite(&stage.c1)),
            ("C3", finite(&stage.c3)),
            ("f", stage.f.iter().all(|v| v.is_finite())),
        ] {
            if !ok {
                errors.push(ValidationError::NonFinite { stage: k, field });
            }
        }
    }
    if problem.x_bar.len() != dims.n {
        errors.push(ValidationError::XBar {
            expected: dims.n,
            got: problem.x_bar.len(),
        });
    }
    for (i, ch) in problem.cone.channels.iter().enumerate() {
        if ch.bound < T::zero() {
            errors.push(ValidationError::NegativeBound { channel: i });
        }
        if ch.size == 0 {
            errors.push(ValidationError::EmptyChannel { channel: i });
        }
    }
    if problem.kind.is_robust() {
        let cd = problem.cone.dim();
        if cd != dims.q || cd != dims.l {
            errors.push(ValidationError::ConeMismatch {
                cone: cd,
                q: dims.q,
                l: dims.l,
            });
        } else {
            let offsets = problem.cone.offsets();
            for (k, stage) in problem.stages.iter().enumerate() {
                if stage.d32.shape() != (cd, cd) {
                    continue;
                }
                'outer: for (i, (ci, oi)) in problem.cone.channels.iter().zip(&offsets).enumerate() {
                    for (cj, oj) in problem.cone.channels.iter().zip(&offsets).skip(i) {
                        for r in 0..ci.size {
                            for c in 0..cj.size {
                                if stage.d32[(oi + r, oj + c)] != T::zero() {
                                    errors.push(ValidationError::IllPosedLoop { stage: k });
                                    break 'outer;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if problem.kind.is_finite() {
        let d = 1 + dims.n;
        if problem.pf.shape() != (d, d) {
            errors.push(ValidationError::PfShape {
                expected: (d, d),
                got: problem.pf.shape(),
            });
        } else {
            let tol = T::lit(1e-12) * (T::one() + problem.pf.amax());
            let asym = (0..d).any(|i| (0..i).any(|j| (problem.pf[(i, j)] - problem.pf[(j, i)]).abs() > tol));
            if asym {
                errors.push(ValidationError::PfAsymmetric);
            } else {
                let min_eig = lmih_conic::linalg::min_eigenvalue(&problem.pf);
                if min_eig < -tol {
                    errors.push(ValidationError::PfNotPsd {
                        min_eig: min_eig.to_f64_lossy(),
                    });
                }
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// A simulated trajectory of the closed LFT loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    /// States `x_0..=x_T`.
    pub x: Vec<DVector<T>>,
    pub u: Vec<DVector<T>>,
    pub w: Vec<DVector<T>>,
    pub y: Vec<DVector<T>>,
    /// Constraint outputs per step and per constraint index.
    pub v: Vec<Vec<DVector<T>>>,
    pub z: Vec<DVector<T>>,
    /// Running cost: `cost[k] = sum_{j<k} y_j' y_j`, length `T + 1`.
    pub cost: Vec<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn steps(&self) -> usize {
        self.u.len()
    }

    /// `max_i v_ki' v_ki` at step `k`.
    pub fn max_constraint(&self, k: usize) -> T {
        self.v[k]
            .iter()
            .map(|v| v.norm_squared())
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// `max_{k,i} v_ki' v_ki` over the whole trajectory.
    pub fn worst_constraint(&self) -> T {
        (0..self.steps())
            .map(|k| self.max_constraint(k))
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn total_cost(&self) -> T {
        *self.cost.last().unwrap_or(&T::zero())
    }
}

pub(crate) fn col<T: Real>(v: &DVector<T>) -> DMatrix<T> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Horizontal concatenation of blocks with equal row counts.
pub(crate) fn hcat<T: Real>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation of blocks with equal column counts.
pub(crate) fn vcat<T: Real>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let cols = blocks[0].ncols();
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// `(1, x)`.
pub fn lift<T: Real>(x: &DVector<T>) -> DVector<T> {
    let mut v = DVector::zeros(x.len() + 1);
    v[0] = T::one();
    v.rows_mut(1, x.len()).copy_from(x);
    v
}
