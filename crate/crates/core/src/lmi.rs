//! Convexified synthesis conditions as affine symmetric blocks.
//!
//! Decision vector layout (contiguous, in this order):
//!
//! ```text
//! P~_0 .. P~_N   packed symmetric (1+n)x(1+n)
//! K~_k           m x (1+n), column-major; k < N (finite) or k <= N (infinite)
//! nu~            scalar
//! Z              packed symmetric (1+n)x(1+n)
//! e~_k           one scalar per cone channel; robust kinds only
//! ```
//!
//! A packed symmetric matrix of size `d` uses `d(d+1)/2` entries. Entry
//! `(i, j)` with `i <= j` lives at `j(j+1)/2 + i`; off-diagonal entries are
//! stored scaled by `sqrt 2` so that the packed inner product equals the
//! trace inner product.

use std::collections::BTreeMap;

use lmih_conic::{BlockLmi, Program, Sense};
use nalgebra::{DMatrix, DVector};

use crate::model::{hcat, lift, Problem, ProblemKind, StageData};
use crate::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmiError {
    #[error("stage index {k} out of range for horizon {horizon}")]
    StageOutOfRange { k: usize, horizon: usize },
    #[error("constraint index {i} out of range ({s} constraints)")]
    ConstraintOutOfRange { i: usize, s: usize },
    #[error("{0} requires a robust problem kind")]
    NotRobust(&'static str),
    #[error("{0} is not defined for the infinite-horizon kind")]
    NotFinite(&'static str),
    #[error("cone covers {cone} channels but the stage has q = {q}, l = {l}")]
    ConeMismatch { cone: usize, q: usize, l: usize },
    #[error("Pf is singular; enable the Pf ridge option to regularize it")]
    SingularPf,
}

/// Number of packed entries of a symmetric `d x d` matrix.
pub fn sym_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Packed index of entry `(i, j)` of a symmetric matrix.
pub fn svec_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

/// Offsets of every variable group in the flat decision vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionLayout {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub kind: ProblemKind,
    pub channels: usize,
    p_tilde: Vec<usize>,
    k_tilde: Vec<usize>,
    nu: usize,
    z: usize,
    e_tilde: Vec<usize>,
    total: usize,
}

impl DecisionLayout {
    pub fn new<T: Real>(problem: &Problem<T>) -> Self {
        let (n, m, horizon, kind) = (problem.n(), problem.m(), problem.horizon(), problem.kind);
        let d = 1 + n;
        let sd = sym_len(d);
        let mut off = 0;
        let mut take = |len: usize| {
            let o = off;
            off += len;
            o
        };
        let p_tilde = (0..=horizon).map(|_| take(sd)).collect();
        let gains = if kind.is_finite() { horizon } else { horizon + 1 };
        let k_tilde = (0..gains).map(|_| take(m * d)).collect();
        let nu = take(1);
        let z = take(sd);
        let channels = if kind.is_robust() { problem.cone.len() } else { 0 };
        let e_stages = match kind {
            ProblemKind::NominalFinite => 0,
            ProblemKind::RobustFinite => horizon,
            ProblemKind::RobustInfinite => horizon + 1,
        };
        let e_tilde = (0..e_stages).map(|_| take(channels)).collect();
        Self {
            n,
            m,
            horizon,
            kind,
            channels,
            p_tilde,
            k_tilde,
            nu,
            z,
            e_tilde,
            total: off,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn p_offset(&self, k: usize) -> usize {
        self.p_tilde[k]
    }

    pub fn k_offset(&self, k: usize) -> Option<usize> {
        self.k_tilde.get(k).copied()
    }

    pub fn z_offset(&self) -> usize {
        self.z
    }

    pub fn e_offset(&self, k: usize) -> Option<usize> {
        self.e_tilde.get(k).copied()
    }

    /// Number of stages carrying a gain `K~_k`.
    pub fn gain_count(&self) -> usize {
        self.k_tilde.len()
    }

    /// Number of stages carrying multiplier parameters.
    pub fn multiplier_count(&self) -> usize {
        self.e_tilde.len()
    }

    pub fn p_expr<T: Real>(&self, k: usize) -> AffineExpr<T> {
        AffineExpr::sym_var(self.p_tilde[k], 1 + self.n)
    }

    pub fn k_expr<T: Real>(&self, k: usize) -> AffineExpr<T> {
        AffineExpr::mat_var(self.k_tilde[k], self.m, 1 + self.n)
    }

    pub fn z_expr<T: Real>(&self) -> AffineExpr<T> {
        AffineExpr::sym_var(self.z, 1 + self.n)
    }

    /// Splits a flat vector into its variable groups.
    pub fn decode<T: Real>(&self, x: &DVector<T>) -> DecisionValues<T> {
        let d = 1 + self.n;
        DecisionValues {
            p_tilde: self.p_tilde.iter().map(|&o| unpack_sym(x, o, d)).collect(),
            k_tilde: self
                .k_tilde
                .iter()
                .map(|&o| DMatrix::from_column_slice(self.m, d, &x.as_slice()[o..o + self.m * d]))
                .collect(),
            nu_tilde: x[self.nu],
            z: unpack_sym(x, self.z, d),
            e_tilde: self
                .e_tilde
                .iter()
                .map(|&o| x.as_slice()[o..o + self.channels].to_vec())
                .collect(),
        }
    }

    /// Inverse of [`DecisionLayout::decode`].
    pub fn encode<T: Real>(&self, v: &DecisionValues<T>) -> DVector<T> {
        let mut x = DVector::zeros(self.total);
        for (o, p) in self.p_tilde.iter().zip(&v.p_tilde) {
            pack_sym(&mut x, *o, p);
        }
        for (o, k) in self.k_tilde.iter().zip(&v.k_tilde) {
            x.as_mut_slice()[*o..*o + k.len()].copy_from_slice(k.as_slice());
        }
        x[self.nu] = v.nu_tilde;
        pack_sym(&mut x, self.z, &v.z);
        for (o, e) in self.e_tilde.iter().zip(&v.e_tilde) {
            x.as_mut_slice()[*o..*o + e.len()].copy_from_slice(e);
        }
        x
    }
}

fn unpack_sym<T: Real>(x: &DVector<T>, offset: usize, d: usize) -> DMatrix<T> {
    let r2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    DMatrix::from_fn(d, d, |i, j| {
        let v = x[offset + svec_index(i, j)];
        if i == j {
            v
        } else {
            v * r2
        }
    })
}

fn pack_sym<T: Real>(x: &mut DVector<T>, offset: usize, p: &DMatrix<T>) {
    let s2 = T::lit(std::f64::consts::SQRT_2);
    for j in 0..p.ncols() {
        for i in 0..=j {
            x[offset + svec_index(i, j)] = if i == j { p[(i, j)] } else { (p[(i, j)] + p[(j, i)]) * s2 / T::lit(2.0) };
        }
    }
}

/// Decision values grouped by role.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionValues<T: Real> {
    pub p_tilde: Vec<DMatrix<T>>,
    pub k_tilde: Vec<DMatrix<T>>,
    pub nu_tilde: T,
    pub z: DMatrix<T>,
    pub e_tilde: Vec<Vec<T>>,
}

/// A matrix whose entries are affine in the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr<T: Real> {
    pub constant: DMatrix<T>,
    pub terms: BTreeMap<usize, DMatrix<T>>,
}

impl<T: Real> AffineExpr<T> {
    pub fn constant(m: DMatrix<T>) -> Self {
        Self {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn zeros(r: usize, c: usize) -> Self {
        Self::constant(DMatrix::zeros(r, c))
    }

    pub fn identity(d: usize) -> Self {
        Self::constant(DMatrix::identity(d, d))
    }

    /// `x_var * coeff`.
    pub fn scaled_var(var: usize, coeff: DMatrix<T>) -> Self {
        let mut e = Self::zeros(coeff.nrows(), coeff.ncols());
        e.terms.insert(var, coeff);
        e
    }

    /// A packed symmetric variable of size `d` starting at `offset`.
    pub fn sym_var(offset: usize, d: usize) -> Self {
        let r2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        let mut e = Self::zeros(d, d);
        for j in 0..d {
            for i in 0..=j {
                let mut c = DMatrix::zeros(d, d);
                if i == j {
                    c[(i, i)] = T::one();
                } else {
                    c[(i, j)] = r2;
                    c[(j, i)] = r2;
                }
                e.terms.insert(offset + svec_index(i, j), c);
            }
        }
        e
    }

    /// A dense `r x c` variable stored column-major at `offset`.
    pub fn mat_var(offset: usize, r: usize, c: usize) -> Self {
        let mut e = Self::zeros(r, c);
        for j in 0..c {
            for i in 0..r {
                let mut m = DMatrix::zeros(r, c);
                m[(i, j)] = T::one();
                e.terms.insert(offset + j * r + i, m);
            }
        }
        e
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    /// `a * self`.
    pub fn lmul(&self, a: &DMatrix<T>) -> Self {
        Self {
            constant: a * &self.constant,
            terms: self.terms.iter().map(|(k, m)| (*k, a * m)).collect(),
        }
    }

    /// `self * a`.
    pub fn rmul(&self, a: &DMatrix<T>) -> Self {
        Self {
            constant: &self.constant * a,
            terms: self.terms.iter().map(|(k, m)| (*k, m * a)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            constant: &self.constant * s,
            terms: self.terms.iter().map(|(k, m)| (*k, m * s)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "affine expression shape mismatch");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (k, m) in &other.terms {
            out.terms
                .entry(*k)
                .and_modify(|c| *c += m)
                .or_insert_with(|| m.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    pub fn transpose(&self) -> Self {
        Self {
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|(k, m)| (*k, m.transpose())).collect(),
        }
    }

    /// `[self; other]`.
    pub fn vstack(parts: &[&Self]) -> Self {
        let cols = parts[0].shape().1;
        let rows: usize = parts.iter().map(|p| p.shape().0).sum();
        let mut out = Self::zeros(rows, cols);
        let mut r = 0;
        for p in parts {
            out.place(p, r, 0, rows, cols);
            r += p.shape().0;
        }
        out
    }

    /// `[self, other]`.
    pub fn hstack(parts: &[&Self]) -> Self {
        let rows = parts[0].shape().0;
        let cols: usize = parts.iter().map(|p| p.shape().1).sum();
        let mut out = Self::zeros(rows, cols);
        let mut c = 0;
        for p in parts {
            out.place(p, 0, c, rows, cols);
            c += p.shape().1;
        }
        out
    }

    fn place(&mut self, p: &Self, r: usize, c: usize, rows: usize, cols: usize) {
        let (pr, pc) = p.shape();
        self.constant.view_mut((r, c), (pr, pc)).copy_from(&p.constant);
        for (k, m) in &p.terms {
            let slot = self.terms.entry(*k).or_insert_with(|| DMatrix::zeros(rows, cols));
            slot.view_mut((r, c), (pr, pc)).copy_from(m);
        }
    }

    /// Block matrix from rows of cells.
    pub fn grid(rows: &[Vec<&Self>]) -> Self {
        let stacked: Vec<Self> = rows.iter().map(|r| Self::hstack(r)).collect();
        let refs: Vec<&Self> = stacked.iter().collect();
        Self::vstack(&refs)
    }

    pub fn evaluate(&self, x: &DVector<T>) -> DMatrix<T> {
        let mut out = self.constant.clone();
        for (k, m) in &self.terms {
            out += m * x[*k];
        }
        out
    }

    /// Converts a symmetric expression into a constraint block.
    pub fn into_block(self, sense: Sense) -> BlockLmi<T> {
        let mut b = BlockLmi::new(self.constant, sense);
        b.terms = self.terms.into_iter().collect();
        b.prune_zero_terms();
        b
    }
}

/// Role of each block in an assembled program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockFamily {
    Cost { k: usize },
    RobustCost { k: usize },
    /// Reduced tail inequality (null direction projected out).
    Tail,
    /// Entries of the tail block along its null direction, forced to zero.
    TailNull,
    Constraint { k: usize, i: usize },
    Initial,
    InitialTrace,
    Terminal,
    PStrict { k: usize },
    EStrict { k: usize, i: usize },
    NuCap,
}

impl BlockFamily {
    pub fn label(&self) -> String {
        match self {
            BlockFamily::Cost { k } => format!("cost[{k}]"),
            BlockFamily::RobustCost { k } => format!("robust_cost[{k}]"),
            BlockFamily::Tail => "tail".into(),
            BlockFamily::TailNull => "tail_null".into(),
            BlockFamily::Constraint { k, i } => format!("constraint[{k},{i}]"),
            BlockFamily::Initial => "initial".into(),
            BlockFamily::InitialTrace => "initial_trace".into(),
            BlockFamily::Terminal => "terminal".into(),
            BlockFamily::PStrict { k } => format!("p_strict[{k}]"),
            BlockFamily::EStrict { k, i } => format!("e_strict[{k},{i}]"),
            BlockFamily::NuCap => "nu_cap".into(),
        }
    }
}

/// Which identity-like slot the tail block uses next to `Q~_N`'s output rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TailScale {
    #[default]
    Identity,
    Nu,
}

impl std::str::FromStr for TailScale {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(TailScale::Identity),
            "nu" => Ok(TailScale::Nu),
            other => Err(format!("unknown tail scale `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssembleOptions<T> {
    /// Lower bound `P~_k >= mu I`, `e~ >= mu`.
    pub mu: T,
    /// Upper bound on `nu~`; `None` leaves it free.
    pub nu_cap: Option<T>,
    pub tail_scale: TailScale,
    /// Invert `Pf + 1e-9 I` instead of `Pf`.
    pub pf_ridge: bool,
}

impl<T: Real> Default for AssembleOptions<T> {
    fn default() -> Self {
        Self {
            mu: T::lit(1e-7),
            nu_cap: Some(T::lit(1e6)),
            tail_scale: TailScale::Identity,
            pf_ridge: false,
        }
    }
}

/// An assembled program together with its layout and block roles.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram<T: Real> {
    pub program: Program<T>,
    pub layout: DecisionLayout,
    pub families: Vec<BlockFamily>,
}

impl<T: Real> ConicProgram<T> {
    pub fn count(&self, pred: impl Fn(&BlockFamily) -> bool) -> usize {
        self.families.iter().filter(|f| pred(f)).count()
    }
}

fn check_stage<T: Real>(problem: &Problem<T>, k: usize, max: usize) -> Result<&StageData<T>, LmiError> {
    if k > max || k >= problem.stages.len() {
        return Err(LmiError::StageOutOfRange {
            k,
            horizon: problem.horizon(),
        });
    }
    Ok(&problem.stages[k])
}

/// `[P~_k; K~_k]`, or `[P~_k; 0]` when the stage has no gain variable.
fn pk_stack<T: Real>(layout: &DecisionLayout, k: usize) -> AffineExpr<T> {
    let p = layout.p_expr(k);
    let kk = if layout.k_offset(k).is_some() {
        layout.k_expr(k)
    } else {
        AffineExpr::zeros(layout.m, 1 + layout.n)
    };
    AffineExpr::vstack(&[&p, &kk])
}

/// Nominal cost decrease block on `(P~_{k+1}, P~_k, K~_k)`.
pub fn build_cost_lmi_nominal<T: Real>(
    problem: &Problem<T>,
    layout: &DecisionLayout,
    k: usize,
) -> Result<BlockLmi<T>, LmiError> {
    if layout.horizon == 0 {
        return Err(LmiError::StageOutOfRange { k, horizon: 0 });
    }
    let stage = check_stage(problem, k, layout.horizon - 1)?;
    let (n, p) = (layout.n, stage.p());
    let stack = pk_stack(layout, k);
    let f = stack.lmul(&stage.dynamics_block());
    let g = stack.lmul(&stage.output_block());
    let z01 = AffineExpr::zeros(1 + n, p);
    let pk = layout.p_expr(k);
    let pn = layout.p_expr(k + 1);
    let ip = AffineExpr::identity(p);
    let (ft, gt, z10) = (f.transpose(), g.transpose(), z01.transpose());
    Ok(AffineExpr::grid(&[vec![&pn, &z01, &f], vec![&z10, &ip, &g], vec![&ft, &gt, &pk]]).into_block(Sense::Psd))
}

/// `(1 + |x|^2)^{-1/2} (1, x)(1, x)'`, the square root of `(1, x)(1, x)'`.
pub fn sqrt_sigma<T: Real>(x: &DVector<T>) -> DMatrix<T> {
    let v = lift(x);
    let s = T::one() / v.norm();
    &v * v.transpose() * s
}

/// `[[P~_0, nu~ sqrt(Sigma_0)], [., Z]] >= 0` and `nu~ - tr Z >= 0`.
pub fn build_initial_lmi<T: Real>(problem: &Problem<T>, layout: &DecisionLayout) -> [BlockLmi<T>; 2] {
    let d = 1 + layout.n;
    let s = sqrt_sigma(&problem.x_bar);
    let mut coupling = DMatrix::zeros(2 * d, 2 * d);
    coupling.view_mut((0, d), (d, d)).copy_from(&s);
    coupling.view_mut((d, 0), (d, d)).copy_from(&s);
    let p0 = layout.p_expr(0);
    let z = layout.z_expr();
    let zero = AffineExpr::zeros(d, d);
    let block = AffineExpr::grid(&[vec![&p0, &zero], vec![&zero, &z]]).add(&AffineExpr::scaled_var(layout.nu(), coupling));
    let mut trace = BlockLmi::new(DMatrix::zeros(1, 1), Sense::Nonneg);
    trace.add_term(layout.nu(), DMatrix::identity(1, 1));
    for i in 0..d {
        trace.add_term(layout.z_offset() + svec_index(i, i), -DMatrix::identity(1, 1));
    }
    [block.into_block(Sense::Psd), trace]
}

/// Inverse of `Pf` (or of `Pf + 1e-9 I` with the ridge).
pub fn terminal_inverse<T: Real>(pf: &DMatrix<T>, ridge: bool) -> Result<DMatrix<T>, LmiError> {
    let mut m = pf.clone();
    if ridge {
        for i in 0..m.nrows() {
            m[(i, i)] += T::lit(1e-9);
        }
    }
    let min_eig = lmih_conic::linalg::min_eigenvalue(&m);
    let scale = m.amax().max(T::one());
    if !(min_eig > T::lit(1e-14) * scale) {
        return Err(LmiError::SingularPf);
    }
    lmih_conic::linalg::spd_inverse(&m).ok_or(LmiError::SingularPf)
}

/// `Pf^{-1} - P~_N >= 0`.
pub fn build_terminal_lmi<T: Real>(
    problem: &Problem<T>,
    layout: &DecisionLayout,
    ridge: bool,
) -> Result<BlockLmi<T>, LmiError> {
    if !problem.kind.is_finite() {
        return Err(LmiError::NotFinite("terminal LMI"));
    }
    let inv = terminal_inverse(&problem.pf, ridge)?;
    Ok(AffineExpr::constant(inv)
        .sub(&layout.p_expr(layout.horizon))
        .into_block(Sense::Psd))
}

/// `[[P~_k, c~'], [c~, nu~ I]] >= 0` with `c~ = [g2 C2 D21][P~_k; K~_k]`.
pub fn build_constraint_lmi<T: Real>(
    problem: &Problem<T>,
    layout: &DecisionLayout,
    k: usize,
    i: usize,
) -> Result<BlockLmi<T>, LmiError> {
    let max = if problem.kind.is_finite() {
        layout.horizon.saturating_sub(1)
    } else {
        layout.horizon
    };
    let stage = check_stage(problem, k, max)?;
    let row = stage.constraints.get(i).ok_or(LmiError::ConstraintOutOfRange {
        i,
        s: stage.constraints.len(),
    })?;
    let r = row.rows();
    let c = pk_stack(layout, k).lmul(&row.stacked());
    let ct = c.transpose();
    let pk = layout.p_expr(k);
    let nu = AffineExpr::scaled_var(layout.nu(), DMatrix::identity(r, r));
    Ok(AffineExpr::grid(&[vec![&pk, &ct], vec![&c, &nu]]).into_block(Sense::Psd))
}

/// Full robust block `[[Q~, F~], [F~', P~_k]]` for stage data `stage`.
fn robust_expr<T: Real>(
    problem: &Problem<T>,
    layout: &DecisionLayout,
    stage: &StageData<T>,
    k: usize,
    next: usize,
    output_slot: &AffineExpr<T>,
) -> Result<AffineExpr<T>, LmiError> {
    let (n, p, q, l) = (layout.n, stage.p(), stage.q(), stage.l());
    let cone = &problem.cone;
    if cone.dim() != q || cone.dim() != l {
        return Err(LmiError::ConeMismatch { cone: cone.dim(), q, l });
    }
    let e_off = layout.e_offset(k).ok_or(LmiError::NotRobust("robust cost LMI"))?;
    let top = 1 + n + p + q;

    // Q~ = Bw M~22 Bw' + Sz M~11 Sz' + blkdiag(P~_next, slot, 0)
    let mut q_expr = AffineExpr::zeros(top, top);
    q_expr.place(&layout.p_expr(next), 0, 0, top, top);
    q_expr.place(output_slot, 1 + n, 1 + n, top, top);
    let mut bw = DMatrix::zeros(top, l);
    bw.view_mut((1, 0), (n, l)).copy_from(&stage.b2);
    bw.view_mut((1 + n, 0), (p, l)).copy_from(&stage.d12);
    bw.view_mut((1 + n + p, 0), (q, l)).copy_from(&stage.d32);
    for (ci, (ch, off)) in cone.channels.iter().zip(cone.offsets()).enumerate() {
        let mut coeff = DMatrix::zeros(top, top);
        for r in 0..ch.size {
            let col = bw.column(off + r);
            coeff -= (col * col.transpose()) * (ch.bound * ch.bound);
            coeff[(1 + n + p + off + r, 1 + n + p + off + r)] += T::one();
        }
        q_expr = q_expr.add(&AffineExpr::scaled_var(e_off + ci, coeff));
    }

    let mut data = DMatrix::zeros(top, 1 + n + layout.m);
    data.view_mut((0, 0), (1 + n, 1 + n + layout.m))
        .copy_from(&stage.dynamics_block());
    data.view_mut((1 + n, 0), (p, 1 + n + layout.m))
        .copy_from(&stage.output_block());
    data.view_mut((1 + n + p, 0), (q, 1 + n + layout.m))
        .copy_from(&stage.uncertainty_block());
    let f = pk_stack(layout, k).lmul(&data);
    let ft = f.transpose();
    let pk = layout.p_expr(k);
    Ok(AffineExpr::grid(&[vec![&q_expr, &f], vec![&ft, &pk]]))
}

/// Robust cost decrease block for stage `k < N`.
pub fn build_robust_cost_lmi<T: Real>(
    problem: &Problem<T>,
    layout: &DecisionLayout,
    k: usize,
) -> Result<BlockLmi<T>, LmiError> {
    if !problem.kind.is_robust() {
        return Err(LmiError::NotRobust("robust cost LMI"));
    }
    if layout.horizon == 0 {
        return Err(LmiError::StageOutOfRange { k, horizon: 0 });
    }
    let stage = check_stage(problem, k, layout.horizon - 1)?;
    let slot = AffineExpr::identity(stage.p());
    Ok(robust_expr(problem, layout, stage, k, k + 1, &slot)?.into_block(Sense::Psd))
}

/// Full (unreduced) tail block on `P~_N` for the infinite kind.
pub fn tail_expr<T: Real>(
    problem: &Problem<T>,
    layout: &DecisionLayout,
    tail_scale: TailScale,
) -> Result<AffineExpr<T>, LmiError> {
    if problem.kind != ProblemKind::RobustInfinite {
        return Err(LmiError::NotRobust("infinite tail LMI"));
    }
    let nn = layout.horizon;
    let stage = problem.stages.get(nn).ok_or(LmiError::StageOutOfRange { k: nn, horizon: nn })?;
    let p = stage.p();
    let slot = match tail_scale {
        TailScale::Identity => AffineExpr::identity(p),
        TailScale::Nu => AffineExpr::scaled_var(layout.nu(), DMatrix::identity(p, p)),
    };
    robust_expr(problem, layout, stage, nn, nn, &slot)
}

/// The tail block as an (equality, reduced PSD) pair.
///
/// With `P~_N` on both sides, `v = e_0 - e_{1+n+p+q}` satisfies `v' B v = 0`
/// identically, so `B >= 0` holds iff `B v = 0` and `T' B T >= 0` for an
/// orthonormal basis `T` of the complement of `v`. The reduced pair has a
/// strictly feasible interior where the full block never does.
pub fn build_infinite_tail_lmi<T: Real>(
    problem: &Problem<T>,
    layout: &DecisionLayout,
    tail_scale: TailScale,
) -> Result<[BlockLmi<T>; 2], LmiError> {
    let b = tail_expr(problem, layout, tail_scale)?;
    let d = b.shape().0;
    let j = d - (1 + layout.n);
    let mut v = DMatrix::zeros(d, 1);
    v[(0, 0)] = T::one();
    v[(j, 0)] = -T::one();
    let bv = b.rmul(&v);
    let diag = |m: &DMatrix<T>| DMatrix::from_diagonal(&m.column(0).into_owned());
    let null = AffineExpr {
        constant: diag(&bv.constant),
        terms: bv.terms.iter().map(|(k, m)| (*k, diag(m))).collect(),
    };
    let r2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let mut basis = DMatrix::zeros(d, d - 1);
    let mut c = 0;
    for i in 0..d {
        if i == 0 {
            basis[(0, c)] = r2;
            basis[(j, c)] = r2;
        } else if i == j {
            continue;
        } else {
            basis[(i, c)] = T::one();
        }
        c += 1;
    }
    let reduced = b.lmul(&basis.transpose()).rmul(&basis);
    Ok([null.into_block(Sense::Zero), reduced.into_block(Sense::Psd)])
}

/// Assembles the full program for the problem's kind; the objective maximizes `nu~`.
pub fn assemble_program<T: Real>(problem: &Problem<T>, opts: &AssembleOptions<T>) -> Result<ConicProgram<T>, LmiError> {
    let layout = DecisionLayout::new(problem);
    let nn = layout.horizon;
    let mut program = Program::new(layout.total());
    program.objective[layout.nu()] = T::one();
    let mut families = Vec::new();
    let mut push = |b: BlockLmi<T>, f: BlockFamily| {
        program.push(b);
        families.push(f);
    };
    let s = problem.stages[0].s();
    for k in 0..nn {
        match problem.kind {
            ProblemKind::NominalFinite => push(build_cost_lmi_nominal(problem, &layout, k)?, BlockFamily::Cost { k }),
            _ => push(build_robust_cost_lmi(problem, &layout, k)?, BlockFamily::RobustCost { k }),
        }
    }
    if problem.kind == ProblemKind::RobustInfinite {
        let [null, reduced] = build_infinite_tail_lmi(problem, &layout, opts.tail_scale)?;
        push(null, BlockFamily::TailNull);
        push(reduced, BlockFamily::Tail);
    }
    let last = if problem.kind.is_finite() { nn } else { nn + 1 };
    for k in 0..last {
        for i in 0..s {
            push(build_constraint_lmi(problem, &layout, k, i)?, BlockFamily::Constraint { k, i });
        }
    }
    let [init, trace] = build_initial_lmi(problem, &layout);
    push(init, BlockFamily::Initial);
    push(trace, BlockFamily::InitialTrace);
    if problem.kind.is_finite() {
        push(build_terminal_lmi(problem, &layout, opts.pf_ridge)?, BlockFamily::Terminal);
    }
    let d = 1 + layout.n;
    for k in 0..=nn {
        let strict = layout
            .p_expr(k)
            .sub(&AffineExpr::constant(DMatrix::identity(d, d) * opts.mu));
        push(strict.into_block(Sense::Psd), BlockFamily::PStrict { k });
    }
    for k in 0..layout.multiplier_count() {
        let off = layout.e_offset(k).expect("multiplier offset");
        for i in 0..layout.channels {
            let mut b = BlockLmi::new(DMatrix::from_element(1, 1, -opts.mu), Sense::Nonneg);
            b.add_term(off + i, DMatrix::identity(1, 1));
            push(b, BlockFamily::EStrict { k, i });
        }
    }
    if let Some(cap) = opts.nu_cap {
        let mut b = BlockLmi::new(DMatrix::from_element(1, 1, cap), Sense::Nonneg);
        b.add_term(layout.nu(), -DMatrix::identity(1, 1));
        push(b, BlockFamily::NuCap);
    }
    Ok(ConicProgram {
        program,
        layout,
        families,
    })
}

/// `[1 0; f A]` as used by several closed-form constructions.
pub(crate) fn affine_state_map<T: Real>(stage: &StageData<T>) -> DMatrix<T> {
    let n = stage.n();
    let mut top = DMatrix::zeros(1, 1 + n);
    top[(0, 0)] = T::one();
    crate::model::vcat(&[&top, &hcat(&[&crate::model::col(&stage.f), &stage.a])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_example, ConstraintRow};
    use approx::assert_relative_eq;
    use lmih_conic::linalg::min_eigenvalue;

    fn scalar_zero_problem() -> Problem<f64> {
        // n = 1, m = 1, zero dynamics, y = u
        let stage = StageData {
            f: DVector::zeros(1),
            a: DMatrix::zeros(1, 1),
            b1: DMatrix::zeros(1, 1),
            b2: DMatrix::zeros(1, 0),
            g1: DVector::zeros(1),
            c1: DMatrix::zeros(1, 1),
            d11: DMatrix::identity(1, 1),
            d12: DMatrix::zeros(1, 0),
            constraints: vec![],
            g3: DVector::zeros(0),
            c3: DMatrix::zeros(0, 1),
            d31: DMatrix::zeros(0, 1),
            d32: DMatrix::zeros(0, 0),
        };
        Problem {
            stages: vec![stage.clone(), stage],
            pf: DMatrix::identity(2, 2),
            x_bar: DVector::zeros(1),
            cone: Default::default(),
            kind: ProblemKind::NominalFinite,
        }
    }

    #[test]
    fn packing_round_trips() {
        let p = build_example(0.1, 0.1).with_horizon(2);
        let layout = DecisionLayout::new(&p);
        let x = DVector::from_fn(layout.total(), |i, _| i as f64 * 0.37 - 1.0);
        let v = layout.decode(&x);
        assert_relative_eq!(layout.encode(&v), x, epsilon = 1e-12);
        let pe = layout.p_expr::<f64>(1).evaluate(&x);
        assert_relative_eq!(pe, v.p_tilde[1], epsilon = 1e-14);
    }

    #[test]
    fn layout_is_contiguous() {
        let p = build_example(0.1, 0.1).with_horizon(3);
        let l = DecisionLayout::new(&p);
        assert_eq!(l.p_offset(0), 0);
        assert_eq!(l.k_offset(0), Some(4 * 6));
        assert_eq!(l.nu(), 4 * 6 + 4 * 3);
        assert_eq!(l.z_offset(), l.nu() + 1);
        assert_eq!(l.e_offset(0), Some(l.z_offset() + 6));
        assert_eq!(l.total(), l.z_offset() + 6 + 4 * 2);
    }

    #[test]
    fn nominal_block_at_identity_point() {
        let p = scalar_zero_problem();
        let layout = DecisionLayout::new(&p);
        let mut v = layout.decode(&DVector::zeros(layout.total()));
        v.p_tilde = vec![DMatrix::identity(2, 2); 2];
        let x = layout.encode(&v);
        let b = build_cost_lmi_nominal(&p, &layout, 0).unwrap();
        assert_eq!(b.dim(), 2 * 2 + 1);
        assert!(b.coefficient(layout.nu()).is_none());
        let g = b.evaluate(&x);
        assert_eq!(g.view((0, 3), (2, 2)).into_owned(), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        // p~_{k+1,11} = p~_{k,11} puts (1, -1) on the null direction: the block is PSD but singular.
        let lmin = min_eigenvalue(&g);
        assert!(lmin.abs() < 1e-12, "{lmin}");
        assert!(build_cost_lmi_nominal(&p, &layout, 1).is_err());
    }

    #[test]
    fn sqrt_sigma_squares_to_sigma() {
        let x = DVector::from_vec(vec![2.0, 3.0]);
        let s = sqrt_sigma(&x);
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_relative_eq!(&s * &s, &v * v.transpose(), epsilon = 1e-12);
        assert_relative_eq!(s, &v * v.transpose() / 14f64.sqrt(), epsilon = 1e-12);
        let e = sqrt_sigma(&DVector::<f64>::zeros(2));
        assert_eq!(e[(0, 0)], 1.0);
        assert_eq!(e.sum(), 1.0);
    }

    #[test]
    fn terminal_block() {
        let p = scalar_zero_problem().with_pf(DMatrix::identity(2, 2) * 2.0);
        let layout = DecisionLayout::new(&p);
        let b = build_terminal_lmi(&p, &layout, false).unwrap();
        let mut v = layout.decode(&DVector::zeros(layout.total()));
        v.p_tilde[1] = DMatrix::identity(2, 2) * 0.4;
        assert!(min_eigenvalue(&b.evaluate(&layout.encode(&v))) > 0.0);
        v.p_tilde[1] = DMatrix::identity(2, 2) * 0.6;
        assert!(min_eigenvalue(&b.evaluate(&layout.encode(&v))) < 0.0);

        let singular = scalar_zero_problem().with_pf(DMatrix::zeros(2, 2));
        assert_eq!(build_terminal_lmi(&singular, &layout, false), Err(LmiError::SingularPf));
    }

    #[test]
    fn terminal_constant_matches_sherman_morrison() {
        let base = DMatrix::identity(2, 2) * 2.0;
        let mut pf = base.clone();
        pf[(0, 0)] += 100.0;
        let p = scalar_zero_problem().with_pf(pf);
        let layout = DecisionLayout::new(&p);
        let b = build_terminal_lmi(&p, &layout, false).unwrap();
        let ai = DMatrix::identity(2, 2) * 0.5;
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let sm = &ai - (&ai * &e1 * e1.transpose() * &ai) * (100.0 / (1.0 + 100.0 * (e1.transpose() * &ai * &e1)[(0, 0)]));
        assert_relative_eq!(b.constant, sm, epsilon = 1e-14);
    }

    #[test]
    fn pure_input_constraint_determinant() {
        // n = 0, v = u / 4: block [[p, k/4], [k/4, nu]]
        let stage = StageData {
            f: DVector::zeros(0),
            a: DMatrix::zeros(0, 0),
            b1: DMatrix::zeros(0, 1),
            b2: DMatrix::zeros(0, 0),
            g1: DVector::zeros(0),
            c1: DMatrix::zeros(0, 0),
            d11: DMatrix::zeros(0, 1),
            d12: DMatrix::zeros(0, 0),
            constraints: vec![ConstraintRow::new(
                DVector::zeros(1),
                DMatrix::zeros(1, 0),
                DMatrix::from_element(1, 1, 0.25),
            )],
            g3: DVector::zeros(0),
            c3: DMatrix::zeros(0, 0),
            d31: DMatrix::zeros(0, 1),
            d32: DMatrix::zeros(0, 0),
        };
        let p = Problem {
            stages: vec![stage.clone(), stage],
            pf: DMatrix::identity(1, 1),
            x_bar: DVector::zeros(0),
            cone: Default::default(),
            kind: ProblemKind::NominalFinite,
        };
        let layout = DecisionLayout::new(&p);
        let b = build_constraint_lmi(&p, &layout, 0, 0).unwrap();
        for (pt, kt, nu) in [(1.0, 2.0, 0.3), (1.0, 2.0, 0.2), (0.5, -1.0, 0.2)] {
            let mut x = DVector::zeros(layout.total());
            x[layout.p_offset(0)] = pt;
            x[layout.k_offset(0).unwrap()] = kt;
            x[layout.nu()] = nu;
            let psd = min_eigenvalue(&b.evaluate(&x)) >= -1e-14;
            assert_eq!(psd, pt * nu >= kt * kt / 16.0, "{pt} {kt} {nu}");
        }
    }

    #[test]
    fn example_block_counts() {
        let p = build_example(0.1, 0.1);
        let cp = assemble_program(&p, &AssembleOptions::default()).unwrap();
        assert_eq!(cp.count(|f| matches!(f, BlockFamily::Tail | BlockFamily::TailNull)), 2);
        assert_eq!(cp.count(|f| matches!(f, BlockFamily::Constraint { .. })), 3);
        assert_eq!(cp.count(|f| matches!(f, BlockFamily::Initial | BlockFamily::InitialTrace)), 2);
        assert_eq!(cp.count(|f| matches!(f, BlockFamily::PStrict { .. })), 1);
        assert_eq!(cp.count(|f| matches!(f, BlockFamily::EStrict { .. })), 2);
        assert_eq!(cp.program.blocks.len(), 2 + 3 + 2 + 1 + 2 + 1);
        assert!(cp.program.validate().is_ok());
    }

    #[test]
    fn nominal_block_counts() {
        let p = build_example(0.1, 0.1)
            .with_kind(ProblemKind::NominalFinite)
            .with_pf(DMatrix::identity(3, 3))
            .with_horizon(2);
        let cp = assemble_program(&p, &AssembleOptions::default()).unwrap();
        assert_eq!(cp.count(|f| matches!(f, BlockFamily::Cost { .. })), 2);
        assert_eq!(cp.count(|f| matches!(f, BlockFamily::Constraint { .. })), 6);
        assert_eq!(cp.count(|f| matches!(f, BlockFamily::Terminal)), 1);
        assert_eq!(cp.count(|f| matches!(f, BlockFamily::Initial | BlockFamily::InitialTrace)), 2);
        assert!(cp.program.blocks.iter().all(|b| b.is_symmetric(0.0)));
    }

    #[test]
    fn tail_null_direction_is_identically_null() {
        let p = build_example(0.2, 0.1).with_horizon(1);
        let layout = DecisionLayout::new(&p);
        let full = tail_expr::<f64>(&p, &layout, TailScale::Identity).unwrap();
        let d = full.shape().0;
        let j = d - 3;
        let mut v = DMatrix::zeros(d, 1);
        v[(0, 0)] = 1.0;
        v[(j, 0)] = -1.0;
        let vbv = full.lmul(&v.transpose()).rmul(&v);
        assert_eq!(vbv.constant[(0, 0)], 0.0);
        assert!(vbv.terms.values().all(|m| m[(0, 0)].abs() < 1e-15));
    }

    #[test]
    fn tail_scale_nu_at_one_matches_identity() {
        let p = build_example(0.2, 0.1).with_horizon(1);
        let layout = DecisionLayout::new(&p);
        let x = DVector::from_fn(layout.total(), |i, _| ((i * 7 % 11) as f64) / 5.0);
        let mut x1 = x.clone();
        x1[layout.nu()] = 1.0;
        let a = tail_expr(&p, &layout, TailScale::Identity).unwrap().evaluate(&x1);
        let b = tail_expr(&p, &layout, TailScale::Nu).unwrap().evaluate(&x1);
        assert_eq!(a, b);
    }

    #[test]
    fn blocks_are_affine() {
        let p = build_example(0.2, 0.1).with_horizon(2);
        let cp = assemble_program(&p, &AssembleOptions::default()).unwrap();
        let x = DVector::from_fn(cp.layout.total(), |i, _| (i as f64 * 0.61).sin());
        for b in &cp.program.blocks {
            let g1 = b.evaluate(&x);
            let g2 = b.evaluate(&(&x * 2.0));
            assert_relative_eq!(g2, &g1 * 2.0 - &b.constant, epsilon = 1e-12);
        }
    }
}
