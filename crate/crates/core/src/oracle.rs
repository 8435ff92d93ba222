//! Ground truth for small examples: robust controllable sets by polytope
//! projection, and the unconstrained affine-quadratic Riccati sweep.

use nalgebra::{DMatrix, DVector};

use crate::model::{lift, Problem, ProblemKind, StageData};
use crate::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("stage {stage}, constraint {index}: only scalar constraint rows are polytopic")]
    NonPolytopic { stage: usize, index: usize },
    #[error("stage {stage}: D32 must vanish for vertex enumeration")]
    FeedthroughUncertainty { stage: usize },
    #[error("feasible set did not converge in {iters} iterations (last change {last_change:e})")]
    NotConverged { iters: usize, last_change: f64 },
    #[error("grid needs at least 2 points per axis")]
    GridTooSmall,
    #[error("Riccati step {k} is singular")]
    SingularStep { k: usize },
    #[error("linear program failed: {0}")]
    Lp(&'static str),
}

/// `{x : H x <= h}` with unit-norm rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope<T: Real> {
    pub h_mat: DMatrix<T>,
    pub h: DVector<T>,
}

/// Half-width of the implicit bounding box used by every LP.
const BOX: f64 = 1e4;
const PRUNE_TOL: f64 = 1e-9;

impl<T: Real> Polytope<T> {
    /// The whole space (no rows).
    pub fn universe(n: usize) -> Self {
        Self {
            h_mat: DMatrix::zeros(0, n),
            h: DVector::zeros(0),
        }
    }

    /// `lo <= x_i <= hi` for every coordinate.
    pub fn cube(n: usize, lo: T, hi: T) -> Self {
        let mut h_mat = DMatrix::zeros(2 * n, n);
        let mut h = DVector::zeros(2 * n);
        for i in 0..n {
            h_mat[(2 * i, i)] = T::one();
            h[2 * i] = hi;
            h_mat[(2 * i + 1, i)] = -T::one();
            h[2 * i + 1] = -lo;
        }
        Self { h_mat, h }
    }

    /// Normalizes rows, drops zero rows, and detects trivially empty sets.
    pub fn from_rows(h_mat: DMatrix<T>, h: DVector<T>) -> Self {
        let n = h_mat.ncols();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let mut empty = false;
        for i in 0..h_mat.nrows() {
            let r = h_mat.row(i);
            let nr = r.norm();
            if nr > T::lit(1e-12) {
                rows.push(r / nr);
                rhs.push(h[i] / nr);
            } else if h[i] < -T::lit(PRUNE_TOL) {
                empty = true;
            }
        }
        if empty {
            return Self::empty(n);
        }
        Self {
            h_mat: if rows.is_empty() {
                DMatrix::zeros(0, n)
            } else {
                DMatrix::from_rows(&rows)
            },
            h: DVector::from_vec(rhs),
        }
    }

    /// A canonical empty set: `x_0 <= -1` and `-x_0 <= -1`.
    pub fn empty(n: usize) -> Self {
        let mut h_mat = DMatrix::zeros(2, n);
        h_mat[(0, 0)] = T::one();
        h_mat[(1, 0)] = -T::one();
        Self {
            h_mat,
            h: DVector::from_element(2, -T::one()),
        }
    }

    pub fn dim(&self) -> usize {
        self.h_mat.ncols()
    }

    pub fn rows(&self) -> usize {
        self.h.len()
    }

    /// Closed-set membership with slack `tol`.
    pub fn contains(&self, x: &DVector<T>, tol: T) -> bool {
        (&self.h_mat * x - &self.h).iter().all(|v| *v <= tol)
    }

    /// Chebyshev radius; negative or zero for empty or flat sets.
    pub fn chebyshev(&self) -> Result<(DVector<T>, T), OracleError> {
        let n = self.dim();
        let m = self.rows();
        let mut a = DMatrix::zeros(m + 2 * n, n + 1);
        let mut b = DVector::zeros(m + 2 * n);
        for i in 0..m {
            a.view_mut((i, 0), (1, n)).copy_from(&self.h_mat.row(i));
            a[(i, n)] = T::one();
            b[i] = self.h[i];
        }
        for i in 0..n {
            a[(m + 2 * i, i)] = T::one();
            a[(m + 2 * i + 1, i)] = -T::one();
            b[m + 2 * i] = T::lit(BOX);
            b[m + 2 * i + 1] = T::lit(BOX);
        }
        // the radius is capped by the box as well
        let mut a2 = DMatrix::zeros(a.nrows() + 1, n + 1);
        a2.view_mut((0, 0), a.shape()).copy_from(&a);
        a2[(a.nrows(), n)] = T::one();
        let mut b2 = DVector::zeros(b.len() + 1);
        b2.rows_mut(0, b.len()).copy_from(&b);
        b2[b.len()] = T::lit(BOX);
        let mut c = DVector::zeros(n + 1);
        c[n] = T::one();
        let sol = lp_max(&a2, &b2, &c)?;
        Ok((sol.rows(0, n).into_owned(), sol[n]))
    }

    pub fn is_empty(&self) -> Result<bool, OracleError> {
        Ok(self.chebyshev()?.1 <= T::lit(PRUNE_TOL))
    }

    /// `max c'x` over the set intersected with the bounding box.
    pub fn support(&self, c: &DVector<T>) -> Result<T, OracleError> {
        let (a, b) = with_box(&self.h_mat, &self.h);
        let x = lp_max(&a, &b, c)?;
        Ok(c.dot(&x))
    }

    /// Removes rows implied by the others (LP test with tolerance 1e-9).
    pub fn prune(&self) -> Result<Self, OracleError> {
        if self.is_empty()? {
            return Ok(Self::empty(self.dim()));
        }
        let deduped = self.dedupe();
        let m = deduped.rows();
        let mut keep = vec![true; m];
        for r in 0..m {
            let others: Vec<usize> = (0..m).filter(|&j| j != r && keep[j]).collect();
            let a = deduped.h_mat.select_rows(&others);
            let b = DVector::from_iterator(others.len(), others.iter().map(|&j| deduped.h[j]));
            let (a, b) = with_box(&a, &b);
            let c = deduped.h_mat.row(r).transpose();
            let x = lp_max(&a, &b, &c)?;
            if c.dot(&x) <= deduped.h[r] + T::lit(PRUNE_TOL) {
                keep[r] = false;
            }
        }
        let idx: Vec<usize> = (0..m).filter(|&j| keep[j]).collect();
        Ok(Self {
            h_mat: deduped.h_mat.select_rows(&idx),
            h: DVector::from_iterator(idx.len(), idx.iter().map(|&j| deduped.h[j])),
        })
    }

    /// Merges parallel rows, keeping the tightest offset.
    fn dedupe(&self) -> Self {
        let mut rows: Vec<(DVector<T>, T)> = Vec::new();
        for i in 0..self.rows() {
            let r = self.h_mat.row(i).transpose();
            match rows.iter_mut().find(|(q, _)| (q - &r).amax() < T::lit(1e-12)) {
                Some((_, h)) => *h = h.min(self.h[i]),
                None => rows.push((r, self.h[i])),
            }
        }
        let n = self.dim();
        let mut h_mat = DMatrix::zeros(rows.len(), n);
        for (i, (r, _)) in rows.iter().enumerate() {
            h_mat.set_row(i, &r.transpose());
        }
        Self {
            h_mat,
            h: DVector::from_iterator(rows.len(), rows.iter().map(|(_, h)| *h)),
        }
    }

    /// `self ⊆ other` up to `tol`, by support functions.
    pub fn is_subset_of(&self, other: &Self, tol: T) -> Result<bool, OracleError> {
        for i in 0..other.rows() {
            let c = other.h_mat.row(i).transpose();
            if self.support(&c)? > other.h[i] + tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Largest support-function excess of `self` over `other`.
    pub fn excess_over(&self, other: &Self) -> Result<T, OracleError> {
        let mut worst = T::zero();
        for i in 0..other.rows() {
            let c = other.h_mat.row(i).transpose();
            worst = worst.max(self.support(&c)? - other.h[i]);
        }
        Ok(worst)
    }
}

fn with_box<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> (DMatrix<T>, DVector<T>) {
    let (m, n) = a.shape();
    let mut a2 = DMatrix::zeros(m + 2 * n, n);
    a2.view_mut((0, 0), (m, n)).copy_from(a);
    let mut b2 = DVector::from_element(m + 2 * n, T::lit(BOX));
    b2.rows_mut(0, m).copy_from(b);
    for i in 0..n {
        a2[(m + 2 * i, i)] = T::one();
        a2[(m + 2 * i + 1, i)] = -T::one();
    }
    (a2, b2)
}

/// `max c'x s.t. A x <= b` for small dense problems with a bounded feasible set.
///
/// Two-phase tableau simplex on the dual standard form
/// `min b'y s.t. A'y = c, y >= 0`; the primal optimum is the vector of simplex
/// multipliers. Returns [`OracleError::Lp`] when the primal is infeasible.
pub fn lp_max<T: Real>(a: &DMatrix<T>, b: &DVector<T>, c: &DVector<T>) -> Result<DVector<T>, OracleError> {
    let (m, n) = a.shape();
    let cols = m + n;
    let mut tab = DMatrix::zeros(n, cols + 1);
    let sign: Vec<T> = c.iter().map(|v| if *v < T::zero() { -T::one() } else { T::one() }).collect();
    for i in 0..n {
        for j in 0..m {
            tab[(i, j)] = a[(j, i)] * sign[i];
        }
        tab[(i, m + i)] = T::one();
        tab[(i, cols)] = c[i] * sign[i];
    }
    let mut basis: Vec<usize> = (m..cols).collect();
    let mut cost = DVector::zeros(cols);
    for j in m..cols {
        cost[j] = T::one();
    }
    let allowed = |j: usize| j < cols;
    simplex(&mut tab, &mut basis, &cost, &allowed)?;
    let infeas: T = (0..n).filter(|&i| basis[i] >= m).map(|i| tab[(i, cols)]).fold(T::zero(), |s, v| s + v);
    if infeas > T::lit(1e-9) * (T::one() + c.amax()) {
        return Err(OracleError::Lp("primal unbounded"));
    }
    // drive remaining artificials out of the basis
    for i in 0..n {
        if basis[i] >= m {
            if let Some(j) = (0..m).filter(|j| !basis.contains(j)).max_by(|&p, &q| {
                tab[(i, p)].abs().partial_cmp(&tab[(i, q)].abs()).unwrap_or(std::cmp::Ordering::Equal)
            }) {
                if tab[(i, j)].abs() > T::lit(1e-12) {
                    pivot(&mut tab, &mut basis, i, j);
                }
            }
        }
    }
    let mut cost = DVector::zeros(cols);
    cost.rows_mut(0, m).copy_from(b);
    let allowed = |j: usize| j < m;
    simplex(&mut tab, &mut basis, &cost, &allowed).map_err(|_| OracleError::Lp("primal infeasible"))?;
    // multipliers: B' pi = b_B on the sign-adjusted columns
    let mut bm = DMatrix::zeros(n, n);
    let mut cb = DVector::zeros(n);
    for (k, &j) in basis.iter().enumerate() {
        for i in 0..n {
            bm[(i, k)] = if j < m {
                a[(j, i)] * sign[i]
            } else if j - m == i {
                T::one()
            } else {
                T::zero()
            };
        }
        cb[k] = if j < m { b[j] } else { T::zero() };
    }
    let pi = bm
        .transpose()
        .lu()
        .solve(&cb)
        .ok_or(OracleError::Lp("singular basis"))?;
    Ok(DVector::from_iterator(n, (0..n).map(|i| pi[i] * sign[i])))
}

fn pivot<T: Real>(tab: &mut DMatrix<T>, basis: &mut [usize], r: usize, j: usize) {
    let p = tab[(r, j)];
    let row = tab.row(r) / p;
    tab.set_row(r, &row);
    for i in 0..tab.nrows() {
        if i != r {
            let f = tab[(i, j)];
            if f != T::zero() {
                let upd = tab.row(i) - &row * f;
                tab.set_row(i, &upd);
            }
        }
    }
    basis[r] = j;
}

/// Minimizes `cost'y` over the tableau; Dantzig pricing with a switch to Bland's rule.
fn simplex<T: Real>(
    tab: &mut DMatrix<T>,
    basis: &mut [usize],
    cost: &DVector<T>,
    allowed: &dyn Fn(usize) -> bool,
) -> Result<(), OracleError> {
    let (n, w) = tab.shape();
    let cols = w - 1;
    let tol = T::lit(1e-11) * (T::one() + cost.amax());
    for iter in 0..10_000 {
        let mut reduced = cost.clone();
        for i in 0..n {
            let cb = cost[basis[i]];
            if cb != T::zero() {
                for j in 0..cols {
                    reduced[j] -= cb * tab[(i, j)];
                }
            }
        }
        let bland = iter > 50;
        let mut enter = None;
        let mut best = -tol;
        for j in (0..cols).filter(|&j| allowed(j) && !basis.contains(&j)) {
            if reduced[j] < best {
                enter = Some(j);
                if bland {
                    break;
                }
                best = reduced[j];
            }
        }
        let Some(j) = enter else {
            return Ok(());
        };
        let mut leave: Option<(usize, T)> = None;
        for i in 0..n {
            let v = tab[(i, j)];
            if v > T::lit(1e-12) {
                let ratio = tab[(i, cols)] / v;
                let better = match leave {
                    None => true,
                    Some((r, lr)) => ratio < lr - T::lit(1e-14) || (ratio <= lr + T::lit(1e-14) && basis[i] < basis[r]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((r, _)) = leave else {
            return Err(OracleError::Lp("unbounded"));
        };
        pivot(tab, basis, r, j);
    }
    Err(OracleError::Lp("simplex iteration limit"))
}

/// Every `delta` vertex: one sign per channel, `delta_i = ±gamma_i`.
pub fn uncertainty_vertices<T: Real>(problem: &Problem<T>) -> Vec<Vec<T>> {
    if !problem.kind.is_robust() || problem.cone.is_empty() {
        return vec![vec![]];
    }
    let ch = &problem.cone.channels;
    (0..1usize << ch.len())
        .map(|mask| {
            ch.iter()
                .enumerate()
                .map(|(i, c)| if mask >> i & 1 == 1 { -c.bound } else { c.bound })
                .collect()
        })
        .collect()
}

/// `(f, A, B)` of the stage with the uncertainty loop closed at `delta`.
fn vertex_dynamics<T: Real>(
    problem: &Problem<T>,
    stage: &StageData<T>,
    delta: &[T],
) -> (DVector<T>, DMatrix<T>, DMatrix<T>) {
    if delta.is_empty() {
        return (stage.f.clone(), stage.a.clone(), stage.b1.clone());
    }
    let d = DMatrix::from_diagonal(&problem.cone.expand(delta));
    let b2d = &stage.b2 * d;
    (
        &stage.f + &b2d * &stage.g3,
        &stage.a + &b2d * &stage.c3,
        &stage.b1 + &b2d * &stage.d31,
    )
}

/// `{x : constraints at stage k hold and some u keeps every vertex successor in target}`.
pub fn robust_pre<T: Real>(target: &Polytope<T>, problem: &Problem<T>, k: usize) -> Result<Polytope<T>, OracleError> {
    let stage = problem.stage(k);
    let idx = k.min(problem.horizon());
    if problem.kind.is_robust() && stage.d32.iter().any(|v| *v != T::zero()) {
        return Err(OracleError::FeedthroughUncertainty { stage: idx });
    }
    let (n, m) = (stage.n(), stage.m());
    let mut rows: Vec<DVector<T>> = Vec::new();
    let mut rhs: Vec<T> = Vec::new();
    for delta in uncertainty_vertices(problem) {
        let (f, a, b) = vertex_dynamics(problem, stage, &delta);
        let ha = &target.h_mat * &a;
        let hb = &target.h_mat * &b;
        let hf = &target.h_mat * &f;
        for i in 0..target.rows() {
            let mut r = DVector::zeros(n + m);
            r.rows_mut(0, n).copy_from(&ha.row(i).transpose());
            r.rows_mut(n, m).copy_from(&hb.row(i).transpose());
            rows.push(r);
            rhs.push(target.h[i] - hf[i]);
        }
    }
    for (i, row) in stage.constraints.iter().enumerate() {
        if row.rows() != 1 {
            return Err(OracleError::NonPolytopic { stage: idx, index: i });
        }
        let mut r = DVector::zeros(n + m);
        r.rows_mut(0, n).copy_from(&row.c.row(0).transpose());
        r.rows_mut(n, m).copy_from(&row.d.row(0).transpose());
        let g = row.g[0];
        rows.push(r.clone());
        rhs.push(T::one() - g);
        rows.push(-r);
        rhs.push(T::one() + g);
    }
    let mut lifted = Polytope::from_rows(stack_rows(&rows, n + m), DVector::from_vec(rhs)).prune()?;
    for _ in 0..m {
        lifted = eliminate_last(&lifted)?.prune()?;
    }
    Ok(lifted)
}

fn stack_rows<T: Real>(rows: &[DVector<T>], n: usize) -> DMatrix<T> {
    let mut out = DMatrix::zeros(rows.len(), n);
    for (i, r) in rows.iter().enumerate() {
        out.set_row(i, &r.transpose());
    }
    out
}

/// Fourier–Motzkin elimination of the last coordinate.
pub fn eliminate_last<T: Real>(p: &Polytope<T>) -> Result<Polytope<T>, OracleError> {
    let d = p.dim();
    let last = d - 1;
    let tiny = T::lit(1e-12);
    let (mut pos, mut neg, mut rows, mut rhs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..p.rows() {
        let a = p.h_mat[(i, last)];
        if a > tiny {
            pos.push(i);
        } else if a < -tiny {
            neg.push(i);
        } else {
            rows.push(p.h_mat.row(i).columns(0, last).transpose());
            rhs.push(p.h[i]);
        }
    }
    for &i in &pos {
        let ai = p.h_mat[(i, last)];
        for &j in &neg {
            let aj = -p.h_mat[(j, last)];
            let r = p.h_mat.row(i).columns(0, last) / ai + p.h_mat.row(j).columns(0, last) / aj;
            rows.push(r.transpose());
            rhs.push(p.h[i] / ai + p.h[j] / aj);
        }
    }
    Ok(Polytope::from_rows(stack_rows(&rows, last), DVector::from_vec(rhs)))
}

/// The state part of the constraint rows that do not involve the input.
fn state_constraint_set<T: Real>(problem: &Problem<T>, k: usize) -> Result<Polytope<T>, OracleError> {
    let stage = problem.stage(k);
    let n = stage.n();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (i, row) in stage.constraints.iter().enumerate() {
        if row.rows() != 1 {
            return Err(OracleError::NonPolytopic { stage: k, index: i });
        }
        if row.d.iter().all(|v| *v == T::zero()) {
            let r = row.c.row(0).transpose();
            rows.push(r.clone());
            rhs.push(T::one() - row.g[0]);
            rows.push(-r);
            rhs.push(T::one() + row.g[0]);
        }
    }
    Ok(Polytope::from_rows(stack_rows(&rows, n), DVector::from_vec(rhs)))
}

/// Convergence trace of [`feasible_set`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet<T: Real> {
    pub set: Polytope<T>,
    pub iterations: usize,
    /// Support-function change per iteration.
    pub changes: Vec<T>,
}

/// Maximal robust controllable set of the stationary (last) stage.
pub fn feasible_set<T: Real>(problem: &Problem<T>, max_iters: usize, tol: T) -> Result<FeasibleSet<T>, OracleError> {
    let k = problem.horizon();
    let mut x = state_constraint_set(problem, k)?.prune()?;
    let mut changes = Vec::new();
    for it in 1..=max_iters {
        let next = robust_pre(&x, problem, k)?;
        let change = x.excess_over(&next)?;
        changes.push(change);
        x = next;
        if change <= tol {
            return Ok(FeasibleSet {
                set: x,
                iterations: it,
                changes,
            });
        }
    }
    Err(OracleError::NotConverged {
        iters: max_iters,
        last_change: changes.last().map(|c| c.to_f64_lossy()).unwrap_or(f64::NAN),
    })
}

/// Initial states of the finite-horizon problem admitting a feasible (robust) input sequence.
///
/// Constraints are imposed at `k < N` (and at `k = N` for the infinite kind,
/// whose tail is not enforced here).
pub fn finite_horizon_set<T: Real>(problem: &Problem<T>) -> Result<Polytope<T>, OracleError> {
    let nn = problem.horizon();
    let n = problem.n();
    let mut x = if problem.kind == ProblemKind::RobustInfinite {
        let mut at_n = robust_pre(&Polytope::universe(n), problem, nn)?;
        at_n = at_n.prune()?;
        at_n
    } else {
        Polytope::universe(n)
    };
    for k in (0..nn).rev() {
        x = robust_pre(&x, problem, k)?;
    }
    Ok(x)
}

/// `count x count` grid over `[lo, hi]^2`, row-major in the first coordinate.
pub fn grid<T: Real>(lo: T, hi: T, count: usize) -> Result<Vec<DVector<T>>, OracleError> {
    if count < 2 {
        return Err(OracleError::GridTooSmall);
    }
    let step = (hi - lo) / T::from_usize(count - 1).unwrap();
    let axis: Vec<T> = (0..count).map(|i| lo + step * T::from_usize(i).unwrap()).collect();
    Ok(axis
        .iter()
        .flat_map(|a| axis.iter().map(move |b| DVector::from_vec(vec![*a, *b])))
        .collect())
}

/// Result of the unconstrained backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSweep<T: Real> {
    pub p: Vec<DMatrix<T>>,
    /// Optimal gains on `(1, x)`.
    pub k: Vec<DMatrix<T>>,
    /// Optimal cost at `x_bar`.
    pub cost: T,
}

/// Affine-quadratic dynamic programming ignoring constraints and uncertainty.
pub fn riccati_sweep<T: Real>(problem: &Problem<T>) -> Result<RiccatiSweep<T>, OracleError> {
    let nn = problem.horizon();
    let d = 1 + problem.n();
    let mut p = vec![DMatrix::zeros(d, d); nn + 1];
    let mut gains = vec![DMatrix::zeros(problem.m(), d); nn];
    p[nn] = problem.pf.clone();
    for k in (0..nn).rev() {
        let stage = &problem.stages[k];
        let a_hat = crate::lmi::affine_state_map(stage);
        let mut b_hat = DMatrix::zeros(d, stage.m());
        b_hat.view_mut((1, 0), (stage.n(), stage.m())).copy_from(&stage.b1);
        let c_hat = crate::model::hcat(&[&crate::model::col(&stage.g1), &stage.c1]);
        let d_hat = &stage.d11;
        let pn = &p[k + 1];
        let r = d_hat.transpose() * d_hat + b_hat.transpose() * pn * &b_hat;
        let s = a_hat.transpose() * pn * &b_hat + c_hat.transpose() * d_hat;
        let r_inv = r.clone().try_inverse().ok_or(OracleError::SingularStep { k })?;
        let mut pk = a_hat.transpose() * pn * &a_hat + c_hat.transpose() * &c_hat - &s * &r_inv * s.transpose();
        lmih_conic::linalg::symmetrize(&mut pk);
        gains[k] = -(&r_inv * s.transpose());
        p[k] = pk;
    }
    let v = lift(&problem.x_bar);
    let cost = (v.transpose() * &p[0] * &v)[(0, 0)];
    Ok(RiccatiSweep { p, k: gains, cost })
}
