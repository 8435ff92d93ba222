//! Infeasible-start primal-dual path-following method with Nesterov-Todd
//! scaling and Mehrotra predictor-corrector steps.
//!
//! Primal: maximize `c'x` s.t. `S_b = G_b(x) ⪰ 0` for every cone block and
//! `E x = e` for the entries of every `Zero` block.
//!
//! Dual: minimize `sum_b <Z_b, G0_b> + e'y` s.t. `c_j + sum_b <Z_b, G_bj> - (E'y)_j = 0`,
//! `Z_b ⪰ 0`. For feasible pairs the duality gap equals `sum_b <S_b, Z_b>`.
//!
//! The Newton system is reduced to the dense Schur complement
//! `H_kl = sum_b <G_bk, W_b^{-1} G_bl W_b^{-1}>` and factored by Cholesky with
//! a small static regularization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::linalg::{self, NtScaling};
use crate::program::{Program, ProgramError, Sense};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    /// Relative tolerance on residuals and duality gap.
    pub tol: T,
    pub max_iters: usize,
    /// Strict-feasibility threshold used by [`crate::feasibility_margin`].
    pub feas_eps: T,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: T,
    /// Static regularization added to the Schur complement (relative to its diagonal).
    pub regularization: T,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iters: 200,
            feas_eps: T::lit(1e-7),
            step_fraction: T::lit(0.98),
            regularization: T::lit(1e-14),
        }
    }
}

impl<T: Real> SolverOptions<T> {
    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.tol > T::zero() && self.tol < T::one()) {
            return Err(SolveError::InvalidOptions("tol must lie in (0, 1)"));
        }
        if !(self.feas_eps > T::zero()) {
            return Err(SolveError::InvalidOptions("feas_eps must be positive"));
        }
        if !(self.step_fraction > T::zero() && self.step_fraction < T::one()) {
            return Err(SolveError::InvalidOptions("step_fraction must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(SolveError::InvalidOptions("max_iters must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Optimal,
    InfeasibleCertified,
    NumericalFailure,
    IterationLimit,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::InfeasibleCertified => "infeasible_certified",
            Status::NumericalFailure => "numerical_failure",
            Status::IterationLimit => "iteration_limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals<T> {
    pub primal: T,
    pub dual: T,
    pub gap: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T: Real> {
    pub status: Status,
    pub x: DVector<T>,
    pub objective: T,
    pub dual_objective: T,
    /// Minimum eigenvalue per block at `x` (minus the violation for `Zero` blocks).
    pub min_eig_by_block: Vec<T>,
    pub iterations: usize,
    pub residuals: Residuals<T>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("malformed program: {0}")]
    Program(#[from] ProgramError),
    #[error("invalid solver options: {0}")]
    InvalidOptions(&'static str),
}

struct ConeBlock<T: Real> {
    constant: DMatrix<T>,
    terms: Vec<(usize, DMatrix<T>)>,
}

impl<T: Real> ConeBlock<T> {
    fn dim(&self) -> usize {
        self.constant.nrows()
    }

    fn linear(&self, dx: &DVector<T>) -> DMatrix<T> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for (var, coeff) in &self.terms {
            if dx[*var] != T::zero() {
                out += coeff * dx[*var];
            }
        }
        out
    }
}

/// Problem data split into cone blocks and stacked equality rows.
struct Standardized<T: Real> {
    n: usize,
    c: DVector<T>,
    cones: Vec<ConeBlock<T>>,
    eq_mat: DMatrix<T>,
    eq_rhs: DVector<T>,
    /// Constant equality rows with no variables that are violated.
    inconsistent: bool,
}

impl<T: Real> Standardized<T> {
    fn new(program: &Program<T>, tol: T) -> Self {
        let n = program.num_vars;
        let mut cones = Vec::new();
        let mut rows: Vec<(Vec<T>, T)> = Vec::new();
        let mut inconsistent = false;
        for block in &program.blocks {
            match block.sense {
                Sense::Psd | Sense::Nonneg => cones.push(ConeBlock {
                    constant: block.constant.clone(),
                    terms: block
                        .terms
                        .iter()
                        .filter(|(_, m)| m.iter().any(|v| *v != T::zero()))
                        .cloned()
                        .collect(),
                }),
                Sense::Zero => {
                    let d = block.dim();
                    for c in 0..d {
                        for r in 0..=c {
                            let mut row = vec![T::zero(); n];
                            let mut any = false;
                            for (var, m) in &block.terms {
                                let v = m[(r, c)];
                                if v != T::zero() {
                                    row[*var] = v;
                                    any = true;
                                }
                            }
                            let rhs = -block.constant[(r, c)];
                            if any {
                                rows.push((row, rhs));
                            } else if rhs.abs() > tol {
                                inconsistent = true;
                            }
                        }
                    }
                }
            }
        }
        let mut eq_mat = DMatrix::zeros(rows.len(), n);
        let mut eq_rhs = DVector::zeros(rows.len());
        for (i, (row, rhs)) in rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                eq_mat[(i, j)] = v;
            }
            eq_rhs[i] = rhs;
        }
        Self {
            n,
            c: program.objective.clone(),
            cones,
            eq_mat,
            eq_rhs,
            inconsistent,
        }
    }

    fn adjoint(&self, mats: &[DMatrix<T>]) -> DVector<T> {
        let mut out = DVector::zeros(self.n);
        for (block, m) in self.cones.iter().zip(mats) {
            for (var, coeff) in &block.terms {
                out[*var] += linalg::frob(coeff, m);
            }
        }
        out
    }

    fn degree(&self) -> usize {
        self.cones.iter().map(|b| b.dim()).sum()
    }
}

/// Factored reduced Newton system `[H E'; E 0]`.
struct NewtonSystem<T: Real> {
    h: DMatrix<T>,
    h_chol: Cholesky<T, Dyn>,
    /// `H^{-1} E'` and the factored `E H^{-1} E'`.
    h_inv_et: DMatrix<T>,
    schur_chol: Option<Cholesky<T, Dyn>>,
}

impl<T: Real> NewtonSystem<T> {
    fn factor(h: DMatrix<T>, eq: &DMatrix<T>, reg: T) -> Option<Self> {
        let n = h.nrows();
        let max_diag = (0..n).map(|i| h[(i, i)].abs()).fold(T::zero(), |a, b| a.max(b));
        let mut delta = reg * (T::one() + max_diag);
        for _ in 0..6 {
            let mut hr = h.clone();
            for i in 0..n {
                hr[(i, i)] += delta;
            }
            if let Some(h_chol) = Cholesky::new(hr) {
                let m = eq.nrows();
                let (h_inv_et, schur_chol) = if m > 0 {
                    let h_inv_et = h_chol.solve(&eq.transpose());
                    let mut schur = eq * &h_inv_et;
                    linalg::symmetrize(&mut schur);
                    let smax = (0..m).map(|i| schur[(i, i)].abs()).fold(T::zero(), |a, b| a.max(b));
                    let mut sdelta = reg * (T::one() + smax);
                    let mut chol = None;
                    for _ in 0..6 {
                        let mut s = schur.clone();
                        for i in 0..m {
                            s[(i, i)] += sdelta;
                        }
                        if let Some(c) = Cholesky::new(s) {
                            chol = Some(c);
                            break;
                        }
                        sdelta *= T::lit(100.0);
                    }
                    (h_inv_et, Some(chol?))
                } else {
                    (DMatrix::zeros(n, 0), None)
                };
                return Some(Self {
                    h,
                    h_chol,
                    h_inv_et,
                    schur_chol,
                });
            }
            delta *= T::lit(100.0);
        }
        None
    }

    fn solve_once(&self, rx: &DVector<T>, re: &DVector<T>, eq: &DMatrix<T>) -> (DVector<T>, DVector<T>) {
        match &self.schur_chol {
            None => (self.h_chol.solve(rx), DVector::zeros(0)),
            Some(sc) => {
                let hx = self.h_chol.solve(rx);
                let dy = sc.solve(&(eq * &hx - re));
                let dx = hx - &self.h_inv_et * &dy;
                (dx, dy)
            }
        }
    }

    /// Solves `H dx + E' dy = rx`, `E dx = re` with iterative refinement
    /// against the unregularized matrix.
    fn solve(&self, rx: &DVector<T>, re: &DVector<T>, eq: &DMatrix<T>) -> (DVector<T>, DVector<T>) {
        let (mut dx, mut dy) = self.solve_once(rx, re, eq);
        let residual = |dx: &DVector<T>, dy: &DVector<T>| {
            (rx - (&self.h * dx + eq.transpose() * dy), re - eq * dx)
        };
        let (mut res_x, mut res_e) = residual(&dx, &dy);
        let mut norm = res_x.norm() + res_e.norm();
        for _ in 0..4 {
            let (cx, cy) = self.solve_once(&res_x, &res_e, eq);
            let (nx, ny) = (&dx + cx, &dy + cy);
            let (rx2, re2) = residual(&nx, &ny);
            let n2 = rx2.norm() + re2.norm();
            if !(n2 < norm) {
                break;
            }
            dx = nx;
            dy = ny;
            res_x = rx2;
            res_e = re2;
            norm = n2;
        }
        (dx, dy)
    }
}

struct Direction<T: Real> {
    dx: DVector<T>,
    dy: DVector<T>,
    ds: Vec<DMatrix<T>>,
    dz: Vec<DMatrix<T>>,
}

/// Maximizes the program's objective.
pub fn solve<T: Real>(program: &Program<T>, opts: &SolverOptions<T>) -> Result<Solution<T>, SolveError> {
    program.validate()?;
    opts.validate()?;
    let data = Standardized::new(program, opts.tol);
    let n = data.n;
    let finish = |status: Status, x: DVector<T>, dual_obj: T, iters: usize, res: Residuals<T>| {
        let min_eig_by_block = crate::program::residuals(program, &x)
            .into_iter()
            .map(|r| r.margin())
            .collect();
        Solution {
            status,
            objective: program.objective_value(&x),
            x,
            dual_objective: dual_obj,
            min_eig_by_block,
            iterations: iters,
            residuals: res,
        }
    };
    if data.inconsistent {
        return Ok(finish(
            Status::InfeasibleCertified,
            DVector::zeros(n),
            T::zero(),
            0,
            Residuals::default(),
        ));
    }

    let nu = data.degree();
    let m_eq = data.eq_mat.nrows();
    let mut x = DVector::<T>::zeros(n);
    let mut y = DVector::<T>::zeros(m_eq);
    let mut s: Vec<DMatrix<T>> = data
        .cones
        .iter()
        .map(|b| {
            let d = b.dim();
            let lmin = linalg::min_eigenvalue(&b.constant);
            let shift = (T::one() - lmin).max(T::zero());
            let mut m = b.constant.clone() + DMatrix::identity(d, d) * shift;
            linalg::symmetrize(&mut m);
            m
        })
        .collect();
    let mut z: Vec<DMatrix<T>> = data.cones.iter().map(|b| DMatrix::identity(b.dim(), b.dim())).collect();

    let g0_norm = data
        .cones
        .iter()
        .map(|b| b.constant.norm_squared())
        .fold(T::zero(), |a, b| a + b)
        .sqrt();
    let e_norm = data.eq_rhs.norm();
    let c_norm = data.c.norm();
    let nu_t = T::from_usize(nu.max(1)).unwrap();
    let mut last = Residuals::default();
    let mut dual_obj = T::zero();

    for iter in 0..opts.max_iters {
        // Residuals.
        let rp: Vec<DMatrix<T>> = data
            .cones
            .iter()
            .zip(&s)
            .map(|(b, sb)| sb - (&b.constant + b.linear(&x)))
            .collect();
        let rd = &data.c + data.adjoint(&z) - data.eq_mat.transpose() * &y;
        let re = &data.eq_rhs - &data.eq_mat * &x;

        let comp = s.iter().zip(&z).fold(T::zero(), |a, (sb, zb)| a + linalg::frob(sb, zb));
        let mu = comp / nu_t;
        let pobj = data.c.dot(&x);
        dual_obj = data
            .cones
            .iter()
            .zip(&z)
            .fold(data.eq_rhs.dot(&y), |a, (b, zb)| a + linalg::frob(&b.constant, zb));
        let rp_norm = rp.iter().map(|m| m.norm_squared()).fold(T::zero(), |a, b| a + b).sqrt();
        let pres = (rp_norm / (T::one() + g0_norm)).max(re.norm() / (T::one() + e_norm));
        let dres = rd.norm() / (T::one() + c_norm);
        let gap = comp.max((pobj - dual_obj).abs());
        last = Residuals {
            primal: pres,
            dual: dres,
            gap,
        };
        let scale = T::one() + pobj.abs();
        if pres <= opts.tol && dres <= opts.tol && gap <= opts.tol * scale {
            return Ok(finish(Status::Optimal, x, dual_obj, iter, last));
        }

        // Farkas-type evidence of primal infeasibility.
        let kappa = -dual_obj;
        if kappa > T::zero() && pres > opts.tol.sqrt() {
            let farkas = (&rd - &data.c).norm();
            if farkas <= opts.tol * kappa {
                return Ok(finish(Status::InfeasibleCertified, x, dual_obj, iter, last));
            }
        }

        let Some(nts) = s
            .iter()
            .zip(&z)
            .map(|(sb, zb)| NtScaling::new(sb, zb))
            .collect::<Option<Vec<_>>>()
        else {
            return Ok(finish(Status::NumericalFailure, x, dual_obj, iter, last));
        };

        // Schur complement.
        let mut h = DMatrix::<T>::zeros(n, n);
        for (block, nt) in data.cones.iter().zip(&nts) {
            let scaled: Vec<DMatrix<T>> = block
                .terms
                .iter()
                .map(|(_, g)| &nt.w_inv * g * &nt.w_inv)
                .collect();
            for (a, (k, _)) in block.terms.iter().enumerate() {
                for (l, gl) in block.terms.iter().skip(a) {
                    let v = linalg::frob(gl, &scaled[a]);
                    h[(*k, *l)] += v;
                    if k != l {
                        h[(*l, *k)] += v;
                    }
                }
            }
        }
        let Some(newton) = NewtonSystem::factor(h, &data.eq_mat, opts.regularization) else {
            return Ok(finish(Status::NumericalFailure, x, dual_obj, iter, last));
        };
        let wrw: Vec<DMatrix<T>> = nts.iter().zip(&rp).map(|(nt, r)| &nt.w_inv * r * &nt.w_inv).collect();

        let solve_dir = |t: &[DMatrix<T>]| -> Direction<T> {
            let mats: Vec<DMatrix<T>> = nts
                .iter()
                .zip(t)
                .zip(&wrw)
                .map(|((nt, tb), w)| nt.unscale_dual(tb) + w)
                .collect();
            let rx = &rd + data.adjoint(&mats);
            let (dx, dy) = newton.solve(&rx, &re, &data.eq_mat);
            let mut ds = Vec::with_capacity(nts.len());
            let mut dz = Vec::with_capacity(nts.len());
            for (((block, nt), tb), r) in data.cones.iter().zip(&nts).zip(t).zip(&rp) {
                let mut dsb = block.linear(&dx) - r;
                linalg::symmetrize(&mut dsb);
                let mut dzb = nt.unscale_dual(tb) - &nt.w_inv * &dsb * &nt.w_inv;
                linalg::symmetrize(&mut dzb);
                ds.push(dsb);
                dz.push(dzb);
            }
            Direction { dx, dy, ds, dz }
        };
        let step_lengths = |dir: &Direction<T>| -> (T, T, Vec<DMatrix<T>>, Vec<DMatrix<T>>) {
            let mut ap = T::max_value().unwrap();
            let mut ad = T::max_value().unwrap();
            let mut sts = Vec::with_capacity(nts.len());
            let mut zts = Vec::with_capacity(nts.len());
            for ((nt, dsb), dzb) in nts.iter().zip(&dir.ds).zip(&dir.dz) {
                let mut st = nt.scale_primal(dsb);
                let mut zt = nt.scale_dual(dzb);
                linalg::symmetrize(&mut st);
                linalg::symmetrize(&mut zt);
                ap = ap.min(linalg::max_step(&nt.lambda, &st));
                ad = ad.min(linalg::max_step(&nt.lambda, &zt));
                sts.push(st);
                zts.push(zt);
            }
            (ap, ad, sts, zts)
        };

        // Predictor.
        let t_aff: Vec<DMatrix<T>> = nts.iter().map(|nt| -DMatrix::from_diagonal(&nt.lambda)).collect();
        let aff = solve_dir(&t_aff);
        let (ap_a, ad_a, st_a, zt_a) = step_lengths(&aff);
        let ap_a = ap_a.min(T::one());
        let ad_a = ad_a.min(T::one());
        let mu_aff = s
            .iter()
            .zip(&z)
            .zip(aff.ds.iter().zip(&aff.dz))
            .fold(T::zero(), |acc, ((sb, zb), (dsb, dzb))| {
                acc + linalg::frob(&(sb + dsb * ap_a), &(zb + dzb * ad_a))
            })
            / nu_t;
        let sigma = if mu > T::zero() {
            (mu_aff / mu).max(T::zero()).min(T::one()).powi(3)
        } else {
            T::zero()
        };

        // Corrector.
        let half = T::lit(0.5);
        let two = T::lit(2.0);
        let t_cor: Vec<DMatrix<T>> = nts
            .iter()
            .zip(st_a.iter().zip(&zt_a))
            .map(|(nt, (st, zt))| {
                let d = nt.lambda.len();
                let prod = st * zt;
                let mut t = DMatrix::zeros(d, d);
                for i in 0..d {
                    for j in 0..d {
                        let mut rc = -(prod[(i, j)] + prod[(j, i)]) * half;
                        if i == j {
                            rc += sigma * mu - nt.lambda[i] * nt.lambda[i];
                        }
                        t[(i, j)] = two * rc / (nt.lambda[i] + nt.lambda[j]);
                    }
                }
                t
            })
            .collect();
        let dir = solve_dir(&t_cor);
        let (ap, ad, _, _) = step_lengths(&dir);
        let ap = (opts.step_fraction * ap).min(T::one());
        let ad = (opts.step_fraction * ad).min(T::one());
        if !(ap.is_finite() && ad.is_finite()) || (ap < T::lit(1e-12) && ad < T::lit(1e-12)) {
            return Ok(finish(Status::NumericalFailure, x, dual_obj, iter, last));
        }

        x += &dir.dx * ap;
        y += &dir.dy * ad;
        for (sb, dsb) in s.iter_mut().zip(&dir.ds) {
            *sb += dsb * ap;
            linalg::symmetrize(sb);
        }
        for (zb, dzb) in z.iter_mut().zip(&dir.dz) {
            *zb += dzb * ad;
            linalg::symmetrize(zb);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Ok(finish(Status::NumericalFailure, x, dual_obj, iter + 1, last));
        }
    }
    Ok(finish(Status::IterationLimit, x, dual_obj, opts.max_iters, last))
}
