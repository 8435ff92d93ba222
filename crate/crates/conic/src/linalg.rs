//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::Real;

/// Symmetrizes in place: `m <- (m + m') / 2`.
pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in 0..i {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::max_value().unwrap_or_else(T::one);
    }
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s).eigenvalues.min()
}

pub fn max_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s).eigenvalues.max()
}

/// Frobenius inner product `tr(a' b)`.
pub fn frob<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

pub fn cholesky<T: Real>(m: &DMatrix<T>) -> Option<Cholesky<T, Dyn>> {
    Cholesky::new(m.clone())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>) -> Option<DMatrix<T>> {
    let mut inv = cholesky(m)?.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

/// Nesterov-Todd scaling of a pair of positive definite matrices.
///
/// Holds `R` with `R^{-1} S R^{-T} = R' Z R = diag(lambda)`; the scaling
/// point is `W = R R'` and satisfies `W Z W = S`.
#[derive(Debug, Clone)]
pub struct NtScaling<T: Real> {
    pub r: DMatrix<T>,
    pub r_inv: DMatrix<T>,
    pub lambda: DVector<T>,
    /// `W^{-1} = R^{-T} R^{-1}`.
    pub w_inv: DMatrix<T>,
}

impl<T: Real> NtScaling<T> {
    pub fn new(s: &DMatrix<T>, z: &DMatrix<T>) -> Option<Self> {
        let ls = cholesky(s)?.l();
        let lz = cholesky(z)?.l();
        let prod = lz.transpose() * &ls;
        let svd = prod.svd(true, true);
        let u = svd.u?;
        let vt = svd.v_t?;
        let lambda = svd.singular_values;
        if lambda.iter().any(|l| *l <= T::zero()) {
            return None;
        }
        let n = lambda.len();
        let mut r = ls * vt.transpose();
        let mut r_inv = u.transpose() * lz.transpose();
        for k in 0..n {
            let sq = lambda[k].sqrt();
            r.column_mut(k).scale_mut(T::one() / sq);
            r_inv.row_mut(k).scale_mut(T::one() / sq);
        }
        let mut w_inv = r_inv.transpose() * &r_inv;
        symmetrize(&mut w_inv);
        Some(Self {
            r,
            r_inv,
            lambda,
            w_inv,
        })
    }

    /// `R^{-1} X R^{-T}`.
    pub fn scale_primal(&self, x: &DMatrix<T>) -> DMatrix<T> {
        &self.r_inv * x * self.r_inv.transpose()
    }

    /// `R' X R`.
    pub fn scale_dual(&self, x: &DMatrix<T>) -> DMatrix<T> {
        self.r.transpose() * x * &self.r
    }

    /// `R^{-T} X R^{-1}`, the inverse map of [`Self::scale_dual`].
    pub fn unscale_dual(&self, x: &DMatrix<T>) -> DMatrix<T> {
        self.r_inv.transpose() * x * &self.r_inv
    }
}

/// Largest `alpha` in `(0, inf]` with `diag(lambda) + alpha * d` PSD.
pub fn max_step<T: Real>(lambda: &DVector<T>, d: &DMatrix<T>) -> T {
    let n = lambda.len();
    let mut m = d.clone();
    for i in 0..n {
        let si = T::one() / lambda[i].sqrt();
        for j in 0..n {
            let sj = T::one() / lambda[j].sqrt();
            m[(i, j)] *= si * sj;
        }
    }
    let lmin = min_eigenvalue(&m);
    if lmin >= T::zero() {
        T::max_value().unwrap_or_else(|| T::lit(1e30))
    } else {
        -T::one() / lmin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nt_scaling_maps_both_matrices_to_lambda() {
        let s = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let z = DMatrix::from_row_slice(3, 3, &[1.0, -0.3, 0.0, -0.3, 2.0, 0.4, 0.0, 0.4, 1.5]);
        let nt = NtScaling::new(&s, &z).unwrap();
        let lam = DMatrix::from_diagonal(&nt.lambda);
        assert_relative_eq!(nt.scale_primal(&s), lam, epsilon = 1e-10);
        assert_relative_eq!(nt.scale_dual(&z), lam, epsilon = 1e-10);
        // W Z W = S
        let w = &nt.r * nt.r.transpose();
        assert_relative_eq!(&w * &z * &w, s, epsilon = 1e-10);
        assert_relative_eq!(nt.w_inv.clone() * w, DMatrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn max_step_hits_boundary() {
        let lambda = DVector::from_vec(vec![1.0, 2.0]);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![-0.5, 1.0]));
        assert_relative_eq!(max_step(&lambda, &d), 2.0, epsilon = 1e-12);
    }
}
