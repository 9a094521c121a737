//! Squared-exponential ARD covariance functions.
//!
//! Each latent process (the signal, its log-magnitude and the log noise
//! variance) gets its own [`KernelParams`]. Parameters live in log space so
//! that magnitudes and length-scales stay positive under unconstrained
//! optimization.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Relative diagonal jitter applied to every covariance matrix.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-8;
/// Largest relative jitter tried before giving up on a factorization.
pub const MAX_RELATIVE_JITTER: f64 = 1e-2;

/// Hyperparameters of one squared-exponential process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// `log σ²` of the process magnitude.
    pub log_magnitude: f64,
    /// `log ℓᵢ`; a single entry is broadcast to every input dimension.
    pub log_lengthscales: Vec<f64>,
    /// Constant prior mean of the process.
    pub constant_mean: f64,
}

impl KernelParams {
    pub fn new(log_magnitude: f64, log_lengthscales: Vec<f64>, constant_mean: f64) -> Self {
        Self { log_magnitude, log_lengthscales, constant_mean }
    }

    /// Isotropic kernel with zero mean.
    pub fn isotropic(log_magnitude: f64, log_lengthscale: f64) -> Self {
        Self::new(log_magnitude, vec![log_lengthscale], 0.0)
    }

    pub fn with_mean(mut self, mean: f64) -> Self {
        self.constant_mean = mean;
        self
    }

    pub fn magnitude(&self) -> f64 {
        self.log_magnitude.exp()
    }

    pub fn is_isotropic(&self) -> bool {
        self.log_lengthscales.len() == 1
    }

    /// Check that the length-scales can be broadcast to `dim` inputs.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        let k = self.log_lengthscales.len();
        if k == 1 || k == dim {
            Ok(())
        } else {
            Err(Error::input(format!("kernel has {k} length-scales but inputs have {dim} dimensions")))
        }
    }

    /// `1/ℓᵢ²` expanded to `dim` entries.
    fn inverse_sq_lengthscales(&self, dim: usize) -> Vec<f64> {
        (0..dim)
            .map(|i| {
                let l = if self.is_isotropic() { self.log_lengthscales[0] } else { self.log_lengthscales[i] };
                (-2.0 * l).exp()
            })
            .collect()
    }

    pub fn default_jitter(&self) -> f64 {
        DEFAULT_RELATIVE_JITTER * self.magnitude()
    }
}

/// `σ² exp(−Σ (xᵢ − x'ᵢ)² / (2ℓᵢ²))`.
pub fn se_ard(x: &[f64], x2: &[f64], p: &KernelParams) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::input(format!("input lengths differ: {} vs {}", x.len(), x2.len())));
    }
    p.check_dim(x.len())?;
    let inv = p.inverse_sq_lengthscales(x.len());
    Ok(se_with(x.iter().copied(), x2.iter().copied(), &inv, p.magnitude()))
}

#[inline]
fn se_with(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>, inv_sq: &[f64], mag: f64) -> f64 {
    let r2: f64 = a.zip(b).zip(inv_sq).map(|((u, v), w)| (u - v) * (u - v) * w).sum();
    mag * (-0.5 * r2).exp()
}

/// Dense covariance matrix together with the diagonal jitter it contains.
#[derive(Clone, Debug)]
pub struct CovMatrix {
    pub matrix: Mat<f64>,
    pub jitter: f64,
    magnitude: f64,
}

impl CovMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Cholesky factor, escalating jitter ×10 up to `1e-2·σ²` when the matrix
    /// is numerically indefinite.
    pub fn cholesky(&self) -> Result<Cholesky> {
        let start = 10.0 * DEFAULT_RELATIVE_JITTER * self.magnitude;
        Cholesky::factor_escalating(self.matrix.as_ref(), start, MAX_RELATIVE_JITTER * self.magnitude)
    }
}

/// `K[i][j] = k(xᵢ, xⱼ) + jitter·δᵢⱼ` over the rows of `x`.
pub fn cov_matrix(x: MatRef<'_, f64>, p: &KernelParams, jitter: f64) -> Result<CovMatrix> {
    if jitter < 0.0 {
        return Err(Error::input("jitter must be non-negative"));
    }
    let (n, d) = (x.nrows(), x.ncols());
    p.check_dim(d)?;
    let inv = p.inverse_sq_lengthscales(d);
    let mag = p.magnitude();
    let mut k = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = mag + jitter;
        for i in j + 1..n {
            let v = se_with((0..d).map(|c| x[(i, c)]), (0..d).map(|c| x[(j, c)]), &inv, mag);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(CovMatrix { matrix: k, jitter, magnitude: mag })
}

/// `K[i][j] = k(xᵢ, xsⱼ)`, an `n × m` matrix.
pub fn cross_cov(x: MatRef<'_, f64>, xs: MatRef<'_, f64>, p: &KernelParams) -> Result<Mat<f64>> {
    let d = x.ncols();
    if xs.ncols() != d && xs.nrows() > 0 {
        return Err(Error::input(format!("training inputs have {} columns, test inputs {}", d, xs.ncols())));
    }
    p.check_dim(d)?;
    let inv = p.inverse_sq_lengthscales(d);
    let mag = p.magnitude();
    Ok(Mat::from_fn(x.nrows(), xs.nrows(), |i, j| {
        se_with((0..d).map(|c| x[(i, c)]), (0..d).map(|c| xs[(j, c)]), &inv, mag)
    }))
}

/// `∂K/∂ log ℓ_c` for length-scale slot `c` (all dimensions when isotropic),
/// without jitter.
pub(crate) fn lengthscale_derivative(x: MatRef<'_, f64>, k: &Mat<f64>, p: &KernelParams, slot: usize) -> Mat<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    let inv = p.inverse_sq_lengthscales(d);
    let dims: Vec<usize> = if p.is_isotropic() { (0..d).collect() } else { vec![slot] };
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let s: f64 = dims.iter().map(|&c| (x[(i, c)] - x[(j, c)]).powi(2) * inv[c]).sum();
        k[(i, j)] * s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(v: &[&[f64]]) -> Mat<f64> {
        Mat::from_fn(v.len(), v[0].len(), |i, j| v[i][j])
    }

    /// Scalar-loop evaluation used as an independent oracle.
    fn oracle(x: &[f64], x2: &[f64], mag: f64, ls: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..x.len() {
            let l = if ls.len() == 1 { ls[0] } else { ls[i] };
            s += (x[i] - x2[i]) * (x[i] - x2[i]) / (2.0 * l * l);
        }
        mag * (-s).exp()
    }

    #[test]
    fn se_ard_examples() {
        let p = KernelParams::isotropic(0.0, 0.0);
        assert_eq!(se_ard(&[0.3], &[0.3], &p).unwrap(), 1.0);
        assert!((se_ard(&[0.0], &[1.0], &p).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-12);
        let p = KernelParams::new(2f64.ln(), vec![0.0, 2f64.ln()], 0.0);
        let v = se_ard(&[0.0, 0.0], &[1.0, 2.0], &p).unwrap();
        assert!((v - 0.735_758_882_342_884_6).abs() < 1e-12);
        assert!((v - oracle(&[0.0, 0.0], &[1.0, 2.0], 2.0, &[1.0, 2.0])).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let p = KernelParams::new(0.0, vec![0.0, 0.0], 0.0);
        assert!(matches!(se_ard(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], &p), Err(Error::Input(_))));
        assert!(matches!(se_ard(&[0.0], &[0.0, 1.0], &p), Err(Error::Input(_))));
    }

    #[test]
    fn cov_matrix_small_cases() {
        let p = KernelParams::isotropic(0.0, 0.0);
        let k = cov_matrix(rows(&[&[0.5]]).as_ref(), &p, 0.0).unwrap();
        assert_eq!(k.matrix[(0, 0)], 1.0);
        let k = cov_matrix(rows(&[&[1.0], &[1.0]]).as_ref(), &p, 1e-6).unwrap();
        assert_eq!(k.matrix[(0, 0)], 1.0 + 1e-6);
        assert_eq!(k.matrix[(0, 1)], 1.0);
        assert_eq!(k.matrix[(1, 0)], 1.0);
    }

    #[test]
    fn cross_cov_cases() {
        let p = KernelParams::new(0.4, vec![-0.2, 0.3], 0.0);
        let x = rows(&[&[0.0, 1.0], &[0.5, -1.0], &[2.0, 0.0]]);
        let kx = cross_cov(x.as_ref(), x.as_ref(), &p).unwrap();
        let k = cov_matrix(x.as_ref(), &p, 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((kx[(i, j)] - k.matrix[(i, j)]).abs() < 1e-15);
            }
        }
        let empty = Mat::<f64>::zeros(0, 2);
        let e = cross_cov(x.as_ref(), empty.as_ref(), &p).unwrap();
        assert_eq!((e.nrows(), e.ncols()), (3, 0));
        let one = cross_cov(x.as_ref().subrows(0, 1), x.as_ref().subrows(2, 1), &p).unwrap();
        assert_eq!(one[(0, 0)], se_ard(&[0.0, 1.0], &[2.0, 0.0], &p).unwrap());
    }

    #[test]
    fn random_matrix_is_symmetric_and_factorizes() {
        let x = rows(&[&[0.1, 2.0], &[-1.3, 0.4], &[0.7, 0.7], &[2.2, -0.5], &[-0.4, -1.9]]);
        let p = KernelParams::new(0.3, vec![0.2, -0.1], 0.0);
        let k = cov_matrix(x.as_ref(), &p, p.default_jitter()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(k.matrix[(i, j)], k.matrix[(j, i)]);
            }
        }
        assert!(k.cholesky().is_ok());
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64, d in -5.0..5.0f64,
                                 lm in -3.0..3.0f64, l1 in -2.0..2.0f64, l2 in -2.0..2.0f64) {
            let p = KernelParams::new(lm, vec![l1, l2], 0.0);
            let k1 = se_ard(&[a, b], &[c, d], &p).unwrap();
            let k2 = se_ard(&[c, d], &[a, b], &p).unwrap();
            prop_assert_eq!(k1, k2);
            prop_assert!(k1 <= p.magnitude() * (1.0 + 1e-15));
            prop_assert!(k1 >= 0.0);
            let k3 = oracle(&[a, b], &[c, d], lm.exp(), &[l1.exp(), l2.exp()]);
            prop_assert!((k1 - k3).abs() <= 1e-12 * p.magnitude());
        }

        #[test]
        fn monotone_in_distance(a in -3.0..3.0f64, gap in 0.01..3.0f64, extra in 0.01..1.0f64) {
            let p = KernelParams::isotropic(0.0, 0.5);
            let near = se_ard(&[a], &[a + gap], &p).unwrap();
            let far = se_ard(&[a], &[a + gap + extra], &p).unwrap();
            prop_assert!(far < near);
            prop_assert!(near < 1.0);
        }

        #[test]
        fn distinct_rows_factorize(xs in proptest::collection::vec(-10.0..10.0f64, 2..12), ll in -1.0..1.5f64) {
            let x = Mat::from_fn(xs.len(), 1, |i, _| xs[i]);
            let p = KernelParams::isotropic(0.0, ll);
            let k = cov_matrix(x.as_ref(), &p, 1e-10).unwrap();
            prop_assert!(Cholesky::factor(k.matrix.as_ref()).is_ok());
        }
    }
}
