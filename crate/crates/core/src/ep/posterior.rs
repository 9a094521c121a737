//! Gaussian posteriors `N(m, K) × Π site` over one or two stacked GP blocks.
//!
//! With `K = L Lᵀ` and site precision `T`, the posterior covariance is
//! `Σ = L B⁻¹ Lᵀ` where `B = I + Lᵀ T L = L_B L_Bᵀ`. `B` is positive definite
//! exactly when the posterior is proper, including when individual site
//! precisions are negative or zero.

use faer::Mat;

use crate::error::{Error, Result};
use crate::gaussian::{Gauss1, Gauss2, Sym2};
use crate::linalg::{dot, Cholesky};

/// One GP block: Cholesky factor of its prior covariance and its constant mean.
#[derive(Clone, Debug)]
pub struct PriorBlock {
    pub chol: Cholesky,
    pub mean: f64,
}

#[derive(Clone, Debug)]
pub struct GaussPosterior {
    n: usize,
    prior_mean: Vec<f64>,
    lb: Cholesky,
    /// `L_B⁻¹ Lᵀ`; `Σ = Vᵀ V`.
    v: Mat<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    /// `L⁻¹ (μ − m)`.
    c: Vec<f64>,
    log_z_term: f64,
}

impl GaussPosterior {
    /// Combine the prior `blocks` (each of size `n`) with site precisions
    /// `diag` (length `p = n·blocks`), optional cross precisions `cross`
    /// coupling entry `i` of block 0 with entry `i` of block 1, and site
    /// precision-means `nu`.
    pub fn compute(blocks: &[&PriorBlock], diag: &[f64], cross: Option<&[f64]>, nu: &[f64]) -> Result<Self> {
        let n = blocks[0].chol.dim();
        let nb = blocks.len();
        let p = n * nb;
        if diag.len() != p || nu.len() != p || blocks.iter().any(|b| b.chol.dim() != n) {
            return Err(Error::input("site vector lengths do not match the prior blocks"));
        }
        if let Some(c) = cross {
            if nb != 2 || c.len() != n {
                return Err(Error::input("cross-site precisions need exactly two blocks of equal size"));
            }
        }
        let partner = |r: usize| if r < n { r + n } else { r - n };
        let cross_at = |r: usize| cross.map_or(0.0, |c| c[r % n]);

        let mut l = Mat::<f64>::zeros(p, p);
        for (k, b) in blocks.iter().enumerate() {
            let lk = b.chol.l();
            for j in 0..n {
                for i in j..n {
                    l[(k * n + i, k * n + j)] = lk[(i, j)];
                }
            }
        }
        let prior_mean: Vec<f64> = (0..p).map(|r| blocks[r / n].mean).collect();

        let tl = Mat::from_fn(p, p, |r, c| {
            let own = diag[r] * l[(r, c)];
            if cross.is_some() { own + cross_at(r) * l[(partner(r), c)] } else { own }
        });
        let mut b = l.transpose() * &tl;
        for j in 0..p {
            for i in 0..j {
                let s = 0.5 * (b[(i, j)] + b[(j, i)]);
                b[(i, j)] = s;
                b[(j, i)] = s;
            }
            b[(j, j)] += 1.0;
        }
        let lb = Cholesky::factor(b.as_ref())
            .map_err(|_| Error::numerical("posterior precision is not positive definite"))?;

        let mut v = l.transpose().to_owned();
        lb.solve_lower_in_place(&mut v);

        let bvec: Vec<f64> = (0..p)
            .map(|r| {
                let t = diag[r] * prior_mean[r] + if cross.is_some() { cross_at(r) * prior_mean[partner(r)] } else { 0.0 };
                nu[r] - t
            })
            .collect();
        let vb: Vec<f64> = (0..p).map(|i| (0..p).map(|j| v[(i, j)] * bvec[j]).sum()).collect();
        let mean: Vec<f64> = (0..p).map(|j| prior_mean[j] + dot(v.col_as_slice(j), &vb)).collect();
        let var: Vec<f64> = (0..p).map(|j| dot(v.col_as_slice(j), v.col_as_slice(j))).collect();
        let c = lb.solve_upper_vec(&vb);
        let log_z_term = 0.5 * dot(&vb, &vb) - 0.5 * lb.log_det();
        if !(log_z_term.is_finite() && mean.iter().all(|m| m.is_finite())) {
            return Err(Error::numerical("posterior moments are not finite"));
        }
        Ok(Self { n, prior_mean, lb, v, mean, var, c, log_z_term })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn prior_mean(&self) -> &[f64] {
        &self.prior_mean
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        dot(self.v.col_as_slice(i), self.v.col_as_slice(j))
    }

    pub fn full_cov(&self) -> Mat<f64> {
        let s = self.v.transpose() * &self.v;
        Mat::from_fn(s.nrows(), s.ncols(), |i, j| 0.5 * (s[(i, j)] + s[(j, i)]))
    }

    pub fn marginal(&self, i: usize) -> Gauss1 {
        Gauss1::new(self.mean[i], self.var[i])
    }

    /// Bivariate marginal of entry `i` in block 0 and entry `i` in block 1.
    pub fn pair_marginal(&self, i: usize) -> Gauss2 {
        let j = self.n + i;
        Gauss2::new([self.mean[i], self.mean[j]], Sym2::new(self.var[i], self.cov(i, j), self.var[j]))
    }

    /// `log ∫ N(x | m, K) exp(νᵀx − ½ xᵀTx) dx` expressed around the prior
    /// mean: `½‖V b‖² − ½ log|B|` with `b = ν − T m`.
    pub fn log_z_term(&self) -> f64 {
        self.log_z_term
    }

    /// `μ + Vᵀ z`; distributed as the posterior when `z` is standard normal.
    pub fn sample_with(&self, z: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|j| self.mean[j] + dot(self.v.col_as_slice(j), z)).collect()
    }

    pub(crate) fn lb(&self) -> &Cholesky {
        &self.lb
    }

    pub(crate) fn c(&self) -> &[f64] {
        &self.c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{cov_matrix, KernelParams};

    fn block(x: &[f64], log_mag: f64, log_ls: f64, mean: f64) -> PriorBlock {
        let xm = Mat::from_fn(x.len(), 1, |i, _| x[i]);
        let k = cov_matrix(xm.as_ref(), &KernelParams::isotropic(log_mag, log_ls), 1e-8).unwrap();
        PriorBlock { chol: k.cholesky().unwrap(), mean }
    }

    /// Gauss-Jordan inverse, used as an independent oracle.
    fn inverse(a: &Mat<f64>) -> Mat<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        let mut inv = Mat::<f64>::identity(n, n);
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs())).unwrap();
            for k in 0..n {
                let t = m[(c, k)];
                m[(c, k)] = m[(piv, k)];
                m[(piv, k)] = t;
                let t = inv[(c, k)];
                inv[(c, k)] = inv[(piv, k)];
                inv[(piv, k)] = t;
            }
            let d = m[(c, c)];
            for k in 0..n {
                m[(c, k)] /= d;
                inv[(c, k)] /= d;
            }
            for r in 0..n {
                if r != c {
                    let f = m[(r, c)];
                    for k in 0..n {
                        m[(r, k)] -= f * m[(c, k)];
                        inv[(r, k)] -= f * inv[(c, k)];
                    }
                }
            }
        }
        inv
    }

    fn dense_prior(blocks: &[&PriorBlock]) -> (Mat<f64>, Vec<f64>) {
        let n = blocks[0].chol.dim();
        let p = n * blocks.len();
        let mut k = Mat::<f64>::zeros(p, p);
        let mut m = vec![0.0; p];
        for (b, blk) in blocks.iter().enumerate() {
            let kb = blk.chol.l() * blk.chol.l().transpose();
            for i in 0..n {
                m[b * n + i] = blk.mean;
                for j in 0..n {
                    k[(b * n + i, b * n + j)] = kb[(i, j)];
                }
            }
        }
        (k, m)
    }

    #[test]
    fn zero_sites_give_prior() {
        let b = block(&[0.0, 0.5, 1.7], 0.3, -0.2, 1.5);
        let post = GaussPosterior::compute(&[&b], &[0.0; 3], None, &[0.0; 3]).unwrap();
        let (k, _) = dense_prior(&[&b]);
        for i in 0..3 {
            assert!((post.mean()[i] - 1.5).abs() < 1e-14);
            for j in 0..3 {
                assert!((post.cov(i, j) - k[(i, j)]).abs() < 1e-12);
            }
        }
        assert!(post.log_z_term().abs() < 1e-14);
    }

    #[test]
    fn scalar_formulas() {
        let b = block(&[0.0], 0.4f64.ln(), 0.0, 0.7);
        let k = 0.4 + 1e-8;
        let (tau, nu) = (2.0, 1.1);
        let post = GaussPosterior::compute(&[&b], &[tau], None, &[nu]).unwrap();
        let s = 1.0 / (1.0 / k + tau);
        let mu = s * (0.7 / k + nu);
        assert!((post.var()[0] - s).abs() < 1e-12);
        assert!((post.mean()[0] - mu).abs() < 1e-12);
    }

    #[test]
    fn coupled_blocks_match_dense_inverse() {
        let x = [-0.4, 0.3, 1.1];
        let bf = block(&x, 0.0, 0.1, 0.0);
        let bp = block(&x, -0.5, 0.4, -0.8);
        let diag = [1.3, 0.4, -0.2, 0.9, 2.0, 0.5];
        let cross = [0.2, -0.3, 0.1];
        let nu = [0.5, -0.1, 0.3, 0.2, 0.0, -0.6];
        let post = GaussPosterior::compute(&[&bf, &bp], &diag, Some(&cross), &nu).unwrap();

        let (k, m) = dense_prior(&[&bf, &bp]);
        let mut prec = inverse(&k);
        for r in 0..6 {
            prec[(r, r)] += diag[r];
        }
        for i in 0..3 {
            prec[(i, i + 3)] += cross[i];
            prec[(i + 3, i)] += cross[i];
        }
        let sigma = inverse(&prec);
        let kinv_m: Vec<f64> = {
            let ki = inverse(&k);
            (0..6).map(|i| (0..6).map(|j| ki[(i, j)] * m[j]).sum()).collect()
        };
        let h: Vec<f64> = (0..6).map(|i| kinv_m[i] + nu[i]).collect();
        let full = post.full_cov();
        for i in 0..6 {
            let mu: f64 = (0..6).map(|j| sigma[(i, j)] * h[j]).sum();
            assert!((post.mean()[i] - mu).abs() < 1e-8, "mean {i}");
            for j in 0..6 {
                assert!((full[(i, j)] - sigma[(i, j)]).abs() < 1e-8, "cov {i},{j}");
            }
        }
        let pm = post.pair_marginal(1);
        assert!((pm.cov.a12 - sigma[(1, 4)]).abs() < 1e-8);
    }

    /// The centred evidence term equals `log ∫ N(x|m,K) exp(νᵀx − ½xᵀTx) dx`
    /// minus the `νᵀm − ½mᵀTm` offset; check against the dense Gaussian integral.
    #[test]
    fn log_z_term_matches_dense_integral() {
        let x = [0.1, 0.9];
        let bf = block(&x, 0.2, 0.0, 0.4);
        let diag = [0.8, 1.5];
        let nu = [0.3, -0.7];
        let post = GaussPosterior::compute(&[&bf], &diag, None, &nu).unwrap();
        let (k, m) = dense_prior(&[&bf]);
        let ki = inverse(&k);
        let mut prec = ki.clone();
        prec[(0, 0)] += diag[0];
        prec[(1, 1)] += diag[1];
        let sigma = inverse(&prec);
        let h: Vec<f64> = (0..2).map(|i| (0..2).map(|j| ki[(i, j)] * m[j]).sum::<f64>() + nu[i]).collect();
        let det = |a: &Mat<f64>| a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        let quad = |a: &Mat<f64>, v: &[f64]| (0..2).map(|i| (0..2).map(|j| v[i] * a[(i, j)] * v[j]).sum::<f64>()).sum::<f64>();
        // log ∫ exp(−½xᵀPx + hᵀx) dx − log ∫ exp(−½xᵀK⁻¹x + (K⁻¹m)ᵀx) dx
        let full = 0.5 * quad(&sigma, &h) + 0.5 * det(&sigma).ln() - 0.5 * quad(&k, &(0..2).map(|i| (0..2).map(|j| ki[(i, j)] * m[j]).sum()).collect::<Vec<f64>>()) - 0.5 * det(&k).ln();
        let offset = nu[0] * m[0] + nu[1] * m[1] - 0.5 * (diag[0] * m[0] * m[0] + diag[1] * m[1] * m[1]);
        assert!((post.log_z_term() - (full - offset)).abs() < 1e-10);
    }

    #[test]
    fn negative_sites_allowed_while_posterior_proper() {
        let b = block(&[0.0, 2.0], 0.0, 0.0, 0.0);
        assert!(GaussPosterior::compute(&[&b], &[-0.5, 0.3], None, &[0.0, 0.0]).is_ok());
        assert!(GaussPosterior::compute(&[&b], &[-2.0, 0.3], None, &[0.0, 0.0]).is_err());
    }
}
