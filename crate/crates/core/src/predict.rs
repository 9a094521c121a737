//! Latent and observation-level predictive distributions.
//!
//! Predictive densities of `y*` use the Gaussian with matched mean and
//! variance. [`predictive_log_density_quadrature`] evaluates the exact
//! density under the latent Gaussian for diagnostics.

use faer::{Mat, MatRef};
use log::debug;
use serde::{Deserialize, Serialize};

use crate::ep::{tilted_moments_mn, tilted_moments_n, EpModel, JointPosterior, QuadratureGrid, VGauss};
use crate::error::Result;
use crate::gaussian::{Gauss1, Gauss2, Sym2};
use crate::kernels::{cross_cov, KernelParams};
use crate::linalg::LN_2PI;

/// Mean and variance of `y*` at one test input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveResult {
    pub mean: f64,
    pub var: f64,
}

impl PredictiveResult {
    pub fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }

    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn log_density(&self, y: f64) -> f64 {
        predictive_log_density(self, y)
    }

    /// Central 95% interval `mean ± 1.96 sd`.
    pub fn interval95(&self) -> (f64, f64) {
        let h = 1.96 * self.sd();
        (self.mean - h, self.mean + h)
    }
}

/// `log N(y | mean, var)`.
pub fn predictive_log_density(res: &PredictiveResult, y: f64) -> f64 {
    let r = y - res.mean;
    -0.5 * (LN_2PI + res.var.ln()) - 0.5 * r * r / res.var
}

/// Latent predictive marginals at one test input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentPoint {
    pub v: VGauss,
    pub theta: Gauss1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentPredictive {
    pub points: Vec<LatentPoint>,
}

struct BlockProjection {
    mean: Vec<f64>,
    /// `k** − ‖L⁻¹k*‖²` per test point.
    prior_part: Vec<f64>,
    /// `L_B⁻¹ [0; L_k⁻¹ K*; 0]`, `p × m`.
    w: Mat<f64>,
}

fn project_block(
    post: &crate::ep::GaussPosterior,
    chol: &crate::linalg::Cholesky,
    prior_mean: f64,
    block: usize,
    kernel: &KernelParams,
    x: MatRef<'_, f64>,
    xs: MatRef<'_, f64>,
) -> Result<BlockProjection> {
    let n = chol.dim();
    let m = xs.nrows();
    let mut a = cross_cov(x, xs, kernel)?;
    chol.solve_lower_in_place(&mut a);
    let c = &post.c()[block * n..(block + 1) * n];
    let kss = kernel.magnitude();
    let mut mean = Vec::with_capacity(m);
    let mut prior_part = Vec::with_capacity(m);
    for j in 0..m {
        let col = a.col_as_slice(j);
        mean.push(prior_mean + col.iter().zip(c).map(|(u, v)| u * v).sum::<f64>());
        prior_part.push(kss - col.iter().map(|u| u * u).sum::<f64>());
    }
    let p = post.dim();
    let mut w = Mat::<f64>::zeros(p, m);
    for j in 0..m {
        for i in 0..n {
            w[(block * n + i, j)] = a[(i, j)];
        }
    }
    post.lb().solve_lower_in_place(&mut w);
    Ok(BlockProjection { mean, prior_part, w })
}

fn col_dot(a: &Mat<f64>, b: &Mat<f64>, j: usize) -> f64 {
    a.col_as_slice(j).iter().zip(b.col_as_slice(j)).map(|(u, v)| u * v).sum()
}

fn floor_var(v: f64, scale: f64) -> f64 {
    v.max(1e-14 * scale)
}

/// Project the EP posterior to test inputs `xs` through each process's GP
/// conditional, carrying the `(f̃*, φ*)` cross-covariance.
pub fn latent_predictive(model: &EpModel, x: MatRef<'_, f64>, post: &JointPosterior, xs: MatRef<'_, f64>) -> Result<LatentPredictive> {
    let m = xs.nrows();
    let th = project_block(&post.theta, &post.theta_prior.chol, post.theta_prior.mean, 0, &model.noise, x, xs)?;
    let theta: Vec<Gauss1> = (0..m)
        .map(|j| Gauss1::new(th.mean[j], floor_var(th.prior_part[j] + col_dot(&th.w, &th.w, j), model.noise.magnitude())))
        .collect();

    let f = project_block(&post.v, &post.v_priors[0].chol, post.v_priors[0].mean, 0, &model.signal, x, xs)?;
    let sig_scale = model.signal.magnitude();
    let points = match &model.magnitude {
        None => (0..m)
            .map(|j| LatentPoint {
                v: VGauss::Univariate(Gauss1::new(f.mean[j], floor_var(f.prior_part[j] + col_dot(&f.w, &f.w, j), sig_scale))),
                theta: theta[j],
            })
            .collect(),
        Some(mk) => {
            let g = project_block(&post.v, &post.v_priors[1].chol, post.v_priors[1].mean, 1, mk, x, xs)?;
            (0..m)
                .map(|j| {
                    let vf = floor_var(f.prior_part[j] + col_dot(&f.w, &f.w, j), sig_scale);
                    let vp = floor_var(g.prior_part[j] + col_dot(&g.w, &g.w, j), mk.magnitude());
                    let cross = shrink_cross(vf, vp, col_dot(&f.w, &g.w, j));
                    LatentPoint { v: VGauss::Bivariate(Gauss2::new([f.mean[j], g.mean[j]], Sym2::new(vf, cross, vp))), theta: theta[j] }
                })
                .collect()
        }
    };
    Ok(LatentPredictive { points })
}

/// Shrink a cross-covariance toward zero until the 2×2 matrix is positive definite.
fn shrink_cross(a11: f64, a22: f64, mut c: f64) -> f64 {
    let mut factor = 1.0;
    while a11 * a22 - c * c <= 0.0 && c != 0.0 {
        c *= 0.9;
        factor *= 0.9;
        if factor < 1e-6 {
            c = 0.0;
        }
    }
    if factor < 1.0 {
        debug!("cross-covariance shrunk by factor {factor:.3e}");
    }
    c
}

/// Expected noise variance `E[e^θ]` for Gaussian `θ`.
fn noise_moment(theta: &Gauss1) -> f64 {
    (theta.mean + 0.5 * theta.var).exp()
}

/// Moments of `y* = f* + ε`, `ε ~ N(0, e^{θ*})`.
pub fn predictive_y_n(f: &Gauss1, theta: &Gauss1) -> PredictiveResult {
    PredictiveResult::new(f.mean, f.var + noise_moment(theta))
}

/// Moments of `y* = e^{φ*/2} f̃* + ε` with `(f̃*, φ*)` jointly Gaussian and
/// `ε ~ N(0, e^{θ*})`.
pub fn predictive_y_mn(v: &Gauss2, theta: &Gauss1) -> PredictiveResult {
    let [mf, mp] = v.mean;
    let Sym2 { a11: sff, a12: sfp, a22: spp } = v.cov;
    let mean = (0.5 * mp + spp / 8.0).exp() * (mf + 0.5 * sfp);
    let second = (mp + 0.5 * spp).exp() * ((mf + sfp).powi(2) + sff);
    PredictiveResult::new(mean, second - mean * mean + noise_moment(theta))
}

pub fn predictive_y(lat: &LatentPoint) -> PredictiveResult {
    match &lat.v {
        VGauss::Univariate(f) => predictive_y_n(f, &lat.theta),
        VGauss::Bivariate(v) => predictive_y_mn(v, &lat.theta),
    }
}

/// Exact `log p(y* | latent Gaussian)` by quadrature over the log-variances.
pub fn predictive_log_density_quadrature(lat: &LatentPoint, y: f64, grid: &QuadratureGrid) -> Result<f64> {
    let tm = match &lat.v {
        VGauss::Univariate(f) => tilted_moments_n(y, *f, lat.theta, grid)?,
        VGauss::Bivariate(v) => tilted_moments_mn(y, *v, lat.theta, grid)?,
    };
    Ok(tm.log_z_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use proptest::prelude::*;

    #[test]
    fn log_density_examples() {
        let r = PredictiveResult::new(0.3, 1.0 / (2.0 * std::f64::consts::PI));
        assert!(r.log_density(0.3).abs() < 1e-15);
        let r = PredictiveResult::new(1.0, 4.0);
        let want = -0.5 - 0.5 * (2.0 * std::f64::consts::PI * 4.0).ln();
        assert!((r.log_density(3.0) - want).abs() < 1e-14);
    }

    #[test]
    fn density_integrates_to_one() {
        let r = PredictiveResult::new(-0.7, 2.3);
        let grid = QuadratureGrid::simpson(2001, 10.0).unwrap();
        let s = r.sd();
        let total: f64 = grid.nodes().iter().zip(grid.weights()).map(|(z, w)| w * s * r.log_density(r.mean + s * z).exp()).sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn noise_only_examples() {
        let s2: f64 = 0.3;
        let r = predictive_y_n(&Gauss1::new(1.0, 0.5), &Gauss1::new(s2.ln(), 0.0));
        assert!((r.var - 0.8).abs() < 1e-14);
        let r = predictive_y_n(&Gauss1::new(0.0, 0.0), &Gauss1::new(0.0, 2.0));
        assert!((r.var - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn signal_variance_reduces_exactly() {
        let th = Gauss1::new(-1.2, 0.4);
        let a = predictive_y_mn(&Gauss2::new([0.7, 0.0], Sym2::new(0.9, 0.0, 0.0)), &th);
        let b = predictive_y_n(&Gauss1::new(0.7, 0.9), &th);
        assert!((a.mean - b.mean).abs() < 1e-12 && (a.var - b.var).abs() < 1e-12);
    }

    #[test]
    fn lognormal_mean_example() {
        let r = predictive_y_mn(&Gauss2::new([1.0, 0.0], Sym2::new(0.0, 0.0, 2.0)), &Gauss1::new(0.0, 0.0));
        assert!((r.mean - 0.25f64.exp()).abs() < 1e-12);
        assert!((r.mean - 1.284025).abs() < 1e-6);
    }

    /// Sample `y*` directly and compare the first two moments.
    #[test]
    fn signal_variance_moments_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let mf: f64 = rng.random_range(-1.5..1.5);
            let mp: f64 = rng.random_range(-1.0..1.0);
            let sff: f64 = rng.random_range(0.1..1.5);
            let spp: f64 = rng.random_range(0.05..0.8);
            let rho: f64 = rng.random_range(-0.7..0.7);
            let sfp = rho * (sff * spp).sqrt();
            let th = Gauss1::new(rng.random_range(-3.0..0.0), rng.random_range(0.01..0.8));
            let r = predictive_y_mn(&Gauss2::new([mf, mp], Sym2::new(sff, sfp, spp)), &th);

            let n = 2_000_000;
            let l21 = sfp / sff.sqrt();
            let l22 = (spp - l21 * l21).sqrt();
            let ys: Vec<f64> = (0..n)
                .map(|_| {
                    let z: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                    let f = mf + sff.sqrt() * z[0];
                    let p = mp + l21 * z[0] + l22 * z[1];
                    let t = th.mean + th.sd() * z[2];
                    (p / 2.0).exp() * f + (t / 2.0).exp() * z[3]
                })
                .collect();
            let nf = n as f64;
            let mean = ys.iter().sum::<f64>() / nf;
            let d2: Vec<f64> = ys.iter().map(|y| (y - mean).powi(2)).collect();
            let var = d2.iter().sum::<f64>() / (nf - 1.0);
            let se_mean = (var / nf).sqrt();
            let se_var = (d2.iter().map(|d| (d - var).powi(2)).sum::<f64>() / (nf - 1.0) / nf).sqrt();
            assert!((r.mean - mean).abs() < 3.0 * se_mean, "mean {} vs {mean} ± {se_mean}", r.mean);
            assert!((r.var - var).abs() < 3.0 * se_var, "var {} vs {var} ± {se_var}", r.var);
        }
    }

    #[test]
    fn cross_shrinks_to_pd() {
        let c = shrink_cross(1.0, 1.0, 1.0000001);
        assert!(1.0 - c * c > 0.0);
        assert_eq!(shrink_cross(1.0, 2.0, 0.5), 0.5);
    }

    proptest! {
        #[test]
        fn point_mass_magnitude_reduces_to_noise_only(mf in -3.0..3.0f64, vf in 0.0..3.0f64, mt in -4.0..1.0f64, vt in 0.0..2.0f64) {
            let th = Gauss1::new(mt, vt);
            let a = predictive_y_mn(&Gauss2::new([mf, 0.0], Sym2::new(vf, 0.0, 0.0)), &th);
            let b = predictive_y_n(&Gauss1::new(mf, vf), &th);
            prop_assert!((a.mean - b.mean).abs() < 1e-12 * (1.0 + b.mean.abs()));
            prop_assert!((a.var - b.var).abs() < 1e-12 * (1.0 + b.var));
        }

        #[test]
        fn variance_exceeds_noise_floor(mf in -3.0..3.0f64, vf in 0.0..3.0f64, mp in -2.0..2.0f64, vp in 0.0..2.0f64,
                                        r in -0.9..0.9f64, mt in -4.0..1.0f64, vt in 0.0..2.0f64) {
            let cov = Sym2::new(vf, r * (vf * vp).sqrt(), vp);
            let p = predictive_y_mn(&Gauss2::new([mf, mp], cov), &Gauss1::new(mt, vt));
            prop_assert!(p.var >= (mt + vt / 2.0).exp() * (1.0 - 1e-12));
        }
    }
}
