//! Moments of the tilted distributions `cavity × likelihood` for one observation.
//!
//! Integrals over the signal coordinate are closed form: conditional on the
//! log-variances the likelihood is Gaussian in `f` (or `f̃`). The remaining one
//! or two log-variance coordinates are integrated with Simpson's rule on a
//! cavity-centred grid.

use crate::error::{Error, Result};
use crate::gaussian::{Gauss1, Gauss2, Sym2};
use crate::linalg::{log_sum_exp, LN_2PI};

use super::quadrature::QuadratureGrid;

/// Log-variance values are clamped to this range before exponentiation.
pub const LOG_VARIANCE_CLAMP: f64 = 30.0;
/// Cavity correlations closer to ±1 than this are rejected.
const MAX_ABS_CORRELATION: f64 = 1.0 - 1e-10;

#[inline]
fn clamped_exp(v: f64) -> f64 {
    v.clamp(-LOG_VARIANCE_CLAMP, LOG_VARIANCE_CLAMP).exp()
}

/// Gaussian over the signal block of one observation: `f`, or `(f̃, φ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VGauss {
    Univariate(Gauss1),
    Bivariate(Gauss2),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TiltedMoments {
    pub log_z_hat: f64,
    pub v: VGauss,
    pub theta: Gauss1,
}

fn normalize(log_w: &mut [f64]) -> Result<f64> {
    let log_z = log_sum_exp(log_w);
    if !log_z.is_finite() {
        return Err(Error::Quadrature(format!("tilted normalizer underflowed (log Z = {log_z})")));
    }
    for w in log_w.iter_mut() {
        *w = (*w - log_z).exp();
    }
    Ok(log_z)
}

fn checked(g: Gauss1, what: &str) -> Result<Gauss1> {
    if g.mean.is_finite() && g.var.is_finite() && g.var > 0.0 {
        Ok(g)
    } else {
        Err(Error::Quadrature(format!("degenerate tilted moments for {what}: {g:?}")))
    }
}

/// Tilted moments for `N(y | f, e^θ)` under independent Gaussian cavities on
/// `f` and `θ`.
pub fn tilted_moments_n(y: f64, cav_f: Gauss1, cav_theta: Gauss1, grid: &QuadratureGrid) -> Result<TiltedMoments> {
    let z = grid.nodes();
    let lm = grid.log_mass();
    let sd_theta = cav_theta.sd();
    let r = y - cav_f.mean;

    let mut lw = vec![0.0; z.len()];
    let mut mean = vec![0.0; z.len()];
    let mut var = vec![0.0; z.len()];
    let mut theta = vec![0.0; z.len()];
    for k in 0..z.len() {
        let t = cav_theta.mean + sd_theta * z[k];
        let noise = clamped_exp(t);
        let s = cav_f.var + noise;
        lw[k] = lm[k] - 0.5 * (LN_2PI + s.ln()) - 0.5 * r * r / s;
        let gain = cav_f.var / s;
        mean[k] = cav_f.mean + gain * r;
        var[k] = cav_f.var * noise / s;
        theta[k] = t;
    }
    let log_z_hat = normalize(&mut lw)?;
    let w = lw;

    let ef: f64 = w.iter().zip(&mean).map(|(w, m)| w * m).sum();
    let vf: f64 = (0..w.len()).map(|k| w[k] * (var[k] + (mean[k] - ef).powi(2))).sum();
    let et: f64 = w.iter().zip(&theta).map(|(w, t)| w * t).sum();
    let vt: f64 = w.iter().zip(&theta).map(|(w, t)| w * (t - et).powi(2)).sum();

    Ok(TiltedMoments {
        log_z_hat,
        v: VGauss::Univariate(checked(Gauss1::new(ef, vf), "f")?),
        theta: checked(Gauss1::new(et, vt), "theta")?,
    })
}

/// Tilted moments for `N(y | e^{φ/2} f̃, e^θ)` under a bivariate cavity on
/// `(f̃, φ)` and an independent cavity on `θ`.
pub fn tilted_moments_mn(y: f64, cav_v: Gauss2, cav_theta: Gauss1, grid: &QuadratureGrid) -> Result<TiltedMoments> {
    let rho = cav_v.correlation();
    if !(rho.abs() <= MAX_ABS_CORRELATION) {
        return Err(Error::Cavity(format!("cavity correlation {rho} is degenerate")));
    }
    let z = grid.nodes();
    let lm = grid.log_mass();
    let m = z.len();
    let [mu_f, mu_phi] = cav_v.mean;
    let Sym2 { a11: s_ff, a12: s_fp, a22: s_pp } = cav_v.cov;
    let sd_phi = s_pp.sqrt();
    let sd_theta = cav_theta.sd();
    // f̃ | φ ~ N(mu_f + beta (φ − mu_phi), s2)
    let beta = s_fp / s_pp;
    let s2 = s_ff - s_fp * beta;

    let noise: Vec<f64> = z.iter().map(|zl| clamped_exp(cav_theta.mean + sd_theta * zl)).collect();
    let thetas: Vec<f64> = z.iter().map(|zl| cav_theta.mean + sd_theta * zl).collect();

    let mut lw = vec![0.0; m * m];
    let mut cmean = vec![0.0; m * m];
    let mut cvar = vec![0.0; m * m];
    for k in 0..m {
        let phi = mu_phi + sd_phi * z[k];
        let scale2 = clamped_exp(phi);
        let scale = scale2.sqrt();
        let mk = mu_f + beta * (phi - mu_phi);
        let r = y - scale * mk;
        for l in 0..m {
            let idx = k * m + l;
            let s = noise[l] + scale2 * s2;
            lw[idx] = lm[k] + lm[l] - 0.5 * (LN_2PI + s.ln()) - 0.5 * r * r / s;
            let gain = scale * s2 / s;
            cmean[idx] = mk + gain * r;
            cvar[idx] = s2 * noise[l] / s;
        }
    }
    let log_z_hat = normalize(&mut lw)?;
    let w = lw;

    let phi_at = |k: usize| mu_phi + sd_phi * z[k];
    let (mut ef, mut ep, mut et) = (0.0, 0.0, 0.0);
    for k in 0..m {
        for l in 0..m {
            let wi = w[k * m + l];
            ef += wi * cmean[k * m + l];
            ep += wi * phi_at(k);
            et += wi * thetas[l];
        }
    }
    let (mut vf, mut vp, mut cfp, mut vt) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..m {
        let dp = phi_at(k) - ep;
        for l in 0..m {
            let idx = k * m + l;
            let wi = w[idx];
            let df = cmean[idx] - ef;
            vf += wi * (cvar[idx] + df * df);
            vp += wi * dp * dp;
            cfp += wi * df * dp;
            vt += wi * (thetas[l] - et).powi(2);
        }
    }
    let cov = Sym2::new(vf, cfp, vp);
    if !(cov.is_pd() && ef.is_finite() && ep.is_finite()) {
        return Err(Error::Quadrature(format!("degenerate tilted covariance {cov:?}")));
    }
    Ok(TiltedMoments {
        log_z_hat,
        v: VGauss::Bivariate(Gauss2::new([ef, ep], cov)),
        theta: checked(Gauss1::new(et, vt), "theta")?,
    })
}
