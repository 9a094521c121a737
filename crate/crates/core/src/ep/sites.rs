use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{Gauss1, Gauss2, Nat1, Nat2};

/// Site factors on the signal block: one per observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum VSites {
    /// Sites on `f` (noise-only model).
    Univariate(Vec<Nat1>),
    /// Coupled sites on `(f̃ᵢ, φᵢ)`.
    Bivariate(Vec<Nat2>),
}

impl VSites {
    pub fn len(&self) -> usize {
        match self {
            VSites::Univariate(s) => s.len(),
            VSites::Bivariate(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gaussian site approximations in natural parameters, plus the log
/// normalizers `log Ẑᵢ` of the tilted distributions they were matched to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteSet {
    pub theta: Vec<Nat1>,
    pub v: VSites,
    pub log_z_hat: Vec<f64>,
}

impl SiteSet {
    pub fn zeros(n: usize, bivariate: bool) -> Self {
        let v = if bivariate { VSites::Bivariate(vec![Nat2::ZERO; n]) } else { VSites::Univariate(vec![Nat1::ZERO; n]) };
        Self { theta: vec![Nat1::ZERO; n], v, log_z_hat: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn is_bivariate(&self) -> bool {
        matches!(self.v, VSites::Bivariate(_))
    }

    /// Largest change between corresponding natural parameters, each scaled by
    /// `max(1, |old|)`.
    pub fn relative_drift(&self, old: &SiteSet) -> f64 {
        let ones = vec![1.0; self.len()];
        self.relative_drift_scaled(old, &ones, &ones)
    }

    /// As [`SiteSet::relative_drift`], with the changes at site `i` scaled by
    /// `max(1, |old|, scale)` where `scale` is `theta_scale[i]` for `θ` sites
    /// and `v_scale[i]` for signal sites. Passing the marginal precisions makes
    /// the measure insensitive to rounding in sites attached to very
    /// concentrated marginals.
    pub fn relative_drift_scaled(&self, old: &SiteSet, theta_scale: &[f64], v_scale: &[f64]) -> f64 {
        fn rel(a: f64, b: f64, s: f64) -> f64 {
            (a - b).abs() / b.abs().max(1.0).max(s)
        }
        let mut d = 0.0f64;
        for (i, (a, b)) in self.theta.iter().zip(&old.theta).enumerate() {
            let s = theta_scale[i];
            d = d.max(rel(a.nu, b.nu, s)).max(rel(a.tau, b.tau, s));
        }
        match (&self.v, &old.v) {
            (VSites::Univariate(a), VSites::Univariate(b)) => {
                for (i, (a, b)) in a.iter().zip(b).enumerate() {
                    let s = v_scale[i];
                    d = d.max(rel(a.nu, b.nu, s)).max(rel(a.tau, b.tau, s));
                }
            }
            (VSites::Bivariate(a), VSites::Bivariate(b)) => {
                for (i, (a, b)) in a.iter().zip(b).enumerate() {
                    let s = v_scale[i];
                    d = d
                        .max(rel(a.nu[0], b.nu[0], s))
                        .max(rel(a.nu[1], b.nu[1], s))
                        .max(rel(a.prec.a11, b.prec.a11, s))
                        .max(rel(a.prec.a12, b.prec.a12, s))
                        .max(rel(a.prec.a22, b.prec.a22, s));
                }
            }
            _ => return f64::INFINITY,
        }
        d
    }

    /// Reorder sites so that site `i` of the result is site `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let v = match &self.v {
            VSites::Univariate(s) => VSites::Univariate(perm.iter().map(|&i| s[i]).collect()),
            VSites::Bivariate(s) => VSites::Bivariate(perm.iter().map(|&i| s[i]).collect()),
        };
        Self {
            theta: perm.iter().map(|&i| self.theta[i]).collect(),
            v,
            log_z_hat: perm.iter().map(|&i| self.log_z_hat[i]).collect(),
        }
    }
}

/// Cavity `marginal / site` of a univariate marginal.
pub fn cavity_univariate(marginal: &Gauss1, site: &Nat1) -> Result<Gauss1> {
    marginal
        .to_natural()
        .sub(site)
        .to_moments()
        .ok_or_else(|| Error::Cavity(format!("precision {} is not positive", 1.0 / marginal.var - site.tau)))
}

/// Cavity `marginal / site` of a bivariate marginal.
pub fn cavity_bivariate(marginal: &Gauss2, site: &Nat2) -> Result<Gauss2> {
    let nat = marginal.to_natural().sub(site);
    nat.to_moments().ok_or_else(|| Error::Cavity(format!("precision {:?} is not positive definite", nat.prec)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Sym2;
    use proptest::prelude::*;

    #[test]
    fn zero_site_leaves_marginal() {
        let m = Gauss1::new(0.3, 0.7);
        let c = cavity_univariate(&m, &Nat1::ZERO).unwrap();
        assert!((c.mean - 0.3).abs() < 1e-15 && (c.var - 0.7).abs() < 1e-15);
    }

    #[test]
    fn univariate_precision_arithmetic() {
        let c = cavity_univariate(&Gauss1::new(0.0, 0.5), &Nat1 { nu: 0.0, tau: 1.0 }).unwrap();
        assert!((c.var - 1.0).abs() < 1e-15);
        assert_eq!(c.mean, 0.0);
        assert!(matches!(cavity_univariate(&Gauss1::new(0.0, 0.5), &Nat1 { nu: 0.0, tau: 3.0 }), Err(Error::Cavity(_))));
    }

    /// Division done in moment form: the cavity is the Gaussian whose product
    /// with the site (in moment form) gives the marginal.
    #[test]
    fn bivariate_matches_moment_division() {
        let marg = Gauss2::new([0.4, -0.3], Sym2::new(0.5, 0.1, 0.4));
        let site_m = Gauss2::new([1.0, 0.5], Sym2::new(2.0, -0.4, 3.0));
        let site = site_m.to_natural();
        let cav = cavity_bivariate(&marg, &site).unwrap();

        // Σc = (Σm⁻¹ − Σs⁻¹)⁻¹ = Σs (Σs − Σm)⁻¹ Σm, μc = Σc (Σm⁻¹μm − Σs⁻¹μs)
        let m = |a: [[f64; 2]; 2], b: [[f64; 2]; 2]| {
            let mut r = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
                }
            }
            r
        };
        let inv = |a: [[f64; 2]; 2]| {
            let d = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            [[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]]
        };
        let sm = [[0.5, 0.1], [0.1, 0.4]];
        let ss = [[2.0, -0.4], [-0.4, 3.0]];
        let diff = [[ss[0][0] - sm[0][0], ss[0][1] - sm[0][1]], [ss[1][0] - sm[1][0], ss[1][1] - sm[1][1]]];
        let sc = m(m(ss, inv(diff)), sm);
        let (pm, ps) = (inv(sm), inv(ss));
        let h = [
            pm[0][0] * 0.4 + pm[0][1] * -0.3 - (ps[0][0] * 1.0 + ps[0][1] * 0.5),
            pm[1][0] * 0.4 + pm[1][1] * -0.3 - (ps[1][0] * 1.0 + ps[1][1] * 0.5),
        ];
        let mc = [sc[0][0] * h[0] + sc[0][1] * h[1], sc[1][0] * h[0] + sc[1][1] * h[1]];

        assert!((cav.cov.a11 - sc[0][0]).abs() < 1e-12);
        assert!((cav.cov.a12 - sc[0][1]).abs() < 1e-12);
        assert!((cav.cov.a22 - sc[1][1]).abs() < 1e-12);
        assert!((cav.mean[0] - mc[0]).abs() < 1e-12);
        assert!((cav.mean[1] - mc[1]).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_identity() {
        let marg = Gauss2::new([0.4, -0.3], Sym2::new(0.5, 0.1, 0.4));
        let site = Nat2 { nu: [0.2, -0.1], prec: Sym2::new(0.7, -0.2, 0.3) };
        let cav = cavity_bivariate(&marg, &site).unwrap();
        let back = cav.to_natural().add(&site);
        let want = marg.to_natural();
        assert!(back.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn drift_is_relative() {
        let mut a = SiteSet::zeros(2, false);
        let b = a.clone();
        a.theta[1].tau = 1e-7;
        assert!((a.relative_drift(&b) - 1e-7).abs() < 1e-20);
        let mut c = a.clone();
        c.theta[1].tau = 1e3 * (1.0 + 1e-7);
        a.theta[1].tau = 1e3;
        assert!(c.relative_drift(&a) < 1.01e-7);
    }

    proptest! {
        #[test]
        fn cavity_times_site_is_marginal(m0 in -3.0..3.0f64, m1 in -3.0..3.0f64, v0 in 0.05..3.0f64, v1 in 0.05..3.0f64,
                                         r in -0.9..0.9f64, frac in 0.0..0.9f64, s0 in -1.0..1.0f64, s1 in -1.0..1.0f64) {
            let c = r * (v0 * v1).sqrt();
            let marg = Gauss2::new([m0, m1], Sym2::new(v0, c, v1));
            let mp = marg.to_natural().prec;
            let site = Nat2 { nu: [s0, s1], prec: Sym2::new(frac * mp.a11, frac * mp.a12, frac * mp.a22) };
            let cav = cavity_bivariate(&marg, &site).unwrap();
            let back = cav.to_natural().add(&site);
            prop_assert!(back.max_abs_diff(&marg.to_natural()) < 1e-12 * (1.0 + mp.a11.max(mp.a22)));

            let m1d = Gauss1::new(m0, v0);
            let site1 = Nat1 { nu: s0, tau: frac / v0 };
            let cav1 = cavity_univariate(&m1d, &site1).unwrap();
            prop_assert!(cav1.to_natural().add(&site1).max_abs_diff(&m1d.to_natural()) < 1e-12 * (1.0 + 1.0 / v0));
        }
    }
}
