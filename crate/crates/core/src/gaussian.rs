//! Univariate and bivariate Gaussians in moment and natural parameterization.

use serde::{Deserialize, Serialize};

use crate::linalg::LN_2PI;

/// Univariate Gaussian, moment form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gauss1 {
    pub mean: f64,
    pub var: f64,
}

/// Univariate Gaussian factor in natural form: precision-mean `nu` and precision `tau`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Nat1 {
    pub nu: f64,
    pub tau: f64,
}

/// Symmetric 2×2 matrix stored as `(a11, a12, a22)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

/// Bivariate Gaussian, moment form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gauss2 {
    pub mean: [f64; 2],
    pub cov: Sym2,
}

/// Bivariate Gaussian factor in natural form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Nat2 {
    pub nu: [f64; 2],
    pub prec: Sym2,
}

impl Gauss1 {
    pub fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }

    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn to_natural(&self) -> Nat1 {
        Nat1 { nu: self.mean / self.var, tau: 1.0 / self.var }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let r = x - self.mean;
        -0.5 * (LN_2PI + self.var.ln()) - 0.5 * r * r / self.var
    }
}

impl Nat1 {
    pub const ZERO: Nat1 = Nat1 { nu: 0.0, tau: 0.0 };

    pub fn is_proper(&self) -> bool {
        self.tau > 0.0 && self.tau.is_finite() && self.nu.is_finite()
    }

    /// Moment form; `None` unless the precision is positive.
    pub fn to_moments(&self) -> Option<Gauss1> {
        self.is_proper().then(|| Gauss1 { mean: self.nu / self.tau, var: 1.0 / self.tau })
    }

    pub fn add(&self, o: &Nat1) -> Nat1 {
        Nat1 { nu: self.nu + o.nu, tau: self.tau + o.tau }
    }

    pub fn sub(&self, o: &Nat1) -> Nat1 {
        Nat1 { nu: self.nu - o.nu, tau: self.tau - o.tau }
    }

    /// `self + step·(target − self)`.
    pub fn damp_towards(&self, target: &Nat1, step: f64) -> Nat1 {
        Nat1 { nu: self.nu + step * (target.nu - self.nu), tau: self.tau + step * (target.tau - self.tau) }
    }

    pub fn max_abs_diff(&self, o: &Nat1) -> f64 {
        (self.nu - o.nu).abs().max((self.tau - o.tau).abs())
    }
}

impl Sym2 {
    pub fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Self { a11, a12, a22 }
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    pub fn is_pd(&self) -> bool {
        self.a11 > 0.0 && self.a22 > 0.0 && self.det() > 0.0 && self.det().is_finite()
    }

    pub fn inverse(&self) -> Sym2 {
        let d = self.det();
        Sym2 { a11: self.a22 / d, a12: -self.a12 / d, a22: self.a11 / d }
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a11 * v[0] + self.a12 * v[1], self.a12 * v[0] + self.a22 * v[1]]
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2 { a11: self.a11 + o.a11, a12: self.a12 + o.a12, a22: self.a22 + o.a22 }
    }

    pub fn sub(&self, o: &Sym2) -> Sym2 {
        Sym2 { a11: self.a11 - o.a11, a12: self.a12 - o.a12, a22: self.a22 - o.a22 }
    }

    fn lerp(&self, o: &Sym2, t: f64) -> Sym2 {
        Sym2 {
            a11: self.a11 + t * (o.a11 - self.a11),
            a12: self.a12 + t * (o.a12 - self.a12),
            a22: self.a22 + t * (o.a22 - self.a22),
        }
    }

    fn max_abs_diff(&self, o: &Sym2) -> f64 {
        (self.a11 - o.a11).abs().max((self.a12 - o.a12).abs()).max((self.a22 - o.a22).abs())
    }
}

impl Gauss2 {
    pub fn new(mean: [f64; 2], cov: Sym2) -> Self {
        Self { mean, cov }
    }

    pub fn to_natural(&self) -> Nat2 {
        let prec = self.cov.inverse();
        Nat2 { nu: prec.mul_vec(self.mean), prec }
    }

    pub fn correlation(&self) -> f64 {
        self.cov.a12 / (self.cov.a11 * self.cov.a22).sqrt()
    }

    pub fn marginal(&self, k: usize) -> Gauss1 {
        match k {
            0 => Gauss1::new(self.mean[0], self.cov.a11),
            _ => Gauss1::new(self.mean[1], self.cov.a22),
        }
    }
}

impl Nat2 {
    pub const ZERO: Nat2 = Nat2 { nu: [0.0, 0.0], prec: Sym2 { a11: 0.0, a12: 0.0, a22: 0.0 } };

    pub fn is_proper(&self) -> bool {
        self.prec.is_pd() && self.nu.iter().all(|v| v.is_finite())
    }

    pub fn to_moments(&self) -> Option<Gauss2> {
        if !self.is_proper() {
            return None;
        }
        let cov = self.prec.inverse();
        Some(Gauss2 { mean: cov.mul_vec(self.nu), cov })
    }

    pub fn add(&self, o: &Nat2) -> Nat2 {
        Nat2 { nu: [self.nu[0] + o.nu[0], self.nu[1] + o.nu[1]], prec: self.prec.add(&o.prec) }
    }

    pub fn sub(&self, o: &Nat2) -> Nat2 {
        Nat2 { nu: [self.nu[0] - o.nu[0], self.nu[1] - o.nu[1]], prec: self.prec.sub(&o.prec) }
    }

    pub fn damp_towards(&self, target: &Nat2, step: f64) -> Nat2 {
        Nat2 {
            nu: [self.nu[0] + step * (target.nu[0] - self.nu[0]), self.nu[1] + step * (target.nu[1] - self.nu[1])],
            prec: self.prec.lerp(&target.prec, step),
        }
    }

    pub fn max_abs_diff(&self, o: &Nat2) -> f64 {
        (self.nu[0] - o.nu[0]).abs().max((self.nu[1] - o.nu[1]).abs()).max(self.prec.max_abs_diff(&o.prec))
    }
}

/// `log Z(m, V) = ½ mᵀV⁻¹m + ½ log|V|`, the log normalizer of an exp-quadratic
/// form without the `(d/2) log 2π` constant (it cancels in every difference we take).
pub fn log_normalizer1(g: &Gauss1) -> f64 {
    0.5 * g.mean * g.mean / g.var + 0.5 * g.var.ln()
}

pub fn log_normalizer2(g: &Gauss2) -> f64 {
    let p = g.cov.inverse();
    let m = g.mean;
    0.5 * (m[0] * (p.a11 * m[0] + p.a12 * m[1]) + m[1] * (p.a12 * m[0] + p.a22 * m[1])) + 0.5 * g.cov.det().ln()
}
