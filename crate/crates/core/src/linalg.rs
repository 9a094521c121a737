//! Dense linear-algebra helpers on top of `faer`.

use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower Cholesky factor `L` with `A + jitter·I = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Mat<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factor `a` as given; fails if it is not numerically positive definite.
    pub fn factor(a: MatRef<'_, f64>) -> Result<Self> {
        Self::try_factor(a, 0.0)
            .ok_or_else(|| Error::numerical(format!("{}x{} matrix is not positive definite", a.nrows(), a.ncols())))
    }

    /// Factor `a`, adding `start` to the diagonal and escalating it ×10 until it
    /// exceeds `max` on failure.
    pub fn factor_escalating(a: MatRef<'_, f64>, start: f64, max: f64) -> Result<Self> {
        let mut extra = 0.0;
        loop {
            if let Some(c) = Self::try_factor(a, extra) {
                return Ok(c);
            }
            extra = if extra == 0.0 { start.max(f64::MIN_POSITIVE) } else { extra * 10.0 };
            if extra > max {
                return Err(Error::numerical(format!(
                    "Cholesky failed on {}x{} matrix even with diagonal jitter {:.3e}",
                    a.nrows(),
                    a.ncols(),
                    max
                )));
            }
        }
    }

    fn try_factor(a: MatRef<'_, f64>, extra: f64) -> Option<Self> {
        let n = a.nrows();
        let mut m = a.to_owned();
        if extra != 0.0 {
            for i in 0..n {
                m[(i, i)] += extra;
            }
        }
        let llt = m.llt(Side::Lower).ok()?;
        let l = llt.L().to_owned();
        if (0..n).any(|i| !(l[(i, i)].is_finite() && l[(i, i)] > 0.0)) {
            return None;
        }
        Some(Cholesky { l, jitter: extra })
    }

    /// Extra diagonal jitter that was needed beyond the input matrix.
    pub fn extra_jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> MatRef<'_, f64> {
        self.l.as_ref()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Overwrite `rhs` with `L⁻¹ rhs`.
    pub fn solve_lower_in_place(&self, rhs: &mut Mat<f64>) {
        self.l.as_ref().solve_lower_triangular_in_place(rhs.as_mut());
    }

    /// Overwrite `rhs` with `L⁻ᵀ rhs`.
    pub fn solve_upper_in_place(&self, rhs: &mut Mat<f64>) {
        self.l.as_ref().transpose().solve_upper_triangular_in_place(rhs.as_mut());
    }

    /// `L⁻¹ b`.
    pub fn solve_lower_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for j in 0..n {
            let col = self.l.col_as_slice(j);
            x[j] /= col[j];
            let xj = x[j];
            for i in j + 1..n {
                x[i] -= col[i] * xj;
            }
        }
        x
    }

    /// `L⁻ᵀ b`.
    pub fn solve_upper_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for j in (0..n).rev() {
            let col = self.l.col_as_slice(j);
            let s: f64 = (j + 1..n).map(|i| col[i] * x[i]).sum();
            x[j] = (x[j] - s) / col[j];
        }
        x
    }

    /// `(L Lᵀ)⁻¹ b`.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper_vec(&self.solve_lower_vec(b))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable `log Σ exp(xᵢ)`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
