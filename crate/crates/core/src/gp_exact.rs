//! Exact GP regression with a constant noise variance (the baseline model).

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::gaussian::Gauss1;
use crate::kernels::{cov_matrix, cross_cov, lengthscale_derivative, KernelParams};
use crate::linalg::{dot, Cholesky, LN_2PI};
use crate::predict::PredictiveResult;

/// A fitted homoscedastic GP: kernel, noise level and the cached factorization
/// of `K + σ²I`.
#[derive(Clone, Debug)]
pub struct ExactGp {
    x: Mat<f64>,
    y: Vec<f64>,
    kernel: KernelParams,
    log_noise_variance: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
}

impl ExactGp {
    pub fn fit(x: MatRef<'_, f64>, y: &[f64], kernel: KernelParams, log_noise_variance: f64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::input(format!("{} input rows but {} targets", x.nrows(), y.len())));
        }
        if x.nrows() == 0 {
            return Err(Error::input("no training data"));
        }
        let mut k = cov_matrix(x, &kernel, kernel.default_jitter())?;
        let noise = log_noise_variance.exp();
        for i in 0..k.dim() {
            k.matrix[(i, i)] += noise;
        }
        let chol = k.cholesky()?;
        let r: Vec<f64> = y.iter().map(|v| v - kernel.constant_mean).collect();
        let alpha = chol.solve_vec(&r);
        Ok(Self { x: x.to_owned(), y: y.to_vec(), kernel, log_noise_variance, chol, alpha })
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn log_noise_variance(&self) -> f64 {
        self.log_noise_variance
    }

    pub fn inputs(&self) -> MatRef<'_, f64> {
        self.x.as_ref()
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    /// `−½ rᵀ(K+σ²I)⁻¹r − ½ log|K+σ²I| − (n/2) log 2π`.
    pub fn log_marginal(&self) -> f64 {
        let n = self.y.len() as f64;
        let quad: f64 = self.y.iter().zip(&self.alpha).map(|(y, a)| (y - self.kernel.constant_mean) * a).sum();
        -0.5 * quad - 0.5 * self.chol.log_det() - 0.5 * n * LN_2PI
    }

    /// Posterior of the latent function at `xs`.
    pub fn predict_latent(&self, xs: MatRef<'_, f64>) -> Result<Vec<Gauss1>> {
        let ks = cross_cov(self.x.as_ref(), xs, &self.kernel)?;
        let mut v = ks.clone();
        self.chol.solve_lower_in_place(&mut v);
        let mag = self.kernel.magnitude();
        Ok((0..xs.nrows())
            .map(|j| {
                let col = ks.col_as_slice(j);
                let mean = self.kernel.constant_mean + dot(col, &self.alpha);
                let vj = v.col_as_slice(j);
                let var = (mag - dot(vj, vj)).max(0.0);
                Gauss1::new(mean, var)
            })
            .collect())
    }

    /// Predictive distribution of noisy observations at `xs`.
    pub fn predict(&self, xs: MatRef<'_, f64>) -> Result<Vec<PredictiveResult>> {
        let noise = self.log_noise_variance.exp();
        Ok(self
            .predict_latent(xs)?
            .into_iter()
            .map(|g| PredictiveResult::new(g.mean, g.var + noise))
            .collect())
    }

    /// Gradient of [`Self::log_marginal`] with respect to
    /// `(log σ_f², log ℓ₁, …, log σ²)`.
    pub fn lml_gradient(&self) -> Result<Vec<f64>> {
        let n = self.y.len();
        let mut kinv = Mat::<f64>::identity(n, n);
        self.chol.solve_lower_in_place(&mut kinv);
        let kinv = kinv.transpose() * &kinv;
        // W = ααᵀ − K⁻¹
        let w = Mat::from_fn(n, n, |i, j| self.alpha[i] * self.alpha[j] - kinv[(i, j)]);
        let half_trace = |d: &Mat<f64>| -> f64 {
            let mut s = 0.0;
            for j in 0..n {
                let (wc, dc) = (w.col_as_slice(j), d.col_as_slice(j));
                s += dot(wc, dc);
            }
            0.5 * s
        };

        let kf = cov_matrix(self.x.as_ref(), &self.kernel, self.kernel.default_jitter())?.matrix;
        let mut grad = Vec::with_capacity(self.kernel.log_lengthscales.len() + 2);
        let mut dmag = kf.clone();
        for i in 0..n {
            dmag[(i, i)] += self.chol.extra_jitter();
        }
        grad.push(half_trace(&dmag));
        for slot in 0..self.kernel.log_lengthscales.len() {
            grad.push(half_trace(&lengthscale_derivative(self.x.as_ref(), &kf, &self.kernel, slot)));
        }
        let noise = self.log_noise_variance.exp();
        grad.push(0.5 * noise * (0..n).map(|i| w[(i, i)]).sum::<f64>());
        Ok(grad)
    }
}

/// Log evidence of the constant-noise GP.
pub fn exact_log_marginal(x: MatRef<'_, f64>, y: &[f64], kernel: &KernelParams, log_noise_variance: f64) -> Result<f64> {
    Ok(ExactGp::fit(x, y, kernel.clone(), log_noise_variance)?.log_marginal())
}
