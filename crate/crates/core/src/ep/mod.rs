//! Parallel expectation propagation for GP regression with a latent
//! log-noise-variance process `θ` and, optionally, a latent log-signal-variance
//! process `φ` with `f = e^{φ/2} f̃`.

mod engine;
mod evidence;
mod posterior;
mod quadrature;
mod sites;
mod tilted;

use faer::MatRef;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{cov_matrix, KernelParams};

pub use engine::{run_ep, run_ep_from, update_sites_parallel, EpState, SweepOutcome};
pub use evidence::log_marginal_ep;
pub use posterior::{GaussPosterior, PriorBlock};
pub use quadrature::{QuadratureGrid, DEFAULT_HALF_WIDTH, DEFAULT_NODES};
pub use sites::{cavity_bivariate, cavity_univariate, SiteSet, VSites};
pub use tilted::{tilted_moments_mn, tilted_moments_n, TiltedMoments, VGauss, LOG_VARIANCE_CLAMP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// `y ~ N(f, e^θ)`.
    Noise,
    /// `y ~ N(e^{φ/2} f̃, e^θ)` with coupled `(f̃ᵢ, φᵢ)` sites.
    NoiseSignal,
    /// As `NoiseSignal` but with `q(f̃) q(φ)` factorized; diagnostic only.
    NoiseSignalFactorized,
}

impl ModelKind {
    pub fn has_magnitude(self) -> bool {
        !matches!(self, ModelKind::Noise)
    }
}

/// Hyperparameters of the latent processes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpModel {
    pub kind: ModelKind,
    /// Kernel of `f` (noise-only model) or of `f̃`, whose magnitude is fixed at 1.
    pub signal: KernelParams,
    /// Kernel of `φ`.
    pub magnitude: Option<KernelParams>,
    /// Kernel of `θ`.
    pub noise: KernelParams,
}

impl EpModel {
    pub fn noise_only(signal: KernelParams, noise: KernelParams) -> Self {
        Self { kind: ModelKind::Noise, signal, magnitude: None, noise }
    }

    /// `f̃` keeps unit magnitude and zero mean; its log-magnitude is reset to 0.
    pub fn noise_signal(mut signal: KernelParams, magnitude: KernelParams, noise: KernelParams) -> Self {
        signal.log_magnitude = 0.0;
        signal.constant_mean = 0.0;
        Self { kind: ModelKind::NoiseSignal, signal, magnitude: Some(magnitude), noise }
    }

    pub fn factorized(mut self) -> Self {
        if self.kind == ModelKind::NoiseSignal {
            self.kind = ModelKind::NoiseSignalFactorized;
        }
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        self.signal.check_dim(dim)?;
        self.noise.check_dim(dim)?;
        match (&self.magnitude, self.kind.has_magnitude()) {
            (Some(m), true) => m.check_dim(dim),
            (None, false) => Ok(()),
            _ => Err(Error::input("magnitude kernel must be present exactly for signal-variance models")),
        }
    }

    /// Prior blocks for the signal processes (`[f]` or `[f̃, φ]`) and for `θ`.
    pub fn priors(&self, x: MatRef<'_, f64>) -> Result<(Vec<PriorBlock>, PriorBlock)> {
        self.validate(x.ncols())?;
        let block = |p: &KernelParams| -> Result<PriorBlock> {
            let k = cov_matrix(x, p, p.default_jitter())?;
            Ok(PriorBlock { chol: k.cholesky()?, mean: p.constant_mean })
        };
        let mut v = vec![block(&self.signal)?];
        if let Some(m) = &self.magnitude {
            v.push(block(m)?);
        }
        Ok((v, block(&self.noise)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpConfig {
    pub damping: f64,
    pub min_damping: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub grid_nodes: usize,
    pub grid_half_width: f64,
    /// Fraction of skipped sites above which a sweep uses halved damping.
    pub skip_fraction: f64,
}

impl Default for EpConfig {
    fn default() -> Self {
        Self {
            damping: 0.8,
            min_damping: 0.1,
            max_iter: 200,
            tol: 1e-6,
            grid_nodes: DEFAULT_NODES,
            grid_half_width: DEFAULT_HALF_WIDTH,
            skip_fraction: 0.1,
        }
    }
}

impl EpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::input(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.min_damping > 0.0 && self.min_damping <= self.damping) {
            return Err(Error::input("min_damping must lie in (0, damping]"));
        }
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::input("max_iter and tol must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<QuadratureGrid> {
        QuadratureGrid::simpson(self.grid_nodes, self.grid_half_width)
    }
}

/// Gaussian approximations `q(v | X, y)` and `q(θ | X, y)` with their priors.
#[derive(Clone, Debug)]
pub struct JointPosterior {
    pub v: GaussPosterior,
    pub theta: GaussPosterior,
    pub v_priors: Vec<PriorBlock>,
    pub theta_prior: PriorBlock,
}

impl JointPosterior {
    pub fn compute(v_priors: Vec<PriorBlock>, theta_prior: PriorBlock, sites: &SiteSet) -> Result<Self> {
        let n = sites.len();
        let (diag, cross, nu): (Vec<f64>, Option<Vec<f64>>, Vec<f64>) = match &sites.v {
            VSites::Univariate(s) => (s.iter().map(|s| s.tau).collect(), None, s.iter().map(|s| s.nu).collect()),
            VSites::Bivariate(s) => {
                let mut diag = Vec::with_capacity(2 * n);
                diag.extend(s.iter().map(|s| s.prec.a11));
                diag.extend(s.iter().map(|s| s.prec.a22));
                let mut nu = Vec::with_capacity(2 * n);
                nu.extend(s.iter().map(|s| s.nu[0]));
                nu.extend(s.iter().map(|s| s.nu[1]));
                let cross: Vec<f64> = s.iter().map(|s| s.prec.a12).collect();
                let cross = cross.iter().any(|&c| c != 0.0).then_some(cross);
                (diag, cross, nu)
            }
        };
        let expected = if sites.is_bivariate() { 2 } else { 1 };
        if v_priors.len() != expected {
            return Err(Error::input("site layout does not match the number of signal processes"));
        }
        let refs: Vec<&PriorBlock> = v_priors.iter().collect();
        let v = GaussPosterior::compute(&refs, &diag, cross.as_deref(), &nu)?;
        let tau: Vec<f64> = sites.theta.iter().map(|s| s.tau).collect();
        let tnu: Vec<f64> = sites.theta.iter().map(|s| s.nu).collect();
        let theta = GaussPosterior::compute(&[&theta_prior], &tau, None, &tnu)?;
        Ok(Self { v, theta, v_priors, theta_prior })
    }

    pub fn n(&self) -> usize {
        self.theta.n()
    }

    pub fn is_bivariate(&self) -> bool {
        self.v_priors.len() == 2
    }

    pub fn v_marginal(&self, i: usize) -> VGauss {
        if self.is_bivariate() {
            VGauss::Bivariate(self.v.pair_marginal(i))
        } else {
            VGauss::Univariate(self.v.marginal(i))
        }
    }

    pub fn theta_marginal(&self, i: usize) -> crate::gaussian::Gauss1 {
        self.theta.marginal(i)
    }
}
