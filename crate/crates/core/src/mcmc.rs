//! Elliptical slice sampling of the latent processes at fixed hyperparameters.
//!
//! The chain alternates between the stacked signal block (`f`, or `f̃` and `φ`
//! jointly) and the `θ` block, each under its own GP prior. Samples are stored
//! row-wise in the order `[f̃ or f, φ (if present), θ]`.

use std::f64::consts::PI;

use faer::{Mat, MatRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::ep::{EpModel, EpState, PriorBlock};
use crate::error::{Error, Result};
use crate::kernels::cross_cov;
use crate::linalg::{log_sum_exp, LN_2PI};
use crate::predict::{predictive_y_mn, predictive_y_n, PredictiveResult};
use crate::gaussian::{Gauss1, Gauss2, Sym2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Post-burn-in iterations; every `thin`-th one is stored.
    pub n_samples: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub sample_v: bool,
    pub sample_theta: bool,
    /// Replace the likelihood by a constant (prior sampling diagnostic).
    pub prior_only: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { n_samples: 20_000, n_burnin: 5_000, thin: 2, seed: 0, sample_v: true, sample_theta: true, prior_only: false }
    }
}

#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub n_obs: usize,
    pub dim: usize,
    pub has_magnitude: bool,
    /// Row-major `draws × dim`.
    pub samples: Vec<f64>,
    /// Mean number of bracket shrinks per slice update.
    pub shrinks_per_update: f64,
    pub ess: Vec<f64>,
}

impl ChainOutput {
    pub fn draws(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn draw(&self, s: usize) -> &[f64] {
        &self.samples[s * self.dim..(s + 1) * self.dim]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.draws()).map(|s| self.samples[s * self.dim + j]).collect()
    }

    pub fn mean(&self, j: usize) -> f64 {
        let c = self.column(j);
        c.iter().sum::<f64>() / c.len() as f64
    }

    pub fn var(&self, j: usize) -> f64 {
        let c = self.column(j);
        let m = c.iter().sum::<f64>() / c.len() as f64;
        c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (c.len() as f64 - 1.0)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn from_draws(n_obs: usize, dim: usize, has_magnitude: bool, samples: Vec<f64>, shrinks_per_update: f64) -> Self {
        let mut out = Self { n_obs, dim, has_magnitude, samples, shrinks_per_update, ess: Vec::new() };
        out.ess = (0..dim).map(|j| effective_sample_size(&out.column(j))).collect();
        out
    }
}

fn log_likelihood(y: &[f64], v: &[f64], theta: &[f64], has_magnitude: bool) -> f64 {
    let n = y.len();
    let mut s = 0.0;
    for i in 0..n {
        let signal = if has_magnitude { (0.5 * v[n + i]).exp() * v[i] } else { v[i] };
        let r = y[i] - signal;
        s += -0.5 * (LN_2PI + theta[i]) - 0.5 * r * r * (-theta[i]).exp();
    }
    if s.is_nan() { f64::NEG_INFINITY } else { s }
}

/// Draw `L z` for each block and stack.
fn prior_draw(rng: &mut ChaCha8Rng, blocks: &[&PriorBlock]) -> Vec<f64> {
    let mut out = Vec::new();
    for b in blocks {
        let n = b.chol.dim();
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let l = b.chol.l();
        out.extend((0..n).map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>()));
    }
    out
}

/// One elliptical slice update of `x` (prior mean `mean`) under `loglik`.
/// Returns the new log-likelihood and the number of bracket shrinks.
fn slice_update(rng: &mut ChaCha8Rng, x: &mut [f64], mean: &[f64], blocks: &[&PriorBlock], cur: f64, loglik: impl Fn(&[f64]) -> f64) -> (f64, usize) {
    let nu = prior_draw(rng, blocks);
    let u: f64 = rng.random();
    let threshold = cur + u.ln();
    let mut angle = rng.random_range(0.0..2.0 * PI);
    let (mut lo, mut hi) = (angle - 2.0 * PI, angle);
    let centred: Vec<f64> = x.iter().zip(mean).map(|(a, m)| a - m).collect();
    let mut prop = vec![0.0; x.len()];
    let mut shrinks = 0;
    loop {
        let (s, c) = angle.sin_cos();
        for k in 0..x.len() {
            prop[k] = mean[k] + centred[k] * c + nu[k] * s;
        }
        let ll = loglik(&prop);
        if ll > threshold {
            x.copy_from_slice(&prop);
            return (ll, shrinks);
        }
        shrinks += 1;
        if angle < 0.0 {
            lo = angle;
        } else {
            hi = angle;
        }
        angle = rng.random_range(lo..hi);
    }
}

struct Sampler<'a> {
    y: &'a [f64],
    has_magnitude: bool,
    v_blocks: Vec<&'a PriorBlock>,
    theta_block: &'a PriorBlock,
    v_mean: Vec<f64>,
    theta_mean: Vec<f64>,
}

impl<'a> Sampler<'a> {
    fn new(y: &'a [f64], has_magnitude: bool, v_priors: &'a [PriorBlock], theta_prior: &'a PriorBlock) -> Self {
        let n = y.len();
        let v_mean = v_priors.iter().flat_map(|b| std::iter::repeat_n(b.mean, n)).collect();
        Self {
            y,
            has_magnitude,
            v_blocks: v_priors.iter().collect(),
            theta_block: theta_prior,
            v_mean,
            theta_mean: vec![theta_prior.mean; n],
        }
    }

    /// One sweep over both blocks at inverse temperature `beta`.
    fn sweep(&self, rng: &mut ChaCha8Rng, v: &mut [f64], theta: &mut [f64], ll: f64, beta: f64, cfg: &ChainConfig) -> (f64, usize, usize) {
        let (mut ll, mut shrinks, mut updates) = (ll, 0, 0);
        let y = self.y;
        let hm = self.has_magnitude;
        if cfg.sample_v {
            let th = theta.to_vec();
            let (l, s) = slice_update(rng, v, &self.v_mean, &self.v_blocks, ll, |p| beta * log_likelihood(y, p, &th, hm));
            ll = l;
            shrinks += s;
            updates += 1;
        }
        if cfg.sample_theta {
            let vv = v.to_vec();
            let (l, s) = slice_update(rng, theta, &self.theta_mean, &[self.theta_block], ll, |p| beta * log_likelihood(y, &vv, p, hm));
            ll = l;
            shrinks += s;
            updates += 1;
        }
        (ll, shrinks, updates)
    }
}

/// Elliptical slice sampling of the latent posterior with fixed hyperparameters.
/// The chain starts at the prior means unless `init` (a full latent vector) is given.
pub fn ess_sample(model: &EpModel, x: MatRef<'_, f64>, y: &[f64], cfg: &ChainConfig, init: Option<&[f64]>) -> Result<ChainOutput> {
    if cfg.n_samples == 0 || cfg.thin == 0 {
        return Err(Error::input("n_samples and thin must be positive"));
    }
    let n = y.len();
    let (v_priors, theta_prior) = model.priors(x)?;
    let hm = model.kind.has_magnitude();
    let sampler = Sampler::new(y, hm, &v_priors, &theta_prior);
    let nv = sampler.v_mean.len();
    let (mut v, mut theta) = match init {
        Some(z) if z.len() == nv + n => (z[..nv].to_vec(), z[nv..].to_vec()),
        Some(z) => return Err(Error::input(format!("initial state has length {}, expected {}", z.len(), nv + n))),
        None => (sampler.v_mean.clone(), sampler.theta_mean.clone()),
    };
    let beta = if cfg.prior_only { 0.0 } else { 1.0 };
    let ll0 = log_likelihood(y, &v, &theta, hm);
    if !ll0.is_finite() {
        return Err(Error::Initialization(format!("log-likelihood {ll0} at the initial state")));
    }
    let mut ll = beta * ll0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = nv + n;
    let mut samples = Vec::with_capacity(cfg.n_samples / cfg.thin * dim);
    let (mut shrinks, mut updates) = (0usize, 0usize);
    for it in 0..cfg.n_burnin + cfg.n_samples {
        let (l, s, u) = sampler.sweep(&mut rng, &mut v, &mut theta, ll, beta, cfg);
        ll = l;
        shrinks += s;
        updates += u;
        if it >= cfg.n_burnin && (it - cfg.n_burnin) % cfg.thin == cfg.thin - 1 {
            samples.extend_from_slice(&v);
            samples.extend_from_slice(&theta);
        }
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::numerical("non-finite MCMC sample"));
    }
    Ok(ChainOutput::from_draws(n, dim, hm, samples, shrinks as f64 / updates.max(1) as f64))
}

/// Independent draws from the EP Gaussian approximation, laid out like a chain.
pub fn sample_ep_approximation(state: &EpState, n_draws: usize, seed: u64) -> ChainOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let post = &state.posterior;
    let (pv, pt) = (post.v.dim(), post.theta.dim());
    let mut samples = Vec::with_capacity(n_draws * (pv + pt));
    for _ in 0..n_draws {
        let z: Vec<f64> = (0..pv).map(|_| StandardNormal.sample(&mut rng)).collect();
        samples.extend(post.v.sample_with(&z));
        let z: Vec<f64> = (0..pt).map(|_| StandardNormal.sample(&mut rng)).collect();
        samples.extend(post.theta.sample_with(&z));
    }
    ChainOutput::from_draws(pt, pv + pt, post.is_bivariate(), samples, 0.0)
}

/// Effective sample size from Geyer's initial positive sequence estimator.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let acov = autocovariance(x);
    if !(acov[0] > 0.0) {
        return n as f64;
    }
    let rho = |k: usize| acov[k] / acov[0];
    let mut tau = -1.0;
    let mut k = 0;
    let mut prev = f64::INFINITY;
    while k + 1 < n {
        let mut pair = rho(k) + rho(k + 1);
        if pair <= 0.0 {
            break;
        }
        // monotone sequence
        pair = pair.min(prev);
        prev = pair;
        tau += 2.0 * pair;
        k += 2;
    }
    n as f64 / tau.max(1.0 / n as f64)
}

fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    (0..n).map(|k| buf[k].re / (size as f64 * n as f64)).collect()
}

/// Split-R̂ for one latent over several chains.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect();
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Per-latent comparison of EP marginals against chain estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Discrepancy {
    /// `|μ_EP − μ_MC| / σ_MC`.
    pub mean_z: Vec<f64>,
    /// `σ_EP / σ_MC`.
    pub sd_ratio: Vec<f64>,
    pub max_mean_z: f64,
    pub min_sd_ratio: f64,
    pub max_sd_ratio: f64,
    pub min_ess: f64,
    /// Some latent has fewer than 100 effective samples.
    pub unreliable: bool,
}

pub fn compare_to_ep(chain: &ChainOutput, state: &EpState) -> Result<Discrepancy> {
    let post = &state.posterior;
    let pv = post.v.dim();
    if chain.dim != pv + post.theta.dim() {
        return Err(Error::input("chain and EP state have different latent dimensions"));
    }
    let ep_marg = |j: usize| if j < pv { post.v.marginal(j) } else { post.theta.marginal(j - pv) };
    let mut mean_z = Vec::with_capacity(chain.dim);
    let mut sd_ratio = Vec::with_capacity(chain.dim);
    for j in 0..chain.dim {
        let g = ep_marg(j);
        let sd = chain.var(j).sqrt();
        mean_z.push((g.mean - chain.mean(j)).abs() / sd);
        sd_ratio.push(g.sd() / sd);
    }
    let min_ess = chain.min_ess();
    Ok(Discrepancy {
        max_mean_z: mean_z.iter().copied().fold(0.0, f64::max),
        min_sd_ratio: sd_ratio.iter().copied().fold(f64::INFINITY, f64::min),
        max_sd_ratio: sd_ratio.iter().copied().fold(0.0, f64::max),
        mean_z,
        sd_ratio,
        min_ess,
        unreliable: min_ess < 100.0,
    })
}

/// Predictive mixture at one test input, averaged over chain draws.
#[derive(Clone, Debug, PartialEq)]
pub struct MixturePredictive {
    /// Per-draw Gaussian predictives.
    pub components: Vec<PredictiveResult>,
}

impl MixturePredictive {
    pub fn moments(&self) -> PredictiveResult {
        let k = self.components.len() as f64;
        let mean = self.components.iter().map(|c| c.mean).sum::<f64>() / k;
        let var = self.components.iter().map(|c| c.var + (c.mean - mean).powi(2)).sum::<f64>() / k;
        PredictiveResult::new(mean, var)
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let l: Vec<f64> = self.components.iter().map(|c| c.log_density(y)).collect();
        log_sum_exp(&l) - (l.len() as f64).ln()
    }
}

/// GP conditional of one process at the test inputs given the latent values
/// at the training inputs, for every retained draw.
fn conditional(block: &PriorBlock, kernel: &crate::kernels::KernelParams, x: MatRef<'_, f64>, xs: MatRef<'_, f64>, u: &Mat<f64>) -> Result<(Mat<f64>, Vec<f64>)> {
    let mut a = cross_cov(x, xs, kernel)?;
    block.chol.solve_lower_in_place(&mut a);
    let mut w = u.clone();
    for j in 0..w.ncols() {
        for i in 0..w.nrows() {
            w[(i, j)] -= block.mean;
        }
    }
    block.chol.solve_lower_in_place(&mut w);
    let mut mean = a.transpose() * &w;
    for j in 0..mean.ncols() {
        for i in 0..mean.nrows() {
            mean[(i, j)] += block.mean;
        }
    }
    let kss = kernel.magnitude();
    let var = (0..a.ncols()).map(|j| (kss - a.col_as_slice(j).iter().map(|v| v * v).sum::<f64>()).max(1e-14 * kss)).collect();
    Ok((mean, var))
}

/// Rao-Blackwellized predictive: each draw is projected to the test inputs
/// through the GP conditionals and turned into a Gaussian predictive. At most
/// `max_draws` evenly spaced draws are used.
pub fn mc_predictive(chain: &ChainOutput, model: &EpModel, x: MatRef<'_, f64>, xs: MatRef<'_, f64>, max_draws: usize) -> Result<Vec<MixturePredictive>> {
    let n = chain.n_obs;
    let (v_priors, theta_prior) = model.priors(x)?;
    let total = chain.draws();
    let s = total.min(max_draws.max(1));
    let picks: Vec<usize> = (0..s).map(|k| k * total / s).collect();
    let gather = |offset: usize| Mat::from_fn(n, s, |i, k| chain.draw(picks[k])[offset + i]);

    let hm = model.kind.has_magnitude();
    let theta_off = if hm { 2 * n } else { n };
    let (f_mean, f_var) = conditional(&v_priors[0], &model.signal, x, xs, &gather(0))?;
    let (t_mean, t_var) = conditional(&theta_prior, &model.noise, x, xs, &gather(theta_off))?;
    let phi = match &model.magnitude {
        Some(mk) => Some(conditional(&v_priors[1], mk, x, xs, &gather(n))?),
        None => None,
    };
    Ok((0..xs.nrows())
        .map(|j| {
            let components = (0..s)
                .map(|k| {
                    let th = Gauss1::new(t_mean[(j, k)], t_var[j]);
                    match &phi {
                        None => predictive_y_n(&Gauss1::new(f_mean[(j, k)], f_var[j]), &th),
                        Some((p_mean, p_var)) => predictive_y_mn(&Gauss2::new([f_mean[(j, k)], p_mean[(j, k)]], Sym2::new(f_var[j], 0.0, p_var[j])), &th),
                    }
                })
                .collect();
            MixturePredictive { components }
        })
        .collect())
}

/// Annealed importance sampling estimate of the log marginal likelihood with
/// elliptical slice transitions. Returns the estimate and its Monte Carlo
/// standard error.
pub fn ais_log_evidence(model: &EpModel, x: MatRef<'_, f64>, y: &[f64], n_chains: usize, n_temps: usize, seed: u64) -> Result<(f64, f64)> {
    let (v_priors, theta_prior) = model.priors(x)?;
    let hm = model.kind.has_magnitude();
    let sampler = Sampler::new(y, hm, &v_priors, &theta_prior);
    let cfg = ChainConfig::default();
    let betas: Vec<f64> = (0..=n_temps).map(|k| (k as f64 / n_temps as f64).powi(4)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_w = Vec::with_capacity(n_chains);
    for _ in 0..n_chains {
        let mut v: Vec<f64> = prior_draw(&mut rng, &sampler.v_blocks).iter().zip(&sampler.v_mean).map(|(a, m)| a + m).collect();
        let mut theta: Vec<f64> = prior_draw(&mut rng, &[&theta_prior]).iter().map(|a| a + theta_prior.mean).collect();
        let mut w = 0.0;
        for k in 1..=n_temps {
            let ll = log_likelihood(y, &v, &theta, hm);
            w += (betas[k] - betas[k - 1]) * ll;
            let (_, _, _) = sampler.sweep(&mut rng, &mut v, &mut theta, betas[k] * ll, betas[k], &cfg);
        }
        log_w.push(w);
    }
    let k = log_w.len() as f64;
    let est = log_sum_exp(&log_w) - k.ln();
    let ratios: Vec<f64> = log_w.iter().map(|w| (w - est).exp()).collect();
    let sd = (ratios.iter().map(|r| (r - 1.0).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    Ok((est, sd / k.sqrt()))
}
