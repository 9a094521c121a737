//! Repeated-simulation and cross-validation benchmarks over model tiers.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::datasets::{motorcycle, Dataset, SimSuite};
use crate::ep::{run_ep, EpModel};
use crate::error::{Error, Result};
use crate::mcmc::{ess_sample, mc_predictive, ChainConfig};
use crate::model_select::{kfold_mlpd, optimize_hyperparams, test_mlpd, EpFit, Fit, FittedModel, HyperConfig, Tier};
use crate::predict::PredictiveResult;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Sim1,
    Sim2,
    Motorcycle,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim1" => Ok(Suite::Sim1),
            "sim2" => Ok(Suite::Sim2),
            "motorcycle" => Ok(Suite::Motorcycle),
            _ => Err(Error::input(format!("unknown suite {s:?}; expected sim1, sim2 or motorcycle"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Sim1 => "sim1",
            Suite::Sim2 => "sim2",
            Suite::Motorcycle => "motorcycle",
        })
    }
}

/// A benchmarked method: a model tier, optionally with its latent posterior
/// sampled by MCMC at the EP-optimized hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "gp")]
    Gp,
    #[serde(rename = "ep-n")]
    EpNoise,
    #[serde(rename = "ep-mn")]
    EpNoiseSignal,
    #[serde(rename = "ep-mc-n")]
    EpMcNoise,
    #[serde(rename = "ep-mc-mn")]
    EpMcNoiseSignal,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Gp, Method::EpNoise, Method::EpNoiseSignal, Method::EpMcNoise, Method::EpMcNoiseSignal];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gp => "gp",
            Method::EpNoise => "ep-n",
            Method::EpNoiseSignal => "ep-mn",
            Method::EpMcNoise => "ep-mc-n",
            Method::EpMcNoiseSignal => "ep-mc-mn",
        }
    }

    pub fn tier(self) -> Tier {
        match self {
            Method::Gp => Tier::Gp,
            Method::EpNoise | Method::EpMcNoise => Tier::EpNoise,
            Method::EpNoiseSignal | Method::EpMcNoiseSignal => Tier::EpNoiseSignal,
        }
    }

    pub fn is_mcmc(self) -> bool {
        matches!(self, Method::EpMcNoise | Method::EpMcNoiseSignal)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::input(format!("unknown method {s:?}; expected one of gp, ep-n, ep-mn, ep-mc-n, ep-mc-mn")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub suite: Suite,
    pub methods: Vec<Method>,
    pub repetitions: usize,
    pub seed: u64,
    /// Training size for simulated suites; the suite default when `None`.
    pub n_train: Option<usize>,
    pub folds: usize,
    pub hyper: HyperConfig,
    /// Chain settings for the `ep-mc-*` methods.
    pub chain: ChainConfig,
    /// Mixture components used for `ep-mc-*` predictions.
    pub mc_draws: usize,
    /// Re-run EP from zero sites at every fitted `ep-mn` optimum, coupled and
    /// factorized, and record the sweep counts.
    pub convergence_check: bool,
}

impl BenchmarkConfig {
    pub fn new(suite: Suite) -> Self {
        Self {
            suite,
            methods: vec![Method::Gp, Method::EpNoise, Method::EpNoiseSignal],
            repetitions: if suite == Suite::Motorcycle { 1 } else { 20 },
            seed: 0,
            n_train: None,
            folds: 10,
            hyper: HyperConfig::default(),
            chain: ChainConfig { n_samples: 4000, n_burnin: 1000, thin: 2, ..ChainConfig::default() },
            mc_draws: 500,
            convergence_check: true,
        }
    }
}

/// Sweep counts of EP started from zero sites at a fitted optimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub coupled_iterations: usize,
    pub coupled_converged: bool,
    pub factorized_iterations: usize,
    pub factorized_converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub repetition: usize,
    pub method: Method,
    /// Test MLPD (simulations) or cross-validated MLPD on the standardized
    /// target scale (motorcycle).
    pub mlpd: Option<f64>,
    pub seconds: f64,
    pub log_evidence: Option<f64>,
    pub params: Vec<f64>,
    pub ep_iterations: Option<usize>,
    pub convergence: Option<ConvergenceRecord>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_mlpd: f64,
    /// Standard error of the mean over repetitions.
    pub se_mlpd: f64,
    pub completed: usize,
    /// Repetitions in which this method beat `gp`.
    pub beats_gp: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub config: BenchmarkConfig,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<MethodSummary>,
    pub seconds: f64,
}

impl BenchmarkReport {
    pub fn summary_for(&self, m: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == m)
    }

    pub fn convergence_records(&self) -> Vec<&ConvergenceRecord> {
        self.runs.iter().filter_map(|r| r.convergence.as_ref()).collect()
    }

    /// Plain-text table of the summary.
    pub fn table(&self) -> String {
        let mut s = format!("{:<10} {:>9} {:>8} {:>6} {:>9}\n", "method", "mlpd", "se", "ok", "beats gp");
        for m in &self.summary {
            let beats = m.beats_gp.map_or("-".to_string(), |b| format!("{b}/{}", self.config.repetitions));
            s += &format!("{:<10} {:>9.4} {:>8.4} {:>6} {:>9}\n", m.method.name(), m.mean_mlpd, m.se_mlpd, m.completed, beats);
        }
        s
    }
}

/// A run that fails numerically counts as unconverged after `max_iter` sweeps.
fn convergence_record(fit: &EpFit) -> ConvergenceRecord {
    let count = |model: &EpModel| match run_ep(model, fit.x.as_ref(), &fit.y, &fit.config) {
        Ok(s) => (s.iterations, s.converged),
        Err(e) => {
            warn!("convergence check failed: {e}");
            (fit.config.max_iter, false)
        }
    };
    let (coupled_iterations, coupled_converged) = count(&fit.model);
    let (factorized_iterations, factorized_converged) = count(&fit.model.clone().factorized());
    ConvergenceRecord { coupled_iterations, coupled_converged, factorized_iterations, factorized_converged }
}

fn mcmc_predictions(fit: &EpFit, test: &Dataset, cfg: &BenchmarkConfig, seed: u64) -> Result<Vec<PredictiveResult>> {
    let chain_cfg = ChainConfig { seed, ..cfg.chain.clone() };
    let mut init: Vec<f64> = fit.state.posterior.v.mean().to_vec();
    init.extend_from_slice(fit.state.posterior.theta.mean());
    let chain = ess_sample(&fit.model, fit.x.as_ref(), &fit.y, &chain_cfg, Some(&init))?;
    let mix = mc_predictive(&chain, &fit.model, fit.x.as_ref(), test.x.as_ref(), cfg.mc_draws)?;
    Ok(mix.iter().map(|m| m.moments()).collect())
}

/// Fits every tier a repetition needs once and scores each method.
fn simulated_repetition(suite: SimSuite, rep: usize, cfg: &BenchmarkConfig) -> Vec<RunRecord> {
    let seed = cfg.seed.wrapping_add(rep as u64);
    let n = cfg.n_train.unwrap_or(suite.default_train_size());
    let (train, test) = match suite.generate(n, seed) {
        Ok(d) => d,
        Err(e) => {
            return cfg.methods.iter().map(|&m| failed(rep, m, 0.0, &e)).collect();
        }
    };
    let truth = test.truth.clone().expect("simulated test sets carry the truth");
    let hyper = HyperConfig { seed, ..cfg.hyper.clone() };
    let mut fits: Vec<(Tier, Result<Fit>, f64)> = Vec::new();
    let mut out = Vec::new();
    for &m in &cfg.methods {
        let tier = m.tier();
        if !fits.iter().any(|(t, _, _)| *t == tier) {
            let t0 = Instant::now();
            let f = optimize_hyperparams(train.x.as_ref(), &train.y, tier, &hyper, None);
            fits.push((tier, f, t0.elapsed().as_secs_f64()));
        }
        let (_, fit, fit_secs) = fits.iter().find(|(t, _, _)| *t == tier).expect("fitted above");
        let t0 = Instant::now();
        let fit = match fit {
            Ok(f) => f,
            Err(e) => {
                out.push(failed(rep, m, *fit_secs, e));
                continue;
            }
        };
        let pred = match (&fit.model, m.is_mcmc()) {
            (FittedModel::Ep(e), true) => mcmc_predictions(e, &test, cfg, seed),
            _ => fit.model.predict(test.x.as_ref()),
        };
        let convergence = match (&fit.model, cfg.convergence_check && m == Method::EpNoiseSignal) {
            (FittedModel::Ep(e), true) => Some(convergence_record(e)),
            _ => None,
        };
        let secs = fit_secs + t0.elapsed().as_secs_f64();
        match pred {
            Ok(p) => {
                let mlpd = test_mlpd(&p, &truth.mean, &truth.noise_sd);
                info!("{suite:?} rep {rep} {m}: MLPD {mlpd:.4} ({secs:.1}s)");
                out.push(RunRecord {
                    repetition: rep,
                    method: m,
                    mlpd: Some(mlpd),
                    seconds: secs,
                    log_evidence: Some(fit.model.log_evidence()),
                    params: fit.params.clone(),
                    ep_iterations: fit.model.ep_iterations(),
                    convergence,
                    error: None,
                });
            }
            Err(e) => out.push(failed(rep, m, secs, &e)),
        }
    }
    out
}

fn failed(rep: usize, m: Method, secs: f64, e: &Error) -> RunRecord {
    warn!("repetition {rep} {m} failed: {e}");
    RunRecord {
        repetition: rep,
        method: m,
        mlpd: None,
        seconds: secs,
        log_evidence: None,
        params: Vec::new(),
        ep_iterations: None,
        convergence: None,
        error: Some(e.to_string()),
    }
}

fn motorcycle_repetition(data: &Dataset, rep: usize, cfg: &BenchmarkConfig) -> Vec<RunRecord> {
    let seed = cfg.seed.wrapping_add(rep as u64);
    let hyper = HyperConfig { seed, ..cfg.hyper.clone() };
    cfg.methods
        .iter()
        .map(|&m| {
            if m.is_mcmc() {
                return failed(rep, m, 0.0, &Error::input("sampled methods are not supported under cross-validation"));
            }
            match kfold_mlpd(data, cfg.folds, m.tier(), &hyper, seed, true) {
                Ok(r) => {
                    info!("motorcycle rep {rep} {m}: MLPD {:.4} ({:.1}s)", r.mlpd_standardized, r.seconds);
                    RunRecord {
                        repetition: rep,
                        method: m,
                        mlpd: Some(r.mlpd_standardized),
                        seconds: r.seconds,
                        log_evidence: None,
                        params: Vec::new(),
                        ep_iterations: None,
                        convergence: None,
                        error: r.partial.then(|| "some folds failed".to_string()),
                    }
                }
                Err(e) => failed(rep, m, 0.0, &e),
            }
        })
        .collect()
}

fn summarize(cfg: &BenchmarkConfig, runs: &[RunRecord]) -> Vec<MethodSummary> {
    let score = |m: Method, rep: usize| runs.iter().find(|r| r.method == m && r.repetition == rep).and_then(|r| r.mlpd);
    cfg.methods
        .iter()
        .map(|&m| {
            let v: Vec<f64> = runs.iter().filter(|r| r.method == m).filter_map(|r| r.mlpd).collect();
            let k = v.len() as f64;
            let mean = v.iter().sum::<f64>() / k;
            let se = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt() } else { f64::NAN };
            let beats_gp = (m != Method::Gp && cfg.methods.contains(&Method::Gp)).then(|| {
                (0..cfg.repetitions)
                    .filter(|&r| matches!((score(m, r), score(Method::Gp, r)), (Some(a), Some(b)) if a > b))
                    .count()
            });
            MethodSummary { method: m, mean_mlpd: mean, se_mlpd: se, completed: v.len(), beats_gp }
        })
        .collect()
}

/// Run a benchmark. Repetitions are independent and processed in order;
/// `progress` is called after each one.
pub fn run_benchmark(cfg: &BenchmarkConfig, mut progress: impl FnMut(usize, &[RunRecord])) -> Result<BenchmarkReport> {
    if cfg.repetitions == 0 || cfg.methods.is_empty() {
        return Err(Error::input("need at least one repetition and one method"));
    }
    let t0 = Instant::now();
    let moto = (cfg.suite == Suite::Motorcycle).then(motorcycle);
    let mut runs = Vec::new();
    for rep in 0..cfg.repetitions {
        let recs = match cfg.suite {
            Suite::Sim1 => simulated_repetition(SimSuite::Sim1, rep, cfg),
            Suite::Sim2 => simulated_repetition(SimSuite::Sim2, rep, cfg),
            Suite::Motorcycle => motorcycle_repetition(moto.as_ref().expect("loaded above"), rep, cfg),
        };
        progress(rep, &recs);
        runs.extend(recs);
    }
    let summary = summarize(cfg, &runs);
    Ok(BenchmarkReport { schema_version: SCHEMA_VERSION, config: cfg.clone(), runs, summary, seconds: t0.elapsed().as_secs_f64() })
}

/// Whether an EP(m+n) fit converged from zero sites in fewer than `limit` sweeps.
pub fn converged_within(r: &ConvergenceRecord, limit: usize) -> bool {
    r.coupled_converged && r.coupled_iterations < limit
}

/// Whether the factorized run needed strictly more sweeps than the coupled one.
pub fn factorized_slower(r: &ConvergenceRecord) -> bool {
    r.factorized_iterations > r.coupled_iterations || (!r.factorized_converged && r.coupled_converged)
}
