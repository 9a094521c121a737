//! Elliptical slice sampling of the latent processes at the EP-optimal
//! hyperparameters, compared marginal by marginal with the EP approximation.

use hetgp::datasets::{standardize, SimSuite};
use hetgp::mcmc::{compare_to_ep, ess_sample, ChainConfig};
use hetgp::model_select::{optimize_hyperparams, FittedModel, HyperConfig, Tier};

fn main() -> Result<(), hetgp::error::Error> {
    let (train, _) = SimSuite::Sim1.generate(50, 11)?;
    let (s, _) = standardize(&train)?;
    let fit = optimize_hyperparams(s.x.as_ref(), &s.y, Tier::EpNoise, &HyperConfig::desk_scale(), None)?;
    let FittedModel::Ep(ep) = &fit.model else { unreachable!() };

    let cfg = ChainConfig { n_samples: 100_000, n_burnin: 5_000, thin: 5, seed: 3, ..ChainConfig::default() };
    let chain = ess_sample(&ep.model, s.x.as_ref(), &s.y, &cfg, None)?;
    let d = compare_to_ep(&chain, &ep.state)?;

    println!("draws {}  min ESS {:.0}  shrinks per update {:.2}", chain.draws(), chain.min_ess(), chain.shrinks_per_update);
    println!("max |mean_EP - mean_MC| / sd_MC = {:.3}", d.max_mean_z);
    println!("sd_EP / sd_MC in [{:.3}, {:.3}]", d.min_sd_ratio, d.max_sd_ratio);
    if d.unreliable {
        println!("chain too short for a reliable comparison");
    }
    Ok(())
}
