//! Input-dependent noise on the first simulated problem: the exact GP against
//! EP with a latent log-noise process.

use hetgp::datasets::SimSuite;
use hetgp::model_select::{optimize_hyperparams, test_mlpd, HyperConfig, Tier};

fn main() -> Result<(), hetgp::error::Error> {
    let (train, test) = SimSuite::Sim1.generate(200, 7)?;
    let truth = test.truth.as_ref().expect("simulated");
    let cfg = HyperConfig::desk_scale();

    for tier in [Tier::Gp, Tier::EpNoise] {
        let fit = optimize_hyperparams(train.x.as_ref(), &train.y, tier, &cfg, None)?;
        let pred = fit.model.predict(test.x.as_ref())?;
        let mlpd = test_mlpd(&pred, &truth.mean, &truth.noise_sd);
        println!("{tier:>5}: log evidence {:8.3}  test MLPD {mlpd:.4}  ({:.1}s)", fit.model.log_evidence(), fit.seconds);
        for i in [0, 250, 500, 750, 999] {
            println!("        x = {:6.2}  predictive sd {:.3}  true noise sd {:.3}", test.x[(i, 0)], pred[i].sd(), truth.noise_sd[i]);
        }
    }
    Ok(())
}
