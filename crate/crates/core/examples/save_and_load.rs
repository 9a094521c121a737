//! Fit, save to JSON, reload and predict.

use faer::Mat;
use hetgp::artifact::{predict_original, ModelArtifact};
use hetgp::datasets::{standardize, SimSuite};
use hetgp::model_select::{optimize_hyperparams, HyperConfig, Tier};

fn main() -> Result<(), hetgp::error::Error> {
    let (train, _) = SimSuite::Sim2.generate(60, 2)?;
    let (s, t) = standardize(&train)?;
    let cfg = HyperConfig { max_evals_ep: 40, ..HyperConfig::desk_scale() };
    let fit = optimize_hyperparams(s.x.as_ref(), &s.y, Tier::EpNoise, &cfg, None)?;

    let art = ModelArtifact::new(&fit, false, t.clone(), s.x.as_ref(), &s.y);
    let path = std::env::temp_dir().join("hetgp-model.json");
    art.save(&path)?;
    let loaded = ModelArtifact::load(&path)?;
    println!("saved {} model ({} training rows, fingerprint {}…)", loaded.model_kind, loaded.training.rows, &loaded.training.fingerprint[..12]);

    let xs = Mat::from_fn(5, 1, |i, _| -6.0 + 3.0 * i as f64);
    let before = predict_original(&fit.model, &t, &xs)?;
    let after = loaded.predict(&xs)?;
    for (a, b) in before.iter().zip(&after) {
        let (lo, hi) = b.interval95();
        println!("mean {:8.4}  95% [{lo:8.4}, {hi:8.4}]  identical {}", b.mean, a == b);
    }
    Ok(())
}
