//! Ten-fold cross-validated MLPD on the motorcycle data.

use hetgp::datasets::motorcycle;
use hetgp::model_select::{kfold_mlpd, HyperConfig, Tier};

fn main() -> Result<(), hetgp::error::Error> {
    let data = motorcycle();
    let cfg = HyperConfig::desk_scale();
    for tier in [Tier::Gp, Tier::EpNoise] {
        let r = kfold_mlpd(&data, 10, tier, &cfg, 0, true)?;
        println!("{tier:>5}: MLPD {:.4} (standardized targets {:.4}) in {:.1}s", r.mlpd, r.mlpd_standardized, r.seconds);
        let folds: Vec<String> = r.per_fold.iter().map(|f| f.mlpd.map_or("failed".into(), |m| format!("{m:.2}"))).collect();
        println!("       folds: {}", folds.join(" "));
    }
    Ok(())
}
