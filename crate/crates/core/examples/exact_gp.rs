//! Type-II maximum likelihood GP on the motorcycle data.

use faer::Mat;
use hetgp::datasets::{motorcycle, standardize};
use hetgp::model_select::{optimize_hyperparams, FittedModel, HyperConfig, Tier};

fn main() -> Result<(), hetgp::error::Error> {
    let data = motorcycle();
    let (s, t) = standardize(&data)?;
    let fit = optimize_hyperparams(s.x.as_ref(), &s.y, Tier::Gp, &HyperConfig::default(), None)?;
    let FittedModel::Gp(gp) = &fit.model else { unreachable!() };

    println!("log marginal likelihood {:.4}", gp.log_marginal());
    for (name, v) in Tier::Gp.parameter_names(1, false).iter().zip(&fit.params) {
        println!("{name:>20} {v:8.4}");
    }
    println!("gradient {:?}", gp.lml_gradient()?);

    let times = Mat::from_fn(8, 1, |i, _| 5.0 + 7.0 * i as f64);
    let pred = hetgp::artifact::predict_original(&fit.model, &t, &times)?;
    println!("\n{:>6} {:>9} {:>9}", "ms", "mean", "sd");
    for (i, p) in pred.iter().enumerate() {
        println!("{:>6} {:>9.2} {:>9.2}", times[(i, 0)], p.mean, p.sd());
    }
    Ok(())
}
