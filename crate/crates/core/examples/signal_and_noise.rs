//! Latent noise and signal-magnitude processes on the second simulated
//! problem, and the cost of dropping the coupling between `f̃` and `φ`.

use hetgp::datasets::SimSuite;
use hetgp::ep::{run_ep, EpConfig, EpModel};
use hetgp::kernels::KernelParams;
use hetgp::predict::{latent_predictive, predictive_y};

fn main() -> Result<(), hetgp::error::Error> {
    let (train, test) = SimSuite::Sim2.generate(150, 1)?;
    let model = EpModel::noise_signal(
        KernelParams::isotropic(0.0, 0.4),
        KernelParams::isotropic(2.0, 2.0).with_mean(-1.0),
        KernelParams::isotropic(0.3, 1.0).with_mean(-0.3),
    );
    let cfg = EpConfig::default();

    let coupled = run_ep(&model, train.x.as_ref(), &train.y, &cfg)?;
    let factorized = run_ep(&model.clone().factorized(), train.x.as_ref(), &train.y, &cfg)?;
    println!("coupled:    {} sweeps, converged {}, log Z {:.3}", coupled.iterations, coupled.converged, coupled.log_z_ep);
    println!("factorized: {} sweeps, converged {}, log Z {:.3}", factorized.iterations, factorized.converged, factorized.log_z_ep);

    let lat = latent_predictive(&model, train.x.as_ref(), &coupled.posterior, test.x.as_ref())?;
    let truth = test.truth.as_ref().expect("simulated");
    println!("\n{:>7} {:>8} {:>8} {:>10} {:>10}", "x", "mean", "truth", "pred sd", "noise sd");
    for i in (0..test.len()).step_by(111) {
        let p = predictive_y(&lat.points[i]);
        println!("{:>7.2} {:>8.3} {:>8.3} {:>10.3} {:>10.3}", test.x[(i, 0)], p.mean, truth.mean[i], p.sd(), truth.noise_sd[i]);
    }
    Ok(())
}
