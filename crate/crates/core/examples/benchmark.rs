//! A short run of the simulated benchmark with a JSON report.

use hetgp::benchmark::{run_benchmark, BenchmarkConfig, Method, Suite};
use hetgp::model_select::HyperConfig;

fn main() -> Result<(), hetgp::error::Error> {
    let mut cfg = BenchmarkConfig::new(Suite::Sim2);
    cfg.repetitions = 3;
    cfg.methods = vec![Method::Gp, Method::EpNoise];
    cfg.hyper = HyperConfig::desk_scale();
    let report = run_benchmark(&cfg, |rep, recs| {
        for r in recs {
            match (r.mlpd, &r.error) {
                (Some(v), _) => eprintln!("repetition {rep} {}: MLPD {v:.4} ({:.1}s)", r.method, r.seconds),
                (None, e) => eprintln!("repetition {rep} {}: failed ({})", r.method, e.as_deref().unwrap_or("unknown")),
            }
        }
    })?;
    print!("{}", report.table());
    let path = std::env::temp_dir().join("hetgp-benchmark.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("report written to {}", path.display());
    Ok(())
}
