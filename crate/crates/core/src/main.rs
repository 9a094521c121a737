use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;

use hetgp::artifact::ModelArtifact;
use hetgp::benchmark::{run_benchmark, BenchmarkConfig, Method, Suite};
use hetgp::datasets::{load_csv, load_inputs, write_csv, Column, SimSuite, Standardization};
use hetgp::error::Error;
use hetgp::model_select::{kfold_mlpd, optimize_hyperparams, HyperConfig, Tier};

/// Gaussian-process regression with input-dependent noise and signal variance.
#[derive(Parser)]
#[command(name = "hetgp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV file and write it as JSON.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Cross-validated MLPD of a model tier.
    Eval(EvalArgs),
    /// Generate a simulated train/test pair.
    Simulate(SimulateArgs),
    /// Run the MLPD benchmark over repetitions or folds.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated input columns (names or zero-based indices).
    #[arg(long, value_delimiter = ',', required = true)]
    x_cols: Vec<String>,
    #[arg(long)]
    y_col: String,
    /// The file has no header row.
    #[arg(long)]
    no_header: bool,
}

#[derive(Args)]
struct SearchArgs {
    /// gp, ep-n or ep-mn.
    #[arg(long)]
    model: Tier,
    /// Per-dimension length-scales for the signal process.
    #[arg(long)]
    ard: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Optimizer restarts.
    #[arg(long)]
    starts: Option<usize>,
    /// Objective evaluations per restart for EP tiers.
    #[arg(long)]
    max_evals: Option<usize>,
    #[arg(long)]
    no_standardize: bool,
}

impl SearchArgs {
    fn config(&self) -> HyperConfig {
        let mut c = HyperConfig { ard: self.ard, seed: self.seed, ..HyperConfig::default() };
        if let Some(d) = self.damping {
            c.ep.damping = d;
            c.ep.min_damping = c.ep.min_damping.min(d);
        }
        if let Some(m) = self.max_iter {
            c.ep.max_iter = m;
        }
        if let Some(s) = self.starts {
            c.starts = s;
        }
        if let Some(m) = self.max_evals {
            c.max_evals_ep = m;
        }
        c
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Input columns; the first columns of the file by default.
    #[arg(long, value_delimiter = ',')]
    x_cols: Vec<String>,
    #[arg(long)]
    y_col: Option<String>,
    /// Add the log predictive density of the `--y-col` values.
    #[arg(long)]
    with_density: bool,
    #[arg(long)]
    no_header: bool,
    /// Output CSV; standard output by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// sim1 or sim2.
    #[arg(long)]
    suite: String,
    /// Training rows; 200 for sim1 and 150 for sim2 by default.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Writes `<prefix>_train.csv` and `<prefix>_test.csv`.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    suite: Suite,
    /// Comma-separated methods: gp, ep-n, ep-mn, ep-mc-n, ep-mc-mn.
    #[arg(long, value_delimiter = ',', default_value = "gp,ep-n,ep-mn")]
    methods: Vec<Method>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    max_evals: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Ok,
    /// Finished, but with non-convergence or partial failures.
    Warned,
}

fn columns(v: &[String]) -> Vec<Column> {
    v.iter().map(|s| Column::from(s.as_str())).collect()
}

fn fit(a: FitArgs) -> Result<Outcome, Error> {
    let ds = load_csv(&a.data.data, &columns(&a.data.x_cols), &Column::from(a.data.y_col.as_str()), !a.data.no_header)?;
    let t = if a.search.no_standardize { Standardization::identity(ds.dim()) } else { Standardization::fit(&ds)? };
    let s = t.apply(&ds);
    let cfg = a.search.config();
    let fit = optimize_hyperparams(s.x.as_ref(), &s.y, a.search.model, &cfg, None)?;
    let art = ModelArtifact::new(&fit, cfg.ard, t, s.x.as_ref(), &s.y);
    art.save(&a.out)?;
    println!("model: {}", art.model_kind);
    println!("log evidence: {:.6}", art.log_evidence);
    for (n, v) in art.parameter_names.iter().zip(&art.hyperparameters) {
        println!("  {n} = {v:.6}");
    }
    if let Some(ep) = &art.ep {
        println!("EP: {} after {} iterations", if ep.converged { "converged" } else { "NOT converged" }, ep.iterations);
    }
    println!("optimizer: {} evaluations, {:.1}s", fit.evals, fit.seconds);
    println!("written to {}", a.out.display());
    Ok(if art.converged() { Outcome::Ok } else { Outcome::Warned })
}

fn predict(a: PredictArgs) -> Result<Outcome, Error> {
    if a.with_density && a.y_col.is_none() {
        return Err(Error::Input("--with-density requires --y-col".into()));
    }
    let art = ModelArtifact::load(&a.model_file)?;
    let xc: Vec<Column> = if a.x_cols.is_empty() { (0..art.training.cols).map(Column::Index).collect() } else { columns(&a.x_cols) };
    let header = !a.no_header;
    let (x, y) = match &a.y_col {
        Some(yc) => {
            let ds = load_csv(&a.data, &xc, &Column::from(yc.as_str()), header)?;
            (ds.x, Some(ds.y))
        }
        None => (load_inputs(&a.data, &xc, header)?, None),
    };
    let pred = art.predict(&x)?;
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let mut head: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    head.extend(["mean_y", "var_y", "lower95", "upper95"].map(String::from));
    if a.with_density {
        head.push("log_density".into());
    }
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(&head).map_err(io)?;
    for (i, p) in pred.iter().enumerate() {
        let (lo, hi) = p.interval95();
        let mut row: Vec<String> = (0..x.ncols()).map(|j| x[(i, j)].to_string()).collect();
        row.extend([p.mean, p.var, lo, hi].map(|v| v.to_string()));
        if let (true, Some(y)) = (a.with_density, &y) {
            row.push(p.log_density(y[i]).to_string());
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(Outcome::Ok)
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<(), Error> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<Outcome, Error> {
    let ds = load_csv(&a.data.data, &columns(&a.data.x_cols), &Column::from(a.data.y_col.as_str()), !a.data.no_header)?;
    let cfg = a.search.config();
    let r = kfold_mlpd(&ds, a.folds, a.search.model, &cfg, a.search.seed, !a.search.no_standardize)?;
    for f in &r.per_fold {
        match f.mlpd {
            Some(m) => println!("fold {:>2}: {m:.4} ({} points, {:.1}s)", f.fold, f.n_test, f.seconds),
            None => println!("fold {:>2}: failed ({})", f.fold, f.error.as_deref().unwrap_or("unknown")),
        }
    }
    println!("MLPD: {:.4}", r.mlpd);
    println!("MLPD (standardized targets): {:.4}", r.mlpd_standardized);
    if let Some(p) = &a.out {
        write_json(p, &r)?;
    }
    Ok(if r.partial { Outcome::Warned } else { Outcome::Ok })
}

fn simulate(a: SimulateArgs) -> Result<Outcome, Error> {
    let suite = match a.suite.as_str() {
        "sim1" => SimSuite::Sim1,
        "sim2" => SimSuite::Sim2,
        s => return Err(Error::Input(format!("unknown suite {s:?}; expected sim1 or sim2"))),
    };
    let (train, test) = suite.generate(a.n.unwrap_or(suite.default_train_size()), a.seed)?;
    let tp = format!("{}_train.csv", a.out_prefix);
    let sp = format!("{}_test.csv", a.out_prefix);
    write_csv(&tp, &train)?;
    write_csv(&sp, &test)?;
    println!("{} training rows -> {tp}", train.len());
    println!("{} test rows -> {sp}", test.len());
    Ok(Outcome::Ok)
}

fn benchmark(a: BenchmarkArgs) -> Result<Outcome, Error> {
    let mut cfg = BenchmarkConfig::new(a.suite);
    cfg.methods = a.methods;
    cfg.seed = a.seed;
    cfg.n_train = a.n;
    cfg.folds = a.folds;
    if let Some(r) = a.repetitions {
        cfg.repetitions = r;
    }
    if let Some(s) = a.starts {
        cfg.hyper.starts = s;
    }
    if let Some(m) = a.max_evals {
        cfg.hyper.max_evals_ep = m;
    }
    let report = run_benchmark(&cfg, |rep, recs| {
        for r in recs {
            match r.mlpd {
                Some(m) => eprintln!("repetition {rep} {}: {m:.4} ({:.1}s)", r.method, r.seconds),
                None => eprintln!("repetition {rep} {}: failed", r.method),
            }
        }
    })?;
    print!("{}", report.table());
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    let partial = report.runs.iter().any(|r| r.mlpd.is_none() || r.error.is_some());
    Ok(if partial { Outcome::Warned } else { Outcome::Ok })
}

fn configure_threads() {
    if let Ok(v) = std::env::var("HETGP_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    warn!("could not set thread count: {e}");
                }
            }
            _ => warn!("ignoring HETGP_THREADS={v:?}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    configure_threads();
    let res = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Simulate(a) => simulate(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match res {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Warned) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
