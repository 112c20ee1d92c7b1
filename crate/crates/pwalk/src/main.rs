use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use pwalk::config::{ConfigError, ExperimentConfig};
use pwalk::report::{self, Timing};
use pwalk::runner;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "pwalk", version, about = "Monte Carlo checks of limit theorems for perturbed random walks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a config and check the experiment's hypotheses without simulating.
    Validate { config: PathBuf },
    /// Run an experiment and write report.json plus one CSV per check.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Sample a limit object, e.g. `limit-sample type=inverse_record a=1 b=0.5 mu=0 u=1`.
    LimitSample {
        /// `key=value` sampler parameters; `u_grid=0.5,1,2` sets the grid.
        #[arg(required = true)]
        params: Vec<String>,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Print the checks of a finished run; exit status reflects them.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct RunOpts {
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads (results do not depend on this).
    #[arg(long, env = "PWALK_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => validate(&config),
        Command::Run { config, opts } => match load(&config) {
            Ok(cfg) => run(cfg, opts),
            Err(code) => code,
        },
        Command::LimitSample { params, opts } => match limit_config(&params) {
            Ok(cfg) => run(cfg, opts),
            Err(e) => config_error(&e),
        },
        Command::Report { dir } => match report::read_report(&dir) {
            Ok(r) => {
                print!("{}", report::summary(&r));
                if r.pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_CHECK_FAILED)
                }
            }
            Err(e) => {
                eprintln!("error: cannot read report in {}: {e}", dir.display());
                ExitCode::from(EXIT_RUNTIME)
            }
        },
    }
}

fn config_error(e: &ConfigError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })?;
    ExperimentConfig::from_toml(&text).map_err(|e| config_error(&e))
}

fn validate(path: &Path) -> ExitCode {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match cfg.plan() {
        Ok(plan) => {
            println!("ok: {} ({} replications)", cfg.experiment.id(), cfg.replications);
            if let Some(m) = &plan.model {
                let f = m.hypothesis_flags();
                println!("mu = {}, sigma2 = {:?}", m.mu(), m.sigma2());
                println!(
                    "eta_plus_integrable={} eta_minus_integrable={} weak_lln_tail={} sigma2_finite={} root_moment_plus={}",
                    f.eta_plus_integrable, f.eta_minus_integrable, f.weak_lln_tail, f.sigma2_finite, f.root_moment_plus
                );
            }
            println!("config hash {}", cfg.config_hash());
            ExitCode::SUCCESS
        }
        Err(e) => config_error(&e),
    }
}

/// Builds a `limit_sample` config from `key=value` pairs.
fn limit_config(params: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut top = String::from("replications = 10000\nmaster_seed = 0\n");
    let mut sampler = String::new();
    for p in params {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("expected key=value, got {p:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "u_grid" {
            top.push_str(&format!("u_grid = [{v}]\n"));
        } else if v.parse::<f64>().is_ok() {
            sampler.push_str(&format!("{k} = {}\n", toml_number(v)));
        } else {
            sampler.push_str(&format!("{k} = {:?}\n", v));
        }
    }
    let text = format!("{top}[experiment]\nkind = \"limit_sample\"\n[experiment.sampler]\n{sampler}");
    ExperimentConfig::from_toml(&text)
}

/// Integers are written as floats so every parameter deserializes as f64.
fn toml_number(v: &str) -> String {
    if v.contains(['.', 'e', 'E']) || v.contains("inf") || v.contains("nan") {
        v.to_string()
    } else {
        format!("{v}.0")
    }
}

fn run(mut cfg: ExperimentConfig, opts: RunOpts) -> ExitCode {
    if let Some(s) = opts.seed {
        cfg.master_seed = s;
    }
    if let Some(n) = opts.reps {
        cfg.replications = n;
    }
    let plan = match cfg.plan() {
        Ok(p) => p,
        Err(e) => return config_error(&e),
    };
    let workers = opts
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out_dir = opts
        .out
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("pwalk-out").join(cfg.experiment.id()));

    let start = Instant::now();
    let outcome = match runner::execute(&plan, workers) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let timing = Timing { wall_seconds: start.elapsed().as_secs_f64(), workers };
    if let Err(e) = report::write_outputs(&out_dir, &outcome.report, &outcome.artifacts, Some(&timing)) {
        eprintln!("error: writing {}: {e}", out_dir.display());
        return ExitCode::from(EXIT_RUNTIME);
    }
    print!("{}", report::summary(&outcome.report));
    println!("wrote {}", out_dir.display());
    if outcome.report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}
