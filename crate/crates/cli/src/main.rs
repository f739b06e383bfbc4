use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use vanloan::noisemodel::{default_rate_seeds, parse_correlation_samples};
use vanloan::fit_expsum;
use vanloan_cli::config;
use vanloan_cli::error::{CliError, CliResult};
use vanloan_cli::run::{output_dir, recompute, run, write_artifacts, RunOptions};
use vanloan_cli::verify::{run_suite, SUITES};

/// Worker threads for seed-level and block-level parallelism.
const THREADS_VAR: &str = "VANLOAN_THREADS";

#[derive(Parser)]
#[command(name = "vanloan", version, about = "Pulse searches on Dyson terms computed from block matrix exponentials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-start search and write its data files.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of random seeds (overrides the config).
        #[arg(long)]
        seeds: Option<usize>,
        /// Seed of the random number generator (overrides the config).
        #[arg(long)]
        rng: Option<u64>,
    },
    /// Run an oracle-backed verification suite, or `all`.
    Verify {
        suite: String,
        /// Replaces every upper-bound tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Fit a sum of exponentials to correlation samples (tau, C(tau)).
    FitCorr {
        samples: PathBuf,
        #[arg(long)]
        terms: usize,
        /// Number of multi-start rate seeds.
        #[arg(long, default_value_t = 16)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        rng: u64,
    },
    /// Re-evaluate a config on a saved alpha file.
    Eval { config: PathBuf, alpha: PathBuf },
}

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Config { field: THREADS_VAR.into(), msg: format!("not a thread count: {:?}", raw) })?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Io(e.to_string()))
}

fn print_json(v: &impl serde::Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?);
    Ok(())
}

/// Exit code 0 on success, 1 when a search or check fell short.
fn dispatch(cmd: Command) -> CliResult<u8> {
    match cmd {
        Command::Run { config: path, out, seeds, rng } => {
            let mut loaded = config::load(&path)?;
            for w in &loaded.warnings {
                eprintln!("warning: {}", w);
            }
            let opts = RunOptions { out, seeds, rng_seed: rng };
            let outcome = run(&mut loaded, &opts)?;
            let dir = output_dir(&loaded, &opts);
            write_artifacts(&dir, &outcome)?;
            let r = &outcome.report;
            eprintln!(
                "{}: phi {:.10} (threshold {}), {} after {} evals, {:.1} s; files in {}",
                r.problem,
                r.best_phi,
                r.threshold,
                r.termination,
                r.evals,
                r.wall_time_s,
                dir.display()
            );
            for (name, v) in &r.mean_metrics {
                eprintln!("  {} = {:.4e}", name, v);
            }
            Ok(if r.success { 0 } else { 1 })
        }
        Command::Verify { suite, tol } => {
            let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite.as_str()] };
            let mut ok = true;
            let mut reports = Vec::new();
            for name in names {
                let r = run_suite(name, tol)?;
                ok &= r.pass;
                reports.push(r);
            }
            if reports.len() == 1 {
                print_json(&reports[0])?;
            } else {
                print_json(&reports)?;
            }
            Ok(if ok { 0 } else { 1 })
        }
        Command::FitCorr { samples, terms, starts, rng } => {
            let text = std::fs::read_to_string(&samples)?;
            let data = parse_correlation_samples(&text).map_err(CliError::in_field("samples"))?;
            let lo = data.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
            let hi = data.iter().map(|s| s.0).fold(0.0, f64::max);
            let seeds = default_rate_seeds(terms, (lo, hi), starts.max(1), rng);
            let fit = fit_expsum(&data, terms, &seeds)?;
            print_json(&json!({
                "terms": fit.terms.iter().map(|(c, d)| json!({"c": c, "d": d})).collect::<Vec<_>>(),
                "window": [fit.window.0, fit.window.1],
                "residual": fit.residual,
                "samples": fit.samples.len(),
            }))?;
            Ok(0)
        }
        Command::Eval { config: path, alpha } => {
            let mut loaded = config::load(&path)?;
            let (phi, members) = recompute(&mut loaded, &alpha)?;
            print_json(&json!({ "phi": phi, "members": members }))?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| dispatch(cli.command));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
