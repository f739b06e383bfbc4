//! Search runs and their artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use vanloan::optimize::{multi_start_from, random_seeds};
use vanloan::{ControlSequence, MultiStartResult};

use crate::config::{batch_size, LoadedConfig};
use crate::error::{CliError, CliResult};
use crate::output::{emit_basis_rotated, format_controls, format_history, format_spectrum, parse_controls, spectrum};
use crate::problem::{MemberMetrics, Problem};

pub const ALPHA_FILE: &str = "alpha.dat";
pub const WAVEFORM_FILE: &str = "waveform.dat";
pub const ROTATED_FILE: &str = "waveform_rotated.dat";
pub const HISTORY_FILE: &str = "history.dat";
pub const SPECTRUM_FILE: &str = "spectrum.dat";
pub const REPORT_FILE: &str = "report.json";

/// Command-line overrides of the config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seeds: Option<usize>,
    pub rng_seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedRecord {
    pub index: usize,
    pub phi: Option<f64>,
    pub evals: usize,
    pub termination: Option<String>,
    pub evals_to_threshold: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub version: String,
    pub problem: String,
    pub grid: crate::problem::Grid,
    pub best_phi: f64,
    pub threshold: f64,
    pub success: bool,
    pub termination: String,
    pub best_seed: usize,
    pub evals: usize,
    pub wall_time_s: f64,
    pub members: Vec<MemberMetrics>,
    pub mean_metrics: Vec<(String, f64)>,
    pub seeds: Vec<SeedRecord>,
    pub warnings: Vec<String>,
    pub config: String,
}

/// Everything a finished search produced.
pub struct RunOutcome {
    pub report: RunReport,
    pub alpha: ControlSequence,
    pub waveform: ControlSequence,
    pub history: Vec<f64>,
}

/// Seeds in rounds of `batch`, stopping after the first round whose best
/// value meets the threshold.
pub fn search(problem: &Problem, batch: usize) -> CliResult<MultiStartResult> {
    let seeds = random_seeds(&problem.search, &problem.grid.opt_durations())?;
    let mut best: Option<MultiStartResult> = None;
    for (round, chunk) in seeds.chunks(batch.max(1)).enumerate() {
        let mut r = multi_start_from(&problem.spec, chunk, &problem.search)?;
        let offset = round * batch;
        r.best.seed_index += offset;
        for s in &mut r.seeds {
            s.index += offset;
        }
        best = Some(match best {
            None => r,
            Some(mut b) => {
                b.seeds.extend(r.seeds);
                if r.best.best_phi > b.best.best_phi {
                    b.best = r.best;
                }
                b
            }
        });
        if best.as_ref().is_some_and(|b| b.best.best_phi >= problem.search.threshold) {
            break;
        }
    }
    Ok(best.expect("at least one seed"))
}

pub fn run(loaded: &mut LoadedConfig, opts: &RunOptions) -> CliResult<RunOutcome> {
    let mut problem = loaded.build()?;
    if let Some(k) = opts.seeds {
        if k == 0 {
            return crate::error::config_err("--seeds", "need at least one seed");
        }
        problem.search.seeds = k;
    }
    if let Some(s) = opts.rng_seed {
        problem.search.rng_seed = s;
    }
    let batch = batch_size(&loaded.config, problem.search.seeds);
    let start = Instant::now();
    let result = search(&problem, batch)?;
    let wall = start.elapsed().as_secs_f64();
    let best = result.best;
    let members = problem.member_metrics(&best.best)?;
    let waveform = problem.spec.waveform(&best.best)?;
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").into(),
        problem: problem.name.clone(),
        grid: problem.grid.clone(),
        best_phi: best.best_phi,
        threshold: problem.search.threshold,
        success: best.best_phi >= problem.search.threshold,
        termination: best.termination.as_str().into(),
        best_seed: best.seed_index,
        evals: best.evals,
        wall_time_s: wall,
        mean_metrics: problem.mean_metrics(&members),
        members,
        seeds: result
            .seeds
            .iter()
            .map(|s| SeedRecord {
                index: s.index,
                phi: s.phi,
                evals: s.evals,
                termination: s.termination.map(|t| t.as_str().to_string()),
                evals_to_threshold: s.evals_to_threshold,
                error: s.error.clone(),
            })
            .collect(),
        warnings: loaded.warnings.clone(),
        config: loaded.raw.clone(),
    };
    Ok(RunOutcome { report, alpha: best.best, waveform, history: best.history })
}

/// Output directory: command line, then config, then `./out`.
pub fn output_dir(loaded: &LoadedConfig, opts: &RunOptions) -> PathBuf {
    if let Some(d) = &opts.out {
        return d.clone();
    }
    match &loaded.config.output.dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => loaded.base_dir.join(d),
        None => PathBuf::from("out"),
    }
}

pub fn write_artifacts(dir: &Path, outcome: &RunOutcome) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(ALPHA_FILE), format_controls(&outcome.alpha))?;
    std::fs::write(dir.join(WAVEFORM_FILE), format_controls(&outcome.waveform))?;
    std::fs::write(dir.join(HISTORY_FILE), format_history(&outcome.history))?;
    if outcome.waveform.channels() == 2 {
        std::fs::write(dir.join(ROTATED_FILE), format_controls(&emit_basis_rotated(&outcome.waveform)?))?;
        if outcome.waveform.steps() % 2 == 0 {
            std::fs::write(dir.join(SPECTRUM_FILE), format_spectrum(&spectrum(&outcome.waveform)?))?;
        }
    }
    let json = serde_json::to_string_pretty(&outcome.report).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(dir.join(REPORT_FILE), json + "\n")?;
    Ok(())
}

/// Phi and member metrics recomputed from a config and an `alpha.dat`.
pub fn recompute(loaded: &mut LoadedConfig, alpha_path: &Path) -> CliResult<(f64, Vec<MemberMetrics>)> {
    let problem = loaded.build()?;
    let text = std::fs::read_to_string(alpha_path)?;
    let alpha = parse_controls(&text)?;
    let phi = problem.spec.evaluate(&alpha)?;
    Ok((phi, problem.member_metrics(&alpha)?))
}
