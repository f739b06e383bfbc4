//! Bounded multi-start conjugate-gradient ascent.
//!
//! Amplitudes live in a box per channel. The search runs on angles with
//! a = lo + (hi - lo) sin^2(theta), which keeps every iterate feasible
//! and the landscape smooth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{arg_err, Error, Result};
use crate::objective::ObjectiveSpec;
use crate::propagate::ControlSequence;

/// Anything with a value and gradient over control sequences.
pub trait Objective: Sync {
    fn value(&self, alpha: &ControlSequence) -> Result<f64>;
    fn value_and_gradient(&self, alpha: &ControlSequence) -> Result<(f64, Vec<Vec<f64>>)>;
}

impl Objective for ObjectiveSpec {
    fn value(&self, alpha: &ControlSequence) -> Result<f64> {
        self.evaluate(alpha)
    }

    fn value_and_gradient(&self, alpha: &ControlSequence) -> Result<(f64, Vec<Vec<f64>>)> {
        ObjectiveSpec::value_and_gradient(self, alpha)
    }
}

/// Replaces the gradient of `inner` by central differences.
pub struct FiniteDifference<'a, O: Objective> {
    pub inner: &'a O,
    pub h: f64,
}

impl<O: Objective> Objective for FiniteDifference<'_, O> {
    fn value(&self, alpha: &ControlSequence) -> Result<f64> {
        self.inner.value(alpha)
    }

    fn value_and_gradient(&self, alpha: &ControlSequence) -> Result<(f64, Vec<Vec<f64>>)> {
        let v = self.inner.value(alpha)?;
        let g = crate::oracle::finite_diff(|x| self.inner.value(x), alpha, self.h)?;
        Ok((v, g))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearch {
    /// Sufficient-increase constant.
    pub c1: f64,
    /// Length of the very first trial step in angle space.
    pub initial_step: f64,
    pub max_trials: usize,
    pub expand: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch { c1: 1e-4, initial_step: 0.1, max_trials: 40, expand: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub seeds: usize,
    pub max_evals_phase1: usize,
    pub threshold: f64,
    /// (lo, hi) per channel.
    pub bounds: Vec<(f64, f64)>,
    pub rng_seed: u64,
    pub line: LineSearch,
    /// Keep improving after the threshold until stagnation.
    pub polish: bool,
    pub max_evals_total: usize,
    pub stagnation_tol: f64,
    pub stagnation_window: usize,
    pub verbose: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            seeds: 40,
            max_evals_phase1: 1000,
            threshold: 0.9999,
            bounds: vec![(-1.0, 1.0); 2],
            rng_seed: 0,
            line: LineSearch::default(),
            polish: true,
            max_evals_total: 5000,
            stagnation_tol: 1e-15,
            stagnation_window: 5,
            verbose: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.bounds.len() != channels {
            return arg_err(format!("{} bound pairs for {} channels", self.bounds.len(), channels));
        }
        if self.bounds.iter().any(|&(lo, hi)| !lo.is_finite() || !hi.is_finite() || !(hi > lo)) {
            return arg_err("bounds must be finite with lo < hi");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return arg_err("threshold must lie in (0, 1)");
        }
        if self.stagnation_window == 0 {
            return arg_err("stagnation window must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Threshold,
    EvalBudget,
    MachinePrecision,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Threshold => "threshold",
            Termination::EvalBudget => "evalBudget",
            Termination::MachinePrecision => "machinePrecision",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub best: ControlSequence,
    pub best_phi: f64,
    /// Best-so-far value after each iteration, starting with the seed.
    pub history: Vec<f64>,
    pub termination: Termination,
    pub evals: usize,
    /// Evaluations spent when the threshold was first met.
    pub evals_to_threshold: Option<usize>,
    pub seed_index: usize,
}

/// Uniform draws inside the bounds, one sequence per seed.
pub fn random_seeds(config: &SearchConfig, durations: &[f64]) -> Result<Vec<ControlSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    (0..config.seeds)
        .map(|_| {
            let amps = config
                .bounds
                .iter()
                .map(|&(lo, hi)| (0..durations.len()).map(|_| rng.gen_range(lo..=hi)).collect())
                .collect();
            ControlSequence::new(amps, durations.to_vec())
        })
        .collect()
}

struct Squash<'a> {
    bounds: &'a [(f64, f64)],
    steps: usize,
}

impl Squash<'_> {
    fn to_alpha(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(k, th)| {
                let (lo, hi) = self.bounds[k / self.steps];
                (lo + (hi - lo) * th.sin().powi(2)).clamp(lo, hi)
            })
            .collect()
    }

    fn to_theta(&self, alpha: &[f64]) -> Vec<f64> {
        alpha
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let (lo, hi) = self.bounds[k / self.steps];
                ((a - lo) / (hi - lo)).clamp(0.0, 1.0).sqrt().asin()
            })
            .collect()
    }

    /// Chain rule d/d theta = (hi - lo) sin(2 theta) d/d alpha.
    fn pull(&self, theta: &[f64], grad_alpha: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(grad_alpha)
            .enumerate()
            .map(|(k, (th, g))| {
                let (lo, hi) = self.bounds[k / self.steps];
                (hi - lo) * (2.0 * th).sin() * g
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Evaluator<'a, O: Objective> {
    obj: &'a O,
    squash: Squash<'a>,
    template: &'a ControlSequence,
    evals: usize,
}

impl<O: Objective> Evaluator<'_, O> {
    fn eval(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evals += 1;
        let alpha = self.template.with_flat(&self.squash.to_alpha(theta));
        let (v, g) = self.obj.value_and_gradient(&alpha)?;
        let g: Vec<f64> = g.into_iter().flatten().collect();
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("objective at iterate {:?}", alpha.flat())));
        }
        Ok((v, self.squash.pull(theta, &g)))
    }
}

/// Conjugate-gradient ascent from one seed.
pub fn maximize<O: Objective>(obj: &O, seed: &ControlSequence, config: &SearchConfig) -> Result<SearchResult> {
    maximize_indexed(obj, seed, config, 0)
}

fn maximize_indexed<O: Objective>(obj: &O, seed: &ControlSequence, config: &SearchConfig, index: usize) -> Result<SearchResult> {
    config.validate(seed.channels())?;
    let squash = Squash { bounds: &config.bounds, steps: seed.steps() };
    let mut theta = squash.to_theta(&seed.flat());
    let mut ev = Evaluator { obj, squash, template: seed, evals: 0 };
    let (mut phi, mut g) = ev.eval(&theta)?;
    let mut history = vec![phi];
    let n = theta.len();
    let mut dir = g.clone();
    let mut g_prev = g.clone();
    let mut step = config.line.initial_step / dot(&g, &g).sqrt().max(1e-300);
    let mut since_restart = 0usize;
    let mut evals_to_threshold = (phi >= config.threshold).then_some(ev.evals);
    let mut polish_iters = 0usize;

    let termination = loop {
        let reached = phi >= config.threshold;
        if reached && evals_to_threshold.is_none() {
            evals_to_threshold = Some(ev.evals);
        }
        if reached && !config.polish {
            break Termination::Threshold;
        }
        let budget = if reached { config.max_evals_total } else { config.max_evals_phase1 };
        if ev.evals >= budget {
            break Termination::EvalBudget;
        }
        let gnorm = dot(&g, &g).sqrt();
        let stagnant = history.len() > config.stagnation_window && {
            let old = history[history.len() - 1 - config.stagnation_window];
            (phi - old).abs() <= config.stagnation_tol * phi.abs().max(1.0)
        };
        if gnorm == 0.0 || gnorm < 1e-14 * phi.abs().max(1.0) || stagnant {
            break if reached && polish_iters == 0 { Termination::Threshold } else { Termination::MachinePrecision };
        }

        // Polak-Ribiere+ with periodic restarts
        if since_restart > 0 {
            let denom = dot(&g_prev, &g_prev);
            let beta = if denom > 0.0 { (dot(&g, &g) - dot(&g, &g_prev)) / denom } else { 0.0 };
            let beta = beta.max(0.0);
            for (d, gi) in dir.iter_mut().zip(&g) {
                *d = gi + beta * *d;
            }
        }
        let mut slope = dot(&g, &dir);
        if since_restart >= n || slope <= 0.0 {
            dir.clone_from(&g);
            slope = dot(&g, &g);
            since_restart = 0;
        }

        match line_search(&mut ev, &theta, phi, &dir, slope, step, &config.line, budget)? {
            Some((s, t_new, phi_new, g_new)) => {
                step = s;
                theta = t_new;
                phi = phi_new;
                g_prev = std::mem::replace(&mut g, g_new);
                since_restart += 1;
                if reached {
                    polish_iters += 1;
                }
            }
            None => {
                if since_restart == 0 {
                    break if reached && polish_iters == 0 { Termination::Threshold } else { Termination::MachinePrecision };
                }
                // retry along the gradient
                since_restart = n;
                step = config.line.initial_step / gnorm;
            }
        }
        history.push(phi);
        if config.verbose {
            eprintln!("seed={} iter={} phi={:.15} evals={}", index, history.len() - 1, phi, ev.evals);
        }
    };

    let best = seed.with_flat(&ev.squash.to_alpha(&theta));
    let best_phi = obj.value(&best)?;
    Ok(SearchResult { best, best_phi, history, termination, evals: ev.evals, evals_to_threshold, seed_index: index })
}

type Accepted = (f64, Vec<f64>, f64, Vec<f64>);

/// Armijo search along `dir` with expansion and quadratic backtracking.
#[allow(clippy::too_many_arguments)]
fn line_search<O: Objective>(
    ev: &mut Evaluator<'_, O>,
    theta: &[f64],
    phi0: f64,
    dir: &[f64],
    slope: f64,
    s0: f64,
    ls: &LineSearch,
    budget: usize,
) -> Result<Option<Accepted>> {
    let at = |s: f64| -> Vec<f64> { theta.iter().zip(dir).map(|(t, d)| t + s * d).collect() };
    let armijo = |s: f64, v: f64| v > phi0 && v >= phi0 + ls.c1 * s * slope;
    let mut s = s0;
    let mut best: Option<Accepted> = None;
    for _ in 0..ls.max_trials {
        if ev.evals >= budget {
            break;
        }
        let t = at(s);
        let (v, g) = ev.eval(&t)?;
        if armijo(s, v) {
            let improved = best.as_ref().is_none_or(|b| v > b.2);
            if !improved {
                break;
            }
            best = Some((s, t, v, g));
            s *= ls.expand;
            continue;
        }
        if best.is_some() {
            break;
        }
        // quadratic model through phi0, slope and phi(s)
        let curv = v - phi0 - slope * s;
        let mut s_new = if curv < 0.0 { -slope * s * s / (2.0 * curv) } else { 0.5 * s };
        s_new = s_new.clamp(0.1 * s, 0.5 * s);
        if s_new * dir.iter().fold(0.0f64, |m, d| m.max(d.abs())) < 1e-16 {
            break;
        }
        s = s_new;
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct SeedSummary {
    pub index: usize,
    pub phi: Option<f64>,
    pub evals: usize,
    pub termination: Option<Termination>,
    pub evals_to_threshold: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct MultiStartResult {
    pub best: SearchResult,
    pub seeds: Vec<SeedSummary>,
}

/// Runs `maximize` from every random seed and keeps the best (ties go
/// to the lowest seed index).
pub fn multi_start<O: Objective>(obj: &O, durations: &[f64], config: &SearchConfig) -> Result<MultiStartResult> {
    let seeds = random_seeds(config, durations)?;
    multi_start_from(obj, &seeds, config)
}

pub fn multi_start_from<O: Objective>(obj: &O, seeds: &[ControlSequence], config: &SearchConfig) -> Result<MultiStartResult> {
    if seeds.is_empty() {
        return arg_err("no seeds");
    }
    let runs: Vec<Result<SearchResult>> =
        seeds.par_iter().enumerate().map(|(i, s)| maximize_indexed(obj, s, config, i)).collect();
    let mut summaries = Vec::with_capacity(runs.len());
    let mut best: Option<SearchResult> = None;
    let mut errors = Vec::new();
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok(res) => {
                summaries.push(SeedSummary {
                    index: i,
                    phi: Some(res.best_phi),
                    evals: res.evals,
                    termination: Some(res.termination),
                    evals_to_threshold: res.evals_to_threshold,
                    error: None,
                });
                if best.as_ref().is_none_or(|b| res.best_phi > b.best_phi) {
                    best = Some(res);
                }
            }
            Err(e) => {
                errors.push(format!("seed {}: {}", i, e));
                summaries.push(SeedSummary {
                    index: i,
                    phi: None,
                    evals: 0,
                    termination: None,
                    evals_to_threshold: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    match best {
        Some(best) => Ok(MultiStartResult { best, seeds: summaries }),
        None => Err(Error::InvalidArgument(format!("all seeds failed: {}", errors.join("; ")))),
    }
}
