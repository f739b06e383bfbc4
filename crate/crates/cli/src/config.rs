//! Problem files (TOML) and their translation into a [`Problem`].
//!
//! A file either names a builtin (`problem = "dipolar"`) and optionally
//! overrides its grid and search settings, or sets `problem = "custom"`
//! and spells out matrices, systems, terms and ensemble members.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use vanloan::matcore::ops::{dipolar, lowering, raising, sigma_x, sigma_y, sigma_z};
use vanloan::transfer::{linear_transfer, opt_transfer_filter_first, FrequencyCurve, BANDPASS_STEEPNESS};
use vanloan::{
    build_expsum, build_f1, c, direct_sum, BlockRef, ComplexMatrix, DysonOperator, DysonSpec, EnsembleMember,
    GeneratorFamily, GradientMethod, ObjectiveSpec, ObjectiveTerm, ScalarWeight, SearchConfig,
};

use crate::builtins::{self, Overrides};
use crate::error::{config_err, CliError, CliResult};
use crate::problem::{Grid, Metric, Problem};

/// Relative slack before weights are renormalized.
const WEIGHT_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub problem: String,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Builtin broadband only.
    #[serde(default)]
    pub ensemble: Option<BuiltinEnsemble>,
    #[serde(default)]
    pub matrices: BTreeMap<String, MatrixDef>,
    #[serde(default)]
    pub systems: Vec<SystemDef>,
    #[serde(default)]
    pub terms: Vec<TermDef>,
    #[serde(default)]
    pub members: Vec<MemberDef>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub total_time: Option<f64>,
    pub steps: Option<usize>,
    pub pad: Option<usize>,
    pub dt: Option<f64>,
    pub dnu: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub seeds: Option<usize>,
    pub max_evals_phase1: Option<usize>,
    pub max_evals_total: Option<usize>,
    pub threshold: Option<f64>,
    pub rng_seed: Option<u64>,
    pub polish: Option<bool>,
    pub bounds: Option<Vec<[f64; 2]>>,
    /// Seeds per round; the run stops after the first round that meets
    /// the threshold. Defaults to all seeds in one round.
    pub batch: Option<usize>,
    /// "commutator" (default) or "augmented".
    pub gradient: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinEnsemble {
    pub gammas: Option<Vec<f64>>,
    pub lambda_file: Option<PathBuf>,
    pub phi_file: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDef {
    /// pauli-x, pauli-y, pauli-z, identity-2, raising, lowering,
    /// dipolar-2spin.
    pub builtin: Option<String>,
    pub re: Option<Vec<Vec<f64>>>,
    pub im: Option<Vec<Vec<f64>>>,
    /// Complex factor [re, im] applied last.
    pub scale: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum OperatorDef {
    Constant(String),
    Weighted { matrix: String, channel: usize },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDef {
    pub label: String,
    pub drift: Option<String>,
    pub controls: Vec<String>,
    pub operators: Vec<OperatorDef>,
    /// Complex rates [re, im] per operator for an exponential weight.
    pub rates: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockPart {
    pub name: String,
    #[serde(default = "unit")]
    pub coef: [f64; 2],
}

fn unit() -> [f64; 2] {
    [1.0, 0.0]
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermDef {
    pub kind: String,
    pub block: Option<String>,
    pub blocks: Option<Vec<BlockPart>>,
    pub weight: f64,
    pub normalization: Option<f64>,
    /// Normalization given as a multiple of T^2.
    pub normalization_t2: Option<f64>,
    /// Normalization given as a multiple of T.
    pub normalization_t: Option<f64>,
    pub target: Option<String>,
    pub projector: Option<String>,
    pub smoothing: Option<f64>,
    pub metric: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberDef {
    pub label: String,
    pub weight: f64,
    /// Amplitude scale seen by this member.
    pub scale: Option<f64>,
    pub lambda_file: Option<PathBuf>,
    pub phi_file: Option<PathBuf>,
}

/// Parsed file plus everything needed to rebuild it.
pub struct LoadedConfig {
    pub raw: String,
    pub config: ProblemConfig,
    pub base_dir: PathBuf,
    pub warnings: Vec<String>,
}

pub fn load(path: &Path) -> CliResult<LoadedConfig> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config { field: "<file>".into(), msg: format!("{}: {}", path.display(), e) })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse(&raw, &base)
}

pub fn parse(raw: &str, base_dir: &Path) -> CliResult<LoadedConfig> {
    let config: ProblemConfig =
        toml::from_str(raw).map_err(|e| CliError::Config { field: "<syntax>".into(), msg: e.to_string() })?;
    Ok(LoadedConfig { raw: raw.to_string(), config, base_dir: base_dir.to_path_buf(), warnings: Vec::new() })
}

impl LoadedConfig {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn read_curve(&self, field: &str, p: &Path) -> CliResult<FrequencyCurve> {
        let path = self.resolve(p);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config { field: field.into(), msg: format!("{}: {}", path.display(), e) })?;
        FrequencyCurve::parse_samples(&text).map_err(CliError::in_field(field))
    }

    /// Builds the problem, applying search overrides. Renormalized
    /// weights are recorded in `warnings`.
    pub fn build(&mut self) -> CliResult<Problem> {
        let cfg = self.config.clone();
        let mut p = if cfg.problem == "custom" {
            self.build_custom()?
        } else {
            self.build_builtin()?
        };
        apply_search(&cfg.search, &mut p)?;
        Ok(p)
    }

    fn build_builtin(&mut self) -> CliResult<Problem> {
        let cfg = &self.config;
        if !builtins::NAMES.contains(&cfg.problem.as_str()) {
            return config_err(
                "problem",
                format!("unknown problem {:?}; expected custom or one of {}", cfg.problem, builtins::NAMES.join(", ")),
            );
        }
        if !cfg.matrices.is_empty() || !cfg.systems.is_empty() || !cfg.terms.is_empty() || !cfg.members.is_empty() {
            return config_err("problem", "matrices, systems, terms and members are only read for custom problems");
        }
        let mut o = Overrides {
            total_time: cfg.grid.total_time,
            steps: cfg.grid.steps,
            pad: cfg.grid.pad,
            dnu: cfg.grid.dnu,
            dt: cfg.grid.dt,
            ..Overrides::default()
        };
        if let Some(e) = &cfg.ensemble {
            if cfg.problem != "broadband" {
                return config_err("ensemble", "only the broadband builtin takes an ensemble section");
            }
            o.gammas = e.gammas.clone();
            if let Some(f) = &e.lambda_file {
                o.lambda = Some(self.read_curve("ensemble.lambda_file", f)?);
            }
            if let Some(f) = &e.phi_file {
                o.phi = Some(self.read_curve("ensemble.phi_file", f)?);
            }
        }
        builtins::build(&cfg.problem, &o).map_err(CliError::in_field("grid"))
    }

    fn build_custom(&mut self) -> CliResult<Problem> {
        let cfg = self.config.clone();
        let g = &cfg.grid;
        let (Some(total_time), Some(steps)) = (g.total_time, g.steps) else {
            return config_err("grid", "custom problems need total_time and steps");
        };
        if !(total_time > 0.0) || steps == 0 {
            return config_err("grid", "total_time and steps must be positive");
        }
        let pad = g.pad.unwrap_or(0);
        if 2 * pad >= steps {
            return config_err("grid.pad", format!("padding 2 x {} leaves no free steps out of {}", pad, steps));
        }
        if g.dt.is_some() {
            return config_err("grid.dt", "custom grids derive dt from total_time / steps");
        }
        let grid = Grid { total_time, steps, pad, dt: total_time / steps as f64, dnu: g.dnu };

        let matrices = cfg
            .matrices
            .iter()
            .map(|(name, def)| Ok((name.clone(), matrix(&format!("matrices.{}", name), def)?)))
            .collect::<CliResult<BTreeMap<_, _>>>()?;
        let lookup = |field: &str, name: &str| -> CliResult<ComplexMatrix> {
            if let Some(m) = matrices.get(name) {
                return Ok(m.clone());
            }
            match builtin_matrix(name) {
                Some(m) => Ok(m),
                None => config_err(field, format!("unknown matrix {:?}", name)),
            }
        };

        if cfg.systems.is_empty() {
            return config_err("systems", "custom problems need at least one system");
        }
        let channels = cfg.systems[0].controls.len();
        let mut families = Vec::new();
        for (k, s) in cfg.systems.iter().enumerate() {
            let field = format!("systems[{}]", k);
            if s.controls.len() != channels {
                return config_err(format!("{}.controls", field), format!("{} controls, system 1 has {}", s.controls.len(), channels));
            }
            let controls = s
                .controls
                .iter()
                .map(|n| lookup(&format!("{}.controls", field), n))
                .collect::<CliResult<Vec<_>>>()?;
            let n = controls.first().map(|m| m.rows()).unwrap_or(0);
            let drift = match &s.drift {
                Some(d) => lookup(&format!("{}.drift", field), d)?,
                None => ComplexMatrix::zeros(n, n),
            };
            let fam = GeneratorFamily::new(drift, controls).map_err(CliError::in_field(&field))?;
            let ops = s
                .operators
                .iter()
                .map(|op| match op {
                    OperatorDef::Constant(name) => Ok(DysonOperator::Constant(lookup(&format!("{}.operators", field), name)?)),
                    OperatorDef::Weighted { matrix, channel } => {
                        if *channel == 0 || *channel > channels {
                            return config_err(format!("{}.operators", field), format!("channel {} outside 1..={}", channel, channels));
                        }
                        Ok(DysonOperator::ControlWeighted {
                            channel: channel - 1,
                            matrix: lookup(&format!("{}.operators", field), matrix)?,
                        })
                    }
                })
                .collect::<CliResult<Vec<_>>>()?;
            let weight = match &s.rates {
                None => ScalarWeight::One,
                Some(r) => ScalarWeight::ExpSum(r.iter().map(|z| c(z[0], z[1])).collect()),
            };
            let spec = DysonSpec::new(ops, weight).map_err(CliError::in_field(&field))?;
            families.push((s.label.clone(), fam, spec));
        }
        let build_layout = |scale: f64| -> CliResult<vanloan::VanLoanLayout> {
            let parts = families
                .iter()
                .enumerate()
                .map(|(k, (label, fam, spec))| {
                    let field = format!("systems[{}]", k);
                    let fam = if scale == 1.0 {
                        fam.clone()
                    } else {
                        GeneratorFamily::new(fam.drift().clone(), fam.controls().iter().map(|g| g.scale_re(scale)).collect())?
                    };
                    let spec = scale_weighted(spec, scale)?;
                    let l = match spec.weight {
                        ScalarWeight::One => build_f1(&fam, &spec),
                        _ => build_expsum(&fam, &spec),
                    };
                    Ok(l.map_err(CliError::in_field(&field))?.with_label(label.clone()))
                })
                .collect::<CliResult<Vec<_>>>()?;
            direct_sum(&parts).map_err(CliError::in_field("systems"))
        };

        let weights: Vec<f64> = cfg.terms.iter().map(|t| t.weight).collect();
        let weights = self.normalized("terms.weight", &weights)?;
        let mut terms = Vec::new();
        let mut metrics = Vec::new();
        for (k, (t, w)) in cfg.terms.iter().zip(weights).enumerate() {
            let field = format!("terms[{}]", k);
            let (term, metric) = term(&field, t, w, total_time, &lookup)?;
            terms.push(term);
            metrics.push(metric);
        }

        let opt = match grid.dnu {
            Some(dnu) => {
                if channels != 2 {
                    return config_err("grid.dnu", "band limiting needs exactly two control channels");
                }
                Some(
                    opt_transfer_filter_first(steps, pad, grid.dt, dnu, BANDPASS_STEEPNESS)
                        .map_err(CliError::in_field("grid.dnu"))?,
                )
            }
            None if pad > 0 => {
                if channels != 2 {
                    return config_err("grid.pad", "zero padding needs exactly two control channels");
                }
                Some(vanloan::transfer::zero_pad(steps, pad).map_err(CliError::in_field("grid.pad"))?)
            }
            None => None,
        };

        let defs = if cfg.members.is_empty() {
            vec![MemberDef { label: "system".into(), weight: 1.0, ..MemberDef::default() }]
        } else {
            cfg.members.clone()
        };
        let mweights = self.normalized("members.weight", &defs.iter().map(|m| m.weight).collect::<Vec<_>>())?;
        let mut members = Vec::new();
        for (k, (m, w)) in defs.iter().zip(mweights).enumerate() {
            let field = format!("members[{}]", k);
            let scale = m.scale.unwrap_or(1.0);
            if !scale.is_finite() {
                return config_err(format!("{}.scale", field), "scale must be finite");
            }
            let hw = match (&m.lambda_file, &m.phi_file) {
                (None, None) => None,
                (Some(l), Some(p)) => {
                    if channels != 2 {
                        return config_err(&field, "transfer curves need exactly two control channels");
                    }
                    let lam = self.read_curve(&format!("{}.lambda_file", field), l)?;
                    let phi = self.read_curve(&format!("{}.phi_file", field), p)?;
                    Some(linear_transfer(steps, grid.dt, &lam, &phi).map_err(CliError::in_field(&field))?)
                }
                _ => return config_err(&field, "lambda_file and phi_file go together"),
            };
            let member = match hw {
                // the curve map carries the scale
                Some(map) => EnsembleMember::new(m.label.clone(), build_layout(1.0)?, w).with_transfer(map.scaled(scale)),
                None => EnsembleMember::new(m.label.clone(), build_layout(scale)?, w),
            };
            members.push(member);
        }
        let spec = ObjectiveSpec::new(members, terms, opt).map_err(CliError::in_field("terms"))?;
        let search = SearchConfig { bounds: vec![(-1.0, 1.0); channels], ..SearchConfig::default() };
        Ok(Problem { name: "custom".into(), grid, spec, metrics, search, extras: Vec::new() })
    }

    fn normalized(&mut self, field: &str, w: &[f64]) -> CliResult<Vec<f64>> {
        if w.is_empty() {
            return config_err(field, "nothing to weight");
        }
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return config_err(field, "weights must be finite and nonnegative");
        }
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return config_err(field, "weights sum to zero");
        }
        if (s - 1.0).abs() > WEIGHT_SLACK {
            self.warnings.push(format!("{} sum to {}; renormalized to 1", field, s));
        }
        Ok(w.iter().map(|x| x / s).collect())
    }
}

/// Control-weighted operators see the scaled amplitude too.
fn scale_weighted(spec: &DysonSpec, scale: f64) -> vanloan::Result<DysonSpec> {
    if scale == 1.0 {
        return Ok(spec.clone());
    }
    let ops = spec
        .operators
        .iter()
        .map(|op| match op {
            DysonOperator::ControlWeighted { channel, matrix } => {
                DysonOperator::ControlWeighted { channel: *channel, matrix: matrix.scale_re(scale) }
            }
            other => other.clone(),
        })
        .collect();
    DysonSpec::new(ops, spec.weight.clone())
}

pub fn builtin_matrix(name: &str) -> Option<ComplexMatrix> {
    Some(match name {
        "pauli-x" => sigma_x(),
        "pauli-y" => sigma_y(),
        "pauli-z" => sigma_z(),
        "identity-2" => ComplexMatrix::identity(2),
        "identity-4" => ComplexMatrix::identity(4),
        "raising" => raising(),
        "lowering" => lowering(),
        "dipolar-2spin" => dipolar(),
        _ => return None,
    })
}

fn matrix(field: &str, def: &MatrixDef) -> CliResult<ComplexMatrix> {
    let base = match (&def.builtin, &def.re, &def.im) {
        (Some(b), None, None) => match builtin_matrix(b) {
            Some(m) => m,
            None => return config_err(format!("{}.builtin", field), format!("unknown builtin matrix {:?}", b)),
        },
        (None, re, im) if re.is_some() || im.is_some() => {
            let rows = re.as_ref().or(im.as_ref()).map(|r| r.len()).unwrap_or(0);
            let cols = re.as_ref().or(im.as_ref()).and_then(|r| r.first()).map(|r| r.len()).unwrap_or(0);
            if rows == 0 || cols == 0 {
                return config_err(field, "empty matrix");
            }
            for (part, arr) in [("re", re), ("im", im)] {
                if let Some(a) = arr {
                    if a.len() != rows || a.iter().any(|r| r.len() != cols) {
                        return config_err(format!("{}.{}", field, part), format!("expected {} rows of {} entries", rows, cols));
                    }
                }
            }
            let at = |a: &Option<Vec<Vec<f64>>>, i: usize, j: usize| a.as_ref().map_or(0.0, |a| a[i][j]);
            ComplexMatrix::from_fn(rows, cols, |i, j| c(at(re, i, j), at(im, i, j)))
        }
        _ => return config_err(field, "give either `builtin` or `re`/`im` arrays"),
    };
    if !base.is_square() {
        return config_err(field, format!("matrix is {}x{}, not square", base.rows(), base.cols()));
    }
    Ok(match def.scale {
        Some([a, b]) => base.scale(c(a, b)),
        None => base,
    })
}

fn term(
    field: &str,
    t: &TermDef,
    weight: f64,
    total_time: f64,
    lookup: &dyn Fn(&str, &str) -> CliResult<ComplexMatrix>,
) -> CliResult<(ObjectiveTerm, Metric)> {
    let block = match (&t.block, &t.blocks) {
        (Some(b), None) => BlockRef::single(b.clone()),
        (None, Some(parts)) if !parts.is_empty() => BlockRef::combo(parts.iter().map(|p| (c(p.coef[0], p.coef[1]), p.name.clone()))),
        _ => return config_err(field, "give either `block` or a nonempty `blocks` list"),
    };
    let norm = match (t.normalization, t.normalization_t2, t.normalization_t) {
        (Some(n), None, None) => n,
        (None, Some(k), None) => k * total_time * total_time,
        (None, None, Some(k)) => k * total_time,
        (None, None, None) => 1.0,
        _ => return config_err(field, "at most one of normalization, normalization_t2, normalization_t"),
    };
    let need = |key: &str, v: &Option<String>| -> CliResult<ComplexMatrix> {
        match v {
            Some(name) => lookup(&format!("{}.{}", field, key), name),
            None => config_err(field, format!("{} terms need `{}`", t.kind, key)),
        }
    };
    let wrap = CliError::in_field(field);
    let term = match t.kind.as_str() {
        "fidelity_sq" => ObjectiveTerm::fidelity_sq(block, need("target", &t.target)?, weight),
        "infidelity" => ObjectiveTerm::infidelity(block, need("target", &t.target)?, weight),
        "dyson_sq" => ObjectiveTerm::dyson_sq(block, norm, weight),
        "dyson_root" => ObjectiveTerm::dyson_root(block, norm, weight),
        "projection_sq" => ObjectiveTerm::projection_sq(block, need("projector", &t.projector)?, norm, weight),
        other => {
            return config_err(
                format!("{}.kind", field),
                format!("unknown kind {:?}; expected fidelity_sq, infidelity, dyson_sq, dyson_root or projection_sq", other),
            )
        }
    }
    .and_then(|term| term.with_smoothing(t.smoothing.unwrap_or(0.0)))
    .map_err(wrap)?;
    let metric = Metric::new(t.metric.as_deref().unwrap_or(&format!("term{}_{}", field_index(field), t.kind)));
    Ok((term, metric))
}

fn field_index(field: &str) -> String {
    field.trim_start_matches("terms[").trim_end_matches(']').parse::<usize>().map(|k| (k + 1).to_string()).unwrap_or_default()
}

fn apply_search(s: &SearchSection, p: &mut Problem) -> CliResult<()> {
    let c = &mut p.search;
    if let Some(v) = s.seeds {
        c.seeds = v;
    }
    if let Some(v) = s.max_evals_phase1 {
        c.max_evals_phase1 = v;
    }
    if let Some(v) = s.max_evals_total {
        c.max_evals_total = v;
    }
    if let Some(v) = s.threshold {
        c.threshold = v;
    }
    if let Some(v) = s.rng_seed {
        c.rng_seed = v;
    }
    if let Some(v) = s.polish {
        c.polish = v;
    }
    if let Some(b) = &s.bounds {
        c.bounds = b.iter().map(|x| (x[0], x[1])).collect();
    }
    if let Some(g) = &s.gradient {
        let method = match g.as_str() {
            "commutator" => GradientMethod::CommutatorSeries(15),
            "augmented" => GradientMethod::AugmentedBlock,
            other => return config_err("search.gradient", format!("unknown method {:?}", other)),
        };
        p.spec = p.spec.clone().with_method(method);
    }
    if c.seeds == 0 {
        return config_err("search.seeds", "need at least one seed");
    }
    if s.batch == Some(0) {
        return config_err("search.batch", "batch must be positive");
    }
    let channels = p.spec.members()[0].layout.control_count();
    p.search.validate(channels).map_err(CliError::in_field("search"))
}

/// Seeds per round from the config, defaulting to all of them.
pub fn batch_size(cfg: &ProblemConfig, seeds: usize) -> usize {
    cfg.search.batch.unwrap_or(seeds).min(seeds).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(src: &str) -> CliResult<(Problem, Vec<String>)> {
        let mut l = parse(src, Path::new("."))?;
        let p = l.build()?;
        Ok((p, l.warnings))
    }

    fn field_of(r: CliResult<(Problem, Vec<String>)>) -> String {
        match r {
            Err(CliError::Config { field, .. }) => field,
            Err(e) => panic!("expected a config error, got {}", e),
            Ok(_) => panic!("expected a config error"),
        }
    }

    const CUSTOM: &str = r#"
problem = "custom"
[grid]
total_time = 2.0
steps = 8
[matrices.gx]
builtin = "pauli-x"
scale = [0.0, -0.5]
[matrices.gy]
re = [[0.0, -0.5], [0.5, 0.0]]
[[systems]]
label = "q"
controls = ["gx", "gy"]
operators = ["pauli-z"]
[[terms]]
kind = "dyson_sq"
block = "q/D"
weight = 2.0
normalization_t2 = 2.0
[[terms]]
kind = "fidelity_sq"
block = "q/U[1]"
target = "identity-2"
weight = 2.0
"#;

    #[test]
    fn builtin_with_overrides() {
        let (p, w) = build("problem = \"dipolar\"\n[grid]\nsteps = 20\n[search]\nseeds = 3\n").unwrap();
        assert_eq!(p.grid.steps, 20);
        assert_eq!(p.search.seeds, 3);
        assert!(w.is_empty());
    }

    #[test]
    fn custom_problem_renormalizes_with_warning() {
        let (p, w) = build(CUSTOM).unwrap();
        assert_eq!(w.len(), 1, "{:?}", w);
        assert!(p.spec.terms().iter().all(|t| (t.weight - 0.5).abs() < 1e-15));
        assert!((p.spec.terms()[0].normalization - 8.0).abs() < 1e-12);
        // the hand-written gy equals -i/2 sigma_y
        let l = &p.spec.members()[0].layout;
        let want = sigma_y().scale(c(0.0, -0.5));
        assert!(l.controls()[1].submatrix(0, 0, 2, 2).max_abs_diff(&want) < 1e-15);
        let phi = p.spec.evaluate(&p.zero_controls().unwrap()).unwrap();
        // zero control: |D(sz)| is maximal, U = I
        assert!((phi - 0.5).abs() < 1e-12);
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of(build("problem = \"nope\"")), "problem");
        assert_eq!(field_of(build("problem = \"dipolar\"\ngrid = 3")), "<syntax>");
        assert_eq!(field_of(build("problem = \"dipolar\"\n[search]\nbounds = [[1.0, -1.0], [0.0, 1.0]]")), "search");
        assert_eq!(field_of(build(&CUSTOM.replace("\"pauli-z\"", "\"nothing\""))), "systems[0].operators");
        assert_eq!(field_of(build(&CUSTOM.replace("kind = \"dyson_sq\"", "kind = \"dyson\""))), "terms[0].kind");
        assert_eq!(field_of(build(&CUSTOM.replace("re = [[0.0, -0.5], [0.5, 0.0]]", "re = [[0.0], [0.5, 0.0]]"))), "matrices.gy.re");
        assert_eq!(field_of(build(&CUSTOM.replace("steps = 8", "steps = 8\npad = 4"))), "grid.pad");
        let missing = CUSTOM.to_string() + "[[members]]\nlabel = \"a\"\nweight = 1.0\nlambda_file = \"missing.dat\"\nphi_file = \"missing.dat\"\n";
        assert_eq!(field_of(build(&missing)), "members[0].lambda_file");
    }

    #[test]
    fn member_scale_matches_scaled_controls() {
        let two = CUSTOM.to_string()
            + "[[members]]\nlabel = \"a\"\nweight = 0.5\nscale = 2.0\n[[members]]\nlabel = \"b\"\nweight = 0.5\n";
        let (p, _) = build(&two).unwrap();
        let a = vanloan::ControlSequence::uniform(vec![vec![0.3; 8], vec![-0.1; 8]], 2.0).unwrap();
        let a2 = vanloan::ControlSequence::uniform(vec![vec![0.6; 8], vec![-0.2; 8]], 2.0).unwrap();
        let r = p.spec.term_report(&a).unwrap();
        let r2 = p.spec.term_report(&a2).unwrap();
        for (x, y) in r[0].terms.iter().zip(&r2[1].terms) {
            assert!((x.score - y.score).abs() < 1e-12);
        }
    }
}
