//! The five shipped example problems.

use std::f64::consts::{PI, SQRT_2};

use vanloan::matcore::ops::{collective, dipolar, lowering, raising, sigma_x, sigma_y, sigma_z};
use vanloan::noisemodel::ONEOVERF_7TERM;
use vanloan::oracle::{nested_quadrature, QuadratureConfig};
use vanloan::objective::{dyson_normalization, dyson_normalization_weighted, NormStyle};
use vanloan::transfer::{linear_transfer, opt_transfer_filter_first, FrequencyCurve, BANDPASS_STEEPNESS};
use vanloan::{
    build_expsum, build_f1, c, direct_sum, expm, kron, propagate, BlockRef, ComplexMatrix, ControlSequence, DysonOperator, DysonSpec,
    EnsembleMember, GeneratorFamily, ObjectiveSpec, ObjectiveTerm, Result, ScalarWeight, SearchConfig, VanLoanLayout,
};

use crate::problem::{Grid, Metric, Problem};

pub const NAMES: [&str; 5] = ["dipolar", "xy8like", "exchange", "oneoverf", "broadband"];

pub const LAMBDA_SYNTHETIC: &str = include_str!("../data/broadband_lambda.synthetic.dat");
pub const PHI_SYNTHETIC: &str = include_str!("../data/broadband_phi.synthetic.dat");

/// Values a config may override; `None` keeps the builtin default.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub total_time: Option<f64>,
    pub steps: Option<usize>,
    pub pad: Option<usize>,
    pub dnu: Option<f64>,
    pub dt: Option<f64>,
    pub gammas: Option<Vec<f64>>,
    pub lambda: Option<FrequencyCurve>,
    pub phi: Option<FrequencyCurve>,
}

pub fn build(name: &str, o: &Overrides) -> Result<Problem> {
    match name {
        "dipolar" => dipolar_problem(o),
        "xy8like" => xy8like(o),
        "exchange" => exchange(o),
        "oneoverf" => oneoverf(o),
        "broadband" => broadband(o),
        _ => Err(vanloan::Error::UnknownName(format!("builtin problem {:?}; known: {}", name, NAMES.join(", ")))),
    }
}

fn scaled(m: ComplexMatrix, re: f64, im: f64) -> ComplexMatrix {
    m.scale(c(re, im))
}

/// -i/2 sigma_x, -i/2 sigma_y.
fn qubit_family() -> Result<GeneratorFamily> {
    GeneratorFamily::new(
        ComplexMatrix::zeros(2, 2),
        vec![scaled(sigma_x(), 0.0, -0.5), scaled(sigma_y(), 0.0, -0.5)],
    )
}

fn pair_family() -> Result<GeneratorFamily> {
    let q = qubit_family()?;
    GeneratorFamily::new(ComplexMatrix::zeros(4, 4), q.controls().iter().map(collective).collect())
}

fn first_order(family: &GeneratorFamily, op: impl Into<DysonOperator>, label: &str) -> Result<VanLoanLayout> {
    Ok(build_f1(family, &DysonSpec::one(vec![op.into()])?)?.with_label(label))
}

fn plain_grid(o: &Overrides, t: f64, n: usize) -> Grid {
    let total_time = o.total_time.unwrap_or(t);
    let steps = o.steps.unwrap_or(n);
    Grid { total_time, steps, pad: 0, dt: total_time / steps as f64, dnu: None }
}

fn search(bound: f64) -> SearchConfig {
    SearchConfig { bounds: vec![(-bound, bound); 2], ..SearchConfig::default() }
}

fn dyson(name: &str, block: &str, norm: f64, weight: f64) -> Result<(Metric, ObjectiveTerm)> {
    Ok((Metric::new(name), ObjectiveTerm::dyson_sq(BlockRef::single(block), norm, weight)?))
}

fn single_member(layout: VanLoanLayout, terms: Vec<ObjectiveTerm>) -> Result<ObjectiveSpec> {
    ObjectiveSpec::new(vec![EnsembleMember::new("system", layout, 1.0)], terms, None)
}

fn assemble(name: &str, grid: Grid, spec: ObjectiveSpec, metrics: Vec<Metric>, search: SearchConfig) -> Problem {
    Problem { name: name.into(), grid, spec, metrics, search, extras: Vec::new() }
}

/// Two spins under a global drive; suppress the first-order dipolar term.
pub fn dipolar_problem(o: &Overrides) -> Result<Problem> {
    let grid = plain_grid(o, 6.2, 100);
    let layout = first_order(&pair_family()?, dipolar(), "pair")?;
    let norm = dyson_normalization(&dipolar(), grid.total_time, NormStyle::Sq)?;
    let (m, t) = dyson("dipolar_norm", "D", norm, 1.0)?;
    let spec = single_member(layout, vec![t])?;
    Ok(assemble("dipolar", grid, spec, vec![m], search(1.0)))
}

/// Two square pulses of 116 deg 14 min at full amplitude, the second
/// phase-shifted by 90 deg.
pub fn two_pulse_sequence(steps_per_pulse: usize) -> Result<ControlSequence> {
    let theta = (116.0 + 14.0 / 60.0f64).to_radians();
    let n = steps_per_pulse.max(1);
    let x = (0..2 * n).map(|s| if s < n { 1.0 } else { 0.0 }).collect();
    let y = (0..2 * n).map(|s| if s < n { 0.0 } else { 1.0 }).collect();
    ControlSequence::uniform(vec![x, y], 2.0 * theta)
}

/// Normalized first-order dipolar norm of the two-pulse sequence, from
/// the Van Loan block and from direct quadrature.
pub fn two_pulse_norms() -> Result<(f64, f64)> {
    let cs = two_pulse_sequence(1)?;
    let fam = pair_family()?;
    let layout = first_order(&fam, dipolar(), "pair")?;
    let b = layout.block(&propagate(&layout, &cs)?, "D")?;
    let q = nested_quadrature(&fam, &cs, &[dipolar().into()], &|_| c(1.0, 0.0), &QuadratureConfig::default())?;
    let max = dyson_normalization(&dipolar(), cs.total_time(), NormStyle::Root)?;
    Ok((b.frob() / max, q.frob() / max))
}

/// First-order decoupling of all three Paulis plus amplitude robustness,
/// with the identity as target.
pub fn xy8like(o: &Overrides) -> Result<Problem> {
    let grid = plain_grid(o, 30.0, 200);
    let t = grid.total_time;
    let fam = qubit_family()?;
    let mut layouts = Vec::new();
    let mut metrics = Vec::new();
    let mut terms = Vec::new();
    for (label, p) in ["x", "y", "z"].iter().zip([sigma_x(), sigma_y(), sigma_z()]) {
        let norm = dyson_normalization(&p, t, NormStyle::Sq)?;
        layouts.push(first_order(&fam, p, label)?);
        let (m, term) = dyson(&format!("sigma_{}_norm", label), &format!("{}/D", label), norm, 2.0 / 15.0)?;
        metrics.push(m);
        terms.push(term);
    }
    for (ch, (label, p)) in [("ax", sigma_x()), ("ay", sigma_y())].into_iter().enumerate() {
        let norm = dyson_normalization_weighted(&p, t, 1.0, NormStyle::Sq)?;
        layouts.push(first_order(&fam, DysonOperator::ControlWeighted { channel: ch, matrix: p }, label)?);
        let (m, term) = dyson(&format!("amplitude_{}_norm", label), &format!("{}/D", label), norm, 0.2)?;
        metrics.push(m);
        terms.push(term);
    }
    metrics.push(Metric::new("identity_infidelity"));
    terms.push(ObjectiveTerm::fidelity_sq(BlockRef::single("x/U[1]"), ComplexMatrix::identity(2), 0.2)?);
    let spec = single_member(direct_sum(&layouts)?, terms)?;
    Ok(assemble("xy8like", grid, spec, metrics, search(1.0)))
}

/// Decouple sigma_z and the pair dipolar term while keeping a pure
/// sigma_+ component in the first-order term of sigma_+.
pub fn exchange(o: &Overrides) -> Result<Problem> {
    let grid = plain_grid(o, 24.0, 200);
    let t = grid.total_time;
    let q = qubit_family()?;
    let layout = direct_sum(&[
        first_order(&q, sigma_z(), "z")?,
        first_order(&q, raising(), "plus")?,
        first_order(&pair_family()?, dipolar(), "pair")?,
    ])?;
    let plus_norm = dyson_normalization(&raising(), t, NormStyle::Sq)?;
    let terms = vec![
        ObjectiveTerm::fidelity_sq(BlockRef::single("z/U[1]"), ComplexMatrix::identity(2), 0.2)?,
        ObjectiveTerm::dyson_sq(BlockRef::single("z/D"), dyson_normalization(&sigma_z(), t, NormStyle::Sq)?, 0.2)?,
        ObjectiveTerm::dyson_sq(BlockRef::single("pair/D"), dyson_normalization(&dipolar(), t, NormStyle::Sq)?, 0.2)?,
        // |Tr(P^dagger B)|^2 <= |P|^2 |B|^2
        ObjectiveTerm::projection_sq(BlockRef::single("plus/D"), sigma_z(), 2.0 * plus_norm, 0.2)?,
        ObjectiveTerm::projection_sq(BlockRef::single("plus/D"), lowering(), plus_norm, 0.2)?,
    ];
    let metrics = ["identity_infidelity", "sigma_z_norm", "dipolar_norm", "plus_on_sigma_z", "plus_on_minus"]
        .into_iter()
        .map(Metric::new)
        .collect();
    let spec = single_member(layout, terms)?;
    let mut p = assemble("exchange", grid, spec, metrics, search(1.0));
    p.extras.push("recoupling_scale".into());
    p.search.threshold = 0.9999;
    Ok(p)
}

/// Recoupling scale c in D(sigma_+) = c T sigma_+ + ...
pub fn recoupling_scale(p: &Problem, v: &ComplexMatrix) -> Result<f64> {
    let layout = &p.spec.members()[0].layout;
    let b = layout.block(v, "plus/D")?;
    Ok(vanloan::matcore::inner(&raising(), &b).norm() / p.grid.total_time)
}

/// Liouvillian -i (a/2 (x) I - I (x) a^T/2).
fn liouvillian(a: &ComplexMatrix) -> ComplexMatrix {
    let id = ComplexMatrix::identity(a.rows());
    kron(a, &id).sub(&kron(&id, &a.transpose())).scale(c(0.0, -0.5))
}

/// Ordered double integral of exp(d (t1 - t2)) over T >= t1 >= t2 >= 0.
fn ordered_exp_integral(d: f64, t: f64) -> f64 {
    let x = d * t;
    if x.abs() < 1e-6 {
        t * t * (0.5 + x / 6.0 + x * x / 24.0)
    } else {
        (x.exp_m1() - x) / (d * d)
    }
}

/// Driven qubit under 1/f dephasing, in ns. The noise enters through the
/// seven-term exponential fit of its correlation.
pub fn oneoverf(o: &Overrides) -> Result<Problem> {
    let total_time = o.total_time.unwrap_or(50.0);
    let steps = o.steps.unwrap_or(120);
    let pad = o.pad.unwrap_or(20);
    let dt = o.dt.unwrap_or(total_time / steps as f64);
    let grid = Grid { total_time: dt * steps as f64, steps, pad, dt, dnu: Some(o.dnu.unwrap_or(0.4)) };
    let gz = liouvillian(&sigma_z());
    let fam = GeneratorFamily::new(ComplexMatrix::zeros(4, 4), vec![liouvillian(&sigma_x()), liouvillian(&sigma_y())])?;
    let mut layouts = Vec::new();
    let mut combo = Vec::new();
    let mut ordered = 0.0;
    for (k, &(ci, di)) in ONEOVERF_7TERM.iter().enumerate() {
        let d = di * 1e-9;
        let spec = DysonSpec::new(vec![gz.clone().into(), gz.clone().into()], ScalarWeight::ExpSum(vec![c(d, 0.0), c(-d, 0.0)]))?;
        layouts.push(build_expsum(&fam, &spec)?.with_label((k + 1).to_string()));
        combo.push((c(ci, 0.0), format!("{}/D", k + 1)));
        ordered += ci * ordered_exp_integral(d, grid.total_time);
    }
    // Zero-control value |Gz^2|^2 (sum c_i I_i)^2, so the functional starts at 1.
    let norm = gz.dot(&gz).frob().powi(2) * ordered * ordered;
    let y = expm(&sigma_y().scale(c(0.0, -PI / 2.0)));
    let target = kron(&y, &y.conj());
    let terms = vec![
        ObjectiveTerm::dyson_sq(BlockRef::combo(combo), norm, 0.8)?,
        ObjectiveTerm::fidelity_sq(BlockRef::single("1/U[1]"), target, 0.2)?,
    ];
    let opt = opt_transfer_filter_first(grid.steps, grid.pad, grid.dt, grid.dnu.unwrap(), BANDPASS_STEEPNESS)?;
    let spec = ObjectiveSpec::new(vec![EnsembleMember::new("system", direct_sum(&layouts)?, 1.0)], terms, Some(opt))?;
    let metrics = vec![Metric::new("noise_functional").squared(), Metric::new("pi_y_infidelity")];
    let bound = 2.0 * PI * 0.2 / SQRT_2;
    let mut search = search(bound);
    search.seeds = 8;
    Ok(assemble("oneoverf", grid, spec, metrics, search))
}

/// Rounding of the root scores; one member sitting exactly on a cone
/// tip otherwise stalls the whole ensemble.
pub const BROADBAND_SMOOTHING: f64 = 1e-3;

pub const BROADBAND_GAMMAS: [f64; 5] = [0.9, 1.11125, 1.3225, 1.53375, 1.745];

/// Robust pi/2 about x over a spread of Rabi scales through a hardware
/// transfer function, in us and MHz, while decoupling sigma_z and the
/// pair dipolar term.
pub fn broadband(o: &Overrides) -> Result<Problem> {
    let steps = o.steps.unwrap_or(360);
    let pad = o.pad.unwrap_or(30);
    let dt = o.dt.unwrap_or(0.0208);
    let dnu = o.dnu.unwrap_or(10.0);
    let grid = Grid { total_time: dt * steps as f64, steps, pad, dt, dnu: Some(dnu) };
    let t = grid.total_time;
    let layout = direct_sum(&[first_order(&qubit_family()?, sigma_z(), "q")?, first_order(&pair_family()?, dipolar(), "pair")?])?;
    let lam = match &o.lambda {
        Some(l) => l.clone(),
        None => FrequencyCurve::parse_samples(LAMBDA_SYNTHETIC)?,
    };
    let phi = match &o.phi {
        Some(p) => p.clone(),
        None => FrequencyCurve::parse_samples(PHI_SYNTHETIC)?,
    };
    let hw = linear_transfer(steps, dt, &lam, &phi)?;
    let gammas = o.gammas.clone().unwrap_or_else(|| BROADBAND_GAMMAS.to_vec());
    let members = gammas
        .iter()
        .map(|&g| {
            EnsembleMember::new(format!("gamma={}", g), layout.clone(), 1.0 / gammas.len() as f64)
                .with_transfer(hw.scaled(2.0 * PI * g))
        })
        .collect();
    let target = expm(&sigma_x().scale(c(0.0, -PI / 4.0)));
    let terms = vec![
        ObjectiveTerm::infidelity(BlockRef::single("q/U[1]"), target, 5.0 / 9.0)?,
        ObjectiveTerm::dyson_root(BlockRef::single("pair/D"), dyson_normalization(&dipolar(), t, NormStyle::Root)?, 3.0 / 9.0)?,
        ObjectiveTerm::dyson_root(BlockRef::single("q/D"), dyson_normalization(&sigma_z(), t, NormStyle::Root)?, 1.0 / 9.0)?,
    ]
    .into_iter()
    .map(|t| t.with_smoothing(BROADBAND_SMOOTHING))
    .collect::<Result<Vec<_>>>()?;
    let opt = opt_transfer_filter_first(steps, pad, dt, dnu, BANDPASS_STEEPNESS)?;
    let spec = ObjectiveSpec::new(members, terms, Some(opt))?;
    let metrics = vec![Metric::new("psi_u"), Metric::new("psi_d"), Metric::new("psi_sigma_z")];
    let mut search = search(1.0 / SQRT_2);
    search.seeds = 4;
    Ok(assemble("broadband", grid, spec, metrics, search))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_build() {
        for name in NAMES {
            let p = build(name, &Overrides::default()).unwrap();
            assert_eq!(p.metrics.len(), p.spec.terms().len(), "{}", name);
        }
        assert!(build("nope", &Overrides::default()).is_err());
    }

    #[test]
    fn zero_control_noise_functional_is_one() {
        let p = oneoverf(&Overrides::default()).unwrap();
        let alpha = ControlSequence::zeros(2, p.grid.opt_steps(), p.grid.opt_time()).unwrap();
        let r = p.spec.term_report(&alpha).unwrap();
        assert!((r[0].terms[0].score).abs() < 1e-10);
    }

    #[test]
    fn noise_blocks_match_quadrature() {
        // one term of the fit against direct quadrature of its weight
        let gz = liouvillian(&sigma_z());
        let fam = GeneratorFamily::new(ComplexMatrix::zeros(4, 4), vec![liouvillian(&sigma_x()), liouvillian(&sigma_y())]).unwrap();
        let d = -0.3;
        let spec = DysonSpec::new(vec![gz.clone().into(), gz.clone().into()], ScalarWeight::ExpSum(vec![c(d, 0.0), c(-d, 0.0)])).unwrap();
        let layout = build_expsum(&fam, &spec).unwrap();
        let ctrl = ControlSequence::uniform(vec![vec![0.4, -0.7, 0.2], vec![0.1, 0.5, -0.3]], 3.0).unwrap();
        let v = propagate(&layout, &ctrl).unwrap();
        let b = layout.block(&v, "D").unwrap();
        let w = move |ts: &[f64]| c((d * (ts[0] - ts[1])).exp(), 0.0);
        let q = nested_quadrature(&fam, &ctrl, &spec.operators, &w, &QuadratureConfig::default()).unwrap();
        assert!(b.max_abs_diff(&q) < 1e-9, "{}", b.max_abs_diff(&q));
    }

    #[test]
    fn ordered_integral_limits() {
        let t = 2.0;
        assert!((ordered_exp_integral(0.0, t) - 2.0).abs() < 1e-15);
        let (g, w) = vanloan::oracle::gauss_legendre(30);
        for d in [-1.3f64, 1e-8, 0.7] {
            // int_0^T (e^{d t} - 1)/d dt
            let q: f64 = g.iter().zip(&w).map(|(x, wi)| {
                let s = 0.5 * t * (x + 1.0);
                let f = (d * s).exp_m1() / d;
                0.5 * t * wi * f
            }).sum();
            assert!((ordered_exp_integral(d, t) - q).abs() < 1e-12, "{}", d);
        }
    }

    #[test]
    fn synthetic_curves_are_labelled() {
        assert!(LAMBDA_SYNTHETIC.starts_with("# SYNTHETIC"));
        assert!(PHI_SYNTHETIC.starts_with("# SYNTHETIC"));
    }
}
