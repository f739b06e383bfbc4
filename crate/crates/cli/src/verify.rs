//! Oracle-backed self checks, one suite per family of properties.
//!
//! Every check records what was measured next to the bound it was held
//! to, so a report doubles as a table of achieved accuracies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use vanloan::blockgen::explicit_blocks;
use vanloan::objective::{dyson_normalization, NormStyle};
use vanloan::oracle::{finite_diff, nested_quadrature, QuadratureConfig};
use vanloan::propagate::{propagate_to, step_generator};
use vanloan::symterms::{
    conjecture_matrix, poly_top_right, poly_top_right_coords, rank, rat, simplify, to_exponential, worked_example,
    NumericEnv, OpSymbol, OpTerm, SymExpr, SymTerm, Factor, WeightedOp,
};
use vanloan::transfer::{
    apply_two_channel, dft_matrix, jacobian_entries, linear_transfer, opt_transfer_filter_first, FrequencyCurve,
    TransferKind, BANDPASS_STEEPNESS,
};
use vanloan::{
    build_expsum, build_f1, build_poly, c, expm, propagate, propagate_with_gradients, BlockRef, Complex64,
    ComplexMatrix, ControlSequence, DysonOperator, DysonSpec, EnsembleMember, GeneratorFamily, GradientMethod,
    ObjectiveSpec, ObjectiveTerm, ScalarWeight, TransferMap, VanLoanLayout,
};

use crate::error::{CliError, CliResult};

pub const SUITES: [&str; 8] =
    ["vanloan-f1", "vanloan-exp", "vanloan-poly", "theorem1", "gradients", "transfer", "symbolic", "conjecture"];

const GOLDEN: &str = include_str!("../../core/tests/golden/symbolic.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// measured <= tol; `--tol` replaces tol.
    Max,
    /// measured >= tol.
    Min,
    /// measured == tol exactly.
    Exact,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub property: String,
    pub measured: f64,
    pub tol: f64,
    pub bound: Bound,
    pub pass: bool,
}

impl Check {
    fn new(property: impl Into<String>, measured: f64, tol: f64, bound: Bound) -> Self {
        let pass = match bound {
            Bound::Max => measured <= tol,
            Bound::Min => measured >= tol,
            Bound::Exact => measured == tol,
        };
        Check { property: property.into(), measured, tol, bound, pass }
    }

    pub fn max(property: impl Into<String>, measured: f64, tol: f64) -> Self {
        Check::new(property, measured, tol, Bound::Max)
    }

    pub fn min(property: impl Into<String>, measured: f64, floor: f64) -> Self {
        Check::new(property, measured, floor, Bound::Min)
    }

    pub fn exact(property: impl Into<String>, measured: f64, want: f64) -> Self {
        Check::new(property, measured, want, Bound::Exact)
    }

    fn retol(&mut self, tol: f64) {
        if self.bound == Bound::Max {
            *self = Check::max(std::mem::take(&mut self.property), self.measured, tol);
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub pass: bool,
    pub wall_time_s: f64,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    /// Largest measured value among checks whose property starts with `prefix`.
    pub fn worst(&self, prefix: &str) -> Option<f64> {
        self.checks.iter().filter(|c| c.property.starts_with(prefix)).map(|c| c.measured).reduce(f64::max)
    }
}

/// Runs one suite. `tol` overrides every upper-bound tolerance.
pub fn run_suite(name: &str, tol: Option<f64>) -> CliResult<SuiteReport> {
    if let Some(t) = tol {
        if !(t > 0.0) {
            return crate::error::config_err("--tol", "tolerance must be positive");
        }
    }
    let start = std::time::Instant::now();
    let mut checks = match name {
        "vanloan-f1" => f1_suite()?,
        "vanloan-exp" => exp_suite()?,
        "vanloan-poly" => poly_suite()?,
        "theorem1" => theorem1_suite()?,
        "gradients" => gradient_suite()?,
        "transfer" => transfer_suite()?,
        "symbolic" => symbolic_suite()?,
        "conjecture" => conjecture_suite()?,
        _ => {
            return crate::error::config_err("suite", format!("unknown suite {:?}; known: {}", name, SUITES.join(", ")))
        }
    };
    if let Some(t) = tol {
        checks.iter_mut().for_each(|c| c.retol(t));
    }
    Ok(SuiteReport {
        suite: name.into(),
        pass: checks.iter().all(|c| c.pass),
        wall_time_s: start.elapsed().as_secs_f64(),
        checks,
    })
}

// ------------------------------------------------------------- helpers

fn anti_hermitian(rng: &mut ChaCha8Rng, n: usize, norm: f64) -> ComplexMatrix {
    let h = ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let a = h.sub(&h.adjoint());
    a.scale_re(norm / a.frob())
}

fn general(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

/// Drift and `k` controls with |G| dt <= 1 for amplitudes in [-1, 1].
fn random_system(rng: &mut ChaCha8Rng, n: usize, k: usize, steps: usize, t: f64) -> CliResult<(GeneratorFamily, ControlSequence)> {
    let dt = t / steps as f64;
    let share = 0.6 / k as f64;
    let fam = GeneratorFamily::new(
        anti_hermitian(rng, n, 0.4 / dt),
        (0..k).map(|_| anti_hermitian(rng, n, share / dt)).collect(),
    )?;
    let amps = (0..k).map(|_| (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    Ok((fam, ControlSequence::uniform(amps, t)?))
}

fn one(_: &[f64]) -> Complex64 {
    c(1.0, 0.0)
}

fn core_err(e: vanloan::Error) -> CliError {
    CliError::Core(e)
}

// ----------------------------------------------------------- f1 and exp

fn f1_instance(k: usize) -> CliResult<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
    let n = 2 + k % 2;
    let m = 1 + (k / 2) % 3;
    let (fam, cs) = random_system(&mut rng, n, 2, 4, 1.0)?;
    let mut ops: Vec<DysonOperator> = (0..m).map(|_| general(&mut rng, n).into()).collect();
    if k % 3 == 0 {
        ops[0] = DysonOperator::ControlWeighted { channel: k % 2, matrix: general(&mut rng, n) };
    }
    let layout = build_f1(&fam, &DysonSpec::one(ops.clone())?)?;
    let v = propagate(&layout, &cs)?;
    let cfg = QuadratureConfig::default();
    let mut worst: f64 = 0.0;
    for i in 1..=m {
        for j in i..=m {
            let q = nested_quadrature(&fam, &cs, &ops[i - 1..j], &one, &cfg)?;
            worst = worst.max(layout.block(&v, &format!("D[{}..{}]", i, j))?.max_abs_diff(&q));
        }
    }
    Ok(Check::max(format!("f1 instance {} (n={}, m={}): max block error", k, n, m), worst, 1e-8))
}

fn f1_suite() -> CliResult<Vec<Check>> {
    (0..50).into_par_iter().map(f1_instance).collect()
}

fn exp_instance(k: usize) -> CliResult<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(2000 + k as u64);
    let t = 1.0;
    let (fam, cs) = random_system(&mut rng, 2, 2, 4, t)?;
    // |d| T <= 5 anywhere in the disc
    let d: Vec<Complex64> = (0..2)
        .map(|_| Complex64::from_polar(5.0 * rng.gen::<f64>().sqrt() / t, rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let ops: Vec<DysonOperator> = (0..2).map(|_| general(&mut rng, 2).into()).collect();
    let layout = build_expsum(&fam, &DysonSpec::new(ops.clone(), ScalarWeight::ExpSum(d.clone()))?)?;
    let v = propagate(&layout, &cs)?;
    let w = |ts: &[f64]| (d[0] * ts[0] + d[1] * ts[1]).exp();
    let q = nested_quadrature(&fam, &cs, &ops, &w, &QuadratureConfig { nodes_per_step: 24, tol: 1e-9 })?;
    let err = layout.block(&v, "D")?.max_abs_diff(&q);
    Ok(Check::max(
        format!("exp instance {} (|d1|T={:.2}, |d2|T={:.2}): top-right error", k, d[0].norm() * t, d[1].norm() * t),
        err,
        1e-8,
    ))
}

fn exp_suite() -> CliResult<Vec<Check>> {
    (0..25).into_par_iter().map(exp_instance).collect()
}

// ----------------------------------------------------------------- poly

/// Every top-right block against numeric evaluation of its symbolic form.
fn poly_grid_instance(s1: usize, s2: usize) -> CliResult<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(3000 + 10 * s1 as u64 + s2 as u64);
    let (fam, cs) = random_system(&mut rng, 2, 2, 3, 1.0)?;
    let (a1, a2) = (general(&mut rng, 2), general(&mut rng, 2));
    let layout = build_poly(&fam, &a1.clone().into(), &a2.clone().into(), s1, s2)?;
    let v = propagate(&layout, &cs)?;
    let gens = (0..cs.steps()).map(|s| fam.generator(&cs.column(s))).collect();
    let env = NumericEnv::new(2, cs.durations().to_vec(), QuadratureConfig::default())?
        .with_propagator("U", gens)?
        .with_operator("A1", vec![a1; cs.steps()])?
        .with_operator("A2", vec![a2; cs.steps()])?;
    let mut worst: f64 = 0.0;
    for (e, (r, col)) in poly_top_right(s1, s2)?.iter().zip(poly_top_right_coords(s1, s2)) {
        let want = env.eval(e, cs.total_time())?;
        worst = worst.max(layout.block(&v, &format!("C[{},{}]", r, col))?.max_abs_diff(&want));
    }
    Ok(Check::max(format!("poly grid s1={} s2={}: max block error", s1, s2), worst, 1e-8))
}

/// Central-difference residual of the coupled block ODE on the last block
/// column, at two step sizes; returns the observed order.
fn poly_ode_order(s1: usize, s2: usize) -> CliResult<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(3100 + 10 * s1 as u64 + s2 as u64);
    let g = anti_hermitian(&mut rng, 2, 1.0);
    let fam = GeneratorFamily::new(g.clone(), vec![ComplexMatrix::zeros(2, 2)])?;
    let (a1, a2) = (general(&mut rng, 2), general(&mut rng, 2));
    let layout = build_poly(&fam, &a1.clone().into(), &a2.clone().into(), s1, s2)?;
    let cs = ControlSequence::zeros(1, 1, 2.0)?;
    let nb = layout.block_count();
    let col = |t: f64| -> CliResult<Vec<ComplexMatrix>> {
        let v = propagate_to(&layout, &cs, t)?;
        Ok((0..nb).map(|r| layout.block_at(&v, r, nb - 1)).collect())
    };
    // block rows: z_{s1} .. z_0, y_{s1} .. y_0, x_{s1+s2} .. x_0
    let z = |p: usize| s1 - p;
    let y = |j: usize| s1 + 1 + (s1 - j);
    let x = |j: usize| 2 * s1 + 2 + (s1 + s2 - j);
    let t = 1.1;
    let mut residuals = Vec::new();
    for h in [1e-2, 5e-3] {
        let (plus, minus, mid) = (col(t + h)?, col(t - h)?, col(t)?);
        let deriv = |k: usize| plus[k].sub(&minus[k]).scale_re(0.5 / h);
        let mut worst: f64 = 0.0;
        for j in 1..=s1 + s2 {
            let rhs = mid[x(j - 1)].scale_re(j as f64).add(&g.dot(&mid[x(j)]));
            worst = worst.max(deriv(x(j)).max_abs_diff(&rhs));
        }
        for j in 0..=s1 {
            let mut rhs = g.dot(&mid[y(j)]).add(&a2.dot(&mid[x(j + s2)]));
            if j > 0 {
                rhs = rhs.add(&mid[y(j - 1)].scale_re(j as f64));
            }
            worst = worst.max(deriv(y(j)).max_abs_diff(&rhs));
            let rz = a1.dot(&mid[y(j)]).add(&g.dot(&mid[z(j)]));
            worst = worst.max(deriv(z(j)).max_abs_diff(&rz));
        }
        residuals.push(worst);
    }
    let order = (residuals[0] / residuals[1]).log2();
    Ok(Check::min(format!("poly ODE s1={} s2={}: observed residual order", s1, s2), order, 1.8))
}

fn poly_suite() -> CliResult<Vec<Check>> {
    let pairs: Vec<(usize, usize)> = (0..=3).flat_map(|a| (0..=3).map(move |b| (a, b))).collect();
    let mut checks: Vec<Check> = pairs.par_iter().map(|&(a, b)| poly_grid_instance(a, b)).collect::<CliResult<_>>()?;
    for &(a, b) in &pairs {
        checks.push(poly_ode_order(a, b)?);
    }
    Ok(checks)
}

// ------------------------------------------------------------- theorem1

fn theorem1_suite() -> CliResult<Vec<Check>> {
    let mut checks = Vec::new();
    for k in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + k);
        let (n, nb) = (2, 4);
        let mut drift = ComplexMatrix::zeros(n * nb, n * nb);
        let mut ctrl = ComplexMatrix::zeros(n * nb, n * nb);
        for i in 0..nb {
            drift.set_submatrix(i * n, i * n, &anti_hermitian(&mut rng, n, 0.8));
            ctrl.set_submatrix(i * n, i * n, &anti_hermitian(&mut rng, n, 0.5));
            for j in i + 1..nb {
                drift.set_submatrix(i * n, j * n, &general(&mut rng, n));
                ctrl.set_submatrix(i * n, j * n, &general(&mut rng, n).scale_re(0.3));
            }
        }
        let layout = VanLoanLayout::from_generators(n, drift, vec![ctrl])?;
        let amps = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let horizon = 1.2;
        let cs = ControlSequence::uniform(vec![amps], horizon)?;
        let table = explicit_blocks(&layout, horizon, &cs, &QuadratureConfig { nodes_per_step: 12, tol: 1e-9 })?;
        let (mut ex, mut rec): (f64, f64) = (0.0, 0.0);
        for e in &table {
            ex = ex.max(e.propagated.max_abs_diff(&e.explicit));
            rec = rec.max(e.propagated.max_abs_diff(&e.recursive));
        }
        checks.push(Check::max(format!("instance {}: explicit vs propagated", k), ex, 1e-8));
        checks.push(Check::max(format!("instance {}: recursive vs propagated", k), rec, 1e-8));
    }
    checks.push(Check::max("symbolic block table vs propagated", symbolic_table_error()?, 1e-8));
    Ok(checks)
}

/// Operator slot given as (numerator, denominator, symbol) summands, with
/// "I" for the identity.
fn slot(parts: &[(i64, i64, &str)]) -> WeightedOp {
    if parts.is_empty() {
        return WeightedOp::zero();
    }
    WeightedOp(
        parts
            .iter()
            .map(|&(p, q, s)| OpTerm {
                coef: rat(p, q),
                power: 0,
                symbol: if s == "I" { OpSymbol::Identity } else { OpSymbol::Named(s.into()) },
            })
            .collect(),
    )
}

/// Four diagonal blocks over two propagator symbols with mixed operator
/// sums above the diagonal; the symbolic table instantiated numerically
/// against the propagated exponential.
fn symbolic_table_error() -> CliResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(4100);
    let n = 2;
    let durations = vec![0.45, 0.6];
    let amps = [0.7, -0.4];
    let diag = ["U", "U", "V", "U"];
    let nb = diag.len();
    let off: Vec<Vec<Vec<(i64, i64, &str)>>> = vec![
        vec![vec![(1, 1, "A")], vec![(3, 2, "I")], vec![(1, 1, "B")]],
        vec![vec![(1, 1, "E"), (1, 1, "A")], vec![]],
        vec![vec![(-1, 2, "B")]],
    ];
    // each symbol is drift + a_k * control on step k
    let mut parts = std::collections::HashMap::new();
    let cfg = QuadratureConfig { nodes_per_step: 10, tol: 1e-9 };
    let mut env = NumericEnv::new(n, durations.clone(), cfg)?;
    for s in ["U", "V"] {
        let p = (anti_hermitian(&mut rng, n, 1.2), anti_hermitian(&mut rng, n, 0.6));
        env = env.with_propagator(s, amps.iter().map(|&a| p.0.add(&p.1.scale_re(a))).collect())?;
        parts.insert(s, p);
    }
    for s in ["A", "B", "E"] {
        let p = (general(&mut rng, n), general(&mut rng, n).scale_re(0.5));
        env = env.with_operator(s, amps.iter().map(|&a| p.0.add(&p.1.scale_re(a))).collect())?;
        parts.insert(s, p);
    }
    parts.insert("I", (ComplexMatrix::identity(n), ComplexMatrix::zeros(n, n)));
    let mut drift = ComplexMatrix::zeros(n * nb, n * nb);
    let mut ctrl = ComplexMatrix::zeros(n * nb, n * nb);
    for (k, s) in diag.iter().enumerate() {
        drift.set_submatrix(k * n, k * n, &parts[s].0);
        ctrl.set_submatrix(k * n, k * n, &parts[s].1);
    }
    for (s, row) in off.iter().enumerate() {
        for (i, summands) in row.iter().enumerate() {
            let (mut d, mut g) = (ComplexMatrix::zeros(n, n), ComplexMatrix::zeros(n, n));
            for &(p, q, sym) in summands {
                let k = p as f64 / q as f64;
                d = d.add(&parts[sym].0.scale_re(k));
                g = g.add(&parts[sym].1.scale_re(k));
            }
            drift.set_submatrix(s * n, (s + i + 1) * n, &d);
            ctrl.set_submatrix(s * n, (s + i + 1) * n, &g);
        }
    }
    let layout = VanLoanLayout::from_generators(n, drift, vec![ctrl])?;
    let cs = ControlSequence::new(vec![amps.to_vec()], durations.clone())?;
    let v = propagate(&layout, &cs)?;
    let sym_off: Vec<Vec<WeightedOp>> = off.iter().map(|row| row.iter().map(|p| slot(p)).collect()).collect();
    let diag_names: Vec<String> = diag.iter().map(|s| s.to_string()).collect();
    let table = to_exponential(&diag_names, &sym_off)?;
    let t: f64 = durations.iter().sum();
    let mut worst: f64 = 0.0;
    for s in 0..nb {
        for j in 0..nb - s {
            let sym = env.eval(&table[s][j], t)?;
            worst = worst.max(sym.max_abs_diff(&layout.block_at(&v, s, s + j)));
        }
    }
    Ok(worst)
}

// ------------------------------------------------------------ gradients

fn gradient_spec(rng: &mut ChaCha8Rng, method: GradientMethod) -> CliResult<(ObjectiveSpec, ControlSequence)> {
    let (steps, t) = (8, 2.0);
    let (fam, cs) = random_system(rng, 2, 3, steps, t)?;
    let a = general(rng, 2);
    let target = expm(&anti_hermitian(rng, 2, 2.0));
    let mut members = Vec::new();
    for (k, scale) in [1.0, 0.85].into_iter().enumerate() {
        let f = GeneratorFamily::new(fam.drift().clone(), fam.controls().iter().map(|g| g.scale_re(scale)).collect())?;
        let layout = build_f1(&f, &DysonSpec::one(vec![a.clone().into()])?)?;
        members.push(EnsembleMember::new(format!("m{}", k), layout, 0.5));
    }
    let terms = vec![
        ObjectiveTerm::fidelity_sq(BlockRef::single("U[1]"), target, 0.6)?,
        ObjectiveTerm::dyson_sq(BlockRef::single("D"), dyson_normalization(&a, t, NormStyle::Sq)?, 0.4)?,
    ];
    Ok((ObjectiveSpec::new(members, terms, None)?.with_method(method), cs))
}

fn gradient_suite() -> CliResult<Vec<Check>> {
    let mut checks = Vec::new();
    for (name, method) in [("commutator series", GradientMethod::CommutatorSeries(15)), ("augmented block", GradientMethod::AugmentedBlock)]
    {
        let mut worst: f64 = 0.0;
        for k in 0..4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + k);
            let (spec, cs) = gradient_spec(&mut rng, method)?;
            let (_, g) = spec.value_and_gradient(&cs)?;
            let fd = finite_diff(|x| spec.evaluate(x), &cs, 1e-5)?;
            let scale = fd.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            let diff = g.iter().flatten().zip(fd.iter().flatten()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(diff / scale);
        }
        checks.push(Check::max(format!("{}: max relative error vs finite differences", name), worst, 1e-6));
    }
    // raw propagator gradients of the two methods on a Van Loan generator
    let mut rng = ChaCha8Rng::seed_from_u64(5100);
    let (steps, t) = (8, 2.0);
    let dt = t / steps as f64;
    let fam = GeneratorFamily::new(
        anti_hermitian(&mut rng, 2, 0.25 / dt),
        (0..3).map(|_| anti_hermitian(&mut rng, 2, 0.15 / dt)).collect(),
    )?;
    let a = general(&mut rng, 2);
    let a = a.scale_re(0.15 / dt / a.frob());
    let layout = build_f1(&fam, &DysonSpec::one(vec![a.into()])?)?;
    let amps = (0..3).map(|_| (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let cs = ControlSequence::uniform(amps, t)?;
    let gen_norm = (0..steps).map(|s| step_generator(&layout, &cs, s).frob() * dt).fold(0.0, f64::max);
    checks.push(Check::max("generator norm times step (Frobenius)", gen_norm, 1.0));
    let series = propagate_with_gradients(&layout, &cs, GradientMethod::CommutatorSeries(15))?;
    let aug = propagate_with_gradients(&layout, &cs, GradientMethod::AugmentedBlock)?;
    let (gs, ga) = (series.gradients.unwrap_or_default(), aug.gradients.unwrap_or_default());
    let mut worst: f64 = 0.0;
    for (x, y) in gs.iter().flatten().zip(ga.iter().flatten()) {
        worst = worst.max(x.max_abs_diff(y));
    }
    checks.push(Check::max("commutator series vs augmented block", worst, 1e-12));
    Ok(checks)
}

// ------------------------------------------------------------- transfer

fn transfer_suite() -> CliResult<Vec<Check>> {
    let mut checks = Vec::new();
    for n in [16, 64, 128, 360] {
        let w = dft_matrix(n)?;
        let err = w.adjoint().dot(&w).max_abs_diff(&ComplexMatrix::identity(n));
        checks.push(Check::max(format!("DFT unitarity n={}", n), err, 1e-13));
    }
    for (n, dt) in [(64, 0.1), (360, 0.0208)] {
        let m = linear_transfer(n, dt, &FrequencyCurve::Constant(1.0), &FrequencyCurve::Constant(0.0))?;
        let err = m.matrix().max_abs_diff(&ComplexMatrix::identity(n));
        checks.push(Check::max(format!("identity curve n={}", n), err, 1e-13));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6000);
    let random = TransferMap::new(
        ComplexMatrix::from_fn(7, 5, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))),
        TransferKind::Experimental,
    );
    let lam = FrequencyCurve::function(|nu| 1.0 / (1.0 + nu * nu));
    let phi = FrequencyCurve::function(|nu| -0.3 * nu);
    let maps = [
        ("random 7x5", random),
        ("linear curve", linear_transfer(16, 0.1, &lam, &phi)?),
        ("filtered padding", opt_transfer_filter_first(24, 4, 0.05, 2.0, BANDPASS_STEEPNESS).map_err(core_err)?),
    ];
    for (name, map) in maps {
        let n = map.in_steps();
        let amps = (0..2).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let cs = ControlSequence::uniform(amps, n as f64 * 0.1)?;
        let jac = jacobian_entries(&map).stacked();
        let x = cs.flat();
        let h = 1e-3;
        let mut worst: f64 = 0.0;
        for k in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            let fp = apply_two_channel(&map, &cs.with_flat(&xp))?.flat();
            let fm = apply_two_channel(&map, &cs.with_flat(&xm))?.flat();
            for r in 0..fp.len() {
                worst = worst.max(((fp[r] - fm[r]) / (2.0 * h) - jac[(r, k)]).abs());
            }
        }
        checks.push(Check::max(format!("Jacobian vs finite differences ({})", name), worst, 1e-9));
    }
    Ok(checks)
}

// ------------------------------------------------------------- symbolic

const SYMBOLIC_DURATIONS: [f64; 2] = [0.45, 0.6];

fn random_env(rng: &mut ChaCha8Rng) -> CliResult<NumericEnv> {
    let n = 2;
    let cfg = QuadratureConfig { nodes_per_step: 10, tol: 1e-9 };
    let mut env = NumericEnv::new(n, SYMBOLIC_DURATIONS.to_vec(), cfg)?;
    for s in ["U", "V"] {
        env = env.with_propagator(s, vec![anti_hermitian(rng, n, 1.5), anti_hermitian(rng, n, 1.5)])?;
    }
    for s in ["A", "B"] {
        env = env.with_operator(s, vec![general(rng, n), general(rng, n)])?;
    }
    Ok(env)
}

fn random_op(rng: &mut ChaCha8Rng) -> WeightedOp {
    let term = |rng: &mut ChaCha8Rng| {
        let symbol = match rng.gen_range(0..7) {
            0 => OpSymbol::Zero,
            1..=3 => OpSymbol::Identity,
            4 => OpSymbol::Named("A".into()),
            _ => OpSymbol::Named("B".into()),
        };
        let coef = if rng.gen_bool(0.7) { rat(1, 1) } else { rat(rng.gen_range(-3..4), rng.gen_range(1..4)) };
        OpTerm { coef, power: rng.gen_range(0..3), symbol }
    };
    let mut terms = vec![term(rng)];
    if rng.gen_bool(0.25) {
        terms.push(term(rng));
    }
    WeightedOp(terms)
}

fn random_expr(rng: &mut ChaCha8Rng) -> CliResult<SymExpr> {
    let mut e = SymExpr::zero();
    let syms = ["U", "V"];
    for _ in 0..rng.gen_range(1..3) {
        // frames mostly chain, as they do in block exponentials
        let mut prev = syms[rng.gen_range(0..2)];
        let mut fs = Vec::new();
        for _ in 0..rng.gen_range(1..4) {
            let u = if rng.gen_bool(0.85) { prev } else { syms[rng.gen_range(0..2)] };
            let w = if rng.gen_bool(0.8) { u } else { syms[rng.gen_range(0..2)] };
            fs.push(Factor::new(u, random_op(rng), w));
            prev = w;
        }
        e.add_term(rat(rng.gen_range(-4..5), rng.gen_range(1..3)), SymTerm::int(rng.gen_range(0..2), fs)?);
    }
    if rng.gen_bool(0.3) {
        e.add_term(rat(1, 1), SymTerm::ex(rng.gen_range(0..3), "V"));
    }
    Ok(e)
}

fn symbolic_suite() -> CliResult<Vec<Check>> {
    let cases = 40u64;
    let results: Vec<(bool, f64)> = (0..cases)
        .into_par_iter()
        .map(|k| -> CliResult<(bool, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(7000 + k);
            let env = random_env(&mut rng)?;
            let e = random_expr(&mut rng)?;
            let once = simplify(&e)?;
            let idempotent = simplify(&once)? == once;
            let t = SYMBOLIC_DURATIONS.iter().sum();
            let (x, y) = (env.eval(&e, t)?, env.eval(&once, t)?);
            Ok((idempotent, x.max_abs_diff(&y) / (1.0 + x.max_abs())))
        })
        .collect::<CliResult<_>>()?;
    let not_idempotent = results.iter().filter(|r| !r.0).count();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let got = worked_example()?;
    let differing = got.lines().zip(GOLDEN.lines()).filter(|(a, b)| a != b).count()
        + got.lines().count().abs_diff(GOLDEN.lines().count());
    Ok(vec![
        Check::exact(format!("simplify idempotent on {} random expressions (failures)", cases), not_idempotent as f64, 0.0),
        Check::max(format!("simplify preserves value on {} random expressions", cases), worst, 1e-8),
        Check::exact("worked example vs golden output (differing lines)", differing as f64, 0.0),
    ])
}

// ----------------------------------------------------------- conjecture

fn conjecture_suite() -> CliResult<Vec<Check>> {
    let mut checks = Vec::new();
    for s1 in 0..=4 {
        for s2 in 0..=4 {
            let q = conjecture_matrix(s1, s2)?;
            let deficiency = q.len() - rank(&q);
            checks.push(Check::exact(format!("rank deficiency s1={} s2={}", s1, s2), deficiency as f64, 0.0));
        }
    }
    let want = [[0, 0, 1, 0], [1, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0]];
    let q = conjecture_matrix(1, 1)?;
    let mismatched = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|&(i, j)| q[i][j] != rat(want[i][j], 1)).count();
    checks.push(Check::exact("bilinear matrix entries differing from the displayed one", mismatched as f64, 0.0));
    Ok(checks)
}
