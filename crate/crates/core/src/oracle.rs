//! Reference evaluations that avoid the block-exponential machinery:
//! nested Gauss-Legendre quadrature of Dyson integrals, adaptive
//! Runge-Kutta propagation and central finite differences.

use num_complex::Complex64;

use crate::blockgen::{DysonOperator, GeneratorFamily, VanLoanLayout};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::matcore::{expm, ComplexMatrix, ONE};
use crate::propagate::ControlSequence;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureConfig {
    pub nodes_per_step: usize,
    pub tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { nodes_per_step: 16, tol: 1e-9 }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Propagator of a piecewise-constant generator, evaluable at any time.
#[derive(Clone, Debug)]
pub struct PiecewisePropagator {
    starts: Vec<f64>,
    gens: Vec<ComplexMatrix>,
    at_start: Vec<ComplexMatrix>,
    inv_at_start: Vec<ComplexMatrix>,
}

impl PiecewisePropagator {
    pub fn new(starts: Vec<f64>, durations: &[f64], gens: Vec<ComplexMatrix>) -> Self {
        let n = gens[0].rows();
        let mut at_start = Vec::with_capacity(gens.len());
        let mut inv_at_start = Vec::with_capacity(gens.len());
        let (mut u, mut ui) = (ComplexMatrix::identity(n), ComplexMatrix::identity(n));
        for (g, &d) in gens.iter().zip(durations) {
            at_start.push(u.clone());
            inv_at_start.push(ui.clone());
            u = expm(&g.scale_re(d)).dot(&u);
            ui = ui.dot(&expm(&g.scale_re(-d)));
        }
        PiecewisePropagator { starts, gens, at_start, inv_at_start }
    }

    pub fn from_family(family: &GeneratorFamily, controls: &ControlSequence) -> Self {
        let gens = (0..controls.steps()).map(|s| family.generator(&controls.column(s))).collect();
        Self::new(controls.start_times(), controls.durations(), gens)
    }

    fn segment(&self, t: f64) -> usize {
        match self.starts.iter().rposition(|&s| s <= t) {
            Some(k) => k,
            None => 0,
        }
    }

    pub fn at(&self, t: f64) -> ComplexMatrix {
        let k = self.segment(t);
        expm(&self.gens[k].scale_re(t - self.starts[k])).dot(&self.at_start[k])
    }

    pub fn inv_at(&self, t: f64) -> ComplexMatrix {
        let k = self.segment(t);
        self.inv_at_start[k].dot(&expm(&self.gens[k].scale_re(self.starts[k] - t)))
    }
}

/// Piecewise-constant operator on the same time grid.
#[derive(Clone, Debug)]
pub struct PiecewiseOperator {
    starts: Vec<f64>,
    values: Vec<ComplexMatrix>,
}

impl PiecewiseOperator {
    pub fn new(starts: Vec<f64>, values: Vec<ComplexMatrix>) -> Self {
        PiecewiseOperator { starts, values }
    }

    pub fn from_dyson(op: &DysonOperator, controls: &ControlSequence) -> Self {
        let values = (0..controls.steps()).map(|s| op.at(&controls.column(s))).collect();
        Self::new(controls.start_times(), values)
    }

    pub fn at(&self, t: f64) -> &ComplexMatrix {
        let k = self.starts.iter().rposition(|&s| s <= t).unwrap_or(0);
        &self.values[k]
    }
}

/// One link L^{-1}(t_k) A(t_k) R(t_k) of a nested integral.
pub struct ChainFactor<'a> {
    pub left: &'a PiecewisePropagator,
    pub op: &'a PiecewiseOperator,
    pub right: &'a PiecewisePropagator,
}

/// left_1(t) * int_{t >= t_1 >= ... >= t_m >= 0} w(t_1..t_m) prod_k L_k^{-1} A_k R_k,
/// splitting every inner interval at the segment boundaries `breaks`.
pub fn chain_integral(
    t: f64,
    factors: &[ChainFactor<'_>],
    weight: &dyn Fn(&[f64]) -> Complex64,
    breaks: &[f64],
    cfg: &QuadratureConfig,
) -> Result<ComplexMatrix> {
    if factors.is_empty() {
        return arg_err("empty integral chain");
    }
    if cfg.nodes_per_step < 2 {
        return arg_err("at least two nodes per step");
    }
    let (gx, gw) = gauss_legendre(cfg.nodes_per_step);
    let n = factors[0].left.gens[0].rows();
    let mut times = Vec::with_capacity(factors.len());
    let mut acc = ComplexMatrix::zeros(n, n);
    let ctx = Ctx { factors, weight, breaks, gx: &gx, gw: &gw };
    ctx.rec(0, t, ONE, &ComplexMatrix::identity(n), &mut times, &mut acc);
    Ok(factors[0].left.at(t).dot(&acc))
}

struct Ctx<'a, 'b> {
    factors: &'a [ChainFactor<'b>],
    weight: &'a dyn Fn(&[f64]) -> Complex64,
    breaks: &'a [f64],
    gx: &'a [f64],
    gw: &'a [f64],
}

impl Ctx<'_, '_> {
    fn rec(&self, level: usize, upper: f64, w: Complex64, prefix: &ComplexMatrix, times: &mut Vec<f64>, acc: &mut ComplexMatrix) {
        let mut cuts = vec![0.0];
        cuts.extend(self.breaks.iter().copied().filter(|&b| b > 0.0 && b < upper));
        cuts.push(upper);
        let f = &self.factors[level];
        for iv in cuts.windows(2) {
            let (a, b) = (iv[0], iv[1]);
            let half = 0.5 * (b - a);
            if half <= 0.0 {
                continue;
            }
            for (x, wx) in self.gx.iter().zip(self.gw) {
                let tk = a + half * (x + 1.0);
                let integrand = f.left.inv_at(tk).dot(f.op.at(tk)).dot(&f.right.at(tk));
                let next = prefix.dot(&integrand);
                times.push(tk);
                let wk = w * (wx * half);
                if level + 1 == self.factors.len() {
                    acc.axpy(wk * (self.weight)(times), &next);
                } else {
                    self.rec(level + 1, tk, wk, &next, times, acc);
                }
                times.pop();
            }
        }
    }
}

/// U(T) int ... int f(t_1..t_m) A~_1(t_1) ... A~_m(t_m), toggling frame of
/// the family under the given controls, m <= 3.
pub fn nested_quadrature(
    family: &GeneratorFamily,
    controls: &ControlSequence,
    ops: &[DysonOperator],
    weight: &dyn Fn(&[f64]) -> Complex64,
    cfg: &QuadratureConfig,
) -> Result<ComplexMatrix> {
    nested_quadrature_at(family, controls, ops, weight, controls.total_time(), cfg)
}

pub fn nested_quadrature_at(
    family: &GeneratorFamily,
    controls: &ControlSequence,
    ops: &[DysonOperator],
    weight: &dyn Fn(&[f64]) -> Complex64,
    t: f64,
    cfg: &QuadratureConfig,
) -> Result<ComplexMatrix> {
    if ops.is_empty() || ops.len() > 3 {
        return arg_err(format!("nested quadrature supports orders 1..3, got {}", ops.len()));
    }
    if controls.channels() != family.control_count() {
        return dim_err("controls do not match the family");
    }
    let u = PiecewisePropagator::from_family(family, controls);
    let pops: Vec<PiecewiseOperator> = ops.iter().map(|o| PiecewiseOperator::from_dyson(o, controls)).collect();
    let factors: Vec<ChainFactor> = pops.iter().map(|op| ChainFactor { left: &u, op, right: &u }).collect();
    chain_integral(t, &factors, weight, &controls.start_times(), cfg)
}

/// Diagonal-block propagators and off-diagonal block operators of a
/// uniform block layout under given controls.
pub struct BlockSystem {
    pub diag: Vec<PiecewisePropagator>,
    pub offdiag: Vec<Vec<PiecewiseOperator>>,
    pub breaks: Vec<f64>,
}

impl BlockSystem {
    pub fn new(layout: &VanLoanLayout, controls: &ControlSequence) -> Result<Self> {
        if layout.block_dim().is_none() {
            return dim_err("block system needs uniform block sizes");
        }
        let nb = layout.block_count();
        let starts = controls.start_times();
        let gens: Vec<ComplexMatrix> = (0..controls.steps()).map(|s| layout.generator(&controls.column(s))).collect();
        let diag = (0..nb)
            .map(|k| {
                let g: Vec<ComplexMatrix> = gens.iter().map(|g| layout.block_at(g, k, k)).collect();
                PiecewisePropagator::new(starts.clone(), controls.durations(), g)
            })
            .collect();
        let offdiag = (0..nb)
            .map(|i| {
                (0..nb)
                    .map(|j| PiecewiseOperator::new(starts.clone(), gens.iter().map(|g| layout.block_at(g, i, j)).collect()))
                    .collect()
            })
            .collect();
        Ok(BlockSystem { diag, offdiag, breaks: starts })
    }

    /// Int_(i_1, ..., i_k)(t) for a strictly increasing index chain.
    pub fn chain(&self, idx: &[usize], t: f64, cfg: &QuadratureConfig) -> Result<ComplexMatrix> {
        if idx.len() < 2 {
            return arg_err("an index chain needs two entries");
        }
        let factors: Vec<ChainFactor> = idx
            .windows(2)
            .map(|w| ChainFactor { left: &self.diag[w[0]], op: &self.offdiag[w[0]][w[1]], right: &self.diag[w[1]] })
            .collect();
        chain_integral(t, &factors, &|_| ONE, &self.breaks, cfg)
    }

    /// Sum over every increasing chain from s to e.
    pub fn explicit(&self, s: usize, e: usize, t: f64, cfg: &QuadratureConfig) -> Result<ComplexMatrix> {
        if s == e {
            return Ok(self.diag[s].at(t));
        }
        let inner: Vec<usize> = (s + 1..e).collect();
        let n = self.diag[s].at(0.0).rows();
        let mut total = ComplexMatrix::zeros(n, n);
        for mask in 0u32..(1 << inner.len()) {
            let mut idx = vec![s];
            idx.extend(inner.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &v)| v));
            idx.push(e);
            total = total.add(&self.chain(&idx, t, cfg)?);
        }
        Ok(total)
    }

    /// C_{s,e}(t) = Int_(s,e)(t) + sum_k U_s(t) int U_s^{-1} B_{s,k} C_{k,e}.
    pub fn recursive(&self, s: usize, e: usize, t: f64, cfg: &QuadratureConfig) -> Result<ComplexMatrix> {
        if s == e {
            return Ok(self.diag[s].at(t));
        }
        let mut total = self.chain(&[s, e], t, cfg)?;
        let (gx, gw) = gauss_legendre(cfg.nodes_per_step);
        let n = total.rows();
        for k in s + 1..e {
            let mut acc = ComplexMatrix::zeros(n, n);
            let mut cuts = vec![0.0];
            cuts.extend(self.breaks.iter().copied().filter(|&b| b > 0.0 && b < t));
            cuts.push(t);
            for iv in cuts.windows(2) {
                let half = 0.5 * (iv[1] - iv[0]);
                for (x, w) in gx.iter().zip(&gw) {
                    let t1 = iv[0] + half * (x + 1.0);
                    let inner = self.recursive(k, e, t1, cfg)?;
                    let term = self.diag[s].inv_at(t1).dot(self.offdiag[s][k].at(t1)).dot(&inner);
                    acc.axpy(Complex64::new(w * half, 0.0), &term);
                }
            }
            total = total.add(&self.diag[s].at(t).dot(&acc));
        }
        Ok(total)
    }
}

/// Dormand-Prince 5(4) integration of dU/dt = G(t) U with the segment
/// boundaries as breakpoints.
pub fn ode_propagate(family: &GeneratorFamily, controls: &ControlSequence, tol: f64) -> Result<ComplexMatrix> {
    if controls.channels() != family.control_count() {
        return dim_err("controls do not match the family");
    }
    if !(tol > 0.0) {
        return arg_err("tolerance must be positive");
    }
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let n = family.dim();
    let mut u = ComplexMatrix::identity(n);
    let starts = controls.start_times();
    let mut h = controls.total_time() / 100.0;
    for s in 0..controls.steps() {
        let g = family.generator(&controls.column(s));
        let (t0, t1) = (starts[s], starts[s] + controls.durations()[s]);
        let mut t = t0;
        while t < t1 {
            if h < 1e-14 * (1.0 + t.abs()) {
                return Err(Error::StepUnderflow(t));
            }
            let step = h.min(t1 - t);
            let mut k: Vec<ComplexMatrix> = Vec::with_capacity(7);
            k.push(g.dot(&u));
            for row in A.iter() {
                let mut y = u.clone();
                for (j, a) in row.iter().enumerate().take(k.len()) {
                    if *a != 0.0 {
                        y.axpy(Complex64::new(step * a, 0.0), &k[j]);
                    }
                }
                k.push(g.dot(&y));
            }
            // the 7th stage is evaluated at the 5th-order solution
            let mut y5 = u.clone();
            for (j, a) in A[5].iter().enumerate() {
                if *a != 0.0 {
                    y5.axpy(Complex64::new(step * a, 0.0), &k[j]);
                }
            }
            let mut err = ComplexMatrix::zeros(n, n);
            for (j, e) in E.iter().enumerate() {
                if *e != 0.0 {
                    err.axpy(Complex64::new(step * e, 0.0), &k[j]);
                }
            }
            let scale = tol * (1.0 + y5.max_abs());
            let ratio = err.max_abs() / scale;
            if ratio <= 1.0 {
                u = y5;
                t += step;
            }
            let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            h = step * factor;
        }
    }
    Ok(u)
}

/// Central differences of a scalar function of the control amplitudes.
pub fn finite_diff<F>(f: F, at: &ControlSequence, h: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&ControlSequence) -> Result<f64>,
{
    if !(h > 0.0) {
        return arg_err("step must be positive");
    }
    let mut out = vec![vec![0.0; at.steps()]; at.channels()];
    for ch in 0..at.channels() {
        for s in 0..at.steps() {
            let mut p = at.clone();
            p.amplitudes_mut()[ch][s] += h;
            let mut m = at.clone();
            m.amplitudes_mut()[ch][s] -= h;
            out[ch][s] = (f(&p)? - f(&m)?) / (2.0 * h);
        }
    }
    Ok(out)
}

/// int_0^inf g(u) cos(u) du for a smooth, slowly varying g: Gauss panels
/// over half periods, a geometric refinement of [0, pi] near the origin
/// down to `fine`, and repeated averaging of the alternating tail.
pub fn cosine_integral(g: &dyn Fn(f64) -> f64, fine: f64, half_periods: usize) -> f64 {
    let (gx, gw) = gauss_legendre(20);
    let panel = |a: f64, b: f64| -> f64 {
        let half = 0.5 * (b - a);
        gx.iter().zip(&gw).map(|(x, w)| {
            let u = a + half * (x + 1.0);
            w * half * g(u) * u.cos()
        }).sum()
    };
    let pi = std::f64::consts::PI;
    let mut head = 0.0;
    let mut a = 0.0;
    let mut b = fine.min(pi / 2.0);
    while b < pi / 2.0 {
        head += panel(a, b);
        a = b;
        b *= 2.0;
    }
    head += panel(a, pi / 2.0);
    let mut partial = Vec::with_capacity(half_periods);
    let mut s = head;
    for k in 0..half_periods {
        let lo = pi / 2.0 + k as f64 * pi;
        s += panel(lo, lo + pi / 2.0) + panel(lo + pi / 2.0, lo + pi);
        partial.push(s);
    }
    // Euler-style repeated averaging of alternating partial sums
    let mut level = partial;
    while level.len() > 1 {
        level = level.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    level[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{c, ops::*};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_family(rng: &mut ChaCha8Rng, n: usize) -> GeneratorFamily {
        let mut ah = || {
            let h = ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            h.sub(&h.adjoint()).scale_re(0.25)
        };
        GeneratorFamily::new(ah(), vec![ah(), ah()]).unwrap()
    }

    fn random_controls(rng: &mut ChaCha8Rng, steps: usize, t: f64) -> ControlSequence {
        let amps = (0..2).map(|_| (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        ControlSequence::uniform(amps, t).unwrap()
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        for n in 2..20 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n {} deg {}", n, deg);
            }
        }
    }

    #[test]
    fn constant_integrands() {
        let f = GeneratorFamily::new(ComplexMatrix::zeros(2, 2), vec![ComplexMatrix::zeros(2, 2)]).unwrap();
        let cs = ControlSequence::zeros(1, 3, 2.0).unwrap();
        let cfg = QuadratureConfig::default();
        let one = nested_quadrature(&f, &cs, &[sigma_x().into()], &|_| ONE, &cfg).unwrap();
        assert!(one.max_abs_diff(&sigma_x().scale_re(2.0)) < 1e-13);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rf = random_family(&mut rng, 2);
        let cs = random_controls(&mut rng, 3, 1.5);
        let id: DysonOperator = ComplexMatrix::identity(2).into();
        let two = nested_quadrature(&rf, &cs, &[id.clone(), id.clone()], &|_| ONE, &cfg).unwrap();
        let u = crate::propagate::propagate_family(&rf, &cs).unwrap();
        assert!(two.max_abs_diff(&u.scale_re(1.5 * 1.5 / 2.0)) < 1e-12);
        assert!(nested_quadrature(&rf, &cs, &[id.clone(), id.clone(), id.clone(), id], &|_| ONE, &cfg).is_err());
    }

    #[test]
    fn self_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let f = GeneratorFamily::new(
            sigma_z().scale(c(0.0, -2.0)),
            vec![sigma_x().scale(c(0.0, -2.0)), sigma_y().scale(c(0.0, -2.0))],
        )
        .unwrap();
        let cs = random_controls(&mut rng, 2, 2.0);
        let ops: Vec<DysonOperator> = vec![sigma_x().into(), sigma_z().into()];
        let q = |n| nested_quadrature(&f, &cs, &ops, &|_| ONE, &QuadratureConfig { nodes_per_step: n, tol: 1e-9 }).unwrap();
        let reference = q(32);
        let e1 = q(4).max_abs_diff(&reference);
        let e2 = q(8).max_abs_diff(&reference);
        assert!(e1 / e2 >= 100.0 || e2 < 1e-13, "{} {}", e1, e2);
    }

    #[test]
    fn ode_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let f = random_family(&mut rng, 3);
        let cs = random_controls(&mut rng, 3, 2.0);
        let exact = crate::propagate::propagate_family(&f, &cs).unwrap();
        let tol = 1e-12;
        let u = ode_propagate(&f, &cs, tol).unwrap();
        assert!(u.max_abs_diff(&exact) < 1e-11);
        let drift = u.dot(&u.adjoint()).max_abs_diff(&ComplexMatrix::identity(3));
        assert!(drift < 10.0 * tol.max(1e-12) * 10.0);
        let one = ControlSequence::new(vec![vec![0.3], vec![-0.2]], vec![1.0]).unwrap();
        let g = f.generator(&[0.3, -0.2]);
        assert!(ode_propagate(&f, &one, 1e-10).unwrap().max_abs_diff(&expm(&g)) < 1e-9);
    }

    #[test]
    fn finite_diff_basics() {
        let at = ControlSequence::uniform(vec![vec![0.5, -1.0]], 1.0).unwrap();
        let lin = finite_diff(|cs| Ok(3.0 * cs.amplitudes()[0][0] - cs.amplitudes()[0][1]), &at, 0.3).unwrap();
        assert!((lin[0][0] - 3.0).abs() < 1e-14 && (lin[0][1] + 1.0).abs() < 1e-14);
        let quad = finite_diff(|cs| Ok(cs.amplitudes()[0][0].powi(2)), &at, 1e-3).unwrap();
        assert!((quad[0][0] - 1.0).abs() < 1e-12);
        // cubic: truncation error h^2 so Richardson ratio of errors is 4
        let cubic = |h: f64| finite_diff(|cs| Ok(cs.amplitudes()[0][0].powi(3)), &at, h).unwrap()[0][0] - 0.75;
        let r = cubic(1e-2) / cubic(5e-3);
        assert!((r - 4.0).abs() < 1e-3, "{}", r);
    }

    #[test]
    fn cosine_integral_known_value() {
        // int_0^inf cos(u) / (1 + u^2) du = pi / (2e)
        let v = cosine_integral(&|u| 1.0 / (1.0 + u * u), 0.1, 60);
        assert!((v - std::f64::consts::PI / (2.0 * std::f64::consts::E)).abs() < 1e-8, "{}", v);
    }
}
