//! Piecewise-constant propagation and exact control gradients.

use num_complex::Complex64;

use crate::blockgen::{GeneratorFamily, VanLoanLayout};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::matcore::{expm, matmul_into, trace_product, ComplexMatrix};

/// Piecewise-constant control amplitudes, `amplitudes[channel][step]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSequence {
    amplitudes: Vec<Vec<f64>>,
    durations: Vec<f64>,
}

impl ControlSequence {
    pub fn new(amplitudes: Vec<Vec<f64>>, durations: Vec<f64>) -> Result<Self> {
        if durations.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return arg_err("step durations must be finite and nonnegative");
        }
        if durations.iter().sum::<f64>() <= 0.0 {
            return arg_err("total duration must be positive");
        }
        if let Some(k) = amplitudes.iter().position(|row| row.len() != durations.len()) {
            return dim_err(format!("channel {} has {} steps, expected {}", k + 1, amplitudes[k].len(), durations.len()));
        }
        if amplitudes.iter().flatten().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("control amplitude".into()));
        }
        Ok(ControlSequence { amplitudes, durations })
    }

    /// Equal steps over total time `t`.
    pub fn uniform(amplitudes: Vec<Vec<f64>>, t: f64) -> Result<Self> {
        let n = amplitudes.first().map_or(0, |r| r.len());
        if n == 0 {
            return arg_err("no steps");
        }
        Self::new(amplitudes, vec![t / n as f64; n])
    }

    pub fn zeros(channels: usize, steps: usize, t: f64) -> Result<Self> {
        if steps == 0 {
            return arg_err("no steps");
        }
        Self::new(vec![vec![0.0; steps]; channels], vec![t / steps as f64; steps])
    }

    pub fn channels(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn steps(&self) -> usize {
        self.durations.len()
    }

    pub fn amplitudes(&self) -> &[Vec<f64>] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.amplitudes
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn total_time(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// Amplitudes of all channels at one step.
    pub fn column(&self, step: usize) -> Vec<f64> {
        self.amplitudes.iter().map(|row| row[step]).collect()
    }

    pub fn start_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.durations
            .iter()
            .map(|d| {
                let s = t;
                t += d;
                s
            })
            .collect()
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.channels() != other.channels() {
            return dim_err("channel counts differ");
        }
        let amps = self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        let durs = self.durations.iter().chain(&other.durations).copied().collect();
        Self::new(amps, durs)
    }

    /// Flattened channel-major vector.
    pub fn flat(&self) -> Vec<f64> {
        self.amplitudes.iter().flatten().copied().collect()
    }

    pub fn with_flat(&self, x: &[f64]) -> Self {
        let n = self.steps();
        let amps = (0..self.channels()).map(|c| x[c * n..(c + 1) * n].to_vec()).collect();
        ControlSequence { amplitudes: amps, durations: self.durations.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradientMethod {
    /// Commutator expansion with the given number of nested commutators.
    CommutatorSeries(usize),
    /// Exponential of the 2x2 block generator [[X, G],[0, X]].
    AugmentedBlock,
}

impl Default for GradientMethod {
    fn default() -> Self {
        GradientMethod::CommutatorSeries(15)
    }
}

#[derive(Clone, Debug)]
pub struct PropagationResult {
    pub final_propagator: ComplexMatrix,
    /// `gradients[channel][step]` = dV(T)/d beta_{channel, step}.
    pub gradients: Option<Vec<Vec<ComplexMatrix>>>,
}

fn check(layout: &VanLoanLayout, controls: &ControlSequence) -> Result<()> {
    if controls.channels() != layout.control_count() {
        return dim_err(format!(
            "controls have {} channels, layout expects {}",
            controls.channels(),
            layout.control_count()
        ));
    }
    Ok(())
}

struct Component {
    off: usize,
    dim: usize,
    drift: ComplexMatrix,
    controls: Vec<ComplexMatrix>,
}

impl Component {
    fn split(layout: &VanLoanLayout) -> Vec<Component> {
        layout
            .components()
            .iter()
            .map(|&(off, dim)| Component {
                off,
                dim,
                drift: layout.drift().submatrix(off, off, dim, dim),
                controls: layout.controls().iter().map(|g| g.submatrix(off, off, dim, dim)).collect(),
            })
            .collect()
    }

    fn step_generator(&self, amps: &[f64], dt: f64) -> ComplexMatrix {
        let mut x = self.drift.scale_re(dt);
        for (a, g) in amps.iter().zip(&self.controls) {
            if *a != 0.0 {
                x.axpy(Complex64::new(a * dt, 0.0), g);
            }
        }
        x
    }

    /// Step exponentials with reuse for bit-identical consecutive steps.
    fn step_exponentials(&self, controls: &ControlSequence) -> (Vec<ComplexMatrix>, Vec<ComplexMatrix>) {
        let mut gens: Vec<ComplexMatrix> = Vec::with_capacity(controls.steps());
        let mut exps: Vec<ComplexMatrix> = Vec::with_capacity(controls.steps());
        let mut prev: Option<(Vec<f64>, f64)> = None;
        for s in 0..controls.steps() {
            let col = controls.column(s);
            let dt = controls.durations()[s];
            if let Some((pc, pd)) = &prev {
                if pd.to_bits() == dt.to_bits() && pc.iter().zip(&col).all(|(a, b)| a.to_bits() == b.to_bits()) {
                    gens.push(gens[s - 1].clone());
                    exps.push(exps[s - 1].clone());
                    continue;
                }
            }
            let x = self.step_generator(&col, dt);
            exps.push(expm(&x));
            gens.push(x);
            prev = Some((col, dt));
        }
        (gens, exps)
    }
}

fn product(exps: &[ComplexMatrix], dim: usize) -> ComplexMatrix {
    let mut v = ComplexMatrix::identity(dim);
    let mut tmp = ComplexMatrix::zeros(dim, dim);
    for e in exps {
        matmul_into(e, &v, &mut tmp);
        std::mem::swap(&mut v, &mut tmp);
    }
    v
}

/// V(T) = prod_j expm[(L_0 + sum_i beta_ij L_i) dT_j], step 1 applied first.
pub fn propagate(layout: &VanLoanLayout, controls: &ControlSequence) -> Result<ComplexMatrix> {
    check(layout, controls)?;
    let mut v = ComplexMatrix::zeros(layout.dim(), layout.dim());
    for comp in Component::split(layout) {
        let (_, exps) = comp.step_exponentials(controls);
        v.set_submatrix(comp.off, comp.off, &product(&exps, comp.dim));
    }
    Ok(v)
}

/// Propagator from 0 to time `t` (clamped to the sequence length).
pub fn propagate_to(layout: &VanLoanLayout, controls: &ControlSequence, t: f64) -> Result<ComplexMatrix> {
    check(layout, controls)?;
    let mut amps = vec![Vec::new(); controls.channels()];
    let mut durs = Vec::new();
    let mut start = 0.0;
    for (s, &d) in controls.durations().iter().enumerate() {
        if start >= t {
            break;
        }
        let dd = d.min(t - start);
        for (ch, row) in amps.iter_mut().enumerate() {
            row.push(controls.amplitudes()[ch][s]);
        }
        durs.push(dd);
        start += d;
    }
    if durs.is_empty() || t <= 0.0 {
        return Ok(ComplexMatrix::identity(layout.dim()));
    }
    propagate(layout, &ControlSequence::new(amps, durs)?)
}

pub fn propagate_family(family: &GeneratorFamily, controls: &ControlSequence) -> Result<ComplexMatrix> {
    propagate(&VanLoanLayout::from_family(family), controls)
}

/// Integral of e^{-Xt} G e^{Xt} over one unit step of the scaled generator
/// X = L dt, as dt * sum_k ad^k(G) / (k+1)!, with ad(Y) = [Y, X].
fn commutator_integral(x: &ComplexMatrix, g: &ComplexMatrix, dt: f64, terms: usize) -> ComplexMatrix {
    let n = x.rows();
    let mut ck = g.clone();
    let mut sum = g.clone();
    let mut fact = 1.0;
    let (mut a, mut b) = (ComplexMatrix::zeros(n, n), ComplexMatrix::zeros(n, n));
    for k in 1..=terms {
        matmul_into(&ck, x, &mut a);
        matmul_into(x, &ck, &mut b);
        ck = a.sub(&b);
        fact *= (k + 1) as f64;
        sum.axpy(Complex64::new(1.0 / fact, 0.0), &ck);
    }
    sum.scale_re(dt)
}

fn upsilon(x: &ComplexMatrix, e: &ComplexMatrix, g: &ComplexMatrix, dt: f64, method: GradientMethod) -> ComplexMatrix {
    match method {
        GradientMethod::CommutatorSeries(terms) => e.dot(&commutator_integral(x, g, dt, terms)),
        GradientMethod::AugmentedBlock => {
            let n = x.rows();
            let mut big = ComplexMatrix::zeros(2 * n, 2 * n);
            big.set_submatrix(0, 0, x);
            big.set_submatrix(n, n, x);
            big.set_submatrix(0, n, &g.scale_re(dt));
            expm(&big).submatrix(0, n, n, n)
        }
    }
}

fn check_method(method: GradientMethod) -> Result<()> {
    if let GradientMethod::CommutatorSeries(t) = method {
        if t < 1 {
            return arg_err("commutator series needs at least one term");
        }
    }
    Ok(())
}

/// V(T) and every dV(T)/d beta_rs = suffix * Upsilon_rs * prefix.
pub fn propagate_with_gradients(
    layout: &VanLoanLayout,
    controls: &ControlSequence,
    method: GradientMethod,
) -> Result<PropagationResult> {
    check(layout, controls)?;
    check_method(method)?;
    let dim = layout.dim();
    let (nc, ns) = (controls.channels(), controls.steps());
    let mut v = ComplexMatrix::zeros(dim, dim);
    let mut grads = vec![vec![ComplexMatrix::zeros(dim, dim); ns]; nc];
    for comp in Component::split(layout) {
        let d = comp.dim;
        let (gens, exps) = comp.step_exponentials(controls);
        let mut prefix = Vec::with_capacity(ns);
        let mut p = ComplexMatrix::identity(d);
        for e in &exps {
            prefix.push(p.clone());
            p = e.dot(&p);
        }
        v.set_submatrix(comp.off, comp.off, &p);
        let mut suffix = ComplexMatrix::identity(d);
        for s in (0..ns).rev() {
            let dt = controls.durations()[s];
            for (r, g) in comp.controls.iter().enumerate() {
                if g.max_abs() == 0.0 {
                    continue;
                }
                let up = upsilon(&gens[s], &exps[s], g, dt, method);
                let full = suffix.dot(&up).dot(&prefix[s]);
                grads[r][s].set_submatrix(comp.off, comp.off, &full);
            }
            suffix = suffix.dot(&exps[s]);
        }
    }
    Ok(PropagationResult { final_propagator: v, gradients: Some(grads) })
}

/// Value and gradient of a real function f(V(T)) whose differential is
/// Re Tr[M^dagger dV]. `cotangent` returns (f, M) given V(T).
/// The result is `(f, V, grad[channel][step])`.
pub fn propagate_adjoint<F>(
    layout: &VanLoanLayout,
    controls: &ControlSequence,
    method: GradientMethod,
    cotangent: F,
) -> Result<(f64, ComplexMatrix, Vec<Vec<f64>>)>
where
    F: FnOnce(&ComplexMatrix) -> Result<(f64, ComplexMatrix)>,
{
    check(layout, controls)?;
    check_method(method)?;
    let dim = layout.dim();
    let (nc, ns) = (controls.channels(), controls.steps());
    let comps = Component::split(layout);
    let mut v = ComplexMatrix::zeros(dim, dim);
    let mut cache = Vec::with_capacity(comps.len());
    for comp in &comps {
        let (gens, exps) = comp.step_exponentials(controls);
        let mut prefix = Vec::with_capacity(ns);
        let mut p = ComplexMatrix::identity(comp.dim);
        let mut tmp = ComplexMatrix::zeros(comp.dim, comp.dim);
        for e in &exps {
            prefix.push(p.clone());
            matmul_into(e, &p, &mut tmp);
            std::mem::swap(&mut p, &mut tmp);
        }
        v.set_submatrix(comp.off, comp.off, &p);
        cache.push((gens, exps, prefix));
    }
    let (value, m) = cotangent(&v)?;
    if (m.rows(), m.cols()) != (dim, dim) {
        return dim_err("cotangent has the wrong shape");
    }
    let mut grad = vec![vec![0.0; ns]; nc];
    for (comp, (gens, exps, prefix)) in comps.iter().zip(&cache) {
        let d = comp.dim;
        let active: Vec<usize> = (0..nc).filter(|&r| comp.controls[r].max_abs() != 0.0).collect();
        if active.is_empty() {
            continue;
        }
        let mc = m.submatrix(comp.off, comp.off, d, d);
        if mc.max_abs() == 0.0 {
            continue;
        }
        // r_s = M^dagger * (E_N ... E_{s+1})
        let mut r = mc.adjoint();
        let (mut y, mut t1, mut t2) = (ComplexMatrix::zeros(d, d), ComplexMatrix::zeros(d, d), ComplexMatrix::zeros(d, d));
        for s in (0..ns).rev() {
            let dt = controls.durations()[s];
            matmul_into(&prefix[s], &r, &mut t1);
            match method {
                GradientMethod::CommutatorSeries(terms) => {
                    // Tr[Y0 ad^k(G)] = Tr[Y_k G] with Y_k = [X, Y_{k-1}]
                    matmul_into(&t1, &exps[s], &mut y);
                    let x = &gens[s];
                    let mut z = y.clone();
                    let mut fact = 1.0;
                    for k in 1..=terms {
                        matmul_into(x, &y, &mut t1);
                        matmul_into(&y, x, &mut t2);
                        for ((yy, a), b) in y.data_mut().iter_mut().zip(t1.data()).zip(t2.data()) {
                            *yy = a - b;
                        }
                        fact *= (k + 1) as f64;
                        z.axpy(Complex64::new(1.0 / fact, 0.0), &y);
                        // later summands are below roundoff of the sum
                        if y.max_abs() / fact <= 0.1 * f64::EPSILON * z.max_abs() {
                            break;
                        }
                    }
                    for &ch in &active {
                        grad[ch][s] += dt * trace_product(&z, &comp.controls[ch]).re;
                    }
                }
                GradientMethod::AugmentedBlock => {
                    for &ch in &active {
                        let up = upsilon(&gens[s], &exps[s], &comp.controls[ch], dt, method);
                        grad[ch][s] += trace_product(&t1, &up).re;
                    }
                }
            }
            matmul_into(&r, &exps[s], &mut t2);
            std::mem::swap(&mut r, &mut t2);
        }
    }
    Ok((value, v, grad))
}

/// Splits the evolution under G + G_v into U (under G alone) and the
/// toggling-frame propagator U_tog with U_total = U U_tog.
/// The variation is sampled at Gauss nodes; U_tog is propagated with
/// the fourth-order two-node Magnus step on `substeps` sub-intervals per step.
pub fn toggling_decompose<V>(
    family: &GeneratorFamily,
    variation: V,
    controls: &ControlSequence,
    substeps: usize,
) -> Result<(ComplexMatrix, ComplexMatrix)>
where
    V: Fn(f64) -> ComplexMatrix,
{
    let layout = VanLoanLayout::from_family(family);
    check(&layout, controls)?;
    let n = family.dim();
    let sub = substeps.max(1);
    let mut u = ComplexMatrix::identity(n);
    let mut utog = ComplexMatrix::identity(n);
    let starts = controls.start_times();
    let g3 = 3f64.sqrt() / 6.0;
    for s in 0..controls.steps() {
        let g = family.generator(&controls.column(s));
        let h = controls.durations()[s] / sub as f64;
        if h == 0.0 {
            continue;
        }
        for k in 0..sub {
            let t0 = starts[s] + k as f64 * h;
            let nodes = [0.5 - g3, 0.5 + g3];
            let mut tog = [ComplexMatrix::zeros(n, n), ComplexMatrix::zeros(n, n)];
            for (slot, c) in tog.iter_mut().zip(nodes) {
                let local = expm(&g.scale_re(c * h)).dot(&u);
                let inv = local.inverse()?;
                *slot = inv.dot(&variation(t0 + c * h)).dot(&local);
            }
            // Omega = h/2 (A1 + A2) + sqrt(3) h^2 / 12 [A2, A1]
            let mut omega = tog[0].add(&tog[1]).scale_re(h / 2.0);
            let comm = tog[1].dot(&tog[0]).sub(&tog[0].dot(&tog[1]));
            omega.axpy(Complex64::new(3f64.sqrt() * h * h / 12.0, 0.0), &comm);
            utog = expm(&omega).dot(&utog);
            u = expm(&g.scale_re(h)).dot(&u);
        }
    }
    Ok((u, utog))
}

/// Convenience: the generator for step `s` of a layout.
pub fn step_generator(layout: &VanLoanLayout, controls: &ControlSequence, s: usize) -> ComplexMatrix {
    layout.generator(&controls.column(s))
}
