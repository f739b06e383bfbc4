//! Linear transfer maps acting on two-channel controls.
//!
//! A pair of real channels (a1, a2) is carried as the complex scalar
//! a1 - i a2. A map Xi is applied to that vector and split back into
//! b1 = Re[...] and b2 = -Im[...].

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::matcore::{c, ComplexMatrix};
use crate::propagate::ControlSequence;

/// Default steepness of the tanh band edges.
pub const BANDPASS_STEEPNESS: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferKind {
    Identity,
    Linear,
    ZeroPad,
    Bandpass,
    Composed,
    Experimental,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferMap {
    matrix: ComplexMatrix,
    kind: TransferKind,
}

impl TransferMap {
    pub fn new(matrix: ComplexMatrix, kind: TransferKind) -> Self {
        TransferMap { matrix, kind }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(ComplexMatrix::identity(n), TransferKind::Identity)
    }

    pub fn in_steps(&self) -> usize {
        self.matrix.cols()
    }

    pub fn out_steps(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn kind(&self) -> TransferKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: TransferKind) -> Self {
        self.kind = kind;
        self
    }

    /// Real multiple of the map, e.g. a coupling strength 2 pi gamma.
    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.matrix.scale_re(s), self.kind)
    }
}

/// `left` after `right`.
pub fn compose(left: &TransferMap, right: &TransferMap) -> Result<TransferMap> {
    if left.in_steps() != right.out_steps() {
        return dim_err(format!(
            "cannot compose {}-step input with {}-step output",
            left.in_steps(),
            right.out_steps()
        ));
    }
    Ok(TransferMap::new(left.matrix.dot(&right.matrix), TransferKind::Composed))
}

/// Real-valued curve over frequency.
#[derive(Clone)]
pub enum FrequencyCurve {
    Constant(f64),
    /// Ascending sample points, linear in between, flat outside.
    Sampled { nu: Vec<f64>, value: Vec<f64> },
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for FrequencyCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FrequencyCurve::Constant(v) => write!(f, "Constant({})", v),
            FrequencyCurve::Sampled { nu, .. } => write!(f, "Sampled({} points)", nu.len()),
            FrequencyCurve::Function(_) => write!(f, "Function"),
        }
    }
}

/// Whitespace or comma separated pairs, one per line; blank lines and
/// `#` comments are skipped.
pub fn parse_columns(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(|ch: char| ch == ',' || ch.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if cols.len() != 2 {
            return arg_err(format!("line {}: expected 2 columns, got {}", k + 1, cols.len()));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("line {}: {}", k + 1, e)));
        out.push((parse(cols[0])?, parse(cols[1])?));
    }
    Ok(out)
}

impl FrequencyCurve {
    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        FrequencyCurve::Function(Arc::new(f))
    }

    pub fn sampled(nu: Vec<f64>, value: Vec<f64>) -> Result<Self> {
        if nu.is_empty() || nu.len() != value.len() {
            return dim_err("frequency samples and values must be nonempty and equal length");
        }
        if nu.iter().chain(&value).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("frequency curve sample".into()));
        }
        if nu.windows(2).any(|w| w[1] <= w[0]) {
            return arg_err("sample frequencies must be strictly ascending");
        }
        Ok(FrequencyCurve::Sampled { nu, value })
    }

    /// Two whitespace- or comma-separated columns per line: frequency, value.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse_samples(text: &str) -> Result<Self> {
        let (nu, value) = parse_columns(text)?.into_iter().unzip();
        Self::sampled(nu, value)
    }

    /// Same curve with its frequency axis multiplied by `factor`
    /// (e.g. 1e-6 to go from Hz to 1/us).
    pub fn rescale_frequency(&self, factor: f64) -> Self {
        match self {
            FrequencyCurve::Constant(v) => FrequencyCurve::Constant(*v),
            FrequencyCurve::Sampled { nu, value } => {
                let mut nu: Vec<f64> = nu.iter().map(|x| x * factor).collect();
                let mut value = value.clone();
                if factor < 0.0 {
                    nu.reverse();
                    value.reverse();
                }
                FrequencyCurve::Sampled { nu, value }
            }
            FrequencyCurve::Function(f) => {
                let f = f.clone();
                FrequencyCurve::function(move |x| f(x / factor))
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            FrequencyCurve::Constant(v) => *v,
            FrequencyCurve::Function(f) => f(x),
            FrequencyCurve::Sampled { nu, value } => {
                let n = nu.len();
                if x <= nu[0] {
                    return value[0];
                }
                if x >= nu[n - 1] {
                    return value[n - 1];
                }
                let k = nu.partition_point(|&p| p <= x);
                let (x0, x1) = (nu[k - 1], nu[k]);
                let w = (x - x0) / (x1 - x0);
                value[k - 1] * (1.0 - w) + value[k] * w
            }
        }
    }
}

/// Unitary DFT matrix, entries exp(2 pi i s t / n) / sqrt(n).
pub fn dft_matrix(n: usize) -> Result<ComplexMatrix> {
    if n == 0 {
        return arg_err("DFT of size zero");
    }
    let norm = 1.0 / (n as f64).sqrt();
    Ok(ComplexMatrix::from_fn(n, n, |s, t| {
        // reduce the exponent first so large n keeps full accuracy
        let k = (s * t) % n;
        let th = 2.0 * PI * k as f64 / n as f64;
        c(th.cos() * norm, th.sin() * norm)
    }))
}

/// Frequencies belonging to the rows of `dft_matrix(n)`. The grid runs
/// 0, 1, ..., n/2 - 1, -n/2, ..., -1 in units of 1/(n dt).
pub fn freq_grid(n: usize, dt: f64) -> Result<Vec<f64>> {
    if n == 0 || n % 2 != 0 {
        return arg_err(format!("frequency grid needs an even step count, got {}", n));
    }
    if !(dt > 0.0) {
        return arg_err("step length must be positive");
    }
    let h = n / 2;
    Ok((0..n).map(|j| (2.0 * (j % h) as f64 - j as f64) / (n as f64 * dt)).collect())
}

/// W^-1 diag(lam e^{i phi}) W.
pub fn linear_transfer(n: usize, dt: f64, lam: &FrequencyCurve, phi: &FrequencyCurve) -> Result<TransferMap> {
    let grid = freq_grid(n, dt)?;
    let diag: Vec<_> = grid.iter().map(|&nu| num_complex::Complex64::from_polar(lam.eval(nu), phi.eval(nu))).collect();
    if diag.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("transfer curve value".into()));
    }
    Ok(TransferMap::new(diagonal_in_fourier(n, &diag)?, TransferKind::Linear))
}

fn diagonal_in_fourier(n: usize, diag: &[num_complex::Complex64]) -> Result<ComplexMatrix> {
    let w = dft_matrix(n)?;
    let mut lw = w.clone();
    for (s, d) in diag.iter().enumerate() {
        for t in 0..n {
            lw[(s, t)] *= d;
        }
    }
    Ok(w.adjoint().dot(&lw))
}

/// Embeds n - 2 n0 steps between n0 zero steps on each side.
pub fn zero_pad(n: usize, n0: usize) -> Result<TransferMap> {
    if n <= 2 * n0 {
        return arg_err(format!("cannot pad to {} steps with {} zeros on each side", n, n0));
    }
    let m = n - 2 * n0;
    let mut z = ComplexMatrix::zeros(n, m);
    for k in 0..m {
        z[(n0 + k, k)] = c(1.0, 0.0);
    }
    Ok(TransferMap::new(z, TransferKind::ZeroPad))
}

pub fn bandpass_lambda(nu: f64, dnu: f64) -> f64 {
    bandpass_lambda_with(nu, dnu, BANDPASS_STEEPNESS)
}

/// Smooth box of width `dnu` centred on zero.
pub fn bandpass_lambda_with(nu: f64, dnu: f64, steepness: f64) -> f64 {
    let k = steepness / dnu;
    0.25 * (1.0 + (k * (nu + dnu / 2.0)).tanh()) * (1.0 - (k * (nu - dnu / 2.0)).tanh())
}

pub fn bandpass(n: usize, dt: f64, dnu: f64, steepness: f64) -> Result<TransferMap> {
    if !(dnu > 0.0) || !(steepness > 0.0) {
        return arg_err("bandwidth and steepness must be positive");
    }
    let grid = freq_grid(n, dt)?;
    let diag: Vec<_> = grid.iter().map(|&nu| c(bandpass_lambda_with(nu, dnu, steepness), 0.0)).collect();
    Ok(TransferMap::new(diagonal_in_fourier(n, &diag)?, TransferKind::Bandpass))
}

/// Band-limit on the full n-step grid after zero padding:
/// shape n x (n - 2 n0).
pub fn opt_transfer(n: usize, n0: usize, dt: f64, dnu: f64) -> Result<TransferMap> {
    opt_transfer_with(n, n0, dt, dnu, BANDPASS_STEEPNESS)
}

pub fn opt_transfer_with(n: usize, n0: usize, dt: f64, dnu: f64, steepness: f64) -> Result<TransferMap> {
    let zp = zero_pad(n, n0)?;
    let bp = bandpass(n, dt, dnu, steepness)?;
    compose(&bp, &zp)
}

/// Band-limit on the inner grid, then pad. The end steps stay exactly
/// zero, which the other order does not guarantee.
pub fn opt_transfer_filter_first(n: usize, n0: usize, dt: f64, dnu: f64, steepness: f64) -> Result<TransferMap> {
    let zp = zero_pad(n, n0)?;
    let bp = bandpass(n - 2 * n0, dt, dnu, steepness)?;
    compose(&zp, &bp)
}

fn uniform_step(cs: &ControlSequence) -> Option<f64> {
    let d = cs.durations();
    let d0 = d[0];
    d.iter().all(|&x| (x - d0).abs() <= 1e-12 * d0.abs()).then_some(d0)
}

/// Applies the map to channels (a1, a2). When the step count changes the
/// input must be on a uniform grid, whose step length is kept.
pub fn apply_two_channel(map: &TransferMap, alpha: &ControlSequence) -> Result<ControlSequence> {
    if alpha.channels() != 2 {
        return dim_err(format!("two-channel transfer applied to {} channels", alpha.channels()));
    }
    if alpha.steps() != map.in_steps() {
        return dim_err(format!("map expects {} steps, controls have {}", map.in_steps(), alpha.steps()));
    }
    let a = alpha.amplitudes();
    let m = map.matrix();
    let (rows, cols) = (m.rows(), m.cols());
    let mut b1 = vec![0.0; rows];
    let mut b2 = vec![0.0; rows];
    let data = m.data();
    for s in 0..rows {
        let mut acc = c(0.0, 0.0);
        for t in 0..cols {
            acc += data[s * cols + t] * c(a[0][t], -a[1][t]);
        }
        b1[s] = acc.re;
        b2[s] = -acc.im;
    }
    let durations = if rows == cols {
        alpha.durations().to_vec()
    } else {
        match uniform_step(alpha) {
            Some(dt) => vec![dt; rows],
            None => return arg_err("step-count-changing map needs uniform steps"),
        }
    };
    ControlSequence::new(vec![b1, b2], durations)
}

/// Pulls a gradient with respect to the output channels back to the
/// input channels (transpose of the real Jacobian).
pub fn pullback_two_channel(map: &TransferMap, grad_beta: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if grad_beta.len() != 2 || grad_beta.iter().any(|g| g.len() != map.out_steps()) {
        return dim_err("gradient shape does not match the map output");
    }
    let m = map.matrix();
    let (rows, cols) = (m.rows(), m.cols());
    let data = m.data();
    let mut acc = vec![c(0.0, 0.0); cols];
    for s in 0..rows {
        let g = c(grad_beta[0][s], grad_beta[1][s]);
        if g.re == 0.0 && g.im == 0.0 {
            continue;
        }
        for t in 0..cols {
            acc[t] += data[s * cols + t] * g;
        }
    }
    Ok(vec![acc.iter().map(|z| z.re).collect(), acc.iter().map(|z| z.im).collect()])
}

/// The four real blocks of d(b1, b2)/d(a1, a2).
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianBlocks {
    pub d1_d1: DMatrix<f64>,
    pub d1_d2: DMatrix<f64>,
    pub d2_d1: DMatrix<f64>,
    pub d2_d2: DMatrix<f64>,
}

impl JacobianBlocks {
    /// [[d1_d1, d1_d2], [d2_d1, d2_d2]].
    pub fn stacked(&self) -> DMatrix<f64> {
        let (r, c) = self.d1_d1.shape();
        let mut j = DMatrix::zeros(2 * r, 2 * c);
        j.view_mut((0, 0), (r, c)).copy_from(&self.d1_d1);
        j.view_mut((0, c), (r, c)).copy_from(&self.d1_d2);
        j.view_mut((r, 0), (r, c)).copy_from(&self.d2_d1);
        j.view_mut((r, c), (r, c)).copy_from(&self.d2_d2);
        j
    }
}

pub fn jacobian_entries(map: &TransferMap) -> JacobianBlocks {
    let m = map.matrix();
    let re = DMatrix::from_fn(m.rows(), m.cols(), |s, t| m[(s, t)].re);
    let im = DMatrix::from_fn(m.rows(), m.cols(), |s, t| m[(s, t)].im);
    JacobianBlocks { d1_d1: re.clone(), d1_d2: im.clone(), d2_d1: -im, d2_d2: re }
}
