//! 1/f noise: spectral density, its correlation function and fits of
//! correlation data by sums of exponentials.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{arg_err, Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Default low and high cutoffs in rad/s.
pub const LAMBDA1_HZ: f64 = 2.0 * PI;
pub const LAMBDA2_HZ: f64 = 2.0 * PI * 1e10;

/// Published seven-term fit (c_i, d_i in 1/s) of the correlation for the
/// default cutoffs over 1 ns .. 400 ns. Two rates are positive.
pub const ONEOVERF_7TERM: [(f64, f64); 7] = [
    (7.49448, -1.11796e8),
    (0.947027, -3.37122e7),
    (-0.490555, -4.69721e6),
    (-0.163987, -3.77087e6),
    (29.83, -577_865.0),
    (-0.102058, 122_339.0),
    (0.000_352_38, 2.05605e7),
];

/// E1(z) = int_z^inf e^-t / t dt for z > 0.
pub fn e1(z: f64) -> f64 {
    assert!(z > 0.0, "e1 needs a positive argument");
    if z <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -z / k as f64;
            let add = -term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER_GAMMA - z.ln() + sum
    } else {
        // continued fraction, modified Lentz
        let tiny = 1e-300;
        let mut b = z + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-z).exp()
    }
}

/// Exponential integral Ei(x) for real x != 0.
pub fn ei(x: f64) -> Result<f64> {
    if x == 0.0 || !x.is_finite() {
        return arg_err(format!("Ei is undefined at {}", x));
    }
    if x < 0.0 {
        return Ok(-e1(-x));
    }
    if x <= 40.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..500 {
            term *= x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add < 1e-17 * sum {
                break;
            }
        }
        Ok(EULER_GAMMA + x.ln() + sum)
    } else {
        let mut sum = 1.0;
        let mut term = 1.0;
        for k in 1..100 {
            let next = term * k as f64 / x;
            if next > term {
                break;
            }
            term = next;
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        Ok(x.exp() / x * sum)
    }
}

fn check_cutoffs(l1: f64, l2: f64) -> Result<()> {
    if !(l1 > 0.0 && l2 > l1 && l2.is_finite()) {
        return arg_err(format!("cutoffs must satisfy 0 < L1 < L2, got {} and {}", l1, l2));
    }
    Ok(())
}

/// P(nu) = 2/(pi nu) [atan(nu/L1) - atan(nu/L2)].
pub fn psd_oneoverf(nu: f64, l1: f64, l2: f64) -> Result<f64> {
    check_cutoffs(l1, l2)?;
    let x = nu.abs();
    if x < 1e-4 * l1 {
        // atan(x)/x = 1 - x^2/3 + x^4/5
        let f = |l: f64| {
            let r = (x / l).powi(2);
            (1.0 - r / 3.0 + r * r / 5.0) / l
        };
        return Ok(2.0 / PI * (f(l1) - f(l2)));
    }
    Ok(2.0 / (PI * x) * ((x / l1).atan() - (x / l2).atan()))
}

/// <eps(t1) eps(t2)> = -2 [Ei(-L1|tau|) - Ei(-L2|tau|)].
pub fn correlation(tau: f64, l1: f64, l2: f64) -> Result<f64> {
    check_cutoffs(l1, l2)?;
    if tau == 0.0 {
        return arg_err("correlation diverges logarithmically at tau = 0");
    }
    let t = tau.abs();
    Ok(2.0 * (e1(l1 * t) - e1(l2 * t)))
}

/// int_0^T dt1 int_0^t1 dt2 <eps(t1) eps(t2)> = int_0^T (T - tau) C(tau) dtau,
/// in closed form.
pub fn double_integral(t: f64, l1: f64, l2: f64) -> Result<f64> {
    check_cutoffs(l1, l2)?;
    if !(t > 0.0) {
        return arg_err("duration must be positive");
    }
    Ok(2.0 * (weighted_e1_integral(l1, t) - weighted_e1_integral(l2, t)))
}

/// int_0^T (T - tau) E1(a tau) dtau = T^2 [E1(aT)/2 + g(aT)].
fn weighted_e1_integral(a: f64, t: f64) -> f64 {
    let x = a * t;
    let g = if x < 1.0 {
        // sum_m (-1)^m x^m (m + 3) / (2 (m + 2)!)
        let mut sum = 0.0;
        let mut fact = 2.0;
        let mut pow = 1.0;
        for m in 0..60 {
            let term = pow * (m as f64 + 3.0) / (2.0 * fact);
            sum += term;
            if term.abs() < 1e-18 {
                break;
            }
            pow *= -x;
            fact *= m as f64 + 3.0;
        }
        sum
    } else {
        let ex = (-x).exp();
        1.0 / x - (1.0 - ex) / (2.0 * x * x) - ex / (2.0 * x)
    };
    let e = if x > 700.0 { 0.0 } else { e1(x) };
    t * t * (0.5 * e + g)
}

/// Sum of exponentials fitted to sampled data.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpSumFit {
    /// (c_i, d_i).
    pub terms: Vec<(f64, f64)>,
    pub window: (f64, f64),
    /// sqrt(sum r^2 / sum y^2) over the samples.
    pub residual: f64,
    pub samples: Vec<(f64, f64)>,
}

impl ExpSumFit {
    /// Wraps given terms and scores them on `samples`.
    pub fn from_terms(terms: Vec<(f64, f64)>, samples: Vec<(f64, f64)>) -> Result<Self> {
        check_samples(&samples)?;
        let window = (samples[0].0, samples[samples.len() - 1].0);
        let mut fit = ExpSumFit { terms, window, residual: 0.0, samples };
        fit.residual = fit.recompute_residual();
        Ok(fit)
    }

    pub fn recompute_residual(&self) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &(t, y) in &self.samples {
            num += (expsum_eval(self, t) - y).powi(2);
            den += y * y;
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    pub fn rates(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.1).collect()
    }

    /// Same fit with time measured in units `factor` times larger
    /// (rates scale by 1/factor).
    pub fn rescale_time(&self, factor: f64) -> Self {
        ExpSumFit {
            terms: self.terms.iter().map(|&(c, d)| (c, d * factor)).collect(),
            window: (self.window.0 / factor, self.window.1 / factor),
            residual: self.residual,
            samples: self.samples.iter().map(|&(t, y)| (t / factor, y)).collect(),
        }
    }
}

pub fn expsum_eval(fit: &ExpSumFit, tau: f64) -> f64 {
    fit.terms.iter().map(|(c, d)| c * (d * tau).exp()).sum()
}

fn check_samples(samples: &[(f64, f64)]) -> Result<()> {
    if samples.is_empty() {
        return arg_err("no samples");
    }
    if samples.iter().any(|s| !s.0.is_finite() || !s.1.is_finite()) {
        return Err(Error::NonFinite("sample".into()));
    }
    if samples[0].0 <= 0.0 || samples.windows(2).any(|w| w[1].0 <= w[0].0) {
        return arg_err("sample times must be positive and strictly ascending");
    }
    Ok(())
}

/// Log-spaced times in [lo, hi] paired with `f`.
pub fn sample_log_grid(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> Result<f64>) -> Result<Vec<(f64, f64)>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return arg_err("log grid needs 0 < lo < hi and at least two points");
    }
    (0..n)
        .map(|k| {
            let t = lo * (hi / lo).powf(k as f64 / (n - 1) as f64);
            Ok((t, f(t)?))
        })
        .collect()
}

/// Two columns per line: tau, value.
pub fn parse_correlation_samples(text: &str) -> Result<Vec<(f64, f64)>> {
    let pts = crate::transfer::parse_columns(text)?;
    check_samples(&pts)?;
    Ok(pts)
}

struct Projection {
    coeffs: DVector<f64>,
    residual: DVector<f64>,
    /// Orthonormal basis of the column space of A.
    basis: DMatrix<f64>,
}

/// Linear stage: best coefficients for fixed rates.
fn project(tau: &[f64], y: &DVector<f64>, rates: &[f64]) -> Result<Projection> {
    let (m, n) = (tau.len(), rates.len());
    for i in 0..n {
        for j in i + 1..n {
            if rates[i] == rates[j] {
                return Err(Error::Singular(format!("duplicate rates {} and {} (terms {} and {})", rates[i], rates[j], i + 1, j + 1)));
            }
        }
    }
    let a = DMatrix::from_fn(m, n, |k, i| (rates[i] * tau[k]).exp());
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("exponential basis overflow".into()));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-15 * m.max(n) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < n.min(m) {
        return Err(Error::Singular(format!("exponential basis has rank {} < {} for rates {:?}", rank, n, rates)));
    }
    let coeffs = svd.solve(y, tol).map_err(|e| Error::Singular(e.to_string()))?;
    let residual = &a * &coeffs - y;
    let u = svd.u.expect("u requested");
    let basis = u.columns(0, rank).into_owned();
    Ok(Projection { coeffs, residual, basis })
}

/// Variable projection with Levenberg-Marquardt on the rates.
fn refine(tau: &[f64], y: &DVector<f64>, seed: &[f64], max_iter: usize) -> Result<(Vec<f64>, Projection)> {
    let n = seed.len();
    let m = tau.len();
    let mut d = seed.to_vec();
    let mut p = project(tau, y, &d)?;
    let mut cost = p.residual.norm_squared();
    let mut mu = 1e-3;
    let mut quiet = 0;
    for _ in 0..max_iter {
        if cost == 0.0 {
            break;
        }
        // Kaufman Jacobian: P_perp (dA/dd_j) c
        let mut j = DMatrix::zeros(m, n);
        for i in 0..n {
            let col = DVector::from_fn(m, |k, _| tau[k] * (d[i] * tau[k]).exp() * p.coeffs[i]);
            let proj = &p.basis * (p.basis.transpose() * &col);
            j.set_column(i, &(col - proj));
        }
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &p.residual;
        let mut accepted = false;
        for _ in 0..30 {
            let mut lhs = jtj.clone();
            for i in 0..n {
                lhs[(i, i)] += mu * jtj[(i, i)].max(1e-300);
            }
            let step = match lhs.clone().cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => {
                    mu *= 4.0;
                    continue;
                }
            };
            let trial: Vec<f64> = d.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Ok(q) = project(tau, y, &trial) {
                let c = q.residual.norm_squared();
                if c < cost {
                    let rel = (cost - c) / cost;
                    d = trial;
                    p = q;
                    cost = c;
                    mu = (mu / 3.0).max(1e-12);
                    accepted = true;
                    quiet = if rel < 1e-13 { quiet + 1 } else { 0 };
                    break;
                }
            }
            mu *= 4.0;
            if mu > 1e16 {
                break;
            }
        }
        if !accepted || quiet >= 5 {
            break;
        }
    }
    Ok((d, p))
}

/// Least-squares fit of `n_terms` exponentials, best over the seed rate
/// vectors. Rates may be of either sign.
pub fn fit_expsum(samples: &[(f64, f64)], n_terms: usize, seed_rates: &[Vec<f64>]) -> Result<ExpSumFit> {
    check_samples(samples)?;
    if n_terms == 0 {
        return arg_err("at least one term");
    }
    if seed_rates.is_empty() {
        return arg_err("no seed rates");
    }
    if let Some(s) = seed_rates.iter().find(|s| s.len() != n_terms) {
        return arg_err(format!("seed has {} rates, expected {}", s.len(), n_terms));
    }
    let tau: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let runs: Vec<Result<(Vec<f64>, Projection)>> = seed_rates.par_iter().map(|s| refine(&tau, &y, s, 2000)).collect();
    let mut best: Option<(f64, Vec<f64>, DVector<f64>)> = None;
    let mut first_err = None;
    for r in runs {
        match r {
            Ok((d, p)) => {
                let cost = p.residual.norm_squared();
                if best.as_ref().is_none_or(|b| cost < b.0) {
                    best = Some((cost, d, p.coeffs));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let (_, d, c) = best.ok_or_else(|| first_err.expect("some seed ran"))?;
    ExpSumFit::from_terms(c.iter().copied().zip(d).collect(), samples.to_vec())
}

/// Seed rate vectors: log-spaced decay rates spanning the window,
/// jittered per seed.
pub fn default_rate_seeds(n_terms: usize, window: (f64, f64), count: usize, rng_seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    let (lo, hi) = (0.3 / window.1, 3.0 / window.0);
    (0..count)
        .map(|_| {
            (0..n_terms)
                .map(|i| {
                    let f = if n_terms == 1 { 0.5 } else { i as f64 / (n_terms - 1) as f64 };
                    let jitter: f64 = rng.gen_range(-0.3..0.3);
                    -lo * (hi / lo).powf((f + jitter / n_terms as f64).clamp(0.0, 1.0)) * (1.0 + 1e-3 * i as f64)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{cosine_integral, gauss_legendre};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    /// Composite Gauss-Legendre over geometric panels on [a, b].
    fn quad(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let (x, w) = gauss_legendre(24);
        let ratio = (b / a).powf(1.0 / panels as f64);
        let mut lo = a;
        let mut s = 0.0;
        for _ in 0..panels {
            let hi = lo * ratio;
            let h = 0.5 * (hi - lo);
            s += x.iter().zip(&w).map(|(xi, wi)| wi * h * f(lo + h * (xi + 1.0))).sum::<f64>();
            lo = hi;
        }
        s
    }

    /// E1(z) = int_0^1 exp(-z/u)/u du.
    fn e1_quad(z: f64) -> f64 {
        quad(&|u| (-z / u).exp() / u, 1e-6 * z.min(1.0), 1.0, 200)
    }

    #[test]
    fn e1_matches_quadrature() {
        for z in [1e-3, 0.01, 0.3, 0.99, 1.0, 1.01, 2.5, 7.0, 20.0, 50.0] {
            let (a, b) = (e1(z), e1_quad(z));
            assert!((a - b).abs() < 1e-10 * b.abs(), "z {} {} {}", z, a, b);
        }
    }

    #[test]
    fn ei_known_values() {
        // Ei(1) and Ei(-1) to 15 digits
        assert!((ei(1.0).unwrap() - 1.895_117_816_355_936_8).abs() < 1e-14);
        assert!((ei(-1.0).unwrap() + 0.219_383_934_395_520_27).abs() < 1e-15);
        assert!(ei(0.0).is_err());
        // the two positive branches agree near the switch
        let near = |x: f64| {
            let mut s = 0.0;
            let mut term = 1.0;
            for k in 1..400 {
                term *= x / k as f64;
                s += term / k as f64;
            }
            EULER_GAMMA + x.ln() + s
        };
        for x in [40.5, 45.0, 50.0] {
            let r = near(x);
            assert!((ei(x).unwrap() - r).abs() < 1e-12 * r);
        }
    }

    #[test]
    fn small_argument_series() {
        // E1(z) ~ -gamma - ln z for tiny z
        let z = 1e-12;
        assert!((e1(z) - (-EULER_GAMMA - z.ln() + z)).abs() < 1e-14 * e1(z));
    }

    #[test]
    fn psd_limits() {
        let (l1, l2) = (LAMBDA1_HZ, LAMBDA2_HZ);
        // 2% holds two decades inside the cutoffs; at one decade the
        // arctangents are still 6% short of pi/2
        for (nu, tol) in [(10.0 * l1, 0.07), (100.0 * l1, 0.02), (1e6, 0.02), (l2 / 100.0, 0.02), (l2 / 10.0, 0.07)] {
            let p = psd_oneoverf(nu, l1, l2).unwrap();
            assert!((p * nu - 1.0).abs() < tol, "nu {} p nu {}", nu, p * nu);
            assert_eq!(p, psd_oneoverf(-nu, l1, l2).unwrap());
        }
        let zero = psd_oneoverf(0.0, l1, l2).unwrap();
        assert!((zero - 2.0 * (1.0 / l1 - 1.0 / l2) / PI).abs() < 1e-15 * zero);
        assert!(psd_oneoverf(1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn psd_spot_value() {
        let (l1, l2) = (LAMBDA1_HZ, LAMBDA2_HZ);
        let nu = (l1 * l2).sqrt();
        // atan(x) = int_0^x ds/(1+s^2), split at 1 so the panels resolve both ends
        let atan_q = |x: f64| {
            if x <= 1.0 {
                quad(&|s| 1.0 / (1.0 + s * s), 1e-14 * x, x, 200)
            } else {
                quad(&|s| 1.0 / (1.0 + s * s), 1e-14, 1.0, 200) + quad(&|s| 1.0 / (1.0 + s * s), 1.0, x, 200)
            }
        };
        let expect = 2.0 / (PI * nu) * (atan_q(nu / l1) - atan_q(nu / l2));
        let got = psd_oneoverf(nu, l1, l2).unwrap();
        assert!((got - expect).abs() < 1e-10 * expect, "{} {}", got, expect);
    }

    #[test]
    fn correlation_shape() {
        let (l1, l2) = (LAMBDA1_HZ, LAMBDA2_HZ);
        assert!(correlation(0.0, l1, l2).is_err());
        assert_eq!(correlation(3e-8, l1, l2).unwrap(), correlation(-3e-8, l1, l2).unwrap());
        let grid: Vec<f64> = (0..60).map(|k| (1.0 / l2) * (l2 / l1).powf(k as f64 / 59.0)).collect();
        let vals: Vec<f64> = grid.iter().map(|&t| correlation(t, l1, l2).unwrap()).collect();
        assert!(vals.iter().all(|&v| v > 0.0));
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        let far: Vec<f64> = [5.0, 10.0, 20.0, 40.0].iter().map(|k| correlation(k / l1, l1, l2).unwrap()).collect();
        assert!(far.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
        assert!(far[3] < 1e-15);
    }

    #[test]
    fn correlation_is_fourier_transform_of_psd() {
        // with cutoffs two decades apart so the oscillatory integral converges quickly
        let (l1, l2) = (1.0, 1e3);
        for tau in [10.0 / l2, 0.1, 0.3, 1.0 / l1] {
            // C(tau) = (2/tau) int_0^inf P(u/tau) cos u du
            let g = |u: f64| psd_oneoverf(u / tau, l1, l2).unwrap();
            let c = 2.0 / tau * cosine_integral(&g, 1e-4 * l1 * tau, 4000);
            let expect = correlation(tau, l1, l2).unwrap();
            assert!((c - expect).abs() < 1e-4 * expect, "tau {} {} {}", tau, c, expect);
        }
    }

    #[test]
    fn double_integral_matches_quadrature() {
        let (l1, l2) = (LAMBDA1_HZ * 1e-9, LAMBDA2_HZ * 1e-9); // per ns
        for t in [1.0, 50.0, 400.0] {
            let f = |tau: f64| (t - tau) * correlation(tau, l1, l2).unwrap();
            let q = quad(&f, 1e-14 * t, t, 600);
            let c = double_integral(t, l1, l2).unwrap();
            assert!((c - q).abs() < 1e-9 * q, "T {} {} {}", t, c, q);
        }
        // small and large argument branches of the closed form agree
        for x in [0.999_999, 1.000_001] {
            let v = weighted_e1_integral(x, 1.0);
            let w = weighted_e1_integral(1.0, 1.0);
            assert!((v - w).abs() < 1e-5);
        }
    }

    #[test]
    fn expsum_eval_basics() {
        let fit = ExpSumFit::from_terms(vec![(2.0, -1.0), (0.5, 0.3)], vec![(1.0, 1.0)]).unwrap();
        assert_eq!(expsum_eval(&fit, 0.0), 2.5);
        let double = ExpSumFit { terms: fit.terms.iter().map(|&(c, d)| (2.0 * c, d)).collect(), ..fit.clone() };
        assert!((expsum_eval(&double, 0.7) - 2.0 * expsum_eval(&fit, 0.7)).abs() < 1e-15);
        assert!((fit.recompute_residual() - fit.residual).abs() < 1e-12);
    }

    #[test]
    fn recovers_two_terms() {
        let truth = [(1.5, -0.8), (-0.4, -0.05)];
        let samples: Vec<(f64, f64)> = (1..=80)
            .map(|k| {
                let t = 0.1 * k as f64;
                (t, truth.iter().map(|(c, d)| c * (d * t).exp()).sum())
            })
            .collect();
        let fit = fit_expsum(&samples, 2, &[vec![-1.5, -0.2], vec![-0.3, -0.01]]).unwrap();
        let mut terms = fit.terms.clone();
        terms.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        for ((c, d), (ct, dt)) in terms.iter().zip(&truth) {
            assert!((c - ct).abs() < 1e-6 * ct.abs(), "c {} vs {}", c, ct);
            assert!((d - dt).abs() < 1e-6 * dt.abs(), "d {} vs {}", d, dt);
        }
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn single_sample_is_interpolated() {
        let fit = fit_expsum(&[(2.0, 3.0)], 1, &[vec![-0.5]]).unwrap();
        assert!(fit.residual < 1e-15);
    }

    #[test]
    fn duplicate_rates_are_named() {
        let samples: Vec<(f64, f64)> = (1..10).map(|k| (k as f64, 1.0 / k as f64)).collect();
        match fit_expsum(&samples, 2, &[vec![-0.3, -0.3]]) {
            Err(Error::Singular(msg)) => assert!(msg.contains("-0.3")),
            other => panic!("expected a singular error, got {:?}", other),
        }
    }

    #[test]
    fn sample_file_parsing() {
        let s = parse_correlation_samples("# tau value\n1e-9 36.0\n2e-9, 35.0\n").unwrap();
        assert_eq!(s, vec![(1e-9, 36.0), (2e-9, 35.0)]);
        assert!(parse_correlation_samples("2 1\n1 1\n").is_err());
    }

    fn ns_samples() -> Vec<(f64, f64)> {
        let (l1, l2) = (LAMBDA1_HZ * 1e-9, LAMBDA2_HZ * 1e-9);
        sample_log_grid(1.0, 400.0, 200, |t| correlation(t, l1, l2)).unwrap()
    }

    fn reference_ns() -> ExpSumFit {
        let terms = ONEOVERF_7TERM.iter().map(|&(c, d)| (c, d * 1e-9)).collect();
        ExpSumFit::from_terms(terms, ns_samples()).unwrap()
    }

    #[test]
    fn reference_fit_at_100ns() {
        let fit = reference_ns();
        let exact = correlation(100.0, LAMBDA1_HZ * 1e-9, LAMBDA2_HZ * 1e-9).unwrap();
        let dev = (expsum_eval(&fit, 100.0) - exact).abs() / exact;
        assert!(dev < 0.15, "relative deviation {}", dev);
    }

    #[test]
    fn own_seven_term_fit_is_no_worse() {
        let reference = reference_ns();
        let mut seeds = vec![reference.rates()];
        seeds.extend(default_rate_seeds(7, (1.0, 400.0), 7, 3));
        let ours = fit_expsum(&ns_samples(), 7, &seeds).unwrap();
        assert!(ours.residual <= reference.residual, "{} vs {}", ours.residual, reference.residual);
        assert!((ours.recompute_residual() - ours.residual).abs() < 1e-12);
        eprintln!("seven-term residual: ours {:.3e}, reference {:.3e}", ours.residual, reference.residual);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn more_terms_never_hurt(seed in 0u64..1000) {
            let (l1, l2) = (LAMBDA1_HZ * 1e-9, LAMBDA2_HZ * 1e-9);
            let samples = sample_log_grid(1.0, 400.0, 60, |t| correlation(t, l1, l2)).unwrap();
            let seeds = default_rate_seeds(2, (1.0, 400.0), 3, seed);
            let two = fit_expsum(&samples, 2, &seeds).unwrap();
            let mut wider: Vec<Vec<f64>> = vec![{
                let mut r = two.rates();
                r.push(-0.5 / 400.0 * (1.0 + (seed % 7) as f64));
                r
            }];
            wider.extend(default_rate_seeds(3, (1.0, 400.0), 2, seed));
            let three = fit_expsum(&samples, 3, &wider).unwrap();
            prop_assert!(three.residual <= two.residual * (1.0 + 1e-12), "{} > {}", three.residual, two.residual);
        }
    }
}
