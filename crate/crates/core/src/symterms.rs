//! Exact symbolic algebra for the blocks of time-ordered exponentials of
//! block upper-triangular generators.
//!
//! Two primitives: `Ex[t^m, U]` is t^m U(t), and
//! `Int[t^m, {U1, A1, W1}, ..., {Un, An, Wn}]` is
//! t^m U1(t) int_{t >= t1 >= ... >= tn >= 0} prod_k U_k^{-1} A_k W_k (t_k),
//! where each A_k is a rational combination of t^p * symbol.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::matcore::ComplexMatrix;
use crate::oracle::{chain_integral, ChainFactor, PiecewiseOperator, PiecewisePropagator, QuadratureConfig};

pub const DEFAULT_BUDGET: usize = 1_000_000;

/// Symbols used by the polynomial generator.
pub const POLY_U: &str = "U";
pub const POLY_A1: &str = "A1";
pub const POLY_A2: &str = "A2";

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpSymbol {
    Zero,
    Identity,
    Named(String),
}

/// coef * t^power * symbol.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpTerm {
    pub coef: BigRational,
    pub power: u32,
    pub symbol: OpSymbol,
}

/// Sum of operator terms, kept in the order written.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeightedOp(pub Vec<OpTerm>);

impl WeightedOp {
    pub fn named(s: &str) -> Self {
        Self::scaled(BigRational::one(), OpSymbol::Named(s.into()))
    }

    pub fn identity() -> Self {
        Self::scaled(BigRational::one(), OpSymbol::Identity)
    }

    pub fn zero() -> Self {
        Self::scaled(BigRational::one(), OpSymbol::Zero)
    }

    pub fn scaled(coef: BigRational, symbol: OpSymbol) -> Self {
        WeightedOp(vec![OpTerm { coef, power: 0, symbol }])
    }

    pub fn plus(mut self, other: WeightedOp) -> Self {
        self.0.extend(other.0);
        self
    }

    /// Multiplies every summand by t^k.
    pub fn times_t(&self, k: u32) -> Self {
        WeightedOp(self.0.iter().map(|o| OpTerm { power: o.power + k, ..o.clone() }).collect())
    }

    fn is_zero(&self) -> bool {
        self.0.iter().all(|o| o.symbol == OpSymbol::Zero || o.coef.is_zero())
    }

    /// t^m I with unit coefficient.
    fn identity_power(&self) -> Option<u32> {
        match self.0.as_slice() {
            [o] if o.symbol == OpSymbol::Identity && o.coef.is_one() => Some(o.power),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Factor {
    pub u: String,
    pub op: WeightedOp,
    pub w: String,
}

impl Factor {
    pub fn new(u: &str, op: WeightedOp, w: &str) -> Self {
        Factor { u: u.into(), op, w: w.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SymTerm {
    Ex { power: u32, symbol: String },
    Int { power: u32, factors: Vec<Factor> },
}

impl SymTerm {
    pub fn ex(power: u32, symbol: &str) -> Self {
        SymTerm::Ex { power, symbol: symbol.into() }
    }

    pub fn int(power: u32, factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return arg_err("Int needs at least one factor");
        }
        Ok(SymTerm::Int { power, factors })
    }
}

/// Formal rational combination of primitives; equal terms are merged and
/// zero coefficients dropped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymExpr {
    terms: BTreeMap<SymTerm, BigRational>,
}

impl SymExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn term(t: SymTerm) -> Self {
        let mut e = Self::zero();
        e.add_term(BigRational::one(), t);
        e
    }

    pub fn add_term(&mut self, coef: BigRational, t: SymTerm) {
        if coef.is_zero() {
            return;
        }
        match self.terms.entry(t) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += coef;
                if o.get().is_zero() {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                v.insert(coef);
            }
        }
    }

    pub fn add(&self, other: &SymExpr) -> SymExpr {
        let mut out = self.clone();
        for (t, c) in &other.terms {
            out.add_term(c.clone(), t.clone());
        }
        out
    }

    pub fn scale(&self, c: &BigRational) -> SymExpr {
        let mut out = SymExpr::zero();
        for (t, k) in &self.terms {
            out.add_term(k * c, t.clone());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SymTerm, &BigRational)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, t: &SymTerm) -> BigRational {
        self.terms.get(t).cloned().unwrap_or_else(BigRational::zero)
    }
}

fn fmt_power(p: u32) -> String {
    match p {
        0 => "1".into(),
        1 => "t".into(),
        _ => format!("t^{}", p),
    }
}

impl fmt::Display for OpTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sym = match &self.symbol {
            OpSymbol::Zero => "0".to_string(),
            OpSymbol::Identity => "I".to_string(),
            OpSymbol::Named(s) => s.clone(),
        };
        let body = if self.power == 0 { sym } else { format!("{}*{}", fmt_power(self.power), sym) };
        if self.coef.is_one() {
            write!(f, "{}", body)
        } else {
            write!(f, "SM[{}, {}]", self.coef, body)
        }
    }
}

impl fmt::Display for WeightedOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|o| o.to_string()).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl fmt::Display for SymTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymTerm::Ex { power, symbol } => write!(f, "Ex[{}, {}]", fmt_power(*power), symbol),
            SymTerm::Int { power, factors } => {
                write!(f, "Int[{}", fmt_power(*power))?;
                for fc in factors {
                    write!(f, ", {{{}, {}, {}}}", fc.u, fc.op, fc.w)?;
                }
                write!(f, "]")
            }
        }
    }
}

impl fmt::Display for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (t, c)) in self.terms.iter().enumerate() {
            let neg = c.is_negative();
            let mag = c.abs();
            match (k, neg) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            if mag.is_one() {
                write!(f, "{}", t)?;
            } else {
                write!(f, "{}*{}", mag, t)?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- rules

type Rewrite = Vec<(BigRational, SymTerm)>;

fn rewrite(term: &SymTerm) -> Option<Rewrite> {
    let (power, factors) = match term {
        SymTerm::Ex { .. } => return None,
        SymTerm::Int { power, factors } => (*power, factors),
    };
    // zeros
    if factors.iter().any(|f| f.op.0.is_empty() || f.op.is_zero()) {
        return Some(vec![]);
    }
    for (i, f) in factors.iter().enumerate() {
        if f.op.0.len() > 1 && f.op.0.iter().any(|o| o.symbol == OpSymbol::Zero || o.coef.is_zero()) {
            let mut g = factors.clone();
            g[i].op.0.retain(|o| o.symbol != OpSymbol::Zero && !o.coef.is_zero());
            return Some(vec![(BigRational::one(), SymTerm::Int { power, factors: g })]);
        }
    }
    // sums
    if let Some(i) = factors.iter().position(|f| f.op.0.len() > 1) {
        let out = factors[i]
            .op
            .0
            .iter()
            .map(|o| {
                let mut g = factors.clone();
                g[i].op = WeightedOp(vec![o.clone()]);
                (BigRational::one(), SymTerm::Int { power, factors: g })
            })
            .collect();
        return Some(out);
    }
    // scalars
    if let Some(i) = factors.iter().position(|f| !f.op.0[0].coef.is_one()) {
        let mut g = factors.clone();
        let c = std::mem::replace(&mut g[i].op.0[0].coef, BigRational::one());
        return Some(vec![(c, SymTerm::Int { power, factors: g })]);
    }
    // integrals of t^m I, innermost first
    let n = factors.len();
    for i in (0..n).rev() {
        let f = &factors[i];
        let m = match f.op.identity_power() {
            Some(m) if f.u == f.w => m,
            _ => continue,
        };
        let inv = rat(1, m as i64 + 1);
        if n == 1 {
            return Some(vec![(inv, SymTerm::Ex { power: power + m + 1, symbol: f.u.clone() })]);
        }
        if i == n - 1 {
            let mut g = factors[..n - 1].to_vec();
            g[n - 2].op = g[n - 2].op.times_t(m + 1);
            return Some(vec![(inv, SymTerm::Int { power, factors: g })]);
        }
        if i == 0 {
            // outer propagator must carry over to the next factor
            if factors[1].u != f.u {
                continue;
            }
            let rest = factors[1..].to_vec();
            let mut lowered = rest.clone();
            lowered[0].op = lowered[0].op.times_t(m + 1);
            return Some(vec![
                (inv.clone(), SymTerm::Int { power: power + m + 1, factors: rest }),
                (-inv, SymTerm::Int { power, factors: lowered }),
            ]);
        }
        let mut left = factors.clone();
        left.remove(i);
        let mut right = left.clone();
        left[i - 1].op = left[i - 1].op.times_t(m + 1);
        right[i].op = right[i].op.times_t(m + 1);
        return Some(vec![
            (inv.clone(), SymTerm::Int { power, factors: left }),
            (-inv, SymTerm::Int { power, factors: right }),
        ]);
    }
    None
}

/// Applies the rewrite rules until none matches.
pub fn simplify(e: &SymExpr) -> Result<SymExpr> {
    simplify_with_budget(e, DEFAULT_BUDGET)
}

pub fn simplify_with_budget(e: &SymExpr, budget: usize) -> Result<SymExpr> {
    let mut work: Vec<(BigRational, SymTerm)> = e.iter().map(|(t, c)| (c.clone(), t.clone())).collect();
    let mut out = SymExpr::zero();
    let mut steps = 0usize;
    while let Some((c, t)) = work.pop() {
        match rewrite(&t) {
            Some(parts) => {
                steps += 1;
                if steps > budget {
                    return Err(Error::Budget(format!("simplification exceeded {} rewrites", budget)));
                }
                work.extend(parts.into_iter().map(|(k, s)| (k * &c, s)));
            }
            None => out.add_term(c, t),
        }
    }
    Ok(out)
}

// ------------------------------------------------------ block exponential

/// C(t) -> U(t) int_0^t U^{-1}(t1) A(t1) C(t1) dt1.
pub fn recursive_rule(u: &str, a: &WeightedOp, c: &SymExpr) -> SymExpr {
    let mut out = SymExpr::zero();
    for (t, k) in c.iter() {
        let new = match t {
            SymTerm::Ex { power, symbol } => SymTerm::Int { power: 0, factors: vec![Factor::new(u, a.times_t(*power), symbol)] },
            SymTerm::Int { power, factors } => {
                let mut fs = Vec::with_capacity(factors.len() + 1);
                fs.push(Factor::new(u, a.times_t(*power), &factors[0].u));
                fs.extend(factors.iter().cloned());
                SymTerm::Int { power: 0, factors: fs }
            }
        };
        out.add_term(k.clone(), new);
    }
    out
}

/// Upper triangle of the time-ordered exponential. `off[s][i]` is the
/// generator block (s, s+i+1); the result's `[s][j]` is block (s, s+j).
pub fn to_exponential(diagonals: &[String], off: &[Vec<WeightedOp>]) -> Result<Vec<Vec<SymExpr>>> {
    let n = diagonals.len();
    if n == 0 {
        return arg_err("no diagonal blocks");
    }
    if off.len() != n - 1 || off.iter().enumerate().any(|(s, row)| row.len() != n - 1 - s) {
        return dim_err(format!("off-diagonal table does not match {} diagonal blocks", n));
    }
    let mut table: Vec<Vec<SymExpr>> = diagonals.iter().map(|u| vec![SymExpr::term(SymTerm::ex(0, u))]).collect();
    for j in 1..n {
        let level: Vec<Result<SymExpr>> = (0..n - j)
            .into_par_iter()
            .map(|s| {
                let mut acc = SymExpr::zero();
                for i in 1..=j {
                    let b = &off[s][i - 1];
                    acc = acc.add(&recursive_rule(&diagonals[s], b, &table[s + i][j - i]));
                }
                simplify(&acc)
            })
            .collect();
        for (s, e) in level.into_iter().enumerate() {
            table[s].push(e?);
        }
    }
    Ok(table)
}

// -------------------------------------------------- polynomial generator

/// Diagonal symbols and off-diagonal table of L_{s1,s2}.
pub fn poly_generator(s1: usize, s2: usize) -> (Vec<String>, Vec<Vec<WeightedOp>>) {
    let nb = 3 * s1 + s2 + 3;
    let diag = vec![POLY_U.to_string(); nb];
    let mut off: Vec<Vec<WeightedOp>> = (0..nb - 1).map(|s| vec![WeightedOp::zero(); nb - 1 - s]).collect();
    let mut first = vec![0i64; s1 + 1];
    first.extend((0..=s1).rev().map(|j| j as i64));
    first.extend((1..=s1 + s2).rev().map(|j| j as i64));
    for (p, &k) in first.iter().enumerate() {
        if k != 0 {
            off[p][0] = WeightedOp::scaled(int(k), OpSymbol::Identity);
        }
    }
    for p in 0..=s1 {
        off[p][s1] = WeightedOp::named(POLY_A1);
        off[p + s1 + 1][s1] = WeightedOp::named(POLY_A2);
    }
    (diag, off)
}

/// 1-based block coordinates of the top-right (s1+1)x(s2+1) grid, row major.
pub fn poly_top_right_coords(s1: usize, s2: usize) -> Vec<(usize, usize)> {
    let nb = 3 * s1 + s2 + 3;
    let mut out = Vec::new();
    for r in 1..=s1 + 1 {
        for c in nb - s2..=nb {
            out.push((r, c));
        }
    }
    out
}

/// Symbolic top-right blocks of the polynomial generator's exponential.
pub fn poly_top_right(s1: usize, s2: usize) -> Result<Vec<SymExpr>> {
    let (diag, off) = poly_generator(s1, s2);
    let table = to_exponential(&diag, &off)?;
    Ok(poly_top_right_coords(s1, s2).into_iter().map(|(r, c)| table[r - 1][c - r].clone()).collect())
}

/// Coordinates of `e` in the basis D_U(t^i A1, t^j A2), position (s2+1) i + j.
pub fn vector_rep(e: &SymExpr, s1: usize, s2: usize) -> Result<Vec<BigRational>> {
    let mut v = vec![BigRational::zero(); (s1 + 1) * (s2 + 1)];
    for (t, c) in e.iter() {
        let (i, j) = basis_index(t).filter(|&(i, j)| i <= s1 && j <= s2).ok_or_else(|| Error::ForeignTerm(t.to_string()))?;
        v[(s2 + 1) * i + j] += c;
    }
    Ok(v)
}

fn basis_index(t: &SymTerm) -> Option<(usize, usize)> {
    let (power, factors) = match t {
        SymTerm::Int { power, factors } => (*power, factors),
        SymTerm::Ex { .. } => return None,
    };
    if power != 0 || factors.len() != 2 || factors.iter().any(|f| f.u != POLY_U || f.w != POLY_U) {
        return None;
    }
    let single = |f: &Factor, name: &str| match f.op.0.as_slice() {
        [o] if o.coef.is_one() && o.symbol == OpSymbol::Named(name.into()) => Some(o.power as usize),
        _ => None,
    };
    Some((single(&factors[0], POLY_A1)?, single(&factors[1], POLY_A2)?))
}

pub type RationalMatrix = Vec<Vec<BigRational>>;

/// Q: columns are the basis coordinates of the top-right blocks.
pub fn conjecture_matrix(s1: usize, s2: usize) -> Result<RationalMatrix> {
    let blocks = poly_top_right(s1, s2)?;
    let cols: Vec<Vec<BigRational>> = blocks.iter().map(|b| vector_rep(b, s1, s2)).collect::<Result<_>>()?;
    let m = cols.len();
    Ok((0..m).map(|r| (0..m).map(|c| cols[c][r].clone()).collect()).collect())
}

/// Exact rank by fraction-free-enough Gaussian elimination.
pub fn rank(a: &RationalMatrix) -> usize {
    let mut m = a.clone();
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else { continue };
        m.swap(r, p);
        for i in r + 1..rows {
            if !m[i][c].is_zero() {
                let f = &m[i][c] / &m[r][c];
                for k in c..cols {
                    let d = &f * &m[r][k];
                    m[i][k] -= d;
                }
            }
        }
        r += 1;
        if r == rows {
            break;
        }
    }
    r
}

/// Solves a x = b exactly; errors when a is singular.
pub fn solve_exact(a: &RationalMatrix, b: &[BigRational]) -> Result<Vec<BigRational>> {
    let n = a.len();
    if b.len() != n || a.iter().any(|r| r.len() != n) {
        return dim_err("solve_exact needs a square system");
    }
    let mut m: Vec<Vec<BigRational>> = a.iter().zip(b).map(|(r, bi)| {
        let mut row = r.clone();
        row.push(bi.clone());
        row
    }).collect();
    for c in 0..n {
        let p = (c..n).find(|&i| !m[i][c].is_zero()).ok_or_else(|| Error::Singular(format!("rank deficient at column {}", c + 1)))?;
        m.swap(c, p);
        let piv = m[c][c].clone();
        for k in c..=n {
            m[c][k] = &m[c][k] / &piv;
        }
        for i in 0..n {
            if i != c && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for k in c..=n {
                    let d = &f * &m[c][k];
                    m[i][k] -= d;
                }
            }
        }
    }
    Ok(m.into_iter().map(|mut r| r.pop().expect("augmented")).collect())
}

/// True when the top-right blocks span all D_U(t^i A1, t^j A2).
pub fn conjecture_holds(s1: usize, s2: usize) -> Result<bool> {
    let q = conjecture_matrix(s1, s2)?;
    Ok(rank(&q) == q.len())
}

/// Coefficient attached to block (row, col), 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockCoefficient {
    pub row: usize,
    pub col: usize,
    pub coef: BigRational,
}

/// Writes int int p(t1, t2) A~1 A~2, premultiplied by U(t), as a
/// combination of top-right blocks. `coeffs[i][j]` multiplies t1^i t2^j.
pub fn poly_block_decomposition(coeffs: &[Vec<BigRational>]) -> Result<Vec<BlockCoefficient>> {
    let s1 = coeffs.len().checked_sub(1).ok_or_else(|| Error::InvalidArgument("empty coefficient table".into()))?;
    let s2 = coeffs[0].len().checked_sub(1).ok_or_else(|| Error::InvalidArgument("empty coefficient row".into()))?;
    if coeffs.iter().any(|r| r.len() != s2 + 1) {
        return dim_err("ragged coefficient table");
    }
    let z: Vec<BigRational> = coeffs.iter().flatten().cloned().collect();
    let q = conjecture_matrix(s1, s2)?;
    let x = solve_exact(&q, &z)?;
    Ok(poly_top_right_coords(s1, s2).into_iter().zip(x).map(|((row, col), coef)| BlockCoefficient { row, col, coef }).collect())
}

pub fn format_decomposition(d: &[BlockCoefficient]) -> String {
    let parts: Vec<String> = d
        .iter()
        .filter(|b| !b.coef.is_zero())
        .map(|b| if b.coef.is_one() { format!("C[{},{}]", b.row, b.col) } else { format!("({})*C[{},{}]", b.coef, b.row, b.col) })
        .collect();
    if parts.is_empty() {
        "0".into()
    } else {
        parts.join(" + ")
    }
}

/// Plain-text report of three worked cases: the block exponential of a
/// three-block generator, the bilinear grid and one decomposition.
pub fn worked_example() -> Result<String> {
    let mut out = String::from("# symbolic output, format 1\n");
    let diag: Vec<String> = vec!["U".into(); 3];
    let off = vec![vec![WeightedOp::named("A"), WeightedOp::zero()], vec![WeightedOp::named("B")]];
    for (s, row) in to_exponential(&diag, &off)?.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            out += &format!("C[{},{}] = {}\n", s + 1, s + j + 1, e);
        }
    }
    let coords = poly_top_right_coords(1, 1);
    for (e, (r, c)) in poly_top_right(1, 1)?.iter().zip(coords) {
        out += &format!("L11 C[{},{}] = {}\n", r, c, e);
    }
    let coeffs = vec![vec![rat(1, 1), rat(2, 1)], vec![rat(3, 1), rat(4, 1)]];
    out += &format!("p = 1 + 2 t2 + 3 t1 + 4 t1 t2: {}\n", format_decomposition(&poly_block_decomposition(&coeffs)?));
    Ok(out)
}

// ------------------------------------------------------ numeric values

/// Numeric meaning of symbols on a piecewise-constant time grid: each
/// propagator symbol gets one generator per step, each operator symbol
/// one matrix per step.
pub struct NumericEnv {
    dim: usize,
    starts: Vec<f64>,
    durations: Vec<f64>,
    props: HashMap<String, PiecewisePropagator>,
    ops: HashMap<String, PiecewiseOperator>,
    identity: PiecewiseOperator,
    cfg: QuadratureConfig,
}

impl NumericEnv {
    pub fn new(dim: usize, durations: Vec<f64>, cfg: QuadratureConfig) -> Result<Self> {
        if durations.is_empty() || durations.iter().any(|d| !(*d > 0.0)) {
            return arg_err("durations must be positive");
        }
        let mut starts = Vec::with_capacity(durations.len());
        let mut t = 0.0;
        for d in &durations {
            starts.push(t);
            t += d;
        }
        let identity = PiecewiseOperator::new(vec![0.0], vec![ComplexMatrix::identity(dim)]);
        Ok(NumericEnv { dim, starts, durations, props: HashMap::new(), ops: HashMap::new(), identity, cfg })
    }

    fn check(&self, mats: &[ComplexMatrix]) -> Result<()> {
        if mats.len() != self.durations.len() {
            return dim_err("one matrix per step expected");
        }
        if mats.iter().any(|m| m.rows() != self.dim || m.cols() != self.dim) {
            return dim_err("symbol matrices must match the environment size");
        }
        Ok(())
    }

    pub fn with_propagator(mut self, name: &str, gens: Vec<ComplexMatrix>) -> Result<Self> {
        self.check(&gens)?;
        let p = PiecewisePropagator::new(self.starts.clone(), &self.durations, gens);
        self.props.insert(name.into(), p);
        Ok(self)
    }

    pub fn with_operator(mut self, name: &str, values: Vec<ComplexMatrix>) -> Result<Self> {
        self.check(&values)?;
        self.ops.insert(name.into(), PiecewiseOperator::new(self.starts.clone(), values));
        Ok(self)
    }

    fn prop(&self, name: &str) -> Result<&PiecewisePropagator> {
        self.props.get(name).ok_or_else(|| Error::UnknownName(name.into()))
    }

    pub fn eval_term(&self, term: &SymTerm, t: f64) -> Result<ComplexMatrix> {
        match term {
            SymTerm::Ex { power, symbol } => Ok(self.prop(symbol)?.at(t).scale_re(t.powi(*power as i32))),
            SymTerm::Int { power, factors } => {
                let mut acc = ComplexMatrix::zeros(self.dim, self.dim);
                // expand each factor's sum
                let mut pick = vec![0usize; factors.len()];
                loop {
                    let chosen: Vec<&OpTerm> = factors.iter().zip(&pick).map(|(f, &k)| &f.op.0[k]).collect();
                    if chosen.iter().all(|o| o.symbol != OpSymbol::Zero) {
                        let mut chain = Vec::with_capacity(factors.len());
                        for (f, o) in factors.iter().zip(&chosen) {
                            let op = match &o.symbol {
                                OpSymbol::Identity => &self.identity,
                                OpSymbol::Named(s) => self.ops.get(s).ok_or_else(|| Error::UnknownName(s.clone()))?,
                                OpSymbol::Zero => unreachable!(),
                            };
                            chain.push(ChainFactor { left: self.prop(&f.u)?, op, right: self.prop(&f.w)? });
                        }
                        let coef: f64 = chosen.iter().map(|o| o.coef.to_f64().unwrap_or(f64::NAN)).product();
                        let powers: Vec<i32> = chosen.iter().map(|o| o.power as i32).collect();
                        let weight = |ts: &[f64]| Complex64::new(ts.iter().zip(&powers).map(|(x, &p)| x.powi(p)).product(), 0.0);
                        let v = chain_integral(t, &chain, &weight, &self.starts[1..], &self.cfg)?;
                        acc.axpy(Complex64::new(coef, 0.0), &v);
                    }
                    // next combination
                    let mut k = 0;
                    loop {
                        if k == pick.len() {
                            return Ok(acc.scale_re(t.powi(*power as i32)));
                        }
                        pick[k] += 1;
                        if pick[k] < factors[k].op.0.len() {
                            break;
                        }
                        pick[k] = 0;
                        k += 1;
                    }
                }
            }
        }
    }

    pub fn eval(&self, e: &SymExpr, t: f64) -> Result<ComplexMatrix> {
        let mut acc = ComplexMatrix::zeros(self.dim, self.dim);
        for (term, c) in e.iter() {
            let v = self.eval_term(term, t)?;
            acc.axpy(Complex64::new(c.to_f64().unwrap_or(f64::NAN), 0.0), &v);
        }
        Ok(acc)
    }
}
