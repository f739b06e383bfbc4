//! Dense complex matrices, block partitions and the matrix exponential.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{arg_err, dim_err, Error, Result};

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return dim_err(format!(
                "{} entries supplied for a {}x{} matrix",
                data.len(),
                rows,
                cols
            ));
        }
        if let Some(k) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite(format!(
                "entry ({}, {})",
                k / cols.max(1),
                k % cols.max(1)
            )));
        }
        Ok(ComplexMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        ComplexMatrix { rows, cols, data }
    }

    /// Builds from nested rows of (re, im) pairs.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let r = rows.len();
        let cols = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != cols) {
            return dim_err("ragged rows");
        }
        Self::new(r, cols, rows.iter().flatten().copied().collect())
    }

    pub fn from_real(rows: usize, cols: usize, re: &[f64]) -> Result<Self> {
        Self::new(rows, cols, re.iter().map(|&x| c(x, 0.0)).collect())
    }

    pub fn diag(values: &[Complex64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add: shape mismatch");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "sub: shape mismatch");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// self += s * other
    pub fn axpy(&mut self, s: Complex64, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "axpy: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Matrix product; panics on shape mismatch. See [`mat_mul`] for the checked form.
    pub fn dot(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "dot: inner dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        matmul_into(self, other, &mut out);
        out
    }

    /// Frobenius norm without the squareness check of [`hs_norm`].
    pub fn frob(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn one_norm(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "diff: shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Copy of the rows r0..r0+nr, cols c0..c0+nc.
    pub fn submatrix(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        assert!(r0 + nr <= self.rows && c0 + nc <= self.cols, "submatrix out of range");
        let mut out = Self::zeros(nr, nc);
        for i in 0..nr {
            let src = &self.data[(r0 + i) * self.cols + c0..(r0 + i) * self.cols + c0 + nc];
            out.data[i * nc..(i + 1) * nc].copy_from_slice(src);
        }
        out
    }

    pub fn set_submatrix(&mut self, r0: usize, c0: usize, m: &Self) {
        assert!(r0 + m.rows <= self.rows && c0 + m.cols <= self.cols, "set_submatrix out of range");
        for i in 0..m.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + m.cols].copy_from_slice(&m.data[i * m.cols..(i + 1) * m.cols]);
        }
    }

    pub fn add_submatrix(&mut self, r0: usize, c0: usize, m: &Self, s: Complex64) {
        assert!(r0 + m.rows <= self.rows && c0 + m.cols <= self.cols, "add_submatrix out of range");
        for i in 0..m.rows {
            for j in 0..m.cols {
                self.data[(r0 + i) * self.cols + c0 + j] += s * m.data[i * m.cols + j];
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Inverse by LU with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        if !self.is_square() {
            return dim_err("inverse of a non-square matrix");
        }
        solve(self, &Self::identity(self.rows))
    }
}

/// out = a * b, with out pre-sized and overwritten.
pub fn matmul_into(a: &ComplexMatrix, b: &ComplexMatrix, out: &mut ComplexMatrix) {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    debug_assert_eq!(k, b.rows);
    debug_assert_eq!((out.rows, out.cols), (n, m));
    out.data.iter_mut().for_each(|z| *z = ZERO);
    for i in 0..n {
        let orow = &mut out.data[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip.re == 0.0 && aip.im == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

pub fn mat_mul(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.cols != b.rows {
        return dim_err(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    Ok(a.dot(b))
}

pub fn hs_norm(a: &ComplexMatrix) -> Result<f64> {
    if !a.is_square() {
        return dim_err("Hilbert-Schmidt norm of a non-square matrix");
    }
    Ok(a.frob())
}

/// Tr(a† b) without forming the product.
pub fn inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols), "inner: shape mismatch");
    a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).sum()
}

/// Tr(a b) without forming the product.
pub fn trace_product(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    assert_eq!((a.rows, a.cols), (b.cols, b.rows), "trace_product: shape mismatch");
    let mut s = ZERO;
    for i in 0..a.rows {
        for j in 0..a.cols {
            s += a.data[i * a.cols + j] * b.data[j * b.cols + i];
        }
    }
    s
}

pub fn fidelity(u: &ComplexMatrix, v: &ComplexMatrix) -> Result<f64> {
    if !u.is_square() || (u.rows, u.cols) != (v.rows, v.cols) {
        return dim_err("fidelity needs square matrices of equal size");
    }
    let uu = inner(u, u).re;
    let vv = inner(v, v).re;
    if uu == 0.0 || vv == 0.0 {
        return arg_err("fidelity of a zero-norm matrix");
    }
    let uv = inner(u, v);
    Ok((uv.norm_sqr() / (uu * vv)).sqrt().min(1.0))
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (br, bc) = (b.rows, b.cols);
    ComplexMatrix::from_fn(a.rows * br, a.cols * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Solves a x = b by LU with partial pivoting.
pub fn solve(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = a.rows;
    if !a.is_square() || b.rows != n {
        return dim_err("solve: shapes do not match");
    }
    let m = b.cols;
    let mut lu = a.data.clone();
    let mut x = b.data.clone();
    for k in 0..n {
        let (mut piv, mut best) = (k, lu[k * n + k].norm());
        for i in k + 1..n {
            let v = lu[i * n + k].norm();
            if v > best {
                best = v;
                piv = i;
            }
        }
        if best == 0.0 {
            return Err(Error::Singular(format!("zero pivot in column {}", k)));
        }
        if piv != k {
            for j in 0..n {
                lu.swap(k * n + j, piv * n + j);
            }
            for j in 0..m {
                x.swap(k * m + j, piv * m + j);
            }
        }
        let inv = lu[k * n + k].inv();
        for i in k + 1..n {
            let f = lu[i * n + k] * inv;
            if f.re == 0.0 && f.im == 0.0 {
                continue;
            }
            lu[i * n + k] = f;
            for j in k + 1..n {
                let t = lu[k * n + j];
                lu[i * n + j] -= f * t;
            }
            for j in 0..m {
                let t = x[k * m + j];
                x[i * m + j] -= f * t;
            }
        }
    }
    for k in (0..n).rev() {
        let inv = lu[k * n + k].inv();
        for j in 0..m {
            let mut s = x[k * m + j];
            for p in k + 1..n {
                s -= lu[k * n + p] * x[p * m + j];
            }
            x[k * m + j] = s * inv;
        }
    }
    ComplexMatrix::new(n, m, x)
}

const PADE_ORDER: usize = 6;

fn pade_coefficients() -> [f64; PADE_ORDER + 1] {
    // b_k = (2q-k)! q! / ((2q)! k! (q-k)!)
    let fact = |n: usize| (1..=n).fold(1.0f64, |a, k| a * k as f64);
    let q = PADE_ORDER;
    let mut b = [0.0; PADE_ORDER + 1];
    for (k, bk) in b.iter_mut().enumerate() {
        *bk = fact(2 * q - k) * fact(q) / (fact(2 * q) * fact(k) * fact(q - k));
    }
    b
}

/// Matrix exponential: scaling so that the 1-norm is at most 1/2, a
/// diagonal Pade(6,6) core, then repeated squaring.
pub fn expm(a: &ComplexMatrix) -> ComplexMatrix {
    assert!(a.is_square(), "expm of a non-square matrix");
    let n = a.rows;
    if n == 0 {
        return a.clone();
    }
    let norm = a.one_norm();
    let mut s = 0i32;
    if norm > 0.5 {
        s = (norm / 0.5).log2().ceil() as i32;
        while norm / 2f64.powi(s) > 0.5 {
            s += 1;
        }
    }
    let x = a.scale_re(2f64.powi(-s));
    let b = pade_coefficients();
    let x2 = x.dot(&x);
    let x4 = x2.dot(&x2);
    let x6 = x4.dot(&x2);
    let mut odd = ComplexMatrix::identity(n).scale_re(b[1]);
    odd.axpy(c(b[3], 0.0), &x2);
    odd.axpy(c(b[5], 0.0), &x4);
    let u = x.dot(&odd);
    let mut v = ComplexMatrix::identity(n).scale_re(b[0]);
    v.axpy(c(b[2], 0.0), &x2);
    v.axpy(c(b[4], 0.0), &x4);
    v.axpy(c(b[6], 0.0), &x6);
    let num = v.add(&u);
    let den = v.sub(&u);
    let mut r = solve(&den, &num).expect("Pade denominator is nonsingular for a scaled argument");
    let mut tmp = ComplexMatrix::zeros(n, n);
    for _ in 0..s {
        matmul_into(&r, &r, &mut tmp);
        std::mem::swap(&mut r, &mut tmp);
    }
    r
}

/// Block partition of a matrix into a grid of (possibly unequal) square-compatible blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    row_sizes: Vec<usize>,
    col_sizes: Vec<usize>,
    blocks: Vec<ComplexMatrix>,
}

impl BlockMatrix {
    /// Zero block matrix with `block_rows` x `block_cols` blocks of size `block_dim`.
    pub fn new(block_rows: usize, block_cols: usize, block_dim: usize) -> Self {
        Self::with_sizes(vec![block_dim; block_rows], vec![block_dim; block_cols])
    }

    pub fn with_sizes(row_sizes: Vec<usize>, col_sizes: Vec<usize>) -> Self {
        let mut blocks = Vec::with_capacity(row_sizes.len() * col_sizes.len());
        for &r in &row_sizes {
            for &cc in &col_sizes {
                blocks.push(ComplexMatrix::zeros(r, cc));
            }
        }
        BlockMatrix { row_sizes, col_sizes, blocks }
    }

    pub fn block_rows(&self) -> usize {
        self.row_sizes.len()
    }

    pub fn block_cols(&self) -> usize {
        self.col_sizes.len()
    }

    /// Common block size, if all blocks share one.
    pub fn block_dim(&self) -> Option<usize> {
        let first = *self.row_sizes.first()?;
        let uniform = self.row_sizes.iter().chain(&self.col_sizes).all(|&s| s == first);
        uniform.then_some(first)
    }

    pub fn row_sizes(&self) -> &[usize] {
        &self.row_sizes
    }

    pub fn block(&self, i: usize, j: usize) -> &ComplexMatrix {
        &self.blocks[i * self.col_sizes.len() + j]
    }

    pub fn set_block(&mut self, i: usize, j: usize, m: ComplexMatrix) -> Result<()> {
        if (m.rows, m.cols) != (self.row_sizes[i], self.col_sizes[j]) {
            return dim_err(format!(
                "block ({}, {}) must be {}x{}",
                i, j, self.row_sizes[i], self.col_sizes[j]
            ));
        }
        let k = i * self.col_sizes.len() + j;
        self.blocks[k] = m;
        Ok(())
    }

    pub fn flatten(&self) -> ComplexMatrix {
        let rows: usize = self.row_sizes.iter().sum();
        let cols: usize = self.col_sizes.iter().sum();
        let mut out = ComplexMatrix::zeros(rows, cols);
        let mut r0 = 0;
        for (i, &r) in self.row_sizes.iter().enumerate() {
            let mut c0 = 0;
            for (j, &cc) in self.col_sizes.iter().enumerate() {
                out.set_submatrix(r0, c0, self.block(i, j));
                c0 += cc;
            }
            r0 += r;
        }
        out
    }

    pub fn partition(m: &ComplexMatrix, row_sizes: &[usize], col_sizes: &[usize]) -> Result<Self> {
        if row_sizes.iter().sum::<usize>() != m.rows || col_sizes.iter().sum::<usize>() != m.cols {
            return dim_err("partition sizes do not add up to the matrix shape");
        }
        let mut blocks = Vec::with_capacity(row_sizes.len() * col_sizes.len());
        let mut r0 = 0;
        for &r in row_sizes {
            let mut c0 = 0;
            for &cc in col_sizes {
                blocks.push(m.submatrix(r0, c0, r, cc));
                c0 += cc;
            }
            r0 += r;
        }
        Ok(BlockMatrix { row_sizes: row_sizes.to_vec(), col_sizes: col_sizes.to_vec(), blocks })
    }

    pub fn partition_uniform(m: &ComplexMatrix, block_dim: usize) -> Result<Self> {
        if block_dim == 0 || m.rows % block_dim != 0 || m.cols % block_dim != 0 {
            return dim_err("matrix shape is not a multiple of the block size");
        }
        Self::partition(m, &vec![block_dim; m.rows / block_dim], &vec![block_dim; m.cols / block_dim])
    }
}

/// Pauli matrices and a few fixed operators used throughout.
pub mod ops {
    use super::*;

    pub fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    pub fn sigma_y() -> ComplexMatrix {
        ComplexMatrix::new(2, 2, vec![ZERO, -I, I, ZERO]).unwrap()
    }

    pub fn sigma_z() -> ComplexMatrix {
        ComplexMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, -1.0]).unwrap()
    }

    /// sigma_+ = |0><1|
    pub fn raising() -> ComplexMatrix {
        ComplexMatrix::from_real(2, 2, &[0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    /// sigma_- = |1><0|
    pub fn lowering() -> ComplexMatrix {
        ComplexMatrix::from_real(2, 2, &[0.0, 0.0, 1.0, 0.0]).unwrap()
    }

    pub fn paulis() -> [ComplexMatrix; 3] {
        [sigma_x(), sigma_y(), sigma_z()]
    }

    /// Two-spin dipolar coupling 3 sz sz - sum_i si si.
    pub fn dipolar() -> ComplexMatrix {
        let z = sigma_z();
        let mut d = kron(&z, &z).scale_re(3.0);
        for p in paulis() {
            d = d.sub(&kron(&p, &p));
        }
        d
    }

    /// a (x) I + I (x) a on two copies of a 2-level system.
    pub fn collective(a: &ComplexMatrix) -> ComplexMatrix {
        let id = ComplexMatrix::identity(a.rows());
        kron(a, &id).add(&kron(&id, a))
    }
}

#[cfg(test)]
mod tests {
    use super::ops::*;
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> ComplexMatrix {
        ComplexMatrix::from_fn(n, m, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale)
    }

    fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
        let h = random(rng, n, n, 1.0);
        let ah = h.sub(&h.adjoint()).scale_re(0.5);
        expm(&ah)
    }

    #[test]
    fn product_basics() {
        let x = sigma_x();
        assert_eq!(mat_mul(&ComplexMatrix::identity(2), &x).unwrap(), x);
        assert!(mat_mul(&x, &x).unwrap().max_abs_diff(&ComplexMatrix::identity(2)) == 0.0);
        assert!(mat_mul(&x, &ComplexMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn product_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 5, 5, 1.0);
        let b = random(&mut rng, 5, 5, 1.0);
        let p = a.dot(&b);
        for i in 0..5 {
            for j in 0..5 {
                let mut s = ZERO;
                for k in 0..5 {
                    s += a[(i, k)] * b[(k, j)];
                }
                assert!((s - p[(i, j)]).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn norms() {
        assert!((hs_norm(&ComplexMatrix::identity(3)).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        assert!((hs_norm(&sigma_x()).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((hs_norm(&dipolar()).unwrap() - 24f64.sqrt()).abs() < 1e-14);
        assert!(hs_norm(&ComplexMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn fidelity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_unitary(&mut rng, 3);
        assert!((fidelity(&u, &u).unwrap() - 1.0).abs() < 1e-14);
        let id = ComplexMatrix::identity(2);
        assert!((fidelity(&id, &id.scale(Complex64::from_polar(1.0, 0.7))).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(fidelity(&id, &sigma_x()).unwrap(), 0.0);
        assert!(fidelity(&id, &ComplexMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn expm_cases() {
        assert_eq!(expm(&ComplexMatrix::zeros(3, 3)), ComplexMatrix::identity(3));
        let z = [c(0.3, 2.0), c(-4.0, 0.5), c(1.5, -30.0)];
        let e = expm(&ComplexMatrix::diag(&z));
        for (i, zi) in z.iter().enumerate() {
            assert!((e[(i, i)] - zi.exp()).norm() < 1e-12 * zi.exp().norm().max(1.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random(&mut rng, 2, 2, 3.0);
        let mut nil = ComplexMatrix::zeros(4, 4);
        nil.set_submatrix(0, 2, &b);
        let mut expect = ComplexMatrix::identity(4);
        expect.set_submatrix(0, 2, &b);
        assert!(expm(&nil).max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn expm_large_norm_against_eigenbasis() {
        // V diag(z) V^-1 with a well-conditioned V, norm near 100.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let v = random_unitary(&mut rng, 6);
            let z: Vec<Complex64> = (0..6).map(|_| c(rng.gen_range(-5.0..1.0), rng.gen_range(-40.0..40.0))).collect();
            let a = v.dot(&ComplexMatrix::diag(&z)).dot(&v.adjoint());
            assert!(a.frob() < 100.0);
            let ez: Vec<Complex64> = z.iter().map(|x| x.exp()).collect();
            let expect = v.dot(&ComplexMatrix::diag(&ez)).dot(&v.adjoint());
            let rel = expm(&a).sub(&expect).frob() / expect.frob();
            assert!(rel < 1e-12, "relative error {}", rel);
        }
    }

    #[test]
    fn kron_cases() {
        let id2 = ComplexMatrix::identity(2);
        assert_eq!(kron(&id2, &id2), ComplexMatrix::identity(4));
        let e00 = ComplexMatrix::from_real(4, 1, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let out = kron(&sigma_x(), &id2).dot(&e00);
        assert_eq!(out, ComplexMatrix::from_real(4, 1, &[0.0, 0.0, 1.0, 0.0]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b, cm, d) = (
            random(&mut rng, 2, 2, 1.0),
            random(&mut rng, 2, 2, 1.0),
            random(&mut rng, 2, 2, 1.0),
            random(&mut rng, 2, 2, 1.0),
        );
        let lhs = kron(&a, &b).dot(&kron(&cm, &d));
        let rhs = kron(&a.dot(&cm), &b.dot(&d));
        assert!(lhs.max_abs_diff(&rhs) < 1e-13);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(ComplexMatrix::new(2, 2, vec![ZERO; 3]).is_err());
        assert!(ComplexMatrix::new(1, 1, vec![c(f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn solve_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random(&mut rng, 5, 5, 1.0);
        let inv = a.inverse().unwrap();
        assert!(a.dot(&inv).max_abs_diff(&ComplexMatrix::identity(5)) < 1e-12);
        assert!(ComplexMatrix::zeros(2, 2).inverse().is_err());
    }

    #[test]
    fn block_partition_roundtrip_uneven() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random(&mut rng, 6, 6, 1.0);
        let b = BlockMatrix::partition(&m, &[2, 4], &[4, 2]).unwrap();
        assert_eq!(b.flatten(), m);
        assert_eq!(b.block_dim(), None);
        let u = BlockMatrix::partition_uniform(&m, 3).unwrap();
        assert_eq!(u.block_dim(), Some(3));
        assert!(BlockMatrix::partition_uniform(&m, 4).is_err());
        let mut z = BlockMatrix::new(2, 2, 2);
        assert!(z.set_block(0, 1, ComplexMatrix::zeros(3, 3)).is_err());
    }

    fn arb_matrix(n: usize, scale: f64) -> impl Strategy<Value = ComplexMatrix> {
        proptest::collection::vec((-scale..scale, -scale..scale), n * n).prop_map(move |v| {
            ComplexMatrix::new(n, n, v.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hs_norm_unitarily_invariant(a in arb_matrix(3, 2.0), s1 in 0u64..1000, s2 in 0u64..1000) {
            let u = random_unitary(&mut ChaCha8Rng::seed_from_u64(s1), 3);
            let v = random_unitary(&mut ChaCha8Rng::seed_from_u64(s2 + 5000), 3);
            let lhs = hs_norm(&u.dot(&a).dot(&v)).unwrap();
            prop_assert!((lhs - hs_norm(&a).unwrap()).abs() < 1e-12 * (1.0 + lhs));
        }

        #[test]
        fn expm_inverse_pair(a in arb_matrix(4, 10.0 / 8.0)) {
            prop_assume!(a.frob() <= 10.0);
            let p = expm(&a).dot(&expm(&a.scale_re(-1.0)));
            prop_assert!(p.max_abs_diff(&ComplexMatrix::identity(4)) < 1e-11);
        }

        #[test]
        fn fidelity_symmetric(a in arb_matrix(3, 1.0), b in arb_matrix(3, 1.0)) {
            let f1 = fidelity(&a, &b).unwrap();
            let f2 = fidelity(&b, &a).unwrap();
            prop_assert!((f1 - f2).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&f1));
        }

        #[test]
        fn flatten_partition_identity(a in arb_matrix(6, 1.0)) {
            let b = BlockMatrix::partition_uniform(&a, 2).unwrap();
            prop_assert_eq!(b.flatten(), a.clone());
            let again = BlockMatrix::partition_uniform(&b.flatten(), 2).unwrap();
            prop_assert_eq!(again, b);
        }
    }
}
