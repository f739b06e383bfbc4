//! Van Loan block generators for Dyson terms.
//!
//! A layout stores the lifted drift `L_0`, the lifted control terms `L_i`
//! and a map from term names to block coordinates of the propagated
//! exponential.

use num_complex::Complex64;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::matcore::{BlockMatrix, ComplexMatrix, ZERO};

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorFamily {
    drift: ComplexMatrix,
    controls: Vec<ComplexMatrix>,
}

impl GeneratorFamily {
    pub fn new(drift: ComplexMatrix, controls: Vec<ComplexMatrix>) -> Result<Self> {
        if !drift.is_square() {
            return dim_err("drift term must be square");
        }
        if controls.is_empty() {
            return arg_err("a generator family needs at least one control term");
        }
        let n = drift.rows();
        if let Some(k) = controls.iter().position(|g| g.rows() != n || g.cols() != n) {
            return dim_err(format!("control term {} is not {}x{}", k + 1, n, n));
        }
        Ok(GeneratorFamily { drift, controls })
    }

    pub fn dim(&self) -> usize {
        self.drift.rows()
    }

    pub fn drift(&self) -> &ComplexMatrix {
        &self.drift
    }

    pub fn controls(&self) -> &[ComplexMatrix] {
        &self.controls
    }

    pub fn control_count(&self) -> usize {
        self.controls.len()
    }

    /// G_0 + sum_i b_i G_i
    pub fn generator(&self, amps: &[f64]) -> ComplexMatrix {
        let mut g = self.drift.clone();
        for (a, gi) in amps.iter().zip(&self.controls) {
            if *a != 0.0 {
                g.axpy(Complex64::new(*a, 0.0), gi);
            }
        }
        g
    }
}

/// An operator A_k entering a Dyson term.
#[derive(Clone, Debug, PartialEq)]
pub enum DysonOperator {
    Constant(ComplexMatrix),
    /// b_channel(t) * matrix, channel 0-based.
    ControlWeighted { channel: usize, matrix: ComplexMatrix },
}

impl DysonOperator {
    pub fn matrix(&self) -> &ComplexMatrix {
        match self {
            DysonOperator::Constant(m) => m,
            DysonOperator::ControlWeighted { matrix, .. } => matrix,
        }
    }

    /// Value at a step with the given control amplitudes.
    pub fn at(&self, amps: &[f64]) -> ComplexMatrix {
        match self {
            DysonOperator::Constant(m) => m.clone(),
            DysonOperator::ControlWeighted { channel, matrix } => matrix.scale_re(amps[*channel]),
        }
    }
}

impl From<ComplexMatrix> for DysonOperator {
    fn from(m: ComplexMatrix) -> Self {
        DysonOperator::Constant(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScalarWeight {
    One,
    ExpSum(Vec<Complex64>),
    Poly { s1: usize, s2: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DysonSpec {
    pub operators: Vec<DysonOperator>,
    pub weight: ScalarWeight,
}

impl DysonSpec {
    pub fn new(operators: Vec<DysonOperator>, weight: ScalarWeight) -> Result<Self> {
        if operators.is_empty() {
            return arg_err("a Dyson term needs at least one operator");
        }
        match &weight {
            ScalarWeight::Poly { .. } if operators.len() != 2 => {
                arg_err("polynomial weights are only defined for second-order terms")
            }
            ScalarWeight::ExpSum(d) if d.len() != operators.len() => {
                arg_err(format!("{} rates given for {} operators", d.len(), operators.len()))
            }
            _ => Ok(DysonSpec { operators, weight }),
        }
    }

    pub fn one(operators: Vec<DysonOperator>) -> Result<Self> {
        Self::new(operators, ScalarWeight::One)
    }
}

/// Location of a named term: block (row, col), 0-based. With a post factor
/// `r` the block equals `exp(r t)` times the named term.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockEntry {
    pub row: usize,
    pub col: usize,
    pub post_factor: Option<Complex64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VanLoanLayout {
    block_sizes: Vec<usize>,
    offsets: Vec<usize>,
    drift: ComplexMatrix,
    controls: Vec<ComplexMatrix>,
    shifts: Vec<Complex64>,
    entries: Vec<(String, BlockEntry)>,
    components: Vec<(usize, usize)>,
    label: Option<String>,
}

fn offsets_of(sizes: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    sizes
        .iter()
        .map(|s| {
            let o = acc;
            acc += s;
            o
        })
        .collect()
}

fn range_name(i: usize, j: usize) -> String {
    format!("D[{}..{}]", i, j)
}

impl VanLoanLayout {
    fn empty(block_sizes: Vec<usize>, controls: usize) -> Self {
        let dim: usize = block_sizes.iter().sum();
        let offsets = offsets_of(&block_sizes);
        let nb = block_sizes.len();
        VanLoanLayout {
            block_sizes,
            offsets,
            drift: ComplexMatrix::zeros(dim, dim),
            controls: vec![ComplexMatrix::zeros(dim, dim); controls],
            shifts: vec![ZERO; nb],
            entries: Vec::new(),
            components: vec![(0, dim)],
            label: None,
        }
    }

    /// One-block layout that just propagates the family itself.
    pub fn from_family(family: &GeneratorFamily) -> Self {
        let mut l = Self::empty(vec![family.dim()], family.control_count());
        l.drift = family.drift.clone();
        l.controls = family.controls.clone();
        l.entries.push(("U[1]".into(), BlockEntry { row: 0, col: 0, post_factor: None }));
        l
    }

    /// Layout built directly from full generator matrices, partitioned into
    /// uniform blocks. Used for arbitrary block-upper-triangular generators.
    pub fn from_generators(
        block_dim: usize,
        drift: ComplexMatrix,
        controls: Vec<ComplexMatrix>,
    ) -> Result<Self> {
        let dim = drift.rows();
        if block_dim == 0 || dim % block_dim != 0 || !drift.is_square() {
            return dim_err("generator size is not a multiple of the block size");
        }
        if controls.iter().any(|g| g.rows() != dim || g.cols() != dim) {
            return dim_err("control generators must match the drift size");
        }
        let nb = dim / block_dim;
        for g in std::iter::once(&drift).chain(&controls) {
            for i in 0..nb {
                for j in 0..i {
                    if g.submatrix(i * block_dim, j * block_dim, block_dim, block_dim).max_abs() != 0.0 {
                        return arg_err(format!("block ({}, {}) below the diagonal is nonzero", i + 1, j + 1));
                    }
                }
            }
        }
        let mut l = Self::empty(vec![block_dim; nb], controls.len());
        l.drift = drift;
        l.controls = controls;
        for i in 0..nb {
            for j in i..nb {
                l.entries.push((format!("C[{},{}]", i + 1, j + 1), BlockEntry { row: i, col: j, post_factor: None }));
            }
        }
        Ok(l)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.drift.rows()
    }

    pub fn block_count(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn block_offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn block_dim(&self) -> Option<usize> {
        let first = *self.block_sizes.first()?;
        self.block_sizes.iter().all(|&s| s == first).then_some(first)
    }

    pub fn control_count(&self) -> usize {
        self.controls.len()
    }

    pub fn drift(&self) -> &ComplexMatrix {
        &self.drift
    }

    pub fn controls(&self) -> &[ComplexMatrix] {
        &self.controls
    }

    pub fn shifts(&self) -> &[Complex64] {
        &self.shifts
    }

    /// Independent diagonal components as (offset, size) in the flat index space.
    pub fn components(&self) -> &[(usize, usize)] {
        &self.components
    }

    pub fn entries(&self) -> &[(String, BlockEntry)] {
        &self.entries
    }

    /// Looks up a block; a labelled layout also answers to `label/name`.
    pub fn entry(&self, name: &str) -> Result<&BlockEntry> {
        let local = match &self.label {
            Some(l) => name.strip_prefix(l.as_str()).and_then(|r| r.strip_prefix('/')).unwrap_or(name),
            None => name,
        };
        self.entries
            .iter()
            .find(|(n, _)| n == name || n == local)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::UnknownName(format!("no block named {:?} in layout", name)))
    }

    /// Full step generator L_0 + sum_i b_i L_i.
    pub fn generator(&self, amps: &[f64]) -> ComplexMatrix {
        let mut g = self.drift.clone();
        for (a, li) in amps.iter().zip(&self.controls) {
            if *a != 0.0 {
                g.axpy(Complex64::new(*a, 0.0), li);
            }
        }
        g
    }

    /// Block (r, c) of a full-size matrix under this layout's partition.
    pub fn block_at(&self, m: &ComplexMatrix, r: usize, c: usize) -> ComplexMatrix {
        m.submatrix(self.offsets[r], self.offsets[c], self.block_sizes[r], self.block_sizes[c])
    }

    /// Raw block holding the named term (post factor not removed).
    pub fn block(&self, m: &ComplexMatrix, name: &str) -> Result<ComplexMatrix> {
        let e = self.entry(name)?;
        Ok(self.block_at(m, e.row, e.col))
    }

    pub fn partition(&self, m: &ComplexMatrix) -> Result<BlockMatrix> {
        BlockMatrix::partition(m, &self.block_sizes, &self.block_sizes)
    }

    fn set_block(target: &mut ComplexMatrix, offsets: &[usize], r: usize, c: usize, m: &ComplexMatrix) {
        target.set_submatrix(offsets[r], offsets[c], m);
    }

    fn place_operator(&mut self, r: usize, c: usize, op: &DysonOperator) -> Result<()> {
        match op {
            DysonOperator::Constant(m) => {
                Self::set_block(&mut self.drift, &self.offsets, r, c, m);
            }
            DysonOperator::ControlWeighted { channel, matrix } => {
                if *channel >= self.controls.len() {
                    return arg_err(format!("operator refers to control channel {} of {}", channel + 1, self.controls.len()));
                }
                Self::set_block(&mut self.controls[*channel], &self.offsets, r, c, matrix);
            }
        }
        Ok(())
    }

    fn place_diagonal(&mut self, family: &GeneratorFamily) {
        let n = family.dim();
        for k in 0..self.block_count() {
            let mut d = family.drift.clone();
            for i in 0..n {
                d[(i, i)] += self.shifts[k];
            }
            Self::set_block(&mut self.drift, &self.offsets, k, k, &d);
            for (li, gi) in self.controls.iter_mut().zip(&family.controls) {
                li.set_submatrix(self.offsets[k], self.offsets[k], gi);
            }
        }
    }
}

fn check_ops(family: &GeneratorFamily, ops: &[DysonOperator]) -> Result<()> {
    let n = family.dim();
    for (k, op) in ops.iter().enumerate() {
        let m = op.matrix();
        if m.rows() != n || m.cols() != n {
            return dim_err(format!("operator A_{} is {}x{}, expected {}x{}", k + 1, m.rows(), m.cols(), n, n));
        }
        if let DysonOperator::ControlWeighted { channel, .. } = op {
            if *channel >= family.control_count() {
                return arg_err(format!("operator A_{} weights by missing channel {}", k + 1, channel + 1));
            }
        }
    }
    Ok(())
}

fn chain_layout(family: &GeneratorFamily, ops: &[DysonOperator], rates: &[Complex64]) -> Result<VanLoanLayout> {
    check_ops(family, ops)?;
    let m = ops.len();
    let mut l = VanLoanLayout::empty(vec![family.dim(); m + 1], family.control_count());
    let mut partial = vec![ZERO; m + 1];
    for k in 1..=m {
        partial[k] = partial[k - 1] + rates[k - 1];
    }
    l.shifts = partial.clone();
    l.place_diagonal(family);
    for (k, op) in ops.iter().enumerate() {
        l.place_operator(k, k + 1, op)?;
    }
    let annotate = |s: Complex64| (s != ZERO).then_some(s);
    for k in 0..=m {
        l.entries.push((format!("U[{}]", k + 1), BlockEntry { row: k, col: k, post_factor: annotate(partial[k]) }));
    }
    for i in 1..=m {
        for j in i..=m {
            l.entries.push((range_name(i, j), BlockEntry { row: i - 1, col: j, post_factor: annotate(partial[i - 1]) }));
        }
    }
    l.entries.push(("D".into(), BlockEntry { row: 0, col: m, post_factor: None }));
    Ok(l)
}

/// (m+1)-block layout with first off-diagonal (A_1..A_m).
pub fn build_f1(family: &GeneratorFamily, spec: &DysonSpec) -> Result<VanLoanLayout> {
    if spec.weight != ScalarWeight::One {
        return arg_err("build_f1 needs a unit scalar weight");
    }
    chain_layout(family, &spec.operators, &vec![ZERO; spec.operators.len()])
}

/// Layout for the weight exp(d_1 t_1 + ... + d_m t_m).
pub fn build_expsum(family: &GeneratorFamily, spec: &DysonSpec) -> Result<VanLoanLayout> {
    match &spec.weight {
        ScalarWeight::ExpSum(d) => {
            if d.is_empty() {
                return arg_err("exponential weight with no rates");
            }
            chain_layout(family, &spec.operators, d)
        }
        _ => arg_err("build_expsum needs an exponential-sum weight"),
    }
}

/// Layout for weights t_1^i t_2^j with i <= s1, j <= s2.
///
/// Block order from the top: z_{s1}..z_0, y_{s1}..y_0, x_{s1+s2}..x_0.
/// The top-right (s1+1)x(s2+1) grid is exposed as `C[r,c]` (1-based) and
/// the corner block, D_U(t^{s1} A1, t^{s2} A2), also as `D`.
pub fn build_poly(
    family: &GeneratorFamily,
    a1: &DysonOperator,
    a2: &DysonOperator,
    s1: usize,
    s2: usize,
) -> Result<VanLoanLayout> {
    check_ops(family, &[a1.clone(), a2.clone()])?;
    let nb = 3 * s1 + s2 + 3;
    let n = family.dim();
    let mut l = VanLoanLayout::empty(vec![n; nb], family.control_count());
    l.place_diagonal(family);
    let id = ComplexMatrix::identity(n);
    // y_j -> y_{j-1} with coefficient j
    for p in s1 + 1..=2 * s1 {
        let j = s1 - (p - s1 - 1);
        let b = id.scale_re(j as f64);
        VanLoanLayout::set_block(&mut l.drift, &l.offsets, p, p + 1, &b);
    }
    // x_j -> x_{j-1}
    for p in 2 * s1 + 2..nb - 1 {
        let j = s1 + s2 - (p - 2 * s1 - 2);
        let b = id.scale_re(j as f64);
        VanLoanLayout::set_block(&mut l.drift, &l.offsets, p, p + 1, &b);
    }
    for p in 0..=s1 {
        l.place_operator(p, p + s1 + 1, a1)?;
        l.place_operator(p + s1 + 1, p + 2 * s1 + 2, a2)?;
    }
    for k in 0..nb {
        l.entries.push((format!("U[{}]", k + 1), BlockEntry { row: k, col: k, post_factor: None }));
    }
    for r in 0..=s1 {
        for c in nb - 1 - s2..nb {
            l.entries.push((format!("C[{},{}]", r + 1, c + 1), BlockEntry { row: r, col: c, post_factor: None }));
        }
    }
    l.entries.push(("D".into(), BlockEntry { row: 0, col: nb - 1, post_factor: None }));
    Ok(l)
}

/// Block-diagonal concatenation. Entry names get a `label/` prefix, using
/// the layout label or its 1-based position.
pub fn direct_sum(layouts: &[VanLoanLayout]) -> Result<VanLoanLayout> {
    let first = layouts.first().ok_or_else(|| Error::InvalidArgument("direct sum of nothing".into()))?;
    if layouts.len() == 1 {
        return Ok(first.clone());
    }
    let l_count = first.control_count();
    if let Some(k) = layouts.iter().position(|l| l.control_count() != l_count) {
        return arg_err(format!(
            "layout {} has {} control terms, expected {}",
            k + 1,
            layouts[k].control_count(),
            l_count
        ));
    }
    let sizes: Vec<usize> = layouts.iter().flat_map(|l| l.block_sizes.iter().copied()).collect();
    let mut out = VanLoanLayout::empty(sizes, l_count);
    out.components.clear();
    out.shifts.clear();
    let (mut flat, mut blocks) = (0usize, 0usize);
    for (k, l) in layouts.iter().enumerate() {
        out.drift.set_submatrix(flat, flat, &l.drift);
        for (dst, src) in out.controls.iter_mut().zip(&l.controls) {
            dst.set_submatrix(flat, flat, src);
        }
        out.shifts.extend_from_slice(&l.shifts);
        let prefix = l.label.clone().unwrap_or_else(|| (k + 1).to_string());
        for (name, e) in &l.entries {
            out.entries.push((
                format!("{}/{}", prefix, name),
                BlockEntry { row: e.row + blocks, col: e.col + blocks, post_factor: e.post_factor },
            ));
        }
        out.components.extend(l.components.iter().map(|&(o, d)| (o + flat, d)));
        flat += l.dim();
        blocks += l.block_count();
    }
    let mut names: Vec<&str> = out.entries.iter().map(|(n, _)| n.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return arg_err("duplicate layout labels in direct sum");
    }
    Ok(out)
}


/// One block of the propagated exponential next to its two quadrature
/// evaluations (sum over index chains, and the recursive form).
#[derive(Clone, Debug)]
pub struct Theorem1Entry {
    pub row: usize,
    pub col: usize,
    pub propagated: ComplexMatrix,
    pub explicit: ComplexMatrix,
    pub recursive: ComplexMatrix,
}

/// Every C_{s,s+j}(t) block at t = `horizon`, cross-checked by quadrature.
pub fn explicit_blocks(
    layout: &VanLoanLayout,
    horizon: f64,
    controls: &crate::propagate::ControlSequence,
    cfg: &crate::oracle::QuadratureConfig,
) -> Result<Vec<Theorem1Entry>> {
    layout.block_dim().ok_or_else(|| Error::Dimension("uniform block sizes required".into()))?;
    let nb = layout.block_count();
    for g in std::iter::once(layout.drift()).chain(layout.controls()) {
        for i in 0..nb {
            for j in 0..i {
                if layout.block_at(g, i, j).max_abs() != 0.0 {
                    return arg_err("generator is not block upper-triangular");
                }
            }
        }
    }
    let v = crate::propagate::propagate_to(layout, controls, horizon)?;
    let sys = crate::oracle::BlockSystem::new(layout, controls)?;
    let mut out = Vec::new();
    for j in 0..nb {
        for s in 0..nb - j {
            out.push(Theorem1Entry {
                row: s,
                col: s + j,
                propagated: layout.block_at(&v, s, s + j),
                explicit: sys.explicit(s, s + j, horizon, cfg)?,
                recursive: sys.recursive(s, s + j, horizon, cfg)?,
            });
        }
    }
    Ok(out)
}
