//! Target functions built from named blocks of Van Loan propagators,
//! averaged over an ensemble of systems seen through transfer maps.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::blockgen::VanLoanLayout;
use crate::error::{arg_err, dim_err, Error, Result};
use crate::matcore::{c, inner, ComplexMatrix};
use crate::propagate::{propagate_adjoint, ControlSequence, GradientMethod};
use crate::transfer::{apply_two_channel, compose, pullback_two_channel, TransferMap};

/// Floor under square roots of vanishing norms.
const ROOT_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermKind {
    /// F(target, B)^2.
    FidelitySq,
    /// 1 - sqrt(1 - F^2).
    Infidelity,
    /// 1 - |B|^2 / normalization.
    DysonNormSq,
    /// 1 - |B| / normalization.
    DysonNormRoot,
    /// 1 - |Tr(P^dagger B)|^2 / normalization.
    ProjectionSq,
}

/// Linear combination of named blocks, sum_k c_k V[name_k].
#[derive(Clone, Debug, PartialEq)]
pub struct BlockRef(pub Vec<(Complex64, String)>);

impl BlockRef {
    pub fn single(name: impl Into<String>) -> Self {
        BlockRef(vec![(c(1.0, 0.0), name.into())])
    }

    pub fn combo(parts: impl IntoIterator<Item = (Complex64, String)>) -> Self {
        BlockRef(parts.into_iter().collect())
    }

    pub fn extract(&self, layout: &VanLoanLayout, v: &ComplexMatrix) -> Result<ComplexMatrix> {
        let mut acc: Option<ComplexMatrix> = None;
        for (coef, name) in &self.0 {
            let b = layout.block(v, name)?;
            match &mut acc {
                None => acc = Some(b.scale(*coef)),
                Some(a) => {
                    if (a.rows(), a.cols()) != (b.rows(), b.cols()) {
                        return dim_err(format!("block {:?} does not match the size of the others", name));
                    }
                    a.axpy(*coef, &b)
                }
            }
        }
        acc.ok_or_else(|| Error::InvalidArgument("empty block reference".into()))
    }

    /// Scatters a block cotangent N into the full cotangent M.
    fn scatter(&self, layout: &VanLoanLayout, n: &ComplexMatrix, m: &mut ComplexMatrix) -> Result<()> {
        for (coef, name) in &self.0 {
            let e = layout.entry(name)?;
            let (r0, c0) = (block_offset(layout, e.row), block_offset(layout, e.col));
            m.add_submatrix(r0, c0, n, coef.conj());
        }
        Ok(())
    }
}

fn block_offset(layout: &VanLoanLayout, k: usize) -> usize {
    layout.block_offset(k)
}

/// Scores this far below zero are rounding and read as zero.
const ROUNDING_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveTerm {
    pub kind: TermKind,
    pub block: BlockRef,
    pub target: Option<ComplexMatrix>,
    pub projector: Option<ComplexMatrix>,
    pub normalization: f64,
    pub weight: f64,
    /// Width of the rounding applied to the cone of the root scores
    /// (Infidelity, DysonNormRoot); 0 keeps them exact.
    pub smoothing: f64,
}

impl ObjectiveTerm {
    fn build(
        kind: TermKind,
        block: BlockRef,
        target: Option<ComplexMatrix>,
        projector: Option<ComplexMatrix>,
        normalization: f64,
        weight: f64,
    ) -> Result<Self> {
        if !(normalization > 0.0) || !normalization.is_finite() {
            return arg_err(format!("normalization must be positive, got {}", normalization));
        }
        if !(0.0..=1.0).contains(&weight) {
            return arg_err(format!("term weight {} outside [0, 1]", weight));
        }
        Ok(ObjectiveTerm { kind, block, target, projector, normalization, weight, smoothing: 0.0 })
    }

    pub fn fidelity_sq(block: BlockRef, target: ComplexMatrix, weight: f64) -> Result<Self> {
        Self::build(TermKind::FidelitySq, block, Some(target), None, 1.0, weight)
    }

    pub fn infidelity(block: BlockRef, target: ComplexMatrix, weight: f64) -> Result<Self> {
        Self::build(TermKind::Infidelity, block, Some(target), None, 1.0, weight)
    }

    pub fn dyson_sq(block: BlockRef, normalization: f64, weight: f64) -> Result<Self> {
        Self::build(TermKind::DysonNormSq, block, None, None, normalization, weight)
    }

    pub fn dyson_root(block: BlockRef, normalization: f64, weight: f64) -> Result<Self> {
        Self::build(TermKind::DysonNormRoot, block, None, None, normalization, weight)
    }

    pub fn projection_sq(block: BlockRef, projector: ComplexMatrix, normalization: f64, weight: f64) -> Result<Self> {
        Self::build(TermKind::ProjectionSq, block, None, Some(projector), normalization, weight)
    }

    /// Replaces u by (sqrt(u^2 + eps^2) - eps) / (sqrt(1 + eps^2) - eps)
    /// in the root scores, which keeps 0 and 1 fixed but removes the kink
    /// at u = 0 that stalls line searches.
    pub fn with_smoothing(mut self, eps: f64) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return arg_err(format!("smoothing must be finite and nonnegative, got {}", eps));
        }
        self.smoothing = eps;
        Ok(self)
    }

    /// Rounded root r(u) of u^2 and dr/d(u^2).
    fn root(&self, u2: f64) -> (f64, f64) {
        let u2 = u2.max(0.0);
        let e = self.smoothing;
        if e == 0.0 {
            return (u2.sqrt(), 0.5 / (u2 + ROOT_FLOOR).sqrt());
        }
        let scale = (1.0 + e * e).sqrt() - e;
        let r = (u2 + e * e).sqrt();
        ((r - e) / scale, 0.5 / (r * scale))
    }

    fn target(&self) -> Result<&ComplexMatrix> {
        self.target.as_ref().ok_or_else(|| Error::InvalidArgument("fidelity term without a target".into()))
    }

    fn projector(&self) -> Result<&ComplexMatrix> {
        self.projector.as_ref().ok_or_else(|| Error::InvalidArgument("projection term without a projector".into()))
    }

    fn check_shape(&self, b: &ComplexMatrix, other: &ComplexMatrix) -> Result<()> {
        if (b.rows(), b.cols()) != (other.rows(), other.cols()) {
            return dim_err(format!(
                "block is {}x{} but reference matrix is {}x{}",
                b.rows(),
                b.cols(),
                other.rows(),
                other.cols()
            ));
        }
        Ok(())
    }

    /// F^2 and its block cotangent.
    fn fidelity_parts(&self, b: &ComplexMatrix) -> Result<(f64, ComplexMatrix)> {
        let w = self.target()?;
        self.check_shape(b, w)?;
        let a = inner(w, w).re;
        let bb = inner(b, b).re;
        if a == 0.0 || bb == 0.0 {
            return arg_err("fidelity with a zero matrix");
        }
        let tau = inner(w, b);
        let f2 = tau.norm_sqr() / (a * bb);
        let mut n = w.scale(tau * (2.0 / (a * bb)));
        n.axpy(c(-2.0 * tau.norm_sqr() / (a * bb * bb), 0.0), b);
        Ok((f2, n))
    }

    /// Contribution in [0, 1] before weighting, and its cotangent with
    /// respect to the block.
    pub fn score_and_cotangent(&self, b: &ComplexMatrix) -> Result<(f64, ComplexMatrix)> {
        let (s, n) = self.raw_score(b)?;
        // a block at its maximal norm can land a few ulps below zero
        Ok((if s < 0.0 && s > -ROUNDING_SLACK { 0.0 } else { s }, n))
    }

    fn raw_score(&self, b: &ComplexMatrix) -> Result<(f64, ComplexMatrix)> {
        match self.kind {
            TermKind::FidelitySq => self.fidelity_parts(b),
            TermKind::Infidelity => {
                let (f2, n) = self.fidelity_parts(b)?;
                let (r, dr) = self.root(1.0 - f2);
                Ok((1.0 - r, n.scale_re(dr)))
            }
            TermKind::DysonNormSq => {
                let s = inner(b, b).re;
                Ok((1.0 - s / self.normalization, b.scale_re(-2.0 / self.normalization)))
            }
            TermKind::DysonNormRoot => {
                let s = inner(b, b).re;
                let n2 = self.normalization * self.normalization;
                let (r, dr) = self.root(s / n2);
                Ok((1.0 - r, b.scale_re(-2.0 * dr / n2)))
            }
            TermKind::ProjectionSq => {
                let p = self.projector()?;
                self.check_shape(b, p)?;
                let tau = inner(p, b);
                Ok((1.0 - tau.norm_sqr() / self.normalization, p.scale(tau * (-2.0 / self.normalization))))
            }
        }
    }

    pub fn score(&self, b: &ComplexMatrix) -> Result<f64> {
        Ok(self.score_and_cotangent(b)?.0)
    }

    /// Normalized deviation from the ideal: 1 - F for FidelitySq,
    /// sqrt(1 - F^2) for Infidelity, |B| / max|B| for Dyson terms and
    /// |Tr(P^dagger B)| / max|B| for projections. Never smoothed.
    ///
    /// Norms are taken from the block itself rather than from 1 - score,
    /// which would round anything below ~1e-8 to zero.
    pub fn deviation(&self, b: &ComplexMatrix) -> Result<f64> {
        Ok(match self.kind {
            TermKind::FidelitySq => 1.0 - self.fidelity_parts(b)?.0.max(0.0).sqrt(),
            TermKind::Infidelity => (1.0 - self.fidelity_parts(b)?.0).max(0.0).sqrt(),
            TermKind::DysonNormSq => (inner(b, b).re / self.normalization).sqrt(),
            TermKind::DysonNormRoot => inner(b, b).re.sqrt() / self.normalization,
            TermKind::ProjectionSq => {
                let p = self.projector()?;
                self.check_shape(b, p)?;
                inner(p, b).norm() / self.normalization.sqrt()
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormStyle {
    Sq,
    Root,
}

/// Largest |D_U(A)| over all controls is T |A| for constant A.
pub fn dyson_normalization(a: &ComplexMatrix, t: f64, style: NormStyle) -> Result<f64> {
    dyson_normalization_weighted(a, t, 1.0, style)
}

/// Bound b_max T |A| used for control-weighted operators b(t) A with
/// |b| <= b_max.
pub fn dyson_normalization_weighted(a: &ComplexMatrix, t: f64, b_max: f64, style: NormStyle) -> Result<f64> {
    if !a.is_square() {
        return dim_err("normalization of a non-square operator");
    }
    if !(t > 0.0) || !(b_max > 0.0) {
        return arg_err("duration and amplitude bound must be positive");
    }
    let m = b_max * t * a.frob();
    Ok(match style {
        NormStyle::Sq => m * m,
        NormStyle::Root => m,
    })
}

pub fn projection_term_value(block: &ComplexMatrix, projector: &ComplexMatrix, normalization: f64) -> Result<f64> {
    if (block.rows(), block.cols()) != (projector.rows(), projector.cols()) {
        return dim_err("projector and block shapes differ");
    }
    Ok(inner(projector, block).norm_sqr() / normalization)
}

#[derive(Clone, Debug)]
pub struct EnsembleMember {
    pub label: String,
    /// Hardware map; `None` passes controls through unchanged.
    pub transfer: Option<TransferMap>,
    pub weight: f64,
    pub layout: VanLoanLayout,
    /// Overrides the shared terms when nonempty.
    pub terms: Vec<ObjectiveTerm>,
}

impl EnsembleMember {
    pub fn new(label: impl Into<String>, layout: VanLoanLayout, weight: f64) -> Self {
        EnsembleMember { label: label.into(), transfer: None, weight, layout, terms: Vec::new() }
    }

    pub fn with_transfer(mut self, map: TransferMap) -> Self {
        self.transfer = Some(map);
        self
    }

    pub fn with_terms(mut self, terms: Vec<ObjectiveTerm>) -> Self {
        self.terms = terms;
        self
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveSpec {
    members: Vec<EnsembleMember>,
    terms: Vec<ObjectiveTerm>,
    opt_transfer: Option<TransferMap>,
    /// Per member: the full map from optimization controls to that
    /// member's controls, if any.
    chains: Vec<Option<TransferMap>>,
    pub method: GradientMethod,
}

const SUM_TOL: f64 = 1e-9;

fn check_weights(terms: &[ObjectiveTerm]) -> Result<()> {
    let s: f64 = terms.iter().map(|t| t.weight).sum();
    if (s - 1.0).abs() > SUM_TOL {
        return arg_err(format!("term weights sum to {}, expected 1", s));
    }
    Ok(())
}

impl ObjectiveSpec {
    pub fn new(members: Vec<EnsembleMember>, terms: Vec<ObjectiveTerm>, opt_transfer: Option<TransferMap>) -> Result<Self> {
        if members.is_empty() {
            return arg_err("ensemble has no members");
        }
        let ws: f64 = members.iter().map(|m| m.weight).sum();
        if members.iter().any(|m| !(0.0..=1.0).contains(&m.weight)) || (ws - 1.0).abs() > SUM_TOL {
            return arg_err(format!("member weights must lie in [0, 1] and sum to 1, got {}", ws));
        }
        for m in &members {
            let t = if m.terms.is_empty() { &terms } else { &m.terms };
            if t.is_empty() {
                return arg_err(format!("member {:?} has no terms", m.label));
            }
            check_weights(t)?;
            for term in t {
                for (_, name) in &term.block.0 {
                    m.layout.entry(name)?;
                }
            }
        }
        let chains = members
            .iter()
            .map(|m| match (&m.transfer, &opt_transfer) {
                (None, None) => Ok(None),
                (Some(x), None) => Ok(Some(x.clone())),
                (None, Some(o)) => Ok(Some(o.clone())),
                (Some(x), Some(o)) => compose(x, o).map(Some),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ObjectiveSpec { members, terms, opt_transfer, chains, method: GradientMethod::default() })
    }

    pub fn with_method(mut self, method: GradientMethod) -> Self {
        self.method = method;
        self
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn terms(&self) -> &[ObjectiveTerm] {
        &self.terms
    }

    pub fn opt_transfer(&self) -> Option<&TransferMap> {
        self.opt_transfer.as_ref()
    }

    pub fn member_terms(&self, k: usize) -> &[ObjectiveTerm] {
        let m = &self.members[k];
        if m.terms.is_empty() {
            &self.terms
        } else {
            &m.terms
        }
    }

    /// Controls seen by member k.
    pub fn member_controls(&self, k: usize, alpha_opt: &ControlSequence) -> Result<ControlSequence> {
        match &self.chains[k] {
            None => Ok(alpha_opt.clone()),
            Some(map) => apply_two_channel(map, alpha_opt),
        }
    }

    /// Controls after the optimization map only.
    pub fn waveform(&self, alpha_opt: &ControlSequence) -> Result<ControlSequence> {
        match &self.opt_transfer {
            None => Ok(alpha_opt.clone()),
            Some(map) => apply_two_channel(map, alpha_opt),
        }
    }

    fn member_eval(&self, k: usize, alpha_opt: &ControlSequence, want_grad: bool) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
        let m = &self.members[k];
        let beta = self.member_controls(k, alpha_opt)?;
        let terms = self.member_terms(k);
        let layout = &m.layout;
        let cot = |v: &ComplexMatrix| -> Result<(f64, ComplexMatrix)> {
            let mut total = 0.0;
            let mut cm = ComplexMatrix::zeros(v.rows(), v.cols());
            for t in terms {
                let b = t.block.extract(layout, v)?;
                let (s, n) = t.score_and_cotangent(&b)?;
                total += t.weight * s;
                if want_grad && t.weight != 0.0 {
                    t.block.scatter(layout, &n.scale_re(t.weight), &mut cm)?;
                }
            }
            Ok((total, cm))
        };
        if !want_grad {
            let v = crate::propagate::propagate(layout, &beta)?;
            return Ok((cot(&v)?.0, None));
        }
        let (val, _, g) = propagate_adjoint(layout, &beta, self.method, cot)?;
        let g = match &self.chains[k] {
            None => g,
            Some(map) => pullback_two_channel(map, &g)?,
        };
        Ok((val, Some(g)))
    }

    /// Phi = sum_gamma p_gamma Phi_gamma.
    pub fn evaluate(&self, alpha_opt: &ControlSequence) -> Result<f64> {
        let vals: Vec<f64> = (0..self.members.len())
            .into_par_iter()
            .map(|k| self.member_eval(k, alpha_opt, false).map(|r| r.0))
            .collect::<Result<_>>()?;
        Ok(vals.iter().zip(&self.members).fold(0.0, |acc, (v, m)| acc + m.weight * v))
    }

    /// Phi and dPhi/d alpha_opt[channel][step].
    pub fn value_and_gradient(&self, alpha_opt: &ControlSequence) -> Result<(f64, Vec<Vec<f64>>)> {
        let parts: Vec<(f64, Option<Vec<Vec<f64>>>)> = (0..self.members.len())
            .into_par_iter()
            .map(|k| self.member_eval(k, alpha_opt, true))
            .collect::<Result<_>>()?;
        let mut phi = 0.0;
        let mut grad = vec![vec![0.0; alpha_opt.steps()]; alpha_opt.channels()];
        for ((v, g), m) in parts.into_iter().zip(&self.members) {
            phi += m.weight * v;
            let g = g.expect("gradient requested");
            if g.len() != grad.len() {
                return dim_err("member gradient has the wrong channel count");
            }
            for (acc, row) in grad.iter_mut().zip(&g) {
                for (a, x) in acc.iter_mut().zip(row) {
                    *a += m.weight * x;
                }
            }
        }
        Ok((phi, grad))
    }

    pub fn gradient(&self, alpha_opt: &ControlSequence) -> Result<Vec<Vec<f64>>> {
        Ok(self.value_and_gradient(alpha_opt)?.1)
    }

    /// Per member, per term: (score, deviation).
    pub fn term_report(&self, alpha_opt: &ControlSequence) -> Result<Vec<MemberReport>> {
        (0..self.members.len())
            .into_par_iter()
            .map(|k| {
                let m = &self.members[k];
                let beta = self.member_controls(k, alpha_opt)?;
                let v = crate::propagate::propagate(&m.layout, &beta)?;
                let terms = self
                    .member_terms(k)
                    .iter()
                    .map(|t| {
                        let b = t.block.extract(&m.layout, &v)?;
                        Ok(TermReport { kind: t.kind, weight: t.weight, score: t.score(&b)?, deviation: t.deviation(&b)? })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(MemberReport { label: m.label.clone(), weight: m.weight, terms })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TermReport {
    pub kind: TermKind,
    pub weight: f64,
    pub score: f64,
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemberReport {
    pub label: String,
    pub weight: f64,
    pub terms: Vec<TermReport>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockgen::{build_f1, direct_sum, DysonOperator, DysonSpec, GeneratorFamily};
    use crate::matcore::{expm, ops};
    use crate::oracle::finite_diff;
    use crate::transfer::{TransferKind, TransferMap};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn qubit() -> GeneratorFamily {
        let h = c(0.0, -0.5);
        GeneratorFamily::new(ComplexMatrix::zeros(2, 2), vec![ops::sigma_x().scale(h), ops::sigma_y().scale(h)]).unwrap()
    }

    fn pair() -> GeneratorFamily {
        let h = c(0.0, -0.5);
        GeneratorFamily::new(
            ComplexMatrix::zeros(4, 4),
            vec![ops::collective(&ops::sigma_x()).scale(h), ops::collective(&ops::sigma_y()).scale(h)],
        )
        .unwrap()
    }

    fn dipolar_spec(t: f64) -> ObjectiveSpec {
        let d = ops::dipolar();
        let layout = build_f1(&pair(), &DysonSpec::one(vec![d.clone().into()]).unwrap()).unwrap();
        let norm = dyson_normalization(&d, t, NormStyle::Sq).unwrap();
        let term = ObjectiveTerm::dyson_sq(BlockRef::single("D"), norm, 1.0).unwrap();
        ObjectiveSpec::new(vec![EnsembleMember::new("one", layout, 1.0)], vec![term], None).unwrap()
    }

    fn random_cs(rng: &mut ChaCha8Rng, steps: usize, t: f64) -> ControlSequence {
        let a = (0..2).map(|_| (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        ControlSequence::uniform(a, t).unwrap()
    }

    /// Two members behind random transfer maps, with mixed term kinds.
    fn mixed_spec(rng: &mut ChaCha8Rng, steps: usize, t: f64, opt: bool) -> ObjectiveSpec {
        let fam = qubit();
        let z = ops::sigma_z();
        let spec = DysonSpec::one(vec![z.clone().into(), ops::raising().into()]).unwrap();
        let l1 = build_f1(&fam, &spec).unwrap().with_label("q");
        let l2 = build_f1(&pair(), &DysonSpec::one(vec![ops::dipolar().into()]).unwrap()).unwrap().with_label("p");
        let layout = direct_sum(&[l1, l2]).unwrap();
        let target = expm(&ops::sigma_x().scale(c(0.0, -0.3)));
        let terms = vec![
            ObjectiveTerm::fidelity_sq(BlockRef::single("q/U[1]"), target.clone(), 0.1).unwrap(),
            ObjectiveTerm::infidelity(BlockRef::single("q/U[1]"), target, 0.2).unwrap(),
            ObjectiveTerm::dyson_sq(BlockRef::single("q/D[1..1]"), 2.0 * t * t, 0.2).unwrap(),
            ObjectiveTerm::dyson_root(BlockRef::single("p/D"), 24f64.sqrt() * t, 0.2).unwrap(),
            ObjectiveTerm::projection_sq(BlockRef::single("q/D[2..2]"), ops::sigma_z(), t * t, 0.1).unwrap(),
            ObjectiveTerm::dyson_sq(
                BlockRef::combo(vec![(c(0.5, 0.2), "q/D[1..1]".to_string()), (c(-0.3, 0.0), "q/D[2..2]".to_string())]),
                t * t,
                0.2,
            )
            .unwrap(),
        ];
        let n_in = if opt { steps - 2 } else { steps };
        let opt_map = opt.then(|| {
            crate::transfer::compose(
                &crate::transfer::zero_pad(steps, 1).unwrap(),
                &TransferMap::new(
                    ComplexMatrix::from_fn(n_in, n_in, |_, _| c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))),
                    TransferKind::Bandpass,
                ),
            )
            .unwrap()
        });
        let members = (0..2)
            .map(|k| {
                let x = ComplexMatrix::from_fn(steps, steps, |i, j| {
                    let d = if i == j { 1.0 } else { 0.0 };
                    c(d + rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2))
                });
                EnsembleMember::new(format!("m{}", k), layout.clone(), [0.3, 0.7][k])
                    .with_transfer(TransferMap::new(x, TransferKind::Experimental))
            })
            .collect();
        ObjectiveSpec::new(members, terms, opt_map).unwrap()
    }

    #[test]
    fn normalization_constants() {
        assert!((dyson_normalization(&ops::sigma_z(), 3.0, NormStyle::Sq).unwrap() - 18.0).abs() < 1e-12);
        assert!((dyson_normalization(&ops::dipolar(), 2.0, NormStyle::Sq).unwrap() - 96.0).abs() < 1e-12);
        assert!((dyson_normalization(&ComplexMatrix::identity(3), 2.0, NormStyle::Sq).unwrap() - 12.0).abs() < 1e-12);
        assert!((dyson_normalization(&ops::sigma_z(), 3.0, NormStyle::Root).unwrap() - 3.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!(dyson_normalization(&ops::sigma_z(), 0.0, NormStyle::Sq).is_err());
    }

    #[test]
    fn projection_values() {
        let sp = ops::raising().scale(c(0.7, -0.2));
        assert_eq!(projection_term_value(&sp, &ops::sigma_z(), 1.0).unwrap(), 0.0);
        assert_eq!(projection_term_value(&ComplexMatrix::zeros(2, 2), &ops::lowering(), 1.0).unwrap(), 0.0);
        // Tr(sigma_-^dagger sigma_+) vanishes; sigma_+ against itself does not
        let k = c(0.7, -0.2);
        assert_eq!(projection_term_value(&sp, &ops::lowering(), 3.0).unwrap(), 0.0);
        let v = projection_term_value(&sp, &ops::raising(), 3.0).unwrap();
        assert!((v - k.norm_sqr() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_fidelity_is_one() {
        let layout = VanLoanLayout::from_family(&qubit());
        let cs = ControlSequence::uniform(vec![vec![0.3, -0.4], vec![0.2, 0.9]], 1.0).unwrap();
        let u = crate::propagate::propagate(&layout, &cs).unwrap();
        let term = ObjectiveTerm::fidelity_sq(BlockRef::single("U[1]"), u, 1.0).unwrap();
        let spec = ObjectiveSpec::new(vec![EnsembleMember::new("a", layout, 1.0)], vec![term], None).unwrap();
        assert!((spec.evaluate(&cs).unwrap() - 1.0).abs() < 1e-14);
        let g = spec.gradient(&cs).unwrap();
        assert!(g.iter().flatten().all(|x| x.abs() < 1e-8));
    }

    #[test]
    fn dipolar_zero_controls() {
        let t = 2.5;
        let spec = dipolar_spec(t);
        assert!(spec.evaluate(&ControlSequence::zeros(2, 10, t).unwrap()).unwrap().abs() < 1e-13);
    }

    #[test]
    fn missing_block_is_rejected() {
        let layout = VanLoanLayout::from_family(&qubit());
        let term = ObjectiveTerm::dyson_sq(BlockRef::single("D"), 1.0, 1.0).unwrap();
        let err = ObjectiveSpec::new(vec![EnsembleMember::new("a", layout, 1.0)], vec![term], None).unwrap_err();
        assert!(matches!(err, Error::UnknownName(_)));
    }

    #[test]
    fn deviation_resolves_tiny_blocks() {
        let b = ops::sigma_z().scale_re(1e-11);
        let sq = ObjectiveTerm::dyson_sq(BlockRef::single("D"), 4.0, 1.0).unwrap();
        let root = ObjectiveTerm::dyson_root(BlockRef::single("D"), 2.0, 1.0).unwrap();
        let proj = ObjectiveTerm::projection_sq(BlockRef::single("D"), ops::sigma_z(), 4.0, 1.0).unwrap();
        // |b| = sqrt 2 e-11, maximal norm 2
        let want = 2f64.sqrt() * 1e-11 / 2.0;
        for t in [&sq, &root] {
            assert!((t.deviation(&b).unwrap() / want - 1.0).abs() < 1e-12);
        }
        assert!((proj.deviation(&b).unwrap() / 1e-11 - 1.0).abs() < 1e-12);
        assert_eq!(sq.score(&b).unwrap(), 1.0);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let layout = VanLoanLayout::from_family(&qubit());
        let t = ObjectiveTerm::fidelity_sq(BlockRef::single("U[1]"), ComplexMatrix::identity(2), 0.5).unwrap();
        assert!(ObjectiveSpec::new(vec![EnsembleMember::new("a", layout.clone(), 1.0)], vec![t.clone()], None).is_err());
        let t = t.clone();
        let t1 = ObjectiveTerm { weight: 1.0, ..t };
        assert!(ObjectiveSpec::new(vec![EnsembleMember::new("a", layout, 0.5)], vec![t1], None).is_err());
        assert!(ObjectiveTerm::dyson_sq(BlockRef::single("D"), 0.0, 1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for opt in [false, true] {
            let (steps, t) = (8, 2.0);
            let spec = mixed_spec(&mut rng, steps, t, opt);
            let n_in = if opt { steps - 2 } else { steps };
            let dt = t / steps as f64;
            let cs = ControlSequence::new(
                (0..2).map(|_| (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
                vec![dt; n_in],
            )
            .unwrap();
            let (phi, g) = spec.value_and_gradient(&cs).unwrap();
            assert!((phi - spec.evaluate(&cs).unwrap()).abs() < 1e-14);
            let fd = finite_diff(|x| spec.evaluate(x), &cs, 1e-6).unwrap();
            let num: f64 = g.iter().flatten().zip(fd.iter().flatten()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
            assert!(num / den < 1e-6, "relative error {}", num / den);
        }
    }

    #[test]
    fn identity_transfer_matches_none() {
        let t = 3.0;
        let spec = dipolar_spec(t);
        let m = spec.members()[0].clone().with_transfer(TransferMap::identity(12));
        let spec2 = ObjectiveSpec::new(vec![m], spec.terms().to_vec(), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let cs = random_cs(&mut rng, 12, t);
        assert_eq!(spec.value_and_gradient(&cs).unwrap(), spec2.value_and_gradient(&cs).unwrap());
    }

    #[test]
    fn ensemble_is_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let spec = mixed_spec(&mut rng, 6, 1.5, false);
        let cs = random_cs(&mut rng, 6, 1.5);
        let total = spec.evaluate(&cs).unwrap();
        let mut parts = 0.0;
        for m in spec.members() {
            let single = ObjectiveSpec::new(vec![EnsembleMember { weight: 1.0, ..m.clone() }], spec.terms().to_vec(), None).unwrap();
            parts += m.weight * single.evaluate(&cs).unwrap();
        }
        assert!((total - parts).abs() < 1e-13);
    }

    #[test]
    fn dyson_sq_gradient_formula() {
        // dPhi = -2/norm Re Tr[B^dagger dB] with dB from the full derivative
        let t = 2.0;
        let spec = dipolar_spec(t);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let cs = random_cs(&mut rng, 6, t);
        let layout = &spec.members()[0].layout;
        let res = crate::propagate::propagate_with_gradients(layout, &cs, GradientMethod::default()).unwrap();
        let b = layout.block(&res.final_propagator, "D").unwrap();
        let grads = res.gradients.unwrap();
        let g = spec.gradient(&cs).unwrap();
        let norm = spec.terms()[0].normalization;
        for ch in 0..2 {
            for s in 0..6 {
                let db = layout.block(&grads[ch][s], "D").unwrap();
                let expect = -2.0 / norm * inner(&b, &db).re;
                assert!((g[ch][s] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn control_weighted_normalization() {
        let fam = qubit();
        let op = DysonOperator::ControlWeighted { channel: 0, matrix: ops::sigma_x() };
        let layout = build_f1(&fam, &DysonSpec::one(vec![op]).unwrap()).unwrap();
        let t = 1.7;
        let norm = dyson_normalization_weighted(&ops::sigma_x(), t, 1.0, NormStyle::Sq).unwrap();
        let cs = ControlSequence::uniform(vec![vec![1.0; 4], vec![0.0; 4]], t).unwrap();
        // constant a_x = 1 commutes with sigma_x and reaches the bound
        let v = crate::propagate::propagate(&layout, &cs).unwrap();
        let b = layout.block(&v, "D").unwrap();
        assert!((inner(&b, &b).re - norm).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn phi_stays_in_unit_interval(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = mixed_spec(&mut rng, 6, 1.5, false);
            let cs = random_cs(&mut rng, 6, 1.5);
            let phi = spec.evaluate(&cs).unwrap();
            prop_assert!((0.0..=1.0).contains(&phi), "phi {}", phi);
        }

        #[test]
        fn dipolar_phi_in_unit_interval(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = dipolar_spec(2.0);
            let phi = spec.evaluate(&random_cs(&mut rng, 10, 2.0)).unwrap();
            prop_assert!((0.0..=1.0).contains(&phi));
        }
    }
}
