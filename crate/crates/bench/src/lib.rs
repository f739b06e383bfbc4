//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vanloan::{build_f1, c, ComplexMatrix, ControlSequence, DysonOperator, DysonSpec, GeneratorFamily, VanLoanLayout};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random anti-Hermitian matrix with Frobenius norm `norm`.
pub fn anti_hermitian(rng: &mut ChaCha8Rng, n: usize, norm: f64) -> ComplexMatrix {
    let h = ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let a = h.sub(&h.adjoint());
    a.scale_re(norm / a.frob())
}

/// Two-channel family on dimension `n` with an order-`order` unit-weight term,
/// and a random piecewise-constant sequence of `steps` steps.
pub fn chain(n: usize, order: usize, steps: usize, seed: u64) -> (VanLoanLayout, ControlSequence) {
    let mut r = rng(seed);
    let fam = GeneratorFamily::new(anti_hermitian(&mut r, n, 2.0), vec![anti_hermitian(&mut r, n, 1.0), anti_hermitian(&mut r, n, 1.0)])
        .expect("square generators");
    let ops: Vec<DysonOperator> = (0..order).map(|_| anti_hermitian(&mut r, n, 1.0).into()).collect();
    let layout = build_f1(&fam, &DysonSpec::one(ops).expect("nonempty")).expect("unit weight");
    let amps = (0..2).map(|_| (0..steps).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    (layout, ControlSequence::uniform(amps, 1.0).expect("positive time"))
}
