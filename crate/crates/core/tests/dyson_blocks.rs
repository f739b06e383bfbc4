use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vanloan::blockgen::explicit_blocks;
use vanloan::oracle::{nested_quadrature, nested_quadrature_at, QuadratureConfig};
use vanloan::propagate::{propagate, propagate_to};
use vanloan::*;

fn anti_hermitian(rng: &mut ChaCha8Rng, n: usize, norm: f64) -> ComplexMatrix {
    let h = ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let a = h.sub(&h.adjoint());
    a.scale_re(norm / a.frob())
}

fn general(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn setup(rng: &mut ChaCha8Rng, n: usize, steps: usize, t: f64) -> (GeneratorFamily, ControlSequence) {
    let dt = t / steps as f64;
    let fam = GeneratorFamily::new(
        anti_hermitian(rng, n, 0.4 / dt),
        vec![anti_hermitian(rng, n, 0.3 / dt), anti_hermitian(rng, n, 0.3 / dt)],
    )
    .unwrap();
    let amps = (0..2).map(|_| (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    (fam, ControlSequence::uniform(amps, t).unwrap())
}

#[test]
fn f1_blocks_match_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cfg = QuadratureConfig::default();
    for m in 1..=3 {
        let (fam, cs) = setup(&mut rng, 2, 3, 1.0);
        let mut ops: Vec<DysonOperator> = (0..m).map(|_| general(&mut rng, 2).into()).collect();
        ops[0] = DysonOperator::ControlWeighted { channel: 1, matrix: general(&mut rng, 2) };
        let layout = build_f1(&fam, &DysonSpec::one(ops.clone()).unwrap()).unwrap();
        let v = propagate(&layout, &cs).unwrap();
        for i in 1..=m {
            for j in i..=m {
                let q = nested_quadrature(&fam, &cs, &ops[i - 1..j], &|_| c(1.0, 0.0), &cfg).unwrap();
                let b = layout.block(&v, &format!("D[{}..{}]", i, j)).unwrap();
                assert!(b.max_abs_diff(&q) < 1e-8, "m {} D[{}..{}] err {}", m, i, j, b.max_abs_diff(&q));
            }
        }
    }
}

#[test]
fn scalar_integrand_second_order() {
    // commuting G with A_1 = A_2 = I: t^2/2 e^{Gt}
    let g = ComplexMatrix::diag(&[c(0.0, -0.7), c(0.0, 0.7)]);
    let fam = GeneratorFamily::new(g.clone(), vec![ComplexMatrix::zeros(2, 2)]).unwrap();
    let id: DysonOperator = ComplexMatrix::identity(2).into();
    let layout = build_f1(&fam, &DysonSpec::one(vec![id.clone(), id]).unwrap()).unwrap();
    let t = 1.3;
    let v = propagate(&layout, &ControlSequence::zeros(1, 1, t).unwrap()).unwrap();
    let expect = expm(&g.scale_re(t)).scale_re(t * t / 2.0);
    assert!(layout.block(&v, "D").unwrap().max_abs_diff(&expect) < 1e-14);
}

#[test]
fn expsum_blocks_match_weighted_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let cfg = QuadratureConfig::default();
    for _ in 0..3 {
        let t = 1.0;
        let (fam, cs) = setup(&mut rng, 2, 4, t);
        let d: Vec<Complex64> = (0..2).map(|_| c(rng.gen_range(-3.0..0.5), rng.gen_range(-3.0..3.0))).collect();
        let ops: Vec<DysonOperator> = (0..2).map(|_| general(&mut rng, 2).into()).collect();
        let layout = build_expsum(&fam, &DysonSpec::new(ops.clone(), ScalarWeight::ExpSum(d.clone())).unwrap()).unwrap();
        let v = propagate(&layout, &cs).unwrap();
        let w = |ts: &[f64]| (d[0] * ts[0] + d[1] * ts[1]).exp();
        let q = nested_quadrature(&fam, &cs, &ops, &w, &cfg).unwrap();
        assert!(layout.block(&v, "D").unwrap().max_abs_diff(&q) < 1e-8);
        // interior block (2,3) = e^{d1 t} D_U(e^{d2 t} A_2)
        let e = layout.entry("D[2..2]").unwrap();
        let raw = layout.block_at(&v, e.row, e.col);
        let inner = nested_quadrature(&fam, &cs, &ops[1..], &|ts: &[f64]| (d[1] * ts[0]).exp(), &cfg).unwrap();
        let pf = (e.post_factor.unwrap() * t).exp();
        assert!(raw.max_abs_diff(&inner.scale(pf)) < 1e-8);
        // diagonal blocks differ only by the scalar shift factor
        let u = layout.block_at(&v, 0, 0);
        let u3 = layout.block_at(&v, 2, 2);
        assert!(u3.max_abs_diff(&u.scale(((d[0] + d[1]) * t).exp())) < 1e-10);
    }
}

#[test]
fn poly_grid_matches_monomial_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let cfg = QuadratureConfig::default();
    let (s1, s2) = (1, 1);
    let (fam, cs) = setup(&mut rng, 2, 3, 1.0);
    let a1: DysonOperator = general(&mut rng, 2).into();
    let a2: DysonOperator = general(&mut rng, 2).into();
    let layout = build_poly(&fam, &a1, &a2, s1, s2).unwrap();
    let v = propagate(&layout, &cs).unwrap();
    let d = |i: i32, j: i32| {
        nested_quadrature(&fam, &cs, &[a1.clone(), a2.clone()], &move |ts: &[f64]| c(ts[0].powi(i) * ts[1].powi(j), 0.0), &cfg)
            .unwrap()
    };
    let nb = layout.block_count();
    let blk = |r: usize, cc: usize| layout.block_at(&v, r, cc);
    // top 2x2 of the top-right grid
    assert!(blk(0, nb - 2).max_abs_diff(&d(0, 1).add(&d(1, 0))) < 1e-8);
    assert!(blk(0, nb - 1).max_abs_diff(&d(1, 1)) < 1e-8);
    assert!(blk(1, nb - 2).max_abs_diff(&d(0, 0)) < 1e-8);
    assert!(blk(1, nb - 1).max_abs_diff(&d(0, 1)) < 1e-8);
}

#[test]
fn poly_blocks_satisfy_coupled_system() {
    // x_j' = j x_{j-1} + G x_j etc., checked on the last block column
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (s1, s2) = (2, 1);
    let g = anti_hermitian(&mut rng, 2, 1.0);
    let fam = GeneratorFamily::new(g.clone(), vec![ComplexMatrix::zeros(2, 2)]).unwrap();
    let a1 = general(&mut rng, 2);
    let a2 = general(&mut rng, 2);
    let layout = build_poly(&fam, &a1.clone().into(), &a2.clone().into(), s1, s2).unwrap();
    let cs = ControlSequence::zeros(1, 1, 2.0).unwrap();
    let nb = layout.block_count();
    let col = |t: f64| {
        let v = propagate_to(&layout, &cs, t).unwrap();
        (0..nb).map(|r| layout.block_at(&v, r, nb - 1)).collect::<Vec<_>>()
    };
    let z = |p: usize| p; // z_{s1-p}
    let y = |j: usize| s1 + 1 + (s1 - j);
    let x = |j: usize| 2 * s1 + 2 + (s1 + s2 - j);
    let t = 1.1;
    let mut prev = f64::NAN;
    for h in [1e-2, 5e-3] {
        let (plus, minus, mid) = (col(t + h), col(t - h), col(t));
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
            let rz = a1.dot(&mid[y(j)]).add(&g.dot(&mid[z(s1 - j)]));
            worst = worst.max(deriv(z(s1 - j)).max_abs_diff(&rz));
        }
        if prev.is_finite() {
            let order = (prev / worst).log2();
            assert!(order > 1.8, "observed order {}", order);
        }
        prev = worst;
    }
}

#[test]
fn theorem1_three_forms_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let n = 2;
    let nb = 4;
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
    let layout = VanLoanLayout::from_generators(n, drift, vec![ctrl]).unwrap();
    let cs = ControlSequence::uniform(vec![vec![0.4, -0.8, 0.1]], 1.2).unwrap();
    let cfg = QuadratureConfig { nodes_per_step: 10, tol: 1e-9 };
    let table = explicit_blocks(&layout, 1.2, &cs, &cfg).unwrap();
    assert_eq!(table.len(), 10);
    for e in &table {
        assert!(e.propagated.max_abs_diff(&e.explicit) < 1e-8, "({},{}) {}", e.row, e.col, e.propagated.max_abs_diff(&e.explicit));
        assert!(e.propagated.max_abs_diff(&e.recursive) < 1e-8);
    }
}

#[test]
fn theorem1_vanishing_direct_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (fam, cs) = setup(&mut rng, 2, 2, 1.0);
    let ops: Vec<DysonOperator> = vec![general(&mut rng, 2).into(), general(&mut rng, 2).into()];
    let layout = build_f1(&fam, &DysonSpec::one(ops.clone()).unwrap()).unwrap();
    let table = explicit_blocks(&layout, 1.0, &cs, &QuadratureConfig::default()).unwrap();
    let top = table.iter().find(|e| e.row == 0 && e.col == 2).unwrap();
    let q = nested_quadrature_at(&fam, &cs, &ops, &|_| c(1.0, 0.0), 1.0, &QuadratureConfig::default()).unwrap();
    assert!(top.propagated.max_abs_diff(&q) < 1e-8);
    for e in table.iter().filter(|e| e.row == e.col) {
        assert!(e.propagated.max_abs_diff(&propagate(&VanLoanLayout::from_family(&fam), &cs).unwrap()) < 1e-12);
    }
}
