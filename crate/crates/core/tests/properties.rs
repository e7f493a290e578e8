use std::f64::consts::PI;
use std::sync::Arc;

use eigenmatch::catalog::default_system;
use eigenmatch::dictlearn::{kstep, loss_and_gradient, similarity_step, MlpDictionary, Moments, SimilarityOptions};
use eigenmatch::domain::{Domain, SampleBox};
use eigenmatch::dynsys::{flow, sample_pairs_with, IntegratorOptions};
use eigenmatch::edmd::{
    left_eigens, pair_spectra, project_generator, Closure, Dictionary, KoopmanMatrix, MonomialDictionary,
    SpectralDecomposition,
};
use eigenmatch::edmdm::{align, compute_d, edmdm_pipeline, h_matrix, EdmdmOptions, MatchingPoint};
use eigenmatch::keig::{catalog_eigenstack, keig_residual, stack_system, Eigenfunction, Provenance, StackSpec};
use eigenmatch::matching::{build_match, MatchOptions};
use eigenmatch::par::Exec;
use eigenmatch::Complex64;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn generator(id: &str, dict: &MonomialDictionary, closure: Closure) -> KoopmanMatrix {
    project_generator(&default_system(id).unwrap(), dict, closure).unwrap()
}

fn ex5() -> (KoopmanMatrix, KoopmanMatrix, MonomialDictionary) {
    let lin = MonomialDictionary::linear(2);
    (generator("ex5a", &lin, Closure::Strict), generator("ex5b", &lin, Closure::Strict), lin)
}

fn ex6() -> (KoopmanMatrix, KoopmanMatrix, MonomialDictionary) {
    let dict = MonomialDictionary::multinomial(2, 5).unwrap();
    (generator("quad2d", &dict, Closure::Truncate), generator("lindiag", &dict, Closure::Strict), dict)
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn flow_semigroup(x1 in -0.8..0.8f64, x2 in -0.8..0.8f64, t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let sys = default_system("vdp").unwrap();
        let o = IntegratorOptions::default();
        let a = flow(&sys, &flow(&sys, &[x1, x2], t1, o).unwrap(), t2, o).unwrap();
        let b = flow(&sys, &[x1, x2], t1 + t2, o).unwrap();
        for i in 0..2 {
            prop_assert!((a[i] - b[i]).abs() <= 1e-8 * (1.0 + b[i].abs()), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn eigenfunctions_follow_the_flow(
        which in 0usize..5,
        u in 0.0..1.0f64,
        v in 0.0..1.0f64,
        long in any::<bool>(),
    ) {
        let (spec, lo, hi) = [
            (StackSpec::new("lindiag"), [-1.0, -1.0], [1.0, 1.0]),
            (StackSpec::new("quad2d"), [-0.5, -0.5], [0.5, 0.5]),
            (StackSpec::new("ex5a"), [-1.0, -1.0], [1.0, 1.0]),
            (StackSpec::new("ex5b"), [-1.0, -1.0], [1.0, 1.0]),
            (StackSpec::new("appB1"), [0.8, 0.8], [1.2, 1.2]),
        ][which].clone();
        let x = vec![lo[0] + u * (hi[0] - lo[0]), lo[1] + v * (hi[1] - lo[1])];
        let t = if long { 0.5 } else { 0.1 };
        let sys = stack_system(&spec).unwrap();
        let Ok(y) = flow(&sys, &x, t, IntegratorOptions::default()) else {
            return Err(TestCaseError::reject("left the domain"));
        };
        for g in catalog_eigenstack(&spec).unwrap().entries {
            let (Ok(gx), Ok(gy)) = (g.eval(&x), g.eval(&y)) else { continue };
            let want = (g.lambda * t).exp() * gx;
            prop_assert!((gy - want).norm() <= 1e-6 * (1.0 + want.norm()), "{}: {gy} vs {want}", spec.system);
        }
    }

    #[test]
    fn scalar_multiples_stay_eigenfunctions(re in -3.0..3.0f64, im in -3.0..3.0f64) {
        let c = Complex64::new(re, im);
        prop_assume!(c.norm() > 1e-3);
        let spec = StackSpec::new("quad2d");
        let sys = stack_system(&spec).unwrap();
        let pts = SampleBox::cube(2, -0.9, 0.9).grid(6);
        for g in catalog_eigenstack(&spec).unwrap().entries {
            let r = keig_residual(&sys, &g.scaled(c), &pts).unwrap();
            prop_assert!(r <= 1e-6 * c.norm().max(1.0), "residual {r:e}");
        }
    }

    #[test]
    fn matching_point_is_reproduced(a in -2.0..2.0f64, b in -2.0..2.0f64) {
        prop_assume!((a + b).abs() > 0.1 && (a - b).abs() > 0.1);
        let (k1, k2, lin) = ex5();
        // The swap field is conjugate to the diagonal one by (a, b) ↦ (a + b, a − b).
        let mp = MatchingPoint { z1: vec![a, b], z2: vec![a + b, a - b] };
        let r = edmdm_pipeline(&k1, &k2, Arc::new(lin), &mp, &EdmdmOptions::default()).unwrap();
        let y = r.h.apply(&mp.z1).unwrap();
        for i in 0..2 {
            prop_assert!((y[i] - mp.z2[i]).abs() <= 1e-8);
        }
    }

    #[test]
    fn h_ignores_eigenvector_scaling(scales in prop::collection::vec((0.2..5.0f64, -PI..PI), 40)) {
        let (k1, k2, dict) = ex6();
        let mut s1 = left_eigens(&k1).unwrap();
        let mut s2 = left_eigens(&k2).unwrap();
        let perm = pair_spectra(&s1, &s2, 1e-8).unwrap();
        let mp = MatchingPoint { z1: vec![0.5, 0.5], z2: vec![0.25, 0.4375] };
        let b = dict.selector().unwrap();
        let h = |s1: &SpectralDecomposition, s2: &SpectralDecomposition| {
            let (d, _) = compute_d(s1, s2, &perm, &dict, &mp, 1e-10).unwrap();
            h_matrix(&b, &s1.left_vectors, &align(s2, &perm), &d, 1e12).unwrap().0
        };
        let before = h(&s1, &s2);
        let n = s1.n();
        for (j, (m, phase)) in scales.iter().take(2 * n).enumerate() {
            let c = Complex64::from_polar(*m, *phase);
            let s = if j < n { &mut s1 } else { &mut s2 };
            let mut row = s.left_vectors.row_mut(j % n);
            row *= c;
        }
        let after = h(&s1, &s2);
        let err = (&after - &before).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-8 * (1.0 + before.iter().map(|z| z.norm()).fold(0.0, f64::max)), "{err:e}");
    }

    #[test]
    fn similarity_step_does_not_increase_residual(seed in 0u64..1000, beta in 1.0..200.0f64) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let k1 = DMatrix::from_fn(3, 3, |_, _| rand::Rng::random::<f64>(&mut rng) - 0.5);
        let q = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 } + 0.3 * (rand::Rng::random::<f64>(&mut rng) - 0.5));
        let k2 = &q * &k1 * q.clone().try_inverse().unwrap();
        let px = DMatrix::from_fn(3, 40, |_, _| rand::Rng::random::<f64>(&mut rng) - 0.5);
        let m1 = Moments::from_features(&px, &(&k1 * &px));
        let m2 = Moments::from_features(&px, &(&k2 * &px));
        let s = similarity_step(&k1, &k2, &m1, &m2, beta, seed, &SimilarityOptions::default()).unwrap();
        prop_assert!(s.state.objective <= s.state.initial_objective * (1.0 + 1e-12));
        prop_assert!(s.state.residual <= s.state.initial_residual * (1.0 + 1e-12));
        prop_assert!(s.state.p.norm_squared() >= 1.0 - 1e-12);
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn schedule_does_not_change_results(seed in 0u64..10_000) {
        let sys = default_system("vdp").unwrap();
        let bx = SampleBox::cube(2, -0.5, 0.5);
        let o = IntegratorOptions::default();
        let a = sample_pairs_with(Exec::Parallel, &sys, &bx, 80, 0.1, seed, o).unwrap();
        let b = sample_pairs_with(Exec::Sequential, &sys, &bx, 80, 0.1, seed, o).unwrap();
        prop_assert_eq!(&a.x, &b.x);
        prop_assert_eq!(&a.x_next, &b.x_next);
        let dict = MlpDictionary::new(16, seed).unwrap();
        let k = kstep(&dict, &a, 1e-8).unwrap().k;
        let (ja, ga) = loss_and_gradient(Exec::Parallel, &dict, &k, &k, &a, &b).unwrap();
        let (jb, gb) = loss_and_gradient(Exec::Sequential, &dict, &k, &k, &a, &b).unwrap();
        prop_assert_eq!(ja.to_bits(), jb.to_bits());
        prop_assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn pulled_back_eigenfunctions_are_eigenfunctions(a in -2.0..2.0f64, b in -2.0..2.0f64) {
        prop_assume!((a + b).abs() > 0.1 && (a - b).abs() > 0.1);
        let (k1, k2, lin) = ex5();
        let mp = MatchingPoint { z1: vec![a, b], z2: vec![a + b, a - b] };
        let r = Arc::new(edmdm_pipeline(&k1, &k2, Arc::new(lin.clone()), &mp, &EdmdmOptions::default()).unwrap());
        let s2 = left_eigens(&k2).unwrap();
        let sys1 = default_system("ex5a").unwrap();
        let pts = SampleBox::cube(2, -1.0, 1.0).grid(5);
        for j in 0..s2.n() {
            let (r, s2c, lin) = (r.clone(), s2.clone(), lin.clone());
            let g = Eigenfunction::new(s2.eigenvalues[j], Domain::All, Provenance::ClosedForm, move |x| {
                Ok(s2c.eigenfunction_value(j, &lin.eval(&r.h.apply(x)?)))
            });
            let res = keig_residual(&sys1, &g, &pts).unwrap();
            prop_assert!(res <= 1e-6, "mode {j}: {res:e}");
        }
    }

    #[test]
    fn matched_maps_are_honest_on_their_domain(u in 0.0..1.0f64, v in 0.0..1.0f64) {
        let g1 = catalog_eigenstack(&StackSpec::new("quad2d")).unwrap();
        let g2 = catalog_eigenstack(&StackSpec::new("lindiag")).unwrap();
        let h = build_match(&g1, &g2, &MatchOptions::default()).unwrap();
        let x = [-1.0 + 2.0 * u, -1.0 + 2.0 * v];
        if let Ok(y) = h.apply(&x) {
            let (a, b) = (g1.eval(&x).unwrap(), g2.eval(&y).unwrap());
            let gap = a.iter().zip(&b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            prop_assert!(gap <= 1e-9, "{gap:e}");
            let back = h.apply_inverse(&y).unwrap();
            prop_assert!((back[0] - x[0]).abs() <= 1e-8 && (back[1] - x[1]).abs() <= 1e-8);
        }
    }
}
