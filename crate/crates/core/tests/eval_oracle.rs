//! Evaluation machinery vs brute-force oracles: pairwise Mann-Whitney AUC,
//! exhaustive threshold sweeps, direct-summation norms.

use fakebench_core::eval::{norms, roc, tpr_at_fpr};
use fakebench_core::models::calibrate_tau;
use fakebench_core::tensor::Tensor;
use fakebench_refimpl as refimpl;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scores(rng: &mut ChaCha8Rng, n: usize, grid: Option<u32>) -> Vec<f32> {
    (0..n)
        .map(|_| match grid {
            // coarse grid forces ties
            Some(g) => (rng.gen_range(0..g) as f32) / g as f32,
            None => rng.gen_range(-2.0..2.0),
        })
        .collect()
}

#[test]
fn auc_equals_pairwise_count_on_100_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let n_real = rng.gen_range(2..25);
        let n_fake = rng.gen_range(2..25);
        let grid = if case % 2 == 0 { Some(7) } else { None };
        let real = random_scores(&mut rng, n_real, grid);
        let fake = random_scores(&mut rng, n_fake, grid);
        let report = roc(&real, &fake).unwrap();
        let oracle = refimpl::auc_pairwise(&real, &fake);
        assert!(
            (report.auc - oracle).abs() < 1e-9,
            "case {case}: trapezoid {} vs pairwise {}",
            report.auc,
            oracle
        );
    }
}

#[test]
fn tpr_at_fpr_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let real = random_scores(&mut rng, 17, Some(9));
        let fake = random_scores(&mut rng, 13, Some(9));
        let report = roc(&real, &fake).unwrap();
        for target in [0.0, 0.05, 0.1, 0.33, 0.5, 1.0] {
            let got = tpr_at_fpr(&report, target);
            let want = refimpl::tpr_at_fpr_exhaustive(&real, &fake, target);
            assert!(
                (got - want).abs() < 1e-12,
                "target {target}: sweep {got} vs exhaustive {want}"
            );
        }
    }
}

#[test]
fn tau_matches_exhaustive_sweep_on_seeded_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let scores = random_scores(&mut rng, 20, Some(6));
    let tau = calibrate_tau(&scores, 0.10, "t").unwrap();
    let oracle = refimpl::calibrate_tau_exhaustive(&scores, 0.10);
    assert_eq!(tau.value, oracle);
    // and across many random draws
    for _ in 0..50 {
        let n = rng.gen_range(5..60);
        let grid = if rng.gen_bool(0.5) { Some(5) } else { None };
        let scores = random_scores(&mut rng, n, grid);
        for target in [0.05, 0.1, 0.25] {
            let tau = calibrate_tau(&scores, target, "t").unwrap();
            let oracle = refimpl::calibrate_tau_exhaustive(&scores, target);
            assert_eq!(tau.value, oracle, "n={n} target={target}");
        }
    }
}

#[test]
fn norms_match_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let n = 3 * 16 * 16;
        let xv: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let yv: Vec<f32> = xv
            .iter()
            .map(|&v| if rng.gen_bool(0.3) { (v + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0) } else { v })
            .collect();
        let x = Tensor::new(vec![3, 16, 16], xv.clone());
        let y = Tensor::new(vec![3, 16, 16], yv.clone());
        let got = norms(&x, &y).unwrap();
        let (l0v, l0p, l2) = refimpl::norms_direct(&xv, &yv, 3);
        assert_eq!(got.l0_values, l0v);
        assert_eq!(got.l0_pixels, l0p);
        assert!((got.l2 - l2).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// AUC(A,B) + AUC(B,A) = 1 for tie-free score sets.
    #[test]
    fn auc_antisymmetry(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_scores(&mut rng, 12, None);
        let b = random_scores(&mut rng, 9, None);
        let ab = roc(&a, &b).unwrap().auc;
        let ba = roc(&b, &a).unwrap().auc;
        prop_assert!((ab + ba - 1.0).abs() < 1e-9);
    }

    /// AUC is invariant under strictly increasing transforms of all scores.
    #[test]
    fn auc_monotone_transform_invariance(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let real = random_scores(&mut rng, 11, Some(8));
        let fake = random_scores(&mut rng, 14, Some(8));
        let base = roc(&real, &fake).unwrap().auc;
        let squash = |v: f32| (1.5f32 * v).tanh() + 0.1 * v;
        let real_t: Vec<f32> = real.iter().map(|&v| squash(v)).collect();
        let fake_t: Vec<f32> = fake.iter().map(|&v| squash(v)).collect();
        let transformed = roc(&real_t, &fake_t).unwrap().auc;
        prop_assert!((base - transformed).abs() < 1e-9);
    }
}
