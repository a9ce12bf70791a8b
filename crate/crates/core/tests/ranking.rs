mod common;

use common::{brute_kendall, direct_spearman};
use hypernas::eval::{kendall_tau, spearman, split_indices, TestSize};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

#[test]
fn kendall_matches_pair_enumeration_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..500 {
        let n = rng.random_range(2..=200);
        // Small value ranges force many ties in some cases.
        let levels = if case % 3 == 0 { rng.random_range(1..6) } else { 1_000_000 };
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let fast = kendall_tau(&x, &y).unwrap();
        let slow = brute_kendall(&x, &y);
        assert!(close(fast, slow, 1e-12), "case {case}: {fast:?} vs {slow:?}");
        assert!(close(spearman(&x, &y).unwrap(), direct_spearman(&x, &y), 1e-10), "case {case}");
    }
}

#[test]
fn heavy_ties_and_degenerate_columns() {
    let x = [1.0, 1.0, 1.0, 2.0, 2.0, 3.0];
    let y = [5.0, 4.0, 4.0, 4.0, 1.0, 0.0];
    assert!(close(kendall_tau(&x, &y).unwrap(), brute_kendall(&x, &y), 1e-15));
    let flat = [2.0; 6];
    assert_eq!(kendall_tau(&flat, &y).unwrap(), None);
    assert_eq!(spearman(&y, &flat).unwrap(), None);
}

#[test]
fn reversed_order_is_minus_one() {
    let x: Vec<f64> = (0..50).map(f64::from).collect();
    let y: Vec<f64> = x.iter().rev().copied().collect();
    assert_eq!(kendall_tau(&x, &y).unwrap(), Some(-1.0));
    assert!((spearman(&x, &y).unwrap().unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn monotone_maps_leave_both_metrics_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.random_range(3..80);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let a = rng.random_range(0.1..5.0);
        let b = rng.random_range(-10.0..10.0);
        let mx: Vec<f64> = x.iter().map(|v| a * v.powi(3) + b).collect();
        let my: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        assert!(close(kendall_tau(&x, &y).unwrap(), kendall_tau(&mx, &my).unwrap(), 1e-12));
        assert!(close(spearman(&x, &y).unwrap(), spearman(&mx, &my).unwrap(), 1e-12));
    }
}

#[test]
fn bad_inputs_are_contract_errors() {
    assert!(kendall_tau(&[1.0], &[1.0]).is_err());
    assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
    assert!(spearman(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_symmetric(v in prop::collection::vec((0u8..8, 0u8..8), 2..60)) {
        let x: Vec<f64> = v.iter().map(|p| f64::from(p.0)).collect();
        let y: Vec<f64> = v.iter().map(|p| f64::from(p.1)).collect();
        if let Some(t) = kendall_tau(&x, &y).unwrap() {
            prop_assert!((-1.0..=1.0).contains(&t));
            prop_assert!((t - kendall_tau(&y, &x).unwrap().unwrap()).abs() < 1e-15);
        }
        if let Some(r) = spearman(&x, &y).unwrap() {
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn splits_are_disjoint_and_deterministic(n in 4usize..300, m in 1usize..40, seed: u64) {
        prop_assume!(m + 2 <= n);
        let (train, test) = split_indices(n, m, TestSize::All, seed).unwrap();
        prop_assert_eq!(train.len(), m);
        prop_assert_eq!(test.len(), n - m);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_indices(n, m, TestSize::All, seed).unwrap(), (train, test));
    }
}
