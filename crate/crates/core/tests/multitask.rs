use hypernas::multitask::{check_q, effective_weights, pareto_front, total_loss, total_loss_on_tape};
use hypernas::numerics::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn quadratic_case_is_the_classical_uncertainty_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let l: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..5.0)).collect();
        let u: Vec<f64> = (0..2).map(|_| rng.random_range(0.05..4.0)).collect();
        let classical: f64 = l
            .iter()
            .zip(&u)
            .map(|(l, u)| l * l / (2.0 * u * u) + (1.0 + u * u).ln())
            .sum();
        let got = total_loss(&l, &u, 2.0).unwrap();
        assert!((got - classical).abs() <= 1e-12 * classical.abs().max(1.0));
    }
}

#[test]
fn unit_losses_at_unit_weights() {
    let expect = 2.0 * (0.5 + 2f64.ln());
    for q in [1.25, 1.5, 2.0, 3.0] {
        assert!((total_loss(&[1.0, 1.0], &[1.0, 1.0], q).unwrap() - expect).abs() < 1e-15);
    }
}

#[test]
fn tape_loss_and_rho_gradient_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let l: Vec<f64> = (0..2).map(|_| rng.random_range(0.01..3.0)).collect();
        let rho: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let q = rng.random_range(1.01..4.0);
        let mut tape = Tape::new();
        let losses: Vec<_> = l.iter().map(|&v| tape.constant(Tensor::scalar(v))).collect();
        let r = tape.leaf(Tensor::new(vec![2], rho.clone()).unwrap());
        let total = total_loss_on_tape(&mut tape, &losses, r, q).unwrap();
        let u: Vec<f64> = rho.iter().map(|r| r.exp()).collect();
        let value = tape.value(total).item().unwrap();
        assert!((value - total_loss(&l, &u, q).unwrap()).abs() < 1e-12 * value.abs().max(1.0));
        let grads = tape.backward(total).unwrap();
        let g = grads.wrt(r).unwrap();
        for t in 0..2 {
            let e2 = (2.0 * rho[t]).exp();
            let expect = -l[t].powf(q) / e2 + 2.0 * e2 / (1.0 + e2);
            assert!((g.data()[t] - expect).abs() < 1e-10 * expect.abs().max(1.0));
        }
        for (t, &lv) in losses.iter().enumerate() {
            let expect = q * l[t].powf(q - 1.0) / (2.0 * u[t] * u[t]);
            let got = grads.wrt(lv).map(|g| g.data()[0]).unwrap_or(f64::NAN);
            assert!((got - expect).abs() < 1e-10 * expect.abs().max(1.0));
        }
    }
}

#[test]
fn nonpositive_q_is_rejected() {
    assert!(check_q(0.0).is_err());
    assert!(check_q(-1.5).is_err());
    assert!(check_q(f64::NAN).is_err());
    assert!(check_q(f64::INFINITY).is_err());
    assert!(check_q(0.5).is_ok());
}

#[test]
fn mixed_scale_spot_value() {
    let (l, u, q) = ([0.04f64, 2.0], [0.5f64, 1.2], 1.5);
    let mut expect = 0.0;
    for t in 0..2 {
        expect += l[t] * l[t].sqrt() / (2.0 * u[t] * u[t]) + (1.0 + u[t] * u[t]).ln();
    }
    assert!((total_loss(&l, &u, q).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn linear_preference_weights_ignore_the_losses() {
    let u = [0.5, 2.0];
    let a = effective_weights(&[0.1, 7.0], &u, 1.0).unwrap().alpha;
    let b = effective_weights(&[3.0, 0.2], &u, 1.0).unwrap().alpha;
    assert!((a[0] - 16.0 / 17.0).abs() < 1e-15);
    assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
}

#[test]
fn pareto_front_of_a_small_set() {
    let pts = vec![vec![1.0, 3.0], vec![2.0, 2.0], vec![2.0, 3.0], vec![3.0, 1.0], vec![1.0, 3.0]];
    let mut front = pareto_front(&pts);
    front.sort_unstable();
    assert_eq!(front, vec![0, 1, 3, 4]);
}

proptest! {
    #[test]
    fn effective_weights_form_a_distribution(
        l in prop::collection::vec(0.0f64..10.0, 2),
        u in prop::collection::vec(0.01f64..10.0, 2),
        q in 1.01f64..5.0,
    ) {
        prop_assume!(l.iter().any(|&v| v > 0.0));
        let w = effective_weights(&l, &u, q).unwrap();
        prop_assert!(!w.degenerate);
        prop_assert!((w.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
        // The weighted task gradient equals q·s·Σ α_t ∂L_t.
        for t in 0..2 {
            let coef = q * l[t].powf(q - 1.0) / (2.0 * u[t] * u[t]);
            prop_assert!((coef - q * w.scaler * w.alpha[t]).abs() <= 1e-9 * coef.max(1.0));
        }
    }

    #[test]
    fn front_points_are_not_strictly_dominated(pts in prop::collection::vec(prop::collection::vec(0u8..6, 2), 1..30)) {
        let pts: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|&v| f64::from(v)).collect()).collect();
        let front = pareto_front(&pts);
        prop_assert!(!front.is_empty());
        for (i, p) in pts.iter().enumerate() {
            let dominated = pts.iter().any(|o| o.iter().zip(p).all(|(a, b)| a <= b) && o.iter().zip(p).any(|(a, b)| a < b));
            prop_assert_eq!(front.contains(&i), !dominated);
        }
    }
}
