//! Preference-scaled adaptive multi-task loss.
//!
//! For tasks `t` with losses `L_t ≥ 0`, learnable `u_t = exp(ρ_t)` and a
//! fixed preference exponent `q > 0`:
//!
//! ```text
//! L_total = Σ_t  L_t^(q−1) / (2·u_t²) · L_t  +  ln(1 + u_t²)
//! ```
//!
//! The `L_t^(q−1)` factor is differentiated through, so the objective is
//! `Σ L_t^q / (2u_t²) + ln(1 + u_t²)`. At `q = 2` this is the classical
//! uncertainty-weighted form with squared losses.

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

/// Task order used everywhere: predictor first, hypernetwork second.
pub const TASKS: [&str; 2] = ["pred", "hyper"];

pub const DEFAULT_Q: f64 = 1.5;

/// Preference sweep values exposed by the CLI.
pub const Q_SWEEP: [f64; 4] = [1.25, 1.5, 2.0, 3.0];

pub fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("preference q must be positive, got {q}")))
    }
}

/// Learnable `ρ`, one per task, with `u = exp(ρ)`.
#[derive(Clone, Debug)]
pub struct TaskWeights {
    pub rho: ParamId,
}

impl TaskWeights {
    /// `u_t = 1` at start.
    pub fn init(store: &mut ParamStore) -> Result<Self> {
        Ok(TaskWeights {
            rho: store.insert("task.rho", Tensor::zeros(&[TASKS.len()]))?,
        })
    }

    pub fn u(&self, store: &ParamStore) -> Vec<f64> {
        store.get(self.rho).data().iter().map(|r| r.exp()).collect()
    }
}

/// Records `L_total` for `losses` (scalars in task order) on the tape.
pub fn total_loss_on_tape(tape: &mut Tape, losses: &[Var], rho: Var, q: f64) -> Result<Var> {
    if losses.len() != tape.value(rho).numel() {
        return Err(Error::Contract(format!(
            "{} losses for {} task weights",
            losses.len(),
            tape.value(rho).numel()
        )));
    }
    let mut total: Option<Var> = None;
    for (t, &loss) in losses.iter().enumerate() {
        if tape.value(loss).item()? < 0.0 {
            return Err(Error::Contract(format!("task {} loss is negative", TASKS[t])));
        }
        let rho_t = tape.slice(rho, t, &[1])?;
        let two_rho = tape.scale(rho_t, 2.0)?;
        let u2 = tape.exp(two_rho)?;
        let neg_two_rho = tape.scale(rho_t, -2.0)?;
        let inv_u2 = tape.exp(neg_two_rho)?;
        let lq = tape.powf(loss, q)?;
        let weighted = tape.mul(lq, inv_u2)?;
        let weighted = tape.scale(weighted, 0.5)?;
        let one_plus = tape.add_scalar(u2, 1.0)?;
        let reg = tape.ln(one_plus)?;
        let term = tape.add(weighted, reg)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    total.ok_or_else(|| Error::Contract("no task losses".into()))
}

fn check(losses: &[f64], u: &[f64]) -> Result<()> {
    if losses.len() != u.len() || losses.is_empty() {
        return Err(Error::Contract(format!(
            "{} losses for {} task weights",
            losses.len(),
            u.len()
        )));
    }
    if losses.iter().any(|&l| l < 0.0) {
        return Err(Error::Contract("task losses must be nonnegative".into()));
    }
    if u.iter().any(|&u| u <= 0.0) {
        return Err(Error::Contract("task weights must be positive".into()));
    }
    Ok(())
}

/// Scalar `L_total` for given losses and weights `u`.
pub fn total_loss(losses: &[f64], u: &[f64], q: f64) -> Result<f64> {
    check(losses, u)?;
    Ok(losses
        .iter()
        .zip(u)
        .map(|(&l, &u)| l.powf(q - 1.0) / (2.0 * u * u) * l + (1.0 + u * u).ln())
        .sum())
}

/// Rescaled task weights `α_t` summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveWeights {
    pub alpha: Vec<f64>,
    pub scaler: f64,
    /// All losses were zero; `alpha` is uniform and `scaler` is zero.
    pub degenerate: bool,
}

/// `α_t = L_t^(q−1) / (2·s·u_t²)` with `s = Σ_t L_t^(q−1) / (2u_t²)`.
pub fn effective_weights(losses: &[f64], u: &[f64], q: f64) -> Result<EffectiveWeights> {
    check(losses, u)?;
    if losses.iter().all(|&l| l == 0.0) {
        return Ok(EffectiveWeights {
            alpha: vec![1.0 / losses.len() as f64; losses.len()],
            scaler: 0.0,
            degenerate: true,
        });
    }
    let raw: Vec<f64> = losses
        .iter()
        .zip(u)
        .map(|(&l, &u)| l.powf(q - 1.0) / (2.0 * u * u))
        .collect();
    let scaler: f64 = raw.iter().sum();
    Ok(EffectiveWeights {
        alpha: raw.iter().map(|r| r / scaler).collect(),
        scaler,
        degenerate: false,
    })
}

/// `a` dominates `b` when every task loss of `a` is at most that of `b`.
/// Taken literally this is reflexive.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    assert_eq!(a.len(), b.len(), "dominates on different task sets");
    a.iter().zip(b).all(|(x, y)| x <= y)
}

fn strictly_dominates(a: &[f64], b: &[f64]) -> bool {
    dominates(a, b) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Indices of the non-dominated points: those no other point beats in
/// every task with at least one strict improvement.
pub fn pareto_front(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    // Sorting lexicographically means a dominator always precedes the point
    // it dominates, so each point only needs checking against the front so far.
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut front: Vec<usize> = Vec::new();
    for i in order {
        if !front.iter().any(|&f| strictly_dominates(&points[f], &points[i])) {
            front.push(i);
        }
    }
    front.sort_unstable();
    front
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_spot_values() {
        let v = total_loss(&[1.0, 1.0], &[1.0, 1.0], 2.0).unwrap();
        assert!((v - 2.0 * (0.5 + 2f64.ln())).abs() < 1e-12);
        assert!((v - 2.386294361119891).abs() < 1e-12);
        let z = total_loss(&[0.0, 0.0], &[1.0, 1.0], 2.0).unwrap();
        assert!((z - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn negative_loss_is_rejected() {
        assert!(matches!(total_loss(&[-0.1, 1.0], &[1.0, 1.0], 1.5), Err(Error::Contract(_))));
        let mut store = ParamStore::new();
        let w = TaskWeights::init(&mut store).unwrap();
        let mut tape = Tape::new();
        let rho = tape.param(&store, w.rho);
        let a = tape.constant(Tensor::scalar(-1.0));
        let b = tape.constant(Tensor::scalar(1.0));
        assert!(matches!(total_loss_on_tape(&mut tape, &[a, b], rho, 1.5), Err(Error::Contract(_))));
    }

    #[test]
    fn effective_weight_cases() {
        let w = effective_weights(&[0.7, 0.7], &[1.3, 1.3], 3.0).unwrap();
        assert_eq!(w.alpha, vec![0.5, 0.5]);

        let w = effective_weights(&[0.2, 5.0], &[1.0, 2.0], 1.0).unwrap();
        assert!((w.alpha[0] - 0.8).abs() < 1e-15 && (w.alpha[1] - 0.2).abs() < 1e-15);

        let w = effective_weights(&[1.0, 4.0], &[1.0, 1.0], 2.0).unwrap();
        assert!((w.alpha[0] - 0.2).abs() < 1e-15 && (w.alpha[1] - 0.8).abs() < 1e-15);

        let w = effective_weights(&[0.0, 0.0], &[1.0, 1.0], 2.0).unwrap();
        assert!(w.degenerate);
        assert_eq!(w.alpha, vec![0.5, 0.5]);
    }

    #[test]
    fn domination_cases() {
        assert!(dominates(&[0.1, 0.2], &[0.3, 0.2]));
        assert!(!dominates(&[0.1, 0.5], &[0.3, 0.2]));
        assert!(dominates(&[0.4, 0.4], &[0.4, 0.4]));
    }

    #[test]
    fn pareto_hand_case() {
        let pts = vec![vec![1.0, 3.0], vec![2.0, 2.0], vec![3.0, 1.0], vec![3.0, 3.0]];
        assert_eq!(pareto_front(&pts), vec![0, 1, 2]);
        assert_eq!(pareto_front(&[vec![5.0, 5.0]]), vec![0]);
        // Duplicates don't eliminate each other.
        assert_eq!(pareto_front(&[vec![1.0, 1.0], vec![1.0, 1.0]]), vec![0, 1]);
    }

    #[test]
    fn q_must_be_positive() {
        assert!(check_q(0.0).is_err());
        assert!(check_q(f64::INFINITY).is_err());
        assert!(check_q(1.25).is_ok());
    }
}
