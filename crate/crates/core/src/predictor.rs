//! Accuracy regressor: `d → d` (ReLU) → `1` (sigmoid), trained with MSE.

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::{he_tensor, Rng};

#[derive(Clone, Debug)]
pub struct RegressorParams {
    pub hidden_w: ParamId,
    pub hidden_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl RegressorParams {
    pub fn init(store: &mut ParamStore, rng: &mut Rng, dim: usize) -> Result<Self> {
        Ok(RegressorParams {
            hidden_w: store.insert("regressor.hidden.w", he_tensor(rng, &[dim, dim], dim))?,
            hidden_b: store.insert("regressor.hidden.b", Tensor::zeros(&[1, dim]))?,
            out_w: store.insert("regressor.out.w", he_tensor(rng, &[dim, 1], dim).map(|v| v * 0.1)?)?,
            out_b: store.insert("regressor.out.b", Tensor::zeros(&[1, 1]))?,
        })
    }
}

/// `ŷ = sigmoid(W₂·relu(W₁·h + b₁) + b₂)`, a `1 × 1` value in `(0, 1)`.
pub fn predict(tape: &mut Tape, store: &ParamStore, params: &RegressorParams, h: Var) -> Result<Var> {
    let w1 = tape.param(store, params.hidden_w);
    let b1 = tape.param(store, params.hidden_b);
    let w2 = tape.param(store, params.out_w);
    let b2 = tape.param(store, params.out_b);
    let x = tape.matmul(h, w1)?;
    let x = tape.add_row(x, b1)?;
    let x = tape.relu(x)?;
    let x = tape.matmul(x, w2)?;
    let x = tape.add_row(x, b2)?;
    tape.sigmoid(x)
}

fn check_label(y: f64) -> Result<()> {
    if (0.0..=1.0).contains(&y) {
        Ok(())
    } else {
        Err(Error::Validation(format!("label {y} outside [0, 1]")))
    }
}

/// `(ŷ − y)²` recorded on the tape.
pub fn pred_loss(tape: &mut Tape, y_hat: Var, y: f64) -> Result<Var> {
    check_label(y)?;
    let target = tape.constant(Tensor::full(tape.shape(y_hat), y));
    let diff = tape.sub(y_hat, target)?;
    let sq = tape.mul(diff, diff)?;
    tape.sum(sq)
}

pub fn pred_loss_value(y_hat: f64, y: f64) -> Result<f64> {
    check_label(y)?;
    Ok((y_hat - y) * (y_hat - y))
}

/// Mean squared error over `(ŷ, y)` pairs.
pub fn batch_pred_loss(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut total = 0.0;
    for &(p, y) in pairs {
        total += pred_loss_value(p, y)?;
    }
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn zero_weights_predict_half() {
        let mut store = ParamStore::new();
        let p = RegressorParams::init(&mut store, &mut rng_from(0), 4).unwrap();
        for id in [p.hidden_w, p.out_w] {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&shape)).unwrap();
        }
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[1, 4]));
        let y = predict(&mut tape, &store, &p, h).unwrap();
        assert_eq!(tape.value(y).item().unwrap(), 0.5);
    }

    #[test]
    fn doubling_output_weight_moves_away_from_half() {
        let mut store = ParamStore::new();
        let p = RegressorParams::init(&mut store, &mut rng_from(3), 4).unwrap();
        let h = Tensor::new(vec![1, 4], vec![0.3, -0.2, 0.9, 0.5]).unwrap();
        let run = |store: &ParamStore| {
            let mut tape = Tape::new();
            let hv = tape.constant(h.clone());
            let y = predict(&mut tape, store, &p, hv).unwrap();
            tape.value(y).item().unwrap()
        };
        let before = run(&store);
        let doubled = store.get(p.out_w).map(|v| 2.0 * v).unwrap();
        store.set(p.out_w, doubled).unwrap();
        let after = run(&store);
        assert!((after - 0.5).abs() >= (before - 0.5).abs());
        assert_eq!((after - 0.5).signum(), (before - 0.5).signum());
    }

    #[test]
    fn loss_values() {
        assert_eq!(pred_loss_value(0.3, 0.3).unwrap(), 0.0);
        assert!((pred_loss_value(0.9, 0.7).unwrap() - 0.04).abs() < 1e-15);
        assert!(matches!(pred_loss_value(0.5, 1.2), Err(Error::Validation(_))));
    }

    #[test]
    fn batch_loss_is_mean_of_singles() {
        let pairs: Vec<(f64, f64)> = (0..17)
            .map(|i| ((i as f64 * 0.37).sin().abs(), (i as f64 * 0.11) % 1.0))
            .collect();
        let mean = pairs
            .iter()
            .map(|&(p, y)| pred_loss_value(p, y).unwrap())
            .sum::<f64>()
            / pairs.len() as f64;
        assert!((batch_pred_loss(&pairs).unwrap() - mean).abs() < 1e-15);
    }
}
