//! Finite-difference verification of the training gradients.

use rand::seq::index::sample;
use serde::Serialize;

use crate::archspace::BenchRecord;
use crate::error::{Error, Result};
use crate::hypernet::AuxBatch;
use crate::model::{ModelState, ParamGroup};
use crate::numerics::ParamId;
use crate::rng::child_rng;
use crate::trainer::{objective_value, train_step, Paradigm};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub h: f64,
    pub tolerance: f64,
    /// Coordinates checked per tensor; smaller tensors are checked fully.
    pub samples: usize,
    pub groups: Vec<ParamGroup>,
    pub paradigm: Paradigm,
    pub q: f64,
    pub seed: u64,
    /// Perturbs the analytic gradient of this tensor (negative control).
    pub inject_fault: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            tolerance: 1e-3,
            samples: 6,
            groups: ParamGroup::ALL.to_vec(),
            paradigm: Paradigm::Dual,
            q: crate::multitask::DEFAULT_Q,
            seed: 0,
            inject_fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub group: String,
    pub checked: usize,
    /// Coordinates skipped because a kink lies within the stencil.
    pub skipped: usize,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed)
    }
}

fn perturbed(state: &mut ModelState, id: ParamId, k: usize, value: f64, f: &dyn Fn(&ModelState) -> Result<f64>) -> Result<f64> {
    let orig = state.store.get(id).data()[k];
    state.store.get_mut(id).data_mut()[k] = value;
    let out = f(state);
    state.store.get_mut(id).data_mut()[k] = orig;
    out
}

/// Compares analytic and central-difference gradients of one training step
/// on sampled coordinates of every tensor in the selected groups.
pub fn gradcheck(
    state: &mut ModelState,
    record: &BenchRecord,
    batch: &AuxBatch,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if !(cfg.h > 0.0 && cfg.tolerance > 0.0) {
        return Err(Error::Config("gradcheck step and tolerance must be positive".into()));
    }
    if let Some(name) = &cfg.inject_fault {
        if state.store.find(name).is_none() {
            return Err(Error::Config(format!("--inject-fault names unknown tensor {name:?}")));
        }
    }
    let (_, grads) = train_step(state, record, batch, cfg.paradigm, cfg.q)?;
    let objective = |s: &ModelState| objective_value(s, record, batch, cfg.paradigm, cfg.q);
    let mut rng = child_rng(cfg.seed, "gradcheck");
    let h = cfg.h;

    let mut tensors = Vec::new();
    for &group in &cfg.groups {
        for id in state.group(group) {
            let name = state.store.name(id).to_string();
            let n = state.store.get(id).numel();
            let coords: Vec<usize> = if n <= cfg.samples {
                (0..n).collect()
            } else {
                sample(&mut rng, n, cfg.samples).into_vec()
            };
            let fault = cfg.inject_fault.as_deref() == Some(name.as_str());
            let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
            let (mut checked, mut skipped) = (0, 0);
            for k in coords {
                let mut analytic = grads.param(id).map_or(0.0, |g| g.data()[k]);
                if fault {
                    analytic = analytic * 1.1 + 1e-3;
                }
                let x = state.store.get(id).data()[k];
                let num_h = (perturbed(state, id, k, x + h, &objective)? - perturbed(state, id, k, x - h, &objective)?) / (2.0 * h);
                let num_h2 = (perturbed(state, id, k, x + h / 2.0, &objective)?
                    - perturbed(state, id, k, x - h / 2.0, &objective)?)
                    / h;
                let scale = num_h.abs().max(num_h2.abs()).max(1e-6);
                if (num_h - num_h2).abs() > cfg.tolerance * scale {
                    skipped += 1;
                    continue;
                }
                checked += 1;
                diff2 += (analytic - num_h).powi(2);
                a2 += analytic * analytic;
                n2 += num_h * num_h;
            }
            let rel_error = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-6);
            tensors.push(TensorCheck {
                name,
                group: group.as_str().to_string(),
                checked,
                skipped,
                rel_error,
                passed: rel_error < cfg.tolerance,
            });
        }
    }
    let passed = tensors.iter().all(|t| t.passed);
    Ok(GradCheckReport { tensors, passed })
}
