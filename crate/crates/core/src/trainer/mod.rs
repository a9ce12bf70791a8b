//! Joint optimization of encoder, regressor, hypernetwork and task weights.

mod checkpoint;

pub use checkpoint::{config_hash, load_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::archspace::BenchRecord;
use crate::error::{Error, Result};
use crate::hypernet::{hyper_loss, AuxBatch, AuxDataset};
use crate::model::ModelState;
use crate::multitask::{check_q, total_loss_on_tape, DEFAULT_Q};
use crate::numerics::{GradBuffer, Gradients, ParamStore, Tape, Tensor, Var};
use crate::predictor::pred_loss;
use crate::rng::{child_rng, Rng};

/// Which losses drive the shared encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Paradigm {
    /// Both tasks through the adaptive multi-task loss.
    #[default]
    Dual,
    /// Regressor only.
    PredOnly,
    /// Hypernetwork only; the regressor is never trained.
    HyperOnly,
}

impl Paradigm {
    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Dual => "dual",
            Paradigm::PredOnly => "pred-only",
            Paradigm::HyperOnly => "hyper-only",
        }
    }

    pub fn uses_pred(self) -> bool {
        self != Paradigm::HyperOnly
    }

    pub fn uses_hyper(self) -> bool {
        self != Paradigm::PredOnly
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(Paradigm::Dual),
            "pred-only" => Ok(Paradigm::PredOnly),
            "hyper-only" => Ok(Paradigm::HyperOnly),
            _ => Err(Error::Config(format!("unknown paradigm {s:?} (dual, pred-only, hyper-only)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub paradigm: Paradigm,
    pub epochs: usize,
    /// Defaults to the number of training pairs.
    pub steps_per_epoch: Option<usize>,
    pub accumulate_every: usize,
    pub lr: f64,
    /// 0-based epochs from which the learning rate is halved once more.
    pub lr_halve_epochs: Vec<usize>,
    pub batch_size: usize,
    pub q: f64,
    pub seed: u64,
    /// Expected number of training pairs, checked against the bench.
    pub train_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            paradigm: Paradigm::Dual,
            epochs: 200,
            steps_per_epoch: None,
            accumulate_every: 10,
            lr: 1e-3,
            lr_halve_epochs: vec![100, 150],
            batch_size: 128,
            q: DEFAULT_Q,
            seed: 0,
            train_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.accumulate_every == 0 {
            return Err(Error::Config("accumulate-every must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps-per-epoch must be at least 1".into()));
        }
        if self.train_size == Some(0) {
            return Err(Error::Config("M must be at least 1".into()));
        }
        check_q(self.q)
    }

    /// Learning rate in effect during 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = self.lr_halve_epochs.iter().filter(|&&e| epoch >= e).count();
        self.lr * 0.5f64.powi(halvings as i32)
    }
}

/// Raw task losses of one step; `None` when the paradigm skips a task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub pred: Option<f64>,
    pub hyper: Option<f64>,
    /// The value that was backpropagated.
    pub objective: f64,
}

/// Per-epoch means and the state of the schedule at the end of the epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub pred: Option<f64>,
    pub hyper: Option<f64>,
    pub u_pred: f64,
    pub u_hyper: f64,
    pub lr: f64,
}

/// Forward and backward for one architecture–accuracy pair and one aux
/// batch. Parameters are not touched.
pub fn train_step(
    state: &ModelState,
    record: &BenchRecord,
    batch: &AuxBatch,
    paradigm: Paradigm,
    q: f64,
) -> Result<(StepLosses, Gradients)> {
    let mut tape = Tape::new();
    let (losses, objective) = record_objective(&mut tape, state, record, batch, paradigm, q)?;
    let grads = tape.backward(objective)?;
    Ok((losses, grads))
}

/// The training objective of one step, without the backward pass.
pub fn objective_value(
    state: &ModelState,
    record: &BenchRecord,
    batch: &AuxBatch,
    paradigm: Paradigm,
    q: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    Ok(record_objective(&mut tape, state, record, batch, paradigm, q)?.0.objective)
}

fn record_objective(
    tape: &mut Tape,
    state: &ModelState,
    record: &BenchRecord,
    batch: &AuxBatch,
    paradigm: Paradigm,
    q: f64,
) -> Result<(StepLosses, Var)> {
    let arch = &record.architecture;
    let enc = state.encode(tape, arch)?;
    let pred = if paradigm.uses_pred() {
        let y = state.predict_on(tape, &enc)?;
        Some(pred_loss(tape, y, record.val_acc)?)
    } else {
        None
    };
    let hyper = if paradigm.uses_hyper() {
        Some(hyper_loss(
            tape,
            &state.store,
            &state.hypernet,
            &state.profile,
            arch,
            &enc,
            batch,
        )?)
    } else {
        None
    };
    let objective = match (pred, hyper) {
        (Some(p), Some(h)) => {
            let rho = tape.param(&state.store, state.tasks.rho);
            total_loss_on_tape(tape, &[p, h], rho, q)?
        }
        (Some(p), None) => p,
        (None, Some(h)) => h,
        (None, None) => unreachable!("every paradigm trains something"),
    };
    let losses = StepLosses {
        pred: pred.map(|v| tape.value(v).data()[0]),
        hyper: hyper.map(|v| tape.value(v).data()[0]),
        objective: tape.value(objective).data()[0],
    };
    Ok((losses, objective))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &GradBuffer, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.get(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Training loop state; owns the model until [`Trainer::into_state`].
pub struct Trainer {
    pub state: ModelState,
    pub cfg: TrainConfig,
    grads: GradBuffer,
    adam: Adam,
    rng: Rng,
    epoch: usize,
    step: usize,
    history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(state: ModelState, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            grads: GradBuffer::new(&state.store),
            adam: Adam::new(&state.store),
            rng: child_rng(cfg.seed, "train.data"),
            epoch: 0,
            step: 0,
            history: Vec::new(),
            state,
            cfg,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn into_state(self) -> ModelState {
        self.state
    }

    pub fn into_parts(self) -> (ModelState, Vec<EpochRecord>) {
        (self.state, self.history)
    }

    /// One step: forward, backward, accumulate; applies the optimizer when
    /// the accumulation count reaches `accumulate_every`.
    pub fn step(&mut self, record: &BenchRecord, batch: &AuxBatch) -> Result<StepLosses> {
        let step = self.step;
        let diverged = |losses: String| Error::Diverged {
            step,
            arch_id: record.id.clone(),
            losses,
        };
        let (losses, grads) =
            match train_step(&self.state, record, batch, self.cfg.paradigm, self.cfg.q) {
                Ok(r) => r,
                Err(Error::NonFinite(what)) => return Err(diverged(format!("non-finite {what}"))),
                Err(e) => return Err(e),
            };
        if !losses.objective.is_finite() {
            return Err(diverged(format!("{losses:?}")));
        }
        self.grads.accumulate(&grads);
        self.step += 1;
        if self.grads.accumulated() >= self.cfg.accumulate_every {
            let lr = self.cfg.lr_at(self.epoch);
            self.adam.apply(&mut self.state.store, &self.grads, lr);
            self.grads.reset();
        }
        Ok(losses)
    }

    /// One epoch over `bench`, sampling pairs without replacement and aux
    /// batches with replacement.
    pub fn run_epoch(&mut self, bench: &[BenchRecord], aux: &AuxDataset) -> Result<EpochRecord> {
        if bench.is_empty() {
            return Err(Error::Config("training bench is empty".into()));
        }
        let steps = self.cfg.steps_per_epoch.unwrap_or(bench.len());
        let mut order: Vec<usize> = Vec::new();
        let (mut pred_sum, mut hyper_sum) = (0.0, 0.0);
        for _ in 0..steps {
            if order.is_empty() {
                order = (0..bench.len()).collect();
                order.shuffle(&mut self.rng);
                order.reverse();
            }
            let idx = order.pop().expect("refilled");
            let batch = aux.sample_batch(&mut self.rng, self.cfg.batch_size)?;
            let losses = self.step(&bench[idx], &batch)?;
            pred_sum += losses.pred.unwrap_or(0.0);
            hyper_sum += losses.hyper.unwrap_or(0.0);
        }
        let u = self.state.tasks.u(&self.state.store);
        let record = EpochRecord {
            epoch: self.epoch,
            pred: self.cfg.paradigm.uses_pred().then_some(pred_sum / steps as f64),
            hyper: self.cfg.paradigm.uses_hyper().then_some(hyper_sum / steps as f64),
            u_pred: u[0],
            u_hyper: u[1],
            lr: self.cfg.lr_at(self.epoch),
        };
        self.history.push(record.clone());
        self.epoch += 1;
        Ok(record)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run(
        &mut self,
        bench: &[BenchRecord],
        aux: &AuxDataset,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<()> {
        if let Some(m) = self.cfg.train_size {
            if m != bench.len() {
                return Err(Error::Config(format!(
                    "train size {m} but the training bench has {} records",
                    bench.len()
                )));
            }
        }
        while self.epoch < self.cfg.epochs {
            let rec = self.run_epoch(bench, aux)?;
            on_epoch(&rec);
        }
        Ok(())
    }
}

/// Trains a fresh or given state for `cfg.epochs` epochs.
pub fn train(
    state: ModelState,
    bench: &[BenchRecord],
    aux: &AuxDataset,
    cfg: &TrainConfig,
) -> Result<(ModelState, Vec<EpochRecord>)> {
    if bench.is_empty() {
        return Err(Error::Config("training bench is empty".into()));
    }
    let mut trainer = Trainer::new(state, cfg.clone())?;
    trainer.run(bench, aux, |_| {})?;
    Ok(trainer.into_parts())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Comma-separated loss history with a header row.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "epoch,L_pred,L_hyper,u_pred,u_hyper,lr").map_err(io)?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.epoch,
            opt(r.pred),
            opt(r.hyper),
            r.u_pred,
            r.u_hyper,
            r.lr
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
