//! The complete trainable state: encoder, regressor, hypernetwork and task
//! weights in one parameter store.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::archspace::{ArchitectureSpec, SearchSpaceProfile};
use crate::encoder::{encode_with_positions, EncoderParams, EncodingMode, GlobalEncoding};
use crate::error::{Error, Result};
use crate::hypernet::{count_correct, hyper_logits, AuxDataset, HypernetParams};
use crate::multitask::TaskWeights;
use crate::numerics::{ParamId, ParamStore, Tape, Var};
use crate::predictor::{predict, RegressorParams};
use crate::rng::child_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub gcn_layers: usize,
    pub hyper_hidden: usize,
    pub hyper_layers: usize,
    pub encoding: EncodingMode,
    pub in_channels: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 72,
            gcn_layers: 6,
            hyper_hidden: 96,
            hyper_layers: 3,
            encoding: EncodingMode::CellFeature,
            in_channels: 1,
            classes: 4,
            seed: 0,
        }
    }
}

/// Named parameter groups, matching the first segment of parameter names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Hypernet,
    Regressor,
    Task,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Encoder,
        ParamGroup::Hypernet,
        ParamGroup::Regressor,
        ParamGroup::Task,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Hypernet => "hypernet",
            ParamGroup::Regressor => "regressor",
            ParamGroup::Task => "task",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter group {s:?} (encoder, hypernet, regressor, task)")))
    }
}

#[derive(Clone, Debug)]
pub struct ModelState {
    pub profile: SearchSpaceProfile,
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub regressor: RegressorParams,
    pub hypernet: HypernetParams,
    pub tasks: TaskWeights,
}

impl ModelState {
    pub fn new(profile: SearchSpaceProfile, config: ModelConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let positions = (config.encoding == EncodingMode::PositionEmbedding).then_some(profile.num_cells);
        let encoder = EncoderParams::init(
            &mut store,
            &mut child_rng(config.seed, "encoder"),
            profile.vocabulary.num_labels(),
            config.dim,
            config.gcn_layers,
            positions,
        )?;
        let regressor = RegressorParams::init(&mut store, &mut child_rng(config.seed, "regressor"), config.dim)?;
        let hypernet = HypernetParams::init(
            &mut store,
            &mut child_rng(config.seed, "hypernet"),
            &profile,
            config.dim,
            config.hyper_hidden,
            config.hyper_layers,
            config.in_channels,
            config.classes,
        )?;
        let tasks = TaskWeights::init(&mut store)?;
        Ok(ModelState {
            profile,
            config,
            store,
            encoder,
            regressor,
            hypernet,
            tasks,
        })
    }

    pub fn group(&self, group: ParamGroup) -> Vec<ParamId> {
        self.store.group(group.as_str())
    }

    /// Contract error on a role layout that differs from the profile's,
    /// validation error on any other structural violation.
    pub fn check_arch(&self, arch: &ArchitectureSpec) -> Result<()> {
        if arch.roles != self.profile.roles() {
            return Err(Error::Contract(format!(
                "architecture roles {:?} do not match profile {}",
                arch.roles, self.profile.name
            )));
        }
        let violations = self.profile.validate(arch);
        if violations.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
            Err(Error::Validation(msgs.join("; ")))
        }
    }

    pub fn encode(&self, tape: &mut Tape, arch: &ArchitectureSpec) -> Result<GlobalEncoding> {
        self.check_arch(arch)?;
        encode_with_positions(tape, &self.store, &self.encoder, arch, self.config.encoding)
    }

    /// Predicted accuracy `ŷ` on the tape.
    pub fn predict_on(&self, tape: &mut Tape, encoding: &GlobalEncoding) -> Result<Var> {
        predict(tape, &self.store, &self.regressor, encoding.embedding)
    }

    /// One forward pass through encoder and regressor only.
    pub fn predict(&self, arch: &ArchitectureSpec) -> Result<f64> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, arch)?;
        let y = self.predict_on(&mut tape, &enc)?;
        tape.value(y).item()
    }

    /// The architecture embedding `h`.
    pub fn embedding(&self, arch: &ArchitectureSpec) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, arch)?;
        Ok(tape.value(enc.embedding).data().to_vec())
    }

    /// Accuracy of the hypernetwork-generated target network on `data`,
    /// with batch statistics taken per chunk of `batch_size`.
    pub fn hyper_accuracy(&self, arch: &ArchitectureSpec, data: &AuxDataset, batch_size: usize) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Contract("empty evaluation set".into()));
        }
        let mut correct = 0;
        for batch in data.chunks(batch_size) {
            let batch = batch?;
            let mut tape = Tape::new();
            let enc = self.encode(&mut tape, arch)?;
            let logits = hyper_logits(&mut tape, &self.store, &self.hypernet, &self.profile, arch, &enc, &batch)?;
            correct += count_correct(tape.value(logits), &batch.labels)?;
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::CellRole;

    fn small() -> ModelConfig {
        ModelConfig {
            dim: 8,
            gcn_layers: 2,
            hyper_hidden: 8,
            hyper_layers: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn groups_partition_the_store() {
        let m = ModelState::new(SearchSpaceProfile::micro(), small()).unwrap();
        let total: usize = ParamGroup::ALL.iter().map(|&g| m.group(g).len()).sum();
        assert_eq!(total, m.store.len());
        assert_eq!(m.group(ParamGroup::Task).len(), 1);
        assert_eq!("regressor".parse::<ParamGroup>().unwrap(), ParamGroup::Regressor);
        assert!("theta".parse::<ParamGroup>().is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = ModelState::new(SearchSpaceProfile::micro(), small()).unwrap();
        let b = ModelState::new(SearchSpaceProfile::micro(), small()).unwrap();
        for ((_, na, ta), (_, nb, tb)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn role_mismatch_is_a_contract_error() {
        let m = ModelState::new(SearchSpaceProfile::micro(), small()).unwrap();
        let mut arch = m.profile.sample_random(1);
        arch.roles[0] = CellRole::Reduction;
        assert!(matches!(m.predict(&arch), Err(Error::Contract(_))));
    }

    #[test]
    fn prediction_is_a_probability() {
        let m = ModelState::new(SearchSpaceProfile::micro(), small()).unwrap();
        for s in 0..5 {
            let p = m.predict(&m.profile.sample_random(s)).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }
}
