//! Resolved per-command configuration: defaults, then the config file, then
//! flags.

use std::fs;
use std::path::{Path, PathBuf};

use hypernas::eval::TestSize;
use hypernas::minibench::{GroundTruthConfig, SynthDatasetSpec};
use hypernas::model::{ModelConfig, ParamGroup};
use hypernas::multitask::Q_SWEEP;
use hypernas::search::EvoConfig;
use hypernas::trainer::{Paradigm, TrainConfig};
use hypernas::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const RESOLVED_CONFIG: &str = "resolved-config.toml";

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("--config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("--config {}: {e}", path.display())))
}

pub fn snapshot<T: Serialize>(out: &Path, settings: &T) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Config(format!("--out {}: {e}", out.display())))?;
    let text = toml::to_string(settings).map_err(|e| Error::Config(e.to_string()))?;
    let path = out.join(RESOLVED_CONFIG);
    fs::write(&path, text).map_err(|e| Error::Config(format!("--out {}: {e}", path.display())))
}

pub fn require_file(path: &Path, flag: &str) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::Config(format!("{flag} is required")));
    }
    if !path.is_file() {
        return Err(Error::Config(format!("{flag} {}: no such file", path.display())));
    }
    Ok(())
}

fn default_profile() -> String {
    "micro".into()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Genbench {
    pub profile: String,
    pub count: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: SynthDatasetSpec,
    pub ground_truth: GroundTruthConfig,
}

impl Default for Genbench {
    fn default() -> Self {
        Genbench {
            profile: default_profile(),
            count: 200,
            seed: 0,
            out: default_out(),
            dataset: SynthDatasetSpec::default(),
            ground_truth: GroundTruthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Train {
    pub profile: String,
    pub bench: PathBuf,
    pub aux: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for Train {
    fn default() -> Self {
        Train {
            profile: default_profile(),
            bench: PathBuf::new(),
            aux: PathBuf::new(),
            seed: 0,
            out: default_out(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorMode {
    Trained,
    Oracle,
    AntiOracle,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Eval {
    pub profile: String,
    pub bench: PathBuf,
    pub aux: Option<PathBuf>,
    pub aux_val: Option<PathBuf>,
    pub out: PathBuf,
    pub predictor: PredictorMode,
    pub paradigms: Vec<Paradigm>,
    pub seeds: Vec<u64>,
    pub train_size: usize,
    /// `"all"` or a record count.
    pub test_size: String,
    pub export_embeddings: bool,
    /// Test architectures scored with generated weights per seed.
    pub hyper_eval_archs: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for Eval {
    fn default() -> Self {
        Eval {
            profile: default_profile(),
            bench: PathBuf::new(),
            aux: None,
            aux_val: None,
            out: default_out(),
            predictor: PredictorMode::Trained,
            paradigms: vec![Paradigm::Dual, Paradigm::PredOnly],
            seeds: (0..5).collect(),
            train_size: 20,
            test_size: "all".into(),
            export_embeddings: false,
            hyper_eval_archs: 10,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

pub fn parse_test_size(s: &str) -> Result<TestSize> {
    if s == "all" {
        return Ok(TestSize::All);
    }
    s.parse()
        .map(TestSize::Count)
        .map_err(|_| Error::Config(format!("--test-size must be \"all\" or a count, got {s:?}")))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub qs: Vec<f64>,
    pub eval: Eval,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            qs: Q_SWEEP.to_vec(),
            eval: Eval {
                paradigms: vec![Paradigm::Dual],
                ..Eval::default()
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Search {
    pub profile: String,
    pub checkpoint: Option<PathBuf>,
    pub oracle: bool,
    pub bench: Option<PathBuf>,
    pub out: PathBuf,
    pub evo: EvoConfig,
}

impl Default for Search {
    fn default() -> Self {
        Search {
            profile: default_profile(),
            checkpoint: None,
            oracle: false,
            bench: None,
            out: default_out(),
            evo: EvoConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gradcheck {
    pub profile: String,
    pub seed: u64,
    pub h: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub batch: usize,
    pub param_groups: Vec<String>,
    pub paradigm: Paradigm,
    pub q: f64,
    pub aux: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub inject_fault: Option<String>,
    pub model: ModelConfig,
}

impl Default for Gradcheck {
    fn default() -> Self {
        Gradcheck {
            profile: "micro-2".into(),
            seed: 0,
            h: 1e-5,
            tolerance: 1e-3,
            samples: 6,
            batch: 8,
            param_groups: ParamGroup::ALL.iter().map(|g| g.as_str().to_string()).collect(),
            paradigm: Paradigm::Dual,
            q: hypernas::multitask::DEFAULT_Q,
            aux: None,
            out: None,
            inject_fault: None,
            model: ModelConfig::default(),
        }
    }
}
