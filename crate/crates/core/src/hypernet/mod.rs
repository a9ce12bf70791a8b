//! Hypernetwork: maps encoder node features to per-node operation weights,
//! assembles the target network and computes the auxiliary loss.

mod auxdata;
mod target;

pub use auxdata::{read_auxd, write_auxd, AuxBatch, AuxDataset, AUXD_MAGIC};
pub use target::{build_target, build_target_with, stem_weights, TargetNetwork, STEM_SEED};

use std::cell::Cell;

use crate::archspace::{ArchitectureSpec, SearchSpaceProfile};
use crate::encoder::GlobalEncoding;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::{he_tensor, Rng};

thread_local! {
    static GENERATE_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`generate_weights`] calls made on this thread so far.
pub fn generate_calls() -> u64 {
    GENERATE_CALLS.with(Cell::get)
}

/// One output head, shared by every vocabulary op naming it.
#[derive(Clone, Debug)]
pub struct Head {
    pub name: String,
    /// Raw output width; at least the largest template routed here.
    pub slot: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct HypernetParams {
    /// `(weight, bias)` per trunk layer.
    pub trunk: Vec<(ParamId, ParamId)>,
    pub heads: Vec<Head>,
    /// Linear classifier `C_last × classes`, no bias.
    pub classifier: ParamId,
    /// Fixed `1×1` stem, never generated or trained.
    pub stem: Tensor,
    pub in_channels: usize,
    pub classes: usize,
}

/// Largest weight count any op of head `h` needs anywhere in the profile.
fn required_slot(profile: &SearchSpaceProfile, head: usize) -> Result<usize> {
    let vocab = &profile.vocabulary;
    let mut slot = 0;
    for op in 0..vocab.len() {
        if vocab.head_of(op) != Some(head) {
            continue;
        }
        let prim = vocab.primitive(op)?;
        for stage in 0..profile.num_stages() {
            if let Some(shape) = prim.weight_shape(profile.channels_at_stage(stage)) {
                slot = slot.max(shape.iter().product());
            }
        }
    }
    Ok(slot)
}

impl HypernetParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        profile: &SearchSpaceProfile,
        in_dim: usize,
        hidden: usize,
        layers: usize,
        in_channels: usize,
        classes: usize,
    ) -> Result<Self> {
        if hidden == 0 || layers == 0 {
            return Err(Error::Config("hypernetwork needs hidden ≥ 1 and layers ≥ 1".into()));
        }
        if classes < 2 || in_channels == 0 {
            return Err(Error::Config(format!(
                "target network needs ≥ 2 classes and ≥ 1 input channel, got {classes} and {in_channels}"
            )));
        }
        let mut trunk = Vec::with_capacity(layers);
        let mut width = in_dim;
        for l in 0..layers {
            let w = store.insert(format!("hypernet.trunk.{l}.w"), he_tensor(rng, &[width, hidden], width))?;
            let b = store.insert(format!("hypernet.trunk.{l}.b"), Tensor::zeros(&[1, hidden]))?;
            trunk.push((w, b));
            width = hidden;
        }
        let mut heads = Vec::new();
        for (h, name) in profile.vocabulary.heads().iter().enumerate() {
            let slot = required_slot(profile, h)?;
            let weight = store.insert(format!("hypernet.head.{name}.w"), he_tensor(rng, &[hidden, slot], hidden))?;
            let bias = store.insert(format!("hypernet.head.{name}.b"), Tensor::zeros(&[1, slot]))?;
            heads.push(Head {
                name: name.clone(),
                slot,
                weight,
                bias,
            });
        }
        let last = profile.channels_at_stage(profile.num_stages() - 1);
        let classifier = store.insert("hypernet.classifier", he_tensor(rng, &[last, classes], last))?;
        let params = HypernetParams {
            trunk,
            heads,
            classifier,
            stem: stem_weights(in_channels, profile.stem_channels),
            in_channels,
            classes,
        };
        params.check_profile(profile)?;
        Ok(params)
    }

    /// Configuration error unless every parametric op of `profile` resolves
    /// to a head large enough for its template.
    pub fn check_profile(&self, profile: &SearchSpaceProfile) -> Result<()> {
        let vocab = &profile.vocabulary;
        if vocab.heads().len() != self.heads.len() {
            return Err(Error::Config(format!(
                "profile has {} weight heads, hypernetwork has {}",
                vocab.heads().len(),
                self.heads.len()
            )));
        }
        for (h, head) in self.heads.iter().enumerate() {
            let need = required_slot(profile, h)?;
            if head.slot < need {
                return Err(Error::Config(format!(
                    "head {} has slot {} but profile needs {need}",
                    head.name, head.slot
                )));
            }
        }
        Ok(())
    }
}

/// Per cell, per node: the generated weight, or `None` for nodes without a
/// parametric op.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedWeights {
    pub cells: Vec<Vec<Option<Var>>>,
}

impl GeneratedWeights {
    pub fn tensors(&self, tape: &Tape) -> Vec<Vec<Option<Tensor>>> {
        self.cells
            .iter()
            .map(|c| c.iter().map(|w| w.map(|v| tape.value(v).clone())).collect())
            .collect()
    }

    pub fn count(&self) -> usize {
        self.cells.iter().flatten().filter(|w| w.is_some()).count()
    }
}

/// Runs the shared trunk and the op's head on every parametric node, then
/// slices each raw output to the op's template.
pub fn generate_weights(
    tape: &mut Tape,
    store: &ParamStore,
    params: &HypernetParams,
    profile: &SearchSpaceProfile,
    arch: &ArchitectureSpec,
    encoding: &GlobalEncoding,
) -> Result<GeneratedWeights> {
    GENERATE_CALLS.with(|c| c.set(c.get() + 1));
    if encoding.cells.len() != arch.cells.len() {
        return Err(Error::Contract(format!(
            "encoding has {} cells, architecture {}",
            encoding.cells.len(),
            arch.cells.len()
        )));
    }
    let vocab = &profile.vocabulary;
    let stages = profile.stages();
    if stages.len() != arch.cells.len() {
        return Err(Error::Contract(format!(
            "architecture has {} cells, profile {}",
            arch.cells.len(),
            stages.len()
        )));
    }
    let mut out: Vec<Vec<Option<Var>>> = arch.cells.iter().map(|c| vec![None; c.num_nodes()]).collect();

    for (h, head) in params.heads.iter().enumerate() {
        // (cell, node, template) for every node this head serves, in order.
        let mut jobs = Vec::new();
        let mut rows = Vec::new();
        for (i, cell) in arch.cells.iter().enumerate() {
            let nodes: Vec<usize> = (0..cell.num_nodes())
                .filter(|&v| cell.ops[v] < vocab.len() && vocab.head_of(cell.ops[v]) == Some(h))
                .collect();
            if nodes.is_empty() {
                continue;
            }
            rows.push(tape.gather_rows(encoding.cells[i].node_features, &nodes)?);
            for v in nodes {
                let shape = vocab
                    .primitive(cell.ops[v])?
                    .weight_shape(profile.channels_at_stage(stages[i]))
                    .ok_or_else(|| Error::Contract(format!("op {} has a head but no weights", cell.ops[v])))?;
                if shape.iter().product::<usize>() > head.slot {
                    return Err(Error::Contract(format!("head {} slot too small for {shape:?}", head.name)));
                }
                jobs.push((i, v, shape));
            }
        }
        if jobs.is_empty() {
            continue;
        }
        let mut x = tape.concat_rows(&rows)?;
        for &(w, b) in &params.trunk {
            let w = tape.param(store, w);
            let b = tape.param(store, b);
            x = tape.matmul(x, w)?;
            x = tape.add_row(x, b)?;
            x = tape.relu(x)?;
        }
        let w = tape.param(store, head.weight);
        let b = tape.param(store, head.bias);
        let raw = tape.matmul(x, w)?;
        let raw = tape.add_row(raw, b)?;
        for (r, (i, v, shape)) in jobs.into_iter().enumerate() {
            out[i][v] = Some(tape.slice(raw, r * head.slot, &shape)?);
        }
    }
    Ok(GeneratedWeights { cells: out })
}

/// Logits of the generated target network on `batch`.
pub fn hyper_logits(
    tape: &mut Tape,
    store: &ParamStore,
    params: &HypernetParams,
    profile: &SearchSpaceProfile,
    arch: &ArchitectureSpec,
    encoding: &GlobalEncoding,
    batch: &AuxBatch,
) -> Result<Var> {
    let weights = generate_weights(tape, store, params, profile, arch, encoding)?;
    let net = build_target(tape, store, params, profile, arch, weights)?;
    let input = tape.constant(batch.inputs.clone());
    net.forward(tape, input)
}

/// Mean cross-entropy of the generated target network on `batch`.
pub fn hyper_loss(
    tape: &mut Tape,
    store: &ParamStore,
    params: &HypernetParams,
    profile: &SearchSpaceProfile,
    arch: &ArchitectureSpec,
    encoding: &GlobalEncoding,
    batch: &AuxBatch,
) -> Result<Var> {
    if batch.classes != params.classes {
        return Err(Error::Contract(format!(
            "batch has {} classes, classifier {}",
            batch.classes, params.classes
        )));
    }
    let logits = hyper_logits(tape, store, params, profile, arch, encoding, batch)?;
    tape.cross_entropy(logits, &batch.labels)
}

/// Number of rows whose arg-max (first on ties) equals the label.
pub fn count_correct(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    let (b, c) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} rows", labels.len())));
    }
    let mut correct = 0;
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let mut best = 0;
        for j in 1..c {
            if row[j] > row[best] {
                best = j;
            }
        }
        correct += usize::from(best == y);
    }
    Ok(correct)
}
