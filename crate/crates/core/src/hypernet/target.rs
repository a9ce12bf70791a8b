use crate::archspace::{ArchitectureSpec, CellRole, Primitive, SearchSpaceProfile};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Tensor, Var};
use crate::rng::{he_tensor, rng_from};

use super::{GeneratedWeights, HypernetParams};

pub const STEM_SEED: u64 = 0x5354_454d;

/// The fixed `[out, in, 1, 1]` stem convolution.
pub fn stem_weights(in_channels: usize, out_channels: usize) -> Tensor {
    he_tensor(&mut rng_from(STEM_SEED), &[out_channels, in_channels, 1, 1], in_channels)
}

struct Node {
    inputs: Vec<usize>,
    primitive: Option<Primitive>,
    weight: Option<Var>,
}

struct Cell {
    reduce: bool,
    nodes: Vec<Node>,
}

/// A target network whose weights live on a tape.
pub struct TargetNetwork {
    stem: Var,
    classifier: Var,
    cells: Vec<Cell>,
}

/// Checks `weights` against the architecture and wires up the network with
/// the hypernetwork's stem and classifier.
pub fn build_target(
    tape: &mut Tape,
    store: &ParamStore,
    params: &HypernetParams,
    profile: &SearchSpaceProfile,
    arch: &ArchitectureSpec,
    weights: GeneratedWeights,
) -> Result<TargetNetwork> {
    let stem = tape.constant(params.stem.clone());
    let classifier = tape.param(store, params.classifier);
    build_target_with(tape, profile, arch, weights, stem, classifier)
}

/// Like [`build_target`] with an explicit stem (`[C0, C_in, 1, 1]`) and
/// classifier (`[C_last, classes]`).
pub fn build_target_with(
    tape: &mut Tape,
    profile: &SearchSpaceProfile,
    arch: &ArchitectureSpec,
    weights: GeneratedWeights,
    stem: Var,
    classifier: Var,
) -> Result<TargetNetwork> {
    let stages = profile.stages();
    if weights.cells.len() != arch.cells.len() || stages.len() != arch.cells.len() {
        return Err(Error::Contract(format!(
            "{} weight cells for {} architecture cells",
            weights.cells.len(),
            arch.cells.len()
        )));
    }
    let vocab = &profile.vocabulary;
    let mut cells = Vec::with_capacity(arch.cells.len());
    for (i, (cell, w)) in arch.cells.iter().zip(weights.cells).enumerate() {
        let f = cell.num_nodes();
        if w.len() != f {
            return Err(Error::Contract(format!("cell {}: {} weights for {f} nodes", i + 1, w.len())));
        }
        let channels = profile.channels_at_stage(stages[i]);
        let mut nodes = Vec::with_capacity(f);
        for (v, weight) in w.into_iter().enumerate() {
            let primitive = if v == 0 || v == f - 1 {
                None
            } else {
                Some(vocab.primitive(cell.ops[v])?)
            };
            let expected = primitive.and_then(|p| p.weight_shape(channels));
            match (&expected, weight) {
                (None, None) => {}
                (Some(shape), Some(var)) if tape.shape(var) == shape.as_slice() => {}
                (e, got) => {
                    return Err(Error::Contract(format!(
                        "cell {} node {v}: expected weight {e:?}, got {:?}",
                        i + 1,
                        got.map(|g| tape.shape(g).to_vec())
                    )))
                }
            }
            let inputs: Vec<usize> = cell.inputs(v).collect();
            if v > 0 && inputs.is_empty() {
                return Err(Error::Contract(format!("cell {} node {v} has no inputs", i + 1)));
            }
            nodes.push(Node {
                inputs,
                primitive,
                weight,
            });
        }
        cells.push(Cell {
            reduce: arch.roles[i] == CellRole::Reduction,
            nodes,
        });
    }
    Ok(TargetNetwork {
        stem,
        classifier,
        cells,
    })
}

impl TargetNetwork {
    /// `[B, C_in, H, W]` → `[B, classes]` logits.
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let mut x = tape.conv2d(input, self.stem)?;
        for cell in &self.cells {
            if cell.reduce {
                x = tape.downsample(x)?;
            }
            let mut outs: Vec<Var> = Vec::with_capacity(cell.nodes.len());
            outs.push(x);
            for node in &cell.nodes[1..] {
                let mut s = outs[node.inputs[0]];
                for &p in &node.inputs[1..] {
                    s = tape.add(s, outs[p])?;
                }
                let y = match (node.primitive, node.weight) {
                    (None, _) | (Some(Primitive::Identity), _) => s,
                    (Some(Primitive::Conv { .. }), Some(w)) => {
                        let c = tape.conv2d(s, w)?;
                        let n = tape.batch_norm(c)?;
                        tape.relu(n)?
                    }
                    (Some(Primitive::Conv { .. }), None) => unreachable!("checked in build_target"),
                    (Some(Primitive::AvgPool { kernel }), _) => tape.avg_pool(s, kernel)?,
                    (Some(Primitive::MaxPool { kernel }), _) => tape.max_pool(s, kernel)?,
                    (Some(Primitive::Zero), _) => tape.constant(Tensor::zeros(tape.shape(s))),
                };
                outs.push(y);
            }
            x = *outs.last().expect("cell has nodes");
        }
        let pooled = tape.global_avg_pool(x)?;
        tape.matmul(pooled, self.classifier)
    }
}
