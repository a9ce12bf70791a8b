//! Global sequential GCN encoder.
//!
//! Cells are encoded left to right by a directed two-branch GCN. Before a
//! cell enters the GCN, the pooled feature of the previous cell (zero for
//! the first) is added to every node embedding; a cell's own feature is the
//! mean over its final node features, and the architecture embedding is the
//! mean over cell features. Normal and reduction cells use separate weights.

use serde::{Deserialize, Serialize};

use crate::archspace::{ArchitectureSpec, CellRole, CellSpec};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::{he_tensor, normal_tensor, Rng};

/// What is injected into a cell's node embeddings before message passing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingMode {
    /// The previous cell's pooled feature.
    #[default]
    CellFeature,
    /// A learned per-position vector (connectivity ablation).
    PositionEmbedding,
}

/// Weights of one role's GCN.
#[derive(Clone, Debug)]
pub struct RoleWeights {
    /// `labels × d` op-embedding table.
    pub embedding: ParamId,
    /// `W⁺` per layer, `d × d`.
    pub forward: Vec<ParamId>,
    /// `W⁻` per layer, `d × d`.
    pub backward: Vec<ParamId>,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub normal: RoleWeights,
    pub reduction: RoleWeights,
    /// `N × d` position table, present only for position-embedding models.
    pub positions: Option<ParamId>,
    pub dim: usize,
    pub layers: usize,
}

impl EncoderParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        num_labels: usize,
        dim: usize,
        layers: usize,
        positions: Option<usize>,
    ) -> Result<Self> {
        if dim == 0 || layers == 0 {
            return Err(Error::Config("encoder needs dim ≥ 1 and layers ≥ 1".into()));
        }
        let mut role = |name: &str, store: &mut ParamStore| -> Result<RoleWeights> {
            let embedding = store.insert(
                format!("encoder.{name}.embedding"),
                normal_tensor(rng, &[num_labels, dim], 1.0),
            )?;
            let mut forward = Vec::with_capacity(layers);
            let mut backward = Vec::with_capacity(layers);
            for l in 0..layers {
                forward.push(store.insert(
                    format!("encoder.{name}.w_fwd.{l}"),
                    he_tensor(rng, &[dim, dim], dim),
                )?);
                backward.push(store.insert(
                    format!("encoder.{name}.w_bwd.{l}"),
                    he_tensor(rng, &[dim, dim], dim),
                )?);
            }
            Ok(RoleWeights {
                embedding,
                forward,
                backward,
            })
        };
        let normal = role("normal", store)?;
        let reduction = role("reduction", store)?;
        let positions = match positions {
            Some(n) => Some(store.insert("encoder.positions", normal_tensor(rng, &[n, dim], 1.0))?),
            None => None,
        };
        Ok(EncoderParams {
            normal,
            reduction,
            positions,
            dim,
            layers,
        })
    }

    pub fn role(&self, role: CellRole) -> &RoleWeights {
        match role {
            CellRole::Normal => &self.normal,
            CellRole::Reduction => &self.reduction,
        }
    }
}

/// Output of one cell: final node features `Ṽ` (`F × d`) and the pooled
/// cell feature `z` (`1 × d`).
#[derive(Clone, Copy, Debug)]
pub struct CellEncoding {
    pub node_features: Var,
    pub feature: Var,
}

/// All intermediates of an architecture encoding, recorded on a tape.
#[derive(Clone, Debug)]
pub struct GlobalEncoding {
    pub cells: Vec<CellEncoding>,
    /// `h`, the mean of the cell features.
    pub embedding: Var,
}

/// One message-passing layer:
/// `½·relu(E·V·W⁺) + ½·relu(Eᵀ·V·W⁻)`.
pub fn gcn_layer(
    tape: &mut Tape,
    adj: Var,
    adj_t: Var,
    v: Var,
    w_fwd: Var,
    w_bwd: Var,
) -> Result<Var> {
    let ev = tape.matmul(adj, v)?;
    let fwd = tape.matmul(ev, w_fwd)?;
    let fwd = tape.relu(fwd)?;
    let etv = tape.matmul(adj_t, v)?;
    let bwd = tape.matmul(etv, w_bwd)?;
    let bwd = tape.relu(bwd)?;
    let sum = tape.add(fwd, bwd)?;
    tape.scale(sum, 0.5)
}

/// Encodes one cell with `injected` (`1 × d`) added to every node embedding.
pub fn encode_cell(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EncoderParams,
    cell: &CellSpec,
    role: CellRole,
    injected: Var,
) -> Result<CellEncoding> {
    let f = cell.num_nodes();
    let w = params.role(role);
    let adj_t = Tensor::new(vec![f, f], cell.adjacency_matrix())?;
    let adj = tape.constant(adj_t.clone());
    let adj_t = tape.constant(adj_t.transpose()?);

    let table = tape.param(store, w.embedding);
    let embedded = tape.gather_rows(table, &cell.ops)?;
    let mut v = tape.add_row(embedded, injected)?;
    for (&wf, &wb) in w.forward.iter().zip(&w.backward) {
        let wf = tape.param(store, wf);
        let wb = tape.param(store, wb);
        v = gcn_layer(tape, adj, adj_t, v, wf, wb)?;
    }
    let feature = tape.mean_rows(v)?;
    Ok(CellEncoding {
        node_features: v,
        feature,
    })
}

/// Sequential encoding with previous-cell feature injection.
pub fn encode_architecture(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EncoderParams,
    arch: &ArchitectureSpec,
) -> Result<GlobalEncoding> {
    encode_with_positions(tape, store, params, arch, EncodingMode::CellFeature)
}

/// Sequential encoding in either injection mode.
pub fn encode_with_positions(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EncoderParams,
    arch: &ArchitectureSpec,
    mode: EncodingMode,
) -> Result<GlobalEncoding> {
    if arch.cells.is_empty() || arch.cells.len() != arch.roles.len() {
        return Err(Error::Contract(format!(
            "architecture has {} cells and {} roles",
            arch.cells.len(),
            arch.roles.len()
        )));
    }
    let table = match mode {
        EncodingMode::CellFeature => None,
        EncodingMode::PositionEmbedding => {
            let id = params.positions.ok_or_else(|| {
                Error::Contract("position-embedding mode needs a position table".into())
            })?;
            let table = tape.param(store, id);
            let rows = tape.shape(table)[0];
            if rows < arch.cells.len() {
                return Err(Error::Contract(format!(
                    "position table has {rows} rows for {} cells",
                    arch.cells.len()
                )));
            }
            Some(table)
        }
    };

    let mut prev = tape.constant(Tensor::zeros(&[1, params.dim]));
    let mut cells = Vec::with_capacity(arch.cells.len());
    for (i, (cell, &role)) in arch.cells.iter().zip(&arch.roles).enumerate() {
        let injected = match table {
            None => prev,
            Some(t) => tape.gather_rows(t, &[i])?,
        };
        let enc = encode_cell(tape, store, params, cell, role, injected)?;
        prev = enc.feature;
        cells.push(enc);
    }

    let mut total = cells[0].feature;
    for c in &cells[1..] {
        total = tape.add(total, c.feature)?;
    }
    let embedding = tape.scale(total, 1.0 / cells.len() as f64)?;
    Ok(GlobalEncoding { cells, embedding })
}
