//! Cell-based architectures, op vocabularies, search-space profiles and the
//! line-delimited bench file format.
//!
//! A cell is a DAG over `F` nodes given by a strictly upper-triangular
//! adjacency matrix. Node `0` is the cell input and node `F-1` the cell
//! output; every node in between carries an operation from the profile's
//! vocabulary. The endpoints carry the reserved labels
//! [`OpVocabulary::input_label`] and [`OpVocabulary::output_label`], which
//! sit just past the last vocabulary index.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

/// What an operation computes inside a target network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    /// Same-padded conv → batch norm → ReLU, square kernel.
    Conv { kernel: usize },
    Identity,
    /// Stride-preserving average pooling.
    AvgPool { kernel: usize },
    /// Stride-preserving max pooling.
    MaxPool { kernel: usize },
    Zero,
}

impl Primitive {
    /// Parses a shape template such as `conv3x3`, `avgpool2x2`, `identity`.
    pub fn parse(shape: &str) -> Result<Self> {
        let square = |rest: &str| -> Option<usize> {
            let (a, b) = rest.split_once('x')?;
            let (a, b) = (a.parse().ok()?, b.parse::<usize>().ok()?);
            (a == b && a > 0).then_some(a)
        };
        let bad = || Error::Config(format!("unknown op shape template {shape:?}"));
        match shape {
            "identity" | "skip" => Ok(Primitive::Identity),
            "zero" | "none" => Ok(Primitive::Zero),
            s if s.starts_with("conv") => {
                let k = square(&s[4..]).ok_or_else(bad)?;
                if k % 2 == 0 {
                    return Err(Error::Config(format!("conv kernel must be odd in {shape:?}")));
                }
                Ok(Primitive::Conv { kernel: k })
            }
            s if s.starts_with("avgpool") => Ok(Primitive::AvgPool {
                kernel: square(&s[7..]).ok_or_else(bad)?,
            }),
            s if s.starts_with("maxpool") => Ok(Primitive::MaxPool {
                kernel: square(&s[7..]).ok_or_else(bad)?,
            }),
            _ => Err(bad()),
        }
    }

    pub fn is_parametric(self) -> bool {
        matches!(self, Primitive::Conv { .. })
    }

    /// Weight shape for a node of this primitive at channel width `c`.
    pub fn weight_shape(self, channels: usize) -> Option<Vec<usize>> {
        match self {
            Primitive::Conv { kernel } => Some(vec![channels, channels, kernel, kernel]),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Parametric,
    ParameterFree,
}

/// One vocabulary entry as it appears in a profile file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpDef {
    pub name: String,
    pub kind: OpKind,
    pub shape: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<String>,
}

impl OpDef {
    pub fn new(name: &str, shape: &str, head: Option<&str>) -> Self {
        OpDef {
            name: name.into(),
            kind: if head.is_some() {
                OpKind::Parametric
            } else {
                OpKind::ParameterFree
            },
            shape: shape.into(),
            head: head.map(Into::into),
        }
    }
}

/// Ordered list of interior operations.
#[derive(Clone, Debug, PartialEq)]
pub struct OpVocabulary {
    ops: Vec<OpDef>,
    primitives: Vec<Primitive>,
    heads: Vec<String>,
}

impl OpVocabulary {
    pub fn new(ops: Vec<OpDef>) -> Result<Self> {
        let mut names = BTreeSet::new();
        let mut heads: Vec<String> = Vec::new();
        let mut primitives = Vec::with_capacity(ops.len());
        for op in &ops {
            if !names.insert(op.name.as_str()) {
                return Err(Error::Config(format!("duplicate op name {:?}", op.name)));
            }
            let prim = Primitive::parse(&op.shape)?;
            match (op.kind, &op.head) {
                (OpKind::Parametric, Some(h)) => {
                    if !prim.is_parametric() {
                        return Err(Error::Config(format!(
                            "op {:?} is marked parametric but {:?} has no weights",
                            op.name, op.shape
                        )));
                    }
                    if !heads.contains(h) {
                        heads.push(h.clone());
                    }
                }
                (OpKind::Parametric, None) => {
                    return Err(Error::Config(format!("parametric op {:?} has no head", op.name)))
                }
                (OpKind::ParameterFree, Some(_)) => {
                    return Err(Error::Config(format!(
                        "parameter-free op {:?} must not name a head",
                        op.name
                    )))
                }
                (OpKind::ParameterFree, None) => {
                    if prim.is_parametric() {
                        return Err(Error::Config(format!(
                            "op {:?} with shape {:?} needs weights; mark it parametric",
                            op.name, op.shape
                        )));
                    }
                }
            }
            primitives.push(prim);
        }
        // Every parametric op in one head must share a primitive so the head
        // slices reshape consistently.
        for h in &heads {
            let prims: BTreeSet<String> = ops
                .iter()
                .zip(&primitives)
                .filter(|(o, _)| o.head.as_ref() == Some(h))
                .map(|(_, p)| format!("{p:?}"))
                .collect();
            if prims.len() > 1 {
                return Err(Error::Config(format!(
                    "head {h:?} mixes shape templates {prims:?}"
                )));
            }
        }
        Ok(OpVocabulary {
            ops,
            primitives,
            heads,
        })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[OpDef] {
        &self.ops
    }

    pub fn input_label(&self) -> usize {
        self.ops.len()
    }

    pub fn output_label(&self) -> usize {
        self.ops.len() + 1
    }

    /// Interior ops plus the two endpoint labels.
    pub fn num_labels(&self) -> usize {
        self.ops.len() + 2
    }

    /// Primitive for an interior op index.
    pub fn primitive(&self, op: usize) -> Result<Primitive> {
        self.primitives.get(op).copied().ok_or(Error::Vocabulary {
            index: op,
            len: self.ops.len(),
        })
    }

    pub fn heads(&self) -> &[String] {
        &self.heads
    }

    /// Head index of a parametric op, `None` for parameter-free ops.
    pub fn head_of(&self, op: usize) -> Option<usize> {
        let h = self.ops.get(op)?.head.as_ref()?;
        self.heads.iter().position(|x| x == h)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.ops.iter().position(|o| o.name == name)
    }

    pub fn label_name(&self, label: usize) -> &str {
        if label == self.input_label() {
            "input"
        } else if label == self.output_label() {
            "output"
        } else {
            self.ops.get(label).map_or("?", |o| o.name.as_str())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellRole {
    Normal,
    Reduction,
}

/// One DAG cell: adjacency (`adj[i][j] == 1` for an edge `i → j`) and one op
/// label per node.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellSpec {
    pub adj: Vec<Vec<u8>>,
    pub ops: Vec<usize>,
}

impl CellSpec {
    pub fn num_nodes(&self) -> usize {
        self.ops.len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adj[from][to] == 1
    }

    /// Predecessors of `node`, ascending.
    pub fn inputs(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..node).filter(move |&i| self.adj[i][node] == 1)
    }

    /// Adjacency as a dense `F×F` row-major `f64` matrix.
    pub fn adjacency_matrix(&self) -> Vec<f64> {
        self.adj.iter().flatten().map(|&b| f64::from(b)).collect()
    }

    fn key_into(&self, out: &mut String) {
        for row in &self.adj {
            for &b in row {
                out.push(if b == 1 { '1' } else { '0' });
            }
        }
        out.push(':');
        for (i, op) in self.ops.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&op.to_string());
        }
    }
}

/// The macro structure: an ordered list of cells with role tags.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub cells: Vec<CellSpec>,
    pub roles: Vec<CellRole>,
}

impl ArchitectureSpec {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Canonical string form, used as an identity for caching and ids.
    pub fn key(&self) -> String {
        let mut s = String::new();
        for (i, c) in self.cells.iter().enumerate() {
            if i > 0 {
                s.push('|');
            }
            c.key_into(&mut s);
        }
        s
    }
}

/// Which cells of an architecture repeat one another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellTemplate {
    /// Every cell is chosen independently.
    Independent,
    /// All normal cells share one spec, all reduction cells another.
    SharedPerRole,
    /// All normal cells share one spec; reduction cells are the profile's
    /// fixed `reduction_cell`.
    SharedNormalFixedReduction,
}

/// A search space: vocabulary, cell size, macro layout and cell sharing.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpaceProfile {
    pub name: String,
    pub vocabulary: OpVocabulary,
    /// Nodes per searched cell, endpoints included.
    pub nodes: usize,
    pub num_cells: usize,
    /// 1-based positions of reduction cells.
    pub reduction_positions: Vec<usize>,
    pub template: CellTemplate,
    pub reduction_cell: Option<CellSpec>,
    /// Channel width of the first stage; doubles at every reduction.
    pub stem_channels: usize,
}

/// A failed structural check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub cell: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cell {
            Some(c) => write!(f, "cell {}: {}", c + 1, self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Largest cell size and vocabulary that `enumerate_cells` accepts.
pub const ENUMERATION_MAX_NODES: usize = 5;
pub const ENUMERATION_MAX_OPS: usize = 6;

impl SearchSpaceProfile {
    pub fn micro() -> Self {
        let vocabulary = OpVocabulary::new(vec![
            OpDef::new("conv3x3", "conv3x3", Some("conv3x3")),
            OpDef::new("conv1x1", "conv1x1", Some("conv1x1")),
            OpDef::new("skip", "identity", None),
            OpDef::new("avgpool2x2", "avgpool2x2", None),
            OpDef::new("zero", "zero", None),
        ])
        .expect("builtin vocabulary");
        let (i, o) = (vocabulary.input_label(), vocabulary.output_label());
        SearchSpaceProfile {
            name: "micro".into(),
            nodes: 4,
            num_cells: 5,
            reduction_positions: vec![3],
            template: CellTemplate::SharedNormalFixedReduction,
            reduction_cell: Some(CellSpec {
                adj: vec![
                    vec![0, 1, 1, 0],
                    vec![0, 0, 0, 1],
                    vec![0, 0, 0, 1],
                    vec![0, 0, 0, 0],
                ],
                ops: vec![i, 0, 2, o],
            }),
            stem_channels: 8,
            vocabulary,
        }
    }

    /// The micro space cut down to one normal and one reduction cell.
    pub fn micro_two_cell() -> Self {
        SearchSpaceProfile {
            name: "micro-2".into(),
            num_cells: 2,
            reduction_positions: vec![2],
            ..Self::micro()
        }
    }

    pub fn nb101_like() -> Self {
        let vocabulary = OpVocabulary::new(vec![
            OpDef::new("conv3x3-bn-relu", "conv3x3", Some("conv3x3")),
            OpDef::new("conv1x1-bn-relu", "conv1x1", Some("conv1x1")),
            OpDef::new("maxpool3x3", "maxpool3x3", None),
        ])
        .expect("builtin vocabulary");
        let (i, o) = (vocabulary.input_label(), vocabulary.output_label());
        SearchSpaceProfile {
            name: "nb101-like".into(),
            nodes: 7,
            num_cells: 11,
            reduction_positions: vec![3, 7],
            template: CellTemplate::SharedNormalFixedReduction,
            reduction_cell: Some(CellSpec {
                adj: vec![vec![0, 1, 0], vec![0, 0, 1], vec![0, 0, 0]],
                ops: vec![i, 2, o],
            }),
            stem_channels: 8,
            vocabulary,
        }
    }

    pub fn nb201_like() -> Self {
        let vocabulary = OpVocabulary::new(vec![
            OpDef::new("none", "zero", None),
            OpDef::new("skip_connect", "identity", None),
            OpDef::new("nor_conv_1x1", "conv1x1", Some("conv1x1")),
            OpDef::new("nor_conv_3x3", "conv3x3", Some("conv3x3")),
            OpDef::new("avg_pool_3x3", "avgpool3x3", None),
        ])
        .expect("builtin vocabulary");
        let (i, o) = (vocabulary.input_label(), vocabulary.output_label());
        SearchSpaceProfile {
            name: "nb201-like".into(),
            nodes: 8,
            num_cells: 17,
            reduction_positions: vec![6, 12],
            template: CellTemplate::SharedNormalFixedReduction,
            reduction_cell: Some(CellSpec {
                adj: vec![
                    vec![0, 1, 0, 1],
                    vec![0, 0, 1, 0],
                    vec![0, 0, 0, 1],
                    vec![0, 0, 0, 0],
                ],
                ops: vec![i, 3, 3, o],
            }),
            stem_channels: 8,
            vocabulary,
        }
    }

    /// Looks up a builtin profile by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "micro" => Some(Self::micro()),
            "micro-2" => Some(Self::micro_two_cell()),
            "nb101-like" => Some(Self::nb101_like()),
            "nb201-like" => Some(Self::nb201_like()),
            _ => None,
        }
    }

    /// A builtin name or a path to a profile file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(p) = Self::builtin(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if path.is_file() {
            return read_profile(path);
        }
        Err(Error::Config(format!(
            "--profile {name_or_path:?} is neither a builtin profile (micro, micro-2, nb101-like, nb201-like) nor a readable file"
        )))
    }

    /// Role of each position in the macro layout.
    pub fn roles(&self) -> Vec<CellRole> {
        (1..=self.num_cells)
            .map(|i| {
                if self.reduction_positions.contains(&i) {
                    CellRole::Reduction
                } else {
                    CellRole::Normal
                }
            })
            .collect()
    }

    /// Stage index (number of reductions so far, inclusive) per cell.
    pub fn stages(&self) -> Vec<usize> {
        let mut stage = 0;
        self.roles()
            .into_iter()
            .map(|r| {
                if r == CellRole::Reduction {
                    stage += 1;
                }
                stage
            })
            .collect()
    }

    pub fn num_stages(&self) -> usize {
        self.reduction_positions.len() + 1
    }

    pub fn channels_at_stage(&self, stage: usize) -> usize {
        self.stem_channels << stage
    }

    /// Checks every structural invariant and returns all violations.
    pub fn validate(&self, arch: &ArchitectureSpec) -> Vec<Violation> {
        let mut out = Vec::new();
        let top = |m: String| Violation {
            cell: None,
            message: m,
        };
        if arch.cells.is_empty() {
            out.push(top("architecture has no cells".into()));
            return out;
        }
        if arch.cells.len() != arch.roles.len() {
            out.push(top(format!(
                "{} cells but {} roles",
                arch.cells.len(),
                arch.roles.len()
            )));
        }
        if arch.cells.len() != self.num_cells {
            out.push(top(format!(
                "profile {} expects {} cells, got {}",
                self.name,
                self.num_cells,
                arch.cells.len()
            )));
        }
        let expected = self.roles();
        if arch.roles.len() == expected.len() && arch.roles != expected {
            out.push(top(format!(
                "role pattern does not match reduction positions {:?}",
                self.reduction_positions
            )));
        }
        for (i, cell) in arch.cells.iter().enumerate() {
            for m in self.cell_violations(cell) {
                out.push(Violation {
                    cell: Some(i),
                    message: m,
                });
            }
        }
        if out.is_empty() {
            out.extend(self.template_violations(arch).into_iter().map(top));
        }
        out
    }

    fn template_violations(&self, arch: &ArchitectureSpec) -> Vec<String> {
        let mut out = Vec::new();
        let mut first: [Option<&CellSpec>; 2] = [None, None];
        for (cell, role) in arch.cells.iter().zip(&arch.roles) {
            let r = *role as usize;
            let shared = match (self.template, role) {
                (CellTemplate::Independent, _) => false,
                (CellTemplate::SharedNormalFixedReduction, CellRole::Reduction) => {
                    if Some(cell) != self.reduction_cell.as_ref() {
                        out.push("reduction cell differs from the profile's fixed reduction cell".into());
                    }
                    false
                }
                _ => true,
            };
            if shared {
                match first[r] {
                    None => first[r] = Some(cell),
                    Some(f) if f != cell => {
                        out.push(format!("{role:?} cells must share one spec in this profile"));
                        break;
                    }
                    _ => {}
                }
            }
        }
        out
    }

    /// Structural problems of a single cell.
    pub fn cell_violations(&self, cell: &CellSpec) -> Vec<String> {
        let mut out = Vec::new();
        let f = cell.ops.len();
        if f < 2 {
            out.push(format!("cell needs at least 2 nodes, has {f}"));
            return out;
        }
        if f > self.nodes {
            out.push(format!("cell has {f} nodes, profile allows {}", self.nodes));
        }
        if cell.adj.len() != f || cell.adj.iter().any(|r| r.len() != f) {
            out.push(format!("adjacency is not {f}x{f}"));
            return out;
        }
        if cell.adj.iter().flatten().any(|&b| b > 1) {
            out.push("adjacency entries must be 0 or 1".into());
        }
        if (0..f).any(|i| (0..=i).any(|j| cell.adj[i][j] != 0)) {
            out.push("not upper-triangular".into());
        }
        let v = &self.vocabulary;
        if cell.ops[0] != v.input_label() {
            out.push(format!("node 1 must carry the input label {}", v.input_label()));
        }
        if cell.ops[f - 1] != v.output_label() {
            out.push(format!("last node must carry the output label {}", v.output_label()));
        }
        for (n, &op) in cell.ops.iter().enumerate().take(f - 1).skip(1) {
            if op >= v.len() {
                out.push(format!("node {} op index {op} out of range 0..{}", n + 1, v.len()));
            }
        }
        let forward = reachable(f, |i, j| i < j && cell.adj[i][j] == 1, 0);
        let backward = reachable(f, |i, j| j < i && cell.adj[j][i] == 1, f - 1);
        for n in 0..f {
            if !(forward[n] && backward[n]) {
                out.push(format!("dangling node {}", n + 1));
            }
        }
        out
    }

    /// Draws a valid architecture uniformly over the profile's valid
    /// searchable cells. Deterministic per seed.
    pub fn sample_random(&self, seed: u64) -> ArchitectureSpec {
        let mut rng = rng_from(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with(&self, rng: &mut Rng) -> ArchitectureSpec {
        let genome = (0..self.genome_len()).map(|_| self.sample_cell(rng)).collect();
        self.assemble(genome)
    }

    /// Rejection sampling: every (adjacency, ops) draw is equally likely, so
    /// accepted cells are uniform over valid cells.
    pub fn sample_cell(&self, rng: &mut Rng) -> CellSpec {
        let f = self.nodes;
        let v = &self.vocabulary;
        loop {
            let mut adj = vec![vec![0u8; f]; f];
            for (i, row) in adj.iter_mut().enumerate() {
                for cell in row.iter_mut().skip(i + 1) {
                    *cell = u8::from(rng.random_bool(0.5));
                }
            }
            let mut ops = vec![v.input_label(); f];
            ops[f - 1] = v.output_label();
            for op in ops.iter_mut().take(f - 1).skip(1) {
                *op = rng.random_range(0..v.len());
            }
            let cell = CellSpec { adj, ops };
            if self.cell_violations(&cell).is_empty() {
                return cell;
            }
        }
    }

    /// Number of independently chosen cells.
    pub fn genome_len(&self) -> usize {
        match self.template {
            CellTemplate::Independent => self.num_cells,
            CellTemplate::SharedPerRole => 1 + usize::from(!self.reduction_positions.is_empty()),
            CellTemplate::SharedNormalFixedReduction => 1,
        }
    }

    /// The independently chosen cells of an architecture of this profile.
    pub fn genome(&self, arch: &ArchitectureSpec) -> Vec<CellSpec> {
        match self.template {
            CellTemplate::Independent => arch.cells.clone(),
            CellTemplate::SharedPerRole | CellTemplate::SharedNormalFixedReduction => {
                let mut g = Vec::new();
                for role in [CellRole::Normal, CellRole::Reduction] {
                    if role == CellRole::Reduction
                        && self.template == CellTemplate::SharedNormalFixedReduction
                    {
                        continue;
                    }
                    if let Some(i) = arch.roles.iter().position(|&r| r == role) {
                        g.push(arch.cells[i].clone());
                    }
                }
                g
            }
        }
    }

    /// Expands a genome (see [`Self::genome`]) into the full macro layout.
    pub fn assemble(&self, genome: Vec<CellSpec>) -> ArchitectureSpec {
        let roles = self.roles();
        let cells = match self.template {
            CellTemplate::Independent => genome,
            CellTemplate::SharedPerRole => roles
                .iter()
                .map(|r| match r {
                    CellRole::Normal => genome[0].clone(),
                    CellRole::Reduction => genome[genome.len() - 1].clone(),
                })
                .collect(),
            CellTemplate::SharedNormalFixedReduction => roles
                .iter()
                .map(|r| match r {
                    CellRole::Normal => genome[0].clone(),
                    CellRole::Reduction => self
                        .reduction_cell
                        .clone()
                        .expect("profile with fixed reduction cell"),
                })
                .collect(),
        };
        ArchitectureSpec { cells, roles }
    }

    /// Every valid cell with exactly `nodes` nodes, in a fixed order.
    pub fn enumerate_cells(&self) -> Result<Vec<CellSpec>> {
        let f = self.nodes;
        let k = self.vocabulary.len();
        if f > ENUMERATION_MAX_NODES || k > ENUMERATION_MAX_OPS {
            return Err(Error::Config(format!(
                "enumeration refused: needs at most {ENUMERATION_MAX_NODES} nodes and \
                 {ENUMERATION_MAX_OPS} ops, profile {} has {f} nodes and {k} ops",
                self.name
            )));
        }
        let pairs: Vec<(usize, usize)> = (0..f)
            .flat_map(|i| (i + 1..f).map(move |j| (i, j)))
            .collect();
        let interior = f.saturating_sub(2);
        let op_combos = k.pow(interior as u32);
        let v = &self.vocabulary;
        let mut out = Vec::new();
        for mask in 0u32..(1 << pairs.len()) {
            let mut adj = vec![vec![0u8; f]; f];
            for (b, &(i, j)) in pairs.iter().enumerate() {
                adj[i][j] = ((mask >> b) & 1) as u8;
            }
            for combo in 0..op_combos {
                let mut ops = vec![v.input_label(); f];
                ops[f - 1] = v.output_label();
                let mut c = combo;
                for op in ops.iter_mut().take(f - 1).skip(1) {
                    *op = c % k;
                    c /= k;
                }
                let cell = CellSpec {
                    adj: adj.clone(),
                    ops,
                };
                if self.cell_violations(&cell).is_empty() {
                    out.push(cell);
                }
            }
        }
        Ok(out)
    }

    /// Every architecture of the profile, when its genome is a single cell.
    pub fn enumerate_architectures(&self) -> Result<Vec<ArchitectureSpec>> {
        if self.genome_len() != 1 {
            return Err(Error::Config(format!(
                "profile {} has {} independent cells; only single-cell genomes are enumerable",
                self.name,
                self.genome_len()
            )));
        }
        Ok(self
            .enumerate_cells()?
            .into_iter()
            .map(|c| self.assemble(vec![c]))
            .collect())
    }
}

fn reachable(f: usize, edge: impl Fn(usize, usize) -> bool, start: usize) -> Vec<bool> {
    let mut seen = vec![false; f];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..f {
            if !seen[j] && edge(i, j) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    name: String,
    #[serde(rename = "F")]
    nodes: usize,
    #[serde(rename = "N")]
    num_cells: usize,
    reduction_positions: Vec<usize>,
    #[serde(default = "default_stem")]
    stem_channels: usize,
    #[serde(default = "default_template")]
    template: CellTemplate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reduction_cell: Option<CellSpec>,
    ops: Vec<OpDef>,
}

fn default_stem() -> usize {
    8
}

fn default_template() -> CellTemplate {
    CellTemplate::Independent
}

impl TryFrom<ProfileFile> for SearchSpaceProfile {
    type Error = Error;

    fn try_from(p: ProfileFile) -> Result<Self> {
        if p.num_cells == 0 {
            return Err(Error::Config("N must be at least 1".into()));
        }
        if p.nodes < 2 {
            return Err(Error::Config("F must be at least 2".into()));
        }
        if let Some(&bad) = p.reduction_positions.iter().find(|&&r| r == 0 || r > p.num_cells) {
            return Err(Error::Config(format!(
                "reduction position {bad} outside 1..={}",
                p.num_cells
            )));
        }
        if p.template == CellTemplate::SharedNormalFixedReduction && p.reduction_cell.is_none() {
            return Err(Error::Config(
                "template shared-normal-fixed-reduction needs a reduction_cell".into(),
            ));
        }
        let profile = SearchSpaceProfile {
            name: p.name,
            vocabulary: OpVocabulary::new(p.ops)?,
            nodes: p.nodes,
            num_cells: p.num_cells,
            reduction_positions: p.reduction_positions,
            template: p.template,
            reduction_cell: p.reduction_cell,
            stem_channels: p.stem_channels,
        };
        if let Some(rc) = &profile.reduction_cell {
            let v = profile.cell_violations(rc);
            if !v.is_empty() {
                return Err(Error::Config(format!("invalid reduction_cell: {}", v.join("; "))));
            }
        }
        Ok(profile)
    }
}

pub fn read_profile(path: &Path) -> Result<SearchSpaceProfile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    profile_from_toml(&text).map_err(|e| match e {
        Error::Format { msg, .. } => Error::Format {
            path: path.into(),
            msg,
        },
        e => e,
    })
}

pub fn profile_from_toml(text: &str) -> Result<SearchSpaceProfile> {
    let file: ProfileFile = toml::from_str(text).map_err(|e| Error::Format {
        path: "<profile>".into(),
        msg: e.to_string(),
    })?;
    file.try_into()
}

pub fn profile_to_toml(profile: &SearchSpaceProfile) -> Result<String> {
    let file = ProfileFile {
        name: profile.name.clone(),
        nodes: profile.nodes,
        num_cells: profile.num_cells,
        reduction_positions: profile.reduction_positions.clone(),
        stem_channels: profile.stem_channels,
        template: profile.template,
        reduction_cell: profile.reduction_cell.clone(),
        ops: profile.vocabulary.ops().to_vec(),
    };
    toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))
}

pub fn write_profile(path: &Path, profile: &SearchSpaceProfile) -> Result<()> {
    let text = profile_to_toml(profile)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One architecture–accuracy pair. Accuracies are fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub id: String,
    pub architecture: ArchitectureSpec,
    pub val_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct BenchLine {
    id: String,
    cells: Vec<CellSpec>,
    roles: Vec<CellRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    val_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    test_acc: Option<f64>,
}

/// How accuracies are expressed in a bench file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AccuracyScale {
    #[default]
    Fraction,
    /// Values in `[0, 100]`, divided by 100 on ingestion.
    Percent,
}

pub fn read_bench(path: &Path) -> Result<Vec<BenchRecord>> {
    read_bench_scaled(path, AccuracyScale::Fraction)
}

pub fn read_bench_scaled(path: &Path, scale: AccuracyScale) -> Result<Vec<BenchRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let div = match scale {
        AccuracyScale::Fraction => 1.0,
        AccuracyScale::Percent => 100.0,
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let rec: BenchLine = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        let val = rec
            .val_acc
            .ok_or_else(|| parse("missing field `val_acc`".into()))?
            / div;
        let test = rec.test_acc.map(|t| t / div);
        for (what, acc) in [("val_acc", Some(val)), ("test_acc", test)] {
            if let Some(a) = acc {
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::Validation(format!(
                        "{}:{}: {what} {a} outside [0, 1]",
                        path.display(),
                        i + 1
                    )));
                }
            }
        }
        out.push(BenchRecord {
            id: rec.id,
            architecture: ArchitectureSpec {
                cells: rec.cells,
                roles: rec.roles,
            },
            val_acc: val,
            test_acc: test,
        });
    }
    Ok(out)
}

pub fn write_bench(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let lines = records.iter().map(|r| BenchLine {
        id: r.id.clone(),
        cells: r.architecture.cells.clone(),
        roles: r.architecture.roles.clone(),
        val_acc: Some(r.val_acc),
        test_acc: r.test_acc,
    });
    write_lines(path, lines)
}

/// Bench-format lines without accuracies (search output).
pub fn write_architectures(path: &Path, archs: &[(String, ArchitectureSpec)]) -> Result<()> {
    let lines = archs.iter().map(|(id, a)| BenchLine {
        id: id.clone(),
        cells: a.cells.clone(),
        roles: a.roles.clone(),
        val_acc: None,
        test_acc: None,
    });
    write_lines(path, lines)
}

fn write_lines(path: &Path, lines: impl Iterator<Item = BenchLine>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        let s = serde_json::to_string(&line).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_profile(nodes: usize, ops: usize) -> SearchSpaceProfile {
        let defs = (0..ops)
            .map(|i| OpDef::new(&format!("op{i}"), "identity", None))
            .collect();
        SearchSpaceProfile {
            name: "tiny".into(),
            vocabulary: OpVocabulary::new(defs).unwrap(),
            nodes,
            num_cells: 1,
            reduction_positions: vec![],
            template: CellTemplate::Independent,
            reduction_cell: None,
            stem_channels: 8,
        }
    }

    fn conv_chain(p: &SearchSpaceProfile) -> CellSpec {
        let v = &p.vocabulary;
        CellSpec {
            adj: vec![
                vec![0, 1, 0, 1],
                vec![0, 0, 1, 0],
                vec![0, 0, 0, 1],
                vec![0, 0, 0, 0],
            ],
            ops: vec![v.input_label(), 0, 1, v.output_label()],
        }
    }

    #[test]
    fn valid_micro_arch_passes() {
        let p = SearchSpaceProfile::micro();
        let arch = p.assemble(vec![conv_chain(&p)]);
        assert!(p.validate(&arch).is_empty(), "{:?}", p.validate(&arch));
    }

    #[test]
    fn lower_triangular_entry_is_reported() {
        let p = SearchSpaceProfile::micro();
        let mut cell = conv_chain(&p);
        cell.adj[2][1] = 1;
        let arch = p.assemble(vec![cell]);
        let v = p.validate(&arch);
        assert!(v.iter().any(|v| v.message == "not upper-triangular"), "{v:?}");
    }

    #[test]
    fn unreachable_node_is_dangling() {
        let p = SearchSpaceProfile::micro();
        let mut cell = conv_chain(&p);
        cell.adj[0][1] = 0;
        let v = p.cell_violations(&cell);
        assert!(v.contains(&"dangling node 2".to_string()), "{v:?}");
    }

    #[test]
    fn role_and_op_range_violations() {
        let p = SearchSpaceProfile::micro();
        let mut arch = p.assemble(vec![conv_chain(&p)]);
        arch.roles.swap(0, 2);
        arch.cells[0].ops[1] = 99;
        let v = p.validate(&arch);
        assert!(v.iter().any(|v| v.message.contains("role pattern")));
        assert!(v.iter().any(|v| v.message.contains("out of range")));
    }

    #[test]
    fn enumeration_small_cases() {
        assert_eq!(tiny_profile(2, 1).enumerate_cells().unwrap().len(), 1);
        assert_eq!(tiny_profile(3, 2).enumerate_cells().unwrap().len(), 4);
    }

    #[test]
    fn micro_enumeration_golden_count() {
        // 10 valid 4-node DAGs × 5² interior op choices.
        let cells = SearchSpaceProfile::micro().enumerate_cells().unwrap();
        assert_eq!(cells.len(), 250);
        let unique: BTreeSet<String> = cells
            .iter()
            .map(|c| {
                let mut s = String::new();
                c.key_into(&mut s);
                s
            })
            .collect();
        assert_eq!(unique.len(), 250);
    }

    #[test]
    fn enumeration_refuses_large_spaces() {
        let err = SearchSpaceProfile::nb201_like().enumerate_cells().unwrap_err();
        assert!(err.to_string().contains("at most 5 nodes"));
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = SearchSpaceProfile::micro();
        assert_eq!(p.sample_random(7), p.sample_random(7));
    }

    #[test]
    fn builtin_profiles_layouts() {
        let nb101 = SearchSpaceProfile::nb101_like();
        assert_eq!((nb101.num_cells, nb101.reduction_positions.clone()), (11, vec![3, 7]));
        let nb201 = SearchSpaceProfile::nb201_like();
        assert_eq!((nb201.num_cells, nb201.reduction_positions.clone()), (17, vec![6, 12]));
        let micro = SearchSpaceProfile::micro();
        assert_eq!((micro.num_cells, micro.reduction_positions.clone()), (5, vec![3]));
        assert_eq!(micro.stages(), vec![0, 0, 1, 1, 1]);
        for p in [nb101, nb201, micro] {
            let a = p.sample_random(3);
            assert!(p.validate(&a).is_empty());
        }
    }

    #[test]
    fn vocabulary_rules() {
        assert!(OpVocabulary::new(vec![
            OpDef::new("a", "identity", None),
            OpDef::new("a", "zero", None)
        ])
        .is_err());
        let mut bad = OpDef::new("c", "conv3x3", Some("h"));
        bad.head = None;
        assert!(OpVocabulary::new(vec![bad]).is_err());
        assert!(OpVocabulary::new(vec![OpDef::new("s", "identity", Some("h"))]).is_err());
        let v = SearchSpaceProfile::micro().vocabulary;
        assert_eq!(v.heads().len(), 2);
        assert_eq!(v.head_of(0), Some(0));
        assert_eq!(v.head_of(2), None);
    }

    #[test]
    fn profile_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("micro.toml");
        let p = SearchSpaceProfile::micro();
        write_profile(&path, &p).unwrap();
        assert_eq!(read_profile(&path).unwrap(), p);
    }

    #[test]
    fn bench_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.jsonl");
        let p = SearchSpaceProfile::micro();
        let rec = BenchRecord {
            id: "a".into(),
            architecture: p.sample_random(1),
            val_acc: 0.5,
            test_acc: None,
        };
        write_bench(&path, std::slice::from_ref(&rec)).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{not json}\n");
        fs::write(&path, &text).unwrap();
        match read_bench(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        let mut out_of_range = rec;
        out_of_range.val_acc = 1.5;
        write_bench(&path, &[out_of_range]).unwrap();
        assert!(matches!(read_bench(&path), Err(Error::Validation(_))));
        assert_eq!(read_bench_scaled(&path, AccuracyScale::Percent).unwrap()[0].val_acc, 0.015);
    }

    #[test]
    fn empty_bench_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        assert!(read_bench(&path).unwrap().is_empty());
    }
}
