//! Evolutionary search with a surrogate fitness.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archspace::{write_architectures, ArchitectureSpec, BenchRecord, CellSpec, SearchSpaceProfile};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::rng::{child_rng, Rng};

/// Attempts before a mutation gives up and returns the parent.
pub const MUTATION_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoConfig {
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub tournament: usize,
    pub elitism: usize,
    pub budget: Option<usize>,
    pub cache: bool,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            population: 64,
            generations: 30,
            mutation_rate: 0.1,
            tournament: 4,
            elitism: 4,
            budget: None,
            cache: true,
            top_k: 5,
            seed: 0,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.population == 0 || self.generations == 0 {
            return bad("population and generations must be positive".into());
        }
        if self.elitism > self.population {
            return bad(format!("elitism {} exceeds population {}", self.elitism, self.population));
        }
        if !(self.mutation_rate > 0.0 && self.mutation_rate <= 1.0) {
            return bad(format!("mutation rate {} outside (0, 1]", self.mutation_rate));
        }
        if self.tournament == 0 {
            return bad("tournament size must be positive".into());
        }
        Ok(())
    }
}

/// Edges of `cell` that can be toggled on their own without invalidating it.
fn optional_edges(profile: &SearchSpaceProfile, cell: &CellSpec) -> Vec<(usize, usize)> {
    let f = cell.num_nodes();
    let mut out = Vec::new();
    let mut probe = cell.clone();
    for i in 0..f {
        for j in i + 1..f {
            probe.adj[i][j] ^= 1;
            if profile.cell_violations(&probe).is_empty() {
                out.push((i, j));
            }
            probe.adj[i][j] ^= 1;
        }
    }
    out
}

fn mutate_cell(profile: &SearchSpaceProfile, cell: &CellSpec, edges: &[(usize, usize)], rate: f64, rng: &mut Rng) -> CellSpec {
    let k = profile.vocabulary.len();
    let f = cell.num_nodes();
    let mut out = cell.clone();
    for op in out.ops.iter_mut().take(f - 1).skip(1) {
        if k > 1 && rng.random_bool(rate) {
            let other = rng.random_range(0..k - 1);
            *op = if other >= *op { other + 1 } else { other };
        }
    }
    for &(i, j) in edges {
        if rng.random_bool(rate) {
            out.adj[i][j] ^= 1;
        }
    }
    out
}

/// Flips each op gene to a different op and toggles each optional edge,
/// both with probability `rate`. Invalid children and children equal to the
/// parent are redrawn; after [`MUTATION_ATTEMPTS`] failures the parent is
/// returned unchanged.
pub fn mutate(profile: &SearchSpaceProfile, spec: &ArchitectureSpec, rate: f64, rng: &mut Rng) -> ArchitectureSpec {
    if rate <= 0.0 {
        return spec.clone();
    }
    let genome = profile.genome(spec);
    let edges: Vec<Vec<(usize, usize)>> = genome.iter().map(|c| optional_edges(profile, c)).collect();
    for _ in 0..MUTATION_ATTEMPTS {
        let child: Vec<CellSpec> = genome
            .iter()
            .zip(&edges)
            .map(|(c, e)| mutate_cell(profile, c, e, rate, rng))
            .collect();
        let arch = profile.assemble(child);
        if arch != *spec && profile.validate(&arch).is_empty() {
            return arch;
        }
    }
    spec.clone()
}

/// Scores architectures during search.
pub trait Fitness: Sync {
    fn fitness(&self, arch: &ArchitectureSpec) -> Result<f64>;
}

/// Predicted accuracy from the encoder and regressor only.
impl Fitness for ModelState {
    fn fitness(&self, arch: &ArchitectureSpec) -> Result<f64> {
        self.predict(arch)
    }
}

/// Looks up ground-truth accuracy in a table.
pub struct TableFitness {
    table: HashMap<String, f64>,
}

impl TableFitness {
    pub fn new(records: &[BenchRecord]) -> Self {
        TableFitness {
            table: records.iter().map(|r| (r.architecture.key(), r.val_acc)).collect(),
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.table.values().copied().reduce(f64::max)
    }
}

impl Fitness for TableFitness {
    fn fitness(&self, arch: &ArchitectureSpec) -> Result<f64> {
        self.table
            .get(&arch.key())
            .copied()
            .ok_or_else(|| Error::Contract(format!("architecture {} not in the fitness table", arch.key())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    /// Cumulative predictor queries after this generation.
    pub queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub key: String,
    pub fitness: f64,
    #[serde(skip)]
    pub architecture: ArchitectureSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchTrace {
    pub config: EvoConfig,
    pub generations: Vec<GenerationStats>,
    /// Fitness evaluations actually run (unique when caching).
    pub queries: usize,
    /// Fitness requests including cache hits.
    pub lookups: usize,
    /// Labelled pairs consumed to train the fitness model, when known.
    pub train_queries: Option<usize>,
    pub budget_exhausted: bool,
    pub top: Vec<Candidate>,
}

struct Evaluator<'a> {
    fitness: &'a dyn Fitness,
    cache: Option<HashMap<String, f64>>,
    seen: HashMap<String, (f64, ArchitectureSpec)>,
    queries: usize,
    lookups: usize,
    budget: Option<usize>,
}

impl Evaluator<'_> {
    /// Scores as many of `archs` as the budget allows, in order.
    fn score(&mut self, archs: &[ArchitectureSpec]) -> Result<(Vec<f64>, bool)> {
        let keys: Vec<String> = archs.iter().map(ArchitectureSpec::key).collect();
        let mut fresh: Vec<usize> = Vec::new();
        let mut pending: HashMap<&str, usize> = HashMap::new();
        let mut take = archs.len();
        let mut truncated = false;
        for (i, key) in keys.iter().enumerate() {
            let cached = self.cache.as_ref().is_some_and(|c| c.contains_key(key)) || pending.contains_key(key.as_str());
            if cached {
                continue;
            }
            if self.budget.is_some_and(|b| self.queries + fresh.len() >= b) {
                take = i;
                truncated = true;
                break;
            }
            fresh.push(i);
            if self.cache.is_some() {
                pending.insert(key, i);
            }
        }
        let values: Vec<f64> = fresh
            .par_iter()
            .map(|&i| self.fitness.fitness(&archs[i]))
            .collect::<Result<_>>()?;
        self.queries += fresh.len();
        let mut direct: HashMap<usize, f64> = HashMap::new();
        for (&i, &v) in fresh.iter().zip(&values) {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("fitness of {}", keys[i])));
            }
            direct.insert(i, v);
            if let Some(c) = self.cache.as_mut() {
                c.insert(keys[i].clone(), v);
            }
        }
        let mut out = Vec::with_capacity(take);
        for (i, key) in keys.iter().enumerate().take(take) {
            let v = match (direct.get(&i), self.cache.as_ref()) {
                (Some(&v), _) => v,
                (None, Some(c)) => c[key],
                (None, None) => unreachable!("uncached members are always evaluated"),
            };
            self.lookups += 1;
            self.seen.entry(key.clone()).or_insert_with(|| (v, archs[i].clone()));
            out.push(v);
        }
        Ok((out, truncated))
    }
}

fn stats(generation: usize, fit: &[f64], queries: usize) -> GenerationStats {
    GenerationStats {
        generation,
        best: fit.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: fit.iter().sum::<f64>() / fit.len() as f64,
        queries,
    }
}

/// Indices sorted by fitness, best first; ties keep population order.
fn ranked(fit: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..fit.len()).collect();
    idx.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]));
    idx
}

/// Tournament selection, mutation and elitism. Deterministic per seed.
pub fn evolve(fitness: &dyn Fitness, profile: &SearchSpaceProfile, cfg: &EvoConfig) -> Result<SearchTrace> {
    cfg.validate()?;
    let mut rng = child_rng(cfg.seed, "search");
    let mut ev = Evaluator {
        fitness,
        cache: cfg.cache.then(HashMap::new),
        seen: HashMap::new(),
        queries: 0,
        lookups: 0,
        budget: cfg.budget,
    };
    let mut pop: Vec<ArchitectureSpec> = (0..cfg.population).map(|_| profile.sample_with(&mut rng)).collect();
    let (mut fit, mut exhausted) = ev.score(&pop)?;
    pop.truncate(fit.len());
    let mut generations = Vec::new();
    if !fit.is_empty() {
        generations.push(stats(0, &fit, ev.queries));
    }

    for g in 1..cfg.generations {
        if exhausted || pop.is_empty() {
            break;
        }
        let order = ranked(&fit);
        let elites = cfg.elitism.min(pop.len());
        let mut next: Vec<ArchitectureSpec> = order[..elites].iter().map(|&i| pop[i].clone()).collect();
        let mut next_fit: Vec<f64> = order[..elites].iter().map(|&i| fit[i]).collect();
        let children: Vec<ArchitectureSpec> = (elites..cfg.population)
            .map(|_| {
                let winner = (0..cfg.tournament)
                    .map(|_| rng.random_range(0..pop.len()))
                    .reduce(|a, b| if fit[b] > fit[a] { b } else { a })
                    .expect("tournament is non-empty");
                mutate(profile, &pop[winner], cfg.mutation_rate, &mut rng)
            })
            .collect();
        let (child_fit, truncated) = ev.score(&children)?;
        exhausted = truncated;
        next.extend(children.into_iter().take(child_fit.len()));
        next_fit.extend(child_fit);
        pop = next;
        fit = next_fit;
        generations.push(stats(g, &fit, ev.queries));
    }

    let mut all: Vec<Candidate> = ev
        .seen
        .into_iter()
        .map(|(key, (fitness, architecture))| Candidate {
            key,
            fitness,
            architecture,
        })
        .collect();
    all.sort_by(|a, b| b.fitness.total_cmp(&a.fitness).then_with(|| a.key.cmp(&b.key)));
    all.truncate(cfg.top_k);
    Ok(SearchTrace {
        config: cfg.clone(),
        generations,
        queries: ev.queries,
        lookups: ev.lookups,
        train_queries: None,
        budget_exhausted: exhausted,
        top: all,
    })
}

fn json_line<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Config(e.to_string()))
}

/// One line per generation followed by a summary line.
pub fn write_trace(path: &Path, trace: &SearchTrace) -> Result<()> {
    let mut text = String::new();
    for g in &trace.generations {
        text.push_str(&json_line(g)?);
        text.push('\n');
    }
    text.push_str(&json_line(trace)?);
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the top architectures in bench format without accuracies.
pub fn write_top(path: &Path, trace: &SearchTrace) -> Result<()> {
    let archs: Vec<(String, ArchitectureSpec)> = trace
        .top
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("top-{}", i + 1), c.architecture.clone()))
        .collect();
    write_architectures(path, &archs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    struct Count;
    impl Fitness for Count {
        fn fitness(&self, arch: &ArchitectureSpec) -> Result<f64> {
            Ok(arch.cells[0].ops.iter().sum::<usize>() as f64)
        }
    }

    #[test]
    fn rate_zero_is_identity_via_parent() {
        let p = SearchSpaceProfile::micro();
        let a = p.sample_random(1);
        let mut rng = rng_from(0);
        // Rate zero never changes a gene.
        let g = p.genome(&a);
        let e = optional_edges(&p, &g[0]);
        assert_eq!(mutate_cell(&p, &g[0], &e, 0.0, &mut rng), g[0]);
    }

    #[test]
    fn uncached_query_count() {
        let p = SearchSpaceProfile::micro();
        let cfg = EvoConfig {
            population: 10,
            generations: 5,
            elitism: 2,
            cache: false,
            ..EvoConfig::default()
        };
        let t = evolve(&Count, &p, &cfg).unwrap();
        assert_eq!(t.queries, 10 + 4 * 8);
        assert!(t.generations.windows(2).all(|w| w[1].best >= w[0].best));
    }

    #[test]
    fn budget_truncates() {
        let p = SearchSpaceProfile::micro();
        let cfg = EvoConfig {
            budget: Some(30),
            ..EvoConfig::default()
        };
        let t = evolve(&Count, &p, &cfg).unwrap();
        assert!(t.queries <= 30);
        assert!(t.budget_exhausted);
    }

    #[test]
    fn bad_configs() {
        for cfg in [
            EvoConfig { elitism: 65, ..EvoConfig::default() },
            EvoConfig { mutation_rate: 0.0, ..EvoConfig::default() },
            EvoConfig { tournament: 0, ..EvoConfig::default() },
        ] {
            assert!(cfg.validate().unwrap_err().is_config());
        }
    }
}
