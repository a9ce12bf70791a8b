//! Desk-scale ground truth: a synthetic pattern dataset and a small
//! trainer that labels architectures with the validation accuracy of a
//! from-scratch network.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::archspace::{write_bench, ArchitectureSpec, BenchRecord, SearchSpaceProfile};
use crate::error::{Error, Result};
use crate::hypernet::{build_target_with, count_correct, stem_weights, write_auxd, AuxDataset, GeneratedWeights};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor};
use crate::rng::{child_rng, he_tensor, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthDatasetSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthDatasetSpec {
    fn default() -> Self {
        SynthDatasetSpec {
            channels: 1,
            height: 8,
            width: 8,
            classes: 4,
            train: 2048,
            val: 512,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// Largest class count with distinct pattern families.
pub const MAX_CLASSES: usize = 8;

/// Pixel value of the bright and dark template stripes, `±TEMPLATE_LEVEL`.
pub const TEMPLATE_LEVEL: f64 = 0.25;

impl SynthDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return Err(Error::Config(format!("classes must be in 2..={MAX_CLASSES}, got {}", self.classes)));
        }
        if self.channels == 0 || self.height < 4 || self.width < 4 {
            return Err(Error::Config("images need ≥ 1 channel and ≥ 4×4 pixels".into()));
        }
        if !self.height.is_multiple_of(2) || !self.width.is_multiple_of(2) {
            return Err(Error::Config("image sides must be even".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be ≥ 0, got {}", self.noise)));
        }
        Ok(())
    }

    /// Noise-free variants of class `class`, one per phase.
    ///
    /// Classes cycle through horizontal, vertical and diagonal stripes and
    /// a checkerboard; every further cycle doubles the spatial period.
    pub fn templates(&self, class: usize) -> Vec<Vec<f64>> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let scale = 1 << (class / 4);
        let period = 4 * scale;
        let sign = |on: bool| if on { TEMPLATE_LEVEL } else { -TEMPLATE_LEVEL };
        let phases: Vec<(usize, usize)> = match class % 4 {
            3 => (0..2 * scale).flat_map(|a| [(a, 0), (a, scale)]).take(4).collect(),
            _ => (0..4).map(|k| (k * scale, 0)).collect(),
        };
        phases
            .into_iter()
            .map(|(p, q)| {
                let plane: Vec<f64> = (0..h * w)
                    .map(|i| {
                        let (y, x) = (i / w, i % w);
                        match class % 4 {
                            0 => sign((y + p) % period < period / 2),
                            1 => sign((x + p) % period < period / 2),
                            2 => sign((x + y + p) % period < period / 2),
                            _ => sign(((y + p) / (2 * scale) + (x + q) / (2 * scale)).is_multiple_of(2)),
                        }
                    })
                    .collect();
                plane.iter().cycle().take(c * h * w).copied().collect()
            })
            .collect()
    }
}

/// Train and validation splits.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub train: AuxDataset,
    pub val: AuxDataset,
}

fn draw_split(spec: &SynthDatasetSpec, templates: &[Vec<Vec<f64>>], n: usize, rng: &mut Rng) -> Result<AuxDataset> {
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    labels.shuffle(rng);
    let size = spec.channels * spec.height * spec.width;
    let mut images = Vec::with_capacity(n * size);
    for &y in &labels {
        let t = &templates[y][rng.random_range(0..templates[y].len())];
        images.extend(t.iter().map(|v| {
            // f32 storage is the on-disk precision; round now so the
            // in-memory set equals what a reload returns.
            f64::from((v + noise.sample(rng)) as f32)
        }));
    }
    AuxDataset::new(spec.channels, spec.height, spec.width, spec.classes, images, labels)
}

/// Deterministic per seed; labels are balanced and shuffled.
pub fn generate_dataset(spec: &SynthDatasetSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let templates: Vec<_> = (0..spec.classes).map(|c| spec.templates(c)).collect();
    Ok(SynthDataset {
        train: draw_split(spec, &templates, spec.train, &mut child_rng(spec.seed, "data.train"))?,
        val: draw_split(spec, &templates, spec.val, &mut child_rng(spec.seed, "data.val"))?,
    })
}

/// Writes `train.auxd` and `val.auxd` into `dir`.
pub fn write_dataset(dir: &Path, data: &SynthDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_auxd(&dir.join("train.auxd"), &data.train)?;
    write_auxd(&dir.join("val.auxd"), &data.val)
}

/// Accuracy of classifying each sample by its nearest noise-free template.
pub fn template_accuracy(spec: &SynthDatasetSpec, data: &AuxDataset) -> f64 {
    let templates: Vec<(usize, Vec<f64>)> = (0..spec.classes)
        .flat_map(|c| spec.templates(c).into_iter().map(move |t| (c, t)))
        .collect();
    let size = data.sample_size();
    let correct = (0..data.len())
        .filter(|&i| {
            let x = &data.images[i * size..(i + 1) * size];
            let best = templates
                .iter()
                .min_by(|a, b| {
                    let d = |t: &[f64]| x.iter().zip(t).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
                    d(&a.1).total_cmp(&d(&b.1))
                })
                .expect("templates");
            best.0 == data.labels[i]
        })
        .count();
    correct as f64 / data.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruthConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        GroundTruthConfig {
            epochs: 10,
            lr: 1e-2,
            momentum: 0.9,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Best validation accuracy over epochs.
    pub val_acc: f64,
    /// Training hit a non-finite loss; `val_acc` is chance level.
    pub diverged: bool,
}

struct Net {
    store: ParamStore,
    weights: Vec<Vec<Option<ParamId>>>,
    classifier: ParamId,
    stem: Tensor,
}

impl Net {
    fn new(profile: &SearchSpaceProfile, arch: &ArchitectureSpec, data: &AuxDataset, rng: &mut Rng) -> Result<Net> {
        let mut store = ParamStore::new();
        let stages = profile.stages();
        let mut weights = Vec::with_capacity(arch.cells.len());
        for (i, cell) in arch.cells.iter().enumerate() {
            let mut row = Vec::with_capacity(cell.num_nodes());
            for v in 0..cell.num_nodes() {
                let interior = v > 0 && v + 1 < cell.num_nodes();
                let shape = if interior {
                    profile
                        .vocabulary
                        .primitive(cell.ops[v])?
                        .weight_shape(profile.channels_at_stage(stages[i]))
                } else {
                    None
                };
                row.push(match shape {
                    Some(s) => {
                        let fan_in = s[1] * s[2] * s[3];
                        Some(store.insert(format!("cell{i}.node{v}"), he_tensor(rng, &s, fan_in))?)
                    }
                    None => None,
                });
            }
            weights.push(row);
        }
        let last = profile.channels_at_stage(profile.num_stages() - 1);
        let classifier = store.insert("classifier", he_tensor(rng, &[last, data.classes], last))?;
        Ok(Net {
            store,
            weights,
            classifier,
            stem: stem_weights(data.channels, profile.stem_channels),
        })
    }

    fn logits(&self, tape: &mut Tape, profile: &SearchSpaceProfile, arch: &ArchitectureSpec, inputs: &Tensor) -> Result<crate::numerics::Var> {
        let cells = self
            .weights
            .iter()
            .map(|row| row.iter().map(|w| w.map(|id| tape.param(&self.store, id))).collect())
            .collect();
        let stem = tape.constant(self.stem.clone());
        let classifier = tape.param(&self.store, self.classifier);
        let net = build_target_with(tape, profile, arch, GeneratedWeights { cells }, stem, classifier)?;
        let x = tape.constant(inputs.clone());
        net.forward(tape, x)
    }

    fn accuracy(&self, profile: &SearchSpaceProfile, arch: &ArchitectureSpec, data: &AuxDataset) -> Result<f64> {
        let mut correct = 0;
        for batch in data.chunks(256) {
            let batch = batch?;
            let mut tape = Tape::new();
            let logits = self.logits(&mut tape, profile, arch, &batch.inputs)?;
            correct += count_correct(tape.value(logits), &batch.labels)?;
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Trains `arch` from random initialization with momentum SGD and returns
/// the best validation accuracy.
pub fn ground_truth(
    profile: &SearchSpaceProfile,
    arch: &ArchitectureSpec,
    data: &SynthDataset,
    cfg: &GroundTruthConfig,
) -> Result<GroundTruth> {
    let violations = profile.validate(arch);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::Validation(msgs.join("; ")));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("ground truth needs batch size ≥ 1 and lr > 0".into()));
    }
    let mut rng = child_rng(cfg.seed, &format!("gt/{}", arch.key()));
    let mut net = Net::new(profile, arch, &data.train, &mut rng)?;
    let mut velocity: Vec<Tensor> = net.store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
    let chance = 1.0 / data.train.classes as f64;
    let mut best: f64 = 0.0;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let batch = data.train.batch(idx)?;
            let mut tape = Tape::new();
            let step = (|| {
                let logits = net.logits(&mut tape, profile, arch, &batch.inputs)?;
                let loss = tape.cross_entropy(logits, &batch.labels)?;
                tape.backward(loss)
            })();
            let grads = match step {
                Ok(g) => g,
                Err(Error::NonFinite(_)) => {
                    return Ok(GroundTruth {
                        val_acc: chance,
                        diverged: true,
                    })
                }
                Err(e) => return Err(e),
            };
            for (id, g) in grads.params() {
                let v = velocity[id.index()].data_mut();
                let p = net.store.get_mut(id).data_mut();
                for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                    *v = cfg.momentum * *v + g;
                    *p -= cfg.lr * *v;
                }
            }
            if net.store.iter().any(|(_, _, t)| t.data().iter().any(|x| !x.is_finite())) {
                return Ok(GroundTruth {
                    val_acc: chance,
                    diverged: true,
                });
            }
        }
        best = best.max(net.accuracy(profile, arch, &data.val)?);
    }
    Ok(GroundTruth {
        val_acc: best,
        diverged: false,
    })
}

/// Outcome of [`build_bench`].
#[derive(Clone, Debug)]
pub struct BenchBuild {
    pub records: Vec<BenchRecord>,
    /// Fewer distinct architectures exist than were requested.
    pub partial: bool,
    /// Ids of records whose training diverged.
    pub diverged: Vec<String>,
}

/// Samples `count` distinct architectures and labels each by ground truth.
pub fn build_bench(
    profile: &SearchSpaceProfile,
    count: usize,
    data: &SynthDataset,
    cfg: &GroundTruthConfig,
    seed: u64,
    mut progress: impl FnMut(usize, &BenchRecord),
) -> Result<BenchBuild> {
    let archs = sample_distinct(profile, count, seed)?;
    let partial = archs.len() < count;
    let mut records = Vec::with_capacity(archs.len());
    let mut diverged = Vec::new();
    for (i, arch) in archs.into_iter().enumerate() {
        let gt = ground_truth(profile, &arch, data, cfg)?;
        let rec = BenchRecord {
            id: format!("{}-{i:05}", profile.name),
            architecture: arch,
            val_acc: gt.val_acc,
            test_acc: None,
        };
        if gt.diverged {
            diverged.push(rec.id.clone());
        }
        progress(i, &rec);
        records.push(rec);
    }
    Ok(BenchBuild {
        records,
        partial,
        diverged,
    })
}

/// Up to `count` distinct architectures, drawn without replacement from the
/// full space when it is enumerable and by rejection sampling otherwise.
pub fn sample_distinct(profile: &SearchSpaceProfile, count: usize, seed: u64) -> Result<Vec<ArchitectureSpec>> {
    let mut rng = child_rng(seed, "bench.sample");
    if let Ok(mut all) = profile.enumerate_architectures() {
        all.shuffle(&mut rng);
        all.truncate(count);
        return Ok(all);
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut misses = 0;
    while out.len() < count && misses < 100 * count.max(1) {
        let arch = profile.sample_with(&mut rng);
        if seen.insert(arch.key()) {
            out.push(arch);
        } else {
            misses += 1;
        }
    }
    Ok(out)
}

/// Writes the bench and a `key = value` provenance sidecar next to it.
pub fn write_bench_with_sidecar(path: &Path, build: &BenchBuild, meta: &[(&str, String)]) -> Result<()> {
    write_bench(path, &build.records)?;
    let mut text = String::new();
    for (k, v) in meta {
        text.push_str(&format!("{k} = {v}\n"));
    }
    text.push_str(&format!("records = {}\n", build.records.len()));
    text.push_str(&format!("partial = {}\n", build.partial));
    text.push_str(&format!("diverged = {}\n", build.diverged.join(",")));
    let side = sidecar_path(path);
    fs::write(&side, text).map_err(|e| Error::io(side, e))
}

pub fn sidecar_path(bench: &Path) -> std::path::PathBuf {
    let mut s = bench.as_os_str().to_owned();
    s.push(".meta");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(noise: f64) -> SynthDatasetSpec {
        SynthDatasetSpec {
            train: 64,
            val: 64,
            noise,
            ..SynthDatasetSpec::default()
        }
    }

    #[test]
    fn templates_are_distinct_across_classes() {
        let spec = SynthDatasetSpec {
            classes: MAX_CLASSES,
            ..SynthDatasetSpec::default()
        };
        let mut all = Vec::new();
        for c in 0..spec.classes {
            let t = spec.templates(c);
            assert_eq!(t.len(), 4);
            all.extend(t.into_iter().map(|t| (c, t)));
        }
        for (i, (ca, a)) in all.iter().enumerate() {
            for (cb, b) in &all[i + 1..] {
                if ca != cb {
                    assert_ne!(a, b, "classes {ca} and {cb} share a template");
                }
            }
        }
    }

    #[test]
    fn labels_are_balanced() {
        let d = generate_dataset(&small_spec(0.5)).unwrap();
        for c in 0..4 {
            assert_eq!(d.train.labels.iter().filter(|&&l| l == c).count(), 16);
        }
    }

    #[test]
    fn noiseless_templates_are_perfectly_separable() {
        let spec = small_spec(0.0);
        let d = generate_dataset(&spec).unwrap();
        assert_eq!(template_accuracy(&spec, &d.val), 1.0);
    }

    #[test]
    fn bad_specs_are_config_errors() {
        for spec in [
            SynthDatasetSpec { classes: 1, ..SynthDatasetSpec::default() },
            SynthDatasetSpec { noise: -1.0, ..SynthDatasetSpec::default() },
            SynthDatasetSpec { height: 7, ..SynthDatasetSpec::default() },
        ] {
            assert!(generate_dataset(&spec).unwrap_err().is_config());
        }
    }

    #[test]
    fn zero_count_bench_is_empty() {
        let profile = SearchSpaceProfile::micro();
        let d = generate_dataset(&small_spec(0.5)).unwrap();
        let b = build_bench(&profile, 0, &d, &GroundTruthConfig::default(), 1, |_, _| {}).unwrap();
        assert!(b.records.is_empty() && !b.partial);
    }

    #[test]
    fn oversized_request_is_partial() {
        let profile = SearchSpaceProfile::micro();
        let archs = sample_distinct(&profile, 300, 1).unwrap();
        assert_eq!(archs.len(), 250);
    }
}
