//! Rank-correlation metrics, the train/test split protocol and embedding
//! export.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::archspace::BenchRecord;
use crate::error::{Error, Result};
use crate::hypernet::AuxDataset;
use crate::model::ModelState;
use crate::rng::child_rng;

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Contract("rank correlation needs at least two points".into()));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::Contract("rank correlation on non-finite values".into()));
    }
    Ok(())
}

/// Number of pairs tied within runs of equal values in sorted `v`.
fn tied_pairs(v: impl Iterator<Item = f64>) -> u64 {
    let mut total = 0;
    let mut run = 0u64;
    let mut last = None;
    for x in v {
        if Some(x) == last {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
            last = Some(x);
        }
    }
    total + run * (run + 1) / 2
}

/// Merge sort that returns the number of inversions.
fn sort_counting_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_counting_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's τ-b in `O(n log n)`; `None` when either side is constant.
pub fn kendall_tau(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    let n = pred.len() as u64;
    let n0 = n * (n - 1) / 2;
    let mut pairs: Vec<(f64, f64)> = pred.iter().copied().zip(truth.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let tx = tied_pairs(pairs.iter().map(|p| p.0));
    let mut txy = 0;
    let mut run = 0u64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            txy += run * (run + 1) / 2;
            run = 0;
        }
    }
    txy += run * (run + 1) / 2;

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = sort_counting_swaps(&mut ys, &mut buf);
    let ty = tied_pairs(ys.iter().copied());

    if tx == n0 || ty == n0 {
        return Ok(None);
    }
    // Concordant minus discordant over pairs untied on both sides.
    let numer = n0 as i64 - tx as i64 - ty as i64 + txy as i64 - 2 * discordant as i64;
    Ok(Some(numer as f64 / (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt()))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    Ok(pearson(&average_ranks(pred), &average_ranks(truth)))
}

/// Which records form the test set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestSize {
    /// Everything not used for training.
    All,
    /// A seeded sample of this size, disjoint from training.
    Count(usize),
}

fn shuffled(n: usize, train_size: usize, seed: u64) -> Result<Vec<usize>> {
    if train_size == 0 || train_size > n {
        return Err(Error::Config(format!("train size {train_size} must be in 1..={n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut child_rng(seed, "split"));
    Ok(idx)
}

/// The training indices [`split_indices`] picks for this seed.
pub fn sample_train(n: usize, train_size: usize, seed: u64) -> Result<Vec<usize>> {
    let mut idx = shuffled(n, train_size, seed)?;
    idx.truncate(train_size);
    Ok(idx)
}

/// Disjoint train and test index sets for one seed.
pub fn split_indices(n: usize, train_size: usize, test: TestSize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx = shuffled(n, train_size, seed)?;
    let rest = idx.split_off(train_size);
    let test_idx = match test {
        TestSize::All => rest,
        TestSize::Count(k) if k <= rest.len() => rest[..k].to_vec(),
        TestSize::Count(k) => {
            return Err(Error::Config(format!(
                "test size {k} exceeds the {} records left after training",
                rest.len()
            )))
        }
    };
    if test_idx.len() < 2 {
        return Err(Error::Config("test split needs at least two records".into()));
    }
    Ok((idx, test_idx))
}

/// Anything that assigns a score to a bench record.
pub trait Scorer: Sync {
    fn score(&self, record: &BenchRecord) -> Result<f64>;
}

/// Returns the true accuracy.
pub struct Oracle;

/// Returns the negated true accuracy.
pub struct AntiOracle;

impl Scorer for Oracle {
    fn score(&self, r: &BenchRecord) -> Result<f64> {
        Ok(r.val_acc)
    }
}

impl Scorer for AntiOracle {
    fn score(&self, r: &BenchRecord) -> Result<f64> {
        Ok(-r.val_acc)
    }
}

impl Scorer for ModelState {
    fn score(&self, r: &BenchRecord) -> Result<f64> {
        self.predict(&r.architecture)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub kendall_tau: Option<f64>,
    pub spearman: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankReport {
    pub label: String,
    pub train_size: usize,
    pub test_size: usize,
    pub seeds: Vec<SeedResult>,
    pub mean_kendall_tau: Option<f64>,
    pub mean_spearman: Option<f64>,
}

fn mean_defined(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Scores every record in parallel.
pub fn score_all(scorer: &dyn Scorer, records: &[&BenchRecord]) -> Result<Vec<f64>> {
    records.par_iter().map(|r| scorer.score(r)).collect()
}

/// Fits a scorer on each seed's training split and rank-correlates its
/// scores with the truth on the test split.
pub fn evaluate_split<F>(
    label: &str,
    bench: &[BenchRecord],
    train_size: usize,
    test: TestSize,
    seeds: &[u64],
    mut fit: F,
) -> Result<RankReport>
where
    F: FnMut(u64, &[BenchRecord]) -> Result<Box<dyn Scorer>>,
{
    let mut results = Vec::with_capacity(seeds.len());
    let mut test_size = 0;
    for &seed in seeds {
        let (train_idx, test_idx) = split_indices(bench.len(), train_size, test, seed)?;
        debug_assert!(test_idx.iter().all(|i| !train_idx.contains(i)));
        test_size = test_idx.len();
        let train: Vec<BenchRecord> = train_idx.iter().map(|&i| bench[i].clone()).collect();
        let scorer = fit(seed, &train)?;
        let tests: Vec<&BenchRecord> = test_idx.iter().map(|&i| &bench[i]).collect();
        let pred = score_all(scorer.as_ref(), &tests)?;
        let truth: Vec<f64> = tests.iter().map(|r| r.val_acc).collect();
        results.push(SeedResult {
            seed,
            kendall_tau: kendall_tau(&pred, &truth)?,
            spearman: spearman(&pred, &truth)?,
        });
    }
    Ok(RankReport {
        label: label.to_string(),
        train_size,
        test_size,
        mean_kendall_tau: mean_defined(results.iter().map(|r| r.kendall_tau)),
        mean_spearman: mean_defined(results.iter().map(|r| r.spearman)),
        seeds: results,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "null".into())
}

pub const REPORT_HEADER: &str = "label,seed,train_size,test_size,kendall_tau,spearman";

/// Per-seed rows followed by a `mean` row.
pub fn report_csv_rows(r: &RankReport) -> Vec<String> {
    let mut rows: Vec<String> = r
        .seeds
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{},{}",
                r.label,
                s.seed,
                r.train_size,
                r.test_size,
                cell(s.kendall_tau),
                cell(s.spearman)
            )
        })
        .collect();
    rows.push(format!(
        "{},mean,{},{},{},{}",
        r.label,
        r.train_size,
        r.test_size,
        cell(r.mean_kendall_tau),
        cell(r.mean_spearman)
    ));
    rows
}

pub fn write_reports_csv(path: &Path, reports: &[RankReport]) -> Result<()> {
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for r in reports {
        for row in report_csv_rows(r) {
            text.push_str(&row);
            text.push('\n');
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_reports_jsonl(path: &Path, reports: &[RankReport]) -> Result<()> {
    let mut text = String::new();
    for r in reports {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One row per record: `id, h1..hd, accuracy`.
pub fn export_embeddings(state: &ModelState, records: &[BenchRecord], path: &Path) -> Result<()> {
    let rows: Vec<Vec<f64>> = records
        .par_iter()
        .map(|r| state.embedding(&r.architecture))
        .collect::<Result<_>>()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header: Vec<String> = (1..=state.config.dim).map(|i| format!("h{i}")).collect();
    writeln!(w, "id,{},accuracy", header.join(",")).map_err(io)?;
    for (r, h) in records.iter().zip(rows) {
        let h: Vec<String> = h.iter().map(f64::to_string).collect();
        writeln!(w, "{},{},{}", r.id, h.join(","), r.val_acc).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Mean accuracy of hypernetwork-generated networks over `records`.
pub fn mean_hyper_accuracy(
    state: &ModelState,
    records: &[BenchRecord],
    data: &AuxDataset,
    batch_size: usize,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Contract("no architectures to evaluate".into()));
    }
    let accs: Vec<f64> = records
        .par_iter()
        .map(|r| state.hyper_accuracy(&r.architecture, data, batch_size))
        .collect::<Result<_>>()?;
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kendall_hand_cases() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), Some(1.0));
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), Some(-1.0));
        let t = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), None);
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_hand_cases() {
        assert_eq!(spearman(&[1.0, 5.0, 9.0], &[2.0, 3.0, 4.0]).unwrap(), Some(1.0));
        assert_eq!(spearman(&[1.0, 5.0, 9.0], &[4.0, 3.0, 2.0]).unwrap(), Some(-1.0));
        assert_eq!(spearman(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), None);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn splits_are_disjoint() {
        let (tr, te) = split_indices(50, 10, TestSize::All, 3).unwrap();
        assert_eq!(tr.len(), 10);
        assert_eq!(te.len(), 40);
        assert!(te.iter().all(|i| !tr.contains(i)));
        let (_, te) = split_indices(50, 10, TestSize::Count(20), 3).unwrap();
        assert_eq!(te.len(), 20);
        assert!(split_indices(50, 51, TestSize::All, 0).unwrap_err().is_config());
    }
}
