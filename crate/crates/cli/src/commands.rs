use std::fs;
use std::path::{Path, PathBuf};

use hypernas::archspace::{read_bench, BenchRecord, SearchSpaceProfile};
use hypernas::eval::{
    evaluate_split, export_embeddings, mean_hyper_accuracy, sample_train, write_reports_csv, write_reports_jsonl,
    AntiOracle, Oracle, RankReport, Scorer,
};
use hypernas::gradcheck::{gradcheck as check_gradients, GradCheckConfig};
use hypernas::hypernet::{read_auxd, AuxDataset};
use hypernas::minibench::{build_bench, generate_dataset, write_bench_with_sidecar, write_dataset, SynthDatasetSpec};
use hypernas::model::{ModelConfig, ModelState, ParamGroup};
use hypernas::search::{evolve, write_top, write_trace, Fitness, TableFitness};
use hypernas::trainer::{write_history, Paradigm, TrainConfig, Trainer};
use hypernas::{Error, Result};
use serde_json::json;

use crate::log;
use crate::settings::{self, parse_test_size, require_file, snapshot, PredictorMode};

fn io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn check_dataset(model: &ModelConfig, aux: &AuxDataset, flag: &str) -> Result<()> {
    if model.classes != aux.classes || model.in_channels != aux.channels {
        return Err(Error::Config(format!(
            "{flag}: dataset has {} channels and {} classes, model expects {} and {}",
            aux.channels, aux.classes, model.in_channels, model.classes
        )));
    }
    Ok(())
}

pub fn genbench(mut s: settings::Genbench) -> Result<()> {
    let profile = SearchSpaceProfile::resolve(&s.profile)?;
    s.dataset.seed = s.seed;
    s.ground_truth.seed = s.seed;
    s.dataset.validate()?;
    snapshot(&s.out, &s)?;

    let data = generate_dataset(&s.dataset)?;
    write_dataset(&s.out, &data)?;
    log::info("dataset", json!({ "train": data.train.len(), "val": data.val.len(), "noise": s.dataset.noise }));

    let total = s.count;
    let build = build_bench(&profile, s.count, &data, &s.ground_truth, s.seed, |i, r| {
        log::info("ground_truth", json!({ "index": i, "of": total, "id": r.id, "val_acc": r.val_acc }));
    })?;
    let bench = s.out.join("bench.jsonl");
    let meta = [
        ("profile", profile.name.clone()),
        ("seed", s.seed.to_string()),
        ("requested", s.count.to_string()),
        ("noise", s.dataset.noise.to_string()),
        ("train_samples", s.dataset.train.to_string()),
        ("val_samples", s.dataset.val.to_string()),
        ("gt_epochs", s.ground_truth.epochs.to_string()),
        ("gt_lr", s.ground_truth.lr.to_string()),
        ("gt_momentum", s.ground_truth.momentum.to_string()),
        ("gt_batch_size", s.ground_truth.batch_size.to_string()),
    ];
    write_bench_with_sidecar(&bench, &build, &meta)?;
    if build.partial {
        log::info("partial_bench", json!({ "requested": s.count, "written": build.records.len() }));
    }
    let accs = build.records.iter().map(|r| r.val_acc);
    let (lo, hi) = accs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)));
    println!("wrote {} records to {}", build.records.len(), bench.display());
    if !build.records.is_empty() {
        println!("accuracy range {lo:.4} .. {hi:.4}");
    }
    if build.partial {
        println!("partial: only {} distinct architectures exist", build.records.len());
    }
    Ok(())
}

fn load_bench(path: &Path, flag: &str) -> Result<Vec<BenchRecord>> {
    require_file(path, flag)?;
    read_bench(path)
}

fn load_aux(path: &Path, flag: &str) -> Result<AuxDataset> {
    require_file(path, flag)?;
    read_auxd(path)
}

fn fit(
    profile: &SearchSpaceProfile,
    model: &ModelConfig,
    train: &TrainConfig,
    records: &[BenchRecord],
    aux: &AuxDataset,
) -> Result<ModelState> {
    let mut trainer = Trainer::new(ModelState::new(profile.clone(), model.clone())?, train.clone())?;
    let label = train.paradigm.as_str();
    trainer.run(records, aux, |e| {
        log::info(
            "epoch",
            json!({ "paradigm": label, "seed": train.seed, "epoch": e.epoch, "L_pred": e.pred, "L_hyper": e.hyper, "lr": e.lr }),
        );
    })?;
    Ok(trainer.into_state())
}

pub fn train(mut s: settings::Train) -> Result<()> {
    let profile = SearchSpaceProfile::resolve(&s.profile)?;
    let bench = load_bench(&s.bench, "--bench")?;
    let aux = load_aux(&s.aux, "--aux")?;
    check_dataset(&s.model, &aux, "--aux")?;
    s.model.seed = s.seed;
    s.train.seed = s.seed;
    s.train.validate()?;
    let records: Vec<BenchRecord> = match s.train.train_size {
        Some(m) => sample_train(bench.len(), m, s.seed)?.into_iter().map(|i| bench[i].clone()).collect(),
        None => bench,
    };
    if records.is_empty() {
        return Err(Error::Config("--bench has no records".into()));
    }
    snapshot(&s.out, &s)?;

    let mut trainer = Trainer::new(ModelState::new(profile, s.model.clone())?, s.train.clone())?;
    trainer.run(&records, &aux, |e| {
        log::info(
            "epoch",
            json!({ "epoch": e.epoch, "L_pred": e.pred, "L_hyper": e.hyper, "u_pred": e.u_pred, "u_hyper": e.u_hyper, "lr": e.lr }),
        );
    })?;
    let ckpt = s.out.join("checkpoint.hnck");
    trainer.save_checkpoint(&ckpt)?;
    write_history(&s.out.join("history.csv"), trainer.history())?;
    let ids: String = records.iter().map(|r| format!("{}\n", r.id)).collect();
    let ids_path = s.out.join("train-ids.txt");
    fs::write(&ids_path, ids).map_err(io(&ids_path))?;

    println!(
        "trained {} on {} pairs for {} epochs ({} steps)",
        s.train.paradigm,
        records.len(),
        trainer.epoch(),
        trainer.steps_taken()
    );
    if let Some(last) = trainer.history().last() {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        println!("final L_pred {} L_hyper {}", show(last.pred), show(last.hyper));
    }
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

struct HyperRow {
    label: String,
    seed: u64,
    accuracy: f64,
}

fn print_reports(reports: &[RankReport]) {
    println!("{:<16} {:>6} {:>6} {:>10} {:>10}", "label", "seed", "test", "kendall", "spearman");
    let show = |v: Option<f64>| v.map_or("null".to_string(), |v| format!("{v:.4}"));
    for r in reports {
        for s in &r.seeds {
            println!(
                "{:<16} {:>6} {:>6} {:>10} {:>10}",
                r.label,
                s.seed,
                r.test_size,
                show(s.kendall_tau),
                show(s.spearman)
            );
        }
        println!(
            "{:<16} {:>6} {:>6} {:>10} {:>10}",
            r.label,
            "mean",
            r.test_size,
            show(r.mean_kendall_tau),
            show(r.mean_spearman)
        );
    }
}

/// Trains one model per seed for each `(label, paradigm, q)` run.
fn run_trained(
    s: &settings::Eval,
    bench: &[BenchRecord],
    runs: &[(String, Paradigm, f64)],
    hyper_rows: &mut Vec<HyperRow>,
) -> Result<Vec<RankReport>> {
    let profile = SearchSpaceProfile::resolve(&s.profile)?;
    let aux_path = s.aux.clone().unwrap_or_default();
    let aux = load_aux(&aux_path, "--aux")?;
    check_dataset(&s.model, &aux, "--aux")?;
    let aux_val = match &s.aux_val {
        Some(p) => {
            let d = load_aux(p, "--aux-val")?;
            check_dataset(&s.model, &d, "--aux-val")?;
            Some(d)
        }
        None => None,
    };
    let test = parse_test_size(&s.test_size)?;
    let mut reports = Vec::new();
    for (label, paradigm, q) in runs {
        let mut first = true;
        let report = evaluate_split(label, bench, s.train_size, test, &s.seeds, |seed, train| {
            let model = ModelConfig { seed, ..s.model.clone() };
            let cfg = TrainConfig {
                paradigm: *paradigm,
                q: *q,
                seed,
                train_size: Some(train.len()),
                ..s.train.clone()
            };
            let state = fit(&profile, &model, &cfg, train, &aux)?;
            if let (Some(val), true) = (&aux_val, paradigm.uses_hyper() && s.hyper_eval_archs > 0) {
                let held: Vec<BenchRecord> = bench
                    .iter()
                    .filter(|r| train.iter().all(|t| t.id != r.id))
                    .take(s.hyper_eval_archs)
                    .cloned()
                    .collect();
                let accuracy = mean_hyper_accuracy(&state, &held, val, 256)?;
                log::info("hyper_accuracy", json!({ "label": label, "seed": seed, "accuracy": accuracy }));
                hyper_rows.push(HyperRow {
                    label: label.clone(),
                    seed,
                    accuracy,
                });
            }
            if s.export_embeddings && first {
                let path = s.out.join(format!("embeddings-{label}.csv"));
                export_embeddings(&state, bench, &path)?;
                log::info("embeddings", json!({ "path": path.display().to_string(), "rows": bench.len() }));
            }
            first = false;
            Ok(Box::new(state) as Box<dyn Scorer>)
        })?;
        log::info("report", json!(report));
        reports.push(report);
    }
    Ok(reports)
}

fn write_outputs(out: &Path, stem: &str, reports: &[RankReport], hyper_rows: &[HyperRow]) -> Result<()> {
    write_reports_csv(&out.join(format!("{stem}.csv")), reports)?;
    write_reports_jsonl(&out.join(format!("{stem}.jsonl")), reports)?;
    if !hyper_rows.is_empty() {
        let mut text = String::from("label,seed,hyper_accuracy\n");
        for r in hyper_rows {
            text.push_str(&format!("{},{},{}\n", r.label, r.seed, r.accuracy));
        }
        let path = out.join("hyper-accuracy.csv");
        fs::write(&path, text).map_err(io(&path))?;
    }
    print_reports(reports);
    for r in hyper_rows {
        println!("generated-weight accuracy {} seed {}: {:.4}", r.label, r.seed, r.accuracy);
    }
    Ok(())
}

pub fn eval(s: settings::Eval) -> Result<()> {
    let bench = load_bench(&s.bench, "--bench")?;
    parse_test_size(&s.test_size)?;
    if s.seeds.is_empty() {
        return Err(Error::Config("--seeds is empty".into()));
    }
    snapshot(&s.out, &s)?;
    let mut hyper_rows = Vec::new();
    let reports = match s.predictor {
        PredictorMode::Oracle | PredictorMode::AntiOracle => {
            let anti = s.predictor == PredictorMode::AntiOracle;
            let label = if anti { "anti-oracle" } else { "oracle" };
            let test = parse_test_size(&s.test_size)?;
            vec![evaluate_split(label, &bench, s.train_size, test, &s.seeds, |_, _| {
                Ok(if anti {
                    Box::new(AntiOracle) as Box<dyn Scorer>
                } else {
                    Box::new(Oracle)
                })
            })?]
        }
        PredictorMode::Trained => {
            if s.paradigms.is_empty() {
                return Err(Error::Config("--paradigms is empty".into()));
            }
            let runs: Vec<(String, Paradigm, f64)> = s
                .paradigms
                .iter()
                .map(|p| (p.as_str().to_string(), *p, s.train.q))
                .collect();
            run_trained(&s, &bench, &runs, &mut hyper_rows)?
        }
    };
    write_outputs(&s.out, "report", &reports, &hyper_rows)
}

pub fn sweep(s: settings::Sweep) -> Result<()> {
    let bench = load_bench(&s.eval.bench, "--bench")?;
    if s.qs.is_empty() {
        return Err(Error::Config("--qs is empty".into()));
    }
    for &q in &s.qs {
        hypernas::multitask::check_q(q)?;
    }
    snapshot(&s.eval.out, &s)?;
    let runs: Vec<(String, Paradigm, f64)> = s.qs.iter().map(|q| (format!("q={q}"), Paradigm::Dual, *q)).collect();
    let mut hyper_rows = Vec::new();
    let reports = run_trained(&s.eval, &bench, &runs, &mut hyper_rows)?;
    write_outputs(&s.eval.out, "sweep", &reports, &hyper_rows)
}

pub fn search(s: settings::Search) -> Result<()> {
    s.evo.validate()?;
    let bench = match &s.bench {
        Some(p) => Some(load_bench(p, "--bench")?),
        None => None,
    };
    let (fitness, profile, train_queries): (Box<dyn Fitness>, SearchSpaceProfile, Option<usize>) =
        match (&s.checkpoint, s.oracle) {
            (Some(_), true) => return Err(Error::Config("--oracle and --checkpoint are mutually exclusive".into())),
            (None, false) => return Err(Error::Config("search needs --checkpoint or --oracle".into())),
            (None, true) => {
                let table = bench
                    .as_ref()
                    .ok_or_else(|| Error::Config("--oracle needs --bench".into()))?;
                let profile = SearchSpaceProfile::resolve(&s.profile)?;
                (Box::new(TableFitness::new(table)), profile, None)
            }
            (Some(path), false) => {
                require_file(path, "--checkpoint")?;
                let trainer = Trainer::load_checkpoint(path)?;
                let m = trainer.cfg.train_size;
                let state = trainer.into_state();
                let profile = state.profile.clone();
                (Box::new(state), profile, m)
            }
        };
    snapshot(&s.out, &s)?;
    let mut trace = evolve(fitness.as_ref(), &profile, &s.evo)?;
    trace.train_queries = train_queries;
    for g in &trace.generations {
        log::info("generation", json!(g));
    }
    write_trace(&s.out.join("trace.jsonl"), &trace)?;
    write_top(&s.out.join("top.jsonl"), &trace)?;

    println!(
        "{} generations, {} predictor queries ({} lookups){}",
        trace.generations.len(),
        trace.queries,
        trace.lookups,
        if trace.budget_exhausted { ", budget exhausted" } else { "" }
    );
    if let Some(m) = trace.train_queries {
        println!("predictor trained on {m} labelled pairs");
    }
    for (i, c) in trace.top.iter().enumerate() {
        println!("top-{} fitness {:.4} {}", i + 1, c.fitness, c.key);
    }
    if let (Some(bench), false) = (&bench, s.oracle) {
        let table = TableFitness::new(bench);
        let truth: Vec<f64> = trace
            .top
            .iter()
            .filter_map(|c| table.fitness(&c.architecture).ok())
            .collect();
        if !truth.is_empty() {
            let mean = truth.iter().sum::<f64>() / truth.len() as f64;
            println!("ground truth of {} top architectures found in the bench: mean {mean:.4}", truth.len());
        }
    }
    Ok(())
}

pub fn gradcheck(s: settings::Gradcheck) -> Result<()> {
    let profile = SearchSpaceProfile::resolve(&s.profile)?;
    let groups: Vec<ParamGroup> = s.param_groups.iter().map(|g| g.parse()).collect::<Result<_>>()?;
    if s.batch == 0 {
        return Err(Error::Config("--batch must be at least 1".into()));
    }
    let data = match &s.aux {
        Some(p) => load_aux(p, "--aux")?,
        None => {
            let spec = SynthDatasetSpec {
                train: s.batch,
                val: s.batch,
                seed: s.seed,
                ..SynthDatasetSpec::default()
            };
            generate_dataset(&spec)?.train
        }
    };
    let model = ModelConfig { seed: s.seed, ..s.model.clone() };
    check_dataset(&model, &data, "--aux")?;
    if let Some(out) = &s.out {
        snapshot(out, &s)?;
    }
    let idx: Vec<usize> = (0..s.batch.min(data.len())).collect();
    let batch = data.batch(&idx)?;
    let mut state = ModelState::new(profile.clone(), model)?;
    let record = BenchRecord {
        id: "gradcheck".into(),
        architecture: profile.sample_random(s.seed),
        val_acc: 0.5,
        test_acc: None,
    };
    let cfg = GradCheckConfig {
        h: s.h,
        tolerance: s.tolerance,
        samples: s.samples,
        groups,
        paradigm: s.paradigm,
        q: s.q,
        seed: s.seed,
        inject_fault: s.inject_fault.clone(),
    };
    let report = check_gradients(&mut state, &record, &batch, &cfg)?;
    println!("{:<32} {:<10} {:>7} {:>7} {:>12}  result", "tensor", "group", "checked", "skipped", "rel_error");
    for t in &report.tensors {
        println!(
            "{:<32} {:<10} {:>7} {:>7} {:>12.3e}  {}",
            t.name,
            t.group,
            t.checked,
            t.skipped,
            t.rel_error,
            if t.passed { "pass" } else { "FAIL" }
        );
        log::info("gradcheck", json!(t));
    }
    if let Some(out) = &s.out {
        let path: PathBuf = out.join("gradcheck.json");
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(&path, text).map_err(io(&path))?;
    }
    if report.passed {
        println!("all {} tensors pass", report.tensors.len());
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|t| t.name.as_str()).collect();
        Err(Error::Contract(format!("gradient check failed for {}", names.join(", "))))
    }
}
