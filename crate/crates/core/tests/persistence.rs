mod common;

use common::{aux_dataset, record};
use hypernas::archspace::{read_bench, read_bench_scaled, write_bench, AccuracyScale, BenchRecord, SearchSpaceProfile};
use hypernas::hypernet::{read_auxd, write_auxd};
use hypernas::model::{ModelConfig, ModelState};
use hypernas::trainer::{load_model, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;

fn small_model() -> ModelConfig {
    ModelConfig {
        dim: 12,
        gcn_layers: 2,
        hyper_hidden: 16,
        hyper_layers: 1,
        ..ModelConfig::default()
    }
}

fn small_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        accumulate_every: 3,
        batch_size: 8,
        lr_halve_epochs: vec![2],
        ..TrainConfig::default()
    }
}

fn bench(n: usize) -> Vec<BenchRecord> {
    let profile = SearchSpaceProfile::micro();
    (0..n)
        .map(|i| {
            let mut r = record(profile.sample_random(i as u64), 0.3 + 0.05 * i as f64);
            r.id = format!("b{i}");
            r
        })
        .collect()
}

fn trainer(epochs: usize) -> Trainer {
    let state = ModelState::new(SearchSpaceProfile::micro(), small_model()).unwrap();
    Trainer::new(state, small_train(epochs)).unwrap()
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (b, aux) = (bench(5), aux_dataset(32, 0));
    for name in ["a", "b"] {
        let mut t = trainer(3);
        t.run(&b, &aux, |_| {}).unwrap();
        t.save_checkpoint(&dir.path().join(name)).unwrap();
    }
    assert_eq!(fs::read(dir.path().join("a")).unwrap(), fs::read(dir.path().join("b")).unwrap());
}

#[test]
fn checkpoint_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let (b, aux) = (bench(4), aux_dataset(32, 1));
    let mut t = trainer(2);
    t.run(&b, &aux, |_| {}).unwrap();
    // Leave gradients pending so the buffer is part of the round trip.
    let batch = aux.batch(&[0, 1, 2]).unwrap();
    t.step(&b[0], &batch).unwrap();
    let (p1, p2) = (dir.path().join("1.hnck"), dir.path().join("2.hnck"));
    t.save_checkpoint(&p1).unwrap();
    let back = Trainer::load_checkpoint(&p1).unwrap();
    back.save_checkpoint(&p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    assert_eq!(back.history(), t.history());
    assert_eq!(back.steps_taken(), t.steps_taken());
    let model = load_model(&p1).unwrap();
    for r in &b {
        assert_eq!(model.predict(&r.architecture).unwrap(), t.state.predict(&r.architecture).unwrap());
    }
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (b, aux) = (bench(5), aux_dataset(32, 2));
    let mut straight = trainer(4);
    straight.run(&b, &aux, |_| {}).unwrap();

    let mut first = trainer(4);
    first.run_epoch(&b, &aux).unwrap();
    first.run_epoch(&b, &aux).unwrap();
    let path = dir.path().join("mid.hnck");
    first.save_checkpoint(&path).unwrap();
    let mut resumed = Trainer::load_checkpoint(&path).unwrap();
    resumed.run(&b, &aux, |_| {}).unwrap();

    let (p1, p2) = (dir.path().join("s"), dir.path().join("r"));
    straight.save_checkpoint(&p1).unwrap();
    resumed.save_checkpoint(&p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.hnck");
    trainer(1).save_checkpoint(&path).unwrap();
    let bytes = fs::read(&path).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    fs::write(&path, &bad).unwrap();
    assert!(Trainer::load_checkpoint(&path).is_err());
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(Trainer::load_checkpoint(&path).is_err());
}

#[test]
fn bench_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut records = bench(30);
    for r in &mut records {
        r.val_acc = rng.random_range(0.0..1.0);
        r.test_acc = rng.random_bool(0.5).then(|| rng.random_range(0.0..1.0));
    }
    records[0].val_acc = 1.0;
    records[1].val_acc = 0.0;
    records[2].val_acc = f64::from_bits(1);
    write_bench(&path, &records).unwrap();
    let back = read_bench(&path).unwrap();
    assert_eq!(back.len(), records.len());
    for (a, b) in back.iter().zip(&records) {
        assert_eq!(a, b);
        assert_eq!(a.val_acc.to_bits(), b.val_acc.to_bits());
    }
}

#[test]
fn percent_scale_bench_is_converted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    let mut r = bench(1);
    r[0].val_acc = 0.9;
    write_bench(&path, &r).unwrap();
    let text = fs::read_to_string(&path).unwrap().replace("\"val_acc\":0.9", "\"val_acc\":90.0");
    fs::write(&path, text).unwrap();
    assert!(read_bench(&path).is_err());
    let back = read_bench_scaled(&path, AccuracyScale::Percent).unwrap();
    assert!((back[0].val_acc - 0.9).abs() < 1e-15);
}

#[test]
fn aux_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.auxd");
    let data = aux_dataset(10, 3);
    write_auxd(&path, &data).unwrap();
    let back = read_auxd(&path).unwrap();
    assert_eq!(back.labels, data.labels);
    // Images are stored as f32.
    for (a, b) in back.images.iter().zip(&data.images) {
        assert_eq!(*a, f64::from(*b as f32));
    }
}
