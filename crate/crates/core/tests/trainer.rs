mod common;

use common::{aux_batch, aux_dataset, record};
use hypernas::archspace::{BenchRecord, SearchSpaceProfile};
use hypernas::model::{ModelConfig, ModelState, ParamGroup};
use hypernas::numerics::Tensor;
use hypernas::trainer::{objective_value, train, train_step, Paradigm, TrainConfig, Trainer};

fn model(profile: SearchSpaceProfile) -> ModelState {
    let cfg = ModelConfig {
        dim: 12,
        gcn_layers: 2,
        hyper_hidden: 16,
        hyper_layers: 2,
        ..ModelConfig::default()
    };
    ModelState::new(profile, cfg).unwrap()
}

fn bench(n: usize) -> Vec<BenchRecord> {
    let profile = SearchSpaceProfile::micro();
    (0..n)
        .map(|i| {
            let mut r = record(profile.sample_random(i as u64 + 50), 0.3 + 0.6 * ((i * 7) % n) as f64 / n as f64);
            r.id = format!("t{i}");
            r
        })
        .collect()
}

#[test]
fn branches_are_isolated() {
    let state = model(SearchSpaceProfile::micro_two_cell());
    let rec = record(state.profile.sample_random(1), 0.6);
    let batch = aux_batch(4, 0);
    let zero_in = |grads: &hypernas::numerics::Gradients, group: ParamGroup| {
        state
            .group(group)
            .iter()
            .all(|&id| grads.param(id).is_none_or(|g| g.data().iter().all(|&v| v == 0.0)))
    };
    let (l, g) = train_step(&state, &rec, &batch, Paradigm::PredOnly, 1.5).unwrap();
    assert!(l.hyper.is_none() && zero_in(&g, ParamGroup::Hypernet) && zero_in(&g, ParamGroup::Task));
    let (l, g) = train_step(&state, &rec, &batch, Paradigm::HyperOnly, 1.5).unwrap();
    assert!(l.pred.is_none() && zero_in(&g, ParamGroup::Regressor) && zero_in(&g, ParamGroup::Task));
    let (l, _) = train_step(&state, &rec, &batch, Paradigm::Dual, 1.5).unwrap();
    assert!(l.pred.is_some() && l.hyper.is_some());
}

#[test]
fn tiny_gradient_step_descends_the_dual_objective() {
    let profile = SearchSpaceProfile::micro_two_cell();
    let rho = model(profile.clone()).tasks.rho;
    let batch = aux_batch(8, 1);
    let mut checked = 0;
    for seed in 0..5 {
        let mut state = model(profile.clone());
        let rec = record(profile.sample_random(seed), 0.7);
        let before = objective_value(&state, &rec, &batch, Paradigm::Dual, 1.5).unwrap();
        let (_, grads) = train_step(&state, &rec, &batch, Paradigm::Dual, 1.5).unwrap();
        let ids: Vec<_> = state.store.ids().filter(|&id| id != rho).collect();
        for id in ids {
            if let Some(g) = grads.param(id) {
                let p = state.store.get(id);
                let data: Vec<f64> = p.data().iter().zip(g.data()).map(|(p, g)| p - 1e-6 * g).collect();
                state.store.set(id, Tensor::new(p.shape().to_vec(), data).unwrap()).unwrap();
            }
        }
        let after = objective_value(&state, &rec, &batch, Paradigm::Dual, 1.5).unwrap();
        assert!(after < before, "seed {seed}: {after} !< {before}");
        checked += 1;
    }
    assert_eq!(checked, 5);
}

#[test]
fn parameters_change_only_on_accumulation_boundaries() {
    let state = model(SearchSpaceProfile::micro());
    let cfg = TrainConfig { accumulate_every: 3, batch_size: 4, ..TrainConfig::default() };
    let mut t = Trainer::new(state, cfg).unwrap();
    let b = bench(3);
    let batch = aux_batch(4, 2);
    let snapshot = |t: &Trainer| t.state.store.iter().map(|(_, _, v)| v.clone()).collect::<Vec<_>>();
    let start = snapshot(&t);
    t.step(&b[0], &batch).unwrap();
    t.step(&b[1], &batch).unwrap();
    assert_eq!(snapshot(&t), start);
    t.step(&b[2], &batch).unwrap();
    assert_ne!(snapshot(&t), start);
}

#[test]
fn learning_rate_halves_on_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0), 1e-3);
    assert_eq!(cfg.lr_at(99), 1e-3);
    assert_eq!(cfg.lr_at(100), 5e-4);
    assert_eq!(cfg.lr_at(150), 2.5e-4);
    assert_eq!(cfg.lr_at(199), 2.5e-4);
}

#[test]
fn prediction_loss_falls_over_training() {
    let b = bench(20);
    let aux = aux_dataset(64, 3);
    let cfg = TrainConfig { epochs: 50, batch_size: 8, lr_halve_epochs: vec![], ..TrainConfig::default() };
    let (_, history) = train(model(SearchSpaceProfile::micro()), &b, &aux, &cfg).unwrap();
    assert_eq!(history.len(), 50);
    let (first, last) = (history[0].pred.unwrap(), history[49].pred.unwrap());
    assert!(last < first, "{last} !< {first}");
}

#[test]
fn training_is_deterministic() {
    let b = bench(4);
    let aux = aux_dataset(32, 4);
    let cfg = TrainConfig { epochs: 3, accumulate_every: 2, batch_size: 4, seed: 42, ..TrainConfig::default() };
    let (a, ha) = train(model(SearchSpaceProfile::micro()), &b, &aux, &cfg).unwrap();
    let (c, hc) = train(model(SearchSpaceProfile::micro()), &b, &aux, &cfg).unwrap();
    assert_eq!(ha, hc);
    for ((_, _, x), (_, _, y)) in a.store.iter().zip(c.store.iter()) {
        assert_eq!(x, y);
    }
}

#[test]
fn bad_configs_are_rejected() {
    let aux = aux_dataset(8, 0);
    let state = || model(SearchSpaceProfile::micro());
    assert!(train(state(), &[], &aux, &TrainConfig::default()).is_err());
    for cfg in [
        TrainConfig { accumulate_every: 0, ..TrainConfig::default() },
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { q: 0.0, ..TrainConfig::default() },
        TrainConfig { train_size: Some(7), epochs: 1, ..TrainConfig::default() },
    ] {
        assert!(train(state(), &bench(2), &aux, &cfg).is_err());
    }
}
