mod common;

use hypernas::archspace::SearchSpaceProfile;
use hypernas::gradcheck::{gradcheck, GradCheckConfig};
use hypernas::model::{ModelConfig, ModelState, ParamGroup};
use hypernas::multitask::total_loss;
use hypernas::trainer::{train_step, Paradigm};

use common::{aux_batch, record};

#[test]
fn every_group_matches_finite_differences() {
    let profile = SearchSpaceProfile::micro_two_cell();
    for seed in 0..2 {
        let arch = profile.sample_random(seed);
        let mut state = ModelState::new(profile.clone(), ModelConfig { seed, ..ModelConfig::default() }).unwrap();
        let rec = record(arch, 0.6);
        let batch = aux_batch(8, seed);
        let report = gradcheck(&mut state, &rec, &batch, &GradCheckConfig { seed, ..GradCheckConfig::default() }).unwrap();
        for t in &report.tensors {
            assert!(t.checked > 0 || t.skipped > 0, "{} unchecked", t.name);
        }
        let groups: std::collections::BTreeSet<&str> = report.tensors.iter().map(|t| t.group.as_str()).collect();
        assert_eq!(groups.len(), 4);
        assert!(report.passed, "{:#?}", report.failures().collect::<Vec<_>>());
    }
}

#[test]
fn group_filter_checks_only_that_group() {
    let profile = SearchSpaceProfile::micro_two_cell();
    let mut state = ModelState::new(profile.clone(), ModelConfig::default()).unwrap();
    let rec = record(profile.sample_random(1), 0.4);
    let cfg = GradCheckConfig {
        groups: vec![ParamGroup::Task],
        ..GradCheckConfig::default()
    };
    let report = gradcheck(&mut state, &rec, &aux_batch(4, 0), &cfg).unwrap();
    assert_eq!(report.tensors.len(), 1);
    assert_eq!(report.tensors[0].name, "task.rho");
    assert!(report.passed);
}

#[test]
fn injected_fault_fails_with_the_tensor_name() {
    let profile = SearchSpaceProfile::micro_two_cell();
    let mut state = ModelState::new(profile.clone(), ModelConfig::default()).unwrap();
    let rec = record(profile.sample_random(2), 0.5);
    let cfg = GradCheckConfig {
        groups: vec![ParamGroup::Encoder],
        inject_fault: Some("encoder.normal.w_fwd.0".into()),
        ..GradCheckConfig::default()
    };
    let report = gradcheck(&mut state, &rec, &aux_batch(4, 0), &cfg).unwrap();
    assert!(!report.passed);
    let failed: Vec<&str> = report.failures().map(|t| t.name.as_str()).collect();
    assert_eq!(failed, ["encoder.normal.w_fwd.0"]);
}

/// The dual encoder gradient is the single-branch gradients weighted by
/// `q L^(q-1) / (2u^2)`.
#[test]
fn dual_gradient_is_weighted_sum_of_branches() {
    let profile = SearchSpaceProfile::micro_two_cell();
    let mut state = ModelState::new(profile.clone(), ModelConfig::default()).unwrap();
    let rho = state.tasks.rho;
    state.store.set(rho, hypernas::numerics::Tensor::new(vec![2], vec![0.3, -0.2]).unwrap()).unwrap();
    let rec = record(profile.sample_random(4), 0.55);
    let batch = aux_batch(8, 3);
    let q = 1.5;
    let (dual, gd) = train_step(&state, &rec, &batch, Paradigm::Dual, q).unwrap();
    let (_, gp) = train_step(&state, &rec, &batch, Paradigm::PredOnly, q).unwrap();
    let (_, gh) = train_step(&state, &rec, &batch, Paradigm::HyperOnly, q).unwrap();
    let (lp, lh) = (dual.pred.unwrap(), dual.hyper.unwrap());
    let u = state.tasks.u(&state.store);
    let cp = q * lp.powf(q - 1.0) / (2.0 * u[0] * u[0]);
    let ch = q * lh.powf(q - 1.0) / (2.0 * u[1] * u[1]);
    assert!((dual.objective - total_loss(&[lp, lh], &u, q).unwrap()).abs() < 1e-12);
    for id in state.group(ParamGroup::Encoder) {
        let d = gd.param(id).unwrap().data();
        let p = gp.param(id).unwrap().data();
        let h = gh.param(id).unwrap().data();
        let expect: Vec<f64> = p.iter().zip(h).map(|(p, h)| cp * p + ch * h).collect();
        let num: f64 = d.iter().zip(&expect).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = expect.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        assert!(num / den < 1e-6, "{}: {}", state.store.name(id), num / den);
    }
}
