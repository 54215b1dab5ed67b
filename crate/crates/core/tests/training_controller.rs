use devae::config::ExperimentConfig;
use devae::corpus::LabeledSentence;
use devae::diagnostics::MiHistory;
use devae::feature_layer::UpperLossWeights;
use devae::flow::randomize;
use devae::model::DeVae;
use devae::optim::{Optimizer, OptimizerKind};
use devae::oracles::tiny_model_config;
use devae::pipeline::{train_model, Prepared};
use devae::tensor::{Graph, ParamGroup};
use devae::training::{
    apply_substep, modcyc, plan_for, plan_update, substep_groups, PlateauTracker, ScheduleMode, ScheduleState, SubStep,
    UpdatePath, UpdatePlan,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const GROUPS: [ParamGroup; 5] =
    [ParamGroup::Embedding, ParamGroup::Posterior, ParamGroup::Decoder, ParamGroup::Flow, ParamGroup::Scaler];

fn batch() -> Vec<LabeledSentence> {
    vec![
        LabeledSentence { tokens: vec![8, 4, 11, 6], label: 0, raw_text: String::new() },
        LabeledSentence { tokens: vec![9, 5], label: 1, raw_text: String::new() },
        LabeledSentence { tokens: vec![7, 7, 10], label: 1, raw_text: String::new() },
    ]
}

fn noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Written out by hand: ordered branch visits layers bottom-up, encoder
/// then decoder, then prior inference; the normal branch walks top-down.
fn by_hand(converged: bool, top: usize) -> Vec<SubStep> {
    let mut v = Vec::new();
    if converged {
        for i in 0..=top {
            v.push(SubStep::Encoder(i));
            v.push(SubStep::Decoder(i));
        }
        v.push(SubStep::PriorInference);
    } else {
        for i in (0..=top).rev() {
            v.push(SubStep::Joint(i));
        }
    }
    v
}

fn history(values: &[f64]) -> MiHistory {
    let mut h = MiHistory::new(3, 0.05).unwrap();
    for (i, v) in values.iter().enumerate() {
        h.push(i as u64, *v).unwrap();
    }
    h
}

#[test]
fn plan_matches_hand_enumeration_for_small_hierarchies() {
    for top in 1..=3 {
        for converged in [false, true] {
            let plan = plan_for(converged, top);
            let want = if converged { UpdatePath::OrderedLayerwise } else { UpdatePath::NormalVae };
            assert_eq!(plan.path, want);
            assert_eq!(plan.steps, by_hand(converged, top), "top {top}, converged {converged}");
            let back: UpdatePlan = serde_json::from_str(&serde_json::to_string(&plan).unwrap()).unwrap();
            assert_eq!(back, plan);
        }
    }
}

#[test]
fn gate_follows_mi_history() {
    let state = |mi| ScheduleState { epoch: 3, alpha_w: 0.5, alpha_f: 0.2, lower_weight: 0.5, mi };
    assert_eq!(plan_update(&state(history(&[0.1, 0.9, 2.0, 3.5]))).path, UpdatePath::NormalVae);
    assert_eq!(plan_update(&state(history(&[1.0, 1.01, 0.99, 1.0]))).path, UpdatePath::OrderedLayerwise);
    assert_eq!(plan_update(&state(history(&[]))).path, UpdatePath::NormalVae);
}

#[test]
fn substeps_outside_the_two_layer_model_are_rejected() {
    assert!(substep_groups(SubStep::Encoder(2)).is_err());
    assert!(substep_groups(SubStep::Joint(5)).is_err());
}

#[test]
fn each_substep_moves_only_its_own_groups() {
    let mut model = DeVae::<f64>::new(tiny_model_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    randomize(&mut model.store, &model.flow, &mut rng, 0.3);
    let b = batch();
    let refs: Vec<&LabeledSentence> = b.iter().collect();
    let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-2, Some(5.0));
    let hashes = |m: &DeVae<f64>| GROUPS.map(|g| m.param_hash(&m.ids(&[g])));
    for converged in [true, false] {
        for sub in plan_for(converged, 1).steps {
            let before = hashes(&model);
            let eps = noise(&mut rng, b.len(), model.latent_dim());
            apply_substep(&mut model, &mut opt, &refs, sub, (0.7, 0.3), UpperLossWeights::default(), eps).unwrap();
            let after = hashes(&model);
            let allowed = substep_groups(sub).unwrap();
            let mut moved = false;
            for (i, g) in GROUPS.iter().enumerate() {
                if before[i] != after[i] {
                    assert!(allowed.contains(g), "{sub:?} moved {g:?}");
                    moved = true;
                }
            }
            let has_params = allowed.iter().any(|g| !model.ids(&[*g]).is_empty());
            assert_eq!(moved, has_params, "{sub:?}");
        }
    }
}

#[test]
fn small_sgd_steps_do_not_increase_the_lower_loss() {
    let mut model = DeVae::<f64>::new(tiny_model_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = batch();
    let seqs: Vec<&[u32]> = b.iter().map(|s| s.tokens.as_slice()).collect();
    let eps = noise(&mut rng, b.len(), model.latent_dim());
    let ids: Vec<_> = model.store.ids().collect();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 1e-3, None);
    let mut prev = f64::INFINITY;
    for step in 0..50 {
        let mut g = Graph::new(&model.store);
        let loss = model.vae.lower_elbo(&mut g, &seqs, eps.clone(), 1.0).unwrap().0;
        let value = g.scalar(loss);
        let grads = g.backward(loss);
        assert!(value <= prev + 1e-12, "step {step}: {value} after {prev}");
        prev = value;
        opt.step(&mut model.store, &grads, &ids);
    }
}

#[test]
fn plateau_tracker_stops_on_patience_or_cap() {
    let mut t = PlateauTracker::new(2, 1e-3, 100);
    assert!(!t.observe(5.0));
    assert!(!t.observe(4.0));
    assert!(!t.observe(4.0));
    assert!(t.observe(3.999));
    let mut t = PlateauTracker::new(10, 0.0, 3);
    assert!(!t.observe(3.0));
    assert!(!t.observe(2.0));
    assert!(t.observe(1.0));
    assert_eq!(t.steps(), 3);
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.train_size = 160;
    cfg.val_size = 40;
    cfg.test_size = 40;
    cfg.phase1_epochs = 1;
    cfg.phase2_epochs = 2;
    cfg.cycle = 2;
    cfg.mi_batch_size = 32;
    cfg
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = small_config();
    let prepared = Prepared::synthesize(&cfg).unwrap();
    let (m1, r1) = train_model(&cfg, &prepared, ScheduleMode::ModcycGated, 3).unwrap();
    let (m2, r2) = train_model(&cfg, &prepared, ScheduleMode::ModcycGated, 3).unwrap();
    assert_eq!(r1.metrics.without_timing(), r2.metrics.without_timing());
    assert_eq!(m1.full_hash(), m2.full_hash());
    assert_eq!(r1.optimizer_steps, r2.optimizer_steps);
    let (m3, _) = train_model(&cfg, &prepared, ScheduleMode::ModcycGated, 4).unwrap();
    assert_ne!(m1.full_hash(), m3.full_hash());
}

#[test]
fn no_phase_two_epochs_logs_only_phase_one() {
    let mut cfg = small_config();
    cfg.phase2_epochs = 0;
    let prepared = Prepared::synthesize(&cfg).unwrap();
    let (_, report) = train_model(&cfg, &prepared, ScheduleMode::None, 0).unwrap();
    assert_eq!(report.metrics.records.len(), 1);
    assert!(report.metrics.records.iter().all(|r| r.phase == 1));
    assert!(report.optimizer_steps > 0);
}

proptest! {
    #[test]
    fn modcyc_is_periodic_lagged_and_bounded(epoch in 0u64..500, cycle in 1u64..12, lag in 0.0f64..4.0) {
        let (w, f) = modcyc(epoch, cycle, lag).unwrap();
        prop_assert_eq!((w, f), modcyc(epoch + cycle, cycle, lag).unwrap());
        prop_assert!((0.0..1.0).contains(&w));
        prop_assert!((0.0..1.0).contains(&f));
        prop_assert!(f <= w);
        if ((epoch % cycle) as f64) <= lag {
            prop_assert_eq!(f, 0.0);
        }
        prop_assert_eq!(modcyc(epoch, cycle, 0.0).unwrap().1, w);
    }

    #[test]
    fn modcyc_rises_within_a_cycle(cycle in 2u64..12, k in 0u64..20, lag in 0.0f64..3.0) {
        for r in 1..cycle {
            let (w0, f0) = modcyc(k * cycle + r - 1, cycle, lag).unwrap();
            let (w1, f1) = modcyc(k * cycle + r, cycle, lag).unwrap();
            prop_assert!(w1 > w0);
            prop_assert!(f1 >= f0);
        }
    }
}
