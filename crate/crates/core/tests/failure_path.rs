use devae::config::ExperimentConfig;
use devae::pipeline::{reproduce_acceptance, AcceptanceOptions, Sabotage};

/// Swapping the trained model for a fresh one before evaluation must be caught
/// by the control and sweep criteria.
#[test]
fn reinitialized_model_fails_control_and_sweep() {
    let mut cfg = ExperimentConfig::desk();
    cfg.seeds = vec![0];
    cfg.phase1_epochs = 1;
    cfg.phase2_epochs = 1;
    let dir = tempfile::tempdir().unwrap();
    let opts = AcceptanceOptions { sabotage: Some(Sabotage::Reinitialize), skip_determinism: true, full_rerun: false };
    let summary = reproduce_acceptance(&cfg, dir.path(), &opts).unwrap();
    let by_id = |id: u8| summary.criteria.iter().find(|c| c.id == id).unwrap();
    assert!(!by_id(6).passed, "{}", summary.table());
    assert!(!by_id(7).passed, "{}", summary.table());
    assert!(!summary.all_passed());
    assert!(summary.criteria.iter().all(|c| c.id != 8));
    assert!(dir.path().join("acceptance.csv").is_file());
}
