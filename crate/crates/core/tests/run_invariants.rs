//! Run-level invariants checked over generated configurations.

use proptest::prelude::*;

use lossagent::orchestrator::{load, run, PolicyKind, RunConfig, RunOptions};

fn surface_config(stages: usize, seed: u64, policy: PolicyKind) -> RunConfig {
    let mut cfg = RunConfig::response_surface(stages, seed);
    cfg.policy = policy;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stage_count_indices_and_bounds(
        stages in 1usize..12,
        seed in any::<u64>(),
        policy in prop_oneof![Just(PolicyKind::Fixed), Just(PolicyKind::Random), Just(PolicyKind::GreedyOracle)],
    ) {
        let cfg = surface_config(stages, seed, policy);
        let t = run(&cfg, RunOptions::default()).unwrap();
        prop_assert_eq!(t.len(), stages);
        for (i, e) in t.iter().enumerate() {
            prop_assert_eq!(e.stage_index, i as u64);
            prop_assert!(e.weights_used.validate(&cfg.bounds).is_ok());
            prop_assert_eq!(e.feedback.len(), cfg.objectives.len());
        }
        prop_assert_eq!(t[0].weights_used.values(), cfg.initial_weights.as_slice());
    }

    #[test]
    fn oracle_score_never_decreases(seed in any::<u64>()) {
        let t = run(&surface_config(15, seed, PolicyKind::GreedyOracle), RunOptions::default()).unwrap();
        let scores: Vec<f64> = t.iter().map(|e| e.feedback[0].score_aggregate().unwrap()).collect();
        for w in scores.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn persisted_run_loads_back_identically(seed in any::<u64>(), stages in 1usize..6) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let cfg = surface_config(stages, seed, PolicyKind::Random);
        let t = run(&cfg, RunOptions { out: Some(path.clone()), backend: None }).unwrap();
        let f = load(&path).unwrap();
        prop_assert_eq!(f.entries, t);
        prop_assert_eq!(f.header.config_digest, cfg.digest());
    }
}
