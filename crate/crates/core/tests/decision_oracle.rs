mod common;

use common::*;
use secnn::expansion::{propose_expansion, ExpansionConfig, ExpansionKind};
use secnn::{ModelConfig, SecnnModel};

#[test]
fn propose_matches_brute_force_enumeration() {
    let mut kinds = std::collections::HashMap::new();
    let mut excluded = 0;
    let scenarios = (0..24).map(scenario).chain((0..6).map(stationary_scenario));
    for (i, s) in scenarios.enumerate() {
        assert_eq!(s.config.tau, 2.0);
        let p = propose_expansion(&s.model, &s.batch, &s.config, s.l1, s.seed).unwrap();
        let oracle = brute_force_decision(&s.model, &s.batch, &s.config, s.l1, s.seed);
        assert_eq!((p.kind, p.block_idx), (oracle.kind, oracle.block), "scenario {i}: {p:?}\n{oracle:?}");
        let layer_candidates = p.candidates.iter().filter(|c| c.kind == ExpansionKind::AddLayer).count();
        assert_eq!(layer_candidates, oracle.layer_candidates, "scenario {i}");
        if oracle.layer_candidates < s.model.num_blocks() {
            excluded += 1;
        }
        assert!(rel_err(p.eta_current as f64, oracle.eta_current) < 1e-4, "scenario {i}");
        *kinds.entry(p.kind).or_insert(0) += 1;
    }
    for kind in [ExpansionKind::NoExpansion, ExpansionKind::AddLayer, ExpansionKind::WidenChannels] {
        assert!(kinds.contains_key(&kind), "{kinds:?}");
    }
    assert!(excluded > 0);
}

#[test]
fn every_block_full_and_no_widening_reports_empty_layer_set() {
    let cfg = ModelConfig {
        max_channels: Some(1),
        ..toy_config()
    };
    let model = SecnnModel::build_initial(2, 1, 1, cfg, &mut rng(3)).unwrap();
    let batch = random_batch(6, 3, 4, 2, 4);
    let p = propose_expansion(&model, &batch, &ExpansionConfig::default(), 0.0, 5).unwrap();
    assert_eq!(p.kind, ExpansionKind::NoExpansion);
    assert_eq!(p.block_idx, None);
    assert!(p.candidates.is_empty());
    assert_eq!(p.eta_layer_best, f32::NEG_INFINITY);
    assert_eq!(p.eta_widen_best, f32::NEG_INFINITY);
}

#[test]
fn full_blocks_leave_only_widening() {
    let model = SecnnModel::build_initial(2, 1, 1, toy_config(), &mut rng(8)).unwrap();
    let batch = random_batch(6, 3, 4, 2, 9);
    let p = propose_expansion(&model, &batch, &ExpansionConfig::default(), 0.0, 10).unwrap();
    assert_eq!(p.eta_layer_best, f32::NEG_INFINITY);
    assert!(p.candidates.iter().all(|c| c.kind == ExpansionKind::WidenChannels));
    assert_ne!(p.kind, ExpansionKind::AddLayer);
    let oracle = brute_force_decision(&model, &batch, &ExpansionConfig::default(), 0.0, 10);
    assert_eq!((p.kind, p.block_idx), (oracle.kind, oracle.block));
}

#[test]
fn proposal_leaves_the_model_untouched() {
    let s = scenario(7);
    let before = s.model.clone();
    propose_expansion(&s.model, &s.batch, &s.config, s.l1, s.seed).unwrap();
    assert_eq!(s.model, before);
}
