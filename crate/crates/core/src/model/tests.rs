use super::*;
use crate::geom::{Point2, Pose2};
use crate::map::{Lane, VectorMap};
use crate::nn::{gradcheck, Graph, ParameterStore};
use crate::scenario::{
    constant_velocity_track, AgentState, AgentTrack, HorizonConfig, ObjectType, Scenario,
};
use crate::synth::{generate_synthetic, SynthConfig};

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_encoder_layers: 1,
        num_anchors: 4,
        num_modes: 2,
        future_len: 6,
        history_len: 5,
        waypoint_stride: 3,
    }
}

/// Small slow-moving scene with one neighbor and one lane; loss stays
/// O(1), which keeps f32 finite differences meaningful.
fn tiny_scenario() -> Scenario {
    let total = 11;
    let focal = constant_velocity_track(
        "a0",
        ObjectType::Pedestrian,
        Pose2::new(0.0, 0.0, 0.3),
        0.9,
        total,
    );
    let neighbor = constant_velocity_track(
        "a1",
        ObjectType::Cyclist,
        Pose2::new(1.8, 0.6, 0.3),
        1.1,
        total,
    );
    let lane = Lane {
        lane_id: "lane0".into(),
        points: (0..6)
            .map(|i| Point2::new(-1.0 + 2.0 * i as f64 * (0.3f64).cos(), 2.0 * i as f64 * (0.3f64).sin()))
            .collect(),
    };
    let s = Scenario {
        scenario_id: "tiny".into(),
        focal_agent_id: "a0".into(),
        tracks: vec![focal, neighbor],
        map: VectorMap { lanes: vec![lane] },
        horizon: HorizonConfig { history_len: 5, future_len: 6 },
    };
    s.validate().unwrap();
    s
}

fn default_scenarios(n: usize, seed: u64) -> Vec<Scenario> {
    generate_synthetic(&SynthConfig { n_scenarios: n, seed, ..SynthConfig::default() }).unwrap()
}

#[test]
fn forward_shapes_and_probability_simplex() {
    let cfg = ModelConfig::default();
    let mut store = ParameterStore::new();
    let model = Forecaster::init(cfg, &mut store, 11).unwrap();
    let fcfg = FeatureConfig::default();
    for s in default_scenarios(3, 21) {
        let out = model.predict(&store, &s, &fcfg).unwrap();
        assert_eq!(out.trajectories.len(), 6);
        assert!(out.trajectories.iter().all(|t| t.len() == 60));
        assert_eq!(out.probabilities.len(), 6);
        assert_eq!(out.anchors.len(), 16);
        assert!(out.anchors.iter().all(|a| a.len() == 6));
        assert_eq!(out.proposals.len(), 6);
        out.validate().unwrap();
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = ModelConfig::default();
    let mut store = ParameterStore::new();
    let model = Forecaster::init(cfg, &mut store, 3).unwrap();
    let fcfg = FeatureConfig::default();
    let s = &default_scenarios(1, 5)[0];
    let a = model.predict(&store, s, &fcfg).unwrap();
    let b = model.predict(&store, s, &fcfg).unwrap();
    assert_eq!(a.probabilities, b.probabilities);
    for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
        for (pa, pb) in ta.iter().zip(tb) {
            assert_eq!(pa.x, pb.x);
            assert_eq!(pa.y, pb.y);
        }
    }
}

#[test]
fn lone_agent_without_lanes_is_well_defined() {
    let cfg = tiny_cfg();
    let mut store = ParameterStore::new();
    let model = Forecaster::init(cfg, &mut store, 9).unwrap();
    let mut s = tiny_scenario();
    s.tracks.truncate(1);
    s.map.lanes.clear();
    let feats = featurize(&s, &cfg, &FeatureConfig::default()).unwrap();
    assert_eq!(feats.n_agents(), 1);
    assert_eq!(feats.n_lanes(), 0);
    let out = model.predict(&store, &s, &FeatureConfig::default()).unwrap();
    out.validate().unwrap();
}

#[test]
fn lane_order_does_not_change_the_forecast() {
    let cfg = ModelConfig::default();
    let mut store = ParameterStore::new();
    let model = Forecaster::init(cfg, &mut store, 13).unwrap();
    let fcfg = FeatureConfig::default();
    // find a scenario with at least two lane tokens
    let s = default_scenarios(8, 33)
        .into_iter()
        .find(|s| {
            featurize(s, &cfg, &fcfg).map(|f| f.n_lanes() >= 2).unwrap_or(false)
        })
        .expect("need a scenario with lanes");
    let feats = featurize(&s, &cfg, &fcfg).unwrap();
    let mut swapped = feats.clone();
    swapped.lanes.swap(0, 1);

    let run = |f: &ScenarioFeatures| {
        let mut g = Graph::new();
        let nodes = model.forward(&mut g, &store, f).unwrap();
        let traj: Vec<f32> = g.value(nodes.trajectories).data().to_vec();
        let probs: Vec<f32> = g.value(nodes.mode_probs).data().to_vec();
        (traj, probs)
    };
    let (ta, pa) = run(&feats);
    let (tb, pb) = run(&swapped);
    for (a, b) in ta.iter().zip(&tb) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
    for (a, b) in pa.iter().zip(&pb) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn zeroed_offset_head_returns_proposals() {
    let cfg = tiny_cfg();
    let mut store = ParameterStore::new();
    let model = Forecaster::init(cfg, &mut store, 2).unwrap();
    for name in ["pred.off2.w", "pred.off2.b"] {
        store.value_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let s = tiny_scenario();
    let out = model.predict(&store, &s, &FeatureConfig::default()).unwrap();
    for (traj, prop) in out.trajectories.iter().zip(&out.proposals) {
        for (a, b) in traj.iter().zip(prop) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
        }
    }
}

#[test]
fn zeroed_waypoint_head_collapses_to_bias() {
    let cfg = tiny_cfg();
    let mut store = ParameterStore::new();
    let model = Forecaster::init(cfg, &mut store, 2).unwrap();
    store.value_mut("anchor.wp2.w").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    let bias = 0.37f32;
    store.value_mut("anchor.wp2.b").unwrap().data_mut().iter_mut().for_each(|v| *v = bias);
    let out = model.predict(&store, &tiny_scenario(), &FeatureConfig::default()).unwrap();
    // affine head with zero weights: every waypoint is the bias pushed
    // through the head's fixed 10x output scale
    for anchor in &out.anchors {
        for p in anchor {
            assert_eq!(p.x as f32, bias * 10.0);
            assert_eq!(p.y as f32, bias * 10.0);
        }
    }
}

#[test]
fn different_focal_agents_get_different_anchors() {
    let cfg = tiny_cfg();
    let mut store = ParameterStore::new();
    let model = Forecaster::init(cfg, &mut store, 2).unwrap();
    let s = tiny_scenario();
    let mut s2 = s.clone();
    s2.focal_agent_id = "a1".into();
    let a = model.predict(&store, &s, &FeatureConfig::default()).unwrap();
    let b = model.predict(&store, &s2, &FeatureConfig::default()).unwrap();
    let flat = |o: &ForecastOutput| -> Vec<f64> {
        o.anchors.iter().flatten().flat_map(|p| [p.x, p.y]).collect()
    };
    assert_ne!(flat(&a), flat(&b));
}

#[test]
fn duplicated_scenario_features_give_identical_context() {
    let cfg = tiny_cfg();
    let mut store = ParameterStore::new();
    let model = Forecaster::init(cfg, &mut store, 2).unwrap();
    let feats = featurize(&tiny_scenario(), &cfg, &FeatureConfig::default()).unwrap();
    let mut g = Graph::new();
    let (ctx_a, _) = encode_social_context(&mut g, &store, &model, &feats).unwrap();
    let (ctx_b, _) = encode_social_context(&mut g, &store, &model, &feats).unwrap();
    assert_eq!(g.value(ctx_a).data(), g.value(ctx_b).data());
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let cfg = tiny_cfg();
    let mut store = ParameterStore::new();
    let model = Forecaster::init(cfg, &mut store, 17).unwrap();
    // keep candidate spread (and with it the loss) at unit scale so the
    // f32 difference quotients stay above their noise floor
    for name in ["anchor.wp2.b", "proposal.h2.b"] {
        store.value_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v *= 0.1);
    }
    let feats = featurize(&tiny_scenario(), &cfg, &FeatureConfig::default()).unwrap();
    let weights = LossWeights::default();

    // freeze the winner-take-all indices at the unperturbed point: finite
    // differences are only meaningful on one smooth branch of the loss
    let (best_anchor, best_mode) = {
        let mut g = Graph::new();
        let fwd = model.forward(&mut g, &store, &feats).unwrap();
        let l = attach_losses(&mut g, &cfg, &fwd, &feats.gt_future, &feats.gt_mask, &weights)
            .unwrap();
        (l.best_anchor, l.best_mode)
    };
    let build = |g: &mut Graph, store: &ParameterStore| {
        let fwd = model.forward(g, store, &feats).unwrap();
        let losses = attach_losses_at(
            g, &cfg, &fwd, &feats.gt_future, &feats.gt_mask, &weights, best_anchor, best_mode,
        )
        .unwrap();
        losses.total
    };

    let names: Vec<String> = store.iter().map(|s| s.name.clone()).collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    // h and atol sized for f32 difference quotients of a loss of order 4:
    // the quotient carries ~eps_f32 * L / (2h) of roundoff no matter how
    // accurate the analytic gradient is.
    gradcheck::check_with_tolerances(
        &mut store,
        &build,
        &name_refs,
        64,
        1e-2,
        1e-2,
        2e-4,
        &mut crate::rng::seeded(41),
    )
    .unwrap();
}

#[test]
fn loss_total_is_sum_of_parts() {
    let cfg = tiny_cfg();
    let mut store = ParameterStore::new();
    let model = Forecaster::init(cfg, &mut store, 23).unwrap();
    let feats = featurize(&tiny_scenario(), &cfg, &FeatureConfig::default()).unwrap();
    let mut g = Graph::new();
    let fwd = model.forward(&mut g, &store, &feats).unwrap();
    let weights = LossWeights::default();
    let nodes = attach_losses(&mut g, &cfg, &fwd, &feats.gt_future, &feats.gt_mask, &weights).unwrap();
    let b = nodes.breakdown(&g, &weights);
    assert!(b.anchor_reg >= 0.0 && b.pred_reg >= 0.0);
    assert!(b.anchor_cls >= 0.0 && b.pred_cls >= 0.0);
    assert!((b.total - (b.anchor_reg + b.anchor_cls + b.pred_reg + b.pred_cls)).abs() < 1e-5);
}

#[test]
fn no_valid_future_is_reported() {
    let cfg = tiny_cfg();
    let mut store = ParameterStore::new();
    let model = Forecaster::init(cfg, &mut store, 23).unwrap();
    let mut s = tiny_scenario();
    let h = s.horizon.history_len;
    for st in s.tracks[0].states[h..].iter_mut() {
        *st = AgentState::missing();
    }
    let feats = featurize(&s, &cfg, &FeatureConfig::default()).unwrap();
    assert!(!feats.has_valid_future());
    let mut g = Graph::new();
    let fwd = model.forward(&mut g, &store, &feats).unwrap();
    let err = attach_losses(
        &mut g,
        &cfg,
        &fwd,
        &feats.gt_future,
        &feats.gt_mask,
        &LossWeights::default(),
    )
    .unwrap_err();
    assert_eq!(err, ModelError::NoValidFuture);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = tiny_cfg();
    cfg.num_modes = 9; // > num_anchors
    assert!(cfg.validate().is_err());
    let mut cfg = tiny_cfg();
    cfg.waypoint_stride = 4; // does not divide future_len
    assert!(cfg.validate().is_err());
    let mut cfg = tiny_cfg();
    cfg.n_heads = 3;
    assert!(cfg.validate().is_err());
}

#[test]
fn featurize_respects_neighbor_and_segment_caps() {
    let cfg = ModelConfig::default();
    let mut fcfg = FeatureConfig::default();
    fcfg.max_segments = 2;
    fcfg.neighbors.max_neighbors = 1;
    let scenarios = default_scenarios(6, 77);
    for s in &scenarios {
        let feats = featurize(s, &cfg, &fcfg).unwrap();
        assert!(feats.n_lanes() <= 2);
        assert!(feats.interaction.n_neighbors() <= 1);
    }
}

/// AgentTrack used in docs of unused-import guard.
#[allow(dead_code)]
fn _unused(_t: AgentTrack) {}
