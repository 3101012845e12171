//! Featurization of a scenario for the focal agent plus the social
//! context encoder: embedded agent histories, neighbor interaction fused
//! into the focal token, lane-segment tokens, and joint self-attention.

use crate::features::{
    build_history_features, build_interaction_features, standardize_track, HistoryFeature,
    InteractionFeature, NeighborConfig, HISTORY_FEATURE_WIDTH, INTERACTION_FEATURE_WIDTH,
};
use crate::geom::{Point2, Pose2};
use crate::map::{
    lane_features, query_segments, split_map, LaneFeature, MapQueryConfig, SegmentIndex,
    LANE_FEATURE_WIDTH,
};
use crate::nn::{multi_head_attention, Graph, NodeId, ParameterStore, TensorValue};
use crate::scenario::{ObjectType, Scenario};

use super::{Forecaster, ModelConfig, ModelError};

/// Geometry scale applied to metric feature columns before they enter the
/// network; keeps token activations near unit range.
const METRIC_SCALE: f32 = 0.1;

/// Featurization policy around the model: neighbor selection, map query
/// radii and the lane-token budget.
#[derive(Clone, Debug)]
pub struct FeatureConfig {
    pub neighbors: NeighborConfig,
    pub map_radii: MapQueryConfig,
    /// Nearest lane segments kept per agent.
    pub max_segments: usize,
    /// Points per lane segment (split size and feature row count).
    pub segment_points: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            neighbors: NeighborConfig::default(),
            map_radii: MapQueryConfig::default(),
            max_segments: 64,
            segment_points: crate::map::DEFAULT_SEGMENT_POINTS,
        }
    }
}

/// Everything the network consumes for one scenario, in plain matrices.
/// Padded entries (from batching) carry zero rows and a false mask.
#[derive(Clone, Debug)]
pub struct ScenarioFeatures {
    pub scenario_id: String,
    pub focal_object_type: ObjectType,
    /// World pose of the focal agent at the last history step; forecasts
    /// are expressed relative to it.
    pub focal_reference: Pose2,
    /// Focal first; only agents observed at the reference step.
    pub agent_histories: Vec<HistoryFeature>,
    pub agent_mask: Vec<bool>,
    pub interaction: InteractionFeature,
    pub neighbor_mask: Vec<bool>,
    pub lanes: Vec<LaneFeature>,
    pub lane_mask: Vec<bool>,
    /// Focal future in the standardization frame.
    pub gt_future: Vec<Point2>,
    pub gt_mask: Vec<bool>,
}

impl ScenarioFeatures {
    pub fn n_agents(&self) -> usize {
        self.agent_histories.len()
    }

    pub fn n_lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn has_valid_future(&self) -> bool {
        self.gt_mask.iter().any(|&m| m)
    }

    /// Append zero-filled agent/lane entries up to the given counts.
    pub fn pad_to(&mut self, n_agents: usize, n_lanes: usize, cfg: &ModelConfig, fcfg: &FeatureConfig) {
        while self.agent_histories.len() < n_agents {
            self.agent_histories.push(HistoryFeature {
                agent_id: String::new(),
                rows: vec![[0.0; HISTORY_FEATURE_WIDTH]; cfg.history_len],
            });
            self.agent_mask.push(false);
        }
        while self.lanes.len() < n_lanes {
            self.lanes.push(LaneFeature {
                segment_id: String::new(),
                rows: vec![[0.0; LANE_FEATURE_WIDTH]; fcfg.segment_points],
            });
            self.lane_mask.push(false);
        }
    }
}

/// Build the model inputs for the focal agent of `scenario`.
pub fn featurize(
    scenario: &Scenario,
    cfg: &ModelConfig,
    fcfg: &FeatureConfig,
) -> Result<ScenarioFeatures, ModelError> {
    let h = scenario.horizon.history_len;
    if h != cfg.history_len || scenario.horizon.future_len != cfg.future_len {
        return Err(ModelError::InvalidConfig(format!(
            "scenario horizon {}+{} does not match model {}+{}",
            h, scenario.horizon.future_len, cfg.history_len, cfg.future_len
        )));
    }
    let focal = scenario.focal_track()?;
    let reference = scenario.focal_reference_pose()?;

    let mut agent_histories = vec![build_history_features(scenario, &focal.agent_id)?];
    for track in &scenario.tracks {
        if track.agent_id != focal.agent_id && track.states[h - 1].valid {
            agent_histories.push(build_history_features(scenario, &track.agent_id)?);
        }
    }
    let agent_mask = vec![true; agent_histories.len()];

    let interaction = build_interaction_features(scenario, &focal.agent_id, &fcfg.neighbors)?;
    let neighbor_mask = vec![true; interaction.n_neighbors()];

    let segments = split_map(&scenario.map, fcfg.segment_points)?;
    let index = SegmentIndex::build(segments);
    let mut near = query_segments(
        &index,
        reference.position(),
        focal.object_type,
        &fcfg.map_radii,
    )?;
    near.truncate(fcfg.max_segments);
    let lanes = lane_features(&near, &reference, fcfg.segment_points);
    let lane_mask = vec![true; lanes.len()];

    let std_focal = standardize_track(focal, h)?;
    let gt_future: Vec<Point2> = std_focal.states[h..]
        .iter()
        .map(|st| st.pose.position())
        .collect();
    let gt_mask: Vec<bool> = std_focal.states[h..].iter().map(|st| st.valid).collect();

    Ok(ScenarioFeatures {
        scenario_id: scenario.scenario_id.clone(),
        focal_object_type: focal.object_type,
        focal_reference: reference,
        agent_histories,
        agent_mask,
        interaction,
        neighbor_mask,
        lanes,
        lane_mask,
        gt_future,
        gt_mask,
    })
}

fn scaled_const<const W: usize>(
    g: &mut Graph,
    rows: &[[f64; W]],
    scale: &[f32; W],
) -> NodeId {
    let mut data = Vec::with_capacity(rows.len() * W);
    for row in rows {
        for (j, v) in row.iter().enumerate() {
            data.push(*v as f32 * scale[j]);
        }
    }
    g.constant(TensorValue::new(vec![rows.len(), W], data).unwrap())
}

/// Masked mean over rows: weights valid/Σvalid as a constant [1, n] row.
fn masked_mean_pool(
    g: &mut Graph,
    x: NodeId,
    valid: &[bool],
) -> Result<NodeId, ModelError> {
    let n = valid.len();
    let count = valid.iter().filter(|&&v| v).count();
    let w = if count == 0 { 0.0 } else { 1.0 / count as f32 };
    let weights: Vec<f32> = valid.iter().map(|&v| if v { w } else { 0.0 }).collect();
    let wnode = g.constant(TensorValue::new(vec![1, n], weights).unwrap());
    Ok(g.matmul(wnode, x)?)
}

const S: f32 = METRIC_SCALE;
const HISTORY_SCALE: [f32; HISTORY_FEATURE_WIDTH] =
    [S, S, S, S, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
const INTERACTION_SCALE: [f32; INTERACTION_FEATURE_WIDTH] = [S, S, S, S, 1.0, 1.0, 1.0];
const LANE_SCALE: [f32; LANE_FEATURE_WIDTH] = [S, S, 1.0, 1.0, 1.0];

/// Embed one feature matrix with a shared two-layer MLP and pool the
/// valid rows into a single token.
fn embed_and_pool<const W: usize>(
    g: &mut Graph,
    store: &ParameterStore,
    rows: &[[f64; W]],
    scale: &[f32; W],
    valid_col: usize,
    embed: &[crate::nn::LinearParams; 2],
) -> Result<NodeId, ModelError> {
    let x = scaled_const(g, rows, scale);
    let h1 = embed[0].apply(g, store, x)?;
    let h1 = g.relu(h1);
    let h2 = embed[1].apply(g, store, h1)?;
    let valid: Vec<bool> = rows.iter().map(|r| r[valid_col] != 0.0).collect();
    masked_mean_pool(g, h2, &valid)
}

/// Encode agents and lanes into a joint token matrix (focal token first)
/// and run the self-attention encoder stack. Returns the tokens and the
/// kv mask of real (non-padded) entries.
pub fn encode_social_context(
    g: &mut Graph,
    store: &ParameterStore,
    model: &Forecaster,
    feats: &ScenarioFeatures,
) -> Result<(NodeId, Vec<bool>), ModelError> {
    let attn = model.cfg.attention();
    let type_table = g.param(store, &model.token_type)?;
    let focal_type = g.slice_rows(type_table, 0, 1)?;
    let other_type = g.slice_rows(type_table, 1, 1)?;
    let lane_type = g.slice_rows(type_table, 2, 1)?;

    let mut tokens: Vec<NodeId> = Vec::with_capacity(feats.n_agents() + feats.n_lanes());
    for (i, hist) in feats.agent_histories.iter().enumerate() {
        let pooled = embed_and_pool(
            g,
            store,
            &hist.rows,
            &HISTORY_SCALE,
            HISTORY_FEATURE_WIDTH - 1,
            &model.hist_embed,
        )?;
        let tagged = if i == 0 {
            let t = g.add(pooled, focal_type)?;
            // fuse neighbor relative-state tokens into the focal token
            if feats.interaction.n_neighbors() > 0 {
                let mut nbr_tokens = Vec::with_capacity(feats.interaction.n_neighbors());
                for rows in &feats.interaction.neighbor_rows {
                    nbr_tokens.push(embed_and_pool(
                        g,
                        store,
                        rows,
                        &INTERACTION_SCALE,
                        INTERACTION_FEATURE_WIDTH - 1,
                        &model.inter_embed,
                    )?);
                }
                let nbr = g.concat_rows(&nbr_tokens)?;
                let fused = multi_head_attention(
                    g,
                    store,
                    t,
                    nbr,
                    Some(&feats.neighbor_mask),
                    &attn,
                    &model.inter_cross,
                )?;
                g.add(t, fused)?
            } else {
                t
            }
        } else {
            g.add(pooled, other_type)?
        };
        tokens.push(tagged);
    }
    for lane in &feats.lanes {
        let pooled = embed_and_pool(
            g,
            store,
            &lane.rows,
            &LANE_SCALE,
            LANE_FEATURE_WIDTH - 1,
            &model.lane_embed,
        )?;
        tokens.push(g.add(pooled, lane_type)?);
    }

    let mut x = g.concat_rows(&tokens)?;
    let mut token_mask = feats.agent_mask.clone();
    token_mask.extend_from_slice(&feats.lane_mask);

    for layer in &model.encoder_layers {
        x = layer.apply(g, store, x, Some(&token_mask), &attn)?;
    }
    let x = model.encoder_ln.apply(g, store, x)?;
    Ok((x, token_mask))
}
