//! The forecasting model: encoders over agent history, neighbor
//! interaction and lane features; a transformer context; an anchor
//! decoder for intermediate waypoint hypotheses; and a prediction decoder
//! that refines proposals into K trajectories with probabilities.

mod encode;
mod decode;
mod loss;
#[cfg(test)]
mod tests;

pub use encode::{encode_social_context, featurize, FeatureConfig, ScenarioFeatures};
pub use decode::{decode_anchors, decode_predictions, decode_proposals};
pub use loss::{
    anchor_loss, anchor_loss_nodes, anchor_loss_nodes_at, attach_losses, attach_losses_at,
    best_candidate, prediction_loss, prediction_loss_nodes, prediction_loss_nodes_at,
    LossBreakdown, LossNodes, LossWeights,
};

use thiserror::Error;

use crate::geom::Point2;
use crate::map::MapError;
use crate::nn::{
    AttentionConfig, AttentionParams, EncoderLayerParams, FeedForwardParams, Graph, Init,
    LayerNormParams, LinearParams, NnError, NodeId, ParameterStore,
};
use crate::rng::seeded;
use crate::scenario::{Scenario, ScenarioError};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("no valid future step for the scored agent")]
    NoValidFuture,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub num_anchors: usize,
    pub num_modes: usize,
    pub future_len: usize,
    pub history_len: usize,
    pub waypoint_stride: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            n_encoder_layers: 2,
            num_anchors: 16,
            num_modes: 6,
            future_len: 60,
            history_len: 15,
            waypoint_stride: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_modes == 0 || self.num_modes > self.num_anchors {
            return Err(ModelError::InvalidConfig(format!(
                "num_modes {} must be in 1..=num_anchors {}",
                self.num_modes, self.num_anchors
            )));
        }
        if self.waypoint_stride == 0 || self.future_len % self.waypoint_stride != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "future_len {} must be divisible by waypoint_stride {}",
                self.future_len, self.waypoint_stride
            )));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.history_len == 0 || self.future_len == 0 || self.n_encoder_layers == 0 {
            return Err(ModelError::InvalidConfig("lengths must be positive".into()));
        }
        Ok(())
    }

    /// Sparse waypoints per anchor.
    pub fn n_waypoints(&self) -> usize {
        self.future_len / self.waypoint_stride
    }

    /// Future timestep carried by waypoint `i`: the end of each stride
    /// window, so the last waypoint is the endpoint.
    pub fn waypoint_timestep(&self, i: usize) -> usize {
        (i + 1) * self.waypoint_stride - 1
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig { d_model: self.d_model, n_heads: self.n_heads }
    }

    fn ffn_hidden(&self) -> usize {
        2 * self.d_model
    }
}

/// Multi-modal forecast for one agent, in its standardization frame.
#[derive(Clone, Debug)]
pub struct ForecastOutput {
    /// K trajectories of T points.
    pub trajectories: Vec<Vec<Point2>>,
    /// K mode probabilities, summing to 1.
    pub probabilities: Vec<f64>,
    /// N anchor hypotheses of T/stride sparse waypoints.
    pub anchors: Vec<Vec<Point2>>,
    /// K unrefined proposals of T points.
    pub proposals: Vec<Vec<Point2>>,
}

impl ForecastOutput {
    pub fn validate(&self) -> Result<(), ModelError> {
        let sum: f64 = self.probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(ModelError::InvalidConfig(format!(
                "mode probabilities sum to {sum}"
            )));
        }
        if self.probabilities.iter().any(|&p| !(p > 0.0 && p < 1.0 + 1e-9)) {
            return Err(ModelError::InvalidConfig("probabilities out of (0, 1)".into()));
        }
        let finite = self
            .trajectories
            .iter()
            .chain(&self.anchors)
            .chain(&self.proposals)
            .flatten()
            .all(|p| p.x.is_finite() && p.y.is_finite());
        if !finite {
            return Err(ModelError::InvalidConfig("non-finite coordinates".into()));
        }
        Ok(())
    }
}

/// Parameter names of every block, derived from the config; creation
/// order is fixed so initialization is reproducible.
#[derive(Debug)]
pub struct Forecaster {
    pub cfg: ModelConfig,
    pub(crate) hist_embed: [LinearParams; 2],
    pub(crate) inter_embed: [LinearParams; 2],
    pub(crate) lane_embed: [LinearParams; 2],
    pub(crate) token_type: String,
    pub(crate) inter_cross: AttentionParams,
    pub(crate) encoder_layers: Vec<EncoderLayerParams>,
    pub(crate) encoder_ln: LayerNormParams,
    pub(crate) anchor_queries: String,
    pub(crate) anchor_cross: AttentionParams,
    pub(crate) anchor_ln: LayerNormParams,
    pub(crate) anchor_ffn: FeedForwardParams,
    pub(crate) anchor_out_ln: LayerNormParams,
    pub(crate) waypoint_head: [LinearParams; 2],
    pub(crate) anchor_logit_head: LinearParams,
    pub(crate) proposal_head: [LinearParams; 2],
    pub(crate) mode_embed: LinearParams,
    pub(crate) pred_cross: AttentionParams,
    pub(crate) pred_ln: LayerNormParams,
    pub(crate) pred_ffn: FeedForwardParams,
    pub(crate) pred_out_ln: LayerNormParams,
    pub(crate) offset_head: [LinearParams; 2],
    pub(crate) mode_logit_head: LinearParams,
}

impl Forecaster {
    /// Register every parameter in `store` (seeded init) and return the
    /// name layout.
    pub fn init(cfg: ModelConfig, store: &mut ParameterStore, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = seeded(seed);
        let d = cfg.d_model;
        let hidden = cfg.ffn_hidden();
        let attn = cfg.attention();
        let t2 = cfg.future_len * 2;
        let w2 = cfg.n_waypoints() * 2;

        let hist_embed = [
            LinearParams::define(store, "hist.embed1", crate::features::HISTORY_FEATURE_WIDTH, d, &mut rng)?,
            LinearParams::define(store, "hist.embed2", d, d, &mut rng)?,
        ];
        let inter_embed = [
            LinearParams::define(store, "inter.embed1", crate::features::INTERACTION_FEATURE_WIDTH, d, &mut rng)?,
            LinearParams::define(store, "inter.embed2", d, d, &mut rng)?,
        ];
        let lane_embed = [
            LinearParams::define(store, "lane.embed1", crate::map::LANE_FEATURE_WIDTH, d, &mut rng)?,
            LinearParams::define(store, "lane.embed2", d, d, &mut rng)?,
        ];
        let token_type = "token_type".to_string();
        store.define(
            &token_type,
            vec![3, d],
            Init::Uniform { scale: (1.0 / d as f32).sqrt() },
            &mut rng,
        )?;
        let inter_cross = AttentionParams::define(store, "inter.cross", &attn, &mut rng)?;
        let encoder_layers = (0..cfg.n_encoder_layers)
            .map(|i| EncoderLayerParams::define(store, &format!("enc{i}"), &attn, hidden, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let encoder_ln = LayerNormParams::define(store, "enc.out_ln", d, &mut rng)?;

        let anchor_queries = "anchor.queries".to_string();
        store.define(
            &anchor_queries,
            vec![cfg.num_anchors, d],
            Init::Uniform { scale: (1.0 / d as f32).sqrt() },
            &mut rng,
        )?;
        let anchor_cross = AttentionParams::define(store, "anchor.cross", &attn, &mut rng)?;
        let anchor_ln = LayerNormParams::define(store, "anchor.ln", d, &mut rng)?;
        let anchor_ffn = FeedForwardParams::define(store, "anchor", d, hidden, &mut rng)?;
        let anchor_out_ln = LayerNormParams::define(store, "anchor.out_ln", d, &mut rng)?;
        let waypoint_head = [
            LinearParams::define(store, "anchor.wp1", d, hidden, &mut rng)?,
            LinearParams::define(store, "anchor.wp2", hidden, w2, &mut rng)?,
        ];
        let anchor_logit_head = LinearParams::define(store, "anchor.logit", d, 1, &mut rng)?;

        let proposal_head = [
            LinearParams::define(store, "proposal.h1", d, hidden, &mut rng)?,
            LinearParams::define(store, "proposal.h2", hidden, cfg.num_modes * t2, &mut rng)?,
        ];
        let mode_embed = LinearParams::define(store, "pred.mode_embed", t2, d, &mut rng)?;
        let pred_cross = AttentionParams::define(store, "pred.cross", &attn, &mut rng)?;
        let pred_ln = LayerNormParams::define(store, "pred.ln", d, &mut rng)?;
        let pred_ffn = FeedForwardParams::define(store, "pred", d, hidden, &mut rng)?;
        let pred_out_ln = LayerNormParams::define(store, "pred.out_ln", d, &mut rng)?;
        let offset_head = [
            LinearParams::define(store, "pred.off1", d, hidden, &mut rng)?,
            LinearParams::define(store, "pred.off2", hidden, t2, &mut rng)?,
        ];
        let mode_logit_head = LinearParams::define(store, "pred.logit", d, 1, &mut rng)?;

        // Spread the candidate heads apart at init: distinct anchors and
        // proposals keep the winner-take-all selection stable and break
        // the symmetry between modes.
        for name in ["anchor.wp2.b", "proposal.h2.b"] {
            for v in store.value_mut(name)?.data_mut() {
                *v = crate::rng::uniform_f32(&mut rng, 1.0);
            }
        }

        Ok(Self {
            cfg,
            hist_embed,
            inter_embed,
            lane_embed,
            token_type,
            inter_cross,
            encoder_layers,
            encoder_ln,
            anchor_queries,
            anchor_cross,
            anchor_ln,
            anchor_ffn,
            anchor_out_ln,
            waypoint_head,
            anchor_logit_head,
            proposal_head,
            mode_embed,
            pred_cross,
            pred_ln,
            pred_ffn,
            pred_out_ln,
            offset_head,
            mode_logit_head,
        })
    }

    /// Full forward pass over featurized inputs; returns the graph nodes
    /// of every stage so losses can be attached.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        feats: &ScenarioFeatures,
    ) -> Result<ForwardNodes, ModelError> {
        let (context, token_mask) = encode_social_context(g, store, self, feats)?;
        let (anchor_embeddings, anchor_waypoints, anchor_logits) =
            decode_anchors(g, store, self, context, &token_mask)?;
        let focal_token = g.slice_rows(context, 0, 1)?;
        let proposals = decode_proposals(g, store, self, focal_token)?;
        let (trajectories, mode_probs) = decode_predictions(
            g,
            store,
            self,
            anchor_embeddings,
            proposals,
            context,
            &token_mask,
        )?;
        Ok(ForwardNodes {
            context,
            token_mask,
            anchor_embeddings,
            anchor_waypoints,
            anchor_logits,
            proposals,
            trajectories,
            mode_probs,
        })
    }

    /// Inference for one scenario: featurize, run the graph, package the
    /// outputs in the focal agent frame.
    pub fn predict(
        &self,
        store: &ParameterStore,
        scenario: &Scenario,
        fcfg: &FeatureConfig,
    ) -> Result<ForecastOutput, ModelError> {
        let feats = featurize(scenario, &self.cfg, fcfg)?;
        let mut g = Graph::new();
        let nodes = self.forward(&mut g, store, &feats)?;
        Ok(self.package_output(&g, &nodes))
    }

    pub fn package_output(&self, g: &Graph, nodes: &ForwardNodes) -> ForecastOutput {
        let rows_to_points = |node: NodeId, n_rows: usize, n_pts: usize| -> Vec<Vec<Point2>> {
            let data = g.value(node).data();
            (0..n_rows)
                .map(|r| {
                    (0..n_pts)
                        .map(|i| {
                            Point2::new(
                                data[r * n_pts * 2 + 2 * i] as f64,
                                data[r * n_pts * 2 + 2 * i + 1] as f64,
                            )
                        })
                        .collect()
                })
                .collect()
        };
        let k = self.cfg.num_modes;
        let t = self.cfg.future_len;
        let probs: Vec<f64> = g.value(nodes.mode_probs).data().iter().map(|&p| p as f64).collect();
        let total: f64 = probs.iter().sum();
        ForecastOutput {
            trajectories: rows_to_points(nodes.trajectories, k, t),
            probabilities: probs.iter().map(|p| p / total).collect(),
            anchors: rows_to_points(nodes.anchor_waypoints, self.cfg.num_anchors, self.cfg.n_waypoints()),
            proposals: rows_to_points(nodes.proposals, k, t),
        }
    }
}

pub struct ForwardNodes {
    pub context: NodeId,
    pub token_mask: Vec<bool>,
    pub anchor_embeddings: NodeId,
    pub anchor_waypoints: NodeId,
    pub anchor_logits: NodeId,
    pub proposals: NodeId,
    pub trajectories: NodeId,
    pub mode_probs: NodeId,
}
