//! Anchor, proposal and prediction decoders.

use crate::nn::{multi_head_attention, Graph, NodeId, ParameterStore};

use super::{Forecaster, ModelError};

/// Regression heads emit displacements in units of `OUTPUT_SCALE_M`
/// meters; predicting tens of meters from unit-scale activations would
/// otherwise dominate the optimization with slow weight growth.
const OUTPUT_SCALE_M: f32 = 10.0;

/// N learned queries cross-attend to the social context; each anchor
/// embedding is decoded to sparse waypoints and a classification logit.
pub fn decode_anchors(
    g: &mut Graph,
    store: &ParameterStore,
    model: &Forecaster,
    context: NodeId,
    token_mask: &[bool],
) -> Result<(NodeId, NodeId, NodeId), ModelError> {
    let attn = model.cfg.attention();
    let queries = g.param(store, &model.anchor_queries)?;
    let cross = multi_head_attention(
        g,
        store,
        queries,
        context,
        Some(token_mask),
        &attn,
        &model.anchor_cross,
    )?;
    let mut e = g.add(queries, cross)?;
    let n = model.anchor_ln.apply(g, store, e)?;
    let f = model.anchor_ffn.apply(g, store, n)?;
    e = g.add(e, f)?;
    e = model.anchor_out_ln.apply(g, store, e)?;

    let h = model.waypoint_head[0].apply(g, store, e)?;
    let h = g.relu(h);
    let waypoints = model.waypoint_head[1].apply(g, store, h)?;
    let waypoints = g.mul_scalar(waypoints, OUTPUT_SCALE_M);
    let logits = model.anchor_logit_head.apply(g, store, e)?;
    Ok((e, waypoints, logits))
}

/// Feed-forward head mapping the focal token to K full-horizon
/// trajectories.
pub fn decode_proposals(
    g: &mut Graph,
    store: &ParameterStore,
    model: &Forecaster,
    focal_token: NodeId,
) -> Result<NodeId, ModelError> {
    let h = model.proposal_head[0].apply(g, store, focal_token)?;
    let h = g.relu(h);
    let flat = model.proposal_head[1].apply(g, store, h)?;
    let flat = g.mul_scalar(flat, OUTPUT_SCALE_M);
    Ok(g.reshape(flat, vec![model.cfg.num_modes, model.cfg.future_len * 2])?)
}

/// Proposal-derived mode queries cross-attend over anchors and context;
/// the regression head emits residual offsets on the proposals and the
/// classification head emits mode probabilities.
pub fn decode_predictions(
    g: &mut Graph,
    store: &ParameterStore,
    model: &Forecaster,
    anchor_embeddings: NodeId,
    proposals: NodeId,
    context: NodeId,
    token_mask: &[bool],
) -> Result<(NodeId, NodeId), ModelError> {
    let attn = model.cfg.attention();
    let queries = model.mode_embed.apply(g, store, proposals)?;
    let kv = g.concat_rows(&[anchor_embeddings, context])?;
    let mut kv_mask = vec![true; model.cfg.num_anchors];
    kv_mask.extend_from_slice(token_mask);
    let cross = multi_head_attention(g, store, queries, kv, Some(&kv_mask), &attn, &model.pred_cross)?;
    let mut m = g.add(queries, cross)?;
    let n = model.pred_ln.apply(g, store, m)?;
    let f = model.pred_ffn.apply(g, store, n)?;
    m = g.add(m, f)?;
    m = model.pred_out_ln.apply(g, store, m)?;

    let h = model.offset_head[0].apply(g, store, m)?;
    let h = g.relu(h);
    let offsets = model.offset_head[1].apply(g, store, h)?;
    let offsets = g.mul_scalar(offsets, OUTPUT_SCALE_M);
    let trajectories = g.add(proposals, offsets)?;

    let logits = model.mode_logit_head.apply(g, store, m)?;
    let logits_row = g.reshape(logits, vec![1, model.cfg.num_modes])?;
    let probs = g.softmax_rows(logits_row, None)?;
    Ok((trajectories, probs))
}
