//! Winner-take-all losses. Both the anchor and the prediction loss pick
//! the candidate closest to ground truth (masked mean squared
//! displacement), regress only that candidate, and classify the winning
//! index with cross entropy.

use crate::geom::Point2;
use crate::nn::{Graph, NodeId, TensorValue};

use super::{ForwardNodes, ModelConfig, ModelError};

#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub anchor_reg: f64,
    pub anchor_cls: f64,
    pub pred_reg: f64,
    pub pred_cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { anchor_reg: 1.0, anchor_cls: 1.0, pred_reg: 1.0, pred_cls: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub anchor_reg: f64,
    pub anchor_cls: f64,
    pub pred_reg: f64,
    pub pred_cls: f64,
    pub total: f64,
}

#[derive(Debug)]
pub struct LossNodes {
    pub anchor_reg: NodeId,
    pub anchor_cls: NodeId,
    pub pred_reg: NodeId,
    pub pred_cls: NodeId,
    pub total: NodeId,
    pub best_anchor: usize,
    pub best_mode: usize,
}

/// Masked mean squared displacement of one candidate against ground
/// truth; `None` when no step is valid.
fn masked_msd(candidate: &[Point2], gt: &[Point2], mask: &[bool]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((p, q), &m) in candidate.iter().zip(gt).zip(mask) {
        if m {
            let dx = p.x - q.x;
            let dy = p.y - q.y;
            sum += dx * dx + dy * dy;
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some(sum / count as f64)
    }
}

/// Index and error of the candidate with the smallest masked mean squared
/// displacement; ties go to the lowest index.
pub fn best_candidate(
    candidates: &[Vec<Point2>],
    gt: &[Point2],
    mask: &[bool],
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let e = masked_msd(cand, gt, mask)?;
        if best.map_or(true, |(_, be)| e < be) {
            best = Some((i, e));
        }
    }
    best
}

fn node_rows_to_points(g: &Graph, node: NodeId, rows: usize, pts: usize) -> Vec<Vec<Point2>> {
    let data = g.value(node).data();
    (0..rows)
        .map(|r| {
            (0..pts)
                .map(|i| {
                    Point2::new(
                        data[r * pts * 2 + 2 * i] as f64,
                        data[r * pts * 2 + 2 * i + 1] as f64,
                    )
                })
                .collect()
        })
        .collect()
}

/// Graph node for the masked MSE of `candidates` row `row` against the
/// ground-truth points.
fn masked_mse_node(
    g: &mut Graph,
    candidates: NodeId,
    row: usize,
    gt: &[Point2],
    mask: &[bool],
) -> Result<NodeId, ModelError> {
    let n = gt.len();
    let count = mask.iter().filter(|&&m| m).count();
    let mut target = Vec::with_capacity(2 * n);
    let mut mask_expanded = Vec::with_capacity(2 * n);
    for (p, &m) in gt.iter().zip(mask) {
        let f = if m { 1.0 } else { 0.0 };
        target.push(p.x as f32);
        target.push(p.y as f32);
        mask_expanded.push(f);
        mask_expanded.push(f);
    }
    let cand = g.slice_rows(candidates, row, 1)?;
    let target = g.constant(TensorValue::new(vec![1, 2 * n], target).unwrap());
    let maskc = g.constant(TensorValue::new(vec![1, 2 * n], mask_expanded).unwrap());
    let diff = g.sub(cand, target)?;
    let sq = g.mul_elem(diff, diff)?;
    let masked = g.mul_elem(sq, maskc)?;
    let sum = g.sum_all(masked);
    Ok(g.mul_scalar(sum, 1.0 / count as f32))
}

/// Cross entropy of a probability row [1, n] against the target index.
fn pick_neg_log(g: &mut Graph, probs: NodeId, index: usize) -> Result<NodeId, ModelError> {
    let p = g.slice_cols(probs, index, 1)?;
    let lg = g.log(p);
    Ok(g.mul_scalar(lg, -1.0))
}

fn waypoint_targets(
    cfg: &ModelConfig,
    gt_future: &[Point2],
    gt_mask: &[bool],
) -> (Vec<Point2>, Vec<bool>) {
    let w = cfg.n_waypoints();
    let mut wp_gt = Vec::with_capacity(w);
    let mut wp_mask = Vec::with_capacity(w);
    for i in 0..w {
        let t = cfg.waypoint_timestep(i);
        wp_gt.push(gt_future[t]);
        wp_mask.push(gt_mask[t]);
    }
    (wp_gt, wp_mask)
}

/// Anchor loss against a fixed winning index (the gradient branch of the
/// winner-take-all loss).
pub fn anchor_loss_nodes_at(
    g: &mut Graph,
    cfg: &ModelConfig,
    waypoints: NodeId,
    logits: NodeId,
    gt_future: &[Point2],
    gt_mask: &[bool],
    best: usize,
) -> Result<(NodeId, NodeId), ModelError> {
    let (wp_gt, wp_mask) = waypoint_targets(cfg, gt_future, gt_mask);
    if !wp_mask.iter().any(|&m| m) {
        return Err(ModelError::NoValidFuture);
    }
    let reg = masked_mse_node(g, waypoints, best, &wp_gt, &wp_mask)?;
    let row = g.reshape(logits, vec![1, cfg.num_anchors])?;
    let probs = g.softmax_rows(row, None)?;
    let cls = pick_neg_log(g, probs, best)?;
    Ok((reg, cls))
}

/// Anchor loss on graph nodes: waypoints [N, W*2], logits [N, 1]; ground
/// truth is subsampled at the waypoint timesteps and the closest anchor
/// is the regression and classification target.
pub fn anchor_loss_nodes(
    g: &mut Graph,
    cfg: &ModelConfig,
    waypoints: NodeId,
    logits: NodeId,
    gt_future: &[Point2],
    gt_mask: &[bool],
) -> Result<(NodeId, NodeId, usize), ModelError> {
    let (wp_gt, wp_mask) = waypoint_targets(cfg, gt_future, gt_mask);
    let candidates = node_rows_to_points(g, waypoints, cfg.num_anchors, cfg.n_waypoints());
    let (best, _) = best_candidate(&candidates, &wp_gt, &wp_mask).ok_or(ModelError::NoValidFuture)?;
    let (reg, cls) = anchor_loss_nodes_at(g, cfg, waypoints, logits, gt_future, gt_mask, best)?;
    Ok((reg, cls, best))
}

/// Prediction loss against a fixed winning mode.
pub fn prediction_loss_nodes_at(
    g: &mut Graph,
    cfg: &ModelConfig,
    trajectories: NodeId,
    probabilities: NodeId,
    gt_future: &[Point2],
    gt_mask: &[bool],
    best: usize,
) -> Result<(NodeId, NodeId), ModelError> {
    if !gt_mask.iter().any(|&m| m) {
        return Err(ModelError::NoValidFuture);
    }
    debug_assert_eq!(g.value(trajectories).dims2().0, cfg.num_modes);
    let reg = masked_mse_node(g, trajectories, best, gt_future, gt_mask)?;
    let cls = pick_neg_log(g, probabilities, best)?;
    Ok((reg, cls))
}

/// Prediction loss on graph nodes: trajectories [K, T*2] and mode
/// probabilities [1, K], over all future timesteps.
pub fn prediction_loss_nodes(
    g: &mut Graph,
    cfg: &ModelConfig,
    trajectories: NodeId,
    probabilities: NodeId,
    gt_future: &[Point2],
    gt_mask: &[bool],
) -> Result<(NodeId, NodeId, usize), ModelError> {
    let candidates = node_rows_to_points(g, trajectories, cfg.num_modes, cfg.future_len);
    let (best, _) =
        best_candidate(&candidates, gt_future, gt_mask).ok_or(ModelError::NoValidFuture)?;
    let (reg, cls) =
        prediction_loss_nodes_at(g, cfg, trajectories, probabilities, gt_future, gt_mask, best)?;
    Ok((reg, cls, best))
}

/// Attach all four loss terms plus their weighted total to a forward
/// pass.
pub fn attach_losses(
    g: &mut Graph,
    cfg: &ModelConfig,
    fwd: &ForwardNodes,
    gt_future: &[Point2],
    gt_mask: &[bool],
    weights: &LossWeights,
) -> Result<LossNodes, ModelError> {
    attach_losses_inner(g, cfg, fwd, gt_future, gt_mask, weights, None)
}

/// [`attach_losses`] with frozen winner indices; gradient checks use this
/// to stay on one smooth branch of the piecewise loss.
pub fn attach_losses_at(
    g: &mut Graph,
    cfg: &ModelConfig,
    fwd: &ForwardNodes,
    gt_future: &[Point2],
    gt_mask: &[bool],
    weights: &LossWeights,
    best_anchor: usize,
    best_mode: usize,
) -> Result<LossNodes, ModelError> {
    attach_losses_inner(g, cfg, fwd, gt_future, gt_mask, weights, Some((best_anchor, best_mode)))
}

#[allow(clippy::too_many_arguments)]
fn attach_losses_inner(
    g: &mut Graph,
    cfg: &ModelConfig,
    fwd: &ForwardNodes,
    gt_future: &[Point2],
    gt_mask: &[bool],
    weights: &LossWeights,
    fixed: Option<(usize, usize)>,
) -> Result<LossNodes, ModelError> {
    let (anchor_reg, anchor_cls, best_anchor, pred_reg, pred_cls, best_mode) = match fixed {
        None => {
            let (ar, ac, ba) = anchor_loss_nodes(
                g,
                cfg,
                fwd.anchor_waypoints,
                fwd.anchor_logits,
                gt_future,
                gt_mask,
            )?;
            let (pr, pc, bm) =
                prediction_loss_nodes(g, cfg, fwd.trajectories, fwd.mode_probs, gt_future, gt_mask)?;
            (ar, ac, ba, pr, pc, bm)
        }
        Some((ba, bm)) => {
            let (ar, ac) = anchor_loss_nodes_at(
                g,
                cfg,
                fwd.anchor_waypoints,
                fwd.anchor_logits,
                gt_future,
                gt_mask,
                ba,
            )?;
            let (pr, pc) = prediction_loss_nodes_at(
                g,
                cfg,
                fwd.trajectories,
                fwd.mode_probs,
                gt_future,
                gt_mask,
                bm,
            )?;
            (ar, ac, ba, pr, pc, bm)
        }
    };
    let wa = g.mul_scalar(anchor_reg, weights.anchor_reg as f32);
    let wb = g.mul_scalar(anchor_cls, weights.anchor_cls as f32);
    let wc = g.mul_scalar(pred_reg, weights.pred_reg as f32);
    let wd = g.mul_scalar(pred_cls, weights.pred_cls as f32);
    let ab = g.add(wa, wb)?;
    let cd = g.add(wc, wd)?;
    let total = g.add(ab, cd)?;
    Ok(LossNodes { anchor_reg, anchor_cls, pred_reg, pred_cls, total, best_anchor, best_mode })
}

impl LossNodes {
    pub fn breakdown(&self, g: &Graph, weights: &LossWeights) -> LossBreakdown {
        let v = |id: NodeId| g.value(id).item() as f64;
        LossBreakdown {
            anchor_reg: weights.anchor_reg * v(self.anchor_reg),
            anchor_cls: weights.anchor_cls * v(self.anchor_cls),
            pred_reg: weights.pred_reg * v(self.pred_reg),
            pred_cls: weights.pred_cls * v(self.pred_cls),
            total: v(self.total),
        }
    }
}

/// Standalone anchor loss over plain values: `waypoints` is N candidates
/// of W points decoded at stride boundaries, `logits` their scores;
/// ground truth covers all T future steps and is subsampled here.
pub fn anchor_loss(
    waypoints: &[Vec<Point2>],
    logits: &[f64],
    gt_future: &[Point2],
    gt_mask: &[bool],
    stride: usize,
) -> Result<(f64, f64), ModelError> {
    let n = waypoints.len();
    let w = waypoints.first().map_or(0, |c| c.len());
    let cfg = ModelConfig {
        num_anchors: n,
        num_modes: 1.min(n),
        future_len: gt_future.len(),
        waypoint_stride: stride,
        ..ModelConfig::default()
    };
    if w != cfg.n_waypoints() {
        return Err(ModelError::InvalidConfig(format!(
            "{w} waypoints per anchor vs future {} at stride {stride}",
            gt_future.len()
        )));
    }
    let mut g = Graph::new();
    let wp = points_const(&mut g, waypoints);
    let lg = g.constant(TensorValue::new(
        vec![n, 1],
        logits.iter().map(|&v| v as f32).collect(),
    ).map_err(ModelError::Nn)?);
    let (reg, cls, _) = anchor_loss_nodes(&mut g, &cfg, wp, lg, gt_future, gt_mask)?;
    Ok((g.value(reg).item() as f64, g.value(cls).item() as f64))
}

/// Standalone prediction loss over plain values; probabilities must
/// already form a distribution.
pub fn prediction_loss(
    trajectories: &[Vec<Point2>],
    probabilities: &[f64],
    gt_future: &[Point2],
    gt_mask: &[bool],
) -> Result<(f64, f64), ModelError> {
    let k = trajectories.len();
    let cfg = ModelConfig {
        num_anchors: k.max(1),
        num_modes: k,
        future_len: gt_future.len(),
        waypoint_stride: gt_future.len().max(1),
        ..ModelConfig::default()
    };
    let mut g = Graph::new();
    let tr = points_const(&mut g, trajectories);
    let pr = g.constant(TensorValue::new(
        vec![1, k],
        probabilities.iter().map(|&v| v as f32).collect(),
    ).map_err(ModelError::Nn)?);
    let (reg, cls, _) = prediction_loss_nodes(&mut g, &cfg, tr, pr, gt_future, gt_mask)?;
    Ok((g.value(reg).item() as f64, g.value(cls).item() as f64))
}

fn points_const(g: &mut Graph, rows: &[Vec<Point2>]) -> NodeId {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    let mut data = Vec::with_capacity(r * c * 2);
    for row in rows {
        for p in row {
            data.push(p.x as f32);
            data.push(p.y as f32);
        }
    }
    g.constant(TensorValue::new(vec![r, c * 2], data).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(coords: &[(f64, f64)]) -> Vec<Point2> {
        coords.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    #[test]
    fn perfect_anchor_has_zero_reg() {
        let gt = pts(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]);
        let mask = vec![true; 4];
        // stride 2 over T=4 -> waypoints at t=1 and t=3
        let anchors = vec![
            pts(&[(2.0, 0.0), (4.0, 0.0)]),
            pts(&[(5.0, 5.0), (6.0, 6.0)]),
        ];
        let logits = vec![2.0, -1.0];
        let (reg, cls) = anchor_loss(&anchors, &logits, &gt, &mask, 2).unwrap();
        assert!(reg.abs() < 1e-12);
        // cls = -log softmax(logits)[0]
        let z = (2.0f64).exp() + (-1.0f64).exp();
        let want = -((2.0f64).exp() / z).ln();
        assert!((cls - want).abs() < 1e-6);
    }

    #[test]
    fn identical_anchors_tie_break_to_lowest() {
        let gt = pts(&[(1.0, 1.0), (2.0, 2.0)]);
        let mask = vec![true; 2];
        let anchors = vec![pts(&[(0.0, 0.0), (0.0, 0.0)]); 3];
        let logits = vec![0.0, 0.0, 0.0];
        let (_, cls) = anchor_loss(&anchors, &logits, &gt, &mask, 1).unwrap();
        // all logits equal: cross entropy of index 0 is ln 3
        assert!((cls - 3.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn anchor_hand_case_matches_pocket_calculator() {
        // 2 anchors, 2 waypoints; arithmetic done by hand:
        // anchor 0 errors: (0.5^2 + 0.5^2) and (1^2) -> msd (0.5 + 1) / 2 = 0.75
        // anchor 1 errors: (2^2 + 0^2) and (2^2 + 1^2) -> msd (4 + 5) / 2 = 4.5
        // best = 0, reg = 0.75; cls = -ln(e^0.3 / (e^0.3 + e^1.1))
        let gt = pts(&[(1.0, 1.0), (2.0, 1.0)]);
        let mask = vec![true, true];
        let anchors = vec![
            pts(&[(1.5, 1.5), (2.0, 0.0)]),
            pts(&[(3.0, 1.0), (4.0, 2.0)]),
        ];
        let logits = vec![0.3, 1.1];
        let (reg, cls) = anchor_loss(&anchors, &logits, &gt, &mask, 1).unwrap();
        assert!((reg - 0.75).abs() < 1e-6, "reg {reg}");
        let z = (0.3f64).exp() + (1.1f64).exp();
        assert!((cls - (-((0.3f64).exp() / z).ln())).abs() < 1e-6);
    }

    #[test]
    fn anchor_loss_requires_valid_future() {
        let gt = pts(&[(0.0, 0.0), (1.0, 1.0)]);
        let mask = vec![false, false];
        let anchors = vec![pts(&[(0.0, 0.0), (1.0, 1.0)])];
        assert_eq!(
            anchor_loss(&anchors, &[0.0], &gt, &mask, 1).unwrap_err(),
            ModelError::NoValidFuture
        );
    }

    #[test]
    fn masked_steps_are_ignored() {
        let gt = pts(&[(1.0, 0.0), (99.0, 99.0), (3.0, 0.0)]);
        let mask = vec![true, false, true];
        let trajs = vec![pts(&[(1.0, 0.0), (0.0, 0.0), (3.0, 0.0)])];
        let (reg, _) = prediction_loss(&trajs, &[1.0], &gt, &mask).unwrap();
        assert!(reg.abs() < 1e-12);
    }

    #[test]
    fn perfect_mode_with_full_probability_is_free() {
        let gt = pts(&[(0.5, -0.5), (1.0, -1.0), (1.5, -1.5)]);
        let mask = vec![true; 3];
        let trajs = vec![gt.clone(), pts(&[(9.0, 9.0), (9.0, 9.0), (9.0, 9.0)])];
        let probs = vec![1.0 - 1e-7, 1e-7];
        let (reg, cls) = prediction_loss(&trajs, &probs, &gt, &mask).unwrap();
        assert!(reg.abs() < 1e-12);
        assert!(cls.abs() < 1e-5);
    }

    #[test]
    fn uniform_probabilities_cost_ln_k() {
        let gt = pts(&[(1.0, 2.0), (2.0, 3.0)]);
        let mask = vec![true; 2];
        let k = 6;
        let trajs: Vec<Vec<Point2>> =
            (0..k).map(|i| pts(&[(i as f64, 0.0), (i as f64, 1.0)])).collect();
        let probs = vec![1.0 / k as f64; k];
        let (_, cls) = prediction_loss(&trajs, &probs, &gt, &mask).unwrap();
        assert!((cls - (k as f64).ln()).abs() < 1e-5);
    }

    #[test]
    fn prediction_hand_case() {
        // K=2, T=3 by hand:
        // mode 0 sq errs: 0.25, 0.25, 1.0 -> msd 0.5
        // mode 1 sq errs: 1, 4, 9 -> msd 14/3
        // best 0; reg 0.5; cls = -ln 0.4
        let gt = pts(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        let mask = vec![true; 3];
        let trajs = vec![
            pts(&[(1.5, 0.0), (2.0, 0.5), (4.0, 0.0)]),
            pts(&[(2.0, 0.0), (4.0, 0.0), (6.0, 0.0)]),
        ];
        let probs = vec![0.4, 0.6];
        let (reg, cls) = prediction_loss(&trajs, &probs, &gt, &mask).unwrap();
        assert!((reg - 0.5).abs() < 1e-6, "reg {reg}");
        assert!((cls - (-(0.4f64).ln())).abs() < 1e-5);
    }

    #[test]
    fn winner_take_all_never_improves_with_worse_winner() {
        // replacing the best mode by a strictly worse candidate cannot
        // lower the regression term
        let gt = pts(&[(1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]);
        let mask = vec![true; 3];
        let best = pts(&[(1.1, 1.0), (2.1, 1.0), (3.1, 1.0)]);
        let other = pts(&[(5.0, 5.0), (6.0, 5.0), (7.0, 5.0)]);
        let (reg_good, _) =
            prediction_loss(&[best, other.clone()], &[0.5, 0.5], &gt, &mask).unwrap();
        let worse = pts(&[(1.5, 1.4), (2.5, 1.4), (3.5, 1.4)]);
        let (reg_worse, _) =
            prediction_loss(&[worse, other], &[0.5, 0.5], &gt, &mask).unwrap();
        assert!(reg_worse >= reg_good);
    }
}
