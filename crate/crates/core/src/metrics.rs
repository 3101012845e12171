//! Displacement metrics (minADE, minFDE, miss rate, brier variants) and
//! dataset-level evaluation grouped by object category.

use std::collections::HashMap;

use thiserror::Error;

use crate::dataio::format_decimal;
use crate::geom::Point2;
use crate::scenario::{ObjectType, Scenario};

/// Endpoint-miss threshold in meters.
pub const MISS_THRESHOLD_M: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no valid future step")]
    NoValidFuture,
    #[error("too few points for clustering: {n} points, {k} clusters")]
    TooFewPoints { n: usize, k: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no prediction for scenario `{0}`")]
    MissingPrediction(String),
    #[error("malformed prediction for scenario `{0}`: {1}")]
    MalformedPrediction(String, String),
}

/// Plain Euclidean displacement; the naive square-root form so metric
/// values are reproducible by any straightforward reimplementation.
fn displacement(a: &Point2, b: &Point2) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    (dx * dx + dy * dy).sqrt()
}

fn ade_of_mode(mode: &[Point2], gt: &[Point2], mask: &[bool]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..gt.len() {
        if mask[t] {
            sum += displacement(&mode[t], &gt[t]);
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some(sum / count as f64)
    }
}

fn last_valid_step(mask: &[bool]) -> Option<usize> {
    (0..mask.len()).rev().find(|&t| mask[t])
}

/// Minimum over modes of the mean displacement across valid steps.
pub fn min_ade(preds: &[Vec<Point2>], gt: &[Point2], mask: &[bool]) -> Result<f64, EvalError> {
    min_ade_indexed(preds, gt, mask).map(|(_, v)| v)
}

fn min_ade_indexed(
    preds: &[Vec<Point2>],
    gt: &[Point2],
    mask: &[bool],
) -> Result<(usize, f64), EvalError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, mode) in preds.iter().enumerate() {
        let ade = ade_of_mode(mode, gt, mask).ok_or(EvalError::NoValidFuture)?;
        if best.map_or(true, |(_, b)| ade < b) {
            best = Some((i, ade));
        }
    }
    best.ok_or(EvalError::NoValidFuture)
}

/// Minimum over modes of the displacement at the last valid step.
pub fn min_fde(preds: &[Vec<Point2>], gt: &[Point2], mask: &[bool]) -> Result<f64, EvalError> {
    min_fde_indexed(preds, gt, mask).map(|(_, v)| v)
}

fn min_fde_indexed(
    preds: &[Vec<Point2>],
    gt: &[Point2],
    mask: &[bool],
) -> Result<(usize, f64), EvalError> {
    let end = last_valid_step(mask).ok_or(EvalError::NoValidFuture)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, mode) in preds.iter().enumerate() {
        let fde = displacement(&mode[end], &gt[end]);
        if best.map_or(true, |(_, b)| fde < b) {
            best = Some((i, fde));
        }
    }
    best.ok_or(EvalError::NoValidFuture)
}

/// Per-scenario miss indicator: the best endpoint is strictly farther
/// than `threshold`.
pub fn miss_indicator(
    preds: &[Vec<Point2>],
    gt: &[Point2],
    mask: &[bool],
    threshold: f64,
) -> Result<bool, EvalError> {
    Ok(min_fde(preds, gt, mask)? > threshold)
}

/// brier-minADE and brier-minFDE: the raw metric plus (1 - p*)^2 where p*
/// is the probability of the mode attaining the minimum (ADE mode for the
/// ADE variant, FDE mode for the FDE variant; ties to the lowest index).
pub fn brier_metrics(
    preds: &[Vec<Point2>],
    probabilities: &[f64],
    gt: &[Point2],
    mask: &[bool],
) -> Result<(f64, f64), EvalError> {
    let (ade_idx, ade) = min_ade_indexed(preds, gt, mask)?;
    let (fde_idx, fde) = min_fde_indexed(preds, gt, mask)?;
    let pa = probabilities[ade_idx];
    let pf = probabilities[fde_idx];
    Ok((ade + (1.0 - pa) * (1.0 - pa), fde + (1.0 - pf) * (1.0 - pf)))
}

/// All five metrics of one scenario's prediction set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioMetrics {
    pub min_ade: f64,
    pub min_fde: f64,
    pub missed: bool,
    pub brier_min_ade: f64,
    pub brier_min_fde: f64,
}

pub fn score_prediction(
    preds: &[Vec<Point2>],
    probabilities: &[f64],
    gt: &[Point2],
    mask: &[bool],
    threshold: f64,
) -> Result<ScenarioMetrics, EvalError> {
    let min_ade = min_ade(preds, gt, mask)?;
    let min_fde = min_fde(preds, gt, mask)?;
    let (brier_min_ade, brier_min_fde) = brier_metrics(preds, probabilities, gt, mask)?;
    Ok(ScenarioMetrics {
        min_ade,
        min_fde,
        missed: min_fde > threshold,
        brier_min_ade,
        brier_min_fde,
    })
}

/// Mean metrics over a group of scenarios.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricBlock {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub brier_min_ade: f64,
    pub brier_min_fde: f64,
}

impl MetricBlock {
    fn mean_of(items: &[ScenarioMetrics]) -> MetricBlock {
        let n = items.len() as f64;
        let mut b = MetricBlock::default();
        for m in items {
            b.min_ade += m.min_ade;
            b.min_fde += m.min_fde;
            b.miss_rate += if m.missed { 1.0 } else { 0.0 };
            b.brier_min_ade += m.brier_min_ade;
            b.brier_min_fde += m.brier_min_fde;
        }
        b.min_ade /= n;
        b.min_fde /= n;
        b.miss_rate /= n;
        b.brier_min_ade /= n;
        b.brier_min_fde /= n;
        b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    /// None marks the aggregate row.
    pub category: Option<ObjectType>,
    pub count: usize,
    pub top1: MetricBlock,
    pub full: MetricBlock,
}

/// Metric table over a dataset: one row per object category plus the
/// aggregate, each carrying the K=1 and K=`k_full` metric blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub k_full: usize,
    pub rows: Vec<ReportRow>,
}

/// World-frame prediction set for one scenario.
pub type PredictionSet = (Vec<Vec<Point2>>, Vec<f64>);

/// Index of the highest-probability mode, ties to the lowest index.
pub fn top_mode(probabilities: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate().skip(1) {
        if p > probabilities[best] {
            best = i;
        }
    }
    best
}

/// World-frame ground truth of the focal track: positions plus validity
/// over the future horizon.
pub fn focal_ground_truth(s: &Scenario) -> (Vec<Point2>, Vec<bool>) {
    let track = s.focal_track().expect("validated scenario");
    let h = s.horizon.history_len;
    let gt = track.states[h..].iter().map(|st| st.pose.position()).collect();
    let mask = track.states[h..].iter().map(|st| st.valid).collect();
    (gt, mask)
}

/// Evaluate a predictor over a dataset. The K=1 block scores only the
/// highest-probability mode; the full block scores the top `k_report`
/// modes by probability.
pub fn evaluate<F>(
    dataset: &[Scenario],
    mut predictor: F,
    k_report: usize,
) -> Result<EvalReport, EvalError>
where
    F: FnMut(&Scenario) -> Result<PredictionSet, EvalError>,
{
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut per_category: HashMap<ObjectType, (Vec<ScenarioMetrics>, Vec<ScenarioMetrics>)> =
        HashMap::new();
    let mut all: (Vec<ScenarioMetrics>, Vec<ScenarioMetrics>) = (Vec::new(), Vec::new());

    for s in dataset {
        let (preds, probs) = predictor(s)?;
        if preds.len() != probs.len() || preds.is_empty() {
            return Err(EvalError::MalformedPrediction(
                s.scenario_id.clone(),
                format!("{} trajectories vs {} probabilities", preds.len(), probs.len()),
            ));
        }
        let (gt, mask) = focal_ground_truth(s);
        if preds.iter().any(|m| m.len() != gt.len()) {
            return Err(EvalError::MalformedPrediction(
                s.scenario_id.clone(),
                "trajectory length differs from the future horizon".into(),
            ));
        }

        // top k_report modes by probability, ties to the lowest index
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
        order.truncate(k_report);
        let full_preds: Vec<Vec<Point2>> = order.iter().map(|&i| preds[i].clone()).collect();
        let full_probs: Vec<f64> = order.iter().map(|&i| probs[i]).collect();

        let top = top_mode(&probs);
        let top1 = score_prediction(
            &[preds[top].clone()],
            &[probs[top]],
            &gt,
            &mask,
            MISS_THRESHOLD_M,
        )?;
        let full = score_prediction(&full_preds, &full_probs, &gt, &mask, MISS_THRESHOLD_M)?;

        let track = s.focal_track().expect("validated scenario");
        let entry = per_category.entry(track.object_type).or_default();
        entry.0.push(top1);
        entry.1.push(full);
        all.0.push(top1);
        all.1.push(full);
    }

    let mut rows = Vec::with_capacity(6);
    for t in ObjectType::ALL {
        let (t1, tf) = per_category.get(&t).map(|(a, b)| (a.as_slice(), b.as_slice())).unwrap_or((&[], &[]));
        rows.push(ReportRow {
            category: Some(t),
            count: t1.len(),
            top1: if t1.is_empty() { MetricBlock::default() } else { MetricBlock::mean_of(t1) },
            full: if tf.is_empty() { MetricBlock::default() } else { MetricBlock::mean_of(tf) },
        });
    }
    rows.push(ReportRow {
        category: None,
        count: all.0.len(),
        top1: MetricBlock::mean_of(&all.0),
        full: MetricBlock::mean_of(&all.1),
    });
    Ok(EvalReport { k_full: k_report, rows })
}

impl EvalReport {
    pub fn aggregate(&self) -> &ReportRow {
        self.rows.last().unwrap()
    }

    pub fn row(&self, category: ObjectType) -> &ReportRow {
        self.rows
            .iter()
            .find(|r| r.category == Some(category))
            .unwrap()
    }

    /// Tab-separated table (category rows, metric columns) followed by a
    /// machine-readable key=value block.
    pub fn to_text(&self) -> String {
        let k = self.k_full;
        let mut out = String::new();
        out.push_str(&format!(
            "category\tcount\tminADE_K1\tminFDE_K1\tMR_K1\tbrier-minADE_K1\tbrier-minFDE_K1\t\
             minADE_K{k}\tminFDE_K{k}\tMR_K{k}\tbrier-minADE_K{k}\tbrier-minFDE_K{k}\n"
        ));
        for row in &self.rows {
            let name = row.category.map_or("all", |c| c.as_str());
            out.push_str(name);
            out.push('\t');
            out.push_str(&row.count.to_string());
            if row.count == 0 {
                out.push_str(&"\t-".repeat(10));
            } else {
                for block in [&row.top1, &row.full] {
                    for v in [
                        block.min_ade,
                        block.min_fde,
                        block.miss_rate,
                        block.brier_min_ade,
                        block.brier_min_fde,
                    ] {
                        out.push('\t');
                        out.push_str(&format_decimal(v));
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
        for row in &self.rows {
            if row.count == 0 {
                continue;
            }
            let name = row.category.map_or("all", |c| c.as_str());
            out.push_str(&format!("{name}.count={}\n", row.count));
            for (label, block) in [("K1", &row.top1), (&format!("K{k}"), &row.full)] {
                out.push_str(&format!("{name}.minADE.{label}={}\n", format_decimal(block.min_ade)));
                out.push_str(&format!("{name}.minFDE.{label}={}\n", format_decimal(block.min_fde)));
                out.push_str(&format!("{name}.MR.{label}={}\n", format_decimal(block.miss_rate)));
                out.push_str(&format!(
                    "{name}.brier-minADE.{label}={}\n",
                    format_decimal(block.brier_min_ade)
                ));
                out.push_str(&format!(
                    "{name}.brier-minFDE.{label}={}\n",
                    format_decimal(block.brier_min_fde)
                ));
            }
        }
        out
    }
}
