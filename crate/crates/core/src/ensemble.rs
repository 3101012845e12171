//! Endpoint ensembling: candidate trajectories from M independently
//! trained models are clustered by endpoint and averaged within each
//! cluster to yield K final modes.

use crate::dataio::PredictionRecord;
use crate::geom::Point2;
use crate::kmeans::kmeans;
use crate::metrics::EvalError;

/// Internal clustering seed; merged outputs are a pure function of the
/// candidate set.
const ENSEMBLE_SEED: u64 = 17;
const ENSEMBLE_MAX_ITERS: usize = 100;

/// Pooled candidates from M models: M*K trajectories with per-model
/// probability blocks that each sum to 1.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    pub trajectories: Vec<Vec<Point2>>,
    pub probabilities: Vec<f64>,
    pub source_model: Vec<usize>,
}

impl CandidateSet {
    pub fn from_records(records: &[&PredictionRecord]) -> Result<Self, EvalError> {
        let mut set = CandidateSet {
            trajectories: Vec::new(),
            probabilities: Vec::new(),
            source_model: Vec::new(),
        };
        let id = records.first().map(|r| r.scenario_id.clone()).unwrap_or_default();
        let horizon = records
            .first()
            .and_then(|r| r.trajectories.first())
            .map(|t| t.len())
            .unwrap_or(0);
        for (m, rec) in records.iter().enumerate() {
            if rec.scenario_id != id {
                return Err(EvalError::MalformedPrediction(
                    id,
                    format!("candidate block from `{}` mixed in", rec.scenario_id),
                ));
            }
            let sum: f64 = rec.probabilities.iter().sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(EvalError::MalformedPrediction(
                    id,
                    format!("model {m} probabilities sum to {sum}"),
                ));
            }
            for (traj, &p) in rec.trajectories.iter().zip(&rec.probabilities) {
                if traj.len() != horizon || horizon == 0 {
                    return Err(EvalError::MalformedPrediction(
                        id,
                        "candidate trajectories disagree on horizon".into(),
                    ));
                }
                set.trajectories.push(traj.clone());
                set.probabilities.push(p);
                set.source_model.push(m);
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Cluster the candidate endpoints into K groups, average trajectories
/// and probabilities within each cluster, renormalize, and order the
/// modes by descending probability.
pub fn ensemble_merge(
    candidates: &CandidateSet,
    k: usize,
) -> Result<(Vec<Vec<Point2>>, Vec<f64>), EvalError> {
    let n = candidates.len();
    if n < k || k == 0 {
        return Err(EvalError::TooFewPoints { n, k });
    }
    let horizon = candidates.trajectories[0].len();
    let endpoints: Vec<Point2> = candidates
        .trajectories
        .iter()
        .map(|t| *t.last().expect("nonempty trajectory"))
        .collect();
    let clusters = kmeans(&endpoints, k, ENSEMBLE_SEED, ENSEMBLE_MAX_ITERS)?;

    let mut merged_traj = vec![vec![Point2::new(0.0, 0.0); horizon]; k];
    let mut merged_prob = vec![0.0f64; k];
    let mut sizes = vec![0usize; k];
    for (i, &c) in clusters.assignments.iter().enumerate() {
        sizes[c] += 1;
        merged_prob[c] += candidates.probabilities[i];
        for (acc, p) in merged_traj[c].iter_mut().zip(&candidates.trajectories[i]) {
            acc.x += p.x;
            acc.y += p.y;
        }
    }
    for c in 0..k {
        let s = sizes[c] as f64;
        merged_prob[c] /= s;
        for p in merged_traj[c].iter_mut() {
            p.x /= s;
            p.y /= s;
        }
    }
    let z: f64 = merged_prob.iter().sum();
    merged_prob.iter_mut().for_each(|p| *p /= z);

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| merged_prob[b].partial_cmp(&merged_prob[a]).unwrap().then(a.cmp(&b)));
    Ok((
        order.iter().map(|&c| merged_traj[c].clone()).collect(),
        order.iter().map(|&c| merged_prob[c]).collect(),
    ))
}
