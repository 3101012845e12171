//! End-to-end operations behind the command-line tools: dataset-level
//! prediction, prediction-file ensembling, and report generation.

use std::collections::HashMap;

use crate::dataio::{quantize, PredictionRecord};
use crate::ensemble::{ensemble_merge, CandidateSet};
use crate::geom::from_agent_frame;
use crate::metrics::{evaluate, EvalError, EvalReport};
use crate::model::{FeatureConfig, Forecaster, ModelError};
use crate::nn::ParameterStore;
use crate::scenario::Scenario;

/// Forecast every scenario and express the trajectories in the world
/// frame; values are quantized so the record round-trips through the
/// prediction file format exactly.
pub fn predict_dataset(
    scenarios: &[Scenario],
    model: &Forecaster,
    store: &ParameterStore,
    fcfg: &FeatureConfig,
) -> Result<Vec<PredictionRecord>, ModelError> {
    scenarios
        .iter()
        .map(|s| {
            let out = model.predict(store, s, fcfg)?;
            out.validate()?;
            let reference = s.focal_reference_pose()?;
            let trajectories = out
                .trajectories
                .iter()
                .map(|traj| {
                    traj.iter()
                        .map(|p| {
                            let w = from_agent_frame(*p, &reference);
                            crate::geom::Point2::new(quantize(w.x), quantize(w.y))
                        })
                        .collect()
                })
                .collect();
            Ok(PredictionRecord {
                scenario_id: s.scenario_id.clone(),
                probabilities: out.probabilities.iter().map(|&p| quantize(p)).collect(),
                trajectories,
            })
        })
        .collect()
}

fn index_records(records: &[PredictionRecord]) -> HashMap<&str, &PredictionRecord> {
    records.iter().map(|r| (r.scenario_id.as_str(), r)).collect()
}

/// Merge M prediction files scenario by scenario; output order follows
/// the first file.
pub fn merge_prediction_files(
    models: &[Vec<PredictionRecord>],
    k: usize,
) -> Result<Vec<PredictionRecord>, EvalError> {
    let first = models.first().ok_or(EvalError::EmptyDataset)?;
    let indexes: Vec<HashMap<&str, &PredictionRecord>> =
        models.iter().map(|m| index_records(m)).collect();
    first
        .iter()
        .map(|lead| {
            let records: Vec<&PredictionRecord> = indexes
                .iter()
                .map(|idx| {
                    idx.get(lead.scenario_id.as_str())
                        .copied()
                        .ok_or_else(|| EvalError::MissingPrediction(lead.scenario_id.clone()))
                })
                .collect::<Result<_, _>>()?;
            let set = CandidateSet::from_records(&records)?;
            let (trajectories, probabilities) = ensemble_merge(&set, k)?;
            Ok(PredictionRecord {
                scenario_id: lead.scenario_id.clone(),
                probabilities: probabilities.iter().map(|&p| quantize(p)).collect(),
                trajectories: trajectories
                    .iter()
                    .map(|t| {
                        t.iter()
                            .map(|p| crate::geom::Point2::new(quantize(p.x), quantize(p.y)))
                            .collect()
                    })
                    .collect(),
            })
        })
        .collect()
}

/// Score prediction files against a dataset. With several models the
/// candidates are ensembled per scenario before scoring; the reported K
/// is the first file's mode count.
pub fn evaluate_prediction_files(
    dataset: &[Scenario],
    models: &[Vec<PredictionRecord>],
) -> Result<EvalReport, EvalError> {
    let k_report = models
        .first()
        .and_then(|m| m.first())
        .map(|r| r.probabilities.len())
        .ok_or(EvalError::EmptyDataset)?;
    let merged: Vec<PredictionRecord> = if models.len() == 1 {
        models[0].clone()
    } else {
        merge_prediction_files(models, k_report)?
    };
    let index = index_records(&merged);
    evaluate(
        dataset,
        |s: &Scenario| {
            let rec = index
                .get(s.scenario_id.as_str())
                .ok_or_else(|| EvalError::MissingPrediction(s.scenario_id.clone()))?;
            Ok((rec.trajectories.clone(), rec.probabilities.clone()))
        },
        k_report,
    )
}
