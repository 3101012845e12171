//! Batch assembly and the training loop: seeded shuffling, mini-batches,
//! forward + winner-take-all losses, backward, Adam.

use thiserror::Error;

use crate::model::{
    attach_losses, featurize, FeatureConfig, Forecaster, LossWeights, ModelConfig, ModelError,
    ScenarioFeatures,
};
use crate::nn::{AdamConfig, Graph, NnError, ParameterStore};
use crate::rng::{seeded, shuffle};
use crate::scenario::Scenario;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("scenarios carry mixed horizons: {0}")]
    MixedHorizons(String),
    #[error("non-finite loss at optimization step {step}")]
    NonFiniteLoss { step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Global gradient-norm clip; off by default.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            epochs: 100,
            lr: 1e-3,
            seed: 0,
            loss_weights: LossWeights::default(),
            clip_norm: None,
        }
    }
}

/// Featurized scenarios padded to common agent and lane-token counts.
#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Vec<ScenarioFeatures>,
}

/// Pad per-scenario feature bundles to the batch maxima. Real values are
/// bit-identical to the unbatched features; masks mark the padding.
pub fn make_batch(
    scenarios: &[&Scenario],
    cfg: &ModelConfig,
    fcfg: &FeatureConfig,
) -> Result<Batch, TrainError> {
    if scenarios.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let horizon = scenarios[0].horizon;
    for s in scenarios {
        if s.horizon != horizon {
            return Err(TrainError::MixedHorizons(format!(
                "{}+{} vs {}+{} ({})",
                horizon.history_len,
                horizon.future_len,
                s.horizon.history_len,
                s.horizon.future_len,
                s.scenario_id
            )));
        }
    }
    let mut features = scenarios
        .iter()
        .map(|s| featurize(s, cfg, fcfg))
        .collect::<Result<Vec<_>, _>>()?;
    let max_agents = features.iter().map(|f| f.n_agents()).max().unwrap();
    let max_lanes = features.iter().map(|f| f.n_lanes()).max().unwrap();
    for f in &mut features {
        f.pad_to(max_agents, max_lanes, cfg, fcfg);
    }
    Ok(Batch { features })
}

/// One line of the tab-separated training log.
#[derive(Clone, Copy, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub anchor_reg: f64,
    pub anchor_cls: f64,
    pub pred_reg: f64,
    pub pred_cls: f64,
    pub total: f64,
}

impl EpochLog {
    pub fn to_line(&self) -> String {
        use crate::dataio::format_decimal as fmt;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch,
            fmt(self.anchor_reg),
            fmt(self.anchor_cls),
            fmt(self.pred_reg),
            fmt(self.pred_cls),
            fmt(self.total)
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub store: ParameterStore,
    pub model: Forecaster,
    pub log: Vec<EpochLog>,
}

/// Run the full training loop; deterministic given (dataset, configs).
pub fn train(
    dataset: &[Scenario],
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    fcfg: &FeatureConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut store = ParameterStore::new();
    let model = Forecaster::init(model_cfg, &mut store, train_cfg.seed)?;
    // separate stream so shuffling does not disturb parameter init
    let mut shuffle_rng = seeded(train_cfg.seed.wrapping_add(0x9e3779b97f4a7c15));
    let adam = AdamConfig { lr: train_cfg.lr as f32, ..AdamConfig::default() };

    // geometry does not depend on parameters; featurize once
    let features = dataset
        .iter()
        .map(|s| featurize(s, &model_cfg, fcfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step: u64 = 0;
    let mut log = Vec::with_capacity(train_cfg.epochs);
    for epoch in 0..train_cfg.epochs {
        shuffle(&mut shuffle_rng, &mut order);
        let mut sums = [0.0f64; 5];
        for chunk in order.chunks(train_cfg.batch_size.max(1)) {
            let mut g = Graph::new();
            let mut totals = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let fwd = model.forward(&mut g, &store, &features[idx])?;
                let losses = attach_losses(
                    &mut g,
                    &model_cfg,
                    &fwd,
                    &features[idx].gt_future,
                    &features[idx].gt_mask,
                    &train_cfg.loss_weights,
                )?;
                let b = losses.breakdown(&g, &train_cfg.loss_weights);
                sums[0] += b.anchor_reg;
                sums[1] += b.anchor_cls;
                sums[2] += b.pred_reg;
                sums[3] += b.pred_cls;
                sums[4] += b.total;
                totals.push(losses.total);
            }
            // the reported batch loss is the f64 mean of the per-scenario
            // totals; gradients of the mean are the summed gradients
            // scaled by 1/n
            let batch_mean = totals
                .iter()
                .map(|&t| g.value(t).item() as f64)
                .sum::<f64>()
                / totals.len() as f64;
            step += 1;
            if !batch_mean.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            let mut batch_sum = totals[0];
            for &t in &totals[1..] {
                batch_sum = g.add(batch_sum, t)?;
            }
            store.zero_grads();
            g.backward_into(batch_sum, &mut store)?;
            store.scale_grads(1.0 / totals.len() as f32);
            if let Some(max_norm) = train_cfg.clip_norm {
                store.clip_grad_norm(max_norm);
            }
            store.adam_step(&adam)?;
        }
        let n = dataset.len() as f64;
        let entry = EpochLog {
            epoch,
            anchor_reg: sums[0] / n,
            anchor_cls: sums[1] / n,
            pred_reg: sums[2] / n,
            pred_cls: sums[3] / n,
            total: sums[4] / n,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { store, model, log })
}
