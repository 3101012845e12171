//! key=value config files for the command-line tools. Lines are
//! `key=value`, `#` starts a comment, unknown keys are rejected by name.

use std::collections::BTreeMap;

use crate::model::ModelConfig;
use crate::model::LossWeights;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: `{line}` is not key=value", i + 1))?;
        if map.insert(key.trim().to_string(), value.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key `{}`", i + 1, key.trim()));
        }
    }
    Ok(map)
}

struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn take<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, String> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| format!("field `{key}`: bad value `{v}`")),
        }
    }

    fn take_optional<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, String> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| format!("field `{key}`: bad value `{v}`")),
        }
    }

    fn finish(self) -> Result<(), String> {
        if let Some(key) = self.map.keys().next() {
            return Err(format!("unknown field `{key}`"));
        }
        Ok(())
    }
}

pub fn parse_synth_config(text: &str) -> Result<SynthConfig, String> {
    let mut f = Fields { map: parse_kv(text)? };
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        n_scenarios: f.take("n_scenarios", d.n_scenarios)?,
        agents_min: f.take("agents_min", d.agents_min)?,
        agents_max: f.take("agents_max", d.agents_max)?,
        lanes_min: f.take("lanes_min", d.lanes_min)?,
        lanes_max: f.take("lanes_max", d.lanes_max)?,
        type_weights: [
            f.take("w_vehicle", d.type_weights[0])?,
            f.take("w_pedestrian", d.type_weights[1])?,
            f.take("w_motorcyclist", d.type_weights[2])?,
            f.take("w_cyclist", d.type_weights[3])?,
            f.take("w_bus", d.type_weights[4])?,
        ],
        position_noise: f.take("position_noise", d.position_noise)?,
        speed_noise: f.take("speed_noise", d.speed_noise)?,
        seed: f.take("seed", d.seed)?,
        horizon: crate::scenario::HorizonConfig {
            history_len: f.take("history_len", d.horizon.history_len)?,
            future_len: f.take("future_len", d.horizon.future_len)?,
        },
    };
    f.finish()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_model_config(text: &str) -> Result<ModelConfig, String> {
    let mut f = Fields { map: parse_kv(text)? };
    let d = ModelConfig::default();
    let cfg = ModelConfig {
        d_model: f.take("d_model", d.d_model)?,
        n_heads: f.take("n_heads", d.n_heads)?,
        n_encoder_layers: f.take("n_encoder_layers", d.n_encoder_layers)?,
        num_anchors: f.take("num_anchors", d.num_anchors)?,
        num_modes: f.take("num_modes", d.num_modes)?,
        future_len: f.take("future_len", d.future_len)?,
        history_len: f.take("history_len", d.history_len)?,
        waypoint_stride: f.take("waypoint_stride", d.waypoint_stride)?,
    };
    f.finish()?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig, String> {
    let mut f = Fields { map: parse_kv(text)? };
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        batch_size: f.take("batch_size", d.batch_size)?,
        epochs: f.take("epochs", d.epochs)?,
        lr: f.take("lr", d.lr)?,
        seed: f.take("seed", d.seed)?,
        loss_weights: LossWeights {
            anchor_reg: f.take("w_anchor_reg", 1.0)?,
            anchor_cls: f.take("w_anchor_cls", 1.0)?,
            pred_reg: f.take("w_pred_reg", 1.0)?,
            pred_cls: f.take("w_pred_cls", 1.0)?,
        },
        clip_norm: f.take_optional("clip_norm")?,
    };
    f.finish()?;
    if cfg.batch_size == 0 {
        return Err("field `batch_size`: must be at least 1".into());
    }
    if cfg.lr <= 0.0 {
        return Err("field `lr`: must be positive".into());
    }
    Ok(cfg)
}
