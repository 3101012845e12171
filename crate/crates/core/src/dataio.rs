//! Line-oriented scenario and prediction file formats.
//!
//! One scenario per line:
//! `scenario_id|focal_id|H,T|TRACK;TRACK;...|LANE;LANE;...`
//! with `TRACK = agent_id,object_type,(x y heading vx vy valid)*` and
//! `LANE = lane_id,(x y)*`. Floats are written as 9-significant-digit
//! decimals, so writing and re-parsing a quantized scenario is exact.
//!
//! One prediction per line:
//! `scenario_id|p_1 .. p_K|x y x y ...` (K*T coordinate pairs, world frame).

use thiserror::Error;

use crate::geom::Point2;
use crate::map::{Lane, VectorMap};
use crate::scenario::{
    AgentState, AgentTrack, HorizonConfig, ObjectType, Scenario, ScenarioError,
};

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("parse error at {context}: {message}")]
    ParseError { context: String, message: String },
    #[error("scenario invariant violated: {0}")]
    InvariantViolation(String),
}

impl From<ScenarioError> for DataError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::InvariantViolation(msg) => DataError::InvariantViolation(msg),
            other => DataError::InvariantViolation(other.to_string()),
        }
    }
}

fn parse_err(context: impl Into<String>, message: impl Into<String>) -> DataError {
    DataError::ParseError { context: context.into(), message: message.into() }
}

// ---- decimal formatting ----

/// Format with 9 significant digits, plain decimal notation, trailing
/// zeros trimmed. `-0` collapses to `0`.
pub fn format_decimal(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (8 - exp).max(0) as usize;
    let mut s = format!("{:.*}", decimals, v);
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

/// Round to the nearest value representable by [`format_decimal`];
/// idempotent, and the fixpoint of every write/parse round trip.
pub fn quantize(v: f64) -> f64 {
    format_decimal(v).parse().unwrap()
}

fn parse_f64(s: &str, context: &str) -> Result<f64, DataError> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(context, format!("`{s}` is not a decimal number")))?;
    if !v.is_finite() {
        return Err(parse_err(context, format!("`{s}` is not finite")));
    }
    Ok(v)
}

fn parse_usize(s: &str, context: &str) -> Result<usize, DataError> {
    s.parse()
        .map_err(|_| parse_err(context, format!("`{s}` is not a count")))
}

fn check_id(id: &str, context: &str) -> Result<(), DataError> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '#'));
    if ok {
        Ok(())
    } else {
        Err(parse_err(context, format!("invalid identifier `{id}`")))
    }
}

// ---- scenario records ----

pub fn write_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    out.push_str(&s.scenario_id);
    out.push('|');
    out.push_str(&s.focal_agent_id);
    out.push('|');
    out.push_str(&format!("{},{}", s.horizon.history_len, s.horizon.future_len));
    out.push('|');
    for (i, track) in s.tracks.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        out.push_str(&track.agent_id);
        out.push(',');
        out.push_str(track.object_type.as_str());
        out.push(',');
        for (t, st) in track.states.iter().enumerate() {
            if t > 0 {
                out.push(' ');
            }
            out.push_str(&format_decimal(st.pose.x));
            out.push(' ');
            out.push_str(&format_decimal(st.pose.y));
            out.push(' ');
            out.push_str(&format_decimal(st.pose.heading));
            out.push(' ');
            out.push_str(&format_decimal(st.vx));
            out.push(' ');
            out.push_str(&format_decimal(st.vy));
            out.push(' ');
            out.push(if st.valid { '1' } else { '0' });
        }
    }
    out.push('|');
    for (i, lane) in s.map.lanes.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        out.push_str(&lane.lane_id);
        out.push(',');
        for (j, p) in lane.points.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&format_decimal(p.x));
            out.push(' ');
            out.push_str(&format_decimal(p.y));
        }
    }
    out
}

pub fn parse_scenario(line: &str) -> Result<Scenario, DataError> {
    let fields: Vec<&str> = line.split('|').collect();
    if fields.len() != 5 {
        return Err(parse_err(
            "record",
            format!("expected 5 `|`-separated fields, got {}", fields.len()),
        ));
    }
    let scenario_id = fields[0].to_string();
    check_id(&scenario_id, "scenario_id")?;
    let focal_agent_id = fields[1].to_string();
    check_id(&focal_agent_id, "focal_id")?;

    let horizon_parts: Vec<&str> = fields[2].split(',').collect();
    if horizon_parts.len() != 2 {
        return Err(parse_err("horizon", "expected `H,T`"));
    }
    let horizon = HorizonConfig {
        history_len: parse_usize(horizon_parts[0], "horizon H")?,
        future_len: parse_usize(horizon_parts[1], "horizon T")?,
    };
    let total = horizon.total_len();

    let mut tracks = Vec::new();
    if fields[3].is_empty() {
        return Err(parse_err("tracks", "scenario needs at least one track"));
    }
    for (ti, chunk) in fields[3].split(';').enumerate() {
        let context = format!("track {ti}");
        let parts: Vec<&str> = chunk.splitn(3, ',').collect();
        if parts.len() != 3 {
            return Err(parse_err(&context, "expected `agent_id,object_type,states`"));
        }
        check_id(parts[0], &context)?;
        let object_type = ObjectType::from_str(parts[1])
            .ok_or_else(|| parse_err(&context, format!("unknown object type `{}`", parts[1])))?;
        let numbers: Vec<&str> = parts[2].split_ascii_whitespace().collect();
        if numbers.len() != total * 6 {
            return Err(DataError::InvariantViolation(format!(
                "states length: track {ti} carries {} values, expected {} (= 6 x {total})",
                numbers.len(),
                total * 6,
            )));
        }
        let mut states = Vec::with_capacity(total);
        for t in 0..total {
            let at = |k: usize| parse_f64(numbers[t * 6 + k], &format!("{context} step {t}"));
            let x = at(0)?;
            let y = at(1)?;
            let heading = at(2)?;
            let vx = at(3)?;
            let vy = at(4)?;
            let valid = match numbers[t * 6 + 5] {
                "1" => true,
                "0" => false,
                other => {
                    return Err(parse_err(
                        format!("{context} step {t}"),
                        format!("valid flag must be 0 or 1, got `{other}`"),
                    ))
                }
            };
            states.push(AgentState {
                pose: crate::geom::Pose2 { x, y, heading },
                vx,
                vy,
                valid,
            });
        }
        tracks.push(AgentTrack { agent_id: parts[0].to_string(), object_type, states });
    }

    let mut lanes = Vec::new();
    if !fields[4].is_empty() {
        for (li, chunk) in fields[4].split(';').enumerate() {
            let context = format!("lane {li}");
            let parts: Vec<&str> = chunk.splitn(2, ',').collect();
            if parts.len() != 2 {
                return Err(parse_err(&context, "expected `lane_id,points`"));
            }
            check_id(parts[0], &context)?;
            let numbers: Vec<&str> = parts[1].split_ascii_whitespace().collect();
            if numbers.len() < 4 || numbers.len() % 2 != 0 {
                return Err(parse_err(&context, format!("{} coords", numbers.len())));
            }
            let mut points = Vec::with_capacity(numbers.len() / 2);
            for pi in 0..numbers.len() / 2 {
                points.push(Point2::new(
                    parse_f64(numbers[2 * pi], &context)?,
                    parse_f64(numbers[2 * pi + 1], &context)?,
                ));
            }
            lanes.push(Lane { lane_id: parts[0].to_string(), points });
        }
    }

    let scenario = Scenario {
        scenario_id,
        focal_agent_id,
        tracks,
        map: VectorMap { lanes },
        horizon,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn write_scenario_file(scenarios: &[Scenario]) -> String {
    let mut out = String::new();
    for s in scenarios {
        out.push_str(&write_scenario(s));
        out.push('\n');
    }
    out
}

pub fn parse_scenario_file(text: &str) -> Result<Vec<Scenario>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_scenario(l).map_err(|e| match e {
                DataError::ParseError { context, message } => DataError::ParseError {
                    context: format!("line {}, {}", i + 1, context),
                    message,
                },
                other => other,
            })
        })
        .collect()
}

// ---- prediction records ----

/// World-frame multi-modal prediction for one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub scenario_id: String,
    pub probabilities: Vec<f64>,
    /// K trajectories of T points each.
    pub trajectories: Vec<Vec<Point2>>,
}

pub fn write_prediction(p: &PredictionRecord) -> String {
    let mut out = String::new();
    out.push_str(&p.scenario_id);
    out.push('|');
    for (i, prob) in p.probabilities.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format_decimal(*prob));
    }
    out.push('|');
    let mut first = true;
    for traj in &p.trajectories {
        for pt in traj {
            if !first {
                out.push(' ');
            }
            first = false;
            out.push_str(&format_decimal(pt.x));
            out.push(' ');
            out.push_str(&format_decimal(pt.y));
        }
    }
    out
}

pub fn parse_prediction(line: &str) -> Result<PredictionRecord, DataError> {
    let fields: Vec<&str> = line.split('|').collect();
    if fields.len() != 3 {
        return Err(parse_err(
            "prediction",
            format!("expected 3 `|`-separated fields, got {}", fields.len()),
        ));
    }
    check_id(fields[0], "prediction scenario_id")?;
    let probabilities: Vec<f64> = fields[1]
        .split_ascii_whitespace()
        .map(|s| parse_f64(s, "probabilities"))
        .collect::<Result<_, _>>()?;
    if probabilities.is_empty() {
        return Err(parse_err("probabilities", "at least one mode required"));
    }
    let sum: f64 = probabilities.iter().sum();
    if (sum - 1.0).abs() > 1e-4 || probabilities.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(DataError::InvariantViolation(format!(
            "mode probabilities must form a distribution (sum {sum})"
        )));
    }
    let coords: Vec<f64> = fields[2]
        .split_ascii_whitespace()
        .map(|s| parse_f64(s, "trajectory coords"))
        .collect::<Result<_, _>>()?;
    let k = probabilities.len();
    if coords.is_empty() || coords.len() % (2 * k) != 0 {
        return Err(parse_err(
            "trajectory coords",
            format!("{} values do not split into {k} modes of (x, y) pairs", coords.len()),
        ));
    }
    let t = coords.len() / (2 * k);
    let trajectories = (0..k)
        .map(|m| {
            (0..t)
                .map(|i| Point2::new(coords[(m * t + i) * 2], coords[(m * t + i) * 2 + 1]))
                .collect()
        })
        .collect();
    Ok(PredictionRecord { scenario_id: fields[0].to_string(), probabilities, trajectories })
}

pub fn write_prediction_file(preds: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&write_prediction(p));
        out.push('\n');
    }
    out
}

pub fn parse_prediction_file(text: &str) -> Result<Vec<PredictionRecord>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_prediction(l).map_err(|e| match e {
                DataError::ParseError { context, message } => DataError::ParseError {
                    context: format!("line {}, {}", i + 1, context),
                    message,
                },
                other => other,
            })
        })
        .collect()
}
