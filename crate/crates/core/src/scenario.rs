//! Scenario data model: tracked agents over a fixed horizon plus the
//! vector map they move through.

use thiserror::Error;

use crate::geom::{normalize_angle, Pose2};
use crate::map::VectorMap;

/// Sampling interval; tracks are annotated at 10 Hz.
pub const TIMESTEP_S: f64 = 0.1;

/// The five scored object categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectType {
    Vehicle,
    Pedestrian,
    Motorcyclist,
    Cyclist,
    Bus,
}

impl ObjectType {
    pub const ALL: [ObjectType; 5] = [
        ObjectType::Vehicle,
        ObjectType::Pedestrian,
        ObjectType::Motorcyclist,
        ObjectType::Cyclist,
        ObjectType::Bus,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectType::Vehicle => "vehicle",
            ObjectType::Pedestrian => "pedestrian",
            ObjectType::Motorcyclist => "motorcyclist",
            ObjectType::Cyclist => "cyclist",
            ObjectType::Bus => "bus",
        }
    }

    pub fn from_str(s: &str) -> Option<ObjectType> {
        Self::ALL.iter().copied().find(|t| t.as_str() == s)
    }

    /// Slot in the 5-wide one-hot encoding.
    pub fn one_hot_index(&self) -> usize {
        Self::ALL.iter().position(|t| t == self).unwrap()
    }
}

/// One observed (or missing) agent state at a single timestep.
///
/// When `valid` is false every numeric field is exactly 0; encoders rely on
/// the sentinel together with the flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub pose: Pose2,
    pub vx: f64,
    pub vy: f64,
    pub valid: bool,
}

impl AgentState {
    pub fn missing() -> Self {
        Self {
            pose: Pose2 { x: 0.0, y: 0.0, heading: 0.0 },
            vx: 0.0,
            vy: 0.0,
            valid: false,
        }
    }

    pub fn observed(x: f64, y: f64, heading: f64, vx: f64, vy: f64) -> Self {
        Self {
            pose: Pose2::new(x, y, heading),
            vx,
            vy,
            valid: true,
        }
    }
}

/// An agent's identity plus its states over the full horizon (history and
/// future, `history_len + future_len` entries at 10 Hz).
#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrack {
    pub agent_id: String,
    pub object_type: ObjectType,
    pub states: Vec<AgentState>,
}

/// Number of observed and predicted steps for a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HorizonConfig {
    pub history_len: usize,
    pub future_len: usize,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self { history_len: 15, future_len: 60 }
    }
}

impl HorizonConfig {
    pub fn total_len(&self) -> usize {
        self.history_len + self.future_len
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub scenario_id: String,
    pub focal_agent_id: String,
    pub tracks: Vec<AgentTrack>,
    pub map: VectorMap,
    pub horizon: HorizonConfig,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("agent `{agent_id}` has no valid state at the reference timestep {timestep}")]
    MissingReferenceState { agent_id: String, timestep: usize },
    #[error("scenario invariant violated: {0}")]
    InvariantViolation(String),
}

impl Scenario {
    pub fn track(&self, agent_id: &str) -> Result<&AgentTrack, ScenarioError> {
        self.tracks
            .iter()
            .find(|t| t.agent_id == agent_id)
            .ok_or_else(|| ScenarioError::UnknownAgent(agent_id.to_string()))
    }

    pub fn focal_track(&self) -> Result<&AgentTrack, ScenarioError> {
        self.track(&self.focal_agent_id)
    }

    /// Check every structural invariant; parse and the synthetic generator
    /// both funnel through this.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |msg: String| Err(ScenarioError::InvariantViolation(msg));
        let total = self.horizon.total_len();
        if self.horizon.history_len == 0 || self.horizon.future_len == 0 {
            return fail("horizon lengths must be positive".into());
        }
        let mut seen = std::collections::HashSet::new();
        for track in &self.tracks {
            if !seen.insert(track.agent_id.as_str()) {
                return fail(format!("duplicate agent id `{}`", track.agent_id));
            }
            if track.states.len() != total {
                return fail(format!(
                    "states length: agent `{}` has {} states, expected {}",
                    track.agent_id,
                    track.states.len(),
                    total
                ));
            }
            for (t, st) in track.states.iter().enumerate() {
                if st.valid {
                    let h = st.pose.heading;
                    if !(h > -std::f64::consts::PI && h <= std::f64::consts::PI) {
                        return fail(format!(
                            "heading of agent `{}` at step {t} not normalized: {h}",
                            track.agent_id
                        ));
                    }
                    if !(st.pose.x.is_finite()
                        && st.pose.y.is_finite()
                        && st.vx.is_finite()
                        && st.vy.is_finite())
                    {
                        return fail(format!(
                            "non-finite state for agent `{}` at step {t}",
                            track.agent_id
                        ));
                    }
                } else if st.pose.x != 0.0
                    || st.pose.y != 0.0
                    || st.pose.heading != 0.0
                    || st.vx != 0.0
                    || st.vy != 0.0
                {
                    return fail(format!(
                        "invalid state of agent `{}` at step {t} must be all-zero",
                        track.agent_id
                    ));
                }
            }
        }
        let focal = match self.tracks.iter().find(|t| t.agent_id == self.focal_agent_id) {
            Some(t) => t,
            None => {
                return fail(format!(
                    "focal_agent_id `{}` not present in tracks",
                    self.focal_agent_id
                ))
            }
        };
        if focal.states[..self.horizon.history_len].iter().any(|s| !s.valid) {
            return fail(format!(
                "focal track `{}` must be observed at every history step",
                self.focal_agent_id
            ));
        }
        self.map
            .validate()
            .map_err(|e| ScenarioError::InvariantViolation(e.to_string()))?;
        Ok(())
    }

    /// Pose of the focal agent at the last history step; the frame every
    /// forecast is expressed in.
    pub fn focal_reference_pose(&self) -> Result<Pose2, ScenarioError> {
        let track = self.focal_track()?;
        let idx = self.horizon.history_len - 1;
        let st = &track.states[idx];
        if !st.valid {
            return Err(ScenarioError::MissingReferenceState {
                agent_id: track.agent_id.clone(),
                timestep: idx,
            });
        }
        Ok(st.pose)
    }
}

/// Convenience builder used by tests and the generator.
pub fn track_from_states(
    agent_id: &str,
    object_type: ObjectType,
    states: Vec<AgentState>,
) -> AgentTrack {
    AgentTrack {
        agent_id: agent_id.to_string(),
        object_type,
        states,
    }
}

/// A straight constant-velocity track; handy in tests.
pub fn constant_velocity_track(
    agent_id: &str,
    object_type: ObjectType,
    start: Pose2,
    speed: f64,
    len: usize,
) -> AgentTrack {
    let heading = normalize_angle(start.heading);
    let (c, s) = (heading.cos(), heading.sin());
    let states = (0..len)
        .map(|t| {
            AgentState::observed(
                start.x + speed * c * t as f64 * TIMESTEP_S,
                start.y + speed * s * t as f64 * TIMESTEP_S,
                heading,
                speed * c,
                speed * s,
            )
        })
        .collect();
    track_from_states(agent_id, object_type, states)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_map() -> VectorMap {
        VectorMap { lanes: vec![] }
    }

    #[test]
    fn validate_accepts_simple_scenario() {
        let s = Scenario {
            scenario_id: "s".into(),
            focal_agent_id: "a".into(),
            tracks: vec![constant_velocity_track(
                "a",
                ObjectType::Vehicle,
                Pose2::new(0.0, 0.0, 0.0),
                1.0,
                75,
            )],
            map: empty_map(),
            horizon: HorizonConfig::default(),
        };
        assert!(s.validate().is_ok());
    }

    #[test]
    fn validate_rejects_wrong_state_count() {
        let s = Scenario {
            scenario_id: "s".into(),
            focal_agent_id: "a".into(),
            tracks: vec![constant_velocity_track(
                "a",
                ObjectType::Vehicle,
                Pose2::new(0.0, 0.0, 0.0),
                1.0,
                74,
            )],
            map: empty_map(),
            horizon: HorizonConfig::default(),
        };
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("states length"));
    }

    #[test]
    fn validate_rejects_missing_focal() {
        let s = Scenario {
            scenario_id: "s".into(),
            focal_agent_id: "ghost".into(),
            tracks: vec![constant_velocity_track(
                "a",
                ObjectType::Vehicle,
                Pose2::new(0.0, 0.0, 0.0),
                1.0,
                75,
            )],
            map: empty_map(),
            horizon: HorizonConfig::default(),
        };
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("focal_agent_id"));
    }

    #[test]
    fn validate_rejects_nonzero_invalid_state() {
        let mut track = constant_velocity_track(
            "a",
            ObjectType::Vehicle,
            Pose2::new(0.0, 0.0, 0.0),
            1.0,
            75,
        );
        track.states[40].valid = false; // numeric fields left nonzero
        let s = Scenario {
            scenario_id: "s".into(),
            focal_agent_id: "a".into(),
            tracks: vec![track],
            map: empty_map(),
            horizon: HorizonConfig::default(),
        };
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("all-zero"));
    }
}
