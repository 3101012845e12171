//! Agent-centric feature construction: track standardization, per-agent
//! history matrices and neighbor interaction matrices.

use crate::geom::{normalize_angle, pose_to_agent_frame, rotate_to_agent_frame, Pose2};
use crate::scenario::{AgentState, AgentTrack, Scenario, ScenarioError};

/// History-feature row width: x, y, vx, vy, cos, sin, one-hot(5), valid.
pub const HISTORY_FEATURE_WIDTH: usize = 12;

/// Interaction-feature row width: rel_x, rel_y, rel_vx, rel_vy,
/// cos(rel_heading), sin(rel_heading), valid.
pub const INTERACTION_FEATURE_WIDTH: usize = 7;

/// Per-agent history matrix, `history_len` rows in the agent's own frame.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryFeature {
    pub agent_id: String,
    pub rows: Vec<[f64; HISTORY_FEATURE_WIDTH]>,
}

/// Relative states of nearby agents over the history window, expressed in
/// the target agent's standardization frame. Neighbors are sorted
/// nearest-first at the last history step.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct InteractionFeature {
    pub neighbor_ids: Vec<String>,
    /// One `history_len`-row matrix per neighbor.
    pub neighbor_rows: Vec<Vec<[f64; INTERACTION_FEATURE_WIDTH]>>,
}

impl InteractionFeature {
    pub fn n_neighbors(&self) -> usize {
        self.neighbor_rows.len()
    }
}

/// Neighbor selection policy for interaction features.
#[derive(Clone, Copy, Debug)]
pub struct NeighborConfig {
    pub max_neighbors: usize,
    pub radius: f64,
}

impl Default for NeighborConfig {
    fn default() -> Self {
        Self { max_neighbors: 32, radius: 50.0 }
    }
}

/// Express every state of `track` in the frame of its pose at timestep
/// `history_len - 1`. Velocities are rotated but not translated.
pub fn standardize_track(track: &AgentTrack, history_len: usize) -> Result<AgentTrack, ScenarioError> {
    let ref_idx = history_len - 1;
    let reference = match track.states.get(ref_idx) {
        Some(s) if s.valid => s.pose,
        _ => {
            return Err(ScenarioError::MissingReferenceState {
                agent_id: track.agent_id.clone(),
                timestep: ref_idx,
            })
        }
    };
    Ok(standardize_track_with(track, &reference))
}

/// [`standardize_track`] against an explicit reference pose.
pub fn standardize_track_with(track: &AgentTrack, reference: &Pose2) -> AgentTrack {
    let states = track
        .states
        .iter()
        .map(|s| {
            if !s.valid {
                return AgentState::missing();
            }
            let pose = pose_to_agent_frame(&s.pose, reference);
            let (vx, vy) = rotate_to_agent_frame(s.vx, s.vy, reference);
            AgentState { pose, vx, vy, valid: true }
        })
        .collect();
    AgentTrack {
        agent_id: track.agent_id.clone(),
        object_type: track.object_type,
        states,
    }
}

/// History matrix for one agent: standardized history states plus the
/// object-type one-hot; missing steps are zero rows with valid = 0.
pub fn build_history_features(s: &Scenario, agent_id: &str) -> Result<HistoryFeature, ScenarioError> {
    let track = s.track(agent_id)?;
    let h = s.horizon.history_len;
    let std_track = standardize_track(track, h)?;
    let type_slot = track.object_type.one_hot_index();
    let rows = std_track.states[..h]
        .iter()
        .map(|st| {
            let mut row = [0.0; HISTORY_FEATURE_WIDTH];
            if st.valid {
                row[0] = st.pose.x;
                row[1] = st.pose.y;
                row[2] = st.vx;
                row[3] = st.vy;
                row[4] = st.pose.heading.cos();
                row[5] = st.pose.heading.sin();
                row[6 + type_slot] = 1.0;
                row[11] = 1.0;
            }
            row
        })
        .collect();
    Ok(HistoryFeature { agent_id: agent_id.to_string(), rows })
}

/// Interaction matrix for `agent_id`: per-timestep relative position,
/// velocity and heading of each neighbor within `cfg.radius` at the last
/// history step, nearest-first, truncated to `cfg.max_neighbors`.
///
/// Relative quantities live in the target's standardization frame; a row
/// is valid only when both the target and the neighbor are observed at
/// that step. Only agents observed at the reference step participate.
pub fn build_interaction_features(
    s: &Scenario,
    agent_id: &str,
    cfg: &NeighborConfig,
) -> Result<InteractionFeature, ScenarioError> {
    let target = s.track(agent_id)?;
    let h = s.horizon.history_len;
    let ref_idx = h - 1;
    let ref_state = &target.states[ref_idx];
    if !ref_state.valid {
        return Err(ScenarioError::MissingReferenceState {
            agent_id: agent_id.to_string(),
            timestep: ref_idx,
        });
    }
    let reference = ref_state.pose;
    let target_std = standardize_track_with(target, &reference);

    let mut ranked: Vec<(f64, &AgentTrack)> = s
        .tracks
        .iter()
        .filter(|t| t.agent_id != agent_id && t.states[ref_idx].valid)
        .map(|t| {
            let d = t.states[ref_idx].pose.position().distance(&reference.position());
            (d, t)
        })
        .filter(|(d, _)| *d <= cfg.radius)
        .collect();
    ranked.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then_with(|| a.1.agent_id.cmp(&b.1.agent_id))
    });
    ranked.truncate(cfg.max_neighbors);

    let mut feature = InteractionFeature::default();
    for (_, nbr) in ranked {
        let nbr_std = standardize_track_with(nbr, &reference);
        let rows = (0..h)
            .map(|t| {
                let a = &target_std.states[t];
                let b = &nbr_std.states[t];
                let mut row = [0.0; INTERACTION_FEATURE_WIDTH];
                if a.valid && b.valid {
                    let rel_heading = normalize_angle(b.pose.heading - a.pose.heading);
                    row[0] = b.pose.x - a.pose.x;
                    row[1] = b.pose.y - a.pose.y;
                    row[2] = b.vx - a.vx;
                    row[3] = b.vy - a.vy;
                    row[4] = rel_heading.cos();
                    row[5] = rel_heading.sin();
                    row[6] = 1.0;
                }
                row
            })
            .collect();
        feature.neighbor_ids.push(nbr.agent_id.clone());
        feature.neighbor_rows.push(rows);
    }
    Ok(feature)
}
