//! Seeded synthetic scenario generation: lane layouts (straights, arcs,
//! T-junctions) and lane-following agents with noisy kinematics. Stands in
//! for a real motion-forecasting dataset at desk scale.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::dataio::quantize;
use crate::geom::{normalize_angle, Point2};
use crate::map::{Lane, VectorMap};
use crate::rng::{gaussian, seeded, uniform, uniform_usize, weighted_index, Rng};
use crate::scenario::{
    AgentState, AgentTrack, HorizonConfig, ObjectType, Scenario, TIMESTEP_S,
};

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n_scenarios: usize,
    /// Agents per scenario, focal included.
    pub agents_min: usize,
    pub agents_max: usize,
    pub lanes_min: usize,
    pub lanes_max: usize,
    /// Mix over [vehicle, pedestrian, motorcyclist, cyclist, bus].
    pub type_weights: [f64; 5],
    /// Std of observation noise on positions, meters.
    pub position_noise: f64,
    /// Std of per-step speed jitter, m/s.
    pub speed_noise: f64,
    pub seed: u64,
    pub horizon: HorizonConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_scenarios: 32,
            agents_min: 1,
            agents_max: 6,
            lanes_min: 1,
            lanes_max: 4,
            type_weights: [0.60, 0.15, 0.08, 0.09, 0.08],
            position_noise: 0.04,
            speed_noise: 0.12,
            seed: 7,
            horizon: HorizonConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_scenarios == 0 {
            return Err("n_scenarios must be positive".into());
        }
        if self.agents_min == 0 || self.agents_min > self.agents_max {
            return Err("agent count range must satisfy 1 <= min <= max".into());
        }
        if self.lanes_min == 0 || self.lanes_min > self.lanes_max {
            return Err("lane count range must satisfy 1 <= min <= max".into());
        }
        if self.type_weights.iter().any(|&w| w < 0.0) {
            return Err("type_weights must be non-negative".into());
        }
        if self.type_weights.iter().sum::<f64>() <= 0.0 {
            return Err("type_weights must have positive sum".into());
        }
        if self.position_noise < 0.0 || self.speed_noise < 0.0 {
            return Err("noise levels must be non-negative".into());
        }
        Ok(())
    }
}

// ---- polyline path sampling ----

struct PathSampler {
    points: Vec<Point2>,
    cum: Vec<f64>,
}

impl PathSampler {
    fn new(points: Vec<Point2>) -> Self {
        let mut cum = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(&w[1]);
            cum.push(acc);
        }
        Self { points, cum }
    }

    fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Position and tangent heading at arclength `s`; linear extrapolation
    /// beyond either end.
    fn sample(&self, s: f64) -> (Point2, f64) {
        let n = self.points.len();
        let seg = if s <= 0.0 {
            0
        } else if s >= self.total() {
            n - 2
        } else {
            match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
                Ok(i) => i.min(n - 2),
                Err(i) => i - 1,
            }
        };
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let len = a.distance(&b);
        let t = (s - self.cum[seg]) / len;
        let heading = normalize_angle((b.y - a.y).atan2(b.x - a.x));
        (Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)), heading)
    }
}

// ---- lane geometry ----

fn straight_points(p0: Point2, heading: f64, length: f64, spacing: f64) -> Vec<Point2> {
    let n = (length / spacing).ceil() as usize + 1;
    let (c, s) = (heading.cos(), heading.sin());
    (0..n)
        .map(|i| {
            let d = (i as f64 * spacing).min(length);
            Point2::new(p0.x + c * d, p0.y + s * d)
        })
        .collect()
}

fn arc_points(p0: Point2, heading: f64, radius: f64, turn: f64, spacing: f64) -> Vec<Point2> {
    // turn > 0 bends left; the center sits on the normal
    let side = turn.signum();
    let cx = p0.x - side * radius * heading.sin();
    let cy = p0.y + side * radius * heading.cos();
    let start_angle = (p0.y - cy).atan2(p0.x - cx);
    let arc_len = radius * turn.abs();
    let n = (arc_len / spacing).ceil() as usize + 1;
    (0..n)
        .map(|i| {
            let frac = i as f64 / (n - 1) as f64;
            let a = start_angle + side * turn.abs() * frac;
            Point2::new(cx + radius * a.cos(), cy + radius * a.sin())
        })
        .collect()
}

fn dedup_consecutive(points: Vec<Point2>) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(points.len());
    for p in points {
        let q = Point2::new(quantize(p.x), quantize(p.y));
        if out.last() != Some(&q) {
            out.push(q);
        }
    }
    out
}

// ---- agent kinematics ----

struct AgentPlan {
    object_type: ObjectType,
    path: PathSampler,
    start_arclen: f64,
    speed: f64,
    lateral_offset: f64,
}

fn speed_range(t: ObjectType) -> (f64, f64) {
    match t {
        ObjectType::Vehicle => (4.0, 12.0),
        ObjectType::Bus => (4.0, 9.0),
        ObjectType::Motorcyclist => (4.0, 12.0),
        ObjectType::Cyclist => (2.0, 6.0),
        ObjectType::Pedestrian => (0.8, 1.8),
    }
}

fn roll_states(plan: &AgentPlan, cfg: &SynthConfig, rng: &mut Rng) -> Vec<AgentState> {
    let total = cfg.horizon.total_len();
    let mut states = Vec::with_capacity(total);
    let mut speed = plan.speed;
    let mut arclen = plan.start_arclen;
    for step in 0..total {
        if step > 0 {
            speed = (speed + gaussian(rng, 0.0, cfg.speed_noise)).max(0.0);
            if plan.speed == 0.0 {
                speed = 0.0;
            }
            arclen += speed * TIMESTEP_S;
        }
        let (on_path, heading) = plan.path.sample(arclen);
        let nx = -heading.sin();
        let ny = heading.cos();
        let x = on_path.x + plan.lateral_offset * nx + gaussian(rng, 0.0, cfg.position_noise);
        let y = on_path.y + plan.lateral_offset * ny + gaussian(rng, 0.0, cfg.position_noise);
        states.push(AgentState::observed(
            x,
            y,
            heading,
            speed * heading.cos(),
            speed * heading.sin(),
        ));
    }
    states
}

fn quantize_states(states: &mut [AgentState]) {
    for st in states {
        if st.valid {
            st.pose.x = quantize(st.pose.x);
            st.pose.y = quantize(st.pose.y);
            st.pose.heading = quantize(normalize_angle(st.pose.heading));
            st.vx = quantize(st.vx);
            st.vy = quantize(st.vy);
        } else {
            *st = AgentState::missing();
        }
    }
}

// ---- scenario assembly ----

fn sample_type(rng: &mut Rng, cfg: &SynthConfig) -> ObjectType {
    ObjectType::ALL[weighted_index(rng, &cfg.type_weights)]
}

fn lateral_for(t: ObjectType, rng: &mut Rng) -> f64 {
    match t {
        ObjectType::Pedestrian | ObjectType::Cyclist => uniform(rng, 2.0, 4.5) * if uniform(rng, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 },
        _ => uniform(rng, -0.4, 0.4),
    }
}

struct Layout {
    lanes: Vec<Lane>,
    focal_path: Vec<Point2>,
}

fn build_layout(rng: &mut Rng, cfg: &SynthConfig) -> Layout {
    let origin = Point2::new(uniform(rng, -40.0, 40.0), uniform(rng, -40.0, 40.0));
    let heading = uniform(rng, -PI, PI);
    let mut lanes = Vec::new();
    let mut lane_counter = 0;
    let push_lane = |lanes: &mut Vec<Lane>, counter: &mut usize, points: Vec<Point2>| {
        let points = dedup_consecutive(points);
        lanes.push(Lane { lane_id: format!("lane{counter}"), points });
        *counter += 1;
    };

    let archetype = weighted_index(rng, &[0.35, 0.35, 0.30]);
    let focal_path = match archetype {
        0 => {
            // straight road
            let pts = straight_points(origin, heading, uniform(rng, 120.0, 170.0), 5.0);
            push_lane(&mut lanes, &mut lane_counter, pts.clone());
            pts
        }
        1 => {
            // constant-curvature bend
            let radius = uniform(rng, 18.0, 55.0);
            let turn = uniform(rng, 1.1, 2.3) * if uniform(rng, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
            let pts = arc_points(origin, heading, radius, turn, 3.5);
            push_lane(&mut lanes, &mut lane_counter, pts.clone());
            pts
        }
        _ => {
            // T-junction: a through lane plus a turning branch at its middle
            let approach_len = uniform(rng, 55.0, 80.0);
            let through = straight_points(origin, heading, approach_len * 2.0, 5.0);
            push_lane(&mut lanes, &mut lane_counter, through.clone());
            let junction = {
                let (c, s) = (heading.cos(), heading.sin());
                Point2::new(origin.x + c * approach_len, origin.y + s * approach_len)
            };
            let radius = uniform(rng, 12.0, 24.0);
            let turn = FRAC_PI_2 * if uniform(rng, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
            let mut branch = arc_points(junction, heading, radius, turn, 3.0);
            let exit_heading = normalize_angle(heading + turn);
            let exit = straight_points(*branch.last().unwrap(), exit_heading, 60.0, 5.0);
            branch.extend_from_slice(&exit[1..]);
            push_lane(&mut lanes, &mut lane_counter, branch.clone());

            if uniform(rng, 0.0, 1.0) < 0.5 {
                through
            } else {
                // approach segment followed by the branch
                let mut path: Vec<Point2> =
                    straight_points(origin, heading, approach_len, 5.0);
                path.extend_from_slice(&branch[1..]);
                path
            }
        }
    };

    let want_lanes = cfg.lanes_min + uniform_usize(rng, cfg.lanes_max - cfg.lanes_min + 1);
    while lanes.len() < want_lanes {
        let p = Point2::new(
            origin.x + uniform(rng, -60.0, 60.0),
            origin.y + uniform(rng, -60.0, 60.0),
        );
        let h = uniform(rng, -PI, PI);
        let pts = if uniform(rng, 0.0, 1.0) < 0.5 {
            straight_points(p, h, uniform(rng, 60.0, 120.0), 5.0)
        } else {
            arc_points(p, h, uniform(rng, 15.0, 45.0), uniform(rng, 0.9, 2.0), 3.5)
        };
        push_lane(&mut lanes, &mut lane_counter, pts);
    }

    Layout { lanes, focal_path }
}

fn generate_one(index: usize, rng: &mut Rng, cfg: &SynthConfig) -> Scenario {
    let h = cfg.horizon.history_len;
    let layout = build_layout(rng, cfg);
    let focal_type = sample_type(rng, cfg);
    let focal_sampler = PathSampler::new(layout.focal_path.clone());
    let is_static = uniform(rng, 0.0, 1.0) < 0.10;
    let (lo, hi) = speed_range(focal_type);
    let focal_plan = AgentPlan {
        object_type: focal_type,
        start_arclen: uniform(rng, 0.1, 0.45) * focal_sampler.total(),
        speed: if is_static { 0.0 } else { uniform(rng, lo, hi) },
        lateral_offset: lateral_for(focal_type, rng),
        path: focal_sampler,
    };
    let mut focal_states = roll_states(&focal_plan, cfg, rng);
    quantize_states(&mut focal_states);
    let mut tracks = vec![AgentTrack {
        agent_id: "a0".into(),
        object_type: focal_type,
        states: focal_states,
    }];

    let n_agents = cfg.agents_min + uniform_usize(rng, cfg.agents_max - cfg.agents_min + 1);
    for j in 1..n_agents {
        let object_type = sample_type(rng, cfg);
        let lane = &layout.lanes[uniform_usize(rng, layout.lanes.len())];
        let sampler = PathSampler::new(lane.points.clone());
        let neighbor_static = uniform(rng, 0.0, 1.0) < 0.25;
        let (lo, hi) = speed_range(object_type);
        let plan = AgentPlan {
            object_type,
            start_arclen: uniform(rng, 0.0, 0.7) * sampler.total(),
            speed: if neighbor_static { 0.0 } else { uniform(rng, lo, hi) },
            lateral_offset: lateral_for(object_type, rng),
            path: sampler,
        };
        let mut states = roll_states(&plan, cfg, rng);
        // partial observability for non-focal agents
        if uniform(rng, 0.0, 1.0) < 0.30 {
            let cut = 1 + uniform_usize(rng, h);
            for st in states.iter_mut().take(cut) {
                st.valid = false;
            }
        }
        if uniform(rng, 0.0, 1.0) < 0.15 {
            let total = states.len();
            let cut = 1 + uniform_usize(rng, cfg.horizon.future_len / 2);
            for st in states.iter_mut().skip(total - cut) {
                st.valid = false;
            }
        }
        quantize_states(&mut states);
        tracks.push(AgentTrack { agent_id: format!("a{j}"), object_type: plan.object_type, states });
    }

    Scenario {
        scenario_id: format!("scn{index:05}"),
        focal_agent_id: "a0".into(),
        tracks,
        map: VectorMap { lanes: layout.lanes },
        horizon: cfg.horizon,
    }
}

/// Generate `cfg.n_scenarios` scenarios; a pure function of the config.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<Scenario>, String> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let scenarios: Vec<Scenario> = (0..cfg.n_scenarios)
        .map(|i| generate_one(i, &mut rng, cfg))
        .collect();
    debug_assert!(scenarios.iter().all(|s| s.validate().is_ok()));
    Ok(scenarios)
}
