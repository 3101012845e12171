//! Planar rigid-body geometry: points, SE(2) poses and frame changes.
//!
//! Every coordinate in the pipeline is either world-frame or expressed in
//! some agent's frame (agent at origin, heading along +x). The functions
//! here are the only place frame conversions happen.

use std::f64::consts::PI;

/// 2D point in meters.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// SE(2) pose: position plus heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    /// Radians, normalized to (-pi, pi].
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Wrap an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a % two_pi;
    if r <= -PI {
        r += two_pi;
    } else if r > PI {
        r -= two_pi;
    }
    r
}

/// Map a world-frame point into the frame where `reference` sits at the
/// origin with heading 0: translate by -(ref.x, ref.y), then rotate by
/// -ref.heading.
pub fn to_agent_frame(p: Point2, reference: &Pose2) -> Point2 {
    let dx = p.x - reference.x;
    let dy = p.y - reference.y;
    let c = reference.heading.cos();
    let s = reference.heading.sin();
    Point2::new(c * dx + s * dy, -s * dx + c * dy)
}

/// Inverse of [`to_agent_frame`]: map an agent-frame point back to world.
pub fn from_agent_frame(p: Point2, reference: &Pose2) -> Point2 {
    let c = reference.heading.cos();
    let s = reference.heading.sin();
    Point2::new(
        reference.x + c * p.x - s * p.y,
        reference.y + s * p.x + c * p.y,
    )
}

/// Frame change for a full pose; the heading becomes the normalized
/// difference to the reference heading.
pub fn pose_to_agent_frame(p: &Pose2, reference: &Pose2) -> Pose2 {
    let pt = to_agent_frame(p.position(), reference);
    Pose2 {
        x: pt.x,
        y: pt.y,
        heading: normalize_angle(p.heading - reference.heading),
    }
}

/// Rotate a frame-direction quantity (velocity) by -ref.heading.
/// Directions are not translated.
pub fn rotate_to_agent_frame(vx: f64, vy: f64, reference: &Pose2) -> (f64, f64) {
    let c = reference.heading.cos();
    let s = reference.heading.sin();
    (c * vx + s * vy, -s * vx + c * vy)
}

/// Minimum distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let abx = b.x - a.x;
    let aby = b.y - a.y;
    let len2 = abx * abx + aby * aby;
    if len2 == 0.0 {
        return p.distance(&a);
    }
    let t = ((p.x - a.x) * abx + (p.y - a.y) * aby) / len2;
    let t = t.clamp(0.0, 1.0);
    p.distance(&Point2::new(a.x + t * abx, a.y + t * aby))
}

/// Minimum distance from `p` to a polyline.
pub fn point_polyline_distance(p: Point2, points: &[Point2]) -> f64 {
    if points.len() == 1 {
        return p.distance(&points[0]);
    }
    points
        .windows(2)
        .map(|w| point_segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}
