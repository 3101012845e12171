//! Vector-map preprocessing: lane centerlines are split into short
//! segments, indexed on a uniform grid for radius queries, and turned into
//! agent-frame topology features.

use std::collections::HashMap;

use thiserror::Error;

use crate::geom::{point_polyline_distance, to_agent_frame, Point2, Pose2};
use crate::scenario::ObjectType;

/// Points per lane segment after splitting.
pub const DEFAULT_SEGMENT_POINTS: usize = 10;

/// Lane-feature row width: x, y, dir_cos, dir_sin, valid.
pub const LANE_FEATURE_WIDTH: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Lane {
    pub lane_id: String,
    pub points: Vec<Point2>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct VectorMap {
    pub lanes: Vec<Lane>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("degenerate lane `{lane_id}`: {reason}")]
    DegenerateLane { lane_id: String, reason: String },
    #[error("no query radius configured for object type `{0}`")]
    UnknownObjectType(String),
}

impl VectorMap {
    pub fn validate(&self) -> Result<(), MapError> {
        for lane in &self.lanes {
            if lane.points.len() < 2 {
                return Err(MapError::DegenerateLane {
                    lane_id: lane.lane_id.clone(),
                    reason: format!("{} point(s), need at least 2", lane.points.len()),
                });
            }
            for w in lane.points.windows(2) {
                if w[0] == w[1] {
                    return Err(MapError::DegenerateLane {
                        lane_id: lane.lane_id.clone(),
                        reason: "consecutive duplicate points".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A bounded chunk of a lane centerline; the unit token of map context.
#[derive(Clone, Debug, PartialEq)]
pub struct LaneSegment {
    pub segment_id: String,
    pub source_lane_id: String,
    pub points: Vec<Point2>,
}

/// Per-category query radius in meters.
#[derive(Clone, Debug)]
pub struct MapQueryConfig {
    radii: HashMap<ObjectType, f64>,
}

impl Default for MapQueryConfig {
    fn default() -> Self {
        // Larger and faster agent classes see farther map context.
        let mut radii = HashMap::new();
        radii.insert(ObjectType::Vehicle, 80.0);
        radii.insert(ObjectType::Bus, 100.0);
        radii.insert(ObjectType::Motorcyclist, 60.0);
        radii.insert(ObjectType::Cyclist, 50.0);
        radii.insert(ObjectType::Pedestrian, 30.0);
        Self { radii }
    }
}

impl MapQueryConfig {
    pub fn with_radius(mut self, object_type: ObjectType, radius: f64) -> Self {
        assert!(radius > 0.0, "query radius must be strictly positive");
        self.radii.insert(object_type, radius);
        self
    }

    pub fn radius_for(&self, object_type: ObjectType) -> Result<f64, MapError> {
        self.radii
            .get(&object_type)
            .copied()
            .ok_or_else(|| MapError::UnknownObjectType(object_type.as_str().to_string()))
    }
}

/// Chop each lane polyline into consecutive chunks of at most
/// `max_points`, adjacent chunks sharing one boundary point. Concatenating
/// the chunks (dropping duplicated boundaries) reproduces the lane.
pub fn split_map(map: &VectorMap, max_points: usize) -> Result<Vec<LaneSegment>, MapError> {
    assert!(max_points >= 2, "segments need at least 2 points");
    let mut segments = Vec::new();
    for lane in &map.lanes {
        if lane.points.len() < 2 {
            return Err(MapError::DegenerateLane {
                lane_id: lane.lane_id.clone(),
                reason: format!("{} point(s), need at least 2", lane.points.len()),
            });
        }
        let mut start = 0;
        let mut chunk = 0;
        while start + 1 < lane.points.len() {
            let end = (start + max_points).min(lane.points.len());
            segments.push(LaneSegment {
                segment_id: format!("{}#{}", lane.lane_id, chunk),
                source_lane_id: lane.lane_id.clone(),
                points: lane.points[start..end].to_vec(),
            });
            chunk += 1;
            start = end - 1;
        }
    }
    Ok(segments)
}

/// Uniform-grid spatial index over segment bounding boxes. Queries prune
/// by grid cell and then filter by exact polyline distance, so results
/// match a linear scan.
pub struct SegmentIndex {
    segments: Vec<LaneSegment>,
    cell_size: f64,
    origin: Point2,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<u32>>,
}

const INDEX_CELL_SIZE: f64 = 25.0;

impl SegmentIndex {
    pub fn build(segments: Vec<LaneSegment>) -> Self {
        if segments.is_empty() {
            return Self {
                segments,
                cell_size: INDEX_CELL_SIZE,
                origin: Point2::new(0.0, 0.0),
                cols: 0,
                rows: 0,
                cells: Vec::new(),
            };
        }
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for seg in &segments {
            for p in &seg.points {
                min.x = min.x.min(p.x);
                min.y = min.y.min(p.y);
                max.x = max.x.max(p.x);
                max.y = max.y.max(p.y);
            }
        }
        let cell_size = INDEX_CELL_SIZE;
        let cols = (((max.x - min.x) / cell_size).floor() as usize + 1).max(1);
        let rows = (((max.y - min.y) / cell_size).floor() as usize + 1).max(1);
        let mut cells = vec![Vec::new(); cols * rows];
        for (i, seg) in segments.iter().enumerate() {
            let (mut sx0, mut sy0) = (f64::INFINITY, f64::INFINITY);
            let (mut sx1, mut sy1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for p in &seg.points {
                sx0 = sx0.min(p.x);
                sy0 = sy0.min(p.y);
                sx1 = sx1.max(p.x);
                sy1 = sy1.max(p.y);
            }
            let c0 = (((sx0 - min.x) / cell_size).floor() as usize).min(cols - 1);
            let c1 = (((sx1 - min.x) / cell_size).floor() as usize).min(cols - 1);
            let r0 = (((sy0 - min.y) / cell_size).floor() as usize).min(rows - 1);
            let r1 = (((sy1 - min.y) / cell_size).floor() as usize).min(rows - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    cells[r * cols + c].push(i as u32);
                }
            }
        }
        Self { segments, cell_size, origin: min, cols, rows, cells }
    }

    pub fn segments(&self) -> &[LaneSegment] {
        &self.segments
    }

    /// Candidate segment indices whose bounding cells intersect the disc.
    fn candidates(&self, position: Point2, radius: f64) -> Vec<u32> {
        if self.cells.is_empty() {
            return Vec::new();
        }
        let c0 = ((position.x - radius - self.origin.x) / self.cell_size).floor();
        let c1 = ((position.x + radius - self.origin.x) / self.cell_size).floor();
        let r0 = ((position.y - radius - self.origin.y) / self.cell_size).floor();
        let r1 = ((position.y + radius - self.origin.y) / self.cell_size).floor();
        let c0 = c0.max(0.0) as usize;
        let r0 = r0.max(0.0) as usize;
        if c0 >= self.cols || r0 >= self.rows || c1 < 0.0 || r1 < 0.0 {
            return Vec::new();
        }
        let c1 = (c1 as usize).min(self.cols - 1);
        let r1 = (r1 as usize).min(self.rows - 1);
        let mut ids = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                ids.extend_from_slice(&self.cells[r * self.cols + c]);
            }
        }
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// All segments whose polyline comes within the category radius of
/// `position`, sorted by ascending distance with ties broken by
/// `segment_id`.
pub fn query_segments<'a>(
    index: &'a SegmentIndex,
    position: Point2,
    object_type: ObjectType,
    cfg: &MapQueryConfig,
) -> Result<Vec<&'a LaneSegment>, MapError> {
    let radius = cfg.radius_for(object_type)?;
    let mut hits: Vec<(f64, &LaneSegment)> = index
        .candidates(position, radius)
        .into_iter()
        .map(|i| &index.segments[i as usize])
        .map(|seg| (point_polyline_distance(position, &seg.points), seg))
        .filter(|(d, _)| *d <= radius)
        .collect();
    hits.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then_with(|| a.1.segment_id.cmp(&b.1.segment_id))
    });
    Ok(hits.into_iter().map(|(_, s)| s).collect())
}

/// Agent-frame topology feature for one segment: fixed `max_points` rows
/// of [x, y, dir_cos, dir_sin, valid], zero-padded past the real points.
#[derive(Clone, Debug, PartialEq)]
pub struct LaneFeature {
    pub segment_id: String,
    pub rows: Vec<[f64; LANE_FEATURE_WIDTH]>,
}

/// Transform segments into the agent frame and attach per-point unit
/// directions (point i toward point i+1, the last point repeating the
/// previous direction).
pub fn lane_features(
    segments: &[&LaneSegment],
    agent_pose: &Pose2,
    max_points: usize,
) -> Vec<LaneFeature> {
    segments
        .iter()
        .map(|seg| {
            let pts: Vec<Point2> = seg
                .points
                .iter()
                .map(|p| to_agent_frame(*p, agent_pose))
                .collect();
            let mut rows = Vec::with_capacity(max_points);
            for (i, p) in pts.iter().enumerate() {
                let (dx, dy) = if i + 1 < pts.len() {
                    (pts[i + 1].x - p.x, pts[i + 1].y - p.y)
                } else {
                    (p.x - pts[i - 1].x, p.y - pts[i - 1].y)
                };
                let n = dx.hypot(dy);
                rows.push([p.x, p.y, dx / n, dy / n, 1.0]);
            }
            rows.resize(max_points, [0.0; LANE_FEATURE_WIDTH]);
            LaneFeature { segment_id: seg.segment_id.clone(), rows }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
    }

    fn lane(id: &str, pts: &[(f64, f64)]) -> Lane {
        Lane {
            lane_id: id.into(),
            points: pts.iter().map(|&(x, y)| Point2::new(x, y)).collect(),
        }
    }

    fn straight_lane(id: &str, n: usize) -> Lane {
        Lane {
            lane_id: id.into(),
            points: (0..n).map(|i| Point2::new(i as f64, 0.0)).collect(),
        }
    }

    #[test]
    fn split_keeps_short_lane_whole() {
        let map = VectorMap { lanes: vec![straight_lane("l", 10)] };
        let segs = split_map(&map, 10).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].points, map.lanes[0].points);
    }

    #[test]
    fn split_19_points_shares_boundary() {
        // hand count: chunks [0..=9] and [9..=18]
        let map = VectorMap { lanes: vec![straight_lane("l", 19)] };
        let segs = split_map(&map, 10).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].points.len(), 10);
        assert_eq!(segs[1].points.len(), 10);
        assert_eq!(segs[0].points[9], segs[1].points[0]);
        assert_eq!(segs[0].points[9], Point2::new(9.0, 0.0));
    }

    #[test]
    fn split_empty_map() {
        let segs = split_map(&VectorMap::default(), 10).unwrap();
        assert!(segs.is_empty());
    }

    #[test]
    fn split_rejects_degenerate_lane() {
        let map = VectorMap { lanes: vec![lane("l", &[(0.0, 0.0)])] };
        assert!(matches!(
            split_map(&map, 10),
            Err(MapError::DegenerateLane { .. })
        ));
    }

    #[test]
    fn split_reconstruction_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = 2 + (rng.next_u64() % 40) as usize;
            let pts: Vec<Point2> = (0..n)
                .map(|i| Point2::new(i as f64 * 2.0, uniform(&mut rng, -5.0, 5.0)))
                .collect();
            let map = VectorMap { lanes: vec![Lane { lane_id: "l".into(), points: pts.clone() }] };
            let segs = split_map(&map, 10).unwrap();
            let mut rebuilt = segs[0].points.clone();
            for seg in &segs[1..] {
                assert_eq!(*rebuilt.last().unwrap(), seg.points[0]);
                rebuilt.extend_from_slice(&seg.points[1..]);
            }
            assert_eq!(rebuilt, pts);
            for seg in &segs {
                assert!(seg.points.len() >= 2 && seg.points.len() <= 10);
            }
        }
    }

    #[test]
    fn empty_index_returns_empty() {
        let index = SegmentIndex::build(Vec::new());
        let got = query_segments(
            &index,
            Point2::new(0.0, 0.0),
            ObjectType::Vehicle,
            &MapQueryConfig::default(),
        )
        .unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn single_segment_hit() {
        let map = VectorMap { lanes: vec![straight_lane("l", 5)] };
        let index = SegmentIndex::build(split_map(&map, 10).unwrap());
        let got = query_segments(
            &index,
            Point2::new(2.0, 0.0),
            ObjectType::Vehicle,
            &MapQueryConfig::default(),
        )
        .unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].segment_id, "l#0");
    }

    #[test]
    fn query_rejects_unconfigured_type() {
        let cfg = MapQueryConfig { radii: HashMap::new() };
        let index = SegmentIndex::build(Vec::new());
        assert!(matches!(
            query_segments(&index, Point2::new(0.0, 0.0), ObjectType::Bus, &cfg),
            Err(MapError::UnknownObjectType(_))
        ));
    }

    // Oracle: unindexed linear scan with the same distance metric.
    fn linear_scan<'a>(
        segments: &'a [LaneSegment],
        position: Point2,
        radius: f64,
    ) -> Vec<&'a LaneSegment> {
        let mut hits: Vec<(f64, &LaneSegment)> = segments
            .iter()
            .map(|s| (point_polyline_distance(position, &s.points), s))
            .filter(|(d, _)| *d <= radius)
            .collect();
        hits.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then_with(|| a.1.segment_id.cmp(&b.1.segment_id))
        });
        hits.into_iter().map(|(_, s)| s).collect()
    }

    #[test]
    fn index_query_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut lanes = Vec::new();
        for i in 0..100 {
            let x0 = uniform(&mut rng, -200.0, 200.0);
            let y0 = uniform(&mut rng, -200.0, 200.0);
            let dx = uniform(&mut rng, -10.0, 10.0);
            let dy = uniform(&mut rng, -10.0, 10.0);
            let n = 2 + (rng.next_u64() % 9) as usize;
            lanes.push(Lane {
                lane_id: format!("l{i}"),
                points: (0..n)
                    .map(|k| Point2::new(x0 + dx * k as f64 + 0.01, y0 + dy * k as f64))
                    .collect(),
            });
        }
        let segments = split_map(&VectorMap { lanes }, 10).unwrap();
        let index = SegmentIndex::build(segments.clone());
        let cfg = MapQueryConfig::default().with_radius(ObjectType::Vehicle, 35.0);
        for _ in 0..50 {
            let q = Point2::new(uniform(&mut rng, -220.0, 220.0), uniform(&mut rng, -220.0, 220.0));
            let got: Vec<String> = query_segments(&index, q, ObjectType::Vehicle, &cfg)
                .unwrap()
                .iter()
                .map(|s| s.segment_id.clone())
                .collect();
            let want: Vec<String> = linear_scan(&segments, q, 35.0)
                .iter()
                .map(|s| s.segment_id.clone())
                .collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn monotone_radius_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lanes: Vec<Lane> = (0..30)
            .map(|i| {
                let x = uniform(&mut rng, -80.0, 80.0);
                let y = uniform(&mut rng, -80.0, 80.0);
                lane(&format!("l{i}"), &[(x, y), (x + 5.0, y + 1.0), (x + 10.0, y)])
            })
            .collect();
        let index = SegmentIndex::build(split_map(&VectorMap { lanes }, 10).unwrap());
        let small = MapQueryConfig::default().with_radius(ObjectType::Vehicle, 30.0);
        let big = MapQueryConfig::default().with_radius(ObjectType::Vehicle, 60.0);
        for _ in 0..40 {
            let q = Point2::new(uniform(&mut rng, -90.0, 90.0), uniform(&mut rng, -90.0, 90.0));
            let a: Vec<String> = query_segments(&index, q, ObjectType::Vehicle, &small)
                .unwrap()
                .iter()
                .map(|s| s.segment_id.clone())
                .collect();
            let b: Vec<String> = query_segments(&index, q, ObjectType::Vehicle, &big)
                .unwrap()
                .iter()
                .map(|s| s.segment_id.clone())
                .collect();
            for id in &a {
                assert!(b.contains(id));
            }
        }
    }

    #[test]
    fn aligned_lane_has_unit_x_directions() {
        let seg = LaneSegment {
            segment_id: "s".into(),
            source_lane_id: "l".into(),
            points: vec![Point2::new(3.0, 4.0), Point2::new(8.0, 4.0), Point2::new(13.0, 4.0)],
        };
        let pose = Pose2::new(3.0, 4.0, 0.0);
        let feats = lane_features(&[&seg], &pose, 10);
        assert_eq!(feats.len(), 1);
        for row in &feats[0].rows[..3] {
            assert!((row[2] - 1.0).abs() < 1e-12);
            assert!(row[3].abs() < 1e-12);
            assert_eq!(row[4], 1.0);
        }
        for row in &feats[0].rows[3..] {
            assert_eq!(*row, [0.0; 5]);
        }
    }

    #[test]
    fn two_point_segment_rows() {
        let seg = LaneSegment {
            segment_id: "s".into(),
            source_lane_id: "l".into(),
            points: vec![Point2::new(1.0, 1.0), Point2::new(1.0, 4.0)],
        };
        // agent at first point, facing the second (heading pi/2)
        let pose = Pose2::new(1.0, 1.0, std::f64::consts::FRAC_PI_2);
        let feats = lane_features(&[&seg], &pose, 10);
        let rows = &feats[0].rows;
        assert!((rows[0][0]).abs() < 1e-12 && (rows[0][1]).abs() < 1e-12);
        assert!((rows[0][2] - 1.0).abs() < 1e-12 && rows[0][3].abs() < 1e-12);
        assert!((rows[1][0] - 3.0).abs() < 1e-12 && rows[1][1].abs() < 1e-12);
        assert!((rows[1][2] - 1.0).abs() < 1e-12 && rows[1][3].abs() < 1e-12);
    }

    #[test]
    fn l_shaped_segment_under_rotated_pose_matches_oracle() {
        let seg = LaneSegment {
            segment_id: "s".into(),
            source_lane_id: "l".into(),
            points: vec![Point2::new(2.0, 1.0), Point2::new(4.0, 1.0), Point2::new(4.0, 3.0)],
        };
        let pose = Pose2::new(1.0, -1.0, 0.7);
        let feats = lane_features(&[&seg], &pose, 4);
        // oracle: explicit transform + normalization per point
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let tf = |p: Point2| {
            let (dx, dy) = (p.x - 1.0, p.y + 1.0);
            Point2::new(c * dx + s * dy, -s * dx + c * dy)
        };
        let tp: Vec<Point2> = seg.points.iter().map(|p| tf(*p)).collect();
        for i in 0..3 {
            let (dx, dy) = if i + 1 < 3 {
                (tp[i + 1].x - tp[i].x, tp[i + 1].y - tp[i].y)
            } else {
                (tp[i].x - tp[i - 1].x, tp[i].y - tp[i - 1].y)
            };
            let n = dx.hypot(dy);
            let row = feats[0].rows[i];
            assert!((row[0] - tp[i].x).abs() < 1e-12);
            assert!((row[1] - tp[i].y).abs() < 1e-12);
            assert!((row[2] - dx / n).abs() < 1e-12);
            assert!((row[3] - dy / n).abs() < 1e-12);
            let unit = (row[2] * row[2] + row[3] * row[3]).sqrt();
            assert!((unit - 1.0).abs() < 1e-6);
        }
        assert_eq!(feats[0].rows[3], [0.0; 5]);
    }
}
