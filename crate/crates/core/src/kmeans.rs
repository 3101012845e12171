//! Seeded 2D k-means: k-means++ initialization, Lloyd iterations with
//! empty-cluster repair, and internal restarts so small instances land on
//! the global optimum.

use crate::geom::Point2;
use crate::metrics::EvalError;
use crate::rng::{seeded, unit_f64, uniform_usize, Rng};

#[derive(Clone, Debug)]
pub struct KMeansResult {
    /// Cluster index per input point; every point sits within the minimum
    /// distance of its assigned centroid.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Point2>,
    /// Objective (sum of squared distances) after each Lloyd assignment
    /// of the winning restart; non-increasing.
    pub objective_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap()
    }
}

fn squared(a: &Point2, b: &Point2) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy
}

fn nearest(centroids: &[Point2], p: &Point2) -> usize {
    let mut best = 0;
    let mut best_d = squared(p, &centroids[0]);
    for (i, c) in centroids.iter().enumerate().skip(1) {
        let d = squared(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn objective_of(points: &[Point2], centroids: &[Point2], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared(p, &centroids[a]))
        .sum()
}

/// k-means++ seeding: first centroid uniform, the rest sampled with
/// probability proportional to the squared distance to the closest
/// chosen centroid.
fn seed_centroids(points: &[Point2], k: usize, rng: &mut Rng) -> Vec<Point2> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[uniform_usize(rng, points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| squared(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            points[uniform_usize(rng, points.len())]
        } else {
            let mut dart = unit_f64(rng) * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                dart -= w;
                if dart <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            points[chosen]
        };
        centroids.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared(p, &next));
        }
    }
    centroids
}

/// Give every empty cluster the farthest point of the largest cluster;
/// strictly closer points may follow. Each repair strictly lowers the
/// objective, so the loop terminates.
fn repair_empties(points: &[Point2], centroids: &mut [Point2], assignments: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = (0..k).find(|&c| sizes[c] == 0) else {
            return;
        };
        let donor = (0..k).max_by_key(|&c| sizes[c]).unwrap();
        let stolen = (0..points.len())
            .filter(|&i| assignments[i] == donor)
            .max_by(|&a, &b| {
                squared(&points[a], &centroids[donor])
                    .partial_cmp(&squared(&points[b], &centroids[donor]))
                    .unwrap()
                    .then(a.cmp(&b))
            })
            .unwrap();
        centroids[empty] = points[stolen];
        assignments[stolen] = empty;
        for i in 0..points.len() {
            if squared(&points[i], &centroids[empty])
                < squared(&points[i], &centroids[assignments[i]])
            {
                assignments[i] = empty;
            }
        }
    }
}

fn lloyd(points: &[Point2], mut centroids: Vec<Point2>, max_iters: usize) -> KMeansResult {
    let k = centroids.len();
    let mut assignments = vec![0usize; points.len()];
    let mut trace = Vec::new();
    for _ in 0..max_iters.max(1) {
        for (i, p) in points.iter().enumerate() {
            assignments[i] = nearest(&centroids, p);
        }
        repair_empties(points, &mut centroids, &mut assignments);
        trace.push(objective_of(points, &centroids, &assignments));

        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (p, &a) in points.iter().zip(&assignments) {
            sums[a].0 += p.x;
            sums[a].1 += p.y;
            sums[a].2 += 1;
        }
        let means: Vec<Point2> = sums
            .iter()
            .map(|&(x, y, n)| Point2::new(x / n as f64, y / n as f64))
            .collect();
        if means == centroids {
            break;
        }
        centroids = means;
    }
    // final consistency pass: assignments must be nearest w.r.t. the
    // returned centroids even when the iteration budget ran out
    for (i, p) in points.iter().enumerate() {
        assignments[i] = nearest(&centroids, p);
    }
    repair_empties(points, &mut centroids, &mut assignments);
    KMeansResult { assignments, centroids, objective_trace: trace }
}

/// Cluster 2D points into `k` groups; deterministic for a given seed.
/// Small instances run several k-means++ restarts and keep the best
/// objective.
pub fn kmeans(
    points: &[Point2],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult, EvalError> {
    if k == 0 || points.len() < k {
        return Err(EvalError::TooFewPoints { n: points.len(), k });
    }
    let restarts = if points.len() <= 64 { 16 } else { 4 };
    let mut rng = seeded(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let init = seed_centroids(points, k, &mut rng);
        let result = lloyd(points, init, max_iters);
        if best.as_ref().map_or(true, |b| result.objective() < b.objective()) {
            best = Some(result);
        }
    }
    Ok(best.unwrap())
}
