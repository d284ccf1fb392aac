//! Lloyd's algorithm with k-means++ seeding and best-of-n restarts.

use serde::{Deserialize, Serialize};

use super::{squared_distance, NumericsError, Result, RngState};

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub centers: Vec<Vec<f64>>,
    /// Index of the nearest center for each input point (ties → lowest index).
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each point to its assigned center.
    pub objective: f64,
}

/// Nearest center by Euclidean distance; ties resolve to the lowest index.
/// Returns `(index, squared distance)`. `centers` must be non-empty.
pub fn assign_nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign_all(points: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut objective = 0.0;
    let assignments = points
        .iter()
        .map(|p| {
            let (i, d) = assign_nearest(p, centers);
            objective += d;
            i
        })
        .collect();
    (assignments, objective)
}

fn validate(points: &[Vec<f64>], k: usize) -> Result<()> {
    if points.is_empty() {
        return Err(NumericsError::EmptyInput);
    }
    if k == 0 || k > points.len() {
        return Err(NumericsError::BadK { k, n: points.len() });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(NumericsError::DimMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    Ok(())
}

/// k-means++ seeding: first center uniform, then each next center sampled
/// with probability proportional to squared distance from the chosen set.
pub fn kmeans_plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut RngState) -> Vec<Vec<f64>> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.index(points.len())].clone());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final cumulative sum
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            rng.index(points.len())
        };
        let c = points[pick].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(squared_distance(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Lloyd iterations from the given centers. Returns the converged result and
/// the objective after every assignment step (non-increasing).
///
/// A cluster that loses all its points keeps its previous center.
pub fn lloyd(
    points: &[Vec<f64>],
    mut centers: Vec<Vec<f64>>,
    max_iters: usize,
) -> (ClusterResult, Vec<f64>) {
    let dim = centers[0].len();
    let (mut assignments, mut objective) = assign_all(points, &centers);
    let mut trace = vec![objective];
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((c, s), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|x| x / n as f64).collect();
            }
        }
        let (next, obj) = assign_all(points, &centers);
        trace.push(obj);
        objective = obj;
        if next == assignments {
            break;
        }
        assignments = next;
    }
    (
        ClusterResult {
            centers,
            assignments,
            objective,
        },
        trace,
    )
}

/// Best-objective result over `restarts` seeded runs, plus the objective
/// trace of every restart.
pub fn kmeans_traced(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut RngState,
    restarts: usize,
    max_iters: usize,
) -> Result<(ClusterResult, Vec<Vec<f64>>)> {
    validate(points, k)?;
    let mut best: Option<ClusterResult> = None;
    let mut traces = Vec::with_capacity(restarts.max(1));
    for _ in 0..restarts.max(1) {
        let init = kmeans_plus_plus_init(points, k, rng);
        let (result, trace) = lloyd(points, init, max_iters);
        traces.push(trace);
        if best.as_ref().is_none_or(|b| result.objective < b.objective) {
            best = Some(result);
        }
    }
    Ok((best.expect("at least one restart"), traces))
}

pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    rng: &mut RngState,
    restarts: usize,
    max_iters: usize,
) -> Result<ClusterResult> {
    kmeans_traced(points, k, rng, restarts, max_iters).map(|(r, _)| r)
}
