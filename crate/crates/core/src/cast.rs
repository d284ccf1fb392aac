//! Adapter-shift pool and the cluster-based shift regulariser.
//!
//! A shift is the flattened difference between adapter parameters at some
//! point of a task and at the start of that task's joint phase. Completed
//! tasks deposit their shifts in a pool that is re-clustered with k-means at
//! every task boundary. While training, the current shift is assigned to its
//! nearest cluster and pushed toward orthogonality with every pooled shift
//! from the *other* clusters, each cosine weighted by its relative Euclidean
//! distance to the current shift.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    self, assign_nearest, cosine_similarity_grad, kmeans, norm, RngState, DEGENERATE_EPS,
    KMEANS_MAX_ITERS, KMEANS_RESTARTS,
};

#[derive(Debug, Error, PartialEq)]
pub enum CastError {
    #[error("length mismatch: {expected} vs {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("shift pool has no cluster centers")]
    NoCenters,
    #[error("cluster assignments do not match the pooled shifts")]
    BadClusters,
}

pub type Result<T> = std::result::Result<T, CastError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftVector {
    pub values: Vec<f64>,
    pub task_id: usize,
    pub snapshot_idx: usize,
    /// Norm below the degenerate threshold (e.g. a task with no adapter steps).
    pub degenerate: bool,
}

impl ShiftVector {
    pub fn new(values: Vec<f64>, task_id: usize, snapshot_idx: usize) -> Self {
        let degenerate = norm(&values) < DEGENERATE_EPS;
        Self {
            values,
            task_id,
            snapshot_idx,
            degenerate,
        }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftPool {
    shifts: Vec<ShiftVector>,
    k_configured: usize,
    shifts_per_task: usize,
    centers: Vec<Vec<f64>>,
    assignments: Vec<usize>,
}

impl ShiftPool {
    pub fn new(k_configured: usize, shifts_per_task: usize) -> Self {
        Self {
            shifts: Vec::new(),
            k_configured: k_configured.max(1),
            shifts_per_task: shifts_per_task.max(1),
            centers: Vec::new(),
            assignments: Vec::new(),
        }
    }

    /// Pool with externally chosen clusters; assignments must index `centers`.
    pub fn from_parts(
        shifts: Vec<ShiftVector>,
        centers: Vec<Vec<f64>>,
        assignments: Vec<usize>,
        k_configured: usize,
        shifts_per_task: usize,
    ) -> Result<Self> {
        if assignments.len() != shifts.len() || assignments.iter().any(|&a| a >= centers.len()) {
            return Err(CastError::BadClusters);
        }
        Ok(Self {
            shifts,
            k_configured,
            shifts_per_task,
            centers,
            assignments,
        })
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn shifts(&self) -> &[ShiftVector] {
        &self.shifts
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn k_configured(&self) -> usize {
        self.k_configured
    }

    pub fn shifts_per_task(&self) -> usize {
        self.shifts_per_task
    }

    /// `min(K, |pool|)`
    pub fn k_effective(&self) -> usize {
        self.k_configured.min(self.shifts.len())
    }

    /// Appends without reclustering.
    pub fn push(&mut self, shift: ShiftVector) {
        self.shifts.push(shift);
    }
}

/// Elementwise `after − prev`.
pub fn compute_shift(after: &[f64], prev: &[f64]) -> Result<Vec<f64>> {
    if after.len() != prev.len() {
        return Err(CastError::LengthMismatch {
            expected: prev.len(),
            got: after.len(),
        });
    }
    Ok(after.iter().zip(prev).map(|(a, b)| a - b).collect())
}

/// Refreshes centers and assignments with k-means on every pooled shift.
/// An empty pool clears the clusters.
pub fn recluster(pool: &mut ShiftPool, rng: &mut RngState) {
    if pool.shifts.is_empty() {
        pool.centers.clear();
        pool.assignments.clear();
        return;
    }
    let points: Vec<Vec<f64>> = pool.shifts.iter().map(|s| s.values.clone()).collect();
    let result = kmeans(
        &points,
        pool.k_effective(),
        rng,
        KMEANS_RESTARTS,
        KMEANS_MAX_ITERS,
    )
    .expect("pool is non-empty and k_effective is within range");
    pool.centers = result.centers;
    pool.assignments = result.assignments;
}

/// Nearest center; ties go to the lowest index.
pub fn assign_cluster(v: &[f64], pool: &ShiftPool) -> Result<usize> {
    if pool.centers.is_empty() {
        return Err(CastError::NoCenters);
    }
    if v.len() != pool.centers[0].len() {
        return Err(CastError::LengthMismatch {
            expected: pool.centers[0].len(),
            got: v.len(),
        });
    }
    Ok(assign_nearest(v, &pool.centers).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CastTerm {
    /// Index into the pool's shifts.
    pub shift_index: usize,
    pub weight: f64,
}

/// The parts of the loss held constant within one iteration: the cluster
/// of the current shift and the distance weights of the other-cluster shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CastPlan {
    pub cluster: usize,
    pub terms: Vec<CastTerm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CastOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub plan: Option<CastPlan>,
    /// Cosine per plan term, same order as `plan.terms`.
    pub cosines: Vec<f64>,
}

/// Cluster assignment and weights for `v_cur`, or `None` when the loss is
/// vacuous (no clusters, degenerate `v_cur`, or no other-cluster shifts).
pub fn cast_plan(v_cur: &[f64], pool: &ShiftPool) -> Option<CastPlan> {
    if pool.centers.is_empty() || norm(v_cur) < DEGENERATE_EPS {
        return None;
    }
    let cluster = assign_cluster(v_cur, pool).ok()?;
    let others: Vec<(usize, f64)> = pool
        .shifts
        .iter()
        .zip(&pool.assignments)
        .enumerate()
        .filter(|(_, (s, &a))| a != cluster && s.norm() >= DEGENERATE_EPS)
        .map(|(j, (s, _))| (j, numerics::distance(v_cur, &s.values)))
        .collect();
    let total: f64 = others.iter().map(|(_, d)| d).sum();
    if others.is_empty() || total <= 0.0 {
        return None;
    }
    Some(CastPlan {
        cluster,
        terms: others
            .into_iter()
            .map(|(shift_index, d)| CastTerm {
                shift_index,
                weight: d / total,
            })
            .collect(),
    })
}

/// `Σ_j w_j cos(v_cur, V_j)` with the plan's weights held fixed, and its
/// gradient with respect to `v_cur`.
pub fn cast_loss_with_plan(v_cur: &[f64], pool: &ShiftPool, plan: &CastPlan) -> CastOutput {
    let mut grad = vec![0.0; v_cur.len()];
    let mut loss = 0.0;
    let mut cosines = Vec::with_capacity(plan.terms.len());
    for term in &plan.terms {
        let other = &pool.shifts[term.shift_index].values;
        match cosine_similarity_grad(v_cur, other) {
            Ok((cos, g)) => {
                loss += term.weight * cos;
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += term.weight * gi;
                }
                cosines.push(cos);
            }
            Err(_) => cosines.push(0.0),
        }
    }
    CastOutput {
        loss,
        grad,
        plan: Some(plan.clone()),
        cosines,
    }
}

pub fn cast_loss(v_cur: &[f64], pool: &ShiftPool) -> CastOutput {
    match cast_plan(v_cur, pool) {
        Some(plan) => cast_loss_with_plan(v_cur, pool, &plan),
        None => CastOutput {
            loss: 0.0,
            grad: vec![0.0; v_cur.len()],
            plan: None,
            cosines: Vec::new(),
        },
    }
}

/// Optimizer-step counts after which a task's shifts are snapshotted:
/// `ceil(n · k / m)` for `k = 1..=m`. A milestone of 0 means "before any
/// step", i.e. a zero shift.
pub fn snapshot_milestones(total_steps: usize, shifts_per_task: usize) -> Vec<usize> {
    let m = shifts_per_task.max(1);
    (1..=m).map(|k| (total_steps * k).div_ceil(m)).collect()
}

/// Appends `snapshot − a_prev` for each recorded snapshot (padding with zero
/// shifts up to `shifts_per_task`, keeping the latest if there are more),
/// then re-clusters. Returns the number of shifts appended.
pub fn snapshot_task_shifts(
    pool: &mut ShiftPool,
    task_id: usize,
    a_prev: &[f64],
    snapshots: &[Vec<f64>],
    rng: &mut RngState,
) -> Result<usize> {
    let m = pool.shifts_per_task;
    let kept = &snapshots[snapshots.len().saturating_sub(m)..];
    let mut added = 0;
    for (idx, snap) in kept.iter().enumerate() {
        pool.push(ShiftVector::new(compute_shift(snap, a_prev)?, task_id, idx));
        added += 1;
    }
    while added < m {
        pool.push(ShiftVector::new(vec![0.0; a_prev.len()], task_id, added));
        added += 1;
    }
    recluster(pool, rng);
    Ok(added)
}
