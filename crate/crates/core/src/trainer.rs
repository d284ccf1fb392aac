//! Per-task training loop and whole-stream experiments.
//!
//! Each task runs a head-only warmup, decides node expansions from the
//! warmup accuracies, then jointly trains adapters and head on
//! `β · L_CAST + L_IC` with Adam, updating the EMA adapters after every step.
//! At task end the per-class accuracies, a teacher snapshot and the task's
//! adapter shifts are recorded.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cast::{self, CastError, CastPlan, ShiftPool};
use crate::classifier_ic::{
    self, decide_expansions, ic_loss, predict, predict_single, select_logits, DistillScope,
    ExpansionDecision, ExpansionKind, Groups, IcError, IncrementalClassifier, ThresholdMode,
};
use crate::metrics::{self, EvalMatrix, MetricsError};
use crate::model::{Branch, Gradients, Model, ModelConfig, ModelError};
use crate::numerics::{norm, RngState};
use crate::scenario::{Dataset, Sample, ScenarioError, ScenarioKind, Split, TaskSpec, TaskStream};

/// Independent RNG streams derived from a run seed.
pub mod streams {
    pub const ORDER: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const CLUSTER: u64 = 4;
}

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Classifier(#[from] IcError),
    #[error(transparent)]
    Cast(#[from] CastError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, TrainerError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub epochs_total: usize,
    pub warmup_epochs: usize,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// `None`: 2 for streams of at most 20 tasks, otherwise 3.
    pub k_clusters: Option<usize>,
    pub ema_decay: f64,
    pub shifts_per_task: usize,
    pub const_threshold: f64,
    pub cast_enabled: bool,
    pub ic_enabled: bool,
    pub dynamic_threshold_enabled: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs_total: 5,
            warmup_epochs: 3,
            lr: 0.0028125,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            batch_size: 24,
            alpha: 1.0,
            beta: 0.05,
            gamma: classifier_ic::DEFAULT_GAMMA,
            k_clusters: None,
            ema_decay: 0.9999,
            shifts_per_task: 1,
            const_threshold: classifier_ic::CONSTANT_THRESHOLD,
            cast_enabled: true,
            ic_enabled: true,
            dynamic_threshold_enabled: true,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainerError::Config(m.to_string()));
        if self.epochs_total == 0 || self.warmup_epochs >= self.epochs_total {
            return bad("warmup_epochs must be smaller than a positive epochs_total");
        }
        if [self.lr, self.adam_eps, self.gamma]
            .iter()
            .any(|v| v.partial_cmp(&0.0) != Some(Ordering::Greater))
        {
            return bad("lr, adam_eps and gamma must be positive");
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad("adam_betas must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.shifts_per_task == 0 {
            return bad("batch_size and shifts_per_task must be positive");
        }
        if [self.alpha, self.beta]
            .iter()
            .any(|v| v.partial_cmp(&0.0).is_none_or(Ordering::is_lt))
        {
            return bad("alpha and beta must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1]");
        }
        if self.k_clusters == Some(0) {
            return bad("k_clusters must be positive");
        }
        Ok(())
    }

    pub fn joint_epochs(&self) -> usize {
        self.epochs_total - self.warmup_epochs
    }

    pub fn clusters_for(&self, stream_len: usize) -> usize {
        self.k_clusters
            .unwrap_or(if stream_len <= 20 { 2 } else { 3 })
    }

    pub fn threshold_mode(&self) -> ThresholdMode {
        if self.dynamic_threshold_enabled {
            ThresholdMode::Dynamic { gamma: self.gamma }
        } else {
            ThresholdMode::Constant(self.const_threshold)
        }
    }

    fn scope(&self) -> DistillScope {
        if self.ic_enabled {
            DistillScope::Unselected
        } else {
            DistillScope::All
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One training example for [`total_objective`].
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub x: &'a [f64],
    pub label: usize,
    /// Teacher raw logits over the nodes that existed before this task.
    pub teacher: Option<&'a [f64]>,
}

/// Everything the joint objective needs besides the model and the batch.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveContext<'a> {
    pub groups: &'a Groups,
    pub task_classes: &'a [usize],
    pub expanded: &'a BTreeSet<usize>,
    pub scope: DistillScope,
    pub alpha: f64,
    pub beta: f64,
    pub pool: &'a ShiftPool,
    pub a_prev: &'a [f64],
    /// Frozen cluster assignment and weights; `None` disables the shift term.
    pub cast_plan: Option<&'a CastPlan>,
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub total: f64,
    pub ic: f64,
    pub cast: f64,
    pub grad: Gradients,
}

/// `β · L_CAST(v) + mean_batch(L_IC)` and its exact gradient over the
/// trainable parameters, where `v` is the current adapter shift.
pub fn total_objective(
    model: &Model,
    batch: &[BatchItem<'_>],
    ctx: &ObjectiveContext<'_>,
) -> Result<Objective> {
    let adapters_len = model.adapters().flat_len();
    let mut grad = Gradients::zeros(adapters_len, model.head().flat_len());
    let mut ic = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    for item in batch {
        let (raw, fwd) = model.forward(item.x, Branch::Online)?;
        let (_, plan) = select_logits(&raw, ctx.groups, ctx.task_classes, ctx.expanded)?;
        let l = ic_loss(&raw, &plan, item.teacher, item.label, ctx.alpha, ctx.scope)?;
        ic += l.loss * scale;
        grad.accumulate(&model.backward(&fwd, &l.grad)?, scale);
    }
    let mut cast_loss = 0.0;
    if let Some(plan) = ctx.cast_plan {
        let v = cast::compute_shift(&model.adapters().flatten(), ctx.a_prev)?;
        let out = cast::cast_loss_with_plan(&v, ctx.pool, plan);
        cast_loss = out.loss;
        for (g, c) in grad.adapters.iter_mut().zip(out.grad) {
            *g += ctx.beta * c;
        }
    }
    Ok(Objective {
        total: ctx.beta * cast_loss + ic,
        ic,
        cast: cast_loss,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_index: usize,
    pub domain: String,
    pub class_ids: Vec<usize>,
    pub warmup_accs: BTreeMap<usize, f64>,
    pub final_accs: BTreeMap<usize, f64>,
    pub decisions: Vec<ExpansionDecision>,
    pub expanded: Vec<usize>,
    pub shift_norm: f64,
    /// Mean cross-entropy per warmup epoch.
    pub warmup_losses: Vec<f64>,
    /// Total objective per joint step.
    pub joint_losses: Vec<f64>,
    /// Shift-term value per joint step.
    pub cast_losses: Vec<f64>,
}

/// Mutable state carried across the tasks of one run.
#[derive(Debug, Clone)]
pub struct RunState {
    pub model: Model,
    pub classifier: IncrementalClassifier,
    pub pool: ShiftPool,
    pub teacher: Option<Model>,
    train_rng: RngState,
    cluster_rng: RngState,
}

impl RunState {
    pub fn new(
        model: Model,
        k_clusters: usize,
        shifts_per_task: usize,
        seed_rng: &RngState,
    ) -> Self {
        Self {
            model,
            classifier: IncrementalClassifier::new(),
            pool: ShiftPool::new(k_clusters, shifts_per_task),
            teacher: None,
            train_rng: seed_rng.derive(streams::TRAIN),
            cluster_rng: seed_rng.derive(streams::CLUSTER),
        }
    }
}

fn batches(n: usize, batch_size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    rng.permutation(n)
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect()
}

/// Per-class accuracy of `pred` over `samples`, for the given classes.
fn per_class_accuracy(
    samples: &[&Sample],
    classes: &[usize],
    mut pred: impl FnMut(&Sample) -> Result<Option<usize>>,
) -> Result<BTreeMap<usize, f64>> {
    let mut hits: BTreeMap<usize, (usize, usize)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for s in samples {
        let p = pred(s)?;
        if let Some(e) = hits.get_mut(&s.class_id) {
            e.1 += 1;
            if p == Some(s.class_id) {
                e.0 += 1;
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|(c, (h, n))| (c, if n == 0 { 0.0 } else { h as f64 / n as f64 }))
        .collect())
}

/// Per-class online accuracy with prediction restricted to the node groups of `classes`.
fn online_accuracies(
    model: &Model,
    groups: &Groups,
    samples: &[&Sample],
    classes: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let current: Groups = groups
        .iter()
        .filter(|(c, _)| classes.contains(c))
        .map(|(c, g)| (*c, g.clone()))
        .collect();
    per_class_accuracy(samples, classes, |s| {
        Ok(predict_single(
            &model.logits(&s.features, Branch::Online)?,
            &current,
        ))
    })
}

/// Gradient of the head parameters for `grad_logits · head(features)`.
fn head_gradient(dim: usize, features: &[f64], grad_logits: &[f64]) -> Vec<f64> {
    let mut g = Vec::with_capacity(grad_logits.len() * (dim + 1));
    for &gl in grad_logits {
        g.extend(features.iter().map(|f| gl * f));
        g.push(gl);
    }
    g
}

fn warmup(
    state: &mut RunState,
    task: &TaskSpec,
    samples: &[&Sample],
    cfg: &TrainerConfig,
) -> Result<Vec<f64>> {
    let features: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| state.model.features(&s.features, Branch::Online))
        .collect::<std::result::Result<_, _>>()?;
    let dim = state.model.head().dim();
    let mut head = state.model.head().flatten();
    let mut adam = Adam::new(head.len(), cfg.lr, cfg.adam_betas, cfg.adam_eps);
    let none = BTreeSet::new();
    let mut losses = Vec::with_capacity(cfg.warmup_epochs);
    for _ in 0..cfg.warmup_epochs {
        let mut epoch_loss = 0.0;
        for batch in batches(samples.len(), cfg.batch_size, &mut state.train_rng) {
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; head.len()];
            for &i in &batch {
                let raw = state.model.head().logits(&features[i]);
                let groups = state.classifier.groups();
                let (_, plan) = select_logits(&raw, groups, &task.class_ids, &none)?;
                let l = ic_loss(
                    &raw,
                    &plan,
                    None,
                    samples[i].class_id,
                    1.0,
                    DistillScope::All,
                )?;
                epoch_loss += l.loss / samples.len() as f64;
                for (g, h) in grad
                    .iter_mut()
                    .zip(head_gradient(dim, &features[i], &l.grad))
                {
                    *g += scale * h;
                }
            }
            adam.step(&mut head, &grad);
            state.model.set_head_flat(&head)?;
        }
        losses.push(epoch_loss);
    }
    Ok(losses)
}

/// Trains one task in place and returns its record.
pub fn train_task(
    state: &mut RunState,
    task: &TaskSpec,
    dataset: &Dataset,
    cfg: &TrainerConfig,
) -> Result<TaskResult> {
    let samples = dataset.task_samples(task, Split::Train)?;
    if samples.is_empty() {
        return Err(TrainerError::Config(format!(
            "task {} has no training samples",
            task.task_index
        )));
    }
    state.classifier.admit_new_classes(&mut state.model, task);

    let warmup_losses = warmup(state, task, &samples, cfg)?;
    let warmup_accs = online_accuracies(
        &state.model,
        state.classifier.groups(),
        &samples,
        &task.class_ids,
    )?;

    let decisions = if cfg.ic_enabled {
        decide_expansions(
            state.classifier.history(),
            state.classifier.groups(),
            task,
            &warmup_accs,
            cfg.threshold_mode(),
        )
    } else {
        Vec::new()
    };
    let expanded = state
        .classifier
        .apply_expansions(&mut state.model, task, &decisions);

    let a_prev = state.model.adapters().flatten();
    let teacher_logits: Vec<Option<Vec<f64>>> = match &state.teacher {
        Some(t) => samples
            .iter()
            .map(|s| t.logits(&s.features, Branch::Online).map(Some))
            .collect::<std::result::Result<_, _>>()?,
        None => vec![None; samples.len()],
    };

    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.joint_epochs();
    let milestones = cast::snapshot_milestones(total_steps, state.pool.shifts_per_task());
    let mut snapshots: Vec<Vec<f64>> = milestones
        .iter()
        .filter(|&&m| m == 0)
        .map(|_| a_prev.clone())
        .collect();

    let mut params = state.model.trainable_flat();
    let mut adam = Adam::new(params.len(), cfg.lr, cfg.adam_betas, cfg.adam_eps);
    let adapters_len = state.model.adapters().flat_len();
    let mut joint_losses = Vec::with_capacity(total_steps);
    let mut cast_losses = Vec::with_capacity(total_steps);
    let mut step = 0;
    for _ in 0..cfg.joint_epochs() {
        for batch in batches(samples.len(), cfg.batch_size, &mut state.train_rng) {
            let items: Vec<BatchItem> = batch
                .iter()
                .map(|&i| BatchItem {
                    x: &samples[i].features,
                    label: samples[i].class_id,
                    teacher: teacher_logits[i].as_deref(),
                })
                .collect();
            let plan = if cfg.cast_enabled {
                let v = cast::compute_shift(&params[..adapters_len], &a_prev)?;
                cast::cast_plan(&v, &state.pool)
            } else {
                None
            };
            let ctx = ObjectiveContext {
                groups: state.classifier.groups(),
                task_classes: &task.class_ids,
                expanded: &expanded,
                scope: cfg.scope(),
                alpha: cfg.alpha,
                beta: cfg.beta,
                pool: &state.pool,
                a_prev: &a_prev,
                cast_plan: plan.as_ref(),
            };
            let obj = total_objective(&state.model, &items, &ctx)?;
            joint_losses.push(obj.total);
            cast_losses.push(obj.cast);
            let mut grad = obj.grad.adapters;
            grad.extend(obj.grad.head);
            adam.step(&mut params, &grad);
            state.model.set_trainable_flat(&params)?;
            state.model.update_ema()?;
            step += 1;
            for _ in milestones.iter().filter(|&&m| m == step) {
                snapshots.push(params[..adapters_len].to_vec());
            }
        }
    }

    let final_accs = online_accuracies(
        &state.model,
        state.classifier.groups(),
        &samples,
        &task.class_ids,
    )?;
    classifier_ic::record_task_accuracies(state.classifier.history_mut(), task, &final_accs);
    state.teacher = Some(state.model.clone());
    let shift_norm = norm(&cast::compute_shift(&params[..adapters_len], &a_prev)?);
    cast::snapshot_task_shifts(
        &mut state.pool,
        task.task_index,
        &a_prev,
        &snapshots,
        &mut state.cluster_rng,
    )?;

    Ok(TaskResult {
        task_index: task.task_index,
        domain: task.domain.to_string(),
        class_ids: task.class_ids.clone(),
        warmup_accs,
        final_accs,
        expanded: expanded.into_iter().collect(),
        decisions,
        shift_norm,
        warmup_losses,
        joint_losses,
        cast_losses,
    })
}

/// Test accuracy over all test samples of `task` with the ensembled predictor.
pub fn evaluate_task(
    model: &Model,
    groups: &Groups,
    dataset: &Dataset,
    task: &TaskSpec,
) -> Result<f64> {
    let samples = dataset.task_samples(task, Split::Test)?;
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for s in &samples {
        let online = model.logits(&s.features, Branch::Online)?;
        let ema = model.logits(&s.features, Branch::Ema)?;
        if predict(&online, &ema, groups) == Some(s.class_id) {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassNodes {
    pub class_id: usize,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub scenario: ScenarioKind,
    pub num_tasks: usize,
    pub avg_acc: f64,
    pub forgetting: f64,
    pub total_nodes: usize,
    pub expansions: usize,
    pub nodes_per_class: Vec<ClassNodes>,
    pub pool_size: usize,
    pub pool_k: usize,
    pub cluster_sizes: Vec<usize>,
    pub degenerate_shifts: usize,
    pub shift_len: usize,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub matrix: EvalMatrix,
    pub tasks: Vec<TaskResult>,
    pub summary: RunSummary,
    pub state: RunState,
}

/// Trains every task of `stream` in order, evaluating all tasks seen so far
/// after each one. Model initialisation, batching and clustering draw from
/// streams derived from `seed`.
pub fn run_experiment(
    stream: &TaskStream,
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainerConfig,
    seed: u64,
) -> Result<Experiment> {
    cfg.validate()?;
    dataset.check_coverage(stream)?;
    let base = RngState::new(seed);
    let mut model_cfg = model_cfg.clone();
    model_cfg.ema_decay = cfg.ema_decay;
    let model = Model::new(model_cfg, &mut base.derive(streams::INIT))?;
    let mut state = RunState::new(
        model,
        cfg.clusters_for(stream.len()),
        cfg.shifts_per_task,
        &base,
    );
    let mut matrix = EvalMatrix::new();
    let mut tasks = Vec::with_capacity(stream.len());
    for (t, task) in stream.tasks.iter().enumerate() {
        tasks.push(train_task(&mut state, task, dataset, cfg)?);
        let row = stream.tasks[..=t]
            .iter()
            .map(|seen| evaluate_task(&state.model, state.classifier.groups(), dataset, seen))
            .collect::<Result<Vec<f64>>>()?;
        matrix.push_row(row)?;
    }
    let n = matrix.len();
    let (avg_acc, forgetting) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            metrics::average_accuracy(&matrix, n)?,
            metrics::forgetting(&matrix, n)?,
        )
    };
    let groups = state.classifier.groups();
    let mut cluster_sizes = vec![0; state.pool.centers().len()];
    for &a in state.pool.assignments() {
        cluster_sizes[a] += 1;
    }
    let summary = RunSummary {
        seed,
        scenario: stream.kind,
        num_tasks: n,
        avg_acc,
        forgetting,
        total_nodes: state.classifier.total_nodes(),
        expansions: tasks
            .iter()
            .flat_map(|t| &t.decisions)
            .filter(|d| d.kind == ExpansionKind::Expand)
            .count(),
        nodes_per_class: groups
            .values()
            .map(|g| ClassNodes {
                class_id: g.class_id,
                nodes: g.nodes.len(),
            })
            .collect(),
        pool_size: state.pool.len(),
        pool_k: state.pool.centers().len(),
        cluster_sizes,
        degenerate_shifts: state.pool.shifts().iter().filter(|s| s.degenerate).count(),
        shift_len: state.model.adapters().flat_len(),
    };
    Ok(Experiment {
        matrix,
        tasks,
        summary,
        state,
    })
}
