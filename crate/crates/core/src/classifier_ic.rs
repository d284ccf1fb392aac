//! Incremental classifier: per-class node groups over the head rows,
//! threshold-gated expansion, max-logit node selection and its loss.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ensemble_class_logits, Model};
use crate::numerics::{kl_divergence, softmax_cross_entropy};
use crate::scenario::{TaskDomain, TaskSpec};

pub const DEFAULT_GAMMA: f64 = 2.0;
pub const CONSTANT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum IcError {
    #[error("no accuracy history")]
    EmptyHistory,
    #[error("history mean is zero")]
    ZeroHistoryMean,
    #[error("class {0} has no node group")]
    MissingGroup(usize),
    #[error("label {0} is not a current-task class")]
    BadLabel(usize),
    #[error("logit vector has {got} entries, expected at least {expected}")]
    ShortLogits { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, IcError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Head-row index.
    pub node_id: usize,
    pub created_task: usize,
    pub created_domain: TaskDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeGroup {
    pub class_id: usize,
    /// Oldest first.
    pub nodes: Vec<Node>,
}

impl NodeGroup {
    pub fn node_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().map(|n| n.node_id)
    }
}

pub type Groups = BTreeMap<usize, NodeGroup>;

/// Per-(class, domain) accuracy at the end of the latest task that trained it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccuracyHistory {
    entries: BTreeMap<(usize, TaskDomain), f64>,
}

impl AccuracyHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, class_id: usize, domain: TaskDomain, acc: f64) {
        self.entries.insert((class_id, domain), acc.clamp(0.0, 1.0));
    }

    pub fn get(&self, class_id: usize, domain: TaskDomain) -> Option<f64> {
        self.entries.get(&(class_id, domain)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Accuracies of `class_id` in every domain except `domain`.
    pub fn other_domains(&self, class_id: usize, domain: TaskDomain) -> Vec<f64> {
        self.entries
            .range((class_id, TaskDomain::Pooled)..)
            .take_while(|((c, _), _)| *c == class_id)
            .filter(|((_, d), _)| *d != domain)
            .map(|(_, &a)| a)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, TaskDomain, f64)> + '_ {
        self.entries.iter().map(|(&(c, d), &a)| (c, d, a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub p: f64,
    pub delta: f64,
}

/// `p = γ (mean − acc_new) / mean`, `δ = tanh(p)`.
pub fn compute_threshold(prev_accs: &[f64], acc_new: f64, gamma: f64) -> Result<Threshold> {
    if prev_accs.is_empty() {
        return Err(IcError::EmptyHistory);
    }
    let mean = prev_accs.iter().sum::<f64>() / prev_accs.len() as f64;
    if mean <= 0.0 {
        return Err(IcError::ZeroHistoryMean);
    }
    let p = gamma * (mean - acc_new) / mean;
    Ok(Threshold { p, delta: p.tanh() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdMode {
    Dynamic { gamma: f64 },
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionKind {
    /// First appearance: exactly one fresh node.
    NewClass,
    Expand,
    Keep,
    /// Seen before, but nothing usable to compare against.
    NoHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionDecision {
    pub class_id: usize,
    pub kind: ExpansionKind,
    pub warmup_acc: Option<f64>,
    /// Relative accuracy drop; dynamic mode only.
    pub p: Option<f64>,
    /// Value the warmup accuracy was compared against.
    pub delta: Option<f64>,
}

/// A class counts as new if it has no group yet or its only nodes were
/// created by this very task.
pub fn decide_expansions(
    history: &AccuracyHistory,
    groups: &Groups,
    task: &TaskSpec,
    warmup_accs: &BTreeMap<usize, f64>,
    mode: ThresholdMode,
) -> Vec<ExpansionDecision> {
    task.class_ids
        .iter()
        .map(|&class_id| {
            let is_new = groups
                .get(&class_id)
                .is_none_or(|g| g.nodes.iter().all(|n| n.created_task == task.task_index));
            let warmup_acc = warmup_accs.get(&class_id).copied();
            let mut decision = ExpansionDecision {
                class_id,
                kind: ExpansionKind::NewClass,
                warmup_acc,
                p: None,
                delta: None,
            };
            if is_new {
                return decision;
            }
            let prev = history.other_domains(class_id, task.domain);
            let acc = match (prev.is_empty(), warmup_acc) {
                (false, Some(acc)) => acc,
                _ => {
                    decision.kind = ExpansionKind::NoHistory;
                    return decision;
                }
            };
            let limit = match mode {
                ThresholdMode::Dynamic { gamma } => match compute_threshold(&prev, acc, gamma) {
                    Ok(t) => {
                        decision.p = Some(t.p);
                        decision.delta = Some(t.delta);
                        t.delta
                    }
                    Err(_) => {
                        decision.kind = ExpansionKind::NoHistory;
                        return decision;
                    }
                },
                ThresholdMode::Constant(c) => {
                    decision.delta = Some(c);
                    c
                }
            };
            decision.kind = if acc < limit {
                ExpansionKind::Expand
            } else {
                ExpansionKind::Keep
            };
            decision
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSelection {
    pub class_id: usize,
    pub chosen: usize,
    pub frozen: Vec<usize>,
    pub expanded: bool,
}

/// One entry per current-task class, in ascending class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub entries: Vec<ClassSelection>,
}

impl SelectionPlan {
    pub fn position(&self, class_id: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.class_id == class_id)
    }

    pub fn chosen(&self) -> BTreeSet<usize> {
        self.entries.iter().map(|e| e.chosen).collect()
    }
}

fn check_len(raw: &[f64], groups: &Groups) -> Result<()> {
    let needed = groups
        .values()
        .flat_map(|g| g.node_ids())
        .max()
        .map_or(0, |m| m + 1);
    if raw.len() < needed {
        return Err(IcError::ShortLogits {
            expected: needed,
            got: raw.len(),
        });
    }
    Ok(())
}

/// Picks one node per current-task class. Classes expanded by this task use
/// their newest node and freeze the rest; others use their max-logit node
/// (ties → oldest).
pub fn select_logits(
    raw: &[f64],
    groups: &Groups,
    task_classes: &[usize],
    expanded: &BTreeSet<usize>,
) -> Result<(Vec<f64>, SelectionPlan)> {
    check_len(raw, groups)?;
    let mut classes: Vec<usize> = task_classes.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut logits = Vec::with_capacity(classes.len());
    let mut entries = Vec::with_capacity(classes.len());
    for class_id in classes {
        let group = groups
            .get(&class_id)
            .ok_or(IcError::MissingGroup(class_id))?;
        let ids: Vec<usize> = group.node_ids().collect();
        let is_expanded = expanded.contains(&class_id) && ids.len() > 1;
        let chosen = if is_expanded {
            *ids.last().expect("group is non-empty")
        } else {
            ids.iter().copied().fold(
                ids[0],
                |best, id| {
                    if raw[id] > raw[best] {
                        id
                    } else {
                        best
                    }
                },
            )
        };
        let frozen = if is_expanded {
            ids.iter().copied().filter(|&id| id != chosen).collect()
        } else {
            Vec::new()
        };
        logits.push(raw[chosen]);
        entries.push(ClassSelection {
            class_id,
            chosen,
            frozen,
            expanded: is_expanded,
        });
    }
    Ok((logits, SelectionPlan { entries }))
}

/// Which teacher nodes the distillation term covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistillScope {
    /// Teacher nodes not chosen by the selection plan.
    Unselected,
    /// Every teacher node.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcLoss {
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    /// Gradient over all raw logits.
    pub grad: Vec<f64>,
}

/// Cross-entropy over the plan's chosen logits plus `alpha` times
/// `KL(teacher ‖ current)` on the distillation set.
pub fn ic_loss(
    raw: &[f64],
    plan: &SelectionPlan,
    teacher: Option<&[f64]>,
    label_class: usize,
    alpha: f64,
    scope: DistillScope,
) -> Result<IcLoss> {
    let label = plan
        .position(label_class)
        .ok_or(IcError::BadLabel(label_class))?;
    let class_logits: Vec<f64> = plan.entries.iter().map(|e| raw[e.chosen]).collect();
    let (ce, g_ce) =
        softmax_cross_entropy(&class_logits, label).map_err(|_| IcError::BadLabel(label_class))?;
    let mut grad = vec![0.0; raw.len()];
    for (e, g) in plan.entries.iter().zip(g_ce) {
        grad[e.chosen] += g;
    }
    let mut kl = 0.0;
    if let Some(teacher) = teacher {
        if teacher.len() > raw.len() {
            return Err(IcError::ShortLogits {
                expected: teacher.len(),
                got: raw.len(),
            });
        }
        let chosen = plan.chosen();
        let set: Vec<usize> = (0..teacher.len())
            .filter(|i| scope == DistillScope::All || !chosen.contains(i))
            .collect();
        if !set.is_empty() {
            let t: Vec<f64> = set.iter().map(|&i| teacher[i]).collect();
            let s: Vec<f64> = set.iter().map(|&i| raw[i]).collect();
            let (l, g) = kl_divergence(&t, &s).expect("equal lengths");
            kl = l;
            for (&i, gi) in set.iter().zip(g) {
                grad[i] += alpha * gi;
            }
        }
    }
    Ok(IcLoss {
        loss: ce + alpha * kl,
        ce,
        kl,
        grad,
    })
}

/// Group maximum per seen class, ascending class order.
pub fn group_logits(raw: &[f64], groups: &Groups) -> Vec<(usize, f64)> {
    groups
        .values()
        .map(|g| {
            let best = g
                .node_ids()
                .map(|id| raw[id])
                .fold(f64::NEG_INFINITY, f64::max);
            (g.class_id, best)
        })
        .collect()
}

fn argmax_class(scores: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (c, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best.map(|(c, _)| c)
}

/// Argmax over group maxima of a single logit vector.
pub fn predict_single(raw: &[f64], groups: &Groups) -> Option<usize> {
    argmax_class(group_logits(raw, groups).into_iter())
}

/// Group maxima of both branches, elementwise max, then argmax (ties →
/// lowest class id). `None` before any class is seen.
pub fn predict(online: &[f64], ema: &[f64], groups: &Groups) -> Option<usize> {
    let on = group_logits(online, groups);
    let em = group_logits(ema, groups);
    let a: Vec<f64> = on.iter().map(|&(_, v)| v).collect();
    let b: Vec<f64> = em.iter().map(|&(_, v)| v).collect();
    let merged = ensemble_class_logits(&a, &b).expect("same group layout");
    argmax_class(on.iter().map(|&(c, _)| c).zip(merged))
}

pub fn record_task_accuracies(
    history: &mut AccuracyHistory,
    task: &TaskSpec,
    accs: &BTreeMap<usize, f64>,
) {
    for (&class_id, &acc) in accs {
        history.record(class_id, task.domain, acc);
    }
}

/// One threshold evaluation, kept for the node report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub task_index: usize,
    pub class_id: usize,
    pub domain: TaskDomain,
    pub warmup_acc: Option<f64>,
    pub delta: Option<f64>,
    pub expanded: bool,
}

/// Node groups, accuracy history and the threshold log for one run.
#[derive(Debug, Clone, Default)]
pub struct IncrementalClassifier {
    groups: Groups,
    history: AccuracyHistory,
    log: Vec<ThresholdRecord>,
}

impl IncrementalClassifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn groups(&self) -> &Groups {
        &self.groups
    }

    pub fn history(&self) -> &AccuracyHistory {
        &self.history
    }

    pub fn history_mut(&mut self) -> &mut AccuracyHistory {
        &mut self.history
    }

    pub fn log(&self) -> &[ThresholdRecord] {
        &self.log
    }

    pub fn total_nodes(&self) -> usize {
        self.groups.values().map(|g| g.nodes.len()).sum()
    }

    fn add_node(&mut self, model: &mut Model, class_id: usize, task: &TaskSpec) -> usize {
        let node_id = model.add_head_row();
        self.groups
            .entry(class_id)
            .or_insert_with(|| NodeGroup {
                class_id,
                nodes: Vec::new(),
            })
            .nodes
            .push(Node {
                node_id,
                created_task: task.task_index,
                created_domain: task.domain,
            });
        node_id
    }

    /// Gives every unseen class of `task` its first node. Returns those classes.
    pub fn admit_new_classes(&mut self, model: &mut Model, task: &TaskSpec) -> Vec<usize> {
        let fresh: Vec<usize> = task
            .class_ids
            .iter()
            .copied()
            .filter(|c| !self.groups.contains_key(c))
            .collect();
        for &c in &fresh {
            self.add_node(model, c, task);
        }
        fresh
    }

    /// Adds one node per `Expand` decision and logs every thresholded class.
    pub fn apply_expansions(
        &mut self,
        model: &mut Model,
        task: &TaskSpec,
        decisions: &[ExpansionDecision],
    ) -> BTreeSet<usize> {
        let mut expanded = BTreeSet::new();
        for d in decisions {
            match d.kind {
                ExpansionKind::NewClass => {
                    if !self.groups.contains_key(&d.class_id) {
                        self.add_node(model, d.class_id, task);
                    }
                    continue;
                }
                ExpansionKind::Expand => {
                    self.add_node(model, d.class_id, task);
                    expanded.insert(d.class_id);
                }
                ExpansionKind::Keep | ExpansionKind::NoHistory => {}
            }
            self.log.push(ThresholdRecord {
                task_index: task.task_index,
                class_id: d.class_id,
                domain: task.domain,
                warmup_acc: d.warmup_acc,
                delta: d.delta,
                expanded: d.kind == ExpansionKind::Expand,
            });
        }
        expanded
    }
}
