//! Synthetic multi-domain data and the four incremental task-stream layouts.
//!
//! A dataset is a grid of (class, domain) cells. A [`TaskStream`] orders
//! subsets of that grid into tasks:
//!
//! * CIL: one class group per task, all domains pooled.
//! * DIL: one domain per task, every class.
//! * VIL: one (class group, domain) cell per task, in a seeded random order.
//! * CDIL: class group `i` paired with domain `i`, so both change every task.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Matrix, RngState};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("unknown scenario kind '{0}' (expected cil, dil, vil or cdil)")]
    BadKind(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: expected {expected} features, found {got}")]
    DimMismatch {
        line: u64,
        expected: usize,
        got: usize,
    },
    #[error("no data for class {class_id} in domain {domain}")]
    MissingCell { class_id: usize, domain: TaskDomain },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

/// The domain a task draws from. CIL tasks pool every domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskDomain {
    Pooled,
    Single(usize),
}

impl fmt::Display for TaskDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskDomain::Pooled => write!(f, "all"),
            TaskDomain::Single(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub class_id: usize,
    pub domain_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCell {
    pub class_id: usize,
    pub domain_id: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Cells indexed by `(class, domain)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    dim: usize,
    num_classes: usize,
    num_domains: usize,
    cells: BTreeMap<(usize, usize), DatasetCell>,
}

impl Dataset {
    /// Class and domain counts are taken as one past the largest id present.
    pub fn from_cells(dim: usize, cells: Vec<DatasetCell>) -> Self {
        let num_classes = cells.iter().map(|c| c.class_id + 1).max().unwrap_or(0);
        let num_domains = cells.iter().map(|c| c.domain_id + 1).max().unwrap_or(0);
        let cells = cells
            .into_iter()
            .map(|c| ((c.class_id, c.domain_id), c))
            .collect();
        Self {
            dim,
            num_classes,
            num_domains,
            cells,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn cell(&self, class_id: usize, domain_id: usize) -> Option<&DatasetCell> {
        self.cells.get(&(class_id, domain_id))
    }

    pub fn cells(&self) -> impl Iterator<Item = &DatasetCell> {
        self.cells.values()
    }

    /// All samples of the task's cells for one split, in cell order.
    pub fn task_samples(&self, task: &TaskSpec, split: Split) -> Result<Vec<&Sample>> {
        let mut out = Vec::new();
        for &class_id in &task.class_ids {
            let cells: Vec<&DatasetCell> = match task.domain {
                TaskDomain::Single(d) => {
                    vec![self.cell(class_id, d).ok_or(ScenarioError::MissingCell {
                        class_id,
                        domain: task.domain,
                    })?]
                }
                TaskDomain::Pooled => {
                    let cs: Vec<_> = (0..self.num_domains)
                        .filter_map(|d| self.cell(class_id, d))
                        .collect();
                    if cs.is_empty() {
                        return Err(ScenarioError::MissingCell {
                            class_id,
                            domain: task.domain,
                        });
                    }
                    cs
                }
            };
            for c in cells {
                out.extend(match split {
                    Split::Train => c.train.iter(),
                    Split::Test => c.test.iter(),
                });
            }
        }
        Ok(out)
    }

    /// Every task must find data for every (class, domain) it names.
    pub fn check_coverage(&self, stream: &TaskStream) -> Result<()> {
        for t in &stream.tasks {
            self.task_samples(t, Split::Train)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub num_domains: usize,
    pub dim: usize,
    pub per_cell: usize,
    pub shift_strength: f64,
    pub noise_sigma: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            num_domains: 4,
            dim: 16,
            per_cell: 60,
            shift_strength: 0.6,
            noise_sigma: 0.5,
            test_fraction: 0.25,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ScenarioError::BadConfig(m.to_string()));
        if self.num_classes == 0 || self.num_domains == 0 || self.dim == 0 {
            return bad("num_classes, num_domains and dim must be positive");
        }
        if self.per_cell < 4 {
            return bad("per_cell must be at least 4");
        }
        if !(self.shift_strength >= 0.0 && self.shift_strength.is_finite()) {
            return bad("shift_strength must be a finite value >= 0");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be > 0");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    fn test_count(&self) -> usize {
        let n = (self.per_cell as f64 * self.test_fraction).round() as usize;
        n.clamp(1, self.per_cell - 1)
    }
}

/// Rotation by `strength · θ_k` in each plane spanned by consecutive columns
/// of the orthonormal basis `q`, written as `I + Q (B - I) Qᵀ` so that zero
/// strength yields the identity exactly.
fn interpolated_rotation(q: &Matrix, angles: &[f64], strength: f64) -> Matrix {
    let n = q.rows();
    let mut delta = Matrix::zeros(n, n);
    for (k, &theta) in angles.iter().enumerate() {
        let phi = strength * theta;
        let (s, c) = phi.sin_cos();
        let (i, j) = (2 * k, 2 * k + 1);
        delta.set(i, i, c - 1.0);
        delta.set(i, j, -s);
        delta.set(j, i, s);
        delta.set(j, j, c - 1.0);
    }
    let mut r = q.matmul(&delta).matmul(&q.transpose());
    for i in 0..n {
        r.set(i, i, r.get(i, i) + 1.0);
    }
    r
}

fn orthonormal_basis(dim: usize, rng: &mut RngState) -> Matrix {
    let g = DMatrix::from_row_slice(dim, dim, &rng.gaussian_vec(dim * dim, 1.0));
    let q = g.qr().q();
    let mut out = Matrix::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            out.set(r, c, q[(r, c)]);
        }
    }
    out
}

struct DomainTransform {
    rotation: Matrix,
    translation: Vec<f64>,
}

/// Gaussian class prototypes moved into each domain by a seeded rotation and
/// translation whose size is controlled by `shift_strength`.
///
/// Sample: `x = R_d (μ_c + ε) + t_d` with `ε ~ N(0, σ² I)`, `|t_d| = shift_strength · √dim`.
pub fn synth_dataset(cfg: &SynthConfig, rng: &mut RngState) -> Result<Vec<DatasetCell>> {
    cfg.validate()?;
    let dim = cfg.dim;
    let prototypes: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| rng.gaussian_vec(dim, 1.0))
        .collect();
    let transforms: Vec<DomainTransform> = (0..cfg.num_domains)
        .map(|_| {
            let q = orthonormal_basis(dim, rng);
            let angles: Vec<f64> = (0..dim / 2)
                .map(|_| rng.uniform_range(-std::f64::consts::PI, std::f64::consts::PI))
                .collect();
            let dir = rng.gaussian_vec(dim, 1.0);
            let n = crate::numerics::norm(&dir).max(f64::MIN_POSITIVE);
            let scale = cfg.shift_strength * (dim as f64).sqrt() / n;
            DomainTransform {
                rotation: interpolated_rotation(&q, &angles, cfg.shift_strength),
                translation: dir.iter().map(|x| x * scale).collect(),
            }
        })
        .collect();

    let n_test = cfg.test_count();
    let n_train = cfg.per_cell - n_test;
    let mut cells = Vec::with_capacity(cfg.num_classes * cfg.num_domains);
    for (class_id, mu) in prototypes.iter().enumerate() {
        for (domain_id, tf) in transforms.iter().enumerate() {
            let mut samples: Vec<Sample> = (0..cfg.per_cell)
                .map(|_| {
                    let noisy: Vec<f64> = mu
                        .iter()
                        .map(|m| m + cfg.noise_sigma * rng.normal())
                        .collect();
                    let features = tf
                        .rotation
                        .matvec(&noisy)
                        .into_iter()
                        .zip(&tf.translation)
                        .map(|(a, b)| a + b)
                        .collect();
                    Sample {
                        features,
                        class_id,
                        domain_id,
                    }
                })
                .collect();
            let test = samples.split_off(n_train);
            cells.push(DatasetCell {
                class_id,
                domain_id,
                train: samples,
                test,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Cil,
    Dil,
    Vil,
    Cdil,
}

impl FromStr for ScenarioKind {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cil" => Ok(Self::Cil),
            "dil" => Ok(Self::Dil),
            "vil" => Ok(Self::Vil),
            "cdil" => Ok(Self::Cdil),
            _ => Err(ScenarioError::BadKind(s.to_string())),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cil => "cil",
            Self::Dil => "dil",
            Self::Vil => "vil",
            Self::Cdil => "cdil",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_index: usize,
    pub domain: TaskDomain,
    /// Sorted, unique, non-empty.
    pub class_ids: Vec<usize>,
}

impl TaskSpec {
    pub fn new(task_index: usize, domain: TaskDomain, mut class_ids: Vec<usize>) -> Result<Self> {
        class_ids.sort_unstable();
        class_ids.dedup();
        if class_ids.is_empty() {
            return Err(ScenarioError::BadConfig("task without classes".into()));
        }
        Ok(Self {
            task_index,
            domain,
            class_ids,
        })
    }

    /// `(class, domain)` cells touched by this task.
    pub fn cells(&self, num_domains: usize) -> Vec<(usize, usize)> {
        let domains: Vec<usize> = match self.domain {
            TaskDomain::Single(d) => vec![d],
            TaskDomain::Pooled => (0..num_domains).collect(),
        };
        self.class_ids
            .iter()
            .flat_map(|&c| domains.iter().map(move |&d| (c, d)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub kind: ScenarioKind,
    pub tasks: Vec<TaskSpec>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Number of tasks `generate_stream` would produce, without building it.
pub fn stream_length(
    kind: ScenarioKind,
    num_classes: usize,
    num_domains: usize,
    classes_per_task: usize,
) -> Result<usize> {
    let groups = class_groups(num_classes, classes_per_task)?.len();
    Ok(match kind {
        ScenarioKind::Cil => groups,
        ScenarioKind::Dil => num_domains,
        ScenarioKind::Vil => groups * num_domains,
        ScenarioKind::Cdil => groups.min(num_domains),
    })
}

fn class_groups(num_classes: usize, classes_per_task: usize) -> Result<Vec<Vec<usize>>> {
    if num_classes == 0 || classes_per_task == 0 {
        return Err(ScenarioError::BadConfig(
            "num_classes and classes_per_task must be positive".into(),
        ));
    }
    if !num_classes.is_multiple_of(classes_per_task) {
        return Err(ScenarioError::BadConfig(format!(
            "classes_per_task {classes_per_task} does not divide num_classes {num_classes}"
        )));
    }
    Ok((0..num_classes / classes_per_task)
        .map(|g| (g * classes_per_task..(g + 1) * classes_per_task).collect())
        .collect())
}

pub fn generate_stream(
    kind: ScenarioKind,
    num_classes: usize,
    num_domains: usize,
    classes_per_task: usize,
    rng: &mut RngState,
) -> Result<TaskStream> {
    if num_domains == 0 {
        return Err(ScenarioError::BadConfig(
            "num_domains must be positive".into(),
        ));
    }
    let groups = class_groups(num_classes, classes_per_task)?;
    let all: Vec<usize> = (0..num_classes).collect();
    let layout: Vec<(TaskDomain, Vec<usize>)> = match kind {
        ScenarioKind::Cil => groups
            .into_iter()
            .map(|g| (TaskDomain::Pooled, g))
            .collect(),
        ScenarioKind::Dil => (0..num_domains)
            .map(|d| (TaskDomain::Single(d), all.clone()))
            .collect(),
        ScenarioKind::Vil => {
            let grid: Vec<(TaskDomain, Vec<usize>)> = groups
                .iter()
                .flat_map(|g| (0..num_domains).map(move |d| (TaskDomain::Single(d), g.clone())))
                .collect();
            rng.permutation(grid.len())
                .into_iter()
                .map(|i| grid[i].clone())
                .collect()
        }
        ScenarioKind::Cdil => groups
            .into_iter()
            .zip(0..num_domains)
            .map(|(g, d)| (TaskDomain::Single(d), g))
            .collect(),
    };
    let tasks = layout
        .into_iter()
        .enumerate()
        .map(|(i, (d, cls))| TaskSpec::new(i, d, cls))
        .collect::<Result<_>>()?;
    Ok(TaskStream { kind, tasks })
}

/// Rows `class_id,domain_id,split,f_0,...,f_{dim-1}`; a non-numeric first
/// line is treated as a header. Cells come back sorted by `(class, domain)`.
pub fn load_csv(path: impl AsRef<Path>, dim: usize) -> Result<Vec<DatasetCell>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => ScenarioError::Io(io),
            other => ScenarioError::Parse {
                line: 0,
                message: format!("{other:?}"),
            },
        })?;
    let mut cells: BTreeMap<(usize, usize), DatasetCell> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = reader
            .read_record(&mut record)
            .map_err(|e| ScenarioError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        let is_first = std::mem::replace(&mut first, false);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parse_id = |i: usize, what: &str| -> Result<usize> {
            record
                .get(i)
                .ok_or_else(|| ScenarioError::Parse {
                    line,
                    message: format!("missing {what}"),
                })?
                .parse::<usize>()
                .map_err(|e| ScenarioError::Parse {
                    line,
                    message: format!("bad {what}: {e}"),
                })
        };
        if is_first && record.get(0).is_some_and(|f| f.parse::<usize>().is_err()) {
            continue;
        }
        let class_id = parse_id(0, "class_id")?;
        let domain_id = parse_id(1, "domain_id")?;
        let split = match record.get(2) {
            Some("train") => Split::Train,
            Some("test") => Split::Test,
            other => {
                return Err(ScenarioError::Parse {
                    line,
                    message: format!("split must be 'train' or 'test', found {other:?}"),
                })
            }
        };
        let got = record.len().saturating_sub(3);
        if got != dim {
            return Err(ScenarioError::DimMismatch {
                line,
                expected: dim,
                got,
            });
        }
        let features = record
            .iter()
            .skip(3)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| ScenarioError::Parse {
                        line,
                        message: format!("bad feature value '{f}'"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        let cell = cells
            .entry((class_id, domain_id))
            .or_insert_with(|| DatasetCell {
                class_id,
                domain_id,
                train: Vec::new(),
                test: Vec::new(),
            });
        let sample = Sample {
            features,
            class_id,
            domain_id,
        };
        match split {
            Split::Train => cell.train.push(sample),
            Split::Test => cell.test.push(sample),
        }
    }
    Ok(cells.into_values().collect())
}

/// Set of `(class, domain)` cells a stream visits, with multiplicity collapsed.
pub fn stream_coverage(stream: &TaskStream, num_domains: usize) -> BTreeSet<(usize, usize)> {
    stream
        .tasks
        .iter()
        .flat_map(|t| t.cells(num_domains))
        .collect()
}
