//! `run`, `ablation` and `validate`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use icon_core::cast::ShiftPool;
use icon_core::numerics::RngState;
use icon_core::scenario::{
    generate_stream, load_csv, synth_dataset, Dataset, ScenarioError, ScenarioKind,
};
use icon_core::trainer::{
    run_experiment, streams, Experiment, RunSummary, TaskResult, TrainerError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, DataSource, RunConfig};

pub const WORKERS_ENV: &str = "ICON_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Run(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Run(_) | CliError::Io { .. } => 1,
        }
    }
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::Data(d) => CliError::Data(d.to_string()),
            TrainerError::Config(m) => CliError::Config(ConfigError::new("trainer", m)),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    NoCast,
    NoIc,
    NoDt,
}

impl Ablation {
    pub fn parse_list(list: &str) -> Result<Vec<Ablation>, ConfigError> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| match s {
                "no-cast" => Ok(Ablation::NoCast),
                "no-ic" => Ok(Ablation::NoIc),
                "no-dt" => Ok(Ablation::NoDt),
                other => Err(ConfigError::new(
                    "--ablate",
                    format!("unknown ablation {other:?} (expected no-cast, no-ic, no-dt)"),
                )),
            })
            .collect()
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub ablate: Vec<Ablation>,
    pub scenario: Option<ScenarioKind>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(s) = self.seed {
            cfg.run.seeds = vec![s];
        }
        if let Some(out) = &self.out {
            cfg.run.out_dir = out.clone();
        }
        if let Some(kind) = self.scenario {
            cfg.scenario.kind = kind;
        }
        for a in &self.ablate {
            match a {
                Ablation::NoCast => cfg.trainer.cast_enabled = false,
                Ablation::NoIc => cfg.trainer.ic_enabled = false,
                Ablation::NoDt => cfg.trainer.dynamic_threshold_enabled = false,
            }
        }
        cfg.validate()
    }
}

pub fn load_config(source: &str, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(source)?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let cells = match cfg.dataset.source {
        DataSource::Synth => {
            synth_dataset(&cfg.synth_config(), &mut RngState::new(cfg.scenario.seed))?
        }
        DataSource::Csv => {
            let path = cfg.dataset.csv_path.as_ref().expect("validated");
            load_csv(path, cfg.dataset.feature_dim)?
        }
    };
    Ok(Dataset::from_cells(cfg.dataset.feature_dim, cells))
}

/// Runs one seed end to end.
pub fn run_seed(cfg: &RunConfig, dataset: &Dataset, seed: u64) -> Result<Experiment, CliError> {
    let stream = generate_stream(
        cfg.scenario.kind,
        cfg.dataset.num_classes,
        cfg.dataset.num_domains,
        cfg.scenario.classes_per_task,
        &mut RngState::new(seed).derive(streams::ORDER),
    )?;
    Ok(run_experiment(
        &stream,
        dataset,
        &cfg.model_config(),
        &cfg.trainer_config(),
        seed,
    )?)
}

fn worker_pool() -> rayon::ThreadPool {
    let n = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .expect("thread pool")
}

/// Runs every configured seed, in parallel when `ICON_WORKERS` > 1.
/// Results come back in seed order.
pub fn run_all_seeds(cfg: &RunConfig, dataset: &Dataset) -> Result<Vec<Experiment>, CliError> {
    worker_pool().install(|| {
        cfg.run
            .seeds
            .par_iter()
            .map(|&s| run_seed(cfg, dataset, s))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub config: RunConfig,
    pub summary: RunSummary,
    pub tasks: Vec<TaskResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub avg_acc: f64,
    pub forgetting: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: Vec<SeedMetrics>,
    pub avg_acc_mean: f64,
    pub avg_acc_std: f64,
    pub forgetting_mean: f64,
    pub forgetting_std: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Aggregate {
    pub fn from_summaries<'a>(summaries: impl IntoIterator<Item = &'a RunSummary>) -> Self {
        let seeds: Vec<SeedMetrics> = summaries
            .into_iter()
            .map(|s| SeedMetrics {
                seed: s.seed,
                avg_acc: s.avg_acc,
                forgetting: s.forgetting,
            })
            .collect();
        let acc: Vec<f64> = seeds.iter().map(|s| s.avg_acc).collect();
        let fgt: Vec<f64> = seeds.iter().map(|s| s.forgetting).collect();
        let (avg_acc_mean, avg_acc_std) = mean_std(&acc);
        let (forgetting_mean, forgetting_std) = mean_std(&fgt);
        Self {
            seeds,
            avg_acc_mean,
            avg_acc_std,
            forgetting_mean,
            forgetting_std,
        }
    }
}

/// One row per classifier node.
pub fn node_report(exp: &Experiment) -> String {
    let ic = &exp.state.classifier;
    let mut out = String::from("class_id,node_count,node_id,created_task,created_domain,deltas\n");
    for g in ic.groups().values() {
        let deltas: Vec<String> = ic
            .log()
            .iter()
            .filter(|r| r.class_id == g.class_id)
            .filter_map(|r| r.delta.map(|d| format!("{d}")))
            .collect();
        for n in &g.nodes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                g.class_id,
                g.nodes.len(),
                n.node_id,
                n.created_task,
                n.created_domain,
                deltas.join(";")
            );
        }
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftEntry {
    pub task_id: usize,
    pub snapshot_idx: usize,
    pub assignment: Option<usize>,
    pub norm: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftPoolDump {
    pub k_configured: usize,
    pub k_effective: usize,
    pub shifts_per_task: usize,
    pub centers: Vec<Vec<f64>>,
    pub shifts: Vec<ShiftEntry>,
}

impl ShiftPoolDump {
    pub fn new(pool: &ShiftPool) -> Self {
        Self {
            k_configured: pool.k_configured(),
            k_effective: pool.k_effective(),
            shifts_per_task: pool.shifts_per_task(),
            centers: pool.centers().to_vec(),
            shifts: pool
                .shifts()
                .iter()
                .enumerate()
                .map(|(i, s)| ShiftEntry {
                    task_id: s.task_id,
                    snapshot_idx: s.snapshot_idx,
                    assignment: pool.assignments().get(i).copied(),
                    norm: s.norm(),
                    values: s.values.clone(),
                })
                .collect(),
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Writes `seed_<s>/` under `out_dir` and returns that directory.
pub fn write_seed_outputs(
    cfg: &RunConfig,
    exp: &Experiment,
    out_dir: &Path,
) -> Result<PathBuf, CliError> {
    let dir = out_dir.join(format!("seed_{}", exp.summary.seed));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let doc = SummaryDocument {
        config: cfg.clone(),
        summary: exp.summary.clone(),
        tasks: exp.tasks.clone(),
    };
    write(&dir.join("summary.json"), &to_json(&doc))?;
    write(&dir.join("acc_matrix.csv"), &exp.matrix.to_csv())?;
    if cfg.run.emit_node_report {
        write(&dir.join("node_report.csv"), &node_report(exp))?;
    }
    if cfg.run.emit_shift_pool {
        write(
            &dir.join("shift_pool.json"),
            &to_json(&ShiftPoolDump::new(&exp.state.pool)),
        )?;
    }
    Ok(dir)
}

pub fn cmd_run(cfg: &RunConfig) -> Result<Aggregate, CliError> {
    let dataset = build_dataset(cfg)?;
    let out_dir = &cfg.run.out_dir;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let runs = run_all_seeds(cfg, &dataset)?;
    for exp in &runs {
        write_seed_outputs(cfg, exp, out_dir)?;
    }
    let agg = Aggregate::from_summaries(runs.iter().map(|e| &e.summary));
    write(&out_dir.join("aggregate.json"), &to_json(&agg))?;
    Ok(agg)
}

/// `(label, cast, ic, dynamic threshold)` for each ablation row.
pub const ABLATION_GRID: [(&str, bool, bool, bool); 5] = [
    ("baseline", false, false, true),
    ("cast_only", true, false, true),
    ("ic_only", false, true, true),
    ("full", true, true, true),
    ("full_no_dt", true, true, false),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub avg_acc_mean: f64,
    pub avg_acc_std: f64,
    pub forgetting_mean: f64,
    pub forgetting_std: f64,
    pub mean_nodes: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("config,avg_acc_mean,avg_acc_std,forgetting_mean,forgetting_std\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.config, r.avg_acc_mean, r.avg_acc_std, r.forgetting_mean, r.forgetting_std
        );
    }
    out
}

/// Runs the five-row grid over the configured seeds and writes
/// `ablation.csv` plus per-row aggregates.
pub fn cmd_ablation(cfg: &RunConfig) -> Result<Vec<AblationRow>, CliError> {
    let dataset = build_dataset(cfg)?;
    let out_dir = &cfg.run.out_dir;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut rows = Vec::with_capacity(ABLATION_GRID.len());
    for (label, cast, ic, dt) in ABLATION_GRID {
        let mut variant = cfg.clone();
        variant.trainer.cast_enabled = cast;
        variant.trainer.ic_enabled = ic;
        variant.trainer.dynamic_threshold_enabled = dt;
        let runs = run_all_seeds(&variant, &dataset)?;
        let agg = Aggregate::from_summaries(runs.iter().map(|e| &e.summary));
        let dir = out_dir.join(label);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write(&dir.join("aggregate.json"), &to_json(&agg))?;
        rows.push(AblationRow {
            config: label.to_string(),
            avg_acc_mean: agg.avg_acc_mean,
            avg_acc_std: agg.avg_acc_std,
            forgetting_mean: agg.forgetting_mean,
            forgetting_std: agg.forgetting_std,
            mean_nodes: runs
                .iter()
                .map(|e| e.summary.total_nodes as f64)
                .sum::<f64>()
                / runs.len() as f64,
        });
    }
    write(&out_dir.join("ablation.csv"), &ablation_csv(&rows))?;
    Ok(rows)
}

/// Resolved config followed by derived quantities.
pub fn cmd_validate(cfg: &RunConfig) -> String {
    let mut out = cfg.to_toml();
    let classes = cfg.dataset.num_classes;
    let domains = match cfg.scenario.kind {
        ScenarioKind::Cil => 1,
        _ => cfg.dataset.num_domains,
    };
    let _ = writeln!(out, "\n# derived");
    let _ = writeln!(out, "tasks: {}", cfg.task_count());
    let _ = writeln!(out, "node_upper_bound: {}", classes * domains);
    let _ = writeln!(
        out,
        "shift_length: {}",
        cfg.model_config().adapter_param_len()
    );
    out
}
