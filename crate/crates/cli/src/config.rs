//! TOML run configuration, validation and built-in presets.

use std::fmt;
use std::path::{Path, PathBuf};

use icon_core::model::ModelConfig;
use icon_core::scenario::{stream_length, ScenarioKind, SynthConfig};
use icon_core::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};

const PRESETS: &[(&str, &str)] = &[
    ("quick", include_str!("../configs/quick.toml")),
    ("vil_small", include_str!("../configs/vil_small.toml")),
    ("cil_small", include_str!("../configs/cil_small.toml")),
];

/// A configuration problem, tagged with the offending field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synth,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DataSource,
    pub num_classes: usize,
    pub num_domains: usize,
    pub feature_dim: usize,
    pub per_cell: usize,
    pub shift_strength: f64,
    pub noise_sigma: f64,
    pub test_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            source: DataSource::Synth,
            num_classes: s.num_classes,
            num_domains: s.num_domains,
            feature_dim: s.dim,
            per_cell: s.per_cell,
            shift_strength: s.shift_strength,
            noise_sigma: s.noise_sigma,
            test_fraction: s.test_fraction,
            csv_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backbone_layers: usize,
    pub hidden_dim: usize,
    /// Adapters go on the first `adapter_layer_count` layers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adapter_layer_count: Option<usize>,
    pub adapter_rank: usize,
    pub ema_decay: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            backbone_layers: 3,
            hidden_dim: 32,
            adapter_layer_count: None,
            adapter_rank: 5,
            ema_decay: TrainerConfig::default().ema_decay,
        }
    }
}

/// Trainer settings; the EMA decay lives in the model section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub epochs_total: usize,
    pub warmup_epochs: usize,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_clusters: Option<usize>,
    pub shifts_per_task: usize,
    pub const_threshold: f64,
    pub cast_enabled: bool,
    pub ic_enabled: bool,
    pub dynamic_threshold_enabled: bool,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            epochs_total: t.epochs_total,
            warmup_epochs: t.warmup_epochs,
            lr: t.lr,
            adam_betas: t.adam_betas,
            adam_eps: t.adam_eps,
            batch_size: t.batch_size,
            alpha: t.alpha,
            beta: t.beta,
            gamma: t.gamma,
            k_clusters: t.k_clusters,
            shifts_per_task: t.shifts_per_task,
            const_threshold: t.const_threshold,
            cast_enabled: t.cast_enabled,
            ic_enabled: t.ic_enabled,
            dynamic_threshold_enabled: t.dynamic_threshold_enabled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    pub classes_per_task: usize,
    /// Seeds synthetic data generation.
    pub seed: u64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Vil,
            classes_per_task: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// One run per seed; each drives stream order, init, batching and clustering.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub emit_shift_pool: bool,
    pub emit_node_report: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            out_dir: PathBuf::from("out"),
            emit_shift_pool: true,
            emit_node_report: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub trainer: TrainerSection,
    pub scenario: ScenarioSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de =
            toml::de::Deserializer::parse(text).map_err(|e| ConfigError::new("", e.message()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            ConfigError::new(path, e.into_inner().message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `source` as a file path, or as a preset name if no such file exists.
    pub fn load(source: &str) -> Result<Self, ConfigError> {
        let path = Path::new(source);
        if path.is_file() {
            let text =
                std::fs::read_to_string(path).map_err(|e| ConfigError::new("--config", e))?;
            return Self::parse(&text);
        }
        let name = source.strip_suffix(".toml").unwrap_or(source);
        match PRESETS.iter().find(|(n, _)| *n == name) {
            Some((_, text)) => Self::parse(text),
            None => Err(ConfigError::new(
                "--config",
                format!("no file or preset named {source:?}"),
            )),
        }
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dataset;
        if d.source == DataSource::Csv && d.csv_path.is_none() {
            return Err(ConfigError::new(
                "dataset.csv_path",
                "required when source = \"csv\"",
            ));
        }
        if d.source == DataSource::Synth {
            self.synth_config()
                .validate()
                .map_err(|e| ConfigError::new("dataset", e))?;
        } else if d.feature_dim == 0 || d.num_classes == 0 || d.num_domains == 0 {
            return Err(ConfigError::new(
                "dataset",
                "feature_dim, num_classes and num_domains must be positive",
            ));
        }
        if let Some(n) = self.model.adapter_layer_count {
            if n == 0 || n > self.model.backbone_layers {
                return Err(ConfigError::new(
                    "model.adapter_layer_count",
                    "must lie in 1..=backbone_layers",
                ));
            }
        }
        self.model_config()
            .validate()
            .map_err(|e| ConfigError::new("model", e))?;
        self.trainer_config()
            .validate()
            .map_err(|e| ConfigError::new("trainer", e))?;
        stream_length(
            self.scenario.kind,
            d.num_classes,
            d.num_domains,
            self.scenario.classes_per_task,
        )
        .map_err(|e| ConfigError::new("scenario.classes_per_task", e))?;
        if self.run.seeds.is_empty() {
            return Err(ConfigError::new(
                "run.seeds",
                "at least one seed is required",
            ));
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        let d = &self.dataset;
        SynthConfig {
            num_classes: d.num_classes,
            num_domains: d.num_domains,
            dim: d.feature_dim,
            per_cell: d.per_cell,
            shift_strength: d.shift_strength,
            noise_sigma: d.noise_sigma,
            test_fraction: d.test_fraction,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        let mut cfg = ModelConfig::new(
            self.dataset.feature_dim,
            m.hidden_dim,
            m.backbone_layers,
            m.adapter_rank,
        );
        if let Some(n) = m.adapter_layer_count {
            cfg.adapter_layers = (0..n).collect();
        }
        cfg.ema_decay = m.ema_decay;
        cfg
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        let t = &self.trainer;
        TrainerConfig {
            epochs_total: t.epochs_total,
            warmup_epochs: t.warmup_epochs,
            lr: t.lr,
            adam_betas: t.adam_betas,
            adam_eps: t.adam_eps,
            batch_size: t.batch_size,
            alpha: t.alpha,
            beta: t.beta,
            gamma: t.gamma,
            k_clusters: t.k_clusters,
            ema_decay: self.model.ema_decay,
            shifts_per_task: t.shifts_per_task,
            const_threshold: t.const_threshold,
            cast_enabled: t.cast_enabled,
            ic_enabled: t.ic_enabled,
            dynamic_threshold_enabled: t.dynamic_threshold_enabled,
        }
    }

    pub fn task_count(&self) -> usize {
        stream_length(
            self.scenario.kind,
            self.dataset.num_classes,
            self.dataset.num_domains,
            self.scenario.classes_per_task,
        )
        .expect("validated")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_uses_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.trainer_config(), TrainerConfig::default());
    }

    #[test]
    fn presets_parse() {
        for name in RunConfig::preset_names() {
            RunConfig::load(name).unwrap();
        }
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::parse("[scenario]\nkind = \"vlil\"\n").unwrap_err();
        assert_eq!(e.path, "scenario.kind");
        let e = RunConfig::parse("[trainer]\nlearning_rate = 0.1\n").unwrap_err();
        assert_eq!(e.path, "trainer.learning_rate");
        assert!(e.message.contains("learning_rate"));
        let e = RunConfig::parse("[trainer]\nwarmup_epochs = 9\n").unwrap_err();
        assert_eq!(e.path, "trainer");
        let e = RunConfig::parse("[scenario]\nclasses_per_task = 3\n").unwrap_err();
        assert_eq!(e.path, "scenario.classes_per_task");
        let e = RunConfig::parse("[dataset]\nsource = \"csv\"\n").unwrap_err();
        assert_eq!(e.path, "dataset.csv_path");
        let e = RunConfig::parse("[run]\nseeds = []\n").unwrap_err();
        assert_eq!(e.path, "run.seeds");
        let e = RunConfig::parse("[model]\nadapter_layer_count = 7\n").unwrap_err();
        assert_eq!(e.path, "model.adapter_layer_count");
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::load("vil_small").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn derived_quantities() {
        let cfg = RunConfig::parse(
            "[dataset]\nfeature_dim = 16\n[model]\nhidden_dim = 16\nadapter_rank = 5\nbackbone_layers = 6\nadapter_layer_count = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.task_count(), 20);
        assert_eq!(cfg.model_config().adapter_param_len(), 483);
    }
}
