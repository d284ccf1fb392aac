//! Frozen dense backbone with parallel bottleneck adapters and a growable
//! linear head.
//!
//! Layer rule on an adapted layer `l`:
//!
//! ```text
//! h_{l+1} = ReLU(W_l h_l + b_l + s_l · U_l ReLU(D_l h_l))
//! ```
//!
//! and `ReLU(W_l h_l + b_l)` elsewhere. Only adapters and head rows carry
//! gradients; the backbone is fixed at construction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Matrix, RngState};

/// Standard deviation of the initial down-projection entries.
pub const ADAPTER_INIT_STD: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("adapter shapes do not match")]
    ShapeMismatch,
    #[error("forward cache does not match the current parameters")]
    StaleCache,
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub backbone_layers: usize,
    /// Sorted backbone layer indices carrying an adapter.
    pub adapter_layers: Vec<usize>,
    pub adapter_rank: usize,
    pub ema_decay: f64,
}

impl ModelConfig {
    /// Adapters on the first `ceil(5L/12)` layers.
    pub fn default_adapter_layers(backbone_layers: usize) -> Vec<usize> {
        (0..(5 * backbone_layers).div_ceil(12)).collect()
    }

    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        backbone_layers: usize,
        adapter_rank: usize,
    ) -> Self {
        Self {
            input_dim,
            hidden_dim,
            backbone_layers,
            adapter_layers: Self::default_adapter_layers(backbone_layers),
            adapter_rank,
            ema_decay: 0.9999,
        }
    }

    fn layer_in_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    /// Length of the flattened adapter vector (and of every shift vector).
    pub fn adapter_param_len(&self) -> usize {
        self.adapter_layers
            .iter()
            .map(|&l| {
                self.adapter_rank * self.layer_in_dim(l) + self.hidden_dim * self.adapter_rank + 1
            })
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::BadConfig(m));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.backbone_layers == 0 {
            return bad("input_dim, hidden_dim and backbone_layers must be positive".into());
        }
        if self.adapter_rank == 0 {
            return bad("adapter_rank must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay {} outside [0, 1]", self.ema_decay));
        }
        if self.adapter_layers.windows(2).any(|w| w[0] >= w[1]) {
            return bad("adapter_layers must be strictly increasing".into());
        }
        if let Some(&l) = self
            .adapter_layers
            .iter()
            .find(|&&l| l >= self.backbone_layers)
        {
            return bad(format!(
                "adapter layer {l} beyond {} backbone layers",
                self.backbone_layers
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    weight: Matrix,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

/// Frozen feature extractor. Parameters are private and never mutated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    layers: Vec<DenseLayer>,
}

impl Backbone {
    /// He-scaled Gaussian weights, small Gaussian biases.
    pub fn new(cfg: &ModelConfig, rng: &mut RngState) -> Self {
        let layers = (0..cfg.backbone_layers)
            .map(|l| {
                let fan_in = cfg.layer_in_dim(l);
                DenseLayer {
                    weight: Matrix::gaussian(
                        cfg.hidden_dim,
                        fan_in,
                        (2.0 / fan_in as f64).sqrt(),
                        rng,
                    ),
                    bias: rng.gaussian_vec(cfg.hidden_dim, 0.1),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    pub layer: usize,
    /// `r × in`
    pub down: Matrix,
    /// `h × r`
    pub up: Matrix,
    pub scale: f64,
}

impl Adapter {
    fn param_len(&self) -> usize {
        self.down.data().len() + self.up.data().len() + 1
    }
}

/// Trainable adapters, one per adapted layer, ordered by layer index.
/// Flattening order: per adapter, `down` (row-major), `up` (row-major), `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSet {
    adapters: Vec<Adapter>,
}

impl AdapterSet {
    /// `down ~ N(0, 0.02²)`, `up = 0`, `scale = 1`: the branch starts inert.
    pub fn new(cfg: &ModelConfig, rng: &mut RngState) -> Self {
        let adapters = cfg
            .adapter_layers
            .iter()
            .map(|&l| Adapter {
                layer: l,
                down: Matrix::gaussian(
                    cfg.adapter_rank,
                    cfg.layer_in_dim(l),
                    ADAPTER_INIT_STD,
                    rng,
                ),
                up: Matrix::zeros(cfg.hidden_dim, cfg.adapter_rank),
                scale: 1.0,
            })
            .collect();
        Self { adapters }
    }

    /// Every parameter (including scales) set to zero.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let adapters = cfg
            .adapter_layers
            .iter()
            .map(|&l| Adapter {
                layer: l,
                down: Matrix::zeros(cfg.adapter_rank, cfg.layer_in_dim(l)),
                up: Matrix::zeros(cfg.hidden_dim, cfg.adapter_rank),
                scale: 0.0,
            })
            .collect();
        Self { adapters }
    }

    pub fn adapters(&self) -> &[Adapter] {
        &self.adapters
    }

    pub fn adapters_mut(&mut self) -> &mut [Adapter] {
        &mut self.adapters
    }

    pub fn for_layer(&self, layer: usize) -> Option<&Adapter> {
        self.adapters.iter().find(|a| a.layer == layer)
    }

    pub fn flat_len(&self) -> usize {
        self.adapters.iter().map(Adapter::param_len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for a in &self.adapters {
            out.extend_from_slice(a.down.data());
            out.extend_from_slice(a.up.data());
            out.push(a.scale);
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(ModelError::DimMismatch {
                expected: self.flat_len(),
                got: flat.len(),
            });
        }
        let mut pos = 0;
        for a in &mut self.adapters {
            let n = a.down.data().len();
            a.down.data_mut().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
            let n = a.up.data().len();
            a.up.data_mut().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
            a.scale = flat[pos];
            pos += 1;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &AdapterSet) -> bool {
        self.adapters.len() == other.adapters.len()
            && self.adapters.iter().zip(&other.adapters).all(|(a, b)| {
                a.layer == b.layer
                    && (a.down.rows(), a.down.cols()) == (b.down.rows(), b.down.cols())
                    && (a.up.rows(), a.up.cols()) == (b.up.rows(), b.up.cols())
            })
    }
}

/// Exponential moving average of the live adapters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaAdapters {
    params: AdapterSet,
    decay: f64,
}

impl EmaAdapters {
    pub fn new(live: &AdapterSet, decay: f64) -> Self {
        Self {
            params: live.clone(),
            decay,
        }
    }

    pub fn params(&self) -> &AdapterSet {
        &self.params
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }
}

/// `ema ← decay · ema + (1 − decay) · live`, elementwise.
pub fn ema_update(ema: &mut EmaAdapters, live: &AdapterSet) -> Result<()> {
    if !ema.params.same_shape(live) {
        return Err(ModelError::ShapeMismatch);
    }
    let d = ema.decay;
    let blend = |e: &mut f64, l: f64| *e = d * *e + (1.0 - d) * l;
    for (e, l) in ema.params.adapters.iter_mut().zip(&live.adapters) {
        for (x, &y) in e.down.data_mut().iter_mut().zip(l.down.data()) {
            blend(x, y);
        }
        for (x, &y) in e.up.data_mut().iter_mut().zip(l.up.data()) {
            blend(x, y);
        }
        blend(&mut e.scale, l.scale);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRow {
    pub weight: Vec<f64>,
    pub bias: f64,
}

/// Linear head whose rows are append-only; a row's index is its node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    dim: usize,
    rows: Vec<HeadRow>,
}

impl ClassifierHead {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[HeadRow] {
        &self.rows
    }

    /// Appends a zero row and returns its node id.
    pub fn push_zero_row(&mut self) -> usize {
        self.rows.push(HeadRow {
            weight: vec![0.0; self.dim],
            bias: 0.0,
        });
        self.rows.len() - 1
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                r.weight
                    .iter()
                    .zip(features)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    + r.bias
            })
            .collect()
    }

    /// Per row: weights then bias.
    pub fn flat_len(&self) -> usize {
        self.rows.len() * (self.dim + 1)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for r in &self.rows {
            out.extend_from_slice(&r.weight);
            out.push(r.bias);
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(ModelError::DimMismatch {
                expected: self.flat_len(),
                got: flat.len(),
            });
        }
        for (r, chunk) in self.rows.iter_mut().zip(flat.chunks(self.dim + 1)) {
            r.weight.copy_from_slice(&chunk[..self.dim]);
            r.bias = chunk[self.dim];
        }
        Ok(())
    }
}

/// Which adapter copy a forward pass runs through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Online,
    Ema,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Vec<f64>,
    pre_activation: Vec<f64>,
    /// `(D h, ReLU(D h))` on adapted layers.
    adapter: Option<(Vec<f64>, Vec<f64>)>,
}

/// Activations recorded by [`Model::forward`], consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    branch: Branch,
    layers: Vec<LayerCache>,
    features: Vec<f64>,
}

impl ForwardCache {
    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Gradients for one backward pass, in the canonical flat layouts of
/// [`AdapterSet::flatten`] and [`ClassifierHead::flatten`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub adapters: Vec<f64>,
    pub head: Vec<f64>,
}

impl Gradients {
    pub fn zeros(adapter_len: usize, head_len: usize) -> Self {
        Self {
            adapters: vec![0.0; adapter_len],
            head: vec![0.0; head_len],
        }
    }

    /// `self += scale · other`
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.adapters.iter_mut().zip(&other.adapters) {
            *a += scale * b;
        }
        for (a, b) in self.head.iter_mut().zip(&other.head) {
            *a += scale * b;
        }
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn run_forward(
    backbone: &Backbone,
    adapters: &AdapterSet,
    x: &[f64],
) -> (Vec<LayerCache>, Vec<f64>) {
    let mut h = x.to_vec();
    let mut caches = Vec::with_capacity(backbone.layers.len());
    for (l, layer) in backbone.layers.iter().enumerate() {
        let mut z = layer.weight.matvec(&h);
        for (zi, b) in z.iter_mut().zip(&layer.bias) {
            *zi += b;
        }
        let adapter = adapters.for_layer(l).map(|a| {
            let u = a.down.matvec(&h);
            let act: Vec<f64> = u.iter().map(|&v| relu(v)).collect();
            let branch = a.up.matvec(&act);
            for (zi, bi) in z.iter_mut().zip(&branch) {
                *zi += a.scale * bi;
            }
            (u, act)
        });
        let out: Vec<f64> = z.iter().map(|&v| relu(v)).collect();
        caches.push(LayerCache {
            input: std::mem::replace(&mut h, out),
            pre_activation: z,
            adapter,
        });
    }
    (caches, h)
}

/// Elementwise maximum of two per-class logit vectors.
pub fn ensemble_class_logits(online: &[f64], ema: &[f64]) -> Result<Vec<f64>> {
    if online.len() != ema.len() {
        return Err(ModelError::DimMismatch {
            expected: online.len(),
            got: ema.len(),
        });
    }
    Ok(online.iter().zip(ema).map(|(a, b)| a.max(*b)).collect())
}

/// Backbone + live adapters + EMA adapters + head.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    backbone: Arc<Backbone>,
    adapters: AdapterSet,
    ema: EmaAdapters,
    head: ClassifierHead,
    stamp: u64,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let backbone = Arc::new(Backbone::new(&config, rng));
        let adapters = AdapterSet::new(&config, rng);
        let ema = EmaAdapters::new(&adapters, config.ema_decay);
        let head = ClassifierHead::new(config.hidden_dim);
        Ok(Self {
            config,
            backbone,
            adapters,
            ema,
            head,
            stamp: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn adapters(&self) -> &AdapterSet {
        &self.adapters
    }

    pub fn ema(&self) -> &EmaAdapters {
        &self.ema
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    fn touch(&mut self) {
        self.stamp += 1;
    }

    pub fn set_adapters(&mut self, adapters: AdapterSet) -> Result<()> {
        if !self.adapters.same_shape(&adapters) {
            return Err(ModelError::ShapeMismatch);
        }
        self.adapters = adapters;
        self.touch();
        Ok(())
    }

    pub fn set_adapters_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.adapters.unflatten(flat)?;
        self.touch();
        Ok(())
    }

    pub fn set_head_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.head.unflatten(flat)?;
        self.touch();
        Ok(())
    }

    /// Appends a zero-initialised head row and returns its node id.
    pub fn add_head_row(&mut self) -> usize {
        self.touch();
        self.head.push_zero_row()
    }

    /// Adapters then head, in canonical order.
    pub fn trainable_flat(&self) -> Vec<f64> {
        let mut v = self.adapters.flatten();
        v.extend(self.head.flatten());
        v
    }

    pub fn trainable_len(&self) -> usize {
        self.adapters.flat_len() + self.head.flat_len()
    }

    pub fn set_trainable_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.trainable_len() {
            return Err(ModelError::DimMismatch {
                expected: self.trainable_len(),
                got: flat.len(),
            });
        }
        let split = self.adapters.flat_len();
        self.adapters.unflatten(&flat[..split])?;
        self.head.unflatten(&flat[split..])?;
        self.touch();
        Ok(())
    }

    pub fn update_ema(&mut self) -> Result<()> {
        ema_update(&mut self.ema, &self.adapters)?;
        self.touch();
        Ok(())
    }

    /// Restarts the EMA copy from the live adapters.
    pub fn reset_ema(&mut self) {
        self.ema = EmaAdapters::new(&self.adapters, self.config.ema_decay);
        self.touch();
    }

    fn branch_adapters(&self, branch: Branch) -> &AdapterSet {
        match branch {
            Branch::Online => &self.adapters,
            Branch::Ema => &self.ema.params,
        }
    }

    /// Backbone features (last hidden layer) without the head.
    pub fn features(&self, x: &[f64], branch: Branch) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(run_forward(&self.backbone, self.branch_adapters(branch), x).1)
    }

    pub fn logits(&self, x: &[f64], branch: Branch) -> Result<Vec<f64>> {
        Ok(self.head.logits(&self.features(x, branch)?))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(ModelError::DimMismatch {
                expected: self.config.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Raw logits over every head row, plus the cache needed by `backward`.
    pub fn forward(&self, x: &[f64], branch: Branch) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let (layers, features) = run_forward(&self.backbone, self.branch_adapters(branch), x);
        let logits = self.head.logits(&features);
        Ok((
            logits,
            ForwardCache {
                stamp: self.stamp,
                branch,
                layers,
                features,
            },
        ))
    }

    /// Exact gradients of `grad_logits · logits` with respect to the adapters
    /// of the cached branch and every head row.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[f64]) -> Result<Gradients> {
        if cache.stamp != self.stamp {
            return Err(ModelError::StaleCache);
        }
        if grad_logits.len() != self.head.len() {
            return Err(ModelError::DimMismatch {
                expected: self.head.len(),
                got: grad_logits.len(),
            });
        }
        let adapters = self.branch_adapters(cache.branch);
        let dim = self.head.dim;
        let mut grads = Gradients::zeros(adapters.flat_len(), self.head.flat_len());
        let mut d_h = vec![0.0; dim];
        for (i, (row, &g)) in self.head.rows.iter().zip(grad_logits).enumerate() {
            if g == 0.0 {
                continue;
            }
            let slot = &mut grads.head[i * (dim + 1)..(i + 1) * (dim + 1)];
            for (s, f) in slot[..dim].iter_mut().zip(&cache.features) {
                *s = g * f;
            }
            slot[dim] = g;
            for (d, w) in d_h.iter_mut().zip(&row.weight) {
                *d += g * w;
            }
        }

        // Offsets of each adapter inside the flat gradient.
        let mut offsets = Vec::with_capacity(adapters.adapters.len());
        let mut pos = 0;
        for a in &adapters.adapters {
            offsets.push(pos);
            pos += a.param_len();
        }

        for (l, (layer, lc)) in self
            .backbone
            .layers
            .iter()
            .zip(&cache.layers)
            .enumerate()
            .rev()
        {
            let d_z: Vec<f64> = d_h
                .iter()
                .zip(&lc.pre_activation)
                .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
                .collect();
            let mut d_in = layer.weight.matvec_t(&d_z);
            if let (Some((u, act)), Some(idx)) = (
                &lc.adapter,
                adapters.adapters.iter().position(|a| a.layer == l),
            ) {
                let a = &adapters.adapters[idx];
                let off = offsets[idx];
                let n_down = a.down.data().len();
                let n_up = a.up.data().len();
                let (r, n_in) = (a.down.rows(), a.down.cols());

                let up_act = a.up.matvec(act);
                grads.adapters[off + n_down + n_up] =
                    d_z.iter().zip(&up_act).map(|(x, y)| x * y).sum();

                let g_up = &mut grads.adapters[off + n_down..off + n_down + n_up];
                for (i, &dz) in d_z.iter().enumerate() {
                    for (j, &aj) in act.iter().enumerate() {
                        g_up[i * r + j] = a.scale * dz * aj;
                    }
                }

                let d_act = a.up.matvec_t(&d_z);
                let d_u: Vec<f64> = d_act
                    .iter()
                    .zip(u)
                    .map(|(&d, &uv)| if uv > 0.0 { a.scale * d } else { 0.0 })
                    .collect();
                let g_down = &mut grads.adapters[off..off + n_down];
                for (i, &du) in d_u.iter().enumerate() {
                    for (j, &hj) in lc.input.iter().enumerate() {
                        g_down[i * n_in + j] = du * hj;
                    }
                }
                for (d, v) in d_in.iter_mut().zip(a.down.matvec_t(&d_u)) {
                    *d += v;
                }
            }
            d_h = d_in;
        }
        Ok(grads)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            backbone: (*self.backbone).clone(),
            adapters: self.adapters.flatten(),
            ema: self.ema.params.flatten(),
            head: self.head.rows.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "unknown format '{}'",
                ck.format
            )));
        }
        ck.config.validate()?;
        let mut adapters = AdapterSet::zeros(&ck.config);
        adapters.unflatten(&ck.adapters)?;
        let mut ema_params = AdapterSet::zeros(&ck.config);
        ema_params.unflatten(&ck.ema)?;
        let dim = ck.config.hidden_dim;
        if ck.head.iter().any(|r| r.weight.len() != dim) {
            return Err(ModelError::Checkpoint("head row width mismatch".into()));
        }
        Ok(Self {
            backbone: Arc::new(ck.backbone),
            adapters,
            ema: EmaAdapters {
                params: ema_params,
                decay: ck.config.ema_decay,
            },
            head: ClassifierHead { dim, rows: ck.head },
            config: ck.config,
            stamp: 0,
        })
    }

    /// JSON checkpoint; floats are written in shortest round-trip form.
    pub fn save_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn load_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ck)
    }
}

const CHECKPOINT_FORMAT: &str = "icon-checkpoint-v1";

/// Self-describing model snapshot: config echo plus flat parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub adapters: Vec<f64>,
    pub ema: Vec<f64>,
    pub head: Vec<HeadRow>,
}
