//! Bare sequence models and the training loop for the desk-scale benchmarks.
//!
//! A model is a scalar-to-channel embedding, an optional learnable additive
//! positional encoding, a stack of identical layers from one family, and a
//! linear head read at the last position. There are deliberately no
//! convolutions, activations, or feed-forward blocks between layers: the
//! point of the benchmark is to compare the bare sequence mixers.
//!
//! Gradients are hand-derived and every configuration must pass a
//! central-difference check at its random initialization before the first
//! optimizer step is taken. Training is deterministic given the seed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    linear_attention_backward, linear_attention_scan, lti_backward, lti_scan, mamba_backward,
    mamba_scan, s6_scan, s6_scan_backward, softmax_attention_backward, softmax_attention_scan,
    AttentionWeights, Linear, LtiWeights, MambaBlockWeights, S6Variant, S6Weights,
};
use crate::numerics::{grad_check, Matrix, ParamTensor, Rng};

/// Analytic gradients must agree with central differences to this relative
/// tolerance before training is permitted.
pub const GRAD_CHECK_TOL: f64 = 1e-4;

/// Step size for central-difference checks of single layers and shallow
/// stacks.
pub const GRAD_CHECK_EPSILON: f64 = 1e-5;

/// Step size for the pre-training gate. Deep stacks route some gradients
/// through several contraction factors, and at 1e-5 the difference
/// quotient's quantization noise alone can exceed the tolerance on those
/// tensors; a wider step resolves them while truncation error stays orders
/// of magnitude below the tolerance at this scale.
pub const GATE_EPSILON: f64 = 1e-4;

/// Samples used for the pre-training gradient probe.
const GRAD_PROBE_SAMPLES: usize = 4;

/// The sequence-mixing layer family a model stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    S6,
    LinearAttention,
    SoftmaxAttention,
}

/// What the model predicts from the last position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HeadConfig {
    Classification { classes: usize },
    Regression,
}

impl HeadConfig {
    fn out_dim(&self) -> usize {
        match self {
            HeadConfig::Classification { classes } => *classes,
            HeadConfig::Regression => 1,
        }
    }
}

fn default_state_size() -> usize {
    1
}

/// Architecture of one benchmark model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub n_layers: usize,
    /// Channel count.
    #[serde(rename = "D")]
    pub d: usize,
    /// State size per channel; selective-scan models only.
    #[serde(rename = "N", default = "default_state_size")]
    pub n: usize,
    /// Learnable additive positional encoding at the input.
    #[serde(default)]
    pub use_pe: bool,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_layers == 0 {
            return Err(Error::InvalidInput {
                reason: format!(
                    "model needs at least one channel and one layer, got D={} n_layers={}",
                    self.d, self.n_layers
                ),
            });
        }
        if matches!(self.family, ModelFamily::S6) && self.n == 0 {
            return Err(Error::InvalidInput {
                reason: "selective scan needs a positive state size".into(),
            });
        }
        if let HeadConfig::Classification { classes } = self.head {
            if classes < 2 {
                return Err(Error::InvalidInput {
                    reason: format!("classification needs at least 2 classes, got {classes}"),
                });
            }
        }
        Ok(())
    }
}

/// Adam moment hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Loss applied to the last-position head output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

fn default_batch_size() -> usize {
    64
}

/// Optimization schedule for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr > 0.0)
            || !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || !(a.epsilon > 0.0)
        {
            return Err(Error::InvalidInput {
                reason: format!(
                    "adam needs lr > 0, betas in [0,1), epsilon > 0, got lr={} betas=({},{}) eps={}",
                    a.lr, a.beta1, a.beta2, a.epsilon
                ),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput {
                reason: "batch size must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Targets for one split, matching the model head.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Values(Vec<f64>),
}

#[derive(Clone, Copy)]
enum TargetRef {
    Label(usize),
    Value(f64),
}

/// One split of scalar sequences with their last-position targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedData {
    pub l: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Targets,
}

impl SupervisedData {
    pub fn new(l: usize, inputs: Vec<Vec<f64>>, targets: Targets) -> Result<SupervisedData> {
        if l == 0 {
            return Err(Error::InvalidInput {
                reason: "sequence length must be positive".into(),
            });
        }
        let n_targets = match &targets {
            Targets::Labels(v) => v.len(),
            Targets::Values(v) => v.len(),
        };
        if n_targets != inputs.len() {
            return Err(Error::InvalidInput {
                reason: format!("{} inputs but {} targets", inputs.len(), n_targets),
            });
        }
        if let Some(bad) = inputs.iter().find(|x| x.len() != l) {
            return Err(Error::InvalidInput {
                reason: format!("sample has {} entries, split says {l}", bad.len()),
            });
        }
        Ok(SupervisedData { l, inputs, targets })
    }

    pub fn from_count_in_row(data: &crate::datasets::CountInRowDataset) -> Result<SupervisedData> {
        let inputs = data
            .samples
            .iter()
            .map(|s| s.x.iter().map(|&v| v as f64).collect())
            .collect();
        let labels = data.samples.iter().map(|s| s.y).collect();
        SupervisedData::new(data.l, inputs, Targets::Labels(labels))
    }

    pub fn from_regression(data: &crate::datasets::RegressionDataset) -> Result<SupervisedData> {
        let inputs = data.samples.iter().map(|s| s.x.clone()).collect();
        let values = data.samples.iter().map(|s| s.y).collect();
        SupervisedData::new(data.task.l(), inputs, Targets::Values(values))
    }

    pub fn from_dataset(data: &crate::datasets::Dataset) -> Result<SupervisedData> {
        match data {
            crate::datasets::Dataset::CountInRow(d) => SupervisedData::from_count_in_row(d),
            crate::datasets::Dataset::Regression(d) => SupervisedData::from_regression(d),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn target(&self, i: usize) -> TargetRef {
        match &self.targets {
            Targets::Labels(v) => TargetRef::Label(v[i]),
            Targets::Values(v) => TargetRef::Value(v[i]),
        }
    }

    /// The split must carry the target kind the head predicts, and labels
    /// must stay below the class count.
    fn check_against(&self, head: &HeadConfig) -> Result<()> {
        match (head, &self.targets) {
            (HeadConfig::Classification { classes }, Targets::Labels(labels)) => {
                if let Some(&bad) = labels.iter().find(|&&y| y >= *classes) {
                    return Err(Error::InvalidInput {
                        reason: format!("label {bad} outside 0..{classes}"),
                    });
                }
                Ok(())
            }
            (HeadConfig::Regression, Targets::Values(_)) => Ok(()),
            _ => Err(Error::InvalidInput {
                reason: "dataset target kind does not match the model head".into(),
            }),
        }
    }
}

/// Where each tensor sits in the flat parameter vector.
struct Wiring {
    embed_w: usize,
    embed_b: usize,
    pe: Option<usize>,
    layer_base: usize,
    per_layer: usize,
    head_w: usize,
    head_b: usize,
}

fn wiring(cfg: &ModelConfig) -> Wiring {
    let layer_base = if cfg.use_pe { 3 } else { 2 };
    let per_layer = match cfg.family {
        ModelFamily::S6 => 4,
        ModelFamily::LinearAttention | ModelFamily::SoftmaxAttention => 3,
    };
    let head_w = layer_base + cfg.n_layers * per_layer;
    Wiring {
        embed_w: 0,
        embed_b: 1,
        pe: cfg.use_pe.then_some(2),
        layer_base,
        per_layer,
        head_w,
        head_b: head_w + 1,
    }
}

enum TensorInit {
    Uniform(f64),
    Zeros,
    Constant(f64),
}

fn param_layout(cfg: &ModelConfig, l: usize) -> Vec<(String, usize, usize, TensorInit)> {
    let d = cfg.d;
    let fan = 1.0 / (d as f64).sqrt();
    let mut layout = vec![
        ("embed_w".to_string(), d, 1, TensorInit::Uniform(1.0)),
        ("embed_b".to_string(), d, 1, TensorInit::Zeros),
    ];
    if cfg.use_pe {
        layout.push(("pe".to_string(), d, l, TensorInit::Zeros));
    }
    for i in 0..cfg.n_layers {
        match cfg.family {
            ModelFamily::S6 => {
                let n = cfg.n;
                layout.push((format!("layer{i}.s_b"), n, d, TensorInit::Uniform(fan)));
                layout.push((format!("layer{i}.s_c"), n, d, TensorInit::Uniform(fan)));
                layout.push((format!("layer{i}.s_delta"), 1, d, TensorInit::Uniform(fan)));
                // A starts at -1 so every transition factor is below 1.
                layout.push((format!("layer{i}.a"), d, n, TensorInit::Constant(-1.0)));
            }
            ModelFamily::LinearAttention | ModelFamily::SoftmaxAttention => {
                layout.push((format!("layer{i}.w_q"), d, d, TensorInit::Uniform(fan)));
                layout.push((format!("layer{i}.w_k"), d, d, TensorInit::Uniform(fan)));
                layout.push((format!("layer{i}.w_v"), d, d, TensorInit::Uniform(fan)));
            }
        }
    }
    let out = cfg.head.out_dim();
    layout.push(("head_w".to_string(), out, d, TensorInit::Uniform(fan)));
    layout.push(("head_b".to_string(), out, 1, TensorInit::Zeros));
    layout
}

/// A model's architecture plus its flat trainable state.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    /// Sequence length the model was built for; fixes the encoding width.
    pub l: usize,
    pub params: Vec<ParamTensor>,
}

impl Model {
    /// Random initialization: uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
    /// per weight matrix, zero biases and encoding, state matrix at -1.
    pub fn init(config: &ModelConfig, l: usize, seed: u64) -> Result<Model> {
        config.validate()?;
        if l == 0 {
            return Err(Error::InvalidInput {
                reason: "sequence length must be positive".into(),
            });
        }
        let mut rng = Rng::new(seed);
        let params = param_layout(config, l)
            .into_iter()
            .map(|(name, rows, cols, init)| {
                let mut value = Matrix::zeros(rows, cols);
                match init {
                    TensorInit::Uniform(b) => {
                        for v in value.data_mut() {
                            *v = rng.range(-b, b);
                        }
                    }
                    TensorInit::Zeros => {}
                    TensorInit::Constant(c) => value.data_mut().fill(c),
                }
                ParamTensor::new(name, value)
            })
            .collect();
        Ok(Model {
            config: config.clone(),
            l,
            params,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    pub fn to_json(&self) -> String {
        let repr = ModelRepr {
            config: self.config.clone(),
            l: self.l,
            params: self
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    value: p.value.clone(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&repr).expect("model serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let repr: ModelRepr = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "model json".to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        repr.config.validate()?;
        let layout = param_layout(&repr.config, repr.l);
        if layout.len() != repr.params.len() {
            return Err(Error::InvalidInput {
                reason: format!(
                    "model has {} tensors, the architecture needs {}",
                    repr.params.len(),
                    layout.len()
                ),
            });
        }
        let params = layout
            .into_iter()
            .zip(repr.params)
            .map(|((name, rows, cols, _), t)| {
                if t.name != name || t.value.shape() != (rows, cols) {
                    return Err(Error::InvalidInput {
                        reason: format!(
                            "tensor {} of shape {:?} does not fit slot {name} ({rows}x{cols})",
                            t.name,
                            t.value.shape()
                        ),
                    });
                }
                Ok(ParamTensor::new(t.name, t.value))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            config: repr.config,
            l: repr.l,
            params,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    value: Matrix,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    config: ModelConfig,
    l: usize,
    params: Vec<NamedTensor>,
}

enum LayerOp {
    S6 { w: S6Weights, variant: S6Variant },
    LinearAttention(AttentionWeights),
    SoftmaxAttention(AttentionWeights),
}

enum LayerCache {
    S6(crate::layers::s6::S6Cache),
    Attention(crate::layers::attention::AttentionCache),
}

fn assemble_layers(cfg: &ModelConfig, params: &[ParamTensor]) -> Result<Vec<LayerOp>> {
    let wire = wiring(cfg);
    let scale = 1.0 / (cfg.d as f64).sqrt();
    (0..cfg.n_layers)
        .map(|i| {
            let base = wire.layer_base + i * wire.per_layer;
            match cfg.family {
                ModelFamily::S6 => Ok(LayerOp::S6 {
                    w: S6Weights::new(
                        params[base].value.clone(),
                        params[base + 1].value.clone(),
                        params[base + 2].value.clone(),
                        params[base + 3].value.clone(),
                    )?,
                    variant: S6Variant::Original,
                }),
                ModelFamily::LinearAttention | ModelFamily::SoftmaxAttention => {
                    let w = AttentionWeights::new(
                        params[base].value.clone(),
                        params[base + 1].value.clone(),
                        params[base + 2].value.clone(),
                        scale,
                    )?;
                    Ok(match cfg.family {
                        ModelFamily::LinearAttention => LayerOp::LinearAttention(w),
                        _ => LayerOp::SoftmaxAttention(w),
                    })
                }
            }
        })
        .collect()
}

impl LayerOp {
    fn forward(&self, u: &Matrix) -> Result<Matrix> {
        Ok(match self {
            LayerOp::S6 { w, variant } => s6_scan(w, variant, u, false)?.0,
            LayerOp::LinearAttention(w) => linear_attention_scan(w, u, false)?.0,
            LayerOp::SoftmaxAttention(w) => softmax_attention_scan(w, u, false)?.0,
        })
    }

    fn forward_cached(&self, u: &Matrix) -> Result<(Matrix, LayerCache)> {
        Ok(match self {
            LayerOp::S6 { w, variant } => {
                let (y, cache) = s6_scan(w, variant, u, true)?;
                (y, LayerCache::S6(cache.expect("cache requested")))
            }
            LayerOp::LinearAttention(w) => {
                let (y, cache) = linear_attention_scan(w, u, true)?;
                (y, LayerCache::Attention(cache.expect("cache requested")))
            }
            LayerOp::SoftmaxAttention(w) => {
                let (y, cache) = softmax_attention_scan(w, u, true)?;
                (y, LayerCache::Attention(cache.expect("cache requested")))
            }
        })
    }
}

fn embed_input(params: &[ParamTensor], wire: &Wiring, x: &[f64]) -> Matrix {
    let ew = &params[wire.embed_w].value;
    let eb = &params[wire.embed_b].value;
    let pe = wire.pe.map(|i| &params[i].value);
    Matrix::from_fn(ew.rows(), x.len(), |d, t| {
        ew.get(d, 0) * x[t] + eb.get(d, 0) + pe.map_or(0.0, |p| p.get(d, t))
    })
}

fn head_logits(params: &[ParamTensor], wire: &Wiring, y_last: &[f64]) -> Vec<f64> {
    let hw = &params[wire.head_w].value;
    let hb = &params[wire.head_b].value;
    (0..hw.rows())
        .map(|c| {
            hb.get(c, 0)
                + (0..hw.cols()).map(|d| hw.get(c, d) * y_last[d]).sum::<f64>()
        })
        .collect()
}

/// Softmax cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let norm: f64 = exps.iter().sum();
    let loss = norm.ln() + max - logits[label];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| e / norm - if i == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

fn loss_and_dlogits(head: &HeadConfig, logits: &[f64], target: TargetRef) -> (f64, Vec<f64>) {
    match (head, target) {
        (HeadConfig::Classification { .. }, TargetRef::Label(y)) => cross_entropy(logits, y),
        (HeadConfig::Regression, TargetRef::Value(y)) => {
            let diff = logits[0] - y;
            (diff * diff, vec![2.0 * diff])
        }
        // Ruled out by SupervisedData::check_against.
        _ => unreachable!("target kind checked before dispatch"),
    }
}

fn forward_logits(
    params: &[ParamTensor],
    wire: &Wiring,
    layers: &[LayerOp],
    x: &[f64],
) -> Result<Vec<f64>> {
    let mut u = embed_input(params, wire, x);
    for op in layers {
        u = op.forward(&u)?;
    }
    let last = u.cols() - 1;
    let y_last: Vec<f64> = (0..u.rows()).map(|d| u.get(d, last)).collect();
    Ok(head_logits(params, wire, &y_last))
}

fn add_into(dst: &mut Matrix, src: &Matrix) {
    for (a, &b) in dst.data_mut().iter_mut().zip(src.data()) {
        *a += b;
    }
}

/// Forward and backward for one sample, accumulating unscaled gradients
/// into the parameter tensors. Returns the sample loss.
fn backprop_sample(
    cfg: &ModelConfig,
    params: &mut [ParamTensor],
    wire: &Wiring,
    layers: &[LayerOp],
    x: &[f64],
    target: TargetRef,
) -> Result<f64> {
    let u0 = embed_input(params, wire, x);
    let mut activations = vec![u0];
    let mut caches = Vec::with_capacity(layers.len());
    for op in layers {
        let (y, cache) = op.forward_cached(activations.last().expect("seeded with the input"))?;
        activations.push(y);
        caches.push(cache);
    }
    let top = activations.last().expect("at least the input");
    let (d_ch, l) = top.shape();
    let y_last: Vec<f64> = (0..d_ch).map(|d| top.get(d, l - 1)).collect();
    let logits = head_logits(params, wire, &y_last);
    let (loss, dlogits) = loss_and_dlogits(&cfg.head, &logits, target);

    // Head: logits = W y_last + b.
    let head_w = params[wire.head_w].value.clone();
    {
        let gw = &mut params[wire.head_w].grad;
        for (c, &dl) in dlogits.iter().enumerate() {
            for (d, &y) in y_last.iter().enumerate() {
                gw.set(c, d, gw.get(c, d) + dl * y);
            }
        }
        let gb = &mut params[wire.head_b].grad;
        for (c, &dl) in dlogits.iter().enumerate() {
            gb.set(c, 0, gb.get(c, 0) + dl);
        }
    }
    let mut dy = Matrix::zeros(d_ch, l);
    for d in 0..d_ch {
        let v = dlogits
            .iter()
            .enumerate()
            .map(|(c, &dl)| dl * head_w.get(c, d))
            .sum::<f64>();
        dy.set(d, l - 1, v);
    }

    for (i, (op, cache)) in layers.iter().zip(&caches).enumerate().rev() {
        let base = wire.layer_base + i * wire.per_layer;
        dy = match (op, cache) {
            (LayerOp::S6 { w, variant }, LayerCache::S6(c)) => {
                let g = s6_scan_backward(w, variant, c, &dy);
                add_into(&mut params[base].grad, &g.d_s_b);
                add_into(&mut params[base + 1].grad, &g.d_s_c);
                add_into(&mut params[base + 2].grad, &g.d_s_delta);
                add_into(&mut params[base + 3].grad, &g.d_a);
                g.d_x
            }
            (LayerOp::LinearAttention(w), LayerCache::Attention(c)) => {
                let g = linear_attention_backward(w, c, &dy);
                add_into(&mut params[base].grad, &g.d_w_q);
                add_into(&mut params[base + 1].grad, &g.d_w_k);
                add_into(&mut params[base + 2].grad, &g.d_w_v);
                g.d_x
            }
            (LayerOp::SoftmaxAttention(w), LayerCache::Attention(c)) => {
                let g = softmax_attention_backward(w, c, &dy);
                add_into(&mut params[base].grad, &g.d_w_q);
                add_into(&mut params[base + 1].grad, &g.d_w_k);
                add_into(&mut params[base + 2].grad, &g.d_w_v);
                g.d_x
            }
            _ => unreachable!("cache kind follows the layer kind"),
        };
    }

    // Input: u = embed_w x + embed_b (+ pe).
    {
        let gw = &mut params[wire.embed_w].grad;
        for d in 0..d_ch {
            let v = (0..l).map(|t| dy.get(d, t) * x[t]).sum::<f64>();
            gw.set(d, 0, gw.get(d, 0) + v);
        }
        let gb = &mut params[wire.embed_b].grad;
        for d in 0..d_ch {
            let v = (0..l).map(|t| dy.get(d, t)).sum::<f64>();
            gb.set(d, 0, gb.get(d, 0) + v);
        }
        if let Some(pi) = wire.pe {
            add_into(&mut params[pi].grad, &dy);
        }
    }
    Ok(loss)
}

/// Mean loss of the index subset; a pure function of the parameter values.
fn batch_loss(
    cfg: &ModelConfig,
    params: &[ParamTensor],
    data: &SupervisedData,
    idx: &[usize],
) -> Result<f64> {
    let wire = wiring(cfg);
    let layers = assemble_layers(cfg, params)?;
    let mut total = 0.0;
    for &i in idx {
        let logits = forward_logits(params, &wire, &layers, &data.inputs[i])?;
        let (loss, _) = loss_and_dlogits(&cfg.head, &logits, data.target(i));
        total += loss;
    }
    Ok(total / idx.len() as f64)
}

/// Mean loss of the index subset, with mean gradients accumulated into the
/// parameter tensors (which must arrive zeroed).
fn batch_backward(
    cfg: &ModelConfig,
    params: &mut [ParamTensor],
    data: &SupervisedData,
    idx: &[usize],
) -> Result<f64> {
    let wire = wiring(cfg);
    let layers = assemble_layers(cfg, params)?;
    let mut total = 0.0;
    for &i in idx {
        total += backprop_sample(cfg, params, &wire, &layers, &data.inputs[i], data.target(i))?;
    }
    let scale = 1.0 / idx.len() as f64;
    for p in params.iter_mut() {
        for g in p.grad.data_mut() {
            *g *= scale;
        }
    }
    Ok(total * scale)
}

/// First and second moment estimates, aligned with the parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[ParamTensor]) -> AdamState {
        AdamState {
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.value.data().len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.data().len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update from the gradients stored in `params`.
pub fn adam_step(params: &mut [ParamTensor], state: &mut AdamState, cfg: &AdamConfig) {
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (p, (m, v)) in params.iter_mut().zip(state.m.iter_mut().zip(&mut state.v)) {
        let grads = p.grad.data().to_vec();
        for ((w, &g), (m_i, v_i)) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(&grads)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *m_i = cfg.beta1 * *m_i + (1.0 - cfg.beta1) * g;
            *v_i = cfg.beta2 * *v_i + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m_i / bc1;
            let v_hat = *v_i / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Loss and task metric of one split: accuracy for classification (higher
/// is better), mean squared error for regression (lower is better).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
}

/// Exact loss and metric of `model` on one split.
pub fn evaluate(model: &Model, data: &SupervisedData) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::InvalidInput {
            reason: "cannot evaluate on an empty split".into(),
        });
    }
    data.check_against(&model.config.head)?;
    let wire = wiring(&model.config);
    let layers = assemble_layers(&model.config, &model.params)?;
    let mut total_loss = 0.0;
    let mut metric_acc = 0.0;
    for i in 0..data.len() {
        let logits = forward_logits(&model.params, &wire, &layers, &data.inputs[i])?;
        let (loss, _) = loss_and_dlogits(&model.config.head, &logits, data.target(i));
        total_loss += loss;
        match data.target(i) {
            TargetRef::Label(y) => {
                let pred = logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(i, _)| i)
                    .expect("at least two classes");
                if pred == y {
                    metric_acc += 1.0;
                }
            }
            TargetRef::Value(_) => metric_acc += loss,
        }
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: total_loss / n,
        metric: metric_acc / n,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_metric: f64,
}

/// Everything a finished run reports. Wall-clock stays out of the
/// serialized form so artifacts are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rows: Vec<EpochRow>,
    /// Epoch with the best test metric; row index into `rows`.
    pub best_epoch: usize,
    /// Test metric at the best epoch.
    pub final_metric: f64,
    pub parameter_count: usize,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

fn metric_improves(head: &HeadConfig, candidate: f64, best: f64) -> bool {
    match head {
        HeadConfig::Classification { .. } => candidate > best,
        HeadConfig::Regression => candidate < best,
    }
}

fn shuffled_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        idx.swap(i, j);
    }
    idx
}

/// Train a freshly initialized model.
///
/// The run is deterministic given the configs and data. Before the first
/// step, the analytic gradients are verified against central differences
/// on a small probe batch; a failure aborts the run. Epoch 0 records the
/// untrained model so a zero-epoch run reports its initialization.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_data: &SupervisedData,
    test_data: &SupervisedData,
) -> Result<(Model, Metrics)> {
    let started = std::time::Instant::now();
    model_cfg.validate()?;
    train_cfg.validate()?;
    if train_data.is_empty() || test_data.is_empty() {
        return Err(Error::InvalidInput {
            reason: "training needs non-empty train and test splits".into(),
        });
    }
    if train_data.l != test_data.l {
        return Err(Error::InvalidInput {
            reason: format!(
                "train split has length {}, test split {}",
                train_data.l, test_data.l
            ),
        });
    }
    train_data.check_against(&model_cfg.head)?;
    test_data.check_against(&model_cfg.head)?;
    match (train_cfg.loss, &model_cfg.head) {
        (LossKind::CrossEntropy, HeadConfig::Classification { .. }) => {}
        (LossKind::Mse, HeadConfig::Regression) => {}
        _ => {
            return Err(Error::InvalidInput {
                reason: "loss kind does not match the model head".into(),
            })
        }
    }

    let mut model = Model::init(model_cfg, train_data.l, train_cfg.seed)?;

    // Gradient gate: the hand-derived backward pass must match central
    // differences at this initialization before any step is taken. The
    // check runs on a conditioned synthetic probe rather than on training
    // samples, whose scale is the task's business, not the check's. A wrong
    // formula fails on every probe; an unlucky draw fails only on its own,
    // so a second probe gets the final word.
    let mut gate_err = f64::INFINITY;
    for salt in [0x9a7e_01, 0x9a7e_02] {
        let probe = probe_data(&model_cfg.head, train_data.l, train_cfg.seed ^ salt)?;
        let idx: Vec<usize> = (0..probe.len()).collect();
        model.zero_grads();
        batch_backward(model_cfg, &mut model.params, &probe, &idx)?;
        gate_err = grad_check(
            |ps| batch_loss(model_cfg, ps, &probe, &idx),
            &mut model.params,
            GATE_EPSILON,
        )?;
        if gate_err <= GRAD_CHECK_TOL {
            break;
        }
    }
    if gate_err > GRAD_CHECK_TOL {
        return Err(Error::GradCheckFailed {
            max_rel_err: gate_err,
            tolerance: GRAD_CHECK_TOL,
        });
    }
    model.zero_grads();

    let mut state = AdamState::new(&model.params);
    let mut rows = Vec::with_capacity(train_cfg.epochs + 1);
    let untrained_train = evaluate(&model, train_data)?;
    let untrained_test = evaluate(&model, test_data)?;
    rows.push(EpochRow {
        epoch: 0,
        train_loss: untrained_train.loss,
        test_loss: untrained_test.loss,
        test_metric: untrained_test.metric,
    });
    let mut best_epoch = 0;
    let mut best_metric = untrained_test.metric;

    let shuffle_root = Rng::new(train_cfg.seed);
    for epoch in 1..=train_cfg.epochs {
        let mut rng = shuffle_root.derive(epoch as u64);
        let order = shuffled_indices(train_data.len(), &mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(train_cfg.batch_size) {
            let diverged = || Error::Diverged { epoch };
            let loss = batch_backward(model_cfg, &mut model.params, train_data, chunk)
                .map_err(|e| match e {
                    Error::ScanOverflow { .. } | Error::NonFinite { .. } => diverged(),
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(diverged());
            }
            epoch_loss += loss * chunk.len() as f64;
            adam_step(&mut model.params, &mut state, &train_cfg.adam);
            model.zero_grads();
        }
        let test = evaluate(&model, test_data).map_err(|e| match e {
            Error::ScanOverflow { .. } | Error::NonFinite { .. } => Error::Diverged { epoch },
            other => other,
        })?;
        let row = EpochRow {
            epoch,
            train_loss: epoch_loss / train_data.len() as f64,
            test_loss: test.loss,
            test_metric: test.metric,
        };
        if !row.test_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if metric_improves(&model_cfg.head, row.test_metric, best_metric) {
            best_metric = row.test_metric;
            best_epoch = epoch;
        }
        rows.push(row);
    }

    let metrics = Metrics {
        best_epoch,
        final_metric: best_metric,
        parameter_count: model.parameter_count(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        rows,
    };
    Ok((model, metrics))
}

/// Synthetic probe batch for gradient checks, kept away from cancellation:
/// positive inputs, labels that cover the classes, regression targets
/// bounded away from zero. Gradient entries that cancel to the difference
/// quotient's quantization floor would otherwise report noise instead of
/// the backward pass's accuracy.
fn probe_data(head: &HeadConfig, l: usize, seed: u64) -> Result<SupervisedData> {
    let mut rng = Rng::new(seed).derive(0x0da7a);
    let n = GRAD_PROBE_SAMPLES;
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..l).map(|_| rng.range(1.5, 3.5)).collect())
        .collect();
    let targets = match head {
        HeadConfig::Classification { classes } => {
            Targets::Labels((0..n).map(|i| i % classes).collect())
        }
        HeadConfig::Regression => Targets::Values(
            (0..n)
                .map(|i| 0.5 + 0.7 * i as f64 + rng.range(0.0, 1.0))
                .collect(),
        ),
    };
    SupervisedData::new(l, inputs, targets)
}

/// Gradient check of a freshly initialized model on a synthetic probe
/// batch. Returns the max relative disagreement with central differences.
pub fn grad_check_model(cfg: &ModelConfig, l: usize, seed: u64, epsilon: f64) -> Result<f64> {
    cfg.validate()?;
    let data = probe_data(&cfg.head, l, seed)?;
    let mut model = Model::init(cfg, l, seed)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    batch_backward(cfg, &mut model.params, &data, &idx)?;
    grad_check(
        |ps| batch_loss(cfg, ps, &data, &idx),
        &mut model.params,
        epsilon,
    )
}

/// Gradient check of one full gated block (convolution, gate, and scan
/// branches all active) against central differences. The block input is
/// checked alongside the weights, since stacking blocks routes gradients
/// through it.
pub fn grad_check_mamba_block(
    d: usize,
    n: usize,
    l: usize,
    variant: &S6Variant,
    seed: u64,
    epsilon: f64,
) -> Result<f64> {
    variant.validate()?;
    if d == 0 || n == 0 || l == 0 {
        return Err(Error::InvalidInput {
            reason: "gated block check needs positive d, n, l".into(),
        });
    }
    let mut rng = Rng::new(seed);
    // Unit-scale weights keep the gradient chain through the stacked
    // nonlinearities from decaying below the difference quotient's floor.
    let bound = 1.8 / (d as f64).sqrt();
    let draw = |rows: usize, cols: usize, r: &mut Rng| {
        Matrix::from_fn(rows, cols, |_, _| r.range(-bound, bound))
    };
    let mut params = vec![
        ParamTensor::new("linear_in_w", draw(d, d, &mut rng)),
        ParamTensor::new("linear_in_b", draw(d, 1, &mut rng)),
        ParamTensor::new("conv_kernel", draw(d, 2, &mut rng)),
        ParamTensor::new("gate_w", draw(d, d, &mut rng)),
        ParamTensor::new("gate_b", draw(d, 1, &mut rng)),
        ParamTensor::new("linear_out_w", draw(d, d, &mut rng)),
        ParamTensor::new("linear_out_b", draw(d, 1, &mut rng)),
        ParamTensor::new("s_b", draw(n, d, &mut rng)),
        ParamTensor::new("s_c", draw(n, d, &mut rng)),
        ParamTensor::new("s_delta", draw(1, d, &mut rng)),
        ParamTensor::new(
            "a",
            Matrix::from_fn(d, n, |_, _| -0.2 - rng.range(0.0, 0.8)),
        ),
    ];
    params.push(ParamTensor::new(
        "u",
        Matrix::from_fn(d, l, |_, _| rng.range(-1.0, 1.0)),
    ));
    // Fixed offset target, bounded away from zero. A quadratic loss centered
    // at the output's own scale would leave some gradient entries near the
    // difference quotient's quantization floor.
    let target = Matrix::from_fn(d, l, |_, _| {
        let sign = if rng.bit() { 1.0 } else { -1.0 };
        sign * rng.range(0.5, 1.5)
    });
    let count = (d * l) as f64;

    let build = |ps: &[ParamTensor]| -> Result<MambaBlockWeights> {
        MambaBlockWeights::new(
            Linear::new(ps[0].value.clone(), ps[1].value.data().to_vec())?,
            ps[2].value.clone(),
            Linear::new(ps[3].value.clone(), ps[4].value.data().to_vec())?,
            Linear::new(ps[5].value.clone(), ps[6].value.data().to_vec())?,
            S6Weights::new(
                ps[7].value.clone(),
                ps[8].value.clone(),
                ps[9].value.clone(),
                ps[10].value.clone(),
            )?,
            variant.clone(),
            true,
            true,
            true,
        )
    };
    let loss_of = |out: &Matrix| -> f64 {
        out.data()
            .iter()
            .zip(target.data())
            .map(|(v, t)| (v - t) * (v - t))
            .sum::<f64>()
            / (2.0 * count)
    };

    let w = build(&params)?;
    let (out, cache) = mamba_scan(&w, &params[11].value, true)?;
    let d_out = Matrix::from_fn(d, l, |i, j| (out.get(i, j) - target.get(i, j)) / count);
    let g = mamba_backward(&w, cache.as_ref().expect("cache requested"), &d_out)?;
    let grads: [&[f64]; 12] = [
        g.d_linear_in_w.data(),
        &g.d_linear_in_b,
        g.d_conv_kernel.data(),
        g.d_gate_w.data(),
        &g.d_gate_b,
        g.d_linear_out_w.data(),
        &g.d_linear_out_b,
        g.d_s6.d_s_b.data(),
        g.d_s6.d_s_c.data(),
        g.d_s6.d_s_delta.data(),
        g.d_s6.d_a.data(),
        g.d_u.data(),
    ];
    for (p, gv) in params.iter_mut().zip(grads) {
        p.grad.data_mut().copy_from_slice(gv);
    }
    grad_check(
        |ps| {
            let w = build(ps)?;
            let (out, _) = mamba_scan(&w, &ps[11].value, false)?;
            Ok(loss_of(&out))
        },
        &mut params,
        epsilon,
    )
}

/// Gradient check of the time-invariant scan against central differences.
pub fn grad_check_lti(n: usize, l: usize, seed: u64, epsilon: f64) -> Result<f64> {
    if n == 0 || l == 0 {
        return Err(Error::InvalidInput {
            reason: "time-invariant check needs positive n and l".into(),
        });
    }
    let mut rng = Rng::new(seed);
    let mut params = vec![
        ParamTensor::new("abar", Matrix::from_fn(1, n, |_, _| rng.range(-0.8, 0.8))),
        ParamTensor::new("bbar", Matrix::from_fn(1, n, |_, _| rng.range(-1.0, 1.0))),
        ParamTensor::new("c", Matrix::from_fn(1, n, |_, _| rng.range(-1.0, 1.0))),
    ];
    let x = Matrix::from_fn(2, l, |_, _| rng.range(-1.0, 1.0));
    // Offset target keeps every gradient entry at a healthy magnitude.
    let target = Matrix::from_fn(2, l, |_, _| {
        let sign = if rng.bit() { 1.0 } else { -1.0 };
        sign * rng.range(0.5, 1.5)
    });
    let count = (2 * l) as f64;
    let build = |ps: &[ParamTensor]| -> Result<LtiWeights> {
        LtiWeights::new(
            ps[0].value.data().to_vec(),
            ps[1].value.data().to_vec(),
            ps[2].value.data().to_vec(),
        )
    };
    let w = build(&params)?;
    let (y, cache) = lti_scan(&w, &x, true)?;
    let dy = Matrix::from_fn(2, l, |i, j| (y.get(i, j) - target.get(i, j)) / count);
    let g = lti_backward(&w, cache.as_ref().expect("cache requested"), &dy);
    for (p, gv) in params.iter_mut().zip([&g.d_abar, &g.d_bbar, &g.d_c]) {
        p.grad.data_mut().copy_from_slice(gv);
    }
    grad_check(
        |ps| {
            let w = build(ps)?;
            let (y, _) = lti_scan(&w, &x, false)?;
            let sq = y
                .data()
                .iter()
                .zip(target.data())
                .map(|(v, t)| (v - t) * (v - t))
                .sum::<f64>();
            Ok(sq / (2.0 * count))
        },
        &mut params,
        epsilon,
    )
}

/// Per-epoch metrics as CSV rows under a stable header. Floats are written
/// so they parse back to the same value.
pub fn metrics_csv(config_id: &str, seed: u64, metrics: &Metrics) -> String {
    let mut out = String::from("config_id,seed,epoch,train_loss,test_loss,test_metric\n");
    for row in &metrics.rows {
        writeln!(
            out,
            "{config_id},{seed},{},{:?},{:?},{:?}",
            row.epoch, row.train_loss, row.test_loss, row.test_metric
        )
        .expect("writing to a string cannot fail");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_count_in_row, generate_regression, PolyTaskSpec};

    fn count_config(d: usize, n: usize, layers: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            family: ModelFamily::S6,
            n_layers: layers,
            d,
            n,
            use_pe: false,
            head: HeadConfig::Classification { classes },
        }
    }

    fn count_data(n: usize, l: usize, seed: u64) -> SupervisedData {
        let ds = generate_count_in_row(n, l, seed, true).unwrap();
        SupervisedData::from_count_in_row(&ds).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = ModelConfig {
            family: ModelFamily::SoftmaxAttention,
            n_layers: 2,
            d: 4,
            n: 1,
            use_pe: true,
            head: HeadConfig::Classification { classes: 7 },
        };
        let a = Model::init(&cfg, 6, 3).unwrap();
        let b = Model::init(&cfg, 6, 3).unwrap();
        assert_eq!(a.params.len(), b.params.len());
        for (p, q) in a.params.iter().zip(&b.params) {
            assert_eq!(p.name, q.name);
            assert_eq!(p.value, q.value);
        }
        let bound = 1.0 / 2.0;
        for p in &a.params {
            match p.name.as_str() {
                "embed_b" | "head_b" | "pe" => {
                    assert!(p.value.data().iter().all(|&v| v == 0.0), "{}", p.name)
                }
                "embed_w" => assert!(p.value.data().iter().all(|&v| v.abs() <= 1.0)),
                _ => assert!(
                    p.value.data().iter().all(|&v| v.abs() <= bound),
                    "{} exceeds the fan-in bound",
                    p.name
                ),
            }
        }
        // 2 embed tensors + pe + 2 layers x 3 + head w/b.
        assert_eq!(a.params.len(), 11);
        assert_eq!(a.parameter_count(), 4 + 4 + 24 + 96 + 28 + 7);

        let s6 = Model::init(&count_config(3, 2, 1, 4), 5, 0).unwrap();
        let a_tensor = s6.params.iter().find(|p| p.name == "layer0.a").unwrap();
        assert!(a_tensor.value.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn adam_leaves_params_alone_on_zero_gradient() {
        let mut params = vec![ParamTensor::new("w", Matrix::filled(2, 2, 0.7))];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &mut state, &AdamConfig::default());
        assert!(params[0].value.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn first_adam_step_opposes_the_gradient() {
        let mut params = vec![ParamTensor::new("w", Matrix::zeros(1, 3))];
        params[0].grad = Matrix::from_vec(1, 3, vec![0.5, -2.0, 1e-3]).unwrap();
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &mut state, &cfg);
        let v = params[0].value.data();
        assert!(v[0] < 0.0 && v[1] > 0.0 && v[2] < 0.0);
        // Bias correction makes the first step size ~lr regardless of g.
        for &w in v {
            assert!((w.abs() - cfg.lr).abs() < 0.1 * cfg.lr, "step {w}");
        }
    }

    #[test]
    fn selective_models_pass_the_gradient_check() {
        for seed in 0..3 {
            let cfg = count_config(3, 2, 1, 5);
            let err = grad_check_model(&cfg, 6, seed, GRAD_CHECK_EPSILON).unwrap();
            assert!(err <= GRAD_CHECK_TOL, "seed {seed}: {err}");
        }
        let deep = ModelConfig {
            family: ModelFamily::S6,
            n_layers: 2,
            d: 2,
            n: 2,
            use_pe: true,
            head: HeadConfig::Regression,
        };
        let err = grad_check_model(&deep, 5, 11, GRAD_CHECK_EPSILON).unwrap();
        assert!(err <= GRAD_CHECK_TOL, "{err}");
    }

    #[test]
    fn attention_models_pass_the_gradient_check() {
        for (family, seed) in [
            (ModelFamily::LinearAttention, 1u64),
            (ModelFamily::SoftmaxAttention, 2),
        ] {
            let cfg = ModelConfig {
                family,
                n_layers: 2,
                d: 3,
                n: 1,
                use_pe: true,
                head: HeadConfig::Classification { classes: 4 },
            };
            let err = grad_check_model(&cfg, 6, seed, GRAD_CHECK_EPSILON).unwrap();
            assert!(err <= GRAD_CHECK_TOL, "{family:?}: {err}");
            let reg = ModelConfig {
                head: HeadConfig::Regression,
                use_pe: false,
                ..cfg
            };
            let err = grad_check_model(&reg, 5, seed + 10, GRAD_CHECK_EPSILON).unwrap();
            assert!(err <= GRAD_CHECK_TOL, "{family:?} regression: {err}");
        }
    }

    #[test]
    fn gated_block_backward_passes_the_gradient_check() {
        let err = grad_check_mamba_block(3, 2, 5, &S6Variant::Original, 7, GRAD_CHECK_EPSILON).unwrap();
        assert!(err <= GRAD_CHECK_TOL, "original variant: {err}");
        let poly = S6Variant::SimplifiedPoly {
            p1_degree: 2,
            p2_degree: 3,
            linear_pa: false,
        };
        let err = grad_check_mamba_block(2, 2, 4, &poly, 9, GRAD_CHECK_EPSILON).unwrap();
        assert!(err <= GRAD_CHECK_TOL, "polynomial variant: {err}");
        let linear = S6Variant::linear_poly();
        let err = grad_check_mamba_block(2, 1, 4, &linear, 3, GRAD_CHECK_EPSILON).unwrap();
        assert!(err <= GRAD_CHECK_TOL, "affine transition: {err}");
    }

    #[test]
    fn time_invariant_backward_passes_the_gradient_check() {
        for seed in [0u64, 1, 2] {
            let err = grad_check_lti(3, 7, seed, GRAD_CHECK_EPSILON).unwrap();
            assert!(err <= GRAD_CHECK_TOL, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_epoch_training_reports_the_untrained_model() {
        let cfg = count_config(2, 2, 1, 7);
        let train_cfg = TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 0,
            seed: 5,
            loss: LossKind::CrossEntropy,
        };
        let data = count_data(40, 6, 1);
        let test = count_data(21, 6, 2);
        let (model, metrics) = train(&cfg, &train_cfg, &data, &test).unwrap();
        assert_eq!(metrics.rows.len(), 1);
        assert_eq!(metrics.best_epoch, 0);
        let fresh = Model::init(&cfg, 6, 5).unwrap();
        let eval = evaluate(&fresh, &test).unwrap();
        assert_eq!(metrics.rows[0].test_loss, eval.loss);
        assert_eq!(metrics.final_metric, eval.metric);
        assert_eq!(model.parameter_count(), metrics.parameter_count);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = count_config(2, 2, 1, 7);
        let train_cfg = TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 3,
            seed: 9,
            loss: LossKind::CrossEntropy,
        };
        let data = count_data(60, 6, 4);
        let test = count_data(21, 6, 5);
        let (m1, r1) = train(&cfg, &train_cfg, &data, &test).unwrap();
        let (m2, r2) = train(&cfg, &train_cfg, &data, &test).unwrap();
        assert_eq!(r1.rows, r2.rows);
        assert_eq!(r1.final_metric, r2.final_metric);
        for (p, q) in m1.params.iter().zip(&m2.params) {
            assert_eq!(p.value, q.value, "{} drifted between runs", p.name);
        }
    }

    #[test]
    fn training_reduces_the_loss() {
        let cfg = count_config(2, 4, 1, 7);
        let train_cfg = TrainConfig {
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            batch_size: 32,
            epochs: 60,
            seed: 2,
            loss: LossKind::CrossEntropy,
        };
        let data = count_data(280, 6, 10);
        let test = count_data(70, 6, 11);
        let (_, metrics) = train(&cfg, &train_cfg, &data, &test).unwrap();
        let first = metrics.rows.first().unwrap();
        let last = metrics.rows.last().unwrap();
        assert!(
            last.train_loss < 0.7 * first.train_loss,
            "loss went {} -> {}",
            first.train_loss,
            last.train_loss
        );
        assert!(metrics.final_metric > 0.3, "accuracy {}", metrics.final_metric);
        assert!((0.0..=1.0).contains(&metrics.final_metric));
    }

    #[test]
    fn constant_classifier_scores_at_chance() {
        let cfg = count_config(2, 1, 1, 21);
        let mut model = Model::init(&cfg, 20, 0).unwrap();
        for p in &mut model.params {
            if p.name.starts_with("head") {
                p.value.data_mut().fill(0.0);
            }
        }
        let data = count_data(21, 20, 3);
        let eval = evaluate(&model, &data).unwrap();
        // Equal logits break toward class 0; the balanced split has each
        // label exactly once.
        assert!((eval.metric - 1.0 / 21.0).abs() < 1e-12, "{}", eval.metric);
    }

    #[test]
    fn perfect_regressor_has_zero_error() {
        let task = PolyTaskSpec {
            coefficients: vec![0.0, 0.0, 0.0],
            exponents: vec![vec![1, 1, 1], vec![2, 1, 1], vec![1, 2, 1]],
            seed: 0,
        };
        let ds = generate_regression(&task, 30, 1, false).unwrap();
        let data = SupervisedData::from_regression(&ds).unwrap();
        let cfg = ModelConfig {
            family: ModelFamily::S6,
            n_layers: 1,
            d: 2,
            n: 1,
            use_pe: false,
            head: HeadConfig::Regression,
        };
        let mut model = Model::init(&cfg, 3, 0).unwrap();
        for p in &mut model.params {
            if p.name.starts_with("head") {
                p.value.data_mut().fill(0.0);
            }
        }
        let eval = evaluate(&model, &data).unwrap();
        assert_eq!(eval.metric, 0.0);
        assert_eq!(eval.loss, 0.0);
    }

    #[test]
    fn mismatched_loss_or_targets_are_rejected() {
        let cfg = count_config(2, 1, 1, 7);
        let data = count_data(30, 6, 0);
        let test = count_data(21, 6, 1);
        let bad_loss = TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 8,
            epochs: 1,
            seed: 0,
            loss: LossKind::Mse,
        };
        assert!(matches!(
            train(&cfg, &bad_loss, &data, &test),
            Err(Error::InvalidInput { .. })
        ));

        let reg_cfg = ModelConfig {
            head: HeadConfig::Regression,
            ..cfg
        };
        let mse = TrainConfig {
            loss: LossKind::Mse,
            ..bad_loss
        };
        assert!(matches!(
            train(&reg_cfg, &mse, &data, &test),
            Err(Error::InvalidInput { .. })
        ));

        // Labels outside the class range are caught up front.
        let small = count_config(2, 1, 1, 3);
        let ce = TrainConfig {
            loss: LossKind::CrossEntropy,
            ..mse
        };
        assert!(matches!(
            train(&small, &ce, &data, &test),
            Err(Error::InvalidInput { .. })
        ));
    }

    #[test]
    fn runaway_learning_rates_abort_with_the_epoch() {
        // A step of size ~lr drives the recurrence's exponential past the
        // float range, so the next forward pass reports the epoch it died in.
        let cfg = count_config(2, 4, 1, 7);
        let train_cfg = TrainConfig {
            adam: AdamConfig {
                lr: 1e4,
                ..AdamConfig::default()
            },
            batch_size: 16,
            epochs: 50,
            seed: 0,
            loss: LossKind::CrossEntropy,
        };
        let data = count_data(64, 6, 10);
        let err = train(&cfg, &train_cfg, &data, &data).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 1 }), "got {err}");
    }

    #[test]
    fn metrics_csv_has_the_stable_header() {
        let metrics = Metrics {
            rows: vec![
                EpochRow {
                    epoch: 0,
                    train_loss: 1.5,
                    test_loss: 1.25,
                    test_metric: 0.1,
                },
                EpochRow {
                    epoch: 1,
                    train_loss: 0.5,
                    test_loss: 0.625,
                    test_metric: 0.75,
                },
            ],
            best_epoch: 1,
            final_metric: 0.75,
            parameter_count: 42,
            wall_clock_seconds: 0.0,
        };
        let csv = metrics_csv("s6_d2", 7, &metrics);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "config_id,seed,epoch,train_loss,test_loss,test_metric"
        );
        assert_eq!(lines[1], "s6_d2,7,0,1.5,1.25,0.1");
        assert_eq!(lines[2], "s6_d2,7,1,0.5,0.625,0.75");
    }

    #[test]
    fn model_json_round_trips() {
        let cfg = ModelConfig {
            family: ModelFamily::LinearAttention,
            n_layers: 1,
            d: 3,
            n: 1,
            use_pe: true,
            head: HeadConfig::Regression,
        };
        let model = Model::init(&cfg, 4, 12).unwrap();
        let text = model.to_json();
        let back = Model::from_json(&text).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.l, model.l);
        for (p, q) in model.params.iter().zip(&back.params) {
            assert_eq!(p.name, q.name);
            for (a, b) in p.value.data().iter().zip(q.value.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        // A tensor renamed or reshaped is rejected.
        let tampered = text.replace("\"embed_w\"", "\"embed_x\"");
        assert!(Model::from_json(&tampered).is_err());
    }

    #[test]
    fn config_json_uses_the_documented_names() {
        let cfg = ModelConfig {
            family: ModelFamily::SoftmaxAttention,
            n_layers: 4,
            d: 4,
            n: 1,
            use_pe: false,
            head: HeadConfig::Classification { classes: 21 },
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"softmax_attention\""), "{text}");
        assert!(text.contains("\"D\":4"), "{text}");
        assert!(text.contains("\"classification\""), "{text}");
        let parsed: ModelConfig = serde_json::from_str(
            r#"{"family":"s6","n_layers":1,"D":2,"N":16,"head":{"type":"regression"}}"#,
        )
        .unwrap();
        assert_eq!(parsed.family, ModelFamily::S6);
        assert_eq!(parsed.n, 16);
        assert!(!parsed.use_pe);
        assert!(serde_json::from_str::<ModelConfig>(
            r#"{"family":"s6","n_layers":1,"D":2,"head":{"type":"regression"},"extra":1}"#
        )
        .is_err());
    }
}



