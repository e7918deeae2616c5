//! Convolutional-recurrent network with GLU activations, bidirectional GRU
//! layers and an attention-pooled clip head.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::numkit::ops::{self, pooled_len};
use crate::numkit::{GradTape, GruDirection, NumError, Tensor, Var};

#[derive(Debug, Error)]
pub enum CrnnError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input has {got} mel bands, model expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrnnConfig {
    /// Width of the input feature matrix.
    pub n_mels: usize,
    pub conv_filters: Vec<usize>,
    /// `[time, frequency]` pooling per conv layer.
    pub pool_sizes: Vec<[usize; 2]>,
    pub kernel_size: usize,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub n_classes: usize,
    /// Dropout on the recurrent input, training only.
    pub dropout: f64,
}

impl Default for CrnnConfig {
    fn default() -> Self {
        Self::desk(16, 4)
    }
}

impl CrnnConfig {
    /// Seven GLU conv blocks, two 128-unit bidirectional GRU layers.
    pub fn full_scale(n_mels: usize, n_classes: usize) -> Self {
        CrnnConfig {
            n_mels,
            conv_filters: vec![16, 32, 64, 128, 128, 128, 128],
            pool_sizes: vec![[2, 2], [2, 2], [1, 2], [1, 2], [1, 2], [1, 2], [1, 2]],
            kernel_size: 3,
            gru_layers: 2,
            gru_hidden: 128,
            n_classes,
            dropout: 0.0,
        }
    }

    /// Two conv blocks and one 16-unit GRU layer.
    pub fn desk(n_mels: usize, n_classes: usize) -> Self {
        CrnnConfig {
            n_mels,
            conv_filters: vec![8, 16],
            pool_sizes: vec![[2, 2], [2, 2]],
            kernel_size: 3,
            gru_layers: 1,
            gru_hidden: 16,
            n_classes,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), CrnnError> {
        let bad = |m: String| Err(CrnnError::Config(m));
        if self.conv_filters.len() != self.pool_sizes.len() {
            return bad(format!(
                "{} conv layers but {} pool sizes",
                self.conv_filters.len(),
                self.pool_sizes.len()
            ));
        }
        if self.n_classes == 0 {
            return bad("n_classes must be >= 1".into());
        }
        if self.n_mels == 0 || self.gru_hidden == 0 || self.gru_layers == 0 {
            return bad("n_mels, gru_hidden and gru_layers must be >= 1".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size {} must be odd", self.kernel_size));
        }
        if self.conv_filters.iter().any(|&f| f == 0) || self.pool_sizes.iter().flatten().any(|&p| p == 0) {
            return bad("filters and pool sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Product of the time pooling factors.
    pub fn time_pool_factor(&self) -> usize {
        self.pool_sizes.iter().map(|p| p[0]).product()
    }

    /// Output frames for `n_frames` input frames (partial windows kept).
    pub fn output_frames(&self, n_frames: usize) -> usize {
        self.pool_sizes.iter().fold(n_frames, |t, p| pooled_len(t, p[0]))
    }

    fn pooled_bands(&self) -> usize {
        self.pool_sizes.iter().fold(self.n_mels, |f, p| pooled_len(f, p[1]))
    }

    /// Width of the sequence entering the first GRU layer.
    pub fn gru_input(&self) -> usize {
        self.conv_filters.last().copied().unwrap_or(1) * self.pooled_bands()
    }

    /// Width of the recurrent output seen by the heads.
    pub fn head_input(&self) -> usize {
        2 * self.gru_hidden
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `[2 * filters, c_in, k, k]`; the GLU splits the output channels.
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiGruLayer {
    pub fwd: GruDirection,
    pub bwd: GruDirection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    pub bias: Tensor,
}

/// All trainable weights of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct CrnnParams {
    config: CrnnConfig,
    pub conv: Vec<ConvLayer>,
    pub gru: Vec<BiGruLayer>,
    /// Per-frame sigmoid classifier; doubles as the value branch of the
    /// attention pooling.
    pub frame_head: Dense,
    /// Softmax-over-time weighting branch.
    pub attention_head: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// `[T', n_classes]`
    pub frame_probs: Tensor,
    /// `[n_classes]`
    pub clip_probs: Tensor,
}

impl Predictions {
    pub fn n_frames(&self) -> usize {
        self.frame_probs.dim(0)
    }
}

fn shapes(cfg: &CrnnConfig) -> Vec<Vec<usize>> {
    let k = cfg.kernel_size;
    let mut out = Vec::new();
    let mut c_in = 1;
    for &f in &cfg.conv_filters {
        out.push(vec![2 * f, c_in, k, k]);
        out.push(vec![2 * f]);
        c_in = f;
    }
    let h = cfg.gru_hidden;
    let mut d = cfg.gru_input();
    for _ in 0..cfg.gru_layers {
        for _ in 0..2 {
            out.push(vec![3 * h, d]);
            out.push(vec![3 * h, h]);
            out.push(vec![3 * h]);
            out.push(vec![3 * h]);
        }
        d = 2 * h;
    }
    for _ in 0..2 {
        out.push(vec![cfg.n_classes, cfg.head_input()]);
        out.push(vec![cfg.n_classes]);
    }
    out
}

impl CrnnParams {
    pub fn config(&self) -> &CrnnConfig {
        &self.config
    }

    /// Rebuilds parameters from tensors in [`CrnnParams::tensors`] order.
    pub fn from_tensors(config: CrnnConfig, tensors: Vec<Tensor>) -> Result<Self, CrnnError> {
        config.validate()?;
        let expected = shapes(&config);
        if tensors.len() != expected.len() {
            return Err(CrnnError::Config(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (i, (t, s)) in tensors.iter().zip(&expected).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(CrnnError::Config(format!(
                    "tensor {i} has shape {:?}, expected {s:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let conv = (0..config.conv_filters.len())
            .map(|_| ConvLayer { kernel: next(), bias: next() })
            .collect();
        let mut dir = || GruDirection { w_ih: next(), w_hh: next(), b_ih: next(), b_hh: next() };
        let gru = (0..config.gru_layers).map(|_| BiGruLayer { fwd: dir(), bwd: dir() }).collect();
        let frame_head = Dense { weight: next(), bias: next() };
        let attention_head = Dense { weight: next(), bias: next() };
        Ok(CrnnParams { config, conv, gru, frame_head, attention_head })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for c in &self.conv {
            v.push(&c.kernel);
            v.push(&c.bias);
        }
        for l in &self.gru {
            for d in [&l.fwd, &l.bwd] {
                v.extend([&d.w_ih, &d.w_hh, &d.b_ih, &d.b_hh]);
            }
        }
        v.extend([&self.frame_head.weight, &self.frame_head.bias]);
        v.extend([&self.attention_head.weight, &self.attention_head.bias]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for c in &mut self.conv {
            v.push(&mut c.kernel);
            v.push(&mut c.bias);
        }
        for l in &mut self.gru {
            for d in [&mut l.fwd, &mut l.bwd] {
                v.extend([&mut d.w_ih, &mut d.w_hh, &mut d.b_ih, &mut d.b_hh]);
            }
        }
        v.extend([&mut self.frame_head.weight, &mut self.frame_head.bias]);
        v.extend([&mut self.attention_head.weight, &mut self.attention_head.bias]);
        v
    }

    /// Stable names matching [`CrnnParams::tensors`] order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..self.conv.len() {
            v.push(format!("conv{i}.kernel"));
            v.push(format!("conv{i}.bias"));
        }
        for i in 0..self.gru.len() {
            for d in ["fwd", "bwd"] {
                for p in ["w_ih", "w_hh", "b_ih", "b_hh"] {
                    v.push(format!("gru{i}.{d}.{p}"));
                }
            }
        }
        v.extend(["frame_head.weight", "frame_head.bias"].map(String::from));
        v.extend(["attention_head.weight", "attention_head.bias"].map(String::from));
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Zero-valued tensors with the same layout (optimizer buffers).
    pub fn zeros_like(&self) -> CrnnParams {
        let tensors = self.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        CrnnParams::from_tensors(self.config.clone(), tensors).expect("same layout")
    }
}

/// Seeded uniform fan-in initialisation; identical `(cfg, seed)` gives
/// bit-identical parameters.
pub fn init_params(cfg: &CrnnConfig, seed: u64) -> Result<CrnnParams, CrnnError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = shapes(cfg)
        .into_iter()
        .enumerate()
        .map(|(i, shape)| {
            let bound = 1.0 / (fan_in(cfg, i, &shape) as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::new(shape, data).expect("shape product")
        })
        .collect();
    CrnnParams::from_tensors(cfg.clone(), tensors)
}

fn fan_in(cfg: &CrnnConfig, index: usize, shape: &[usize]) -> usize {
    let n_conv = 2 * cfg.conv_filters.len();
    if index < n_conv {
        // kernel and bias of the same layer share the kernel's fan-in
        let k = cfg.kernel_size * cfg.kernel_size;
        let c_in = if index / 2 == 0 { 1 } else { cfg.conv_filters[index / 2 - 1] };
        c_in * k
    } else if index < n_conv + 8 * cfg.gru_layers {
        cfg.gru_hidden
    } else if shape.len() == 2 {
        shape[1]
    } else {
        cfg.head_input()
    }
}

/// Options for a single forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    /// Standard deviation of i.i.d. Gaussian noise added to the input.
    pub noise_std: f64,
    pub noise_seed: u64,
    /// Seed for the dropout mask; `None` disables dropout (inference).
    pub dropout_seed: Option<u64>,
}

/// Handles to the graph built by [`forward_on_tape`].
pub struct TapeOutputs {
    pub frame_probs: Var,
    pub clip_probs: Var,
    /// One entry per tensor in [`CrnnParams::tensors`] order.
    pub params: Vec<Var>,
}

fn input_tensor(
    cfg: &CrnnConfig,
    features: &FeatureMatrix,
    opts: &ForwardOptions,
) -> Result<Tensor, CrnnError> {
    if features.n_mels != cfg.n_mels {
        return Err(CrnnError::InputWidth { expected: cfg.n_mels, got: features.n_mels });
    }
    let mut data = features.data.clone();
    if opts.noise_std > 0.0 {
        let normal = Normal::new(0.0, opts.noise_std)
            .map_err(|e| CrnnError::Config(format!("noise_std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.noise_seed);
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(Tensor::new(vec![1, features.n_frames, features.n_mels], data)?)
}

/// Records the full network on `tape`. With `trainable` the parameters are
/// registered as trainable leaves, otherwise as constants.
pub fn forward_on_tape(
    tape: &mut GradTape,
    params: &CrnnParams,
    features: &FeatureMatrix,
    opts: &ForwardOptions,
    trainable: bool,
) -> Result<TapeOutputs, CrnnError> {
    let cfg = params.config();
    let x = input_tensor(cfg, features, opts)?;
    let vars: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
        .collect();
    let mut h = tape.constant(x);
    let mut idx = 0;
    for pool in &cfg.pool_sizes {
        let c = tape.conv2d(h, vars[idx], vars[idx + 1])?;
        let g = tape.glu(c)?;
        h = tape.max_pool2d(g, (pool[0], pool[1]))?;
        idx += 2;
    }
    let mut seq = tape.to_sequence(h)?;
    if let (Some(seed), true) = (opts.dropout_seed, cfg.dropout > 0.0) {
        let n = tape.value(seq).len();
        let keep = 1.0 - cfg.dropout;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        seq = tape.mask(seq, mask)?;
    }
    for _ in 0..cfg.gru_layers {
        let f = [vars[idx], vars[idx + 1], vars[idx + 2], vars[idx + 3]];
        let b = [vars[idx + 4], vars[idx + 5], vars[idx + 6], vars[idx + 7]];
        seq = tape.bigru(seq, f, b)?;
        idx += 8;
    }
    let frame_logits = tape.linear(seq, vars[idx], vars[idx + 1])?;
    let frame_probs = tape.sigmoid(frame_logits);
    let att_logits = tape.linear(seq, vars[idx + 2], vars[idx + 3])?;
    let clip_probs = tape.attention_pool(att_logits, frame_probs)?;
    Ok(TapeOutputs { frame_probs, clip_probs, params: vars })
}

/// Inference forward pass (no dropout). With `noise_std > 0`, Gaussian
/// noise drawn from `rng_seed` is added to the input features.
pub fn forward(
    params: &CrnnParams,
    features: &FeatureMatrix,
    noise_std: f64,
    rng_seed: u64,
) -> Result<Predictions, CrnnError> {
    let opts = ForwardOptions { noise_std, noise_seed: rng_seed, dropout_seed: None };
    let mut tape = GradTape::new();
    let out = forward_on_tape(&mut tape, params, features, &opts, false)?;
    Ok(Predictions {
        frame_probs: tape.value(out.frame_probs).clone(),
        clip_probs: tape.value(out.clip_probs).clone(),
    })
}

/// Clip probabilities from recurrent features `[T', D]`:
/// `Σ_t softmax_t(attention_head(x)) · sigmoid(frame_head(x))`.
pub fn attention_pool(
    frame_feats: &Tensor,
    attention_head: &Dense,
    frame_head: &Dense,
) -> Result<Tensor, CrnnError> {
    if frame_feats.rank() != 2 || frame_feats.dim(0) == 0 {
        return Err(NumError::Shape {
            op: "attention_pool",
            msg: format!("need at least one frame, got {:?}", frame_feats.shape()),
        }
        .into());
    }
    let logits = ops::linear(frame_feats, &attention_head.weight, &attention_head.bias)?;
    let probs = ops::sigmoid(&ops::linear(frame_feats, &frame_head.weight, &frame_head.bias)?);
    Ok(ops::attention_pool_weights(&logits, &probs)?.0)
}
