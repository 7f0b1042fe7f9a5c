//! A small pre-norm GPT-style decoder.
//!
//! Linear weights are stored `[out x in]`, so a row holds every input weight
//! of one output unit. Quantization scales are per row and 2:4 groups run
//! along rows.

mod eval;
mod forward;
mod generate;
mod io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::compress::quant::QuantizedTensor;
use crate::error::{LabError, Result};

pub use eval::{log_softmax_row, mean_nll, perplexity, perplexity_with, PerplexityWindow};
pub use forward::{AttentionTrace, ForwardOutput};
pub use generate::{generate, Decoding};
pub use io::{load_model, read_model, save_model, write_model};

/// Standard deviation of the seeded Gaussian initialization.
pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub context_len: usize,
}

impl ModelConfig {
    /// Two layers, four heads, width 64, byte vocabulary.
    pub fn toy() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            vocab_size: 256,
            context_len: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self;
        if c.n_layers == 0 || c.n_heads == 0 || c.d_model == 0 || c.d_ff == 0 {
            return Err(LabError::domain("layer, head, width and feed-forward counts must be positive"));
        }
        if c.d_model % c.n_heads != 0 {
            return Err(LabError::domain(format!(
                "d_model {} is not divisible by n_heads {}",
                c.d_model, c.n_heads
            )));
        }
        if c.d_model % 4 != 0 || c.d_ff % 4 != 0 {
            return Err(LabError::domain(format!(
                "d_model {} and d_ff {} must be multiples of 4",
                c.d_model, c.d_ff
            )));
        }
        if c.vocab_size < 2 {
            return Err(LabError::domain("vocab_size must be at least 2"));
        }
        if c.context_len == 0 {
            return Err(LabError::domain("context_len must be at least 1"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LabError::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A projection weight, either dense or stored as low-bit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearWeight {
    Dense(Matrix),
    Quantized(QuantizedTensor),
}

impl LinearWeight {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            LinearWeight::Dense(m) => (m.rows, m.cols),
            LinearWeight::Quantized(q) => (q.rows, q.cols),
        }
    }

    /// Dense view; quantized weights are dequantized.
    pub fn to_dense(&self) -> Matrix {
        match self {
            LinearWeight::Dense(m) => m.clone(),
            LinearWeight::Quantized(q) => q.dequantize(),
        }
    }

    pub fn quant_bits(&self) -> Option<u8> {
        match self {
            LinearWeight::Dense(_) => None,
            LinearWeight::Quantized(q) => Some(q.bits.get()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out x in]`
    pub weight: LinearWeight,
    pub bias: Vec<f32>,
}

impl Linear {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: LinearWeight::Dense(Matrix::zeros(out, inp)),
            bias: vec![0.0; out],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape().0
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape().1
    }

    /// `y = W x + b`. Quantized weights are dequantized element by element,
    /// so a quantized layer and its dequantized dense copy agree bit for bit.
    pub fn apply(&self, x: &[f32], y: &mut [f32]) {
        debug_assert_eq!(x.len(), self.in_dim());
        debug_assert_eq!(y.len(), self.out_dim());
        match &self.weight {
            LinearWeight::Dense(w) => {
                for (o, out) in y.iter_mut().enumerate() {
                    let row = w.row(o);
                    let mut acc = 0.0f32;
                    for (wi, xi) in row.iter().zip(x) {
                        acc += wi * xi;
                    }
                    *out = acc + self.bias[o];
                }
            }
            LinearWeight::Quantized(q) => {
                for (o, out) in y.iter_mut().enumerate() {
                    let scale = q.scales[o];
                    let codes = &q.codes[o * q.cols..(o + 1) * q.cols];
                    let mut acc = 0.0f32;
                    for (&c, xi) in codes.iter().zip(x) {
                        acc += (c as f32 * scale) * xi;
                    }
                    *out = acc + self.bias[o];
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerNorm {
    fn identity(d: usize) -> Self {
        Self {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }

    fn zeros(d: usize) -> Self {
        Self {
            gain: vec![0.0; d],
            bias: vec![0.0; d],
        }
    }

    pub fn apply(&self, x: &[f32], y: &mut [f32]) {
        let n = x.len() as f64;
        let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS as f64).sqrt();
        for i in 0..x.len() {
            let norm = ((x[i] as f64 - mean) * inv) as f32;
            y[i] = norm * self.gain[i] + self.bias[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl Block {
    /// The six projections in a fixed order: q, k, v, o, ff_in, ff_out.
    pub fn linears(&self) -> [&Linear; 6] {
        [&self.q, &self.k, &self.v, &self.o, &self.ff_in, &self.ff_out]
    }

    pub fn linears_mut(&mut self) -> [&mut Linear; 6] {
        [
            &mut self.q,
            &mut self.k,
            &mut self.v,
            &mut self.o,
            &mut self.ff_in,
            &mut self.ff_out,
        ]
    }
}

pub const LINEAR_NAMES: [&str; 6] = ["attn.q", "attn.k", "attn.v", "attn.o", "mlp.fc_in", "mlp.fc_out"];

/// Tensors per block in [`tensor_layout`] order.
pub const TENSORS_PER_BLOCK: usize = 16;

/// Names and shapes of every parameter tensor, in file and trainer order:
/// token and position embeddings, then per block `ln_1` (gain, bias), the six
/// projections (weight, bias), `ln_2` (gain, bias), then the final layer norm.
pub fn tensor_layout(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = c.d_model;
    let mut out = vec![
        ("wte".to_string(), vec![c.vocab_size, d]),
        ("wpe".to_string(), vec![c.context_len, d]),
    ];
    let shapes = [(d, d), (d, d), (d, d), (d, d), (c.d_ff, d), (d, c.d_ff)];
    for l in 0..c.n_layers {
        out.push((format!("h.{l}.ln_1.gain"), vec![d]));
        out.push((format!("h.{l}.ln_1.bias"), vec![d]));
        for (name, (rows, cols)) in LINEAR_NAMES.iter().zip(shapes) {
            out.push((format!("h.{l}.{name}.weight"), vec![rows, cols]));
            out.push((format!("h.{l}.{name}.bias"), vec![rows]));
        }
        out.push((format!("h.{l}.ln_2.gain"), vec![d]));
        out.push((format!("h.{l}.ln_2.bias"), vec![d]));
    }
    out.push(("ln_f.gain".to_string(), vec![d]));
    out.push(("ln_f.bias".to_string(), vec![d]));
    out
}

/// Configuration, parameters and per-head pruning mask of a decoder.
///
/// The output head is tied to `token_embedding`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// `[vocab_size x d_model]`
    pub token_embedding: Matrix,
    /// `[context_len x d_model]`
    pub position_embedding: Matrix,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNorm,
    /// `head_mask[layer][head]` is true when the head is pruned.
    pub head_mask: Vec<Vec<bool>>,
}

impl Model {
    /// Every parameter zero, including layer-norm gains: logits and
    /// attention rows come out uniform.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1: LayerNorm::zeros(d),
                q: Linear::zeros(d, d),
                k: Linear::zeros(d, d),
                v: Linear::zeros(d, d),
                o: Linear::zeros(d, d),
                ln2: LayerNorm::zeros(d),
                ff_in: Linear::zeros(config.d_ff, d),
                ff_out: Linear::zeros(d, config.d_ff),
            })
            .collect();
        Ok(Self {
            config,
            token_embedding: Matrix::zeros(config.vocab_size, d),
            position_embedding: Matrix::zeros(config.context_len, d),
            blocks,
            ln_final: LayerNorm::zeros(d),
            head_mask: vec![vec![false; config.n_heads]; config.n_layers],
        })
    }

    /// Gaussian(0, 0.02) matrices, zero biases, unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut fill = |m: &mut Matrix| {
            for v in &mut m.data {
                *v = normal.sample(&mut rng) as f32;
            }
        };
        fill(&mut model.token_embedding);
        fill(&mut model.position_embedding);
        for block in &mut model.blocks {
            block.ln1 = LayerNorm::identity(config.d_model);
            block.ln2 = LayerNorm::identity(config.d_model);
            for lin in block.linears_mut() {
                if let LinearWeight::Dense(m) = &mut lin.weight {
                    fill(m);
                }
            }
        }
        model.ln_final = LayerNorm::identity(config.d_model);
        Ok(model)
    }

    pub fn parameter_count(&self) -> usize {
        let c = &self.config;
        let per_block = 4 * (c.d_model * c.d_model + c.d_model) + 2 * c.d_model * c.d_ff + c.d_ff + c.d_model + 4 * c.d_model;
        c.vocab_size * c.d_model + c.context_len * c.d_model + c.n_layers * per_block + 2 * c.d_model
    }

    pub fn pruned_heads(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (l, heads) in self.head_mask.iter().enumerate() {
            for (h, &pruned) in heads.iter().enumerate() {
                if pruned {
                    out.push((l, h));
                }
            }
        }
        out
    }

    /// Same model with every projection stored densely.
    pub fn dequantized(&self) -> Self {
        let mut m = self.clone();
        for block in &mut m.blocks {
            for lin in block.linears_mut() {
                if let LinearWeight::Quantized(q) = &lin.weight {
                    lin.weight = LinearWeight::Dense(q.dequantize());
                }
            }
        }
        m
    }

    /// Every parameter tensor in [`tensor_layout`] order; quantized
    /// projections are dequantized.
    pub fn to_tensors(&self) -> Vec<Vec<f32>> {
        let mut out = vec![self.token_embedding.data.clone(), self.position_embedding.data.clone()];
        for b in &self.blocks {
            out.push(b.ln1.gain.clone());
            out.push(b.ln1.bias.clone());
            for lin in b.linears() {
                out.push(lin.weight.to_dense().data);
                out.push(lin.bias.clone());
            }
            out.push(b.ln2.gain.clone());
            out.push(b.ln2.bias.clone());
        }
        out.push(self.ln_final.gain.clone());
        out.push(self.ln_final.bias.clone());
        out
    }

    /// Inverse of [`Model::to_tensors`].
    pub fn from_tensors(config: ModelConfig, head_mask: Vec<Vec<bool>>, tensors: Vec<Vec<f32>>) -> Result<Self> {
        let layout = tensor_layout(&config);
        if tensors.len() != layout.len() {
            return Err(LabError::shape(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.len() != shape.iter().product::<usize>() {
                return Err(LabError::shape(format!("tensor {name} has {} values for shape {shape:?}", t.len())));
            }
        }
        if head_mask.len() != config.n_layers || head_mask.iter().any(|h| h.len() != config.n_heads) {
            return Err(LabError::shape("head mask does not match the layer/head layout"));
        }
        let mut model = Self::zeros(config)?;
        model.head_mask = head_mask;
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let d = config.d_model;
        model.token_embedding = Matrix::from_vec(config.vocab_size, d, next())?;
        model.position_embedding = Matrix::from_vec(config.context_len, d, next())?;
        for block in &mut model.blocks {
            block.ln1.gain = next();
            block.ln1.bias = next();
            for lin in block.linears_mut() {
                let (rows, cols) = lin.weight.shape();
                lin.weight = LinearWeight::Dense(Matrix::from_vec(rows, cols, next())?);
                lin.bias = next();
            }
            block.ln2.gain = next();
            block.ln2.bias = next();
        }
        model.ln_final.gain = next();
        model.ln_final.bias = next();
        Ok(model)
    }

    pub(crate) fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(LabError::domain("token sequence is empty"));
        }
        if tokens.len() > self.config.context_len {
            return Err(LabError::domain(format!(
                "sequence of {} tokens exceeds context length {}",
                tokens.len(),
                self.config.context_len
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(LabError::domain(format!(
                "token id {bad} is outside the vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }
}
