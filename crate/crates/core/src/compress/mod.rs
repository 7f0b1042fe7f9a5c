//! Compression passes: quantization, attention-head pruning, 2:4 magnitude
//! pruning, and their composition into pipelines.

pub mod heads;
pub mod pipeline;
pub mod quant;
pub mod sparsity;

pub use heads::{
    head_concentration, prune_heads, HeadConcentrationReport, HeadScore, MIN_PRIOR_KEYS, THRESHOLD_80, THRESHOLD_90,
};
pub use pipeline::{combination_matrix, compose, standalone_matrix, CompressionPass, PassContext, Pipeline};
pub use quant::{dequantize, quantize_model, quantize_tensor, QuantBits, QuantizedTensor};
pub use sparsity::{prune_2_4, prune_model_2_4};
