//! Shared fixtures for tests, examples and the CLI.

use crate::model::{LinearWeight, Model, ModelConfig};
use crate::tokenizer;

/// Text corpus shipped with the crate.
pub const BUNDLED_CORPUS: &str = include_str!("../data/corpus.txt");

pub fn bundled_tokens() -> Vec<u32> {
    tokenizer::tokenize(BUNDLED_CORPUS.as_bytes())
}

const HEAD_DIM: usize = 8;
const SHARPNESS: f32 = 30.0;

/// Balanced +-1 patterns of length 8, in increasing bitmask order.
fn balanced_patterns(n: usize) -> Vec<[f32; HEAD_DIM]> {
    (0u32..256)
        .filter(|m| m.count_ones() == 4)
        .take(n)
        .map(|m| {
            let mut p = [0.0; HEAD_DIM];
            for (i, v) in p.iter_mut().enumerate() {
                *v = if m >> i & 1 == 1 { 1.0 } else { -1.0 };
            }
            p
        })
        .collect()
}

/// One-layer model where head `h` attends one-hot to the current position
/// when `concentrated[h]` is true and uniformly otherwise.
///
/// Each position embedding repeats a distinct balanced +-1 pattern in every
/// head span, so layer norm leaves it unchanged, and concentrated heads use
/// `q = k = 30 x` on their span. Self-scores then beat every other key by
/// more than 1000 nats and the softmax saturates exactly.
pub fn concentrated_model(concentrated: &[bool]) -> Model {
    let n_heads = concentrated.len();
    let d = HEAD_DIM * n_heads;
    let config = ModelConfig {
        n_layers: 1,
        n_heads,
        d_model: d,
        d_ff: 8,
        vocab_size: 16,
        context_len: 16,
    };
    let mut m = Model::zeros(config).expect("valid fixture config");
    let patterns = balanced_patterns(config.context_len);
    for (t, p) in patterns.iter().enumerate() {
        let row = m.position_embedding.row_mut(t);
        for h in 0..n_heads {
            row[h * HEAD_DIM..(h + 1) * HEAD_DIM].copy_from_slice(p);
        }
    }
    let block = &mut m.blocks[0];
    block.ln1.gain.fill(1.0);
    for (h, &on) in concentrated.iter().enumerate() {
        if !on {
            continue;
        }
        for lin in [&mut block.q, &mut block.k] {
            if let LinearWeight::Dense(w) = &mut lin.weight {
                for i in h * HEAD_DIM..(h + 1) * HEAD_DIM {
                    w.row_mut(i)[i] = SHARPNESS;
                }
            }
        }
    }
    m
}
