use crate::error::Result;

use super::{Matrix, Model};

/// Attention probabilities of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub seq_len: usize,
    /// `maps[layer][head]` is `[seq x seq]`: rows are queries, columns keys.
    pub maps: Vec<Vec<Matrix>>,
}

impl AttentionTrace {
    pub fn head(&self, layer: usize, head: usize) -> &Matrix {
        &self.maps[layer][head]
    }

    pub fn n_layers(&self) -> usize {
        self.maps.len()
    }

    pub fn n_heads(&self) -> usize {
        self.maps.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[seq x vocab]`
    pub logits: Matrix,
    pub attention: AttentionTrace,
}

pub(crate) fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

impl Model {
    /// Causal forward pass over `tokens`.
    pub fn forward(&self, tokens: &[u32]) -> Result<ForwardOutput> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let (n, d, dh) = (tokens.len(), cfg.d_model, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x: Vec<Vec<f32>> = tokens
            .iter()
            .enumerate()
            .map(|(t, &tok)| {
                self.token_embedding
                    .row(tok as usize)
                    .iter()
                    .zip(self.position_embedding.row(t))
                    .map(|(a, b)| a + b)
                    .collect()
            })
            .collect();

        let mut normed = vec![0.0f32; d];
        let mut q = vec![vec![0.0f32; d]; n];
        let mut k = vec![vec![0.0f32; d]; n];
        let mut v = vec![vec![0.0f32; d]; n];
        let mut ctx = vec![vec![0.0f32; d]; n];
        let mut proj = vec![0.0f32; d];
        let mut hidden = vec![0.0f32; cfg.d_ff];
        let mut scores = vec![0.0f64; n];
        let mut maps = Vec::with_capacity(cfg.n_layers);

        for (layer, block) in self.blocks.iter().enumerate() {
            for t in 0..n {
                block.ln1.apply(&x[t], &mut normed);
                block.q.apply(&normed, &mut q[t]);
                block.k.apply(&normed, &mut k[t]);
                block.v.apply(&normed, &mut v[t]);
            }

            let mut layer_maps = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let span = head * dh..(head + 1) * dh;
                let mut attn = Matrix::zeros(n, n);
                let masked = self.head_mask[layer][head];
                for qi in 0..n {
                    let qv = &q[qi][span.clone()];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..=qi {
                        let dot: f64 = qv
                            .iter()
                            .zip(&k[j][span.clone()])
                            .map(|(a, b)| *a as f64 * *b as f64)
                            .sum();
                        scores[j] = dot * scale;
                        max = max.max(scores[j]);
                    }
                    let mut total = 0.0f64;
                    for s in scores.iter_mut().take(qi + 1) {
                        *s = (*s - max).exp();
                        total += *s;
                    }
                    let row = attn.row_mut(qi);
                    for j in 0..=qi {
                        row[j] = (scores[j] / total) as f32;
                    }

                    let out = &mut ctx[qi][span.clone()];
                    out.fill(0.0);
                    if masked {
                        continue;
                    }
                    for j in 0..=qi {
                        let a = row[j];
                        for (o, vv) in out.iter_mut().zip(&v[j][span.clone()]) {
                            *o += a * vv;
                        }
                    }
                }
                layer_maps.push(attn);
            }
            maps.push(layer_maps);

            for t in 0..n {
                block.o.apply(&ctx[t], &mut proj);
                for (xi, p) in x[t].iter_mut().zip(&proj) {
                    *xi += p;
                }
                block.ln2.apply(&x[t], &mut normed);
                block.ff_in.apply(&normed, &mut hidden);
                for h in hidden.iter_mut() {
                    *h = gelu(*h);
                }
                block.ff_out.apply(&hidden, &mut proj);
                for (xi, p) in x[t].iter_mut().zip(&proj) {
                    *xi += p;
                }
            }
        }

        let mut logits = Matrix::zeros(n, cfg.vocab_size);
        for t in 0..n {
            self.ln_final.apply(&x[t], &mut normed);
            let row = logits.row_mut(t);
            for (tok, out) in row.iter_mut().enumerate() {
                *out = self
                    .token_embedding
                    .row(tok)
                    .iter()
                    .zip(&normed)
                    .map(|(e, h)| e * h)
                    .sum();
            }
        }

        Ok(ForwardOutput {
            logits,
            attention: AttentionTrace { seq_len: n, maps },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn small() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: 11,
            context_len: 9,
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Model::zeros(small()).unwrap();
        let out = m.forward(&[1, 2, 3, 4, 5]).unwrap();
        assert!(out.logits.data.iter().all(|&v| v == 0.0));
        for layer in &out.attention.maps {
            for a in layer {
                for q in 0..5 {
                    for j in 0..5 {
                        let want = if j <= q { 1.0 / (q as f32 + 1.0) } else { 0.0 };
                        assert!((a.get(q, j) - want).abs() < 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        let m = Model::init(small(), 5).unwrap();
        let out = m.forward(&[7]).unwrap();
        for layer in &out.attention.maps {
            for a in layer {
                assert_eq!(a.data, vec![1.0]);
            }
        }
    }

    #[test]
    fn rows_are_causal_distributions() {
        let m = Model::init(small(), 9).unwrap();
        let out = m.forward(&[3, 1, 4, 1, 5, 9, 2, 6, 5]).unwrap();
        for layer in &out.attention.maps {
            for a in layer {
                for q in 0..a.rows {
                    let s: f32 = a.row(q).iter().sum();
                    assert!((s - 1.0).abs() < 1e-5);
                    assert!(a.row(q)[q + 1..].iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let m = Model::init(small(), 1).unwrap();
        assert!(m.forward(&[]).is_err());
        assert!(m.forward(&[11]).is_err());
        assert!(m.forward(&[0; 10]).is_err());
    }

    #[test]
    fn deterministic() {
        let m = Model::init(small(), 2).unwrap();
        let a = m.forward(&[1, 2, 3]).unwrap();
        let b = m.forward(&[1, 2, 3]).unwrap();
        assert_eq!(a, b);
    }
}
