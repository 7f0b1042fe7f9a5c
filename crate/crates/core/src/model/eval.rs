use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

use super::{Matrix, Model};

/// Log-softmax of one logit row, accumulated in 64-bit.
pub fn log_softmax_row(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v as f64 - lse).collect()
}

/// Mean over positions of `-log softmax(logits[t])[targets[t]]`, in nats.
pub fn mean_nll(logits: &Matrix, targets: &[u32]) -> Result<f64> {
    Ok(nll_sum(logits, targets)? / targets.len() as f64)
}

fn nll_sum(logits: &Matrix, targets: &[u32]) -> Result<f64> {
    if logits.rows != targets.len() {
        return Err(LabError::domain(format!(
            "{} logit rows but {} targets",
            logits.rows,
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(LabError::domain("no targets to score"));
    }
    let mut total = 0.0;
    for (t, &target) in targets.iter().enumerate() {
        let row = logits.row(t);
        let target = target as usize;
        if target >= row.len() {
            return Err(LabError::domain(format!("target {target} outside {} classes", row.len())));
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        total += lse - row[target] as f64;
    }
    Ok(total)
}

/// Windowing for corpus perplexity. Each window feeds up to `window` tokens
/// and predicts the token after each of them; windows start every `stride`
/// tokens and only targets not already scored by an earlier window count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerplexityWindow {
    pub window: usize,
    pub stride: usize,
}

impl PerplexityWindow {
    /// Non-overlapping windows of the full context.
    pub fn non_overlapping(context_len: usize) -> Self {
        Self {
            window: context_len,
            stride: context_len,
        }
    }
}

/// Perplexity with non-overlapping windows of the model's context length.
pub fn perplexity(model: &Model, corpus: &[u32]) -> Result<f64> {
    perplexity_with(model, corpus, PerplexityWindow::non_overlapping(model.config.context_len))
}

pub fn perplexity_with(model: &Model, corpus: &[u32], w: PerplexityWindow) -> Result<f64> {
    if corpus.len() < 2 {
        return Err(LabError::domain("perplexity needs a corpus of at least 2 tokens"));
    }
    if w.window == 0 || w.window > model.config.context_len {
        return Err(LabError::domain(format!(
            "window {} must be in 1..={}",
            w.window, model.config.context_len
        )));
    }
    if w.stride == 0 || w.stride > w.window {
        return Err(LabError::domain(format!("stride {} must be in 1..={}", w.stride, w.window)));
    }

    let last_target = corpus.len() - 1;
    // Index of the last corpus position already scored; position 0 is never a target.
    let mut scored_to = 0usize;
    let mut total = 0.0f64;
    let mut count = 0usize;
    let mut begin = 0usize;
    while scored_to < last_target {
        let len = w.window.min(last_target - begin);
        let out = model.forward(&corpus[begin..begin + len])?;
        for i in 0..len {
            let target_pos = begin + 1 + i;
            if target_pos <= scored_to {
                continue;
            }
            let row = out.logits.row(i);
            let lsm = log_softmax_row(row);
            total -= lsm[corpus[target_pos] as usize];
            count += 1;
        }
        scored_to = begin + len;
        begin += w.stride;
    }
    Ok((total / count as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn uniform_logits_give_ln_vocab() {
        let logits = Matrix::zeros(3, 256);
        let nll = mean_nll(&logits, &[1, 2, 3]).unwrap();
        assert!((nll - (256f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_gives_zero() {
        let mut logits = Matrix::zeros(1, 4);
        logits.row_mut(0)[2] = 1000.0;
        assert!(mean_nll(&logits, &[2]).unwrap() < 1e-12);
    }

    #[test]
    fn three_class_hand_value() {
        let logits = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        // -ln(e^3 / (e + e^2 + e^3))
        let want = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        let got = mean_nll(&logits, &[2]).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.40761).abs() < 1e-5);
    }

    #[test]
    fn shift_invariance() {
        let a = Matrix::from_vec(2, 3, vec![0.25, -1.25, 2.0, 0.5, 0.5, 0.125]).unwrap();
        let mut b = a.clone();
        for v in b.row_mut(0) {
            *v += 7.0;
        }
        let (x, y) = (mean_nll(&a, &[0, 2]).unwrap(), mean_nll(&b, &[0, 2]).unwrap());
        assert!((x - y).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch() {
        assert!(mean_nll(&Matrix::zeros(2, 3), &[1]).is_err());
    }

    #[test]
    fn uniform_model_perplexity_is_vocab() {
        let cfg = ModelConfig {
            context_len: 16,
            ..ModelConfig::toy()
        };
        let m = Model::zeros(cfg).unwrap();
        let corpus: Vec<u32> = (0..50u32).map(|i| (i * 37) % 256).collect();
        for w in [PerplexityWindow::non_overlapping(16), PerplexityWindow { window: 8, stride: 3 }] {
            let p = perplexity_with(&m, &corpus, w).unwrap();
            assert!((p - 256.0).abs() / 256.0 < 1e-6);
        }
    }

    #[test]
    fn window_validation() {
        let m = Model::zeros(ModelConfig::toy()).unwrap();
        assert!(perplexity(&m, &[1]).is_err());
        assert!(perplexity_with(&m, &[1, 2, 3], PerplexityWindow { window: 65, stride: 1 }).is_err());
        assert!(perplexity_with(&m, &[1, 2, 3], PerplexityWindow { window: 4, stride: 5 }).is_err());
        assert!(perplexity_with(&m, &[1, 2, 3], PerplexityWindow { window: 4, stride: 0 }).is_err());
    }
}
