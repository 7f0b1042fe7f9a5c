use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

use super::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Extends `prompt` by `steps` tokens. Returns prompt followed by the new tokens.
pub fn generate(model: &Model, prompt: &[u32], steps: usize, mode: Decoding) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(LabError::domain("generation needs a non-empty prompt"));
    }
    if prompt.len() + steps > model.config.context_len {
        return Err(LabError::domain(format!(
            "prompt of {} plus {steps} steps exceeds context length {}",
            prompt.len(),
            model.config.context_len
        )));
    }
    let mut rng = match mode {
        Decoding::Greedy => None,
        Decoding::Sample { temperature, seed } => {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(LabError::domain(format!("temperature must be positive, got {temperature}")));
            }
            Some(ChaCha8Rng::seed_from_u64(seed))
        }
    };

    let mut tokens = prompt.to_vec();
    for _ in 0..steps {
        let out = model.forward(&tokens)?;
        let row = out.logits.row(tokens.len() - 1);
        let next = match (&mut rng, mode) {
            (Some(rng), Decoding::Sample { temperature, .. }) => {
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
                let weights: Vec<f64> = row.iter().map(|&v| ((v as f64 - max) / temperature).exp()).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                pick
            }
            _ => argmax(row),
        };
        tokens.push(next as u32);
    }
    Ok(tokens)
}
