//! Attention-head pruning by attention concentration.
//!
//! A head whose queries put most of their attention on a single key is a
//! pruning candidate. The score of a head is the mean, over calibration
//! (sequence, query) pairs, of the largest attention weight in the query row.
//! Queries with fewer than [`MIN_PRIOR_KEYS`] earlier keys are skipped: early
//! rows are concentrated simply because they have little to attend to.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::Model;

/// Earliest query position scored; position `q` sees `q` earlier keys.
pub const MIN_PRIOR_KEYS: usize = 4;

/// The two thresholds studied: over 90% and over 80% on one token.
pub const THRESHOLD_90: f64 = 0.9;
pub const THRESHOLD_80: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub layer: usize,
    pub head: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConcentrationReport {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Number of (sequence, query position) pairs behind each score.
    pub n_samples: usize,
    /// Layer-major.
    pub heads: Vec<HeadScore>,
}

impl HeadConcentrationReport {
    /// Builds a report from `scores[layer][head]`.
    pub fn from_scores(scores: &[Vec<f64>], n_samples: usize) -> Result<Self> {
        let n_layers = scores.len();
        let n_heads = scores.first().map_or(0, Vec::len);
        if n_layers == 0 || n_heads == 0 || scores.iter().any(|s| s.len() != n_heads) {
            return Err(LabError::domain("scores must form a non-empty layer x head grid"));
        }
        if n_samples == 0 {
            return Err(LabError::domain("a report needs at least one sample"));
        }
        let mut heads = Vec::with_capacity(n_layers * n_heads);
        for (layer, row) in scores.iter().enumerate() {
            for (head, &score) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&score) {
                    return Err(LabError::domain(format!(
                        "score {score} for layer {layer} head {head} is outside [0, 1]"
                    )));
                }
                heads.push(HeadScore { layer, head, score });
            }
        }
        Ok(Self {
            n_layers,
            n_heads,
            n_samples,
            heads,
        })
    }

    pub fn score(&self, layer: usize, head: usize) -> f64 {
        self.heads[layer * self.n_heads + head].score
    }

    /// Heads with `score >= threshold`.
    pub fn selected(&self, threshold: f64) -> Vec<(usize, usize)> {
        self.heads
            .iter()
            .filter(|h| h.score >= threshold)
            .map(|h| (h.layer, h.head))
            .collect()
    }
}

pub fn head_concentration(model: &Model, calibration: &[Vec<u32>]) -> Result<HeadConcentrationReport> {
    if calibration.is_empty() {
        return Err(LabError::domain("calibration set is empty"));
    }
    let cfg = &model.config;
    let mut sums = vec![vec![0.0f64; cfg.n_heads]; cfg.n_layers];
    let mut n_samples = 0usize;
    for seq in calibration {
        if seq.len() <= MIN_PRIOR_KEYS {
            continue;
        }
        let trace = model.forward(seq)?.attention;
        for (layer, heads) in trace.maps.iter().enumerate() {
            for (head, attn) in heads.iter().enumerate() {
                for q in MIN_PRIOR_KEYS..attn.rows {
                    let peak = attn.row(q)[..=q].iter().fold(0.0f32, |m, &v| m.max(v));
                    sums[layer][head] += peak as f64;
                }
            }
        }
        n_samples += seq.len() - MIN_PRIOR_KEYS;
    }
    if n_samples == 0 {
        return Err(LabError::domain(format!(
            "every calibration sequence is shorter than {} tokens",
            MIN_PRIOR_KEYS + 1
        )));
    }
    let scores: Vec<Vec<f64>> = sums
        .into_iter()
        .map(|row| row.into_iter().map(|s| (s / n_samples as f64).min(1.0)).collect())
        .collect();
    HeadConcentrationReport::from_scores(&scores, n_samples)
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(LabError::domain(format!("threshold {threshold} must lie in (0, 1]")));
    }
    Ok(())
}

/// Masks every head scoring at or above `threshold`. Already-masked heads stay masked.
pub fn prune_heads(model: &Model, report: &HeadConcentrationReport, threshold: f64) -> Result<Model> {
    check_threshold(threshold)?;
    let cfg = &model.config;
    if report.n_layers != cfg.n_layers || report.n_heads != cfg.n_heads {
        return Err(LabError::domain(format!(
            "report covers {}x{} heads but the model has {}x{}",
            report.n_layers, report.n_heads, cfg.n_layers, cfg.n_heads
        )));
    }
    let mut out = model.clone();
    for (layer, head) in report.selected(threshold) {
        out.head_mask[layer][head] = true;
    }
    Ok(out)
}
