//! Central finite-difference checks of analytic gradients.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{LabError, Result};

use super::backprop::{backward, batch_loss, Example};
use super::loss::{cross_entropy_grad, LossSpec};
use super::params::Params;

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait Differentiable {
    fn parameters(&self) -> Vec<f64>;
    /// Named groups of flat indices; each group is sampled separately.
    fn classes(&self) -> Vec<(String, Vec<Range<usize>>)>;
    fn loss(&self, flat: &[f64]) -> Result<f64>;
    fn loss_and_grad(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCheck {
    pub class: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)`
    pub max_rel_error: f64,
    pub checked: usize,
    pub epsilon: f64,
    pub classes: Vec<ClassCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the analytic gradient with central differences on up to
/// `sample_size` seeded random coordinates from every class.
pub fn grad_check(f: &dyn Differentiable, epsilon: f64, sample_size: usize, seed: u64) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(LabError::domain(format!("epsilon {epsilon} must be positive")));
    }
    let base = f.parameters();
    let (_, grad) = f.loss_and_grad(&base)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        epsilon,
        classes: Vec::new(),
    };
    for (class, ranges) in f.classes() {
        let indices: Vec<usize> = ranges.into_iter().flatten().collect();
        if indices.is_empty() {
            continue;
        }
        let take = sample_size.min(indices.len());
        let mut check = ClassCheck {
            class,
            checked: take,
            max_rel_error: 0.0,
        };
        let mut point = base.clone();
        for _ in 0..take {
            let i = indices[rng.random_range(0..indices.len())];
            point[i] = base[i] + epsilon;
            let up = f.loss(&point)?;
            point[i] = base[i] - epsilon;
            let down = f.loss(&point)?;
            point[i] = base[i];
            let numeric = (up - down) / (2.0 * epsilon);
            check.max_rel_error = check.max_rel_error.max(relative_error(grad[i], numeric));
        }
        report.checked += take;
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.classes.push(check);
    }
    Ok(report)
}

/// The transformer loss on a fixed batch, as a function of its parameters.
pub struct ModelObjective<'a> {
    pub params: &'a Params,
    pub batch: &'a [Example],
    pub spec: LossSpec,
}

impl Differentiable for ModelObjective<'_> {
    fn parameters(&self) -> Vec<f64> {
        self.params.flatten()
    }

    fn classes(&self) -> Vec<(String, Vec<Range<usize>>)> {
        self.params
            .class_ranges()
            .into_iter()
            .map(|(c, r)| (format!("{c:?}").to_lowercase(), r))
            .collect()
    }

    fn loss(&self, flat: &[f64]) -> Result<f64> {
        batch_loss(&self.params.with_flat(flat)?, self.batch, &self.spec)
    }

    fn loss_and_grad(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (loss, g) = backward(&self.params.with_flat(flat)?, self.batch, &self.spec)?;
        Ok((loss, g.flatten()))
    }
}

/// Softmax regression: logits `W x`, `W` is `[classes x inputs]`, mean
/// cross-entropy over the rows of `inputs`.
pub struct LinearSoftmax {
    pub weights: Vec<f64>,
    pub n_classes: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<u32>,
}

impl LinearSoftmax {
    fn logits(&self, w: &[f64]) -> Vec<f64> {
        let d = self.inputs.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(self.inputs.len() * self.n_classes);
        for x in &self.inputs {
            for c in 0..self.n_classes {
                out.push(w[c * d..(c + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum());
            }
        }
        out
    }
}

impl Differentiable for LinearSoftmax {
    fn parameters(&self) -> Vec<f64> {
        self.weights.clone()
    }

    fn classes(&self) -> Vec<(String, Vec<Range<usize>>)> {
        vec![("weights".into(), vec![0..self.weights.len()])]
    }

    fn loss(&self, flat: &[f64]) -> Result<f64> {
        Ok(cross_entropy_grad(&self.logits(flat), &self.targets, self.n_classes)?.0)
    }

    fn loss_and_grad(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (loss, dz) = cross_entropy_grad(&self.logits(flat), &self.targets, self.n_classes)?;
        let d = self.inputs.first().map_or(0, Vec::len);
        let mut grad = vec![0.0; flat.len()];
        for (r, x) in self.inputs.iter().enumerate() {
            for c in 0..self.n_classes {
                let g = dz[r * self.n_classes + c];
                for (gi, xi) in grad[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *gi += g * xi;
                }
            }
        }
        Ok((loss, grad))
    }
}
