//! Distillation and language-modelling losses on logit rows.
//!
//! Every loss is a mean over positions. The `_grad` variants also return the
//! gradient with respect to the student logits, laid out like the input.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::Matrix;

/// Training objective for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Objective {
    /// Next-token cross-entropy against the corpus.
    CrossEntropy,
    /// `T^2 KL(teacher || student)` on temperature-softened distributions.
    ForwardKld { temperature: f64 },
    /// `T^2 KL(student || teacher)`, the mode-seeking direction.
    ReverseKld { temperature: f64 },
}

/// An objective plus the weight of ground-truth cross-entropy mixed into it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub objective: Objective,
    /// `loss = (1 - lambda) * kld + lambda * ce`; ignored for cross-entropy.
    pub ce_mix_lambda: f64,
}

impl LossSpec {
    pub fn cross_entropy() -> Self {
        Self {
            objective: Objective::CrossEntropy,
            ce_mix_lambda: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.objective {
            Objective::ForwardKld { temperature } | Objective::ReverseKld { temperature } => {
                check_temperature(temperature)?
            }
            Objective::CrossEntropy => {}
        }
        if !(0.0..=1.0).contains(&self.ce_mix_lambda) {
            return Err(LabError::domain(format!(
                "ce_mix_lambda {} must lie in [0, 1]",
                self.ce_mix_lambda
            )));
        }
        Ok(())
    }

    pub fn needs_teacher(&self) -> bool {
        !matches!(self.objective, Objective::CrossEntropy) && self.ce_mix_lambda < 1.0
    }

    /// Loss and logit gradient for one sequence. `student` and `teacher` are
    /// `[n x vocab]` row-major; `targets` has `n` entries.
    pub fn evaluate(
        &self,
        student: &[f64],
        teacher: Option<&[f64]>,
        targets: &[u32],
        vocab: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let kld = |t: f64, reverse: bool| -> Result<(f64, Vec<f64>)> {
            let teacher = teacher.ok_or_else(|| LabError::domain("distillation loss needs teacher logits"))?;
            kld_grad(teacher, student, vocab, t, reverse)
        };
        let lambda = self.ce_mix_lambda;
        let (kd, w) = match self.objective {
            Objective::CrossEntropy => return cross_entropy_grad(student, targets, vocab),
            Objective::ForwardKld { temperature } if lambda < 1.0 => (kld(temperature, false)?, 1.0 - lambda),
            Objective::ReverseKld { temperature } if lambda < 1.0 => (kld(temperature, true)?, 1.0 - lambda),
            _ => return cross_entropy_grad(student, targets, vocab),
        };
        if lambda == 0.0 {
            return Ok(kd);
        }
        let (ce, ce_grad) = cross_entropy_grad(student, targets, vocab)?;
        let grad = kd.1.iter().zip(&ce_grad).map(|(a, b)| w * a + lambda * b).collect();
        Ok((w * kd.0 + lambda * ce, grad))
    }
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(LabError::domain(format!("temperature {t} must be positive and finite")));
    }
    Ok(())
}

/// Log-softmax of `row / t`.
fn log_softmax_scaled(row: &[f64], t: f64) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / t));
    let lse = row.iter().map(|&v| (v / t - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&v| v / t - lse).collect()
}

fn check_rows(teacher_len: usize, student_len: usize, vocab: usize) -> Result<usize> {
    if vocab == 0 || student_len == 0 || student_len % vocab != 0 {
        return Err(LabError::domain(format!(
            "{student_len} logits do not form rows of width {vocab}"
        )));
    }
    if teacher_len != student_len {
        return Err(LabError::domain(format!(
            "teacher has {teacher_len} logits but student has {student_len}"
        )));
    }
    Ok(student_len / vocab)
}

/// KL divergence between softened teacher and student rows, scaled by `T^2`
/// and averaged over rows, with its gradient on the student logits.
/// `reverse` selects `KL(student || teacher)`.
pub fn kld_grad(teacher: &[f64], student: &[f64], vocab: usize, t: f64, reverse: bool) -> Result<(f64, Vec<f64>)> {
    check_temperature(t)?;
    let n = check_rows(teacher.len(), student.len(), vocab)?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; student.len()];
    for (r, g) in grad.chunks_exact_mut(vocab).enumerate() {
        let lp = log_softmax_scaled(&teacher[r * vocab..(r + 1) * vocab], t);
        let lq = log_softmax_scaled(&student[r * vocab..(r + 1) * vocab], t);
        if reverse {
            // d/du sum q (log q - log p) = q (r - E_q r), r = log q - log p
            let mut kl = 0.0;
            for i in 0..vocab {
                kl += lq[i].exp() * (lq[i] - lp[i]);
            }
            for i in 0..vocab {
                g[i] = t * lq[i].exp() * ((lq[i] - lp[i]) - kl) / n as f64;
            }
            loss += kl;
        } else {
            for i in 0..vocab {
                let p = lp[i].exp();
                if p > 0.0 {
                    loss += p * (lp[i] - lq[i]);
                }
                g[i] = t * (lq[i].exp() - p) / n as f64;
            }
        }
    }
    Ok((t * t * loss / n as f64, grad))
}

/// Mean next-token cross-entropy and its gradient `(softmax - onehot) / n`.
pub fn cross_entropy_grad(logits: &[f64], targets: &[u32], vocab: usize) -> Result<(f64, Vec<f64>)> {
    let n = check_rows(logits.len(), logits.len(), vocab)?;
    if targets.len() != n {
        return Err(LabError::domain(format!("{} targets for {n} positions", targets.len())));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (r, (&target, g)) in targets.iter().zip(grad.chunks_exact_mut(vocab)).enumerate() {
        let target = target as usize;
        if target >= vocab {
            return Err(LabError::domain(format!("target {target} is outside the vocabulary")));
        }
        let ls = log_softmax_scaled(&logits[r * vocab..(r + 1) * vocab], 1.0);
        loss -= ls[target];
        for (gi, l) in g.iter_mut().zip(&ls) {
            *gi = l.exp() / n as f64;
        }
        g[target] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

fn widen(m: &Matrix) -> Vec<f64> {
    m.data.iter().map(|&v| v as f64).collect()
}

fn matrix_kld(teacher: &Matrix, student: &Matrix, t: f64, reverse: bool) -> Result<f64> {
    if teacher.rows != student.rows || teacher.cols != student.cols {
        return Err(LabError::domain(format!(
            "teacher logits are {}x{} but student logits are {}x{}",
            teacher.rows, teacher.cols, student.rows, student.cols
        )));
    }
    Ok(kld_grad(&widen(teacher), &widen(student), student.cols, t, reverse)?.0)
}

/// Per-position `T^2 KL(softmax(z_t/T) || softmax(z_s/T))`, averaged over positions.
pub fn forward_kld_loss(teacher_logits: &Matrix, student_logits: &Matrix, temperature: f64) -> Result<f64> {
    matrix_kld(teacher_logits, student_logits, temperature, false)
}

/// Per-position `T^2 KL(softmax(z_s/T) || softmax(z_t/T))`, averaged over positions.
pub fn reverse_kld_loss(teacher_logits: &Matrix, student_logits: &Matrix, temperature: f64) -> Result<f64> {
    matrix_kld(teacher_logits, student_logits, temperature, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(p: &[f64]) -> Matrix {
        Matrix::from_vec(1, p.len(), p.iter().map(|v| v.ln() as f32).collect()).unwrap()
    }

    #[test]
    fn two_class_values() {
        let (p, q) = (probs(&[0.9, 0.1]), probs(&[0.5, 0.5]));
        let fwd = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        let rev = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((forward_kld_loss(&p, &q, 1.0).unwrap() - fwd).abs() < 1e-6);
        assert!((reverse_kld_loss(&p, &q, 1.0).unwrap() - rev).abs() < 1e-6);
        assert!((fwd - 0.368064).abs() < 1e-6);
        assert!((rev - 0.510826).abs() < 1e-6);
    }

    #[test]
    fn identical_is_zero_and_shift_invariant() {
        let a = Matrix::from_vec(2, 3, vec![0.3, -1.0, 2.0, 0.0, 0.5, 0.1]).unwrap();
        assert_eq!(forward_kld_loss(&a, &a, 2.0).unwrap(), 0.0);
        assert_eq!(reverse_kld_loss(&a, &a, 0.5).unwrap(), 0.0);
        let b = Matrix::from_vec(2, 3, vec![1.0, 0.0, -1.0, 2.0, 2.0, 0.0]).unwrap();
        let mut shifted = b.clone();
        for v in &mut shifted.data[..3] {
            *v += 4.0;
        }
        for t in [0.5, 1.0, 3.0] {
            let d = forward_kld_loss(&a, &b, t).unwrap() - forward_kld_loss(&a, &shifted, t).unwrap();
            assert!(d.abs() < 1e-6);
            let d = reverse_kld_loss(&shifted, &a, t).unwrap() - reverse_kld_loss(&b, &a, t).unwrap();
            assert!(d.abs() < 1e-6);
        }
    }

    #[test]
    fn shape_and_temperature_errors() {
        let a = Matrix::zeros(1, 3);
        let b = Matrix::zeros(1, 4);
        assert!(matches!(forward_kld_loss(&a, &b, 1.0), Err(LabError::Domain(_))));
        assert!(reverse_kld_loss(&a, &a, 0.0).is_err());
    }

    #[test]
    fn cross_entropy_closed_form() {
        let logits = [1.0, 2.0, 3.0];
        let (loss, grad) = cross_entropy_grad(&logits, &[2], 3).unwrap();
        assert!((loss - 0.40761).abs() < 1e-5);
        let z: f64 = logits.iter().map(|v: &f64| v.exp()).sum();
        let want = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z - 1.0];
        for (g, w) in grad.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn mix_blends_losses() {
        let s = [0.2, -0.1, 0.4, 0.0];
        let t = [1.0, 0.0, -1.0, 0.5];
        let spec = |lambda| LossSpec {
            objective: Objective::ForwardKld { temperature: 2.0 },
            ce_mix_lambda: lambda,
        };
        let (kd, _) = spec(0.0).evaluate(&s, Some(&t), &[1], 4).unwrap();
        let (ce, _) = spec(1.0).evaluate(&s, None, &[1], 4).unwrap();
        let (mix, _) = spec(0.25).evaluate(&s, Some(&t), &[1], 4).unwrap();
        assert!((mix - (0.75 * kd + 0.25 * ce)).abs() < 1e-15);
        assert!(spec(0.0).evaluate(&s, None, &[1], 4).is_err());
        assert!(spec(1.5).validate().is_err());
    }
}
