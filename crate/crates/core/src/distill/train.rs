//! Seeded Adam training loops for students and toy base models.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{generate, Decoding, Model, ModelConfig};

use super::backprop::{backward, Example};
use super::loss::{check_temperature, LossSpec, Objective};
use super::params::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ForwardKld,
    ReverseKld,
    /// Cross-entropy on sequences generated by the teacher.
    SeqKd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub method: Method,
    pub temperature: f64,
    pub ce_mix_lambda: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Tokens per training sequence.
    pub seq_len: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            method: Method::ForwardKld,
            temperature: 1.0,
            ce_mix_lambda: 0.0,
            steps: 200,
            learning_rate: 1e-3,
            seed: 0,
            batch_size: 4,
            seq_len: 32,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        if !(0.0..=1.0).contains(&self.ce_mix_lambda) {
            return Err(LabError::domain(format!(
                "ce_mix_lambda {} must lie in [0, 1]",
                self.ce_mix_lambda
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LabError::domain(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(LabError::domain("batch_size and seq_len must be positive"));
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        let objective = match self.method {
            Method::ForwardKld => Objective::ForwardKld {
                temperature: self.temperature,
            },
            Method::ReverseKld => Objective::ReverseKld {
                temperature: self.temperature,
            },
            Method::SeqKd => Objective::CrossEntropy,
        };
        LossSpec {
            objective,
            ce_mix_lambda: self.ce_mix_lambda,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        let zeros = params.zeros_like().tensors;
        Self {
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &Params) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (i, p) in params.tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.tensors[i]);
            for j in 0..p.len() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
}

/// Trailing moving average with the given window.
pub fn smoothed(losses: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..losses.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            losses[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

pub fn write_loss_csv<W: Write>(losses: &[f64], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "loss"]).map_err(csv_err)?;
    for (step, loss) in losses.iter().enumerate() {
        out.write_record([step.to_string(), loss.to_string()]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> LabError {
    LabError::Io(std::io::Error::other(e))
}

/// Teacher generations: each prompt extended to `length` tokens.
pub fn seqkd_corpus(teacher: &Model, prompts: &[Vec<u32>], length: usize, mode: Decoding) -> Result<Vec<Vec<u32>>> {
    prompts
        .iter()
        .enumerate()
        .map(|(i, prompt)| {
            let steps = length.checked_sub(prompt.len()).ok_or_else(|| {
                LabError::domain(format!("prompt of {} tokens exceeds length {length}", prompt.len()))
            })?;
            // Distinct streams per prompt, still fixed by the caller's seed.
            let mode = match mode {
                Decoding::Sample { temperature, seed } => Decoding::Sample {
                    temperature,
                    seed: seed.wrapping_add(i as u64),
                },
                greedy => greedy,
            };
            generate(teacher, prompt, steps, mode)
        })
        .collect()
}

fn check_corpus(corpus: &[u32], vocab: usize, seq_len: usize) -> Result<()> {
    if corpus.len() < seq_len + 1 {
        return Err(LabError::domain(format!(
            "corpus of {} tokens is shorter than one training window of {}",
            corpus.len(),
            seq_len + 1
        )));
    }
    if let Some(&bad) = corpus.iter().find(|&&t| t as usize >= vocab) {
        return Err(LabError::domain(format!("corpus token {bad} is outside the vocabulary")));
    }
    Ok(())
}

fn window_example(window: &[u32]) -> Example {
    Example {
        tokens: window[..window.len() - 1].to_vec(),
        targets: window[1..].to_vec(),
        teacher_logits: None,
    }
}

fn run(
    mut params: Params,
    cfg: &DistillConfig,
    spec: LossSpec,
    mut next_batch: impl FnMut(&mut ChaCha8Rng) -> Result<Vec<Example>>,
) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let batch = next_batch(&mut rng)?;
        let (loss, grads) = backward(&params, &batch, &spec)?;
        if !loss.is_finite() {
            return Err(LabError::State(format!("loss diverged at step {}", losses.len())));
        }
        losses.push(loss);
        adam.update(&mut params, &grads);
    }
    Ok(TrainOutcome {
        model: params.to_model()?,
        losses,
    })
}

fn random_window<'a>(rng: &mut ChaCha8Rng, corpus: &'a [u32], len: usize) -> &'a [u32] {
    let start = rng.random_range(0..=corpus.len() - len);
    &corpus[start..start + len]
}

/// Trains a fresh student, initialized from `cfg.seed`, to imitate `teacher`
/// on random windows of `corpus`. With `Method::SeqKd` the windows are
/// replaced by greedy teacher continuations of prompts cut from the corpus.
pub fn train_student(
    teacher: &Model,
    student_config: ModelConfig,
    corpus: &[u32],
    cfg: &DistillConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    student_config.validate()?;
    let tc = &teacher.config;
    if student_config.vocab_size != tc.vocab_size {
        return Err(LabError::domain(format!(
            "student vocabulary {} differs from the teacher's {}",
            student_config.vocab_size, tc.vocab_size
        )));
    }
    if cfg.seq_len > student_config.context_len || cfg.seq_len > tc.context_len {
        return Err(LabError::domain(format!(
            "seq_len {} exceeds a model context ({} student, {} teacher)",
            cfg.seq_len, student_config.context_len, tc.context_len
        )));
    }
    check_corpus(corpus, tc.vocab_size, cfg.seq_len)?;
    let params = Params::from_model(&Model::init(student_config, cfg.seed)?);
    let spec = cfg.loss_spec();
    let len = cfg.seq_len + 1;

    if cfg.method == Method::SeqKd {
        let prompt_len = (cfg.seq_len / 4).max(1);
        let n_prompts = (cfg.batch_size * 4).max(16);
        let stride = ((corpus.len() - prompt_len) / n_prompts).max(1);
        let prompts: Vec<Vec<u32>> = (0..n_prompts)
            .map(|i| {
                let at = (i * stride).min(corpus.len() - prompt_len);
                corpus[at..at + prompt_len].to_vec()
            })
            .collect();
        let generated = seqkd_corpus(teacher, &prompts, len.min(tc.context_len), Decoding::Greedy)?;
        return run(params, cfg, spec, |rng| {
            Ok((0..cfg.batch_size)
                .map(|_| window_example(&generated[rng.random_range(0..generated.len())]))
                .collect())
        });
    }

    run(params, cfg, spec, |rng| {
        (0..cfg.batch_size)
            .map(|_| {
                let mut ex = window_example(random_window(rng, corpus, len));
                if spec.needs_teacher() {
                    let logits = teacher.forward(&ex.tokens)?.logits;
                    ex.teacher_logits = Some(logits.data.iter().map(|&v| v as f64).collect());
                }
                Ok(ex)
            })
            .collect()
    })
}

/// Trains a model from a seeded initialization with next-token
/// cross-entropy; used to give toy base models something to compress.
pub fn train_language_model(config: ModelConfig, corpus: &[u32], cfg: &DistillConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    config.validate()?;
    if cfg.seq_len > config.context_len {
        return Err(LabError::domain(format!(
            "seq_len {} exceeds context {}",
            cfg.seq_len, config.context_len
        )));
    }
    check_corpus(corpus, config.vocab_size, cfg.seq_len)?;
    let params = Params::from_model(&Model::init(config, cfg.seed)?);
    let len = cfg.seq_len + 1;
    run(params, cfg, LossSpec::cross_entropy(), |rng| {
        Ok((0..cfg.batch_size)
            .map(|_| window_example(random_window(rng, corpus, len)))
            .collect())
    })
}
