//! Ordered compression pipelines.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::Model;

use super::heads::{check_threshold, head_concentration, prune_heads, THRESHOLD_80, THRESHOLD_90};
use super::quant::{quantize_model, QuantBits};
use super::sparsity::prune_model_2_4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CompressionPass {
    Quantize(QuantBits),
    /// Mask heads whose concentration score reaches the threshold.
    PruneHeads(f64),
    Prune24,
    /// Replace the model with a distilled student registered under this id.
    DistillRef(String),
}

impl CompressionPass {
    pub fn validate(&self) -> Result<()> {
        match self {
            CompressionPass::PruneHeads(t) => check_threshold(*t),
            CompressionPass::DistillRef(id) if id.is_empty() => Err(LabError::domain("student id is empty")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for CompressionPass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompressionPass::Quantize(b) => write!(f, "{}b", b.get()),
            CompressionPass::PruneHeads(t) => write!(f, "AH{}", (t * 100.0).round()),
            CompressionPass::Prune24 => f.write_str("2:4"),
            CompressionPass::DistillRef(id) => write!(f, "Distil({id})"),
        }
    }
}

/// What passes need beyond the model itself.
#[derive(Debug, Clone, Copy)]
pub struct PassContext<'a> {
    /// Sequences used to score attention heads.
    pub calibration: &'a [Vec<u32>],
    /// Distilled students by id.
    pub students: &'a BTreeMap<String, Model>,
}

/// A validated, ordered list of passes; the empty pipeline is the identity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pipeline {
    passes: Vec<CompressionPass>,
}

/// Validates `passes`. A distillation reference replaces the whole model, so
/// it may only appear first.
pub fn compose(passes: Vec<CompressionPass>) -> Result<Pipeline> {
    for (i, p) in passes.iter().enumerate() {
        p.validate()?;
        if matches!(p, CompressionPass::DistillRef(_)) && i != 0 {
            return Err(LabError::domain(format!(
                "{p} must be the first pass; passes before it would be discarded"
            )));
        }
    }
    Ok(Pipeline { passes })
}

impl Pipeline {
    pub fn passes(&self) -> &[CompressionPass] {
        &self.passes
    }

    /// Applies the passes left to right.
    pub fn apply(&self, model: &Model, ctx: &PassContext<'_>) -> Result<Model> {
        let mut current = model.clone();
        for pass in &self.passes {
            current = match pass {
                CompressionPass::Quantize(bits) => quantize_model(&current, *bits)?,
                CompressionPass::Prune24 => prune_model_2_4(&current)?,
                CompressionPass::PruneHeads(threshold) => {
                    let report = head_concentration(&current, ctx.calibration)?;
                    prune_heads(&current, &report, *threshold)?
                }
                CompressionPass::DistillRef(id) => ctx
                    .students
                    .get(id)
                    .cloned()
                    .ok_or_else(|| LabError::domain(format!("no student registered as '{id}'")))?,
            };
        }
        Ok(current)
    }
}

/// The six single-technique pipelines: 8b, 4b, Distil, AH90, AH80, Pruned.
pub fn standalone_matrix(student: &str) -> Vec<(String, Vec<CompressionPass>)> {
    use CompressionPass::*;
    vec![
        ("8b".into(), vec![Quantize(QuantBits::Eight)]),
        ("4b".into(), vec![Quantize(QuantBits::Four)]),
        ("Distil".into(), vec![DistillRef(student.into())]),
        ("AH90".into(), vec![PruneHeads(THRESHOLD_90)]),
        ("AH80".into(), vec![PruneHeads(THRESHOLD_80)]),
        ("Pruned".into(), vec![Prune24]),
    ]
}

/// The twelve technique combinations, in the order they were run:
/// distillation first, then head pruning, then quantization.
pub fn combination_matrix(student: &str) -> Vec<(String, Vec<CompressionPass>)> {
    use CompressionPass::*;
    let kd = || DistillRef(student.to_string());
    let (q8, q4) = (Quantize(QuantBits::Eight), Quantize(QuantBits::Four));
    let (ah90, ah80) = (PruneHeads(THRESHOLD_90), PruneHeads(THRESHOLD_80));
    vec![
        ("Distil+90".into(), vec![kd(), ah90.clone()]),
        ("Distil+80".into(), vec![kd(), ah80.clone()]),
        ("Distil+8b".into(), vec![kd(), q8.clone()]),
        ("Distil+4b".into(), vec![kd(), q4.clone()]),
        ("AH90+8b".into(), vec![ah90.clone(), q8.clone()]),
        ("AH80+8b".into(), vec![ah80.clone(), q8.clone()]),
        ("AH90+4b".into(), vec![ah90.clone(), q4.clone()]),
        ("AH80+4b".into(), vec![ah80.clone(), q4.clone()]),
        ("Distil+90+8b".into(), vec![kd(), ah90.clone(), q8.clone()]),
        ("Distil+80+8b".into(), vec![kd(), ah80.clone(), q8]),
        ("Distil+90+4b".into(), vec![kd(), ah90, q4.clone()]),
        ("Distil+80+4b".into(), vec![kd(), ah80, q4]),
    ]
}
