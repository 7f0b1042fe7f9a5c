//! 64-bit trainable copy of a model's parameters.

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::model::{tensor_layout, Model, ModelConfig, TENSORS_PER_BLOCK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    Embedding,
    Attention,
    FeedForward,
    LayerNorm,
}

impl ParamClass {
    fn of(name: &str) -> Self {
        if name == "wte" || name == "wpe" {
            ParamClass::Embedding
        } else if name.contains("ln_") {
            ParamClass::LayerNorm
        } else if name.contains("attn.") {
            ParamClass::Attention
        } else {
            ParamClass::FeedForward
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub class: ParamClass,
}

/// Parameters in [`tensor_layout`] order, one `Vec` per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub config: ModelConfig,
    pub head_mask: Vec<Vec<bool>>,
    pub specs: Vec<TensorSpec>,
    pub tensors: Vec<Vec<f64>>,
}

// Offsets inside a block's run of tensors.
pub(crate) const LN1_G: usize = 0;
pub(crate) const LN1_B: usize = 1;
pub(crate) const Q_W: usize = 2;
pub(crate) const K_W: usize = 4;
pub(crate) const V_W: usize = 6;
pub(crate) const O_W: usize = 8;
pub(crate) const FF_IN_W: usize = 10;
pub(crate) const FF_OUT_W: usize = 12;
pub(crate) const LN2_G: usize = 14;
pub(crate) const LN2_B: usize = 15;

pub(crate) const WTE: usize = 0;
pub(crate) const WPE: usize = 1;

pub(crate) fn block_base(layer: usize) -> usize {
    2 + TENSORS_PER_BLOCK * layer
}

pub(crate) fn ln_final(config: &ModelConfig) -> usize {
    block_base(config.n_layers)
}

impl Params {
    pub fn from_model(model: &Model) -> Self {
        let specs = tensor_layout(&model.config)
            .into_iter()
            .map(|(name, shape)| TensorSpec {
                class: ParamClass::of(&name),
                name,
                shape,
            })
            .collect();
        let tensors = model
            .to_tensors()
            .into_iter()
            .map(|t| t.into_iter().map(f64::from).collect())
            .collect();
        Self {
            config: model.config,
            head_mask: model.head_mask.clone(),
            specs,
            tensors,
        }
    }

    /// Rounds every value to f32.
    pub fn to_model(&self) -> Result<Model> {
        let tensors = self
            .tensors
            .iter()
            .map(|t| t.iter().map(|&v| v as f32).collect())
            .collect();
        Model::from_tensors(self.config, self.head_mask.clone(), tensors)
    }

    /// Same layout, every value zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.concat()
    }

    /// Copy of `self` with values taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.len() {
            return Err(LabError::shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.len()
            )));
        }
        let mut out = self.clone();
        let mut at = 0;
        for t in &mut out.tensors {
            let n = t.len();
            t.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(out)
    }

    /// Flat index ranges of each parameter class.
    pub fn class_ranges(&self) -> Vec<(ParamClass, Vec<std::ops::Range<usize>>)> {
        let mut out: Vec<(ParamClass, Vec<std::ops::Range<usize>>)> = Vec::new();
        let mut at = 0;
        for (spec, t) in self.specs.iter().zip(&self.tensors) {
            let range = at..at + t.len();
            at += t.len();
            match out.iter_mut().find(|(c, _)| *c == spec.class) {
                Some((_, ranges)) => ranges.push(range),
                None => out.push((spec.class, vec![range])),
            }
        }
        out.sort_by_key(|(c, _)| *c);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_f64() {
        let m = Model::init(ModelConfig::toy(), 3).unwrap();
        let p = Params::from_model(&m);
        assert_eq!(p.len(), m.parameter_count());
        assert_eq!(p.to_model().unwrap(), m);
        assert_eq!(p.with_flat(&p.flatten()).unwrap(), p);
    }

    #[test]
    fn classes_cover_everything() {
        let p = Params::from_model(&Model::init(ModelConfig::toy(), 3).unwrap());
        let ranges = p.class_ranges();
        assert_eq!(ranges.len(), 4);
        let total: usize = ranges.iter().flat_map(|(_, r)| r.iter().map(|r| r.len())).sum();
        assert_eq!(total, p.len());
        assert_eq!(p.specs[block_base(1) + Q_W].name, "h.1.attn.q.weight");
        assert_eq!(p.specs[block_base(0) + FF_OUT_W].name, "h.0.mlp.fc_out.weight");
        assert_eq!(p.specs[block_base(0) + LN2_B].name, "h.0.ln_2.bias");
        assert_eq!(p.specs[ln_final(&p.config)].name, "ln_f.gain");
    }
}
