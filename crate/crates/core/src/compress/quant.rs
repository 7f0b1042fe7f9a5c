//! Symmetric per-row absmax quantization.
//!
//! Each row gets `scale = max|w| / qmax` with `qmax = 2^(bits-1) - 1`
//! (127 for 8-bit, 7 for 4-bit) and codes `round(w / scale)`, rounding half
//! away from zero. An all-zero row stores scale 1.0 and zero codes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{LinearWeight, Matrix, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum QuantBits {
    Eight,
    Four,
}

impl QuantBits {
    pub fn get(self) -> u8 {
        match self {
            QuantBits::Eight => 8,
            QuantBits::Four => 4,
        }
    }

    /// Largest code magnitude.
    pub fn qmax(self) -> i8 {
        match self {
            QuantBits::Eight => 127,
            QuantBits::Four => 7,
        }
    }
}

impl TryFrom<u8> for QuantBits {
    type Error = LabError;

    fn try_from(bits: u8) -> Result<Self> {
        match bits {
            8 => Ok(QuantBits::Eight),
            4 => Ok(QuantBits::Four),
            other => Err(LabError::domain(format!("unsupported bit width {other}; expected 4 or 8"))),
        }
    }
}

impl From<QuantBits> for u8 {
    fn from(b: QuantBits) -> u8 {
        b.get()
    }
}

impl fmt::Display for QuantBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-bit", self.get())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub bits: QuantBits,
    pub rows: usize,
    pub cols: usize,
    /// One per row.
    pub scales: Vec<f32>,
    /// Row-major, each within `[-qmax, qmax]`.
    pub codes: Vec<i8>,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let scale = self.scales[r];
            let codes = &self.codes[r * self.cols..(r + 1) * self.cols];
            for (dst, &c) in out.row_mut(r).iter_mut().zip(codes) {
                *dst = c as f32 * scale;
            }
        }
        out
    }

    pub fn row_codes(&self, r: usize) -> &[i8] {
        &self.codes[r * self.cols..(r + 1) * self.cols]
    }
}

/// Rounds half away from zero independent of platform rounding mode.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

pub fn quantize_tensor(matrix: &Matrix, bits: QuantBits) -> Result<QuantizedTensor> {
    if !matrix.is_finite() {
        return Err(LabError::domain("cannot quantize a matrix with non-finite values"));
    }
    let qmax = bits.qmax() as f64;
    let mut scales = Vec::with_capacity(matrix.rows);
    let mut codes = Vec::with_capacity(matrix.data.len());
    for r in 0..matrix.rows {
        let row = matrix.row(r);
        let absmax = row.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
        if absmax == 0.0 {
            scales.push(1.0);
            codes.extend(std::iter::repeat(0i8).take(row.len()));
            continue;
        }
        let scale = (absmax / qmax) as f32;
        let s = scale as f64;
        scales.push(scale);
        for &w in row {
            let c = round_half_away(w as f64 / s).clamp(-qmax, qmax);
            codes.push(c as i8);
        }
    }
    Ok(QuantizedTensor {
        bits,
        rows: matrix.rows,
        cols: matrix.cols,
        scales,
        codes,
    })
}

pub fn dequantize(q: &QuantizedTensor) -> Matrix {
    q.dequantize()
}

/// Quantizes the six projections of every block; embeddings, layer norms and
/// biases stay in full precision. Already-quantized layers are dequantized
/// first and requantized at the new width.
pub fn quantize_model(model: &Model, bits: QuantBits) -> Result<Model> {
    let mut out = model.clone();
    for block in &mut out.blocks {
        for lin in block.linears_mut() {
            let dense = lin.weight.to_dense();
            lin.weight = LinearWeight::Quantized(quantize_tensor(&dense, bits)?);
        }
    }
    Ok(out)
}
