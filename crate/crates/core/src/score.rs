//! Resource-performance optimization score.
//!
//! A compressed model is compared against its base with
//!
//! ```text
//! opt = Q * (alpha * T_c + beta * E_c)
//! ```
//!
//! where `T_c` and `E_c` are the optimized/base ratios of wall time and
//! energy, and `Q` is the quality factor: the mean over all quality
//! measurements of `ratio^1.5`. Quality ratios are oriented so that a value
//! above 1 always means the optimized model got worse:
//!
//! * lower-is-better metrics (perplexity): `model / base`
//! * higher-is-better metrics (accuracy) with random floor `x`:
//!   `(base - 0.8x) / (model - 0.8x)`
//!
//! Lower `opt` is better; an unchanged model scores exactly 1.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Exponent applied to each quality ratio before averaging.
pub const QUALITY_EXPONENT: f64 = 1.5;

/// Fraction of the random floor subtracted from higher-is-better scores.
pub const RANDOM_FLOOR_FRACTION: f64 = 0.8;

const PROFILE_SUM_TOLERANCE: f64 = 1e-12;

/// Relative weights on time (`alpha`) and energy (`beta`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub name: String,
    pub alpha: f64,
    pub beta: f64,
}

impl WeightProfile {
    pub fn new(name: impl Into<String>, alpha: f64, beta: f64) -> Result<Self> {
        let name = name.into();
        if !(alpha.is_finite() && beta.is_finite()) || alpha < 0.0 || beta < 0.0 {
            return Err(LabError::domain(format!(
                "profile {name}: weights must be finite and non-negative (alpha={alpha}, beta={beta})"
            )));
        }
        if (alpha + beta - 1.0).abs() > PROFILE_SUM_TOLERANCE {
            return Err(LabError::domain(format!(
                "profile {name}: alpha + beta must equal 1 (got {})",
                alpha + beta
            )));
        }
        Ok(Self { name, alpha, beta })
    }

    pub fn balanced() -> Self {
        Self {
            name: "balanced".into(),
            alpha: 0.5,
            beta: 0.5,
        }
    }

    pub fn energy_focus() -> Self {
        Self {
            name: "energy".into(),
            alpha: 0.1,
            beta: 0.9,
        }
    }

    pub fn runtime_focus() -> Self {
        Self {
            name: "runtime".into(),
            alpha: 0.9,
            beta: 0.1,
        }
    }

    /// Balanced, energy focus, runtime focus, in that order.
    pub fn builtin() -> Vec<Self> {
        vec![Self::balanced(), Self::energy_focus(), Self::runtime_focus()]
    }

    fn validate(&self) -> Result<()> {
        Self::new(self.name.clone(), self.alpha, self.beta).map(|_| ())
    }
}

impl FromStr for WeightProfile {
    type Err = LabError;

    /// Accepts a built-in name (`balanced`, `energy`, `runtime`, plus the
    /// long forms `energy-focus`/`runtime-focus`) or an explicit `alpha,beta` pair.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "balanced" => return Ok(Self::balanced()),
            "energy" | "energy-focus" | "energy_focus" => return Ok(Self::energy_focus()),
            "runtime" | "runtime-focus" | "runtime_focus" => return Ok(Self::runtime_focus()),
            _ => {}
        }
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| LabError::domain(format!("unknown profile '{s}'")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| LabError::domain(format!("bad profile weight '{v}'")))
        };
        let (alpha, beta) = (parse(a)?, parse(b)?);
        Self::new(format!("{alpha},{beta}"), alpha, beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "lower")]
    LowerBetter,
    #[serde(rename = "higher")]
    HigherBetter,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::LowerBetter => "lower",
            Direction::HigherBetter => "higher",
        })
    }
}

/// One quality measurement of a base and an optimized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    pub direction: Direction,
    /// Score expected from random answering; only meaningful for higher-is-better.
    pub random_floor: Option<f64>,
    pub base_value: f64,
    pub model_value: f64,
}

impl MetricRecord {
    pub fn lower(name: impl Into<String>, base_value: f64, model_value: f64) -> Self {
        Self {
            name: name.into(),
            direction: Direction::LowerBetter,
            random_floor: None,
            base_value,
            model_value,
        }
    }

    pub fn higher(name: impl Into<String>, floor: f64, base_value: f64, model_value: f64) -> Self {
        Self {
            name: name.into(),
            direction: Direction::HigherBetter,
            random_floor: Some(floor),
            base_value,
            model_value,
        }
    }

    /// Oriented change ratio; errors name the record.
    pub fn ratio(&self) -> Result<f64> {
        match self.direction {
            Direction::LowerBetter => {
                if self.random_floor.is_some() {
                    return Err(LabError::domain(format!(
                        "{}: lower-is-better records take no random floor",
                        self.name
                    )));
                }
                ratio_lower_better(self.base_value, self.model_value)
                    .map_err(|e| LabError::domain(format!("{}: {e}", self.name)))
            }
            Direction::HigherBetter => {
                let floor = self.random_floor.ok_or_else(|| {
                    LabError::domain(format!("{}: higher-is-better record needs a random floor", self.name))
                })?;
                ratio_higher_better(self.base_value, self.model_value, floor).map_err(|e| match e {
                    LabError::BelowRandomFloor {
                        value, floor, guard, ..
                    } => LabError::BelowRandomFloor {
                        metric: self.name.clone(),
                        value,
                        floor,
                        guard,
                    },
                    LabError::Domain(m) => LabError::Domain(format!("{}: {m}", self.name)),
                    other => other,
                })
            }
        }
    }
}

/// Optimized/base ratios of wall time and energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceRatios {
    pub t_ratio: f64,
    pub e_ratio: f64,
}

impl ResourceRatios {
    pub fn new(t_ratio: f64, e_ratio: f64) -> Result<Self> {
        if !(t_ratio.is_finite() && t_ratio > 0.0 && e_ratio.is_finite() && e_ratio > 0.0) {
            return Err(LabError::domain(format!(
                "resource ratios must be finite and positive (time {t_ratio}, energy {e_ratio})"
            )));
        }
        Ok(Self { t_ratio, e_ratio })
    }

    pub fn from_raw(base_time: f64, model_time: f64, base_energy: f64, model_energy: f64) -> Result<Self> {
        let t = ratio_lower_better(base_time, model_time)?;
        let e = ratio_lower_better(base_energy, model_energy)?;
        Self::new(t, e)
    }

    pub fn unchanged() -> Self {
        Self {
            t_ratio: 1.0,
            e_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub profile: WeightProfile,
    pub quality_factor: f64,
    pub cost_factor: f64,
    pub opt: f64,
}

/// How the quality side of the score is supplied.
#[derive(Debug, Clone, Copy)]
pub enum Quality<'a> {
    /// A single lower-is-better pair such as perplexity.
    Single { base: f64, model: f64 },
    Records(&'a [MetricRecord]),
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

/// `model / base`; above 1 means the optimized model is worse.
pub fn ratio_lower_better(base: f64, model: f64) -> Result<f64> {
    if !positive(base) || !positive(model) {
        return Err(LabError::domain(format!(
            "lower-is-better values must be positive (base {base}, model {model})"
        )));
    }
    Ok(model / base)
}

/// `(base - 0.8x) / (model - 0.8x)`; above 1 means the optimized model scored lower.
pub fn ratio_higher_better(base: f64, model: f64, floor_x: f64) -> Result<f64> {
    if !(base.is_finite() && model.is_finite() && floor_x.is_finite()) || floor_x < 0.0 {
        return Err(LabError::domain(format!(
            "higher-is-better inputs must be finite with a non-negative floor (base {base}, model {model}, floor {floor_x})"
        )));
    }
    let guard = RANDOM_FLOOR_FRACTION * floor_x;
    for value in [base, model] {
        if value - guard <= 0.0 {
            return Err(LabError::BelowRandomFloor {
                metric: String::new(),
                value,
                floor: floor_x,
                guard,
            });
        }
    }
    Ok((base - guard) / (model - guard))
}

/// Scoring with a configurable quality exponent (1.5 unless overridden).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scorer {
    pub exponent: f64,
}

impl Default for Scorer {
    fn default() -> Self {
        Self {
            exponent: QUALITY_EXPONENT,
        }
    }
}

impl Scorer {
    pub fn with_exponent(exponent: f64) -> Result<Self> {
        if !positive(exponent) {
            return Err(LabError::domain(format!("quality exponent must be positive, got {exponent}")));
        }
        Ok(Self { exponent })
    }

    /// Mean of `ratio^exponent` over the records.
    pub fn aggregate_quality(&self, records: &[MetricRecord]) -> Result<f64> {
        if records.is_empty() {
            return Err(LabError::domain("cannot aggregate an empty metric list"));
        }
        let mut sum = 0.0;
        for r in records {
            sum += r.ratio()?.powf(self.exponent);
        }
        Ok(sum / records.len() as f64)
    }

    pub fn quality_factor(&self, quality: Quality<'_>) -> Result<f64> {
        match quality {
            Quality::Single { base, model } => Ok(ratio_lower_better(base, model)?.powf(self.exponent)),
            Quality::Records(records) => self.aggregate_quality(records),
        }
    }

    pub fn opt_score(&self, quality: Quality<'_>, ratios: ResourceRatios, profile: &WeightProfile) -> Result<OptResult> {
        profile.validate()?;
        let ratios = ResourceRatios::new(ratios.t_ratio, ratios.e_ratio)?;
        let quality_factor = self.quality_factor(quality)?;
        let cost_factor = profile.alpha * ratios.t_ratio + profile.beta * ratios.e_ratio;
        Ok(OptResult {
            profile: profile.clone(),
            quality_factor,
            cost_factor,
            opt: quality_factor * cost_factor,
        })
    }
}

pub fn aggregate_quality(records: &[MetricRecord]) -> Result<f64> {
    Scorer::default().aggregate_quality(records)
}

pub fn opt_score(quality: Quality<'_>, ratios: ResourceRatios, profile: &WeightProfile) -> Result<OptResult> {
    Scorer::default().opt_score(quality, ratios, profile)
}

/// Ascending by opt, ties broken by label. All results must share one profile.
pub fn rank_methods(mut candidates: Vec<(String, OptResult)>) -> Result<Vec<(String, OptResult)>> {
    if let Some((_, first)) = candidates.first() {
        let profile = first.profile.clone();
        if let Some((label, _)) = candidates.iter().find(|(_, r)| r.profile != profile) {
            return Err(LabError::domain(format!(
                "cannot rank '{label}': results were computed under different profiles"
            )));
        }
    }
    candidates.sort_by(|(la, a), (lb, b)| {
        a.opt
            .partial_cmp(&b.opt)
            .unwrap_or(Ordering::Equal)
            .then_with(|| la.cmp(lb))
    });
    Ok(candidates)
}
