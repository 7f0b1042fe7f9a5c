//! Suite configuration, execution and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compress::{combination_matrix, compose, standalone_matrix, CompressionPass, PassContext};
use crate::distill::{train_language_model, train_student, DistillConfig, Method};
use crate::error::{LabError, Result};
use crate::fixtures::BUNDLED_CORPUS;
use crate::meter::{measure, EnergySource, DEFAULT_CARBON_INTENSITY, DEFAULT_REPETITIONS};
use crate::model::{load_model, perplexity_with, Model, ModelConfig, PerplexityWindow};
use crate::score::{opt_score, Direction, MetricRecord, Quality, ResourceRatios, WeightProfile};
use crate::tokenizer::tokenize;

use super::metrics::{score_report, write_metrics, MethodMetrics, OptTable};

/// Name of the implicit uncompressed pipeline.
pub const BASE_PIPELINE: &str = "base";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub path: PathBuf,
}

/// Base-model training on the suite corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seq_len: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 3e-3,
            batch_size: 4,
            seq_len: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeededModel {
    pub seed: u64,
    #[serde(default = "ModelConfig::toy")]
    pub config: ModelConfig,
    #[serde(default)]
    pub train: TrainSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    File(ModelFile),
    Seeded(SeededModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedStudent {
    pub config: ModelConfig,
    #[serde(default)]
    pub distill: DistillConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StudentSpec {
    File(ModelFile),
    Trained(TrainedStudent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub name: String,
    pub passes: Vec<CompressionPass>,
}

/// Sequences cut from the training split for head scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSpec {
    pub sequences: usize,
    pub length: usize,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            sequences: 8,
            length: 32,
        }
    }
}

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

fn default_energy_source() -> String {
    "synthetic".into()
}

fn default_profiles() -> Vec<String> {
    WeightProfile::builtin().into_iter().map(|p| p.name).collect()
}

fn default_intensity() -> f64 {
    DEFAULT_CARBON_INTENSITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub model: ModelSpec,
    /// Text file; the bundled corpus when absent.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub pipelines: Vec<PipelineSpec>,
    #[serde(default)]
    pub students: BTreeMap<String, StudentSpec>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_energy_source")]
    pub energy_source: String,
    #[serde(default = "default_profiles")]
    pub profiles: Vec<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_intensity")]
    pub carbon_intensity_g_per_kwh: f64,
    /// Evaluation window; the model context when absent.
    #[serde(default)]
    pub perplexity_window: Option<PerplexityWindow>,
    /// Caps the evaluation split.
    #[serde(default)]
    pub eval_tokens: Option<usize>,
    #[serde(default)]
    pub calibration: CalibrationSpec,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl SuiteConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SuiteConfig = serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_json(&fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// The technique matrix at toy scale: the six standalone techniques and
    /// the twelve combinations, with a one-layer distilled student.
    pub fn technique_matrix(seed: u64) -> Self {
        let student = "distil";
        let pipelines = standalone_matrix(student)
            .into_iter()
            .chain(combination_matrix(student))
            .map(|(name, passes)| PipelineSpec { name, passes })
            .collect();
        let mut students = BTreeMap::new();
        students.insert(
            student.to_string(),
            StudentSpec::Trained(TrainedStudent {
                config: ModelConfig {
                    n_layers: 1,
                    ..ModelConfig::toy()
                },
                distill: DistillConfig {
                    method: Method::ForwardKld,
                    learning_rate: 3e-3,
                    seed,
                    ..DistillConfig::default()
                },
            }),
        );
        Self {
            model: ModelSpec::Seeded(SeededModel {
                seed,
                config: ModelConfig::toy(),
                train: TrainSpec::default(),
            }),
            corpus: None,
            pipelines,
            students,
            repetitions: DEFAULT_REPETITIONS,
            energy_source: default_energy_source(),
            profiles: default_profiles(),
            output_dir: None,
            carbon_intensity_g_per_kwh: DEFAULT_CARBON_INTENSITY,
            perplexity_window: None,
            eval_tokens: None,
            calibration: CalibrationSpec::default(),
            base_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        let mut names = BTreeSet::new();
        for p in &self.pipelines {
            if p.name.is_empty() || p.name == BASE_PIPELINE {
                return bad(format!("pipeline name '{}' is reserved or empty", p.name));
            }
            if !names.insert(p.name.as_str()) {
                return bad(format!("duplicate pipeline name '{}'", p.name));
            }
            compose(p.passes.clone()).map_err(|e| LabError::Config(format!("{}: {e}", p.name)))?;
            for pass in &p.passes {
                if let CompressionPass::DistillRef(id) = pass {
                    if !self.students.contains_key(id) {
                        return bad(format!("{}: unknown student '{id}'", p.name));
                    }
                }
            }
        }
        self.weight_profiles()?;
        self.source()?;
        if !(self.carbon_intensity_g_per_kwh >= 0.0 && self.carbon_intensity_g_per_kwh.is_finite()) {
            return bad("carbon_intensity_g_per_kwh must be >= 0".into());
        }
        if self.calibration.sequences == 0 || self.calibration.length <= crate::compress::MIN_PRIOR_KEYS {
            return bad(format!(
                "calibration needs at least one sequence longer than {} tokens",
                crate::compress::MIN_PRIOR_KEYS
            ));
        }
        Ok(())
    }

    pub fn weight_profiles(&self) -> Result<Vec<WeightProfile>> {
        if self.profiles.is_empty() {
            return Err(LabError::Config("at least one profile is required".into()));
        }
        self.profiles
            .iter()
            .map(|p| p.parse().map_err(|e| LabError::Config(format!("profile '{p}': {e}"))))
            .collect()
    }

    pub fn source(&self) -> Result<EnergySource> {
        let src: EnergySource = self.energy_source.parse()?;
        Ok(match src {
            EnergySource::CounterFile {
                path,
                wrap_max_uj,
                timer,
            } => EnergySource::CounterFile {
                path: self.resolve(&path),
                wrap_max_uj,
                timer,
            },
            other => other,
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptScore {
    pub quality_factor: f64,
    pub cost_factor: f64,
    pub opt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub pipeline: String,
    pub perplexity: Option<f64>,
    pub time_s: Option<f64>,
    pub energy_kwh: Option<f64>,
    pub carbon_g: Option<f64>,
    pub runs: usize,
    pub opt: BTreeMap<String, OptScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReportRow {
    fn failed(pipeline: &str, err: LabError) -> Self {
        Self {
            pipeline: pipeline.to_string(),
            perplexity: None,
            time_s: None,
            energy_kwh: None,
            carbon_g: None,
            runs: 0,
            opt: BTreeMap::new(),
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_digest: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn base(&self) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.pipeline == BASE_PIPELINE)
    }

    /// Raw base and pipeline values of every successful non-base row, in
    /// the metrics CSV layout.
    pub fn metrics(&self) -> Vec<MethodMetrics> {
        let Some(base) = self.base() else {
            return Vec::new();
        };
        let (Some(bp), Some(bt), Some(be)) = (base.perplexity, base.time_s, base.energy_kwh) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .filter(|r| r.pipeline != BASE_PIPELINE && r.error.is_none())
            .filter_map(|r| {
                Some(MethodMetrics {
                    group: r.pipeline.clone(),
                    records: vec![MetricRecord {
                        name: "perplexity".into(),
                        direction: Direction::LowerBetter,
                        random_floor: None,
                        base_value: bp,
                        model_value: r.perplexity?,
                    }],
                    base_time: bt,
                    model_time: r.time_s?,
                    base_energy: be,
                    model_energy: r.energy_kwh?,
                })
            })
            .collect()
    }
}

fn split_corpus(tokens: &[u32], eval_cap: Option<usize>) -> Result<(&[u32], &[u32])> {
    if tokens.len() < 10 {
        return Err(LabError::domain(format!("corpus of {} tokens is too small", tokens.len())));
    }
    let cut = tokens.len() * 4 / 5;
    let (train, mut eval) = tokens.split_at(cut);
    if let Some(cap) = eval_cap {
        eval = &eval[..eval.len().min(cap.max(2))];
    }
    Ok((train, eval))
}

fn calibration_set(train: &[u32], spec: &CalibrationSpec, context: usize) -> Vec<Vec<u32>> {
    let len = spec.length.min(context).min(train.len());
    let span = train.len() - len;
    (0..spec.sequences)
        .map(|i| {
            let at = if spec.sequences > 1 { span * i / (spec.sequences - 1) } else { 0 };
            train[at..at + len].to_vec()
        })
        .collect()
}

fn build_base(cfg: &SuiteConfig, train: &[u32]) -> Result<Model> {
    match &cfg.model {
        ModelSpec::File(f) => load_model(cfg.resolve(&f.path)),
        ModelSpec::Seeded(s) => {
            if s.train.steps == 0 {
                return Model::init(s.config, s.seed);
            }
            let tc = DistillConfig {
                steps: s.train.steps,
                learning_rate: s.train.learning_rate,
                batch_size: s.train.batch_size,
                seq_len: s.train.seq_len,
                seed: s.seed,
                ..DistillConfig::default()
            };
            Ok(train_language_model(s.config, train, &tc)?.model)
        }
    }
}

fn build_students(cfg: &SuiteConfig, base: &Model, train: &[u32]) -> BTreeMap<String, Result<Model>> {
    cfg.students
        .iter()
        .map(|(id, spec)| {
            let built = match spec {
                StudentSpec::File(f) => load_model(cfg.resolve(&f.path)),
                StudentSpec::Trained(t) => train_student(base, t.config, train, &t.distill).map(|o| o.model),
            };
            (id.clone(), built)
        })
        .collect()
}

/// Runs the base model and every pipeline in declaration order, measuring
/// each identically. A failing pipeline is reported in its row and the
/// suite continues. When `output_dir` is set the report, the metrics CSV and
/// the plot data are written there.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Report> {
    cfg.validate()?;
    let profiles = cfg.weight_profiles()?;
    let source = cfg.source()?;
    let text = match &cfg.corpus {
        Some(p) => fs::read(cfg.resolve(p))?,
        None => BUNDLED_CORPUS.as_bytes().to_vec(),
    };
    let tokens = tokenize(&text);
    let (train, eval) = split_corpus(&tokens, cfg.eval_tokens)?;

    let base = build_base(cfg, train)?;
    let window = cfg
        .perplexity_window
        .unwrap_or_else(|| PerplexityWindow::non_overlapping(base.config.context_len));
    let calibration = calibration_set(train, &cfg.calibration, base.config.context_len);
    let built = build_students(cfg, &base, train);
    let mut students = BTreeMap::new();
    let mut student_errors = BTreeMap::new();
    for (id, r) in built {
        match r {
            Ok(m) => {
                students.insert(id, m);
            }
            Err(e) => {
                student_errors.insert(id, e.to_string());
            }
        }
    }
    let ctx = PassContext {
        calibration: &calibration,
        students: &students,
    };

    let evaluate = |model: &Model| -> Result<(f64, crate::meter::ResourceRecord)> {
        let mut src = source.clone();
        let mut ppl = f64::NAN;
        let record = measure(
            &mut src,
            || {
                ppl = perplexity_with(model, eval, window)?;
                Ok(())
            },
            cfg.repetitions,
        )?
        .with_intensity(cfg.carbon_intensity_g_per_kwh)?;
        Ok((ppl, record))
    };

    let (base_ppl, base_rec) = evaluate(&base)?;
    let mut rows = vec![ReportRow {
        pipeline: BASE_PIPELINE.into(),
        perplexity: Some(base_ppl),
        time_s: Some(base_rec.wall_time_s),
        energy_kwh: Some(base_rec.energy_kwh),
        carbon_g: Some(base_rec.carbon_g),
        runs: base_rec.runs,
        opt: BTreeMap::new(),
        error: None,
    }];

    for spec in &cfg.pipelines {
        let attempt = || -> Result<ReportRow> {
            for pass in &spec.passes {
                if let CompressionPass::DistillRef(id) = pass {
                    if let Some(e) = student_errors.get(id) {
                        return Err(LabError::State(format!("student '{id}' failed to build: {e}")));
                    }
                }
            }
            let model = compose(spec.passes.clone())?.apply(&base, &ctx)?;
            let (ppl, rec) = evaluate(&model)?;
            Ok(ReportRow {
                pipeline: spec.name.clone(),
                perplexity: Some(ppl),
                time_s: Some(rec.wall_time_s),
                energy_kwh: Some(rec.energy_kwh),
                carbon_g: Some(rec.carbon_g),
                runs: rec.runs,
                opt: BTreeMap::new(),
                error: None,
            })
        };
        rows.push(attempt().unwrap_or_else(|e| ReportRow::failed(&spec.name, e)));
    }

    for row in &mut rows {
        if row.error.is_some() {
            continue;
        }
        let scored = (|| -> Result<BTreeMap<String, OptScore>> {
            let ratios = ResourceRatios::from_raw(
                base_rec.wall_time_s,
                row.time_s.unwrap_or(f64::NAN),
                base_rec.energy_kwh,
                row.energy_kwh.unwrap_or(f64::NAN),
            )?;
            let quality = Quality::Single {
                base: base_ppl,
                model: row.perplexity.unwrap_or(f64::NAN),
            };
            profiles
                .iter()
                .map(|p| {
                    let r = opt_score(quality, ratios, p)?;
                    Ok((
                        p.name.clone(),
                        OptScore {
                            quality_factor: r.quality_factor,
                            cost_factor: r.cost_factor,
                            opt: r.opt,
                        },
                    ))
                })
                .collect()
        })();
        match scored {
            Ok(opt) => row.opt = opt,
            Err(e) => row.error = Some(format!("scoring failed: {e}")),
        }
    }

    let report = Report {
        config_digest: cfg.digest(),
        rows,
    };
    if let Some(dir) = &cfg.output_dir {
        write_outputs(&report, &profiles, &cfg.resolve(dir))?;
    }
    Ok(report)
}

/// Writes `report.json`, `metrics.csv` and, when any pipeline scored,
/// `plot_data.csv` into `dir`.
pub fn write_outputs(report: &Report, profiles: &[WeightProfile], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report.to_json())?;
    let metrics = report.metrics();
    let mut csv = Vec::new();
    write_metrics(&metrics, &mut csv)?;
    fs::write(dir.join("metrics.csv"), csv)?;
    if !metrics.is_empty() {
        let table: OptTable = score_report(&metrics, profiles)?;
        super::metrics::emit_plot_data(&table, dir.join("plot_data.csv"))?;
    }
    Ok(())
}
