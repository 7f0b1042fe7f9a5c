use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use complab::bench::{self, MethodMetrics, OptTable, SuiteConfig};
use complab::compress::{head_concentration, prune_heads, prune_model_2_4, quantize_model, QuantBits};
use complab::distill::{self, DistillConfig, Method};
use complab::fixtures::BUNDLED_CORPUS;
use complab::model::{load_model, perplexity_with, save_model, Model, ModelConfig, PerplexityWindow};
use complab::score::WeightProfile;
use complab::tokenizer::tokenize;
use complab::{LabError, Result};

#[derive(Parser)]
#[command(name = "complab", version, about = "Compression lab for tiny transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark suite (the built-in technique matrix without --config).
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Repetitions per pipeline [default: 30, or the config's value].
        #[arg(long)]
        reps: Option<usize>,
        /// Seed for the built-in matrix.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// synthetic | synthetic:<s>,<J> | power:<watts> | counter:<path>,<wrap>
        #[arg(long)]
        energy_source: Option<String>,
        /// Profile name or "alpha,beta"; repeatable.
        #[arg(long)]
        profile: Vec<String>,
    },
    /// Score a metrics CSV (or bundled:<name>) under every profile.
    Score {
        csv: String,
        #[arg(long)]
        profile: Vec<String>,
    },
    /// Rank the methods of a metrics CSV under one profile.
    Rank {
        csv: String,
        #[arg(long, default_value = "balanced")]
        profile: String,
    },
    /// Write method,profile,opt rows for plotting.
    PlotData {
        csv: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        profile: Vec<String>,
    },
    /// Create a seeded toy model, optionally trained on a corpus.
    Init {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Model config as JSON; the toy config when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        train_steps: usize,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perplexity of a model on a corpus (the bundled corpus when absent).
    Perplexity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Per-row absmax quantization of every projection.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = ["8", "4"])]
        bits: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mask attention heads whose concentration reaches the threshold.
    PruneHeads {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        /// Calibration text; the bundled corpus when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        sequences: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep the two largest of every four weights along each row.
    #[command(name = "prune-24")]
    Prune24 {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill a student from a teacher model.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        /// Student model config as JSON; the teacher's config with one layer when absent.
        #[arg(long)]
        student_config: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MethodArg::ForwardKld)]
        method: MethodArg,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0.0)]
        ce_mix_lambda: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Per-step training loss as CSV.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    ForwardKld,
    ReverseKld,
    SeqKd,
}

fn read_corpus(path: Option<&Path>) -> Result<Vec<u32>> {
    Ok(match path {
        Some(p) => tokenize(&fs::read(p)?),
        None => tokenize(BUNDLED_CORPUS.as_bytes()),
    })
}

fn read_metrics(spec: &str) -> Result<Vec<MethodMetrics>> {
    match spec.strip_prefix("bundled:") {
        Some(name) => {
            let text = bench::bundled(name).ok_or_else(|| {
                let names: Vec<&str> = bench::BUNDLED.iter().map(|(n, _)| *n).collect();
                LabError::Config(format!("no bundled table '{name}' (have: {})", names.join(", ")))
            })?;
            bench::parse_metrics(text)
        }
        None => bench::ingest_metrics(spec),
    }
}

fn parse_profiles(names: &[String]) -> Result<Vec<WeightProfile>> {
    if names.is_empty() {
        return Ok(WeightProfile::builtin());
    }
    names.iter().map(|n| n.parse()).collect()
}

fn print_table(table: &OptTable) {
    println!("{:<16} {:<10} {:>10} {:>10} {:>10}", "method", "profile", "quality", "cost", "opt");
    for r in &table.rankings {
        for (method, res) in &r.entries {
            println!(
                "{:<16} {:<10} {:>10.5} {:>10.5} {:>10.5}",
                method, r.profile.name, res.quality_factor, res.cost_factor, res.opt
            );
        }
    }
}

fn read_config(path: &Path) -> Result<ModelConfig> {
    let cfg: ModelConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            reps,
            seed,
            out,
            energy_source,
            profile,
        } => {
            let mut cfg = match config {
                Some(p) => SuiteConfig::load(p)?,
                None => SuiteConfig::technique_matrix(seed),
            };
            if let Some(r) = reps {
                cfg.repetitions = r;
            }
            if let Some(src) = energy_source {
                cfg.energy_source = src;
            }
            if !profile.is_empty() {
                cfg.profiles = profile;
            }
            if let Some(dir) = out {
                // Relative to the working directory, not the config file.
                cfg.output_dir = Some(std::path::absolute(dir)?);
            }
            let report = bench::run_suite(&cfg)?;
            println!("{:<16} {:>12} {:>12} {:>14} {:>10}", "pipeline", "perplexity", "time_s", "energy_kwh", "balanced");
            for row in &report.rows {
                match &row.error {
                    Some(e) => println!("{:<16} error: {e}", row.pipeline),
                    None => println!(
                        "{:<16} {:>12.4} {:>12.4} {:>14.6e} {:>10}",
                        row.pipeline,
                        row.perplexity.unwrap_or(f64::NAN),
                        row.time_s.unwrap_or(f64::NAN),
                        row.energy_kwh.unwrap_or(f64::NAN),
                        row.opt.get("balanced").map_or("-".to_string(), |o| format!("{:.5}", o.opt)),
                    ),
                }
            }
            if let Some(dir) = &cfg.output_dir {
                println!("wrote {}", dir.join("report.json").display());
            }
        }
        Command::Score { csv, profile } => {
            let table = bench::score_report(&read_metrics(&csv)?, &parse_profiles(&profile)?)?;
            print_table(&table);
        }
        Command::Rank { csv, profile } => {
            let table = bench::score_report(&read_metrics(&csv)?, &[profile.parse()?])?;
            for (i, (method, res)) in table.rankings[0].entries.iter().enumerate() {
                println!("{:>2}. {:<16} {:.5}", i + 1, method, res.opt);
            }
        }
        Command::PlotData { csv, out, profile } => {
            let table = bench::score_report(&read_metrics(&csv)?, &parse_profiles(&profile)?)?;
            bench::emit_plot_data(&table, &out)?;
        }
        Command::Init {
            seed,
            config,
            train_steps,
            corpus,
            out,
        } => {
            let config = match config {
                Some(p) => read_config(&p)?,
                None => ModelConfig::toy(),
            };
            let model = if train_steps == 0 {
                Model::init(config, seed)?
            } else {
                let tc = DistillConfig {
                    steps: train_steps,
                    learning_rate: 3e-3,
                    seed,
                    seq_len: config.context_len.min(32),
                    ..DistillConfig::default()
                };
                let outcome = distill::train_language_model(config, &read_corpus(corpus.as_deref())?, &tc)?;
                if let Some(last) = outcome.losses.last() {
                    println!("final training loss {last:.4}");
                }
                outcome.model
            };
            save_model(&model, &out)?;
        }
        Command::Perplexity {
            model,
            corpus,
            window,
            stride,
        } => {
            let model = load_model(model)?;
            let window = window.unwrap_or(model.config.context_len);
            let w = PerplexityWindow {
                window,
                stride: stride.unwrap_or(window),
            };
            println!("{:.6}", perplexity_with(&model, &read_corpus(corpus.as_deref())?, w)?);
        }
        Command::Quantize { model, bits, out } => {
            let bits = if bits == "8" { QuantBits::Eight } else { QuantBits::Four };
            save_model(&quantize_model(&load_model(model)?, bits)?, out)?;
        }
        Command::PruneHeads {
            model,
            threshold,
            corpus,
            sequences,
            out,
        } => {
            let model = load_model(model)?;
            let tokens = read_corpus(corpus.as_deref())?;
            let len = model.config.context_len.min(tokens.len());
            let calibration: Vec<Vec<u32>> = tokens.chunks_exact(len).take(sequences).map(<[u32]>::to_vec).collect();
            let report = head_concentration(&model, &calibration)?;
            let pruned = prune_heads(&model, &report, threshold)?;
            for h in &report.heads {
                let mark = if pruned.head_mask[h.layer][h.head] { "pruned" } else { "" };
                println!("layer {} head {} score {:.5} {mark}", h.layer, h.head, h.score);
            }
            save_model(&pruned, out)?;
        }
        Command::Prune24 { model, out } => {
            save_model(&prune_model_2_4(&load_model(model)?)?, out)?;
        }
        Command::Distill {
            teacher,
            student_config,
            corpus,
            method,
            temperature,
            ce_mix_lambda,
            steps,
            learning_rate,
            seed,
            out,
            loss_log,
        } => {
            let teacher = load_model(teacher)?;
            let student = match student_config {
                Some(p) => read_config(&p)?,
                None => ModelConfig {
                    n_layers: 1,
                    ..teacher.config
                },
            };
            let cfg = DistillConfig {
                method: match method {
                    MethodArg::ForwardKld => Method::ForwardKld,
                    MethodArg::ReverseKld => Method::ReverseKld,
                    MethodArg::SeqKd => Method::SeqKd,
                },
                temperature,
                ce_mix_lambda,
                steps,
                learning_rate,
                seed,
                seq_len: teacher.config.context_len.min(student.context_len).min(32),
                ..DistillConfig::default()
            };
            let outcome = distill::train_student(&teacher, student, &read_corpus(corpus.as_deref())?, &cfg)?;
            if let Some(path) = loss_log {
                distill::write_loss_csv(&outcome.losses, fs::File::create(path)?)?;
            }
            if let (Some(first), Some(last)) = (outcome.losses.first(), outcome.losses.last()) {
                println!("loss {first:.4} -> {last:.4}");
            }
            save_model(&outcome.model, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
