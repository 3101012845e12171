//! Command-line pipeline: generate synthetic scenarios, train, predict,
//! evaluate (with optional multi-model ensembling), merge predictions and
//! render scenes. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};

use tjf_core::checkpoint::{load_checkpoint, save_checkpoint};
use tjf_core::config::{parse_model_config, parse_synth_config, parse_train_config};
use tjf_core::dataio::{
    parse_prediction_file, parse_scenario_file, write_prediction_file, write_scenario_file,
    PredictionRecord,
};
use tjf_core::model::{FeatureConfig, Forecaster, ModelConfig};
use tjf_core::nn::ParameterStore;
use tjf_core::pipeline::{evaluate_prediction_files, merge_prediction_files, predict_dataset};
use tjf_core::render::render_svg;
use tjf_core::scenario::Scenario;
use tjf_core::synth::generate_synthetic;
use tjf_core::train::{train, TrainConfig};

#[derive(Parser)]
#[command(name = "tjf", version, about = "Multi-modal trajectory forecasting pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic scenario file from a key=value config
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a forecaster on a scenario file
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Model config (key=value); defaults apply when omitted
        #[arg(long = "model-config")]
        model_config: Option<PathBuf>,
        /// Train config (key=value); defaults apply when omitted
        #[arg(long = "train-config")]
        train_config: Option<PathBuf>,
        /// Checkpoint output path
        #[arg(long)]
        out: PathBuf,
        /// Epoch log output (defaults to <out>.log)
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Forecast every scenario with a trained checkpoint
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction files; several --pred files are ensembled first
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "pred", required = true)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Merge prediction files from independently trained models
    Ensemble {
        #[arg(long = "pred", required = true)]
        pred: Vec<PathBuf>,
        /// Output mode count (defaults to the first file's K)
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one scenario (plus optional predictions) as SVG
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

fn read_config(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| usage(format!("config `{}`: {e}", path.display())))
}

fn read_data(path: &Path) -> Result<Vec<Scenario>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| runtime(format!("data `{}`: {e}", path.display())))?;
    let scenarios = parse_scenario_file(&text)
        .map_err(|e| runtime(format!("data `{}`: {e}", path.display())))?;
    if scenarios.is_empty() {
        return Err(runtime(format!("data `{}`: no scenarios", path.display())));
    }
    Ok(scenarios)
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| runtime(format!("predictions `{}`: {e}", path.display())))?;
    parse_prediction_file(&text)
        .map_err(|e| runtime(format!("predictions `{}`: {e}", path.display())))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content).map_err(|e| runtime(format!("write `{}`: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Generate { config, out } => {
            let cfg = parse_synth_config(&read_config(&config)?).map_err(usage)?;
            let scenarios = generate_synthetic(&cfg).map_err(usage)?;
            write_file(&out, &write_scenario_file(&scenarios))?;
            println!("wrote {} scenarios to {}", scenarios.len(), out.display());
            Ok(())
        }
        Cmd::Train { data, model_config, train_config, out, log } => {
            let model_cfg = match model_config {
                Some(p) => parse_model_config(&read_config(&p)?).map_err(usage)?,
                None => ModelConfig::default(),
            };
            let train_cfg = match train_config {
                Some(p) => parse_train_config(&read_config(&p)?).map_err(usage)?,
                None => TrainConfig::default(),
            };
            let scenarios = read_data(&data)?;
            let outcome = train(
                &scenarios,
                model_cfg,
                &train_cfg,
                &FeatureConfig::default(),
                |entry| println!("{}", entry.to_line()),
            )
            .map_err(runtime)?;
            save_checkpoint(&outcome.store, &model_cfg, &out).map_err(runtime)?;
            let log_path = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log");
                PathBuf::from(p)
            });
            let log_text: String = outcome.log.iter().map(|e| e.to_line() + "\n").collect();
            write_file(&log_path, &log_text)?;
            println!(
                "trained {} epochs on {} scenarios; checkpoint {}",
                train_cfg.epochs,
                scenarios.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Predict { data, ckpt, out } => {
            let scenarios = read_data(&data)?;
            let (store, cfg) = load_checkpoint(&ckpt).map_err(runtime)?;
            let model = rebind_model(cfg)?;
            let records = predict_dataset(&scenarios, &model, &store, &FeatureConfig::default())
                .map_err(runtime)?;
            write_file(&out, &write_prediction_file(&records))?;
            println!("wrote {} predictions to {}", records.len(), out.display());
            Ok(())
        }
        Cmd::Evaluate { data, pred, report } => {
            let scenarios = read_data(&data)?;
            let models = pred
                .iter()
                .map(|p| read_predictions(p))
                .collect::<Result<Vec<_>, _>>()?;
            let result = evaluate_prediction_files(&scenarios, &models).map_err(runtime)?;
            write_file(&report, &result.to_text())?;
            let agg = result.aggregate();
            println!(
                "evaluated {} scenarios (M={}): minADE_K{} {:.4}, minFDE_K{} {:.4}",
                agg.count,
                models.len(),
                result.k_full,
                agg.full.min_ade,
                result.k_full,
                agg.full.min_fde
            );
            Ok(())
        }
        Cmd::Ensemble { pred, k, out } => {
            if pred.len() < 2 {
                return Err(usage("ensemble needs at least two --pred files"));
            }
            let models = pred
                .iter()
                .map(|p| read_predictions(p))
                .collect::<Result<Vec<_>, _>>()?;
            let k = match k {
                Some(v) => v,
                None => models[0]
                    .first()
                    .map(|r| r.probabilities.len())
                    .ok_or_else(|| runtime("first prediction file is empty"))?,
            };
            let merged = merge_prediction_files(&models, k).map_err(runtime)?;
            write_file(&out, &write_prediction_file(&merged))?;
            println!("merged {} files into {}", models.len(), out.display());
            Ok(())
        }
        Cmd::Render { data, pred, scenario, out } => {
            let scenarios = read_data(&data)?;
            let target = scenarios
                .iter()
                .find(|s| s.scenario_id == scenario)
                .ok_or_else(|| runtime(format!("unknown scenario id `{scenario}`")))?;
            let record = match pred {
                None => None,
                Some(p) => {
                    let records = read_predictions(&p)?;
                    Some(
                        records
                            .into_iter()
                            .find(|r| r.scenario_id == scenario)
                            .ok_or_else(|| {
                                runtime(format!("no prediction for scenario `{scenario}`"))
                            })?,
                    )
                }
            };
            write_file(&out, &render_svg(target, record.as_ref()))?;
            println!("rendered {} to {}", scenario, out.display());
            Ok(())
        }
    }
}

/// Rebuild the parameter layout for a loaded checkpoint; the loaded store
/// already passed the layout validation.
fn rebind_model(cfg: ModelConfig) -> Result<Forecaster, CliError> {
    let mut scratch = ParameterStore::new();
    Forecaster::init(cfg, &mut scratch, 0).map_err(runtime)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
