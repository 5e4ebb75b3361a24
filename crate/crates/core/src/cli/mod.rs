//! Command-line front end. Every flag has a config-file key of the same
//! name (`--obs-dim` reads `obs-dim`); flags win over the file, and the
//! file wins over built-in defaults.
//!
//! Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 numerical
//! failure. Failures print one line `error[<kind>]: <reason>` to stderr.

mod commands;
mod error;

pub use error::CliError;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::trajgen::{Scenario, Split};

pub const DATA_DIR_ENV: &str = "KIDD_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "kidd", version, about = "Koopman embeddings for pose trajectories")]
pub struct Cli {
    /// TOML file whose keys mirror the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Default root for datasets and models.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset file.
    Gen(GenArgs),
    /// Fit a model to a dataset.
    Train(TrainArgs),
    /// Prediction errors of a model on a dataset split.
    Eval(EvalArgs),
    /// Predicted and true poses for one trajectory.
    Predict(PredictArgs),
    /// Eigen-spectrum of a model's operator.
    Spectrum(SpectrumArgs),
    /// Keep the top-k eigenvalues of a model's operator.
    Reduce(ReduceArgs),
    /// Edit one eigenvalue or conjugate pair of a model's operator.
    Manipulate(ManipulateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Predict(_) => "predict",
            Command::Spectrum(_) => "spectrum",
            Command::Reduce(_) => "reduce",
            Command::Manipulate(_) => "manipulate",
            Command::Serve(_) => "serve",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenArgs {
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Koopman,
    Dmd,
    Edmd,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub obs_dim: Option<usize>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    /// Enable the input map; defaults to on for the collision scenario.
    #[arg(long)]
    pub inputs: Option<bool>,
    #[arg(long)]
    pub ts: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub lambda_ae: Option<f64>,
    #[arg(long)]
    pub lambda_fit: Option<f64>,
    #[arg(long)]
    pub lambda_input: Option<f64>,
    #[arg(long)]
    pub lambda_rank: Option<f64>,
    #[arg(long)]
    pub warm_start: Option<bool>,
    #[arg(long)]
    pub max_train: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    /// Evaluate with the operator reduced to its top-k eigenvalues.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Write the JSON report here; the text table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PredictArgs {
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SpectrumArgs {
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ReduceArgs {
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ManipulateArgs {
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Mode id from the spectrum's `pairs`; defaults to the dominant pair.
    #[arg(long)]
    pub pair: Option<usize>,
    /// Absolute radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Absolute angle in radians.
    #[arg(long, allow_negative_numbers = true)]
    pub angle: Option<f64>,
    #[arg(long)]
    pub radius_scale: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub angle_scale: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ServeArgs {
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long)]
    pub snapshot_dir: Option<PathBuf>,
    #[arg(long)]
    pub cors_origin: Option<String>,
}

/// Flag values over config-file values. The file may hold shared keys at
/// the top level and per-command tables (`[train]`) that override them.
pub fn merge_with_file<T: Serialize + DeserializeOwned>(
    flags: &T,
    file: Option<&toml::Table>,
    command: &str,
) -> Result<T, CliError> {
    let mut merged = Map::new();
    if let Some(table) = file {
        for (k, v) in table {
            if !v.is_table() {
                merged.insert(k.clone(), to_json(v)?);
            }
        }
        if let Some(toml::Value::Table(section)) = table.get(command) {
            for (k, v) in section {
                merged.insert(k.clone(), to_json(v)?);
            }
        }
    }
    let Value::Object(given) = serde_json::to_value(flags).expect("flags serialize") else {
        unreachable!("argument structs serialize to objects")
    };
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config file: {e}")))
}

fn to_json(v: &toml::Value) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Usage(format!("config file: {e}")))
}

pub fn read_config(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    text.parse::<toml::Table>().map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return CliError::Usage(first.to_string()).report();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => e.report(),
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let file = cli.config.as_deref().map(read_config).transpose()?;
    let file_data_dir = file.as_ref().and_then(|t| t.get("data-dir")).and_then(|v| v.as_str()).map(PathBuf::from);
    let data_dir = cli.data_dir.or(file_data_dir).unwrap_or_else(|| PathBuf::from("data"));
    let name = cli.command.name();
    let f = file.as_ref();
    match cli.command {
        Command::Gen(a) => commands::gen(merge_with_file(&a, f, name)?, &data_dir),
        Command::Train(a) => commands::train(merge_with_file(&a, f, name)?, &data_dir),
        Command::Eval(a) => commands::eval(merge_with_file(&a, f, name)?, &data_dir),
        Command::Predict(a) => commands::predict(merge_with_file(&a, f, name)?, &data_dir),
        Command::Spectrum(a) => commands::spectrum(merge_with_file(&a, f, name)?, &data_dir),
        Command::Reduce(a) => commands::reduce(merge_with_file(&a, f, name)?, &data_dir),
        Command::Manipulate(a) => commands::manipulate(merge_with_file(&a, f, name)?, &data_dir),
        Command::Serve(a) => commands::serve(merge_with_file(&a, f, name)?, &data_dir),
    }
}
