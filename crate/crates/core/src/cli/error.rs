use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::baselines::BaselineError;
use crate::koopman::KoopmanError;
use crate::training::TrainError;
use crate::trajgen::TrajgenError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// Single-line form written to stderr.
    pub fn line(&self) -> String {
        let msg = self.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error[{}]: {msg}", self.kind())
    }

    pub(crate) fn report(&self) -> i32 {
        eprintln!("{}", self.line());
        self.exit_code()
    }
}

impl From<TrajgenError> for CliError {
    fn from(e: TrajgenError) -> Self {
        match e {
            TrajgenError::InvalidParams(_) => CliError::Usage(e.to_string()),
            TrajgenError::Degenerate(_) => CliError::Numerical(e.to_string()),
            TrajgenError::Parse { .. } | TrajgenError::Io { .. } => CliError::Io(e.to_string()),
        }
    }
}

impl From<KoopmanError> for CliError {
    fn from(e: KoopmanError) -> Self {
        match e {
            KoopmanError::Config(_) | KoopmanError::Shape(_) | KoopmanError::TooShort { .. } | KoopmanError::Horizon => {
                CliError::Usage(e.to_string())
            }
            KoopmanError::Numerics(_) => CliError::Numerical(e.to_string()),
            KoopmanError::Io { .. } | KoopmanError::Format { .. } => CliError::Io(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(_) | TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Io { .. } => CliError::Io(e.to_string()),
            TrainError::NonFinite { .. } | TrainError::Autodiff(_) | TrainError::Numerics(_) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::InvalidPair(..)
            | AnalysisError::AngleOnReal(_)
            | AnalysisError::InvalidEdit(_)
            | AnalysisError::InvalidK { .. } => CliError::Usage(e.to_string()),
            AnalysisError::ImaginaryLeak(_) | AnalysisError::Numerics(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::NotEnoughSnapshots { .. } | BaselineError::DictionaryTooLarge { .. } | BaselineError::Shape(_) => {
                CliError::Usage(e.to_string())
            }
            BaselineError::Numerics(_) => CliError::Numerical(e.to_string()),
            BaselineError::Koopman(k) => k.into(),
        }
    }
}
