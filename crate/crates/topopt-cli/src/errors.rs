//! Error-to-exit-code mapping: 2 configuration, 3 numeric, 4 I/O.

use std::fmt;
use topopt::dataset::DatasetError;
use topopt::eval::EvalError;
use topopt::fem::FemError;
use topopt::nn::NnError;
use topopt::simp::SimpError;
use topopt::unet::{CheckpointError, TrainError};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<FemError> for CliError {
    fn from(e: FemError) -> Self {
        match e {
            FemError::SingularSystem | FemError::NonFinite => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SimpError> for CliError {
    fn from(e: SimpError) -> Self {
        match e {
            SimpError::InvalidConfig(m) => CliError::Config(m),
            SimpError::BisectionFailure => CliError::Numeric(e.to_string()),
            SimpError::Fem(inner) => inner.into(),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(inner) => CliError::Io(inner.to_string()),
            DatasetError::Format(m) | DatasetError::Config(m) => CliError::Config(m),
            DatasetError::Fem(inner) => inner.into(),
            DatasetError::Simp(inner) => inner.into(),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainError::Data(m) => CliError::Config(m),
            TrainError::Nn(inner) => inner.into(),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(inner) => CliError::Io(inner.to_string()),
            CheckpointError::Format(m) => CliError::Config(m),
            CheckpointError::Nn(inner) => inner.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(inner) => CliError::Io(inner.to_string()),
            EvalError::Fem(inner) => inner.into(),
            EvalError::Simp(inner) => inner.into(),
            EvalError::Nn(inner) => inner.into(),
            EvalError::Shape(m) => CliError::Config(m),
        }
    }
}

/// Shorthand for converting library results into CLI results.
pub trait Fallible<T> {
    fn fallible(self) -> Result<T, CliError>;
    /// Same conversion, named for call sites where failures are numeric.
    fn numeric(self) -> Result<T, CliError>
    where
        Self: Sized,
    {
        self.fallible()
    }
}

impl<T, E: Into<CliError>> Fallible<T> for Result<T, E> {
    fn fallible(self) -> Result<T, CliError> {
        self.map_err(Into::into)
    }
}
