use std::io;
use std::path::{Path, PathBuf};

use roomxfer_core::audio::AudioError;
use roomxfer_core::dataset::DatasetError;
use roomxfer_core::dsp::DspError;
use roomxfer_core::rir::RirError;
use roomxfer_core::tensor::TensorError;
use roomxfer_core::transfer::TransferError;
use thiserror::Error;

use crate::config::ConfigError;
use crate::formats::FormatError;
use crate::wav::WavError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit status: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) | Error::Config(_) => 2,
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}

impl From<AudioError> for Error {
    fn from(e: AudioError) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<DspError> for Error {
    fn from(e: DspError) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<RirError> for Error {
    fn from(e: RirError) -> Self {
        Error::Usage(e.to_string())
    }
}

impl From<DatasetError> for Error {
    fn from(e: DatasetError) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<TensorError> for Error {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFiniteGrad(_) => Error::Numeric(e.to_string()),
            _ => Error::Data(e.to_string()),
        }
    }
}

impl From<TransferError> for Error {
    fn from(e: TransferError) -> Self {
        match e {
            TransferError::Tensor(t) => t.into(),
            TransferError::Dsp(d) => d.into(),
            TransferError::Audio(a) => a.into(),
            TransferError::TooShort { .. } => Error::Data(e.to_string()),
        }
    }
}
