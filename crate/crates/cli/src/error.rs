use std::fmt;

use graspkit::annealer::AnnealError;
use graspkit::capsnet::CapsNetError;
use graspkit::config::ConfigError;
use graspkit::datasetgen::DatasetError;
use graspkit::losses::LossError;
use graspkit::pointcloud::PointCloudError;
use graspkit::postprocess::PostprocessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Io,
    Validation,
    Numerical,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Io => 2,
            Kind::Validation => 3,
            Kind::Numerical => 4,
        }
    }
}

/// Failure of one pipeline stage.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(stage: &'static str, kind: Kind, message: impl Into<String>) -> Self {
        Self {
            stage,
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

pub trait HasKind: fmt::Display {
    fn kind(&self) -> Kind;
}

impl HasKind for std::io::Error {
    fn kind(&self) -> Kind {
        Kind::Io
    }
}

impl HasKind for serde_json::Error {
    fn kind(&self) -> Kind {
        if self.is_io() {
            Kind::Io
        } else {
            Kind::Validation
        }
    }
}

impl HasKind for ConfigError {
    fn kind(&self) -> Kind {
        match self {
            ConfigError::Io { .. } => Kind::Io,
            _ => Kind::Validation,
        }
    }
}

impl HasKind for PointCloudError {
    fn kind(&self) -> Kind {
        match self {
            PointCloudError::Io { .. } => Kind::Io,
            PointCloudError::NonFinite { .. } | PointCloudError::DegenerateCloud => Kind::Numerical,
            _ => Kind::Validation,
        }
    }
}

impl HasKind for AnnealError {
    fn kind(&self) -> Kind {
        match self {
            AnnealError::BoundsExhausted => Kind::Numerical,
            _ => Kind::Validation,
        }
    }
}

impl HasKind for DatasetError {
    fn kind(&self) -> Kind {
        match self {
            DatasetError::Io { .. } => Kind::Io,
            DatasetError::PointCloud(e) => e.kind(),
            DatasetError::Anneal(e) => e.kind(),
            _ => Kind::Validation,
        }
    }
}

impl HasKind for CapsNetError {
    fn kind(&self) -> Kind {
        match self {
            CapsNetError::Io(_) => Kind::Io,
            _ => Kind::Validation,
        }
    }
}

impl HasKind for LossError {
    fn kind(&self) -> Kind {
        Kind::Validation
    }
}

impl HasKind for PostprocessError {
    fn kind(&self) -> Kind {
        match self {
            PostprocessError::NonFinite { .. } | PostprocessError::NoConsensus { .. } => Kind::Numerical,
            PostprocessError::PointCloud(e) => e.kind(),
            PostprocessError::CapsNet(e) => e.kind(),
            _ => Kind::Validation,
        }
    }
}

pub trait Stage<T> {
    /// Tags an error with the stage it happened in.
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T, E: HasKind> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(stage, e.kind(), e.to_string()))
    }
}
