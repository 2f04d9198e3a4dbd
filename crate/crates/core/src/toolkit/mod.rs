//! Applications, evaluation metrics, sample caches and the command line.

mod apps;
pub mod cli;
mod metrics;
mod prepare;

pub use apps::{correspond, interpolate_codes, template_surface, texture_transfer, WarpedSurface};
pub use metrics::{
    chamfer, color_mae, evaluate, evaluate_fields, evaluate_instance, keypoint_residual, sdf_mae, EvalInstance,
    EvalOptions, EvalReport, FieldQuery, InstanceCodes, InstanceReport,
};
pub use prepare::{
    instance_seed, load_any, load_prepared, prepare_dataset, sample_dataset, write_prepared, PreparedIndex,
    PreparedInstance, PreparedSet, SAMPLE_EXTENSION, SAMPLE_MAGIC, SAMPLE_VERSION,
};

use std::path::Path;

use thiserror::Error;

use crate::extraction::ExtractError;
use crate::fields::FieldError;
use crate::geometry::GeometryError;
use crate::synth::SynthError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum ToolkitError {
    #[error("{0}")]
    Invalid(String),
    #[error("sample cache: {0}")]
    Cache(String),
    #[error("sample cache is truncated")]
    Truncated,
    #[error("sample cache checksum mismatch")]
    Checksum,
    #[error("sample cache version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ToolkitError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
