//! Auto-decoder training: loss terms, the joint optimization loop over
//! network weights and per-instance codes, and checkpoints.

mod checkpoint;
mod config;
mod losses;
mod registry;
mod trainer;
#[cfg(test)]
pub(crate) mod tests;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{BatchConfig, LossWeights, SampleConfig, TrainConfig};
pub use losses::{
    geo_term, kps_term, loss_geo, loss_kps, loss_pose, loss_tex, loss_tp_sdf, pose_term, tex_term,
    total_loss, tp_sdf_term, LossComponents,
};
pub use registry::{code_name, CodeEntry, LatentRegistry, RegistryLayout};
pub use trainer::{
    initialize, loss_csv, step_objective, train, train_with, LossRecord, StepTerms, TrainOutput,
    LOSS_CSV_HEADER,
};

use std::path::Path;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::fields::FieldError;
use crate::geometry::{
    mix_seed, normalize_mesh, sample_sdf_points, sample_surface_colors, BvhIndex, GeometryError,
    Keypoints, Mesh, SdfSamples, SimilarityTransform, SurfaceSamples,
};

/// Supervision for one instance, in the normalized frame.
#[derive(Clone, Debug)]
pub struct TrainingInstance {
    pub instance_id: String,
    pub sdf: SdfSamples,
    pub surface: SurfaceSamples,
    pub keypoints: Keypoints,
    /// Ground-truth heading, used only with pose conditioning.
    pub yaw: f64,
}

impl TrainingInstance {
    /// Normalizes `mesh` (keypoints follow) and draws `sdf_count` SDF and
    /// `surface_count` surface samples. Returns the normalized mesh and the
    /// transform alongside.
    pub fn from_mesh(
        instance_id: &str,
        mesh: &Mesh,
        keypoints: &Keypoints,
        yaw: f64,
        sdf_count: usize,
        surface_count: usize,
        seed: u64,
    ) -> Result<(Self, Mesh, SimilarityTransform), TrainError> {
        let (normalized, transform) = normalize_mesh(mesh);
        let index = BvhIndex::build(&normalized);
        let sdf = sample_sdf_points(&normalized, &index, sdf_count, mix_seed(seed, 1))?;
        let surface = sample_surface_colors(&normalized, surface_count, mix_seed(seed, 2))?;
        let instance = Self {
            instance_id: instance_id.to_string(),
            sdf,
            surface,
            keypoints: keypoints.transformed(&transform),
            yaw,
        };
        Ok((instance, normalized, transform))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{0}: empty batch")]
    EmptyBatch(&'static str),
    #[error("non-finite {term} loss{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { term: &'static str, step: Option<usize> },
    #[error("unknown instance {0:?}")]
    UnknownInstance(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
