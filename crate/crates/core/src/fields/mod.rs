//! The implicit model: a residual warp into template space, the template
//! signed-distance network, and the texture network on the template surface.

mod mlp;
mod model;
#[cfg(test)]
mod tests;

pub use mlp::{Activation, Init, Linear, Mlp, MlpSpec};
pub use model::{ImplicitModel, MlpConfig, ModelConfig, ModelDims, QUERY_CHUNK, WARP_FINAL_BOUND};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;

/// Largest `|instance_sdf|` at which a point still counts as on the surface.
pub const SURFACE_TOLERANCE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeKind {
    Shape,
    Texture,
    Pose,
}

impl CodeKind {
    pub fn name(self) -> &'static str {
        match self {
            CodeKind::Shape => "shape",
            CodeKind::Texture => "texture",
            CodeKind::Pose => "pose",
        }
    }
}

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("expected a {} code, got a {} code", expected.name(), got.name())]
    KindMismatch { expected: CodeKind, got: CodeKind },
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("point {index} is off the surface: |sdf| = {} > {tolerance}", sdf.abs())]
    OffSurface { index: usize, sdf: f64, tolerance: f64 },
    #[error("pose encoding has zero length")]
    ZeroPose,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// A latent vector whose kind is fixed at creation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    kind: CodeKind,
    vector: Vec<f64>,
}

impl LatentCode {
    pub fn new(kind: CodeKind, vector: Vec<f64>) -> Result<Self, FieldError> {
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(FieldError::NonFinite(format!("{} code", kind.name())));
        }
        Ok(Self { kind, vector })
    }

    pub fn zeros(kind: CodeKind, dim: usize) -> Self {
        Self {
            kind,
            vector: vec![0.0; dim],
        }
    }

    pub fn kind(&self) -> CodeKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }
}

/// Per-point local texture feature. Always the zero vector here.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFeature {
    vector: Vec<f64>,
}

impl LocalFeature {
    pub fn zeros(dim: usize) -> Self {
        Self {
            vector: vec![0.0; dim],
        }
    }

    /// Accepts any vector whose components all compare equal to zero.
    pub fn new(vector: Vec<f64>) -> Result<Self, FieldError> {
        if vector.iter().any(|&v| v != 0.0) {
            return Err(FieldError::Invalid("local feature must be zero".into()));
        }
        Ok(Self { vector })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }
}

/// `(sin yaw, cos yaw)`.
pub fn encode_pose(yaw: f64) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [s, c]
}

/// Inverse of [`encode_pose`], scale-invariant, in (−π, π].
pub fn decode_pose(o: [f64; 2]) -> Result<f64, FieldError> {
    if !(o[0].is_finite() && o[1].is_finite()) {
        return Err(FieldError::NonFinite("pose encoding".into()));
    }
    if o[0] == 0.0 && o[1] == 0.0 {
        return Err(FieldError::ZeroPose);
    }
    let yaw = o[0].atan2(o[1]);
    // atan2(−0, negative) is −π
    Ok(if yaw == -std::f64::consts::PI { std::f64::consts::PI } else { yaw })
}
