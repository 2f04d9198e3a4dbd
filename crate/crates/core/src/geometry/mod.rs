//! Mesh ingestion, normalization, exact signed distance and the supervision
//! samplers.

mod bvh;
mod keypoints;
pub(crate) mod mesh;
mod normalize;
mod obj;
mod sampling;
pub mod vec3;

pub use bvh::{BvhIndex, ClosestHit, Feature};
pub use keypoints::{load_keypoints, Keypoints};
pub use mesh::Mesh;
pub use normalize::{normalize_mesh, SimilarityTransform, NORMALIZED_RADIUS};
pub use obj::{load_mesh, obj_string, parse_obj, write_obj, LoadedMesh};
pub use sampling::{
    mix_seed, sample_sdf_points, sample_surface_colors, sample_surface_points, stream_rng, AreaSampler,
    SdfSamples, SurfaceSamples, NEAR_FRACTION, SIGMA_COARSE, SIGMA_FINE,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mesh has no triangles")]
    NoTriangles,
    #[error("mesh has no vertex colors")]
    Colorless,
    #[error("keypoints: {0}")]
    Keypoints(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
