//! Marching-cubes extraction of instance surfaces, vertex colors from the
//! texture field, and mesh export.

mod export;
mod marching;
pub(crate) mod tables;

pub use export::{color_byte, export_mesh, load_ply, parse_ply, ply_bytes, MeshFormat};
pub use marching::{
    marching_cubes, marching_cubes_batched, sample_grid, sample_grid_banded, triangulate, GridSpec, GridValues,
    NarrowBand, ISO_NUDGE,
};

use std::path::Path;

use thiserror::Error;

use crate::fields::{FieldError, ImplicitModel, LatentCode, LocalFeature, SURFACE_TOLERANCE};
use crate::geometry::vec3::Vec3;
use crate::geometry::{GeometryError, Mesh};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("grid: {0}")]
    Grid(String),
    #[error("non-finite field value {value} at node {node:?} ({position:?})")]
    NonFinite { node: [usize; 3], position: Vec3, value: f64 },
    #[error("{0}")]
    Format(String),
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

impl ExtractError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Zero level set of the instance field for `z_shape`, sampled with the
/// default narrow band.
pub fn extract_instance(model: &ImplicitModel, z_shape: &LatentCode, grid: &GridSpec) -> Result<Mesh, ExtractError> {
    extract_instance_with(model, z_shape, grid, Some(&NarrowBand::default()))
}

/// `band: None` evaluates the field on every grid node.
pub fn extract_instance_with(
    model: &ImplicitModel,
    z_shape: &LatentCode,
    grid: &GridSpec,
    band: Option<&NarrowBand>,
) -> Result<Mesh, ExtractError> {
    // fail on a bad code before touching the grid
    model.instance_sdf(&[], z_shape)?;
    let field = |pts: &[Vec3]| Ok(model.instance_sdf(pts, z_shape)?);
    let samples = match band {
        Some(b) => sample_grid_banded(field, grid, b)?,
        None => sample_grid(field, grid)?,
    };
    Ok(triangulate(&samples))
}

/// Per-vertex colors from the texture field; geometry is left untouched.
pub fn colorize(
    model: &ImplicitModel,
    mesh: &Mesh,
    z_shape: &LatentCode,
    z_tex: &LatentCode,
    z_pose: Option<&LatentCode>,
) -> Result<Mesh, ExtractError> {
    let z_loc = LocalFeature::zeros(model.dims().loc);
    let colors = model.surface_color(&mesh.vertices, z_shape, z_tex, z_pose, &z_loc, SURFACE_TOLERANCE)?;
    Ok(mesh.clone().with_colors(colors))
}
