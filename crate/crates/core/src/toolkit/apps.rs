//! Applications of a trained model: texture transfer, latent interpolation
//! and dense correspondence through template space.

use crate::extraction::{colorize, extract_instance, sample_grid_banded, triangulate, GridSpec, NarrowBand};
use crate::fields::{FieldError, ImplicitModel, LatentCode, LocalFeature, SURFACE_TOLERANCE};
use crate::geometry::vec3::{self, Vec3};
use crate::geometry::{Mesh, SurfaceSamples};

use super::ToolkitError;

/// Geometry of `z_shape_a` painted with texture `z_tex_b`.
pub fn texture_transfer(
    model: &ImplicitModel,
    z_shape_a: &LatentCode,
    z_tex_b: &LatentCode,
    z_pose: Option<&LatentCode>,
    grid: &GridSpec,
) -> Result<Mesh, ToolkitError> {
    let mesh = extract_instance(model, z_shape_a, grid)?;
    Ok(colorize(model, &mesh, z_shape_a, z_tex_b, z_pose)?)
}

/// The template surface itself (no warp), colored with `z_tex`.
pub fn template_surface(
    model: &ImplicitModel,
    z_tex: &LatentCode,
    z_pose: Option<&LatentCode>,
    grid: &GridSpec,
) -> Result<Mesh, ToolkitError> {
    let values = sample_grid_banded(|pts| Ok(model.template_sdf(pts)), grid, &NarrowBand::default())?;
    let mesh = triangulate(&values);
    let z_loc = LocalFeature::zeros(model.dims().loc);
    let colors = model.template_color(&mesh.vertices, z_tex, z_pose, &z_loc)?;
    Ok(mesh.with_colors(colors))
}

/// `(1−t)·z_a + t·z_b`; the endpoints come back unchanged.
pub fn interpolate_codes(z_a: &LatentCode, z_b: &LatentCode, t: f64) -> Result<LatentCode, ToolkitError> {
    if z_a.kind() != z_b.kind() {
        return Err(FieldError::KindMismatch {
            expected: z_a.kind(),
            got: z_b.kind(),
        }
        .into());
    }
    if z_a.dim() != z_b.dim() {
        return Err(FieldError::Dim {
            what: "interpolation endpoint",
            expected: z_a.dim(),
            got: z_b.dim(),
        }
        .into());
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(ToolkitError::Invalid(format!("interpolation weight {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(z_a.clone());
    }
    if t == 1.0 {
        return Ok(z_b.clone());
    }
    let v = z_a
        .vector()
        .iter()
        .zip(z_b.vector())
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    Ok(LatentCode::new(z_a.kind(), v)?)
}

/// Index of the nearest point, lowest index on ties.
fn nearest(points: &[Vec3], q: Vec3) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = vec3::norm2(vec3::sub(*p, q));
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// B's surface samples carried into template space, for repeated queries.
pub struct WarpedSurface<'a> {
    surface: &'a SurfaceSamples,
    warped: Vec<Vec3>,
}

impl<'a> WarpedSurface<'a> {
    pub fn new(model: &ImplicitModel, z_b: &LatentCode, surface_b: &'a SurfaceSamples) -> Result<Self, ToolkitError> {
        if surface_b.is_empty() {
            return Err(ToolkitError::Invalid("target surface has no samples".into()));
        }
        Ok(Self {
            surface: surface_b,
            warped: model.warp(&surface_b.points, z_b)?,
        })
    }

    /// The sample of B whose template image is closest to that of `p_on_a`.
    pub fn correspond(&self, model: &ImplicitModel, p_on_a: Vec3, z_a: &LatentCode) -> Result<Vec3, ToolkitError> {
        let sdf = model.instance_sdf(&[p_on_a], z_a)?[0];
        if !(sdf.abs() <= SURFACE_TOLERANCE) {
            return Err(FieldError::OffSurface {
                index: 0,
                sdf,
                tolerance: SURFACE_TOLERANCE,
            }
            .into());
        }
        let q = model.warp(&[p_on_a], z_a)?[0];
        let i = nearest(&self.warped, q).expect("surface is nonempty");
        Ok(self.surface.points[i])
    }
}

/// Maps a point on A's surface to B's surface samples via template space.
pub fn correspond(
    model: &ImplicitModel,
    p_on_a: Vec3,
    z_a: &LatentCode,
    z_b: &LatentCode,
    surface_b: &SurfaceSamples,
) -> Result<Vec3, ToolkitError> {
    WarpedSurface::new(model, z_b, surface_b)?.correspond(model, p_on_a, z_a)
}
