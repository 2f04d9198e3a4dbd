use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::extraction::{sample_grid, sample_grid_banded, triangulate, GridSpec, NarrowBand};
use crate::fields::{FieldError, ImplicitModel, LatentCode, LocalFeature};
use crate::geometry::vec3::{self, Vec3};
use crate::geometry::{mix_seed, sample_surface_points, BvhIndex, Keypoints, Mesh, SdfSamples, SurfaceSamples};
use crate::training::Checkpoint;

use super::ToolkitError;

fn mean_distance(from: &[Vec3], to: &BvhIndex) -> f64 {
    let total: f64 = from.par_iter().map(|&p| to.unsigned_distance(p)).sum();
    total / from.len() as f64
}

/// Symmetric mean point-to-surface distance with `n_samples` area-weighted
/// points drawn on each side. Both sides draw from the same seed, so the
/// value does not depend on argument order.
pub fn chamfer(mesh_a: &Mesh, mesh_b: &Mesh, n_samples: usize, seed: u64) -> Result<f64, ToolkitError> {
    if mesh_a.is_empty() || mesh_b.is_empty() {
        return Err(ToolkitError::Invalid("chamfer needs two nonempty meshes".into()));
    }
    let pa = sample_surface_points(mesh_a, n_samples, seed)?;
    let pb = sample_surface_points(mesh_b, n_samples, seed)?;
    let a_to_b = mean_distance(&pa, &BvhIndex::build(mesh_b));
    let b_to_a = mean_distance(&pb, &BvhIndex::build(mesh_a));
    Ok(0.5 * (a_to_b + b_to_a))
}

/// Latent codes of one instance, ready for field queries.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceCodes {
    pub shape: LatentCode,
    pub tex: LatentCode,
    pub pose: Option<LatentCode>,
}

impl InstanceCodes {
    pub fn from_checkpoint(ckpt: &Checkpoint, instance: &str) -> Result<Self, ToolkitError> {
        let store = &ckpt.model.params;
        let shape = ckpt.registry.shape_code(store, instance)?;
        let tex = ckpt.registry.tex_code(store, instance)?;
        let pose = match ckpt.registry.orientation(store, instance)? {
            Some(o) => Some(ckpt.model.lift_pose(o)?),
            None => None,
        };
        Ok(Self { shape, tex, pose })
    }
}

/// What evaluation needs from a model.
pub trait FieldQuery: Sync {
    fn sdf(&self, points: &[Vec3], codes: &InstanceCodes) -> Result<Vec<f64>, FieldError>;
    fn warp(&self, points: &[Vec3], codes: &InstanceCodes) -> Result<Vec<Vec3>, FieldError>;
    /// Colors at points near the surface, without the tolerance check.
    fn color(&self, points: &[Vec3], codes: &InstanceCodes) -> Result<Vec<Vec3>, FieldError>;
}

impl FieldQuery for ImplicitModel {
    fn sdf(&self, points: &[Vec3], codes: &InstanceCodes) -> Result<Vec<f64>, FieldError> {
        self.instance_sdf(points, &codes.shape)
    }

    fn warp(&self, points: &[Vec3], codes: &InstanceCodes) -> Result<Vec<Vec3>, FieldError> {
        ImplicitModel::warp(self, points, &codes.shape)
    }

    fn color(&self, points: &[Vec3], codes: &InstanceCodes) -> Result<Vec<Vec3>, FieldError> {
        let z_loc = LocalFeature::zeros(self.dims().loc);
        self.surface_color_unchecked(points, &codes.shape, &codes.tex, codes.pose.as_ref(), &z_loc)
    }
}

/// Ground truth for one instance, in the normalized frame.
#[derive(Clone, Debug)]
pub struct EvalInstance {
    pub instance_id: String,
    pub mesh: Mesh,
    pub sdf: SdfSamples,
    pub surface: SurfaceSamples,
    pub keypoints: Keypoints,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub grid: GridSpec,
    pub chamfer_samples: usize,
    pub seed: u64,
    /// Truncation applied to both sides of the SDF error, matching training.
    pub clamp: Option<f64>,
    /// `None` samples every grid node during extraction.
    pub band: Option<NarrowBand>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            chamfer_samples: 20_000,
            seed: 0,
            clamp: Some(0.1),
            band: Some(NarrowBand::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub instance_id: String,
    pub chamfer: f64,
    pub sdf_mae: f64,
    pub color_mae: f64,
    pub keypoint_residual: f64,
}

/// Aggregates are means over the instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub chamfer: f64,
    pub sdf_mae: f64,
    pub color_mae: f64,
    pub keypoint_residual: f64,
    pub instances: Vec<InstanceReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ToolkitError> {
        serde_json::from_str(text).map_err(|e| ToolkitError::Invalid(format!("eval report: {e}")))
    }
}

/// Mean absolute SDF error, both sides truncated when `clamp` is set.
pub fn sdf_mae(pred: &[f64], truth: &[f64], clamp: Option<f64>) -> f64 {
    let c = clamp.unwrap_or(f64::INFINITY);
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p.clamp(-c, c) - t.clamp(-c, c)).abs())
        .sum();
    total / pred.len() as f64
}

/// Mean absolute color error per channel.
pub fn color_mae(pred: &[Vec3], truth: &[Vec3]) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (0..3).map(|k| (p[k] - t[k]).abs()).sum::<f64>())
        .sum();
    total / (3 * pred.len()) as f64
}

/// Mean Euclidean distance between warped keypoints and their template
/// counterparts.
pub fn keypoint_residual(warped: &[Vec3], template: &[Vec3]) -> f64 {
    let total: f64 = warped.iter().zip(template).map(|(a, b)| vec3::dist(*a, *b)).sum();
    total / warped.len() as f64
}

pub fn evaluate_instance<F: FieldQuery>(
    fields: &F,
    codes: &InstanceCodes,
    inst: &EvalInstance,
    template_keypoints: &Keypoints,
    opts: &EvalOptions,
) -> Result<InstanceReport, ToolkitError> {
    if inst.sdf.is_empty() || inst.surface.is_empty() || inst.keypoints.is_empty() {
        return Err(ToolkitError::Invalid(format!("{}: no held-out samples", inst.instance_id)));
    }
    let field = |pts: &[Vec3]| Ok(fields.sdf(pts, codes)?);
    let values = match &opts.band {
        Some(band) => sample_grid_banded(field, &opts.grid, band)?,
        None => sample_grid(field, &opts.grid)?,
    };
    let extracted = triangulate(&values);
    if extracted.is_empty() {
        return Err(ToolkitError::Invalid(format!("{}: extracted surface is empty", inst.instance_id)));
    }
    let chamfer = chamfer(&extracted, &inst.mesh, opts.chamfer_samples, mix_seed(opts.seed, 5))?;
    let sdf = fields.sdf(&inst.sdf.points, codes)?;
    let colors = fields.color(&inst.surface.points, codes)?;
    let kps = inst.keypoints.aligned_to(&template_keypoints.names)?;
    let warped = fields.warp(&kps.positions, codes)?;
    Ok(InstanceReport {
        instance_id: inst.instance_id.clone(),
        chamfer,
        sdf_mae: sdf_mae(&sdf, &inst.sdf.sdf, opts.clamp),
        color_mae: color_mae(&colors, &inst.surface.colors),
        keypoint_residual: keypoint_residual(&warped, &template_keypoints.positions),
    })
}

pub fn evaluate_fields<F: FieldQuery>(
    fields: &F,
    codes: impl Fn(&str) -> Result<InstanceCodes, ToolkitError>,
    dataset: &[EvalInstance],
    template_keypoints: &Keypoints,
    opts: &EvalOptions,
) -> Result<EvalReport, ToolkitError> {
    if dataset.is_empty() {
        return Err(ToolkitError::Invalid("nothing to evaluate".into()));
    }
    let instances = dataset
        .iter()
        .map(|inst| evaluate_instance(fields, &codes(&inst.instance_id)?, inst, template_keypoints, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = |f: fn(&InstanceReport) -> f64| instances.iter().map(f).sum::<f64>() / instances.len() as f64;
    Ok(EvalReport {
        chamfer: mean(|r| r.chamfer),
        sdf_mae: mean(|r| r.sdf_mae),
        color_mae: mean(|r| r.color_mae),
        keypoint_residual: mean(|r| r.keypoint_residual),
        instances,
    })
}

/// Evaluates a checkpoint on every instance of `dataset`; each must have
/// codes in the registry.
pub fn evaluate(
    ckpt: &Checkpoint,
    dataset: &[EvalInstance],
    template_keypoints: &Keypoints,
    opts: &EvalOptions,
) -> Result<EvalReport, ToolkitError> {
    evaluate_fields(
        &ckpt.model,
        |id| InstanceCodes::from_checkpoint(ckpt, id),
        dataset,
        template_keypoints,
        opts,
    )
}
