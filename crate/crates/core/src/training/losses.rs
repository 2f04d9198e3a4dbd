//! The five supervision terms and their weighted sum. Each term comes in a
//! tape form used by the optimizer and a plain-value form for inspection.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::fields::{encode_pose, CodeKind, ImplicitModel, LatentCode, LocalFeature};
use crate::geometry::vec3::Vec3;
use crate::geometry::{Keypoints, SdfSamples};

use super::config::LossWeights;
use super::{TrainError, TrainingInstance};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub tex: f64,
    pub geo: f64,
    pub kps: f64,
    pub tp_sdf: f64,
    pub pose: f64,
}

/// `tex + w_g·geo + w_k·kps + w_t·tp_sdf + w_p·pose`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64, TrainError> {
    for (name, v) in [
        ("tex", c.tex),
        ("geo", c.geo),
        ("kps", c.kps),
        ("tp_sdf", c.tp_sdf),
        ("pose", c.pose),
    ] {
        if !v.is_finite() {
            return Err(TrainError::NonFinite { term: name, step: None });
        }
    }
    Ok(c.tex + w.w_g * c.geo + w.w_k * c.kps + w.w_t * c.tp_sdf + w.w_p * c.pose)
}

fn check_batch(batch: &[usize], len: usize, what: &'static str) -> Result<(), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch(what));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= len) {
        return Err(TrainError::Data(format!("{what}: sample index {i} out of range for {len}")));
    }
    Ok(())
}

fn rows3(points: impl ExactSizeIterator<Item = Vec3>) -> Tensor {
    let n = points.len();
    Tensor::matrix(n, 3, points.flatten().collect()).expect("n×3")
}

fn column(values: impl ExactSizeIterator<Item = f64>) -> Tensor {
    let n = values.len();
    Tensor::matrix(n, 1, values.collect()).expect("n×1")
}

fn row<'t>(tape: &'t Tape, v: &[f64]) -> Var<'t> {
    tape.constant(Tensor::matrix(1, v.len(), v.to_vec()).expect("row"))
}

/// Mean absolute SDF error of the warped template field, both sides
/// truncated to `[−clamp, clamp]` when a clamp is given.
pub fn geo_term<'t>(
    model: &ImplicitModel,
    tape: &'t Tape,
    z_shape: Var<'t>,
    samples: &SdfSamples,
    batch: &[usize],
    clamp: Option<f64>,
) -> Result<Var<'t>, TrainError> {
    check_batch(batch, samples.len(), "loss_geo")?;
    let p = tape.constant(rows3(batch.iter().map(|&i| samples.points[i])));
    let mut pred = model.template_sdf_t(tape, model.warp_t(tape, p, z_shape)?)?;
    let truth = batch.iter().map(|&i| samples.sdf[i]);
    let truth = match clamp {
        Some(c) => {
            pred = pred.clamp(-c, c);
            column(truth.map(|s| s.clamp(-c, c)))
        }
        None => column(truth),
    };
    Ok(pred.l1_mean(tape.constant(truth))?)
}

/// Mean per-point L1 color error on surface samples.
#[allow(clippy::too_many_arguments)]
pub fn tex_term<'t>(
    model: &ImplicitModel,
    tape: &'t Tape,
    z_shape: Var<'t>,
    cond: Var<'t>,
    points: &[Vec3],
    colors: &[Vec3],
    batch: &[usize],
) -> Result<Var<'t>, TrainError> {
    check_batch(batch, points.len(), "loss_tex")?;
    let p = tape.constant(rows3(batch.iter().map(|&i| points[i])));
    let pred = model.color_t(tape, model.warp_t(tape, p, z_shape)?, cond)?;
    let truth = tape.constant(rows3(batch.iter().map(|&i| colors[i])));
    Ok(pred.l1_mean(truth)?)
}

/// Direct supervision of the template field; the warp is not involved.
pub fn tp_sdf_term<'t>(
    model: &ImplicitModel,
    tape: &'t Tape,
    samples: &SdfSamples,
    batch: &[usize],
) -> Result<Var<'t>, TrainError> {
    check_batch(batch, samples.len(), "loss_tp_sdf")?;
    let p = tape.constant(rows3(batch.iter().map(|&i| samples.points[i])));
    let pred = model.template_sdf_t(tape, p)?;
    let truth = tape.constant(column(batch.iter().map(|&i| samples.sdf[i])));
    Ok(pred.l1_mean(truth)?)
}

/// Mean L1 distance between warped instance keypoints and the template
/// keypoints of the same name.
pub fn kps_term<'t>(
    model: &ImplicitModel,
    tape: &'t Tape,
    z_shape: Var<'t>,
    keypoints: &Keypoints,
    template: &Keypoints,
) -> Result<Var<'t>, TrainError> {
    let aligned = if keypoints.names == template.names {
        keypoints.clone()
    } else {
        keypoints.aligned_to(&template.names)?
    };
    if aligned.is_empty() {
        return Err(TrainError::EmptyBatch("loss_kps"));
    }
    let p = tape.constant(rows3(aligned.positions.iter().copied()));
    let warped = model.warp_t(tape, p, z_shape)?;
    let target = tape.constant(rows3(template.positions.iter().copied()));
    Ok(warped.l1_mean(target)?)
}

/// `‖o − (sin yaw, cos yaw)‖₁` for a 1×2 orientation row.
pub fn pose_term<'t>(tape: &'t Tape, o: Var<'t>, yaw: f64) -> Result<Var<'t>, TrainError> {
    Ok(o.l1_mean(row(tape, &encode_pose(yaw)))?)
}

fn expect_kind(code: &LatentCode, kind: CodeKind) -> Result<(), TrainError> {
    if code.kind() != kind {
        return Err(TrainError::Data(format!(
            "expected a {} code, got a {} code",
            kind.name(),
            code.kind().name()
        )));
    }
    Ok(())
}

pub fn loss_geo(
    model: &ImplicitModel,
    instance: &TrainingInstance,
    z_shape: &LatentCode,
    batch: &[usize],
    clamp: Option<f64>,
) -> Result<f64, TrainError> {
    expect_kind(z_shape, CodeKind::Shape)?;
    let tape = Tape::new();
    Ok(geo_term(model, &tape, row(&tape, z_shape.vector()), &instance.sdf, batch, clamp)?.item())
}

pub fn loss_tex(
    model: &ImplicitModel,
    instance: &TrainingInstance,
    z_shape: &LatentCode,
    z_tex: &LatentCode,
    z_pose: Option<&LatentCode>,
    batch: &[usize],
) -> Result<f64, TrainError> {
    expect_kind(z_shape, CodeKind::Shape)?;
    expect_kind(z_tex, CodeKind::Texture)?;
    let d = model.dims();
    let zero_pose = vec![0.0; d.pose];
    let pose = match z_pose {
        Some(z) => {
            expect_kind(z, CodeKind::Pose)?;
            z.vector()
        }
        None => &zero_pose,
    };
    let tape = Tape::new();
    let z_loc = LocalFeature::zeros(d.loc);
    let cond = model.texture_cond_t(
        &tape,
        row(&tape, z_tex.vector()),
        row(&tape, pose),
        row(&tape, z_loc.vector()),
    )?;
    let s = &instance.surface;
    Ok(tex_term(model, &tape, row(&tape, z_shape.vector()), cond, &s.points, &s.colors, batch)?.item())
}

pub fn loss_tp_sdf(model: &ImplicitModel, samples: &SdfSamples, batch: &[usize]) -> Result<f64, TrainError> {
    let tape = Tape::new();
    Ok(tp_sdf_term(model, &tape, samples, batch)?.item())
}

pub fn loss_kps(
    model: &ImplicitModel,
    instance: &TrainingInstance,
    z_shape: &LatentCode,
    template: &Keypoints,
) -> Result<f64, TrainError> {
    expect_kind(z_shape, CodeKind::Shape)?;
    let tape = Tape::new();
    Ok(kps_term(model, &tape, row(&tape, z_shape.vector()), &instance.keypoints, template)?.item())
}

pub fn loss_pose(o_pred: [f64; 2], yaw_true: f64) -> f64 {
    let o = encode_pose(yaw_true);
    (o_pred[0] - o[0]).abs() + (o_pred[1] - o[1]).abs()
}
