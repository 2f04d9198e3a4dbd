use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, ParamStore, Tape, Tensor, Var};
use crate::geometry::vec3::Vec3;

use super::mlp::{linear, Activation, Init, Linear, Mlp, MlpSpec};
use super::{CodeKind, FieldError, LatentCode, LocalFeature, SURFACE_TOLERANCE};

/// Rows per tape when evaluating large point sets.
pub const QUERY_CHUNK: usize = 2048;
/// Init range of the warp output layer; keeps the initial displacement tiny.
pub const WARP_FINAL_BOUND: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub shape: usize,
    pub tex: usize,
    pub pose: usize,
    pub lift: usize,
    pub loc: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            shape: 64,
            tex: 64,
            pose: 16,
            lift: 64,
            loc: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub warp: MlpSpec,
    pub sdf: MlpSpec,
    pub tex: MlpSpec,
    /// Single hidden layer merging the texture code with the local feature.
    pub fuse: MlpSpec,
    /// Two-layer lift of the sin/cos orientation to a pose code.
    pub pose: MlpSpec,
}

impl Default for MlpConfig {
    fn default() -> Self {
        let softplus = Activation::Softplus { beta: 1.0 };
        let deep = |activation| MlpSpec {
            hidden_layers: 5,
            width: 128,
            activation,
        };
        Self {
            warp: deep(softplus),
            sdf: deep(softplus),
            tex: deep(Activation::Relu),
            fuse: MlpSpec {
                hidden_layers: 1,
                width: 64,
                activation: softplus,
            },
            pose: MlpSpec {
                hidden_layers: 1,
                width: 32,
                activation: softplus,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub mlp: MlpConfig,
}

/// Warp, template SDF and texture networks plus the positional lift, all
/// stored in one parameter set so latent codes can join the same optimizer.
#[derive(Clone, Debug)]
pub struct ImplicitModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    lift: Linear,
    warp: Mlp,
    sdf: Mlp,
    tex: Mlp,
    fuse: Mlp,
    pose: Mlp,
}

fn points_tensor(points: &[Vec3]) -> Tensor {
    Tensor::matrix(points.len(), 3, points.iter().flatten().copied().collect()).expect("n×3")
}

impl ImplicitModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let d = config.dims;
        let m = &config.mlp;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let lift = linear(&mut params, &mut init, "lift", 3, d.lift, 1.0);
        let warp = Mlp::register(&mut params, &mut init, "warp", 3, d.shape, 3, &m.warp, Some(WARP_FINAL_BOUND));
        let sdf = Mlp::register(&mut params, &mut init, "sdf", d.lift, 0, 1, &m.sdf, None);
        let tex = Mlp::register(
            &mut params,
            &mut init,
            "tex",
            d.lift,
            d.pose + d.tex + d.loc,
            3,
            &m.tex,
            None,
        );
        let fuse = Mlp::register(&mut params, &mut init, "fuse", d.tex + d.loc, 0, d.tex, &m.fuse, None);
        let pose = Mlp::register(&mut params, &mut init, "pose", 2, 0, d.pose, &m.pose, None);
        Self {
            config,
            params,
            lift,
            warp,
            sdf,
            tex,
            fuse,
            pose,
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.config.dims
    }

    fn check(&self, code: &LatentCode, kind: CodeKind) -> Result<(), FieldError> {
        let dim = match kind {
            CodeKind::Shape => self.config.dims.shape,
            CodeKind::Texture => self.config.dims.tex,
            CodeKind::Pose => self.config.dims.pose,
        };
        if code.kind() != kind {
            return Err(FieldError::KindMismatch {
                expected: kind,
                got: code.kind(),
            });
        }
        if code.dim() != dim {
            return Err(FieldError::Dim {
                what: kind.name(),
                expected: dim,
                got: code.dim(),
            });
        }
        Ok(())
    }

    // Tape-level building blocks. Codes are 1×d rows shared by all points.

    pub fn lift_t<'t>(&self, tape: &'t Tape, p: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let (w, b) = (tape.param(&self.params, self.lift.weight), tape.param(&self.params, self.lift.bias));
        p.affine(w, b)
    }

    /// `p + Δ(p, z)`.
    pub fn warp_t<'t>(&self, tape: &'t Tape, p: Var<'t>, z_shape: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let delta = self.warp.forward(tape, &self.params, p, Some(z_shape))?;
        p.add(delta)
    }

    /// Template SDF at template-space points, n×1.
    pub fn template_sdf_t<'t>(&self, tape: &'t Tape, p_tp: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let lifted = self.lift_t(tape, p_tp)?;
        self.sdf.forward(tape, &self.params, lifted, None)
    }

    /// Per-instance texture conditioning row `[z_pose, fuse(z_tex, z_loc), z_loc]`.
    pub fn texture_cond_t<'t>(
        &self,
        tape: &'t Tape,
        z_tex: Var<'t>,
        z_pose: Var<'t>,
        z_loc: Var<'t>,
    ) -> Result<Var<'t>, AutodiffError> {
        let fused = self.fuse.forward(tape, &self.params, tape.concat_cols(&[z_tex, z_loc])?, None)?;
        tape.concat_cols(&[z_pose, fused, z_loc])
    }

    /// RGB in (0,1)³ at template-space points.
    pub fn color_t<'t>(&self, tape: &'t Tape, p_tp: Var<'t>, cond: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let lifted = self.lift_t(tape, p_tp)?;
        Ok(self.tex.forward(tape, &self.params, lifted, Some(cond))?.sigmoid())
    }

    /// Pose code from sin/cos orientation rows, m×2 → m×d_pose.
    pub fn lift_pose_t<'t>(&self, tape: &'t Tape, o: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.pose.forward(tape, &self.params, o, None)
    }

    fn code_var<'t>(tape: &'t Tape, v: &[f64]) -> Var<'t> {
        tape.constant(Tensor::matrix(1, v.len(), v.to_vec()).expect("row"))
    }

    /// Evaluates `f` over fixed-size chunks of `points` in parallel and
    /// concatenates the rows in order.
    fn chunked<F>(&self, points: &[Vec3], cols: usize, f: F) -> Result<Vec<f64>, FieldError>
    where
        F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, AutodiffError> + Sync,
    {
        let parts: Vec<Vec<f64>> = points
            .par_chunks(QUERY_CHUNK)
            .map(|chunk| {
                let tape = Tape::new();
                let out = f(&tape, tape.constant(points_tensor(chunk)))?;
                debug_assert_eq!(out.shape(), vec![chunk.len(), cols]);
                Ok(out.value().into_data())
            })
            .collect::<Result<_, AutodiffError>>()?;
        Ok(parts.concat())
    }

    pub fn warp(&self, points: &[Vec3], z_shape: &LatentCode) -> Result<Vec<Vec3>, FieldError> {
        self.check(z_shape, CodeKind::Shape)?;
        let flat = self.chunked(points, 3, |tape, p| self.warp_t(tape, p, Self::code_var(tape, z_shape.vector())))?;
        Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn template_sdf(&self, p_tp: &[Vec3]) -> Vec<f64> {
        self.chunked(p_tp, 1, |tape, p| self.template_sdf_t(tape, p))
            .expect("template sdf has no failure modes")
    }

    /// The instance field: the template SDF after the warp. Never reads
    /// texture or pose codes.
    pub fn instance_sdf(&self, points: &[Vec3], z_shape: &LatentCode) -> Result<Vec<f64>, FieldError> {
        self.check(z_shape, CodeKind::Shape)?;
        self.chunked(points, 1, |tape, p| {
            let p_tp = self.warp_t(tape, p, Self::code_var(tape, z_shape.vector()))?;
            self.template_sdf_t(tape, p_tp)
        })
    }

    pub fn lift_pose(&self, o: [f64; 2]) -> Result<LatentCode, FieldError> {
        if !o.iter().all(|v| v.is_finite()) {
            return Err(FieldError::NonFinite("pose encoding".into()));
        }
        let tape = Tape::new();
        let v = self.lift_pose_t(&tape, Self::code_var(&tape, &o))?;
        LatentCode::new(CodeKind::Pose, v.value().into_data())
    }

    /// Colors of surface points. Every point must satisfy
    /// `|instance_sdf| ≤ tolerance`; otherwise the worst offender is reported.
    pub fn surface_color(
        &self,
        points: &[Vec3],
        z_shape: &LatentCode,
        z_tex: &LatentCode,
        z_pose: Option<&LatentCode>,
        z_loc: &LocalFeature,
        tolerance: f64,
    ) -> Result<Vec<Vec3>, FieldError> {
        let sdf = self.instance_sdf(points, z_shape)?;
        let worst = sdf
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
        if let Some((index, &s)) = worst {
            if !(s.abs() <= tolerance) {
                return Err(FieldError::OffSurface {
                    index,
                    sdf: s,
                    tolerance,
                });
            }
        }
        self.surface_color_unchecked(points, z_shape, z_tex, z_pose, z_loc)
    }

    /// [`Self::surface_color`] without the tolerance check.
    pub fn surface_color_unchecked(
        &self,
        points: &[Vec3],
        z_shape: &LatentCode,
        z_tex: &LatentCode,
        z_pose: Option<&LatentCode>,
        z_loc: &LocalFeature,
    ) -> Result<Vec<Vec3>, FieldError> {
        self.check(z_shape, CodeKind::Shape)?;
        self.colors(points, Some(z_shape), z_tex, z_pose, z_loc)
    }

    /// Colors at template-space points, with no warp.
    pub fn template_color(
        &self,
        p_tp: &[Vec3],
        z_tex: &LatentCode,
        z_pose: Option<&LatentCode>,
        z_loc: &LocalFeature,
    ) -> Result<Vec<Vec3>, FieldError> {
        self.colors(p_tp, None, z_tex, z_pose, z_loc)
    }

    fn colors(
        &self,
        points: &[Vec3],
        z_shape: Option<&LatentCode>,
        z_tex: &LatentCode,
        z_pose: Option<&LatentCode>,
        z_loc: &LocalFeature,
    ) -> Result<Vec<Vec3>, FieldError> {
        self.check(z_tex, CodeKind::Texture)?;
        if let Some(zp) = z_pose {
            self.check(zp, CodeKind::Pose)?;
        }
        let d = self.config.dims;
        if z_loc.dim() != d.loc {
            return Err(FieldError::Dim {
                what: "local feature",
                expected: d.loc,
                got: z_loc.dim(),
            });
        }
        let zero_pose = vec![0.0; d.pose];
        let pose = z_pose.map_or(zero_pose.as_slice(), |z| z.vector());
        let flat = self.chunked(points, 3, |tape, p| {
            let p_tp = match z_shape {
                Some(z) => self.warp_t(tape, p, Self::code_var(tape, z.vector()))?,
                None => p,
            };
            let cond = self.texture_cond_t(
                tape,
                Self::code_var(tape, z_tex.vector()),
                Self::code_var(tape, pose),
                Self::code_var(tape, z_loc.vector()),
            )?;
            self.color_t(tape, p_tp, cond)
        })?;
        Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Default-tolerance surface query.
    pub fn surface_color_default(
        &self,
        points: &[Vec3],
        z_shape: &LatentCode,
        z_tex: &LatentCode,
        z_pose: Option<&LatentCode>,
    ) -> Result<Vec<Vec3>, FieldError> {
        let z_loc = LocalFeature::zeros(self.config.dims.loc);
        self.surface_color(points, z_shape, z_tex, z_pose, &z_loc, SURFACE_TOLERANCE)
    }
}
