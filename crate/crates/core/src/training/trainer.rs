use std::collections::HashSet;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, ParamId, Tape, Tensor, Var};
use crate::fields::ImplicitModel;
use crate::geometry::stream_rng;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::losses::{geo_term, kps_term, pose_term, tex_term, total_loss, tp_sdf_term, LossComponents};
use super::registry::LatentRegistry;
use super::{TrainError, TrainingInstance};

/// Stream offset for per-step minibatch draws.
const STEP_STREAM_BASE: u64 = 1 << 40;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    #[serde(flatten)]
    pub components: LossComponents,
}

pub const LOSS_CSV_HEADER: &str = "step,loss_total,loss_tex,loss_geo,loss_kps,loss_tp_sdf,loss_pose";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        let c = &self.components;
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.total, c.tex, c.geo, c.kps, c.tp_sdf, c.pose
        )
    }
}

pub fn loss_csv(log: &[LossRecord]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in log {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn validate_data(dataset: &[TrainingInstance], template: &TrainingInstance) -> Result<(), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::Data("training set is empty".into()));
    }
    if template.sdf.is_empty() {
        return Err(TrainError::Data("template has no SDF samples".into()));
    }
    let mut seen = HashSet::new();
    for inst in dataset {
        if !seen.insert(inst.instance_id.as_str()) {
            return Err(TrainError::Data(format!("instance {:?} listed twice", inst.instance_id)));
        }
        if inst.sdf.is_empty() || inst.surface.is_empty() {
            return Err(TrainError::Data(format!("instance {:?} has no samples", inst.instance_id)));
        }
        let mut a = inst.keypoints.names.clone();
        let mut b = template.keypoints.names.clone();
        a.sort();
        b.sort();
        if a != b {
            return Err(TrainError::Data(format!(
                "keypoint names of {:?} differ from the template's",
                inst.instance_id
            )));
        }
    }
    Ok(())
}

/// Fresh model and codes for `instances`, exactly what `train` starts from.
pub fn initialize(instances: &[String], config: &TrainConfig) -> Result<Checkpoint, TrainError> {
    config.validate()?;
    let mut model = ImplicitModel::new(config.model(), config.seed);
    let registry = LatentRegistry::register(
        &mut model.params,
        instances,
        config.dims,
        config.pose_conditioning,
        config.code_init_sigma,
        config.seed,
    )?;
    Ok(Checkpoint {
        config: config.clone(),
        step: 0,
        model,
        registry,
    })
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
}

pub fn train(
    dataset: &[TrainingInstance],
    template: &TrainingInstance,
    config: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    train_with(dataset, template, config, |_| {})
}

/// One step's objective recorded on a tape.
pub struct StepTerms<'t> {
    /// Weighted total plus the code penalty.
    pub total: Var<'t>,
    /// `[tex, geo, kps, tp_sdf, pose]`.
    pub components: [Var<'t>; 5],
}

/// Records the objective for the instances `chosen`, drawing minibatch
/// indices from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn step_objective<'t>(
    tape: &'t Tape,
    model: &ImplicitModel,
    registry: &LatentRegistry,
    dataset: &[TrainingInstance],
    template: &TrainingInstance,
    config: &TrainConfig,
    chosen: &[usize],
    rng: &mut impl Rng,
) -> Result<StepTerms<'t>, TrainError> {
    let d = config.dims;
    let per_sdf = (config.batch.sdf / chosen.len()).max(1);
    let per_surface = (config.batch.surface / chosen.len()).max(1);
    let z_loc = tape.constant(Tensor::zeros(&[1, d.loc]));
    let zero = || tape.constant(Tensor::scalar(0.0));
    let (mut geo, mut tex, mut kps, mut pose, mut reg) = (zero(), zero(), zero(), zero(), zero());
    for &k in chosen {
        let inst = &dataset[k];
        let entry = registry.entry(k);
        let z_shape = tape.param(&model.params, entry.shape);
        let z_tex = tape.param(&model.params, entry.tex);
        let z_pose = match entry.orientation {
            Some(o) => {
                let o = tape.param(&model.params, o);
                pose = pose.add(pose_term(tape, o, inst.yaw)?)?;
                model.lift_pose_t(tape, o)?
            }
            None => tape.constant(Tensor::zeros(&[1, d.pose])),
        };
        let sdf_batch: Vec<usize> = (0..per_sdf).map(|_| rng.random_range(0..inst.sdf.len())).collect();
        let surf_batch: Vec<usize> = (0..per_surface)
            .map(|_| rng.random_range(0..inst.surface.len()))
            .collect();
        geo = geo.add(geo_term(model, tape, z_shape, &inst.sdf, &sdf_batch, config.clamp)?)?;
        let cond = model.texture_cond_t(tape, z_tex, z_pose, z_loc)?;
        let s = &inst.surface;
        tex = tex.add(tex_term(model, tape, z_shape, cond, &s.points, &s.colors, &surf_batch)?)?;
        kps = kps.add(kps_term(model, tape, z_shape, &inst.keypoints, &template.keypoints)?)?;
        reg = reg.add(z_shape.mul(z_shape)?.sum())?.add(z_tex.mul(z_tex)?.sum())?;
    }
    let inv = 1.0 / chosen.len() as f64;
    let (geo, tex, kps, pose, reg) = (geo.scale(inv), tex.scale(inv), kps.scale(inv), pose.scale(inv), reg.scale(inv));
    let tp_batch: Vec<usize> = (0..config.batch.template)
        .map(|_| rng.random_range(0..template.sdf.len()))
        .collect();
    let tp = tp_sdf_term(model, tape, &template.sdf, &tp_batch)?;
    let w = config.weights;
    let total = tex
        .add(geo.scale(w.w_g))?
        .add(kps.scale(w.w_k))?
        .add(tp.scale(w.w_t))?
        .add(pose.scale(w.w_p))?
        .add(reg.scale(config.code_reg))?;
    Ok(StepTerms {
        total,
        components: [tex, geo, kps, tp, pose],
    })
}

/// Joint optimization of all network weights and the latent codes.
///
/// Each step draws SDF and surface minibatches for a subset of instances, a
/// template SDF minibatch and all keypoints, then takes one Adam step on the
/// network weights and on the codes of the instances in the step. `observe`
/// sees every step's losses.
pub fn train_with(
    dataset: &[TrainingInstance],
    template: &TrainingInstance,
    config: &TrainConfig,
    mut observe: impl FnMut(&LossRecord),
) -> Result<TrainOutput, TrainError> {
    validate_data(dataset, template)?;
    let ids: Vec<String> = dataset.iter().map(|i| i.instance_id.clone()).collect();
    let mut ckpt = initialize(&ids, config)?;
    let network: Vec<ParamId> = ckpt
        .model
        .params
        .iter()
        .filter(|(_, p)| !p.name.starts_with("code."))
        .map(|(id, _)| id)
        .collect();
    let mut adam = Adam::new(config.optimizer);
    let n = dataset.len();
    let per_step = match config.batch.instances {
        0 => n,
        k => k.min(n),
    };
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut rng = stream_rng(config.seed, STEP_STREAM_BASE + step as u64);
        let mut chosen: Vec<usize> = if per_step == n {
            (0..n).collect()
        } else {
            sample_indices(&mut rng, n, per_step).into_vec()
        };
        chosen.sort_unstable();

        let tape = Tape::new();
        let terms = step_objective(&tape, &ckpt.model, &ckpt.registry, dataset, template, config, &chosen, &mut rng)?;
        let [tex, geo, kps, tp_sdf, pose] = terms.components.map(|v| v.item());
        let components = LossComponents {
            tex,
            geo,
            kps,
            tp_sdf,
            pose,
        };
        let total = total_loss(&components, &config.weights).map_err(|e| match e {
            TrainError::NonFinite { term, .. } => TrainError::NonFinite {
                term,
                step: Some(step),
            },
            other => other,
        })?;
        if !terms.total.item().is_finite() {
            return Err(TrainError::NonFinite {
                term: "total",
                step: Some(step),
            });
        }
        tape.backward(terms.total, &mut ckpt.model.params)?;
        let mut update = network.clone();
        for &k in &chosen {
            update.extend(ckpt.registry.entry(k).ids());
        }
        adam.step(&mut ckpt.model.params, &update)?;
        ckpt.model.params.zero_grad();
        ckpt.step = step + 1;

        let record = LossRecord {
            step,
            total,
            components,
        };
        observe(&record);
        log.push(record);
    }
    Ok(TrainOutput { checkpoint: ckpt, log })
}
