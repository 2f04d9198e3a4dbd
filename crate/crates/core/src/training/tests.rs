use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check_params, GradCheckOptions, ParamId, Tape, Tensor};
use crate::fields::{
    Activation, CodeKind, ImplicitModel, LatentCode, LocalFeature, MlpConfig, MlpSpec, ModelDims,
};
use crate::geometry::vec3;
use crate::synth::{generate_family, BoxcarParams};

pub(crate) fn tiny_config() -> TrainConfig {
    let spec = |activation| MlpSpec {
        hidden_layers: 2,
        width: 16,
        activation,
    };
    let softplus = Activation::Softplus { beta: 1.0 };
    TrainConfig {
        dims: ModelDims {
            shape: 8,
            tex: 8,
            pose: 4,
            lift: 16,
            loc: 4,
        },
        mlp: MlpConfig {
            warp: spec(softplus),
            sdf: spec(softplus),
            tex: spec(Activation::Relu),
            fuse: MlpSpec {
                hidden_layers: 1,
                width: 8,
                activation: softplus,
            },
            pose: MlpSpec {
                hidden_layers: 1,
                width: 8,
                activation: softplus,
            },
        },
        batch: BatchConfig {
            sdf: 64,
            surface: 32,
            template: 32,
            instances: 0,
        },
        steps: 5,
        seed: 17,
        ..TrainConfig::default()
    }
}

/// Normalized boxcar family with small sample sets.
pub(crate) fn fixture(count: usize) -> (Vec<TrainingInstance>, TrainingInstance) {
    let family = generate_family(4, count, &BoxcarParams::default(), 1).unwrap();
    let make = |inst: &crate::synth::Instance, i: u64| {
        TrainingInstance::from_mesh(&inst.id, &inst.mesh, &inst.keypoints, inst.yaw, 600, 300, i)
            .unwrap()
            .0
    };
    let data = family.instances.iter().enumerate().map(|(i, inst)| make(inst, i as u64)).collect();
    (data, make(&family.template, 99))
}

fn set_output(model: &mut ImplicitModel, net: &str, layers: usize, bias: &[f64]) {
    let w = model.params.id(&format!("{net}.{layers}.w")).unwrap();
    let b = model.params.id(&format!("{net}.{layers}.b")).unwrap();
    let ws = model.params.value(w).shape().to_vec();
    model.params.set_value(w, Tensor::zeros(&ws)).unwrap();
    model
        .params
        .set_value(b, Tensor::matrix(1, bias.len(), bias.to_vec()).unwrap())
        .unwrap();
}

fn tiny_model(seed: u64) -> ImplicitModel {
    ImplicitModel::new(tiny_config().model(), seed)
}

fn code(rng: &mut ChaCha8Rng, kind: CodeKind, dim: usize) -> LatentCode {
    LatentCode::new(kind, (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
}

#[test]
fn total_loss_examples() {
    let c = LossComponents {
        tex: 1.0,
        geo: 2.0,
        kps: 3.0,
        tp_sdf: 4.0,
        pose: 5.0,
    };
    let ones = LossWeights {
        w_g: 1.0,
        w_k: 1.0,
        w_t: 1.0,
        w_p: 1.0,
    };
    assert_eq!(total_loss(&c, &ones).unwrap(), 15.0);
    let zeros = LossWeights {
        w_g: 0.0,
        w_k: 0.0,
        w_t: 0.0,
        w_p: 0.0,
    };
    assert_eq!(total_loss(&c, &zeros).unwrap(), 1.0);
    let mixed = LossWeights {
        w_g: 0.5,
        w_k: 0.25,
        w_t: 0.25,
        w_p: 0.0,
    };
    assert!((total_loss(&c, &mixed).unwrap() - 3.75).abs() <= 1e-15);
    let bad = LossComponents {
        kps: f64::INFINITY,
        ..c
    };
    assert!(matches!(
        total_loss(&bad, &ones),
        Err(TrainError::NonFinite { term: "kps", .. })
    ));
}

#[test]
fn loss_geo_examples_and_loop_oracle() {
    let (data, _) = fixture(1);
    let mut inst = data[0].clone();
    let z = LatentCode::zeros(CodeKind::Shape, 8);
    let mut model = tiny_model(1);
    set_output(&mut model, "sdf", 2, &[0.05]);
    inst.sdf.sdf = vec![0.05; inst.sdf.len()];
    assert_eq!(loss_geo(&model, &inst, &z, &[0, 5, 9], Some(0.1)).unwrap(), 0.0);
    inst.sdf.sdf[3] = -0.05;
    assert!((loss_geo(&model, &inst, &z, &[3], Some(0.1)).unwrap() - 0.1).abs() < 1e-15);
    assert!(matches!(loss_geo(&model, &inst, &z, &[], Some(0.1)), Err(TrainError::EmptyBatch(_))));

    let model = tiny_model(2);
    let inst = &data[0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = code(&mut rng, CodeKind::Shape, 8);
    let batch: Vec<usize> = (0..50).map(|_| rng.random_range(0..inst.sdf.len())).collect();
    for clamp in [Some(0.1), None] {
        let got = loss_geo(&model, inst, &z, &batch, clamp).unwrap();
        let pts: Vec<_> = batch.iter().map(|&i| inst.sdf.points[i]).collect();
        let pred = model.instance_sdf(&pts, &z).unwrap();
        let mut acc = 0.0;
        for (k, &i) in batch.iter().enumerate() {
            let (p, s) = match clamp {
                Some(c) => (pred[k].clamp(-c, c), inst.sdf.sdf[i].clamp(-c, c)),
                None => (pred[k], inst.sdf.sdf[i]),
            };
            acc += (p - s).abs();
        }
        assert!((got - acc / batch.len() as f64).abs() <= 1e-12);
    }
}

#[test]
fn loss_tex_examples_and_loop_oracle() {
    let (data, _) = fixture(1);
    let mut inst = data[0].clone();
    let zs = LatentCode::zeros(CodeKind::Shape, 8);
    let zt = LatentCode::zeros(CodeKind::Texture, 8);
    let mut model = tiny_model(3);
    set_output(&mut model, "tex", 2, &[40.0, -40.0, -40.0]);
    inst.surface.colors[0] = [0.0; 3];
    assert!((loss_tex(&model, &inst, &zs, &zt, None, &[0]).unwrap() - 1.0).abs() < 1e-15);
    set_output(&mut model, "tex", 2, &[0.0, 0.0, 0.0]);
    inst.surface.colors[1] = [0.5; 3];
    assert_eq!(loss_tex(&model, &inst, &zs, &zt, None, &[1]).unwrap(), 0.0);

    let model = tiny_model(4);
    let inst = &data[0];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (zs, zt) = (code(&mut rng, CodeKind::Shape, 8), code(&mut rng, CodeKind::Texture, 8));
    let zp = model.lift_pose([0.3, 0.9]).unwrap();
    let batch: Vec<usize> = (0..40).map(|_| rng.random_range(0..inst.surface.len())).collect();
    let got = loss_tex(&model, inst, &zs, &zt, Some(&zp), &batch).unwrap();
    let pts: Vec<_> = batch.iter().map(|&i| inst.surface.points[i]).collect();
    let pred = model
        .surface_color_unchecked(&pts, &zs, &zt, Some(&zp), &LocalFeature::zeros(4))
        .unwrap();
    let acc: f64 = batch
        .iter()
        .enumerate()
        .map(|(k, &i)| (0..3).map(|c| (pred[k][c] - inst.surface.colors[i][c]).abs()).sum::<f64>())
        .sum();
    assert!((got - acc / batch.len() as f64).abs() <= 1e-12);
}

#[test]
fn loss_tp_sdf_examples_and_loop_oracle() {
    let (_, template) = fixture(1);
    let mut model = tiny_model(5);
    set_output(&mut model, "sdf", 2, &[0.2]);
    let mut samples = template.sdf.clone();
    samples.sdf = vec![0.2; samples.len()];
    assert_eq!(loss_tp_sdf(&model, &samples, &[0, 1, 2]).unwrap(), 0.0);

    let model = tiny_model(6);
    let batch: Vec<usize> = (0..100).step_by(3).collect();
    let got = loss_tp_sdf(&model, &template.sdf, &batch).unwrap();
    let pts: Vec<_> = batch.iter().map(|&i| template.sdf.points[i]).collect();
    let pred = model.template_sdf(&pts);
    let acc: f64 = batch.iter().zip(&pred).map(|(&i, p)| (p - template.sdf.sdf[i]).abs()).sum();
    assert!((got - acc / batch.len() as f64).abs() <= 1e-12);
}

#[test]
fn loss_kps_examples_and_loop_oracle() {
    let (data, template) = fixture(2);
    let mut model = tiny_model(7);
    set_output(&mut model, "warp", 2, &[0.0; 3]);
    let z = LatentCode::zeros(CodeKind::Shape, 8);
    assert_eq!(loss_kps(&model, &template, &z, &template.keypoints).unwrap(), 0.0);

    let one = Keypoints::new(vec!["a".into()], vec![[0.2, 0.1, -0.3]]).unwrap();
    let moved = Keypoints::new(vec!["a".into()], vec![[0.3, 0.1, -0.3]]).unwrap();
    let mut inst = template.clone();
    inst.keypoints = moved;
    assert!((loss_kps(&model, &inst, &z, &one).unwrap() - 0.1).abs() < 1e-15);
    let other = Keypoints::new(vec!["b".into()], vec![[0.0; 3]]).unwrap();
    assert!(loss_kps(&model, &inst, &z, &other).is_err());

    let model = tiny_model(8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = code(&mut rng, CodeKind::Shape, 8);
    let inst = &data[1];
    let got = loss_kps(&model, inst, &z, &template.keypoints).unwrap();
    let warped = model.warp(&inst.keypoints.positions, &z).unwrap();
    let acc: f64 = warped
        .iter()
        .zip(&template.keypoints.positions)
        .map(|(w, t)| (0..3).map(|c| (w[c] - t[c]).abs()).sum::<f64>())
        .sum();
    assert!((got - acc / warped.len() as f64).abs() <= 1e-12);
}

#[test]
fn loss_pose_examples() {
    use std::f64::consts::PI;
    assert_eq!(loss_pose(crate::fields::encode_pose(0.4), 0.4), 0.0);
    assert!((loss_pose([0.0, 1.0], PI) - 2.0).abs() < 1e-15);
    let (a, b) = (loss_pose([0.0, 1.0], 0.3), loss_pose([0.0, 1.0], -0.3));
    assert!((a - b).abs() < 1e-15);
}

/// Gradient of each loss term alone with respect to the codes, on one tape.
fn term_gradients(model: &ImplicitModel, inst: &TrainingInstance, template: &TrainingInstance) -> Vec<(&'static str, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape0 = code(&mut rng, CodeKind::Shape, 8);
    let tex0 = code(&mut rng, CodeKind::Texture, 8);
    let mut out = Vec::new();
    let max_abs = |t: Tensor| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for term in ["geo", "kps", "tp_sdf", "pose", "tex"] {
        let tape = Tape::new();
        let zs = tape.variable(Tensor::matrix(1, 8, shape0.vector().to_vec()).unwrap());
        let zt = tape.variable(Tensor::matrix(1, 8, tex0.vector().to_vec()).unwrap());
        let o = tape.variable(Tensor::from_rows(&[[0.1, 0.9]]));
        let zp = model.lift_pose_t(&tape, o).unwrap();
        let zl = tape.constant(Tensor::zeros(&[1, 4]));
        let cond = model.texture_cond_t(&tape, zt, zp, zl).unwrap();
        let batch: Vec<usize> = (0..20).collect();
        let root = match term {
            "geo" => geo_term(model, &tape, zs, &inst.sdf, &batch, None).unwrap(),
            "kps" => kps_term(model, &tape, zs, &inst.keypoints, &template.keypoints).unwrap(),
            "tp_sdf" => tp_sdf_term(model, &tape, &template.sdf, &batch).unwrap(),
            "pose" => pose_term(&tape, o, 0.7).unwrap(),
            _ => tex_term(model, &tape, zs, cond, &inst.surface.points, &inst.surface.colors, &batch).unwrap(),
        };
        let g = tape.gradients(root).unwrap();
        out.push((term, max_abs(g.wrt(zs)), max_abs(g.wrt(zt))));
    }
    out
}

#[test]
fn code_gradients_respect_disentanglement() {
    let (data, template) = fixture(1);
    let model = tiny_model(9);
    for (term, shape_grad, tex_grad) in term_gradients(&model, &data[0], &template) {
        match term {
            "geo" | "kps" => {
                assert_eq!(tex_grad, 0.0, "{term}");
                assert!(shape_grad > 0.0, "{term}");
            }
            "tp_sdf" => {
                assert_eq!(tex_grad, 0.0);
                assert_eq!(shape_grad, 0.0);
            }
            "pose" => assert_eq!(shape_grad, 0.0),
            _ => assert!(tex_grad > 0.0 && shape_grad > 0.0),
        }
    }
}

#[test]
fn template_loss_leaves_warp_untouched() {
    let (_, template) = fixture(1);
    let mut model = tiny_model(10);
    let tape = Tape::new();
    let batch: Vec<usize> = (0..30).collect();
    let root = tp_sdf_term(&model, &tape, &template.sdf, &batch).unwrap();
    tape.backward(root, &mut model.params).unwrap();
    let mut saw_sdf = false;
    for (_, p) in model.params.iter() {
        let g = p.grad.as_ref().unwrap();
        if p.name.starts_with("warp.") {
            assert!(g.data().iter().all(|v| *v == 0.0), "{}", p.name);
        }
        if p.name.starts_with("sdf.") && g.data().iter().any(|v| *v != 0.0) {
            saw_sdf = true;
        }
    }
    assert!(saw_sdf);
}

#[test]
fn full_objective_gradient_matches_finite_differences() {
    let (data, template) = fixture(2);
    let mut config = tiny_config();
    config.pose_conditioning = true;
    let ids: Vec<String> = data.iter().map(|d| d.instance_id.clone()).collect();
    let ckpt = initialize(&ids, &config).unwrap();
    let all: Vec<ParamId> = ckpt.model.params.ids().collect();
    let report = grad_check_params(
        &ckpt.model.params,
        &all,
        |tape, store| {
            let mut model = ckpt.model.clone();
            model.params = store.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let terms = step_objective(tape, &model, &ckpt.registry, &data, &template, &config, &[0, 1], &mut rng)?;
            Ok::<_, TrainError>(terms.total)
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-5, "{report:?}");
    assert!(report.coordinates > 2000);
}

#[test]
fn absent_instances_keep_their_codes() {
    let (data, template) = fixture(3);
    let mut config = tiny_config();
    config.batch.instances = 1;
    config.steps = 1;
    let out = train(&data, &template, &config).unwrap();
    let ids: Vec<String> = data.iter().map(|d| d.instance_id.clone()).collect();
    let init = initialize(&ids, &config).unwrap();
    let (a, b) = (&out.checkpoint.model.params, &init.model.params);
    let mut moved = 0;
    for k in 0..3 {
        let e = out.checkpoint.registry.entry(k);
        let same = e.ids().all(|id| a.value(id) == b.value(id));
        if !same {
            moved += 1;
        }
    }
    assert_eq!(moved, 1);
}

#[test]
fn fixed_seed_training_is_bit_identical() {
    let (data, template) = fixture(2);
    let config = tiny_config();
    let a = train(&data, &template, &config).unwrap();
    let b = train(&data, &template, &config).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), 5);
    assert_eq!(a.checkpoint.step, 5);
    let mut other = config.clone();
    other.seed += 1;
    let c = train(&data, &template, &other).unwrap();
    assert_ne!(a.checkpoint.to_bytes(), c.checkpoint.to_bytes());
}

#[test]
fn zero_steps_return_the_initialization() {
    let (data, template) = fixture(2);
    let mut config = tiny_config();
    config.steps = 0;
    let out = train(&data, &template, &config).unwrap();
    let ids: Vec<String> = data.iter().map(|d| d.instance_id.clone()).collect();
    assert_eq!(out.checkpoint.to_bytes(), initialize(&ids, &config).unwrap().to_bytes());
    assert!(out.log.is_empty());
}

#[test]
fn divergence_is_reported_with_step() {
    let (mut data, template) = fixture(1);
    data[0].sdf.sdf.iter_mut().for_each(|s| *s = f64::NAN);
    let mut config = tiny_config();
    config.clamp = None;
    match train(&data, &template, &config) {
        Err(TrainError::NonFinite { step: Some(0), .. }) => {}
        other => panic!("expected divergence at step 0, got {:?}", other.err()),
    }
}

#[test]
fn training_reduces_loss_on_one_instance() {
    let (data, template) = fixture(1);
    let mut config = tiny_config();
    config.steps = 150;
    config.optimizer.lr = 3e-3;
    let out = train(&data[..1], &template, &config).unwrap();
    let mean = |r: &[LossRecord]| r.iter().map(|x| x.total).sum::<f64>() / r.len() as f64;
    let (head, tail) = (mean(&out.log[..10]), mean(&out.log[140..]));
    assert!(tail < 0.7 * head, "head {head} tail {tail}");
}

#[test]
fn mismatched_keypoint_names_rejected() {
    let (mut data, template) = fixture(1);
    data[0].keypoints.names[0] = "elsewhere".into();
    assert!(matches!(train(&data, &template, &tiny_config()), Err(TrainError::Data(_))));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (data, template) = fixture(2);
    let mut config = tiny_config();
    config.pose_conditioning = true;
    let out = train(&data, &template, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&out.checkpoint, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.step, out.checkpoint.step);
    assert_eq!(back.config, out.checkpoint.config);
    assert_eq!(back.registry, out.checkpoint.registry);
    for ((_, a), (_, b)) in back.model.params.iter().zip(out.checkpoint.model.params.iter()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    assert_eq!(back.to_bytes(), out.checkpoint.to_bytes());
    let id = &data[1].instance_id;
    assert_eq!(
        back.registry.shape_code(&back.model.params, id).unwrap(),
        out.checkpoint.registry.shape_code(&out.checkpoint.model.params, id).unwrap()
    );
}

#[test]
fn corrupted_checkpoints_rejected() {
    let (data, _) = fixture(1);
    let ids = vec![data[0].instance_id.clone()];
    let bytes = initialize(&ids, &tiny_config()).unwrap().to_bytes();
    for pos in [3, 10, 40, bytes.len() / 2, bytes.len() - 2] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x01;
        assert!(Checkpoint::from_bytes(&bad).is_err(), "flip at {pos}");
    }
    let mut bad = bytes.clone();
    bad[bytes.len() / 2] ^= 0x10;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(TrainError::Checksum)));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..15]), Err(TrainError::Truncated)));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());

    // a future version with a valid checksum
    let mut future = bytes[..bytes.len() - 4].to_vec();
    future[8..12].copy_from_slice(&2u32.to_le_bytes());
    let crc = crc32fast::hash(&future);
    future.extend_from_slice(&crc.to_le_bytes());
    assert!(matches!(
        Checkpoint::from_bytes(&future),
        Err(TrainError::Version { found: 2, expected: 1 })
    ));
}

#[test]
fn checkpoint_payload_is_little_endian() {
    let (data, _) = fixture(1);
    let ids = vec![data[0].instance_id.clone()];
    let ckpt = initialize(&ids, &tiny_config()).unwrap();
    let bytes = ckpt.to_bytes();
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let first = ckpt.model.params.iter().next().unwrap().1.value.data()[0];
    let start = 20 + header_len;
    assert_eq!(bytes[start..start + 8], first.to_le_bytes());

    // re-encode every payload value byte by byte from big-endian words
    let mut rebuilt = bytes[..start].to_vec();
    for (_, p) in ckpt.model.params.iter() {
        for v in p.value.data() {
            let be = v.to_be_bytes();
            rebuilt.extend(be.iter().rev());
        }
    }
    let crc = crc32fast::hash(&rebuilt);
    rebuilt.extend_from_slice(&crc.to_le_bytes());
    assert_eq!(rebuilt, bytes);
    let back = Checkpoint::from_bytes(&rebuilt).unwrap();
    assert_eq!(back.to_bytes(), bytes);
}

#[test]
fn instance_from_mesh_normalizes_keypoints() {
    let (data, _) = fixture(1);
    let kp = &data[0].keypoints;
    assert_eq!(kp.len(), 14);
    assert!(kp.positions.iter().all(|p| vec3::norm(*p) <= 1.0));
    assert!(data[0].surface.colors.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
}

/// One boxcar, full-size networks, small batches: the loss must fall by an
/// order of magnitude over 2000 steps.
#[test]
fn one_instance_loss_drops_tenfold() {
    let family = generate_family(13, 1, &BoxcarParams::default(), 1).unwrap();
    let make = |inst: &crate::synth::Instance, seed: u64| {
        TrainingInstance::from_mesh(&inst.id, &inst.mesh, &inst.keypoints, inst.yaw, 4000, 2000, seed)
            .unwrap()
            .0
    };
    let data = vec![make(&family.instances[0], 1)];
    let template = make(&family.template, 2);
    let config = TrainConfig {
        batch: BatchConfig {
            sdf: 512,
            surface: 256,
            template: 256,
            instances: 0,
        },
        steps: 2000,
        seed: 5,
        ..TrainConfig::default()
    };

    let out = train(&data, &template, &config).unwrap();
    assert_eq!(out.log.len(), 2000);
    let early = out.log[10].total;
    let tail = &out.log[out.log.len() - 100..];
    let smoothed = tail.iter().map(|r| r.total).sum::<f64>() / tail.len() as f64;
    assert!(smoothed < 0.1 * early, "loss only fell from {early} to {smoothed}");
}
