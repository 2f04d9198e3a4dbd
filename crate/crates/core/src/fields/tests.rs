use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::autodiff::{grad_check, GradCheckOptions, Tensor};
use crate::geometry::vec3::{self, Vec3};

fn tiny_config() -> ModelConfig {
    let spec = |activation| MlpSpec {
        hidden_layers: 2,
        width: 16,
        activation,
    };
    let softplus = Activation::Softplus { beta: 1.0 };
    ModelConfig {
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
            tex: spec(softplus),
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
    }
}

fn random_code(rng: &mut ChaCha8Rng, kind: CodeKind, dim: usize, sigma: f64) -> LatentCode {
    let n = Normal::new(0.0, sigma).unwrap();
    LatentCode::new(kind, (0..dim).map(|_| n.sample(rng)).collect()).unwrap()
}

fn ball_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = [(); 3].map(|_| rng.random_range(-1.0..1.0));
        if vec3::norm(p) <= 1.0 {
            out.push(p);
        }
    }
    out
}

/// Zeroes the output layer of `net` and sets its bias.
fn set_output(model: &mut ImplicitModel, net: &str, layers: usize, bias: f64) {
    let w = model.params.id(&format!("{net}.{layers}.w")).unwrap();
    let b = model.params.id(&format!("{net}.{layers}.b")).unwrap();
    let ws = model.params.value(w).shape().to_vec();
    let bs = model.params.value(b).shape().to_vec();
    model.params.set_value(w, Tensor::zeros(&ws)).unwrap();
    model.params.set_value(b, Tensor::full(&bs, bias)).unwrap();
}

#[test]
fn fresh_warp_is_near_identity_on_unit_ball() {
    let model = ImplicitModel::new(ModelConfig::default(), 11);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points = ball_points(&mut rng, 2000);
    let codes = [
        LatentCode::zeros(CodeKind::Shape, 64),
        random_code(&mut rng, CodeKind::Shape, 64, 0.01),
        random_code(&mut rng, CodeKind::Shape, 64, 1.0),
    ];
    for z in &codes {
        let warped = model.warp(&points, z).unwrap();
        let worst = points
            .iter()
            .zip(&warped)
            .map(|(p, q)| vec3::dist(*p, *q))
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "displacement {worst}");
    }
}

#[test]
fn batch_rows_match_single_point_calls() {
    let model = ImplicitModel::new(tiny_config(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = random_code(&mut rng, CodeKind::Shape, 8, 0.1);
    let points = ball_points(&mut rng, 37);
    let batch = model.warp(&points, &z).unwrap();
    let sdf = model.instance_sdf(&points, &z).unwrap();
    for (i, p) in points.iter().enumerate() {
        let single = model.warp(&[*p], &z).unwrap()[0];
        assert!(vec3::dist(single, batch[i]) <= 1e-12);
        assert!((model.instance_sdf(&[*p], &z).unwrap()[0] - sdf[i]).abs() <= 1e-12);
    }
    assert!(model.warp(&[], &z).unwrap().is_empty());
}

#[test]
fn instance_sdf_is_the_composition() {
    let model = ImplicitModel::new(tiny_config(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = random_code(&mut rng, CodeKind::Shape, 8, 0.5);
    let points = ball_points(&mut rng, 300);
    let direct = model.instance_sdf(&points, &z).unwrap();
    let composed = model.template_sdf(&model.warp(&points, &z).unwrap());
    for (a, b) in direct.iter().zip(&composed) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let again = model.instance_sdf(&points, &z).unwrap();
    assert_eq!(direct, again);
}

#[test]
fn queries_reject_wrong_kind_or_dim() {
    let model = ImplicitModel::new(tiny_config(), 4);
    let tex = LatentCode::zeros(CodeKind::Texture, 8);
    assert!(matches!(
        model.warp(&[[0.0; 3]], &tex),
        Err(FieldError::KindMismatch { .. })
    ));
    let short = LatentCode::zeros(CodeKind::Shape, 3);
    assert!(matches!(model.instance_sdf(&[[0.0; 3]], &short), Err(FieldError::Dim { .. })));
    assert!(LatentCode::new(CodeKind::Shape, vec![f64::NAN]).is_err());
}

fn gradient_ok(report: &crate::autodiff::GradCheckReport) {
    assert!(report.max_rel_error <= 1e-5, "{report:?}");
}

#[test]
fn warp_gradients_match_finite_differences() {
    let model = ImplicitModel::new(tiny_config(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = random_code(&mut rng, CodeKind::Shape, 8, 0.3);
    let pts = Tensor::matrix(4, 3, ball_points(&mut rng, 4).concat()).unwrap();
    let zt = Tensor::matrix(1, 8, z.vector().to_vec()).unwrap();
    let opts = GradCheckOptions::default();
    // w.r.t. points, then w.r.t. the code
    let by_point = grad_check(
        |tape, p| {
            let w = model.warp_t(tape, p, tape.constant(zt.clone()))?;
            Ok(w.mul(w)?.sum())
        },
        &pts,
        opts,
    )
    .unwrap();
    gradient_ok(&by_point);
    let by_code = grad_check(
        |tape, z| {
            let w = model.warp_t(tape, tape.constant(pts.clone()), z)?;
            Ok(w.sin().sum())
        },
        &zt,
        opts,
    )
    .unwrap();
    gradient_ok(&by_code);
}

#[test]
fn template_sdf_and_pose_lift_gradients_match_finite_differences() {
    let model = ImplicitModel::new(tiny_config(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts = Tensor::matrix(5, 3, ball_points(&mut rng, 5).concat()).unwrap();
    let opts = GradCheckOptions::default();
    gradient_ok(&grad_check(|tape, p| Ok(model.template_sdf_t(tape, p)?.sum()), &pts, opts).unwrap());
    let o = Tensor::from_rows(&[encode_pose(0.7), [0.2, -0.9]]);
    gradient_ok(
        &grad_check(
            |tape, o| {
                let c = model.lift_pose_t(tape, o)?;
                Ok(c.mul(c)?.sum())
            },
            &o,
            opts,
        )
        .unwrap(),
    );
}

#[test]
fn template_sdf_is_deterministic() {
    let model = ImplicitModel::new(tiny_config(), 7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // spans several query chunks
    let points = ball_points(&mut rng, 2 * QUERY_CHUNK + 17);
    let a = model.template_sdf(&points);
    let b = model.template_sdf(&points);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    let twin = ImplicitModel::new(tiny_config(), 7);
    assert_eq!(twin.template_sdf(&points[..10]), a[..10].to_vec());
}

#[test]
fn surface_color_enforces_tolerance() {
    let mut model = ImplicitModel::new(tiny_config(), 8);
    let z_shape = LatentCode::zeros(CodeKind::Shape, 8);
    let z_tex = LatentCode::zeros(CodeKind::Texture, 8);
    let z_loc = LocalFeature::zeros(4);
    let points = [[0.1, 0.2, 0.3], [0.5, -0.5, 0.0]];
    set_output(&mut model, "sdf", 2, 0.5);
    let err = model
        .surface_color(&points, &z_shape, &z_tex, None, &z_loc, SURFACE_TOLERANCE)
        .unwrap_err();
    assert!(matches!(err, FieldError::OffSurface { sdf, .. } if (sdf - 0.5).abs() < 1e-15));

    set_output(&mut model, "sdf", 2, 0.0);
    let colors = model
        .surface_color(&points, &z_shape, &z_tex, None, &z_loc, SURFACE_TOLERANCE)
        .unwrap();
    assert!(colors.iter().flatten().all(|c| *c > 0.0 && *c < 1.0));
}

#[test]
fn color_depends_on_template_point_only() {
    let mut model = ImplicitModel::new(tiny_config(), 9);
    // identity warp: different shape codes map p to the same template point
    set_output(&mut model, "warp", 2, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let za = random_code(&mut rng, CodeKind::Shape, 8, 1.0);
    let zb = random_code(&mut rng, CodeKind::Shape, 8, 1.0);
    let z_tex = random_code(&mut rng, CodeKind::Texture, 8, 1.0);
    let z_loc = LocalFeature::zeros(4);
    let p = ball_points(&mut rng, 20);
    let a = model.surface_color_unchecked(&p, &za, &z_tex, None, &z_loc).unwrap();
    let b = model.surface_color_unchecked(&p, &zb, &z_tex, None, &z_loc).unwrap();
    assert_eq!(a, b);
}

#[test]
fn color_ignores_provenance_of_zero_local_feature() {
    let model = ImplicitModel::new(tiny_config(), 10);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let z_shape = random_code(&mut rng, CodeKind::Shape, 8, 0.3);
    let z_tex = random_code(&mut rng, CodeKind::Texture, 8, 0.3);
    let z_pose = model.lift_pose(encode_pose(1.2)).unwrap();
    let p = ball_points(&mut rng, 30);
    let plain = LocalFeature::zeros(4);
    let derived: Vec<f64> = (0..4).map(|i| -(i as f64) * 0.0).collect();
    let other = LocalFeature::new(derived).unwrap();
    let a = model.surface_color_unchecked(&p, &z_shape, &z_tex, Some(&z_pose), &plain).unwrap();
    let b = model.surface_color_unchecked(&p, &z_shape, &z_tex, Some(&z_pose), &other).unwrap();
    assert_eq!(a, b);
    assert!(LocalFeature::new(vec![0.0, 1e-300]).is_err());
}

#[test]
fn lift_pose_is_deterministic() {
    let model = ImplicitModel::new(tiny_config(), 12);
    let a = model.lift_pose(encode_pose(0.3)).unwrap();
    let b = model.lift_pose(encode_pose(0.3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.kind(), CodeKind::Pose);
    assert_eq!(a.dim(), 4);
    assert_ne!(a, model.lift_pose(encode_pose(2.0)).unwrap());
    assert!(model.lift_pose([f64::NAN, 0.0]).is_err());
}

#[test]
fn pose_encoding_examples() {
    assert_eq!(encode_pose(0.0), [0.0, 1.0]);
    let q = encode_pose(PI / 2.0);
    assert!((q[0] - 1.0).abs() < 1e-15 && q[1].abs() < 1e-15);
    let (a, b) = (encode_pose(0.83), encode_pose(0.83 + 2.0 * PI));
    assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    assert_eq!(decode_pose([0.0, 1.0]).unwrap(), 0.0);
    assert_eq!(decode_pose([0.0, 5.0]).unwrap(), 0.0);
    assert_eq!(decode_pose([-0.0, -1.0]).unwrap(), PI);
    assert!(matches!(decode_pose([0.0, 0.0]), Err(FieldError::ZeroPose)));
}

fn wrapped_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

proptest! {
    #[test]
    fn pose_round_trip(theta in -50.0f64..50.0, scale in 1e-3f64..1e3) {
        let o = encode_pose(theta);
        prop_assert!(((o[0] * o[0] + o[1] * o[1]).sqrt() - 1.0).abs() <= 1e-12);
        let back = decode_pose(o).unwrap();
        prop_assert!(back > -PI && back <= PI);
        prop_assert!(wrapped_difference(back, theta) <= 1e-12);
        let scaled = decode_pose([o[0] * scale, o[1] * scale]).unwrap();
        prop_assert!((scaled - back).abs() <= 1e-12);
    }
}
