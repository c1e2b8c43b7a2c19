#![allow(clippy::needless_range_loop)]

mod common;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use posegraf::autodiff::ParamSet;
use posegraf::encoder::EncoderLayer;
use posegraf::fusion::FusionMode;
use posegraf::gcn::CombineMode;
use posegraf::io::synth::{generate_synthetic, SyntheticGenConfig};
use posegraf::skeleton::horizontal_flip;
use posegraf::train::{predict_with_flip_ensemble, train_epoch};
use posegraf::{Adam, Matrix, ModelConfig, PoseGrafModel, SkeletonTopology, Tape};

fn small_config() -> ModelConfig {
    ModelConfig {
        dim: 16,
        heads: 2,
        layers: 2,
        ffn_width: 32,
        ..ModelConfig::default()
    }
}

fn random_pose2d(rng: &mut impl Rng) -> Matrix {
    random_matrix(17, 2, 400.0, rng)
}

#[test]
fn fusion_off_feeds_cross_attention_output() {
    let cfg = ModelConfig {
        fusion_mode: FusionMode::Off,
        ..small_config()
    };
    let model = PoseGrafModel::new(cfg, SkeletonTopology::human36m(), 1).unwrap();
    let tape = Tape::new();
    let p = model.params().bind_frozen(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tr = model.forward(&tape, &p, &random_pose2d(&mut rng)).unwrap();
    assert!(tr.seeds.is_empty());
    assert_eq!(tr.fused.value(), tr.x_jc.value());
}

#[test]
fn zero_seeds_leave_joint_features_unchanged() {
    let cfg = ModelConfig {
        mu: 0,
        ..small_config()
    };
    let model = PoseGrafModel::new(cfg, SkeletonTopology::human36m(), 2).unwrap();
    let tape = Tape::new();
    let p = model.params().bind_frozen(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tr = model.forward(&tape, &p, &random_pose2d(&mut rng)).unwrap();
    assert_eq!(tr.fused.value(), tr.x_jc.value());
}

#[test]
fn disabled_bone_gcn_ignores_bone_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pose = random_pose2d(&mut rng);
    for enabled in [false, true] {
        let cfg = ModelConfig {
            enable_bone_gcn: enabled,
            ..small_config()
        };
        let mut model = PoseGrafModel::new(cfg, SkeletonTopology::human36m(), 3).unwrap();
        let before = model.predict(&pose).unwrap();
        let emb = *model.embeddings();
        for id in [emb.bone_weight, emb.bone_bias] {
            let m = model.params_mut().get_mut(id);
            *m = m.map(|v| v + 0.37);
        }
        let after = model.predict(&pose).unwrap();
        if enabled {
            assert!(after.max_abs_diff(&before) > 1e-6);
        } else {
            assert_eq!(after, before);
        }
    }
}

#[test]
fn fuzzed_inputs_give_finite_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let topo = SkeletonTopology::human36m();
    let model = PoseGrafModel::new(ModelConfig::desk(), topo.clone(), 4).unwrap();
    for i in 0..1000 {
        let scale = [1e-6, 1.0, 300.0, 1e4][i % 4];
        let mut pose = random_matrix(17, 2, scale, &mut rng);
        match i % 5 {
            // Every joint on one point: all bones degenerate.
            0 => pose = Matrix::filled(17, 2, rng.random_range(-100.0..100.0)),
            // A few zero-length bones.
            1 => {
                for _ in 0..3 {
                    let j = rng.random_range(1..17);
                    let row = pose.row(topo.parent(j).unwrap()).to_vec();
                    pose.row_mut(j).copy_from_slice(&row);
                }
            }
            // All bones parallel: every angle weight is zero.
            2 => {
                for j in 0..17 {
                    pose.set(j, 0, 0.0);
                    pose.set(j, 1, j as f64 * scale);
                }
            }
            _ => {}
        }
        let out = model.predict(&pose).unwrap();
        assert_eq!(out.shape(), (17, 3));
        assert!(out.is_finite(), "non-finite output for case {i}");
    }
}

#[test]
fn non_finite_input_is_rejected() {
    let model = PoseGrafModel::new(small_config(), SkeletonTopology::human36m(), 5).unwrap();
    let mut pose = Matrix::zeros(17, 2);
    pose.set(4, 1, f64::NAN);
    assert!(model.predict(&pose).is_err());
    assert!(model.predict(&Matrix::zeros(16, 2)).is_err());
}

#[test]
fn prediction_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pose = random_pose2d(&mut rng);
    let a = PoseGrafModel::new(small_config(), SkeletonTopology::human36m(), 6).unwrap();
    let b = PoseGrafModel::new(small_config(), SkeletonTopology::human36m(), 6).unwrap();
    let (pa, pb) = (a.predict(&pose).unwrap(), b.predict(&pose).unwrap());
    assert_eq!(pa.shape(), (17, 3));
    assert_eq!(pa, pb);
    assert_eq!(pa, a.predict(&pose).unwrap());
}

#[test]
fn concat_project_model_shapes() {
    let cfg = ModelConfig {
        combine_mode: CombineMode::ConcatProject,
        ..small_config()
    };
    let model = PoseGrafModel::new(cfg, SkeletonTopology::human36m(), 7).unwrap();
    let proj: Vec<_> = model
        .params()
        .names()
        .iter()
        .filter(|n| n.ends_with(".projection"))
        .map(|n| model.params().get(model.params().find(n).unwrap()).shape())
        .collect();
    assert_eq!(proj, vec![(32, 16); 2]);
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tr = model.forward(&tape, &p, &random_pose2d(&mut rng)).unwrap();
    assert_eq!(tr.x_b.shape(), (16, 16));
    assert_eq!(tr.x_jc.shape(), (17, 16));
    assert_eq!(tr.x_bc.shape(), (16, 16));
    assert_eq!(tr.pose3d.shape(), (17, 3));
}

#[test]
fn flip_ensemble_is_branch_mean() {
    let topo = SkeletonTopology::human36m();
    let model = PoseGrafModel::new(small_config(), topo.clone(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pose = random_pose2d(&mut rng);
    let plain = model.predict(&pose).unwrap();
    let flipped = horizontal_flip(&model.predict(&horizontal_flip(&pose, &topo).unwrap()).unwrap(), &topo).unwrap();
    let want = Matrix::from_fn(17, 3, |r, c| 0.5 * (plain.get(r, c) + flipped.get(r, c)));
    assert!(predict_with_flip_ensemble(&model, &pose).unwrap().max_abs_diff(&want) < 1e-12);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let topo = SkeletonTopology::human36m();
    let data = generate_synthetic(&SyntheticGenConfig::human36m(9, 10), &topo).unwrap();
    let mut model = PoseGrafModel::new(small_config(), topo, 9).unwrap();
    let before = model.params().clone();
    let mut adam = Adam::new(0.0, 0.96);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let loss = train_epoch(&mut model, &data, &mut adam, 4, true, &mut rng).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    assert_eq!(model.params(), &before);
    assert!(train_epoch(&mut model, &[], &mut adam, 4, true, &mut rng).is_err());
}

fn gelu_ref(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn softmax_ref(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let mx = row.max();
        row.apply(|v| *v = (*v - mx).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

#[test]
fn encoder_with_unit_bias_matches_plain_attention() {
    let (n, d, f, heads) = (7, 12, 24, 3);
    let dh = d / heads;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut params = ParamSet::new();
    let layer = EncoderLayer::new(&mut params, "enc", d, f, &mut rng);
    let x = random_matrix(n, d, 1.0, &mut rng);
    let xjc = random_matrix(n, d, 1.0, &mut rng);

    let tape = Tape::new();
    let p = params.bind_frozen(&tape);
    let (out, weights) = layer
        .forward(tape.constant(x.clone()), tape.constant(Matrix::filled(n, n, 1.0)), tape.constant(xjc.clone()), heads, false, &p)
        .unwrap();

    let g = |id| to_na(params.get(id));
    let xn = to_na(&x);
    let (q, k, v) = (&xn * g(layer.proj.wq), &xn * g(layer.proj.wk), &xn * g(layer.proj.wv));
    let mut cat = DMatrix::zeros(n, d);
    for h in 0..heads {
        let qh = q.columns(h * dh, dh);
        let kh = k.columns(h * dh, dh);
        let logits = (qh * kh.transpose()).map(|s| s.max(0.0) / (dh as f64).sqrt());
        let att = softmax_ref(&logits);
        assert!(max_abs_diff_na(&weights[h], &att) < 1e-12);
        cat.columns_mut(h * dh, dh).copy_from(&(att * v.columns(h * dh, dh)));
    }
    let mid = cat * g(layer.proj.wo) + to_na(&xjc);
    let bias = |id, m: DMatrix<f64>| {
        let b = g(id);
        DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] + b[(0, c)])
    };
    let h1 = bias(layer.b1, &mid * g(layer.w1)).map(gelu_ref);
    let h2 = bias(layer.b2, h1 * g(layer.w2)).map(gelu_ref);
    let h3 = bias(layer.b3, h2 * g(layer.w3)).map(gelu_ref);
    assert!(max_abs_diff_na(&out.value(), &(mid + h3)) < 1e-12);
}
