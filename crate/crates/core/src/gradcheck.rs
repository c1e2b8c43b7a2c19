//! Finite-difference gradient checks for each network stage and the full
//! model, on a small configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{CrossAttentionStack, EmaState};
use crate::autodiff::check::{check_gradients, GradCheckReport};
use crate::autodiff::{Bound, Matrix, ParamSet, Tape, Var};
use crate::encoder::{distance_rescale, EncoderLayer};
use crate::error::Result;
use crate::fusion::fuse;
use crate::gcn::{BoneGcnLayer, CombineMode, JointGcnLayer};
use crate::model::{loss_mpjpe, ModelConfig, PoseGrafModel};
use crate::skeleton::{
    angle_weights, bone_directions, hop_distance_matrix, normalized_adjacency, BoneGraph,
    SkeletonTopology,
};

/// Central-difference step.
pub const GRADCHECK_EPS: f64 = 1e-5;
/// Pass threshold on the relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, as a fraction of the largest
/// gradient entry of the check.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ModuleCheck {
    pub module: &'static str,
    pub report: GradCheckReport,
}

impl ModuleCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err < GRADCHECK_TOL
    }
}

fn random(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// A fixed random projection of `y` to a scalar, so no output entry gets
/// an accidentally symmetric gradient.
fn probe<'t>(y: Var<'t>, weights: &Matrix) -> Result<Var<'t>> {
    Ok(y.mul(y.tape().constant(weights.clone()))?.sum())
}

fn bind_slice<'t>(vars: &[Var<'t>]) -> Bound<'t> {
    Bound::from_vars(vars.to_vec())
}

fn check(module: &'static str, inputs: &[Matrix], f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>) -> Result<ModuleCheck> {
    Ok(ModuleCheck {
        module,
        report: check_gradients(inputs, GRADCHECK_EPS, GRADCHECK_FLOOR, f)?,
    })
}

/// Elementwise and shape operators chained into one scalar.
pub fn check_ops(rng: &mut ChaCha8Rng) -> Result<ModuleCheck> {
    let a = random(4, 3, 1.0, rng);
    let b = random(3, 5, 1.0, rng);
    let c = random(1, 5, 1.0, rng);
    let w = random(4, 5, 1.0, rng);
    check("ops", &[a, b, c], move |tape, v| {
        let x = v[0].matmul(v[1])?.add_row(v[2])?;
        let parts = x.split(1, &[2, 3])?;
        let y = tape.concat(&[parts[1].gelu(), parts[0].leaky_relu(0.01)], 1)?;
        let z = y.softmax_rows().add(y.layer_norm_rows().scale(0.3))?;
        let z = tape.concat(&[z, z.slice_rows(1, 2)?.sub(x.slice_rows(0, 2)?)?], 0)?;
        let s = z.slice_rows(0, 4)?.mul(x)?.sum_cols().mul(v[0].slice_cols(0, 1)?)?;
        let t = s.mul(s)?.sqrt_eps().mean().add(probe(z.slice_rows(0, 4)?.t().t(), &w)?)?;
        Ok(t)
    })
}

/// Joint and bone graph convolutions, both combine modes.
pub fn check_gcn(topo: &SkeletonTopology, dim: usize, rng: &mut ChaCha8Rng) -> Result<ModuleCheck> {
    let n = topo.num_joints();
    let bones = BoneGraph::new(topo);
    let m = bones.num_bones();
    let pose = random(n, 2, 1.0, rng);
    let dirs = bone_directions(&pose, &bones)?;
    let norm_w = normalized_adjacency(&angle_weights(&dirs, &bones)?.weights, true)?;
    let norm_a = normalized_adjacency(bones.adjacency(), true)?;
    let norm_j = normalized_adjacency(&topo.joint_adjacency(), true)?;

    let mut params = ParamSet::new();
    let joint = JointGcnLayer::new(&mut params, "j", dim, rng);
    let sum = BoneGcnLayer::new(&mut params, "bs", dim, CombineMode::Sum, rng);
    let cat = BoneGcnLayer::new(&mut params, "bc", dim, CombineMode::ConcatProject, rng);
    let np = params.len();
    let mut inputs = params.values().to_vec();
    inputs.push(random(n, dim, 1.0, rng));
    inputs.push(random(m, dim, 1.0, rng));
    let wj = random(n, dim, 1.0, rng);
    let wb = random(m, dim, 1.0, rng);
    check("gcn", &inputs, move |tape, v| {
        let p = bind_slice(&v[..np]);
        let xj = joint.forward(v[np], tape.constant(norm_j.clone()), &p)?;
        let (cw, ca) = (tape.constant(norm_w.clone()), tape.constant(norm_a.clone()));
        let xb = sum.forward(v[np + 1], cw, ca, &p)?;
        let xb = cat.forward(xb, cw, ca, &p)?;
        probe(xj, &wj)?.add(probe(xb, &wb)?)
    })
}

/// Two cross-attention layers over joint and bone tokens.
pub fn check_attention(n: usize, m: usize, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<ModuleCheck> {
    let mut params = ParamSet::new();
    let stack = CrossAttentionStack::new(&mut params, 2, dim, heads, false, rng);
    let np = params.len();
    let mut inputs = params.values().to_vec();
    inputs.push(random(n + m, dim, 1.0, rng));
    let w = random(n + m, dim, 1.0, rng);
    check("attention", &inputs, move |tape, v| {
        let p = bind_slice(&v[..np]);
        let out = stack.forward(v[np], n, &p, &mut EmaState::new(0.99))?;
        probe(tape.concat(&[out.joints, out.bones], 0)?, &w)
    })
}

/// Fusion for a fixed seed list, gradients to joint and bone features.
pub fn check_fusion(topo: &SkeletonTopology, dim: usize, rng: &mut ChaCha8Rng) -> Result<ModuleCheck> {
    let n = topo.num_joints();
    let seeds: Vec<usize> = (0..n).filter(|j| j % 2 == 1).collect();
    let inputs = [random(n, dim, 1.0, rng), random(topo.num_bones(), dim, 1.0, rng)];
    let w = random(n, dim, 1.0, rng);
    let topo = topo.clone();
    check("fusion", &inputs, move |_, v| probe(fuse(v[0], v[1], &seeds, &topo)?, &w))
}

/// One distance-biased encoder layer, including its residual input.
pub fn check_encoder(topo: &SkeletonTopology, dim: usize, ffn: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<ModuleCheck> {
    let n = topo.num_joints();
    let bias = distance_rescale(&hop_distance_matrix(topo), 1.0).a_hat;
    let mut params = ParamSet::new();
    let layer = EncoderLayer::new(&mut params, "enc", dim, ffn, rng);
    let np = params.len();
    let mut inputs = params.values().to_vec();
    inputs.push(random(n, dim, 1.0, rng));
    inputs.push(random(n, dim, 1.0, rng));
    let w = random(n, dim, 1.0, rng);
    check("encoder", &inputs, move |tape, v| {
        let p = bind_slice(&v[..np]);
        let (out, _) = layer.forward(v[np], tape.constant(bias.clone()), v[np + 1], heads, false, &p)?;
        probe(out, &w)
    })
}

/// MPJPE loss of the whole network with respect to every parameter.
pub fn check_model(config: &ModelConfig, topo: &SkeletonTopology, rng: &mut ChaCha8Rng) -> Result<ModuleCheck> {
    let model = PoseGrafModel::new(config.clone(), topo.clone(), rng.random())?;
    let n = topo.num_joints();
    let pose2d = random(n, 2, 200.0, rng);
    let gt = random(n, 3, 300.0, rng);
    let inputs = model.params().values().to_vec();
    check("model", &inputs, move |tape, v| {
        let p = bind_slice(v);
        let pred = model.forward(tape, &p, &pose2d)?.pose3d;
        loss_mpjpe(tape, &[pred], std::slice::from_ref(&gt))
    })
}

/// Every module check on the toy configuration with a 5-joint chain.
pub fn run_suite(seed: u64) -> Result<Vec<ModuleCheck>> {
    let config = ModelConfig::toy();
    let topo = SkeletonTopology::chain(config.num_joints)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m, d, h) = (topo.num_joints(), topo.num_bones(), config.dim, config.heads);
    Ok(vec![
        check_ops(&mut rng)?,
        check_gcn(&topo, d, &mut rng)?,
        check_attention(n, m, d, h, &mut rng)?,
        check_fusion(&topo, d, &mut rng)?,
        check_encoder(&topo, d, config.ffn_width, h, &mut rng)?,
        check_model(&config, &topo, &mut rng)?,
    ])
}
