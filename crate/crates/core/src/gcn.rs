//! Joint and bone-direction graph convolutions plus the input embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Matrix, ParamId, ParamSet, Var};
use crate::error::{Error, Result};
use crate::skeleton::SkeletonTopology;

/// Negative slope of every LeakyReLU in the graph layers.
pub const LEAKY_SLOPE: f64 = 0.01;

/// How the weighted and unweighted bone branches are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    #[default]
    Sum,
    ConcatProject,
}

/// `LeakyReLU(Â X Θ_J)`, no bias.
#[derive(Debug, Clone, Copy)]
pub struct JointGcnLayer {
    pub theta: ParamId,
}

impl JointGcnLayer {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        JointGcnLayer {
            theta: params.add_uniform(format!("{name}.theta_j"), dim, dim, dim, rng),
        }
    }

    pub fn forward<'t>(&self, x: Var<'t>, norm_adj: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
        joint_gcn_forward(x, norm_adj, p[self.theta])
    }
}

pub fn joint_gcn_forward<'t>(x: Var<'t>, norm_adj: Var<'t>, theta: Var<'t>) -> Result<Var<'t>> {
    Ok(norm_adj.matmul(x)?.matmul(theta)?.leaky_relu(LEAKY_SLOPE))
}

/// Two independently parameterized branches over the angle-weighted and the
/// binary bone graphs.
#[derive(Debug, Clone, Copy)]
pub struct BoneGcnLayer {
    pub theta_w: ParamId,
    pub theta_a: ParamId,
    pub combine: CombineMode,
    /// `2D x D`, only with [`CombineMode::ConcatProject`].
    pub projection: Option<ParamId>,
}

impl BoneGcnLayer {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        dim: usize,
        combine: CombineMode,
        rng: &mut impl Rng,
    ) -> Self {
        let theta_w = params.add_uniform(format!("{name}.theta_w"), dim, dim, dim, rng);
        let theta_a = params.add_uniform(format!("{name}.theta_a"), dim, dim, dim, rng);
        let projection = (combine == CombineMode::ConcatProject)
            .then(|| params.add_uniform(format!("{name}.projection"), 2 * dim, dim, 2 * dim, rng));
        BoneGcnLayer {
            theta_w,
            theta_a,
            combine,
            projection,
        }
    }

    pub fn forward<'t>(
        &self,
        x: Var<'t>,
        norm_w: Var<'t>,
        norm_a: Var<'t>,
        p: &Bound<'t>,
    ) -> Result<Var<'t>> {
        let weighted = norm_w.matmul(x)?.matmul(p[self.theta_w])?.leaky_relu(LEAKY_SLOPE);
        let binary = norm_a.matmul(x)?.matmul(p[self.theta_a])?.leaky_relu(LEAKY_SLOPE);
        match (self.combine, self.projection) {
            (CombineMode::Sum, _) => weighted.add(binary),
            (CombineMode::ConcatProject, Some(proj)) => {
                x.tape().concat(&[weighted, binary], 1)?.matmul(p[proj])
            }
            (CombineMode::ConcatProject, None) => {
                Err(Error::Config("concat_project layer without projection".into()))
            }
        }
    }
}

/// Affine maps lifting 2D joint coordinates and bone directions to `D`.
#[derive(Debug, Clone, Copy)]
pub struct InputEmbeddings {
    pub joint_weight: ParamId,
    pub joint_bias: ParamId,
    pub bone_weight: ParamId,
    pub bone_bias: ParamId,
}

impl InputEmbeddings {
    pub fn new(params: &mut ParamSet, dim: usize, rng: &mut impl Rng) -> Self {
        InputEmbeddings {
            joint_weight: params.add_uniform("embed.joint_weight", 2, dim, 2, rng),
            joint_bias: params.add_uniform("embed.joint_bias", 1, dim, 2, rng),
            bone_weight: params.add_uniform("embed.bone_weight", 2, dim, 2, rng),
            bone_bias: params.add_uniform("embed.bone_bias", 1, dim, 2, rng),
        }
    }

    /// Returns `(N x D joint tokens, M x D bone tokens)`.
    pub fn forward<'t>(
        &self,
        joints: Var<'t>,
        directions: Var<'t>,
        p: &Bound<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let j = joints.matmul(p[self.joint_weight])?.add_row(p[self.joint_bias])?;
        let b = directions
            .matmul(p[self.bone_weight])?
            .add_row(p[self.bone_bias])?;
        Ok((j, b))
    }
}

/// Centers a pixel-space pose on the root joint and divides by the image
/// diagonal, so in-image poses land in `[-1, 1]`.
pub fn normalize_pose2d(pose2d: &Matrix, topo: &SkeletonTopology, image_size_px: f64) -> Result<Matrix> {
    if pose2d.shape() != (topo.num_joints(), 2) {
        return Err(Error::shape(
            "normalize_pose2d",
            format!("pose {:?} for {} joints", pose2d.shape(), topo.num_joints()),
        ));
    }
    let diag = image_size_px * std::f64::consts::SQRT_2;
    let root = topo.root();
    let (rx, ry) = (pose2d.get(root, 0), pose2d.get(root, 1));
    Ok(Matrix::from_fn(pose2d.rows(), 2, |r, c| {
        let origin = if c == 0 { rx } else { ry };
        (pose2d.get(r, c) - origin) / diag
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::skeleton::normalized_adjacency;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_node_identity() {
        let tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[[0.5, 1.5, 2.0]]).unwrap());
        let adj = tape.constant(Matrix::identity(1));
        let theta = tape.constant(Matrix::identity(3));
        let y = joint_gcn_forward(x, adj, theta).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn zero_input_zero_output() {
        let tape = Tape::new();
        let x = tape.constant(Matrix::zeros(3, 4));
        let adj = normalized_adjacency(&SkeletonTopology::chain(3).unwrap().joint_adjacency(), true)
            .unwrap();
        let theta = tape.constant(Matrix::from_fn(4, 4, |r, c| (r + c) as f64));
        let y = joint_gcn_forward(x, tape.constant(adj), theta).unwrap();
        assert_eq!(y.value(), Matrix::zeros(3, 4));
    }

    #[test]
    fn bone_layer_identity_branches_double() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = BoneGcnLayer::new(&mut params, "b", 3, CombineMode::Sum, &mut rng);
        *params.get_mut(layer.theta_w) = Matrix::identity(3);
        *params.get_mut(layer.theta_a) = Matrix::identity(3);
        let tape = Tape::new();
        let p = params.bind(&tape);
        let x = tape.constant(Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
        let one = tape.constant(Matrix::identity(1));
        let y = layer.forward(x, one, one, &p).unwrap();
        assert_eq!(y.value().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn parallel_bones_keep_weighted_branch_finite() {
        // All angle weights zero: W + I normalizes to the identity.
        let norm_w = normalized_adjacency(&Matrix::zeros(4, 4), true).unwrap();
        assert_eq!(norm_w, Matrix::identity(4));
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = BoneGcnLayer::new(&mut params, "b", 5, CombineMode::Sum, &mut rng);
        let tape = Tape::new();
        let p = params.bind(&tape);
        let x = tape.constant(Matrix::from_fn(4, 5, |r, c| r as f64 - c as f64));
        let a = normalized_adjacency(&SkeletonTopology::chain(5).unwrap().joint_adjacency(), true)
            .unwrap();
        let a = Matrix::from_fn(4, 4, |r, c| a.get(r, c));
        let y = layer
            .forward(x, tape.constant(norm_w), tape.constant(a), &p)
            .unwrap();
        assert!(y.value().is_finite());
    }

    #[test]
    fn combine_modes_share_output_shape() {
        for mode in [CombineMode::Sum, CombineMode::ConcatProject] {
            let mut params = ParamSet::new();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let layer = BoneGcnLayer::new(&mut params, "b", 6, mode, &mut rng);
            let tape = Tape::new();
            let p = params.bind(&tape);
            let x = tape.constant(Matrix::filled(4, 6, 0.3));
            let adj = tape.constant(Matrix::identity(4));
            let y = layer.forward(x, adj, adj, &p).unwrap();
            assert_eq!(y.shape(), (4, 6));
        }
    }

    #[test]
    fn embeddings_zero_and_rowwise() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = InputEmbeddings::new(&mut params, 8, &mut rng);
        *params.get_mut(emb.joint_bias) = Matrix::zeros(1, 8);
        *params.get_mut(emb.bone_bias) = Matrix::zeros(1, 8);
        let tape = Tape::new();
        let p = params.bind(&tape);
        let (j, b) = emb
            .forward(tape.constant(Matrix::zeros(17, 2)), tape.constant(Matrix::zeros(16, 2)), &p)
            .unwrap();
        assert_eq!(j.value(), Matrix::zeros(17, 8));
        assert_eq!(b.value(), Matrix::zeros(16, 8));

        let pose = Matrix::from_fn(4, 2, |r, c| r as f64 * 0.3 - c as f64);
        let perm = [2, 0, 3, 1];
        let tape = Tape::new();
        let p = params.bind(&tape);
        let dirs = tape.constant(Matrix::zeros(1, 2));
        let (a, _) = emb.forward(tape.constant(pose.clone()), dirs, &p).unwrap();
        let (b, _) = emb.forward(tape.constant(pose.permute_rows(&perm)), dirs, &p).unwrap();
        assert_eq!(a.value().permute_rows(&perm), b.value());
    }

    #[test]
    fn normalization_centers_root() {
        let t = SkeletonTopology::chain(2).unwrap();
        let p = Matrix::from_rows(&[[500.0, 500.0], [500.0 + 1000.0 * 2f64.sqrt(), 500.0]]).unwrap();
        let n = normalize_pose2d(&p, &t, 1000.0).unwrap();
        assert_eq!(n.row(0), &[0.0, 0.0]);
        assert!((n.get(1, 0) - 1.0).abs() < 1e-15);
    }
}
