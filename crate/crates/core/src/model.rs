//! Full lifting network: embeddings, joint and bone graph convolutions,
//! cross-attention, fusion, distance-biased encoder and regression head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{CrossAttentionStack, EmaState, JointScores, EMA_BETA};
use crate::autodiff::{Bound, Matrix, ParamId, ParamSet, Tape, Var};
use crate::encoder::{distance_rescale, rescale_matrix, DistanceBias, EncoderLayer};
use crate::error::{Error, Result};
use crate::fusion::{fuse, select_seeds, FusionConfig, FusionMode};
use crate::gcn::{normalize_pose2d, BoneGcnLayer, CombineMode, InputEmbeddings, JointGcnLayer};
use crate::skeleton::{
    angle_weights, bone_directions, hop_distance_matrix, normalized_adjacency, BoneGraph,
    SkeletonTopology,
};

/// Which joint-graph matrix feeds the encoder's distance rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    /// Shortest-path hop counts.
    #[default]
    Hops,
    /// Binary joint adjacency.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_joints: usize,
    /// Embedding width `D`.
    pub dim: usize,
    pub heads: usize,
    /// Encoder depth `L`.
    pub layers: usize,
    /// Cross-attention depth `K`.
    pub cross_layers: usize,
    pub gcn_depth: usize,
    pub mu: usize,
    pub w: f64,
    pub beta: f64,
    pub combine_mode: CombineMode,
    pub ffn_width: usize,
    pub enable_bone_gcn: bool,
    pub fusion_mode: FusionMode,
    pub layer_norm: bool,
    pub distance_matrix: DistanceKind,
    /// Square image side used to normalize 2D inputs.
    pub image_size_px: f64,
    /// The head predicts in units of this many millimetres.
    pub output_scale_mm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_joints: 17,
            dim: 512,
            heads: 8,
            layers: 6,
            cross_layers: 2,
            gcn_depth: 2,
            mu: 4,
            w: 1.0,
            beta: EMA_BETA,
            combine_mode: CombineMode::Sum,
            ffn_width: 1024,
            enable_bone_gcn: true,
            fusion_mode: FusionMode::Dynamic,
            layer_norm: false,
            distance_matrix: DistanceKind::Hops,
            image_size_px: 1000.0,
            output_scale_mm: 1000.0,
        }
    }
}

impl ModelConfig {
    /// Small profile for single-CPU training: `L = 2, H = 2, D = 64`.
    pub fn desk() -> Self {
        ModelConfig {
            dim: 64,
            heads: 2,
            layers: 2,
            ffn_width: 128,
            ..ModelConfig::default()
        }
    }

    /// Gradient-check configuration on a 5-joint chain.
    pub fn toy() -> Self {
        ModelConfig {
            num_joints: 5,
            dim: 8,
            heads: 2,
            layers: 1,
            cross_layers: 1,
            mu: 2,
            ffn_width: 16,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_joints < 2 {
            return fail(format!("need at least 2 joints, got {}", self.num_joints));
        }
        if self.dim == 0 || self.heads == 0 {
            return fail("dim and heads must be positive".into());
        }
        if !self.dim.is_multiple_of(self.heads) {
            return fail(format!("D not divisible by H ({} % {})", self.dim, self.heads));
        }
        if self.ffn_width < self.dim {
            return fail(format!("ffn_width {} smaller than dim {}", self.ffn_width, self.dim));
        }
        if self.mu > self.num_joints {
            return fail(format!("mu {} exceeds {} joints", self.mu, self.num_joints));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail(format!("beta {} outside [0, 1]", self.beta));
        }
        if !self.w.is_finite() {
            return fail("w must be finite".into());
        }
        if !(self.image_size_px > 0.0) || !(self.output_scale_mm > 0.0) {
            return fail("image_size_px and output_scale_mm must be positive".into());
        }
        Ok(())
    }
}

/// Everything a forward pass produces, for inspection and tests.
pub struct ForwardTrace<'t> {
    /// `N x 3`, millimetres, root-relative.
    pub pose3d: Var<'t>,
    pub x_jc: Var<'t>,
    pub x_bc: Var<'t>,
    /// Bone-GCN output used by fusion.
    pub x_b: Var<'t>,
    /// Encoder input.
    pub fused: Var<'t>,
    /// Encoder output, the regression head's input.
    pub encoded: Var<'t>,
    pub scores: JointScores,
    pub seeds: Vec<usize>,
    pub cross_attention: Vec<Vec<Matrix>>,
    pub encoder_attention: Vec<Vec<Matrix>>,
}

#[derive(Debug, Clone)]
pub struct PoseGrafModel {
    config: ModelConfig,
    topology: SkeletonTopology,
    params: ParamSet,
    embed: InputEmbeddings,
    joint_gcn: Vec<JointGcnLayer>,
    bone_gcn: Vec<BoneGcnLayer>,
    cross: CrossAttentionStack,
    encoder: Vec<EncoderLayer>,
    head_w: ParamId,
    head_b: ParamId,
    bones: BoneGraph,
    joint_norm_adj: Matrix,
    bone_norm_adj: Matrix,
    distance_bias: DistanceBias,
}

impl PoseGrafModel {
    /// Builds the network and draws its parameters from `seed`.
    pub fn new(config: ModelConfig, topology: SkeletonTopology, seed: u64) -> Result<Self> {
        config.validate()?;
        if topology.num_joints() != config.num_joints {
            return Err(Error::Config(format!(
                "config has {} joints, topology {}",
                config.num_joints,
                topology.num_joints()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = config.dim;

        let embed = InputEmbeddings::new(&mut params, d, &mut rng);
        let joint_gcn = (0..config.gcn_depth)
            .map(|l| JointGcnLayer::new(&mut params, &format!("joint_gcn.{l}"), d, &mut rng))
            .collect();
        let bone_gcn = if config.enable_bone_gcn {
            (0..config.gcn_depth)
                .map(|l| {
                    BoneGcnLayer::new(
                        &mut params,
                        &format!("bone_gcn.{l}"),
                        d,
                        config.combine_mode,
                        &mut rng,
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        let cross = CrossAttentionStack::new(
            &mut params,
            config.cross_layers,
            d,
            config.heads,
            config.layer_norm,
            &mut rng,
        );
        let encoder = (0..config.layers)
            .map(|l| {
                EncoderLayer::new(&mut params, &format!("encoder.{l}"), d, config.ffn_width, &mut rng)
            })
            .collect();
        let head_w = params.add_uniform("head.weight", d, 3, d, &mut rng);
        let head_b = params.add_uniform("head.bias", 1, 3, d, &mut rng);

        let bones = BoneGraph::new(&topology);
        let joint_norm_adj = normalized_adjacency(&topology.joint_adjacency(), true)?;
        let bone_norm_adj = normalized_adjacency(bones.adjacency(), true)?;
        let distance_bias = match config.distance_matrix {
            DistanceKind::Hops => distance_rescale(&hop_distance_matrix(&topology), config.w),
            DistanceKind::Binary => rescale_matrix(&topology.joint_adjacency(), config.w),
        };

        Ok(PoseGrafModel {
            config,
            topology,
            params,
            embed,
            joint_gcn,
            bone_gcn,
            cross,
            encoder,
            head_w,
            head_b,
            bones,
            joint_norm_adj,
            bone_norm_adj,
            distance_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn embeddings(&self) -> &InputEmbeddings {
        &self.embed
    }

    pub fn distance_bias(&self) -> &DistanceBias {
        &self.distance_bias
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        p: &Bound<'t>,
        pose2d: &Matrix,
    ) -> Result<ForwardTrace<'t>> {
        let cfg = &self.config;
        let n = self.topology.num_joints();
        let m = self.topology.num_bones();
        if !pose2d.is_finite() {
            return Err(Error::Input("non-finite 2D keypoints".into()));
        }
        let joints = normalize_pose2d(pose2d, &self.topology, cfg.image_size_px)?;
        let dirs = bone_directions(&joints, &self.bones)?;

        let (mut x_j, bone_tokens) = self.embed.forward(
            tape.constant(joints),
            tape.constant(dirs.directions.clone()),
            p,
        )?;
        let adj_j = tape.constant(self.joint_norm_adj.clone());
        for layer in &self.joint_gcn {
            x_j = layer.forward(x_j, adj_j, p)?;
        }

        let x_b = if cfg.enable_bone_gcn {
            let weights = angle_weights(&dirs, &self.bones)?;
            let norm_w = tape.constant(normalized_adjacency(&weights.weights, true)?);
            let norm_a = tape.constant(self.bone_norm_adj.clone());
            let mut x_b = bone_tokens;
            for layer in &self.bone_gcn {
                x_b = layer.forward(x_b, norm_w, norm_a, p)?;
            }
            x_b
        } else {
            tape.constant(Matrix::zeros(m, cfg.dim))
        };

        let tokens = tape.concat(&[x_j, x_b], 0)?;
        let mut ema = EmaState::new(cfg.beta);
        let cross = self.cross.forward(tokens, n, p, &mut ema)?;

        let seeds = select_seeds(cfg.fusion_mode, &cross.scores, FusionConfig { mu: cfg.mu }, n)?;
        let fused = match cfg.fusion_mode {
            FusionMode::Off => cross.joints,
            _ => fuse(cross.joints, x_b, &seeds, &self.topology)?,
        };

        let bias = tape.constant(self.distance_bias.a_hat.clone());
        let mut x = fused;
        let mut encoder_attention = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (out, w) = layer.forward(x, bias, cross.joints, cfg.heads, cfg.layer_norm, p)?;
            encoder_attention.push(w);
            x = out;
        }
        let pose3d = x
            .matmul(p[self.head_w])?
            .add_row(p[self.head_b])?
            .scale(cfg.output_scale_mm);

        Ok(ForwardTrace {
            pose3d,
            x_jc: cross.joints,
            x_bc: cross.bones,
            x_b,
            fused,
            encoded: x,
            scores: cross.scores,
            seeds,
            cross_attention: cross.attention,
            encoder_attention,
        })
    }

    /// Inference without gradient bookkeeping. Returns `N x 3` millimetres.
    pub fn predict(&self, pose2d: &Matrix) -> Result<Matrix> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        Ok(self.forward(&tape, &p, pose2d)?.pose3d.value())
    }
}

/// Mean Euclidean joint error over a batch, `(1/(Z N)) sum ||Y - Ŷ||`, with
/// `sqrt(x + 1e-12)` for the norm.
pub fn loss_mpjpe<'t>(tape: &'t Tape, preds: &[Var<'t>], gts: &[Matrix]) -> Result<Var<'t>> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::shape(
            "loss_mpjpe",
            format!("{} predictions, {} targets", preds.len(), gts.len()),
        ));
    }
    let mut norms = Vec::with_capacity(preds.len());
    for (pred, gt) in preds.iter().zip(gts) {
        if pred.shape() != gt.shape() || gt.cols() != 3 {
            return Err(Error::shape(
                "loss_mpjpe",
                format!("prediction {:?}, target {:?}", pred.shape(), gt.shape()),
            ));
        }
        let diff = pred.sub(tape.constant(gt.clone()))?;
        norms.push(diff.mul(diff)?.sum_cols().sqrt_eps());
    }
    let all = if norms.len() == 1 {
        norms[0]
    } else {
        tape.concat(&norms, 0)?
    };
    Ok(all.mean())
}
