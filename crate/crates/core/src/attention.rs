//! Multi-head attention over the joint + bone token sequence, with an
//! exponential moving average of the joint-query / bone-key attention blocks
//! across layers and per-joint correlation scores.

use rand::Rng;

use crate::autodiff::{Bound, Matrix, ParamId, ParamSet, Var};
use crate::error::{Error, Result};

/// EMA coefficient for attention blocks across layers.
pub const EMA_BETA: f64 = 0.99;

/// Query/key/value/output projections shared by both attention flavours.
#[derive(Debug, Clone, Copy)]
pub struct HeadProjections {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl HeadProjections {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        HeadProjections {
            wq: params.add_uniform(format!("{name}.wq"), dim, dim, dim, rng),
            wk: params.add_uniform(format!("{name}.wk"), dim, dim, dim, rng),
            wv: params.add_uniform(format!("{name}.wv"), dim, dim, dim, rng),
            wo: params.add_uniform(format!("{name}.wo"), dim, dim, dim, rng),
        }
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.wq, self.wk, self.wv, self.wo]
    }
}

/// Runs `heads` attention heads over `x`. `logits` maps one head's raw
/// `Q K^T` to pre-softmax scores. Returns the projected output and each
/// head's softmax weights.
pub fn multi_head_attention<'t>(
    x: Var<'t>,
    proj: &HeadProjections,
    heads: usize,
    p: &Bound<'t>,
    mut logits: impl FnMut(Var<'t>) -> Result<Var<'t>>,
) -> Result<(Var<'t>, Vec<Matrix>)> {
    let (_, dim) = x.shape();
    if heads == 0 || dim % heads != 0 {
        return Err(Error::Config(format!("dimension {dim} not divisible by {heads} heads")));
    }
    let dh = dim / heads;
    let q = x.matmul(p[proj.wq])?;
    let k = x.matmul(p[proj.wk])?;
    let v = x.matmul(p[proj.wv])?;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice_cols(h * dh, dh)?;
        let kh = k.slice_cols(h * dh, dh)?;
        let vh = v.slice_cols(h * dh, dh)?;
        let att = logits(qh.matmul(kh.t())?)?.softmax_rows();
        weights.push(att.value());
        outs.push(att.matmul(vh)?);
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        x.tape().concat(&outs, 1)?
    };
    Ok((cat.matmul(p[proj.wo])?, weights))
}

/// One token-mixing layer: attention and a GELU feed-forward of width `2D`,
/// each added back to its input.
#[derive(Debug, Clone, Copy)]
pub struct CrossAttentionLayer {
    pub proj: HeadProjections,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

impl CrossAttentionLayer {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        let hidden = 2 * dim;
        CrossAttentionLayer {
            proj: HeadProjections::new(params, name, dim, rng),
            ffn_w1: params.add_uniform(format!("{name}.ffn_w1"), dim, hidden, dim, rng),
            ffn_b1: params.add_uniform(format!("{name}.ffn_b1"), 1, hidden, dim, rng),
            ffn_w2: params.add_uniform(format!("{name}.ffn_w2"), hidden, dim, hidden, rng),
            ffn_b2: params.add_uniform(format!("{name}.ffn_b2"), 1, dim, hidden, rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossAttentionStack {
    pub layers: Vec<CrossAttentionLayer>,
    pub heads: usize,
    pub layer_norm: bool,
}

/// Per-head `M x N` moving average of bone-key / joint-query attention.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub beta: f64,
    blocks: Option<Vec<Matrix>>,
}

impl EmaState {
    pub fn new(beta: f64) -> Self {
        EmaState { beta, blocks: None }
    }

    pub fn is_initialized(&self) -> bool {
        self.blocks.is_some()
    }

    pub fn blocks(&self) -> Option<&[Matrix]> {
        self.blocks.as_deref()
    }

    pub fn reset(&mut self) {
        self.blocks = None;
    }

    /// First call stores `blocks`; later calls blend
    /// `beta * previous + (1 - beta) * blocks`.
    pub fn update(&mut self, blocks: Vec<Matrix>) -> Result<()> {
        match &mut self.blocks {
            None => self.blocks = Some(blocks),
            Some(prev) => {
                if prev.len() != blocks.len()
                    || prev.iter().zip(&blocks).any(|(a, b)| a.shape() != b.shape())
                {
                    return Err(Error::shape(
                        "ema_update",
                        format!(
                            "state holds {} blocks of {:?}, update has {} of {:?}",
                            prev.len(),
                            prev.first().map(Matrix::shape),
                            blocks.len(),
                            blocks.first().map(Matrix::shape)
                        ),
                    ));
                }
                let beta = self.beta;
                for (a, b) in prev.iter_mut().zip(&blocks) {
                    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x = beta * *x + (1.0 - beta) * y;
                    }
                }
            }
        }
        Ok(())
    }

    /// `s_i = 1/(H M) * sum_h sum_p A_h[p][i]`; zeros when no layer ran.
    pub fn scores(&self, num_joints: usize) -> JointScores {
        let Some(blocks) = &self.blocks else {
            return JointScores(vec![0.0; num_joints]);
        };
        let heads = blocks.len();
        let bones = blocks.first().map_or(0, Matrix::rows);
        let mut s = vec![0.0; num_joints];
        if heads == 0 || bones == 0 {
            return JointScores(s);
        }
        for b in blocks {
            for p in 0..bones {
                for (si, v) in s.iter_mut().zip(b.row(p)) {
                    *si += v;
                }
            }
        }
        let norm = (heads * bones) as f64;
        JointScores(s.into_iter().map(|v| v / norm).collect())
    }
}

/// Per-joint correlation with the bone tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct JointScores(pub Vec<f64>);

impl JointScores {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Extracts the bone-key / joint-query block of a `(N+M) x (N+M)` attention
/// matrix as `M x N`: entry `(p, i)` is the weight joint `i` puts on bone `p`.
pub fn joint_bone_block(weights: &Matrix, num_joints: usize) -> Matrix {
    let bones = weights.cols() - num_joints;
    Matrix::from_fn(bones, num_joints, |p, i| weights.get(i, num_joints + p))
}

pub struct CrossAttentionOutput<'t> {
    /// `N x D`.
    pub joints: Var<'t>,
    /// `M x D`.
    pub bones: Var<'t>,
    pub scores: JointScores,
    /// Softmax weights, `[layer][head]`.
    pub attention: Vec<Vec<Matrix>>,
}

impl CrossAttentionStack {
    pub fn new(
        params: &mut ParamSet,
        depth: usize,
        dim: usize,
        heads: usize,
        layer_norm: bool,
        rng: &mut impl Rng,
    ) -> Self {
        CrossAttentionStack {
            layers: (0..depth)
                .map(|k| CrossAttentionLayer::new(params, &format!("cross.{k}"), dim, rng))
                .collect(),
            heads,
            layer_norm,
        }
    }

    /// `tokens` holds the `N` joint rows followed by the `M` bone rows.
    /// `ema` is reset and then updated once per layer.
    pub fn forward<'t>(
        &self,
        tokens: Var<'t>,
        num_joints: usize,
        p: &Bound<'t>,
        ema: &mut EmaState,
    ) -> Result<CrossAttentionOutput<'t>> {
        let (total, dim) = tokens.shape();
        if num_joints > total {
            return Err(Error::shape(
                "cross_attention",
                format!("{num_joints} joints in {total} tokens"),
            ));
        }
        let scale = 1.0 / ((dim / self.heads.max(1)) as f64).sqrt();
        ema.reset();
        let mut x = tokens;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = if self.layer_norm { x.layer_norm_rows() } else { x };
            let (att, weights) =
                multi_head_attention(h, &layer.proj, self.heads, p, |l| Ok(l.scale(scale)))?;
            ema.update(weights.iter().map(|w| joint_bone_block(w, num_joints)).collect())?;
            attention.push(weights);
            x = x.add(att)?;
            let h = if self.layer_norm { x.layer_norm_rows() } else { x };
            let ff = h
                .matmul(p[layer.ffn_w1])?
                .add_row(p[layer.ffn_b1])?
                .gelu()
                .matmul(p[layer.ffn_w2])?
                .add_row(p[layer.ffn_b2])?;
            x = x.add(ff)?;
        }
        let joints = x.slice_rows(0, num_joints)?;
        let bones = x.slice_rows(num_joints, total - num_joints)?;
        Ok(CrossAttentionOutput {
            joints,
            bones,
            scores: ema.scores(num_joints),
            attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ema_initializes_then_blends() {
        let mut ema = EmaState::new(EMA_BETA);
        ema.update(vec![Matrix::scalar(1.0)]).unwrap();
        assert_eq!(ema.blocks().unwrap()[0].get(0, 0), 1.0);
        ema.update(vec![Matrix::scalar(0.0)]).unwrap();
        assert!((ema.blocks().unwrap()[0].get(0, 0) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn ema_constant_is_fixed_point() {
        let block = Matrix::from_fn(3, 4, |r, c| 0.05 * (r + c) as f64);
        let mut ema = EmaState::new(EMA_BETA);
        for _ in 0..2 {
            ema.update(vec![block.clone()]).unwrap();
        }
        assert!(ema.blocks().unwrap()[0].max_abs_diff(&block) < 1e-15);
    }

    #[test]
    fn ema_shape_conflict() {
        let mut ema = EmaState::new(EMA_BETA);
        ema.update(vec![Matrix::zeros(2, 3)]).unwrap();
        assert!(ema.update(vec![Matrix::zeros(3, 2)]).is_err());
        assert!(ema.update(vec![Matrix::zeros(2, 3), Matrix::zeros(2, 3)]).is_err());
    }

    #[test]
    fn geometric_decay_matches_closed_form() {
        let mut ema = EmaState::new(EMA_BETA);
        ema.update(vec![Matrix::scalar(1.0)]).unwrap();
        for k in 2..=10 {
            ema.update(vec![Matrix::scalar(0.0)]).unwrap();
            let want = EMA_BETA.powi(k - 1);
            assert!((ema.blocks().unwrap()[0].get(0, 0) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn block_orientation() {
        // 2 joints, 1 bone: weight joint-query i puts on bone-key 0.
        let w = Matrix::from_rows(&[[0.5, 0.2, 0.3], [0.1, 0.1, 0.8], [0.3, 0.3, 0.4]]).unwrap();
        let b = joint_bone_block(&w, 2);
        assert_eq!(b.shape(), (1, 2));
        assert_eq!(b.row(0), &[0.3, 0.8]);
    }

    #[test]
    fn zero_projections_give_uniform_scores() {
        let (n, m, d, heads) = (5, 4, 8, 2);
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stack = CrossAttentionStack::new(&mut params, 2, d, heads, false, &mut rng);
        for layer in &stack.layers {
            for id in layer.proj.ids() {
                *params.get_mut(id) = Matrix::zeros(d, d);
            }
        }
        let tape = Tape::new();
        let p = params.bind(&tape);
        let tokens = tape.constant(Matrix::from_fn(n + m, d, |r, c| (r as f64).sin() + c as f64));
        let mut ema = EmaState::new(EMA_BETA);
        let out = stack.forward(tokens, n, &p, &mut ema).unwrap();
        let want = 1.0 / (n + m) as f64;
        for s in out.scores.as_slice() {
            assert!((s - want).abs() < 1e-12);
        }
        assert_eq!(out.joints.shape(), (n, d));
        assert_eq!(out.bones.shape(), (m, d));
    }
}
