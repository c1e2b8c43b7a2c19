//! Transformer encoder whose attention logits are rectified and rescaled by a
//! function of joint-graph distance.

use rand::Rng;

use crate::attention::{multi_head_attention, HeadProjections};
use crate::autodiff::{Bound, Matrix, ParamId, ParamSet, Var};
use crate::error::{Error, Result};
use crate::skeleton::DistanceMatrix;

/// `(1 + e^w) / (1 + e^(w - d))` for every joint pair at distance `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBias {
    pub a_hat: Matrix,
    pub w: f64,
}

pub fn rescale_distance(hop: f64, w: f64) -> f64 {
    (1.0 + w.exp()) / (1.0 + (w - hop).exp())
}

pub fn distance_rescale(hops: &DistanceMatrix, w: f64) -> DistanceBias {
    let n = hops.len();
    DistanceBias {
        a_hat: Matrix::from_fn(n, n, |i, j| rescale_distance(hops.get(i, j) as f64, w)),
        w,
    }
}

/// Same rescaling applied to an arbitrary (e.g. binary adjacency) matrix.
pub fn rescale_matrix(m: &Matrix, w: f64) -> DistanceBias {
    DistanceBias {
        a_hat: m.map(|d| rescale_distance(d, w)),
        w,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayer {
    pub proj: HeadProjections,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

impl EncoderLayer {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize, ffn: usize, rng: &mut impl Rng) -> Self {
        EncoderLayer {
            proj: HeadProjections::new(params, name, dim, rng),
            w1: params.add_uniform(format!("{name}.w1"), dim, ffn, dim, rng),
            b1: params.add_uniform(format!("{name}.b1"), 1, ffn, dim, rng),
            w2: params.add_uniform(format!("{name}.w2"), ffn, ffn, ffn, rng),
            b2: params.add_uniform(format!("{name}.b2"), 1, ffn, ffn, rng),
            w3: params.add_uniform(format!("{name}.w3"), ffn, dim, ffn, rng),
            b3: params.add_uniform(format!("{name}.b3"), 1, dim, ffn, rng),
        }
    }

    /// Returns the layer output and each head's attention weights.
    ///
    /// `X_mid = softmax(ReLU(Q K^T) ⊙ Â / sqrt(d_g)) V W_o + x_jc`, then
    /// `X_mid + FFN(X_mid)` with a three-matrix GELU feed-forward.
    pub fn forward<'t>(
        &self,
        x_in: Var<'t>,
        bias: Var<'t>,
        x_jc: Var<'t>,
        heads: usize,
        layer_norm: bool,
        p: &Bound<'t>,
    ) -> Result<(Var<'t>, Vec<Matrix>)> {
        let (n, dim) = x_in.shape();
        if bias.shape() != (n, n) || x_jc.shape() != (n, dim) {
            return Err(Error::shape(
                "encoder_layer",
                format!(
                    "x {:?}, bias {:?}, x_jc {:?}",
                    (n, dim),
                    bias.shape(),
                    x_jc.shape()
                ),
            ));
        }
        let scale = 1.0 / ((dim / heads.max(1)) as f64).sqrt();
        let h = if layer_norm { x_in.layer_norm_rows() } else { x_in };
        let (att, weights) = multi_head_attention(h, &self.proj, heads, p, |logits| {
            Ok(logits.relu().mul(bias)?.scale(scale))
        })?;
        let mid = att.add(x_jc)?;
        let h = if layer_norm { mid.layer_norm_rows() } else { mid };
        let ff = h
            .matmul(p[self.w1])?
            .add_row(p[self.b1])?
            .gelu()
            .matmul(p[self.w2])?
            .add_row(p[self.b2])?
            .gelu()
            .matmul(p[self.w3])?
            .add_row(p[self.b3])?
            .gelu();
        Ok((mid.add(ff)?, weights))
    }
}
