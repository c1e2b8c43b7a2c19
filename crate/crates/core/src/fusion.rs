//! Dynamic fusion: pick the top-scoring joints as seeds, rebuild a full joint
//! feature map from each seed by walking the joint tree and accumulating bone
//! features, then sum the maps with a residual.
//!
//! Every reconstruction is linear in `[x_jc; x_b]`, so the differentiable path
//! multiplies the stacked features by a constant `N x (N+M)` operator built
//! from the same traversal.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::attention::JointScores;
use crate::autodiff::{Matrix, Var};
use crate::error::{Error, Result};
use crate::skeleton::SkeletonTopology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Top-mu seeds by score.
    #[default]
    Dynamic,
    /// Every joint is a seed.
    Static,
    /// Encoder consumes the cross-attention joint features directly.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionConfig {
    pub mu: usize,
}

/// Indices of the `mu` largest scores, best first; ties go to the smaller
/// index.
pub fn filter_top_mu(scores: &JointScores, mu: usize) -> Result<Vec<usize>> {
    let s = scores.as_slice();
    if mu > s.len() {
        return Err(Error::Config(format!("mu = {mu} exceeds {} joints", s.len())));
    }
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    idx.truncate(mu);
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborOrder {
    Ascending,
    Descending,
}

/// One tree edge crossed during traversal: `to` is reached from `from`
/// through `bone`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraversalEdge {
    pub from: usize,
    pub to: usize,
    pub bone: usize,
}

/// Breadth-first traversal of the joint tree from `seed`.
pub fn bfs_edges(
    topo: &SkeletonTopology,
    seed: usize,
    order: NeighborOrder,
) -> Result<Vec<TraversalEdge>> {
    let n = topo.num_joints();
    if seed >= n {
        return Err(Error::Input(format!("seed joint {seed} outside 0..{n}")));
    }
    let mut visited = vec![false; n];
    visited[seed] = true;
    let mut queue = VecDeque::from([seed]);
    let mut edges = Vec::with_capacity(n - 1);
    while let Some(u) = queue.pop_front() {
        let nbrs = topo.neighbors(u);
        let mut visit = |v: usize| {
            if !visited[v] {
                visited[v] = true;
                let bone = topo.bone_between(u, v).expect("tree neighbours share a bone");
                edges.push(TraversalEdge { from: u, to: v, bone });
                queue.push_back(v);
            }
        };
        match order {
            NeighborOrder::Ascending => nbrs.iter().copied().for_each(&mut visit),
            NeighborOrder::Descending => nbrs.iter().rev().copied().for_each(&mut visit),
        }
    }
    Ok(edges)
}

/// `J[seed] = seed_feat`, then `J[v] = J[u] + x_b[bone(u, v)]` along the
/// traversal.
pub fn bfs_reconstruct(
    topo: &SkeletonTopology,
    seed: usize,
    seed_feat: &[f64],
    x_b: &Matrix,
) -> Result<Matrix> {
    bfs_reconstruct_ordered(topo, seed, seed_feat, x_b, NeighborOrder::Ascending)
}

pub fn bfs_reconstruct_ordered(
    topo: &SkeletonTopology,
    seed: usize,
    seed_feat: &[f64],
    x_b: &Matrix,
    order: NeighborOrder,
) -> Result<Matrix> {
    let d = seed_feat.len();
    if x_b.shape() != (topo.num_bones(), d) {
        return Err(Error::shape(
            "bfs_reconstruct",
            format!(
                "bone features {:?}, expected {}x{d}",
                x_b.shape(),
                topo.num_bones()
            ),
        ));
    }
    let edges = bfs_edges(topo, seed, order)?;
    let mut out = Matrix::zeros(topo.num_joints(), d);
    out.row_mut(seed).copy_from_slice(seed_feat);
    for e in edges {
        let row: Vec<f64> = out
            .row(e.from)
            .iter()
            .zip(x_b.row(e.bone))
            .map(|(a, b)| a + b)
            .collect();
        out.row_mut(e.to).copy_from_slice(&row);
    }
    Ok(out)
}

/// Linear map `R` with `R [x_jc; x_b] = bfs_reconstruct(seed, x_jc[seed], x_b)`.
pub fn reconstruction_operator(topo: &SkeletonTopology, seed: usize) -> Result<Matrix> {
    let n = topo.num_joints();
    let width = n + topo.num_bones();
    let mut op = Matrix::zeros(n, width);
    op.set(seed, seed, 1.0);
    for e in bfs_edges(topo, seed, NeighborOrder::Ascending)? {
        let mut row = op.row(e.from).to_vec();
        row[n + e.bone] += 1.0;
        op.row_mut(e.to).copy_from_slice(&row);
    }
    Ok(op)
}

/// Residual plus one reconstruction per seed, as a single `N x (N+M)` map.
pub fn fusion_operator(topo: &SkeletonTopology, seeds: &[usize]) -> Result<Matrix> {
    let n = topo.num_joints();
    let mut op = Matrix::zeros(n, n + topo.num_bones());
    for i in 0..n {
        op.set(i, i, 1.0);
    }
    for &s in seeds {
        op.axpy(1.0, &reconstruction_operator(topo, s)?);
    }
    Ok(op)
}

/// Seeds used by `mode`: top-mu for dynamic, every joint for static.
pub fn select_seeds(
    mode: FusionMode,
    scores: &JointScores,
    cfg: FusionConfig,
    num_joints: usize,
) -> Result<Vec<usize>> {
    match mode {
        FusionMode::Dynamic => filter_top_mu(scores, cfg.mu),
        FusionMode::Static => Ok((0..num_joints).collect()),
        FusionMode::Off => Ok(Vec::new()),
    }
}

/// Value-level dynamic fusion: `sum_seeds bfs_reconstruct(...) + x_jc`.
pub fn dynamic_fusion(
    x_jc: &Matrix,
    x_b: &Matrix,
    scores: &JointScores,
    topo: &SkeletonTopology,
    cfg: FusionConfig,
) -> Result<Matrix> {
    if x_jc.rows() != topo.num_joints() || scores.len() != topo.num_joints() {
        return Err(Error::shape(
            "dynamic_fusion",
            format!("joint features {:?} for {} joints", x_jc.shape(), topo.num_joints()),
        ));
    }
    let mut out = x_jc.clone();
    for seed in filter_top_mu(scores, cfg.mu)? {
        out.axpy(1.0, &bfs_reconstruct(topo, seed, x_jc.row(seed), x_b)?);
    }
    Ok(out)
}

/// Differentiable fusion for a fixed seed list.
pub fn fuse<'t>(
    x_jc: Var<'t>,
    x_b: Var<'t>,
    seeds: &[usize],
    topo: &SkeletonTopology,
) -> Result<Var<'t>> {
    let tape = x_jc.tape();
    let op = tape.constant(fusion_operator(topo, seeds)?);
    let stacked = tape.concat(&[x_jc, x_b], 0)?;
    op.matmul(stacked)
}
