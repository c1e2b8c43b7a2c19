//! Brute-force oracles and random generators shared by the integration tests.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use posegraf::{Matrix, SkeletonTopology};

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// A uniformly shuffled labelling of a random recursive tree, so parents can
/// carry larger indices than their children.
pub fn random_tree(n: usize, rng: &mut impl Rng) -> SkeletonTopology {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut parents = vec![None; n];
    for k in 1..n {
        parents[order[k]] = Some(order[rng.random_range(0..k)]);
    }
    SkeletonTopology::new(parents, Vec::new(), Vec::new()).unwrap()
}

/// The 17-joint layout plus 100 random trees with 2 to 10 joints.
pub fn oracle_topologies(rng: &mut impl Rng) -> Vec<SkeletonTopology> {
    let mut out = vec![SkeletonTopology::human36m()];
    out.extend((0..100).map(|_| {
        let n = rng.random_range(2..=10);
        random_tree(n, rng)
    }));
    out
}

pub fn adjacency_from_parents(topo: &SkeletonTopology) -> DMatrix<f64> {
    let n = topo.num_joints();
    let mut a = DMatrix::zeros(n, n);
    for (j, p) in topo.parents().iter().enumerate() {
        if let Some(p) = *p {
            a[(j, p)] = 1.0;
            a[(p, j)] = 1.0;
        }
    }
    a
}

/// Explicit `D^-1/2 Ã D^-1/2` with diagonal matrices.
pub fn dense_normalize(adj: &DMatrix<f64>, self_loops: bool) -> DMatrix<f64> {
    let n = adj.nrows();
    let a = if self_loops {
        adj + DMatrix::identity(n, n)
    } else {
        adj.clone()
    };
    let d = DMatrix::from_diagonal(&a.column_sum().map(|s| if s > 0.0 { s.powf(-0.5) } else { 0.0 }));
    &d * a * &d
}

pub fn floyd_warshall(topo: &SkeletonTopology) -> Vec<Vec<f64>> {
    let n = topo.num_joints();
    let a = adjacency_from_parents(topo);
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                d[i][j] = 0.0;
            } else if a[(i, j)] > 0.0 {
                d[i][j] = 1.0;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

fn ancestors(topo: &SkeletonTopology, mut j: usize) -> Vec<usize> {
    let mut out = vec![j];
    while let Some(p) = topo.parent(j) {
        out.push(p);
        j = p;
    }
    out
}

/// Bone index of a non-root joint: its rank among the non-root joints.
fn bone_index(topo: &SkeletonTopology, child: usize) -> usize {
    (0..child).filter(|&j| topo.parent(j).is_some()).count()
}

/// Bones on the unique tree path between two joints.
pub fn path_bones(topo: &SkeletonTopology, a: usize, b: usize) -> Vec<usize> {
    let up_a = ancestors(topo, a);
    let up_b = ancestors(topo, b);
    let lca = *up_a.iter().find(|j| up_b.contains(j)).unwrap();
    up_a.iter()
        .take_while(|&&j| j != lca)
        .chain(up_b.iter().take_while(|&&j| j != lca))
        .map(|&j| bone_index(topo, j))
        .collect()
}

/// `J[v] = seed_feat + sum of x_b over the bones between seed and v`.
pub fn path_sum_reconstruct(topo: &SkeletonTopology, seed: usize, seed_feat: &[f64], x_b: &Matrix) -> Matrix {
    Matrix::from_fn(topo.num_joints(), seed_feat.len(), |v, c| {
        seed_feat[c] + path_bones(topo, seed, v).iter().map(|&b| x_b.get(b, c)).sum::<f64>()
    })
}

pub fn max_abs_diff_na(a: &Matrix, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut worst: f64 = 0.0;
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            worst = worst.max((a.get(r, c) - b[(r, c)]).abs());
        }
    }
    worst
}

/// `R p + t` for every row of an `N x 3` pose.
pub fn rigid_transform(pose: &Matrix, rot: &nalgebra::Rotation3<f64>, t: [f64; 3], scale: f64) -> Matrix {
    let mut out = Matrix::zeros(pose.rows(), 3);
    for r in 0..pose.rows() {
        let p = nalgebra::Vector3::new(pose.get(r, 0), pose.get(r, 1), pose.get(r, 2));
        let q = rot * p * scale;
        for c in 0..3 {
            out.set(r, c, q[c] + t[c]);
        }
    }
    out
}

pub fn random_rotation(rng: &mut impl Rng) -> nalgebra::Rotation3<f64> {
    let axis = nalgebra::Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = nalgebra::Unit::new_normalize(axis + nalgebra::Vector3::new(1e-3, 0.0, 0.0));
    nalgebra::Rotation3::from_axis_angle(&axis, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
}
