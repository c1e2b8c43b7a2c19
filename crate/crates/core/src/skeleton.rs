//! Joint tree, bone graph, per-pose bone geometry and mirror symmetry.
//!
//! Bones are indexed by child joint: bone `b` joins the `b`-th non-root joint
//! (in ascending joint order) to its parent. For a topology rooted at joint 0
//! that is simply `bone = child - 1`.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Bones shorter than this (in input units) have no direction.
pub const DEGENERATE_BONE_NORM: f64 = 1e-8;

/// Joint names of the 17-joint Human3.6M layout.
pub const H36M_JOINT_NAMES: [&str; 17] = [
    "Hip", "RHip", "RKnee", "RFoot", "LHip", "LKnee", "LFoot", "Spine", "Thorax", "Neck",
    "Head", "LShoulder", "LElbow", "LWrist", "RShoulder", "RElbow", "RWrist",
];

/// Parent of each joint in the 17-joint Human3.6M layout; the hip is the root.
pub const H36M_PARENTS: [Option<usize>; 17] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(0),
    Some(7),
    Some(8),
    Some(9),
    Some(8),
    Some(11),
    Some(12),
    Some(8),
    Some(14),
    Some(15),
];

/// (left, right) joint pairs swapped by a horizontal flip.
pub const H36M_MIRROR_PAIRS: [(usize, usize); 6] =
    [(4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16)];

/// On-disk topology description (JSON). `parents` uses `null` for the root.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub num_joints: usize,
    pub parents: Vec<Option<usize>>,
    #[serde(default)]
    pub mirror_pairs: Vec<[usize; 2]>,
    #[serde(default)]
    pub names: Vec<String>,
    /// Optional per-bone unit directions of a rest pose, used by the
    /// synthetic generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_directions: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyFile", into = "TopologyFile")]
pub struct SkeletonTopology {
    parents: Vec<Option<usize>>,
    mirror_pairs: Vec<(usize, usize)>,
    joint_names: Vec<String>,
    root: usize,
    neighbors: Vec<Vec<usize>>,
    bone_of_child: Vec<Option<usize>>,
}

impl TryFrom<TopologyFile> for SkeletonTopology {
    type Error = Error;

    fn try_from(raw: TopologyFile) -> Result<Self> {
        if raw.parents.len() != raw.num_joints {
            return Err(Error::Topology(format!(
                "num_joints is {} but {} parents listed",
                raw.num_joints,
                raw.parents.len()
            )));
        }
        SkeletonTopology::new(
            raw.parents,
            raw.mirror_pairs.iter().map(|p| (p[0], p[1])).collect(),
            raw.names,
        )
    }
}

impl From<SkeletonTopology> for TopologyFile {
    fn from(t: SkeletonTopology) -> Self {
        TopologyFile {
            num_joints: t.num_joints(),
            mirror_pairs: t.mirror_pairs.iter().map(|&(l, r)| [l, r]).collect(),
            names: t.joint_names,
            parents: t.parents,
            rest_directions: None,
        }
    }
}

impl SkeletonTopology {
    /// Validates a parent list and mirror pairs. Empty `names` get generated
    /// labels `j0, j1, ...`.
    pub fn new(
        parents: Vec<Option<usize>>,
        mirror_pairs: Vec<(usize, usize)>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(Error::Topology("no joints".into()));
        }
        let roots: Vec<usize> = (0..n).filter(|&j| parents[j].is_none()).collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(Error::Topology("no root joint".into())),
            many => return Err(Error::Topology(format!("multiple roots: {many:?}"))),
        };
        for (j, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return Err(Error::Topology(format!(
                        "joint {j} has parent {p} outside 0..{n}"
                    )));
                }
            }
        }
        // Every joint must reach the root within n steps.
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parents[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(Error::Topology(format!("cycle through joint {start}")));
                }
            }
        }

        let mut seen = vec![false; n];
        for &(l, r) in &mirror_pairs {
            if l >= n || r >= n {
                return Err(Error::Topology(format!(
                    "mirror pair ({l}, {r}) references a missing joint"
                )));
            }
            if l == r {
                return Err(Error::Topology(format!("mirror pair ({l}, {r}) is not a pair")));
            }
            for j in [l, r] {
                if std::mem::replace(&mut seen[j], true) {
                    return Err(Error::Topology(format!(
                        "joint {j} appears in more than one mirror pair"
                    )));
                }
            }
        }

        let joint_names = if names.is_empty() {
            (0..n).map(|j| format!("j{j}")).collect()
        } else if names.len() == n {
            names
        } else {
            return Err(Error::Topology(format!(
                "{} names for {n} joints",
                names.len()
            )));
        };

        let mut neighbors = vec![Vec::new(); n];
        for (j, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                neighbors[j].push(p);
                neighbors[p].push(j);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let mut bone_of_child = vec![None; n];
        let mut next = 0;
        for (j, p) in parents.iter().enumerate() {
            if p.is_some() {
                bone_of_child[j] = Some(next);
                next += 1;
            }
        }

        Ok(SkeletonTopology {
            parents,
            mirror_pairs,
            joint_names,
            root,
            neighbors,
            bone_of_child,
        })
    }

    /// The 17-joint Human3.6M skeleton (16 bones, 6 mirror pairs).
    pub fn human36m() -> Self {
        SkeletonTopology::new(
            H36M_PARENTS.to_vec(),
            H36M_MIRROR_PAIRS.to_vec(),
            H36M_JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        )
        .expect("built-in topology is valid")
    }

    /// A path `0 - 1 - ... - (n-1)` rooted at 0, without mirror pairs.
    pub fn chain(n: usize) -> Result<Self> {
        let parents = (0..n).map(|j| j.checked_sub(1)).collect();
        SkeletonTopology::new(parents, Vec::new(), Vec::new())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: TopologyFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        SkeletonTopology::try_from(raw)
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn num_bones(&self) -> usize {
        self.parents.len() - 1
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn mirror_pairs(&self) -> &[(usize, usize)] {
        &self.mirror_pairs
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    /// Tree neighbours of `joint` in ascending index order.
    pub fn neighbors(&self, joint: usize) -> &[usize] {
        &self.neighbors[joint]
    }

    /// Bone whose child endpoint is `joint` (none for the root).
    pub fn bone_of_child(&self, joint: usize) -> Option<usize> {
        self.bone_of_child[joint]
    }

    /// Bone joining two adjacent joints, in either order.
    pub fn bone_between(&self, a: usize, b: usize) -> Option<usize> {
        if self.parents[a] == Some(b) {
            self.bone_of_child[a]
        } else if self.parents[b] == Some(a) {
            self.bone_of_child[b]
        } else {
            None
        }
    }

    /// Joints ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.num_joints());
        let mut queue = VecDeque::from([self.root]);
        while let Some(j) = queue.pop_front() {
            order.push(j);
            for &c in &self.neighbors[j] {
                if self.parents[c] == Some(j) {
                    queue.push_back(c);
                }
            }
        }
        order
    }

    /// Binary joint adjacency `A_J` (symmetric, zero diagonal).
    pub fn joint_adjacency(&self) -> Matrix {
        let n = self.num_joints();
        let mut a = Matrix::zeros(n, n);
        for (j, p) in self.parents.iter().enumerate() {
            if let Some(p) = *p {
                a.set(j, p, 1.0);
                a.set(p, j, 1.0);
            }
        }
        a
    }

    /// `perm[i]` is the joint whose data lands in slot `i` after a flip.
    pub fn mirror_permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.num_joints()).collect();
        for &(l, r) in &self.mirror_pairs {
            perm.swap(l, r);
        }
        perm
    }
}

/// Bones as graph nodes, adjacent when they share a joint.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneGraph {
    /// `(child, parent)` per bone.
    endpoints: Vec<(usize, usize)>,
    adjacency: Matrix,
    shared_joint: BTreeMap<(usize, usize), usize>,
}

impl BoneGraph {
    pub fn new(topo: &SkeletonTopology) -> Self {
        let mut endpoints = Vec::with_capacity(topo.num_bones());
        for j in 0..topo.num_joints() {
            if let Some(p) = topo.parent(j) {
                endpoints.push((j, p));
            }
        }
        let m = endpoints.len();
        let mut adjacency = Matrix::zeros(m, m);
        let mut shared_joint = BTreeMap::new();
        for p in 0..m {
            for q in 0..m {
                if p == q {
                    continue;
                }
                let (a0, a1) = endpoints[p];
                let (b0, b1) = endpoints[q];
                let shared: Vec<usize> = [a0, a1]
                    .into_iter()
                    .filter(|j| *j == b0 || *j == b1)
                    .collect();
                if let [j] = shared.as_slice() {
                    adjacency.set(p, q, 1.0);
                    shared_joint.insert((p, q), *j);
                }
            }
        }
        BoneGraph {
            endpoints,
            adjacency,
            shared_joint,
        }
    }

    pub fn num_bones(&self) -> usize {
        self.endpoints.len()
    }

    pub fn endpoints(&self) -> &[(usize, usize)] {
        &self.endpoints
    }

    /// Binary bone adjacency `A_B`.
    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn shared_joint(&self, p: usize, q: usize) -> Option<usize> {
        self.shared_joint.get(&(p, q)).copied()
    }
}

pub fn build_bone_graph(topo: &SkeletonTopology) -> BoneGraph {
    BoneGraph::new(topo)
}

/// Unit bone directions for one 2D pose.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneDirections {
    pub directions: Matrix,
    pub degenerate: Vec<bool>,
}

/// `(child - parent) / |child - parent|` per bone; zero-length bones give a
/// zero row and are flagged degenerate.
pub fn bone_directions(pose2d: &Matrix, bones: &BoneGraph) -> Result<BoneDirections> {
    let needed = bones
        .endpoints
        .iter()
        .map(|&(c, p)| c.max(p) + 1)
        .max()
        .unwrap_or(0);
    if pose2d.cols() != 2 || pose2d.rows() < needed {
        return Err(Error::shape(
            "bone_directions",
            format!("pose {:?} for {} bones", pose2d.shape(), bones.num_bones()),
        ));
    }
    let m = bones.num_bones();
    let mut directions = Matrix::zeros(m, 2);
    let mut degenerate = vec![false; m];
    for (b, &(child, parent)) in bones.endpoints.iter().enumerate() {
        let dx = pose2d.get(child, 0) - pose2d.get(parent, 0);
        let dy = pose2d.get(child, 1) - pose2d.get(parent, 1);
        let norm = dx.hypot(dy);
        if norm < DEGENERATE_BONE_NORM {
            degenerate[b] = true;
        } else {
            directions.set(b, 0, dx / norm);
            directions.set(b, 1, dy / norm);
        }
    }
    Ok(BoneDirections {
        directions,
        degenerate,
    })
}

/// Angle (radians) between directions of bones sharing a joint; zero for
/// non-adjacent or degenerate pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleWeights {
    pub weights: Matrix,
}

pub fn angle_weights(dirs: &BoneDirections, bones: &BoneGraph) -> Result<AngleWeights> {
    let m = bones.num_bones();
    if dirs.directions.shape() != (m, 2) || dirs.degenerate.len() != m {
        return Err(Error::shape(
            "angle_weights",
            format!("{:?} directions for {m} bones", dirs.directions.shape()),
        ));
    }
    let mut weights = Matrix::zeros(m, m);
    for p in 0..m {
        for q in (p + 1)..m {
            if bones.adjacency.get(p, q) == 0.0 || dirs.degenerate[p] || dirs.degenerate[q] {
                continue;
            }
            let dp = dirs.directions.row(p);
            let dq = dirs.directions.row(q);
            let cos = (dp[0] * dq[0] + dp[1] * dq[1]).clamp(-1.0, 1.0);
            let angle = cos.acos();
            weights.set(p, q, angle);
            weights.set(q, p, angle);
        }
    }
    Ok(AngleWeights { weights })
}

/// All-pairs hop counts on the joint tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    hops: Vec<Vec<usize>>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.hops[i][j]
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn max(&self) -> usize {
        self.hops.iter().flatten().copied().max().unwrap_or(0)
    }

    pub fn to_matrix(&self) -> Matrix {
        let n = self.hops.len();
        Matrix::from_fn(n, n, |i, j| self.hops[i][j] as f64)
    }
}

pub fn hop_distance_matrix(topo: &SkeletonTopology) -> DistanceMatrix {
    let n = topo.num_joints();
    let mut hops = vec![vec![usize::MAX; n]; n];
    for (src, row) in hops.iter_mut().enumerate() {
        row[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in topo.neighbors(u) {
                if row[v] == usize::MAX {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    DistanceMatrix { hops }
}

/// `D^-1/2 (A [+ I]) D^-1/2` with `D` the row sums. Zero-degree rows stay zero.
pub fn normalized_adjacency(adj: &Matrix, add_self_loops: bool) -> Result<Matrix> {
    let n = adj.rows();
    if adj.cols() != n {
        return Err(Error::shape(
            "normalized_adjacency",
            format!("expected a square matrix, got {:?}", adj.shape()),
        ));
    }
    let mut a = adj.clone();
    if add_self_loops {
        for i in 0..n {
            a.set(i, i, a.get(i, i) + 1.0);
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(Matrix::from_fn(n, n, |i, j| {
        inv_sqrt[i] * a.get(i, j) * inv_sqrt[j]
    }))
}

/// Negates the first coordinate and swaps mirrored joints. An involution.
pub fn horizontal_flip(pose: &Matrix, topo: &SkeletonTopology) -> Result<Matrix> {
    if pose.rows() != topo.num_joints() || !(pose.cols() == 2 || pose.cols() == 3) {
        return Err(Error::shape(
            "horizontal_flip",
            format!("pose {:?} for {} joints", pose.shape(), topo.num_joints()),
        ));
    }
    let mut out = pose.permute_rows(&topo.mirror_permutation());
    for r in 0..out.rows() {
        let v = out.get(r, 0);
        out.set(r, 0, -v);
    }
    Ok(out)
}
