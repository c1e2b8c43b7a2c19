//! Synthetic poses: random joint rotations about a rest pose, forward
//! kinematics and pinhole projection.
//!
//! Camera frame: x right, y down, z forward. The root sits at
//! `(0, 0, camera_distance_mm)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::dataset::PoseSample;
use crate::skeleton::SkeletonTopology;

type Mat3 = [[f64; 3]; 3];

/// Bone lengths of the 17-joint layout, in bone order.
pub const H36M_BONE_LENGTHS_MM: [f64; 16] = [
    132.0, 442.0, 454.0, 132.0, 442.0, 454.0, 233.0, 257.0, 121.0, 115.0, 151.0, 278.0, 252.0,
    151.0, 278.0, 252.0,
];

/// Unit rest directions of the 17-joint layout, in bone order. The subject
/// faces the camera, so its right side is at negative x.
pub const H36M_REST_DIRECTIONS: [[f64; 3]; 16] = [
    [-1.0, 0.0, 0.0], // RHip
    [0.0, 1.0, 0.0],  // RKnee
    [0.0, 1.0, 0.0],  // RFoot
    [1.0, 0.0, 0.0],  // LHip
    [0.0, 1.0, 0.0],  // LKnee
    [0.0, 1.0, 0.0],  // LFoot
    [0.0, -1.0, 0.0], // Spine
    [0.0, -1.0, 0.0], // Thorax
    [0.0, -1.0, 0.0], // Neck
    [0.0, -1.0, 0.0], // Head
    [1.0, 0.0, 0.0],  // LShoulder
    [0.0, 1.0, 0.0],  // LElbow
    [0.0, 1.0, 0.0],  // LWrist
    [-1.0, 0.0, 0.0], // RShoulder
    [0.0, 1.0, 0.0],  // RElbow
    [0.0, 1.0, 0.0],  // RWrist
];

const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGenConfig {
    pub seed: u64,
    pub count: usize,
    pub bone_lengths_mm: Vec<f64>,
    pub max_joint_angle_rad: f64,
    pub focal_px: f64,
    pub camera_distance_mm: f64,
}

impl SyntheticGenConfig {
    pub fn human36m(seed: u64, count: usize) -> Self {
        SyntheticGenConfig {
            seed,
            count,
            bone_lengths_mm: H36M_BONE_LENGTHS_MM.to_vec(),
            max_joint_angle_rad: 0.5,
            focal_px: 1000.0,
            camera_distance_mm: 5000.0,
        }
    }

    pub fn validate(&self, topo: &SkeletonTopology) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.count == 0 {
            return fail("count must be at least 1".into());
        }
        if self.bone_lengths_mm.len() != topo.num_bones() {
            return fail(format!(
                "{} bone lengths for {} bones",
                self.bone_lengths_mm.len(),
                topo.num_bones()
            ));
        }
        if self.bone_lengths_mm.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return fail("bone lengths must be positive".into());
        }
        if !(self.max_joint_angle_rad >= 0.0) || !(self.focal_px > 0.0) {
            return fail("max_joint_angle_rad must be non-negative and focal_px positive".into());
        }
        let reach: f64 = self.bone_lengths_mm.iter().sum();
        if !(self.camera_distance_mm > reach) {
            return fail(format!(
                "camera distance {} mm does not exceed total reach {reach} mm",
                self.camera_distance_mm
            ));
        }
        Ok(())
    }
}

/// Rest-pose bone directions for `topo`: the built-in layout for 17-joint
/// Human3.6M topologies, otherwise every bone points down (+y).
pub fn rest_directions(topo: &SkeletonTopology) -> Vec<[f64; 3]> {
    if *topo == SkeletonTopology::human36m() {
        H36M_REST_DIRECTIONS.to_vec()
    } else {
        vec![[0.0, 1.0, 0.0]; topo.num_bones()]
    }
}

fn rodrigues(axis: [f64; 3], angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn mat_vec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| (0..3).map(|k| a[i][k] * v[k]).sum())
}

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Root-relative 3D joints from per-bone local rotations. Each bone's global
/// rotation is its parent bone's global rotation times its own.
pub fn forward_kinematics(
    topo: &SkeletonTopology,
    rest: &[[f64; 3]],
    lengths: &[f64],
    local: &[Mat3],
) -> Vec<[f64; 3]> {
    let n = topo.num_joints();
    let mut pos = vec![[0.0; 3]; n];
    let mut global = vec![IDENTITY; n];
    for j in topo.topological_order() {
        let (Some(parent), Some(b)) = (topo.parent(j), topo.bone_of_child(j)) else {
            continue;
        };
        global[j] = mat_mul(&global[parent], &local[b]);
        let d = mat_vec(&global[j], &rest[b]);
        pos[j] = std::array::from_fn(|k| pos[parent][k] + lengths[b] * d[k]);
    }
    pos
}

pub fn project(joints: &[[f64; 3]], camera_distance_mm: f64, focal_px: f64) -> Vec<[f64; 2]> {
    joints
        .iter()
        .map(|p| {
            let z = p[2] + camera_distance_mm;
            [focal_px * p[0] / z, focal_px * p[1] / z]
        })
        .collect()
}

pub fn generate_synthetic(cfg: &SyntheticGenConfig, topo: &SkeletonTopology) -> Result<Vec<PoseSample>> {
    cfg.validate(topo)?;
    let rest = rest_directions(topo);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let mut attempt = 0;
        let joints = loop {
            let local: Vec<Mat3> = (0..topo.num_bones())
                .map(|_| {
                    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
                    let angle = rng.random_range(0.0..=cfg.max_joint_angle_rad);
                    rodrigues(axis, angle)
                })
                .collect();
            let joints = forward_kinematics(topo, &rest, &cfg.bone_lengths_mm, &local);
            if joints.iter().all(|p| p[2] + cfg.camera_distance_mm > 0.0) {
                break joints;
            }
            attempt += 1;
            if attempt >= MAX_RETRIES {
                return Err(Error::Input(format!(
                    "sample {i}: joint behind the camera after {MAX_RETRIES} draws"
                )));
            }
        };
        out.push(PoseSample {
            id: format!("synth-{}-{i:06}", cfg.seed),
            action: None,
            joints_2d: project(&joints, cfg.camera_distance_mm, cfg.focal_px),
            joints_3d: joints,
        });
    }
    Ok(out)
}
