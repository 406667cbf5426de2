//! Joint/bone topology, pose frames and sequences.
//!
//! Positions are millimeters in camera space with `+z` pointing away from
//! the camera. Invalid joints are carried with a `false` validity flag and
//! are skipped by everything downstream instead of raising errors.

use std::fmt;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// A directed parent → child edge of the skeleton tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Bone {
    pub parent: usize,
    pub child: usize,
}

impl Bone {
    pub const fn new(parent: usize, child: usize) -> Self {
        Bone { parent, child }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    Spine,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

/// Chains that share a body-proportion draw (left/right symmetry).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainClass {
    Spine,
    Arm,
    Leg,
}

impl ChainKind {
    pub const ALL: [ChainKind; 5] = [
        ChainKind::Spine,
        ChainKind::LeftArm,
        ChainKind::RightArm,
        ChainKind::LeftLeg,
        ChainKind::RightLeg,
    ];

    pub fn class(self) -> ChainClass {
        match self {
            ChainKind::Spine => ChainClass::Spine,
            ChainKind::LeftArm | ChainKind::RightArm => ChainClass::Arm,
            ChainKind::LeftLeg | ChainKind::RightLeg => ChainClass::Leg,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChainKind::Spine => "spine",
            ChainKind::LeftArm => "left_arm",
            ChainKind::RightArm => "right_arm",
            ChainKind::LeftLeg => "left_leg",
            ChainKind::RightLeg => "right_leg",
        }
    }
}

/// An ordered joint path; `joints[0]` is the central reference (pelvis or clavicle).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimbChain {
    pub kind: ChainKind,
    pub joints: Vec<usize>,
}

impl LimbChain {
    pub fn reference(&self) -> usize {
        self.joints[0]
    }

    pub fn bones(&self) -> impl Iterator<Item = Bone> + '_ {
        self.joints.windows(2).map(|w| Bone::new(w[0], w[1]))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub name: String,
    pub joint_names: Vec<String>,
    pub bones: Vec<Bone>,
    pub limb_chains: Vec<LimbChain>,
    pub root_index: usize,
}

pub const SMPL24_NAME: &str = "smpl24";

const SMPL24_JOINTS: [&str; 24] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_clavicle",
    "right_clavicle",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

const SMPL24_PARENTS: [Option<usize>; 24] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

/// The built-in 24-joint body topology in SMPL joint order.
pub fn default_topology() -> SkeletonTopology {
    let bones = SMPL24_PARENTS
        .iter()
        .enumerate()
        .filter_map(|(child, parent)| parent.map(|p| Bone::new(p, child)))
        .collect();
    let limb_chains = vec![
        LimbChain {
            kind: ChainKind::Spine,
            joints: vec![0, 3, 6, 9, 12, 15],
        },
        LimbChain {
            kind: ChainKind::LeftArm,
            joints: vec![13, 16, 18, 20, 22],
        },
        LimbChain {
            kind: ChainKind::RightArm,
            joints: vec![14, 17, 19, 21, 23],
        },
        LimbChain {
            kind: ChainKind::LeftLeg,
            joints: vec![0, 1, 4, 7, 10],
        },
        LimbChain {
            kind: ChainKind::RightLeg,
            joints: vec![0, 2, 5, 8, 11],
        },
    ];
    SkeletonTopology {
        name: SMPL24_NAME.to_string(),
        joint_names: SMPL24_JOINTS.iter().map(|s| s.to_string()).collect(),
        bones,
        limb_chains,
        root_index: 0,
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

impl SkeletonTopology {
    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn joint_name(&self, index: usize) -> &str {
        &self.joint_names[index]
    }

    pub fn parent_of(&self, joint: usize) -> Option<usize> {
        self.bones
            .iter()
            .find(|b| b.child == joint)
            .map(|b| b.parent)
    }

    /// Checks the tree and chain invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_joints();
        if n == 0 {
            return Err(Error::Schema("topology has no joints".into()));
        }
        if self.root_index >= n {
            return Err(Error::Schema(format!(
                "root index {} out of range for {n} joints",
                self.root_index
            )));
        }
        if self.bones.len() != n - 1 {
            return Err(Error::Schema(format!(
                "a tree over {n} joints needs {} bones, found {}",
                n - 1,
                self.bones.len()
            )));
        }
        let mut sets = DisjointSet::new(n);
        let mut has_parent = vec![false; n];
        for bone in &self.bones {
            if bone.parent >= n || bone.child >= n {
                return Err(Error::Schema(format!(
                    "bone {}->{} references a joint out of range",
                    bone.parent, bone.child
                )));
            }
            if !sets.union(bone.parent, bone.child) {
                return Err(Error::Schema(format!(
                    "bone {}->{} closes a cycle",
                    bone.parent, bone.child
                )));
            }
            if std::mem::replace(&mut has_parent[bone.child], true) {
                return Err(Error::Schema(format!(
                    "joint {} has more than one parent",
                    bone.child
                )));
            }
        }
        if has_parent[self.root_index] {
            return Err(Error::Schema("root joint has a parent".into()));
        }
        // n-1 acyclic edges over n nodes is a spanning tree; with one parent per
        // non-root joint every joint descends from the root.
        for chain in &self.limb_chains {
            if chain.joints.len() < 2 {
                return Err(Error::Schema(format!(
                    "limb chain {} has fewer than two joints",
                    chain.kind.name()
                )));
            }
            for bone in chain.bones() {
                if !self.bones.contains(&bone) {
                    return Err(Error::Schema(format!(
                        "limb chain {}: {}->{} is not a bone",
                        chain.kind.name(),
                        bone.parent,
                        bone.child
                    )));
                }
            }
        }
        Ok(())
    }

    /// Bones ordered so that every parent is placed before its children.
    pub fn bones_root_first(&self) -> Vec<Bone> {
        let mut order = Vec::with_capacity(self.bones.len());
        let mut frontier = vec![self.root_index];
        while let Some(joint) = frontier.pop() {
            for bone in self.bones.iter().filter(|b| b.parent == joint) {
                order.push(*bone);
                frontier.push(bone.child);
            }
        }
        order
    }

    /// The chain a bone belongs to, if any.
    pub fn chain_of(&self, bone: Bone) -> Option<ChainKind> {
        self.limb_chains
            .iter()
            .find(|c| c.bones().any(|b| b == bone))
            .map(|c| c.kind)
    }

    pub fn chain(&self, kind: ChainKind) -> Option<&LimbChain> {
        self.limb_chains.iter().find(|c| c.kind == kind)
    }

    /// Chain used for coloring and proportion scaling; bones outside every
    /// chain (the clavicle attachments) belong to the spine.
    pub fn bone_group(&self, bone: Bone) -> ChainKind {
        self.chain_of(bone).unwrap_or(ChainKind::Spine)
    }

    /// True when `ancestor` lies on the path from `joint` to the root (inclusive).
    pub fn is_ancestor(&self, ancestor: usize, joint: usize) -> bool {
        let mut current = Some(joint);
        let mut steps = 0;
        while let Some(j) = current {
            if j == ancestor {
                return true;
            }
            steps += 1;
            if steps > self.num_joints() {
                return false;
            }
            current = self.parent_of(j);
        }
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub joints: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl PoseFrame {
    pub fn new(joints: Vec<Vec3>, valid: Vec<bool>) -> Self {
        debug_assert_eq!(joints.len(), valid.len());
        PoseFrame { joints, valid }
    }

    pub fn all_valid(joints: Vec<Vec3>) -> Self {
        let valid = vec![true; joints.len()];
        PoseFrame { joints, valid }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joint(&self, index: usize) -> Option<Vec3> {
        self.valid[index].then(|| self.joints[index])
    }

    pub fn bone_valid(&self, bone: Bone) -> bool {
        self.valid[bone.parent] && self.valid[bone.child]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    pub frames: Vec<PoseFrame>,
    pub fps: f64,
    pub subject_id: String,
}

impl PoseSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn check_against(&self, topology: &SkeletonTopology) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Empty(format!(
                "subject {} has no frames",
                self.subject_id
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Schema(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        let n = topology.num_joints();
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.joints.len() != n || frame.valid.len() != n {
                return Err(Error::Dimension(format!(
                    "subject {} frame {t} has {} joints, topology {} expects {n}",
                    self.subject_id,
                    frame.joints.len(),
                    topology.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointKind {
    Body,
    Face,
    LeftHand,
    RightHand,
}

/// 2D pixel keypoints; coordinates may fall outside the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2D {
    pub points: Vec<Vec2>,
    pub valid: Vec<bool>,
    pub kind: KeypointKind,
}

impl Keypoints2D {
    pub fn new(kind: KeypointKind, points: Vec<Vec2>, valid: Vec<bool>) -> Self {
        Keypoints2D {
            points,
            valid,
            kind,
        }
    }

    pub fn all_valid(kind: KeypointKind, points: Vec<Vec2>) -> Self {
        let valid = vec![true; points.len()];
        Keypoints2D {
            points,
            valid,
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> Option<Vec2> {
        (index < self.points.len() && self.valid[index]).then(|| self.points[index])
    }

    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, Vec2)> + '_ {
        self.points
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter(|(_, (_, v))| **v)
            .map(|(i, (p, _))| (i, *p))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PoseViolation {
    NonFiniteJoint { joint: usize, name: String },
    ZeroLengthBone { parent: String, child: String },
}

impl fmt::Display for PoseViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoseViolation::NonFiniteJoint { joint, .. } => write!(f, "non-finite-joint({joint})"),
            PoseViolation::ZeroLengthBone { parent, child } => {
                write!(f, "zero-length-bone({parent}->{child})")
            }
        }
    }
}

/// Lists every violated frame invariant; empty when the frame is well formed.
pub fn validate_pose(topology: &SkeletonTopology, frame: &PoseFrame) -> Result<Vec<PoseViolation>> {
    let n = topology.num_joints();
    if frame.joints.len() != n || frame.valid.len() != n {
        return Err(Error::Dimension(format!(
            "frame has {} joints, topology {} expects {n}",
            frame.joints.len(),
            topology.name
        )));
    }
    let mut violations = Vec::new();
    for (j, (p, &valid)) in frame.joints.iter().zip(&frame.valid).enumerate() {
        if valid && !p.iter().all(|c| c.is_finite()) {
            violations.push(PoseViolation::NonFiniteJoint {
                joint: j,
                name: topology.joint_name(j).to_string(),
            });
        }
    }
    for bone in &topology.bones {
        if !frame.bone_valid(*bone) {
            continue;
        }
        let (a, b) = (frame.joints[bone.parent], frame.joints[bone.child]);
        if a.iter().chain(b.iter()).all(|c| c.is_finite()) && (b - a).norm() <= 0.0 {
            violations.push(PoseViolation::ZeroLengthBone {
                parent: topology.joint_name(bone.parent).to_string(),
                child: topology.joint_name(bone.child).to_string(),
            });
        }
    }
    Ok(violations)
}

/// Translates the frame so the root joint sits at the origin.
pub fn root_relative(frame: &PoseFrame, topology: &SkeletonTopology) -> Result<PoseFrame> {
    let root = frame
        .joint(topology.root_index)
        .ok_or(Error::InvalidRoot(topology.root_index))?;
    let joints = frame
        .joints
        .iter()
        .zip(&frame.valid)
        .map(|(p, &v)| if v { p - root } else { *p })
        .collect();
    Ok(PoseFrame {
        joints,
        valid: frame.valid.clone(),
    })
}
