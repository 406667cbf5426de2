//! Body-proportion rescaling and camera manipulation.
//!
//! Training augmentation samples per-chain scales and a bounded camera
//! perturbation; inference retargeting fits the camera to the reference
//! keypoints and adjusts limb proportions to the reference figure. Both keep
//! every bone direction untouched, so the motion itself is preserved.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3, Unit};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{fit_camera, fit_camera_from, CameraModel, FitConfig, FitReport};
use crate::error::{Error, Result};
use crate::skeleton::{
    Bone, ChainClass, ChainKind, KeypointKind, Keypoints2D, PoseFrame, PoseSequence,
    SkeletonTopology, Vec2, Vec3,
};

/// Probability that a training sample goes through augmentation.
pub const DEFAULT_AUGMENTATION_RATE: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScaleParamsRepr", into = "ScaleParamsRepr")]
pub struct ScaleParams {
    pub per_bone_scale: BTreeMap<Bone, f64>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct BoneScale {
    parent: usize,
    child: usize,
    scale: f64,
}

#[derive(Serialize, Deserialize)]
struct ScaleParamsRepr {
    seed: u64,
    bones: Vec<BoneScale>,
}

impl From<ScaleParamsRepr> for ScaleParams {
    fn from(r: ScaleParamsRepr) -> Self {
        ScaleParams {
            per_bone_scale: r
                .bones
                .into_iter()
                .map(|b| (Bone::new(b.parent, b.child), b.scale))
                .collect(),
            seed: r.seed,
        }
    }
}

impl From<ScaleParams> for ScaleParamsRepr {
    fn from(s: ScaleParams) -> Self {
        ScaleParamsRepr {
            seed: s.seed,
            bones: s
                .per_bone_scale
                .into_iter()
                .map(|(b, scale)| BoneScale {
                    parent: b.parent,
                    child: b.child,
                    scale,
                })
                .collect(),
        }
    }
}

impl ScaleParams {
    pub fn uniform(topology: &SkeletonTopology, scale: f64) -> Self {
        ScaleParams {
            per_bone_scale: topology.bones.iter().map(|b| (*b, scale)).collect(),
            seed: 0,
        }
    }

    /// Assigns each bone the scale of its group chain; missing chains get 1.
    pub fn from_chain_scales(
        topology: &SkeletonTopology,
        chains: &BTreeMap<ChainKind, f64>,
        seed: u64,
    ) -> Self {
        ScaleParams {
            per_bone_scale: topology
                .bones
                .iter()
                .map(|b| {
                    (
                        *b,
                        chains.get(&topology.bone_group(*b)).copied().unwrap_or(1.0),
                    )
                })
                .collect(),
            seed,
        }
    }

    pub fn scale_of(&self, bone: Bone) -> Option<f64> {
        self.per_bone_scale.get(&bone).copied()
    }

    pub fn inverse(&self) -> Self {
        ScaleParams {
            per_bone_scale: self
                .per_bone_scale
                .iter()
                .map(|(b, s)| (*b, 1.0 / s))
                .collect(),
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraJitter {
    /// Maximum rotation angle in degrees.
    pub rotation_deg: f64,
    pub focal_range: (f64, f64),
    /// Maximum pixel offset as a fraction of the image width (x) and height (y).
    pub offset_fraction: f64,
}

impl Default for CameraJitter {
    fn default() -> Self {
        CameraJitter {
            rotation_deg: 5.0,
            focal_range: (0.9, 1.1),
            offset_fraction: 0.05,
        }
    }
}

impl CameraJitter {
    pub fn none() -> Self {
        CameraJitter {
            rotation_deg: 0.0,
            focal_range: (1.0, 1.0),
            offset_fraction: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub augmentation_rate: f64,
    pub scale_range: (f64, f64),
    pub camera_jitter: CameraJitter,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            augmentation_rate: DEFAULT_AUGMENTATION_RATE,
            scale_range: (0.7, 1.4),
            camera_jitter: CameraJitter::default(),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        let (flo, fhi) = self.camera_jitter.focal_range;
        let ok = (0.0..=1.0).contains(&self.augmentation_rate)
            && lo > 0.0
            && lo <= hi
            && hi.is_finite()
            && flo > 0.0
            && flo <= fhi
            && fhi.is_finite()
            && (0.0..180.0).contains(&self.camera_jitter.rotation_deg)
            && self.camera_jitter.offset_fraction >= 0.0
            && self.camera_jitter.offset_fraction.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid augmentation config {self:?}"
            )))
        }
    }

    /// Decides whether a sample is augmented, consuming one draw.
    pub fn should_augment(&self, rng: &mut impl Rng) -> bool {
        rng.gen::<f64>() < self.augmentation_rate
    }
}

/// One scale per chain class; left and right limbs share a draw.
pub fn sample_scales(
    topology: &SkeletonTopology,
    config: &AugmentConfig,
    rng: &mut impl Rng,
) -> ScaleParams {
    let (lo, hi) = config.scale_range;
    let mut by_class = BTreeMap::new();
    for class in [ChainClass::Spine, ChainClass::Arm, ChainClass::Leg] {
        by_class.insert(class, rng.gen_range(lo..=hi));
    }
    let chains = ChainKind::ALL
        .iter()
        .map(|k| (*k, by_class[&k.class()]))
        .collect();
    ScaleParams::from_chain_scales(topology, &chains, config.seed)
}

fn rescale_frame(
    frame: &PoseFrame,
    topology: &SkeletonTopology,
    order: &[(Bone, f64)],
) -> Result<PoseFrame> {
    if frame.joint(topology.root_index).is_none() {
        return Err(Error::InvalidRoot(topology.root_index));
    }
    let mut displacement = vec![Vec3::zeros(); frame.len()];
    let mut joints = frame.joints.clone();
    for &(bone, scale) in order {
        let (p, c) = (bone.parent, bone.child);
        displacement[c] = if frame.bone_valid(bone) {
            displacement[p] + (frame.joints[c] - frame.joints[p]) * (scale - 1.0)
        } else {
            displacement[p]
        };
        if frame.valid[c] {
            joints[c] = frame.joints[c] + displacement[c];
        }
    }
    Ok(PoseFrame {
        joints,
        valid: frame.valid.clone(),
    })
}

/// Rescales every bone outward from the root, keeping bone directions and
/// the root trajectory fixed.
pub fn rescale_skeleton(
    seq: &PoseSequence,
    topology: &SkeletonTopology,
    scales: &ScaleParams,
) -> Result<PoseSequence> {
    let order = topology
        .bones_root_first()
        .into_iter()
        .map(|b| {
            scales.scale_of(b).map(|s| (b, s)).ok_or_else(|| {
                Error::Config(format!(
                    "no scale for bone {}->{}",
                    topology.joint_name(b.parent),
                    topology.joint_name(b.child)
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = seq
        .frames
        .iter()
        .map(|f| rescale_frame(f, topology, &order))
        .collect::<Result<Vec<_>>>()?;
    Ok(PoseSequence {
        frames,
        fps: seq.fps,
        subject_id: seq.subject_id.clone(),
    })
}

/// A concrete camera perturbation drawn from [`CameraJitter`] bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledJitter {
    pub rotation: Rotation3<f64>,
    pub focal_scale: f64,
    pub offset: Vec2,
}

impl SampledJitter {
    pub fn angle_deg(&self) -> f64 {
        self.rotation.angle().to_degrees()
    }

    pub fn apply(&self, cam: &CameraModel) -> CameraModel {
        let focal = Matrix3::new(
            self.focal_scale,
            0.0,
            0.0,
            0.0,
            self.focal_scale,
            0.0,
            0.0,
            0.0,
            1.0,
        );
        CameraModel {
            matrix: focal * cam.matrix * self.rotation.matrix(),
            pixel_offset: cam.pixel_offset + self.offset,
            image_size: cam.image_size,
        }
    }
}

pub fn sample_camera_jitter(
    jitter: &CameraJitter,
    image_size: (u32, u32),
    rng: &mut impl Rng,
) -> SampledJitter {
    // axis uniform on the sphere
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    let axis = Unit::new_normalize(Vec3::new(r * phi.cos(), r * phi.sin(), z));
    let angle = rng.gen_range(0.0..=jitter.rotation_deg).to_radians();
    let focal_scale = rng.gen_range(jitter.focal_range.0..=jitter.focal_range.1);
    let max_dx = jitter.offset_fraction * image_size.0 as f64;
    let max_dy = jitter.offset_fraction * image_size.1 as f64;
    let offset = Vec2::new(
        rng.gen_range(-max_dx..=max_dx),
        rng.gen_range(-max_dy..=max_dy),
    );
    SampledJitter {
        rotation: Rotation3::from_axis_angle(&axis, angle),
        focal_scale,
        offset,
    }
}

/// Rotation about the camera center, focal multiplier and pixel shift, all
/// within the configured bounds.
pub fn perturb_camera(
    cam: &CameraModel,
    config: &AugmentConfig,
    rng: &mut impl Rng,
) -> CameraModel {
    sample_camera_jitter(&config.camera_jitter, cam.image_size, rng).apply(cam)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetargetOptions {
    pub fit: FitConfig,
    /// Bounds applied to every chain ratio.
    pub clamp: (f64, f64),
    /// When false only the camera is fitted.
    pub adjust_proportions: bool,
    /// Alternating fit/rescale rounds.
    pub max_rounds: usize,
    pub round_tolerance: f64,
}

impl Default for RetargetOptions {
    fn default() -> Self {
        RetargetOptions {
            fit: FitConfig::default(),
            clamp: (0.5, 2.0),
            adjust_proportions: true,
            max_rounds: 50,
            round_tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetargetOutcome {
    pub sequence: PoseSequence,
    pub camera: CameraModel,
    pub fit_report: FitReport,
    /// Applied scale per chain, relative to the driving skeleton.
    pub chain_ratios: BTreeMap<ChainKind, f64>,
    pub rounds: usize,
    pub warnings: Vec<String>,
}

/// 2D chain lengths of the reference and of the projected driving frame,
/// summed over the bones valid in both.
fn chain_lengths(
    chain: &crate::skeleton::LimbChain,
    frame: &PoseFrame,
    cam: &CameraModel,
    ref2d: &Keypoints2D,
) -> (f64, f64) {
    let mut ref_len = 0.0;
    let mut proj_len = 0.0;
    for bone in chain.bones() {
        let (Some(ra), Some(rb)) = (ref2d.point(bone.parent), ref2d.point(bone.child)) else {
            continue;
        };
        let (Some(a), Some(b)) = (frame.joint(bone.parent), frame.joint(bone.child)) else {
            continue;
        };
        let (Ok(pa), Ok(pb)) = (cam.project(&a), cam.project(&b)) else {
            continue;
        };
        ref_len += (rb - ra).norm();
        proj_len += (pb - pa).norm();
    }
    (ref_len, proj_len)
}

/// Reference-to-projection length ratio per chain; `None` when the chain
/// has no measurable projected length.
fn raw_chain_ratios(
    topology: &SkeletonTopology,
    frame: &PoseFrame,
    cam: &CameraModel,
    ref2d: &Keypoints2D,
) -> BTreeMap<ChainKind, Option<f64>> {
    topology
        .limb_chains
        .iter()
        .map(|chain| {
            let (ref_len, proj_len) = chain_lengths(chain, frame, cam, ref2d);
            let ratio = (proj_len > 1e-9 && ref_len > 0.0).then(|| ref_len / proj_len);
            (chain.kind, ratio)
        })
        .collect()
}

/// Remaps the driving sequence into the reference frame.
///
/// The camera is fitted on the first driving frame. With proportion
/// adjustment on, limb chains are then rescaled so their projected lengths
/// match the reference, measured relative to the spine (overall size is
/// carried by the camera), alternating with a refit until the ratios settle.
pub fn retarget(
    driving: &PoseSequence,
    ref2d: &Keypoints2D,
    topology: &SkeletonTopology,
    options: &RetargetOptions,
) -> Result<RetargetOutcome> {
    let (lo, hi) = options.clamp;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::Config(format!(
            "invalid ratio clamp {:?}",
            options.clamp
        )));
    }
    driving.check_against(topology)?;
    if ref2d.kind != KeypointKind::Body {
        return Err(Error::Config("retargeting needs body keypoints".into()));
    }
    let (mut cam, mut report) = fit_camera(&driving.frames[0], ref2d, &options.fit)?;
    let mut cumulative: BTreeMap<ChainKind, f64> =
        topology.limb_chains.iter().map(|c| (c.kind, 1.0)).collect();
    let mut warnings = Vec::new();
    let mut current = driving.clone();
    let mut rounds = 0;

    if options.adjust_proportions {
        while rounds < options.max_rounds {
            rounds += 1;
            let raw = raw_chain_ratios(topology, &current.frames[0], &cam, ref2d);
            let anchor = raw.get(&ChainKind::Spine).copied().flatten().unwrap_or(1.0);
            let mut largest_step: f64 = 0.0;
            for (kind, ratio) in &raw {
                let relative = match ratio {
                    Some(r) if *kind != ChainKind::Spine => r / anchor,
                    Some(_) => 1.0,
                    None => {
                        if rounds == 1 {
                            warnings.push(format!(
                                "chain {} has no measurable projected length; ratio fixed at 1",
                                kind.name()
                            ));
                        }
                        1.0
                    }
                };
                let entry = cumulative.get_mut(kind).expect("chain present");
                let updated = (*entry * relative).clamp(lo, hi);
                largest_step = largest_step.max((updated / *entry - 1.0).abs());
                *entry = updated;
            }
            if largest_step <= options.round_tolerance {
                break;
            }
            let scales = ScaleParams::from_chain_scales(topology, &cumulative, 0);
            current = rescale_skeleton(driving, topology, &scales)?;
            let (next_cam, next_report) =
                fit_camera_from(&current.frames[0], ref2d, cam.clone(), &options.fit)?;
            cam = next_cam;
            report = next_report;
        }
    }

    Ok(RetargetOutcome {
        sequence: current,
        camera: cam,
        fit_report: report,
        chain_ratios: cumulative,
        rounds,
        warnings,
    })
}

/// Where an overlay group was attached and where it must go.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlayAnchor {
    pub old: Option<Vec2>,
    pub new: Option<Vec2>,
    /// Ratio of the adjacent bone's projected length, new over old.
    pub scale: f64,
}

impl OverlayAnchor {
    pub fn identity(at: Vec2) -> Self {
        OverlayAnchor {
            old: Some(at),
            new: Some(at),
            scale: 1.0,
        }
    }
}

/// Translates each overlay group onto its new anchor and scales it about the
/// anchor. Groups with an invalid anchor pass through with a warning.
pub fn align_overlays(
    overlays: &[Keypoints2D],
    anchors: &[OverlayAnchor],
) -> Result<(Vec<Keypoints2D>, Vec<String>)> {
    if overlays.len() != anchors.len() {
        return Err(Error::Dimension(format!(
            "{} overlay groups but {} anchors",
            overlays.len(),
            anchors.len()
        )));
    }
    let mut warnings = Vec::new();
    let aligned = overlays
        .iter()
        .zip(anchors)
        .map(|(group, anchor)| match (anchor.old, anchor.new) {
            (Some(old), Some(new)) if anchor.scale.is_finite() && anchor.scale > 0.0 => {
                let mut out = group.clone();
                for p in out.points.iter_mut() {
                    *p = new + (*p - old) * anchor.scale;
                }
                out
            }
            _ => {
                warnings.push(format!(
                    "{:?} overlay has no valid anchor; left unchanged",
                    group.kind
                ));
                group.clone()
            }
        })
        .collect();
    Ok((aligned, warnings))
}

/// Anchor joint and the bone whose length sets the overlay scale.
fn overlay_attachment(topology: &SkeletonTopology, kind: KeypointKind) -> Option<(usize, Bone)> {
    let (anchor, proximal) = match kind {
        KeypointKind::LeftHand => ("left_wrist", "left_elbow"),
        KeypointKind::RightHand => ("right_wrist", "right_elbow"),
        KeypointKind::Face => ("head", "neck"),
        KeypointKind::Body => return None,
    };
    let a = topology.joint_index(anchor)?;
    let p = topology.joint_index(proximal)?;
    Some((a, Bone::new(p, a)))
}

/// Anchors for overlays given the skeleton before and after adaptation,
/// both projected to pixels.
pub fn overlay_anchors(
    topology: &SkeletonTopology,
    overlays: &[Keypoints2D],
    old_projection: &Keypoints2D,
    new_projection: &Keypoints2D,
) -> Vec<OverlayAnchor> {
    overlays
        .iter()
        .map(|group| {
            let Some((joint, bone)) = overlay_attachment(topology, group.kind) else {
                return OverlayAnchor {
                    old: Some(Vec2::zeros()),
                    new: Some(Vec2::zeros()),
                    scale: 1.0,
                };
            };
            let length = |kp: &Keypoints2D| -> Option<f64> {
                Some((kp.point(bone.child)? - kp.point(bone.parent)?).norm())
            };
            let scale = match (length(old_projection), length(new_projection)) {
                (Some(o), Some(n)) if o > 1e-9 => n / o,
                _ => 1.0,
            };
            OverlayAnchor {
                old: old_projection.point(joint),
                new: new_projection.point(joint),
                scale,
            }
        })
        .collect()
}

/// Projects every valid joint of a frame; joints behind the camera become invalid.
pub fn project_frame(cam: &CameraModel, frame: &PoseFrame) -> Keypoints2D {
    let mut points = Vec::with_capacity(frame.len());
    let mut valid = Vec::with_capacity(frame.len());
    for j in 0..frame.len() {
        match frame.joint(j).map(|p| cam.project(&p)) {
            Some(Ok(p)) => {
                points.push(p);
                valid.push(true);
            }
            _ => {
                points.push(Vec2::zeros());
                valid.push(false);
            }
        }
    }
    Keypoints2D::new(KeypointKind::Body, points, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::default_topology;
    use crate::synthetic::standing_pose;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq_of(frames: Vec<PoseFrame>) -> PoseSequence {
        PoseSequence {
            frames,
            fps: 30.0,
            subject_id: "a".into(),
        }
    }

    fn dist(a: Vec3, b: Vec3) -> f64 {
        ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
    }

    #[test]
    fn degenerate_scale_range_gives_unit_scales() {
        let topo = default_topology();
        let cfg = AugmentConfig {
            scale_range: (1.0, 1.0),
            ..Default::default()
        };
        let s = sample_scales(&topo, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(s.per_bone_scale.values().all(|&v| v == 1.0));
        assert_eq!(s.per_bone_scale.len(), 23);
    }

    #[test]
    fn sample_scales_is_deterministic_and_symmetric() {
        let topo = default_topology();
        let cfg = AugmentConfig::default();
        let a = sample_scales(&topo, &cfg, &mut ChaCha8Rng::seed_from_u64(42));
        let b = sample_scales(&topo, &cfg, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
        let l = topo
            .chain(ChainKind::LeftArm)
            .unwrap()
            .bones()
            .next()
            .unwrap();
        let r = topo
            .chain(ChainKind::RightArm)
            .unwrap()
            .bones()
            .next()
            .unwrap();
        assert_eq!(a.scale_of(l), a.scale_of(r));
    }

    #[test]
    fn sampled_scales_follow_uniform_range() {
        let topo = default_topology();
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bone = topo.bones[0];
        let draws: Vec<f64> = (0..10_000)
            .map(|_| sample_scales(&topo, &cfg, &mut rng).scale_of(bone).unwrap())
            .collect();
        let min = draws.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(min >= 0.7 && max <= 1.4);
        assert!((mean - 1.05).abs() < 0.05);
        // spans the range
        assert!(min < 0.71 && max > 1.39);
    }

    #[test]
    fn unit_scales_are_bitwise_identity() {
        let topo = default_topology();
        let seq = seq_of(vec![standing_pose(Vec3::new(12.5, -30.25, 3210.0))]);
        let out = rescale_skeleton(&seq, &topo, &ScaleParams::uniform(&topo, 1.0)).unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn arm_chain_scale_doubles_lengths_and_keeps_directions() {
        let topo = default_topology();
        let seq = seq_of(vec![standing_pose(Vec3::new(0.0, 0.0, 3000.0))]);
        let mut chains = BTreeMap::new();
        chains.insert(ChainKind::LeftArm, 2.0);
        let scales = ScaleParams::from_chain_scales(&topo, &chains, 0);
        let out = rescale_skeleton(&seq, &topo, &scales).unwrap();
        let (a, b) = (&seq.frames[0], &out.frames[0]);
        for bone in topo.chain(ChainKind::LeftArm).unwrap().bones() {
            let before = a.joints[bone.child] - a.joints[bone.parent];
            let after = b.joints[bone.child] - b.joints[bone.parent];
            assert!((after.norm() / before.norm() - 2.0).abs() < 1e-12);
            let cos = before.dot(&after) / (before.norm() * after.norm());
            assert!((cos - 1.0).abs() < 1e-12);
        }
        // right arm untouched
        let rw = topo.joint_index("right_wrist").unwrap();
        assert_eq!(a.joints[rw], b.joints[rw]);
    }

    #[test]
    fn random_rescale_matches_brute_force_lengths() {
        let topo = default_topology();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let frame = PoseFrame::all_valid(
                (0..24)
                    .map(|_| {
                        Vec3::new(
                            rng.gen_range(-500.0..500.0),
                            rng.gen_range(-500.0..500.0),
                            rng.gen_range(2000.0..4000.0),
                        )
                    })
                    .collect(),
            );
            let scales = ScaleParams {
                per_bone_scale: topo
                    .bones
                    .iter()
                    .map(|b| (*b, rng.gen_range(0.5..2.0)))
                    .collect(),
                seed: 0,
            };
            let out = rescale_skeleton(&seq_of(vec![frame.clone()]), &topo, &scales).unwrap();
            for bone in &topo.bones {
                let s = scales.scale_of(*bone).unwrap();
                let before = dist(frame.joints[bone.parent], frame.joints[bone.child]);
                let after = dist(
                    out.frames[0].joints[bone.parent],
                    out.frames[0].joints[bone.child],
                );
                assert!((after - s * before).abs() < 1e-9);
            }
            assert_eq!(out.frames[0].joints[0], frame.joints[0]);
            let back = rescale_skeleton(&out, &topo, &scales.inverse()).unwrap();
            for (p, q) in back.frames[0].joints.iter().zip(&frame.joints) {
                assert!((p - q).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn missing_bone_scale_is_config_error() {
        let topo = default_topology();
        let mut scales = ScaleParams::uniform(&topo, 1.0);
        scales.per_bone_scale.remove(&topo.bones[4]);
        let seq = seq_of(vec![standing_pose(Vec3::new(0.0, 0.0, 3000.0))]);
        assert!(matches!(
            rescale_skeleton(&seq, &topo, &scales),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rescale_moves_invalid_subtree_with_ancestor() {
        let topo = default_topology();
        let mut frame = standing_pose(Vec3::new(0.0, 0.0, 3000.0));
        let knee = topo.joint_index("left_knee").unwrap();
        let ankle = topo.joint_index("left_ankle").unwrap();
        frame.valid[knee] = false;
        let mut chains = BTreeMap::new();
        chains.insert(ChainKind::LeftLeg, 1.5);
        let out = rescale_skeleton(
            &seq_of(vec![frame.clone()]),
            &topo,
            &ScaleParams::from_chain_scales(&topo, &chains, 0),
        )
        .unwrap();
        // the ankle follows the hip displacement, unscaled through the gap
        let hip = topo.joint_index("left_hip").unwrap();
        let hip_shift = out.frames[0].joints[hip] - frame.joints[hip];
        let ankle_shift = out.frames[0].joints[ankle] - frame.joints[ankle];
        assert!((hip_shift - ankle_shift).norm() < 1e-9);
        assert_eq!(out.frames[0].joints[knee], frame.joints[knee]);
    }

    #[test]
    fn zero_jitter_leaves_camera_unchanged() {
        let cam = CameraModel::for_image(512, 768);
        let cfg = AugmentConfig {
            camera_jitter: CameraJitter::none(),
            ..Default::default()
        };
        let out = perturb_camera(&cam, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(out, cam);
    }

    #[test]
    fn jitter_rotation_respects_bound() {
        let jitter = CameraJitter::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cam = CameraModel::for_image(512, 512);
        for _ in 0..10_000 {
            let sample = sample_camera_jitter(&jitter, (512, 512), &mut rng);
            // recover the rotation from the perturbed matrix
            let perturbed = sample.apply(&cam);
            let focal =
                Matrix3::from_diagonal(&Vec3::new(sample.focal_scale, sample.focal_scale, 1.0));
            let rot = (focal * cam.matrix).try_inverse().unwrap() * perturbed.matrix;
            let cos = ((rot.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            assert!(cos.acos().to_degrees() <= 5.0 + 1e-9);
            assert!(sample.angle_deg() <= 5.0 + 1e-9);
            assert!(sample.offset.x.abs() <= 25.6 && sample.offset.y.abs() <= 25.6);
            assert!(perturbed.is_valid());
        }
    }

    #[test]
    fn perturb_camera_is_deterministic() {
        let cam = CameraModel::for_image(512, 512);
        let cfg = AugmentConfig::default();
        let a = perturb_camera(&cam, &cfg, &mut ChaCha8Rng::seed_from_u64(77));
        let b = perturb_camera(&cam, &cfg, &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(a, b);
    }

    #[test]
    fn self_retarget_is_identity() {
        let topo = default_topology();
        let seq = seq_of(vec![
            standing_pose(Vec3::new(50.0, 100.0, 3000.0)),
            standing_pose(Vec3::new(70.0, 90.0, 3100.0)),
        ]);
        let cam = CameraModel::for_image(512, 768);
        let ref2d = project_frame(&cam, &seq.frames[0]);
        let out = retarget(&seq, &ref2d, &topo, &RetargetOptions::default()).unwrap();
        for r in out.chain_ratios.values() {
            assert!((r - 1.0).abs() < 1e-6, "{:?}", out.chain_ratios);
        }
        for (f, g) in out.sequence.frames.iter().zip(&seq.frames) {
            for (p, q) in f.joints.iter().zip(&g.joints) {
                assert!((p - q).norm() < 1e-6);
            }
        }
        assert_eq!(out.sequence.len(), 2);
    }

    #[test]
    fn retarget_recovers_leg_rescale() {
        let topo = default_topology();
        let seq = seq_of(vec![standing_pose(Vec3::new(0.0, 0.0, 3500.0))]);
        let mut chains = BTreeMap::new();
        chains.insert(ChainKind::LeftLeg, 1.3);
        chains.insert(ChainKind::RightLeg, 1.3);
        let target = rescale_skeleton(
            &seq,
            &topo,
            &ScaleParams::from_chain_scales(&topo, &chains, 0),
        )
        .unwrap();
        let ref2d = project_frame(&CameraModel::for_image(512, 768), &target.frames[0]);
        let out = retarget(&seq, &ref2d, &topo, &RetargetOptions::default()).unwrap();
        for leg in [ChainKind::LeftLeg, ChainKind::RightLeg] {
            let r = out.chain_ratios[&leg];
            assert!((r - 1.3).abs() / 1.3 < 0.02, "{:?}", out.chain_ratios);
        }
        // idempotent
        let again = retarget(&out.sequence, &ref2d, &topo, &RetargetOptions::default()).unwrap();
        for r in again.chain_ratios.values() {
            assert!((r - 1.0).abs() < 1e-3, "{:?}", again.chain_ratios);
        }
    }

    #[test]
    fn retarget_without_proportions_only_fits() {
        let topo = default_topology();
        let seq = seq_of(vec![standing_pose(Vec3::new(0.0, 0.0, 3500.0))]);
        let ref2d = project_frame(&CameraModel::for_image(512, 768), &seq.frames[0]);
        let opts = RetargetOptions {
            adjust_proportions: false,
            ..Default::default()
        };
        let out = retarget(&seq, &ref2d, &topo, &opts).unwrap();
        assert_eq!(out.sequence, seq);
        assert_eq!(out.rounds, 0);
    }

    #[test]
    fn retarget_with_three_reference_points_fails() {
        let topo = default_topology();
        let seq = seq_of(vec![standing_pose(Vec3::new(0.0, 0.0, 3500.0))]);
        let mut ref2d = project_frame(&CameraModel::for_image(512, 768), &seq.frames[0]);
        for v in ref2d.valid.iter_mut().skip(3) {
            *v = false;
        }
        assert!(matches!(
            retarget(&seq, &ref2d, &topo, &RetargetOptions::default()),
            Err(Error::Underdetermined { .. })
        ));
    }

    fn hand() -> Keypoints2D {
        Keypoints2D::all_valid(
            KeypointKind::LeftHand,
            vec![
                Vec2::new(100.0, 100.0),
                Vec2::new(110.0, 95.0),
                Vec2::new(118.0, 90.0),
                Vec2::new(104.0, 120.0),
            ],
        )
    }

    #[test]
    fn align_overlays_identity_and_shift() {
        let group = hand();
        let (out, w) = align_overlays(
            std::slice::from_ref(&group),
            &[OverlayAnchor::identity(Vec2::new(100.0, 100.0))],
        )
        .unwrap();
        assert_eq!(out[0], group);
        assert!(w.is_empty());

        let anchor = OverlayAnchor {
            old: Some(Vec2::new(100.0, 100.0)),
            new: Some(Vec2::new(110.0, 95.0)),
            scale: 1.0,
        };
        let (out, _) = align_overlays(std::slice::from_ref(&group), &[anchor]).unwrap();
        for (p, q) in out[0].points.iter().zip(&group.points) {
            assert_eq!(p - q, Vec2::new(10.0, -5.0));
        }
    }

    #[test]
    fn align_overlays_scales_pairwise_distances() {
        let group = hand();
        let anchor = OverlayAnchor {
            old: Some(Vec2::new(100.0, 100.0)),
            new: Some(Vec2::new(140.0, 60.0)),
            scale: 2.0,
        };
        let (out, _) = align_overlays(std::slice::from_ref(&group), &[anchor]).unwrap();
        for i in 0..group.len() {
            for j in 0..group.len() {
                let d0 = (group.points[i] - group.points[j]).norm();
                let d1 = (out[0].points[i] - out[0].points[j]).norm();
                assert!((d1 - 2.0 * d0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn align_overlays_invalid_anchor_passes_through() {
        let group = hand();
        let anchor = OverlayAnchor {
            old: None,
            new: Some(Vec2::new(1.0, 1.0)),
            scale: 1.0,
        };
        let (out, warnings) = align_overlays(std::slice::from_ref(&group), &[anchor]).unwrap();
        assert_eq!(out[0], group);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn overlay_anchors_follow_wrist_and_forearm() {
        let topo = default_topology();
        let frame = standing_pose(Vec3::new(0.0, 0.0, 3000.0));
        let cam = CameraModel::for_image(512, 512);
        let mut chains = BTreeMap::new();
        chains.insert(ChainKind::LeftArm, 1.5);
        let scaled = rescale_skeleton(
            &seq_of(vec![frame.clone()]),
            &topo,
            &ScaleParams::from_chain_scales(&topo, &chains, 0),
        )
        .unwrap();
        let old = project_frame(&cam, &frame);
        let new = project_frame(&cam, &scaled.frames[0]);
        let anchors = overlay_anchors(&topo, &[hand()], &old, &new);
        let wrist = topo.joint_index("left_wrist").unwrap();
        assert_eq!(anchors[0].old, old.point(wrist));
        assert_eq!(anchors[0].new, new.point(wrist));
        assert!((anchors[0].scale - 1.5).abs() < 0.05);
    }
}
