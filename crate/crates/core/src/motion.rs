//! Motion-speed metric, body-coverage gating and motion-rich clip selection.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{root_relative, Keypoints2D, PoseSequence, SkeletonTopology};

/// Divisor applied to the summed per-frame displacement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpeedNormalization {
    /// Divide by T, the number of frames.
    #[default]
    Frames,
    /// Divide by T − 1, the number of frame pairs.
    FramesMinusOne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionStats {
    /// Millimeters per frame, summed over joints.
    pub motion_speed: f64,
    pub per_frame_speed: Vec<f64>,
    /// Share of (frame pair, joint) slots where the joint was valid in both frames.
    pub valid_joint_fraction: f64,
    pub normalization: SpeedNormalization,
}

/// Mean summed root-relative joint displacement between consecutive frames.
pub fn motion_speed(
    seq: &PoseSequence,
    topology: &SkeletonTopology,
    normalization: SpeedNormalization,
) -> Result<MotionStats> {
    if seq.len() < 2 {
        return Err(Error::TooFewFrames(seq.len()));
    }
    seq.check_against(topology)?;
    let relative = seq
        .frames
        .iter()
        .map(|f| root_relative(f, topology))
        .collect::<Result<Vec<_>>>()?;

    let n = topology.num_joints();
    let mut counted = 0usize;
    let per_frame_speed: Vec<f64> = relative
        .windows(2)
        .map(|pair| {
            let mut sum = 0.0;
            for j in 0..n {
                if let (Some(a), Some(b)) = (pair[0].joint(j), pair[1].joint(j)) {
                    sum += (b - a).norm();
                    counted += 1;
                }
            }
            sum
        })
        .collect();

    let total: f64 = per_frame_speed.iter().sum();
    let divisor = match normalization {
        SpeedNormalization::Frames => seq.len(),
        SpeedNormalization::FramesMinusOne => seq.len() - 1,
    } as f64;
    Ok(MotionStats {
        motion_speed: total / divisor,
        valid_joint_fraction: counted as f64 / (per_frame_speed.len() * n) as f64,
        per_frame_speed,
        normalization,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageLabel {
    FullBody,
    UpperBody,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageVerdict {
    pub label: CoverageLabel,
    pub visible_fraction_by_group: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageThresholds {
    /// Minimum share of frames in which a group must be fully visible.
    pub min_visible_fraction: f64,
    /// When set, points outside `[0, w) × [0, h)` count as not visible.
    pub image_size: Option<(u32, u32)>,
}

impl Default for CoverageThresholds {
    fn default() -> Self {
        CoverageThresholds {
            min_visible_fraction: 0.8,
            image_size: None,
        }
    }
}

pub const UPPER_BODY_GROUPS: [(&str, &[&str]); 3] = [
    ("head", &["head"]),
    ("shoulders", &["left_shoulder", "right_shoulder"]),
    ("hips", &["left_hip", "right_hip"]),
];

pub const LEG_GROUPS: [(&str, &[&str]); 2] = [
    ("knees", &["left_knee", "right_knee"]),
    ("ankles", &["left_ankle", "right_ankle"]),
];

/// Classifies a clip by which body groups stay visible across its frames.
pub fn coverage_check(
    seq2d: &[Keypoints2D],
    topology: &SkeletonTopology,
    thresholds: &CoverageThresholds,
) -> Result<CoverageVerdict> {
    if seq2d.is_empty() {
        return Err(Error::Empty(
            "coverage check needs at least one frame".into(),
        ));
    }
    if !(0.0..=1.0).contains(&thresholds.min_visible_fraction) {
        return Err(Error::Config(format!(
            "visibility threshold {} is outside [0, 1]",
            thresholds.min_visible_fraction
        )));
    }
    let visible = |frame: &Keypoints2D, joint: usize| match frame.point(joint) {
        None => false,
        Some(p) => match thresholds.image_size {
            None => true,
            Some((w, h)) => p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64,
        },
    };

    let mut fractions = BTreeMap::new();
    for (group, names) in UPPER_BODY_GROUPS.iter().chain(LEG_GROUPS.iter()) {
        let joints = names
            .iter()
            .map(|name| {
                topology.joint_index(name).ok_or_else(|| {
                    Error::Config(format!(
                        "topology {} has no joint named {name}",
                        topology.name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let frames = seq2d
            .iter()
            .filter(|f| joints.iter().all(|&j| visible(f, j)))
            .count();
        fractions.insert(group.to_string(), frames as f64 / seq2d.len() as f64);
    }

    let passes = |groups: &[(&str, &[&str])]| {
        groups
            .iter()
            .all(|(g, _)| fractions[*g] >= thresholds.min_visible_fraction)
    };
    let label = match (passes(&UPPER_BODY_GROUPS), passes(&LEG_GROUPS)) {
        (true, true) => CoverageLabel::FullBody,
        (true, false) => CoverageLabel::UpperBody,
        _ => CoverageLabel::Rejected,
    };
    Ok(CoverageVerdict {
        label,
        visible_fraction_by_group: fractions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    TopK(usize),
    Threshold(f64),
}

fn by_speed_then_id(a: &(&str, f64), b: &(&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Ids ordered by speed (descending, ties by id), cut by `selection`.
///
/// Top-k asks for more ids than exist return every id.
pub fn select_motion_rich<S: AsRef<str>>(
    records: &[(S, f64)],
    selection: Selection,
) -> Vec<String> {
    let mut keyed: Vec<(&str, f64)> = records.iter().map(|(id, v)| (id.as_ref(), *v)).collect();
    match selection {
        Selection::TopK(k) => {
            let k = k.min(keyed.len());
            if k == 0 {
                return Vec::new();
            }
            if k < keyed.len() {
                keyed.select_nth_unstable_by(k - 1, by_speed_then_id);
                keyed.truncate(k);
            }
        }
        Selection::Threshold(min) => keyed.retain(|(_, v)| *v >= min),
    }
    keyed.sort_unstable_by(by_speed_then_id);
    keyed.into_iter().map(|(id, _)| id.to_string()).collect()
}

/// Convenience wrapper over full stats records.
pub fn select_from_stats(records: &[(String, MotionStats)], selection: Selection) -> Vec<String> {
    let keyed: Vec<(&str, f64)> = records
        .iter()
        .map(|(id, s)| (id.as_str(), s.motion_speed))
        .collect();
    select_motion_rich(&keyed, selection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{default_topology, KeypointKind, PoseFrame, Vec2, Vec3};
    use crate::synthetic::{random_pose, standing_pose};
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(frames: Vec<PoseFrame>) -> PoseSequence {
        PoseSequence {
            frames,
            fps: 30.0,
            subject_id: "s".into(),
        }
    }

    fn speed(s: &PoseSequence) -> f64 {
        motion_speed(s, &default_topology(), SpeedNormalization::Frames)
            .unwrap()
            .motion_speed
    }

    #[test]
    fn three_frame_example() {
        let base = standing_pose(Vec3::new(0.0, 0.0, 2000.0));
        let frames: Vec<PoseFrame> = (0..3)
            .map(|t| {
                let mut f = base.clone();
                f.joints[20].x += 10.0 * t as f64;
                f
            })
            .collect();
        let s = seq(frames);
        let stats = motion_speed(&s, &default_topology(), SpeedNormalization::Frames).unwrap();
        assert_eq!(stats.motion_speed, 20.0 / 3.0);
        assert_eq!(stats.per_frame_speed, vec![10.0, 10.0]);
        assert_eq!(stats.valid_joint_fraction, 1.0);

        let mean =
            motion_speed(&s, &default_topology(), SpeedNormalization::FramesMinusOne).unwrap();
        assert_eq!(mean.motion_speed, 10.0);
    }

    #[test]
    fn static_and_rigidly_translated_clips_are_still() {
        let base = standing_pose(Vec3::new(0.0, 0.0, 2000.0));
        assert_eq!(speed(&seq(vec![base.clone(); 5])), 0.0);
        let moving: Vec<PoseFrame> = (0..5)
            .map(|t| {
                let shift = Vec3::new(t as f64 * 7.0, -3.0 * t as f64, 11.0);
                PoseFrame::new(
                    base.joints.iter().map(|p| p + shift).collect(),
                    base.valid.clone(),
                )
            })
            .collect();
        assert!(speed(&seq(moving)) < 1e-9);
    }

    #[test]
    fn errors_on_short_or_rootless_clips() {
        let topo = default_topology();
        let base = standing_pose(Vec3::new(0.0, 0.0, 2000.0));
        assert!(matches!(
            motion_speed(&seq(vec![base.clone()]), &topo, SpeedNormalization::Frames),
            Err(Error::TooFewFrames(1))
        ));
        let mut rootless = base.clone();
        rootless.valid[0] = false;
        assert!(matches!(
            motion_speed(
                &seq(vec![base, rootless]),
                &topo,
                SpeedNormalization::Frames
            ),
            Err(Error::InvalidRoot(0))
        ));
    }

    #[test]
    fn joints_missing_in_either_frame_are_skipped() {
        let base = standing_pose(Vec3::new(0.0, 0.0, 2000.0));
        let mut a = base.clone();
        let mut b = base.clone();
        b.joints[20].x += 50.0;
        b.joints[21].x += 30.0;
        a.valid[20] = false;
        let stats = motion_speed(
            &seq(vec![a, b]),
            &default_topology(),
            SpeedNormalization::Frames,
        )
        .unwrap();
        assert_eq!(stats.per_frame_speed, vec![30.0]);
        assert_eq!(stats.valid_joint_fraction, 23.0 / 24.0);
    }

    fn random_seq(seed: u64, frames: usize) -> PoseSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        seq((0..frames)
            .map(|t| random_pose(&mut rng, Vec3::new(t as f64 * 5.0, 0.0, 2500.0), 30.0))
            .collect())
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn invariant_to_rigid_motion(seed in any::<u64>(), axis in prop::array::uniform3(-1.0f64..1.0),
                                     angle in -3.1f64..3.1, shift in prop::array::uniform3(-1e3f64..1e3)) {
            prop_assume!(axis.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let s = random_seq(seed, 6);
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::from(axis)), angle);
            let moved = seq(s.frames.iter().map(|f| PoseFrame::new(
                f.joints.iter().map(|p| rot * p + Vec3::from(shift)).collect(), f.valid.clone())).collect());
            prop_assert!(rel_close(speed(&s), speed(&moved), 1e-9));
        }

        #[test]
        fn scales_linearly(seed in any::<u64>(), c in 0.01f64..100.0) {
            let s = random_seq(seed, 5);
            let scaled = seq(s.frames.iter().map(|f| PoseFrame::new(
                f.joints.iter().map(|p| p * c).collect(), f.valid.clone())).collect());
            prop_assert!(rel_close(speed(&scaled), c * speed(&s), 1e-9));
        }

        #[test]
        fn reversal_keeps_speed(seed in any::<u64>()) {
            let s = random_seq(seed, 7);
            let mut reversed = s.clone();
            reversed.frames.reverse();
            prop_assert!(rel_close(speed(&s), speed(&reversed), 1e-12));
        }

        #[test]
        fn entries_are_non_negative(seed in any::<u64>()) {
            let stats = motion_speed(&random_seq(seed, 4), &default_topology(), SpeedNormalization::Frames).unwrap();
            prop_assert!(stats.motion_speed >= 0.0);
            prop_assert!(stats.per_frame_speed.iter().all(|v| *v >= 0.0));
            let sum: f64 = stats.per_frame_speed.iter().sum();
            prop_assert!(rel_close(stats.motion_speed, sum / 4.0, 1e-15));
        }

        #[test]
        fn selection_ignores_input_order(values in prop::collection::vec((0u8..20, 0u8..5), 0..60),
                                         k in 0usize..70, shuffle_seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let records: Vec<(String, f64)> = values.iter().enumerate()
                .map(|(i, (tag, v))| (format!("clip{tag}-{i}"), *v as f64)).collect();
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
            prop_assert_eq!(select_motion_rich(&records, Selection::TopK(k)),
                            select_motion_rich(&shuffled, Selection::TopK(k)));
            prop_assert_eq!(select_motion_rich(&records, Selection::Threshold(2.0)),
                            select_motion_rich(&shuffled, Selection::Threshold(2.0)));
        }
    }

    #[test]
    fn selection_examples() {
        let records = vec![
            ("b".to_string(), 3.0),
            ("a".to_string(), 3.0),
            ("c".to_string(), 9.0),
            ("d".to_string(), 0.0),
        ];
        assert_eq!(
            select_motion_rich(&records, Selection::TopK(4)),
            ["c", "a", "b", "d"]
        );
        assert_eq!(select_motion_rich(&records, Selection::TopK(2)), ["c", "a"]);
        assert_eq!(select_motion_rich(&records, Selection::TopK(9)).len(), 4);
        assert!(select_motion_rich(&records, Selection::TopK(0)).is_empty());
        assert_eq!(
            select_motion_rich(&records, Selection::Threshold(0.0)).len(),
            4
        );
        assert_eq!(
            select_motion_rich(&records, Selection::Threshold(3.0)),
            ["c", "a", "b"]
        );
    }

    fn body(valid: impl Fn(usize) -> bool) -> Keypoints2D {
        Keypoints2D::new(
            KeypointKind::Body,
            (0..24).map(|j| Vec2::new(10.0 * j as f64, 5.0)).collect(),
            (0..24).map(valid).collect(),
        )
    }

    #[test]
    fn coverage_labels() {
        let topo = default_topology();
        let th = CoverageThresholds::default();
        let full = vec![body(|_| true); 10];
        assert_eq!(
            coverage_check(&full, &topo, &th).unwrap().label,
            CoverageLabel::FullBody
        );

        let legless: Vec<usize> = [
            "left_knee",
            "right_knee",
            "left_ankle",
            "right_ankle",
            "left_foot",
            "right_foot",
        ]
        .iter()
        .map(|n| topo.joint_index(n).unwrap())
        .collect();
        let upper = vec![body(|j| !legless.contains(&j)); 10];
        let verdict = coverage_check(&upper, &topo, &th).unwrap();
        assert_eq!(verdict.label, CoverageLabel::UpperBody);
        assert_eq!(verdict.visible_fraction_by_group["knees"], 0.0);
        assert_eq!(verdict.visible_fraction_by_group["head"], 1.0);

        let hand = topo.joint_index("left_hand").unwrap();
        let hand_only = vec![body(|j| j == hand); 10];
        assert_eq!(
            coverage_check(&hand_only, &topo, &th).unwrap().label,
            CoverageLabel::Rejected
        );

        // head visible in 7 of 10 frames falls below 80%
        let head = topo.joint_index("head").unwrap();
        let flaky: Vec<Keypoints2D> = (0..10).map(|t| body(move |j| j != head || t < 7)).collect();
        assert_eq!(
            coverage_check(&flaky, &topo, &th).unwrap().label,
            CoverageLabel::Rejected
        );

        let cropped = CoverageThresholds {
            image_size: Some((100, 100)),
            ..th.clone()
        };
        assert_eq!(
            coverage_check(&full, &topo, &cropped).unwrap().label,
            CoverageLabel::Rejected
        );

        assert!(matches!(
            coverage_check(&[], &topo, &th),
            Err(Error::Empty(_))
        ));
    }
}
