//! Synthetic poses for tests, benchmarks and demos.

use rand::Rng;

use crate::skeleton::{default_topology, PoseFrame, Vec3};

/// Pelvis-relative rest offsets of the built-in topology in millimeters
/// (x right in the image, y down, z away from the camera).
const STANDING_OFFSETS: [[f64; 3]; 24] = [
    [0.0, 0.0, 0.0],
    [90.0, 60.0, 0.0],
    [-90.0, 60.0, 0.0],
    [0.0, -110.0, 10.0],
    [100.0, 450.0, 20.0],
    [-100.0, 450.0, -20.0],
    [0.0, -240.0, 15.0],
    [105.0, 850.0, 40.0],
    [-105.0, 850.0, 30.0],
    [0.0, -380.0, 10.0],
    [115.0, 900.0, -80.0],
    [-115.0, 900.0, -80.0],
    [0.0, -560.0, 0.0],
    [70.0, -500.0, 0.0],
    [-70.0, -500.0, 0.0],
    [0.0, -680.0, -20.0],
    [180.0, -510.0, 5.0],
    [-180.0, -510.0, 5.0],
    [280.0, -300.0, 30.0],
    [-280.0, -300.0, 30.0],
    [360.0, -80.0, 60.0],
    [-360.0, -80.0, 50.0],
    [390.0, 0.0, 70.0],
    [-390.0, 0.0, 65.0],
];

/// A standing figure on the built-in topology with its pelvis at `root`.
pub fn standing_pose(root: Vec3) -> PoseFrame {
    PoseFrame::all_valid(
        STANDING_OFFSETS
            .iter()
            .map(|o| root + Vec3::new(o[0], o[1], o[2]))
            .collect(),
    )
}

/// The standing figure with every bone direction rotated by up to
/// `max_angle_deg` about a random axis; bone lengths are kept.
pub fn random_pose(rng: &mut impl Rng, root: Vec3, max_angle_deg: f64) -> PoseFrame {
    let topo = default_topology();
    let rest = standing_pose(Vec3::zeros());
    let mut joints = vec![Vec3::zeros(); 24];
    joints[topo.root_index] = root;
    for bone in topo.bones_root_first() {
        let offset = rest.joints[bone.child] - rest.joints[bone.parent];
        let axis = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(0.0..=max_angle_deg).to_radians();
        let rotated = match nalgebra::Unit::try_new(axis, 1e-6) {
            Some(axis) => nalgebra::Rotation3::from_axis_angle(&axis, angle) * offset,
            None => offset,
        };
        joints[bone.child] = joints[bone.parent] + rotated;
    }
    PoseFrame::all_valid(joints)
}
