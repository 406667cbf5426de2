#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use poseforge::adaptation::project_frame;
use poseforge::camera::CameraModel;
use poseforge::formats::{keypoints_to_json, KeypointSet, PoseDocument};
use poseforge::skeleton::{PoseFrame, PoseSequence, Vec3};
use poseforge::synthetic::random_pose;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_poseforge"));
    cmd.env_remove("POSEFORGE_JOBS");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn walking_sequence(id: &str, seed: u64, frames: usize, root: Vec3) -> PoseSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PoseSequence {
        frames: (0..frames)
            .map(|t| random_pose(&mut rng, root + Vec3::new(12.0 * t as f64, 0.0, 0.0), 20.0))
            .collect(),
        fps: 25.0,
        subject_id: id.into(),
    }
}

pub fn write_pose(path: &Path, subjects: Vec<PoseSequence>) {
    let doc = PoseDocument {
        fps: 25.0,
        topology: "smpl24".into(),
        subjects,
    };
    std::fs::write(path, doc.to_json().unwrap()).unwrap();
}

/// Body keypoints of `frame` seen through `cam`, as a keypoints file.
pub fn write_reference(path: &Path, cam: &CameraModel, frame: &PoseFrame) {
    let set = KeypointSet {
        width: cam.image_size.0,
        height: cam.image_size.1,
        body: Some(project_frame(cam, frame)),
        face: None,
        left_hand: None,
        right_hand: None,
    };
    std::fs::write(path, keypoints_to_json(&[set]).unwrap()).unwrap();
}

/// Relative path → file bytes for every file below `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

pub fn stderr_error_code(output: &Output) -> String {
    let text = String::from_utf8_lossy(&output.stderr);
    let line = text.lines().last().unwrap_or_default();
    let value: serde_json::Value =
        serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"));
    value["error"]["code"].as_str().unwrap().to_string()
}
