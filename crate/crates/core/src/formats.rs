//! JSON file formats and input validation.
//!
//! Pose file:
//! `{"fps": 30, "topology": "smpl24", "subjects": [{"id": "a", "frames": [[[x, y, z] | null, ...], ...]}]}`
//!
//! 2D keypoints file (one object, or an array of them with one per frame):
//! `{"width": 512, "height": 512, "body": [[x, y] | null, ...], "face": [...], "left_hand": [...], "right_hand": [...]}`

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::skeleton::{
    default_topology, validate_pose, KeypointKind, Keypoints2D, PoseFrame, PoseSequence,
    SkeletonTopology, Vec2, Vec3, SMPL24_NAME,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PoseDocument {
    pub fps: f64,
    pub topology: String,
    pub subjects: Vec<PoseSequence>,
}

#[derive(Serialize, Deserialize)]
struct RawPoseFile {
    fps: f64,
    topology: String,
    subjects: Vec<RawSubject>,
}

#[derive(Serialize, Deserialize)]
struct RawSubject {
    id: String,
    frames: Vec<Vec<Option<[f64; 3]>>>,
}

/// Byte offset of a serde_json error position (1-based line and column).
pub fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Where a parse error occurred; input that ends early reports its length.
pub fn error_offset(text: &str, e: &serde_json::Error) -> usize {
    if e.is_eof() {
        text.len()
    } else {
        byte_offset(text, e.line(), e.column())
    }
}

fn parse_error(text: &str, e: &serde_json::Error) -> Error {
    Error::Schema(format!("{e} (byte offset {})", error_offset(text, e)))
}

/// Looks up a topology by name among the built-in one and an optional custom one.
pub fn resolve_topology(name: &str, custom: Option<&SkeletonTopology>) -> Result<SkeletonTopology> {
    match custom {
        Some(t) if t.name == name => Ok(t.clone()),
        _ if name == SMPL24_NAME => Ok(default_topology()),
        _ => Err(Error::Schema(format!("unknown topology {name:?}"))),
    }
}

impl PoseDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawPoseFile = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
        if !(raw.fps.is_finite() && raw.fps > 0.0) {
            return Err(Error::Schema(format!(
                "fps must be positive, got {}",
                raw.fps
            )));
        }
        let subjects = raw
            .subjects
            .into_iter()
            .map(|s| PoseSequence {
                frames: s
                    .frames
                    .into_iter()
                    .map(|joints| {
                        let valid = joints.iter().map(Option::is_some).collect();
                        let joints = joints
                            .into_iter()
                            .map(|p| p.map(Vec3::from).unwrap_or_else(Vec3::zeros))
                            .collect();
                        PoseFrame::new(joints, valid)
                    })
                    .collect(),
                fps: raw.fps,
                subject_id: s.id,
            })
            .collect();
        Ok(PoseDocument {
            fps: raw.fps,
            topology: raw.topology,
            subjects,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let raw = RawPoseFile {
            fps: self.fps,
            topology: self.topology.clone(),
            subjects: self
                .subjects
                .iter()
                .map(|s| RawSubject {
                    id: s.subject_id.clone(),
                    frames: s
                        .frames
                        .iter()
                        .map(|f| {
                            (0..f.len())
                                .map(|j| {
                                    f.joint(j)
                                        .filter(|p| p.iter().all(|v| v.is_finite()))
                                        .map(|p| [p.x, p.y, p.z])
                                })
                                .collect()
                        })
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&raw)?)
    }

    /// Checks the document against its topology, returning the topology.
    pub fn check(&self, custom: Option<&SkeletonTopology>) -> Result<SkeletonTopology> {
        let topology = resolve_topology(&self.topology, custom)?;
        if self.subjects.is_empty() {
            return Err(Error::Empty("pose file has no subjects".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.subjects {
            if !ids.insert(s.subject_id.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate subject id {:?}",
                    s.subject_id
                )));
            }
            s.check_against(&topology)?;
        }
        Ok(topology)
    }

    /// Subjects sorted by id.
    pub fn sorted_subjects(&self) -> Vec<&PoseSequence> {
        let mut s: Vec<&PoseSequence> = self.subjects.iter().collect();
        s.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        s
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct RawKeypoints {
    width: u32,
    height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    body: Option<Vec<Option<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    face: Option<Vec<Option<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left_hand: Option<Vec<Option<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right_hand: Option<Vec<Option<[f64; 2]>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawKeypointDoc {
    One(RawKeypoints),
    Many(Vec<RawKeypoints>),
}

/// 2D keypoints of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawKeypoints", into = "RawKeypoints")]
pub struct KeypointSet {
    pub width: u32,
    pub height: u32,
    pub body: Option<Keypoints2D>,
    pub face: Option<Keypoints2D>,
    pub left_hand: Option<Keypoints2D>,
    pub right_hand: Option<Keypoints2D>,
}

fn to_keypoints(kind: KeypointKind, raw: Option<Vec<Option<[f64; 2]>>>) -> Option<Keypoints2D> {
    raw.map(|points| {
        let valid = points.iter().map(Option::is_some).collect();
        let points = points
            .into_iter()
            .map(|p| p.map(Vec2::from).unwrap_or_else(Vec2::zeros))
            .collect();
        Keypoints2D::new(kind, points, valid)
    })
}

fn from_keypoints(kp: &Option<Keypoints2D>) -> Option<Vec<Option<[f64; 2]>>> {
    kp.as_ref().map(|k| {
        (0..k.len())
            .map(|i| k.point(i).map(|p| [p.x, p.y]))
            .collect()
    })
}

impl From<RawKeypoints> for KeypointSet {
    fn from(raw: RawKeypoints) -> Self {
        KeypointSet::from_raw(raw)
    }
}

impl From<KeypointSet> for RawKeypoints {
    fn from(set: KeypointSet) -> Self {
        set.to_raw()
    }
}

impl KeypointSet {
    fn from_raw(raw: RawKeypoints) -> Self {
        KeypointSet {
            width: raw.width,
            height: raw.height,
            body: to_keypoints(KeypointKind::Body, raw.body),
            face: to_keypoints(KeypointKind::Face, raw.face),
            left_hand: to_keypoints(KeypointKind::LeftHand, raw.left_hand),
            right_hand: to_keypoints(KeypointKind::RightHand, raw.right_hand),
        }
    }

    fn to_raw(&self) -> RawKeypoints {
        RawKeypoints {
            width: self.width,
            height: self.height,
            body: from_keypoints(&self.body),
            face: from_keypoints(&self.face),
            left_hand: from_keypoints(&self.left_hand),
            right_hand: from_keypoints(&self.right_hand),
        }
    }

    /// Face and hand groups, in that order.
    pub fn overlays(&self) -> Vec<Keypoints2D> {
        [&self.face, &self.left_hand, &self.right_hand]
            .into_iter()
            .flatten()
            .cloned()
            .collect()
    }

    /// Rebuilds a set from overlay groups, keeping size and body.
    pub fn with_overlays(&self, overlays: Vec<Keypoints2D>) -> Self {
        let mut out = KeypointSet {
            face: None,
            left_hand: None,
            right_hand: None,
            ..self.clone()
        };
        for group in overlays {
            match group.kind {
                KeypointKind::Face => out.face = Some(group),
                KeypointKind::LeftHand => out.left_hand = Some(group),
                KeypointKind::RightHand => out.right_hand = Some(group),
                KeypointKind::Body => out.body = Some(group),
            }
        }
        out
    }

    pub fn body_or_err(&self) -> Result<&Keypoints2D> {
        self.body
            .as_ref()
            .ok_or_else(|| Error::Schema("keypoints file has no body keypoints".into()))
    }
}

/// Parses a keypoints file; a single object yields one set.
pub fn parse_keypoints(text: &str) -> Result<Vec<KeypointSet>> {
    let doc: RawKeypointDoc = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
    let raws = match doc {
        RawKeypointDoc::One(r) => vec![r],
        RawKeypointDoc::Many(v) => v,
    };
    if raws.is_empty() {
        return Err(Error::Empty("keypoints file is an empty array".into()));
    }
    Ok(raws.into_iter().map(KeypointSet::from_raw).collect())
}

pub fn keypoints_to_json(sets: &[KeypointSet]) -> Result<String> {
    let raws: Vec<RawKeypoints> = sets.iter().map(KeypointSet::to_raw).collect();
    Ok(serde_json::to_string(&raws)?)
}

pub fn parse_topology(text: &str) -> Result<SkeletonTopology> {
    let topology: SkeletonTopology =
        serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
    topology.validate()?;
    Ok(topology)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub byte_offset: Option<usize>,
}

impl Violation {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Violation {
            code: code.into(),
            message: message.into(),
            byte_offset: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Pose,
    Keypoints,
    Topology,
    Plan,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub path: PathBuf,
    pub kind: FileKind,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub files: Vec<FileReport>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.files.iter().all(|f| f.violations.is_empty())
    }
}

fn classify(value: &Value) -> FileKind {
    let has = |key: &str| value.get(key).is_some();
    match value {
        Value::Array(items) if items.first().is_some_and(|v| v.get("width").is_some()) => {
            FileKind::Keypoints
        }
        _ if has("subjects") => FileKind::Pose,
        _ if has("joint_names") => FileKind::Topology,
        _ if has("schema_version") && has("positions") => FileKind::Plan,
        _ if has("width") && has("height") => FileKind::Keypoints,
        _ => FileKind::Unknown,
    }
}

fn pose_violations(text: &str, custom: Option<&SkeletonTopology>) -> Vec<Violation> {
    if let Err(e) = serde_json::from_str::<RawPoseFile>(text) {
        return vec![json_violation(text, &e)];
    }
    let doc = match PoseDocument::from_json(text) {
        Ok(doc) => doc,
        Err(e) => return vec![Violation::new("fps", e.to_string())],
    };
    let topology = match resolve_topology(&doc.topology, custom) {
        Ok(t) => t,
        Err(e) => return vec![Violation::new("unknown-topology", e.to_string())],
    };
    let mut out = Vec::new();
    if doc.subjects.is_empty() {
        out.push(Violation::new("no-subjects", "pose file has no subjects"));
    }
    let mut ids = BTreeSet::new();
    let n = topology.num_joints();
    for s in &doc.subjects {
        if !ids.insert(s.subject_id.clone()) {
            out.push(Violation::new(
                "duplicate-subject",
                format!("subject id {:?} repeats", s.subject_id),
            ));
        }
        if s.frames.is_empty() {
            out.push(Violation::new(
                "no-frames",
                format!("subject {} has no frames", s.subject_id),
            ));
        }
        for (t, frame) in s.frames.iter().enumerate() {
            if frame.len() != n {
                out.push(Violation::new(
                    "joint-count",
                    format!(
                        "subject {} frame {t} has {} joints, topology {} expects {n}",
                        s.subject_id,
                        frame.len(),
                        topology.name
                    ),
                ));
                continue;
            }
            if let Ok(found) = validate_pose(&topology, frame) {
                out.extend(found.into_iter().map(|v| {
                    Violation::new("pose", format!("subject {} frame {t}: {v}", s.subject_id))
                }));
            }
        }
    }
    let lengths: BTreeSet<usize> = doc.subjects.iter().map(PoseSequence::len).collect();
    if lengths.len() > 1 {
        out.push(Violation::new(
            "frame-count",
            format!("subjects have differing frame counts {lengths:?}"),
        ));
    }
    out
}

fn json_violation(text: &str, e: &serde_json::Error) -> Violation {
    Violation {
        code: "parse".into(),
        message: e.to_string(),
        byte_offset: Some(error_offset(text, e)),
    }
}

fn keypoint_violations(text: &str) -> Vec<Violation> {
    if let Err(e) = serde_json::from_str::<RawKeypointDoc>(text) {
        return vec![json_violation(text, &e)];
    }
    match parse_keypoints(text) {
        Err(e) => vec![Violation::new("empty", e.to_string())],
        Ok(sets) => {
            let mut out = Vec::new();
            for (i, s) in sets.iter().enumerate() {
                if s.width == 0 || s.height == 0 {
                    out.push(Violation::new(
                        "image-size",
                        format!("entry {i} has a zero image size"),
                    ));
                }
                let expected = [
                    (&s.face, None),
                    (&s.left_hand, Some(21)),
                    (&s.right_hand, Some(21)),
                ];
                for (group, count) in expected {
                    if let (Some(g), Some(n)) = (group, count) {
                        if g.len() != n {
                            out.push(Violation::new(
                                "keypoint-count",
                                format!(
                                    "entry {i} {:?} has {} points, expected {n}",
                                    g.kind,
                                    g.len()
                                ),
                            ));
                        }
                    }
                }
            }
            out
        }
    }
}

/// Parses every file and lists all violations found; unreadable files are
/// reported rather than raised.
pub fn validate_inputs(paths: &[PathBuf], custom: Option<&SkeletonTopology>) -> ValidationReport {
    let files = paths
        .iter()
        .map(|path| {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    return FileReport {
                        path: path.clone(),
                        kind: FileKind::Unknown,
                        violations: vec![Violation::new("unreadable", e.to_string())],
                    }
                }
            };
            let value: Value = match serde_json::from_str(&text) {
                Ok(v) => v,
                Err(e) => {
                    return FileReport {
                        path: path.clone(),
                        kind: FileKind::Unknown,
                        violations: vec![json_violation(&text, &e)],
                    }
                }
            };
            let kind = classify(&value);
            let violations = match kind {
                FileKind::Pose => pose_violations(&text, custom),
                FileKind::Keypoints => keypoint_violations(&text),
                FileKind::Topology => match parse_topology(&text) {
                    Ok(_) => Vec::new(),
                    Err(e) => vec![Violation::new("topology", e.to_string())],
                },
                FileKind::Plan => match crate::layout::plan_from_json(&text) {
                    Ok(_) => Vec::new(),
                    Err(e) => vec![Violation::new("plan", e.to_string())],
                },
                FileKind::Unknown => vec![Violation::new(
                    "unknown-format",
                    "file matches no known schema",
                )],
            };
            FileReport {
                path: path.clone(),
                kind,
                violations,
            }
        })
        .collect();
    ValidationReport { files }
}
