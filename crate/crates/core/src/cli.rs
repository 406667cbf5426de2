//! Command-line front end.
//!
//! Every subcommand reads JSON inputs, writes its artifacts under an output
//! directory (or to stdout) and reports failures as
//! `{"error": {"code": ..., "message": ...}}` on stderr.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::{
    align_overlays, overlay_anchors, project_frame, rescale_skeleton, retarget,
    sample_camera_jitter, sample_scales, AugmentConfig, CameraJitter, RetargetOptions,
    RetargetOutcome, SampledJitter, ScaleParams, DEFAULT_AUGMENTATION_RATE,
};
use crate::camera::{CameraModel, FitConfig, FitReport};
use crate::error::{Error, Result};
use crate::formats::{
    parse_keypoints, parse_topology, read_text, validate_inputs, write_file, KeypointSet,
    PoseDocument,
};
use crate::layout::{build_plan, plan_to_json, LayoutDims, RotaryParams, DEFAULT_ROPE_BASE};
use crate::motion::{motion_speed, select_motion_rich, MotionStats, Selection, SpeedNormalization};
use crate::renderer::{
    downsample, draw_overlays, encode_png_depth, encode_png_rgb, render_sequence, RasterFrame,
    RenderStyle,
};
use crate::skeleton::{ChainKind, Keypoints2D, PoseSequence, SkeletonTopology};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "poseforge",
    version,
    about = "Pose conditioning: retarget, augment, render, curate, lay out tokens"
)]
pub struct Cli {
    /// Worker threads for rendering and curation (default: all cores).
    #[arg(long, global = true, env = "POSEFORGE_JOBS")]
    pub jobs: Option<usize>,
    /// Custom topology JSON, used when a pose file names it.
    #[arg(long, global = true)]
    pub topology: Option<PathBuf>,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a pose file to PNG frames and a manifest.
    Render(RenderCmd),
    /// Fit the reference camera and adapt limb proportions.
    Retarget(RetargetCmd),
    /// Randomly rescale bones and jitter the camera.
    Augment(AugmentCmd),
    /// Print motion speed per subject as JSON.
    MotionStats(MotionStatsCmd),
    /// Print the ids of the most motion-rich clips of a JSONL manifest.
    Curate(CurateCmd),
    /// Write a token layout plan.
    Layout(LayoutCmd),
    /// Retarget, optionally augment, render and lay out in one go.
    Pipeline(PipelineCmd),
    /// Check input files against their schemas.
    Validate(ValidateCmd),
    /// Re-render the frames described by a render manifest.
    Replay(ReplayCmd),
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected two comma-separated numbers, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn parse_jitter(s: &str) -> std::result::Result<CameraJitter, String> {
    if s == "none" {
        return Ok(CameraJitter::none());
    }
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    match values[..] {
        [rotation_deg, fmin, fmax, offset_fraction] => Ok(CameraJitter {
            rotation_deg,
            focal_range: (fmin, fmax),
            offset_fraction,
        }),
        _ => Err("expected \"none\" or DEG,FOCAL_MIN,FOCAL_MAX,OFFSET_FRACTION".into()),
    }
}

fn parse_split(s: &str) -> std::result::Result<[usize; 3], String> {
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    values
        .try_into()
        .map_err(|_| "expected three comma-separated counts".to_string())
}

#[derive(Debug, Clone, Args)]
pub struct StyleArgs {
    /// Output width before downsampling (default: camera or reference size, else 512).
    #[arg(long)]
    pub width: Option<u32>,
    /// Output height before downsampling.
    #[arg(long)]
    pub height: Option<u32>,
    /// Downsampling ratio applied after rendering (1 or 2).
    #[arg(long, default_value_t = 1)]
    pub ratio: u32,
    /// Bone radius in millimeters.
    #[arg(long, default_value_t = 25.0)]
    pub radius: f64,
    /// Voxel size in millimeters (default: radius / 4).
    #[arg(long)]
    pub cell_size: Option<f64>,
    /// Radius of face and hand keypoint disks, in pixels.
    #[arg(long, default_value_t = 3.0)]
    pub point_radius: f64,
    /// Width of hand skeleton strokes, in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub line_width: f64,
    /// Also write 16-bit depth PNGs (millimeters, 0 = empty).
    #[arg(long)]
    pub depth: bool,
}

impl StyleArgs {
    fn style(&self, resolution: (u32, u32), subjects: &[&PoseSequence]) -> RenderStyle {
        RenderStyle {
            bone_radius: self.radius,
            overlay_point_radius: self.point_radius,
            overlay_line_width: self.line_width,
            resolution,
            downsample_ratio: self.ratio,
            cell_size: self.cell_size,
            ..Default::default()
        }
        .with_subjects(subjects.iter().map(|s| s.subject_id.as_str()))
    }

    fn resolution(&self, fallback: (u32, u32)) -> (u32, u32) {
        (
            self.width.unwrap_or(fallback.0),
            self.height.unwrap_or(fallback.1),
        )
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Iteration cap for the camera fit.
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    /// Relative loss decrease below which the fit stops.
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    /// Fit without the 2D pixel offset.
    #[arg(long)]
    pub no_offset: bool,
    /// Bounds for chain ratios, as LO,HI.
    #[arg(long, value_parser = parse_pair, default_value = "0.5,2.0")]
    pub clamp: (f64, f64),
    /// Only fit the camera, keep the driving proportions.
    #[arg(long)]
    pub no_proportions: bool,
}

impl FitArgs {
    fn options(&self) -> RetargetOptions {
        RetargetOptions {
            fit: FitConfig {
                max_iterations: self.max_iterations,
                tolerance: self.tolerance,
                use_offset: !self.no_offset,
                ..Default::default()
            },
            clamp: self.clamp,
            adjust_proportions: !self.no_proportions,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AugmentArgs {
    /// Seed for every random draw of the run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bone scale range, as LO,HI.
    #[arg(long, value_parser = parse_pair, default_value = "0.7,1.4")]
    pub scale_range: (f64, f64),
    /// Camera jitter as DEG,FOCAL_MIN,FOCAL_MAX,OFFSET_FRACTION, or "none".
    #[arg(long, value_parser = parse_jitter, default_value = "5,0.9,1.1,0.05")]
    pub camera_jitter: CameraJitter,
}

impl AugmentArgs {
    fn config(&self, rate: f64) -> AugmentConfig {
        AugmentConfig {
            augmentation_rate: rate,
            scale_range: self.scale_range,
            camera_jitter: self.camera_jitter.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct LayoutArgs {
    /// Pixels per token edge when deriving the token grid from frame size.
    #[arg(long, default_value_t = 16)]
    pub token_stride: u32,
    /// Column shift of pose tokens (default: twice the grid width).
    #[arg(long)]
    pub shift_w: Option<usize>,
    /// Attention head dimension the rotary table is built for.
    #[arg(long, default_value_t = 128)]
    pub head_dim: usize,
    /// Rotary frequency base.
    #[arg(long, default_value_t = DEFAULT_ROPE_BASE)]
    pub rope_base: f64,
    /// Frequency pairs for t,h,w (default: even split, remainder to t).
    #[arg(long, value_parser = parse_split)]
    pub axis_split: Option<[usize; 3]>,
}

impl LayoutArgs {
    fn rotary(&self) -> RotaryParams {
        let mut params = RotaryParams::for_head_dim(self.head_dim);
        params.base = self.rope_base;
        if let Some(split) = self.axis_split {
            params.axis_split = split;
        }
        params
    }
}

#[derive(Debug, Args)]
pub struct RenderCmd {
    /// Pose JSON file.
    pub pose: PathBuf,
    /// Output directory for frames and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Camera JSON (default: focal length = width, centered).
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Keypoints file with face/hand overlays (one entry, or one per frame).
    #[arg(long)]
    pub overlays: Option<PathBuf>,
    #[command(flatten)]
    pub style: StyleArgs,
}

#[derive(Debug, Args)]
pub struct RetargetCmd {
    /// Pose JSON file.
    pub pose: PathBuf,
    /// Reference 2D keypoints (one entry, or one per subject in id order).
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Output directory for the adapted poses and the fit report.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct AugmentCmd {
    /// Pose JSON file.
    pub pose: PathBuf,
    /// Output directory for the augmented poses, the jittered camera and the draws.
    #[arg(long)]
    pub out: PathBuf,
    /// Camera JSON to jitter (default: focal length = width, centered).
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Image size of the default camera.
    #[arg(long, default_value_t = 512)]
    pub width: u32,
    #[arg(long, default_value_t = 512)]
    pub height: u32,
    #[command(flatten)]
    pub augment: AugmentArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormalizeArg {
    Frames,
    FramesMinusOne,
}

impl From<NormalizeArg> for SpeedNormalization {
    fn from(n: NormalizeArg) -> Self {
        match n {
            NormalizeArg::Frames => SpeedNormalization::Frames,
            NormalizeArg::FramesMinusOne => SpeedNormalization::FramesMinusOne,
        }
    }
}

#[derive(Debug, Args)]
pub struct MotionStatsCmd {
    /// Pose JSON file.
    pub pose: PathBuf,
    /// Divide by the frame count or by the number of transitions.
    #[arg(long, value_enum, default_value = "frames")]
    pub normalize: NormalizeArg,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["top_k", "threshold"]))]
pub struct CurateCmd {
    /// JSONL with one `{"id": ..., "pose": ...}` per line; paths are relative to the manifest.
    pub manifest: PathBuf,
    /// Keep the k fastest clips.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Keep clips with speed at or above this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Divide by the frame count or by the number of transitions.
    #[arg(long, value_enum, default_value = "frames")]
    pub normalize: NormalizeArg,
}

#[derive(Debug, Args)]
pub struct LayoutCmd {
    /// Number of video frames (latent time steps).
    #[arg(long)]
    pub frames: usize,
    /// Token grid height.
    #[arg(long)]
    pub height: usize,
    /// Token grid width.
    #[arg(long)]
    pub width: usize,
    /// Pose pooling ratio.
    #[arg(long, default_value_t = 1)]
    pub ratio: usize,
    /// Leave out pose tokens.
    #[arg(long)]
    pub no_pose: bool,
    /// Plan JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub layout: LayoutArgs,
}

#[derive(Debug, Args)]
pub struct PipelineCmd {
    /// Pose JSON file.
    pub pose: PathBuf,
    /// Reference 2D keypoints (one entry, or one per subject in id order).
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Keypoints file with face/hand overlays (one entry, or one per frame).
    #[arg(long)]
    pub overlays: Option<PathBuf>,
    /// Run the augmentation stage.
    #[arg(long)]
    pub augment: bool,
    /// Probability that the augmentation stage applies.
    #[arg(long, default_value_t = DEFAULT_AUGMENTATION_RATE)]
    pub augment_rate: f64,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub aug: AugmentArgs,
    #[command(flatten)]
    pub style: StyleArgs,
    #[command(flatten)]
    pub layout: LayoutArgs,
}

#[derive(Debug, Args)]
pub struct ValidateCmd {
    /// Pose, keypoint, camera or topology files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayCmd {
    /// manifest.json written by render or pipeline.
    pub manifest: PathBuf,
    /// Output directory for the re-rendered frames.
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything needed to reproduce a render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderManifest {
    pub schema_version: u32,
    /// Pose file, relative to the manifest directory.
    pub pose_file: String,
    pub pose_sha256: String,
    pub topology: SkeletonTopology,
    pub camera: CameraModel,
    pub style: RenderStyle,
    pub output_resolution: (u32, u32),
    /// Face/hand overlays per frame; empty when none were drawn.
    pub overlays: Vec<KeypointSet>,
    pub frames: Vec<String>,
    pub depth_frames: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn load_custom_topology(cli: &Cli) -> Result<Option<SkeletonTopology>> {
    cli.topology
        .as_deref()
        .map(|p| parse_topology(&read_text(p)?))
        .transpose()
}

fn load_pose(
    path: &Path,
    custom: Option<&SkeletonTopology>,
) -> Result<(PoseDocument, SkeletonTopology, String)> {
    let text = read_text(path)?;
    let doc = PoseDocument::from_json(&text)?;
    let topology = doc.check(custom)?;
    Ok((doc, topology, text))
}

fn load_camera(path: &Path) -> Result<CameraModel> {
    let cam: CameraModel = serde_json::from_str(&read_text(path)?)?;
    if !cam.is_valid() {
        return Err(Error::Config(format!(
            "camera in {} is not invertible",
            path.display()
        )));
    }
    Ok(cam)
}

/// One keypoint set per frame, repeating a single entry.
fn per_frame(sets: Vec<KeypointSet>, frames: usize) -> Result<Vec<KeypointSet>> {
    match sets.len() {
        1 => Ok(vec![sets[0].clone(); frames]),
        n if n == frames => Ok(sets),
        n => Err(Error::Dimension(format!(
            "{n} overlay entries for {frames} frames"
        ))),
    }
}

fn frame_count(doc: &PoseDocument) -> Result<usize> {
    let counts: std::collections::BTreeSet<usize> =
        doc.subjects.iter().map(PoseSequence::len).collect();
    match counts.len() {
        1 => Ok(*counts.first().unwrap_or(&0)),
        _ => Err(Error::Dimension(format!(
            "subjects have differing frame counts {counts:?}"
        ))),
    }
}

/// Renders, draws overlays, downsamples and encodes every frame.
/// PNG bytes of one frame plus its optional depth PNG.
type EncodedFrame = (Vec<u8>, Option<Vec<u8>>);

fn render_frames(
    manifest: &RenderManifest,
    subjects: &[PoseSequence],
) -> Result<Vec<EncodedFrame>> {
    let rasters = render_sequence(
        subjects,
        &manifest.camera,
        &manifest.topology,
        &manifest.style,
    )?;
    let write_depth = !manifest.depth_frames.is_empty();
    rasters
        .into_par_iter()
        .enumerate()
        .map(|(t, raster)| {
            let raster: RasterFrame = match manifest.overlays.get(t) {
                Some(set) => draw_overlays(&raster, &set.overlays(), &manifest.style),
                None => raster,
            };
            let small = downsample(&raster, manifest.style.downsample_ratio)?;
            let depth = write_depth.then(|| encode_png_depth(&small)).transpose()?;
            Ok((encode_png_rgb(&small)?, depth))
        })
        .collect()
}

fn frame_names(frames: usize, depth: bool) -> (Vec<String>, Vec<String>) {
    let rgb = (0..frames).map(|t| format!("frame_{t:06}.png")).collect();
    let d = if depth {
        (0..frames).map(|t| format!("depth_{t:06}.png")).collect()
    } else {
        Vec::new()
    };
    (rgb, d)
}

/// Writes frames to `frames_dir` and the manifest to `manifest_path`.
fn write_render(
    manifest: &RenderManifest,
    subjects: &[PoseSequence],
    frames_dir: &Path,
    manifest_path: Option<&Path>,
) -> Result<()> {
    let encoded = render_frames(manifest, subjects)?;
    for (t, (rgb, depth)) in encoded.iter().enumerate() {
        write_file(&frames_dir.join(&manifest.frames[t]), rgb)?;
        if let Some(depth) = depth {
            write_file(&frames_dir.join(&manifest.depth_frames[t]), depth)?;
        }
    }
    if let Some(path) = manifest_path {
        write_file(path, to_json(manifest)?)?;
    }
    log::info!("wrote {} frames to {}", encoded.len(), frames_dir.display());
    Ok(())
}

/// Path of `target` as seen from `from_dir`, using `..` where needed.
fn relative_path(from_dir: &Path, target: &Path) -> String {
    let (Ok(dir), Ok(file)) = (from_dir.canonicalize(), target.canonicalize()) else {
        return target.to_string_lossy().into_owned();
    };
    let dir: Vec<_> = dir.components().collect();
    let file: Vec<_> = file.components().collect();
    let common = dir.iter().zip(&file).take_while(|(a, b)| a == b).count();
    let mut parts: Vec<String> = vec!["..".into(); dir.len() - common];
    parts.extend(
        file[common..]
            .iter()
            .map(|c| c.as_os_str().to_string_lossy().into_owned()),
    );
    parts.join("/")
}

fn run_render(cli: &Cli, cmd: &RenderCmd) -> Result<()> {
    let custom = load_custom_topology(cli)?;
    let (doc, topology, text) = load_pose(&cmd.pose, custom.as_ref())?;
    let frames = frame_count(&doc)?;
    let base_camera = cmd.camera.as_deref().map(load_camera).transpose()?;
    let fallback = base_camera
        .as_ref()
        .map(|c| c.image_size)
        .filter(|&(w, h)| w > 0 && h > 0)
        .unwrap_or((512, 512));
    let resolution = cmd.style.resolution(fallback);
    let camera = match base_camera {
        Some(c) => c.resized(resolution.0, resolution.1),
        None => CameraModel::for_image(resolution.0, resolution.1),
    };
    let style = cmd.style.style(resolution, &doc.sorted_subjects());
    style.validate()?;
    let overlays = match &cmd.overlays {
        Some(p) => per_frame(parse_keypoints(&read_text(p)?)?, frames)?,
        None => Vec::new(),
    };
    std::fs::create_dir_all(&cmd.out).map_err(|e| Error::io(&cmd.out, e))?;
    let (rgb, depth) = frame_names(frames, cmd.style.depth);
    let manifest = RenderManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        pose_file: relative_path(&cmd.out, &cmd.pose),
        pose_sha256: sha256_hex(text.as_bytes()),
        topology,
        camera,
        output_resolution: (
            resolution.0 / style.downsample_ratio,
            resolution.1 / style.downsample_ratio,
        ),
        style,
        overlays,
        frames: rgb,
        depth_frames: depth,
    };
    write_render(
        &manifest,
        &doc.subjects,
        &cmd.out,
        Some(&cmd.out.join("manifest.json")),
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct SubjectRetargetReport {
    pub id: String,
    pub chain_ratios: std::collections::BTreeMap<ChainKind, f64>,
    pub camera: CameraModel,
    pub fit: FitReport,
    pub rounds: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RetargetReport {
    pub options: RetargetOptions,
    pub subjects: Vec<SubjectRetargetReport>,
}

struct Retargeted {
    doc: PoseDocument,
    /// Outcomes in subject id order.
    outcomes: Vec<(String, RetargetOutcome)>,
    report: RetargetReport,
    reference: Vec<KeypointSet>,
}

fn retarget_document(
    doc: &PoseDocument,
    topology: &SkeletonTopology,
    reference: Vec<KeypointSet>,
    options: &RetargetOptions,
) -> Result<Retargeted> {
    let sorted = doc.sorted_subjects();
    if reference.len() != 1 && reference.len() != sorted.len() {
        return Err(Error::Dimension(format!(
            "{} reference entries for {} subjects",
            reference.len(),
            sorted.len()
        )));
    }
    let outcomes = sorted
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let set = &reference[if reference.len() == 1 { 0 } else { i }];
            let mut outcome = retarget(s, set.body_or_err()?, topology, options)?;
            outcome.camera.image_size = (set.width, set.height);
            for w in &outcome.warnings {
                log::warn!("subject {}: {w}", s.subject_id);
            }
            Ok((s.subject_id.clone(), outcome))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = doc.clone();
    for subject in out.subjects.iter_mut() {
        if let Some((_, o)) = outcomes.iter().find(|(id, _)| *id == subject.subject_id) {
            *subject = o.sequence.clone();
        }
    }
    let report = RetargetReport {
        options: options.clone(),
        subjects: outcomes
            .iter()
            .map(|(id, o)| SubjectRetargetReport {
                id: id.clone(),
                chain_ratios: o.chain_ratios.clone(),
                camera: o.camera.clone(),
                fit: o.fit_report.clone(),
                rounds: o.rounds,
                warnings: o.warnings.clone(),
            })
            .collect(),
    };
    Ok(Retargeted {
        doc: out,
        outcomes,
        report,
        reference,
    })
}

fn run_retarget(cli: &Cli, cmd: &RetargetCmd) -> Result<()> {
    let custom = load_custom_topology(cli)?;
    let (doc, topology, _) = load_pose(&cmd.pose, custom.as_ref())?;
    let reference = parse_keypoints(&read_text(&cmd.reference)?)?;
    let result = retarget_document(&doc, &topology, reference, &cmd.fit.options())?;
    write_file(&cmd.out.join("poses.json"), result.doc.to_json()?)?;
    write_file(
        &cmd.out.join("retarget_report.json"),
        to_json(&result.report)?,
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct SubjectScales {
    pub id: String,
    pub scales: ScaleParams,
}

#[derive(Clone, Debug, Serialize)]
pub struct AugmentReport {
    pub config: AugmentConfig,
    pub applied: bool,
    pub subjects: Vec<SubjectScales>,
    pub jitter: Option<SampledJitter>,
    pub camera_before: CameraModel,
    pub camera_after: CameraModel,
}

/// Rescales every subject (in id order) and jitters the camera, all drawn
/// from one seeded stream.
fn augment_document(
    doc: &PoseDocument,
    topology: &SkeletonTopology,
    camera: &CameraModel,
    config: &AugmentConfig,
    gate: bool,
) -> Result<(PoseDocument, CameraModel, AugmentReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let applied = !gate || config.should_augment(&mut rng);
    let mut out = doc.clone();
    let mut subjects = Vec::new();
    let mut jitter = None;
    let mut cam = camera.clone();
    if applied {
        for s in doc.sorted_subjects() {
            let scales = sample_scales(topology, config, &mut rng);
            let scaled = rescale_skeleton(s, topology, &scales)?;
            if let Some(slot) = out
                .subjects
                .iter_mut()
                .find(|x| x.subject_id == s.subject_id)
            {
                *slot = scaled;
            }
            subjects.push(SubjectScales {
                id: s.subject_id.clone(),
                scales,
            });
        }
        let sampled = sample_camera_jitter(&config.camera_jitter, camera.image_size, &mut rng);
        cam = sampled.apply(camera);
        jitter = Some(sampled);
    }
    let report = AugmentReport {
        config: config.clone(),
        applied,
        subjects,
        jitter,
        camera_before: camera.clone(),
        camera_after: cam.clone(),
    };
    Ok((out, cam, report))
}

fn run_augment(cli: &Cli, cmd: &AugmentCmd) -> Result<()> {
    let custom = load_custom_topology(cli)?;
    let (doc, topology, _) = load_pose(&cmd.pose, custom.as_ref())?;
    let camera = match &cmd.camera {
        Some(p) => load_camera(p)?,
        None => CameraModel::for_image(cmd.width, cmd.height),
    };
    let (out, cam, report) =
        augment_document(&doc, &topology, &camera, &cmd.augment.config(1.0), false)?;
    write_file(&cmd.out.join("poses.json"), out.to_json()?)?;
    write_file(&cmd.out.join("camera.json"), to_json(&cam)?)?;
    write_file(&cmd.out.join("augment_report.json"), to_json(&report)?)
}

#[derive(Clone, Debug, Serialize)]
struct SubjectStats<'a> {
    id: &'a str,
    stats: MotionStats,
}

fn run_motion_stats(cli: &Cli, cmd: &MotionStatsCmd) -> Result<()> {
    let custom = load_custom_topology(cli)?;
    let (doc, topology, _) = load_pose(&cmd.pose, custom.as_ref())?;
    let stats = doc
        .sorted_subjects()
        .into_iter()
        .map(|s| {
            Ok(SubjectStats {
                id: &s.subject_id,
                stats: motion_speed(s, &topology, cmd.normalize.into())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    print!("{}", to_json(&serde_json::json!({ "subjects": stats }))?);
    Ok(())
}

#[derive(Deserialize)]
struct CurateEntry {
    id: String,
    pose: PathBuf,
}

/// Clip speed is the largest per-subject speed.
fn run_curate(cli: &Cli, cmd: &CurateCmd) -> Result<()> {
    let custom = load_custom_topology(cli)?;
    let file = std::fs::File::open(&cmd.manifest).map_err(|e| Error::io(&cmd.manifest, e))?;
    let base = cmd.manifest.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&cmd.manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CurateEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("manifest line {}: {e}", n + 1)))?;
        entries.push(entry);
    }
    let speeds = entries
        .par_iter()
        .map(|entry| {
            let (doc, topology, _) = load_pose(&base.join(&entry.pose), custom.as_ref())?;
            let mut best: f64 = 0.0;
            for s in &doc.subjects {
                best = best.max(motion_speed(s, &topology, cmd.normalize.into())?.motion_speed);
            }
            Ok((entry.id.clone(), best))
        })
        .collect::<Result<Vec<_>>>()?;
    let selection = match (cmd.top_k, cmd.threshold) {
        (Some(k), _) => Selection::TopK(k),
        (None, Some(v)) => Selection::Threshold(v),
        (None, None) => return Err(Error::Config("pass --top-k or --threshold".into())),
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for id in select_motion_rich(&speeds, selection) {
        writeln!(out, "{id}").map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn write_plan(dims: &LayoutDims, layout: &LayoutArgs, path: &Path) -> Result<()> {
    let plan = build_plan(dims)?;
    write_file(path, plan_to_json(&plan, &layout.rotary())? + "\n")
}

fn run_layout(cmd: &LayoutCmd) -> Result<()> {
    let mut dims = LayoutDims::standard(cmd.frames, cmd.height, cmd.width, cmd.ratio);
    if cmd.no_pose {
        dims.pose = None;
    } else if dims.pose.is_none() {
        return Err(Error::Dimension(format!(
            "ratio {} does not divide the {}x{} grid",
            cmd.ratio, cmd.height, cmd.width
        )));
    }
    if let Some(shift) = cmd.layout.shift_w {
        dims.shift_w = shift;
    }
    write_plan(&dims, &cmd.layout, &cmd.out)
}

/// Moves overlays from the driving skeleton's projection to the adapted one's.
fn align_frame_overlays(
    topology: &SkeletonTopology,
    sets: &[KeypointSet],
    driving: &PoseSequence,
    adapted: &PoseSequence,
    old_camera: &CameraModel,
    new_camera: &CameraModel,
) -> Result<Vec<KeypointSet>> {
    sets.iter()
        .enumerate()
        .map(|(t, set)| {
            let groups: Vec<Keypoints2D> = set.overlays();
            let old = project_frame(old_camera, &driving.frames[t]);
            let new = project_frame(new_camera, &adapted.frames[t]);
            let anchors = overlay_anchors(topology, &groups, &old, &new);
            let (aligned, warnings) = align_overlays(&groups, &anchors)?;
            for w in warnings {
                log::warn!("frame {t}: {w}");
            }
            Ok(set.with_overlays(aligned))
        })
        .collect()
}

fn run_pipeline(cli: &Cli, cmd: &PipelineCmd) -> Result<()> {
    let custom = load_custom_topology(cli)?;
    let (doc, topology, _) = load_pose(&cmd.pose, custom.as_ref())?;
    let frames = frame_count(&doc)?;
    let reference = parse_keypoints(&read_text(&cmd.reference)?)?;
    let retargeted = retarget_document(&doc, &topology, reference, &cmd.fit.options())?;
    let (first_id, first) = &retargeted.outcomes[0];
    let ref_size = (
        retargeted.reference[0].width,
        retargeted.reference[0].height,
    );
    let resolution = cmd.style.resolution(ref_size);
    let fitted_camera = first.camera.resized(resolution.0, resolution.1);
    std::fs::create_dir_all(&cmd.out).map_err(|e| Error::io(&cmd.out, e))?;
    write_file(
        &cmd.out.join("retarget_report.json"),
        to_json(&retargeted.report)?,
    )?;

    let (final_doc, camera) = if cmd.augment {
        let config = cmd.aug.config(cmd.augment_rate);
        let (out, cam, report) =
            augment_document(&retargeted.doc, &topology, &fitted_camera, &config, true)?;
        write_file(&cmd.out.join("augment_report.json"), to_json(&report)?)?;
        (out, cam)
    } else {
        (retargeted.doc.clone(), fitted_camera.clone())
    };
    let pose_text = final_doc.to_json()?;
    write_file(&cmd.out.join("poses.json"), &pose_text)?;

    let overlays = match &cmd.overlays {
        Some(p) => {
            let sets = per_frame(parse_keypoints(&read_text(p)?)?, frames)?;
            let driving = doc
                .subjects
                .iter()
                .find(|s| s.subject_id == *first_id)
                .ok_or_else(|| Error::Schema("subject vanished".into()))?;
            let adapted = final_doc
                .subjects
                .iter()
                .find(|s| s.subject_id == *first_id)
                .ok_or_else(|| Error::Schema("subject vanished".into()))?;
            align_frame_overlays(&topology, &sets, driving, adapted, &fitted_camera, &camera)?
        }
        None => Vec::new(),
    };

    let style = cmd.style.style(resolution, &final_doc.sorted_subjects());
    style.validate()?;
    let (rgb, depth) = frame_names(frames, cmd.style.depth);
    let manifest = RenderManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        pose_file: "poses.json".into(),
        pose_sha256: sha256_hex(pose_text.as_bytes()),
        topology: topology.clone(),
        camera,
        output_resolution: (
            resolution.0 / style.downsample_ratio,
            resolution.1 / style.downsample_ratio,
        ),
        style,
        overlays,
        frames: rgb.iter().map(|f| format!("frames/{f}")).collect(),
        depth_frames: depth.iter().map(|f| format!("frames/{f}")).collect(),
    };
    write_render(
        &manifest,
        &final_doc.subjects,
        &cmd.out,
        Some(&cmd.out.join("manifest.json")),
    )?;

    let stride = cmd.layout.token_stride as usize;
    let ratio = cmd.style.ratio as usize;
    let (w, h) = (resolution.0 as usize, resolution.1 as usize);
    if stride == 0 || w % stride != 0 || h % stride != 0 {
        return Err(Error::Dimension(format!(
            "{w}x{h} frames are not a multiple of token stride {stride}"
        )));
    }
    let mut dims = LayoutDims::standard(frames, h / stride, w / stride, ratio);
    if dims.pose.is_none() {
        return Err(Error::Dimension(format!(
            "ratio {ratio} does not divide the {}x{} token grid",
            h / stride,
            w / stride
        )));
    }
    if let Some(shift) = cmd.layout.shift_w {
        dims.shift_w = shift;
    }
    write_plan(&dims, &cmd.layout, &cmd.out.join("plan.json"))
}

fn run_validate(cli: &Cli, cmd: &ValidateCmd) -> Result<bool> {
    let custom = load_custom_topology(cli)?;
    let report = validate_inputs(&cmd.files, custom.as_ref());
    print!("{}", to_json(&report)?);
    Ok(report.is_clean())
}

fn run_replay(cmd: &ReplayCmd) -> Result<()> {
    let manifest: RenderManifest = serde_json::from_str(&read_text(&cmd.manifest)?)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported manifest version {}",
            manifest.schema_version
        )));
    }
    let base = cmd.manifest.parent().unwrap_or(Path::new(""));
    let pose_path = base.join(&manifest.pose_file);
    let text = read_text(&pose_path)?;
    if sha256_hex(text.as_bytes()) != manifest.pose_sha256 {
        return Err(Error::Schema(format!(
            "{} does not match the manifest checksum",
            pose_path.display()
        )));
    }
    let doc = PoseDocument::from_json(&text)?;
    doc.check(Some(&manifest.topology))?;
    write_render(&manifest, &doc.subjects, &cmd.out, None)
}

/// Runs a parsed command line; `Ok(false)` means the run found problems
/// worth a nonzero exit without failing (validation).
pub fn run(cli: &Cli) -> Result<bool> {
    let job = || -> Result<bool> {
        match &cli.command {
            Command::Render(c) => run_render(cli, c).map(|_| true),
            Command::Retarget(c) => run_retarget(cli, c).map(|_| true),
            Command::Augment(c) => run_augment(cli, c).map(|_| true),
            Command::MotionStats(c) => run_motion_stats(cli, c).map(|_| true),
            Command::Curate(c) => run_curate(cli, c).map(|_| true),
            Command::Layout(c) => run_layout(c).map(|_| true),
            Command::Pipeline(c) => run_pipeline(cli, c).map(|_| true),
            Command::Validate(c) => run_validate(cli, c),
            Command::Replay(c) => run_replay(c).map(|_| true),
        }
    };
    match cli.jobs {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?
            .install(job),
        _ => job(),
    }
}

pub fn error_json(code: &str, message: &str) -> String {
    serde_json::json!({ "error": { "code": code, "message": message } }).to_string()
}

/// Process entry point; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            eprintln!("{}", error_json("E_USAGE", &e.to_string()));
            return 2;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match run(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("{}", error_json(e.code(), &e.to_string()));
            1
        }
    }
}
