mod common;

use common::*;
use poseforge::camera::CameraModel;
use poseforge::layout::plan_from_json;
use poseforge::skeleton::Vec3;
use poseforge::synthetic::standing_pose;

fn s(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn render_single_frame_writes_one_png_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let pose = dir.path().join("pose.json");
    write_pose(
        &pose,
        vec![walking_sequence("solo", 1, 1, Vec3::new(0.0, 0.0, 3000.0))],
    );
    let out = dir.path().join("out");
    let result = run(&[
        "render",
        s(&pose),
        "--out",
        s(&out),
        "--width",
        "64",
        "--height",
        "48",
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let files = tree(&out);
    let names: Vec<_> = files
        .keys()
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["frame_000000.png", "manifest.json"]);

    let manifest: serde_json::Value =
        serde_json::from_slice(&files[std::path::Path::new("manifest.json")]).unwrap();
    assert_eq!(manifest["style"]["resolution"], serde_json::json!([64, 48]));
    assert_eq!(manifest["pose_file"], "../pose.json");
    assert!(manifest["style"]["per_subject_palette"]["solo"].is_object());
}

#[test]
fn render_then_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let pose = dir.path().join("pose.json");
    write_pose(
        &pose,
        vec![
            walking_sequence("a", 2, 3, Vec3::new(-200.0, 0.0, 3000.0)),
            walking_sequence("b", 3, 3, Vec3::new(200.0, 0.0, 3400.0)),
        ],
    );
    let out = dir.path().join("render");
    let ok = run(&[
        "render",
        s(&pose),
        "--out",
        s(&out),
        "--width",
        "96",
        "--height",
        "64",
        "--ratio",
        "2",
        "--depth",
    ]);
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let replay = dir.path().join("replay");
    let again = run(&["replay", s(&out.join("manifest.json")), "--out", s(&replay)]);
    assert!(
        again.status.success(),
        "{}",
        String::from_utf8_lossy(&again.stderr)
    );
    let mut first = tree(&out);
    first.retain(|p, _| p.extension().is_some_and(|e| e == "png"));
    assert_eq!(first.len(), 6);
    assert_eq!(first, tree(&replay));

    // a modified pose file is refused
    write_pose(
        &pose,
        vec![walking_sequence("a", 9, 3, Vec3::new(0.0, 0.0, 3000.0))],
    );
    let stale = run(&["replay", s(&out.join("manifest.json")), "--out", s(&replay)]);
    assert!(!stale.status.success());
    assert_eq!(stderr_error_code(&stale), "E_SCHEMA");
}

#[test]
fn self_retarget_reports_unit_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let pose = dir.path().join("pose.json");
    let reference = dir.path().join("ref.json");
    let seq = walking_sequence("a", 4, 2, Vec3::new(0.0, 100.0, 2800.0));
    let cam = CameraModel::for_image(256, 256);
    write_reference(&reference, &cam, &seq.frames[0]);
    write_pose(&pose, vec![seq]);
    let out = dir.path().join("out");
    let result = run(&[
        "retarget",
        s(&pose),
        "--ref",
        s(&reference),
        "--out",
        s(&out),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("retarget_report.json")).unwrap())
            .unwrap();
    let ratios = report["subjects"][0]["chain_ratios"].as_object().unwrap();
    assert_eq!(ratios.len(), 5);
    for (chain, r) in ratios {
        assert!((r.as_f64().unwrap() - 1.0).abs() < 1e-3, "{chain}: {r}");
    }
    assert!(out.join("poses.json").exists());
}

fn pipeline_inputs(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let pose = dir.join("pose.json");
    let reference = dir.join("ref.json");
    let a = walking_sequence("a", 5, 3, Vec3::new(-250.0, 0.0, 3000.0));
    let b = walking_sequence("b", 6, 3, Vec3::new(250.0, 50.0, 3300.0));
    let cam = CameraModel::for_image(128, 96);
    write_reference(
        &reference,
        &cam,
        &standing_pose(Vec3::new(0.0, 0.0, 2600.0)),
    );
    write_pose(&pose, vec![a, b]);
    (pose, reference)
}

#[test]
fn pipeline_is_deterministic_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (pose, reference) = pipeline_inputs(dir.path());
    let mut trees = Vec::new();
    for (name, jobs) in [("one", "1"), ("two", "1"), ("many", "4")] {
        let out = dir.path().join(name);
        let result = run(&[
            "pipeline",
            s(&pose),
            "--ref",
            s(&reference),
            "--out",
            s(&out),
            "--augment",
            "--augment-rate",
            "1",
            "--seed",
            "7",
            "--ratio",
            "2",
            "--jobs",
            jobs,
        ]);
        assert!(
            result.status.success(),
            "{}",
            String::from_utf8_lossy(&result.stderr)
        );
        trees.push(tree(&out));
    }
    assert_eq!(trees[0], trees[1]);
    assert_eq!(trees[0], trees[2]);
    let names: Vec<String> = trees[0]
        .keys()
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .collect();
    for expected in [
        "poses.json",
        "manifest.json",
        "plan.json",
        "retarget_report.json",
        "augment_report.json",
        "frames/frame_000002.png",
    ] {
        assert!(
            names.iter().any(|n| n == expected),
            "missing {expected}: {names:?}"
        );
    }
    let plan = String::from_utf8(trees[0][std::path::Path::new("plan.json")].clone()).unwrap();
    let (plan, _) = plan_from_json(&plan).unwrap();
    assert_eq!(plan.dims.video, [3, 6, 8]);
    assert_eq!(plan.dims.pose, Some([3, 3, 4]));

    let reseeded = dir.path().join("reseeded");
    let result = run(&[
        "pipeline",
        s(&pose),
        "--ref",
        s(&reference),
        "--out",
        s(&reseeded),
        "--augment",
        "--augment-rate",
        "1",
        "--seed",
        "8",
        "--ratio",
        "2",
    ]);
    assert!(result.status.success());
    assert_ne!(
        tree(&reseeded)[std::path::Path::new("poses.json")],
        trees[0][std::path::Path::new("poses.json")]
    );
}

#[test]
fn jobs_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let (pose, reference) = pipeline_inputs(dir.path());
    let out = dir.path().join("env");
    let result = bin()
        .args([
            "pipeline",
            s(&pose),
            "--ref",
            s(&reference),
            "--out",
            s(&out),
        ])
        .env("POSEFORGE_JOBS", "2")
        .output()
        .unwrap();
    assert!(result.status.success());
    let bad = bin()
        .args([
            "layout",
            "--frames",
            "1",
            "--height",
            "2",
            "--width",
            "2",
            "--out",
            s(&dir.path().join("p.json")),
        ])
        .env("POSEFORGE_JOBS", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(stderr_error_code(&bad), "E_USAGE");
}

#[test]
fn validate_reports_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    write_pose(
        &good,
        vec![walking_sequence("a", 1, 2, Vec3::new(0.0, 0.0, 3000.0))],
    );
    let ok = run(&["validate", s(&good)]);
    assert!(ok.status.success());
    let report: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["files"][0]["violations"], serde_json::json!([]));

    let text = std::fs::read_to_string(&good).unwrap();
    let truncated = dir.path().join("truncated.json");
    std::fs::write(&truncated, &text[..100]).unwrap();
    let short = dir.path().join("short.json");
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    for frame in value["subjects"][0]["frames"].as_array_mut().unwrap() {
        frame.as_array_mut().unwrap().pop();
    }
    std::fs::write(&short, value.to_string()).unwrap();
    let bad = run(&[
        "validate",
        s(&truncated),
        s(&short),
        s(&dir.path().join("absent.json")),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(report["files"][0]["violations"][0]["byte_offset"], 100);
    assert_eq!(
        report["files"][1]["violations"].as_array().unwrap().len(),
        2
    );
    assert_eq!(report["files"][1]["violations"][0]["code"], "joint-count");
    assert_eq!(report["files"][2]["violations"][0]["code"], "unreadable");
}

#[test]
fn failures_are_structured_json() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["motion-stats", s(&dir.path().join("nope.json"))]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(stderr_error_code(&missing), "E_IO");

    let one_frame = dir.path().join("one.json");
    write_pose(
        &one_frame,
        vec![walking_sequence("a", 1, 1, Vec3::new(0.0, 0.0, 3000.0))],
    );
    let short = run(&["motion-stats", s(&one_frame)]);
    assert_eq!(stderr_error_code(&short), "E_TOO_FEW_FRAMES");

    let layout = run(&[
        "layout",
        "--frames",
        "2",
        "--height",
        "3",
        "--width",
        "4",
        "--ratio",
        "2",
        "--out",
        s(&dir.path().join("p.json")),
    ]);
    assert_eq!(stderr_error_code(&layout), "E_DIMENSION");
}

#[test]
fn motion_stats_and_curation() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    let mut speeds = Vec::new();
    for (i, amplitude) in [5.0, 40.0, 20.0, 0.0].iter().enumerate() {
        let base = standing_pose(Vec3::new(0.0, 0.0, 3000.0));
        let frames = (0..4)
            .map(|t| {
                let mut f = base.clone();
                f.joints[20].x += amplitude * t as f64;
                f
            })
            .collect();
        let seq = poseforge::skeleton::PoseSequence {
            frames,
            fps: 25.0,
            subject_id: "s".into(),
        };
        let name = format!("clip{i}.json");
        write_pose(&dir.path().join(&name), vec![seq]);
        lines.push_str(&format!("{{\"id\": \"clip{i}\", \"pose\": \"{name}\"}}\n"));
        speeds.push(amplitude * 3.0 / 4.0);
    }
    let manifest = dir.path().join("clips.jsonl");
    std::fs::write(&manifest, lines).unwrap();

    let stats = run(&["motion-stats", s(&dir.path().join("clip1.json"))]);
    let value: serde_json::Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(value["subjects"][0]["stats"]["motion_speed"], speeds[1]);

    let top = run(&["curate", s(&manifest), "--top-k", "2", "--jobs", "3"]);
    assert!(
        top.status.success(),
        "{}",
        String::from_utf8_lossy(&top.stderr)
    );
    assert_eq!(String::from_utf8(top.stdout).unwrap(), "clip1\nclip2\n");
    let above = run(&["curate", s(&manifest), "--threshold", "3.75"]);
    assert_eq!(
        String::from_utf8(above.stdout).unwrap(),
        "clip1\nclip2\nclip0\n"
    );
    let neither = run(&["curate", s(&manifest)]);
    assert_eq!(neither.status.code(), Some(2));
}

#[test]
fn layout_writes_a_readable_plan() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan.json");
    let result = run(&[
        "layout",
        "--frames",
        "2",
        "--height",
        "4",
        "--width",
        "4",
        "--shift-w",
        "16",
        "--out",
        s(&out),
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let (plan, rotary) = plan_from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(plan.total_tokens(), 80);
    assert_eq!(rotary.axis_split, [22, 21, 21]);
}

#[test]
fn augment_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let pose = dir.path().join("pose.json");
    write_pose(
        &pose,
        vec![walking_sequence("a", 1, 2, Vec3::new(0.0, 0.0, 3000.0))],
    );
    let outs: Vec<_> = ["x", "y"]
        .iter()
        .map(|n| {
            let out = dir.path().join(n);
            let r = run(&[
                "augment",
                s(&pose),
                "--out",
                s(&out),
                "--seed",
                "3",
                "--scale-range",
                "0.8,1.2",
            ]);
            assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
            tree(&out)
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0].len(), 3);
}
