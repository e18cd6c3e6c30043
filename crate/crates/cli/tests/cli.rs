use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eecal_core::PipelineConfig;

fn eecal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eecal"))
        .args(args)
        .output()
        .expect("run eecal")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a config with one frame per robot configuration.
fn small_config(dir: &Path, edit: impl FnOnce(&mut PipelineConfig)) -> PathBuf {
    let mut cfg = PipelineConfig::default();
    cfg.scenario.frames_per_config = 1;
    edit(&mut cfg);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn simulate(dir: &Path, config: &Path) -> PathBuf {
    let data = dir.join("data");
    let out = eecal(&["simulate", "--config", s(config), "--output", s(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data
}

#[test]
fn simulate_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), |_| {});
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = eecal(&["simulate", "--config", s(&config), "--seed", "4", "--output", s(d)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap());
    }
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"icp": {"max_iters": 5}}"#).unwrap();
    let out = eecal(&["simulate", "--config", s(&config), "--output", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("max_iters"), "{}", stderr(&out));
}

#[test]
fn empty_dataset_directory_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = eecal(&["calibrate", s(dir.path())]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn noiseless_calibration_prints_small_errors_and_honours_no_icp() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), |c| {
        c.scenario.camera.depth_sigma_1m = 0.0;
        c.predictors = eecal_core::config::PredictorConfig::noiseless();
    });
    let data = simulate(dir.path(), &config);

    let result = dir.path().join("result.json");
    let out = eecal(&["calibrate", s(&data), "--config", s(&config), "--output", s(&result)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let line = stderr(&out);
    let value = |key: &str| -> f64 {
        let rest = &line[line.find(key).expect(key) + key.len()..];
        rest.split_whitespace().next().unwrap().trim_end_matches(',').parse().unwrap()
    };
    assert!(value("translation error ") < 1e-4, "{line}");
    assert!(value("rotation error ") < 0.01, "{line}");
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&result).unwrap()).unwrap();
    assert_eq!(json["icp"], true);

    let out = eecal(&["calibrate", s(&data), "--config", s(&config), "--no-icp", "--output", s(&result)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&result).unwrap()).unwrap();
    assert_eq!(json["icp"], false);
}

#[test]
fn estimate_reports_four_candidates_and_rejects_bad_frames() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), |_| {});
    let data = simulate(dir.path(), &config);

    let out = eecal(&["estimate", s(&data), "--config", s(&config), "--frame", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["candidates"].as_array().unwrap().len(), 4);

    let out = eecal(&["estimate", s(&data), "--config", s(&config), "--frame", "99"]);
    assert_eq!(code(&out), 2);

    let strict = small_config(dir.path(), |c| c.calibration.sanity.min_ee_points = 1_000_000);
    let out = eecal(&["estimate", s(&data), "--config", s(&strict), "--frame", "0"]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    let out = eecal(&["calibrate", s(&data), "--config", s(&strict)]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn occluded_finger_frame_still_gets_a_keypoint_pose() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), |c| {
        c.scenario.hidden_parts = vec![eecal_core::simulator::EePart::FingerNegative];
        c.predictors.keypoint_dropout = 0.0;
    });
    let data = simulate(dir.path(), &config);
    let out = eecal(&["estimate", s(&data), "--config", s(&config), "--frame", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["keypoints_used"].as_u64().unwrap() >= 4);
    assert!(json["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .any(|c| c["method"] == "kpm"));
}

#[test]
fn evaluate_writes_reports_and_needs_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), |_| {});
    let data = simulate(dir.path(), &config);

    let reports = dir.path().join("reports");
    let out = eecal(&["evaluate", s(&data), "--config", s(&config), "--output", s(&reports)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["report.json", "report.txt", "frames.csv"] {
        assert!(reports.join(f).is_file(), "{f}");
    }
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(reports.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["summary"].as_array().unwrap().len(), 4);

    let manifest = data.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    m["gt_calibration"] = serde_json::Value::Null;
    std::fs::write(&manifest, serde_json::to_string(&m).unwrap()).unwrap();
    let out = eecal(&["evaluate", s(&data), "--config", s(&config)]);
    assert_eq!(code(&out), 6, "{}", stderr(&out));
}
