//! The `lato` binary, driven as a user would.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lato::kinematics::apply_rigid_rotation;
use lato::kinematics::template::reference_face;
use lato::landmarks::{landmarks_to_value, parse_landmarks, serialize_landmarks};
use serde_json::{json, Value};

fn lato(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lato"))
        .args(args)
        .env_remove("LATO_CONFIG")
        .output()
        .unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn write_source(dir: &Path) -> PathBuf {
    let p = dir.join("source.json");
    fs::write(&p, serialize_landmarks(&reference_face())).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn predict_writes_landmarks_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let src = write_source(dir.path());
    let (out, trace) = (dir.path().join("pred.json"), dir.path().join("trace.json"));
    let o = lato(&[
        "predict",
        "--landmarks",
        s(&src),
        "--instruction",
        "turn his/her head 30 degrees to the right and 30 degrees up",
        "--out",
        s(&out),
        "--trace",
        s(&trace),
    ]);
    assert!(o.status.success());
    let pred = parse_landmarks(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(pred.is_within_canvas());
    let t: Value = serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    for stage in ["initial_state", "decomposition", "kinematic_chain", "coordinate_estimation"] {
        assert!(t[stage]["text"].is_string(), "{stage}");
    }
}

#[test]
fn score_ip_worked_example() {
    let v = stdout_json(&lato(&["score-ip", "--sarc", "0.984", "--phi-ins", "0.257", "--phi-real", "0.05"]));
    assert!((v["p"].as_f64().unwrap() - 0.6487).abs() < 1e-3);
    assert!((v["s_rip"].as_f64().unwrap() - 0.3353).abs() < 1e-3);
    assert_eq!(v["p_capped"], false);

    let o = lato(&["--pretty", "score-ip", "--sarc", "0.984", "--phi-ins", "0.257", "--phi-real", "0.05"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("s_rip = 0.335"));
}

#[test]
fn exit_codes_follow_error_kind() {
    let o = lato(&["tokenize", "--model", "/nonexistent/model.lato", "--landmarks", "/nonexistent/f.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(lato(&["no-such-command"]).status.code(), Some(1));
    let o = lato(&["score-ip", "--sarc", "0.5", "--phi-ins", "-1", "--phi-real", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn tokenizer_train_tokenize_detokenize() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.lato");
    let log = dir.path().join("log.jsonl");
    let o = lato(&[
        "train-tokenizer", "--data", "gen:64:3", "--steps", "20", "--blocks", "1", "--eval", "16",
        "--out", s(&model), "--log", s(&log),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&log).unwrap().lines().count() >= 20);

    let src = write_source(dir.path());
    let tokens = dir.path().join("tokens.json");
    assert!(lato(&["tokenize", "--model", s(&model), "--landmarks", s(&src), "--out", s(&tokens)]).status.success());
    let t: Value = serde_json::from_str(&fs::read_to_string(&tokens).unwrap()).unwrap();
    assert_eq!(t["indices"].as_array().unwrap().len(), 68);

    let o = lato(&["detokenize", "--model", s(&model), "--tokens", s(&tokens)]);
    assert!(o.status.success());
    let decoded = parse_landmarks(std::str::from_utf8(&o.stdout).unwrap()).unwrap();
    assert!(decoded.is_within_canvas());
}

#[test]
fn posenc_maps_landmarks_onto_image_cells() {
    let dir = tempfile::tempdir().unwrap();
    let src = write_source(dir.path());
    let v = stdout_json(&lato(&["posenc", "--landmarks", s(&src), "--grid", "32x32", "--text", "3"]));
    let image = v["image"].as_array().unwrap();
    assert_eq!(image.len(), 1024);
    let f = reference_face();
    for (i, p) in v["landmarks"].as_array().unwrap().iter().enumerate() {
        let [x, y] = f.point(i);
        let cell = &image[(y as usize / 16) * 32 + x as usize / 16];
        assert_eq!(p, cell);
    }
    assert_eq!(v["text"], json!([[0, 0, 0], [1, 0, 0], [2, 0, 0]]));
    assert_eq!(lato(&["posenc"]).status.code(), Some(1));
}

#[test]
fn fuse_bench_reports_closed_form_ratio() {
    let v = stdout_json(&lato(&["fuse-bench"]));
    let want = (2193.0f64 / 3149.0).powi(2);
    assert!((v["relative_cost_vs_rendered"].as_f64().unwrap() - want).abs() < 1e-12);
    let v = stdout_json(&lato(&["fuse-bench", "--lt", "4", "--ls", "16", "--lf", "8", "--ln", "16", "--time-d-model", "8"]));
    assert!(v["seconds"].as_f64().unwrap() >= 0.0);
}

fn pair(id: &str, aesthetic: f64) -> Value {
    let src = reference_face();
    let dst = apply_rigid_rotation(&src, 30.0, 0.0).unwrap().translate(30.0, 20.0).unwrap();
    json!({
        "id": id,
        "source_landmarks": landmarks_to_value(&src),
        "target_landmarks": landmarks_to_value(&dst),
        "instruction": "turn his/her head 30 degrees to the left",
        "scores": {"blur": 120.0, "aesthetic": aesthetic, "semantic_diff": 0.7, "identity": 0.95, "expression": 0.9},
    })
}

#[test]
fn curate_and_config_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("pairs.jsonl");
    fs::write(&manifest, format!("{}\n{}\nnot json\n", pair("a", 0.8), pair("b", 0.3))).unwrap();
    let kept = dir.path().join("kept.jsonl");
    let v = stdout_json(&lato(&["curate", "--in", s(&manifest), "--out", s(&kept)]));
    assert_eq!((v["records"].as_u64(), v["kept"].as_u64(), v["malformed"].as_u64()), (Some(2), Some(1), Some(1)));
    let lines: Vec<Value> =
        fs::read_to_string(&kept).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let status: Vec<(&str, &str)> =
        lines.iter().map(|l| (l["id"].as_str().unwrap(), l["status"].as_str().unwrap())).collect();
    assert_eq!(status, [("a", "kept"), ("b", "rejected")]);

    // A stricter aesthetic threshold from the environment rejects both.
    let cfg = dir.path().join("strict.json");
    fs::write(&cfg, r#"{"curation": {"aesthetic_min": 0.9}}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lato"))
        .args(["curate", "--in", s(&manifest), "--out", s(&kept)])
        .env("LATO_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(stdout_json(&o)["kept"], 0);
}

#[test]
fn eval_matches_golden_report() {
    let dir = fixtures();
    let golden: Value = serde_json::from_str(&fs::read_to_string(dir.join("eval_golden.json")).unwrap()).unwrap();
    let seed = golden["seed"].to_string();
    let manifest = dir.join("eval_manifest.jsonl");
    let v = stdout_json(&lato(&["--seed", &seed, "--jobs", "2", "eval", "--in", s(&manifest)]));
    for (name, agg) in golden["aggregates"].as_object().unwrap() {
        assert_eq!(v["aggregates"][name]["count"], agg["count"], "{name}");
        if let (Some(a), Some(b)) = (v["aggregates"][name]["mean"].as_f64(), agg["mean"].as_f64()) {
            assert!((a - b).abs() < 1e-12, "{name}");
        }
    }
}

#[test]
fn overlay_marks_landmarks() {
    let dir = tempfile::tempdir().unwrap();
    let src = write_source(dir.path());
    let img = dir.path().join("blank.pgm");
    lato::curation::write_pgm(&img, &ndarray::Array2::<u8>::zeros((128, 128))).unwrap();
    let out = dir.path().join("overlay.pgm");
    let o = lato(&["overlay", "--image", s(&img), "--landmarks", s(&src), "--out", s(&out), "--radius", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let drawn = lato::curation::read_gray(&out).unwrap();
    let [x, y] = reference_face().point(30);
    assert_eq!(drawn[[(y / 4.0).round() as usize, (x / 4.0).round() as usize]], 255);
    assert!(drawn.iter().filter(|&&v| v == 255).count() <= 68);
}
