//! SSIM against a straight-line oracle, and the evaluation report against a
//! golden file computed independently (tests/fixtures/eval_golden.py).

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use lato::metrics::{aggregate, evaluate, realized_amplitude, ssim, EvalConfig};
use lato::scoring::ScorerSuite;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

mod common;
use common::ssim_oracle;

fn noise(rng: &mut ChaCha8Rng) -> Array2<u8> {
    Array2::from_shape_simple_fn((64, 64), || rng.random())
}

#[test]
fn ssim_agrees_with_sliding_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10 {
        let a = noise(&mut rng);
        // Half the pairs are related so the score is not always near zero.
        let b = if rng.random_bool(0.5) {
            a.mapv(|v| v.saturating_add(rng.random_range(0..40)))
        } else {
            noise(&mut rng)
        };
        let (fast, slow) = (ssim(&a, &b).unwrap(), ssim_oracle(&a, &b));
        assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        assert!((ssim(&b, &a).unwrap() - fast).abs() < 1e-12);
    }
}

fn close(a: &Value, b: &Value, what: &str) {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12, "{what}: {x} vs {y}"),
        _ => assert_eq!(a, b, "{what}"),
    }
}

#[test]
fn two_record_report_matches_golden() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let golden: Value = serde_json::from_reader(File::open(dir.join("eval_golden.json")).unwrap()).unwrap();
    let seed = golden["seed"].as_u64().unwrap();
    let input = BufReader::new(File::open(dir.join("eval_manifest.jsonl")).unwrap());
    let report = evaluate(input, &ScorerSuite::mock(seed), &EvalConfig::default(), &dir, 1).unwrap();
    assert_eq!(report.provenance, vec![format!("mock:{seed}")]);
    let got = serde_json::to_value(&report).unwrap();

    let want = golden["samples"].as_array().unwrap();
    assert_eq!(got["samples"].as_array().unwrap().len(), want.len());
    for (g, w) in got["samples"].as_array().unwrap().iter().zip(want) {
        for (key, expected) in w.as_object().unwrap() {
            close(&g[key], expected, &format!("{}.{key}", w["id"]));
        }
    }
    for (name, w) in golden["aggregates"].as_object().unwrap() {
        for key in ["mean", "count", "missing"] {
            close(&got["aggregates"][name][key], &w[key], &format!("{name}.{key}"));
        }
    }

    // Same again with four workers.
    let input = BufReader::new(File::open(dir.join("eval_manifest.jsonl")).unwrap());
    let parallel = evaluate(input, &ScorerSuite::mock(seed), &EvalConfig::default(), &dir, 4).unwrap();
    assert_eq!(parallel, report);
}

#[test]
fn aggregates_equal_brute_force_recomputation() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut lines = String::new();
    for i in 0..40 {
        let phi = if i % 3 == 0 { String::new() } else { format!(",\"phi_real\":{}", (i % 7) as f64 / 10.0) };
        lines += &format!("{{\"id\":\"s{i}\",\"instruction\":\"make his/her facial expression sad\",\"scores\":{{\"x\":0{phi}}}}}\n");
    }
    let report = evaluate(lines.as_bytes(), &ScorerSuite::mock(5), &EvalConfig::default(), &dir, 1).unwrap();
    assert_eq!(report.aggregates, aggregate(&report.samples));
    let ips: Vec<f64> = report.samples.iter().filter_map(|s| s.ip).collect();
    let agg = &report.aggregates["ip"];
    assert_eq!((agg.count, agg.missing), (ips.len(), 40 - ips.len()));
    let mean = ips.iter().sum::<f64>() / ips.len() as f64;
    assert!((agg.mean.unwrap() - mean).abs() < 1e-15);
}

#[test]
fn realized_amplitude_of_fixture_edit() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let a = lato::curation::read_gray(dir.join("eval_src.pgm")).unwrap();
    let b = lato::curation::read_gray(dir.join("eval_edit.pgm")).unwrap();
    let phi = realized_amplitude(&a, &b).unwrap();
    assert!(phi > 0.0 && phi < 0.5);
    assert!((1.0 - ssim_oracle(&a, &b) - phi).abs() < 1e-9);
}
