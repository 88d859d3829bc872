//! Fixtures and oracles shared by several test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use lato::curation::{
    curate, process_record, quality_filter, CurateOptions, CurationConfig, CurationSummary, Outcome, PairRecord, Stage,
};
use lato::kinematics::apply_rigid_rotation;
use lato::kinematics::template::reference_face;
use lato::landmarks::{landmarks_to_value, Canvas, LandmarkSet, NUM_LANDMARKS};
use lato::scoring::ScorerSuite;
use ndarray::Array2;

pub fn passing_scores() -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("blur".to_string(), 120.0),
        ("aesthetic".to_string(), 0.8),
        ("semantic_diff".to_string(), 0.7),
        ("identity".to_string(), 0.95),
        ("expression".to_string(), 0.9),
    ])
}

pub fn record(id: String, src: &LandmarkSet, dst: &LandmarkSet, instruction: &str) -> PairRecord {
    PairRecord {
        id,
        source_landmarks: Some(landmarks_to_value(src)),
        target_landmarks: Some(landmarks_to_value(dst)),
        instruction: Some(instruction.to_string()),
        scores: passing_scores(),
        ..Default::default()
    }
}

pub fn scaled(f: &LandmarkSet, k: f64) -> LandmarkSet {
    let c = f.centroid();
    f.map_points(|_, p| [c[0] + k * (p[0] - c[0]), c[1] + k * (p[1] - c[1])]).unwrap()
}

/// A head turn plus a shift, so the pair clears the minimum change score
/// (the turn alone keeps the centroid and moves points only a few pixels).
pub fn turn(f: &LandmarkSet, yaw: f64) -> LandmarkSet {
    apply_rigid_rotation(f, yaw, 0.0).unwrap().translate(30.0, 20.0).unwrap()
}

pub const LEFT_30: &str = "turn his/her head 30 degrees to the left";

/// 100 records built so that the stages pass 80/100, 60/80, 54/60 and
/// 27/54 of the records that reach them.
pub fn fixture() -> Vec<PairRecord> {
    let src = reference_face();
    let turned = turn(&src, 30.0);
    let mut recs = Vec::new();
    let mut push = |mut r: PairRecord, tag: &str| {
        r.id = format!("{:03}-{tag}", recs.len());
        recs.push(r);
    };
    let base = || record(String::new(), &src, &turned, LEFT_30);

    for _ in 0..5 {
        let off = src.translate(100.0, 0.0).unwrap();
        push(record(String::new(), &off, &off.translate(30.0, 30.0).unwrap(), LEFT_30), "off-center");
    }
    for _ in 0..5 {
        let small = scaled(&src, 0.5);
        push(record(String::new(), &small, &small.translate(30.0, 30.0).unwrap(), LEFT_30), "small");
    }
    for _ in 0..5 {
        let mut r = base();
        r.scores.insert("blur".into(), 10.0);
        push(r, "blurry");
    }
    for _ in 0..5 {
        let mut r = base();
        r.scores.insert("aesthetic".into(), 0.2);
        push(r, "ugly");
    }
    for _ in 0..8 {
        push(record(String::new(), &src, &src.translate(4.0, 2.0).unwrap(), LEFT_30), "static");
    }
    for _ in 0..6 {
        push(record(String::new(), &src, &src.translate(-125.0, -125.0).unwrap(), LEFT_30), "outlier");
    }
    for _ in 0..6 {
        let mut r = base();
        r.scores.insert("semantic_diff".into(), 0.1);
        push(r, "same-look");
    }
    for _ in 0..6 {
        let mut r = base();
        r.scores.insert("identity".into(), 0.6);
        push(r, "other-person");
    }
    for _ in 0..20 {
        push(base(), "good-turn");
    }
    for _ in 0..7 {
        let mut r = base();
        r.instruction = None;
        push(r, "derived-instruction");
    }
    for _ in 0..20 {
        let mut r = base();
        r.instruction = Some("turn his/her head 30 degrees to the right".into());
        push(r, "wrong-way");
    }
    for _ in 0..7 {
        let mut r = base();
        r.instruction = Some("make his/her facial expression happy and turn his/her head 30 degrees to the left".into());
        r.scores.insert("expression".into(), 0.1);
        push(r, "flat-expression");
    }
    assert_eq!(recs.len(), 100);
    recs
}

pub fn manifest(recs: &[PairRecord]) -> String {
    recs.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
}

pub fn run(input: &str, jobs: usize, chunk: usize) -> (Vec<u8>, CurationSummary) {
    let mut out = Vec::new();
    let opts = CurateOptions { jobs, chunk, ..Default::default() };
    let s = curate(input.as_bytes(), &mut out, &CurationConfig::default(), &ScorerSuite::mock(0), &opts).unwrap();
    (out, s)
}

pub fn decide(rec: &PairRecord, cfg: &CurationConfig) -> PairRecord {
    process_record(rec.clone(), cfg, &ScorerSuite::mock(0), Path::new("."))
}

/// Outcome of the given stage, which must have been reached.
pub fn outcome(rec: &PairRecord, stage: Stage) -> Outcome {
    let r = decide(rec, &CurationConfig::default());
    r.stage_decisions.iter().find(|d| d.stage == stage).unwrap_or_else(|| panic!("{stage:?} not reached")).outcome
}

pub fn good() -> PairRecord {
    let src = reference_face();
    record("b".into(), &src, &turn(&src, 30.0), LEFT_30)
}

/// A 68-point face whose bounding box spans `w` by `h` pixels, centered at
/// `(cx, cy)`, with its centroid exactly there as well.
pub fn box_face(cx: f64, cy: f64, w: f64, h: f64) -> LandmarkSet {
    let mut pts = [[cx, cy]; NUM_LANDMARKS];
    for (i, p) in pts.iter_mut().enumerate().take(64) {
        let sx = if i % 2 == 0 { -0.5 } else { 0.5 };
        let sy = if (i / 2) % 2 == 0 { -0.5 } else { 0.5 };
        *p = [cx + sx * w, cy + sy * h];
    }
    LandmarkSet::new(pts, Canvas::default()).unwrap()
}

pub fn quality(f: &LandmarkSet) -> Outcome {
    let mut r = record("q".into(), f, f, LEFT_30);
    r.scores = passing_scores();
    quality_filter(&r, &CurationConfig::default(), &ScorerSuite::mock(0), Path::new(".")).outcome
}

/// Direct per-window SSIM with centered second moments.
pub fn ssim_oracle(a: &Array2<u8>, b: &Array2<u8>) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let total: f64 = g.iter().flat_map(|x| g.iter().map(move |y| x * y)).sum();
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let (h, w) = a.dim();
    let mut sum = 0.0;
    let mut n = 0usize;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let wt = |i: usize, j: usize| g[i] * g[j] / total;
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    ma += wt(i, j) * a[[y0 + i, x0 + j]] as f64;
                    mb += wt(i, j) * b[[y0 + i, x0 + j]] as f64;
                }
            }
            let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let da = a[[y0 + i, x0 + j]] as f64 - ma;
                    let db = b[[y0 + i, x0 + j]] as f64 - mb;
                    va += wt(i, j) * da * da;
                    vb += wt(i, j) * db * db;
                    cab += wt(i, j) * da * db;
                }
            }
            sum += (2.0 * ma * mb + c1) * (2.0 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    sum / n as f64
}
