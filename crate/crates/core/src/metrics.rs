//! Evaluation metrics: SSIM, realized and expected edit amplitude, the
//! rectified identity-preservation score, and JSON report aggregation.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::curation::read_gray;
use crate::error::{LatoError, Result};
use crate::instruction::{EditInstruction, Intensity};
use crate::landmarks::{landmark_l1_error, landmarks_from_value, Canvas};
use crate::scoring::{ScoreKind, ScoreQuery, ScorerSuite};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_RANGE: f64 = 255.0;

/// Normalized one-dimensional taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - r;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// Gaussian-weighted local means over every full window ("valid" region).
fn window_means(img: &Array2<f64>, taps: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = img.dim();
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let rows: Array2<f64> = Array2::from_shape_fn((h, ow), |(y, x)| {
        taps.iter().enumerate().map(|(k, t)| t * img[[y, x + k]]).sum()
    });
    Array2::from_shape_fn((oh, ow), |(y, x)| {
        taps.iter().enumerate().map(|(k, t)| t * rows[[y + k, x]]).sum()
    })
}

fn check_pair(a: &Array2<u8>, b: &Array2<u8>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(LatoError::Shape(format!(
            "images differ in size: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(LatoError::Shape(format!(
            "images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    Ok(())
}

/// Mean structural similarity over all full 11x11 Gaussian windows
/// (sigma 1.5, K1 0.01, K2 0.03, L 255). In `[-1, 1]`; exactly 1 for
/// identical inputs and symmetric in its arguments.
pub fn ssim(a: &Array2<u8>, b: &Array2<u8>) -> Result<f64> {
    check_pair(a, b)?;
    let taps = ssim_taps();
    let fa = a.mapv(f64::from);
    let fb = b.mapv(f64::from);
    let mu_a = window_means(&fa, &taps);
    let mu_b = window_means(&fb, &taps);
    let cov = |x: &Array2<f64>, y: &Array2<f64>, mx: &Array2<f64>, my: &Array2<f64>| {
        let mut m = window_means(&(x * y), &taps);
        Zip::from(&mut m).and(mx).and(my).for_each(|v, &p, &q| *v -= p * q);
        m
    };
    let var_a = cov(&fa, &fa, &mu_a, &mu_a);
    let var_b = cov(&fb, &fb, &mu_b, &mu_b);
    let cov_ab = cov(&fa, &fb, &mu_a, &mu_b);
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let mut sum = 0.0;
    Zip::from(&mu_a)
        .and(&mu_b)
        .and(&var_a)
        .and(&var_b)
        .and(&cov_ab)
        .for_each(|&ma, &mb, &va, &vb, &cab| {
            let num = (2.0 * ma * mb + c1) * (2.0 * cab + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            sum += num / den;
        });
    Ok(sum / mu_a.len() as f64)
}

/// `1 - clamp(ssim, 0, 1)`: 0 for identical images, near 1 for unrelated ones.
pub fn realized_amplitude(source: &Array2<u8>, edited: &Array2<u8>) -> Result<f64> {
    Ok(1.0 - ssim(source, edited)?.clamp(0.0, 1.0))
}

/// Expected visual change of an instruction: a base per expression
/// intensity plus a fixed amount per 30 degrees of rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmplitudeTable {
    pub slightly: f64,
    pub normally: f64,
    pub strongly: f64,
    pub per_30_degrees: f64,
}

impl Default for AmplitudeTable {
    fn default() -> Self {
        AmplitudeTable {
            slightly: 0.12,
            normally: 0.25,
            strongly: 0.40,
            per_30_degrees: 0.15,
        }
    }
}

pub fn expected_amplitude(ins: &EditInstruction, table: &AmplitudeTable) -> Result<f64> {
    if ins.expression.is_none() && ins.rotations.is_empty() {
        return Err(LatoError::Range("empty instruction has no expected amplitude".into()));
    }
    let base = match ins.expression.map(|e| e.intensity) {
        None => 0.0,
        Some(Intensity::Slightly) => table.slightly,
        Some(Intensity::Normally) => table.normally,
        Some(Intensity::Strongly) => table.strongly,
    };
    let degrees: f64 = ins.rotations.iter().map(|r| r.degrees.abs()).sum();
    Ok((base + table.per_30_degrees * degrees / 30.0).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpInputs {
    pub s_arc: f64,
    pub phi_ins: f64,
    pub phi_real: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

impl IpInputs {
    pub const DEFAULT_ALPHA: f64 = 2.0;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(s_arc: f64, phi_ins: f64, phi_real: f64) -> Self {
        IpInputs {
            s_arc,
            phi_ins,
            phi_real,
            alpha: Self::DEFAULT_ALPHA,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("s_arc", self.s_arc), ("phi_ins", self.phi_ins), ("phi_real", self.phi_real)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(LatoError::Range(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(LatoError::Range(format!("alpha = {} must be positive", self.alpha)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(LatoError::Range(format!("epsilon = {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectifiedIp {
    /// Amplitude-mismatch penalty, at most 1.
    pub p: f64,
    pub s_rip: f64,
    /// The raw penalty exceeded 1 and was capped. Happens when the expected
    /// amplitude is (near) zero but the image changed.
    pub p_capped: bool,
}

/// `p = ((phi_ins - phi_real) / (phi_ins + eps))^alpha` and
/// `s_rip = max(0, s_arc - p)`.
///
/// For non-integer `alpha` the base is taken in absolute value so that
/// over- and under-editing are penalized alike.
pub fn rectified_ip(inp: &IpInputs) -> Result<RectifiedIp> {
    inp.validate()?;
    let ratio = (inp.phi_ins - inp.phi_real) / (inp.phi_ins + inp.epsilon);
    let raw = if inp.alpha.fract() == 0.0 && inp.alpha <= i32::MAX as f64 {
        ratio.powi(inp.alpha as i32)
    } else {
        ratio.abs().powf(inp.alpha)
    };
    // Odd integer exponents can make the raw value negative; a negative
    // penalty would reward mismatch.
    let raw = raw.abs();
    let p_capped = raw > 1.0;
    let p = raw.min(1.0);
    Ok(RectifiedIp {
        p,
        s_rip: (inp.s_arc - p).max(0.0),
        p_capped,
    })
}

/// One evaluated edit. Image paths are resolved against the manifest
/// directory; `scores` may carry `sc`, `vq`, `na`, `identity`, `phi_ins` and
/// `phi_real` to bypass scorers and image reads.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_image: Option<String>,
    /// Missing, empty or `no-op` means the edit should change nothing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_landmarks: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_landmarks: Option<Value>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub sc: Option<f64>,
    pub vq: Option<f64>,
    pub na: Option<f64>,
    pub ip: Option<f64>,
    pub landmark_error: Option<f64>,
    pub s_arc: Option<f64>,
    pub phi_ins: Option<f64>,
    pub phi_real: Option<f64>,
    pub p: Option<f64>,
    #[serde(default)]
    pub p_capped: bool,
    /// Why metrics are missing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl SampleMetrics {
    /// Report metrics by name, in report order.
    pub fn metric_values(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("sc", self.sc),
            ("vq", self.vq),
            ("na", self.na),
            ("ip", self.ip),
            ("landmark_error", self.landmark_error),
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Mean over present values; absent when none are present.
    pub mean: Option<f64>,
    pub count: usize,
    pub missing: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub amplitudes: AmplitudeTable,
    pub canvas: Canvas,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            alpha: IpInputs::DEFAULT_ALPHA,
            epsilon: IpInputs::DEFAULT_EPSILON,
            amplitudes: AmplitudeTable::default(),
            canvas: Canvas::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub provenance: Vec<String>,
    pub config: EvalConfig,
    pub records: usize,
    pub malformed_lines: Vec<usize>,
    pub aggregates: BTreeMap<String, Aggregate>,
    pub samples: Vec<SampleMetrics>,
}

/// Arithmetic mean of present values per metric; absent values are counted
/// as missing.
pub fn aggregate(samples: &[SampleMetrics]) -> BTreeMap<String, Aggregate> {
    let mut out: BTreeMap<String, Aggregate> = BTreeMap::new();
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    for s in samples {
        for (name, v) in s.metric_values() {
            let agg = out.entry(name.to_string()).or_default();
            match v {
                Some(v) => {
                    agg.count += 1;
                    *sums.entry(name).or_default() += v;
                }
                None => agg.missing += 1,
            }
        }
    }
    for (name, agg) in out.iter_mut() {
        if agg.count > 0 {
            agg.mean = Some(sums[name.as_str()] / agg.count as f64);
        }
    }
    out
}

fn is_no_op(text: Option<&str>) -> bool {
    match text.map(str::trim) {
        None => true,
        Some(t) => t.is_empty() || t.eq_ignore_ascii_case("no-op"),
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Computes one record's metrics. Failures leave the affected metric empty
/// and note the cause; they never abort the run.
pub fn evaluate_record(rec: &EvalRecord, scorers: &ScorerSuite, cfg: &EvalConfig, base_dir: &Path) -> SampleMetrics {
    let mut m = SampleMetrics {
        id: rec.id.clone(),
        ..Default::default()
    };
    let refs: Vec<&str> = [rec.source_image.as_deref(), rec.edited_image.as_deref()]
        .into_iter()
        .flatten()
        .collect();
    let q = ScoreQuery {
        id: &rec.id,
        refs: &refs,
        known: &rec.scores,
    };
    let score = |kind: ScoreKind, errors: &mut Vec<String>| match scorers.score(&q, kind) {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(format!("{kind}: {e}"));
            None
        }
    };
    m.sc = score(ScoreKind::SemanticConsistency, &mut m.errors);
    m.vq = score(ScoreKind::VisualQuality, &mut m.errors);
    m.na = score(ScoreKind::NaturalAppearance, &mut m.errors);
    m.s_arc = score(ScoreKind::Identity, &mut m.errors);

    m.phi_ins = match rec.scores.get("phi_ins") {
        Some(&v) => Some(v),
        None if is_no_op(rec.instruction.as_deref()) => Some(0.0),
        None => rec
            .instruction
            .as_deref()
            .unwrap_or_default()
            .parse::<EditInstruction>()
            .and_then(|ins| expected_amplitude(&ins, &cfg.amplitudes))
            .map_err(|e| m.errors.push(format!("phi_ins: {e}")))
            .ok(),
    };

    m.phi_real = match rec.scores.get("phi_real") {
        Some(&v) => Some(v),
        None => {
            let run = || -> Result<f64> {
                let (Some(s), Some(e)) = (&rec.source_image, &rec.edited_image) else {
                    return Err(LatoError::Config("needs source_image and edited_image".into()));
                };
                realized_amplitude(&read_gray(resolve(base_dir, s))?, &read_gray(resolve(base_dir, e))?)
            };
            run().map_err(|e| m.errors.push(format!("phi_real: {e}"))).ok()
        }
    };

    if let (Some(s_arc), Some(phi_ins), Some(phi_real)) = (m.s_arc, m.phi_ins, m.phi_real) {
        let inp = IpInputs {
            s_arc,
            phi_ins,
            phi_real,
            alpha: cfg.alpha,
            epsilon: cfg.epsilon,
        };
        match rectified_ip(&inp) {
            Ok(r) => {
                m.p = Some(r.p);
                m.ip = Some(r.s_rip);
                m.p_capped = r.p_capped;
            }
            Err(e) => m.errors.push(format!("ip: {e}")),
        }
    }

    if let (Some(e), Some(t)) = (&rec.edited_landmarks, &rec.target_landmarks) {
        let run = || landmark_l1_error(&landmarks_from_value(e, cfg.canvas)?, &landmarks_from_value(t, cfg.canvas)?);
        m.landmark_error = run().map_err(|e| m.errors.push(format!("landmark_error: {e}"))).ok();
    }
    m
}

/// Reads a JSONL manifest of [`EvalRecord`]s and scores every line.
/// Unparseable lines are listed in the report and skipped.
pub fn evaluate<R: BufRead>(
    input: R,
    scorers: &ScorerSuite,
    cfg: &EvalConfig,
    base_dir: &Path,
    jobs: usize,
) -> Result<EvalReport> {
    IpInputs {
        alpha: cfg.alpha,
        epsilon: cfg.epsilon,
        ..IpInputs::new(0.0, 0.0, 0.0)
    }
    .validate()?;
    let mut records = Vec::new();
    let mut malformed_lines = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| LatoError::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EvalRecord>(&line) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("line {}: {e}", i + 1);
                malformed_lines.push(i + 1);
            }
        }
    }
    let samples: Vec<SampleMetrics> = if jobs <= 1 {
        records.iter().map(|r| evaluate_record(r, scorers, cfg, base_dir)).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| LatoError::Config(format!("thread pool: {e}")))?
            .install(|| {
                records
                    .par_iter()
                    .map(|r| evaluate_record(r, scorers, cfg, base_dir))
                    .collect()
            })
    };
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        provenance: scorers.provenance(),
        config: cfg.clone(),
        records: samples.len(),
        malformed_lines,
        aggregates: aggregate(&samples),
        samples,
    })
}
