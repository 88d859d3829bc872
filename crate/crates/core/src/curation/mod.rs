//! Filter chain over JSONL manifests of (source, target) face pairs:
//! quality, then diversity, then identity, then pose and expression
//! validation against the edit instruction. Each stage appends a decision to
//! the record; the first failure ends the chain for that record.

mod image;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LatoError, Result};
use crate::instruction::{EditInstruction, Expression, ExpressionEdit, Rotation, Axis, Pronoun};
use crate::kinematics::{estimate_pose, pose_deviation, HeadPose};
use crate::landmarks::{change_score, landmarks_from_value, Canvas, LandmarkSet};

pub use self::image::{blur_score, gaussian_blur, laplacian, read_gray, write_pgm, MIN_SIDE};
use crate::scoring::{ScoreKind, ScoreQuery, ScorerSuite};

/// Which side of the LoG threshold is kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlurRule {
    /// Keep images whose LoG variance is at least the threshold.
    #[default]
    SharpnessFloor,
    /// Keep images whose LoG variance is below the threshold.
    BlurCeiling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    /// Width of the centered band, as a fraction of each image dimension,
    /// that must contain the landmark centroid.
    pub centroid_band: f64,
    /// Minimum landmark bounding-box area as a fraction of the image.
    pub landmark_area_min: f64,
    pub blur_min: f64,
    pub blur_rule: BlurRule,
    pub aesthetic_min: f64,
    pub change_score_min: f64,
    /// Upper bound rejecting copy-paste artifacts and mismatched people.
    pub change_score_max: f64,
    pub semantic_diff_min: f64,
    pub identity_min: f64,
    pub pose_tolerance_deg: f64,
    pub expression_min: f64,
    pub canvas: Canvas,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            centroid_band: 0.2,
            landmark_area_min: 0.07,
            blur_min: 50.0,
            blur_rule: BlurRule::SharpnessFloor,
            aesthetic_min: 0.5,
            change_score_min: 23.0,
            change_score_max: 120.0,
            semantic_diff_min: 0.4,
            identity_min: 0.9,
            pose_tolerance_deg: 10.0,
            expression_min: 0.5,
            canvas: Canvas::default(),
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.centroid_band > 0.0 && self.centroid_band <= 1.0) {
            return Err(LatoError::Config("centroid_band must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.landmark_area_min) {
            return Err(LatoError::Config("landmark_area_min must be in [0, 1]".into()));
        }
        if self.change_score_min >= self.change_score_max {
            return Err(LatoError::Config(format!(
                "change_score_min {} must be below change_score_max {}",
                self.change_score_min, self.change_score_max
            )));
        }
        if self.pose_tolerance_deg < 0.0 {
            return Err(LatoError::Config("pose tolerance must be non-negative".into()));
        }
        Ok(())
    }

    /// Inclusive pixel bounds `(x_lo, x_hi, y_lo, y_hi)` of the central band.
    pub fn centroid_bounds(&self) -> (f64, f64, f64, f64) {
        let (w, h) = (self.canvas.width as f64, self.canvas.height as f64);
        let lo = 0.5 - self.centroid_band / 2.0;
        let hi = 0.5 + self.centroid_band / 2.0;
        (lo * w, hi * w, lo * h, hi * h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Quality,
    Diversity,
    Identity,
    Validation,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Quality, Stage::Diversity, Stage::Identity, Stage::Validation];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    /// The stage could not be evaluated; the record is quarantined.
    Error,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDecision {
    pub stage: Stage,
    pub outcome: Outcome,
    pub scores: BTreeMap<String, f64>,
    pub thresholds: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
}

impl StageDecision {
    fn new(stage: Stage) -> Self {
        StageDecision {
            stage,
            outcome: Outcome::Pass,
            scores: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            reasons: Vec::new(),
            attempts: None,
        }
    }

    fn error(stage: Stage, e: &LatoError) -> Self {
        let mut d = Self::new(stage);
        d.outcome = Outcome::Error;
        d.reasons.push(e.to_string());
        if let LatoError::Scorer { attempts, .. } = e {
            d.attempts = Some(*attempts);
        }
        d
    }

    fn check(&mut self, name: &str, score: f64, ok: bool, reason: &str) {
        self.scores.insert(name.to_string(), score);
        if !ok {
            self.outcome = Outcome::Fail;
            self.reasons.push(reason.to_string());
        }
    }

    pub fn passed(&self) -> bool {
        matches!(self.outcome, Outcome::Pass | Outcome::NotApplicable)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Kept,
    Rejected,
    Quarantined,
}

/// One manifest line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_landmarks: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_landmarks: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    /// Expression change observed between source and target, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<ExpressionEdit>,
    /// Precomputed scores by name (`blur`, `aesthetic`, `semantic_diff`,
    /// `identity`, `expression`); these take precedence over scorers.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub stage_decisions: Vec<StageDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<RecordStatus>,
}

impl PairRecord {
    fn landmarks(&self, which: &str, v: &Option<Value>, canvas: Canvas) -> Result<LandmarkSet> {
        let v = v.as_ref().ok_or_else(|| {
            LatoError::Config(format!("record {} has no {which} landmarks", self.id))
        })?;
        landmarks_from_value(v, canvas)
    }

    pub fn source(&self, canvas: Canvas) -> Result<LandmarkSet> {
        self.landmarks("source", &self.source_landmarks, canvas)
    }

    pub fn target(&self, canvas: Canvas) -> Result<LandmarkSet> {
        self.landmarks("target", &self.target_landmarks, canvas)
    }
}

fn scored(rec: &PairRecord, scorers: &ScorerSuite, kind: ScoreKind) -> Result<f64> {
    if let Some(&s) = rec.scores.get(kind.as_str()) {
        return Ok(s);
    }
    let refs: Vec<&str> = [rec.source_image.as_deref(), rec.target_image.as_deref()]
        .into_iter()
        .flatten()
        .collect();
    let q = ScoreQuery {
        id: &rec.id,
        refs: &refs,
        known: &rec.scores,
    };
    scorers.score(&q, kind)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Centered face, enough landmark coverage, sharp enough, aesthetic enough.
pub fn quality_filter(rec: &PairRecord, cfg: &CurationConfig, scorers: &ScorerSuite, base_dir: &Path) -> StageDecision {
    let run = || -> Result<StageDecision> {
        let f = rec.source(cfg.canvas)?;
        let mut d = StageDecision::new(Stage::Quality);
        let (xl, xh, yl, yh) = cfg.centroid_bounds();
        let c = f.centroid();
        d.thresholds.insert("centroid_band".into(), cfg.centroid_band);
        d.scores.insert("centroid_x".into(), c[0]);
        d.check("centroid_y", c[1], (xl..=xh).contains(&c[0]) && (yl..=yh).contains(&c[1]), "centroid");

        let (x0, y0, x1, y1) = f.bounding_box();
        let area = (x1 - x0) * (y1 - y0) / cfg.canvas.area();
        d.thresholds.insert("area".into(), cfg.landmark_area_min);
        d.check("area", area, area >= cfg.landmark_area_min, "area");

        let blur = match rec.scores.get("blur") {
            Some(&b) => b,
            None => {
                let path = rec.source_image.as_deref().ok_or_else(|| {
                    LatoError::Config(format!("record {} has no source image", rec.id))
                })?;
                blur_score(&read_gray(resolve(base_dir, path))?)?
            }
        };
        let sharp = match cfg.blur_rule {
            BlurRule::SharpnessFloor => blur >= cfg.blur_min,
            BlurRule::BlurCeiling => blur < cfg.blur_min,
        };
        d.thresholds.insert("blur".into(), cfg.blur_min);
        d.check("blur", blur, sharp, "blur");

        let aesthetic = scored(rec, scorers, ScoreKind::Aesthetic)?;
        d.thresholds.insert("aesthetic".into(), cfg.aesthetic_min);
        d.check("aesthetic", aesthetic, aesthetic >= cfg.aesthetic_min, "aesthetic");
        Ok(d)
    };
    run().unwrap_or_else(|e| StageDecision::error(Stage::Quality, &e))
}

/// Enough geometric change (but not implausibly much) and enough
/// high-level visual change.
pub fn diversity_filter(rec: &PairRecord, cfg: &CurationConfig, scorers: &ScorerSuite) -> StageDecision {
    let run = || -> Result<StageDecision> {
        let cs = change_score(&rec.source(cfg.canvas)?, &rec.target(cfg.canvas)?)?;
        let mut d = StageDecision::new(Stage::Diversity);
        d.thresholds.insert("change_score_min".into(), cfg.change_score_min);
        d.thresholds.insert("change_score_max".into(), cfg.change_score_max);
        let reason = if cs.score < cfg.change_score_min {
            "too-static"
        } else {
            "copy-paste/outlier band"
        };
        d.check(
            "change_score",
            cs.score,
            cs.score >= cfg.change_score_min && cs.score <= cfg.change_score_max,
            reason,
        );
        let sem = scored(rec, scorers, ScoreKind::SemanticDiff)?;
        d.thresholds.insert("semantic_diff".into(), cfg.semantic_diff_min);
        d.check("semantic_diff", sem, sem >= cfg.semantic_diff_min, "semantic");
        Ok(d)
    };
    run().unwrap_or_else(|e| StageDecision::error(Stage::Diversity, &e))
}

pub fn identity_filter(rec: &PairRecord, cfg: &CurationConfig, scorers: &ScorerSuite) -> StageDecision {
    match scored(rec, scorers, ScoreKind::Identity) {
        Ok(s) => {
            let mut d = StageDecision::new(Stage::Identity);
            d.thresholds.insert("identity".into(), cfg.identity_min);
            d.check("identity", s, s >= cfg.identity_min, "identity");
            d
        }
        Err(e) => StageDecision::error(Stage::Identity, &e),
    }
}

/// Head rotation achieved between source and target, as (pitch, yaw).
pub fn achieved_rotation(src: &LandmarkSet, dst: &LandmarkSet) -> Result<HeadPose> {
    Ok(estimate_pose(dst)? - estimate_pose(src)?)
}

/// Compares the achieved rotation with the instructed one. Instructions
/// without a rotation clause are not applicable.
pub fn pose_validate(rec: &PairRecord, ins: &EditInstruction, cfg: &CurationConfig) -> StageDecision {
    if ins.rotations.is_empty() {
        let mut d = StageDecision::new(Stage::Validation);
        d.outcome = Outcome::NotApplicable;
        return d;
    }
    let run = || -> Result<StageDecision> {
        let achieved = achieved_rotation(&rec.source(cfg.canvas)?, &rec.target(cfg.canvas)?)?;
        let dev = pose_deviation(achieved, HeadPose::new(ins.pitch(), ins.yaw()));
        let mut d = StageDecision::new(Stage::Validation);
        d.scores.insert("achieved_yaw".into(), achieved.yaw);
        d.scores.insert("achieved_pitch".into(), achieved.pitch);
        d.thresholds.insert("pose_deviation".into(), cfg.pose_tolerance_deg);
        d.check("pose_deviation", dev, dev <= cfg.pose_tolerance_deg, "pose");
        Ok(d)
    };
    run().unwrap_or_else(|e| StageDecision::error(Stage::Validation, &e))
}

fn quantize_degrees(deg: f64) -> f64 {
    ((deg / 30.0).round() * 30.0).clamp(-90.0, 90.0)
}

/// Builds the instruction from an observed rotation (rounded to multiples of
/// 30 degrees) and expression change. `None` when neither amounts to an edit.
pub fn make_instruction(rotation: Option<HeadPose>, expression: Option<ExpressionEdit>) -> Option<EditInstruction> {
    let expression = expression.filter(|e| e.kind != Expression::Neutral);
    let mut rotations = Vec::new();
    if let Some(r) = rotation {
        for (axis, deg) in [(Axis::Yaw, r.yaw), (Axis::Pitch, r.pitch)] {
            let q = quantize_degrees(deg);
            if q != 0.0 {
                rotations.push(Rotation { axis, degrees: q });
            }
        }
    }
    if expression.is_none() && rotations.is_empty() {
        return None;
    }
    Some(EditInstruction {
        expression,
        rotations,
        pronoun: Pronoun::Either,
    })
}

/// Pose check plus, for instructions with an expression clause, the
/// expression validator.
pub fn validation_filter(rec: &PairRecord, ins: &EditInstruction, cfg: &CurationConfig, scorers: &ScorerSuite) -> StageDecision {
    let mut d = pose_validate(rec, ins, cfg);
    if d.outcome == Outcome::Error || ins.expression.is_none() {
        return d;
    }
    match scored(rec, scorers, ScoreKind::Expression) {
        Ok(s) => {
            if d.outcome == Outcome::NotApplicable {
                d.outcome = Outcome::Pass;
            }
            d.thresholds.insert("expression".into(), cfg.expression_min);
            d.check("expression", s, s >= cfg.expression_min, "expression");
            d
        }
        Err(e) => StageDecision::error(Stage::Validation, &e),
    }
}

fn instruction_for(rec: &mut PairRecord, cfg: &CurationConfig) -> Result<Option<EditInstruction>> {
    if let Some(text) = &rec.instruction {
        return text.parse().map(Some);
    }
    let rotation = achieved_rotation(&rec.source(cfg.canvas)?, &rec.target(cfg.canvas)?).ok();
    let ins = make_instruction(rotation, rec.expression);
    if let Some(i) = &ins {
        rec.instruction = Some(i.to_string());
    }
    Ok(ins)
}

/// Runs every stage in order, stopping at the first that does not pass.
pub fn process_record(mut rec: PairRecord, cfg: &CurationConfig, scorers: &ScorerSuite, base_dir: &Path) -> PairRecord {
    rec.stage_decisions.clear();
    rec.status = None;
    let finish = |mut rec: PairRecord, d: StageDecision| {
        let status = match d.outcome {
            Outcome::Error => Some(RecordStatus::Quarantined),
            Outcome::Fail => Some(RecordStatus::Rejected),
            _ => None,
        };
        rec.stage_decisions.push(d);
        rec.status = status;
        rec
    };
    for stage in [Stage::Quality, Stage::Diversity, Stage::Identity] {
        let d = match stage {
            Stage::Quality => quality_filter(&rec, cfg, scorers, base_dir),
            Stage::Diversity => diversity_filter(&rec, cfg, scorers),
            _ => identity_filter(&rec, cfg, scorers),
        };
        if !d.passed() {
            return finish(rec, d);
        }
        rec.stage_decisions.push(d);
    }
    let d = match instruction_for(&mut rec, cfg) {
        Ok(Some(ins)) => validation_filter(&rec, &ins, cfg, scorers),
        Ok(None) => {
            let mut d = StageDecision::new(Stage::Validation);
            d.outcome = Outcome::Fail;
            d.reasons.push("no-edit".into());
            d
        }
        Err(e) => StageDecision::error(Stage::Validation, &e),
    };
    let mut rec = finish(rec, d);
    if rec.status.is_none() {
        rec.status = Some(RecordStatus::Kept);
    }
    rec
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Option<Stage>,
    pub entered: usize,
    pub passed: usize,
    pub failed: usize,
    pub errors: usize,
    pub not_applicable: usize,
    /// `passed / entered`, counting not-applicable as passed; 0 when empty.
    pub pass_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationSummary {
    pub records: usize,
    pub kept: usize,
    pub rejected: usize,
    pub quarantined: usize,
    pub malformed: usize,
    /// One-based line numbers of lines that were not valid records.
    pub malformed_lines: Vec<usize>,
    pub stages: Vec<StageSummary>,
}

impl CurationSummary {
    fn new() -> Self {
        CurationSummary {
            stages: Stage::ALL
                .iter()
                .map(|&s| StageSummary {
                    stage: Some(s),
                    ..Default::default()
                })
                .collect(),
            ..Default::default()
        }
    }

    fn add(&mut self, rec: &PairRecord) {
        self.records += 1;
        match rec.status {
            Some(RecordStatus::Kept) => self.kept += 1,
            Some(RecordStatus::Quarantined) => self.quarantined += 1,
            _ => self.rejected += 1,
        }
        for d in &rec.stage_decisions {
            let s = &mut self.stages[Stage::ALL.iter().position(|x| *x == d.stage).expect("known stage")];
            s.entered += 1;
            match d.outcome {
                Outcome::Pass => s.passed += 1,
                Outcome::NotApplicable => {
                    s.passed += 1;
                    s.not_applicable += 1;
                }
                Outcome::Fail => s.failed += 1,
                Outcome::Error => s.errors += 1,
            }
        }
    }

    fn finish(&mut self) {
        for s in &mut self.stages {
            s.pass_rate = if s.entered == 0 {
                0.0
            } else {
                s.passed as f64 / s.entered as f64
            };
        }
    }

    pub fn stage(&self, stage: Stage) -> &StageSummary {
        &self.stages[Stage::ALL.iter().position(|x| *x == stage).expect("known stage")]
    }
}

#[derive(Clone, Debug)]
pub struct CurateOptions {
    /// Directory that relative image paths are resolved against.
    pub base_dir: PathBuf,
    /// Worker threads; 1 processes records on the calling thread.
    pub jobs: usize,
    /// Records read ahead per parallel batch.
    pub chunk: usize,
}

impl Default for CurateOptions {
    fn default() -> Self {
        CurateOptions {
            base_dir: PathBuf::from("."),
            jobs: 1,
            chunk: 256,
        }
    }
}

/// Streams `input` to `output` one record per line, in input order. Lines
/// that do not parse are skipped and counted.
pub fn curate<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    cfg: &CurationConfig,
    scorers: &ScorerSuite,
    opts: &CurateOptions,
) -> Result<CurationSummary> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| LatoError::Config(format!("thread pool: {e}")))?;
    let mut summary = CurationSummary::new();
    let mut batch: Vec<PairRecord> = Vec::new();
    let out_err = |e: std::io::Error| LatoError::io("<output>", e);

    let flush = |batch: &mut Vec<PairRecord>, summary: &mut CurationSummary, output: &mut W| -> Result<()> {
        let work = std::mem::take(batch);
        let done: Vec<PairRecord> = if opts.jobs <= 1 {
            work.into_iter()
                .map(|r| process_record(r, cfg, scorers, &opts.base_dir))
                .collect()
        } else {
            pool.install(|| {
                work.into_par_iter()
                    .map(|r| process_record(r, cfg, scorers, &opts.base_dir))
                    .collect()
            })
        };
        for rec in &done {
            summary.add(rec);
            serde_json::to_writer(&mut *output, rec)?;
            output.write_all(b"\n").map_err(out_err)?;
        }
        Ok(())
    };

    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| LatoError::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PairRecord>(&line) {
            Ok(rec) => batch.push(rec),
            Err(e) => {
                log::warn!("line {}: {e}", i + 1);
                summary.malformed += 1;
                summary.malformed_lines.push(i + 1);
            }
        }
        if batch.len() >= opts.chunk.max(1) {
            flush(&mut batch, &mut summary, &mut output)?;
        }
    }
    flush(&mut batch, &mut summary, &mut output)?;
    output.flush().map_err(out_err)?;
    summary.finish();
    Ok(summary)
}
