//! Four-stage landmark prediction: initial state, instruction
//! decomposition, kinematic chain (rigid then non-rigid), coordinate
//! estimation with sanity checks.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LatoError, Result};
use crate::instruction::{EditInstruction, ExpressionEdit};
use crate::landmarks::{
    distance, interocular_distance, landmarks_to_value, region, LandmarkSet, Point,
};

use super::expression::apply_expression;
use super::pose::{estimate_pose, HeadPose};
use super::rigid::{apply_head_turn, lift};

/// Largest relative change of a nose-bridge segment tolerated before the
/// prediction is rescaled.
pub const RIGID_RATIO_TOLERANCE: f64 = 0.35;

const BRIDGE_SEGMENTS: [(usize, usize); 3] = [(27, 28), (28, 29), (29, 30)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub heading: String,
    pub pose: HeadPose,
    pub expression_guess: String,
    pub interocular_px: f64,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub heading: String,
    pub instruction: EditInstruction,
    /// Requested rigid rotation, degrees (left and up positive).
    pub rigid: Option<HeadPose>,
    pub non_rigid: Option<ExpressionEdit>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMotion {
    pub region: String,
    pub rigid_mean: Point,
    pub non_rigid_mean: Point,
    pub max_shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub heading: String,
    pub regions: Vec<RegionMotion>,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub clamped_points: usize,
    pub bridge_ratio_median: f64,
    /// Scale applied about the centroid, when the bridge ratio was out of band.
    pub rescale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateEstimation {
    pub heading: String,
    pub sanity: SanityReport,
    /// Final landmarks in the region-grouped schema.
    pub landmarks: Value,
    pub text: String,
}

/// The four reasoning stages, in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub initial_state: InitialState,
    pub decomposition: Decomposition,
    pub kinematic_chain: KinematicChain,
    pub coordinate_estimation: CoordinateEstimation,
}

fn guess_expression(f: &LandmarkSet, iod: f64) -> String {
    let p = f.points();
    let corners = (p[48][1] + p[54][1]) / 2.0;
    let lip_mid = (p[51][1] + p[57][1]) / 2.0;
    let lift = (lip_mid - corners) / iod;
    let opening = (p[66][1] - p[62][1]) / iod;
    let mut label = if lift > 0.08 {
        "smiling".to_string()
    } else if lift < -0.08 {
        "frowning".to_string()
    } else {
        "neutral".to_string()
    };
    if opening > 0.25 {
        label.push_str(", mouth open");
    }
    label
}

fn mean_shift(a: &LandmarkSet, b: &LandmarkSet, range: std::ops::Range<usize>) -> Point {
    let n = range.len() as f64;
    let mut s = [0.0; 2];
    for i in range {
        s[0] += (b.point(i)[0] - a.point(i)[0]) / n;
        s[1] += (b.point(i)[1] - a.point(i)[1]) / n;
    }
    s
}

fn max_shift(a: &LandmarkSet, b: &LandmarkSet, range: std::ops::Range<usize>) -> f64 {
    range
        .map(|i| distance(a.point(i), b.point(i)))
        .fold(0.0, f64::max)
}

fn direction_words(d: HeadPose) -> String {
    let mut parts = Vec::new();
    if d.yaw != 0.0 {
        parts.push(format!(
            "yaw {:+} deg (turn {})",
            d.yaw,
            if d.yaw > 0.0 { "left" } else { "right" }
        ));
    }
    if d.pitch != 0.0 {
        parts.push(format!(
            "pitch {:+} deg (tilt {})",
            d.pitch,
            if d.pitch > 0.0 { "up" } else { "down" }
        ));
    }
    parts.join(", ")
}

/// Deterministic landmark predictor: estimates the current pose, applies
/// the instructed head rotation about the neck pivot, then the expression
/// field, then [`sanity_check`].
pub fn predict_landmarks(
    f: &LandmarkSet,
    ins: &EditInstruction,
) -> Result<(LandmarkSet, ReasoningTrace)> {
    ins.validate()?;

    let pose = estimate_pose(f)?;
    let iod = interocular_distance(f)?;
    let expression_guess = guess_expression(f, iod);
    let initial_state = InitialState {
        heading: "Step 1: Initial State Analysis".into(),
        text: format!(
            "Current pose: pitch {:.1} deg, yaw {:.1} deg. Current expression: {}. Inter-ocular distance {:.1} px on a {}x{} canvas.",
            pose.pitch,
            pose.yaw,
            expression_guess,
            iod,
            f.canvas().width,
            f.canvas().height
        ),
        pose,
        expression_guess,
        interocular_px: iod,
    };

    let rigid = (!ins.rotations.is_empty()).then(|| HeadPose::new(ins.pitch(), ins.yaw()));
    let mut actions = Vec::new();
    if let Some(r) = rigid {
        actions.push(format!("rigid head rotation, {}", direction_words(r)));
    }
    if let Some(e) = ins.expression {
        actions.push(format!("non-rigid {} expression, {}", e.kind, e.intensity.as_str()));
    }
    let decomposition = Decomposition {
        heading: "Step 2: Instruction Decomposition and Kinematic Analysis".into(),
        text: format!("Primary actions: {}.", actions.join("; ")),
        instruction: ins.clone(),
        rigid,
        non_rigid: ins.expression,
    };

    let rotated = match rigid {
        Some(r) => apply_head_turn(f, r.yaw, r.pitch)?,
        None => f.clone(),
    };
    let deformed = match ins.expression {
        Some(e) => apply_expression(&rotated, e.kind, e.intensity)?,
        None => rotated.clone(),
    };
    let regions: Vec<RegionMotion> = [
        ("jaw", region::JAW),
        ("brows", region::BROWS),
        ("nose", region::NOSE),
        ("eyes", region::EYES),
        ("mouth", region::MOUTH),
    ]
    .into_iter()
    .map(|(name, range)| RegionMotion {
        region: name.to_string(),
        rigid_mean: mean_shift(f, &rotated, range.clone()),
        non_rigid_mean: mean_shift(&rotated, &deformed, range.clone()),
        max_shift: max_shift(f, &deformed, range),
    })
    .collect();
    let tip = distance(f.point(region::NOSE_TIP), rotated.point(region::NOSE_TIP));
    let root = distance(f.point(27), rotated.point(27));
    let kinematic_chain = KinematicChain {
        heading: "Step 3: Quantitative Transformation Estimation".into(),
        text: format!(
            "{} Nose tip moves {:.1} px, nose root {:.1} px.",
            regions
                .iter()
                .map(|r| format!(
                    "{}: rigid ({:+.1}, {:+.1}), non-rigid ({:+.1}, {:+.1}).",
                    r.region, r.rigid_mean[0], r.rigid_mean[1], r.non_rigid_mean[0], r.non_rigid_mean[1]
                ))
                .collect::<Vec<_>>()
                .join(" "),
            tip,
            root
        ),
        regions,
    };

    let (out, sanity) = sanity_check_report(f, &deformed)?;
    let coordinate_estimation = CoordinateEstimation {
        heading: "Step 4: Coordinate Estimation".into(),
        text: format!(
            "Clamped {} point(s); nose-bridge ratio {:.3}{}.",
            sanity.clamped_points,
            sanity.bridge_ratio_median,
            sanity
                .rescale
                .map(|s| format!(", rescaled by {s:.3}"))
                .unwrap_or_default()
        ),
        sanity,
        landmarks: landmarks_to_value(&out),
    };

    Ok((
        out,
        ReasoningTrace {
            initial_state,
            decomposition,
            kinematic_chain,
            coordinate_estimation,
        },
    ))
}

fn bridge_lengths(f: &LandmarkSet) -> [f64; 3] {
    // Depth from the pose-aligned template makes the lengths invariant to
    // head rotation; fall back to the image plane when the fit fails.
    match lift(f) {
        Ok(l) => BRIDGE_SEGMENTS.map(|(a, b)| {
            let (p, q) = (l.points()[a], l.points()[b]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        }),
        Err(_) => BRIDGE_SEGMENTS.map(|(a, b)| distance(f.point(a), f.point(b))),
    }
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[1]
}

/// Clamps, restores nose-bridge proportions if they drifted by more than
/// 35 %, and rejects predictions with a folded nose bridge or crossed eyes.
pub fn sanity_check(src: &LandmarkSet, pred: &LandmarkSet) -> Result<LandmarkSet> {
    sanity_check_report(src, pred).map(|(f, _)| f)
}

pub fn sanity_check_report(
    src: &LandmarkSet,
    pred: &LandmarkSet,
) -> Result<(LandmarkSet, SanityReport)> {
    if src.canvas() != pred.canvas() {
        return Err(LatoError::Unit("source and prediction canvases differ".into()));
    }
    let mut out = pred.clamp();
    let clamped_points = out
        .points()
        .iter()
        .zip(pred.points())
        .filter(|(a, b)| a != b)
        .count();

    let (s, p) = (bridge_lengths(src), bridge_lengths(&out));
    let ratios: Vec<f64> = s
        .iter()
        .zip(&p)
        .filter(|(s, _)| **s > 1e-6)
        .map(|(s, p)| p / s)
        .collect();
    let median = match ratios.len() {
        3 => median3([ratios[0], ratios[1], ratios[2]]),
        0 => 1.0,
        n => ratios.iter().sum::<f64>() / n as f64,
    };
    let mut rescale = None;
    if (median - 1.0).abs() > RIGID_RATIO_TOLERANCE && median > 1e-9 {
        let k = 1.0 / median;
        let c = out.centroid();
        out = out
            .map_points(|_, q| [c[0] + k * (q[0] - c[0]), c[1] + k * (q[1] - c[1])])?
            .clamp();
        rescale = Some(k);
    }

    let bridge_y: Vec<f64> = region::NOSE_BRIDGE.map(|i| out.point(i)[1]).collect();
    if bridge_y.windows(2).any(|w| w[1] < w[0]) {
        return Err(LatoError::Sanity(format!(
            "nose bridge (27-30) is not monotone in y: {bridge_y:?}"
        )));
    }
    let (l, r) = (out.left_eye_center(), out.right_eye_center());
    if l[0] >= r[0] {
        return Err(LatoError::Sanity(format!(
            "eyes crossed: left eye center x {:.2} >= right eye center x {:.2}",
            l[0], r[0]
        )));
    }
    Ok((
        out,
        SanityReport {
            clamped_points,
            bridge_ratio_median: median,
            rescale,
        },
    ))
}
