//! The 68-point landmark model.
//!
//! A [`LandmarkSet`] holds 68 `(X, Y)` pixel coordinates on a `W x H` canvas
//! (512 x 512 unless stated otherwise), indexed with the usual 68-point
//! scheme: jaw 0-16, brows 17-26, nose 27-35, eyes 36-47, mouth 48-67.
//!
//! On disk a set is a JSON object with four region keys, each an array of
//! `[X, Y]` pairs in index order:
//!
//! ```json
//! {"JAW/BROWS": [[160, 198], ...], "NOSE": [...], "EYES": [...], "MOUTH": [...]}
//! ```

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LatoError, Result};

pub const NUM_LANDMARKS: usize = 68;

pub type Point = [f64; 2];

/// Fixed index ranges of the 68-point scheme.
pub mod region {
    use std::ops::Range;

    pub const JAW: Range<usize> = 0..17;
    pub const BROWS: Range<usize> = 17..27;
    pub const NOSE: Range<usize> = 27..36;
    /// Points 27-30, the rigid bridge of the nose.
    pub const NOSE_BRIDGE: Range<usize> = 27..31;
    pub const NOSE_TIP: usize = 33;
    pub const LEFT_EYE: Range<usize> = 36..42;
    pub const RIGHT_EYE: Range<usize> = 42..48;
    pub const EYES: Range<usize> = 36..48;
    pub const MOUTH: Range<usize> = 48..68;
    /// Eyes and mouth, the locally deforming part of the face.
    pub const INNER: Range<usize> = 36..68;
}

/// JSON region groups in serialization order.
pub const JSON_REGIONS: [(&str, Range<usize>); 4] = [
    ("JAW/BROWS", 0..27),
    ("NOSE", 27..36),
    ("EYES", 36..48),
    ("MOUTH", 48..68),
];

/// Left/right correspondences under a horizontal flip of the face.
/// Points on the midline (8, 27-30, 33, 51, 57, 62, 66) map to themselves.
pub const MIRROR_PAIRS: [(usize, usize); 29] = [
    (0, 16),
    (1, 15),
    (2, 14),
    (3, 13),
    (4, 12),
    (5, 11),
    (6, 10),
    (7, 9),
    (17, 26),
    (18, 25),
    (19, 24),
    (20, 23),
    (21, 22),
    (31, 35),
    (32, 34),
    (36, 45),
    (37, 44),
    (38, 43),
    (39, 42),
    (40, 47),
    (41, 46),
    (48, 54),
    (49, 53),
    (50, 52),
    (55, 59),
    (56, 58),
    (60, 64),
    (61, 63),
    (65, 67),
];

pub const MIDLINE: [usize; 10] = [8, 27, 28, 29, 30, 33, 51, 57, 62, 66];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

impl Canvas {
    pub const fn new(width: u32, height: u32) -> Self {
        Canvas { width, height }
    }

    pub fn area(&self) -> f64 {
        self.width as f64 * self.height as f64
    }

    /// Clamp a point so that `0 <= x < width` and `0 <= y < height`.
    pub fn clamp(&self, p: Point) -> Point {
        let max_x = (self.width as f64).next_down();
        let max_y = (self.height as f64).next_down();
        [p[0].clamp(0.0, max_x), p[1].clamp(0.0, max_y)]
    }
}

impl Default for Canvas {
    fn default() -> Self {
        Canvas::new(512, 512)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: [Point; NUM_LANDMARKS],
    canvas: Canvas,
}

impl LandmarkSet {
    pub fn new(points: [Point; NUM_LANDMARKS], canvas: Canvas) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(LatoError::Range(format!("landmark {i} is not finite")));
        }
        if canvas.width == 0 || canvas.height == 0 {
            return Err(LatoError::Config("canvas must be non-empty".into()));
        }
        Ok(LandmarkSet { points, canvas })
    }

    pub fn from_slice(points: &[Point], canvas: Canvas) -> Result<Self> {
        let arr: [Point; NUM_LANDMARKS] = points.try_into().map_err(|_| {
            LatoError::Shape(format!(
                "expected {NUM_LANDMARKS} landmarks, got {}",
                points.len()
            ))
        })?;
        Self::new(arr, canvas)
    }

    pub fn points(&self) -> &[Point; NUM_LANDMARKS] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn canvas(&self) -> Canvas {
        self.canvas
    }

    /// Applies `f` to every point. Non-finite results are rejected.
    pub fn map_points(&self, mut f: impl FnMut(usize, Point) -> Point) -> Result<Self> {
        let mut out = self.points;
        for (i, p) in out.iter_mut().enumerate() {
            *p = f(i, *p);
        }
        Self::new(out, self.canvas)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        self.map_points(|_, p| [p[0] + dx, p[1] + dy])
    }

    pub fn clamp(&self) -> Self {
        let mut out = self.clone();
        for p in out.points.iter_mut() {
            *p = self.canvas.clamp(*p);
        }
        out
    }

    pub fn is_within_canvas(&self) -> bool {
        self.points.iter().all(|p| self.canvas.clamp(*p) == *p)
    }

    pub fn centroid(&self) -> Point {
        mean_point(&self.points)
    }

    pub fn region_centroid(&self, range: Range<usize>) -> Point {
        mean_point(&self.points[range])
    }

    /// Axis-aligned bounding box as `(min_x, min_y, max_x, max_y)`.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        self.points.iter().fold(
            (
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ),
            |(x0, y0, x1, y1), p| (x0.min(p[0]), y0.min(p[1]), x1.max(p[0]), y1.max(p[1])),
        )
    }

    pub fn left_eye_center(&self) -> Point {
        self.region_centroid(region::LEFT_EYE)
    }

    pub fn right_eye_center(&self) -> Point {
        self.region_centroid(region::RIGHT_EYE)
    }
}

fn mean_point(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    [sx / n, sy / n]
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Parses the region-grouped landmark JSON onto the default 512 x 512 canvas.
pub fn parse_landmarks(json_text: &str) -> Result<LandmarkSet> {
    parse_landmarks_on(json_text, Canvas::default())
}

pub fn parse_landmarks_on(json_text: &str, canvas: Canvas) -> Result<LandmarkSet> {
    let value: Value = serde_json::from_str(json_text)?;
    landmarks_from_value(&value, canvas)
}

pub fn landmarks_from_value(value: &Value, canvas: Canvas) -> Result<LandmarkSet> {
    let obj = value
        .as_object()
        .ok_or_else(|| LatoError::schema("<root>", "expected a JSON object"))?;
    for key in obj.keys() {
        if !JSON_REGIONS.iter().any(|(name, _)| name == key) {
            return Err(LatoError::schema(key, "unexpected region key"));
        }
    }
    let mut points = [[0.0; 2]; NUM_LANDMARKS];
    for (name, range) in JSON_REGIONS {
        let arr = obj
            .get(name)
            .ok_or_else(|| LatoError::schema(name, "missing region"))?
            .as_array()
            .ok_or_else(|| LatoError::schema(name, "expected an array of [X, Y] pairs"))?;
        if arr.len() != range.len() {
            return Err(LatoError::schema(
                name,
                format!("expected {} points, found {}", range.len(), arr.len()),
            ));
        }
        for (slot, entry) in points[range].iter_mut().zip(arr) {
            let pair = entry
                .as_array()
                .filter(|p| p.len() == 2)
                .ok_or_else(|| LatoError::schema(name, format!("entry {entry} is not a pair")))?;
            for (c, v) in slot.iter_mut().zip(pair) {
                *c = v.as_f64().ok_or_else(|| {
                    LatoError::schema(name, format!("non-numeric coordinate {v}"))
                })?;
            }
        }
    }
    LandmarkSet::new(points, canvas)
}

/// Writes the region-grouped JSON. Integral coordinates are printed without a
/// fractional part, so integer input round-trips byte for byte.
pub fn serialize_landmarks(f: &LandmarkSet) -> String {
    let mut out = String::from("{");
    for (k, (name, range)) in JSON_REGIONS.iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "\"{name}\": [");
        for (j, p) in f.points[range.clone()].iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "[{}, {}]", fmt_coord(p[0]), fmt_coord(p[1]));
        }
        out.push(']');
    }
    out.push('}');
    out
}

pub fn landmarks_to_value(f: &LandmarkSet) -> Value {
    // serialize_landmarks always emits valid JSON
    serde_json::from_str(&serialize_landmarks(f)).expect("landmark JSON is well-formed")
}

fn fmt_coord(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Distance between the two eye centers (means of points 36-41 and 42-47).
pub fn interocular_distance(f: &LandmarkSet) -> Result<f64> {
    let d = distance(f.left_eye_center(), f.right_eye_center());
    if d <= 1e-9 {
        return Err(LatoError::DegenerateGeometry(
            "eye centers coincide".into(),
        ));
    }
    Ok(d)
}

fn check_same_canvas(a: &LandmarkSet, b: &LandmarkSet) -> Result<()> {
    if a.canvas != b.canvas {
        return Err(LatoError::Unit(format!(
            "canvas {}x{} vs {}x{}",
            a.canvas.width, a.canvas.height, b.canvas.width, b.canvas.height
        )));
    }
    Ok(())
}

fn mean_abs_coord_diff(a: &[Point], b: &[Point]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (p[0] - q[0]).abs() + (p[1] - q[1]).abs())
        .sum();
    sum / (2 * a.len()) as f64
}

/// Both halves of the change score, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeScore {
    pub inner_diff: f64,
    pub overall_diff: f64,
    pub score: f64,
}

/// `0.7 * inner_diff + 0.3 * overall_diff`, where each diff is the mean
/// absolute per-coordinate difference (inner = points 36-67).
pub fn change_score(a: &LandmarkSet, b: &LandmarkSet) -> Result<ChangeScore> {
    check_same_canvas(a, b)?;
    let inner_diff = mean_abs_coord_diff(&a.points[region::INNER], &b.points[region::INNER]);
    let overall_diff = mean_abs_coord_diff(&a.points, &b.points);
    Ok(ChangeScore {
        inner_diff,
        overall_diff,
        // Same as 0.7 * inner + 0.3 * overall, but exact when the two agree
        // (uniform shifts), which keeps threshold ties deterministic.
        score: inner_diff + 0.3 * (overall_diff - inner_diff),
    })
}

/// The change score divided by the inter-ocular distance of `a`.
pub fn change_score_normalized(a: &LandmarkSet, b: &LandmarkSet) -> Result<f64> {
    let raw = change_score(a, b)?;
    Ok(raw.score / interocular_distance(a)?)
}

/// Mean absolute difference over all 136 coordinates.
pub fn landmark_l1_error(pred: &LandmarkSet, target: &LandmarkSet) -> Result<f64> {
    check_same_canvas(pred, target)?;
    Ok(mean_abs_coord_diff(&pred.points, &target.points))
}
