use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{LatoError, Result};
use crate::instruction::Expression;
use crate::landmarks::{
    self, parse_landmarks, Canvas, LandmarkSet, Point, MIDLINE, MIRROR_PAIRS, NUM_LANDMARKS,
};

pub const TEMPLATE_ASSET: &str = include_str!("../../assets/face_template_v1.json");
pub const EXPRESSION_ASSET: &str = include_str!("../../assets/expression_fields_v1.json");
/// The region-grouped reference face the template is lifted from.
pub const REFERENCE_FACE: &str = include_str!("../../assets/reference_face.json");

pub const ASSET_SCHEMA_VERSION: u32 = 1;

pub type Point3 = [f64; 3];

/// Per-point depth (pixels, positive toward the camera) used to lift the
/// reference face into 3D.
pub fn depth_profile(i: usize) -> f64 {
    match i {
        0..=16 => -40.0 * (i as f64 - 8.0).abs() / 8.0,
        17..=26 => 10.0,
        27 => 10.0,
        28 => 20.0,
        29 => 28.0,
        30 => 36.0,
        31 | 35 => 20.0,
        32 | 34 => 30.0,
        33 => 40.0,
        36..=47 => 5.0,
        _ => 15.0,
    }
}

/// A bilaterally symmetric 68-point face with depth, on the 512 canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalFace3D {
    points: [Point3; NUM_LANDMARKS],
    canvas: Canvas,
}

#[derive(Deserialize)]
struct TemplateFile {
    schema_version: u32,
    canvas: [u32; 2],
    points: Vec<Point3>,
}

impl CanonicalFace3D {
    /// The shipped template asset.
    pub fn builtin() -> &'static CanonicalFace3D {
        static TEMPLATE: OnceLock<CanonicalFace3D> = OnceLock::new();
        TEMPLATE.get_or_init(|| {
            Self::from_asset(TEMPLATE_ASSET).expect("bundled face template is valid")
        })
    }

    pub fn from_asset(text: &str) -> Result<Self> {
        let file: TemplateFile = serde_json::from_str(text)?;
        if file.schema_version != ASSET_SCHEMA_VERSION {
            return Err(LatoError::Format(format!(
                "template schema version {} (expected {ASSET_SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let points: [Point3; NUM_LANDMARKS] = file.points.try_into().map_err(|v: Vec<_>| {
            LatoError::Format(format!("template has {} points", v.len()))
        })?;
        Ok(CanonicalFace3D {
            points,
            canvas: Canvas::new(file.canvas[0], file.canvas[1]),
        })
    }

    /// Symmetrizes a 2D face about its vertical midline and attaches
    /// [`depth_profile`].
    pub fn from_reference(reference: &LandmarkSet) -> Self {
        let p = reference.points();
        let mids: Vec<f64> = MIRROR_PAIRS
            .iter()
            .map(|&(a, b)| (p[a][0] + p[b][0]) / 2.0)
            .chain(MIDLINE.iter().map(|&m| p[m][0]))
            .collect();
        let mid_x = mids.iter().sum::<f64>() / mids.len() as f64;

        let mut sym: [Point; NUM_LANDMARKS] = *p;
        for &(a, b) in &MIRROR_PAIRS {
            let half = ((mid_x - p[a][0]) + (p[b][0] - mid_x)) / 2.0;
            let y = (p[a][1] + p[b][1]) / 2.0;
            sym[a] = [mid_x - half, y];
            sym[b] = [mid_x + half, y];
        }
        for &m in &MIDLINE {
            sym[m][0] = mid_x;
        }
        let mut points = [[0.0; 3]; NUM_LANDMARKS];
        for (i, q) in points.iter_mut().enumerate() {
            *q = [sym[i][0], sym[i][1], depth_profile(i)];
        }
        CanonicalFace3D {
            points,
            canvas: reference.canvas(),
        }
    }

    pub fn points(&self) -> &[Point3; NUM_LANDMARKS] {
        &self.points
    }

    pub fn canvas(&self) -> Canvas {
        self.canvas
    }

    pub fn centroid(&self) -> Point3 {
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / NUM_LANDMARKS as f64)
    }

    /// Orthographic front view.
    pub fn project(&self) -> LandmarkSet {
        let pts = self.points.map(|p| [p[0], p[1]]);
        LandmarkSet::new(pts, self.canvas).expect("template coordinates are finite")
    }

    pub fn to_asset_json(&self) -> String {
        let rows: Vec<String> = self
            .points
            .iter()
            .map(|p| format!("    [{:?}, {:?}, {:?}]", p[0], p[1], p[2]))
            .collect();
        format!(
            "{{\n  \"schema_version\": {ASSET_SCHEMA_VERSION},\n  \"name\": \"canonical-face-68\",\n  \"canvas\": [{}, {}],\n  \"points\": [\n{}\n  ]\n}}\n",
            self.canvas.width,
            self.canvas.height,
            rows.join(",\n")
        )
    }
}

/// The 2D front view of the built-in template.
pub fn template_2d() -> &'static LandmarkSet {
    static FRONT: OnceLock<LandmarkSet> = OnceLock::new();
    FRONT.get_or_init(|| CanonicalFace3D::builtin().project())
}

pub fn template_interocular() -> f64 {
    landmarks::interocular_distance(template_2d()).expect("template eyes are separated")
}

pub fn reference_face() -> LandmarkSet {
    parse_landmarks(REFERENCE_FACE).expect("bundled reference face is valid")
}

/// Displacement fields per expression, in template pixels at normal intensity.
#[derive(Clone, Debug)]
pub struct ExpressionFields {
    fields: BTreeMap<Expression, [Point; NUM_LANDMARKS]>,
}

#[derive(Deserialize)]
struct FieldsFile {
    schema_version: u32,
    fields: BTreeMap<String, BTreeMap<String, [f64; 2]>>,
}

impl ExpressionFields {
    pub fn builtin() -> &'static ExpressionFields {
        static FIELDS: OnceLock<ExpressionFields> = OnceLock::new();
        FIELDS.get_or_init(|| {
            Self::from_asset(EXPRESSION_ASSET).expect("bundled expression fields are valid")
        })
    }

    pub fn from_asset(text: &str) -> Result<Self> {
        let file: FieldsFile = serde_json::from_str(text)?;
        if file.schema_version != ASSET_SCHEMA_VERSION {
            return Err(LatoError::Format(format!(
                "expression schema version {}",
                file.schema_version
            )));
        }
        let mut fields = BTreeMap::new();
        for (name, entries) in file.fields {
            let kind: Expression = name.parse()?;
            let mut disp = [[0.0; 2]; NUM_LANDMARKS];
            for (idx, d) in entries {
                let i: usize = idx
                    .parse()
                    .ok()
                    .filter(|&i| i < NUM_LANDMARKS)
                    .ok_or_else(|| LatoError::Format(format!("bad landmark index {idx:?}")))?;
                disp[i] = d;
            }
            fields.insert(kind, disp);
        }
        for kind in Expression::ALL {
            if !fields.contains_key(&kind) {
                return Err(LatoError::Format(format!("no field for {kind}")));
            }
        }
        Ok(ExpressionFields { fields })
    }

    pub fn field(&self, kind: Expression) -> &[Point; NUM_LANDMARKS] {
        &self.fields[&kind]
    }
}

/// SHA-256 over both kinematics assets, hex encoded.
pub fn asset_hashes() -> BTreeMap<String, String> {
    [
        ("face_template_v1.json", TEMPLATE_ASSET),
        ("expression_fields_v1.json", EXPRESSION_ASSET),
    ]
    .into_iter()
    .map(|(name, text)| {
        let digest = Sha256::digest(text.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        (name.to_string(), hex)
    })
    .collect()
}
