use crate::error::Result;
use crate::instruction::{Expression, Intensity};
use crate::landmarks::{interocular_distance, LandmarkSet};

use super::template::{template_interocular, ExpressionFields};

/// Adds the expression's displacement field, scaled by the intensity
/// multiplier and by the face's inter-ocular distance relative to the
/// template. Neutral is the identity.
pub fn apply_expression(
    f: &LandmarkSet,
    kind: Expression,
    intensity: Intensity,
) -> Result<LandmarkSet> {
    if kind == Expression::Neutral {
        return Ok(f.clone());
    }
    let scale = intensity.multiplier() * interocular_distance(f)? / template_interocular();
    let field = ExpressionFields::builtin().field(kind);
    Ok(f
        .map_points(|i, p| [p[0] + scale * field[i][0], p[1] + scale * field[i][1]])?
        .clamp())
}

/// String-typed variant for callers holding raw labels.
pub fn apply_expression_named(f: &LandmarkSet, kind: &str, intensity: &str) -> Result<LandmarkSet> {
    apply_expression(f, kind.parse()?, intensity.parse()?)
}
