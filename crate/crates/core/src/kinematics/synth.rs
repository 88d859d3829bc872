//! Synthetic faces: the template under random scale, head pose, expression
//! and translation. Used as training data for the tokenizer and as
//! curation fixtures.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::instruction::{Expression, Intensity};
use crate::landmarks::{LandmarkSet, NUM_LANDMARKS};

use super::pose::head_rotation;
use super::template::{CanonicalFace3D, ExpressionFields};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub max_yaw: f64,
    pub max_pitch: f64,
    pub scale: (f64, f64),
    pub max_shift: f64,
    pub expressions: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            max_yaw: 30.0,
            max_pitch: 20.0,
            scale: (0.85, 1.15),
            max_shift: 20.0,
            expressions: true,
        }
    }
}

pub struct FaceSynth {
    rng: ChaCha8Rng,
    config: SynthConfig,
}

impl FaceSynth {
    pub fn new(seed: u64, config: SynthConfig) -> Self {
        FaceSynth {
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
        }
    }

    /// Draws one face, returning it with the parameters used.
    pub fn sample(&mut self) -> (LandmarkSet, f64, f64, Expression, Intensity) {
        let c = &self.config;
        let rng = &mut self.rng;
        let scale = rng.random_range(c.scale.0..=c.scale.1);
        let yaw = rng.random_range(-c.max_yaw..=c.max_yaw);
        let pitch = rng.random_range(-c.max_pitch..=c.max_pitch);
        let (kind, intensity) = if c.expressions {
            (
                Expression::ALL[rng.random_range(0..Expression::ALL.len())],
                Intensity::ALL[rng.random_range(0..Intensity::ALL.len())],
            )
        } else {
            (Expression::Neutral, Intensity::Normally)
        };
        let shift = [
            rng.random_range(-c.max_shift..=c.max_shift),
            rng.random_range(-c.max_shift..=c.max_shift),
        ];

        let template = CanonicalFace3D::builtin();
        let tc = template.centroid();
        let r = head_rotation(pitch, yaw);
        let field = ExpressionFields::builtin().field(kind);
        let k = intensity.multiplier() * scale;
        let mut pts = [[0.0; 2]; NUM_LANDMARKS];
        for (i, out) in pts.iter_mut().enumerate() {
            let t = template.points()[i];
            let v = r * Vector3::new(t[0] - tc[0], t[1] - tc[1], t[2] - tc[2]) * scale;
            *out = [
                tc[0] + v.x + k * field[i][0] + shift[0],
                tc[1] + v.y + k * field[i][1] + shift[1],
            ];
        }
        let f = LandmarkSet::new(pts, template.canvas())
            .expect("synthetic coordinates are finite")
            .clamp();
        (f, yaw, pitch, kind, intensity)
    }

    pub fn next_face(&mut self) -> LandmarkSet {
        self.sample().0
    }
}

impl Iterator for FaceSynth {
    type Item = LandmarkSet;

    fn next(&mut self) -> Option<LandmarkSet> {
        Some(self.next_face())
    }
}

/// `n` faces from the default distribution.
pub fn synthesize(n: usize, seed: u64) -> Vec<LandmarkSet> {
    FaceSynth::new(seed, SynthConfig::default()).take(n).collect()
}
