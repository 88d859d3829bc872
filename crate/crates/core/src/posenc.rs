//! Three-axis rotary position encoding over (text, row, column), and the
//! location mapping that places each landmark token on the latent-grid cell
//! covering its pixel.

use serde::{Deserialize, Serialize};

use crate::error::{LatoError, Result};
use crate::landmarks::LandmarkSet;

/// Position of one token: text index, latent-grid row, latent-grid column.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PositionTriple {
    pub t: u32,
    pub h: u32,
    pub w: u32,
}

impl PositionTriple {
    pub const fn new(t: u32, h: u32, w: u32) -> Self {
        PositionTriple { t, h, w }
    }

    pub fn as_signed(self) -> [i64; 3] {
        [self.t as i64, self.h as i64, self.w as i64]
    }

    /// Per-axis difference `self - other`.
    pub fn offset_from(self, other: PositionTriple) -> [i64; 3] {
        let (a, b) = (self.as_signed(), other.as_signed());
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }
}

/// How the rotary dimensions of one head are split across the three axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RopeLayout {
    pub head_dim: usize,
    pub axes: [usize; 3],
    pub base: f64,
}

impl Default for RopeLayout {
    fn default() -> Self {
        RopeLayout {
            head_dim: 64,
            axes: [16, 24, 24],
            base: 10_000.0,
        }
    }
}

impl RopeLayout {
    pub fn new(head_dim: usize, axes: [usize; 3], base: f64) -> Result<Self> {
        let layout = RopeLayout { head_dim, axes, base };
        layout.validate()?;
        Ok(layout)
    }

    /// Splits `head_dim` as 1/4 text and 3/8 for each spatial axis, rounded
    /// to even sizes.
    pub fn for_head_dim(head_dim: usize) -> Result<Self> {
        let t = (head_dim / 4) & !1;
        let h = ((head_dim - t) / 2) & !1;
        Self::new(head_dim, [t, h, head_dim - t - h], 10_000.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.iter().sum::<usize>() != self.head_dim {
            return Err(LatoError::Config(format!(
                "axis dims {:?} do not sum to head_dim {}",
                self.axes, self.head_dim
            )));
        }
        if self.axes.iter().any(|a| a % 2 != 0) {
            return Err(LatoError::Config(format!("axis dims {:?} must all be even", self.axes)));
        }
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(LatoError::Config("rotary base must be positive".into()));
        }
        Ok(())
    }
}

/// Token-index to grid-cell convention for image tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridOrder {
    /// `row = i / grid_w`, `col = i % grid_w`.
    #[default]
    RowMajor,
    /// `row = i / grid_h`, `col = i % grid_h`, written with the grid height
    /// as divisor. Equal to row-major on square grids.
    HeightDivisor,
}

pub fn image_positions(grid_h: u32, grid_w: u32) -> Result<Vec<PositionTriple>> {
    image_positions_with(grid_h, grid_w, GridOrder::RowMajor)
}

pub fn image_positions_with(grid_h: u32, grid_w: u32, order: GridOrder) -> Result<Vec<PositionTriple>> {
    if grid_h == 0 || grid_w == 0 {
        return Err(LatoError::Config("grid dimensions must be at least 1".into()));
    }
    let div = match order {
        GridOrder::RowMajor => grid_w,
        GridOrder::HeightDivisor => grid_h,
    };
    Ok((0..grid_h * grid_w)
        .map(|i| PositionTriple::new(0, i / div, i % div))
        .collect())
}

/// `(i, 0, 0)` for each of `len` text tokens.
pub fn text_positions(len: usize) -> Vec<PositionTriple> {
    (0..len as u32).map(|i| PositionTriple::new(i, 0, 0)).collect()
}

/// Latent-grid cell of a pixel, clamped into the grid.
pub fn cell_of(x: f64, y: f64, stride: u32, grid_h: u32, grid_w: u32) -> PositionTriple {
    let s = stride as f64;
    let cell = |v: f64, n: u32| ((v / s).floor().max(0.0) as u32).min(n - 1);
    PositionTriple::new(0, cell(y, grid_h), cell(x, grid_w))
}

/// Grid size for a canvas at `stride`.
pub fn grid_for(f: &LandmarkSet, stride: u32) -> Result<(u32, u32)> {
    let c = f.canvas();
    if stride == 0 {
        return Err(LatoError::Config("stride must be positive".into()));
    }
    if !c.width.is_multiple_of(stride) || !c.height.is_multiple_of(stride) {
        return Err(LatoError::Config(format!(
            "stride {stride} does not divide the {}x{} canvas",
            c.width, c.height
        )));
    }
    Ok((c.height / stride, c.width / stride))
}

/// Each landmark's position is that of the image token covering it:
/// `(0, floor(Y / stride), floor(X / stride))`.
pub fn landmark_positions(f: &LandmarkSet, stride: u32) -> Result<Vec<PositionTriple>> {
    let (gh, gw) = grid_for(f, stride)?;
    Ok(f.points()
        .iter()
        .map(|p| cell_of(p[0], p[1], stride, gh, gw))
        .collect())
}

pub fn apply_rope(v: &[f64], p: PositionTriple, layout: &RopeLayout) -> Result<Vec<f64>> {
    apply_rope_signed(v, p.as_signed(), layout)
}

/// Rotary encoding at an arbitrary signed per-axis position. Within each
/// axis band of width `d_a`, pair `(2j, 2j+1)` turns by
/// `pos * base^(-2j / d_a)`.
pub fn apply_rope_signed(v: &[f64], pos: [i64; 3], layout: &RopeLayout) -> Result<Vec<f64>> {
    layout.validate()?;
    if v.len() != layout.head_dim {
        return Err(LatoError::Shape(format!(
            "vector of length {} for head_dim {}",
            v.len(),
            layout.head_dim
        )));
    }
    let mut out = v.to_vec();
    let mut start = 0;
    for (axis, &da) in layout.axes.iter().enumerate() {
        let p = pos[axis] as f64;
        if p != 0.0 {
            for j in 0..da / 2 {
                let theta = p * layout.base.powf(-2.0 * j as f64 / da as f64);
                let (s, c) = theta.sin_cos();
                let (i0, i1) = (start + 2 * j, start + 2 * j + 1);
                let (a, b) = (v[i0], v[i1]);
                out[i0] = a * c - b * s;
                out[i1] = a * s + b * c;
            }
        }
        start += da;
    }
    Ok(out)
}
