//! Grayscale images and the Laplacian-of-Gaussian sharpness score.

use std::path::Path;

use ndarray::Array2;

use crate::error::{LatoError, Result};

/// Smallest side accepted by [`blur_score`].
pub const MIN_SIDE: usize = 7;

const SIGMA: f64 = 1.0;
const RADIUS: usize = 3;

/// Reads an 8-bit grayscale image (binary PGM, or anything the decoder
/// accepts, converted to luma). Rows index `y`.
pub fn read_gray(path: impl AsRef<Path>) -> Result<Array2<u8>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => LatoError::io(path, io),
        other => LatoError::Format(format!("{}: {other}", path.display())),
    })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), luma.into_raw())
        .map_err(|e| LatoError::Shape(e.to_string()))
}

/// Writes a binary (P5) PGM.
pub fn write_pgm(path: impl AsRef<Path>, img: &Array2<u8>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = img.dim();
    let data: Vec<u8> = img.iter().copied().collect();
    image::save_buffer_with_format(
        path,
        &data,
        w as u32,
        h as u32,
        image::ExtendedColorType::L8,
        image::ImageFormat::Pnm,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => LatoError::io(path, io),
        other => LatoError::Format(format!("{}: {other}", path.display())),
    })
}

/// Half-sample symmetric reflection: `... b a | a b c ... | c b ...`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

fn gaussian_taps() -> Vec<f64> {
    let r = RADIUS as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur (sigma 1, radius 3) with reflected borders.
pub fn gaussian_blur(img: &Array2<f64>) -> Array2<f64> {
    let taps = gaussian_taps();
    let (h, w) = img.dim();
    let r = RADIUS as isize;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            tmp[[y, x]] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * img[[y, reflect(x as isize + k as isize - r, w)]])
                .sum();
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[[reflect(y as isize + k as isize - r, h), x]])
                .sum();
        }
    }
    out
}

/// Five-point Laplacian with reflected borders.
pub fn laplacian(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let at = |dy: isize, dx: isize| {
            img[[reflect(y as isize + dy, h), reflect(x as isize + dx, w)]]
        };
        at(-1, 0) + at(1, 0) + at(0, -1) + at(0, 1) - 4.0 * at(0, 0)
    })
}

/// Population variance of the Laplacian of the Gaussian-smoothed image.
/// Higher means sharper.
pub fn blur_score(img: &Array2<u8>) -> Result<f64> {
    let (h, w) = img.dim();
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(LatoError::Shape(format!(
            "image {w}x{h} is smaller than {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    let f = img.mapv(f64::from);
    let log = laplacian(&gaussian_blur(&f));
    let n = log.len() as f64;
    let mean = log.sum() / n;
    Ok(log.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}
