//! Layers of the tokenizer network with hand-written backward passes.
//!
//! Activations are `(batch * 68) x channels` matrices, one row per landmark,
//! samples stored contiguously. Convolutions run along the landmark axis with
//! kernel 3 and zero padding, computed as a single GEMM over an unfolded
//! input.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::landmarks::NUM_LANDMARKS;

pub(crate) const SEQ: usize = NUM_LANDMARKS;

pub(crate) fn uniform_init<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

pub(crate) fn uniform_bias<R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Array1<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array1::from_shape_simple_fn(n, || dist.sample(rng))
}

pub(crate) fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Zeroes `grad` wherever the pre-activation was not positive.
pub(crate) fn relu_backward(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

/// `x * w + b` with the bias broadcast over rows.
pub(crate) fn affine(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Unfolds `h` so that row `r` holds `[h[r-1], h[r], h[r+1]]`, with zeros
/// past either end of each sample.
pub(crate) fn unfold(h: &Array2<f64>) -> Array2<f64> {
    let (rows, c) = h.dim();
    let src = h.as_slice().expect("standard layout");
    let mut out = vec![0.0; rows * 3 * c];
    for (r, dst) in out.chunks_exact_mut(3 * c).enumerate() {
        let t = r % SEQ;
        if t > 0 {
            dst[..c].copy_from_slice(&src[(r - 1) * c..r * c]);
        }
        dst[c..2 * c].copy_from_slice(&src[r * c..(r + 1) * c]);
        if t + 1 < SEQ {
            dst[2 * c..].copy_from_slice(&src[(r + 1) * c..(r + 2) * c]);
        }
    }
    Array2::from_shape_vec((rows, 3 * c), out).expect("shape matches")
}

/// Adjoint of [`unfold`].
pub(crate) fn fold(dx: &Array2<f64>) -> Array2<f64> {
    let (rows, c3) = dx.dim();
    let c = c3 / 3;
    let src = dx.as_slice().expect("standard layout");
    let mut out = vec![0.0; rows * c];
    for r in 0..rows {
        let t = r % SEQ;
        let row = &src[r * c3..(r + 1) * c3];
        let (prev, rest) = row.split_at(c);
        let (cur, next) = rest.split_at(c);
        for (o, v) in out[r * c..(r + 1) * c].iter_mut().zip(cur) {
            *o += v;
        }
        if t > 0 {
            for (o, v) in out[(r - 1) * c..r * c].iter_mut().zip(prev) {
                *o += v;
            }
        }
        if t + 1 < SEQ {
            for (o, v) in out[(r + 1) * c..(r + 2) * c].iter_mut().zip(next) {
                *o += v;
            }
        }
    }
    Array2::from_shape_vec((rows, c), out).expect("shape matches")
}

/// `h + conv(relu(conv(relu(h))))`. Conv weights are `3c x c`, rows ordered
/// by tap (previous, current, next landmark) then input channel.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ResBlock {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

pub(crate) struct BlockCache {
    h: Array2<f64>,
    x1: Array2<f64>,
    z1: Array2<f64>,
    x2: Array2<f64>,
}

impl ResBlock {
    pub fn init<R: Rng>(rng: &mut R, c: usize) -> Self {
        ResBlock {
            w1: uniform_init(rng, 3 * c, c, 3 * c),
            b1: uniform_bias(rng, c, 3 * c),
            w2: uniform_init(rng, 3 * c, c, 3 * c),
            b2: uniform_bias(rng, c, 3 * c),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ResBlock {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
        }
    }

    pub fn forward_cached(&self, h: &Array2<f64>) -> (Array2<f64>, BlockCache) {
        let x1 = unfold(&relu(h));
        let z1 = affine(x1.view(), &self.w1, &self.b1);
        let x2 = unfold(&relu(&z1));
        let out = h + &affine(x2.view(), &self.w2, &self.b2);
        (
            out,
            BlockCache {
                h: h.clone(),
                x1,
                z1,
                x2,
            },
        )
    }

    /// Accumulates parameter gradients into `g` and returns the input gradient.
    pub fn backward(&self, cache: &BlockCache, dout: &Array2<f64>, g: &mut ResBlock) -> Array2<f64> {
        g.w2 += &cache.x2.t().dot(dout);
        g.b2 += &dout.sum_axis(Axis(0));
        let mut dz1 = fold(&dout.dot(&self.w2.t()));
        relu_backward(&mut dz1, &cache.z1);
        g.w1 += &cache.x1.t().dot(&dz1);
        g.b1 += &dz1.sum_axis(Axis(0));
        let mut dh = fold(&dz1.dot(&self.w1.t()));
        relu_backward(&mut dh, &cache.h);
        dh += dout;
        dh
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Adam with bias correction.
pub(crate) struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&self, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..p.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
        }
    }
}
