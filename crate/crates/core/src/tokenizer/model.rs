use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LatoError, Result};
use crate::landmarks::{Canvas, LandmarkSet, Point, NUM_LANDMARKS};

use super::nn::{affine, relu, relu_backward, uniform_bias, uniform_init, BlockCache, ResBlock, SEQ};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    /// Codebook size.
    pub m: usize,
    /// Code dimension, also the network width.
    pub d: usize,
    /// Commitment weight.
    pub beta: f64,
    /// Residual blocks in the encoder (and, mirrored, the decoder).
    pub blocks: usize,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub reset_interval: usize,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            m: 256,
            d: 64,
            beta: 0.25,
            blocks: 2,
            lr: 1e-3,
            batch: 32,
            steps: 4000,
            reset_interval: 50,
            seed: 0,
        }
    }
}

impl TokenizerConfig {
    /// The full-size configuration: 8192 codes of dimension 3072.
    pub fn paper_scale() -> Self {
        TokenizerConfig {
            m: 8192,
            d: 3072,
            batch: 128,
            steps: 100_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(LatoError::Config(m.to_string()));
        if self.m < 2 {
            return fail("codebook size m must be at least 2");
        }
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return fail("code dimension d must be positive and even");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return fail("commitment weight beta must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("learning rate must be positive");
        }
        if self.batch == 0 {
            return fail("batch must be at least 1");
        }
        if self.reset_interval == 0 {
            return fail("reset_interval must be at least 1");
        }
        Ok(())
    }
}

/// Quantized face: one codebook index and its row per landmark.
#[derive(Clone, Debug, PartialEq)]
pub struct FacialTokens {
    pub indices: Vec<usize>,
    pub embeddings: Array2<f64>,
}

impl FacialTokens {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Index of the nearest codebook row for every latent row, by squared
/// Euclidean distance. Ties go to the lower index.
pub fn nearest_codes(latents: ArrayView2<f64>, codebook: &Array2<f64>) -> Result<Vec<usize>> {
    let (m, d) = codebook.dim();
    if m == 0 {
        return Err(LatoError::Config("codebook is empty".into()));
    }
    if latents.ncols() != d {
        return Err(LatoError::Shape(format!(
            "latent dimension {} does not match code dimension {d}",
            latents.ncols()
        )));
    }
    let book = codebook.as_standard_layout();
    let book = book.as_slice().expect("standard layout");
    Ok(latents
        .rows()
        .into_iter()
        .map(|e| {
            let e = e.to_vec();
            let mut best = (f64::INFINITY, 0);
            for (j, c) in book.chunks_exact(d).enumerate() {
                let dist: f64 = e.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, j);
                }
            }
            best.1
        })
        .collect())
}

/// Nearest-neighbour quantization of one face's `68 x d` latents.
pub fn quantize(latents: &Array2<f64>, codebook: &Array2<f64>) -> Result<FacialTokens> {
    if latents.nrows() != NUM_LANDMARKS {
        return Err(LatoError::Shape(format!(
            "expected {NUM_LANDMARKS} latent rows, got {}",
            latents.nrows()
        )));
    }
    let indices = nearest_codes(latents.view(), codebook)?;
    let embeddings = codebook.select(Axis(0), &indices);
    Ok(FacialTokens { indices, embeddings })
}

/// Convolutional VQ autoencoder over the 68-landmark sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizerModel {
    pub(crate) config: TokenizerConfig,
    pub(crate) canvas: Canvas,
    pub(crate) embed_w: Array2<f64>,
    pub(crate) embed_b: Array1<f64>,
    pub(crate) enc: Vec<ResBlock>,
    pub(crate) enc_out_w: Array2<f64>,
    pub(crate) enc_out_b: Array1<f64>,
    pub(crate) dec: Vec<ResBlock>,
    pub(crate) dec_out_w: Array2<f64>,
    pub(crate) dec_out_b: Array1<f64>,
    pub(crate) codebook: Array2<f64>,
}

pub(crate) struct EncCache {
    blocks: Vec<BlockCache>,
    u: Array2<f64>,
    pre: Array2<f64>,
}

pub(crate) struct DecCache {
    blocks: Vec<BlockCache>,
    pre: Array2<f64>,
}

impl TokenizerModel {
    /// Fresh model: uniform fan-in initialization for the network, standard
    /// normal codebook.
    pub fn init(config: &TokenizerConfig, canvas: Canvas) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embed_w = uniform_init(&mut rng, 2, d, 2);
        let embed_b = uniform_bias(&mut rng, d, 2);
        let enc = (0..config.blocks).map(|_| ResBlock::init(&mut rng, d)).collect();
        let enc_out_w = uniform_init(&mut rng, d, d, d);
        let enc_out_b = uniform_bias(&mut rng, d, d);
        let dec = (0..config.blocks).map(|_| ResBlock::init(&mut rng, d)).collect();
        let dec_out_w = uniform_init(&mut rng, d, 2, d);
        let dec_out_b = uniform_bias(&mut rng, 2, d);
        let codebook =
            Array2::from_shape_simple_fn((config.m, d), || StandardNormal.sample(&mut rng));
        Ok(TokenizerModel {
            config: config.clone(),
            canvas,
            embed_w,
            embed_b,
            enc,
            enc_out_w,
            enc_out_b,
            dec,
            dec_out_w,
            dec_out_b,
            codebook,
        })
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn canvas(&self) -> Canvas {
        self.canvas
    }

    pub fn codebook(&self) -> &Array2<f64> {
        &self.codebook
    }

    pub fn codebook_mut(&mut self) -> &mut Array2<f64> {
        &mut self.codebook
    }

    pub(crate) fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.raw_dim());
        TokenizerModel {
            config: self.config.clone(),
            canvas: self.canvas,
            embed_w: z2(&self.embed_w),
            embed_b: z1(&self.embed_b),
            enc: self.enc.iter().map(ResBlock::zeros_like).collect(),
            enc_out_w: z2(&self.enc_out_w),
            enc_out_b: z1(&self.enc_out_b),
            dec: self.dec.iter().map(ResBlock::zeros_like).collect(),
            dec_out_w: z2(&self.dec_out_w),
            dec_out_b: z1(&self.dec_out_b),
            codebook: z2(&self.codebook),
        }
    }

    /// Named parameter tensors with their shapes, in serialization order.
    pub(crate) fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn sl2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        let mut out: Vec<(String, Vec<usize>, &[f64])> = vec![
            ("embed.w".into(), self.embed_w.shape().to_vec(), sl2(&self.embed_w)),
            ("embed.b".into(), self.embed_b.shape().to_vec(), self.embed_b.as_slice().expect("standard layout")),
        ];
        let block_names = ["w1", "b1", "w2", "b2"];
        for (prefix, blocks) in [("enc", &self.enc), ("dec", &self.dec)] {
            for (i, b) in blocks.iter().enumerate() {
                let shapes = [b.w1.shape(), b.b1.shape(), b.w2.shape(), b.b2.shape()];
                for ((name, shape), data) in block_names.iter().zip(shapes).zip(b.tensors()) {
                    out.push((format!("{prefix}.{i}.{name}"), shape.to_vec(), data));
                }
            }
            if prefix == "enc" {
                out.push(("enc.out.w".into(), self.enc_out_w.shape().to_vec(), sl2(&self.enc_out_w)));
                out.push(("enc.out.b".into(), self.enc_out_b.shape().to_vec(), self.enc_out_b.as_slice().expect("standard layout")));
            }
        }
        out.push(("dec.out.w".into(), self.dec_out_w.shape().to_vec(), sl2(&self.dec_out_w)));
        out.push(("dec.out.b".into(), self.dec_out_b.shape().to_vec(), self.dec_out_b.as_slice().expect("standard layout")));
        out.push(("codebook".into(), self.codebook.shape().to_vec(), sl2(&self.codebook)));
        out
    }

    /// Mutable views in the same order as [`Self::tensors`].
    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.embed_w.as_slice_mut().expect("standard layout"),
            self.embed_b.as_slice_mut().expect("standard layout"),
        ];
        for b in &mut self.enc {
            out.extend(b.tensors_mut());
        }
        out.push(self.enc_out_w.as_slice_mut().expect("standard layout"));
        out.push(self.enc_out_b.as_slice_mut().expect("standard layout"));
        for b in &mut self.dec {
            out.extend(b.tensors_mut());
        }
        out.push(self.dec_out_w.as_slice_mut().expect("standard layout"));
        out.push(self.dec_out_b.as_slice_mut().expect("standard layout"));
        out.push(self.codebook.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    /// Maps faces to `[-1, 1]` coordinates, one row per landmark.
    pub(crate) fn normalize(&self, faces: &[&LandmarkSet]) -> Result<Array2<f64>> {
        let (hw, hh) = (self.canvas.width as f64 / 2.0, self.canvas.height as f64 / 2.0);
        let mut u = Array2::zeros((faces.len() * SEQ, 2));
        for (b, f) in faces.iter().enumerate() {
            if f.canvas() != self.canvas {
                return Err(LatoError::Unit(format!(
                    "face canvas {}x{} does not match the model's {}x{}",
                    f.canvas().width,
                    f.canvas().height,
                    self.canvas.width,
                    self.canvas.height
                )));
            }
            for (t, p) in f.points().iter().enumerate() {
                u[[b * SEQ + t, 0]] = p[0] / hw - 1.0;
                u[[b * SEQ + t, 1]] = p[1] / hh - 1.0;
            }
        }
        Ok(u)
    }

    pub(crate) fn denormalize(&self, out: ArrayView2<f64>) -> Result<LandmarkSet> {
        let (hw, hh) = (self.canvas.width as f64 / 2.0, self.canvas.height as f64 / 2.0);
        let pts: Vec<Point> = out
            .rows()
            .into_iter()
            .map(|r| [(r[0] + 1.0) * hw, (r[1] + 1.0) * hh])
            .collect();
        LandmarkSet::from_slice(&pts, self.canvas)
            .map_err(|e| LatoError::Numeric(format!("decoder produced invalid coordinates: {e}")))
            .map(|f| f.clamp())
    }

    pub(crate) fn encode_forward(&self, u: &Array2<f64>) -> (Array2<f64>, EncCache) {
        let mut h = affine(u.view(), &self.embed_w, &self.embed_b);
        let mut caches = Vec::with_capacity(self.enc.len());
        for b in &self.enc {
            let (next, cache) = b.forward_cached(&h);
            caches.push(cache);
            h = next;
        }
        let e = affine(relu(&h).view(), &self.enc_out_w, &self.enc_out_b);
        (
            e,
            EncCache {
                blocks: caches,
                u: u.clone(),
                pre: h,
            },
        )
    }

    pub(crate) fn decode_forward(&self, q: &Array2<f64>) -> (Array2<f64>, DecCache) {
        let mut h = q.clone();
        let mut caches = Vec::with_capacity(self.dec.len());
        for b in &self.dec {
            let (next, cache) = b.forward_cached(&h);
            caches.push(cache);
            h = next;
        }
        let out = affine(relu(&h).view(), &self.dec_out_w, &self.dec_out_b);
        (out, DecCache { blocks: caches, pre: h })
    }

    /// Backpropagates through the decoder; returns the gradient at its input.
    pub(crate) fn decode_backward(&self, cache: &DecCache, dout: &Array2<f64>, g: &mut Self) -> Array2<f64> {
        let r = relu(&cache.pre);
        g.dec_out_w += &r.t().dot(dout);
        g.dec_out_b += &dout.sum_axis(Axis(0));
        let mut dh = dout.dot(&self.dec_out_w.t());
        relu_backward(&mut dh, &cache.pre);
        for (i, b) in self.dec.iter().enumerate().rev() {
            dh = b.backward(&cache.blocks[i], &dh, &mut g.dec[i]);
        }
        dh
    }

    pub(crate) fn encode_backward(&self, cache: &EncCache, de: &Array2<f64>, g: &mut Self) {
        let r = relu(&cache.pre);
        g.enc_out_w += &r.t().dot(de);
        g.enc_out_b += &de.sum_axis(Axis(0));
        let mut dh = de.dot(&self.enc_out_w.t());
        relu_backward(&mut dh, &cache.pre);
        for (i, b) in self.enc.iter().enumerate().rev() {
            dh = b.backward(&cache.blocks[i], &dh, &mut g.enc[i]);
        }
        g.embed_w += &cache.u.t().dot(&dh);
        g.embed_b += &dh.sum_axis(Axis(0));
    }

    /// Continuous latents, `68 x d`.
    pub fn encode(&self, f: &LandmarkSet) -> Result<Array2<f64>> {
        let u = self.normalize(&[f])?;
        Ok(self.encode_forward(&u).0)
    }

    /// Latents for many faces, stacked `(n * 68) x d`.
    pub fn encode_many(&self, faces: &[LandmarkSet]) -> Result<Array2<f64>> {
        let refs: Vec<&LandmarkSet> = faces.iter().collect();
        let u = self.normalize(&refs)?;
        Ok(self.encode_forward(&u).0)
    }

    pub fn quantize(&self, latents: &Array2<f64>) -> Result<FacialTokens> {
        quantize(latents, &self.codebook)
    }

    pub fn tokenize(&self, f: &LandmarkSet) -> Result<FacialTokens> {
        self.quantize(&self.encode(f)?)
    }

    pub fn decode(&self, tokens: &FacialTokens) -> Result<LandmarkSet> {
        self.decode_indices(&tokens.indices)
    }

    pub fn decode_indices(&self, indices: &[usize]) -> Result<LandmarkSet> {
        if indices.len() != NUM_LANDMARKS {
            return Err(LatoError::Shape(format!(
                "expected {NUM_LANDMARKS} tokens, got {}",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.config.m) {
            return Err(LatoError::Range(format!(
                "token index {bad} outside codebook of size {}",
                self.config.m
            )));
        }
        let q = self.codebook.select(Axis(0), indices);
        let out = self.decode_forward(&q).0;
        self.denormalize(out.view())
    }

    /// Encode, quantize and decode.
    pub fn reconstruct(&self, f: &LandmarkSet) -> Result<LandmarkSet> {
        self.decode(&self.tokenize(f)?)
    }

    /// Reconstructs many faces at once, returning the faces and their codes.
    pub fn reconstruct_many(&self, faces: &[LandmarkSet]) -> Result<(Vec<LandmarkSet>, Vec<usize>)> {
        let e = self.encode_many(faces)?;
        let idx = nearest_codes(e.view(), &self.codebook)?;
        let q = self.codebook.select(Axis(0), &idx);
        let out = self.decode_forward(&q).0;
        let recon = (0..faces.len())
            .map(|b| self.denormalize(out.slice(s![b * SEQ..(b + 1) * SEQ, ..])))
            .collect::<Result<Vec<_>>>()?;
        Ok((recon, idx))
    }
}
