//! Unified token sequence of text, source image, landmark and noise tokens,
//! a reference multi-head attention pass with rotary positions, the landmark
//! adapter, unconditional landmark tokens and guidance combination.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LatoError, Result};
use crate::landmarks::{LandmarkSet, NUM_LANDMARKS};
use crate::posenc::{
    apply_rope, grid_for, image_positions, landmark_positions, text_positions, PositionTriple,
    RopeLayout,
};
use crate::tokenizer::FacialTokens;

/// Guidance scales swept in the ablation.
pub const CFG_SCALES: [f64; 4] = [1.0, 4.0, 7.0, 10.0];
/// The scale used by default.
pub const DEFAULT_CFG_SCALE: f64 = 4.0;
/// Probability of swapping the landmark condition for unconditional tokens
/// during training.
pub const UNCOND_PROBABILITY: f64 = 0.1;
/// Text length used when none is given.
pub const DEFAULT_TEXT_TOKENS: usize = 77;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Text,
    Source,
    Landmark,
    Noise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub tokens: Array2<f64>,
    pub positions: Vec<PositionTriple>,
    pub segments: Vec<Segment>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_model(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<Segment> {
        self.segments.iter().copied().find(|s| s.kind == kind)
    }

    /// Builds a sequence directly from tokens and positions, as one segment.
    pub fn from_parts(tokens: Array2<f64>, positions: Vec<PositionTriple>) -> Result<Self> {
        if tokens.nrows() != positions.len() {
            return Err(LatoError::Shape(format!(
                "{} tokens but {} positions",
                tokens.nrows(),
                positions.len()
            )));
        }
        let segments = vec![Segment {
            kind: SegmentKind::Text,
            start: 0,
            len: positions.len(),
        }];
        Ok(TokenSequence {
            tokens,
            positions,
            segments,
        })
    }
}

/// Linear projection of facial-token embeddings into the model width.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkAdapter {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LandmarkAdapter {
    pub fn init<R: Rng>(rng: &mut R, d_code: usize, d_model: usize) -> Self {
        let scale = 1.0 / (d_code as f64).sqrt();
        LandmarkAdapter {
            weight: Array2::from_shape_simple_fn((d_code, d_model), || {
                scale * Distribution::<f64>::sample(&StandardNormal, rng)
            }),
            bias: Array1::zeros(d_model),
        }
    }

    pub fn d_model(&self) -> usize {
        self.weight.ncols()
    }

    pub fn project(&self, embeddings: &Array2<f64>) -> Result<Array2<f64>> {
        if embeddings.ncols() != self.weight.nrows() {
            return Err(LatoError::Shape(format!(
                "adapter expects code dimension {}, got {}",
                self.weight.nrows(),
                embeddings.ncols()
            )));
        }
        Ok(embeddings.dot(&self.weight) + &self.bias)
    }
}

/// Learnable stand-ins for the 68 landmark tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct UncondTokens {
    pub tokens: Array2<f64>,
    pub probability: f64,
}

impl UncondTokens {
    pub fn new(tokens: Array2<f64>, probability: f64) -> Result<Self> {
        if tokens.nrows() != NUM_LANDMARKS {
            return Err(LatoError::Shape(format!(
                "unconditional tokens need {NUM_LANDMARKS} rows, got {}",
                tokens.nrows()
            )));
        }
        if !(0.0..=1.0).contains(&probability) {
            return Err(LatoError::Config(format!(
                "replacement probability {probability} outside [0, 1]"
            )));
        }
        Ok(UncondTokens { tokens, probability })
    }

    pub fn init<R: Rng>(rng: &mut R, d_model: usize) -> Self {
        let tokens = Array2::from_shape_simple_fn((NUM_LANDMARKS, d_model), || {
            0.02 * Distribution::<f64>::sample(&StandardNormal, rng)
        });
        UncondTokens {
            tokens,
            probability: UNCOND_PROBABILITY,
        }
    }
}

/// The landmark condition: its tokens and the face they encode.
#[derive(Clone, Copy, Debug)]
pub struct LandmarkCondition<'a> {
    pub tokens: &'a FacialTokens,
    pub face: &'a LandmarkSet,
    pub stride: u32,
}

#[derive(Clone, Copy, Debug)]
pub struct SequenceInputs<'a> {
    pub text: &'a Array2<f64>,
    pub source: &'a Array2<f64>,
    pub noise: &'a Array2<f64>,
    /// Latent grid `(rows, cols)` shared by source and noise tokens.
    pub grid: (u32, u32),
    pub landmarks: Option<LandmarkCondition<'a>>,
}

/// Concatenates text, source, landmark and noise tokens with their
/// positions. Landmark tokens take the position of the grid cell under
/// their pixel; image tokens enumerate the grid; text tokens count along
/// the first axis.
pub fn assemble(inputs: &SequenceInputs, adapter: &LandmarkAdapter) -> Result<TokenSequence> {
    let d = inputs.text.ncols();
    let (gh, gw) = inputs.grid;
    let grid = image_positions(gh, gw)?;
    for (name, m) in [("source", inputs.source), ("noise", inputs.noise)] {
        if m.ncols() != d {
            return Err(LatoError::Shape(format!("{name} tokens have width {}, text has {d}", m.ncols())));
        }
        if m.nrows() != grid.len() {
            return Err(LatoError::Shape(format!(
                "{name} has {} tokens for a {gh}x{gw} grid",
                m.nrows()
            )));
        }
    }

    let mut parts = vec![(SegmentKind::Text, inputs.text.clone(), text_positions(inputs.text.nrows()))];
    parts.push((SegmentKind::Source, inputs.source.clone(), grid.clone()));
    if let Some(cond) = inputs.landmarks {
        if cond.tokens.len() != NUM_LANDMARKS {
            return Err(LatoError::Shape(format!(
                "expected {NUM_LANDMARKS} facial tokens, got {}",
                cond.tokens.len()
            )));
        }
        if adapter.d_model() != d {
            return Err(LatoError::Shape(format!(
                "adapter width {} does not match model width {d}",
                adapter.d_model()
            )));
        }
        if grid_for(cond.face, cond.stride)? != (gh, gw) {
            return Err(LatoError::Shape(format!(
                "landmark stride {} does not map the canvas onto the {gh}x{gw} grid",
                cond.stride
            )));
        }
        let z_f = adapter.project(&cond.tokens.embeddings)?;
        parts.push((SegmentKind::Landmark, z_f, landmark_positions(cond.face, cond.stride)?));
    }
    parts.push((SegmentKind::Noise, inputs.noise.clone(), grid));

    let mut segments = Vec::with_capacity(parts.len());
    let mut start = 0;
    for (kind, m, _) in &parts {
        segments.push(Segment {
            kind: *kind,
            start,
            len: m.nrows(),
        });
        start += m.nrows();
    }
    let views: Vec<_> = parts.iter().map(|p| p.1.view()).collect();
    let tokens = concatenate(Axis(0), &views).map_err(|e| LatoError::Shape(e.to_string()))?;
    let positions = parts.into_iter().flat_map(|p| p.2).collect();
    Ok(TokenSequence {
        tokens,
        positions,
        segments,
    })
}

/// Projection weights of one attention block. Tokens are row vectors, so
/// `Q = Z * W_q`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlockParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub heads: usize,
    pub layout: RopeLayout,
}

impl AttentionBlockParams {
    pub fn init<R: Rng>(rng: &mut R, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(LatoError::Config(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        let layout = RopeLayout::for_head_dim(d_model / heads)?;
        let scale = 1.0 / (d_model as f64).sqrt();
        let mut w = || {
            Array2::from_shape_simple_fn((d_model, d_model), || scale * Distribution::<f64>::sample(&StandardNormal, rng))
        };
        Ok(AttentionBlockParams {
            wq: w(),
            wk: w(),
            wv: w(),
            wo: w(),
            heads,
            layout,
        })
    }

    pub fn d_model(&self) -> usize {
        self.wq.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_model();
        for (name, m) in [("W_q", &self.wq), ("W_k", &self.wk), ("W_v", &self.wv), ("W_o", &self.wo)] {
            if m.dim() != (d, d) {
                return Err(LatoError::Shape(format!("{name} is {:?}, expected ({d}, {d})", m.dim())));
            }
        }
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(LatoError::Config(format!("d_model {d} is not divisible by {} heads", self.heads)));
        }
        if self.layout.head_dim != d / self.heads {
            return Err(LatoError::Shape(format!(
                "rotary layout head_dim {} but heads are {} wide",
                self.layout.head_dim,
                d / self.heads
            )));
        }
        self.layout.validate()
    }
}

fn rope_rows(m: &Array2<f64>, positions: &[PositionTriple], layout: &RopeLayout) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(m.raw_dim());
    for (i, row) in m.rows().into_iter().enumerate() {
        let r = apply_rope(&row.to_vec(), positions[i], layout)?;
        out.row_mut(i).assign(&Array1::from(r));
    }
    Ok(out)
}

/// Full bidirectional attention; also returns each head's attention matrix.
pub fn attention_with_weights(
    seq: &TokenSequence,
    params: &AttentionBlockParams,
) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    params.validate()?;
    if seq.d_model() != params.d_model() {
        return Err(LatoError::Shape(format!(
            "sequence width {} vs block width {}",
            seq.d_model(),
            params.d_model()
        )));
    }
    if seq.positions.len() != seq.len() {
        return Err(LatoError::Shape("positions do not match tokens".into()));
    }
    if seq.tokens.iter().any(|v| !v.is_finite()) {
        return Err(LatoError::Numeric("non-finite value in token sequence".into()));
    }
    let z = &seq.tokens;
    let (q, k, v) = (z.dot(&params.wq), z.dot(&params.wk), z.dot(&params.wv));
    let hd = params.layout.head_dim;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut heads_out = Vec::with_capacity(params.heads);
    let mut weights = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let qh = rope_rows(&q.slice(cols).to_owned(), &seq.positions, &params.layout)?;
        let kh = rope_rows(&k.slice(cols).to_owned(), &seq.positions, &params.layout)?;
        let mut a = qh.dot(&kh.t()) * scale;
        for mut row in a.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        heads_out.push(a.dot(&v.slice(cols)));
        weights.push(a);
    }
    let views: Vec<_> = heads_out.iter().map(|m| m.view()).collect();
    let cat = concatenate(Axis(1), &views).map_err(|e| LatoError::Shape(e.to_string()))?;
    let out = cat.dot(&params.wo);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(LatoError::Numeric("attention produced non-finite output".into()));
    }
    Ok((out, weights))
}

pub fn attention_forward(seq: &TokenSequence, params: &AttentionBlockParams) -> Result<Array2<f64>> {
    attention_with_weights(seq, params).map(|r| r.0)
}

/// With probability `uncond.probability` (one draw per sequence) swaps the
/// landmark tokens for the unconditional ones. Positions are kept. Returns
/// whether the swap happened.
pub fn replace_uncond<R: Rng>(
    seq: &TokenSequence,
    uncond: &UncondTokens,
    rng: &mut R,
) -> Result<(TokenSequence, bool)> {
    let seg = seq
        .segment(SegmentKind::Landmark)
        .ok_or_else(|| LatoError::Shape("sequence has no landmark segment".into()))?;
    if uncond.tokens.ncols() != seq.d_model() {
        return Err(LatoError::Shape(format!(
            "unconditional tokens are {} wide, sequence is {}",
            uncond.tokens.ncols(),
            seq.d_model()
        )));
    }
    let mut out = seq.clone();
    let swap = rng.random::<f64>() < uncond.probability;
    if swap {
        out.tokens
            .slice_mut(s![seg.start..seg.start + seg.len, ..])
            .assign(&uncond.tokens);
    }
    Ok((out, swap))
}

/// Guided output `u + w (c - u)`, evaluated as `(1 - w) u + w c` so that
/// `w = 0` and `w = 1` return the inputs bit for bit.
pub fn cfg_combine(uncond: &Array2<f64>, cond: &Array2<f64>, w: f64) -> Result<Array2<f64>> {
    if uncond.dim() != cond.dim() {
        return Err(LatoError::Shape(format!(
            "unconditional output {:?} vs conditional {:?}",
            uncond.dim(),
            cond.dim()
        )));
    }
    Ok(uncond * (1.0 - w) + cond * w)
}

pub fn cfg_sweep(uncond: &Array2<f64>, cond: &Array2<f64>, scales: &[f64]) -> Result<Vec<(f64, Array2<f64>)>> {
    scales
        .iter()
        .map(|&w| cfg_combine(uncond, cond, w).map(|o| (w, o)))
        .collect()
}

/// Token counts per segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLengths {
    pub text: usize,
    pub source: usize,
    pub landmark: usize,
    pub noise: usize,
}

impl SequenceLengths {
    pub const fn new(text: usize, source: usize, landmark: usize, noise: usize) -> Self {
        SequenceLengths {
            text,
            source,
            landmark,
            noise,
        }
    }

    pub fn total(&self) -> usize {
        self.text + self.source + self.landmark + self.noise
    }

    /// Pairwise attention logits per head and layer.
    pub fn logits(&self) -> u128 {
        let t = self.total() as u128;
        t * t
    }

    /// The same sequence conditioned on a rendered landmark image, which
    /// costs as many tokens as the noise grid.
    pub fn rendered(&self) -> Self {
        SequenceLengths {
            landmark: self.noise,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionCost {
    pub lengths: SequenceLengths,
    pub tokens_total: usize,
    pub pairwise_logits: u128,
    pub baseline_tokens: usize,
    pub baseline_logits: u128,
    pub rendered_tokens: usize,
    pub rendered_logits: u128,
    /// `pairwise_logits / rendered_logits`.
    pub relative_cost_vs_rendered: f64,
    /// `pairwise_logits / baseline_logits`, baseline having no landmark tokens.
    pub relative_cost_vs_baseline: f64,
}

pub fn attention_cost(lengths: SequenceLengths) -> AttentionCost {
    compare_cost(lengths, lengths.rendered())
}

/// Cost of `lengths` against an explicit rendered-conditioning layout.
pub fn compare_cost(lengths: SequenceLengths, rendered: SequenceLengths) -> AttentionCost {
    let baseline = SequenceLengths {
        landmark: 0,
        ..lengths
    };
    let ratio = |a: u128, b: u128| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    AttentionCost {
        lengths,
        tokens_total: lengths.total(),
        pairwise_logits: lengths.logits(),
        baseline_tokens: baseline.total(),
        baseline_logits: baseline.logits(),
        rendered_tokens: rendered.total(),
        rendered_logits: rendered.logits(),
        relative_cost_vs_rendered: ratio(lengths.logits(), rendered.logits()),
        relative_cost_vs_baseline: ratio(lengths.logits(), baseline.logits()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || StandardNormal.sample(rng))
    }

    #[test]
    fn cost_examples() {
        let c = attention_cost(SequenceLengths::new(77, 1024, 68, 1024));
        assert_eq!(c.tokens_total, 2193);
        assert_eq!(c.rendered_tokens, 3149);
        let expected = (2193.0f64 / 3149.0).powi(2);
        assert!((c.relative_cost_vs_rendered - expected).abs() < 1e-12);

        let none = attention_cost(SequenceLengths::new(77, 1024, 0, 1024));
        assert_eq!(none.pairwise_logits, none.baseline_logits);

        let doubled = attention_cost(SequenceLengths::new(154, 2048, 136, 2048));
        assert_eq!(doubled.pairwise_logits, 4 * c.pairwise_logits);
    }

    #[test]
    fn cfg_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (u, c) = (random(&mut rng, 3, 4), random(&mut rng, 3, 4));
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
        let four = cfg_combine(&Array2::zeros((1, 1)), &Array2::ones((1, 1)), 4.0).unwrap();
        assert_eq!(four[[0, 0]], 4.0);
        let w = 2.7;
        let swapped = cfg_combine(&c, &u, 1.0 - w).unwrap();
        for (a, b) in cfg_combine(&u, &c, w).unwrap().iter().zip(swapped.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(cfg_combine(&u, &random(&mut rng, 2, 4), 4.0).is_err());
        let sweep = cfg_sweep(&u, &c, &CFG_SCALES).unwrap();
        assert_eq!(sweep.len(), 4);
        assert_eq!(sweep[0].1, c);
    }

    #[test]
    fn single_token_attention_is_value_then_output_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = AttentionBlockParams::init(&mut rng, 16, 2).unwrap();
        let z = random(&mut rng, 1, 16);
        let seq = TokenSequence::from_parts(z.clone(), vec![PositionTriple::new(3, 4, 5)]).unwrap();
        let out = attention_forward(&seq, &params).unwrap();
        let expected = z.dot(&params.wv).dot(&params.wo);
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_input_is_a_numeric_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = AttentionBlockParams::init(&mut rng, 8, 1).unwrap();
        let mut z = random(&mut rng, 2, 8);
        z[[1, 3]] = f64::NAN;
        let seq = TokenSequence::from_parts(z, vec![PositionTriple::default(); 2]).unwrap();
        assert!(matches!(attention_forward(&seq, &params), Err(LatoError::Numeric(_))));
    }

    #[test]
    fn uncond_probability_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 4;
        let seq = TokenSequence {
            tokens: random(&mut rng, NUM_LANDMARKS + 2, d),
            positions: vec![PositionTriple::default(); NUM_LANDMARKS + 2],
            segments: vec![
                Segment { kind: SegmentKind::Text, start: 0, len: 2 },
                Segment { kind: SegmentKind::Landmark, start: 2, len: NUM_LANDMARKS },
            ],
        };
        let never = UncondTokens::new(Array2::zeros((NUM_LANDMARKS, d)), 0.0).unwrap();
        let always = UncondTokens::new(Array2::zeros((NUM_LANDMARKS, d)), 1.0).unwrap();
        for _ in 0..10_000 {
            assert!(!replace_uncond(&seq, &never, &mut rng).unwrap().1);
        }
        for _ in 0..100 {
            let (out, swapped) = replace_uncond(&seq, &always, &mut rng).unwrap();
            assert!(swapped);
            assert_eq!(out.positions, seq.positions);
            assert!(out.tokens.slice(s![2.., ..]).iter().all(|&v| v == 0.0));
            assert_eq!(out.tokens.slice(s![..2, ..]), seq.tokens.slice(s![..2, ..]));
        }
        assert!(UncondTokens::new(Array2::zeros((NUM_LANDMARKS, d)), 1.5).is_err());
    }
}
