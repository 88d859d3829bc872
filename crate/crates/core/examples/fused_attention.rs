//! Builds the fused text/source/landmark/noise sequence, runs one attention
//! block over it, applies classifier-free guidance and compares the cost
//! with conditioning on a rendered landmark image.

use anyhow::Result;
use lato::fuser::{
    assemble, attention_cost, attention_forward, cfg_sweep, replace_uncond, AttentionBlockParams, LandmarkAdapter,
    LandmarkCondition, SequenceInputs, SequenceLengths, UncondTokens, CFG_SCALES,
};
use lato::kinematics::template::reference_face;
use lato::landmarks::Canvas;
use lato::tokenizer::{TokenizerConfig, TokenizerModel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (d_model, text_len, stride) = (32, 8, 32);
    let mut noise = |n: usize| Array2::from_shape_simple_fn((n, d_model), || rng.random_range(-1.0..1.0));
    let (text, source, latent) = (noise(text_len), noise(256), noise(256));

    // An untrained tokenizer is enough to show the plumbing.
    let tokenizer = TokenizerModel::init(&TokenizerConfig { blocks: 1, ..Default::default() }, Canvas::default())?;
    let face = reference_face();
    let tokens = tokenizer.tokenize(&face)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let adapter = LandmarkAdapter::init(&mut rng, tokens.embeddings.ncols(), d_model);
    let inputs = SequenceInputs {
        text: &text,
        source: &source,
        noise: &latent,
        grid: (16, 16),
        landmarks: Some(LandmarkCondition { tokens: &tokens, face: &face, stride }),
    };
    let cond_seq = assemble(&inputs, &adapter)?;
    let uncond = UncondTokens { probability: 1.0, ..UncondTokens::init(&mut rng, d_model) };
    let (uncond_seq, _) = replace_uncond(&cond_seq, &uncond, &mut rng)?;
    println!("sequence of {} tokens: {:?}", cond_seq.len(), cond_seq.segments);

    let params = AttentionBlockParams::init(&mut rng, d_model, 4)?;
    let cond = attention_forward(&cond_seq, &params)?;
    let plain = attention_forward(&uncond_seq, &params)?;
    for (w, out) in cfg_sweep(&plain, &cond, &CFG_SCALES)? {
        let shift = (&out - &plain).mapv(f64::abs).mean().unwrap_or(0.0);
        println!("guidance {w:>4}: mean |out - uncond| {shift:.4}");
    }

    let cost = attention_cost(SequenceLengths::new(77, 1024, 68, 1024));
    println!(
        "full-size sequence: {} tokens, {} logits; rendered conditioning: {} tokens, {} logits; ratio {:.4}",
        cost.tokens_total, cost.pairwise_logits, cost.rendered_tokens, cost.rendered_logits, cost.relative_cost_vs_rendered
    );
    Ok(())
}
