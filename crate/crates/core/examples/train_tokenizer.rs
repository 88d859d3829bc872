//! Trains the desk-scale tokenizer on synthetic faces and reports held-out
//! reconstruction error, code usage and codebook geometry.
//!
//!     cargo run --release --example train_tokenizer -- [steps] [blocks] [out.lato]

use anyhow::Result;
use lato::kinematics::synthesize;
use lato::tokenizer::{codebook_stats, evaluate_tokenizer, train_with, TokenizerConfig};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = TokenizerConfig::default();
    if let Some(s) = args.first() {
        config.steps = s.parse()?;
    }
    if let Some(b) = args.get(1) {
        config.blocks = b.parse()?;
    }

    let train_set = synthesize(10_000, 1);
    let held_out = synthesize(1_000, 2);
    let (model, log) = train_with(&config, &train_set, |s| {
        if s.step % 100 == 0 {
            println!(
                "step {:5}  loss {:.4}  recon {:.3} px",
                s.step,
                s.loss,
                s.reconstruction * 256.0
            );
        }
    })?;
    let eval = evaluate_tokenizer(&model, &held_out)?;
    let stats = codebook_stats(model.codebook())?;
    println!(
        "trained {} steps in {:.1} s: held-out L1 {:.3} px, utilization {:.1}%",
        config.steps,
        log.seconds,
        eval.mean_l1_px,
        100.0 * eval.utilization
    );
    println!(
        "codebook: mean |cos| {:.4}, mean cos {:.4}, std {:.4}, max {:.4}",
        stats.mean_abs_cos, stats.mean_cos, stats.std_cos, stats.max_cos
    );
    if let Some(path) = args.get(2) {
        model.save(path)?;
        println!("saved {path}");
    }
    Ok(())
}
