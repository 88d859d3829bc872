//! Curates a small synthetic manifest of head-turn pairs and prints how many
//! records each stage lets through. Each pair gets a rendered source image
//! so sharpness is measured; the remaining scores come from mock scorers.
//!
//!     cargo run --example curate_pairs -- /tmp/pairs

use std::path::PathBuf;

use anyhow::Result;
use lato::cli::overlay;
use lato::curation::{curate, gaussian_blur, write_pgm, CurateOptions, CurationConfig, PairRecord};
use lato::kinematics::{apply_head_turn, FaceSynth, SynthConfig};
use lato::landmarks::landmarks_to_value;
use lato::scoring::ScorerSuite;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("lato-pairs"));
    std::fs::create_dir_all(&dir)?;
    let mut synth = FaceSynth::new(3, SynthConfig { max_yaw: 10.0, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut manifest = String::new();
    for i in 0..100 {
        let source = synth.next_face();
        let yaw = if rng.random_bool(0.5) { 35.0 } else { -35.0 };
        let target = apply_head_turn(&source, yaw, 0.0)?;
        let texture = Array2::from_shape_simple_fn((128, 128), || rng.random_range(60..140u8));
        let mut img = overlay(&texture, &source, 1, 255);
        // Every fourth image is smoothed until it reads as blurry.
        if i % 4 == 0 {
            let mut soft = img.mapv(f64::from);
            for _ in 0..3 {
                soft = gaussian_blur(&soft);
            }
            img = soft.mapv(|v| v.round().clamp(0.0, 255.0) as u8);
        }
        let name = format!("src-{i:03}.pgm");
        write_pgm(dir.join(&name), &img)?;
        let rec = PairRecord {
            id: format!("pair-{i:03}"),
            source_image: Some(name),
            source_landmarks: Some(landmarks_to_value(&source)),
            target_landmarks: Some(landmarks_to_value(&target)),
            ..Default::default()
        };
        manifest += &serde_json::to_string(&rec)?;
        manifest.push('\n');
    }

    let mut out = Vec::new();
    let opts = CurateOptions { jobs: 4, base_dir: dir.clone(), ..Default::default() };
    let summary = curate(manifest.as_bytes(), &mut out, &CurationConfig::default(), &ScorerSuite::mock(0), &opts)?;
    for s in &summary.stages {
        let name = format!("{:?}", s.stage.expect("stage"));
        println!("{name:<12} {:>4} in {:>4} passed ({:.0}%)", s.entered, s.passed, 100.0 * s.pass_rate);
    }
    println!("kept {}, rejected {}, quarantined {}", summary.kept, summary.rejected, summary.quarantined);
    if let Some(line) = String::from_utf8(out)?.lines().find(|l| l.contains("\"kept\"")) {
        let rec: PairRecord = serde_json::from_str(line)?;
        println!("{} gets the instruction {:?}", rec.id, rec.instruction.unwrap_or_default());
    }
    Ok(())
}
