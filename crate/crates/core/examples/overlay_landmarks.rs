//! Draws the reference face and a predicted edit onto a gradient image and
//! writes both as PGM files.
//!
//!     cargo run --example overlay_landmarks -- /tmp/overlay

use std::path::PathBuf;

use anyhow::Result;
use lato::cli::overlay;
use lato::curation::write_pgm;
use lato::instruction::parse_instruction;
use lato::kinematics::predict_landmarks;
use lato::kinematics::template::reference_face;
use ndarray::Array2;

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir)?;
    let background = Array2::from_shape_fn((256, 256), |(y, x)| ((x + y) / 4) as u8);
    let face = reference_face();
    let (edited, _) = predict_landmarks(&face, &parse_instruction("make his/her facial expression surprised strongly")?)?;
    for (name, f) in [("source.pgm", &face), ("edited.pgm", &edited)] {
        let path = dir.join(name);
        write_pgm(&path, &overlay(&background, f, 1, 255))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
