//! Anchors landmark tokens to the latent grid and shows that rotary
//! attention logits depend only on relative position.

use anyhow::Result;
use lato::kinematics::template::reference_face;
use lato::posenc::{apply_rope, grid_for, image_positions, landmark_positions, RopeLayout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn main() -> Result<()> {
    let face = reference_face();
    let stride = 16;
    let (gh, gw) = grid_for(&face, stride)?;
    let grid = image_positions(gh, gw)?;
    let marks = landmark_positions(&face, stride)?;
    println!("{gh}x{gw} latent grid at stride {stride}");
    for i in [30, 36, 45, 48, 54] {
        let p = marks[i];
        let token = (p.h * gw + p.w) as usize;
        println!(
            "landmark {i:2} at {:?} -> cell {:?}, image token #{token} {:?}",
            face.point(i),
            (p.t, p.h, p.w),
            (grid[token].h, grid[token].w)
        );
    }

    let layout = RopeLayout::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let q: Vec<f64> = (0..layout.head_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k: Vec<f64> = (0..layout.head_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    // The nose tip attends to the image token under it and to one two cells right.
    let nose = marks[30];
    for (label, other) in [("same cell", grid[(nose.h * gw + nose.w) as usize]), ("two cells right", grid[(nose.h * gw + nose.w + 2) as usize])] {
        let logit = dot(&apply_rope(&q, nose, &layout)?, &apply_rope(&k, other, &layout)?);
        println!("nose tip vs {label}: logit {logit:+.6}");
    }
    Ok(())
}
