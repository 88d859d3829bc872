use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LatoError, Result};
use crate::landmarks::{landmark_l1_error, LandmarkSet};

use super::model::{nearest_codes, TokenizerConfig, TokenizerModel};
use super::nn::Adam;

/// Loss terms for one step. `reconstruction` is the mean absolute error in
/// normalized units; multiply by half the canvas width for pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub commitment: f64,
    pub codebook: f64,
    /// Fraction of codes hit by this batch.
    pub batch_utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetEvent {
    pub step: usize,
    /// Codes unused since the previous reset, now reinitialized.
    pub codes: Vec<usize>,
    /// Codes used since the previous reset, left untouched.
    pub kept: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub resets: Vec<ResetEvent>,
    pub seconds: f64,
}

impl TrainLog {
    /// Mean total loss over consecutive windows of `w` steps.
    pub fn windowed_loss(&self, w: usize) -> Vec<f64> {
        self.steps
            .chunks(w.max(1))
            .filter(|c| c.len() == w.max(1))
            .map(|c| c.iter().map(|s| s.loss).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Loss terms for decoder output `out` against targets `u`, latents `e` and
/// their selected codes `q`:
/// `mean|out - u| + beta * mean((e - sg q)^2) + mean((sg e - q)^2)`.
pub fn loss_terms(out: &Array2<f64>, u: &Array2<f64>, e: &Array2<f64>, q: &Array2<f64>, beta: f64) -> (f64, f64, f64) {
    let rec = (out - u).mapv(f64::abs).mean().unwrap_or(0.0);
    let sq = (e - q).mapv(|v| v * v).mean().unwrap_or(0.0);
    (rec, beta * sq, sq)
}

/// Trains a fresh model on `data`, sampling batches with replacement.
pub fn train(config: &TokenizerConfig, data: &[LandmarkSet]) -> Result<(TokenizerModel, TrainLog)> {
    train_with(config, data, |_| {})
}

/// As [`train`], calling `progress` after every step.
pub fn train_with(
    config: &TokenizerConfig,
    data: &[LandmarkSet],
    mut progress: impl FnMut(&StepLog),
) -> Result<(TokenizerModel, TrainLog)> {
    config.validate()?;
    let first = data
        .first()
        .ok_or_else(|| LatoError::Config("training set is empty".into()))?;
    let mut model = TokenizerModel::init(config, first.canvas())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = Adam::new(config.lr);
    let mut m1 = model.zeros_like();
    let mut m2 = model.zeros_like();
    let (m, beta) = (config.m, config.beta);
    let mut used = vec![false; m];
    let mut log = TrainLog::default();
    let start = Instant::now();

    for step in 1..=config.steps {
        let batch: Vec<&LandmarkSet> = (0..config.batch)
            .map(|_| &data[rng.random_range(0..data.len())])
            .collect();
        let u = model.normalize(&batch)?;
        let (e, enc_cache) = model.encode_forward(&u);
        let idx = nearest_codes(e.view(), &model.codebook)?;
        let q = model.codebook.select(Axis(0), &idx);
        // Straight-through: the decoder reads the codes, gradients reach `e`.
        let (out, dec_cache) = model.decode_forward(&q);

        let (rec, commit, cb) = loss_terms(&out, &u, &e, &q, beta);
        let loss = rec + commit + cb;
        if !loss.is_finite() {
            return Err(LatoError::Numeric(format!(
                "non-finite loss at step {step}: reconstruction {rec}, commitment {commit}, codebook {cb}"
            )));
        }

        let mut g = model.zeros_like();
        let n_out = out.len() as f64;
        let mut dout = &out - &u;
        dout.mapv_inplace(|v| if v > 0.0 { 1.0 / n_out } else if v < 0.0 { -1.0 / n_out } else { 0.0 });
        let mut de = model.decode_backward(&dec_cache, &dout, &mut g);
        let n_lat = e.len() as f64;
        let diff = &e - &q;
        de.scaled_add(2.0 * beta / n_lat, &diff);
        model.encode_backward(&enc_cache, &de, &mut g);
        for (r, &k) in idx.iter().enumerate() {
            let mut row = g.codebook.row_mut(k);
            row.scaled_add(-2.0 / n_lat, &diff.row(r));
        }

        adam.begin_step();
        for (((p, gr), a), b) in model
            .tensors_mut()
            .into_iter()
            .zip(g.tensors().into_iter().map(|t| t.2))
            .zip(m1.tensors_mut())
            .zip(m2.tensors_mut())
        {
            adam.update(p, gr, a, b);
        }

        let mut hit = vec![false; m];
        for &k in &idx {
            hit[k] = true;
            used[k] = true;
        }
        let entry = StepLog {
            step,
            loss,
            reconstruction: rec,
            commitment: commit,
            codebook: cb,
            batch_utilization: hit.iter().filter(|&&h| h).count() as f64 / m as f64,
        };
        progress(&entry);
        log.steps.push(entry);

        if step % config.reset_interval == 0 {
            let (kept, dead): (Vec<usize>, Vec<usize>) = (0..m).partition(|&k| used[k]);
            for &k in &dead {
                let src = rng.random_range(0..e.nrows());
                model.codebook.row_mut(k).assign(&e.row(src));
                m1.codebook.row_mut(k).fill(0.0);
                m2.codebook.row_mut(k).fill(0.0);
            }
            log::debug!("step {step}: reset {} of {m} codes", dead.len());
            log.resets.push(ResetEvent { step, codes: dead, kept });
            used.fill(false);
        }
        if step % 500 == 0 {
            log::info!(
                "step {step}: loss {loss:.4}, reconstruction {:.3} px",
                rec * first.canvas().width as f64 / 2.0
            );
        }
    }
    log.seconds = start.elapsed().as_secs_f64();
    Ok((model, log))
}

/// Reconstruction quality and code usage over a held-out set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean_l1_px: f64,
    pub utilization: f64,
    pub usage: Vec<u64>,
}

pub fn evaluate_tokenizer(model: &TokenizerModel, faces: &[LandmarkSet]) -> Result<Evaluation> {
    let mut usage = vec![0u64; model.config().m];
    let mut total = 0.0;
    for chunk in faces.chunks(256) {
        let (recon, idx) = model.reconstruct_many(chunk)?;
        for k in idx {
            usage[k] += 1;
        }
        for (a, b) in chunk.iter().zip(&recon) {
            total += landmark_l1_error(b, a)?;
        }
    }
    let n = faces.len().max(1) as f64;
    Ok(Evaluation {
        mean_l1_px: total / n,
        utilization: usage.iter().filter(|&&c| c > 0).count() as f64 / usage.len() as f64,
        usage,
    })
}
