use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LatoError, Result};

/// Codebooks up to this size are scored over every pair.
pub const EXACT_PAIR_LIMIT: usize = 4096;
const SAMPLED_PAIRS: usize = 1 << 22;

/// Pairwise cosine statistics of a codebook's rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodebookStats {
    pub rows: usize,
    pub pairs: usize,
    pub sampled: bool,
    pub mean_abs_cos: f64,
    pub mean_cos: f64,
    pub std_cos: f64,
    pub max_cos: f64,
    /// Rows with zero norm, excluded from the statistics.
    pub zero_rows: Vec<usize>,
}

/// `E|cos|` between two independent uniformly random directions in `d`
/// dimensions: `Gamma(d/2) / (sqrt(pi) * Gamma((d+1)/2))`.
pub fn expected_abs_cos_random(d: usize) -> f64 {
    // Ratio Gamma(k/2) / Gamma((k+1)/2) by the recurrence in k.
    let mut r = std::f64::consts::PI.sqrt(); // k = 1
    for k in 1..d {
        // Gamma((k+1)/2)/Gamma((k+2)/2) = 1 / (Gamma(k/2)/Gamma((k+1)/2) * k/2)
        r = 2.0 / (k as f64 * r);
    }
    r / std::f64::consts::PI.sqrt()
}

pub fn codebook_stats(c: &Array2<f64>) -> Result<CodebookStats> {
    let m = c.nrows();
    if m < 2 {
        return Err(LatoError::Config("codebook statistics need at least two rows".into()));
    }
    let mut zero_rows = Vec::new();
    let mut unit: Vec<Vec<f64>> = Vec::with_capacity(m);
    for (i, row) in c.rows().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if n == 0.0 || !n.is_finite() {
            zero_rows.push(i);
        } else {
            unit.push(row.iter().map(|v| v / n).collect());
        }
    }
    if unit.len() < 2 {
        return Err(LatoError::Numeric(format!(
            "only {} non-zero codebook rows",
            unit.len()
        )));
    }
    let cos = |i: usize, j: usize| unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>();

    let (mut n, mut s, mut s_abs, mut s2, mut max) = (0usize, 0.0, 0.0, 0.0, f64::NEG_INFINITY);
    let mut add = |v: f64| {
        n += 1;
        s += v;
        s_abs += v.abs();
        s2 += v * v;
        max = max.max(v);
    };
    let k = unit.len();
    let sampled = m > EXACT_PAIR_LIMIT;
    if sampled {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..SAMPLED_PAIRS {
            let i = rng.random_range(0..k);
            let mut j = rng.random_range(0..k - 1);
            if j >= i {
                j += 1;
            }
            add(cos(i, j));
        }
    } else {
        for i in 0..k {
            for j in i + 1..k {
                add(cos(i, j));
            }
        }
    }
    let mean = s / n as f64;
    Ok(CodebookStats {
        rows: m,
        pairs: n,
        sampled,
        mean_abs_cos: s_abs / n as f64,
        mean_cos: mean,
        std_cos: (s2 / n as f64 - mean * mean).max(0.0).sqrt(),
        max_cos: max,
        zero_rows,
    })
}
