//! Vector-quantized landmark tokenizer.
//!
//! Each of the 68 landmarks becomes one discrete token. A convolutional
//! encoder maps normalized coordinates to `d`-dimensional latents, each is
//! replaced by its nearest codebook row, and a mirrored decoder maps codes
//! back to coordinates.

mod io;
mod model;
mod nn;
mod stats;
mod train;

pub use io::{ModelHeader, TensorInfo, FORMAT_VERSION, MAGIC};
pub use model::{nearest_codes, quantize, FacialTokens, TokenizerConfig, TokenizerModel};
pub use stats::{codebook_stats, expected_abs_cos_random, CodebookStats, EXACT_PAIR_LIMIT};
pub use train::{
    evaluate_tokenizer, loss_terms, train, train_with, Evaluation, ResetEvent, StepLog, TrainLog,
};
