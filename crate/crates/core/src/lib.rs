pub mod cli;
pub mod curation;
pub mod error;
pub mod fuser;
pub mod instruction;
pub mod kinematics;
pub mod landmarks;
pub mod metrics;
pub mod posenc;
pub mod scoring;
pub mod tokenizer;

pub use error::{LatoError, Result};
