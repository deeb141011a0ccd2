//! Generation and detection of fake coin-flip sequences.
//!
//! - [`seqdata`]: sequence records, file formats, seeded RNG streams, splits.
//! - [`mom`]: pairwise hidden Markov model with forward/backward passes and EM.
//! - [`simulator`]: faker signal laws and correlated Bernoulli sampling.
//! - [`bpf`]: branching particle filter for model-selection detection.
//! - [`bank`]: model bank discriminator, confusion matrices, evaluation reports.
//! - [`pipeline`]: end-to-end regeneration and repeated-split evaluation.
//! - [`cli`]: the `flipfake` command line.

pub mod bank;
pub mod bpf;
pub mod cli;
pub mod error;
pub mod mom;
pub mod pipeline;
pub mod seqdata;
pub mod simulator;

pub use error::{Error, Result};
pub use mom::MomModel;
pub use seqdata::{Label, RngStream, SequenceRecord};
