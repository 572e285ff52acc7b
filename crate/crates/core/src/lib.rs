//! Image-focused contrastive decoding for multi-image vision-language models.
//!
//! For each generated token the engine runs one forward pass per input image,
//! each with every other image replaced by a noise-masked copy, plus one pass
//! with all images masked. The per-image logits are summed and the masked
//! reference is subtracted with weight `alpha`:
//!
//! ```text
//! f_final = sum_k (f_k - alpha * f_noise)
//! ```
//!
//! Crate layout:
//!
//! * [`rng`], [`types`]: keyed random streams and shared domain values
//! * [`noise`]: noise masking and masked-context construction
//! * [`provider`]: the logit-provider abstraction, a synthetic model, the
//!   wire protocol and its HTTP client
//! * [`decoder`]: baseline, focused and VCD-style steps, sampling,
//!   generation and candidate scoring
//! * [`leakage`]: the merged-caption leakage probe
//! * [`eval`]: datasets, paired scores, strategy comparison and the
//!   synthetic minimal-pair generator
//! * [`cli`]: the `focus` command-line tool

pub mod cli;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod leakage;
pub mod noise;
pub mod provider;
pub mod rng;
pub mod types;

pub use error::{Error, Result};
