//! Toolkit for aligning chest CT representations with radiology reports.
//!
//! * [`embed`]: embedding matrices, cosine kernels, relation matrices, the
//!   `EMB1` file format and HU windowing.
//! * [`corpus`]: report loading, normalization and tokenization.
//! * [`labeler`]: keyword labeler for six pathologies and healthy-report
//!   detection.
//! * [`retrieval`]: exhaustive cosine retrieval and zero-shot prompt scoring.
//! * [`losses`]: robust contrastive loss, InfoNCE, dual distillation loss.
//! * [`efm`]: entity-focused masking plans.
//! * [`metrics`]: clinical P/R/F1 and BLEU-4 / ROUGE-L / CIDEr-D / METEOR.
//! * [`toytrain`]: synthetic end-to-end trainer and gradient checks.
//! * [`cli`]: the `ctalign` command-line front end.

pub mod cli;
pub mod corpus;
pub mod efm;
pub mod embed;
pub mod error;
pub mod labeler;
pub mod losses;
pub mod metrics;
pub mod retrieval;
pub mod rng;
pub mod toytrain;

pub use error::{Error, FormatError, Result};
