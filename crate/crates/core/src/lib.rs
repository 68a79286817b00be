//! Point-in-time ("nonprognosticative") corpus construction.
//!
//! The crate covers the whole path from raw sources to an auditable yearly
//! corpus:
//!
//! * [`wiki`] streams MediaWiki history dumps and snapshots each page as it
//!   stood at a cutoff instant.
//! * [`news`] reads yearly, document-split news collections.
//! * [`dedup`] removes exact duplicates by SHA-256 digest.
//! * [`tokenizer`] provides the byte-level BPE and whitespace tokenizers used
//!   for every token count in the pipeline.
//! * [`sampler`] implements recency-weighted news sampling, uniform wiki
//!   sampling with forced vital articles, and token-budget accumulation.
//! * [`assembler`] mixes the domains, packs sequences and writes manifests.
//! * [`eval`] measures temporal leakage with zero-context perplexity.

pub mod assembler;
pub mod dedup;
pub mod error;
pub mod eval;
pub mod news;
pub mod record;
pub mod sampler;
pub mod synth;
pub mod tokenizer;
pub mod wiki;

pub use error::{Error, Result};
pub use record::{DocRecord, Source};
pub use tokenizer::Tokenizer;

/// Version string recorded in manifests.
pub const TOOL_VERSION: &str = concat!("chronoforge ", env!("CARGO_PKG_VERSION"));
