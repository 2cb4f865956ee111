//! Contamination probe: prompt a model with the first part of each text and
//! check whether it reproduces the rest.

pub mod cache;
pub mod client;
pub mod error;
pub mod fixtures;
pub mod mock;
pub mod probe;
pub mod split;

pub use cache::Cache;
pub use client::{Client, RetryPolicy};
pub use error::{ProbeError, Result};
pub use mock::{MockFixture, MockServer};
pub use probe::{probe_report, report_from_embeddings, run_probe, CompletionRecord, ProbeConfig, ProbeReport};
pub use split::{exact_match, split_text, Split};
