//! The guide chapters from `book/`, re-exported as rustdoc modules.
//!
//! mdbook renders the chapters but cannot execute them. Including each
//! chapter as a doc comment makes every fenced Rust block a doc-test of
//! this crate, so `cargo test` fails the moment a snippet drifts from the
//! current API. One module per chapter keeps failures traceable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/ingesting-logs.md")]
pub mod ingesting_logs {}

#[doc = include_str!("../../../book/src/threads-and-eligibility.md")]
pub mod threads_and_eligibility {}

#[doc = include_str!("../../../book/src/the-reply-graph.md")]
pub mod the_reply_graph {}

#[doc = include_str!("../../../book/src/behavioural-metrics.md")]
pub mod behavioural_metrics {}

#[doc = include_str!("../../../book/src/factor-extraction.md")]
pub mod factor_extraction {}

#[doc = include_str!("../../../book/src/rotation-and-assignment.md")]
pub mod rotation_and_assignment {}

#[doc = include_str!("../../../book/src/clustering-into-roles.md")]
pub mod clustering_into_roles {}

#[doc = include_str!("../../../book/src/synthetic-corpora.md")]
pub mod synthetic_corpora {}

#[doc = include_str!("../../../book/src/running-the-pipeline.md")]
pub mod running_the_pipeline {}
