//! Behavioural role mining for enterprise social network logs.
//!
//! The crate turns a raw message log into named behavioural roles in four
//! stages, each usable on its own:
//!
//! 1. [`ingest`] parses message and user CSV exports, reconstructs
//!    discussion threads and selects the users active enough to profile.
//! 2. [`graph`] builds the directed reply graph and computes degree,
//!    betweenness and closeness centrality.
//! 3. [`metrics`] derives sixteen per-user activity metrics from threads,
//!    message content flags and the reply graph.
//! 4. [`factor`] condenses the metric matrix with principal axis factoring
//!    and an oblique (oblimin) rotation; [`cluster`] groups the resulting
//!    factor scores with k-means and states each cluster as a low /
//!    medium / high rule over the factors.
//!
//! [`synth`] generates seeded synthetic corpora with planted behavioural
//! archetypes so the whole pipeline can be exercised end to end, and
//! [`pipeline`] wires the stages together behind a single configuration
//! struct. The `esn-roles` binary exposes every stage as a subcommand.

pub mod cluster;
pub mod factor;
pub mod graph;
pub mod ids;
pub mod ingest;
pub mod metrics;
pub mod numfmt;
pub mod pipeline;
pub mod synth;

pub use ids::{MessageId, ThreadId, UserId};
