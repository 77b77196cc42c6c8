//! Unsupervised anomaly detection on text-attributed graphs.
//!
//! The pipeline has two stages. A court of language models inspects each
//! node: contextual prosecutors judge whether the node's text is internally
//! coherent, structural prosecutors judge whether the node relates to
//! sampled neighbors, and a judge weighs all opinions into a verdict
//! ([`court`]). The verdict text and the raw node text are embedded
//! ([`embed`]), fused by learned forget/input/output gates, propagated by a
//! two-layer GCN and trained with a node-versus-subgraph contrastive
//! objective; anomaly scores average the gap between negative and positive
//! agreement over sampling rounds ([`detector`]).
//!
//! Benchmarks are built by planting anomalies into clean graphs
//! ([`inject`], [`synth`]) and scored with ROC-AUC and average precision
//! ([`metrics`]). [`pipeline`] wires every stage behind one JSON config.

pub mod config;
pub mod court;
pub mod detector;
pub mod embed;
pub mod error;
pub mod graph;
pub mod http;
pub mod inject;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{GroundTruth, Label, NodeId, NodeRecord, TextAttributedGraph};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/injection.md")]
    mod injection {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/court.md")]
    mod court {}
    #[doc = include_str!("../../../book/src/detector.md")]
    mod detector {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
