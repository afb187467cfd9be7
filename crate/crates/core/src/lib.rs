//! Divergence-based multimodal fusion for ambivalence/hesitancy (A/H) video
//! classification.
//!
//! The pipeline works on pre-extracted features: per-frame facial Action Unit
//! activations, audio embedding frames and a single text embedding per video.
//! Each temporal modality is encoded by a bidirectional LSTM with attention
//! pooling and projected into a shared space; the fused representation is
//! either the concatenation of the three embeddings, their pairwise absolute
//! differences, or both.
//!
//! Modules:
//!
//! - [`data`]: feature files, manifests and sample validation
//! - [`window`]: sliding-window and whole-video AU statistics
//! - [`model`]: encoders, fusion, classifier head, gradient checking, checkpoints
//! - [`train`]: loss, AdamW, cosine schedule, clipping, early stopping, training loop
//! - [`metrics`]: Macro F1 and video-level evaluation
//! - [`stats`]: Mann-Whitney U analysis of AU discriminability
//! - [`synthetic`]: seeded datasets with a controllable cross-modal conflict signal
//! - [`cli`]: the `ah-fusion` command line

pub mod cli;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod stats;
pub mod synthetic;
pub mod train;
pub mod window;

pub use error::{Error, ErrorKind, Result};
