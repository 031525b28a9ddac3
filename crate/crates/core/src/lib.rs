//! Core algorithms for a topic-guided long-story generation pipeline:
//! a neural variational topic model, a Gibbs-sampled LDA baseline, a
//! title-conditioned topic generator, a constrained skeleton word sampler,
//! a compact encoder-decoder Transformer, and the evaluation metrics.
//!
//! Everything is hand-rolled on `Vec<f64>` with analytic backward passes
//! verified against finite differences; no external autograd or BLAS.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod lda;
pub mod linalg;
pub mod metrics;
pub mod ntm;
pub mod optim;
pub mod pipeline;
pub mod sampler;
pub mod storygen;
pub mod topicgen;

pub use error::{Error, Result};
