//! A click-through-rate prediction engine for multi-field categorical data.
//!
//! The model embeds every sparse feature field, pools the embeddings into a
//! small number of hierarchical fields (for example user / item / context),
//! and combines three signals: a linear term over raw features, weighted
//! element-wise products between hierarchical field vectors, and per-field
//! square-of-sum-minus-sum-of-squares interactions. That interaction vector,
//! optionally thinned by a Bernoulli path mask during training, joins an MLP
//! tower over the concatenated field vectors, and a single logistic head
//! produces the click probability.
//!
//! Classical factorization machines and their field-weighted variant are
//! exact special cases ([`network::ModelParams::new_fm`],
//! [`network::ModelParams::new_fwfm`]), which the test suites exploit as
//! correctness oracles against brute-force reference implementations
//! ([`oracle`]).
//!
//! Everything numeric is generic over [`real::Real`] (`f32` or `f64`); the
//! bundled `ctr` binary trains in `f32`, while the equivalence and gradient
//! suites run in `f64`. Training is bit-reproducible: one seed fixes
//! initialization, shuffling, and dropout masks, and checkpoints round-trip
//! every tensor exactly.

pub mod checkpoint;
pub mod data;
pub mod dicefactor;
pub mod embedding;
pub mod error;
pub mod fwbi;
pub mod metrics;
pub mod network;
pub mod oracle;
pub mod real;
pub mod schema;
pub mod synth;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
