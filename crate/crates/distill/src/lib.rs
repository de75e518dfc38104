//! Distillation of a grammar-based Bayesian prior over logical concepts into
//! a neural network.
//!
//! The pipeline has four stages, each with its own module:
//!
//! 1. [`grammar`] — a probabilistic context-free grammar over DNF formulas
//!    (disjunctions of conjunctions of binary feature literals), with exact
//!    prior computations.
//! 2. [`episode`] — few-shot episode generation: for each sampled concept, a
//!    noisy support set and a full query set over the object space.
//! 3. [`rr`] — the Rational Rules posterior predictive, computed by bounded
//!    enumeration or importance sampling; serves as the Bayesian reference.
//! 4. [`meta`] — MAML meta-training of an MLP ([`mlp`]) on episode corpora,
//!    backed by a tape-based reverse-mode autodiff engine ([`autodiff`]) that
//!    supports gradients of gradients.
//!
//! [`bench`] embeds the behavioral category-learning benchmarks and computes
//! the comparison statistics (R-squared, error probability).

pub mod autodiff;
pub mod bench;
pub mod episode;
pub mod error;
pub mod grammar;
pub mod meta;
pub mod mlp;
pub mod rng;
pub mod rr;

pub use error::{Error, Result};
