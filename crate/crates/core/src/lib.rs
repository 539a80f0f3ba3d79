//! Ternary classification of Ethereum front-running attacks.
//!
//! The crate covers the whole pipeline: synthetic attack scenarios
//! ([`datagen`]), dataset I/O ([`data`]), standardization and correlation
//! analysis ([`features`]), four classifiers (random forest and two boosting
//! variants in [`ensembles`] on top of [`tree`], and a single-hidden-layer
//! network in [`mlp`]), Gaussian-process Bayesian hyperparameter search
//! ([`hpo`]), and metrics and reports ([`eval`]). [`pipeline`] chains them and
//! [`cli`] exposes them as the `frad` command.

pub mod cli;
pub mod data;
pub mod datagen;
pub mod ensembles;
pub mod error;
pub mod eval;
pub mod features;
pub mod hpo;
pub mod matrix;
pub mod mlp;
pub mod model;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod tree;

pub use error::{Error, Result};
