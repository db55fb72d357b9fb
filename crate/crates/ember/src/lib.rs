//! Spatiotemporal marked point processes with moderate and extreme marks.
//!
//! The crate models gridded event data (wildfire-type applications) with:
//!
//! - a log-Gaussian Cox occurrence process on pixel-day cells,
//! - a two-component size mixture: Beta-distributed moderate marks and
//!   generalized Pareto threshold excesses,
//! - latent Gaussian effects (SPDE/Matérn fields, splines, random walks)
//!   that can be shared between regression components,
//! - stratified Horvitz–Thompson subsampling of zero counts,
//! - empirical-Bayes Laplace inference, posterior simulation, proper
//!   scoring and excursion-set summaries.
//!
//! Batch loops (sampling, per-threshold fits, scoring) run on rayon when the
//! default `parallel` feature is enabled and fall back to sequential
//! iteration without it; results are bit-identical either way.

pub mod container;
pub mod error;
pub mod excursion;
pub(crate) mod exec;
pub mod extremes;
pub mod grid_data;
pub mod gmrf;
pub mod inference;
pub mod marked_pp;
pub(crate) mod optim;
pub mod predict;
pub mod rng;
pub mod score;
pub(crate) mod sparse;
pub mod special;
pub mod subsample;

pub use error::{EmberError, Result};
