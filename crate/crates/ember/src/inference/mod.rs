//! Joint latent Gaussian model: specification, assembly, Laplace inference
//! and posterior summaries.

mod assemble;
pub mod family;
mod fit;
mod hyper;
mod laplace;
mod priors;
mod spec;

pub use assemble::{assemble_model, BasisSet, LatentBlock, LatentModel, ObsSet};
pub use family::{component_negloglik, FamilyTheta};
pub use fit::{
    fit, fit_model, optimize_hyperparameters, FitOptions, FitTrace, PosteriorFit,
};
pub use hyper::{HyperPrior, HyperSlot, Hyperparameters, Transform};
pub use laplace::{gaussian_approximation, laplace_log_marginal, GaussianApprox};
pub use priors::PriorConfig;
pub use spec::{
    Component, ComponentSpec, Covariate, Effect, EffectKind, Family, LinearCovariate,
    ModelLabel, ModelSpec, SharedEffect,
};
