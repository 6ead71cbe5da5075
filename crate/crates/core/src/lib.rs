//! Counterfactual probing for implicit stereotypes in language-model
//! outputs.
//!
//! The crate builds attribute-swapped control inputs ([`counterfactual`]),
//! reads embeddings, continuation probabilities and attention from a model
//! [`model::Backend`], and turns them into bias measures ([`metrics`]):
//! embedding distance, generation-probability gap, semantic category shift,
//! contrastive hinge loss and attention-perturbation sensitivity. The
//! [`stereoset`] module runs these over StereoSet-format data.

pub mod counterfactual;
pub mod error;
pub mod metrics;
pub mod model;
pub mod stereoset;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
