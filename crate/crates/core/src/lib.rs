//! Empiricalized latent-variable models trained with a model-agnostic
//! posterior approximation over latent-code indices, alongside AE, VAE and
//! IWAE baselines, plus the synthetic datasets and evaluation protocol used
//! to compare them.

pub mod error;
pub mod math;

pub use error::{Error, Result};
pub mod datasets;
pub mod evaluation;
pub mod io;
pub mod inference;
pub mod mapa;
pub mod prior_recovery;
