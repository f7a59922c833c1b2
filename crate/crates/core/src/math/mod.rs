//! Numerical substrate: special functions, seeded RNG, rank statistics,
//! fully-connected networks, a reverse-mode tape and the Adam optimizer.

pub mod adam;
pub mod mlp;
pub mod rng;
pub mod special;
pub mod stats;
pub mod tape;

pub use adam::AdamState;
pub use mlp::{Activation, Layer, MlpParams};
pub use rng::SeededRng;
pub use special::{
    gaussian_logpdf, gaussian_logpdf_iso, log_sum_exp, std_normal_cdf, std_normal_inv_cdf,
};
pub use tape::{value_and_grad, Gradients, Graph, MlpVars, NodeId};
