//! Simplex autoencoders.
//!
//! An autoencoder whose encoder ends in a softmax, so every latent code is a
//! point on the probability simplex. Training combines the reconstruction
//! error with a Sinkhorn divergence between the batch latents and draws from a
//! Dirichlet prior. Synthetic data is produced by decoding latents drawn with
//! one of four samplers: uniform Dirichlet, the training Dirichlet, a
//! logistic-normal mixture fitted in log-ratio space, or a sparse histogram of
//! occupied latent bins.
//!
//! Module map:
//! - [`simplex`]: simplex points, Dirichlet distribution, logistic transforms.
//! - [`sinkhorn`]: entropic optimal transport and its point gradient.
//! - [`autoencoder`]: dense network, backprop, Adam, training, checkpoints.
//! - [`mixture`]: Gaussian mixture EM and logistic-normal mixtures.
//! - [`sampling`]: the latent samplers.
//! - [`data`]: synthetic classification data, IDX reader, tensor/CSV/PNM files.
//! - [`metrics`]: PSNR, latent k-NN accuracy, Frechet distance.
//! - [`deconvolution`]: Richardson-Lucy restoration.

// Index loops mirror the formulas; negated comparisons also reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autoencoder;
pub mod data;
pub mod deconvolution;
pub mod error;
pub mod metrics;
pub mod mixture;
pub mod sampling;
pub mod simplex;
pub mod sinkhorn;

pub use autoencoder::{
    Activation, Checkpoint, LayerSpec, LossBreakdown, NetworkSpec, ParamStore, TraceRow, TrainConfig,
};
pub use error::{Error, Result};
pub use mixture::{EmConfig, GmmModel};
pub use sampling::{PmfIndex, SamplerChoice};
pub use simplex::{DirichletParams, EuclideanVector, SimplexVector};
pub use sinkhorn::{EmpiricalMeasure, SinkhornConfig};

/// Deterministic, platform-independent generator used everywhere a seed is
/// accepted.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
