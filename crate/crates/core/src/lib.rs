//! Poisson hierarchical Indian buffet process for grouped species counts.
//!
//! Groups (samples, sites, communities) share a base random measure of
//! species rates. Each group draws its own rates around the base through a
//! generalized gamma (GG) or gamma Lévy density, and counts arrive in latent
//! OTU blocks. Everything needed for inference is finite dimensional:
//!
//! * [`special_fn`]: Laplace exponents, generalized Stirling numbers, quadrature.
//! * [`rand_dist`]: reproducible streams and the exact samplers (MtP, tilted stable, ...).
//! * [`model`]: forward simulation of count matrices with all latent structure.
//! * [`inference`]: the joint density of counts and block counts, and the MCMC.
//! * [`posterior`]: species rates and per-group abundances given the chain.
//! * [`predict`]: the next-batch predictive and the test-set log-likelihood.
//! * [`diversity`]: alpha and beta diversity, FoF tables and KS distances.
//! * [`io`] and [`cli`]: count files, train/test splits and the command line.
//!
//! The `examples/` directory of this crate has one runnable program per area.

pub mod cli;
pub mod diversity;
pub mod error;
pub mod inference;
pub mod io;
pub mod model;
pub mod posterior;
pub mod predict;
pub mod rand_dist;
pub mod special_fn;
pub mod stats;

pub use error::{Error, Result};
