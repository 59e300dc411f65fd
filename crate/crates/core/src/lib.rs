//! Bayesian quantile regression for ordinal longitudinal data.
//!
//! The latent liability of observation `j` on subject `i` follows
//! `l_ij = alpha_i + x_ij' beta + eps_ij` with skewed Laplace errors at
//! quantile level `theta`; the observed category is the cut-point interval
//! containing `l_ij`. Estimation is by a Gibbs sampler built on the normal
//! location-scale mixture representation of the error, with a Bayesian
//! Lasso prior on `beta`, a normal random intercept and an order-statistics
//! prior on the cut-points.

pub mod cli;
pub mod diagnostics;
pub mod distributions;
pub mod gibbs;
pub mod model;
pub mod rng;
pub mod sim;
