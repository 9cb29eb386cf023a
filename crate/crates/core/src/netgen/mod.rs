//! Synthetic data generators for the two test networks.

pub mod a;
pub mod b;
mod sampling;

pub use sampling::{sample_categorical, sample_dirichlet, sample_multinomial, sample_negbin, sample_poisson};
