//! Posterior densities of the instantaneous-balance and average-delay models.

pub mod average_delay;
pub mod instantaneous;
mod layout;
pub mod truncnorm;

pub use average_delay::{build_assignment, row_index, AdModel};
pub use instantaneous::{ib_mu, ib_posterior_predictive, ib_predict_uncorrected, IbModel, IbParams};
pub use layout::{Decoded, OdLayout};
