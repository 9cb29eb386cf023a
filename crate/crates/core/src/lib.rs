//! Estimation of origin-destination split matrices for transit networks from
//! station entry and exit counts.
//!
//! Two Bayesian models are provided: [`model::IbModel`] treats entries and
//! exits of one observation window as balanced, [`model::AdModel`] maps
//! binned entries onto exits through expected travel delays. Both are
//! sampled with the No-U-Turn sampler in [`sampler`] over a stick-breaking
//! parameterisation of the row simplices. [`qp`] gives a least-squares point
//! estimate for comparison, [`netgen`] simulates the two test networks and
//! [`sensitivity`] runs factorial sweeps with metamodels and Sobol indices.
//!
//! ```
//! use odest::netgen::a::{generate_network_a, GenAConfig};
//! use odest::qp::{solve_qp, QpOptions};
//!
//! let cfg = GenAConfig { stations: 4, observations: 20, mu_x: vec![300.0; 4], phi: 10.0, seed: 1 };
//! let (truth, obs) = generate_network_a(&cfg).unwrap();
//! let fit = solve_qp(&obs, None, true, &QpOptions::default()).unwrap();
//! assert_eq!(fit.a_hat.size(), truth.size());
//! ```

pub mod cli;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod model;
pub mod netgen;
pub mod preprocess;
pub mod qp;
pub mod rng;
pub mod runner;
pub mod sampler;
pub mod sensitivity;

pub use error::{Error, Result};
