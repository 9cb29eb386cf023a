//! No-U-turn sampling over unconstrained parameter vectors.

mod adapt;
mod nuts;
pub mod transform;

pub use adapt::{DualAveraging, WarmupSchedule, WelfordVar};
pub use nuts::{init_point, nuts_sample, run_chain, ChainOutput};

use serde::{Deserialize, Serialize};

use crate::domain::ParamLayout;
use crate::error::{invalid, Result};

/// A differentiable log density on ℝᵈ.
///
/// Implementations must be callable from several chains at once.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes ∇ log p into `grad` and returns log p. A non-finite return is
    /// treated as a divergence by the sampler.
    fn logp_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    fn param_layout(&self) -> ParamLayout;

    /// Maps an unconstrained point to the recorded draw.
    fn constrain(&self, theta: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub max_tree_depth: u32,
    pub target_accept: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1500,
            draws: 1000,
            max_tree_depth: 10,
            target_accept: 0.8,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.warmup == 0 || self.draws == 0 || self.max_tree_depth == 0 {
            return Err(invalid("chains, warmup, draws and max tree depth must be at least 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(invalid(format!(
                "target acceptance must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }
}
