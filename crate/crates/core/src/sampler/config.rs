use serde::{Deserialize, Serialize};

use crate::error::{MsgpError, Result};
use crate::kernels::KernelFamily;
use crate::mixture::{DEFAULT_ALPHA, DEFAULT_EFFECTIVE_THRESHOLD, DEFAULT_K0};

/// Support of the log-uniform prior on each kernel parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorBounds {
    pub phi: (f64, f64),
    pub rho: (f64, f64),
    /// Space-time interaction scales `c1`, `c2`.
    pub interaction: (f64, f64),
}

impl Default for PriorBounds {
    fn default() -> Self {
        PriorBounds {
            phi: (0.1, 100.0),
            rho: (0.1, 100.0),
            interaction: (1.0, 1e5),
        }
    }
}

impl PriorBounds {
    /// Bounds for parameter `index` of `family` (order of `parameter_names`).
    pub fn for_parameter(&self, family: KernelFamily, index: usize) -> (f64, f64) {
        if index == 0 {
            self.phi
        } else if family.is_interaction(index) {
            self.interaction
        } else {
            self.rho
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("phi", self.phi), ("rho", self.rho), ("interaction", self.interaction)] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
                return Err(MsgpError::InvalidConfig(format!(
                    "prior bounds for {name} must satisfy 0 < lo < hi < inf, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

/// How component fields share spectral coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    /// One coefficient set for all components: the dependent mixture.
    #[default]
    Shared,
    /// One coefficient set per component: a mixture of independent GPs.
    Independent,
}

/// Shape of the inverse-gamma noise update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseShape {
    /// `k0 |W| / 2 + 2`: every augmented value enters the quadratic form.
    #[default]
    Augmented,
    /// `n / 2 + 2` with `n` the number of observations.
    Observed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub family: KernelFamily,
    pub k0: usize,
    pub alpha: f64,
    pub iters: usize,
    pub seed: u64,
    pub bounds: PriorBounds,
    /// Sweeps per step-size adaptation window.
    pub adapt_window: usize,
    pub coupling: Coupling,
    pub noise_shape: NoiseShape,
    /// Initial random-walk half-width as a fraction of the starting value.
    pub initial_step: f64,
    pub effective_threshold: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            family: KernelFamily::SquaredExponential,
            k0: DEFAULT_K0,
            alpha: DEFAULT_ALPHA,
            iters: 4000,
            seed: 0,
            bounds: PriorBounds::default(),
            adapt_window: 50,
            coupling: Coupling::Shared,
            noise_shape: NoiseShape::Augmented,
            initial_step: 0.1,
            effective_threshold: DEFAULT_EFFECTIVE_THRESHOLD,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k0 == 0 {
            return Err(MsgpError::InvalidConfig("k0 must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(MsgpError::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.iters < 2 {
            return Err(MsgpError::InvalidConfig(format!("iters must be at least 2, got {}", self.iters)));
        }
        if self.adapt_window == 0 {
            return Err(MsgpError::InvalidConfig("adapt_window must be at least 1".into()));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(MsgpError::InvalidConfig("initial_step must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.effective_threshold) {
            return Err(MsgpError::InvalidConfig("effective_threshold must lie in [0, 1)".into()));
        }
        self.bounds.validate()
    }

    /// Sweeps discarded before recording; step sizes adapt only within them.
    pub fn burn_in(&self) -> usize {
        self.iters / 2
    }
}
