use serde::{Deserialize, Serialize};

/// Acceptance rate the random-walk half-widths are tuned toward.
pub const TARGET_ACCEPTANCE: f64 = 0.234;

/// Per-parameter random-walk half-widths and acceptance counters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationState {
    /// `step_sizes[k][j]` for component `k`, parameter `j`.
    pub step_sizes: Vec<Vec<f64>>,
    pub accepted: Vec<Vec<u64>>,
    pub proposed: Vec<Vec<u64>>,
    pub window: usize,
    pub windows_done: usize,
    /// Largest allowed half-width per parameter (the prior support width).
    pub max_step: Vec<Vec<f64>>,
}

impl AdaptationState {
    pub fn new(step_sizes: Vec<Vec<f64>>, max_step: Vec<Vec<f64>>, window: usize) -> Self {
        let zeros: Vec<Vec<u64>> = step_sizes.iter().map(|s| vec![0; s.len()]).collect();
        AdaptationState {
            step_sizes,
            accepted: zeros.clone(),
            proposed: zeros,
            window,
            windows_done: 0,
            max_step,
        }
    }

    pub fn record(&mut self, k: usize, j: usize, accepted: bool) {
        self.proposed[k][j] += 1;
        if accepted {
            self.accepted[k][j] += 1;
        }
    }

    pub fn reset_counts(&mut self) {
        for row in self.accepted.iter_mut().chain(self.proposed.iter_mut()) {
            row.iter_mut().for_each(|c| *c = 0);
        }
    }

    /// Pooled acceptance rate of component `k` since the last reset.
    pub fn block_rate(&self, k: usize) -> Option<f64> {
        let p: u64 = self.proposed[k].iter().sum();
        let a: u64 = self.accepted[k].iter().sum();
        (p > 0).then(|| a as f64 / p as f64)
    }
}

/// End-of-window update `s <- s exp(eta_t (rate - 0.234))` with
/// `eta_t = min(1, 10 / t)`, `t` the window number; counters are reset.
pub fn adapt_step_sizes(adapt: &mut AdaptationState) {
    adapt.windows_done += 1;
    let eta = (10.0 / adapt.windows_done as f64).min(1.0);
    for k in 0..adapt.step_sizes.len() {
        for j in 0..adapt.step_sizes[k].len() {
            let proposed = adapt.proposed[k][j];
            if proposed == 0 {
                continue;
            }
            let rate = adapt.accepted[k][j] as f64 / proposed as f64;
            let s = adapt.step_sizes[k][j] * (eta * (rate - TARGET_ACCEPTANCE)).exp();
            let max = adapt.max_step[k][j];
            adapt.step_sizes[k][j] = s.clamp(1e-10 * max, max);
        }
    }
    adapt.reset_counts();
}
