//! Posterior summaries of a chain: occupancy, parameter mean (sd) per
//! component, acceptance rates.

use serde::{Deserialize, Serialize};

use crate::mixture::{descending_order, effective_from_fractions};
use crate::sampler::PosteriorChain;

/// Below this many retained draws a summary carries a warning.
pub const MIN_DRAWS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    /// Raw sampler label.
    pub label: usize,
    /// Posterior mean fraction of observations assigned here.
    pub occupancy: f64,
    pub effective: bool,
    pub acceptance_rate: Option<f64>,
    pub parameters: Vec<ParameterSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub draws: usize,
    pub effective_components: usize,
    /// Sorted by decreasing occupancy.
    pub components: Vec<ComponentSummary>,
    pub sigma2: ParameterSummary,
    pub warnings: Vec<String>,
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn summarize(chain: &PosteriorChain, k0: usize, threshold: f64) -> ChainSummary {
    let occupancy = chain.mean_occupancy(k0);
    let effective = effective_from_fractions(&occupancy, threshold);
    let mut components = Vec::with_capacity(k0);
    for k in descending_order(&occupancy) {
        let names = chain.draws.first().map(|d| d.thetas[k].names()).unwrap_or_default();
        let parameters = names
            .into_iter()
            .enumerate()
            .map(|(j, name)| {
                let (mean, sd) = mean_sd(chain.draws.iter().map(move |d| d.thetas[k].values()[j]));
                ParameterSummary { name, mean, sd }
            })
            .collect();
        components.push(ComponentSummary {
            label: k,
            occupancy: occupancy[k],
            effective: occupancy[k] > threshold,
            acceptance_rate: chain.acceptance_rate(k),
            parameters,
        });
    }
    let (mean, sd) = mean_sd(chain.draws.iter().map(|d| d.sigma2));
    let mut warnings = Vec::new();
    if chain.draws.len() < MIN_DRAWS {
        warnings.push(format!(
            "insufficient samples: {} retained draws (fewer than {MIN_DRAWS})",
            chain.draws.len()
        ));
    }
    ChainSummary {
        draws: chain.draws.len(),
        effective_components: effective,
        components,
        sigma2: ParameterSummary {
            name: "sigma2".into(),
            mean,
            sd,
        },
        warnings,
    }
}

/// Most probable component per observation.
pub fn map_assignments(chain: &PosteriorChain, k0: usize) -> Vec<usize> {
    chain
        .assignment_probabilities(k0)
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0
        })
        .collect()
}

/// Fraction of observations whose label matches `truth` under the best
/// one-to-one relabeling of the estimated components.
pub fn label_agreement(estimated: &[usize], truth: &[usize]) -> f64 {
    let n = estimated.len().min(truth.len());
    if n == 0 {
        return 0.0;
    }
    let ke = estimated.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; ke]; kt];
    for (&e, &t) in estimated.iter().zip(truth) {
        table[t][e] += 1;
    }
    fn search(table: &[Vec<usize>], t: usize, used: &mut Vec<bool>) -> usize {
        if t == table.len() {
            return 0;
        }
        // leaving truth label t unmatched is allowed when ke < kt
        let mut best = search(table, t + 1, used);
        for e in 0..used.len() {
            if !used[e] && table[t][e] > 0 {
                used[e] = true;
                best = best.max(table[t][e] + search(table, t + 1, used));
                used[e] = false;
            }
        }
        best
    }
    search(&table, 0, &mut vec![false; ke]) as f64 / n as f64
}
