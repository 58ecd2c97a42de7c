//! Truncated Dirichlet-process weights and component assignments.
//!
//! Component indices are zero-based throughout (`0..k0`).

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardUniform};
use serde::{Deserialize, Serialize};

use crate::error::{MsgpError, Result};

/// Default truncation level.
pub const DEFAULT_K0: usize = 20;
/// Default concentration.
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Default occupancy fraction above which a component counts as effective.
pub const DEFAULT_EFFECTIVE_THRESHOLD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub p: Vec<f64>,
    pub alpha: f64,
    pub k0: usize,
}

impl MixtureWeights {
    /// Equal weights `1/k0`.
    pub fn uniform(alpha: f64, k0: usize) -> Result<Self> {
        check_mixture(alpha, k0)?;
        Ok(MixtureWeights {
            p: vec![1.0 / k0 as f64; k0],
            alpha,
            k0,
        })
    }

    pub fn from_probabilities(p: Vec<f64>, alpha: f64) -> Result<Self> {
        check_mixture(alpha, p.len())?;
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(MsgpError::InvalidMixture("weights must be finite and non-negative".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MsgpError::InvalidMixture(format!("weights sum to {total}, not 1")));
        }
        let k0 = p.len();
        Ok(MixtureWeights { p, alpha, k0 })
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.p.iter().map(|p| p.ln()).collect()
    }
}

fn check_mixture(alpha: f64, k0: usize) -> Result<()> {
    if k0 == 0 {
        return Err(MsgpError::InvalidMixture("k0 must be at least 1".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(MsgpError::InvalidMixture(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

/// Component label per observation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignments {
    pub z: Vec<usize>,
}

impl Assignments {
    pub fn new(z: Vec<usize>, k0: usize) -> Result<Self> {
        if let Some(&bad) = z.iter().find(|&&k| k >= k0) {
            return Err(MsgpError::InvalidMixture(format!(
                "assignment {bad} is outside 0..{k0}"
            )));
        }
        Ok(Assignments { z })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Stick-breaking prefix `p_1 = v_1`, `p_k = v_k prod_{k' < k} (1 - v_k')`.
///
/// The result is not renormalized: it sums to `1 - prod_k (1 - v_k)`.
pub fn stick_breaking(v: &[f64]) -> Result<Vec<f64>> {
    let mut remaining = 1.0;
    let mut p = Vec::with_capacity(v.len());
    for (index, &value) in v.iter().enumerate() {
        if !(value > 0.0 && value < 1.0) {
            return Err(MsgpError::InvalidStickFraction { index, value });
        }
        p.push(value * remaining);
        remaining *= 1.0 - value;
    }
    Ok(p)
}

/// Draw `log G` for `G ~ Gamma(shape, 1)`, stable for small shapes.
fn log_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("valid gamma shape").sample(rng);
        g.ln()
    } else {
        // G(a) = G(a + 1) U^{1/a}
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("valid gamma shape").sample(rng);
        let u: f64 = StandardUniform.sample(rng);
        g.ln() + u.max(f64::MIN_POSITIVE).ln() / shape
    }
}

/// Dirichlet draw with parameters `alpha/k0 + counts[k]`.
pub fn sample_weights_posterior<R: Rng + ?Sized>(
    alpha: f64,
    k0: usize,
    counts: &[usize],
    rng: &mut R,
) -> Result<MixtureWeights> {
    check_mixture(alpha, k0)?;
    if counts.len() != k0 {
        return Err(MsgpError::LengthMismatch {
            expected: k0,
            actual: counts.len(),
        });
    }
    if k0 == 1 {
        return Ok(MixtureWeights {
            p: vec![1.0],
            alpha,
            k0,
        });
    }
    let base = alpha / k0 as f64;
    let logs: Vec<f64> = counts
        .iter()
        .map(|&c| log_gamma_draw(base + c as f64, rng))
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(MixtureWeights { p, alpha, k0 })
}

/// Number of observations per component.
pub fn occupancy(assignments: &Assignments, k0: usize) -> Vec<usize> {
    let mut counts = vec![0; k0];
    for &k in &assignments.z {
        counts[k] += 1;
    }
    counts
}

/// Components whose occupancy fraction exceeds `threshold`.
pub fn effective_components(counts: &[usize], threshold: f64) -> usize {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0;
    }
    counts
        .iter()
        .filter(|&&c| c as f64 / n as f64 > threshold)
        .count()
}

/// Same as [`effective_components`] for fractional (e.g. posterior-mean) occupancy.
pub fn effective_from_fractions(fractions: &[f64], threshold: f64) -> usize {
    let total: f64 = fractions.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    fractions.iter().filter(|&&f| f / total > threshold).count()
}

/// Component order by descending value, ties broken by index.
pub fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stick_breaking_halves() {
        assert_eq!(stick_breaking(&[0.5, 0.5, 0.5]).unwrap(), vec![0.5, 0.25, 0.125]);
    }

    #[test]
    fn stick_breaking_degenerate() {
        let p = stick_breaking(&[0.999999, 0.5, 0.5]).unwrap();
        assert!(p[0] > 0.99999);
        assert!(p[1] + p[2] < 1e-5);
    }

    #[test]
    fn stick_breaking_telescopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let v: Vec<f64> = (0..10).map(|_| rng.random_range(0.01..0.99)).collect();
            let p = stick_breaking(&v).unwrap();
            let rest: f64 = v.iter().map(|v| 1.0 - v).product();
            assert_relative_eq!(p.iter().sum::<f64>() + rest, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn stick_breaking_prefix_is_stable() {
        let v = [0.3, 0.6, 0.2];
        let short = stick_breaking(&v).unwrap();
        let long = stick_breaking(&[0.3, 0.6, 0.2, 0.9, 0.4]).unwrap();
        assert_eq!(&long[..3], &short[..]);
    }

    #[test]
    fn stick_breaking_rejects_out_of_range() {
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(
                stick_breaking(&[0.5, bad]),
                Err(MsgpError::InvalidStickFraction { index: 1, .. })
            ));
        }
    }

    #[test]
    fn single_component_weight_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = sample_weights_posterior(0.5, 1, &[17], &mut rng).unwrap();
        assert_eq!(w.p, vec![1.0]);
    }

    #[test]
    fn weights_sum_to_one_with_tiny_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let w = sample_weights_posterior(1e-3, 20, &[0; 20], &mut rng).unwrap();
            assert_relative_eq!(w.p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(w.p.iter().all(|p| p.is_finite() && *p >= 0.0));
        }
    }

    #[test]
    fn concentrated_counts_dominate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = vec![0; 5];
        counts[0] = 200;
        let mean: f64 = (0..500)
            .map(|_| sample_weights_posterior(1e-3, 5, &counts, &mut rng).unwrap().p[0])
            .sum::<f64>()
            / 500.0;
        assert!(mean > 0.999);
    }

    #[test]
    fn symmetric_dirichlet_mean() {
        let k0 = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 10_000;
        let mut sum = vec![0.0; k0];
        for _ in 0..draws {
            let w = sample_weights_posterior(k0 as f64, k0, &vec![0; k0], &mut rng).unwrap();
            for (s, p) in sum.iter_mut().zip(&w.p) {
                *s += p;
            }
        }
        // Dir(1,...,1) marginal variance (k0 - 1) / (k0^2 (k0 + 1)).
        let sd = ((k0 as f64 - 1.0) / ((k0 * k0) as f64 * (k0 as f64 + 1.0))).sqrt();
        let se = sd / (draws as f64).sqrt();
        for s in sum {
            assert!((s / draws as f64 - 0.25).abs() < 3.0 * se);
        }
    }

    #[test]
    fn permuted_counts_permute_moments() {
        let counts = [5usize, 0, 12];
        let perm = [2usize, 0, 1];
        let permuted: Vec<usize> = perm.iter().map(|&i| counts[i]).collect();
        let draws = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m1 = [0.0; 3];
        let mut m2 = [0.0; 3];
        for _ in 0..draws {
            let a = sample_weights_posterior(0.5, 3, &counts, &mut rng).unwrap();
            let b = sample_weights_posterior(0.5, 3, &permuted, &mut rng).unwrap();
            for k in 0..3 {
                m1[k] += a.p[perm[k]] / draws as f64;
                m2[k] += b.p[k] / draws as f64;
            }
        }
        let total = 17.5;
        for k in 0..3 {
            let alpha_k = 0.5 / 3.0 + permuted[k] as f64;
            let mean = alpha_k / total;
            let se = (mean * (1.0 - mean) / (total + 1.0) / draws as f64).sqrt();
            assert!((m1[k] - m2[k]).abs() < 4.0 * se * 2f64.sqrt());
            assert!((m2[k] - mean).abs() < 4.0 * se);
        }
    }

    #[test]
    fn occupancy_counts() {
        let z = Assignments::new(vec![0, 0, 1], 3).unwrap();
        assert_eq!(occupancy(&z, 3), vec![2, 1, 0]);
        assert!(Assignments::new(vec![3], 3).is_err());
        let all = Assignments::new(vec![0; 40], 3).unwrap();
        assert_eq!(effective_components(&occupancy(&all, 3), DEFAULT_EFFECTIVE_THRESHOLD), 1);
    }

    #[test]
    fn invalid_mixture_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(sample_weights_posterior(0.0, 3, &[0; 3], &mut rng).is_err());
        assert!(sample_weights_posterior(1.0, 0, &[], &mut rng).is_err());
        assert!(sample_weights_posterior(1.0, 3, &[0; 2], &mut rng).is_err());
        assert!(MixtureWeights::from_probabilities(vec![0.5, 0.6], 1.0).is_err());
    }

    #[test]
    fn order_is_descending() {
        assert_eq!(descending_order(&[0.1, 0.5, 0.2, 0.5]), vec![1, 3, 2, 0]);
    }
}
