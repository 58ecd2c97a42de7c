//! Mixture kriging for the dependent and independent mixtures.
//!
//! The target's component is unknown, so predictive moments average over
//! components with the mixture weights:
//! mean `mu + sum_k p_k v_k' K^{-1} (y - mu)`,
//! variance `sum_k p_k [C_kk(0) + sigma^2 - v_k' K^{-1} v_k]`, where
//! `v_k[i] = K(x_target, x_i; theta_k, theta_i)`. Pairwise target
//! covariances use the double sum `sum_{k1,k2} p_k1 p_k2 [C_k1k2(lag) -
//! v_k1' K^{-1} v'_k2]`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dataset::LatticeData;
use crate::error::{MsgpError, Result};
use crate::kernels::{KernelParams, SpectralDensityTable};
use crate::sampler::{Draw, FitResult};
use crate::spectral::{LagTables, LatticeModel};

/// Predictive moments at a list of targets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Target-by-target covariance, row-major, when requested.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Per-draw `(mean, variance)` when computed across a chain.
    pub per_draw: Option<Vec<(Vec<f64>, Vec<f64>)>>,
}

/// Which mixture the prediction assumes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Cross-component covariance from spectral mixing.
    #[default]
    Msgp,
    /// Zero covariance between components.
    Igp,
}

/// Everything kriging conditions on, expressed on a lattice.
#[derive(Clone, Debug)]
pub struct KrigingInputs<'a> {
    pub lattice: &'a LatticeModel,
    /// Flat site per training observation.
    pub sites: &'a [usize],
    /// `y - mu(x)` per training observation.
    pub residuals: &'a [f64],
    /// Component label per training observation.
    pub labels: &'a [usize],
    /// Component parameters `theta*_k`.
    pub thetas: &'a [KernelParams],
    pub weights: &'a [f64],
    pub sigma2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub model: Model,
    /// Also return the target-by-target covariance.
    pub include_covariance: bool,
    /// Use every `thin`-th retained draw.
    pub thin: usize,
    /// Keep per-draw results.
    pub keep_draws: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            model: Model::Msgp,
            include_covariance: false,
            thin: 1,
            keep_draws: false,
        }
    }
}

/// Absolute slack below zero tolerated (and clamped) in predictive variances.
pub const VARIANCE_SLACK: f64 = 1e-10;

fn check_inputs(inputs: &KrigingInputs<'_>, target_mean: &[f64], targets: &[usize]) -> Result<()> {
    let n = inputs.sites.len();
    for len in [inputs.residuals.len(), inputs.labels.len()] {
        if len != n {
            return Err(MsgpError::LengthMismatch { expected: n, actual: len });
        }
    }
    if target_mean.len() != targets.len() {
        return Err(MsgpError::LengthMismatch {
            expected: targets.len(),
            actual: target_mean.len(),
        });
    }
    if inputs.weights.len() != inputs.thetas.len() {
        return Err(MsgpError::LengthMismatch {
            expected: inputs.thetas.len(),
            actual: inputs.weights.len(),
        });
    }
    if let Some(&bad) = inputs.labels.iter().find(|&&k| k >= inputs.thetas.len()) {
        return Err(MsgpError::InvalidMixture(format!("label {bad} has no component parameters")));
    }
    let len = inputs.lattice.len();
    if let Some(&s) = inputs.sites.iter().chain(targets).find(|&&s| s >= len) {
        return Err(MsgpError::SiteOutOfLattice {
            site: vec![s as i64],
            sizes: inputs.lattice.sizes().to_vec(),
        });
    }
    Ok(())
}

fn lag_tables(inputs: &KrigingInputs<'_>) -> Result<LagTables> {
    let tables = inputs
        .thetas
        .iter()
        .map(|t| SpectralDensityTable::for_kernel(t, inputs.lattice))
        .collect::<Result<Vec<_>>>()?;
    LagTables::new(inputs.lattice, &tables)
}

fn factor(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let backup = m.clone();
    Cholesky::new(m).ok_or_else(|| {
        let eig = backup.symmetric_eigenvalues();
        let (min, max) = (eig.min(), eig.max());
        MsgpError::Factorization {
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        }
    })
}

fn finish_variance(index: usize, v: f64, scale: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -VARIANCE_SLACK * scale.max(1.0) {
        log::warn!("clamping predictive variance {v:e} at target {index} to zero");
        Ok(0.0)
    } else {
        Err(MsgpError::NegativeVariance { index, value: v })
    }
}

/// Dependent-mixture kriging.
pub fn krige_msgp(
    targets: &[usize],
    target_mean: &[f64],
    inputs: &KrigingInputs<'_>,
    include_covariance: bool,
) -> Result<PredictionResult> {
    check_inputs(inputs, target_mean, targets)?;
    let lags = lag_tables(inputs)?;
    let lattice = inputs.lattice;
    let n = inputs.sites.len();
    let k0 = inputs.thetas.len();
    let t = targets.len();
    let mut mean = target_mean.to_vec();
    let mut variance = vec![0.0; t];
    for ti in 0..t {
        for k in 0..k0 {
            variance[ti] += inputs.weights[k] * (lags.pair(k, k).at_zero() + inputs.sigma2);
        }
    }
    // whitened[k] has columns L^{-1} v_k for every target.
    let mut whitened: Vec<DMatrix<f64>> = Vec::new();
    if n > 0 {
        let mut train = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = lags.covariance(lattice, inputs.sites[i], inputs.labels[i], inputs.sites[j], inputs.labels[j]);
                train[(i, j)] = v;
                train[(j, i)] = v;
            }
            train[(i, i)] += inputs.sigma2;
        }
        let chol = factor(train)?;
        let alpha = chol.solve(&DVector::from_column_slice(inputs.residuals));
        for k in 0..k0 {
            let v = DMatrix::from_fn(n, t, |i, ti| {
                lags.covariance(lattice, targets[ti], k, inputs.sites[i], inputs.labels[i])
            });
            let p = inputs.weights[k];
            for ti in 0..t {
                mean[ti] += p * v.column(ti).dot(&alpha);
            }
            let w = chol
                .l_dirty()
                .solve_lower_triangular(&v)
                .ok_or(MsgpError::Factorization { condition: f64::INFINITY })?;
            for ti in 0..t {
                variance[ti] -= p * w.column(ti).norm_squared();
            }
            if include_covariance {
                whitened.push(w);
            }
        }
    }
    let scale: f64 = inputs.thetas.iter().map(|t| t.phi()).fold(inputs.sigma2, f64::max);
    let variance = variance
        .into_iter()
        .enumerate()
        .map(|(i, v)| finish_variance(i, v, scale))
        .collect::<Result<Vec<_>>>()?;

    let covariance = include_covariance.then(|| {
        let mut cov = vec![vec![0.0; t]; t];
        for a in 0..t {
            cov[a][a] = variance[a];
            for b in 0..a {
                let mut acc = 0.0;
                for k1 in 0..k0 {
                    for k2 in 0..k0 {
                        let pw = inputs.weights[k1] * inputs.weights[k2];
                        let mut c = lags.covariance(lattice, targets[a], k1, targets[b], k2);
                        if n > 0 {
                            c -= whitened[k1].column(a).dot(&whitened[k2].column(b));
                        }
                        acc += pw * c;
                    }
                }
                cov[a][b] = acc;
                cov[b][a] = acc;
            }
        }
        cov
    });
    Ok(PredictionResult {
        mean,
        variance,
        covariance,
        per_draw: None,
    })
}

/// Independent-mixture kriging: covariance is zero across component labels,
/// so the training system is solved one label block at a time.
pub fn krige_igp(
    targets: &[usize],
    target_mean: &[f64],
    inputs: &KrigingInputs<'_>,
    include_covariance: bool,
) -> Result<PredictionResult> {
    check_inputs(inputs, target_mean, targets)?;
    let lags = lag_tables(inputs)?;
    let lattice = inputs.lattice;
    let k0 = inputs.thetas.len();
    let t = targets.len();
    let mut mean = target_mean.to_vec();
    let mut variance = vec![0.0; t];
    let mut whitened: Vec<Option<DMatrix<f64>>> = vec![None; k0];
    for k in 0..k0 {
        let p = inputs.weights[k];
        let prior = lags.pair(k, k).at_zero() + inputs.sigma2;
        for v in variance.iter_mut() {
            *v += p * prior;
        }
        let members: Vec<usize> = (0..inputs.sites.len()).filter(|&i| inputs.labels[i] == k).collect();
        let m = members.len();
        if m == 0 {
            continue;
        }
        let table = lags.pair(k, k);
        let mut block = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..=a {
                let v = table.between(lattice, inputs.sites[members[a]], inputs.sites[members[b]]);
                block[(a, b)] = v;
                block[(b, a)] = v;
            }
            block[(a, a)] += inputs.sigma2;
        }
        let chol = factor(block)?;
        let r = DVector::from_iterator(m, members.iter().map(|&i| inputs.residuals[i]));
        let alpha = chol.solve(&r);
        let v = DMatrix::from_fn(m, t, |a, ti| table.between(lattice, targets[ti], inputs.sites[members[a]]));
        let w = chol
            .l_dirty()
            .solve_lower_triangular(&v)
            .ok_or(MsgpError::Factorization { condition: f64::INFINITY })?;
        for ti in 0..t {
            mean[ti] += p * v.column(ti).dot(&alpha);
            variance[ti] -= p * w.column(ti).norm_squared();
        }
        if include_covariance {
            whitened[k] = Some(w);
        }
    }
    let scale: f64 = inputs.thetas.iter().map(|t| t.phi()).fold(inputs.sigma2, f64::max);
    let variance = variance
        .into_iter()
        .enumerate()
        .map(|(i, v)| finish_variance(i, v, scale))
        .collect::<Result<Vec<_>>>()?;
    let covariance = include_covariance.then(|| {
        let mut cov = vec![vec![0.0; t]; t];
        for a in 0..t {
            cov[a][a] = variance[a];
            for b in 0..a {
                let mut acc = 0.0;
                for k in 0..k0 {
                    let p = inputs.weights[k];
                    let mut c = lags.pair(k, k).between(lattice, targets[a], targets[b]);
                    if let Some(w) = &whitened[k] {
                        c -= w.column(a).dot(&w.column(b));
                    }
                    acc += p * p * c;
                }
                cov[a][b] = acc;
                cov[b][a] = acc;
            }
        }
        cov
    });
    Ok(PredictionResult {
        mean,
        variance,
        covariance,
        per_draw: None,
    })
}

pub fn krige(
    model: Model,
    targets: &[usize],
    target_mean: &[f64],
    inputs: &KrigingInputs<'_>,
    include_covariance: bool,
) -> Result<PredictionResult> {
    match model {
        Model::Msgp => krige_msgp(targets, target_mean, inputs, include_covariance),
        Model::Igp => krige_igp(targets, target_mean, inputs, include_covariance),
    }
}

/// `var_IGP - var_MSGP` per target under shared parameters.
pub fn efficiency_gap(targets: &[usize], target_mean: &[f64], inputs: &KrigingInputs<'_>) -> Result<Vec<f64>> {
    let msgp = krige_msgp(targets, target_mean, inputs, false)?;
    let igp = krige_igp(targets, target_mean, inputs, false)?;
    Ok(igp.variance.iter().zip(&msgp.variance).map(|(i, m)| i - m).collect())
}

/// Average per-draw predictions with the law of total variance:
/// mean of means, and mean of variances plus variance of means.
pub fn combine_draws(per_draw: Vec<(Vec<f64>, Vec<f64>)>, keep: bool) -> PredictionResult {
    let m = per_draw.len();
    if m == 0 {
        return PredictionResult::default();
    }
    let t = per_draw[0].0.len();
    let mut mean = vec![0.0; t];
    let mut within = vec![0.0; t];
    for (mu, var) in &per_draw {
        for i in 0..t {
            mean[i] += mu[i] / m as f64;
            within[i] += var[i] / m as f64;
        }
    }
    let mut between = vec![0.0; t];
    for (mu, _) in &per_draw {
        for i in 0..t {
            between[i] += (mu[i] - mean[i]).powi(2) / m as f64;
        }
    }
    let variance = within.iter().zip(&between).map(|(w, b)| w + b).collect();
    PredictionResult {
        mean,
        variance,
        covariance: None,
        per_draw: keep.then_some(per_draw),
    }
}

/// Kriging inputs for one posterior draw of a fit.
pub fn draw_inputs<'a>(data: &'a LatticeData, residuals: &'a [f64], draw: &'a Draw) -> KrigingInputs<'a> {
    KrigingInputs {
        lattice: &data.lattice,
        sites: &data.sites,
        residuals,
        labels: &draw.z,
        thetas: &draw.thetas,
        weights: &draw.weights,
        sigma2: draw.sigma2,
    }
}

/// Posterior predictive moments at target coordinates, averaged over the
/// retained draws of `fit`.
pub fn posterior_predict(targets: &[Vec<f64>], fit: &FitResult, options: &PredictOptions) -> Result<PredictionResult> {
    if options.thin == 0 {
        return Err(MsgpError::InvalidConfig("thin must be at least 1".into()));
    }
    if fit.chain.draws.is_empty() {
        return Err(MsgpError::InvalidConfig("the chain has no retained draws".into()));
    }
    let sites = targets
        .iter()
        .map(|x| fit.data.mapping.flat_site(x))
        .collect::<Result<Vec<_>>>()?;
    let trend: Vec<f64> = targets.iter().map(|x| fit.trend.eval(x)).collect();
    let residuals: Vec<f64> = fit
        .data
        .coords
        .iter()
        .zip(&fit.data.y)
        .map(|(x, y)| y - fit.trend.eval(x))
        .collect();
    let mut per_draw = Vec::new();
    for draw in fit.chain.draws.iter().step_by(options.thin) {
        let inputs = draw_inputs(&fit.data, &residuals, draw);
        let r = krige(options.model, &sites, &trend, &inputs, false)?;
        per_draw.push((r.mean, r.variance));
    }
    Ok(combine_draws(per_draw, options.keep_draws))
}

/// Table-style accuracy summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `sqrt(mean (y - E y)^2)`.
    pub rmse: f64,
    /// `sqrt(mean var(y))`.
    pub avg_uncertainty: f64,
}

pub fn metrics(predicted: &PredictionResult, truth: &[f64]) -> Result<Metrics> {
    let n = truth.len();
    if predicted.mean.len() != n || predicted.variance.len() != n {
        return Err(MsgpError::LengthMismatch {
            expected: n,
            actual: predicted.mean.len(),
        });
    }
    if n == 0 {
        return Ok(Metrics {
            rmse: 0.0,
            avg_uncertainty: 0.0,
        });
    }
    let mse = predicted.mean.iter().zip(truth).map(|(m, y)| (y - m).powi(2)).sum::<f64>() / n as f64;
    let mv = predicted.variance.iter().sum::<f64>() / n as f64;
    Ok(Metrics {
        rmse: mse.sqrt(),
        avg_uncertainty: mv.sqrt(),
    })
}
