//! Ground-truth generators for the synthetic experiments.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{MsgpError, Result};
use crate::kernels::{KernelParams, SeParams, SpectralDensityTable, StParams};
use crate::spectral::{simulate_with, LatticeModel, SpectralCoefficients};

/// `[cos(4 pi x1 / 100) + 2] exp(x2 / 200)` on `(0, 100)^2`.
pub fn smooth_rho(x: &[f64]) -> f64 {
    ((4.0 * PI * x[0] / 100.0).cos() + 2.0) * (x[1] / 200.0).exp()
}

/// Range function `rho(x)` of a Pintore surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RhoMap {
    /// [`smooth_rho`].
    Smooth,
    /// [`smooth_rho`] cut at `thresholds` (ascending) into
    /// `thresholds.len() + 1` levels with values `levels`.
    Discretized { thresholds: Vec<f64>, levels: Vec<f64> },
}

impl RhoMap {
    /// Three bands of the smooth map, cut at 2.2 and 3.2.
    pub fn three_level(levels: [f64; 3]) -> Self {
        RhoMap::Discretized {
            thresholds: vec![2.2, 3.2],
            levels: levels.to_vec(),
        }
    }

    /// Level index of `x`, 0 for the smooth map.
    pub fn region(&self, x: &[f64]) -> usize {
        match self {
            RhoMap::Smooth => 0,
            RhoMap::Discretized { thresholds, .. } => {
                let r = smooth_rho(x);
                thresholds.iter().filter(|&&t| r >= t).count()
            }
        }
    }

    pub fn rho(&self, x: &[f64]) -> f64 {
        match self {
            RhoMap::Smooth => smooth_rho(x),
            RhoMap::Discretized { levels, .. } => levels[self.region(x)],
        }
    }

    fn validate(&self) -> Result<()> {
        if let RhoMap::Discretized { thresholds, levels } = self {
            if levels.len() != thresholds.len() + 1 {
                return Err(MsgpError::InvalidConfig(format!(
                    "{} thresholds need {} levels, got {}",
                    thresholds.len(),
                    thresholds.len() + 1,
                    levels.len()
                )));
            }
            if thresholds.windows(2).any(|w| w[0] >= w[1]) {
                return Err(MsgpError::InvalidConfig("rho thresholds must ascend".into()));
            }
            if let Some(&bad) = levels.iter().find(|&&l| !(l.is_finite() && l > 0.0)) {
                return Err(MsgpError::InvalidParameter {
                    name: "rho".into(),
                    value: bad,
                    reason: "must be positive and finite",
                });
            }
        }
        Ok(())
    }
}

/// Locally squared-exponential surface with `beta(x) = 2 rho(x)^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PintoreField {
    pub phi: f64,
    pub rho: RhoMap,
}

impl PintoreField {
    pub fn new(phi: f64, rho: RhoMap) -> Result<Self> {
        if !(phi.is_finite() && phi > 0.0) {
            return Err(MsgpError::InvalidParameter {
                name: "phi".into(),
                value: phi,
                reason: "must be positive and finite",
            });
        }
        rho.validate()?;
        Ok(PintoreField { phi, rho })
    }

    pub fn beta(&self, x: &[f64]) -> f64 {
        2.0 * self.rho.rho(x).powi(2)
    }
}

/// `h = 2 sqrt(beta beta') / (beta + beta')`, in `(0, 1]`.
pub fn pintore_h(beta_i: f64, beta_j: f64) -> f64 {
    2.0 * (beta_i * beta_j).sqrt() / (beta_i + beta_j)
}

/// `phi h exp(-|xi - xj|^2 / theta)` with `theta = (beta + beta') / 2`.
pub fn pintore_covariance(xi: &[f64], xj: &[f64], field: &PintoreField) -> f64 {
    let (bi, bj) = (field.beta(xi), field.beta(xj));
    let d2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b).powi(2)).sum();
    field.phi * pintore_h(bi, bj) * (-d2 / (0.5 * (bi + bj))).exp()
}

/// Pintore covariance matrix over `sites` plus `sigma2` on the diagonal.
pub fn pintore_matrix(sites: &[Vec<f64>], field: &PintoreField, sigma2: f64) -> DMatrix<f64> {
    let n = sites.len();
    let beta: Vec<f64> = sites.iter().map(|x| field.beta(x)).collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let d2: f64 = sites[i].iter().zip(&sites[j]).map(|(a, b)| (a - b).powi(2)).sum();
            let v = field.phi * pintore_h(beta[i], beta[j]) * (-d2 / (0.5 * (beta[i] + beta[j]))).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += sigma2;
    }
    k
}

/// Relative tolerance on negative eigenvalues of generated covariances.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// One draw from `N(0, cov)`: Cholesky when positive definite, otherwise a
/// symmetric eigendecomposition after the semidefiniteness check.
pub fn sample_mvn<R: Rng + ?Sized>(cov: &DMatrix<f64>, rng: &mut R) -> Result<Vec<f64>> {
    let n = cov.nrows();
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    if let Some(chol) = cov.clone().cholesky() {
        return Ok((chol.l() * z).iter().copied().collect());
    }
    let eig = cov.clone().symmetric_eigen();
    let norm = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE * norm {
        return Err(MsgpError::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    let scaled = DVector::from_iterator(n, eig.eigenvalues.iter().zip(z.iter()).map(|(l, z)| l.max(0.0).sqrt() * z));
    Ok((eig.eigenvectors * scaled).iter().copied().collect())
}

/// Cell centres of an `nx` by `ny` grid over `(0, 100)^2`, row-major in `x1`.
pub fn pintore_grid(nx: usize, ny: usize) -> Vec<Vec<f64>> {
    let (hx, hy) = (100.0 / nx as f64, 100.0 / ny as f64);
    let mut out = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            out.push(vec![(i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy]);
        }
    }
    out
}

/// One draw from `N(0, K_pintore + sigma2 I)` at `grid`.
pub fn simulate_pintore<R: Rng + ?Sized>(
    grid: &[Vec<f64>],
    field: &PintoreField,
    sigma2: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if let Some(bad) = grid.iter().find(|x| x.len() != 2) {
        return Err(MsgpError::DimensionMismatch {
            expected: 2,
            actual: bad.len(),
        });
    }
    check_noise(sigma2)?;
    sample_mvn(&pintore_matrix(grid, field, sigma2), rng)
}

/// Simulated Pintore surface as a dataset; `true_component` holds the
/// level index of the range map.
pub fn pintore_dataset<R: Rng + ?Sized>(
    nx: usize,
    ny: usize,
    field: &PintoreField,
    sigma2: f64,
    rng: &mut R,
) -> Result<Dataset> {
    let grid = pintore_grid(nx, ny);
    let y = simulate_pintore(&grid, field, sigma2, rng)?;
    let labels = grid.iter().map(|x| field.rho.region(x)).collect();
    let mut data = Dataset::new(grid, y)?;
    data.true_component = Some(labels);
    Ok(data)
}

fn check_noise(sigma2: f64) -> Result<()> {
    if sigma2.is_finite() && sigma2 >= 0.0 {
        Ok(())
    } else {
        Err(MsgpError::InvalidParameter {
            name: "sigma2".into(),
            value: sigma2,
            reason: "must be non-negative and finite",
        })
    }
}

/// Settings of the one-dimensional two-region process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoRegionConfig {
    pub n: usize,
    /// Sites `x <= split` belong to the left region.
    pub split: usize,
    pub left: SeParams,
    pub right: SeParams,
    pub sigma2: f64,
    /// Draw the two regions from independent fields instead of shared
    /// spectral coefficients.
    pub zero_cross: bool,
}

impl Default for TwoRegionConfig {
    fn default() -> Self {
        TwoRegionConfig {
            n: 100,
            split: 50,
            left: SeParams::isotropic(4.0, 3.0, 1).expect("valid defaults"),
            right: SeParams::isotropic(4.0, 12.0, 1).expect("valid defaults"),
            sigma2: 0.25,
            zero_cross: false,
        }
    }
}

/// Zero-mean draw at `x = 1..=n`: stationary SE within each region, with the
/// two regions coupled through shared spectral coefficients.
pub fn simulate_two_region_1d<R: Rng + ?Sized>(config: &TwoRegionConfig, rng: &mut R) -> Result<Dataset> {
    if config.n == 0 || config.split > config.n {
        return Err(MsgpError::InvalidConfig(format!(
            "need 0 < n and split <= n, got n = {}, split = {}",
            config.n, config.split
        )));
    }
    if config.left.rho.len() != 1 || config.right.rho.len() != 1 {
        return Err(MsgpError::DimensionMismatch {
            expected: 1,
            actual: config.left.rho.len().max(config.right.rho.len()),
        });
    }
    check_noise(config.sigma2)?;
    let lattice = LatticeModel::new(&[2 * config.n])?;
    let thetas = [
        KernelParams::SquaredExponential(config.left.clone()),
        KernelParams::SquaredExponential(config.right.clone()),
    ];
    let tables = thetas
        .iter()
        .map(|t| SpectralDensityTable::for_kernel(t, &lattice))
        .collect::<Result<Vec<_>>>()?;
    let sites: Vec<usize> = (0..config.n).collect();
    let labels: Vec<usize> = (1..=config.n).map(|x| usize::from(x > config.split)).collect();
    let mu = vec![0.0; config.n];
    let y = if config.zero_cross {
        let mut out = vec![0.0; config.n];
        for k in 0..2 {
            let coeffs = SpectralCoefficients::standard(&lattice, rng);
            let draw = simulate_with(&lattice, &tables, &labels, &sites, &coeffs, &mu, config.sigma2, rng)?;
            for i in (0..config.n).filter(|&i| labels[i] == k) {
                out[i] = draw[i];
            }
        }
        out
    } else {
        let coeffs = SpectralCoefficients::standard(&lattice, rng);
        simulate_with(&lattice, &tables, &labels, &sites, &coeffs, &mu, config.sigma2, rng)?
    };
    let coords = (1..=config.n).map(|x| vec![x as f64]).collect();
    let mut data = Dataset::new(coords, y)?;
    data.true_component = Some(labels);
    Ok(data)
}

/// Part of the spatial `(x, y)` plane a cube component covers, as fractions
/// of the grid extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionMap {
    Everywhere,
    /// `from <= (ix + 0.5) / nx < to`.
    XBand { from: f64, to: f64 },
    /// `from <= (iy + 0.5) / ny < to`.
    YBand { from: f64, to: f64 },
}

impl RegionMap {
    fn contains(&self, ix: usize, iy: usize, nx: usize, ny: usize) -> bool {
        let fx = (ix as f64 + 0.5) / nx as f64;
        let fy = (iy as f64 + 0.5) / ny as f64;
        match *self {
            RegionMap::Everywhere => true,
            RegionMap::XBand { from, to } => from <= fx && fx < to,
            RegionMap::YBand { from, to } => from <= fy && fy < to,
        }
    }
}

/// Two space-time components: one on the lower half of `x`, one everywhere
/// else. The interaction scales are raised to `1e5`: smaller values make the
/// spectral density negative on typical lattices.
pub fn default_cube_components() -> Vec<(RegionMap, StParams)> {
    vec![
        (
            RegionMap::XBand { from: 0.0, to: 0.5 },
            StParams::new(6.71, 12.17, 10.89, 16.43, 1e5, 1e5).expect("valid"),
        ),
        (
            RegionMap::Everywhere,
            StParams::new(3.30, 4.11, 4.87, 45.61, 1e5, 1e5).expect("valid"),
        ),
    ]
}

/// Space-time cube at integer coordinates `(1..=nx, 1..=ny, 1..=nt)`. Each
/// spatial site takes the first component whose region contains it; fields
/// share spectral coefficients and use numeric spectral densities.
pub fn simulate_st_cube<R: Rng + ?Sized>(
    nx: usize,
    ny: usize,
    nt: usize,
    components: &[(RegionMap, StParams)],
    sigma2: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if nx == 0 || ny == 0 || nt == 0 {
        return Err(MsgpError::InvalidLattice(vec![nx, ny, nt]));
    }
    if components.is_empty() {
        return Err(MsgpError::InvalidConfig("at least one component is required".into()));
    }
    check_noise(sigma2)?;
    let lattice = LatticeModel::new(&[2 * nx, 2 * ny, 2 * nt])?;
    let tables = components
        .iter()
        .map(|(_, p)| SpectralDensityTable::for_kernel(&KernelParams::SpaceTime(p.clone()), &lattice))
        .collect::<Result<Vec<_>>>()?;
    let mut sites = Vec::with_capacity(nx * ny * nt);
    let mut labels = Vec::with_capacity(sites.capacity());
    let mut coords = Vec::with_capacity(sites.capacity());
    for ix in 0..nx {
        for iy in 0..ny {
            let k = components
                .iter()
                .position(|(r, _)| r.contains(ix, iy, nx, ny))
                .ok_or_else(|| MsgpError::InvalidConfig(format!("no component covers site ({ix}, {iy})")))?;
            for it in 0..nt {
                sites.push(lattice.site_index(&[ix, iy, it])?);
                labels.push(k);
                coords.push(vec![(ix + 1) as f64, (iy + 1) as f64, (it + 1) as f64]);
            }
        }
    }
    let coeffs = SpectralCoefficients::standard(&lattice, rng);
    let mu = vec![0.0; sites.len()];
    let y = simulate_with(&lattice, &tables, &labels, &sites, &coeffs, &mu, sigma2, rng)?;
    let mut data = Dataset::new(coords, y)?;
    data.true_component = Some(labels);
    Ok(data)
}
