//! Data-augmentation MCMC for the spectral mixture.
//!
//! Every component `k` carries a full-lattice vector `ytilde[k]`: the
//! observation at sites assigned to `k`, a latent draw everywhere else. Given
//! those vectors the likelihood factorizes over frequencies, so a sweep costs
//! two FFTs per component and no matrix factorization.
//!
//! One sweep runs, in order: assignments, latent values, spectral
//! coefficients, noise variance, kernel parameters (Metropolis-Hastings),
//! mixture weights.

mod adapt;
pub mod checkpoint;
mod config;
mod trend;

use std::f64::consts::SQRT_2;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, StandardUniform};
use serde::{Deserialize, Serialize};

pub use adapt::{adapt_step_sizes, AdaptationState, TARGET_ACCEPTANCE};
pub use config::{Coupling, NoiseShape, PriorBounds, SamplerConfig};
pub use trend::{fit_trend, Trend};

use crate::dataset::{map_to_lattice, Dataset, LatticeData, MappingOptions};
use crate::error::{MsgpError, Result};
use crate::kernels::{KernelFamily, KernelParams, SpectralDensityTable};
use crate::mixture::{effective_components, occupancy, sample_weights_posterior, Assignments, MixtureWeights};
use crate::spectral::{LatticeModel, SpectralCoefficients};

/// Everything the sampler updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub z: Assignments,
    pub thetas: Vec<KernelParams>,
    pub weights: MixtureWeights,
    /// One set when coupling is shared, one per component otherwise.
    pub coeffs: Vec<SpectralCoefficients>,
    pub sigma2: f64,
    /// `ytilde[k][site]`.
    pub ytilde: Vec<Vec<f64>>,
}

impl MixtureState {
    pub fn k0(&self) -> usize {
        self.thetas.len()
    }

    /// Coefficient set used by component `k`.
    pub fn coeff_index(&self, k: usize) -> usize {
        if self.coeffs.len() == 1 {
            0
        } else {
            k
        }
    }
}

/// One retained posterior draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iteration: usize,
    pub z: Vec<usize>,
    pub thetas: Vec<KernelParams>,
    pub weights: Vec<f64>,
    pub sigma2: f64,
}

/// Sampler output: retained draws and per-sweep diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub burn_in: usize,
    pub draws: Vec<Draw>,
    pub log_likelihood: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub effective: Vec<usize>,
    /// Acceptance counts over the retained sweeps, `[k][j]`.
    pub accepted: Vec<Vec<u64>>,
    pub proposed: Vec<Vec<u64>>,
    /// Step sizes in force after adaptation.
    pub step_sizes: Vec<Vec<f64>>,
}

impl PosteriorChain {
    /// Pooled acceptance rate of component `k` over the retained sweeps.
    pub fn acceptance_rate(&self, k: usize) -> Option<f64> {
        let p: u64 = self.proposed.get(k)?.iter().sum();
        let a: u64 = self.accepted[k].iter().sum();
        (p > 0).then(|| a as f64 / p as f64)
    }

    /// Posterior-mean occupancy fraction per component (raw labels).
    pub fn mean_occupancy(&self, k0: usize) -> Vec<f64> {
        let mut frac = vec![0.0; k0];
        for d in &self.draws {
            let n = d.z.len().max(1) as f64;
            for &k in &d.z {
                frac[k] += 1.0 / n;
            }
        }
        let m = self.draws.len().max(1) as f64;
        frac.iter_mut().for_each(|f| *f /= m);
        frac
    }

    /// `pr(z_i = k | y)` estimated from the retained draws, `[i][k]`.
    pub fn assignment_probabilities(&self, k0: usize) -> Vec<Vec<f64>> {
        let n = self.draws.first().map_or(0, |d| d.z.len());
        let mut probs = vec![vec![0.0; k0]; n];
        let m = self.draws.len().max(1) as f64;
        for d in &self.draws {
            for (i, &k) in d.z.iter().enumerate() {
                probs[i][k] += 1.0 / m;
            }
        }
        probs
    }
}

/// Per-sweep working buffers derived from the state.
#[derive(Clone, Debug)]
struct Workspace {
    tables: Vec<SpectralDensityTable>,
    /// Component fields `Q G_k^{1/2} c` at every site.
    fields: Vec<Vec<f64>>,
    fields_fresh: bool,
    /// `Q* ytilde[k]`.
    spectra: Vec<Vec<Complex64>>,
    spectra_fresh: bool,
    /// Hermitian full-grid coefficients per coefficient set.
    full_coeffs: Vec<Vec<Complex64>>,
    /// Observation index per site.
    owner: Vec<Option<usize>>,
}

/// The data-augmentation sampler for one chain.
#[derive(Clone, Debug)]
pub struct Sampler {
    config: SamplerConfig,
    data: LatticeData,
    trend: Trend,
    /// De-trended outcomes, aligned with `data.sites`.
    y: Vec<f64>,
    state: MixtureState,
    adapt: AdaptationState,
    rng: ChaCha8Rng,
    iteration: usize,
    chain: PosteriorChain,
    work: Workspace,
}

fn log_uniform_draw<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let u: f64 = StandardUniform.sample(rng);
    (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
}

/// Draw kernel parameters from the log-uniform prior.
pub fn sample_prior_theta<R: Rng + ?Sized>(
    family: KernelFamily,
    dims: usize,
    bounds: &PriorBounds,
    rng: &mut R,
) -> Result<KernelParams> {
    let n = family.parameter_names(dims).len();
    let values: Vec<f64> = (0..n)
        .map(|j| {
            let (lo, hi) = bounds.for_parameter(family, j);
            log_uniform_draw(lo, hi, rng)
        })
        .collect();
    KernelParams::from_values(family, &values)
}

/// Prior draws tried before giving up on finding a valid kernel.
const PRIOR_ATTEMPTS: usize = 1000;

/// Draw from the prior restricted to parameters with a non-negative spectral
/// density on `lattice`.
pub fn sample_valid_theta<R: Rng + ?Sized>(
    family: KernelFamily,
    lattice: &LatticeModel,
    bounds: &PriorBounds,
    rng: &mut R,
) -> Result<KernelParams> {
    valid_prior_draw(family, lattice, bounds, rng).map(|(theta, _)| theta)
}

fn valid_prior_draw<R: Rng + ?Sized>(
    family: KernelFamily,
    lattice: &LatticeModel,
    bounds: &PriorBounds,
    rng: &mut R,
) -> Result<(KernelParams, SpectralDensityTable)> {
    let mut last = None;
    for _ in 0..PRIOR_ATTEMPTS {
        let theta = sample_prior_theta(family, lattice.dims(), bounds, rng)?;
        match SpectralDensityTable::for_kernel(&theta, lattice) {
            Ok(table) => return Ok((theta, table)),
            Err(e @ MsgpError::NegativeSpectralDensity { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Log prior density of kernel parameters (log-uniform, up to a constant);
/// `-inf` outside the support.
pub fn log_prior_theta(theta: &KernelParams, bounds: &PriorBounds) -> f64 {
    let family = theta.family();
    theta
        .values()
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let (lo, hi) = bounds.for_parameter(family, j);
            if v >= lo && v <= hi {
                -v.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .sum()
}

/// Draw from `IG(shape, scale)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0).expect("valid gamma shape").sample(rng);
    scale / g
}

/// `sum_w |Y(w) - g^{1/2}(w) c(w)|^2` over the full grid.
pub fn residual_norm(spectrum: &[Complex64], sqrt_g: &[f64], coeffs_full: &[Complex64]) -> f64 {
    spectrum
        .iter()
        .zip(sqrt_g)
        .zip(coeffs_full)
        .map(|((y, s), c)| (y - c * s).norm_sqr())
        .sum()
}

/// Augmented log-likelihood
/// `sum_k [-|W| log sigma - R_k / (2 sigma^2)] + sum_i log p_{z_i} - (|a|^2 + |b|^2) / 2`,
/// with `R_k = |Q* ytilde_k - G_k^{1/2} c|^2`.
pub fn augmented_log_likelihood(
    state: &MixtureState,
    data: &LatticeData,
    tables: &[SpectralDensityTable],
) -> f64 {
    let lattice = &data.lattice;
    let n_w = lattice.len() as f64;
    let full: Vec<Vec<Complex64>> = state.coeffs.iter().map(|c| c.to_full(lattice)).collect();
    let mut total = 0.0;
    for k in 0..state.k0() {
        let spectrum = lattice.forward_real(&state.ytilde[k]);
        let r = residual_norm(&spectrum, tables[k].sqrt_values(), &full[state.coeff_index(k)]);
        total += -n_w * 0.5 * state.sigma2.ln() - r / (2.0 * state.sigma2);
    }
    total + log_weight_term(state) - 0.5 * state.coeffs.iter().map(|c| c.squared_norm()).sum::<f64>()
}

fn log_weight_term(state: &MixtureState) -> f64 {
    state.z.z.iter().map(|&k| state.weights.p[k].ln()).sum()
}

impl Sampler {
    /// Start a chain on lattice-mapped, de-trended data.
    pub fn new(data: LatticeData, trend: Trend, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(MsgpError::InvalidConfig("no observations to fit".into()));
        }
        if config.family.dims(data.lattice.dims()) != data.lattice.dims() {
            return Err(MsgpError::DimensionMismatch {
                expected: config.family.dims(data.lattice.dims()),
                actual: data.lattice.dims(),
            });
        }
        let y: Vec<f64> = data
            .coords
            .iter()
            .zip(&data.y)
            .map(|(x, y)| y - trend.eval(x))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k0 = config.k0;
        let lattice = &data.lattice;

        let z: Vec<usize> = (0..data.len()).map(|_| rng.random_range(0..k0)).collect();
        let thetas = (0..k0)
            .map(|_| sample_valid_theta(config.family, &data.lattice, &config.bounds, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let sets = match config.coupling {
            Coupling::Shared => 1,
            Coupling::Independent => k0,
        };
        let coeffs = (0..sets)
            .map(|_| SpectralCoefficients::standard(lattice, &mut rng))
            .collect();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        let sigma2 = if var > 0.0 { 0.1 * var } else { 0.1 };
        let state = MixtureState {
            z: Assignments::new(z, k0)?,
            thetas,
            weights: MixtureWeights::uniform(config.alpha, k0)?,
            coeffs,
            sigma2,
            ytilde: vec![vec![0.0; lattice.len()]; k0],
        };
        let adapt = initial_adaptation(&state, &config);
        let mut sampler = Self::from_parts(config, data, trend, y, state, adapt, rng, 0, PosteriorChain::default())?;
        sampler.chain.burn_in = sampler.config.burn_in();
        sampler.pin_observations();
        sampler.step2_update_latent();
        Ok(sampler)
    }

    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        config: SamplerConfig,
        data: LatticeData,
        trend: Trend,
        y: Vec<f64>,
        state: MixtureState,
        adapt: AdaptationState,
        rng: ChaCha8Rng,
        iteration: usize,
        chain: PosteriorChain,
    ) -> Result<Self> {
        let lattice = &data.lattice;
        let tables = state
            .thetas
            .iter()
            .map(|t| SpectralDensityTable::for_kernel(t, lattice))
            .collect::<Result<Vec<_>>>()?;
        let k0 = state.k0();
        let work = Workspace {
            tables,
            fields: vec![vec![0.0; lattice.len()]; k0],
            fields_fresh: false,
            spectra: vec![Vec::new(); k0],
            spectra_fresh: false,
            full_coeffs: state.coeffs.iter().map(|c| c.to_full(lattice)).collect(),
            owner: data.site_owner(),
        };
        Ok(Sampler {
            config,
            data,
            trend,
            y,
            state,
            adapt,
            rng,
            iteration,
            chain,
            work,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn data(&self) -> &LatticeData {
        &self.data
    }

    pub fn trend(&self) -> &Trend {
        &self.trend
    }

    /// De-trended outcomes the chain conditions on.
    pub fn observations(&self) -> &[f64] {
        &self.y
    }

    pub fn state(&self) -> &MixtureState {
        &self.state
    }

    pub fn adaptation(&self) -> &AdaptationState {
        &self.adapt
    }

    pub fn adaptation_mut(&mut self) -> &mut AdaptationState {
        &mut self.adapt
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn chain(&self) -> &PosteriorChain {
        &self.chain
    }

    pub fn into_chain(self) -> PosteriorChain {
        self.chain
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn tables(&self) -> &[SpectralDensityTable] {
        &self.work.tables
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.iters
    }

    /// Replace the state wholesale and rebuild every cache.
    pub fn set_state(&mut self, state: MixtureState) -> Result<()> {
        if state.k0() != self.config.k0 || state.ytilde.iter().any(|v| v.len() != self.data.lattice.len()) {
            return Err(MsgpError::InvalidConfig("state does not match the sampler layout".into()));
        }
        self.work.tables = state
            .thetas
            .iter()
            .map(|t| SpectralDensityTable::for_kernel(t, &self.data.lattice))
            .collect::<Result<Vec<_>>>()?;
        self.work.full_coeffs = state.coeffs.iter().map(|c| c.to_full(&self.data.lattice)).collect();
        self.work.fields_fresh = false;
        self.work.spectra_fresh = false;
        self.state = state;
        Ok(())
    }

    /// Replace the (de-trended) outcomes and re-pin them into the augmented vectors.
    pub fn set_observations(&mut self, y: Vec<f64>) -> Result<()> {
        if y.len() != self.y.len() {
            return Err(MsgpError::LengthMismatch {
                expected: self.y.len(),
                actual: y.len(),
            });
        }
        self.y = y;
        self.pin_observations();
        Ok(())
    }

    fn pin_observations(&mut self) {
        self.work.spectra_fresh = false;
        for (i, &site) in self.data.sites.iter().enumerate() {
            self.state.ytilde[self.state.z.z[i]][site] = self.y[i];
        }
    }

    /// Component fields `Q G_k^{1/2} c` at every site for the current state.
    pub fn fields(&mut self) -> &[Vec<f64>] {
        self.refresh_fields();
        &self.work.fields
    }

    fn refresh_fields(&mut self) {
        if self.work.fields_fresh {
            return;
        }
        let lattice = &self.data.lattice;
        let mut worst: f64 = 0.0;
        for k in 0..self.state.k0() {
            let c = &self.work.full_coeffs[self.state.coeff_index(k)];
            let (field, residue) = lattice.synthesize(self.work.tables[k].sqrt_values(), c);
            worst = worst.max(residue);
            self.work.fields[k] = field;
        }
        debug_assert!(worst < 1e-8, "imaginary field residue {worst:e}");
        self.work.fields_fresh = true;
    }

    /// Step 1: `pr(z_i = k) ∝ p_k N(y_i | f_k(x_i), sigma^2)`.
    pub fn step1_update_assignments(&mut self) {
        self.refresh_fields();
        let k0 = self.state.k0();
        let log_p = self.state.weights.log_weights();
        let inv = 0.5 / self.state.sigma2;
        let mut logw = vec![0.0; k0];
        for i in 0..self.y.len() {
            let site = self.data.sites[i];
            let yi = self.y[i];
            let mut max = f64::NEG_INFINITY;
            for k in 0..k0 {
                let r = yi - self.work.fields[k][site];
                logw[k] = log_p[k] - inv * r * r;
                max = max.max(logw[k]);
            }
            let mut total = 0.0;
            for w in logw.iter_mut() {
                *w = (*w - max).exp();
                total += *w;
            }
            let u: f64 = self.rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (k, w) in logw.iter().enumerate() {
                acc += w;
                if *w > 0.0 && u < acc {
                    pick = Some(k);
                    break;
                }
            }
            // Rounding can leave u just above the running sum.
            let pick = pick.unwrap_or_else(|| logw.iter().rposition(|&w| w > 0.0).unwrap_or(0));
            let old = self.state.z.z[i];
            if pick != old {
                self.state.z.z[i] = pick;
                self.state.ytilde[pick][site] = yi;
                self.work.spectra_fresh = false;
            }
        }
    }

    /// Step 2: redraw every augmented value not pinned by an observation.
    pub fn step2_update_latent(&mut self) {
        self.refresh_fields();
        self.work.spectra_fresh = false;
        let sd = self.state.sigma2.sqrt();
        for k in 0..self.state.k0() {
            let field = &self.work.fields[k];
            let yk = &mut self.state.ytilde[k];
            for (site, v) in yk.iter_mut().enumerate() {
                let pinned = matches!(self.work.owner[site], Some(i) if self.state.z.z[i] == k);
                if !pinned {
                    let e: f64 = StandardNormal.sample(&mut self.rng);
                    *v = field[site] + sd * e;
                }
            }
        }
    }

    fn refresh_spectra(&mut self) {
        if self.work.spectra_fresh {
            return;
        }
        for k in 0..self.state.k0() {
            self.work.spectra[k] = self.data.lattice.forward_real(&self.state.ytilde[k]);
        }
        self.work.spectra_fresh = true;
    }

    /// Step 3: conjugate Gaussian update of `a(w)`, `b(w)` on the canonical half.
    pub fn step3_update_coefficients(&mut self) {
        self.refresh_spectra();
        let canonical = self.data.lattice.canonical_indices().to_vec();
        let s2 = self.state.sigma2;
        let groups: Vec<Vec<usize>> = match self.state.coeffs.len() {
            1 => vec![(0..self.state.k0()).collect()],
            _ => (0..self.state.k0()).map(|k| vec![k]).collect(),
        };
        for (set, members) in groups.iter().enumerate() {
            let coeffs = &mut self.state.coeffs[set];
            for (i, &w) in canonical.iter().enumerate() {
                let mut precision = 1.0;
                let mut ra = 0.0;
                let mut rb = 0.0;
                for &k in members {
                    let s = self.work.tables[k].sqrt_values()[w];
                    let y = self.work.spectra[k][w];
                    precision += s * s / s2;
                    ra += s * SQRT_2 * y.re / s2;
                    rb += s * SQRT_2 * y.im / s2;
                }
                let tau = 1.0 / precision;
                let sd = tau.sqrt();
                let ea: f64 = StandardNormal.sample(&mut self.rng);
                let eb: f64 = StandardNormal.sample(&mut self.rng);
                coeffs.a[i] = tau * ra + sd * ea;
                coeffs.b[i] = tau * rb + sd * eb;
            }
        }
        let lattice = &self.data.lattice;
        self.work.full_coeffs = self.state.coeffs.iter().map(|c| c.to_full(lattice)).collect();
        self.work.fields_fresh = false;
    }

    fn residuals(&self) -> Vec<f64> {
        (0..self.state.k0())
            .map(|k| {
                residual_norm(
                    &self.work.spectra[k],
                    self.work.tables[k].sqrt_values(),
                    &self.work.full_coeffs[self.state.coeff_index(k)],
                )
            })
            .collect()
    }

    /// Inverse-gamma parameters of the noise update for a total residual `r`.
    pub fn noise_posterior(&self, r: f64) -> (f64, f64) {
        let count = match self.config.noise_shape {
            NoiseShape::Augmented => self.state.k0() * self.data.lattice.len(),
            NoiseShape::Observed => self.y.len(),
        };
        (count as f64 / 2.0 + 2.0, r / 2.0 + 1.0)
    }

    /// Step 4: `sigma^2 ~ IG(shape, sum_k R_k / 2 + 1)`.
    pub fn step4_update_sigma2(&mut self) {
        self.refresh_spectra();
        let r: f64 = self.residuals().iter().sum();
        let (shape, scale) = self.noise_posterior(r);
        self.state.sigma2 = sample_inverse_gamma(shape, scale, &mut self.rng);
        self.work.fields_fresh = false;
    }

    /// Step 5: component-wise Metropolis-Hastings on every kernel parameter.
    ///
    /// Proposals are uniform on `[v - s, v + s]` clipped to the prior support,
    /// so the Hastings ratio is the ratio of the two clipped window lengths.
    pub fn step5_update_thetas(&mut self) -> Result<()> {
        self.refresh_spectra();
        let family = self.config.family;
        let inv = 0.5 / self.state.sigma2;
        for k in 0..self.state.k0() {
            let spectrum = &self.work.spectra[k];
            let c = &self.work.full_coeffs[self.state.coeff_index(k)];
            // R(g) = sum |Y|^2 - 2 sum g^{1/2} Re(conj(Y) c) + sum g |c|^2
            let sy: f64 = spectrum.iter().map(|y| y.norm_sqr()).sum();
            let cross: Vec<f64> = spectrum.iter().zip(c).map(|(y, c)| (y.conj() * c).re).collect();
            let c2: Vec<f64> = c.iter().map(|c| c.norm_sqr()).collect();
            let resid = |t: &SpectralDensityTable| -> f64 {
                let mut acc = sy;
                for ((s, g), (x, cc)) in t.sqrt_values().iter().zip(t.values()).zip(cross.iter().zip(&c2)) {
                    acc += g * cc - 2.0 * s * x;
                }
                acc
            };
            let mut current_r = resid(&self.work.tables[k]);
            let mut values = self.state.thetas[k].values();
            for j in 0..values.len() {
                let (lo, hi) = self.config.bounds.for_parameter(family, j);
                let s = self.adapt.step_sizes[k][j];
                let v = values[j];
                let (plo, phi) = ((v - s).max(lo), (v + s).min(hi));
                let u: f64 = self.rng.random();
                let prop = plo + u * (phi - plo);
                let mut candidate = values.clone();
                candidate[j] = prop;
                let theta = KernelParams::from_values(family, &candidate)?;
                // Parameters whose density goes negative on the lattice are
                // not valid covariances; the prior puts no mass on them.
                let table = match SpectralDensityTable::for_kernel(&theta, &self.data.lattice) {
                    Ok(t) => t,
                    Err(MsgpError::NegativeSpectralDensity { .. }) => {
                        self.adapt.record(k, j, false);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let new_r = resid(&table);
                let back = ((prop + s).min(hi) - (prop - s).max(lo)).ln();
                let forth = (phi - plo).ln();
                let log_ratio = -inv * (new_r - current_r)
                    + log_prior_theta(&theta, &self.config.bounds)
                    - log_prior_theta(&self.state.thetas[k], &self.config.bounds)
                    + forth
                    - back;
                let accept = log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio;
                self.adapt.record(k, j, accept);
                if accept {
                    values = candidate;
                    current_r = new_r;
                    self.state.thetas[k] = theta;
                    self.work.tables[k] = table;
                    self.work.fields_fresh = false;
                }
            }
        }
        Ok(())
    }

    /// Step 6: `p ~ Dir(alpha / k0 + counts)`.
    pub fn step6_update_weights(&mut self) -> Result<()> {
        let counts = occupancy(&self.state.z, self.state.k0());
        self.state.weights = sample_weights_posterior(self.config.alpha, self.config.k0, &counts, &mut self.rng)?;
        Ok(())
    }

    /// Steps 1 to 6 without adaptation or recording.
    pub fn sweep_once(&mut self) -> Result<()> {
        self.step1_update_assignments();
        self.step2_update_latent();
        self.step3_update_coefficients();
        self.step4_update_sigma2();
        self.step5_update_thetas()?;
        self.step6_update_weights()
    }

    /// Current augmented log-likelihood using cached spectra.
    pub fn log_likelihood(&mut self) -> f64 {
        self.refresh_spectra();
        let n_w = self.data.lattice.len() as f64;
        let s2 = self.state.sigma2;
        let r: f64 = self.residuals().iter().sum();
        let k0 = self.state.k0() as f64;
        -k0 * n_w * 0.5 * s2.ln() - r / (2.0 * s2) + log_weight_term(&self.state)
            - 0.5 * self.state.coeffs.iter().map(|c| c.squared_norm()).sum::<f64>()
    }

    /// One full sweep with adaptation, diagnostics and draw recording.
    pub fn step(&mut self) -> Result<()> {
        self.sweep_once()?;
        self.iteration += 1;
        let t = self.iteration;
        let burn_in = self.config.burn_in();

        let ll = self.log_likelihood();
        if !ll.is_finite() {
            return Err(MsgpError::NonFinite {
                iteration: t,
                diagnostic: format!(
                    "sigma2 = {:e}, weights = {:?}, thetas = {:?}",
                    self.state.sigma2, self.state.weights.p, self.state.thetas
                ),
            });
        }
        let counts = occupancy(&self.state.z, self.state.k0());
        self.chain.log_likelihood.push(ll);
        self.chain.sigma2.push(self.state.sigma2);
        self.chain
            .effective
            .push(effective_components(&counts, self.config.effective_threshold));

        if t <= burn_in {
            if t % self.adapt.window == 0 {
                adapt_step_sizes(&mut self.adapt);
            }
            if t == burn_in {
                self.adapt.reset_counts();
            }
        } else {
            self.chain.draws.push(Draw {
                iteration: t,
                z: self.state.z.z.clone(),
                thetas: self.state.thetas.clone(),
                weights: self.state.weights.p.clone(),
                sigma2: self.state.sigma2,
            });
        }
        if t % (self.config.iters / 10).max(1) == 0 {
            log::info!(
                "iteration {t}/{}: log-lik {ll:.3}, sigma2 {:.4}, occupied {}",
                self.config.iters,
                self.state.sigma2,
                counts.iter().filter(|&&c| c > 0).count()
            );
        }
        if t == self.config.iters || t > burn_in {
            self.chain.accepted = self.adapt.accepted.clone();
            self.chain.proposed = self.adapt.proposed.clone();
            self.chain.step_sizes = self.adapt.step_sizes.clone();
        }
        Ok(())
    }

    /// Run until `iteration` sweeps have completed (capped at `iters`).
    pub fn run_until(&mut self, iteration: usize) -> Result<()> {
        while self.iteration < iteration.min(self.config.iters) {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<PosteriorChain> {
        self.run_until(self.config.iters)?;
        Ok(self.chain)
    }
}

fn initial_adaptation(state: &MixtureState, config: &SamplerConfig) -> AdaptationState {
    let family = config.family;
    let mut steps = Vec::with_capacity(state.k0());
    let mut max = Vec::with_capacity(state.k0());
    for theta in &state.thetas {
        let values = theta.values();
        let mut s = Vec::with_capacity(values.len());
        let mut m = Vec::with_capacity(values.len());
        for (j, v) in values.iter().enumerate() {
            let (lo, hi) = config.bounds.for_parameter(family, j);
            m.push(hi - lo);
            s.push((config.initial_step * v).min(hi - lo));
        }
        steps.push(s);
        max.push(m);
    }
    AdaptationState::new(steps, max, config.adapt_window)
}

/// Output of a fit: the data as the chain saw it plus the posterior sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub config: SamplerConfig,
    pub data: LatticeData,
    pub trend: Trend,
    pub chain: PosteriorChain,
}

/// Map `dataset` onto a lattice, remove a polynomial trend of `trend_degree`
/// and run one chain to completion.
pub fn run_chain(
    dataset: &Dataset,
    config: &SamplerConfig,
    mapping: &MappingOptions,
    trend_degree: usize,
) -> Result<FitResult> {
    config.validate()?;
    let data = map_to_lattice(dataset, mapping)?;
    let (trend, _) = fit_trend(&data.coords, &data.y, trend_degree)?;
    let sampler = Sampler::new(data.clone(), trend.clone(), config.clone())?;
    let chain = sampler.run()?;
    Ok(FitResult {
        config: config.clone(),
        data,
        trend,
        chain,
    })
}

