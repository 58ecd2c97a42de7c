//! Stationary covariance families and their spectral densities.
//!
//! All lags and frequencies are in lattice units: locations are mapped to
//! integer sites before any kernel is evaluated, so a length-scale `rho = 3`
//! means three lattice steps.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{MsgpError, Result};
use crate::spectral::{LatticeModel, ShiftedFft};

/// Kernel families selectable by string key in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// Anisotropic squared exponential, any dimension.
    SquaredExponential,
    /// Three-dimensional space-time kernel with interaction terms.
    SpaceTimeNonSeparable,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 2] = [
        KernelFamily::SquaredExponential,
        KernelFamily::SpaceTimeNonSeparable,
    ];

    pub fn key(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::SpaceTimeNonSeparable => "st_nonseparable",
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.key() == key)
            .ok_or_else(|| MsgpError::UnknownKernel(key.to_string()))
    }

    /// Parameter names in the canonical order used by [`KernelParams::values`].
    pub fn parameter_names(self, dims: usize) -> Vec<String> {
        match self {
            KernelFamily::SquaredExponential => std::iter::once("phi".to_string())
                .chain((1..=dims).map(|l| format!("rho{l}")))
                .collect(),
            KernelFamily::SpaceTimeNonSeparable => ["phi", "rho1", "rho2", "rho3", "c1", "c2"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    /// Whether parameter `index` is an interaction scale (`c1`, `c2`).
    pub fn is_interaction(self, index: usize) -> bool {
        matches!(self, KernelFamily::SpaceTimeNonSeparable) && index >= 4
    }

    pub fn dims(self, dims: usize) -> usize {
        match self {
            KernelFamily::SquaredExponential => dims,
            KernelFamily::SpaceTimeNonSeparable => 3,
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Squared exponential parameters: marginal variance and one length-scale per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeParams {
    pub phi: f64,
    pub rho: Vec<f64>,
}

impl SeParams {
    pub fn new(phi: f64, rho: Vec<f64>) -> Result<Self> {
        let p = SeParams { phi, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn isotropic(phi: f64, rho: f64, dims: usize) -> Result<Self> {
        Self::new(phi, vec![rho; dims])
    }

    fn validate(&self) -> Result<()> {
        if self.rho.is_empty() {
            return Err(MsgpError::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        // phi = 0 is the degenerate zero process and is allowed.
        check_param("phi", self.phi, true)?;
        for (l, &r) in self.rho.iter().enumerate() {
            check_param(&format!("rho{}", l + 1), r, false)?;
        }
        Ok(())
    }
}

/// Non-separable space-time parameters (two spatial axes, one temporal axis).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StParams {
    pub phi: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub c1: f64,
    pub c2: f64,
}

impl StParams {
    pub fn new(phi: f64, rho1: f64, rho2: f64, rho3: f64, c1: f64, c2: f64) -> Result<Self> {
        let p = StParams {
            phi,
            rho1,
            rho2,
            rho3,
            c1,
            c2,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        check_param("phi", self.phi, false)?;
        check_param("rho1", self.rho1, false)?;
        check_param("rho2", self.rho2, false)?;
        check_param("rho3", self.rho3, false)?;
        // c = +inf is the separable limit.
        for (name, c) in [("c1", self.c1), ("c2", self.c2)] {
            if c.is_nan() || c <= 0.0 {
                return Err(MsgpError::InvalidParameter {
                    name: name.into(),
                    value: c,
                    reason: "must be strictly positive",
                });
            }
        }
        Ok(())
    }
}

fn check_param(name: &str, value: f64, allow_zero: bool) -> Result<()> {
    let ok = value.is_finite() && (value > 0.0 || (allow_zero && value == 0.0));
    if ok {
        Ok(())
    } else {
        Err(MsgpError::InvalidParameter {
            name: name.to_string(),
            value,
            reason: if allow_zero {
                "must be finite and non-negative"
            } else {
                "must be finite and strictly positive"
            },
        })
    }
}

/// `phi * exp(-sum_l delta_l^2 / (2 rho_l^2))`.
pub fn se_covariance(delta: &[f64], params: &SeParams) -> Result<f64> {
    check_dims(params.rho.len(), delta.len())?;
    Ok(se_eval(delta, params))
}

#[inline]
fn se_eval(delta: &[f64], params: &SeParams) -> f64 {
    let q: f64 = delta
        .iter()
        .zip(&params.rho)
        .map(|(d, r)| d * d / (r * r))
        .sum();
    params.phi * (-0.5 * q).exp()
}

/// Closed-form Fourier transform of the squared exponential kernel,
/// `g(w) = phi (2 pi)^{d/2} prod(rho) exp(-sum rho_l^2 w_l^2 / 2)`.
pub fn se_spectral_density(w: &[f64], params: &SeParams) -> Result<f64> {
    check_dims(params.rho.len(), w.len())?;
    Ok(se_density_eval(w, params))
}

#[inline]
fn se_density_eval(w: &[f64], params: &SeParams) -> f64 {
    let d = params.rho.len() as f64;
    let prod: f64 = params.rho.iter().product();
    let q: f64 = w
        .iter()
        .zip(&params.rho)
        .map(|(w, r)| r * r * w * w)
        .sum();
    params.phi * (2.0 * PI).powf(0.5 * d) * prod * (-0.5 * q).exp()
}

/// Space-time covariance with multiplicative interaction terms.
pub fn st_covariance(delta: &[f64], params: &StParams) -> Result<f64> {
    check_dims(3, delta.len())?;
    Ok(st_eval(delta, params))
}

#[inline]
fn st_eval(delta: &[f64], p: &StParams) -> f64 {
    let (d1, d2, dt) = (delta[0] * delta[0], delta[1] * delta[1], delta[2].abs());
    let spatial = -d1 / (2.0 * p.rho1 * p.rho1) - d2 / (2.0 * p.rho2 * p.rho2);
    let temporal = -dt / p.rho3;
    // c = inf gives 0 here, not NaN, as long as the lag product is finite.
    let interaction = -d1 * dt / p.c1 - d2 * dt / p.c2;
    p.phi * (spatial + temporal + interaction).exp()
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(MsgpError::DimensionMismatch { expected, actual })
    }
}

/// A parameterized member of one of the stationary families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelParams {
    SquaredExponential(SeParams),
    SpaceTime(StParams),
}

impl KernelParams {
    pub fn family(&self) -> KernelFamily {
        match self {
            KernelParams::SquaredExponential(_) => KernelFamily::SquaredExponential,
            KernelParams::SpaceTime(_) => KernelFamily::SpaceTimeNonSeparable,
        }
    }

    /// Input dimension of the lag vector.
    pub fn dims(&self) -> usize {
        match self {
            KernelParams::SquaredExponential(p) => p.rho.len(),
            KernelParams::SpaceTime(_) => 3,
        }
    }

    /// Marginal variance `K(0)`.
    pub fn phi(&self) -> f64 {
        match self {
            KernelParams::SquaredExponential(p) => p.phi,
            KernelParams::SpaceTime(p) => p.phi,
        }
    }

    pub fn covariance(&self, lag: &[f64]) -> Result<f64> {
        check_dims(self.dims(), lag.len())?;
        Ok(self.eval(lag))
    }

    /// Unchecked evaluation; `lag` must have length [`Self::dims`].
    #[inline]
    pub fn eval(&self, lag: &[f64]) -> f64 {
        debug_assert_eq!(lag.len(), self.dims());
        match self {
            KernelParams::SquaredExponential(p) => se_eval(lag, p),
            KernelParams::SpaceTime(p) => st_eval(lag, p),
        }
    }

    /// Closed-form spectral density, when the family has one.
    pub fn closed_form_density(&self, w: &[f64]) -> Option<f64> {
        match self {
            KernelParams::SquaredExponential(p) => Some(se_density_eval(w, p)),
            KernelParams::SpaceTime(_) => None,
        }
    }

    /// Parameter values in the order of [`KernelFamily::parameter_names`].
    pub fn values(&self) -> Vec<f64> {
        match self {
            KernelParams::SquaredExponential(p) => {
                std::iter::once(p.phi).chain(p.rho.iter().copied()).collect()
            }
            KernelParams::SpaceTime(p) => vec![p.phi, p.rho1, p.rho2, p.rho3, p.c1, p.c2],
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.family().parameter_names(self.dims())
    }

    pub fn from_values(family: KernelFamily, values: &[f64]) -> Result<Self> {
        match family {
            KernelFamily::SquaredExponential => {
                if values.len() < 2 {
                    return Err(MsgpError::DimensionMismatch {
                        expected: 2,
                        actual: values.len(),
                    });
                }
                Ok(KernelParams::SquaredExponential(SeParams::new(
                    values[0],
                    values[1..].to_vec(),
                )?))
            }
            KernelFamily::SpaceTimeNonSeparable => {
                check_dims(6, values.len())?;
                Ok(KernelParams::SpaceTime(StParams::new(
                    values[0], values[1], values[2], values[3], values[4], values[5],
                )?))
            }
        }
    }

    /// Same family and dimension with new parameter values.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        Self::from_values(self.family(), values)
    }

    /// Flat key-value form (`phi`, `rho1..rho_d`, `c1`, `c2`).
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.names().into_iter().zip(self.values()).collect()
    }

    pub fn from_map(family: KernelFamily, dims: usize, map: &BTreeMap<String, f64>) -> Result<Self> {
        let names = family.parameter_names(dims);
        let mut values = Vec::with_capacity(names.len());
        for name in &names {
            let v = map.get(name).ok_or_else(|| MsgpError::InvalidParameter {
                name: name.clone(),
                value: f64::NAN,
                reason: "missing from parameter map",
            })?;
            values.push(*v);
        }
        if let Some(extra) = map.keys().find(|k| !names.contains(k)) {
            return Err(MsgpError::InvalidParameter {
                name: extra.clone(),
                value: map[extra],
                reason: "not a parameter of this kernel family",
            });
        }
        Self::from_values(family, &values)
    }
}

/// Absolute tolerance multiplier for clamping negative FFT outputs.
pub const NEGATIVE_CLAMP_TOLERANCE: f64 = 1e-6;

/// Multiple of `eps * sum |K(lag)|` below which a negative numeric density
/// is treated as transform round-off.
const ROUNDOFF_FACTOR: f64 = 64.0;

/// Lag decay threshold (relative to `K(0)`) used to size the sampling window
/// of [`numeric_spectral_density`].
const WINDOW_DECAY: f64 = 1e-12;

/// Largest extended sampling window, in complex points.
const MAX_WINDOW_POINTS: usize = 1 << 22;

/// Non-negative spectral density evaluated on a lattice frequency grid.
///
/// Values are normalized so that `(1/|W|) sum_w g(w) = K(0)`, which makes the
/// same-parameter lattice covariance `K(x, x; theta, theta)` equal `phi`
/// exactly.
#[derive(Clone, Debug)]
pub struct SpectralDensityTable {
    sizes: Vec<usize>,
    values: Vec<f64>,
    sqrt_values: Vec<f64>,
    params: Option<KernelParams>,
}

static ALIASING_WARNED: AtomicBool = AtomicBool::new(false);

impl SpectralDensityTable {
    /// Build the table for a kernel: closed form where available, otherwise
    /// the lattice FFT of the sampled kernel.
    pub fn for_kernel(params: &KernelParams, lattice: &LatticeModel) -> Result<Self> {
        if params.dims() != lattice.dims() {
            return Err(MsgpError::DimensionMismatch {
                expected: lattice.dims(),
                actual: params.dims(),
            });
        }
        let mut table = match params {
            KernelParams::SquaredExponential(p) => se_table(p, lattice),
            KernelParams::SpaceTime(_) => numeric_spectral_density(|lag| params.eval(lag), lattice)?,
        };
        table.normalize(params.phi());
        table.params = Some(params.clone());
        table.warn_on_aliasing(lattice);
        Ok(table)
    }

    /// Wrap raw density values. Small negative values are clamped to zero;
    /// larger ones are an error.
    pub fn from_values(
        lattice: &LatticeModel,
        mut values: Vec<f64>,
        params: Option<KernelParams>,
    ) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(MsgpError::LengthMismatch {
                expected: lattice.len(),
                actual: values.len(),
            });
        }
        clamp_negative(&mut values, lattice, 0.0)?;
        Self::wrap(lattice, values, params)
    }

    fn wrap(lattice: &LatticeModel, values: Vec<f64>, params: Option<KernelParams>) -> Result<Self> {
        let sqrt_values = values.iter().map(|v| v.sqrt()).collect();
        Ok(SpectralDensityTable {
            sizes: lattice.sizes().to_vec(),
            values,
            sqrt_values,
            params,
        })
    }

    fn normalize(&mut self, marginal: f64) {
        let mean = self.values.iter().sum::<f64>() / self.values.len() as f64;
        if mean > 0.0 && marginal > 0.0 {
            let scale = marginal / mean;
            for v in &mut self.values {
                *v *= scale;
            }
            let s = scale.sqrt();
            for v in &mut self.sqrt_values {
                *v *= s;
            }
        }
    }

    fn warn_on_aliasing(&self, lattice: &LatticeModel) {
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        if max <= 0.0 {
            return;
        }
        let boundary = lattice
            .boundary_indices()
            .map(|i| self.values[i])
            .fold(0.0, f64::max);
        if boundary > 1e-3 * max {
            // Proposals hit this constantly; only the first one is a warning.
            let level = if ALIASING_WARNED.swap(true, Ordering::Relaxed) {
                log::Level::Debug
            } else {
                log::Level::Warn
            };
            log::log!(
                level,
                "spectral density at the boundary frequencies is {:.2e} of its peak; \
                 the kernel may be aliased on lattice {:?}",
                boundary / max,
                self.sizes
            );
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `g^{1/2}(w)` per frequency.
    pub fn sqrt_values(&self) -> &[f64] {
        &self.sqrt_values
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Parameters that produced the table, if built from a kernel.
    pub fn params(&self) -> Option<&KernelParams> {
        self.params.as_ref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean over the grid, i.e. the implied lattice variance.
    pub fn lattice_variance(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// The SE density factorizes over axes, so the table is an outer product of
/// one short vector per axis.
fn se_table(params: &SeParams, lattice: &LatticeModel) -> SpectralDensityTable {
    let d = lattice.dims();
    let scale = params.phi * (2.0 * PI).powf(0.5 * d as f64) * params.rho.iter().product::<f64>();
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|l| {
            let r2 = params.rho[l] * params.rho[l];
            (0..lattice.sizes()[l])
                .map(|t| {
                    let w = lattice.axis_frequency(l, t);
                    (-0.5 * r2 * w * w).exp()
                })
                .collect()
        })
        .collect();
    let n = lattice.len();
    let mut values = vec![scale; n];
    let mut stride = n;
    for axis in &axes {
        let m = axis.len();
        stride /= m;
        for (i, v) in values.iter_mut().enumerate() {
            *v *= axis[(i / stride) % m];
        }
    }
    let sqrt_values = values.iter().map(|v| v.sqrt()).collect();
    SpectralDensityTable {
        sizes: lattice.sizes().to_vec(),
        values,
        sqrt_values,
        params: None,
    }
}

/// `floor` is an absolute tolerance added for transform round-off.
fn clamp_negative(values: &mut [f64], lattice: &LatticeModel, floor: f64) -> Result<()> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let tolerance = (NEGATIVE_CLAMP_TOLERANCE * max).max(floor);
    let (worst_idx, worst) = values
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    if worst < 0.0 && -worst > tolerance {
        return Err(MsgpError::NegativeSpectralDensity {
            value: worst,
            frequency: lattice.frequency(worst_idx),
            tolerance,
        });
    }
    for v in values.iter_mut() {
        if *v < 0.0 || v.is_nan() {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Discrete Fourier transform of a real, even kernel sampled at integer lags,
/// evaluated on the lattice frequency grid.
///
/// The kernel is sampled on a window of `L_l * m_l` lags per axis (odd `L_l`,
/// chosen so the kernel has decayed below `1e-12 K(0)` at the window edge),
/// which makes the result the discrete-time Fourier transform of the kernel
/// up to that truncation. When the kernel has already decayed inside the
/// lattice, `L_l = 1` and the table is exactly the lattice DFT, so its
/// inverse reproduces the sampled kernel at every lag with `|lag_l| < m_l/2`.
///
/// The table is not renormalized here; see [`SpectralDensityTable::for_kernel`].
pub fn numeric_spectral_density<F>(kernel: F, lattice: &LatticeModel) -> Result<SpectralDensityTable>
where
    F: Fn(&[f64]) -> f64,
{
    let dims = lattice.dims();
    let sizes = lattice.sizes();
    let extension = window_extension(&kernel, sizes);
    let ext_sizes: Vec<usize> = sizes.iter().zip(&extension).map(|(m, l)| m * l).collect();
    let fft = ShiftedFft::new(&ext_sizes);
    let total: usize = ext_sizes.iter().product();

    // Antiperiodic sampling: a negative lag u - M is stored at index u with a
    // sign flip, and the two half-window lags +-M/2 cancel exactly.
    let mut buf = vec![num_complex::Complex64::new(0.0, 0.0); total];
    let mut l1 = 0.0;
    let mut idx = vec![0usize; dims];
    let mut lag = vec![0.0; dims];
    for (flat, slot) in buf.iter_mut().enumerate() {
        unravel(flat, &ext_sizes, &mut idx);
        let mut sign = 1.0;
        let mut on_edge = false;
        for l in 0..dims {
            let m = ext_sizes[l];
            let u = idx[l];
            if 2 * u == m {
                on_edge = true;
                break;
            }
            if 2 * u > m {
                lag[l] = u as f64 - m as f64;
                sign = -sign;
            } else {
                lag[l] = u as f64;
            }
        }
        if on_edge {
            continue;
        }
        let k = kernel(&lag);
        l1 += k.abs();
        *slot = num_complex::Complex64::new(sign * k, 0.0);
    }
    fft.forward_unnormalized(&mut buf);

    // Frequency t of the lattice grid coincides with t * L + (L - 1) / 2 of
    // the extended grid when L is odd.
    let mut values = Vec::with_capacity(lattice.len());
    let mut ext_idx = vec![0usize; dims];
    for flat in 0..lattice.len() {
        unravel(flat, sizes, &mut idx);
        for l in 0..dims {
            ext_idx[l] = idx[l] * extension[l] + (extension[l] - 1) / 2;
        }
        values.push(buf[ravel(&ext_idx, &ext_sizes)].re);
    }
    // An even kernel has a density symmetric under w -> -w; enforce it so
    // round-off cannot leave an imaginary part in synthesized fields.
    let values: Vec<f64> = (0..values.len())
        .map(|i| 0.5 * (values[i] + values[lattice.mirror(i)]))
        .collect();
    let mut values = values;
    // The FFT's absolute error scales with the l1 norm of its input.
    let floor = ROUNDOFF_FACTOR * f64::EPSILON * l1;
    clamp_negative(&mut values, lattice, floor)?;
    SpectralDensityTable::wrap(lattice, values, None)
}

fn window_extension<F: Fn(&[f64]) -> f64>(kernel: &F, sizes: &[usize]) -> Vec<usize> {
    let dims = sizes.len();
    let zero = vec![0.0; dims];
    let k0 = kernel(&zero).abs();
    let mut ext = vec![1usize; dims];
    if k0 == 0.0 {
        return ext;
    }
    let mut lag = vec![0.0; dims];
    for l in 0..dims {
        let others: usize = sizes
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != l)
            .map(|(_, m)| *m)
            .product();
        loop {
            lag[l] = (ext[l] * sizes[l] / 2) as f64;
            let decayed = kernel(&lag).abs() <= WINDOW_DECAY * k0;
            let next_points = (ext[l] + 2) * sizes[l] * others;
            if decayed || next_points > MAX_WINDOW_POINTS {
                break;
            }
            ext[l] += 2;
        }
        lag[l] = 0.0;
    }
    ext
}

pub(crate) fn unravel(mut flat: usize, sizes: &[usize], out: &mut [usize]) {
    for l in (0..sizes.len()).rev() {
        out[l] = flat % sizes[l];
        flat /= sizes[l];
    }
}

pub(crate) fn ravel(idx: &[usize], sizes: &[usize]) -> usize {
    idx.iter().zip(sizes).fold(0, |acc, (i, m)| acc * m + i)
}
