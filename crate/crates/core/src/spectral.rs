//! Site lattice, half-shifted frequency grid and the unitary DFT linking them.
//!
//! Sites along axis `l` are the integers `0..m_l`; frequencies are
//! `w_l(t) = 2 pi (t + 1/2) / m_l - pi`, so no frequency is exactly `0` or
//! `+-pi` and the grid is closed under `w -> -w`. With `Q[x, w] =
//! exp(j x.w) / sqrt(|W|)` the transform is unitary. A consequence of the
//! half shift is that lattice covariances are antiperiodic:
//! `C(lag + m_l e_l) = -C(lag)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{MsgpError, Result};
use crate::kernels::{ravel, unravel, KernelParams, SpectralDensityTable};

/// Multidimensional FFT on the half-shifted grid, row-major layout.
pub struct ShiftedFft {
    sizes: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    /// `prod_l exp(-j x_l (pi/m_l - pi))` per site.
    phase: Vec<Complex64>,
}

impl ShiftedFft {
    pub fn new(sizes: &[usize]) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let forward = sizes.iter().map(|&m| planner.plan_fft_forward(m)).collect();
        let inverse = sizes.iter().map(|&m| planner.plan_fft_inverse(m)).collect();
        let axis_phase: Vec<Vec<Complex64>> = sizes
            .iter()
            .map(|&m| {
                let shift = PI / m as f64 - PI;
                (0..m)
                    .map(|x| Complex64::from_polar(1.0, -(x as f64) * shift))
                    .collect()
            })
            .collect();
        let total: usize = sizes.iter().product();
        let mut idx = vec![0; sizes.len()];
        let phase = (0..total)
            .map(|flat| {
                unravel(flat, sizes, &mut idx);
                idx.iter()
                    .zip(&axis_phase)
                    .fold(Complex64::new(1.0, 0.0), |acc, (&x, p)| acc * p[x])
            })
            .collect();
        ShiftedFft {
            sizes: sizes.to_vec(),
            forward,
            inverse,
            phase,
        }
    }

    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    /// `out[w] = sum_x buf[x] exp(-j x.w)` in place.
    pub fn forward_unnormalized(&self, buf: &mut [Complex64]) {
        for (v, p) in buf.iter_mut().zip(&self.phase) {
            *v *= p;
        }
        self.transform(buf, &self.forward);
    }

    /// `out[x] = sum_w buf[w] exp(j x.w)` in place.
    pub fn inverse_unnormalized(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.inverse);
        for (v, p) in buf.iter_mut().zip(&self.phase) {
            *v *= p.conj();
        }
    }

    fn transform(&self, buf: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(buf.len(), self.len());
        let dims = self.sizes.len();
        let mut stride = 1;
        for l in (0..dims).rev() {
            let m = self.sizes[l];
            let plan = &plans[l];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            if stride == 1 {
                plan.process_with_scratch(buf, &mut scratch);
            } else {
                let block = m * stride;
                let mut line = vec![Complex64::new(0.0, 0.0); m];
                for outer in (0..buf.len()).step_by(block) {
                    for inner in 0..stride {
                        let base = outer + inner;
                        for (t, slot) in line.iter_mut().enumerate() {
                            *slot = buf[base + t * stride];
                        }
                        plan.process_with_scratch(&mut line, &mut scratch);
                        for (t, v) in line.iter().enumerate() {
                            buf[base + t * stride] = *v;
                        }
                    }
                }
            }
            stride *= m;
        }
    }
}

impl std::fmt::Debug for ShiftedFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShiftedFft").field("sizes", &self.sizes).finish()
    }
}

#[derive(Serialize, Deserialize)]
struct LatticeSpec {
    sizes: Vec<usize>,
}

/// Regular site lattice `X` and frequency grid `W` with `|X| = |W|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "LatticeSpec", into = "LatticeSpec")]
pub struct LatticeModel {
    sizes: Vec<usize>,
    fft: Arc<ShiftedFft>,
    canonical: Vec<usize>,
}

impl TryFrom<LatticeSpec> for LatticeModel {
    type Error = MsgpError;
    fn try_from(spec: LatticeSpec) -> Result<Self> {
        LatticeModel::new(&spec.sizes)
    }
}

impl From<LatticeModel> for LatticeSpec {
    fn from(l: LatticeModel) -> Self {
        LatticeSpec { sizes: l.sizes }
    }
}

impl PartialEq for LatticeModel {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes
    }
}

/// Build a lattice with `m_l` sites and frequencies per axis.
pub fn build_lattice(sizes: &[usize]) -> Result<LatticeModel> {
    LatticeModel::new(sizes)
}

impl LatticeModel {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&m| m < 2 || m % 2 != 0) {
            return Err(MsgpError::InvalidLattice(sizes.to_vec()));
        }
        let fft = Arc::new(ShiftedFft::new(sizes));
        let total: usize = sizes.iter().product();
        let half = sizes[0] / 2;
        let mut idx = vec![0; sizes.len()];
        let canonical = (0..total)
            .filter(|&flat| {
                unravel(flat, sizes, &mut idx);
                idx[0] >= half
            })
            .collect();
        Ok(LatticeModel {
            sizes: sizes.to_vec(),
            fft,
            canonical,
        })
    }

    pub fn dims(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// `|W| = |X|`.
    pub fn len(&self) -> usize {
        self.fft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fft.is_empty()
    }

    pub fn axis_frequency(&self, axis: usize, t: usize) -> f64 {
        2.0 * PI * (t as f64 + 0.5) / self.sizes[axis] as f64 - PI
    }

    pub fn frequency(&self, flat: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.dims()];
        self.frequency_into(flat, &mut w);
        w
    }

    pub fn frequency_into(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for l in (0..self.dims()).rev() {
            let t = rem % self.sizes[l];
            rem /= self.sizes[l];
            out[l] = self.axis_frequency(l, t);
        }
    }

    /// Site coordinates of a flat index.
    pub fn site(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        unravel(flat, &self.sizes, &mut idx);
        idx
    }

    pub fn site_index(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.dims() {
            return Err(MsgpError::DimensionMismatch {
                expected: self.dims(),
                actual: coords.len(),
            });
        }
        if coords.iter().zip(&self.sizes).any(|(c, m)| c >= m) {
            return Err(MsgpError::SiteOutOfLattice {
                site: coords.iter().map(|&c| c as i64).collect(),
                sizes: self.sizes.clone(),
            });
        }
        Ok(ravel(coords, &self.sizes))
    }

    /// Index of `-w`.
    pub fn mirror(&self, flat: usize) -> usize {
        let mut rem = flat;
        let mut out = 0;
        let mut mult = 1;
        for l in (0..self.dims()).rev() {
            let m = self.sizes[l];
            let t = rem % m;
            rem /= m;
            out += (m - 1 - t) * mult;
            mult *= m;
        }
        out
    }

    /// Frequencies with `w_1 > 0`: one representative of every `{w, -w}` pair.
    pub fn canonical_indices(&self) -> &[usize] {
        &self.canonical
    }

    /// Frequencies on the outermost shell of the grid, `|w_l| = pi - pi/m_l` for some `l`.
    pub fn boundary_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let mut idx = vec![0; self.dims()];
        (0..self.len()).filter(move |&flat| {
            unravel(flat, &self.sizes, &mut idx);
            idx.iter()
                .zip(&self.sizes)
                .any(|(&t, &m)| t == 0 || t == m - 1)
        })
    }

    pub fn fft(&self) -> &ShiftedFft {
        &self.fft
    }

    /// `Q* v`: sites to frequencies, unitary.
    pub fn dft_forward(&self, values: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(values.len())?;
        let mut buf = values.to_vec();
        self.forward_in_place(&mut buf);
        Ok(buf)
    }

    /// `Q c`: frequencies to sites, the adjoint of [`Self::dft_forward`].
    pub fn dft_inverse(&self, values: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(values.len())?;
        let mut buf = values.to_vec();
        self.inverse_in_place(&mut buf);
        Ok(buf)
    }

    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.fft.forward_unnormalized(buf);
        let s = 1.0 / (self.len() as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= s);
    }

    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.fft.inverse_unnormalized(buf);
        let s = 1.0 / (self.len() as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= s);
    }

    /// `Q* y` for a real site vector.
    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward_in_place(&mut buf);
        buf
    }

    /// Real field `Q (g^{1/2} .* c)` for a Hermitian coefficient vector.
    /// Returns the field and the largest imaginary magnitude that was dropped.
    pub fn synthesize(&self, sqrt_g: &[f64], coeffs_full: &[Complex64]) -> (Vec<f64>, f64) {
        let mut buf: Vec<Complex64> = sqrt_g
            .iter()
            .zip(coeffs_full)
            .map(|(s, c)| c * s)
            .collect();
        self.inverse_in_place(&mut buf);
        let residue = buf.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        (buf.into_iter().map(|v| v.re).collect(), residue)
    }

    /// Per-axis lag from `b` to `a` reduced into `[0, m_l)`, with the
    /// antiperiodic sign picked up by the reduction.
    pub fn wrapped_lag(&self, a: usize, b: usize) -> (usize, f64) {
        let mut ra = a;
        let mut rb = b;
        let mut out = 0;
        let mut mult = 1;
        let mut sign = 1.0;
        for l in (0..self.dims()).rev() {
            let m = self.sizes[l];
            let (xa, xb) = (ra % m, rb % m);
            ra /= m;
            rb /= m;
            let diff = if xa >= xb {
                xa - xb
            } else {
                sign = -sign;
                xa + m - xb
            };
            out += diff * mult;
            mult *= m;
        }
        (out, sign)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.len() {
            Ok(())
        } else {
            Err(MsgpError::LengthMismatch {
                expected: self.len(),
                actual: len,
            })
        }
    }

    fn check_table(&self, table: &SpectralDensityTable) -> Result<()> {
        if table.sizes() == self.sizes() {
            Ok(())
        } else {
            Err(MsgpError::LatticeMismatch)
        }
    }
}

/// Spectral white-noise coefficients stored on the canonical half-space.
///
/// The full-grid coefficient is `c(w) = (a(w) + j b(w)) / sqrt(2)` on the
/// canonical half and `conj(c(w))` on its mirror, so every synthesized field
/// is real and has covariance `(1/|W|) sum_w cos(lag.w) g_i^{1/2} g_j^{1/2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl SpectralCoefficients {
    pub fn zeros(lattice: &LatticeModel) -> Self {
        let n = lattice.canonical_indices().len();
        SpectralCoefficients {
            a: vec![0.0; n],
            b: vec![0.0; n],
        }
    }

    pub fn standard<R: Rng + ?Sized>(lattice: &LatticeModel, rng: &mut R) -> Self {
        let n = lattice.canonical_indices().len();
        let a = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let b = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        SpectralCoefficients { a, b }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Hermitian full-grid view.
    pub fn to_full(&self, lattice: &LatticeModel) -> Vec<Complex64> {
        let mut full = vec![Complex64::new(0.0, 0.0); lattice.len()];
        for (i, &w) in lattice.canonical_indices().iter().enumerate() {
            let c = Complex64::new(self.a[i], self.b[i]) * FRAC_1_SQRT_2;
            full[w] = c;
            full[lattice.mirror(w)] = c.conj();
        }
        full
    }

    pub fn squared_norm(&self) -> f64 {
        self.a.iter().chain(&self.b).map(|v| v * v).sum()
    }
}

/// Mixed cross-covariance between two sites with their own spectral
/// densities, by direct summation over the frequency grid. The measurement
/// noise term is not included.
pub fn cross_covariance(
    lattice: &LatticeModel,
    xi: &[usize],
    xj: &[usize],
    gi: &SpectralDensityTable,
    gj: &SpectralDensityTable,
) -> Result<f64> {
    lattice.check_table(gi)?;
    lattice.check_table(gj)?;
    let d = lattice.dims();
    if xi.len() != d || xj.len() != d {
        return Err(MsgpError::DimensionMismatch {
            expected: d,
            actual: xi.len().min(xj.len()),
        });
    }
    let lag: Vec<f64> = xi.iter().zip(xj).map(|(&a, &b)| a as f64 - b as f64).collect();
    let mut w = vec![0.0; d];
    let mut acc = 0.0;
    for (flat, (si, sj)) in gi.sqrt_values().iter().zip(gj.sqrt_values()).enumerate() {
        lattice.frequency_into(flat, &mut w);
        let phase: f64 = lag.iter().zip(&w).map(|(x, w)| x * w).sum();
        acc += phase.cos() * si * sj;
    }
    Ok(acc / lattice.len() as f64)
}

/// Lattice cross-covariance `C_ab(lag)` for one pair of spectral tables at
/// every lag in `[0, m_l)`, from a single inverse FFT.
#[derive(Clone, Debug)]
pub struct LagTable {
    values: Vec<f64>,
}

impl LagTable {
    pub fn new(lattice: &LatticeModel, ga: &SpectralDensityTable, gb: &SpectralDensityTable) -> Result<Self> {
        lattice.check_table(ga)?;
        lattice.check_table(gb)?;
        let n = lattice.len() as f64;
        let mut buf: Vec<Complex64> = ga
            .sqrt_values()
            .iter()
            .zip(gb.sqrt_values())
            .map(|(a, b)| Complex64::new(a * b / n, 0.0))
            .collect();
        lattice.fft().inverse_unnormalized(&mut buf);
        Ok(LagTable {
            values: buf.into_iter().map(|v| v.re).collect(),
        })
    }

    /// `C(x_a - x_b)` for two flat site indices.
    #[inline]
    pub fn between(&self, lattice: &LatticeModel, a: usize, b: usize) -> f64 {
        let (idx, sign) = lattice.wrapped_lag(a, b);
        sign * self.values[idx]
    }

    pub fn at_zero(&self) -> f64 {
        self.values[0]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cross-covariance tables for every pair of a fixed list of components.
#[derive(Clone, Debug)]
pub struct LagTables {
    k: usize,
    tables: Vec<LagTable>,
    index: Vec<usize>,
}

impl LagTables {
    pub fn new(lattice: &LatticeModel, components: &[SpectralDensityTable]) -> Result<Self> {
        let k = components.len();
        let mut tables = Vec::with_capacity(k * (k + 1) / 2);
        let mut index = vec![0; k * k];
        for a in 0..k {
            for b in a..k {
                index[a * k + b] = tables.len();
                index[b * k + a] = tables.len();
                tables.push(LagTable::new(lattice, &components[a], &components[b])?);
            }
        }
        Ok(LagTables { k, tables, index })
    }

    pub fn components(&self) -> usize {
        self.k
    }

    /// Table for the unordered pair `{a, b}`; `C_ab` is symmetric in `(a, b)`.
    pub fn pair(&self, a: usize, b: usize) -> &LagTable {
        &self.tables[self.index[a * self.k + b]]
    }

    /// `K(x_i, x_j; theta_a, theta_b)` without noise.
    #[inline]
    pub fn covariance(&self, lattice: &LatticeModel, xi: usize, a: usize, xj: usize, b: usize) -> f64 {
        // C_ab(lag) with lag = x_i - x_j; swapping roles gives C_ba(-lag) = C_ab(lag).
        self.pair(a, b).between(lattice, xi, xj)
    }
}

/// Distinct kernel parameter sets in first-seen order, plus each entry's index.
pub fn dedup_params(thetas: &[KernelParams]) -> (Vec<KernelParams>, Vec<usize>) {
    let mut unique: Vec<KernelParams> = Vec::new();
    let labels = thetas
        .iter()
        .map(|t| match unique.iter().position(|u| u == t) {
            Some(i) => i,
            None => {
                unique.push(t.clone());
                unique.len() - 1
            }
        })
        .collect();
    (unique, labels)
}

/// Observation covariance `K(x_i, x_j; theta_i, theta_j) + sigma2 1(i = j)`
/// for sites given as flat lattice indices.
pub fn assemble_covariance(
    lattice: &LatticeModel,
    sites: &[usize],
    thetas: &[KernelParams],
    sigma2: f64,
) -> Result<DMatrix<f64>> {
    if sites.len() != thetas.len() {
        return Err(MsgpError::LengthMismatch {
            expected: sites.len(),
            actual: thetas.len(),
        });
    }
    let (unique, labels) = dedup_params(thetas);
    let tables = unique
        .iter()
        .map(|t| SpectralDensityTable::for_kernel(t, lattice))
        .collect::<Result<Vec<_>>>()?;
    let lags = LagTables::new(lattice, &tables)?;
    assemble_labeled(lattice, &lags, sites, &labels, sigma2)
}

/// Like [`assemble_covariance`] with precomputed pair tables and a component
/// label per site.
pub fn assemble_labeled(
    lattice: &LatticeModel,
    lags: &LagTables,
    sites: &[usize],
    labels: &[usize],
    sigma2: f64,
) -> Result<DMatrix<f64>> {
    let n = sites.len();
    if labels.len() != n {
        return Err(MsgpError::LengthMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    for &s in sites {
        if s >= lattice.len() {
            return Err(MsgpError::SiteOutOfLattice {
                site: vec![s as i64],
                sizes: lattice.sizes().to_vec(),
            });
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = lags.covariance(lattice, sites[i], labels[i], sites[j], labels[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m[(i, i)] += sigma2;
    }
    Ok(m)
}

/// Largest imaginary residue tolerated when synthesizing a real field.
pub const REALNESS_TOLERANCE: f64 = 1e-10;

/// Draw `y(x) = mu(x) + f(x; theta_x) + eps` at every lattice site, with all
/// component fields built from one shared set of spectral coefficients.
pub fn simulate_field<R: Rng + ?Sized>(
    lattice: &LatticeModel,
    thetas: &[KernelParams],
    mu: &[f64],
    sigma2: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let sites: Vec<usize> = (0..lattice.len()).collect();
    simulate_sites(lattice, &sites, thetas, mu, sigma2, rng)
}

/// [`simulate_field`] restricted to a subset of sites (flat indices).
pub fn simulate_sites<R: Rng + ?Sized>(
    lattice: &LatticeModel,
    sites: &[usize],
    thetas: &[KernelParams],
    mu: &[f64],
    sigma2: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    for len in [thetas.len(), mu.len()] {
        if len != sites.len() {
            return Err(MsgpError::LengthMismatch {
                expected: sites.len(),
                actual: len,
            });
        }
    }
    let (unique, labels) = dedup_params(thetas);
    let tables = unique
        .iter()
        .map(|t| SpectralDensityTable::for_kernel(t, lattice))
        .collect::<Result<Vec<_>>>()?;
    let coeffs = SpectralCoefficients::standard(lattice, rng);
    simulate_with(lattice, &tables, &labels, sites, &coeffs, mu, sigma2, rng)
}

/// Synthesize from given coefficients and tables; `labels[i]` selects the
/// table used at `sites[i]`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_with<R: Rng + ?Sized>(
    lattice: &LatticeModel,
    tables: &[SpectralDensityTable],
    labels: &[usize],
    sites: &[usize],
    coeffs: &SpectralCoefficients,
    mu: &[f64],
    sigma2: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let full = coeffs.to_full(lattice);
    let mut fields = Vec::with_capacity(tables.len());
    for t in tables {
        lattice.check_table(t)?;
        let (field, residue) = lattice.synthesize(t.sqrt_values(), &full);
        assert!(
            residue < REALNESS_TOLERANCE * (1.0 + t.lattice_variance().sqrt()),
            "synthesized field has imaginary residue {residue:e}"
        );
        fields.push(field);
    }
    let sd = sigma2.sqrt();
    let out = sites
        .iter()
        .zip(labels)
        .zip(mu)
        .map(|((&s, &k), &m)| {
            let eps: f64 = if sd > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            } else {
                0.0
            };
            m + fields[k][s] + eps
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{se_covariance, SeParams};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn se(phi: f64, rho: f64, d: usize) -> KernelParams {
        KernelParams::SquaredExponential(SeParams::isotropic(phi, rho, d).unwrap())
    }

    #[test]
    fn lattice_construction() {
        let l = build_lattice(&[4]).unwrap();
        assert_eq!(l.len(), 4);
        for t in 0..4 {
            let w = l.frequency(t)[0];
            assert!(w != 0.0 && w.abs() < PI);
        }
        assert_eq!(build_lattice(&[4, 4]).unwrap().len(), 16);
        let err = build_lattice(&[3]).unwrap_err();
        assert!(err.to_string().contains("lattice sizes must be even"));
        assert!(build_lattice(&[0]).is_err());
        assert!(build_lattice(&[]).is_err());
    }

    #[test]
    fn frequency_grid_is_symmetric() {
        let l = build_lattice(&[6, 4]).unwrap();
        for i in 0..l.len() {
            let w = l.frequency(i);
            let wm = l.frequency(l.mirror(i));
            for (a, b) in w.iter().zip(&wm) {
                assert_relative_eq!(*a, -*b, epsilon = 1e-15);
            }
        }
        assert_eq!(l.canonical_indices().len(), l.len() / 2);
        for &c in l.canonical_indices() {
            assert!(l.frequency(c)[0] > 0.0);
        }
    }

    fn dense_q(l: &LatticeModel) -> Vec<Vec<Complex64>> {
        let n = l.len();
        (0..n)
            .map(|x| {
                let site = l.site(x);
                (0..n)
                    .map(|w| {
                        let f = l.frequency(w);
                        let ph: f64 = site.iter().zip(&f).map(|(&s, f)| s as f64 * f).sum();
                        Complex64::from_polar(1.0 / (n as f64).sqrt(), ph)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn fft_matches_dense_matrix() {
        let l = build_lattice(&[4, 6]).unwrap();
        let q = dense_q(&l);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<Complex64> = (0..l.len())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let fwd = l.dft_forward(&v).unwrap();
        let inv = l.dft_inverse(&v).unwrap();
        for w in 0..l.len() {
            let dense_fwd: Complex64 = (0..l.len()).map(|x| q[x][w].conj() * v[x]).sum();
            assert!((dense_fwd - fwd[w]).norm() < 1e-12);
        }
        for x in 0..l.len() {
            let dense_inv: Complex64 = (0..l.len()).map(|w| q[x][w] * v[w]).sum();
            assert!((dense_inv - inv[x]).norm() < 1e-12);
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let l = build_lattice(&[8, 4]).unwrap();
        let mut v = vec![Complex64::new(0.0, 0.0); l.len()];
        v[0] = Complex64::new(1.0, 0.0);
        let out = l.dft_forward(&v).unwrap();
        for c in out {
            assert_relative_eq!(c.norm(), 1.0 / (l.len() as f64).sqrt(), epsilon = 1e-14);
        }
    }

    #[test]
    fn unitary_round_trip_and_parseval() {
        let l = build_lattice(&[8, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let v: Vec<Complex64> = (0..l.len())
                .map(|_| Complex64::new(rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() - 0.5))
                .collect();
            let f = l.dft_forward(&v).unwrap();
            let back = l.dft_inverse(&f).unwrap();
            let err: f64 = v.iter().zip(&back).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            assert!(err < 1e-12);
            let n1: f64 = v.iter().map(|c| c.norm_sqr()).sum();
            let n2: f64 = f.iter().map(|c| c.norm_sqr()).sum();
            assert_relative_eq!(n1, n2, max_relative = 1e-12);
        }
        assert!(l.dft_forward(&[Complex64::new(1.0, 0.0)]).is_err());
    }

    #[test]
    fn stationary_recovery_at_zero_lag() {
        let l = build_lattice(&[128]).unwrap();
        for rho in [3.0, 5.0, 10.0] {
            let k = se(1.7, rho, 1);
            let g = SpectralDensityTable::for_kernel(&k, &l).unwrap();
            let c = cross_covariance(&l, &[10], &[10], &g, &g).unwrap();
            assert_relative_eq!(c, 1.7, max_relative = 1e-12);
            for lag in [1usize, 4, 9, 20] {
                let c = cross_covariance(&l, &[10 + lag], &[10], &g, &g).unwrap();
                let truth = se_covariance(&[lag as f64], &SeParams::isotropic(1.7, rho, 1).unwrap()).unwrap();
                assert!((c - truth).abs() <= 1e-3 * truth.max(1e-6 * 1.7), "rho={rho} lag={lag}");
            }
        }
    }

    #[test]
    fn cross_covariance_cauchy_schwarz() {
        let l = build_lattice(&[16, 8]).unwrap();
        let ga = SpectralDensityTable::for_kernel(&se(2.0, 1.5, 2), &l).unwrap();
        let gb = SpectralDensityTable::for_kernel(&se(0.5, 4.0, 2), &l).unwrap();
        for (x, y) in [([0, 0], [3, 2]), ([5, 1], [5, 1]), ([15, 7], [0, 0])] {
            let c = cross_covariance(&l, &x, &y, &ga, &gb).unwrap();
            let va = cross_covariance(&l, &x, &x, &ga, &ga).unwrap();
            let vb = cross_covariance(&l, &y, &y, &gb, &gb).unwrap();
            assert!(c.abs() <= (va * vb).sqrt() + 1e-12);
        }
        let other = build_lattice(&[8, 8]).unwrap();
        let gc = SpectralDensityTable::for_kernel(&se(1.0, 1.0, 2), &other).unwrap();
        assert!(matches!(
            cross_covariance(&l, &[0, 0], &[1, 1], &ga, &gc),
            Err(MsgpError::LatticeMismatch)
        ));
    }

    #[test]
    fn lag_tables_match_direct_sum() {
        let l = build_lattice(&[8, 6]).unwrap();
        let tables = vec![
            SpectralDensityTable::for_kernel(&se(2.0, 1.0, 2), &l).unwrap(),
            SpectralDensityTable::for_kernel(&se(1.0, 2.5, 2), &l).unwrap(),
            SpectralDensityTable::for_kernel(&se(3.0, 0.7, 2), &l).unwrap(),
        ];
        let lags = LagTables::new(&l, &tables).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                for xi in [0usize, 7, 13, 47] {
                    for xj in [0usize, 5, 30, 46] {
                        let direct = cross_covariance(&l, &l.site(xi), &l.site(xj), &tables[a], &tables[b]).unwrap();
                        let fast = lags.covariance(&l, xi, a, xj, b);
                        assert!((direct - fast).abs() < 1e-12, "a={a} b={b} xi={xi} xj={xj}");
                    }
                }
            }
        }
    }

    #[test]
    fn assemble_single_site_and_symmetry() {
        let l = build_lattice(&[16]).unwrap();
        let m = assemble_covariance(&l, &[3], &[se(2.0, 2.0, 1)], 0.3).unwrap();
        assert_relative_eq!(m[(0, 0)], 2.3, max_relative = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sites: Vec<usize> = (0..8).map(|i| i * 2).collect();
        let thetas: Vec<KernelParams> = (0..8)
            .map(|_| se(0.5 + rng.random::<f64>() * 3.0, 0.5 + rng.random::<f64>() * 4.0, 1))
            .collect();
        let m = assemble_covariance(&l, &sites, &thetas, 0.0).unwrap();
        assert_eq!(m, m.transpose());
        let eig = m.clone().symmetric_eigenvalues();
        assert!(eig.min() >= -1e-8, "min eigenvalue {}", eig.min());
    }

    #[test]
    fn degenerate_field_is_mean() {
        let l = build_lattice(&[8]).unwrap();
        let zero = KernelParams::SquaredExponential(SeParams { phi: 0.0, rho: vec![1.0] });
        let mu: Vec<f64> = (0..8).map(|i| i as f64 * 0.5 - 1.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = simulate_field(&l, &vec![zero; 8], &mu, 0.0, &mut rng).unwrap();
        assert_eq!(y, mu);
    }

    #[test]
    fn synthesized_fields_are_real() {
        let l = build_lattice(&[8, 6, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = SpectralDensityTable::for_kernel(&se(3.0, 1.2, 3), &l).unwrap();
        for _ in 0..100 {
            let c = SpectralCoefficients::standard(&l, &mut rng);
            let (_, residue) = l.synthesize(g.sqrt_values(), &c.to_full(&l));
            assert!(residue < 1e-10);
        }
    }

    #[test]
    fn wrapped_lag_is_antiperiodic() {
        let l = build_lattice(&[8]).unwrap();
        let g = SpectralDensityTable::for_kernel(&se(1.0, 1.5, 1), &l).unwrap();
        let t = LagTable::new(&l, &g, &g).unwrap();
        for a in 0..8 {
            for b in 0..8 {
                let direct = cross_covariance(&l, &[a], &[b], &g, &g).unwrap();
                assert!((t.between(&l, a, b) - direct).abs() < 1e-13);
            }
        }
    }
}
