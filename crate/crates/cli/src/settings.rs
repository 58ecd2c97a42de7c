//! Run configuration: a flat TOML file, then command-line overrides, then
//! validation. Nothing is computed from an unvalidated configuration.

use std::path::Path;

use clap::{Args, ValueEnum};
use msgp::dataset::{CollisionMode, MappingOptions};
use msgp::kernels::KernelFamily;
use msgp::predict::Model;
use msgp::sampler::{Coupling, NoiseShape, PriorBounds, SamplerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// One-dimensional process with a short-range and a long-range half.
    TwoRegion,
    /// Locally squared-exponential surface on (0, 100)^2.
    Pintore,
    /// Space-time cube with two non-separable components.
    StCube,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RhoMapKind {
    Smooth,
    ThreeLevel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKey {
    Se,
    St,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseShapeKey {
    Augmented,
    Observed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionKey {
    Error,
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKey {
    Msgp,
    Igp,
}

/// Every setting with its default. Field names double as TOML keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,

    // simulation
    pub scenario: Scenario,
    /// Pintore grid, `NXxNY` (default 50x50).
    pub grid: String,
    /// Cube size, `NXxNYxNT`.
    pub dims: String,
    /// Two-region length and split point.
    pub n: usize,
    pub split: usize,
    /// Noise variance of the generators.
    pub sigma2: f64,
    /// Two-region variance and the two ranges (3 and 12: short vs long).
    pub region_phi: f64,
    pub rho_left: f64,
    pub rho_right: f64,
    /// Draw the two regions independently instead of from shared coefficients.
    pub zero_cross: bool,
    pub pintore_phi: f64,
    pub rho_map: RhoMapKind,
    /// Range values of the three-level map, in coordinate units.
    pub levels: Vec<f64>,

    // model and sampler
    pub kernel: KernelKey,
    /// Truncation level of the Dirichlet mixture.
    pub k0: usize,
    /// Dirichlet concentration.
    pub alpha: f64,
    /// Sweeps per chain; the first half is burn-in.
    pub iters: usize,
    pub chains: usize,
    pub adapt_window: usize,
    pub initial_step: f64,
    pub noise_shape: NoiseShapeKey,
    pub phi_bounds: Vec<f64>,
    pub rho_bounds: Vec<f64>,
    pub c_bounds: Vec<f64>,
    /// Occupancy fraction above which a component is reported as effective.
    pub threshold: f64,
    /// Polynomial trend degree: 0 constant, 1 linear, 2 quadratic.
    pub trend_degree: usize,
    /// Lattice size as a multiple of the data extent.
    pub padding: f64,
    pub collision: CollisionKey,

    // prediction
    pub model: ModelKey,
    pub thin: usize,
    /// Held-out windows on the first coordinate, `from:to,...` (open intervals).
    pub holdout: String,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            scenario: Scenario::TwoRegion,
            grid: "50x50".into(),
            dims: "16x16x8".into(),
            n: 100,
            split: 50,
            sigma2: 0.25,
            region_phi: 4.0,
            rho_left: 3.0,
            rho_right: 12.0,
            zero_cross: false,
            pintore_phi: 1.0,
            rho_map: RhoMapKind::Smooth,
            levels: vec![2.5, 5.0, 10.0],
            kernel: KernelKey::Se,
            k0: 20,
            alpha: 0.5,
            iters: 4000,
            chains: 1,
            adapt_window: 50,
            initial_step: 0.1,
            noise_shape: NoiseShapeKey::Augmented,
            phi_bounds: vec![0.1, 100.0],
            rho_bounds: vec![0.1, 100.0],
            c_bounds: vec![1.0, 1e5],
            threshold: 0.02,
            trend_degree: 0,
            padding: 2.0,
            collision: CollisionKey::Error,
            model: ModelKey::Msgp,
            thin: 1,
            holdout: "10:30,60:80,40:60".into(),
        }
    }
}

/// Command-line overrides; each replaces the matching configuration key.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub scenario: Option<Scenario>,
    #[arg(long, global = true)]
    pub grid: Option<String>,
    #[arg(long, global = true)]
    pub dims: Option<String>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub split: Option<usize>,
    #[arg(long, global = true)]
    pub sigma2: Option<f64>,
    #[arg(long, global = true)]
    pub region_phi: Option<f64>,
    #[arg(long, global = true)]
    pub rho_left: Option<f64>,
    #[arg(long, global = true)]
    pub rho_right: Option<f64>,
    #[arg(long, global = true)]
    pub zero_cross: bool,
    #[arg(long, global = true)]
    pub pintore_phi: Option<f64>,
    #[arg(long, global = true)]
    pub rho_map: Option<RhoMapKind>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub kernel: Option<KernelKey>,
    #[arg(long, global = true)]
    pub k0: Option<usize>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    #[arg(long, global = true)]
    pub adapt_window: Option<usize>,
    #[arg(long, global = true)]
    pub initial_step: Option<f64>,
    #[arg(long, global = true)]
    pub noise_shape: Option<NoiseShapeKey>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub phi_bounds: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub rho_bounds: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub c_bounds: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub trend_degree: Option<usize>,
    #[arg(long, global = true)]
    pub padding: Option<f64>,
    #[arg(long, global = true)]
    pub collision: Option<CollisionKey>,
    #[arg(long, global = true)]
    pub model: Option<ModelKey>,
    #[arg(long, global = true)]
    pub thin: Option<usize>,
    #[arg(long, global = true)]
    pub holdout: Option<String>,
}

macro_rules! apply {
    ($s:ident, $o:ident, $($f:ident),*) => {
        $(if let Some(v) = $o.$f.clone() { $s.$f = v; })*
    };
}

impl Settings {
    /// Defaults, then the configuration file, then flags; validated.
    pub fn resolve(overrides: &Overrides) -> CliResult<Self> {
        let mut s = match &overrides.config {
            Some(path) => Self::from_file(path)?,
            None => Settings::default(),
        };
        let o = overrides;
        apply!(
            s, o, seed, scenario, grid, dims, n, split, sigma2, region_phi, rho_left, rho_right, pintore_phi,
            rho_map, levels, kernel, k0, alpha, iters, chains, adapt_window, initial_step, noise_shape, phi_bounds,
            rho_bounds, c_bounds, threshold, trend_degree, padding, collision, model, thin, holdout
        );
        if o.zero_cross {
            s.zero_cross = true;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        parse_sizes(&self.grid, 2, "grid")?;
        parse_sizes(&self.dims, 3, "dims")?;
        parse_windows(&self.holdout)?;
        if self.n == 0 || self.split > self.n {
            return bad(format!("need n > 0 and split <= n, got n = {}, split = {}", self.n, self.split));
        }
        for (name, v) in [
            ("region_phi", self.region_phi),
            ("rho_left", self.rho_left),
            ("rho_right", self.rho_right),
            ("pintore_phi", self.pintore_phi),
            ("alpha", self.alpha),
            ("initial_step", self.initial_step),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return bad(format!("sigma2 must be non-negative, got {}", self.sigma2));
        }
        if self.levels.len() != 3 || self.levels.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad(format!("levels must be three positive values, got {:?}", self.levels));
        }
        for (name, b) in [("phi_bounds", &self.phi_bounds), ("rho_bounds", &self.rho_bounds), ("c_bounds", &self.c_bounds)] {
            if b.len() != 2 || !(b[0] > 0.0 && b[0] < b[1] && b[1].is_finite()) {
                return bad(format!("{name} must be two values 0 < lo < hi, got {b:?}"));
            }
        }
        for (name, v) in [("k0", self.k0), ("chains", self.chains), ("adapt_window", self.adapt_window), ("thin", self.thin)] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.iters < 2 {
            return bad(format!("iters must be at least 2, got {}", self.iters));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [0, 1), got {}", self.threshold));
        }
        if self.trend_degree > 2 {
            return bad(format!("trend_degree must be 0, 1 or 2, got {}", self.trend_degree));
        }
        if !(self.padding >= 1.0 && self.padding.is_finite()) {
            return bad(format!("padding must be at least 1, got {}", self.padding));
        }
        Ok(())
    }

    pub fn family(&self) -> KernelFamily {
        match self.kernel {
            KernelKey::Se => KernelFamily::SquaredExponential,
            KernelKey::St => KernelFamily::SpaceTimeNonSeparable,
        }
    }

    pub fn sampler_config(&self, seed: u64, coupling: Coupling) -> SamplerConfig {
        SamplerConfig {
            family: self.family(),
            k0: self.k0,
            alpha: self.alpha,
            iters: self.iters,
            seed,
            bounds: PriorBounds {
                phi: (self.phi_bounds[0], self.phi_bounds[1]),
                rho: (self.rho_bounds[0], self.rho_bounds[1]),
                interaction: (self.c_bounds[0], self.c_bounds[1]),
            },
            adapt_window: self.adapt_window,
            coupling,
            noise_shape: match self.noise_shape {
                NoiseShapeKey::Augmented => NoiseShape::Augmented,
                NoiseShapeKey::Observed => NoiseShape::Observed,
            },
            initial_step: self.initial_step,
            effective_threshold: self.threshold,
        }
    }

    pub fn mapping(&self, cover: Vec<Vec<f64>>) -> MappingOptions {
        MappingOptions {
            padding: self.padding,
            collision: match self.collision {
                CollisionKey::Error => CollisionMode::Error,
                CollisionKey::Average => CollisionMode::Average,
            },
            cover,
            ..Default::default()
        }
    }

    pub fn prediction_model(&self) -> Model {
        match self.model {
            ModelKey::Msgp => Model::Msgp,
            ModelKey::Igp => Model::Igp,
        }
    }
}

/// `"50x50"` -> `[50, 50]`.
pub fn parse_sizes(text: &str, count: usize, name: &str) -> CliResult<Vec<usize>> {
    let parts: Vec<usize> = text
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Config(format!("{name} must look like {}, got `{text}`", vec!["N"; count].join("x"))))?;
    if parts.len() != count || parts.contains(&0) {
        return Err(CliError::Config(format!(
            "{name} needs {count} positive sizes separated by `x`, got `{text}`"
        )));
    }
    Ok(parts)
}

/// `"10:30,60:80"` -> `[(10, 30), (60, 80)]`.
pub fn parse_windows(text: &str) -> CliResult<Vec<(f64, f64)>> {
    text.split(',')
        .map(|w| {
            let (a, b) = w
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("holdout window `{w}` must look like from:to")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("holdout window `{w}` is not numeric")))
            };
            let (a, b) = (parse(a)?, parse(b)?);
            if a < b {
                Ok((a, b))
            } else {
                Err(CliError::Config(format!("holdout window `{w}` must have from < to")))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_windows() {
        assert_eq!(parse_sizes("16x16x8", 3, "dims").unwrap(), vec![16, 16, 8]);
        assert!(parse_sizes("16x0", 2, "grid").is_err());
        assert!(parse_sizes("16x16", 3, "dims").is_err());
        assert_eq!(parse_windows("10:30,40:60").unwrap(), vec![(10.0, 30.0), (40.0, 60.0)]);
        assert!(parse_windows("30:10").is_err());
    }

    #[test]
    fn file_then_flags() {
        let s: Settings = toml::from_str("k0 = 7\nalpha = 1.5\nscenario = \"pintore\"").unwrap();
        assert_eq!((s.k0, s.alpha, s.scenario), (7, 1.5, Scenario::Pintore));
        assert!(toml::from_str::<Settings>("bogus = 1").is_err());
        let o = Overrides {
            k0: Some(3),
            ..Default::default()
        };
        assert_eq!(Settings::resolve(&o).unwrap().k0, 3);
        let o = Overrides {
            iters: Some(1),
            ..Default::default()
        };
        assert!(matches!(Settings::resolve(&o), Err(CliError::Config(_))));
    }
}
