//! Observations and their placement on the integer lattice.

use serde::{Deserialize, Serialize};

use crate::error::{MsgpError, Result};
use crate::spectral::LatticeModel;

/// Raw observations: one coordinate row and one outcome per site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub coords: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Generating component per row, when known (simulated data).
    pub true_component: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(coords: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if coords.len() != y.len() {
            return Err(MsgpError::LengthMismatch {
                expected: coords.len(),
                actual: y.len(),
            });
        }
        let d = coords.first().map_or(0, |c| c.len());
        if let Some(bad) = coords.iter().find(|c| c.len() != d) {
            return Err(MsgpError::DimensionMismatch {
                expected: d,
                actual: bad.len(),
            });
        }
        Ok(Dataset {
            coords,
            y,
            true_component: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.coords.first().map_or(0, |c| c.len())
    }

    /// Rows selected by `keep`.
    pub fn subset(&self, keep: &[usize]) -> Dataset {
        Dataset {
            coords: keep.iter().map(|&i| self.coords[i].clone()).collect(),
            y: keep.iter().map(|&i| self.y[i]).collect(),
            true_component: self
                .true_component
                .as_ref()
                .map(|t| keep.iter().map(|&i| t[i]).collect()),
        }
    }
}

/// What to do when two rows land on the same lattice site.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollisionMode {
    #[default]
    Error,
    Average,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingOptions {
    /// Coordinate distance of one lattice step per axis; inferred from the
    /// smallest positive gap between distinct coordinates when absent.
    pub spacing: Option<Vec<f64>>,
    /// Lattice sizes; chosen from the data extent and `padding` when absent.
    pub sizes: Option<Vec<usize>>,
    /// Lattice size as a multiple of the data extent. Values of at least 2
    /// keep every pairwise lag below half the lattice, away from the
    /// antiperiodic wrap.
    pub padding: f64,
    pub collision: CollisionMode,
    /// Extra coordinates (e.g. prediction targets) the lattice must cover.
    #[serde(default)]
    pub cover: Vec<Vec<f64>>,
}

impl Default for MappingOptions {
    fn default() -> Self {
        MappingOptions {
            spacing: None,
            sizes: None,
            padding: 2.0,
            collision: CollisionMode::Error,
            cover: Vec::new(),
        }
    }
}

/// Affine map from coordinates to lattice sites: `site = (x - origin) / spacing`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeMapping {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub sizes: Vec<usize>,
}

/// Relative slack when snapping a coordinate to the nearest site.
const SNAP_TOLERANCE: f64 = 1e-6;

impl LatticeMapping {
    pub fn site_coords(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.origin.len() {
            return Err(MsgpError::DimensionMismatch {
                expected: self.origin.len(),
                actual: x.len(),
            });
        }
        let raw: Vec<f64> = x
            .iter()
            .zip(&self.origin)
            .zip(&self.spacing)
            .map(|((x, o), s)| (x - o) / s)
            .collect();
        let rounded: Vec<i64> = raw.iter().map(|r| r.round() as i64).collect();
        let inside = rounded
            .iter()
            .zip(&self.sizes)
            .all(|(&r, &m)| r >= 0 && (r as usize) < m);
        if !inside || raw.iter().any(|r| !r.is_finite()) {
            return Err(MsgpError::SiteOutOfLattice {
                site: rounded,
                sizes: self.sizes.clone(),
            });
        }
        for (r, q) in raw.iter().zip(&rounded) {
            if (r - *q as f64).abs() > 0.5 - SNAP_TOLERANCE {
                log::debug!("coordinate {x:?} lies midway between lattice sites");
            }
        }
        Ok(rounded.into_iter().map(|r| r as usize).collect())
    }

    pub fn flat_site(&self, x: &[f64]) -> Result<usize> {
        let c = self.site_coords(x)?;
        Ok(c.iter().zip(&self.sizes).fold(0, |acc, (i, m)| acc * m + i))
    }

    /// Coordinates of a lattice site.
    pub fn coordinate(&self, site: &[usize]) -> Vec<f64> {
        site.iter()
            .zip(&self.origin)
            .zip(&self.spacing)
            .map(|((&s, o), sp)| o + s as f64 * sp)
            .collect()
    }
}

/// Observations placed on a lattice, one per occupied site.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatticeData {
    pub lattice: LatticeModel,
    pub mapping: LatticeMapping,
    /// Flat site index per observation.
    pub sites: Vec<usize>,
    pub y: Vec<f64>,
    /// Original coordinates per observation (the first row when averaged).
    pub coords: Vec<Vec<f64>>,
}

impl LatticeData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Whether each lattice site carries an observation, and which.
    pub fn site_owner(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.lattice.len()];
        for (i, &s) in self.sites.iter().enumerate() {
            owner[s] = Some(i);
        }
        owner
    }
}

fn infer_spacing(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let span = values.last().copied().unwrap_or(0.0) - values.first().copied().unwrap_or(0.0);
    let tol = 1e-9 * span.abs().max(1.0);
    let gap = values
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&g| g > tol)
        .fold(f64::INFINITY, f64::min);
    if gap.is_finite() {
        gap
    } else {
        1.0
    }
}

/// Choose a lattice for `data` and place every row on it.
pub fn map_to_lattice(data: &Dataset, options: &MappingOptions) -> Result<LatticeData> {
    let d = data.dims();
    if data.is_empty() || d == 0 {
        return Err(MsgpError::InvalidConfig("dataset has no rows".into()));
    }
    if !(options.padding >= 1.0) {
        return Err(MsgpError::InvalidConfig(format!(
            "lattice padding must be at least 1, got {}",
            options.padding
        )));
    }
    if let Some(bad) = options.cover.iter().find(|c| c.len() != d) {
        return Err(MsgpError::DimensionMismatch {
            expected: d,
            actual: bad.len(),
        });
    }
    let all = || data.coords.iter().chain(&options.cover);
    let origin: Vec<f64> = (0..d)
        .map(|l| all().map(|c| c[l]).fold(f64::INFINITY, f64::min))
        .collect();
    let spacing = match &options.spacing {
        Some(s) => {
            if s.len() != d {
                return Err(MsgpError::DimensionMismatch {
                    expected: d,
                    actual: s.len(),
                });
            }
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(MsgpError::InvalidConfig("lattice spacing must be positive".into()));
            }
            s.clone()
        }
        None => (0..d)
            .map(|l| {
                let mut v: Vec<f64> = all().map(|c| c[l]).collect();
                infer_spacing(&mut v)
            })
            .collect(),
    };
    let sizes = match &options.sizes {
        Some(s) => s.clone(),
        None => (0..d)
            .map(|l| {
                let max = all().map(|c| c[l]).fold(f64::NEG_INFINITY, f64::max);
                let extent = ((max - origin[l]) / spacing[l]).round() as usize + 1;
                let m = (options.padding * extent as f64).ceil() as usize;
                (m + m % 2).max(2)
            })
            .collect(),
    };
    let lattice = LatticeModel::new(&sizes)?;
    let mapping = LatticeMapping {
        origin,
        spacing,
        sizes,
    };

    let mut owner: Vec<Option<usize>> = vec![None; lattice.len()];
    let mut sites = Vec::with_capacity(data.len());
    let mut sums: Vec<f64> = Vec::with_capacity(data.len());
    let mut counts: Vec<usize> = Vec::with_capacity(data.len());
    let mut first_row: Vec<usize> = Vec::with_capacity(data.len());
    for (row, (x, &y)) in data.coords.iter().zip(&data.y).enumerate() {
        let flat = mapping.flat_site(x)?;
        match owner[flat] {
            Some(slot) => match options.collision {
                CollisionMode::Error => {
                    if sums[slot] / counts[slot] as f64 != y || counts[slot] > 1 {
                        return Err(MsgpError::LatticeCollision {
                            first: first_row[slot],
                            second: row,
                            site: lattice.site(flat),
                        });
                    }
                }
                CollisionMode::Average => {
                    sums[slot] += y;
                    counts[slot] += 1;
                }
            },
            None => {
                owner[flat] = Some(sites.len());
                sites.push(flat);
                sums.push(y);
                counts.push(1);
                first_row.push(row);
            }
        }
    }
    let y = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let coords = first_row.iter().map(|&r| data.coords[r].clone()).collect();
    Ok(LatticeData {
        lattice,
        mapping,
        sites,
        y,
        coords,
    })
}
