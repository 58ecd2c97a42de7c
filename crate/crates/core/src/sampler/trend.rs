//! Polynomial mean `mu(x) = b0 + sum_l b1l x_l + sum_l b2l x_l^2`, fit by least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MsgpError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub degree: usize,
    /// `[b0, b11..b1d, b21..b2d]`, truncated to the degree.
    pub beta: Vec<f64>,
}

impl Trend {
    pub fn zero() -> Self {
        Trend {
            degree: 0,
            beta: vec![0.0],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        basis_row(x, self.degree)
            .iter()
            .zip(&self.beta)
            .map(|(b, c)| b * c)
            .sum()
    }
}

fn basis_row(x: &[f64], degree: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    if degree >= 1 {
        row.extend_from_slice(x);
    }
    if degree >= 2 {
        row.extend(x.iter().map(|v| v * v));
    }
    row
}

/// Least-squares trend; returns the fit and the residuals `y - mu(x)`.
pub fn fit_trend(coords: &[Vec<f64>], y: &[f64], degree: usize) -> Result<(Trend, Vec<f64>)> {
    if degree > 2 {
        return Err(MsgpError::InvalidConfig(format!(
            "trend degree must be 0, 1 or 2, got {degree}"
        )));
    }
    if coords.len() != y.len() {
        return Err(MsgpError::LengthMismatch {
            expected: coords.len(),
            actual: y.len(),
        });
    }
    let n = y.len();
    let d = coords.first().map_or(0, |c| c.len());
    let p = 1 + degree * d;
    if n < p {
        return Err(MsgpError::RankDeficient { rank: n, columns: p });
    }
    let x = DMatrix::from_fn(n, p, |i, j| basis_row(&coords[i], degree)[j]);
    // Column scaling keeps the singular-value rank test meaningful when
    // coordinates are large.
    let scales: Vec<f64> = (0..p)
        .map(|j| {
            let norm = x.column(j).norm();
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        })
        .collect();
    let mut xs = x.clone();
    for (j, s) in scales.iter().enumerate() {
        xs.column_mut(j).unscale_mut(*s);
    }
    let svd = xs.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax)
        .count();
    if rank < p {
        return Err(MsgpError::RankDeficient { rank, columns: p });
    }
    let yv = DVector::from_column_slice(y);
    let b = svd
        .solve(&yv, 1e-12 * smax)
        .map_err(|e| MsgpError::InvalidConfig(e.to_string()))?;
    let beta: Vec<f64> = b.iter().zip(&scales).map(|(b, s)| b / s).collect();
    let fitted = &x * DVector::from_column_slice(&beta);
    let residuals = yv.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
    Ok((Trend { degree, beta }, residuals))
}
