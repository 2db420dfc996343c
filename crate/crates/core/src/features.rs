//! Regression covariates from line attributes.
//!
//! Lengths are log-transformed and voltages standardized, then each is divided
//! by a robust scale so the covariates are dimensionless with spread of order
//! one. The scale is the median absolute deviation median(|z - median(z)|),
//! with no consistency constant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::LineTable;
use crate::stats;

/// median(|z - median(z)|). Errors when the spread is zero (constant or
/// half-constant input), because dividing by it is then undefined.
pub fn mad_scale(z: &[f64]) -> Result<f64> {
    if z.len() < 2 {
        return Err(Error::Invalid(format!(
            "scale needs at least 2 values, got {}",
            z.len()
        )));
    }
    let med = stats::median(z);
    let deviations: Vec<f64> = z.iter().map(|v| (v - med).abs()).collect();
    let scale = stats::median(&deviations);
    if scale <= 0.0 {
        return Err(Error::DegenerateScale(format!(
            "median absolute deviation is zero over {} values",
            z.len()
        )));
    }
    Ok(scale)
}

/// x_L: natural log of lengths divided by the robust scale of the logs.
pub fn transform_lengths(lengths_miles: &[f64]) -> Result<DVector<f64>> {
    if lengths_miles.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Invalid("line lengths must be positive".into()));
    }
    let logs: Vec<f64> = lengths_miles.iter().map(|l| l.ln()).collect();
    let scale = mad_scale(&logs)?;
    Ok(DVector::from_iterator(
        logs.len(),
        logs.iter().map(|v| v / scale),
    ))
}

/// x_V: voltages standardized by their sample SD, then divided by the robust
/// scale of the standardized values. Invariant under rescaling the input.
pub fn transform_voltages(voltages_kv: &[f64]) -> Result<DVector<f64>> {
    if voltages_kv.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Invalid("voltages must be positive".into()));
    }
    let sd = stats::sample_sd(voltages_kv);
    if sd <= 0.0 {
        return Err(Error::DegenerateScale(
            "voltage sample SD is zero (constant voltages)".into(),
        ));
    }
    let u: Vec<f64> = voltages_kv.iter().map(|v| v / sd).collect();
    let scale = mad_scale(&u)?;
    Ok(DVector::from_iterator(u.len(), u.iter().map(|v| v / scale)))
}

/// Covariates for every line in the table, in table order.
#[derive(Debug, Clone)]
pub struct CovariateVector {
    pub x_l: DVector<f64>,
    pub x_v: DVector<f64>,
}

impl CovariateVector {
    pub fn from_line_table(table: &LineTable) -> Result<Self> {
        Ok(Self {
            x_l: transform_lengths(&table.lengths())?,
            x_v: transform_voltages(&table.voltages())?,
        })
    }

    pub fn len(&self) -> usize {
        self.x_l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_l.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> CovariateVector {
        CovariateVector {
            x_l: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.x_l[i])),
            x_v: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.x_v[i])),
        }
    }
}

/// Binary district-membership matrix; row i marks the districts crossed by
/// line i. Column order is the sorted district universe.
#[derive(Debug, Clone, PartialEq)]
pub struct DistrictFeatures {
    districts: Vec<String>,
    /// Row-major n_lines x n_districts, entries 0/1.
    rows: DMatrix<f64>,
}

impl DistrictFeatures {
    pub fn from_line_table(table: &LineTable) -> Result<Self> {
        let mut districts: Vec<String> = table
            .lines()
            .iter()
            .flat_map(|l| l.districts.iter().cloned())
            .collect();
        districts.sort();
        districts.dedup();
        if districts.is_empty() {
            return Err(Error::Invalid("no districts in line table".into()));
        }
        let find = |d: &str| districts.binary_search_by(|x| x.as_str().cmp(d)).unwrap();
        let mut rows = DMatrix::zeros(table.len(), districts.len());
        for (i, l) in table.lines().iter().enumerate() {
            for d in &l.districts {
                rows[(i, find(d))] = 1.0;
            }
        }
        Ok(Self { districts, rows })
    }

    pub fn n_lines(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_districts(&self) -> usize {
        self.districts.len()
    }

    pub fn districts(&self) -> &[String] {
        &self.districts
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// Squared Euclidean distance between two membership rows; for binary
    /// rows this counts the differing districts.
    pub fn sq_distance(&self, i: usize, j: usize) -> f64 {
        let mut s = 0.0;
        for k in 0..self.n_districts() {
            let d = self.rows[(i, k)] - self.rows[(j, k)];
            s += d * d;
        }
        s
    }

    pub fn select(&self, idx: &[usize]) -> DistrictFeatures {
        let mut rows = DMatrix::zeros(idx.len(), self.n_districts());
        for (r, &i) in idx.iter().enumerate() {
            for k in 0..self.n_districts() {
                rows[(r, k)] = self.rows[(i, k)];
            }
        }
        DistrictFeatures {
            districts: self.districts.clone(),
            rows,
        }
    }
}

/// Pearson correlations between raw and transformed covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub raw: f64,
    pub transformed: f64,
}

pub fn correlation_report(
    lengths: &[f64],
    voltages: &[f64],
    x_l: &DVector<f64>,
    x_v: &DVector<f64>,
) -> CorrelationReport {
    CorrelationReport {
        raw: stats::pearson_correlation(lengths, voltages),
        transformed: stats::pearson_correlation(x_l.as_slice(), x_v.as_slice()),
    }
}
