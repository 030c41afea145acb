//! Row-stochastic masking operator `A_λ` and its application `Z* = A_λ Z`.
//!
//! Releasing the operator together with the kernel and `λ` lets anyone with
//! `A_λ⁻¹` reconstruct the original data; exported operators are for audit only.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::{aggregate, GridSpec, Location, Record, SpatialDataset};
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, WeightFunction};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorOptions {
    /// Weights below `sparsify · row max` are dropped before normalizing. 0 keeps all.
    pub sparsify: f64,
}

impl Default for OperatorOptions {
    fn default() -> Self {
        OperatorOptions { sparsify: 0.0 }
    }
}

fn fingerprint(locs: &[Location]) -> u64 {
    let mut h = DefaultHasher::new();
    locs.len().hash(&mut h);
    for l in locs {
        l.s1.to_bits().hash(&mut h);
        l.s2.to_bits().hash(&mut h);
    }
    h.finish()
}

#[derive(Debug, Clone)]
pub struct MaskingOperator {
    matrix: DMatrix<f64>,
    kernel: Option<KernelFamily>,
    description: String,
    lambda: f64,
    fingerprint: u64,
}

pub fn build_operator(locs: &[Location], kernel: &KernelFamily, lambda: f64) -> Result<MaskingOperator> {
    build_operator_opts(locs, kernel, lambda, OperatorOptions::default())
}

pub fn build_operator_opts(
    locs: &[Location],
    kernel: &KernelFamily,
    lambda: f64,
    opts: OperatorOptions,
) -> Result<MaskingOperator> {
    kernel.validate()?;
    let mut op = build_operator_with(locs, kernel, lambda, opts)?;
    op.kernel = Some(*kernel);
    Ok(op)
}

/// Builds `A[i][j] = W(s_i, s_j) / Σ_m W(s_i, s_m)` for any weight function.
pub fn build_operator_with(
    locs: &[Location],
    weight: &dyn WeightFunction,
    lambda: f64,
    opts: OperatorOptions,
) -> Result<MaskingOperator> {
    if locs.is_empty() {
        return Err(Error::invalid("operator needs at least one location"));
    }
    if !(lambda >= 0.0) || lambda.is_infinite() {
        return Err(Error::Domain(format!("smoothness λ must be finite and ≥ 0, got {lambda}")));
    }
    if !(opts.sparsify >= 0.0 && opts.sparsify < 1.0) {
        return Err(Error::invalid("sparsify threshold must be in [0, 1)"));
    }
    let n = locs.len();
    let rows: Vec<Vec<f64>> = locs
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mut row: Vec<f64> = locs.iter().map(|s| weight.weight(u, s, lambda)).collect();
            if opts.sparsify > 0.0 {
                let max = row.iter().cloned().fold(0.0, f64::max);
                let cut = opts.sparsify * max;
                row.iter_mut().filter(|w| **w < cut).for_each(|w| *w = 0.0);
            }
            let total: f64 = row.iter().sum();
            if !(total > 0.0 && total.is_finite()) {
                return Err(Error::ZeroWeightRow { row: i });
            }
            row.iter_mut().for_each(|w| *w /= total);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(MaskingOperator {
        matrix: DMatrix::from_row_slice(n, n, &flat),
        kernel: None,
        description: weight.describe(),
        lambda,
        fingerprint: fingerprint(locs),
    })
}

impl MaskingOperator {
    /// Wraps an explicit row-stochastic matrix.
    pub fn from_matrix(locs: &[Location], matrix: DMatrix<f64>, description: impl Into<String>) -> Result<Self> {
        let n = locs.len();
        if matrix.nrows() != n || matrix.ncols() != n || n == 0 {
            return Err(Error::invalid(format!(
                "operator must be {n}×{n}, got {}×{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        for i in 0..n {
            let row = matrix.row(i);
            if row.iter().any(|v| !(*v >= 0.0)) || (row.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("row {i} is not a probability vector")));
            }
        }
        Ok(MaskingOperator {
            matrix,
            kernel: None,
            description: description.into(),
            lambda: f64::NAN,
            fingerprint: fingerprint(locs),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn kernel(&self) -> Option<&KernelFamily> {
        self.kernel.as_ref()
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matches(&self, locs: &[Location]) -> bool {
        locs.len() == self.dim() && fingerprint(locs) == self.fingerprint
    }

    /// `A·v` with a fixed left-to-right summation per row.
    pub fn smooth(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.dim(), "vector length must match the operator");
        (0..self.dim())
            .map(|i| {
                self.matrix
                    .row(i)
                    .iter()
                    .zip(values)
                    .fold(0.0, |acc, (a, v)| acc + a * v)
            })
            .collect()
    }

    /// `A·Y` for a block of column vectors (e.g. simulation replicates).
    pub fn smooth_columns(&self, columns: &DMatrix<f64>) -> DMatrix<f64> {
        &self.matrix * columns
    }

    pub fn smooth_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.smooth(v.as_slice()))
    }

    /// Writes the matrix as headerless CSV, one operator row per line.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for i in 0..self.dim() {
            w.write_record(self.matrix.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<operator csv>", e))?;
        Ok(())
    }
}

/// Masked data plus the masking provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedDataset {
    pub data: SpatialDataset,
    pub kernel: String,
    pub lambda: f64,
}

impl MaskedDataset {
    pub fn provenance(&self) -> String {
        format!("masked kernel={} lambda={}", self.kernel, self.lambda)
    }
}

/// Smooths the outcome and every regressor with the same operator; counts are left as is.
pub fn apply(op: &MaskingOperator, data: &SpatialDataset) -> Result<MaskedDataset> {
    if !op.matches(&data.locations()) {
        return Err(Error::FingerprintMismatch);
    }
    let y = op.smooth(&data.outcome());
    let x_cols: Vec<Vec<f64>> = (0..data.regressor_names().len())
        .map(|k| op.smooth(&data.regressor(k)))
        .collect();
    Ok(MaskedDataset {
        data: data.with_values(&y, &x_cols),
        kernel: op.description.clone(),
        lambda: op.lambda,
    })
}

/// Aggregates to grid cells, then smooths cell rates `Y₊ⱼ/nⱼ` and mean regressors
/// across cell centroids; the released outcome is the smoothed rate times `nⱼ`.
pub fn compose_two_step(
    data: &SpatialDataset,
    grid: &GridSpec,
    kernel: &KernelFamily,
    lambda: f64,
) -> Result<MaskedDataset> {
    let agg = aggregate(data, grid)?;
    let centroids = agg.centroids();
    let op = build_operator(&centroids, kernel, lambda)?;
    let rates: Vec<f64> = agg.cells.iter().map(|c| c.y_plus / c.n as f64).collect();
    let smoothed_rates = op.smooth(&rates);
    let x_cols: Vec<Vec<f64>> = (0..agg.regressors.len())
        .map(|k| op.smooth(&agg.cells.iter().map(|c| c.x_bar[k]).collect::<Vec<_>>()))
        .collect();
    let records = agg
        .cells
        .iter()
        .enumerate()
        .map(|(j, c)| Record {
            id: format!("cell_{}", c.index),
            loc: centroids[j],
            x: x_cols.iter().map(|col| col[j]).collect(),
            y: smoothed_rates[j] * c.n as f64,
            n: Some(c.n as f64),
        })
        .collect();
    Ok(MaskedDataset {
        data: SpatialDataset::new(agg.regressors.clone(), data.outcome_name(), records)?,
        kernel: op.description.clone(),
        lambda,
    })
}
