//! First-order bias of GLM coefficients estimated from masked data.
//!
//! With `β(λ)` the root of the expected masked-data score, `β'(0) = -S̄₂⁻¹ S̄₁`,
//! where `S̄₁` collects the λ-derivative of the masking operator at zero (`R₀`)
//! and `S̄₂ = -Σ h'(Xᵢβ) XᵢᵀXᵢ`. The expansion is conditional on the supplied `β`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Location;
use crate::error::{Error, Result};
use crate::glm::{Family, GlmData};
use crate::kernels::WeightFunction;
use crate::masking::{build_operator_with, OperatorOptions};

pub const CAVEAT: &str = "first-order Taylor term only: describes the direction and rate of bias as λ leaves 0 \
and ignores higher-order terms and the remainder, so it may not capture the total bias at a given λ \
(it is exactly 0 for exponential-decay kernels even though the actual bias is not); \
conditional on the supplied coefficients";

/// Default finite-difference step as a fraction of the location scale.
pub const RELATIVE_STEP: f64 = 1e-6;

/// Larger of the two coordinate ranges, or 1 for a single point.
pub fn location_scale(locs: &[Location]) -> f64 {
    let range = |f: fn(&Location) -> f64| {
        let (lo, hi) = locs
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        hi - lo
    };
    let s = range(|l| l.s1).max(range(|l| l.s2));
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// `∂A_λ/∂λ` at `λ = 0`: exactly zero for kernels flat at zero, otherwise the forward
/// difference `(A_h - A_0) / h`.
pub fn r0_matrix(locs: &[Location], weight: &dyn WeightFunction, h_step: f64) -> Result<DMatrix<f64>> {
    if !(h_step > 0.0 && h_step.is_finite()) {
        return Err(Error::Domain(format!("finite-difference step must be > 0, got {h_step}")));
    }
    let n = locs.len();
    if n <= 1 || weight.flat_at_zero() {
        return Ok(DMatrix::zeros(n, n));
    }
    let a0 = build_operator_with(locs, weight, 0.0, OperatorOptions::default())?;
    let ah = build_operator_with(locs, weight, h_step, OperatorOptions::default())?;
    Ok((ah.matrix() - a0.matrix()) / h_step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub beta: Vec<f64>,
    pub beta_prime0: Vec<f64>,
    pub s1bar: Vec<f64>,
    pub s2bar: Vec<Vec<f64>>,
    pub r0_max_abs: f64,
    pub h_step: f64,
    pub caveat: String,
}

impl BiasReport {
    /// `β'(0) · λ`.
    pub fn approx(&self, lambda: f64) -> Vec<f64> {
        self.beta_prime0.iter().map(|b| b * lambda).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BiasOptions {
    /// Absolute step; `None` means `RELATIVE_STEP × location_scale`.
    pub h_step: Option<f64>,
}

pub fn first_order_bias(
    design: &GlmData,
    locs: &[Location],
    weight: &dyn WeightFunction,
    family: Family,
    beta: &DVector<f64>,
    opts: &BiasOptions,
) -> Result<BiasReport> {
    let n = design.len();
    let p = design.x.ncols();
    if locs.len() != n {
        return Err(Error::invalid("one location per design row is required"));
    }
    if beta.len() != p {
        return Err(Error::invalid(format!("β has {} entries but the design has {p} columns", beta.len())));
    }
    if design.offset.is_some() {
        return Err(Error::invalid("first-order bias is defined for designs without offsets"));
    }
    let h_step = opts.h_step.unwrap_or(RELATIVE_STEP * location_scale(locs));
    let r0 = r0_matrix(locs, weight, h_step)?;
    let eta = &design.x * beta;

    // Rows of R₀ sum to zero, so Σₖ R_ik h(η_k) - h'(η_i) Σₖ R_ik η_k can be centred at i;
    // the centred form vanishes term by term for a linear link or a constant design.
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    for i in 0..n {
        let (hi, dhi) = (family.inverse_link(eta[i]), family.inverse_link_derivative(eta[i]));
        let mut c = 0.0;
        for k in 0..n {
            let r = r0[(i, k)];
            if r != 0.0 {
                c += r * ((family.inverse_link(eta[k]) - hi) - dhi * (eta[k] - eta[i]));
            }
        }
        let xi = design.x.row(i).transpose();
        s1.axpy(c, &xi, 1.0);
        s2 -= &xi * xi.transpose() * dhi;
    }

    let beta_prime0 = if s1.iter().all(|v| *v == 0.0) {
        DVector::zeros(p)
    } else {
        let svd = s2.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.iter().any(|s| *s <= smax * 1e-12) {
            return Err(Error::Numerical("S̄₂ is singular".into()));
        }
        -svd.solve(&s1, 0.0).map_err(|e| Error::Numerical(e.to_string()))?
    };
    Ok(BiasReport {
        beta: beta.iter().copied().collect(),
        beta_prime0: beta_prime0.iter().copied().collect(),
        s1bar: s1.iter().copied().collect(),
        s2bar: (0..p).map(|r| s2.row(r).iter().copied().collect()).collect(),
        r0_max_abs: r0.amax(),
        h_step,
        caveat: CAVEAT.into(),
    })
}

/// `f'(β) · β'(0) · λ` for a scalar function of the coefficients.
pub fn function_bias(beta_prime0: &[f64], grad_f: &[f64], lambda: f64) -> Result<f64> {
    if beta_prime0.len() != grad_f.len() {
        return Err(Error::invalid("gradient length does not match the coefficient vector"));
    }
    Ok(grad_f.iter().zip(beta_prime0).map(|(g, b)| g * b).sum::<f64>() * lambda)
}

/// `Σₙ β⁽ⁿ⁾(0) λⁿ / n!` from externally supplied derivatives `[β'(0), β''(0), …]`.
pub fn taylor_bias(derivatives: &[Vec<f64>], lambda: f64) -> Vec<f64> {
    let p = derivatives.first().map_or(0, Vec::len);
    let mut out = vec![0.0; p];
    let mut coef = 1.0;
    for (n, d) in derivatives.iter().enumerate() {
        coef *= lambda / (n + 1) as f64;
        for (o, v) in out.iter_mut().zip(d) {
            *o += coef * v;
        }
    }
    out
}
