//! Exponential-family GLMs fitted by iteratively reweighted least squares.
//!
//! Masked outcomes are weighted averages and need not be integers; the same
//! estimating equations are solved regardless (quasi-likelihood). Covariances
//! are the inverse Fisher information, scaled by the residual variance for the
//! gaussian family; they ignore any correlation introduced by masking, which is
//! what makes them "naive".

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::SpatialDataset;
use crate::error::{Error, Result};
use crate::kernels::KernelFamily;
use crate::masking::{apply, build_operator};
use crate::seed::{rng_for, tags};

pub const INTERCEPT: &str = "(intercept)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    PoissonLog,
    BinomialLogit,
    GaussianIdentity,
}

pub(crate) fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

impl Family {
    /// Inverse link `h(η)` on the per-trial scale.
    pub fn inverse_link(&self, eta: f64) -> f64 {
        match self {
            Family::PoissonLog => eta.exp(),
            Family::BinomialLogit => expit(eta),
            Family::GaussianIdentity => eta,
        }
    }

    /// `h'(η)`; for canonical links this is also the variance function at `h(η)`.
    pub fn inverse_link_derivative(&self, eta: f64) -> f64 {
        match self {
            Family::PoissonLog => eta.exp(),
            Family::BinomialLogit => {
                let p = expit(eta);
                p * (1.0 - p)
            }
            Family::GaussianIdentity => 1.0,
        }
    }
}

fn default_true() -> bool {
    true
}

/// Model configuration as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// Regressor columns; empty means all regressors of the dataset.
    #[serde(default)]
    pub regressors: Vec<String>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    /// Use `log n` of the record count column as offset (rate-scaled Poisson).
    #[serde(default)]
    pub offset_log_count: bool,
    /// Use the record count column as binomial trials.
    #[serde(default)]
    pub trials_from_count: bool,
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        ModelSpec {
            family,
            regressors: Vec::new(),
            intercept: true,
            offset_log_count: false,
            trials_from_count: family == Family::BinomialLogit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == Family::BinomialLogit && !self.trials_from_count {
            return Err(Error::invalid("binomial-logit requires trials (set trials_from_count)"));
        }
        Ok(())
    }

    pub fn design(&self, data: &SpatialDataset) -> Result<GlmData> {
        GlmData::from_dataset(self, data)
    }

    pub fn fit(&self, data: &SpatialDataset) -> Result<FitResult> {
        fit(self.family, &self.design(data)?)
    }
}

/// Design matrix (intercept column included when requested), response and optional offset/trials.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmData {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub offset: Option<DVector<f64>>,
    pub trials: Option<DVector<f64>>,
}

impl GlmData {
    /// Builds a design from regressor columns.
    pub fn new(names: Vec<String>, columns: &[Vec<f64>], y: Vec<f64>, intercept: bool) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::invalid("no observations"));
        }
        if names.len() != columns.len() || columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("regressor columns must match names and response length"));
        }
        let p = columns.len() + usize::from(intercept);
        let mut all_names = Vec::with_capacity(p);
        if intercept {
            all_names.push(INTERCEPT.to_string());
        }
        all_names.extend(names);
        let x = DMatrix::from_fn(n, p, |i, k| {
            if intercept && k == 0 {
                1.0
            } else {
                columns[k - usize::from(intercept)][i]
            }
        });
        Ok(GlmData {
            names: all_names,
            x,
            y: DVector::from_vec(y),
            offset: None,
            trials: None,
        })
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Self {
        self.offset = Some(DVector::from_vec(offset));
        self
    }

    pub fn with_trials(mut self, trials: Vec<f64>) -> Self {
        self.trials = Some(DVector::from_vec(trials));
        self
    }

    pub fn from_dataset(spec: &ModelSpec, data: &SpatialDataset) -> Result<Self> {
        spec.validate()?;
        let names: Vec<String> = if spec.regressors.is_empty() {
            data.regressor_names().to_vec()
        } else {
            spec.regressors.clone()
        };
        let columns = names
            .iter()
            .map(|c| {
                data.regressor_names()
                    .iter()
                    .position(|r| r == c)
                    .map(|k| data.regressor(k))
                    .ok_or_else(|| Error::invalid(format!("model regressor '{c}' not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut design = GlmData::new(names, &columns, data.outcome(), spec.intercept)?;
        if spec.offset_log_count || spec.trials_from_count {
            let counts = data
                .counts()
                .ok_or_else(|| Error::invalid("model needs a count column but the dataset has none"))?;
            if spec.offset_log_count {
                design = design.with_offset(counts.iter().map(|n| n.ln()).collect());
            }
            if spec.trials_from_count {
                design = design.with_trials(counts);
            }
        }
        Ok(design)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> GlmData {
        let pick = |v: &DVector<f64>| DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]));
        GlmData {
            names: self.names.clone(),
            x: self.x.select_rows(rows),
            y: pick(&self.y),
            offset: self.offset.as_ref().map(pick),
            trials: self.trials.as_ref().map(pick),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn linear_predictor(&self, beta: &DVector<f64>) -> DVector<f64> {
        let mut eta = &self.x * beta;
        if let Some(off) = &self.offset {
            eta += off;
        }
        eta
    }

    fn trials_at(&self, i: usize) -> f64 {
        self.trials.as_ref().map_or(1.0, |t| t[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative deviance change that counts as converged.
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 100,
            tolerance: 1e-10,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub family: Family,
    pub names: Vec<String>,
    pub beta: DVector<f64>,
    /// Naive covariance: dispersion × inverse Fisher information.
    pub cov: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub deviance: f64,
    pub dispersion: f64,
    /// Largest absolute component of `Xᵀ(y - μ)` at the returned coefficients.
    pub score_max_abs: f64,
}

impl FitResult {
    pub fn se(&self) -> Vec<f64> {
        (0..self.beta.len()).map(|k| self.cov[(k, k)].max(0.0).sqrt()).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.beta[k])
    }
}

fn check_response(family: Family, data: &GlmData) -> Result<()> {
    let bad = |i: usize, msg: &str| {
        Err(Error::Parse {
            row: i + 1,
            message: msg.into(),
        })
    };
    if data.x.nrows() != data.len() {
        return Err(Error::invalid("design rows must match response length"));
    }
    if family == Family::BinomialLogit && data.trials.is_none() {
        return Err(Error::invalid("binomial-logit requires trials"));
    }
    for i in 0..data.len() {
        let y = data.y[i];
        if !y.is_finite() {
            return bad(i, "non-finite response");
        }
        match family {
            Family::PoissonLog if y < 0.0 => return bad(i, "poisson response must be ≥ 0"),
            Family::BinomialLogit => {
                let m = data.trials_at(i);
                if !(m > 0.0) || y < 0.0 || y > m {
                    return bad(i, "binomial response must satisfy 0 ≤ y ≤ trials");
                }
            }
            _ => {}
        }
    }
    if let Some(off) = &data.offset {
        if off.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("offset must be finite"));
        }
    }
    Ok(())
}

/// Names the design columns that lie in the span of the columns before them.
fn collinear_columns(data: &GlmData) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for k in 0..data.x.ncols() {
        let col = data.x.column(k).into_owned();
        let norm = col.norm();
        let mut r = col.clone();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= 1e-9 * norm {
            dependent.push(data.names[k].clone());
        } else {
            basis.push(r / rn);
        }
    }
    dependent
}

fn weighted_least_squares(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let sw = w.map(f64::sqrt);
    let mut xw = x.clone();
    for (i, s) in sw.iter().enumerate() {
        xw.row_mut(i).scale_mut(*s);
    }
    let zw = z.component_mul(&sw);
    let svd = xw.svd(true, true);
    svd.solve(&zw, 1e-13)
        .map_err(|e| Error::Numerical(format!("weighted least squares: {e}")))
}

struct Working {
    mu: DVector<f64>,
    deviance: f64,
}

fn evaluate(family: Family, data: &GlmData, beta: &DVector<f64>) -> Working {
    let eta = data.linear_predictor(beta);
    let mut dev = 0.0;
    let mu = DVector::from_iterator(
        eta.len(),
        eta.iter().enumerate().map(|(i, &e)| {
            let y = data.y[i];
            match family {
                Family::GaussianIdentity => {
                    dev += (y - e) * (y - e);
                    e
                }
                Family::PoissonLog => {
                    let mu = e.min(700.0).exp();
                    dev += 2.0 * (if y > 0.0 { y * (y / mu).ln() } else { 0.0 } - (y - mu));
                    mu
                }
                Family::BinomialLogit => {
                    let m = data.trials_at(i);
                    let mu = m * expit(e);
                    let a = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
                    let b = if m - y > 0.0 { (m - y) * ((m - y) / (m - mu)).ln() } else { 0.0 };
                    dev += 2.0 * (a + b);
                    mu
                }
            }
        }),
    );
    Working { mu, deviance: dev }
}

fn initial_beta(family: Family, data: &GlmData) -> Result<DVector<f64>> {
    let off = |i: usize| data.offset.as_ref().map_or(0.0, |o| o[i]);
    let z = DVector::from_iterator(
        data.len(),
        (0..data.len()).map(|i| {
            let y = data.y[i];
            match family {
                Family::GaussianIdentity => y - off(i),
                Family::PoissonLog => (y + 0.5).ln() - off(i),
                Family::BinomialLogit => {
                    let m = data.trials_at(i);
                    ((y + 0.5) / (m - y + 0.5)).ln() - off(i)
                }
            }
        }),
    );
    weighted_least_squares(&data.x, &DVector::from_element(data.len(), 1.0), &z)
}

pub fn fit(family: Family, data: &GlmData) -> Result<FitResult> {
    fit_with(family, data, &FitOptions::default())
}

pub fn fit_with(family: Family, data: &GlmData, opts: &FitOptions) -> Result<FitResult> {
    check_response(family, data)?;
    if data.x.ncols() == 0 || data.len() < data.x.ncols() {
        return Err(Error::invalid("need at least as many observations as coefficients"));
    }
    let collinear = collinear_columns(data);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient { columns: collinear });
    }

    let mut beta = initial_beta(family, data)?;
    let mut current = evaluate(family, data, &beta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        iterations += 1;
        let eta = data.linear_predictor(&beta);
        let off = |i: usize| data.offset.as_ref().map_or(0.0, |o| o[i]);
        // IRLS weights dμ/dη and working response η + (y - μ)/(dμ/dη), offset removed.
        let mut w = DVector::zeros(data.len());
        let mut z = DVector::zeros(data.len());
        for i in 0..data.len() {
            let dmu = (data.trials_at(i) * family.inverse_link_derivative(eta[i].min(700.0))).max(1e-300);
            w[i] = dmu;
            z[i] = eta[i] - off(i) + (data.y[i] - current.mu[i]) / dmu;
        }
        let mut candidate = weighted_least_squares(&data.x, &w, &z)?;
        let mut next = evaluate(family, data, &candidate);
        let mut halvings = 0;
        while (!next.deviance.is_finite() || next.deviance > current.deviance * (1.0 + 1e-12) + 1e-300)
            && halvings < opts.max_halvings
        {
            candidate = (&candidate + &beta) * 0.5;
            next = evaluate(family, data, &candidate);
            halvings += 1;
        }
        if !next.deviance.is_finite() {
            break;
        }
        let change = (current.deviance - next.deviance).abs() / (next.deviance.abs() + 0.1);
        beta = candidate;
        current = next;
        if change <= opts.tolerance {
            converged = true;
            break;
        }
    }

    let eta = data.linear_predictor(&beta);
    let w = DVector::from_iterator(
        data.len(),
        (0..data.len()).map(|i| data.trials_at(i) * family.inverse_link_derivative(eta[i].min(700.0))),
    );
    let n = data.len();
    let p = data.x.ncols();
    let dispersion = match family {
        Family::GaussianIdentity if n > p => current.deviance / (n - p) as f64,
        Family::GaussianIdentity => 0.0,
        _ => 1.0,
    };
    let cov = information_inverse(&data.x, &w)? * dispersion;
    let resid = &data.y - &current.mu;
    let score = data.x.transpose() * resid;
    Ok(FitResult {
        family,
        names: data.names.clone(),
        beta,
        cov,
        iterations,
        converged,
        deviance: current.deviance,
        dispersion,
        score_max_abs: score.amax(),
    })
}

/// `(XᵀWX)⁻¹` through the SVD of `W^{1/2}X`.
fn information_inverse(x: &DMatrix<f64>, w: &DVector<f64>) -> Result<DMatrix<f64>> {
    let mut xw = x.clone();
    for i in 0..x.nrows() {
        xw.row_mut(i).scale_mut(w[i].sqrt());
    }
    let svd = xw.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("svd failed".into()))?;
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().any(|s| *s <= smax * 1e-14) {
        return Err(Error::Numerical("information matrix is singular".into()));
    }
    let inv_sq = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / (s * s)));
    let cov = v_t.transpose() * inv_sq * &v_t;
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Fisher information `Σ mᵢ h'(ηᵢ) xᵢxᵢᵀ` at arbitrary coefficients.
pub fn information_matrix(family: Family, data: &GlmData, beta: &DVector<f64>) -> DMatrix<f64> {
    let eta = data.linear_predictor(beta);
    let mut info = DMatrix::zeros(data.x.ncols(), data.x.ncols());
    for i in 0..data.len() {
        let w = data.trials_at(i) * family.inverse_link_derivative(eta[i]);
        let row = data.x.row(i);
        info += row.transpose() * row * w;
    }
    info
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `β_k ± z_{(1+level)/2} · se_k` for every coefficient.
pub fn naive_ci(fit: &FitResult, level: f64) -> Result<Vec<(f64, f64)>> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::invalid(format!("confidence level must be in [0, 1), got {level}")));
    }
    let z = if level == 0.0 { 0.0 } else { normal_quantile((1.0 + level) / 2.0) };
    Ok(fit
        .se()
        .iter()
        .zip(fit.beta.iter())
        .map(|(se, b)| (b - z * se, b + z * se))
        .collect())
}

/// The group regressor and the values meaning "entirely in the group" and "none in the group".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupContrast {
    pub column: String,
    #[serde(default = "one")]
    pub present: f64,
    #[serde(default)]
    pub absent: f64,
}

fn one() -> f64 {
    1.0
}

impl GroupContrast {
    pub fn new(column: impl Into<String>) -> Self {
        GroupContrast {
            column: column.into(),
            present: 1.0,
            absent: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OddsRatioResult {
    pub or_value: f64,
    pub log_or: f64,
    pub log_or_se_naive: f64,
    /// Gradient of the log odds ratio in the coefficients.
    pub gradient: DVector<f64>,
    pub ci: (f64, f64),
    pub p_present: f64,
    pub p_absent: f64,
}

struct SummaryProbability {
    p: f64,
    grad: DVector<f64>,
}

fn summary_probability(data: &GlmData, beta: &DVector<f64>, col: usize, value: f64) -> SummaryProbability {
    let p_dim = beta.len();
    let (mut num, mut den) = (0.0, 0.0);
    let mut grad = DVector::zeros(p_dim);
    for i in 0..data.len() {
        let mut row = data.x.row(i).transpose();
        row[col] = value;
        let eta = row.dot(beta) + data.offset.as_ref().map_or(0.0, |o| o[i]);
        let p = expit(eta);
        let n = data.trials_at(i);
        num += n * p;
        den += n;
        grad.axpy(n * p * (1.0 - p), &row, 1.0);
    }
    SummaryProbability {
        p: num / den,
        grad: grad / den,
    }
}

fn contrast_column(data: &GlmData, contrast: &GroupContrast) -> Result<usize> {
    data.column_index(&contrast.column)
        .ok_or_else(|| Error::invalid(format!("group column '{}' not in the model", contrast.column)))
}

/// Log population odds ratio at arbitrary coefficients, with its gradient.
pub fn log_odds_ratio_at(data: &GlmData, beta: &DVector<f64>, contrast: &GroupContrast) -> Result<(f64, DVector<f64>, f64, f64)> {
    let col = contrast_column(data, contrast)?;
    let pb = summary_probability(data, beta, col, contrast.present);
    let pw = summary_probability(data, beta, col, contrast.absent);
    for p in [pb.p, pw.p] {
        if p <= 0.0 || p >= 1.0 {
            return Err(Error::Numerical(format!("summary probability {p} makes the odds ratio undefined")));
        }
    }
    let log_or = (pb.p / (1.0 - pb.p)).ln() - (pw.p / (1.0 - pw.p)).ln();
    let grad = pb.grad / (pb.p * (1.0 - pb.p)) - pw.grad / (pw.p * (1.0 - pw.p));
    Ok((log_or, grad, pb.p, pw.p))
}

/// Odds ratio built from `nⱼ`-weighted mean predicted probabilities with the group
/// regressor forced to its present and absent values; delta-method SE on the log scale.
pub fn population_odds_ratio(fit: &FitResult, data: &GlmData, contrast: &GroupContrast, level: f64) -> Result<OddsRatioResult> {
    if fit.family != Family::BinomialLogit {
        return Err(Error::invalid("population odds ratio needs a binomial-logit fit"));
    }
    let (log_or, gradient, p_present, p_absent) = log_odds_ratio_at(data, &fit.beta, contrast)?;
    let var = (gradient.transpose() * &fit.cov * &gradient)[(0, 0)];
    let se = var.max(0.0).sqrt();
    let z = normal_quantile((1.0 + level) / 2.0);
    Ok(OddsRatioResult {
        or_value: log_or.exp(),
        log_or,
        log_or_se_naive: se,
        gradient,
        ci: ((log_or - z * se).exp(), (log_or + z * se).exp()),
        p_present,
        p_absent,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statistic {
    Coefficient(usize),
    LogOddsRatio(GroupContrast),
}

/// How bootstrap samples are formed.
#[derive(Debug, Clone, Copy)]
pub enum Resampling<'a> {
    /// Resample rows of the (already masked) model data.
    Rows,
    /// Resample original records, re-mask them, then rebuild the design.
    Remask {
        original: &'a SpatialDataset,
        spec: &'a ModelSpec,
        kernel: &'a KernelFamily,
        lambda: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub se: f64,
    pub interval: (f64, f64),
    pub used: usize,
    pub failed: usize,
}

fn statistic_of(family: Family, data: &GlmData, statistic: &Statistic) -> Result<f64> {
    let fit = fit(family, data)?;
    if !fit.converged {
        return Err(Error::Numerical("refit did not converge".into()));
    }
    match statistic {
        Statistic::Coefficient(k) => fit
            .beta
            .get(*k)
            .copied()
            .ok_or_else(|| Error::invalid(format!("coefficient index {k} out of range"))),
        Statistic::LogOddsRatio(contrast) => Ok(log_odds_ratio_at(data, &fit.beta, contrast)?.0),
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Nonparametric bootstrap SE and percentile interval; replicate `b` draws from a
/// stream derived from `(seed, b)`, so results do not depend on thread scheduling.
pub fn bootstrap_ci(
    family: Family,
    data: &GlmData,
    statistic: &Statistic,
    cfg: &BootstrapConfig,
    resampling: Resampling<'_>,
) -> Result<BootstrapResult> {
    if cfg.replicates < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 replicates"));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::invalid("bootstrap level must be in (0, 1)"));
    }
    let n = match resampling {
        Resampling::Rows => data.len(),
        Resampling::Remask { original, .. } => original.len(),
    };
    let draws: Vec<Option<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(cfg.seed, tags::BOOTSTRAP, b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let sample = match resampling {
                Resampling::Rows => Ok(data.select(&idx)),
                Resampling::Remask {
                    original,
                    spec,
                    kernel,
                    lambda,
                } => {
                    let resampled = original.resample(&idx);
                    build_operator(&resampled.locations(), kernel, lambda)
                        .and_then(|op| apply(&op, &resampled))
                        .and_then(|m| GlmData::from_dataset(spec, &m.data))
                }
            };
            sample.and_then(|s| statistic_of(family, &s, statistic)).ok()
        })
        .collect();
    let failed = draws.iter().filter(|d| d.is_none()).count();
    if failed * 10 > cfg.replicates {
        return Err(Error::BootstrapFailures {
            failed,
            total: cfg.replicates,
        });
    }
    let mut values: Vec<f64> = draws.into_iter().flatten().collect();
    let used = values.len();
    let mean = values.iter().sum::<f64>() / used as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (used - 1).max(1) as f64;
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - cfg.level) / 2.0;
    Ok(BootstrapResult {
        se: var.sqrt(),
        interval: (quantile_sorted(&values, alpha), quantile_sorted(&values, 1.0 - alpha)),
        used,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as NormalDist, Poisson};

    fn uniform_column(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    #[test]
    fn poisson_intercept_only_is_log_mean() {
        let d = GlmData::new(vec![], &[], vec![1.0, 2.0, 3.0], true).unwrap();
        let f = fit(Family::PoissonLog, &d).unwrap();
        assert!(f.converged);
        assert!((f.beta[0] - 2f64.ln()).abs() < 1e-10);
        // var(log ȳ) = 1 / Σy
        assert!((f.cov[(0, 0)] - 1.0 / 6.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_matches_normal_equations() {
        let n = 60;
        let x1 = uniform_column(n, 1, -2.0, 2.0);
        let x2 = uniform_column(n, 2, 0.0, 5.0);
        let noise = uniform_column(n, 3, -0.5, 0.5);
        let y: Vec<f64> = (0..n).map(|i| 1.5 - 0.7 * x1[i] + 0.3 * x2[i] + noise[i]).collect();
        let d = GlmData::new(vec!["a".into(), "b".into()], &[x1, x2], y, true).unwrap();
        let f = fit(Family::GaussianIdentity, &d).unwrap();
        let xtx = d.x.transpose() * &d.x;
        let xty = d.x.transpose() * &d.y;
        let ols = xtx.clone().lu().solve(&xty).unwrap();
        for k in 0..3 {
            assert!((f.beta[k] - ols[k]).abs() < 1e-10, "{k}");
        }
        let resid = &d.y - &d.x * &ols;
        let sigma2 = resid.norm_squared() / (n - 3) as f64;
        let cov = xtx.try_inverse().unwrap() * sigma2;
        assert!((f.cov - cov).amax() < 1e-10);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let a = uniform_column(20, 4, 0.0, 1.0);
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v + 1.0).collect();
        let d = GlmData::new(vec!["a".into(), "b".into()], &[a, b], vec![1.0; 20], true).unwrap();
        match fit(Family::PoissonLog, &d) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["b".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn response_validation() {
        let d = GlmData::new(vec![], &[], vec![1.0, -1.0], true).unwrap();
        assert!(fit(Family::PoissonLog, &d).is_err());
        let d = GlmData::new(vec![], &[], vec![1.0, 3.0], true).unwrap();
        assert!(fit(Family::BinomialLogit, &d).is_err());
        let d = d.with_trials(vec![2.0, 2.0]);
        assert!(fit(Family::BinomialLogit, &d).is_err());
    }

    #[test]
    fn poisson_recovers_example_one_slope() {
        let n = 5000;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                7.0 * (-(a * a + b * b) / 2.5).exp()
            })
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|xi| {
                let mean = (-25.0 + 4.0 * xi).exp();
                if mean < 1e-300 {
                    0.0
                } else {
                    Poisson::new(mean).unwrap().sample(&mut rng)
                }
            })
            .collect();
        let d = GlmData::new(vec!["x".into()], &[x], y, true).unwrap();
        let f = fit(Family::PoissonLog, &d).unwrap();
        assert!(f.converged);
        let se = f.se()[1];
        assert!((f.beta[1] - 4.0).abs() < 3.0 * se, "β̂ = {} ± {se}", f.beta[1]);
        assert!(f.score_max_abs <= 1e-6, "score {}", f.score_max_abs);
    }

    #[test]
    fn naive_interval_quantiles() {
        let f = FitResult {
            family: Family::GaussianIdentity,
            names: vec!["b".into()],
            beta: DVector::from_vec(vec![0.0]),
            cov: DMatrix::from_element(1, 1, 1.0),
            iterations: 1,
            converged: true,
            deviance: 0.0,
            dispersion: 1.0,
            score_max_abs: 0.0,
        };
        let ci = naive_ci(&f, 0.95).unwrap()[0];
        assert!((ci.1 - 1.959963984540054).abs() < 1e-9 && (ci.0 + ci.1).abs() < 1e-15);
        let ci90 = naive_ci(&f, 0.90).unwrap()[0];
        assert!((ci90.1 - 1.6448536269514722).abs() < 1e-9);
        assert_eq!(naive_ci(&f, 0.0).unwrap()[0], (0.0, 0.0));
        assert!(naive_ci(&f, 1.0).is_err());
    }

    fn binomial_cells(n: usize, seed: u64) -> (GlmData, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let group = uniform_column(n, seed + 1, 0.0, 1.0);
        let age = uniform_column(n, seed + 2, 0.2, 0.6);
        let trials: Vec<f64> = (0..n).map(|_| rng.random_range(200..2000) as f64).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let p = expit(-3.0 + 0.4 * group[i] + 1.2 * age[i]);
                let m = trials[i] as u64;
                (0..m).filter(|_| rng.random::<f64>() < p).count() as f64
            })
            .collect();
        let cols = vec![group, age];
        let d = GlmData::new(vec!["group".into(), "age".into()], &cols, y, true)
            .unwrap()
            .with_trials(trials);
        (d, cols)
    }

    #[test]
    fn odds_ratio_single_covariate_is_exp_coefficient() {
        let (d, cols) = binomial_cells(40, 30);
        let d1 = GlmData::new(vec!["group".into()], &cols[..1], d.y.as_slice().to_vec(), true)
            .unwrap()
            .with_trials(d.trials.clone().unwrap().as_slice().to_vec());
        let f = fit(Family::BinomialLogit, &d1).unwrap();
        let or = population_odds_ratio(&f, &d1, &GroupContrast::new("group"), 0.95).unwrap();
        assert!((or.or_value - f.beta[1].exp()).abs() < 1e-10 * or.or_value);
        assert!(or.ci.0 < or.or_value && or.or_value < or.ci.1);
    }

    #[test]
    fn odds_ratio_hand_computation() {
        let cols = vec![vec![0.2, 0.5, 0.9], vec![1.0, -1.0, 0.5]];
        let d = GlmData::new(vec!["g".into(), "z".into()], &cols, vec![1.0, 2.0, 3.0], true)
            .unwrap()
            .with_trials(vec![10.0, 20.0, 30.0]);
        let beta = DVector::from_vec(vec![-1.0, 0.8, 0.3]);
        let (log_or, _, pb, pw) = log_odds_ratio_at(&d, &beta, &GroupContrast::new("g")).unwrap();
        let n = [10.0, 20.0, 30.0];
        let z = [1.0, -1.0, 0.5];
        let s = |g: f64| -> f64 {
            (0..3).map(|j| n[j] / (1.0 + (-(-1.0 + 0.8 * g + 0.3 * z[j])).exp())).sum::<f64>() / 60.0
        };
        let (b, w) = (s(1.0), s(0.0));
        assert!((pb - b).abs() < 1e-15 && (pw - w).abs() < 1e-15);
        assert!((log_or - ((b * (1.0 - w)) / (w * (1.0 - b))).ln()).abs() < 1e-14);
        let zero = DVector::from_vec(vec![-1.0, 0.0, 0.3]);
        assert!(log_odds_ratio_at(&d, &zero, &GroupContrast::new("g")).unwrap().0.abs() < 1e-15);
    }

    #[test]
    fn delta_gradient_matches_finite_differences() {
        let (d, _) = binomial_cells(30, 40);
        let f = fit(Family::BinomialLogit, &d).unwrap();
        let c = GroupContrast::new("group");
        let (_, grad, _, _) = log_odds_ratio_at(&d, &f.beta, &c).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut up = f.beta.clone();
            let mut dn = f.beta.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (log_odds_ratio_at(&d, &up, &c).unwrap().0 - log_odds_ratio_at(&d, &dn, &c).unwrap().0) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-5, "{k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn odds_ratio_invariant_to_reparameterization() {
        let (d, cols) = binomial_cells(50, 50);
        let f = fit(Family::BinomialLogit, &d).unwrap();
        let or = population_odds_ratio(&f, &d, &GroupContrast::new("group"), 0.95).unwrap();
        // centre and scale both regressors; the group contrast follows the coding
        let (gs, gc, ascale, ac) = (3.0, -0.4, 0.1, 7.0);
        let t = vec![
            cols[0].iter().map(|v| gs * v + gc).collect::<Vec<_>>(),
            cols[1].iter().map(|v| ascale * v + ac).collect(),
        ];
        let d2 = GlmData::new(vec!["group".into(), "age".into()], &t, d.y.as_slice().to_vec(), true)
            .unwrap()
            .with_trials(d.trials.clone().unwrap().as_slice().to_vec());
        let f2 = fit(Family::BinomialLogit, &d2).unwrap();
        let contrast = GroupContrast {
            column: "group".into(),
            present: gs + gc,
            absent: gc,
        };
        let or2 = population_odds_ratio(&f2, &d2, &contrast, 0.95).unwrap();
        assert!((or.or_value - or2.or_value).abs() < 1e-8);
        assert!((or.log_or_se_naive - or2.log_or_se_naive).abs() < 1e-7);
        // fitted means are unchanged by the affine change of regressors
        let m1 = &d.x * &f.beta;
        let m2 = &d2.x * &f2.beta;
        assert!((m1 - m2).amax() < 1e-8);
    }

    #[test]
    fn poisson_offset_moment_identity() {
        let n = 49;
        let xbar = uniform_column(n, 60, 0.0, 3.0);
        let counts: Vec<f64> = uniform_column(n, 61, 5.0, 40.0).iter().map(|v| v.round()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let y: Vec<f64> = (0..n)
            .map(|i| Poisson::new(counts[i] * (-1.0 + 0.5 * xbar[i]).exp()).unwrap().sample(&mut rng))
            .collect();
        let d = GlmData::new(vec!["x".into()], &[xbar], y.clone(), true)
            .unwrap()
            .with_offset(counts.iter().map(|c| c.ln()).collect());
        let f = fit(Family::PoissonLog, &d).unwrap();
        let eta = d.linear_predictor(&f.beta);
        let fitted: f64 = eta.iter().map(|e| e.exp()).sum();
        assert!((fitted - y.iter().sum::<f64>()).abs() < 1e-8 * fitted);
    }

    #[test]
    fn information_matches_fit_covariance() {
        let (d, _) = binomial_cells(25, 70);
        let f = fit(Family::BinomialLogit, &d).unwrap();
        let info = information_matrix(Family::BinomialLogit, &d, &f.beta);
        let prod = info * &f.cov;
        assert!((prod - DMatrix::identity(3, 3)).amax() < 1e-8);
    }

    #[test]
    fn bootstrap_noiseless_and_deterministic() {
        let x = uniform_column(80, 80, -1.0, 1.0);
        let y: Vec<f64> = x.iter().map(|v| 0.5 + 2.0 * v).collect();
        let d = GlmData::new(vec!["x".into()], &[x], y, true).unwrap();
        let cfg = BootstrapConfig {
            replicates: 200,
            seed: 9,
            level: 0.95,
        };
        let r = bootstrap_ci(Family::GaussianIdentity, &d, &Statistic::Coefficient(1), &cfg, Resampling::Rows).unwrap();
        assert!(r.se <= 1e-8, "{}", r.se);
        let again = bootstrap_ci(Family::GaussianIdentity, &d, &Statistic::Coefficient(1), &cfg, Resampling::Rows).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn bootstrap_se_close_to_analytic() {
        let n = 500;
        let x = uniform_column(n, 90, -1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let noise = NormalDist::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v + noise.sample(&mut rng)).collect();
        let d = GlmData::new(vec!["x".into()], std::slice::from_ref(&x), y.clone(), true).unwrap();
        // analytic OLS slope SE: σ̂ / sqrt(Σ(x - x̄)²)
        let xm = x.iter().sum::<f64>() / n as f64;
        let sxx: f64 = x.iter().map(|v| (v - xm) * (v - xm)).sum();
        let ym = y.iter().sum::<f64>() / n as f64;
        let slope = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum::<f64>() / sxx;
        let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - ym - slope * (a - xm)).powi(2)).sum();
        let analytic = (rss / (n - 2) as f64 / sxx).sqrt();
        let cfg = BootstrapConfig {
            replicates: 400,
            seed: 3,
            level: 0.95,
        };
        let r = bootstrap_ci(Family::GaussianIdentity, &d, &Statistic::Coefficient(1), &cfg, Resampling::Rows).unwrap();
        assert!((r.se - analytic).abs() <= 0.25 * analytic, "{} vs {analytic}", r.se);
        assert!(r.interval.0 < slope && slope < r.interval.1);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
    }
}
