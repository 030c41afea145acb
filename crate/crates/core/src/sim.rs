//! Replicate study of masking cost and protection on synthetic point-source exposure.
//!
//! Locations are drawn once; each replicate draws Poisson outcomes with mean
//! `exp(μ + βX(s))`. Per (kernel, λ) cell the masked data are refitted and the
//! spread of estimates across replicates is compared with the naive intervals.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{aggregate, GridSpec, Location, Record, SpatialDataset};
use crate::error::{Error, Result};
use crate::glm::{fit, normal_quantile, quantile_sorted, Family, GlmData};
use crate::kernels::{direction_cosine, radial_distance, BlockRegion, KernelFamily, PointSource};
use crate::masking::{apply, build_operator};
use crate::risk::{assess, IntruderScenario};
use crate::seed::{derive_seed, rng_for, tags};

/// Share of failed fits above which a cell is flagged invalid.
pub const MAX_EXCLUDED_SHARE: f64 = 0.1;

fn amplitude() -> f64 {
    7.0
}
fn scale_one() -> f64 {
    2.5
}
fn radial_scale_two() -> f64 {
    6.0
}
fn angle_scale_two() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "field", rename_all = "kebab-case")]
pub enum ExposureField {
    /// `a · exp(-r² / c)`
    Example1 {
        #[serde(default)]
        source: PointSource,
        #[serde(default = "amplitude")]
        amplitude: f64,
        #[serde(default = "scale_one")]
        scale: f64,
    },
    /// `a · exp(-r² / c_r - cos θ / c_θ)`
    Example2 {
        #[serde(default)]
        source: PointSource,
        #[serde(default = "amplitude")]
        amplitude: f64,
        #[serde(default = "radial_scale_two")]
        radial_scale: f64,
        #[serde(default = "angle_scale_two")]
        angle_scale: f64,
    },
    /// Example 1 field multiplied by the block indicator.
    Example3 {
        #[serde(default)]
        region: BlockRegion,
        #[serde(default = "amplitude")]
        amplitude: f64,
        #[serde(default = "scale_one")]
        scale: f64,
    },
}

impl ExposureField {
    pub fn example1() -> Self {
        ExposureField::Example1 {
            source: PointSource::default(),
            amplitude: amplitude(),
            scale: scale_one(),
        }
    }

    pub fn example2() -> Self {
        ExposureField::Example2 {
            source: PointSource::default(),
            amplitude: amplitude(),
            radial_scale: radial_scale_two(),
            angle_scale: angle_scale_two(),
        }
    }

    pub fn example3() -> Self {
        ExposureField::Example3 {
            region: BlockRegion::default(),
            amplitude: amplitude(),
            scale: scale_one(),
        }
    }

    /// The kernel that follows the field's geometry.
    pub fn matched_kernel(&self) -> KernelFamily {
        match *self {
            ExposureField::Example1 { source, .. } => KernelFamily::Ring { source },
            ExposureField::Example2 { source, .. } => KernelFamily::RingAngle {
                source,
                angle_scale: 2.0,
            },
            ExposureField::Example3 { region, .. } => KernelFamily::RingBlock { region },
        }
    }

    /// Intercept and slope used for this field's outcomes.
    pub fn default_coefficients(&self) -> (f64, f64) {
        match self {
            ExposureField::Example1 { .. } => (-25.0, 4.0),
            ExposureField::Example2 { .. } => (-36.0, 4.0),
            ExposureField::Example3 { .. } => (-24.0, 4.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ExposureField::Example1 { amplitude, scale, .. } | ExposureField::Example3 { amplitude, scale, .. } => {
                amplitude.is_finite() && scale > 0.0
            }
            ExposureField::Example2 {
                amplitude,
                radial_scale,
                angle_scale,
                ..
            } => amplitude.is_finite() && radial_scale > 0.0 && angle_scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("exposure field needs finite amplitude and positive scales"))
        }
    }
}

pub fn exposure(field: &ExposureField, s: &Location) -> f64 {
    match field {
        ExposureField::Example1 { source, amplitude, scale } => {
            let r = radial_distance(s, source);
            amplitude * (-r * r / scale).exp()
        }
        ExposureField::Example2 {
            source,
            amplitude,
            radial_scale,
            angle_scale,
        } => {
            let r = radial_distance(s, source);
            amplitude * (-r * r / radial_scale - direction_cosine(s, source) / angle_scale).exp()
        }
        ExposureField::Example3 { region, amplitude, scale } => {
            let r = radial_distance(s, &region.source);
            amplitude * (-r * r / scale).exp() * f64::from(region.indicator(s))
        }
    }
}

/// `n` i.i.d. uniform points on `[-1, 1]²`.
pub fn sample_locations(n: usize, seed: u64) -> Vec<Location> {
    let mut rng = rng_for(seed, tags::LOCATIONS, 0);
    (0..n)
        .map(|_| Location::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)))
        .collect()
}

/// Independent Poisson draws with mean `exp(μ + β·xᵢ)`.
pub fn simulate_outcomes(x: &[f64], mu: f64, beta: f64, seed: u64, replicate: u64) -> Result<Vec<f64>> {
    let mut rng = rng_for(seed, tags::OUTCOMES, replicate);
    x.iter()
        .enumerate()
        .map(|(i, xi)| {
            let mean = (mu + beta * xi).exp();
            if !mean.is_finite() {
                return Err(Error::Domain(format!("outcome mean overflows at location {i} (x = {xi})")));
            }
            if mean == 0.0 {
                return Ok(0.0);
            }
            let dist = Poisson::new(mean)
                .map_err(|e| Error::Domain(format!("outcome mean {mean} at location {i}: {e}")))?;
            Ok(dist.sample(&mut rng))
        })
        .collect()
}

/// `n` geometrically spaced values from `lo` to `hi` inclusive.
pub fn lambda_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let ratio = (hi / lo).ln() / (n - 1) as f64;
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo * (ratio * k as f64).exp() })
        .collect()
}

fn default_grid() -> GridSpec {
    GridSpec::unit_square(7)
}

fn default_lambdas() -> Vec<f64> {
    lambda_grid(0.01, 1.0, 20)
}

fn default_scenario() -> Option<IntruderScenario> {
    Some(IntruderScenario::new(&["x"], &["y"]))
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub field: ExposureField,
    pub n_locations: usize,
    pub replicates: usize,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    pub kernels: Vec<KernelFamily>,
    /// Outcome intercept; the field's default when absent.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_grid")]
    pub grid: GridSpec,
    #[serde(default)]
    pub seed: u64,
    /// Risk is skipped when absent.
    #[serde(default = "default_scenario")]
    pub scenario: Option<IntruderScenario>,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl SimConfig {
    /// Full-size study: 1000 locations, 500 replicates, 20 λ values.
    pub fn full(field: ExposureField) -> Self {
        SimConfig {
            field,
            n_locations: 1000,
            replicates: 500,
            lambdas: default_lambdas(),
            kernels: vec![field.matched_kernel(), KernelFamily::Euclidean],
            mu: None,
            beta: None,
            grid: default_grid(),
            seed: 1,
            scenario: default_scenario(),
            level: default_level(),
        }
    }

    /// Desk-size study: 200 locations, 100 replicates, 8 λ values on `[0.02, 1]`.
    pub fn desk(field: ExposureField) -> Self {
        SimConfig {
            n_locations: 200,
            replicates: 100,
            lambdas: lambda_grid(0.02, 1.0, 8),
            ..SimConfig::full(field)
        }
    }

    pub fn coefficients(&self) -> (f64, f64) {
        let (mu, beta) = self.field.default_coefficients();
        (self.mu.unwrap_or(mu), self.beta.unwrap_or(beta))
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        if self.n_locations < 3 {
            return Err(Error::invalid("n_locations must be at least 3"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("λ grid must be non-empty with finite values > 0"));
        }
        if self.kernels.is_empty() {
            return Err(Error::invalid("at least one kernel is required"));
        }
        for k in &self.kernels {
            k.validate()?;
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("level must be in (0, 1)"));
        }
        self.grid.validate()?;
        let (mu, beta) = self.coefficients();
        if !mu.is_finite() || !beta.is_finite() {
            return Err(Error::invalid("μ and β must be finite"));
        }
        Ok(())
    }
}

/// One summary row; `kernel` is a family name or a baseline label (`none`, `aggregated`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub kernel: String,
    pub lambda: f64,
    pub true_beta: f64,
    pub mean_beta: f64,
    pub sd_beta: f64,
    pub mean_se: f64,
    pub bias: f64,
    pub mse: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub width_ratio: f64,
    pub risk: Option<f64>,
    pub used: usize,
    pub excluded: usize,
    pub valid: bool,
}

impl StudyRow {
    pub fn is_baseline(&self) -> bool {
        self.kernel == BASELINE_NONE || self.kernel == BASELINE_AGGREGATED
    }
}

pub const BASELINE_NONE: &str = "none";
pub const BASELINE_AGGREGATED: &str = "aggregated";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub master_seed: u64,
    pub location_seed: u64,
    pub outcome_seeds: Vec<u64>,
    pub risk_seed: Option<u64>,
    pub n_locations: usize,
    pub replicates: usize,
    pub exclusions: Vec<(String, f64, usize)>,
    pub risk_note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub metadata: RunMetadata,
}

impl StudyResult {
    pub fn row(&self, kernel: &str, lambda: f64) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.kernel == kernel && r.lambda == lambda)
    }

    pub fn kernel_rows(&self, kernel: &str) -> Vec<&StudyRow> {
        self.rows.iter().filter(|r| r.kernel == kernel).collect()
    }
}

/// Slope estimate and naive SE for each replicate; `None` marks a failed fit.
type Estimates = Vec<Option<(f64, f64)>>;

fn slope_fit(x: Vec<f64>, y: Vec<f64>, offset: Option<Vec<f64>>) -> Option<(f64, f64)> {
    let mut d = GlmData::new(vec!["x".into()], &[x], y, true).ok()?;
    if let Some(o) = offset {
        d = d.with_offset(o);
    }
    let f = fit(Family::PoissonLog, &d).ok()?;
    f.converged.then(|| (f.beta[1], f.se()[1]))
}

fn summarize(kernel: &str, lambda: f64, true_beta: f64, z: f64, est: &Estimates) -> StudyRow {
    let ok: Vec<(f64, f64)> = est.iter().flatten().copied().collect();
    let used = ok.len();
    let excluded = est.len() - used;
    let nan = f64::NAN;
    if used == 0 {
        return StudyRow {
            kernel: kernel.into(),
            lambda,
            true_beta,
            mean_beta: nan,
            sd_beta: nan,
            mean_se: nan,
            bias: nan,
            mse: nan,
            ci_lower: nan,
            ci_upper: nan,
            width_ratio: nan,
            risk: None,
            used,
            excluded,
            valid: false,
        };
    }
    let nf = used as f64;
    let mean_beta = ok.iter().map(|e| e.0).sum::<f64>() / nf;
    let sd_beta = if used > 1 {
        (ok.iter().map(|e| (e.0 - mean_beta).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
    } else {
        0.0
    };
    let mean_se = ok.iter().map(|e| e.1).sum::<f64>() / nf;
    let mean_var = ok.iter().map(|e| e.1 * e.1).sum::<f64>() / nf;
    let bias = mean_beta - true_beta;
    let mut sorted: Vec<f64> = ok.iter().map(|e| e.0).collect();
    sorted.sort_by(f64::total_cmp);
    let ci_lower = quantile_sorted(&sorted, 0.025);
    let ci_upper = quantile_sorted(&sorted, 0.975);
    let naive_width = 2.0 * z * mean_se;
    StudyRow {
        kernel: kernel.into(),
        lambda,
        true_beta,
        mean_beta,
        sd_beta,
        mean_se,
        bias,
        mse: bias * bias + mean_var,
        ci_lower,
        ci_upper,
        width_ratio: naive_width / (ci_upper - ci_lower),
        risk: None,
        used,
        excluded,
        valid: (excluded as f64) <= MAX_EXCLUDED_SHARE * est.len() as f64,
    }
}

fn dataset(locs: &[Location], x: &[f64], y: &[f64]) -> SpatialDataset {
    let records = locs
        .iter()
        .enumerate()
        .map(|(i, loc)| Record {
            id: format!("s{i}"),
            loc: *loc,
            x: vec![x[i]],
            y: y[i],
            n: None,
        })
        .collect();
    SpatialDataset::new(vec!["x".into()], "y", records).expect("simulated records are valid")
}

struct Setup {
    locs: Vec<Location>,
    x: Vec<f64>,
    outcomes: Vec<Vec<f64>>,
}

fn setup(cfg: &SimConfig, replicates: usize) -> Result<Setup> {
    cfg.validate()?;
    let (mu, beta) = cfg.coefficients();
    let locs = sample_locations(cfg.n_locations, cfg.seed);
    let x: Vec<f64> = locs.iter().map(|s| exposure(&cfg.field, s)).collect();
    let outcomes = (0..replicates as u64)
        .into_par_iter()
        .map(|r| simulate_outcomes(&x, mu, beta, cfg.seed, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(Setup { locs, x, outcomes })
}

fn risk_seed(cfg: &SimConfig) -> Option<u64> {
    cfg.scenario.as_ref().map(|s| derive_seed(cfg.seed, tags::RISK, s.seed))
}

fn cell_risk(cfg: &SimConfig, truth: &SpatialDataset, released: &SpatialDataset) -> Result<Option<f64>> {
    let Some(scenario) = &cfg.scenario else {
        return Ok(None);
    };
    let mut sc = scenario.clone();
    sc.seed = risk_seed(cfg).expect("scenario present");
    Ok(Some(assess(released, truth, &sc)?.expected_correct_rate))
}

/// Disclosure risk of replicate 1 for every (kernel, λ) cell, in config order.
pub fn cell_risks(cfg: &SimConfig) -> Result<Vec<(String, f64, Option<f64>)>> {
    let s = setup(cfg, 1)?;
    let truth = dataset(&s.locs, &s.x, &s.outcomes[0]);
    let cells: Vec<(KernelFamily, f64)> = cfg
        .kernels
        .iter()
        .flat_map(|k| cfg.lambdas.iter().map(move |l| (*k, *l)))
        .collect();
    cells
        .par_iter()
        .map(|(k, l)| {
            let op = build_operator(&s.locs, k, *l)?;
            let masked = apply(&op, &truth)?;
            Ok((k.name().to_string(), *l, cell_risk(cfg, &truth, &masked.data)?))
        })
        .collect()
}

pub fn run_study(cfg: &SimConfig) -> Result<StudyResult> {
    let s = setup(cfg, cfg.replicates)?;
    let (_, true_beta) = cfg.coefficients();
    let z = normal_quantile((1.0 + cfg.level) / 2.0);
    let truth = dataset(&s.locs, &s.x, &s.outcomes[0]);

    let raw: Estimates = s
        .outcomes
        .par_iter()
        .map(|y| slope_fit(s.x.clone(), y.clone(), None))
        .collect();
    let mut rows = vec![summarize(BASELINE_NONE, 0.0, true_beta, z, &raw)];
    rows[0].risk = cell_risk(cfg, &truth, &truth)?;

    let aggregated: Estimates = s
        .outcomes
        .par_iter()
        .map(|y| {
            let agg = aggregate(&dataset(&s.locs, &s.x, y), &cfg.grid).ok()?;
            let xbar = agg.cells.iter().map(|c| c.x_bar[0]).collect();
            let yplus = agg.cells.iter().map(|c| c.y_plus).collect();
            let offset = agg.cells.iter().map(|c| (c.n as f64).ln()).collect();
            slope_fit(xbar, yplus, Some(offset))
        })
        .collect();
    rows.push(summarize(BASELINE_AGGREGATED, 0.0, true_beta, z, &aggregated));

    for kernel in &cfg.kernels {
        for &lambda in &cfg.lambdas {
            let op = build_operator(&s.locs, kernel, lambda)?;
            let x_masked = op.smooth(&s.x);
            let est: Estimates = s
                .outcomes
                .par_iter()
                .map(|y| slope_fit(x_masked.clone(), op.smooth(y), None))
                .collect();
            let mut row = summarize(kernel.name(), lambda, true_beta, z, &est);
            let masked = apply(&op, &truth)?;
            row.risk = cell_risk(cfg, &truth, &masked.data)?;
            rows.push(row);
        }
    }

    let metadata = RunMetadata {
        version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.seed,
        location_seed: derive_seed(cfg.seed, tags::LOCATIONS, 0),
        outcome_seeds: (0..cfg.replicates as u64)
            .map(|r| derive_seed(cfg.seed, tags::OUTCOMES, r))
            .collect(),
        risk_seed: risk_seed(cfg),
        n_locations: cfg.n_locations,
        replicates: cfg.replicates,
        exclusions: rows
            .iter()
            .filter(|r| r.excluded > 0)
            .map(|r| (r.kernel.clone(), r.lambda, r.excluded))
            .collect(),
        risk_note: "risk is evaluated on the masked data of replicate 1 only".into(),
    };
    Ok(StudyResult { rows, metadata })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub kernel: String,
    pub lambda: f64,
    pub mse: f64,
    pub risk: Option<f64>,
}

/// (MSE, risk) per masked cell, baselines dropped, in study order.
pub fn profile(result: &StudyResult) -> Vec<ProfileRow> {
    profile_rows(&result.rows)
}

pub fn profile_rows(rows: &[StudyRow]) -> Vec<ProfileRow> {
    rows.iter()
        .filter(|r| !r.is_baseline())
        .map(|r| ProfileRow {
            kernel: r.kernel.clone(),
            lambda: r.lambda,
            mse: r.mse,
            risk: r.risk,
        })
        .collect()
}

pub fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(reader);
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}
