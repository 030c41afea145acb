//! Identification disclosure risk of a masked release.
//!
//! For an intruder record `t`, the match probability of released record `j` is
//! proportional to `Pr(Ap_j | t) · Pr(U_j | Ap_j) · (1/N) · 1`. The last factor
//! (the joint probability of all other records) is fixed at 1, which makes the
//! reported risk an upper bound.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SpatialDataset;
use crate::error::{Error, Result};
use crate::seed::{rng_for, tags};

const TIE_TOLERANCE: f64 = 1e-9;

fn default_draws() -> usize {
    100
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntruderScenario {
    /// Columns the intruder knows.
    pub ap_columns: Vec<String>,
    /// Columns the intruder seeks.
    #[serde(default)]
    pub u_columns: Vec<String>,
    /// Ids of the truth records held by the intruder; empty means all of them.
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default = "default_draws")]
    pub mc_draws: usize,
    #[serde(default)]
    pub seed: u64,
    /// Scale every column by its standard deviation in the release before taking norms.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

impl IntruderScenario {
    pub fn new(ap_columns: &[&str], u_columns: &[&str]) -> Self {
        IntruderScenario {
            ap_columns: ap_columns.iter().map(|s| s.to_string()).collect(),
            u_columns: u_columns.iter().map(|s| s.to_string()).collect(),
            targets: Vec::new(),
            mc_draws: default_draws(),
            seed: 0,
            standardize: true,
        }
    }

    pub fn validate(&self, released: &SpatialDataset) -> Result<()> {
        if self.mc_draws == 0 {
            return Err(Error::invalid("mc_draws must be at least 1"));
        }
        for c in self.ap_columns.iter().chain(&self.u_columns) {
            if !released.has_column(c) {
                return Err(Error::invalid(format!("scenario column '{c}' is not released")));
            }
        }
        if let Some(c) = self.ap_columns.iter().find(|c| self.u_columns.contains(c)) {
            return Err(Error::invalid(format!("column '{c}' is in both ap_columns and u_columns")));
        }
        Ok(())
    }
}

/// `1 - d_j / max_k d_k` for every released record; `None` when all distances are zero.
pub fn ap_components(released: &[Vec<f64>], t: &[f64]) -> Option<Vec<f64>> {
    let d: Vec<f64> = released.iter().map(|z| euclid(z, t)).collect();
    let max = d.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    Some(d.iter().map(|v| 1.0 - v / max).collect())
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn columns_of(data: &SpatialDataset, names: &[String], scale: &[f64]) -> Vec<Vec<f64>> {
    let cols: Vec<Vec<f64>> = names
        .iter()
        .zip(scale)
        .map(|(c, s)| data.column(c).expect("validated column").iter().map(|v| v / s).collect())
        .collect();
    (0..data.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

fn column_scales(data: &SpatialDataset, names: &[String], standardize: bool) -> Vec<f64> {
    names
        .iter()
        .map(|c| {
            if !standardize {
                return 1.0;
            }
            let v = data.column(c).expect("validated column");
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

/// Linear regression of each released U column on the released Ap columns.
#[derive(Debug, Clone, PartialEq)]
pub struct URegression {
    /// Per record, the predicted U vector at its released Ap values.
    pub predictions: Vec<Vec<f64>>,
    /// Residual standard deviation per U column.
    pub residual_sd: Vec<f64>,
}

impl URegression {
    pub fn fit(ap: &[Vec<f64>], u: &[Vec<f64>]) -> Result<Self> {
        let n = ap.len();
        let du = u.first().map_or(0, Vec::len);
        let p = 1 + ap.first().map_or(0, Vec::len);
        let x = DMatrix::from_fn(n, p, |i, k| if k == 0 { 1.0 } else { ap[i][k - 1] });
        let svd = x.clone().svd(true, true);
        let mut predictions = vec![vec![0.0; du]; n];
        let mut residual_sd = Vec::with_capacity(du);
        for c in 0..du {
            let y = DVector::from_iterator(n, u.iter().map(|r| r[c]));
            let coef = svd
                .solve(&y, 1e-12)
                .map_err(|e| Error::Numerical(format!("U regression: {e}")))?;
            let fitted = &x * coef;
            let rss = (&y - &fitted).norm_squared();
            let df = n.saturating_sub(p).max(1) as f64;
            residual_sd.push((rss / df).sqrt());
            for i in 0..n {
                predictions[i][c] = fitted[i];
            }
        }
        Ok(URegression { predictions, residual_sd })
    }
}

fn u_score(released_u: &[Vec<f64>], j: usize, draw: &[f64]) -> f64 {
    let max = released_u.iter().map(|z| euclid(z, draw)).fold(0.0, f64::max);
    if max <= 0.0 {
        return 1.0;
    }
    (1.0 - euclid(&released_u[j], draw) / max).clamp(0.0, 1.0)
}

/// Monte Carlo estimate of `∫ Pr(U_λj | U_j) Pr(U_j | Ap_λj) dU_j` with draws from the
/// regression's normal predictive distribution; a point mass when the residual variance is zero.
pub fn u_component(j: usize, released_u: &[Vec<f64>], regression: &URegression, draws: usize, seed: u64) -> f64 {
    if released_u.first().is_none_or(|r| r.is_empty()) {
        return 1.0;
    }
    let mean = &regression.predictions[j];
    if regression.residual_sd.iter().all(|s| *s == 0.0) {
        return u_score(released_u, j, mean);
    }
    let mut rng = rng_for(seed, tags::RISK, j as u64);
    let mut draw = vec![0.0; mean.len()];
    let mut total = 0.0;
    for _ in 0..draws {
        for (c, d) in draw.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *d = mean[c] + regression.residual_sd[c] * e;
        }
        total += u_score(released_u, j, &draw);
    }
    total / draws as f64
}

/// `p_j ∝ ap_j · u_j / N`, uniform when every product is zero.
pub fn match_probabilities(ap: Option<&[f64]>, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let prior = 1.0 / n as f64;
    let w: Vec<f64> = (0..n)
        .map(|j| ap.map_or(1.0, |a| a[j]) * u[j] * prior * 1.0)
        .collect();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return vec![prior; n];
    }
    w.iter().map(|v| v / total).collect()
}

/// Indices whose probability ties the maximum within a relative tolerance.
pub fn argmax_set(p: &[f64]) -> Vec<usize> {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    p.iter()
        .enumerate()
        .filter(|(_, v)| **v >= max - TIE_TOLERANCE * max.abs())
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRisk {
    pub id: String,
    pub probabilities: Vec<f64>,
    /// Number of released records sharing the largest probability.
    pub m: usize,
    pub correct_in_argmax: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub per_target: Vec<TargetRisk>,
    pub expected_correct_rate: f64,
    /// The joint probability of the other records is taken as 1, so the rate is an upper bound.
    pub conservative: bool,
    pub mc_draws: usize,
    pub standardized: bool,
}

/// Scores every intruder record in `truth` against the release.
pub fn assess(released: &SpatialDataset, truth: &SpatialDataset, scenario: &IntruderScenario) -> Result<RiskReport> {
    scenario.validate(released)?;
    scenario.validate(truth)?;
    let ap_scale = column_scales(released, &scenario.ap_columns, scenario.standardize);
    let u_scale = column_scales(released, &scenario.u_columns, scenario.standardize);
    let released_ap = columns_of(released, &scenario.ap_columns, &ap_scale);
    let released_u = columns_of(released, &scenario.u_columns, &u_scale);
    let truth_ap = columns_of(truth, &scenario.ap_columns, &ap_scale);

    let n = released.len();
    let u: Vec<f64> = if scenario.u_columns.is_empty() {
        vec![1.0; n]
    } else {
        let regression = URegression::fit(&released_ap, &released_u)?;
        (0..n)
            .into_par_iter()
            .map(|j| u_component(j, &released_u, &regression, scenario.mc_draws, scenario.seed))
            .collect()
    };

    let targets: Vec<usize> = if scenario.targets.is_empty() {
        (0..truth.len()).collect()
    } else {
        scenario
            .targets
            .iter()
            .map(|id| truth.index_of_id(id).ok_or_else(|| Error::invalid(format!("target '{id}' not in truth data"))))
            .collect::<Result<_>>()?
    };
    let per_target = targets
        .par_iter()
        .map(|&ti| {
            let id = &truth.records()[ti].id;
            let correct = released
                .index_of_id(id)
                .ok_or_else(|| Error::invalid(format!("truth record '{id}' has no released counterpart")))?;
            let ap = ap_components(&released_ap, &truth_ap[ti]);
            let probabilities = match_probabilities(ap.as_deref(), &u);
            let top = argmax_set(&probabilities);
            Ok(TargetRisk {
                id: id.clone(),
                m: top.len(),
                correct_in_argmax: top.contains(&correct),
                probabilities,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rate = per_target
        .iter()
        .map(|t| if t.correct_in_argmax { 1.0 / t.m as f64 } else { 0.0 })
        .sum::<f64>()
        / per_target.len() as f64;
    Ok(RiskReport {
        per_target,
        expected_correct_rate: rate,
        conservative: true,
        mc_draws: scenario.mc_draws,
        standardized: scenario.standardize,
    })
}

/// Dataset-level expected share of correct matches.
pub fn expected_correct_rate(released: &SpatialDataset, truth: &SpatialDataset, scenario: &IntruderScenario) -> Result<f64> {
    Ok(assess(released, truth, scenario)?.expected_correct_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Location, Record};
    use crate::kernels::KernelFamily;
    use crate::masking::{apply, build_operator};
    use proptest::prelude::*;

    fn data(rows: &[(f64, f64, f64)]) -> SpatialDataset {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, &(s, x, y))| Record {
                id: format!("r{i}"),
                loc: Location::new(s, 0.1 * i as f64),
                x: vec![x],
                y,
                n: None,
            })
            .collect();
        SpatialDataset::new(vec!["x".into()], "y", records).unwrap()
    }

    #[test]
    fn ap_formula_points() {
        let released = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(ap_components(&released, &[0.0]).unwrap(), vec![1.0, 0.5, 0.0]);
        assert!(ap_components(&[vec![3.0], vec![3.0]], &[3.0]).is_none());
    }

    #[test]
    fn empty_u_is_vacuous() {
        let reg = URegression {
            predictions: vec![vec![]; 2],
            residual_sd: vec![],
        };
        assert_eq!(u_component(0, &[vec![], vec![]], &reg, 10, 0), 1.0);
    }

    #[test]
    fn point_mass_at_own_value() {
        let released = vec![vec![1.0], vec![2.0], vec![4.0]];
        let reg = URegression {
            predictions: released.clone(),
            residual_sd: vec![0.0],
        };
        assert_eq!(u_component(1, &released, &reg, 1, 0), 1.0);
    }

    #[test]
    fn u_component_matches_quadrature() {
        let released = vec![vec![0.0], vec![0.7], vec![1.5], vec![3.0]];
        let (mean, sd) = (1.1, 0.6);
        let reg = URegression {
            predictions: vec![vec![mean]; 4],
            residual_sd: vec![sd],
        };
        let j = 1;
        let mc = u_component(j, &released, &reg, 100_000, 5);
        // trapezoid rule over ±10 sd against the normal density
        let steps = 200_000;
        let (lo, hi) = (mean - 10.0 * sd, mean + 10.0 * sd);
        let h = (hi - lo) / steps as f64;
        let integrand = |z: f64| {
            let d: Vec<f64> = released.iter().map(|r| (r[0] - z).abs()).collect();
            let max = d.iter().copied().fold(0.0, f64::max);
            let score = (1.0 - d[j] / max).max(0.0);
            let dens = (-(z - mean).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            score * dens
        };
        let mut quad = 0.5 * (integrand(lo) + integrand(hi));
        for k in 1..steps {
            quad += integrand(lo + k as f64 * h);
        }
        quad *= h;
        assert!((mc - quad).abs() < 0.01, "mc {mc} quad {quad}");
    }

    #[test]
    fn identity_release_with_empty_u_matches_everyone() {
        let d = data(&[(0.0, 1.0, 3.0), (0.5, 2.0, 1.0), (0.9, 3.5, 0.0), (1.0, -1.0, 2.0)]);
        let op = build_operator(&d.locations(), &KernelFamily::Euclidean, 0.0).unwrap();
        let m = apply(&op, &d).unwrap();
        let r = assess(&m.data, &d, &IntruderScenario::new(&["x"], &[])).unwrap();
        assert_eq!(r.expected_correct_rate, 1.0);
        // distances from x = 1 are (0, 1, 2.5, 2), so weights are 1 - d / 2.5
        let w = [1.0, 0.6, 0.0, 0.2];
        for (p, wi) in r.per_target[0].probabilities.iter().zip(w) {
            assert!((p - wi / 1.8).abs() < 1e-15);
        }
        assert_eq!(r.per_target[0].m, 1);
        assert!(r.conservative);

        let pair = data(&[(0.0, 1.0, 3.0), (0.5, 2.0, 1.0)]);
        let r = assess(&pair, &pair, &IntruderScenario::new(&["x"], &[])).unwrap();
        assert_eq!(r.per_target[0].probabilities, vec![1.0, 0.0]);
        assert_eq!(r.per_target[1].probabilities, vec![0.0, 1.0]);
    }

    #[test]
    fn identical_records_give_chance_rate() {
        let d = data(&[(0.0, 2.0, 1.0), (0.3, 2.0, 1.0), (0.6, 2.0, 1.0), (0.9, 2.0, 1.0), (1.2, 2.0, 1.0)]);
        let r = assess(&d, &d, &IntruderScenario::new(&["x"], &["y"])).unwrap();
        for t in &r.per_target {
            assert!(t.probabilities.iter().all(|p| (p - 0.2).abs() < 1e-15));
            assert_eq!(t.m, 5);
        }
        assert!((r.expected_correct_rate - 0.2).abs() < 1e-15);
    }

    #[test]
    fn three_record_hand_evaluation() {
        // released x = (1, 2, 4), y = (0, 3, 3); truth x for target r0 is 1.5
        let released = data(&[(0.0, 1.0, 0.0), (0.1, 2.0, 3.0), (0.2, 4.0, 3.0)]);
        let truth = data(&[(0.0, 1.5, 0.0), (0.1, 2.0, 3.0), (0.2, 4.0, 3.0)]);
        let mut sc = IntruderScenario::new(&["x"], &["y"]);
        sc.standardize = false;
        sc.targets = vec!["r0".into()];
        let r = assess(&released, &truth, &sc).unwrap();

        // Ap: distances (0.5, 0.5, 2.5) → 1 - d / 2.5
        let ap = [0.8, 0.8, 0.0];
        // U regression y ~ 1 + x by hand
        let xs = [1.0, 2.0, 4.0];
        let ys = [0.0, 3.0, 3.0];
        let (xm, ym) = (7.0 / 3.0, 2.0);
        let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let b = sxy / sxx;
        let a = ym - b * xm;
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
        let reg = URegression {
            predictions: xs.iter().map(|x| vec![a + b * x]).collect(),
            residual_sd: vec![(rss / 1.0).sqrt()],
        };
        let released_u: Vec<Vec<f64>> = ys.iter().map(|y| vec![*y]).collect();
        let u: Vec<f64> = (0..3).map(|j| u_component(j, &released_u, &reg, sc.mc_draws, sc.seed)).collect();
        let joint: Vec<f64> = (0..3).map(|j| ap[j] * u[j] * (1.0 / 3.0) * 1.0).collect();
        let total: f64 = joint.iter().sum();
        for (p, w) in r.per_target[0].probabilities.iter().zip(&joint) {
            assert!((p - w / total).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let rows: Vec<(f64, f64, f64)> = (0..30).map(|i| (i as f64 * 0.03, (i as f64 * 0.7).sin(), (i % 4) as f64)).collect();
        let d = data(&rows);
        let sc = IntruderScenario::new(&["x"], &["y"]);
        assert_eq!(assess(&d, &d, &sc).unwrap(), assess(&d, &d, &sc).unwrap());
    }

    #[test]
    fn scenario_validation() {
        let d = data(&[(0.0, 1.0, 0.0), (0.1, 2.0, 1.0)]);
        assert!(IntruderScenario::new(&["x"], &["x"]).validate(&d).is_err());
        assert!(IntruderScenario::new(&["z"], &[]).validate(&d).is_err());
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one_and_permute(
            xs in prop::collection::vec(-3.0f64..3.0, 3..12),
            shift in 1usize..11,
        ) {
            let rows: Vec<(f64, f64, f64)> = xs.iter().enumerate().map(|(i, x)| (i as f64, *x, x * x)).collect();
            let d = data(&rows);
            let sc = IntruderScenario::new(&["x"], &["y"]);
            let r = assess(&d, &d, &sc).unwrap();
            prop_assert!(r.expected_correct_rate >= 0.0 && r.expected_correct_rate <= 1.0);
            for t in &r.per_target {
                prop_assert!((t.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(t.probabilities.iter().all(|p| *p >= 0.0));
                prop_assert!(t.m >= 1);
            }
            // relabel by rotating record order; u draws are keyed by index, so compare without U
            let sc0 = IntruderScenario::new(&["x"], &[]);
            let base = assess(&d, &d, &sc0).unwrap();
            let n = rows.len();
            let k = shift % n;
            let rotated: Vec<usize> = (0..n).map(|i| (i + k) % n).collect();
            let recs: Vec<Record> = rotated.iter().map(|&i| d.records()[i].clone()).collect();
            let d2 = SpatialDataset::new(vec!["x".into()], "y", recs).unwrap();
            let r2 = assess(&d2, &d2, &sc0).unwrap();
            for (a, &i) in rotated.iter().enumerate() {
                for (b, &j) in rotated.iter().enumerate() {
                    prop_assert!((r2.per_target[a].probabilities[b] - base.per_target[i].probabilities[j]).abs() < 1e-12);
                }
            }
        }
    }
}
