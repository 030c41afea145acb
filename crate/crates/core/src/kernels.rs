//! Weight functions `W_λ(u, s)` that set the form of masking.
//!
//! Every built-in family has the shape `exp(-d(u, s) / λ)` for an internal,
//! family-specific distance `d ≥ 0` (the ring-block family additionally zeroes
//! weights across the block boundary). At `λ = 0` the weight is the limit of
//! that expression: 1 when `d = 0`, otherwise 0.

use serde::{Deserialize, Serialize};

use crate::dataset::Location;
use crate::error::{Error, Result};

/// Source of the exposure field, with the direction used by directional kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointSource {
    pub loc: Location,
    pub direction: [f64; 2],
}

impl Default for PointSource {
    fn default() -> Self {
        PointSource {
            loc: Location::ORIGIN,
            direction: [1.0, 0.0],
        }
    }
}

impl PointSource {
    pub fn at(loc: Location) -> Self {
        PointSource {
            loc,
            ..PointSource::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let [d1, d2] = self.direction;
        let norm = (d1 * d1 + d2 * d2).sqrt();
        if !self.loc.is_finite() || !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("point source {self:?} needs finite location and unit direction")));
        }
        Ok(())
    }
}

/// Euclidean distance from `s` to the source.
pub fn radial_distance(s: &Location, source: &PointSource) -> f64 {
    s.distance(&source.loc)
}

/// Cosine of the angle between `s - source` and the source direction; 1 at the source itself.
pub fn direction_cosine(s: &Location, source: &PointSource) -> f64 {
    let v = [s.s1 - source.loc.s1, s.s2 - source.loc.s2];
    let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if norm == 0.0 {
        return 1.0;
    }
    ((v[0] * source.direction[0] + v[1] * source.direction[1]) / norm).clamp(-1.0, 1.0)
}

/// The area that receives exposure: `s₁ ≤ threshold_x` or `cos ϑ ≤ threshold_cos`,
/// with `ϑ` measured from the positive first axis at the source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockRegion {
    pub threshold_x: f64,
    pub threshold_cos: f64,
    pub source: PointSource,
}

impl Default for BlockRegion {
    fn default() -> Self {
        BlockRegion {
            threshold_x: 0.4,
            threshold_cos: 0.625,
            source: PointSource::default(),
        }
    }
}

impl BlockRegion {
    /// 1 when `s` lies in the unblocked area, else 0.
    pub fn indicator(&self, s: &Location) -> u8 {
        let axis = PointSource {
            loc: self.source.loc,
            direction: [1.0, 0.0],
        };
        let cos = direction_cosine(s, &axis);
        u8::from(s.s1 <= self.threshold_x || cos <= self.threshold_cos)
    }

    fn validate(&self) -> Result<()> {
        if !self.threshold_x.is_finite() || !self.threshold_cos.is_finite() {
            return Err(Error::invalid("block region thresholds must be finite"));
        }
        self.source.validate()
    }
}

fn default_angle_scale() -> f64 {
    2.0
}

/// Built-in kernel families; serialized as `{"family": ..., "params": {...}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `exp(-‖s - u‖² / λ)`
    Euclidean,
    /// `exp(-|r_s² - r_u²| / λ)`
    Ring {
        #[serde(default)]
        source: PointSource,
    },
    /// `exp(-(|r_s² - r_u²| + c·|cos θ_s - cos θ_u|) / λ)`
    RingAngle {
        #[serde(default)]
        source: PointSource,
        #[serde(default = "default_angle_scale")]
        angle_scale: f64,
    },
    /// Ring weight restricted to pairs on the same side of the block boundary.
    RingBlock {
        #[serde(default)]
        region: BlockRegion,
    },
    /// `exp(-(s - u)ᵀ Σ_λ⁻¹ (s - u) / 2)` with `Σ_λ = λ·[[σ₁², ρσ₁σ₂], [ρσ₁σ₂, σ₂²]]`.
    BivariateNormal { sigma1_sq: f64, sigma2_sq: f64, rho: f64 },
}

impl KernelFamily {
    pub fn ring() -> Self {
        KernelFamily::Ring {
            source: PointSource::default(),
        }
    }

    pub fn ring_angle() -> Self {
        KernelFamily::RingAngle {
            source: PointSource::default(),
            angle_scale: 2.0,
        }
    }

    pub fn ring_block() -> Self {
        KernelFamily::RingBlock {
            region: BlockRegion::default(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Euclidean => "euclidean",
            KernelFamily::Ring { .. } => "ring",
            KernelFamily::RingAngle { .. } => "ring-angle",
            KernelFamily::RingBlock { .. } => "ring-block",
            KernelFamily::BivariateNormal { .. } => "bivariate-normal",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelFamily::Euclidean => Ok(()),
            KernelFamily::Ring { source } => source.validate(),
            KernelFamily::RingAngle { source, angle_scale } => {
                if !(angle_scale.is_finite() && *angle_scale >= 0.0) {
                    return Err(Error::invalid("angle_scale must be finite and non-negative"));
                }
                source.validate()
            }
            KernelFamily::RingBlock { region } => region.validate(),
            KernelFamily::BivariateNormal {
                sigma1_sq,
                sigma2_sq,
                rho,
            } => {
                let ok = sigma1_sq.is_finite()
                    && sigma2_sq.is_finite()
                    && *sigma1_sq > 0.0
                    && *sigma2_sq > 0.0
                    && rho.is_finite()
                    && rho.abs() < 1.0;
                if ok {
                    Ok(())
                } else {
                    Err(Error::invalid("bivariate-normal needs σ₁², σ₂² > 0 and |ρ| < 1"))
                }
            }
        }
    }

    /// Internal distance `d(u, s)`; `None` when the pair always gets zero weight.
    pub fn internal_distance(&self, u: &Location, s: &Location) -> Option<f64> {
        let ring = |source: &PointSource| {
            (s.squared_distance(&source.loc) - u.squared_distance(&source.loc)).abs()
        };
        match self {
            KernelFamily::Euclidean => Some(s.squared_distance(u)),
            KernelFamily::Ring { source } => Some(ring(source)),
            KernelFamily::RingAngle { source, angle_scale } => {
                let dcos = (direction_cosine(s, source) - direction_cosine(u, source)).abs();
                Some(ring(source) + angle_scale * dcos)
            }
            KernelFamily::RingBlock { region } => {
                (region.indicator(s) == region.indicator(u)).then(|| ring(&region.source))
            }
            KernelFamily::BivariateNormal {
                sigma1_sq,
                sigma2_sq,
                rho,
            } => {
                let (d1, d2) = (s.s1 - u.s1, s.s2 - u.s2);
                let det = sigma1_sq * sigma2_sq * (1.0 - rho * rho);
                let cov12 = rho * (sigma1_sq * sigma2_sq).sqrt();
                let q = (sigma2_sq * d1 * d1 - 2.0 * cov12 * d1 * d2 + sigma1_sq * d2 * d2) / det;
                Some(q / 2.0)
            }
        }
    }
}

/// A weight function usable for masking. Implemented by [`KernelFamily`]; other
/// implementations can be supplied for experiments (e.g. polynomial decay).
pub trait WeightFunction: Sync {
    /// Weight for `λ ≥ 0`; callers check the sign of `λ`.
    fn weight(&self, u: &Location, s: &Location, lambda: f64) -> f64;

    /// True when the derivative of the normalized weights in `λ` is exactly zero at `λ = 0`.
    fn flat_at_zero(&self) -> bool {
        false
    }

    fn describe(&self) -> String;
}

impl WeightFunction for KernelFamily {
    fn weight(&self, u: &Location, s: &Location, lambda: f64) -> f64 {
        match self.internal_distance(u, s) {
            None => 0.0,
            Some(d) if lambda == 0.0 => {
                if d == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Some(d) => (-d / lambda).exp(),
        }
    }

    // exp(-d/λ) and all of its λ-derivatives vanish as λ ↓ 0 for d > 0.
    fn flat_at_zero(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        serde_json::to_string(self).expect("kernel serializes")
    }
}

/// `W_λ(u, s) = λ / (λ + ‖u - s‖)`: decays polynomially, so unlike the exponential
/// families its normalized weights move at first order in `λ`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PolynomialDecay;

impl WeightFunction for PolynomialDecay {
    fn weight(&self, u: &Location, s: &Location, lambda: f64) -> f64 {
        let d = u.distance(s);
        if d == 0.0 {
            1.0
        } else {
            lambda / (lambda + d)
        }
    }

    fn describe(&self) -> String {
        "polynomial-decay".into()
    }
}

pub fn eval_weight(kernel: &KernelFamily, u: &Location, s: &Location, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("smoothness λ must be ≥ 0, got {lambda}")));
    }
    Ok(kernel.weight(u, s, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E_INV: f64 = 0.36787944117144233;

    fn all_families() -> Vec<KernelFamily> {
        vec![
            KernelFamily::Euclidean,
            KernelFamily::ring(),
            KernelFamily::ring_angle(),
            KernelFamily::ring_block(),
            KernelFamily::BivariateNormal {
                sigma1_sq: 0.7,
                sigma2_sq: 1.3,
                rho: -0.5,
            },
        ]
    }

    #[test]
    fn radial_distance_cases() {
        let src = PointSource::at(Location::new(0.5, -1.0));
        assert_eq!(radial_distance(&Location::new(0.5, -1.0), &src), 0.0);
        assert_eq!(radial_distance(&Location::new(3.5, 3.0), &src), 5.0);
        let s = Location::new(-0.3, 0.71);
        let direct = ((-0.3f64 - 0.5).powi(2) + (0.71f64 + 1.0).powi(2)).sqrt();
        assert!((radial_distance(&s, &src) - direct).abs() < 1e-15);
    }

    #[test]
    fn direction_cosine_cases() {
        let src = PointSource {
            loc: Location::new(0.2, 0.2),
            direction: [0.6, 0.8],
        };
        assert!((direction_cosine(&Location::new(0.8, 1.0), &src) - 1.0).abs() < 1e-15);
        assert!((direction_cosine(&Location::new(-0.4, -0.6), &src) + 1.0).abs() < 1e-15);
        assert!(direction_cosine(&Location::new(1.0, -0.4), &src).abs() < 1e-15);
        assert_eq!(direction_cosine(&src.loc, &src), 1.0);
    }

    #[test]
    fn block_indicator_cases() {
        let r = BlockRegion::default();
        assert_eq!(r.indicator(&Location::new(-0.9, 0.3)), 1);
        assert_eq!(r.indicator(&Location::new(0.8, 0.0)), 0);
        assert_eq!(r.indicator(&Location::new(0.8, 0.9)), 0);
        assert_eq!(r.indicator(&Location::new(0.5, 0.9)), 1);
    }

    #[test]
    fn block_indicator_matches_inequalities_on_grid() {
        let r = BlockRegion::default();
        for i in 0..100 {
            for j in 0..100 {
                let s = Location::new(-1.0 + 2.0 * (i as f64 + 0.5) / 100.0, -1.0 + 2.0 * (j as f64 + 0.5) / 100.0);
                let cos = s.s1 / (s.s1 * s.s1 + s.s2 * s.s2).sqrt();
                let expect = u8::from(s.s1 <= 0.4 || cos <= 0.625);
                assert_eq!(r.indicator(&s), expect, "{s:?}");
            }
        }
    }

    #[test]
    fn weight_formula_values() {
        let u = Location::new(0.1, 0.2);
        for k in all_families() {
            assert_eq!(eval_weight(&k, &u, &u, 0.3).unwrap(), 1.0, "{}", k.name());
        }
        // ‖s-u‖² = 0.5
        let s = Location::new(0.6, 0.7);
        let w = eval_weight(&KernelFamily::Euclidean, &u, &s, 0.5).unwrap();
        assert!((w - E_INV).abs() < 1e-15);
        // equal radii, distinct points
        let a = Location::new(0.0, 1.0);
        let b = Location::new(-1.0, 0.0);
        assert_eq!(eval_weight(&KernelFamily::ring(), &a, &b, 0.5).unwrap(), 1.0);
        assert_eq!(eval_weight(&KernelFamily::ring(), &a, &b, 0.0).unwrap(), 1.0);
        // bivariate normal, identity covariance, ‖s-u‖² = 2λ
        let bvn = KernelFamily::BivariateNormal {
            sigma1_sq: 1.0,
            sigma2_sq: 1.0,
            rho: 0.0,
        };
        let lambda: f64 = 0.35;
        let s = Location::new(u.s1 + (2.0 * lambda).sqrt(), u.s2);
        assert!((eval_weight(&bvn, &u, &s, lambda).unwrap() - E_INV).abs() < 1e-14);
    }

    #[test]
    fn ring_angle_and_block_formulas() {
        let ra = KernelFamily::ring_angle();
        let u = Location::new(0.3, 0.4); // r² = 0.25, cos = 0.6
        let s = Location::new(0.0, -0.8); // r² = 0.64, cos = 0
        let expect = (-(0.39 + 2.0 * 0.6) / 0.7f64).exp();
        assert!((eval_weight(&ra, &u, &s, 0.7).unwrap() - expect).abs() < 1e-14);

        let rb = KernelFamily::ring_block();
        let blocked = Location::new(0.8, 0.1);
        let open = Location::new(-0.8, 0.1);
        assert_eq!(eval_weight(&rb, &blocked, &open, 5.0).unwrap(), 0.0);
        assert_eq!(eval_weight(&rb, &open, &Location::new(0.1, 0.8), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn negative_lambda_is_domain_error() {
        let u = Location::ORIGIN;
        assert!(matches!(
            eval_weight(&KernelFamily::Euclidean, &u, &u, -1e-3),
            Err(Error::Domain(_))
        ));
        assert!(eval_weight(&KernelFamily::Euclidean, &u, &u, f64::NAN).is_err());
    }

    #[test]
    fn json_shape() {
        let k: KernelFamily = serde_json::from_str(r#"{"family":"euclidean"}"#).unwrap();
        assert_eq!(k, KernelFamily::Euclidean);
        let k: KernelFamily = serde_json::from_str(r#"{"family":"ring-angle","params":{}}"#).unwrap();
        assert_eq!(k, KernelFamily::ring_angle());
        let k: KernelFamily =
            serde_json::from_str(r#"{"family":"bivariate-normal","params":{"sigma1_sq":1,"sigma2_sq":2,"rho":0.5}}"#)
                .unwrap();
        assert!(k.validate().is_ok());
        for k in all_families() {
            let back: KernelFamily = serde_json::from_str(&serde_json::to_string(&k).unwrap()).unwrap();
            assert_eq!(back, k);
        }
        let bad = KernelFamily::BivariateNormal {
            sigma1_sq: 1.0,
            sigma2_sq: 1.0,
            rho: 1.0,
        };
        assert!(bad.validate().is_err());
    }

    fn loc() -> impl Strategy<Value = Location> {
        (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| Location::new(a, b))
    }

    proptest! {
        #[test]
        fn weights_bounded_and_symmetric(u in loc(), s in loc(), lambda in 0.0..5.0f64, k in 0usize..5) {
            let k = all_families()[k];
            let w = eval_weight(&k, &u, &s, lambda).unwrap();
            prop_assert!((0.0..=1.0).contains(&w));
            prop_assert_eq!(w, eval_weight(&k, &s, &u, lambda).unwrap());
        }

        #[test]
        fn zero_lambda_is_the_limit(u in loc(), s in loc(), k in 0usize..5) {
            let k = all_families()[k];
            if let Some(d) = k.internal_distance(&u, &s) {
                prop_assume!(d >= 1e-3);
            }
            let w0 = eval_weight(&k, &u, &s, 0.0).unwrap();
            let w_small = eval_weight(&k, &u, &s, 1e-8).unwrap();
            prop_assert!((w0 - w_small).abs() <= 1e-6);
            prop_assert_eq!(w0, 0.0);
            // λ → ∞ approaches 1 unless the pair is structurally excluded
            let w_big = eval_weight(&k, &u, &s, 1e12).unwrap();
            if k.internal_distance(&u, &s).is_some() {
                prop_assert!(w_big > 1.0 - 1e-9);
            }
        }
    }
}
