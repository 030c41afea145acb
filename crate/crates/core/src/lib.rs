//! Spatial smoothing masks for statistical disclosure limitation.
//!
//! Masked data are weighted averages `Z* = A_λ Z` of the original records,
//! where the kernel family sets the form of masking and `λ` its degree.
//! The crate measures what the masking costs (bias and MSE of GLM estimates,
//! naive versus resampling intervals) and what it protects (the expected rate
//! of correct record matches by an intruder).

// `!(v >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bias;
pub mod chart;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod glm;
pub mod kernels;
pub mod masking;
pub mod risk;
pub mod seed;
pub mod sim;

pub use dataset::{aggregate, load_csv, read_csv, write_csv, AggregatedDataset, CsvSchema, GridSpec, Location, Record, SpatialDataset};
pub use error::{Error, Result};
pub use kernels::{eval_weight, BlockRegion, KernelFamily, PointSource, PolynomialDecay, WeightFunction};
pub use masking::{apply, build_operator, compose_two_step, MaskedDataset, MaskingOperator};
pub use glm::{
    bootstrap_ci, fit, naive_ci, population_odds_ratio, BootstrapConfig, Family, FitResult, GlmData, GroupContrast,
    ModelSpec, OddsRatioResult, Resampling, Statistic,
};
pub use risk::{assess, expected_correct_rate, IntruderScenario, RiskReport};
pub use bias::{first_order_bias, function_bias, r0_matrix, BiasOptions, BiasReport};
pub use sim::{exposure, run_study, sample_locations, simulate_outcomes, ExposureField, SimConfig, StudyResult, StudyRow};
