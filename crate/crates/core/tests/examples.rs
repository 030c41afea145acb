//! Every example runs to completion.

#[path = "../examples/mask_dataset.rs"]
mod mask_dataset;
#[path = "../examples/odds_ratio.rs"]
mod odds_ratio;
#[path = "../examples/disclosure_risk.rs"]
mod disclosure_risk;
#[path = "../examples/first_order_bias.rs"]
mod first_order_bias;
#[path = "../examples/simulation_study.rs"]
mod simulation_study;

#[test]
fn mask_dataset_runs() {
    mask_dataset::run_example().unwrap();
}

#[test]
fn odds_ratio_runs() {
    odds_ratio::run_example().unwrap();
}

#[test]
fn disclosure_risk_runs() {
    disclosure_risk::run_example().unwrap();
}

#[test]
fn first_order_bias_runs() {
    first_order_bias::run_example().unwrap();
}

#[test]
fn simulation_study_runs() {
    simulation_study::run_example().unwrap();
}
