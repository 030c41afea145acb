//! A small replicate study comparing the matched ring kernel with the
//! Euclidean kernel, summarized as a table and a risk/MSE trade-off chart.

use smoothmask::chart::{chart_for, render_svg, ChartKind, PlotRow};
use smoothmask::sim::profile;
use smoothmask::{run_study, ExposureField, Result, SimConfig};

pub fn run_example() -> Result<()> {
    let cfg = SimConfig {
        n_locations: 120,
        replicates: 30,
        lambdas: vec![0.02, 0.1, 0.5],
        ..SimConfig::desk(ExposureField::example1())
    };
    let result = run_study(&cfg)?;
    println!("{:<12} {:>6} {:>9} {:>9} {:>7}", "kernel", "λ", "bias", "mse", "risk");
    for r in &result.rows {
        let risk = r.risk.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{:<12} {:>6} {:>9.4} {:>9.4} {:>7}", r.kernel, r.lambda, r.bias, r.mse, risk);
    }
    println!("{} profile points", profile(&result).len());

    let rows: Vec<PlotRow> = result.rows.iter().map(PlotRow::from).collect();
    let svg = render_svg(&chart_for(&rows, ChartKind::Tradeoff)?)?;
    let path = std::env::temp_dir().join("smoothmask_tradeoff.svg");
    std::fs::write(&path, svg).map_err(|e| smoothmask::Error::Io { path: path.clone(), source: e })?;
    println!("chart written to {}", path.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
