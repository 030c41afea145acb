//! How the intruder's expected correct-match rate falls as λ grows.

use smoothmask::sim::{exposure, sample_locations, simulate_outcomes};
use smoothmask::{apply, build_operator, expected_correct_rate, ExposureField, IntruderScenario, KernelFamily, Record, Result, SpatialDataset};

pub fn run_example() -> Result<()> {
    let field = ExposureField::example1();
    let locs = sample_locations(200, 5);
    let x: Vec<f64> = locs.iter().map(|s| exposure(&field, s)).collect();
    let y = simulate_outcomes(&x, -25.0, 4.0, 5, 0)?;
    let records = locs
        .iter()
        .enumerate()
        .map(|(i, &loc)| Record {
            id: format!("p{i}"),
            loc,
            x: vec![x[i]],
            y: y[i],
            n: None,
        })
        .collect();
    let truth = SpatialDataset::new(vec!["x".into()], "y", records)?;
    let scenario = IntruderScenario {
        seed: 1,
        ..IntruderScenario::new(&["x"], &["y"])
    };

    println!("{:>6} {:>10} {:>10}", "λ", "euclidean", "ring");
    for lambda in [0.0, 0.02, 0.1, 0.5, 1.0] {
        let mut rates = Vec::new();
        for kernel in [KernelFamily::Euclidean, KernelFamily::ring()] {
            let released = apply(&build_operator(&truth.locations(), &kernel, lambda)?, &truth)?.data;
            rates.push(expected_correct_rate(&released, &truth, &scenario)?);
        }
        println!("{lambda:>6} {:>10.3} {:>10.3}", rates[0], rates[1]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
