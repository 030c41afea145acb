//! First-order bias of a Poisson fit on masked data. Exponential-decay kernels
//! are flat at λ = 0 and give a zero first-order term; a polynomial-decay
//! kernel does not.

use nalgebra::DVector;
use smoothmask::sim::{exposure, sample_locations};
use smoothmask::{first_order_bias, function_bias, BiasOptions, ExposureField, Family, GlmData, KernelFamily, PolynomialDecay, Result};

pub fn run_example() -> Result<()> {
    let field = ExposureField::example1();
    let locs = sample_locations(60, 3);
    let x: Vec<f64> = locs.iter().map(|s| exposure(&field, s)).collect();
    let beta = DVector::from_vec(vec![-2.0, 0.6]);
    let y: Vec<f64> = x.iter().map(|xi| (beta[0] + beta[1] * xi).exp()).collect();
    let design = GlmData::new(vec!["x".into()], &[x], y, true)?;
    let opts = BiasOptions::default();

    let ring = first_order_bias(&design, &locs, &KernelFamily::ring(), Family::PoissonLog, &beta, &opts)?;
    println!("ring:             β'(0) = {:?}", ring.beta_prime0);

    let poly = first_order_bias(&design, &locs, &PolynomialDecay, Family::PoissonLog, &beta, &opts)?;
    println!("polynomial-decay: β'(0) = {:?}", poly.beta_prime0);
    for lambda in [0.001, 0.01, 0.05] {
        let slope_shift = function_bias(&poly.beta_prime0, &[0.0, 1.0], lambda)?;
        println!("  λ={lambda:<6} first-order slope bias ≈ {slope_shift:+.5}");
    }
    println!("note: {}", poly.caveat);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
