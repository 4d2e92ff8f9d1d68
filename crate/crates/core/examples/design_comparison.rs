//! One PPS sample, three estimates of the population mean age: the naive
//! SRS mean, the design-based Hájek mean, and the cluster Bayesian bootstrap.
//!
//!     cargo run --release --example design_comparison

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scaled_bb::bootstrap::{estimate_mean, ScaledWeightMode};
use scaled_bb::data::{generate_synthetic_population, SyntheticSpec, AGE};
use scaled_bb::estimators::{design_mean, naive_mean, SingletonStrata};
use scaled_bb::simulate::{draw_pps_two_stage, SimulationDesign};

fn main() -> scaled_bb::Result<()> {
    let pop = generate_synthetic_population(&SyntheticSpec::default())?;
    let truth = pop.mean_of(AGE)?;
    let design = SimulationDesign::uniform(&pop, 20, AGE);
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    println!("population mean age {truth:.3}");
    println!("{:>7} {:>8} {:>8} {:>18}", "sample", "method", "estimate", "interval / se");
    for k in 1..=5 {
        let sample = draw_pps_two_stage(&pop, &design, &mut rng)?;
        let naive = naive_mean(&sample, AGE, 0.95)?;
        let dsgn = design_mean(&sample, AGE, 0.95, SingletonStrata::Error)?;
        let bb = estimate_mean(&sample, AGE, ScaledWeightMode::ProductNormalized, 1000, &mut rng)?;
        for (name, est, lo, hi, se) in [
            ("naive", naive.value, naive.ci_lower, naive.ci_upper, naive.std_error),
            ("design", dsgn.value, dsgn.ci_lower, dsgn.ci_upper, dsgn.std_error),
            ("bb", bb.mean, bb.ci_lower, bb.ci_upper, bb.sd),
        ] {
            println!("{k:>7} {name:>8} {est:>8.3}  [{lo:.2}, {hi:.2}] {se:.3}");
        }
    }
    Ok(())
}
