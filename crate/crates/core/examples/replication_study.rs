//! Coverage, bias and RMSE of the three estimators over repeated PPS samples
//! from the default synthetic population.
//!
//!     cargo run --release --example replication_study -- 500

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scaled_bb::data::{generate_synthetic_population, SyntheticSpec, AGE};
use scaled_bb::simulate::{metrics_identity_gap, run_replication_study, SimulationDesign};

fn main() -> scaled_bb::Result<()> {
    let replications = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(200);
    let pop = generate_synthetic_population(&SyntheticSpec::default())?;
    let mut design = SimulationDesign::uniform(&pop, 20, AGE);
    design.replications = replications;

    let start = std::time::Instant::now();
    let table = run_replication_study(&pop, &design, &mut ChaCha8Rng::seed_from_u64(1))?;
    println!(
        "truth {:.3}, {} replications ({} failed) in {:.1?}",
        table.truth,
        table.replications,
        table.failed,
        start.elapsed()
    );
    println!("{:>7} {:>8} {:>8} {:>7} {:>7} {:>8}", "method", "bias", "coverage", "sd", "rmse", "mean se");
    for r in &table.rows {
        println!(
            "{:>7} {:>8.4} {:>8.3} {:>7.4} {:>7.4} {:>8.4}",
            r.method, r.bias, r.coverage, r.sd, r.rmse, r.mean_se
        );
        assert!(metrics_identity_gap(r, table.replications) < 1e-9);
    }
    print!("{}", String::from_utf8_lossy(&table.to_csv_bytes()?));
    Ok(())
}
