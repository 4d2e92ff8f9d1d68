//! The box-constrained LP behind the shift bounds, then PATE bounds over a
//! grid of density-ratio limits.
//!
//!     cargo run --release --example shift_bounds

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scaled_bb::bootstrap::ScaledWeightMode;
use scaled_bb::demo::{build_demo, DemoSpec};
use scaled_bb::sensitivity::{
    lp_bound_greedy, lp_bound_oracle, pate_shift_bounds, source_cells_from_pairs, Direction,
    SensitivityCurve, ShiftSpec, MARGINAL_CELL,
};

fn main() -> scaled_bb::Result<()> {
    let tau = [0.1, 0.8, 0.4, -0.2];
    let omega = [0.4, 0.1, 0.3, 0.2];
    println!("reweighting four units with 1/G <= z <= G:");
    for gamma in [1.0, 1.5, 2.0, 4.0] {
        let (lo, _) = lp_bound_greedy(&tau, &omega, gamma, Direction::Min)?;
        let (hi, z) = lp_bound_greedy(&tau, &omega, gamma, Direction::Max)?;
        let check = lp_bound_oracle(&tau, &omega, gamma, Direction::Max)?;
        println!("  G {gamma:.1}: [{lo:.4}, {hi:.4}] (vertex check {check:.4}), max-side z {z:.2?}");
    }

    let demo = build_demo(&DemoSpec::default())?;
    let effects = demo.source.effect.as_ref().expect("demo source has effects");
    let source = source_cells_from_pairs(
        demo.source
            .complier_ids()
            .into_iter()
            .map(|i| (MARGINAL_CELL, effects[i])),
    );
    let curve = pate_shift_bounds(
        &demo.target,
        &demo.cate,
        &source,
        &ShiftSpec::default(),
        ScaledWeightMode::ProductNormalized,
        2000,
        &mut ChaCha8Rng::seed_from_u64(12),
    )?;
    let SensitivityCurve::Shift { gamma, lower, upper } = &curve else { unreachable!() };
    println!("\n{:>6} {:>8} {:>10} {:>8} {:>10}", "G", "lower", "lower lo", "upper", "upper hi");
    for ((g, lo), hi) in gamma.iter().zip(lower).zip(upper) {
        println!(
            "{g:>6.2} {:>8.3} {:>10.3} {:>8.3} {:>10.3}",
            lo.mean, lo.ci_lower, hi.mean, hi.ci_upper
        );
    }
    Ok(())
}
