//! PATE as the prevalence of a binary unmeasured modifier grows, with the
//! modifier lowering each unit's effect by 0.66.
//!
//!     cargo run --release --example confounder_sweep

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scaled_bb::bootstrap::ScaledWeightMode;
use scaled_bb::demo::{build_demo, DemoSpec};
use scaled_bb::sensitivity::{pate_confounder_curve, ConfounderSpec, SensitivityCurve};

fn main() -> scaled_bb::Result<()> {
    let demo = build_demo(&DemoSpec::default())?;
    let spec = ConfounderSpec {
        xi: (0..=20).map(|j| j as f64 / 20.0).collect(),
        ..ConfounderSpec::default()
    };
    let curve = pate_confounder_curve(
        &demo.target,
        &demo.cate,
        &spec,
        ScaledWeightMode::ProductNormalized,
        2000,
        &mut ChaCha8Rng::seed_from_u64(11),
    )?;
    let SensitivityCurve::Confounder { xi, points } = &curve else { unreachable!() };
    println!("{:>5} {:>7} {:>8} {:>8}", "xi", "mean", "lower", "upper");
    for (x, p) in xi.iter().zip(points) {
        let mark = if p.contains(0.0) { "  includes 0" } else { "" };
        println!("{x:>5.2} {:>7.3} {:>8.3} {:>8.3}{mark}", p.mean, p.ci_lower, p.ci_upper);
    }
    if let Some((x, _)) = xi.iter().zip(points).find(|(_, p)| p.contains(0.0)) {
        println!("\ninterval first includes zero at xi = {x}");
    }
    Ok(())
}
