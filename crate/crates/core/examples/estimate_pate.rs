//! Population average of segment-level CATE draws over a PPS survey sample,
//! under both cluster weight modes.
//!
//!     cargo run --release --example estimate_pate

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scaled_bb::bootstrap::{estimate_pate, ScaledWeightMode};
use scaled_bb::demo::{build_demo, DemoSpec};

fn main() -> scaled_bb::Result<()> {
    let demo = build_demo(&DemoSpec::default())?;
    let target = &demo.target;
    println!(
        "target: {} respondents, {} clusters, {} strata; {} CATE draws",
        target.len(),
        target.n_clusters(),
        target.n_strata(),
        demo.cate.n_draws()
    );

    // Unweighted average of the draws, for contrast.
    let means = demo.cate.column_means();
    let unweighted = means.iter().sum::<f64>() / means.len() as f64;
    println!("unweighted sample average of CATEs: {unweighted:.4}");

    for mode in [ScaledWeightMode::ProductNormalized, ScaledWeightMode::PseudoPosterior] {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let s = estimate_pate(target, &demo.cate, mode, 2000, &mut rng)?;
        println!(
            "{mode:>8}: PATE {:.4} (sd {:.4}), 95% [{:.4}, {:.4}], MC se {:.4}",
            s.mean,
            s.sd,
            s.ci_lower,
            s.ci_upper,
            s.mc_se()
        );
    }
    Ok(())
}
