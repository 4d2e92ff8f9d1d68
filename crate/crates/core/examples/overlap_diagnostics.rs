//! Selection scores for a source study and a target survey, low-support flags,
//! and the PATE with flagged units excluded or given no effect.
//!
//!     cargo run --release --example overlap_diagnostics

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scaled_bb::bootstrap::{estimate_pate, ScaledWeightMode};
use scaled_bb::demo::{build_demo, DemoSpec, COMPLIANCE};
use scaled_bb::overlap::{diagnose_overlap, pate_with_support_policy, SupportPolicy};

fn main() -> scaled_bb::Result<()> {
    let demo = build_demo(&DemoSpec::default())?;
    let compliance = demo.target.numeric_column(COMPLIANCE)?;
    let diag = diagnose_overlap(&demo.target, &compliance, &demo.source, 0.05)?;
    let flags = &diag.flags;
    println!(
        "{} source units ({} compliers), {} target units",
        demo.source.len(),
        demo.source.complier_ids().len(),
        demo.target.len()
    );
    println!(
        "complier logit mean {:.3}, sd {:.3}; 5th percentile of standardized scores {:.3}",
        diag.scores.complier_mean.unwrap_or(f64::NAN),
        diag.scores.complier_sd.unwrap_or(f64::NAN),
        flags.threshold
    );
    println!("weighted share of the target below it: {:.3}", flags.flagged_proportion);

    let mode = ScaledWeightMode::ProductNormalized;
    let n_bb = 2000;
    let plain = estimate_pate(&demo.target, &demo.cate, mode, n_bb, &mut ChaCha8Rng::seed_from_u64(8))?;
    println!("\n{:>22} {:>7} {:>7}", "", "mean", "sd");
    println!("{:>22} {:>7.3} {:>7.3}", "PATE", plain.mean, plain.sd);
    for (label, policy) in [
        ("excluding flagged", SupportPolicy::Exclude),
        ("no effect if flagged", SupportPolicy::NullImpute),
    ] {
        let s = pate_with_support_policy(
            &demo.target,
            &demo.cate,
            &flags.flagged,
            policy,
            mode,
            n_bb,
            &mut ChaCha8Rng::seed_from_u64(8),
        )?;
        println!("{label:>22} {:>7.3} {:>7.3}", s.mean, s.sd);
    }
    Ok(())
}
