//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scaled_bb::bootstrap::{draw_scaled_cluster_weights, estimate_mean, estimate_pate, mean_sd, ScaledWeightMode};
use scaled_bb::cli::{run, EXIT_OK, MANIFEST};
use scaled_bb::data::{generate_synthetic_population, CateDraws, CovariateValue, ObservationRecord, Schema, SurveyDataset, SyntheticSpec, AGE};
use scaled_bb::demo::{build_demo, DemoSpec};
use scaled_bb::estimators::{design_mean, SingletonStrata, BB, DESIGN, NAIVE};
use scaled_bb::overlap::{flag_low_support, standardize_scores, SelectionScores, UnitPopulation};
use scaled_bb::sensitivity::{
    default_gamma_grid, lp_bound_greedy, lp_bound_oracle, pate_confounder_curve, pate_shift_bounds,
    source_cells_from_pairs, ConfounderSpec, Direction, SensitivityCurve, ShiftCells, ShiftSpec,
    MARGINAL_CELL,
};
use scaled_bb::simulate::{derive_seed, draw_pps_two_stage, metrics_identity_gap, run_replication_study, summarize, Outcome, SimulationDesign};

const MODE: ScaledWeightMode = ScaledWeightMode::ProductNormalized;

struct Verdict {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn coverage_study() -> Verdict {
    let pop = generate_synthetic_population(&SyntheticSpec::default()).unwrap();
    let (_, pop_sd) = mean_sd(&pop.data.numeric_column(AGE).unwrap());
    let mut design = SimulationDesign::uniform(&pop, 20, AGE);
    design.replications = 500;
    design.n_bb = 500;
    let start = Instant::now();
    let table = run_replication_study(&pop, &design, &mut ChaCha8Rng::seed_from_u64(20240101)).unwrap();
    let elapsed = start.elapsed();
    let naive = table.row(NAIVE).unwrap();
    let dsgn = table.row(DESIGN).unwrap();
    let bb = table.row(BB).unwrap();
    let nominal = 0.925..=0.975;
    let pass = naive.coverage < 0.80
        && nominal.contains(&dsgn.coverage)
        && nominal.contains(&bb.coverage)
        && bb.bias.abs() < 0.05 * pop_sd
        && table.failed == 0
        && elapsed < Duration::from_secs(600);
    check(
        pass,
        format!(
            "coverage naive {:.3}, design {:.3}, bb {:.3}; |bb bias| {:.4} vs {:.4}; {} failed; {:.1}s",
            naive.coverage,
            dsgn.coverage,
            bb.coverage,
            bb.bias.abs(),
            0.05 * pop_sd,
            table.failed,
            elapsed.as_secs_f64()
        ),
    )
}

fn bb_design_agreement() -> Verdict {
    let pop = generate_synthetic_population(&SyntheticSpec::default()).unwrap();
    let design = SimulationDesign::uniform(&pop, 20, AGE);
    let mut within_mc = 0;
    let mut worst_ratio: f64 = 0.0;
    for k in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(77, k));
        let sample = draw_pps_two_stage(&pop, &design, &mut rng).unwrap();
        let d = design_mean(&sample, AGE, 0.95, SingletonStrata::Error).unwrap();
        let bb = estimate_mean(&sample, AGE, MODE, 2000, &mut rng).unwrap();
        if (bb.mean - d.value).abs() < 3.0 * bb.mc_se() {
            within_mc += 1;
        }
        worst_ratio = worst_ratio.max((bb.sd / d.std_error - 1.0).abs());
    }
    check(
        within_mc >= 19 && worst_ratio <= 0.25,
        format!("{within_mc}/20 means within 3 MC se; worst |sd/se - 1| {worst_ratio:.3}"),
    )
}

fn lp_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = Instant::now();
    let mut max_dev: f64 = 0.0;
    for i in 0..1000 {
        let n = rng.random_range(1..=6);
        let gamma = [1.5, 2.0, 4.0][i % 3];
        let tau: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let omega: Vec<f64> = raw.iter().map(|w| w / total).collect();
        for dir in [Direction::Min, Direction::Max] {
            let (g, _) = lp_bound_greedy(&tau, &omega, gamma, dir).unwrap();
            let o = lp_bound_oracle(&tau, &omega, gamma, dir).unwrap();
            max_dev = max_dev.max((g - o).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        max_dev <= 1e-9 && elapsed < Duration::from_secs(10),
        format!("1000 instances, max deviation {max_dev:.2e}, {:.3}s", elapsed.as_secs_f64()),
    )
}

fn sensitivity_anchors() -> Verdict {
    let demo = build_demo(&DemoSpec::default()).unwrap();
    let n_bb = 500;
    let seed = 41;
    let baseline = estimate_pate(&demo.target, &demo.cate, MODE, n_bb, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();

    let spec = ConfounderSpec { xi: vec![0.0, 0.5], ..Default::default() };
    let curve = pate_confounder_curve(&demo.target, &demo.cate, &spec, MODE, n_bb, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let SensitivityCurve::Confounder { points, .. } = curve else { unreachable!() };
    let xi_anchor = points[0].draws == baseline.draws;

    let effects = demo.source.effect.as_ref().unwrap();
    let compliers = demo.source.complier_ids();
    let segments = demo.source.segment.as_ref().unwrap();
    let mut gamma_anchor = true;
    let mut violations = 0;
    let mut grid_points = 0;
    for cells in [ShiftCells::Marginal, ShiftCells::BySegment] {
        let source = match cells {
            ShiftCells::Marginal => source_cells_from_pairs(compliers.iter().map(|&i| (MARGINAL_CELL, effects[i]))),
            ShiftCells::BySegment => source_cells_from_pairs(compliers.iter().map(|&i| (segments[i].as_str(), effects[i]))),
        };
        let spec = ShiftSpec { gammas: default_gamma_grid(), cells, ..Default::default() };
        grid_points = spec.gammas.len();
        let curve = pate_shift_bounds(&demo.target, &demo.cate, &source, &spec, MODE, n_bb, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let SensitivityCurve::Shift { gamma, lower, upper } = curve else { unreachable!() };
        gamma_anchor &= gamma[0] == 1.0 && lower[0].draws == baseline.draws && upper[0].draws == baseline.draws;
        for j in 1..gamma.len() {
            for b in 0..n_bb {
                violations += usize::from(lower[j].draws[b] > lower[j - 1].draws[b]);
                violations += usize::from(upper[j].draws[b] < upper[j - 1].draws[b]);
            }
        }
    }
    check(
        xi_anchor && gamma_anchor && violations == 0,
        format!(
            "xi=0 draw-identical {xi_anchor}, gamma=1 draw-identical {gamma_anchor}, \
             {violations} monotonicity violations over {grid_points} gammas x {n_bb} draws"
        ),
    )
}

fn confounder_pattern() -> Verdict {
    let demo = build_demo(&DemoSpec::default()).unwrap();
    let base = estimate_pate(&demo.target, &demo.cate, MODE, 2000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let spec = ConfounderSpec { xi: (0..=100).map(|j| j as f64 / 100.0).collect(), ..Default::default() };
    let curve = pate_confounder_curve(&demo.target, &demo.cate, &spec, MODE, 2000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let SensitivityCurve::Confounder { xi, points } = curve else { unreachable!() };
    let first = xi.iter().zip(&points).find(|(_, p)| p.contains(0.0)).map(|(x, _)| *x);
    check(
        first.is_some_and(|x| (0.3..=0.5).contains(&x)),
        format!("baseline {:.3} ({:.3}); CI first includes 0 at xi = {first:?}", base.mean, base.sd),
    )
}

fn small_dataset(clusters: &[(u8, usize, f64)]) -> SurveyDataset {
    let mut records = Vec::new();
    for (q, (s, n, w)) in clusters.iter().enumerate() {
        for _ in 0..*n {
            let i = records.len();
            records.push(ObservationRecord {
                id: format!("u{i}"),
                stratum: format!("S{s}"),
                cluster: format!("c{q}"),
                weight: *w,
                covariates: vec![CovariateValue::Real(i as f64)],
                outcome: None,
                segment: None,
                auxiliary: vec![],
            });
        }
    }
    let schema = Schema { id: Some("id".into()), ..Schema::default() };
    SurveyDataset::from_records(schema, vec!["x".into()], records).unwrap()
}

fn small_cate(ds: &SurveyDataset, values: &[f64], n_draws: usize) -> CateDraws {
    let rows = (0..n_draws)
        .map(|d| (0..ds.len()).map(|i| values[(i * 5 + d) % values.len()]).collect())
        .collect();
    CateDraws::from_rows(rows, ds.ids().map(String::from).collect()).unwrap()
}

fn scores(logits: Vec<f64>, n_source: usize) -> SelectionScores {
    let mut population = vec![UnitPopulation::Source; n_source];
    population.resize(logits.len(), UnitPopulation::Target);
    SelectionScores {
        raw: logits.iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect(),
        logit: logits,
        standardized: None,
        complier_mean: None,
        complier_sd: None,
        population,
    }
}

fn invariant_suites() -> Verdict {
    const CASES: u32 = 200;
    let clusters = || prop::collection::vec((0u8..3, 1usize..5, 0.5f64..20.0), 1..10);
    let values = || prop::collection::vec(-1.0f64..1.0, 1..10);
    let mut results: Vec<(&str, Result<(), String>)> = Vec::new();
    let runner = || TestRunner::new(Config { cases: CASES, ..Config::default() });

    results.push((
        "simplex",
        runner()
            .run(&(clusters(), any::<u64>()), |(c, seed)| {
                let ds = small_dataset(&c);
                let w = draw_scaled_cluster_weights(&ds, MODE, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().weights;
                prop_assert!(w.iter().all(|x| *x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    ));
    results.push((
        "convexity",
        runner()
            .run(&(clusters(), values(), any::<u64>()), |(c, v, seed)| {
                let ds = small_dataset(&c);
                let cate = small_cate(&ds, &v, 2);
                let s = estimate_pate(&ds, &cate, MODE, 20, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                for (b, x) in s.draws.iter().enumerate() {
                    let row = cate.row(b % 2);
                    let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(*x >= lo - 1e-12 && *x <= hi + 1e-12);
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    ));
    results.push((
        "location equivariance",
        runner()
            .run(&(clusters(), values(), -5.0f64..5.0, any::<u64>()), |(c, v, shift, seed)| {
                let ds = small_dataset(&c);
                let cate = small_cate(&ds, &v, 2);
                let a = estimate_pate(&ds, &cate, MODE, 20, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                let b = estimate_pate(&ds, &cate.map(|_, x| x + shift), MODE, 20, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                for (x, y) in a.draws.iter().zip(&b.draws) {
                    prop_assert!((y - x - shift).abs() < 1e-12);
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    ));
    results.push((
        "standardization",
        runner()
            .run(&prop::collection::vec(-8.0f64..8.0, 3..40), |logits| {
                prop_assume!(logits.iter().any(|l| (l - logits[0]).abs() > 1e-3));
                let n = logits.len();
                let st = standardize_scores(&scores(logits, n), &(0..n).collect::<Vec<_>>()).unwrap();
                let (mean, sd) = mean_sd(st.standardized.as_ref().unwrap());
                prop_assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    ));
    results.push((
        "affine invariance",
        runner()
            .run(
                &(prop::collection::vec(-6.0f64..6.0, 3..30), prop::collection::vec(-8.0f64..8.0, 1..30), -10.0f64..10.0, 0.1f64..10.0),
                |(source, target, shift, scale)| {
                    prop_assume!(source.iter().any(|l| (l - source[0]).abs() > 1e-3));
                    let n = source.len();
                    let all: Vec<f64> = source.iter().chain(&target).copied().collect();
                    let moved: Vec<f64> = all.iter().map(|e| scale * e + shift).collect();
                    let compliers: Vec<usize> = (0..n).collect();
                    let w = vec![1.0; target.len()];
                    let a = standardize_scores(&scores(all, n), &compliers).unwrap();
                    let b = standardize_scores(&scores(moved, n), &compliers).unwrap();
                    let fa = flag_low_support(&a, &compliers, &w, 0.05).unwrap();
                    let fb = flag_low_support(&b, &compliers, &w, 0.05).unwrap();
                    for (i, (x, y)) in fa.flagged.iter().zip(&fb.flagged).enumerate() {
                        if (a.standardized.as_ref().unwrap()[n + i] - fa.threshold).abs() > 1e-9 {
                            prop_assert_eq!(x, y);
                        }
                    }
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    ));
    results.push((
        "metrics identity",
        runner()
            .run(&(prop::collection::vec(-100.0f64..100.0, 2..300), -50.0f64..50.0), |(est, truth)| {
                let outcomes: Vec<Outcome> = est.iter().map(|e| (*e, 1.0, e - 1.0, e + 1.0)).collect();
                prop_assert!(metrics_identity_gap(&summarize("x", truth, &outcomes), outcomes.len()) < 1e-9);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    ));

    let failed: Vec<String> = results
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    let names: Vec<&str> = results.iter().map(|(n, _)| *n).collect();
    check(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} suites x {CASES} cases: {}", names.len(), names.join(", "))
        } else {
            failed.join("; ")
        },
    )
}

fn cli(args: &[String]) -> i32 {
    run(std::iter::once("scaled-bb".to_string()).chain(args.iter().cloned()))
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != MANIFEST)
        .map(|p| (p.file_name().unwrap().to_string_lossy().to_string(), std::fs::read(&p).unwrap()))
        .collect()
}

fn manifest_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let s = |p: &Path| p.to_string_lossy().to_string();
    let demo = root.join("demo");
    let f = |name: &str| s(&demo.join(name));
    let survey: Vec<String> = [
        "--survey", &f("target.csv"), "--id", "id", "--segment", "segment", "--aux", "mos,compliance",
        "--cate", &f("cate_segments.csv"),
    ]
    .map(String::from)
    .to_vec();
    let source: Vec<String> = ["--source", &f("source.csv"), "--source-id", "id"].map(String::from).to_vec();
    let n_bb = ["--n-bb", "200"].map(String::from).to_vec();

    let runs: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["synth".into(), "--demo".into()]),
        ("simulate", ["simulate", "--replications", "20", "--n-bb", "50"].map(String::from).to_vec()),
        ("estimate", [vec!["estimate".into()], survey.clone(), n_bb.clone()].concat()),
        ("overlap", [vec!["overlap".into()], survey.clone(), source.clone(), n_bb.clone()].concat()),
        ("sensitivity confounder", [vec!["sensitivity".into(), "confounder".into()], survey.clone(), n_bb.clone()].concat()),
        ("sensitivity shift", [vec!["sensitivity".into(), "shift".into()], survey.clone(), source.clone(), n_bb.clone()].concat()),
    ];
    let mut bad = Vec::new();
    for (k, (name, args)) in runs.into_iter().enumerate() {
        let first = if name == "synth" { demo.clone() } else { root.join(format!("run{k}")) };
        let second = root.join(format!("rerun{k}"));
        // No --seed: the generated seed must be recorded and honored.
        let code = cli(&[args, vec!["--out".into(), s(&first)]].concat());
        if code != EXIT_OK {
            bad.push(format!("{name} exited {code}"));
            continue;
        }
        let mut rerun: Vec<String> = name.split(' ').map(String::from).collect();
        rerun.extend(["--config".into(), s(&first.join(MANIFEST)), "--out".into(), s(&second)]);
        let code = cli(&rerun);
        if code != EXIT_OK {
            bad.push(format!("{name} rerun exited {code}"));
            continue;
        }
        let (a, b) = (files(&first), files(&second));
        if a.is_empty() || a != b {
            bad.push(format!("{name} outputs differ"));
        }
    }
    check(bad.is_empty(), if bad.is_empty() { "6 subcommands byte-identical on rerun".into() } else { bad.join("; ") })
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("1 simulation coverage", coverage_study),
        ("2 bb/design agreement", bb_design_agreement),
        ("3 lp oracle equivalence", lp_oracle),
        ("4 sensitivity anchors", sensitivity_anchors),
        ("5 confounder pattern", confounder_pattern),
        ("6 invariant suites", invariant_suites),
        ("7 manifest determinism", manifest_determinism),
    ];
    let mut failures = 0;
    for (name, f) in criteria {
        let r = f();
        failures += usize::from(!r.pass);
        println!("{} {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
