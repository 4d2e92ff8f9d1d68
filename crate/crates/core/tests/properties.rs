//! Randomized invariants. Each property runs at least 256 cases.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scaled_bb::bootstrap::{draw_scaled_cluster_weights, estimate_pate, ScaledWeightMode};
use scaled_bb::data::{load_survey_csv, CateDraws, CovariateValue, ObservationRecord, Schema, SurveyDataset};
use scaled_bb::estimators::{design_mean, naive_mean, SingletonStrata};
use scaled_bb::overlap::{flag_low_support, standardize_scores, SelectionScores, UnitPopulation};
use scaled_bb::sensitivity::{
    lp_bound_greedy, lp_bound_oracle, pate_confounder_curve, pate_shift_bounds, ConfounderSpec,
    Direction, SensitivityCurve, ShiftSpec, SourceCell, MARGINAL_CELL,
};
use scaled_bb::simulate::{metrics_identity_gap, summarize, Outcome};

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(256)
}

/// (stratum, cluster size, weight) per cluster.
fn design_strategy() -> impl Strategy<Value = Vec<(u8, usize, f64)>> {
    prop::collection::vec((0u8..3, 1usize..5, 0.5f64..20.0), 1..10)
}

fn dataset(clusters: &[(u8, usize, f64)], outcome: Option<&[f64]>) -> SurveyDataset {
    let mut records = Vec::new();
    for (q, (s, n, w)) in clusters.iter().enumerate() {
        for _ in 0..*n {
            let i = records.len();
            records.push(ObservationRecord {
                id: format!("u{i}"),
                stratum: format!("S{s}"),
                cluster: format!("c{q}"),
                weight: *w,
                covariates: vec![CovariateValue::Real(i as f64 * 0.5)],
                outcome: outcome.map(|y| y[i % y.len()]),
                segment: None,
                auxiliary: vec![],
            });
        }
    }
    let schema = Schema {
        id: Some("id".into()),
        outcome: outcome.map(|_| "y".into()),
        ..Schema::default()
    };
    SurveyDataset::from_records(schema, vec!["x".into()], records).unwrap()
}

fn cate_rows(n_obs: usize, n_draws: usize, values: &[f64]) -> Vec<Vec<f64>> {
    (0..n_draws)
        .map(|d| (0..n_obs).map(|i| values[(i * 7 + d * 3) % values.len()]).collect())
        .collect()
}

fn cate_for(ds: &SurveyDataset, rows: Vec<Vec<f64>>) -> CateDraws {
    CateDraws::from_rows(rows, ds.ids().map(String::from).collect()).unwrap()
}

fn mode_strategy() -> impl Strategy<Value = ScaledWeightMode> {
    prop_oneof![
        Just(ScaledWeightMode::ProductNormalized),
        Just(ScaledWeightMode::PseudoPosterior)
    ]
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn bb_weights_lie_on_simplex(clusters in design_strategy(), mode in mode_strategy(), seed in any::<u64>()) {
        let ds = dataset(&clusters, None);
        let draw = draw_scaled_cluster_weights(&ds, mode, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(draw.weights.len(), ds.n_clusters());
        prop_assert!(draw.weights.iter().all(|w| *w >= 0.0));
        prop_assert!((draw.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pate_draws_are_convex_combinations(
        clusters in design_strategy(),
        values in prop::collection::vec(-1.0f64..1.0, 1..12),
        mode in mode_strategy(),
        seed in any::<u64>(),
    ) {
        let ds = dataset(&clusters, None);
        let cate = cate_for(&ds, cate_rows(ds.len(), 3, &values));
        let s = estimate_pate(&ds, &cate, mode, 30, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (b, x) in s.draws.iter().enumerate() {
            let row = cate.row(b % 3);
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*x >= lo - 1e-12 && *x <= hi + 1e-12);
        }
    }

    #[test]
    fn pate_is_location_equivariant(
        clusters in design_strategy(),
        values in prop::collection::vec(-1.0f64..1.0, 1..12),
        c in -5.0f64..5.0,
        mode in mode_strategy(),
        seed in any::<u64>(),
    ) {
        let ds = dataset(&clusters, None);
        let base = cate_for(&ds, cate_rows(ds.len(), 2, &values));
        let shifted = base.map(|_, x| x + c);
        let a = estimate_pate(&ds, &base, mode, 20, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = estimate_pate(&ds, &shifted, mode, 20, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (x, y) in a.draws.iter().zip(&b.draws) {
            prop_assert!((y - x - c).abs() < 1e-12, "{} vs {}", y - x, c);
        }
    }

    #[test]
    fn product_mode_ignores_weight_scale(
        clusters in design_strategy(),
        values in prop::collection::vec(-1.0f64..1.0, 1..12),
        k in 0.01f64..100.0,
        seed in any::<u64>(),
    ) {
        let ds = dataset(&clusters, None);
        let scaled = ds.with_weights(&ds.weights().iter().map(|w| w * k).collect::<Vec<_>>()).unwrap();
        let rows = cate_rows(ds.len(), 2, &values);
        let mode = ScaledWeightMode::ProductNormalized;
        let a = estimate_pate(&ds, &cate_for(&ds, rows.clone()), mode, 20, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = estimate_pate(&scaled, &cate_for(&scaled, rows), mode, 20, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (x, y) in a.draws.iter().zip(&b.draws) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_complier_scores_have_unit_moments(
        logits in prop::collection::vec(-8.0f64..8.0, 3..40),
        n_target in 1usize..10,
    ) {
        let n = logits.len();
        prop_assume!(logits.iter().any(|l| (l - logits[0]).abs() > 1e-3));
        let mut pops = vec![UnitPopulation::Source; n];
        pops.extend(std::iter::repeat_n(UnitPopulation::Target, n_target));
        let mut all = logits.clone();
        all.extend((0..n_target).map(|i| i as f64 - 3.0));
        let s = scores(all, pops);
        let st = standardize_scores(&s, &(0..n).collect::<Vec<_>>()).unwrap();
        let z = &st.standardized.unwrap()[..n];
        let mean = z.iter().sum::<f64>() / n as f64;
        let sd = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((sd - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flags_are_affine_invariant(
        logits in prop::collection::vec(-6.0f64..6.0, 3..30),
        targets in prop::collection::vec(-8.0f64..8.0, 1..30),
        shift in -10.0f64..10.0,
        scale in 0.1f64..10.0,
        percentile in 0.0f64..0.5,
    ) {
        prop_assume!(logits.iter().any(|l| (l - logits[0]).abs() > 1e-3));
        let n = logits.len();
        let mut pops = vec![UnitPopulation::Source; n];
        pops.extend(std::iter::repeat_n(UnitPopulation::Target, targets.len()));
        let all: Vec<f64> = logits.iter().chain(&targets).copied().collect();
        let moved: Vec<f64> = all.iter().map(|e| scale * e + shift).collect();
        let compliers: Vec<usize> = (0..n).collect();
        let w = vec![1.0; targets.len()];
        let a = standardize_scores(&scores(all, pops.clone()), &compliers).unwrap();
        let b = standardize_scores(&scores(moved, pops), &compliers).unwrap();
        for (x, y) in a.standardized.as_ref().unwrap().iter().zip(b.standardized.as_ref().unwrap()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let fa = flag_low_support(&a, &compliers, &w, percentile).unwrap();
        let fb = flag_low_support(&b, &compliers, &w, percentile).unwrap();
        // Units within rounding of the threshold may flip; everything else must agree.
        for (i, (x, y)) in fa.flagged.iter().zip(&fb.flagged).enumerate() {
            let z = a.standardized.as_ref().unwrap()[n + i];
            if (z - fa.threshold).abs() > 1e-9 {
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn metrics_identity_holds(
        estimates in prop::collection::vec(-100.0f64..100.0, 2..300),
        truth in -50.0f64..50.0,
    ) {
        let outcomes: Vec<Outcome> = estimates.iter().map(|e| (*e, 1.0, e - 1.0, e + 1.0)).collect();
        let row = summarize("x", truth, &outcomes);
        prop_assert!(metrics_identity_gap(&row, outcomes.len()) < 1e-9);
    }

    #[test]
    fn greedy_matches_vertex_oracle(
        raw in prop::collection::vec((-1.0f64..1.0, 0.01f64..1.0), 1..7),
        gamma in 1.0f64..6.0,
    ) {
        let tau: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let total: f64 = raw.iter().map(|r| r.1).sum();
        let omega: Vec<f64> = raw.iter().map(|r| r.1 / total).collect();
        for dir in [Direction::Min, Direction::Max] {
            let (g, z) = lp_bound_greedy(&tau, &omega, gamma, dir).unwrap();
            let o = lp_bound_oracle(&tau, &omega, gamma, dir).unwrap();
            prop_assert!((g - o).abs() <= 1e-9, "{} vs {}", g, o);
            prop_assert!(z.iter().all(|z| *z >= 1.0 / gamma - 1e-9 && *z <= gamma + 1e-9));
            let mass: f64 = z.iter().zip(&omega).map(|(z, w)| z * w).sum();
            prop_assert!((mass - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shift_bounds_widen_with_gamma(
        clusters in design_strategy(),
        values in prop::collection::vec(-1.0f64..1.0, 1..10),
        effects in prop::collection::vec(-1.0f64..1.0, 1..10),
        seed in any::<u64>(),
    ) {
        let ds = dataset(&clusters, None);
        let cate = cate_for(&ds, cate_rows(ds.len(), 2, &values));
        let source: BTreeMap<String, SourceCell> = [(MARGINAL_CELL.to_string(), SourceCell::uniform(effects))].into();
        let mode = ScaledWeightMode::ProductNormalized;
        let base = estimate_pate(&ds, &cate, mode, 25, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let curve = pate_shift_bounds(&ds, &cate, &source, &ShiftSpec::default(), mode, 25, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let SensitivityCurve::Shift { lower, upper, .. } = curve else { unreachable!() };
        for j in 0..lower.len() {
            for b in 0..25 {
                prop_assert!(lower[j].draws[b] <= base.draws[b] && base.draws[b] <= upper[j].draws[b]);
                if j > 0 {
                    prop_assert!(lower[j].draws[b] <= lower[j - 1].draws[b]);
                    prop_assert!(upper[j].draws[b] >= upper[j - 1].draws[b]);
                }
            }
        }
    }

    #[test]
    fn adverse_confounder_curve_is_nonincreasing(
        clusters in design_strategy(),
        values in prop::collection::vec(-0.34f64..1.0, 1..10),
        seed in any::<u64>(),
    ) {
        let ds = dataset(&clusters, None);
        let cate = cate_for(&ds, cate_rows(ds.len(), 2, &values));
        let spec = ConfounderSpec { xi: (0..=10).map(|j| j as f64 / 10.0).collect(), ..Default::default() };
        let curve = pate_confounder_curve(&ds, &cate, &spec, ScaledWeightMode::PseudoPosterior, 20, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let SensitivityCurve::Confounder { points, .. } = curve else { unreachable!() };
        for j in 1..points.len() {
            for b in 0..20 {
                prop_assert!(points[j].draws[b] <= points[j - 1].draws[b] + 1e-12);
            }
        }
    }

    #[test]
    fn survey_csv_round_trips(clusters in design_strategy(), ys in prop::collection::vec(-1e6f64..1e6, 1..20)) {
        let ds = dataset(&clusters, Some(&ys));
        let file = tempfile::NamedTempFile::new().unwrap();
        ds.write_csv(file.path()).unwrap();
        let back = load_survey_csv(file.path(), ds.schema()).unwrap();
        prop_assert_eq!(back.records(), ds.records());
        prop_assert_eq!(back.n_clusters(), ds.n_clusters());
    }

    #[test]
    fn injected_bad_weight_is_reported(
        clusters in design_strategy(),
        bad in prop_oneof![Just(0.0), Just(-1.0), Just(f64::NAN), Just(f64::INFINITY)],
        pick in any::<prop::sample::Index>(),
    ) {
        let ds = dataset(&clusters, None);
        let mut records = ds.records().to_vec();
        let i = pick.index(records.len());
        records[i].weight = bad;
        let err = SurveyDataset::from_records(ds.schema().clone(), vec!["x".into()], records).unwrap_err();
        let expected = format!("row {}", i + 1);
        prop_assert!(err.to_string().contains(&expected), "{}", err);
    }

    #[test]
    fn design_variance_equals_naive_for_srs_shape(ys in prop::collection::vec(-10.0f64..10.0, 2..50), w in 0.1f64..10.0) {
        // One stratum, one unit per cluster, equal weights.
        let clusters: Vec<(u8, usize, f64)> = ys.iter().map(|_| (0, 1, w)).collect();
        let ds = dataset(&clusters, Some(&ys));
        let n = naive_mean(&ds, "y", 0.95).unwrap();
        let d = design_mean(&ds, "y", 0.95, SingletonStrata::Error).unwrap();
        prop_assert!((n.value - d.value).abs() < 1e-9);
        prop_assert!((n.std_error.powi(2) - d.std_error.powi(2)).abs() <= 1e-9 * n.std_error.powi(2).max(1e-12));
    }
}

fn scores(logits: Vec<f64>, population: Vec<UnitPopulation>) -> SelectionScores {
    SelectionScores {
        raw: logits.iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect(),
        logit: logits,
        standardized: None,
        complier_mean: None,
        complier_sd: None,
        population,
    }
}
