//! Repeated stratified two-stage PPS sampling from a finite population, and a
//! replication harness scoring estimators by bias, coverage, SD and RMSE.
//!
//! Both stages sample with replacement. Weights attached to a simulated sample
//! are the exact inverse selection intensities of the known design, so the
//! study isolates estimator behaviour from weight estimation.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{estimate_mean, mean_sd, ScaledWeightMode};
use crate::data::{ObservationRecord, Population, SurveyDataset};
use crate::error::{Error, Result};
use crate::estimators::{design_mean, naive_mean, SingletonStrata, BB, DESIGN, NAIVE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RespondentCount {
    Fixed(usize),
    /// As many draws as the selected cluster has members.
    ClusterSize,
    /// Per population cluster label.
    PerCluster(BTreeMap<String, usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Naive,
    Design,
    BayesianBootstrap,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Naive => NAIVE,
            EstimatorKind::Design => DESIGN,
            EstimatorKind::BayesianBootstrap => BB,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    /// Number of first-stage draws per stratum label.
    pub clusters_per_stratum: BTreeMap<String, usize>,
    pub respondents: RespondentCount,
    /// Overrides the population's measure of size when set.
    pub measure_of_size: Option<Vec<f64>>,
    pub replications: usize,
    pub estimators: Vec<EstimatorKind>,
    pub level: f64,
    pub outcome: String,
    pub n_bb: usize,
    pub mode: ScaledWeightMode,
    pub singletons: SingletonStrata,
}

impl SimulationDesign {
    /// `n` cluster draws in every stratum of the population, all three estimators.
    pub fn uniform(population: &Population, n: usize, outcome: &str) -> Self {
        SimulationDesign {
            clusters_per_stratum: population
                .data
                .strata()
                .iter()
                .map(|s| (s.clone(), n))
                .collect(),
            respondents: RespondentCount::ClusterSize,
            measure_of_size: None,
            replications: 500,
            estimators: vec![
                EstimatorKind::Naive,
                EstimatorKind::Design,
                EstimatorKind::BayesianBootstrap,
            ],
            level: 0.95,
            outcome: outcome.into(),
            n_bb: 500,
            mode: ScaledWeightMode::ProductNormalized,
            singletons: SingletonStrata::Error,
        }
    }

    pub fn validate(&self, population: &Population) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Argument("replications must be at least 1".into()));
        }
        if self.clusters_per_stratum.is_empty() {
            return Err(Error::Spec("design samples no strata".into()));
        }
        for (s, &n) in &self.clusters_per_stratum {
            if n == 0 {
                return Err(Error::Spec(format!("stratum `{s}` has zero cluster draws")));
            }
            if !population.data.strata().contains(s) {
                return Err(Error::Spec(format!("stratum `{s}` is not in the population")));
            }
        }
        match &self.respondents {
            RespondentCount::Fixed(0) => {
                return Err(Error::Spec("respondents per cluster must be at least 1".into()))
            }
            RespondentCount::PerCluster(m) if m.values().any(|&n| n == 0) => {
                return Err(Error::Spec("respondents per cluster must be at least 1".into()))
            }
            _ => {}
        }
        if let Some(mos) = &self.measure_of_size {
            if mos.len() != population.data.n_clusters() || mos.iter().any(|m| !(*m > 0.0)) {
                return Err(Error::Spec(
                    "measure of size must be positive for every population cluster".into(),
                ));
            }
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Argument(format!("level {} not in (0, 1)", self.level)));
        }
        if self.n_bb == 0 {
            return Err(Error::Argument("n_bb must be at least 1".into()));
        }
        Ok(())
    }
}

/// One stratified two-stage PPS sample, both stages with replacement.
///
/// Selected cluster copies get labels `<cluster>#<k>`; a record's weight is
/// its population weight times `N_c / (n_h p_c m_c)`.
pub fn draw_pps_two_stage<R: Rng + ?Sized>(
    population: &Population,
    design: &SimulationDesign,
    rng: &mut R,
) -> Result<SurveyDataset> {
    let data = &population.data;
    let mos = design
        .measure_of_size
        .as_deref()
        .unwrap_or(&population.measure_of_size);
    let records = data.records();
    let mut out = Vec::new();
    for (h, stratum) in data.strata().iter().enumerate() {
        let Some(&n_h) = design.clusters_per_stratum.get(stratum) else {
            continue;
        };
        let clusters: Vec<usize> = (0..data.n_clusters())
            .filter(|&q| data.clusters()[q].stratum == h)
            .collect();
        let sizes: Vec<f64> = clusters.iter().map(|&q| mos[q]).collect();
        let total: f64 = sizes.iter().sum();
        let picker = WeightedIndex::new(&sizes)
            .map_err(|e| Error::Spec(format!("stratum `{stratum}`: {e}")))?;
        for k in 0..n_h {
            let q = clusters[picker.sample(rng)];
            let cluster = &data.clusters()[q];
            if cluster.members.is_empty() {
                return Err(Error::Data(format!("cluster `{}` is empty", cluster.label)));
            }
            let m = match &design.respondents {
                RespondentCount::Fixed(m) => *m,
                RespondentCount::ClusterSize => cluster.size(),
                RespondentCount::PerCluster(map) => *map.get(&cluster.label).ok_or_else(|| {
                    Error::Spec(format!("no respondent count for cluster `{}`", cluster.label))
                })?,
            };
            let p = mos[q] / total;
            let expansion = cluster.size() as f64 / (n_h as f64 * p * m as f64);
            let label = format!("{}#{}", cluster.label, k + 1);
            for j in 0..m {
                let src = &records[cluster.members[rng.random_range(0..cluster.size())]];
                out.push(ObservationRecord {
                    id: format!("{}#{}.{}", src.id, k + 1, j + 1),
                    cluster: label.clone(),
                    weight: src.weight * expansion,
                    ..src.clone()
                });
            }
        }
    }
    SurveyDataset::from_records(data.schema().clone(), data.covariate_names().to_vec(), out)
}

/// Metrics for one estimator across replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub bias: f64,
    pub coverage: f64,
    pub sd: f64,
    pub rmse: f64,
    /// Average reported standard error (or posterior SD).
    pub mean_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub truth: f64,
    pub replications: usize,
    pub failed: usize,
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn row(&self, method: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "bias", "coverage", "sd", "rmse"])?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.bias.to_string(),
                r.coverage.to_string(),
                r.sd.to_string(),
                r.rmse.to_string(),
            ])?;
        }
        w.into_inner()
            .map_err(|e| Error::Data(format!("csv buffer: {e}")))
    }
}

/// `(estimate, se, ci_lower, ci_upper)` for one estimator in one replication.
pub type Outcome = (f64, f64, f64, f64);

/// Per-replication RNG seed. SplitMix64 finalizer over the master seed and index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Computes bias, coverage, SD and RMSE of the estimates against `truth`.
pub fn summarize(method: &str, truth: f64, outcomes: &[Outcome]) -> MetricsRow {
    let r = outcomes.len() as f64;
    let mean = mean_sd(&outcomes.iter().map(|o| o.0).collect::<Vec<_>>()).0;
    let ss: f64 = outcomes.iter().map(|o| (o.0 - mean).powi(2)).sum();
    let mse = outcomes.iter().map(|o| (o.0 - truth).powi(2)).sum::<f64>() / r;
    MetricsRow {
        method: method.into(),
        bias: mean - truth,
        coverage: outcomes
            .iter()
            .filter(|o| o.2 <= truth && truth <= o.3)
            .count() as f64
            / r,
        sd: if outcomes.len() > 1 { (ss / (r - 1.0)).sqrt() } else { 0.0 },
        rmse: mse.sqrt(),
        mean_se: outcomes.iter().map(|o| o.1).sum::<f64>() / r,
    }
}

/// Relative gap in `rmse² = bias² + sd² (R − 1)/R`.
pub fn metrics_identity_gap(row: &MetricsRow, replications: usize) -> f64 {
    let r = replications as f64;
    let lhs = row.rmse.powi(2);
    let rhs = row.bias.powi(2) + row.sd.powi(2) * (r - 1.0) / r;
    let scale = lhs.max(rhs).max(f64::MIN_POSITIVE);
    (lhs - rhs).abs() / scale
}

fn one_replication(
    population: &Population,
    design: &SimulationDesign,
    seed: u64,
) -> Result<Vec<Outcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = draw_pps_two_stage(population, design, &mut rng)?;
    design
        .estimators
        .iter()
        .map(|kind| match kind {
            EstimatorKind::Naive => naive_mean(&sample, &design.outcome, design.level)
                .map(|e| (e.value, e.std_error, e.ci_lower, e.ci_upper)),
            EstimatorKind::Design => {
                design_mean(&sample, &design.outcome, design.level, design.singletons)
                    .map(|e| (e.value, e.std_error, e.ci_lower, e.ci_upper))
            }
            EstimatorKind::BayesianBootstrap => {
                estimate_mean(&sample, &design.outcome, design.mode, design.n_bb, &mut rng)
                    .and_then(|s| s.at_level(design.level))
                    .map(|s| (s.mean, s.sd, s.ci_lower, s.ci_upper))
            }
        })
        .collect()
}

/// Runs `design.replications` independent samples and scores every estimator.
///
/// Replication `r` uses seed `derive_seed(master, r)` with `master` taken from
/// `rng`, so results do not depend on scheduling. A replication in which any
/// estimator fails is dropped and counted; more than 1% failures aborts.
pub fn run_replication_study<R: Rng + ?Sized>(
    population: &Population,
    design: &SimulationDesign,
    rng: &mut R,
) -> Result<MetricsTable> {
    design.validate(population)?;
    let truth = population.mean_of(&design.outcome)?;
    let master: u64 = rng.random();
    let results: Vec<Result<Vec<Outcome>>> = (0..design.replications)
        .into_par_iter()
        .map(|r| one_replication(population, design, derive_seed(master, r as u64)))
        .collect();

    let mut failed = 0;
    let mut first_failure = None;
    let mut per_estimator: Vec<Vec<Outcome>> = vec![Vec::new(); design.estimators.len()];
    for res in results {
        match res {
            Ok(outcomes) => {
                for (acc, o) in per_estimator.iter_mut().zip(outcomes) {
                    acc.push(o);
                }
            }
            Err(e) => {
                failed += 1;
                first_failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failed as f64 > 0.01 * design.replications as f64 || failed == design.replications {
        return Err(Error::ReplicationFailures {
            failed,
            replications: design.replications,
            first: first_failure.unwrap_or_default(),
        });
    }
    let kept = design.replications - failed;
    let rows: Vec<MetricsRow> = design
        .estimators
        .iter()
        .zip(&per_estimator)
        .map(|(kind, outcomes)| summarize(kind.label(), truth, outcomes))
        .collect();
    for row in &rows {
        let gap = metrics_identity_gap(row, kept);
        if gap > 1e-9 {
            return Err(Error::Data(format!(
                "metrics identity violated for `{}` (relative gap {gap:e})",
                row.method
            )));
        }
    }
    Ok(MetricsTable {
        truth,
        replications: design.replications,
        failed,
        rows,
    })
}
