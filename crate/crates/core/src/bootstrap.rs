//! Bayesian bootstrap weights and posterior draws of population averages.
//!
//! The scaled (cluster) bootstrap treats sampled clusters as the atoms of a
//! discrete distribution. Each cluster carries `f_q = n_q * w̄_q`, the
//! weighted number of observations it represents. Two readings of how `f_q`
//! enters the posterior are offered through [`ScaledWeightMode`]:
//!
//! * `ProductNormalized` draws flat Dirichlet weights `g` over clusters and
//!   uses `g_q f_q / Σ g f`. The explicit normalization makes the estimate a
//!   convex combination of cluster means.
//! * `PseudoPosterior` draws directly from `Dirichlet(f_1, ..., f_l)`, the
//!   posterior under the pseudo-likelihood `∏ π_q^{f_q}`. Its spread depends on
//!   the absolute scale of the weights, so weights should be normalized to
//!   sum to the sample size when this mode is used for inference.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::{CateDraws, SurveyDataset};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomKind {
    Observation,
    Cluster,
}

/// One posterior draw of atom probabilities; nonnegative and summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct BBWeightDraw {
    pub weights: Vec<f64>,
    pub atom_kind: AtomKind,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaledWeightMode {
    #[default]
    ProductNormalized,
    PseudoPosterior,
}

impl FromStr for ScaledWeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" | "product_normalized" => Ok(ScaledWeightMode::ProductNormalized),
            "pseudo" | "pseudo_posterior" => Ok(ScaledWeightMode::PseudoPosterior),
            other => Err(Error::Argument(format!(
                "unknown weight mode `{other}` (expected `product` or `pseudo`)"
            ))),
        }
    }
}

impl fmt::Display for ScaledWeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            ScaledWeightMode::ProductNormalized => "product",
            ScaledWeightMode::PseudoPosterior => "pseudo",
        })
    }
}

/// Linear interpolation between order statistics (R's type 7).
/// `sorted` must be sorted ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

/// Sample mean and SD (n − 1 denominator; 0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = anchored_mean(values.iter().copied());
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Draws of a scalar estimand with an equal-tailed credible interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub draws: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
}

impl PosteriorSummary {
    pub fn from_draws(draws: Vec<f64>, level: f64) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Argument("no draws to summarize".into()));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Argument(format!("interval level {level} not in (0, 1)")));
        }
        let (mean, sd) = mean_sd(&draws);
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        let tail = (1.0 - level) / 2.0;
        Ok(PosteriorSummary {
            ci_lower: quantile_sorted(&sorted, tail),
            ci_upper: quantile_sorted(&sorted, 1.0 - tail),
            draws,
            mean,
            sd,
            level,
        })
    }

    /// Recomputes the interval at another level.
    pub fn at_level(&self, level: f64) -> Result<Self> {
        PosteriorSummary::from_draws(self.draws.clone(), level)
    }

    /// Monte Carlo standard error of the posterior mean.
    pub fn mc_se(&self) -> f64 {
        self.sd / (self.draws.len() as f64).sqrt()
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }

    pub fn envelope(&self, method: Option<&str>, keep_draws: bool) -> SummaryEnvelope {
        SummaryEnvelope {
            method: method.map(String::from),
            draws: keep_draws.then(|| self.draws.clone()),
            mean: self.mean,
            sd: self.sd,
            ci_lower: self.ci_lower,
            ci_upper: self.ci_upper,
            level: self.level,
        }
    }
}

/// JSON shape shared by posterior summaries and frequentist point estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEnvelope {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<Vec<f64>>,
    pub mean: f64,
    pub sd: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= total);
    Some(v)
}

/// Flat Dirichlet over `k` atoms, as normalized unit exponentials.
pub fn draw_dirichlet_flat<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<BBWeightDraw> {
    if k == 0 {
        return Err(Error::Argument("Dirichlet dimension must be at least 1".into()));
    }
    Ok(BBWeightDraw {
        weights: flat_weights(k, rng),
        atom_kind: AtomKind::Observation,
    })
}

fn flat_weights<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    if k == 1 {
        let _: f64 = Exp1.sample(rng);
        return vec![1.0];
    }
    loop {
        let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
        if let Some(w) = normalize(e) {
            return w;
        }
    }
}

/// Dirichlet(alpha) via normalized Gamma(alpha_i, 1) variates.
pub fn draw_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::Argument("Dirichlet dimension must be at least 1".into()));
    }
    let gammas = alpha
        .iter()
        .map(|&a| {
            Gamma::new(a, 1.0)
                .map_err(|_| Error::Data(format!("invalid Dirichlet concentration {a}")))
        })
        .collect::<Result<Vec<_>>>()?;
    // Tiny concentrations can underflow every coordinate; resample in that case.
    for _ in 0..1000 {
        let g: Vec<f64> = gammas.iter().map(|d| d.sample(rng)).collect();
        if alpha.len() == 1 {
            return Ok(vec![1.0]);
        }
        if let Some(w) = normalize(g) {
            return Ok(w);
        }
    }
    Err(Error::Data(
        "Dirichlet draw underflowed; concentrations are too small".into(),
    ))
}

/// Precomputed cluster scale factors `f_q = n_q * w̄_q`.
#[derive(Clone, Debug)]
pub struct ClusterScale {
    f: Vec<f64>,
}

impl ClusterScale {
    pub fn new(dataset: &SurveyDataset) -> Result<Self> {
        if dataset.n_clusters() == 0 {
            return Err(Error::Data("dataset has no clusters".into()));
        }
        let records = dataset.records();
        let f: Vec<f64> = dataset
            .clusters()
            .iter()
            .map(|c| c.members.iter().map(|&i| records[i].weight).sum::<f64>())
            .collect();
        if let Some(q) = f.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Data(format!(
                "cluster `{}` has non-positive weighted size",
                dataset.clusters()[q].label
            )));
        }
        Ok(ClusterScale { f })
    }

    /// The weighted number of observations per cluster.
    pub fn sizes(&self) -> &[f64] {
        &self.f
    }

    pub fn draw<R: Rng + ?Sized>(&self, mode: ScaledWeightMode, rng: &mut R) -> Result<Vec<f64>> {
        match mode {
            ScaledWeightMode::ProductNormalized => {
                let l = self.f.len();
                if l == 1 {
                    let _: f64 = Exp1.sample(rng);
                    return Ok(vec![1.0]);
                }
                // Normalizing g first is redundant: g_q f_q / Σ g f is invariant to scaling g.
                loop {
                    let e: Vec<f64> = self
                        .f
                        .iter()
                        .map(|f| f * Distribution::<f64>::sample(&Exp1, rng))
                        .collect();
                    if let Some(w) = normalize(e) {
                        return Ok(w);
                    }
                }
            }
            ScaledWeightMode::PseudoPosterior => draw_dirichlet(&self.f, rng),
        }
    }
}

/// One draw of normalized cluster-level weights. Since `Σ_{j∈q} w_j = n_q * w̄_q`,
/// the scale factor reduces to the cluster weight total.
pub fn draw_scaled_cluster_weights<R: Rng + ?Sized>(
    dataset: &SurveyDataset,
    mode: ScaledWeightMode,
    rng: &mut R,
) -> Result<BBWeightDraw> {
    Ok(BBWeightDraw {
        weights: ClusterScale::new(dataset)?.draw(mode, rng)?,
        atom_kind: AtomKind::Cluster,
    })
}

/// Mean computed around the first value so a constant input returns that
/// constant bit-for-bit.
pub(crate) fn anchored_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(anchor) = it.next() else { return f64::NAN };
    let n = values.clone().count() as f64;
    anchor + values.map(|x| x - anchor).sum::<f64>() / n
}

/// Weighted combination `Σ w_q m_q` anchored at `m_0`; exact for constant `m`.
pub(crate) fn anchored_combination(weights: &[f64], means: &[f64]) -> f64 {
    let anchor = means[0];
    anchor
        + weights
            .iter()
            .zip(means)
            .map(|(w, m)| w * (m - anchor))
            .sum::<f64>()
}

/// Unweighted within-cluster means of every draw row, plus the cluster scales.
pub(crate) struct PateEngine {
    pub scale: ClusterScale,
    /// Row-major `n_draws × n_clusters`.
    pub cluster_means: Vec<f64>,
    pub n_draws: usize,
    pub n_clusters: usize,
}

impl PateEngine {
    pub fn new(dataset: &SurveyDataset, cate: &CateDraws) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        cate.check_aligned(dataset)?;
        let scale = ClusterScale::new(dataset)?;
        let n_clusters = dataset.n_clusters();
        let mut cluster_means = Vec::with_capacity(cate.n_draws() * n_clusters);
        for row in cate.rows() {
            for c in dataset.clusters() {
                cluster_means.push(anchored_mean(c.members.iter().map(|&i| row[i])));
            }
        }
        Ok(PateEngine {
            scale,
            cluster_means,
            n_draws: cate.n_draws(),
            n_clusters,
        })
    }

    pub fn means(&self, d: usize) -> &[f64] {
        &self.cluster_means[d * self.n_clusters..(d + 1) * self.n_clusters]
    }

    /// Runs `n_bb` draws. Output draw `b` pairs CATE row `b mod D` with a fresh
    /// weight draw; `visit(b, d, weights, pate)` sees each one in order.
    pub fn run<R: Rng + ?Sized>(
        &self,
        mode: ScaledWeightMode,
        n_bb: usize,
        rng: &mut R,
        mut visit: impl FnMut(usize, usize, &[f64], f64),
    ) -> Result<Vec<f64>> {
        if n_bb == 0 {
            return Err(Error::Argument("n_bb must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(n_bb);
        for b in 0..n_bb {
            let d = b % self.n_draws;
            let w = self.scale.draw(mode, rng)?;
            let pate = anchored_combination(&w, self.means(d));
            visit(b, d, &w, pate);
            out.push(pate);
        }
        Ok(out)
    }
}

/// Posterior draws of the population average of `cate` over the target
/// population represented by `dataset`. Summarized at the 95% level.
pub fn estimate_pate<R: Rng + ?Sized>(
    dataset: &SurveyDataset,
    cate: &CateDraws,
    mode: ScaledWeightMode,
    n_bb: usize,
    rng: &mut R,
) -> Result<PosteriorSummary> {
    let engine = PateEngine::new(dataset, cate)?;
    let draws = engine.run(mode, n_bb, rng, |_, _, _, _| {})?;
    PosteriorSummary::from_draws(draws, 0.95)
}

/// Posterior draws of the population mean of a numeric column.
pub fn estimate_mean<R: Rng + ?Sized>(
    dataset: &SurveyDataset,
    outcome: &str,
    mode: ScaledWeightMode,
    n_bb: usize,
    rng: &mut R,
) -> Result<PosteriorSummary> {
    let y = dataset.numeric_column(outcome)?;
    let cate = CateDraws::degenerate(y, dataset.ids().map(String::from).collect())?;
    estimate_pate(dataset, &cate, mode, n_bb, rng)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{ObservationRecord, Schema};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy(clusters: &[(&str, &str, usize, f64)]) -> SurveyDataset {
        let mut records = Vec::new();
        for (s, c, n, w) in clusters {
            for _ in 0..*n {
                records.push(ObservationRecord {
                    id: (records.len() + 1).to_string(),
                    stratum: s.to_string(),
                    cluster: c.to_string(),
                    weight: *w,
                    covariates: vec![],
                    outcome: None,
                    segment: None,
                    auxiliary: vec![],
                });
            }
        }
        SurveyDataset::from_records(Schema::default(), vec![], records).unwrap()
    }

    fn ids(ds: &SurveyDataset) -> Vec<String> {
        ds.ids().map(String::from).collect()
    }

    #[test]
    fn flat_dirichlet_k1_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(draw_dirichlet_flat(1, &mut rng).unwrap().weights, vec![1.0]);
        }
        assert!(draw_dirichlet_flat(0, &mut rng).is_err());
    }

    #[test]
    fn flat_dirichlet_mean_is_one_third() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut acc = [0.0; 3];
        for _ in 0..10_000 {
            let w = draw_dirichlet_flat(3, &mut rng).unwrap().weights;
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
            for (a, x) in acc.iter_mut().zip(&w) {
                *a += x;
            }
        }
        for a in acc {
            assert!((a / 10_000.0 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn single_cluster_weight_is_one() {
        let ds = toy(&[("A", "1", 3, 2.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mode in [ScaledWeightMode::ProductNormalized, ScaledWeightMode::PseudoPosterior] {
            let w = draw_scaled_cluster_weights(&ds, mode, &mut rng).unwrap();
            assert_eq!(w.weights, vec![1.0]);
            assert_eq!(w.atom_kind, AtomKind::Cluster);
        }
    }

    // f = (10, 30): one cluster of 10 at weight 1, one of 10 at weight 3.
    fn two_clusters() -> SurveyDataset {
        toy(&[("A", "1", 10, 1.0), ("A", "2", 10, 3.0)])
    }

    #[test]
    fn pseudo_posterior_mean_matches_dirichlet() {
        let ds = two_clusters();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let m: f64 = (0..n)
            .map(|_| draw_scaled_cluster_weights(&ds, ScaledWeightMode::PseudoPosterior, &mut rng).unwrap().weights[0])
            .sum::<f64>()
            / n as f64;
        assert!((m - 0.25).abs() < 0.01, "{m}");
    }

    #[test]
    fn product_normalized_mean_matches_monte_carlo_oracle() {
        // Oracle: E[10g / (10g + 30(1 - g))], g ~ Uniform(0, 1), by plain Monte Carlo.
        let mut orng = ChaCha8Rng::seed_from_u64(99);
        let oracle = (0..1_000_000)
            .map(|_| {
                let g: f64 = orng.random();
                10.0 * g / (10.0 * g + 30.0 * (1.0 - g))
            })
            .sum::<f64>()
            / 1e6;
        let ds = two_clusters();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let m: f64 = (0..n)
            .map(|_| draw_scaled_cluster_weights(&ds, ScaledWeightMode::ProductNormalized, &mut rng).unwrap().weights[0])
            .sum::<f64>()
            / n as f64;
        assert!((m - oracle).abs() < 0.01, "{m} vs {oracle}");
    }

    #[test]
    fn constant_cate_returns_constant_exactly() {
        let ds = toy(&[("A", "1", 3, 1.0), ("A", "2", 2, 5.0), ("B", "3", 4, 0.3)]);
        let cate = CateDraws::from_rows(vec![vec![0.1; 9]; 3], ids(&ds)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for mode in [ScaledWeightMode::ProductNormalized, ScaledWeightMode::PseudoPosterior] {
            let s = estimate_pate(&ds, &cate, mode, 50, &mut rng).unwrap();
            assert!(s.draws.iter().all(|&x| x == 0.1));
        }
    }

    #[test]
    fn single_cluster_alternates_row_means() {
        let ds = toy(&[("A", "1", 2, 1.0)]);
        let cate = CateDraws::from_rows(vec![vec![0.1, 0.3], vec![0.2, 0.4]], ids(&ds)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = estimate_pate(&ds, &cate, ScaledWeightMode::ProductNormalized, 6, &mut rng).unwrap();
        for (b, x) in s.draws.iter().enumerate() {
            let want = if b % 2 == 0 { 0.2 } else { 0.3 };
            assert!((x - want).abs() < 1e-15, "{b}: {x}");
        }
    }

    #[test]
    fn misaligned_cate_is_rejected() {
        let ds = toy(&[("A", "1", 3, 1.0)]);
        let cate = CateDraws::from_rows(vec![vec![0.0; 2]], vec!["1".into(), "2".into()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(matches!(
            estimate_pate(&ds, &cate, ScaledWeightMode::ProductNormalized, 5, &mut rng),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn constant_outcome_mean() {
        let mut ds = toy(&[("A", "1", 3, 1.0), ("A", "2", 2, 2.0)]);
        let y = vec![5.0; ds.len()];
        let recs: Vec<_> = ds
            .records()
            .iter()
            .zip(&y)
            .map(|(r, &v)| ObservationRecord { outcome: Some(v), ..r.clone() })
            .collect();
        ds = SurveyDataset::from_records(
            Schema { outcome: Some("y".into()), ..Schema::default() },
            vec![],
            recs,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = estimate_mean(&ds, "y", ScaledWeightMode::ProductNormalized, 20, &mut rng).unwrap();
        assert!(s.draws.iter().all(|&x| x == 5.0));
        assert!(estimate_mean(&ds, "nope", ScaledWeightMode::ProductNormalized, 20, &mut rng).is_err());
    }

    #[test]
    fn summary_quantiles_are_type_seven() {
        let s = PosteriorSummary::from_draws(vec![4.0, 1.0, 3.0, 2.0, 5.0], 0.5).unwrap();
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.ci_lower, 2.0);
        assert_eq!(s.ci_upper, 4.0);
        assert!((s.sd - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(quantile(&[0.0, 10.0], 0.05), 0.5);
    }

    #[test]
    fn envelope_omits_draws_unless_kept() {
        let s = PosteriorSummary::from_draws(vec![1.0, 2.0], 0.95).unwrap();
        let j = serde_json::to_value(s.envelope(None, false)).unwrap();
        assert!(j.get("draws").is_none());
        let j = serde_json::to_value(s.envelope(Some("bb"), true)).unwrap();
        assert_eq!(j["draws"].as_array().unwrap().len(), 2);
        assert_eq!(j["method"], "bb");
    }
}
