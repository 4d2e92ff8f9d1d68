//! Frequentist comparators for the bootstrap: a naive estimator that treats
//! the sample as SRS, and the Hájek mean with a Taylor-linearized variance
//! under the with-replacement (ultimate cluster) approximation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bootstrap::{mean_sd, SummaryEnvelope};
use crate::data::SurveyDataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub value: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub method: String,
}

impl PointEstimate {
    fn normal(value: f64, std_error: f64, level: f64, method: &str) -> Result<Self> {
        let z = normal_quantile(level)?;
        Ok(PointEstimate {
            value,
            std_error,
            ci_lower: value - z * std_error,
            ci_upper: value + z * std_error,
            level,
            method: method.into(),
        })
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }

    pub fn envelope(&self) -> SummaryEnvelope {
        SummaryEnvelope {
            method: Some(self.method.clone()),
            draws: None,
            mean: self.value,
            sd: self.std_error,
            ci_lower: self.ci_lower,
            ci_upper: self.ci_upper,
            level: self.level,
        }
    }
}

/// Two-sided standard normal critical value for a central interval.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!("interval level {level} not in (0, 1)")));
    }
    let std = Normal::standard();
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

/// What to do with strata that contain a single sampled cluster.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingletonStrata {
    #[default]
    Error,
    /// Treat singleton strata as certainty units contributing no variance.
    Certainty,
}

pub const NAIVE: &str = "naive";
pub const DESIGN: &str = "design";
pub const BB: &str = "bb";

/// Unweighted mean with SRS standard error `s / √n`.
pub fn naive_mean(dataset: &SurveyDataset, outcome: &str, level: f64) -> Result<PointEstimate> {
    let y = dataset.numeric_column(outcome)?;
    if y.len() < 2 {
        return Err(Error::Data("naive variance needs at least 2 observations".into()));
    }
    let (mean, sd) = mean_sd(&y);
    PointEstimate::normal(mean, sd / (y.len() as f64).sqrt(), level, NAIVE)
}

/// Hájek weighted mean with linearized with-replacement variance
/// `Σ_h n_h/(n_h − 1) Σ_c (z_hc − z̄_h)²`, where `z_hc` totals the residual
/// scores `w_i (y_i − ŷ) / Σ w` over cluster `c` of stratum `h`.
pub fn design_mean(
    dataset: &SurveyDataset,
    outcome: &str,
    level: f64,
    singletons: SingletonStrata,
) -> Result<PointEstimate> {
    let y = dataset.numeric_column(outcome)?;
    let records = dataset.records();
    let total_w: f64 = records.iter().map(|r| r.weight).sum();
    let anchor = y[0];
    let estimate = anchor
        + records
            .iter()
            .zip(&y)
            .map(|(r, y)| r.weight * (y - anchor))
            .sum::<f64>()
            / total_w;

    let mut cluster_totals: Vec<Vec<f64>> = vec![Vec::new(); dataset.n_strata()];
    for c in dataset.clusters() {
        let z: f64 = c
            .members
            .iter()
            .map(|&i| records[i].weight * (y[i] - estimate) / total_w)
            .sum();
        cluster_totals[c.stratum].push(z);
    }
    let mut variance = 0.0;
    for (h, z) in cluster_totals.iter().enumerate() {
        let n_h = z.len();
        if n_h == 1 {
            match singletons {
                SingletonStrata::Error => {
                    return Err(Error::Design(format!(
                        "stratum `{}` has a single cluster; collapse it with a neighbouring \
                         stratum or treat it as a certainty unit",
                        dataset.strata()[h]
                    )))
                }
                SingletonStrata::Certainty => continue,
            }
        }
        let zbar = z.iter().sum::<f64>() / n_h as f64;
        let ss: f64 = z.iter().map(|v| (v - zbar).powi(2)).sum();
        variance += n_h as f64 / (n_h as f64 - 1.0) * ss;
    }
    PointEstimate::normal(estimate, variance.sqrt(), level, DESIGN)
}
