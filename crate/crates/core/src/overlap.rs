//! Overlap diagnostics between the source study and the target population.
//!
//! The selection score of a unit is `P(complier | X, source) * P(source | X)`.
//! Its logit is standardized against source compliers, target units below a
//! low complier percentile are flagged, and the population average is
//! recomputed with flagged units excluded or given a null effect.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{estimate_pate, mean_sd, quantile, PosteriorSummary, ScaledWeightMode};
use crate::data::{CateDraws, CovariateValue, SourceSample, SurveyDataset};
use crate::error::{Error, Result};

/// Scores are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the logit.
pub const PROB_CLAMP: f64 = 1e-6;
/// Ridge penalty on (standardized) slopes of the membership model.
pub const RIDGE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitPopulation {
    Source,
    Target,
}

/// Numeric design rows for a set of units. Categorical covariates become
/// indicator columns `name=level` for every level but the first (sorted).
pub fn encode_covariates(
    names: &[String],
    rows: &[&[CovariateValue]],
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut columns: Vec<String> = Vec::new();
    let mut encoders: Vec<Box<dyn Fn(&CovariateValue) -> Result<Vec<f64>>>> = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let categorical = rows
            .iter()
            .any(|r| matches!(r[j], CovariateValue::Category(_)));
        if categorical {
            let mut levels: Vec<String> = rows.iter().map(|r| r[j].to_string()).collect();
            levels.sort();
            levels.dedup();
            let kept: Vec<String> = levels.into_iter().skip(1).collect();
            columns.extend(kept.iter().map(|l| format!("{name}={l}")));
            encoders.push(Box::new(move |v| {
                let s = v.to_string();
                Ok(kept.iter().map(|l| if *l == s { 1.0 } else { 0.0 }).collect())
            }));
        } else {
            columns.push(name.clone());
            let name = name.clone();
            encoders.push(Box::new(move |v| match v {
                CovariateValue::Real(x) => Ok(vec![*x]),
                CovariateValue::Category(_) => {
                    Err(Error::Schema(format!("covariate `{name}` mixes types")))
                }
            }));
        }
    }
    let matrix = rows
        .iter()
        .map(|r| {
            let mut out = Vec::with_capacity(columns.len());
            for (enc, v) in encoders.iter().zip(r.iter()) {
                out.extend(enc(v)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok((columns, matrix))
}

/// Stacked source and target units for the membership model.
#[derive(Clone, Debug)]
pub struct StackedUnits {
    pub names: Vec<String>,
    pub covariates: Vec<Vec<f64>>,
    pub population: Vec<UnitPopulation>,
    pub weights: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weighted ridge-logistic fit of `P(source | X)` by iteratively reweighted
/// least squares. Returns fitted probabilities for every stacked unit.
pub fn fit_membership_model(units: &StackedUnits) -> Result<Vec<f64>> {
    const MAX_ITER: usize = 100;
    const TOL: f64 = 1e-10;
    const DIVERGED: f64 = 30.0;

    let n = units.population.len();
    if units.covariates.len() != n || units.weights.len() != n {
        return Err(Error::Alignment("stacked inputs have different lengths".into()));
    }
    let y: Vec<f64> = units
        .population
        .iter()
        .map(|p| if *p == UnitPopulation::Source { 1.0 } else { 0.0 })
        .collect();
    if !y.contains(&1.0) || !y.contains(&0.0) {
        return Err(Error::Data("membership model needs both source and target units".into()));
    }
    if units.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Data("membership weights must be positive".into()));
    }

    // Standardize non-constant columns; constant ones carry no information.
    let p = units.names.len();
    let mut kept = Vec::new();
    let mut centers = Vec::new();
    let mut scales = Vec::new();
    for j in 0..p {
        let col: Vec<f64> = units.covariates.iter().map(|r| r[j]).collect();
        let (m, s) = mean_sd(&col);
        if s > 0.0 {
            kept.push(j);
            centers.push(m);
            scales.push(s);
        }
        let extremes = |pop: UnitPopulation| {
            col.iter()
                .zip(&units.population)
                .filter(|(_, q)| **q == pop)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| {
                    (lo.min(*x), hi.max(*x))
                })
        };
        let (slo, shi) = extremes(UnitPopulation::Source);
        let (tlo, thi) = extremes(UnitPopulation::Target);
        if shi < tlo || thi < slo {
            return Err(Error::Separation {
                covariate: Some(units.names[j].clone()),
            });
        }
    }
    let k = kept.len() + 1;
    let x: Vec<Vec<f64>> = units
        .covariates
        .iter()
        .map(|r| {
            let mut row = vec![1.0];
            row.extend(
                kept.iter()
                    .zip(centers.iter().zip(&scales))
                    .map(|(&j, (c, s))| (r[j] - c) / s),
            );
            row
        })
        .collect();

    let mut beta = nalgebra::DVector::<f64>::zeros(k);
    for _ in 0..MAX_ITER {
        let mut hessian = nalgebra::DMatrix::<f64>::zeros(k, k);
        let mut grad = nalgebra::DVector::<f64>::zeros(k);
        for ((row, &yi), &wi) in x.iter().zip(&y).zip(&units.weights) {
            let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let mu = sigmoid(eta);
            let v = wi * mu * (1.0 - mu);
            for a in 0..k {
                grad[a] += wi * (yi - mu) * row[a];
                for b in 0..=a {
                    hessian[(a, b)] += v * row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hessian[(b, a)] = hessian[(a, b)];
            }
            if a > 0 {
                hessian[(a, a)] += RIDGE;
                grad[a] -= RIDGE * beta[a];
            }
        }
        let step = hessian
            .cholesky()
            .ok_or_else(|| Error::Convergence("membership model information matrix is singular".into()))?
            .solve(&grad);
        beta += &step;
        if beta.iter().skip(1).any(|b| b.abs() > DIVERGED) {
            return Err(Error::Separation { covariate: None });
        }
        if step.amax() < TOL {
            return Ok(x
                .iter()
                .map(|row| sigmoid(row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum()))
                .collect());
        }
    }
    Err(Error::Convergence(format!(
        "membership model did not converge in {MAX_ITER} iterations"
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionScores {
    pub raw: Vec<f64>,
    pub logit: Vec<f64>,
    /// Filled by [`standardize_scores`].
    pub standardized: Option<Vec<f64>>,
    pub complier_mean: Option<f64>,
    pub complier_sd: Option<f64>,
    pub population: Vec<UnitPopulation>,
}

/// `raw = compliance * membership`, clamped before taking the logit.
pub fn selection_score(
    compliance: &[f64],
    membership: &[f64],
    population: Vec<UnitPopulation>,
) -> Result<SelectionScores> {
    if compliance.len() != membership.len() || compliance.len() != population.len() {
        return Err(Error::Alignment(format!(
            "{} compliance scores, {} membership probabilities, {} units",
            compliance.len(),
            membership.len(),
            population.len()
        )));
    }
    if let Some(x) = compliance
        .iter()
        .chain(membership)
        .find(|x| !(0.0..=1.0).contains(*x))
    {
        return Err(Error::Argument(format!("probability {x} outside [0, 1]")));
    }
    let raw: Vec<f64> = compliance
        .iter()
        .zip(membership)
        .map(|(c, m)| (c * m).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
        .collect();
    let logit = raw.iter().map(|p| (p / (1.0 - p)).ln()).collect();
    Ok(SelectionScores {
        raw,
        logit,
        standardized: None,
        complier_mean: None,
        complier_sd: None,
        population,
    })
}

/// Centers and scales logits by the complier mean and SD (n − 1 denominator).
pub fn standardize_scores(scores: &SelectionScores, complier_ids: &[usize]) -> Result<SelectionScores> {
    if complier_ids.len() < 2 {
        return Err(Error::Data("standardization needs at least 2 compliers".into()));
    }
    let logits: Vec<f64> = complier_ids
        .iter()
        .map(|&i| {
            scores
                .logit
                .get(i)
                .copied()
                .ok_or_else(|| Error::Argument(format!("complier index {i} out of range")))
        })
        .collect::<Result<_>>()?;
    let (m, s) = mean_sd(&logits);
    if !(s > 0.0) {
        return Err(Error::Data("complier selection scores have zero spread".into()));
    }
    Ok(SelectionScores {
        standardized: Some(scores.logit.iter().map(|e| (e - m) / s).collect()),
        complier_mean: Some(m),
        complier_sd: Some(s),
        ..scores.clone()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportFlags {
    pub threshold: f64,
    /// One entry per target unit, in stacking order.
    pub flagged: Vec<bool>,
    pub flagged_proportion: f64,
}

/// Flags target units whose standardized score falls strictly below the
/// `percentile` quantile (type 7) of complier scores. `target_weights` are the
/// survey weights of the target units, in stacking order.
pub fn flag_low_support(
    scores: &SelectionScores,
    complier_ids: &[usize],
    target_weights: &[f64],
    percentile: f64,
) -> Result<SupportFlags> {
    let std = scores
        .standardized
        .as_ref()
        .ok_or_else(|| Error::Argument("scores are not standardized".into()))?;
    if !(0.0..=1.0).contains(&percentile) {
        return Err(Error::Argument(format!("percentile {percentile} outside [0, 1]")));
    }
    let complier: Vec<f64> = complier_ids.iter().map(|&i| std[i]).collect();
    if complier.is_empty() {
        return Err(Error::Data("no compliers".into()));
    }
    let threshold = quantile(&complier, percentile);
    let flagged: Vec<bool> = std
        .iter()
        .zip(&scores.population)
        .filter(|(_, p)| **p == UnitPopulation::Target)
        .map(|(s, _)| *s < threshold)
        .collect();
    if flagged.len() != target_weights.len() {
        return Err(Error::Alignment(format!(
            "{} target units but {} target weights",
            flagged.len(),
            target_weights.len()
        )));
    }
    let total: f64 = target_weights.iter().sum();
    let low: f64 = flagged
        .iter()
        .zip(target_weights)
        .filter(|(f, _)| **f)
        .map(|(_, w)| w)
        .sum();
    Ok(SupportFlags {
        threshold,
        flagged,
        flagged_proportion: if total > 0.0 { low / total } else { 0.0 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportPolicy {
    /// Drop flagged units; clusters left empty disappear and `f_q` is recomputed.
    Exclude,
    /// Keep flagged units with a zero effect in every draw.
    NullImpute,
}

pub fn pate_with_support_policy<R: Rng + ?Sized>(
    dataset: &SurveyDataset,
    cate: &CateDraws,
    flagged: &[bool],
    policy: SupportPolicy,
    mode: ScaledWeightMode,
    n_bb: usize,
    rng: &mut R,
) -> Result<PosteriorSummary> {
    if flagged.len() != dataset.len() {
        return Err(Error::Alignment(format!(
            "{} flags for {} observations",
            flagged.len(),
            dataset.len()
        )));
    }
    cate.check_aligned(dataset)?;
    match policy {
        SupportPolicy::Exclude => {
            let keep: Vec<usize> = (0..dataset.len()).filter(|&i| !flagged[i]).collect();
            if keep.is_empty() {
                return Err(Error::Data("every observation is flagged; nothing left".into()));
            }
            let sub = dataset.subset(&keep)?;
            estimate_pate(&sub, &cate.select_columns(&keep), mode, n_bb, rng)
        }
        SupportPolicy::NullImpute => {
            let imputed = cate.map(|j, x| if flagged[j] { 0.0 } else { x });
            estimate_pate(dataset, &imputed, mode, n_bb, rng)
        }
    }
}

/// CSV with one row per unit: `unit_id,population,raw,logit,standardized,flagged`.
/// `flagged` is empty for source units.
pub fn scores_csv_bytes(ids: &[String], scores: &SelectionScores, flags: &SupportFlags) -> Result<Vec<u8>> {
    let std = scores
        .standardized
        .as_ref()
        .ok_or_else(|| Error::Argument("scores are not standardized".into()))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["unit_id", "population", "raw", "logit", "standardized", "flagged"])?;
    let mut target = flags.flagged.iter();
    for (i, id) in ids.iter().enumerate() {
        let (pop, flag) = match scores.population[i] {
            UnitPopulation::Source => ("source", String::new()),
            UnitPopulation::Target => (
                "target",
                target.next().map(|f| f.to_string()).unwrap_or_default(),
            ),
        };
        w.write_record([
            id.clone(),
            pop.to_string(),
            scores.raw[i].to_string(),
            scores.logit[i].to_string(),
            std[i].to_string(),
            flag,
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv buffer: {e}")))
}

/// Everything the overlap report needs, source units first then target units.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapDiagnostics {
    pub unit_ids: Vec<String>,
    pub membership: Vec<f64>,
    pub scores: SelectionScores,
    pub flags: SupportFlags,
}

/// Stacks source and target units, fits the membership model, and flags target
/// units below the `percentile` of complier scores. Target units enter the fit
/// with survey weights rescaled to sum to the target sample size; source units
/// have weight 1.
pub fn diagnose_overlap(
    target: &SurveyDataset,
    target_compliance: &[f64],
    source: &SourceSample,
    percentile: f64,
) -> Result<OverlapDiagnostics> {
    if target_compliance.len() != target.len() {
        return Err(Error::Alignment(format!(
            "{} compliance scores for {} target units",
            target_compliance.len(),
            target.len()
        )));
    }
    let rows: Vec<&[CovariateValue]> = source
        .covariates
        .iter()
        .map(Vec::as_slice)
        .chain(target.records().iter().map(|r| r.covariates.as_slice()))
        .collect();
    let (names, covariates) = encode_covariates(target.covariate_names(), &rows)?;
    let tw = target.weights();
    let scale = target.len() as f64 / tw.iter().sum::<f64>();
    let mut population = vec![UnitPopulation::Source; source.len()];
    population.extend(std::iter::repeat_n(UnitPopulation::Target, target.len()));
    let mut weights = vec![1.0; source.len()];
    weights.extend(tw.iter().map(|w| w * scale));
    let units = StackedUnits {
        names,
        covariates,
        population: population.clone(),
        weights,
    };
    let membership = fit_membership_model(&units)?;
    let compliance: Vec<f64> = source
        .compliance
        .iter()
        .chain(target_compliance)
        .copied()
        .collect();
    let compliers = source.complier_ids();
    let scores = selection_score(&compliance, &membership, population)?;
    let scores = standardize_scores(&scores, &compliers)?;
    let flags = flag_low_support(&scores, &compliers, &tw, percentile)?;
    let unit_ids = source
        .ids
        .iter()
        .cloned()
        .chain(target.ids().map(String::from))
        .collect();
    Ok(OverlapDiagnostics {
        unit_ids,
        membership,
        scores,
        flags,
    })
}
