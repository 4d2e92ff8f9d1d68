//! Survey datasets, CATE draw matrices and synthetic finite populations.
//!
//! Everything here is immutable once constructed. A [`SurveyDataset`] keeps its
//! rows in file order and indexes clusters by `(stratum, cluster)` pairs, so a
//! cluster label reused in two strata can never be merged by accident. The
//! loader still rejects such files, since a PSU id that spans strata almost
//! always means a broken export.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A covariate cell: numeric columns parse to `Real`, everything else is a category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CovariateValue {
    Real(f64),
    Category(String),
}

impl fmt::Display for CovariateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateValue::Real(x) => write!(f, "{x}"),
            CovariateValue::Category(s) => f.write_str(s),
        }
    }
}

/// Column mapping for survey CSV files.
///
/// `covariates: None` means "every column not claimed by another role".
/// Columns listed in `categorical` are kept as strings even when they look
/// numeric; other covariates are numeric iff every value parses as a real.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub id: Option<String>,
    pub stratum: String,
    pub cluster: String,
    pub weight: String,
    pub outcome: Option<String>,
    pub segment: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub categorical: Vec<String>,
    /// Numeric columns carried along (scores, measures of size) but not used as covariates.
    pub auxiliary: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            id: None,
            stratum: "stratum".into(),
            cluster: "cluster".into(),
            weight: "weight".into(),
            outcome: None,
            segment: None,
            covariates: None,
            categorical: Vec::new(),
            auxiliary: Vec::new(),
        }
    }
}

impl Schema {
    fn reserved(&self) -> Vec<&str> {
        let mut cols = vec![self.stratum.as_str(), self.cluster.as_str(), self.weight.as_str()];
        cols.extend(self.id.as_deref());
        cols.extend(self.outcome.as_deref());
        cols.extend(self.segment.as_deref());
        cols.extend(self.auxiliary.iter().map(String::as_str));
        cols
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub id: String,
    pub stratum: String,
    pub cluster: String,
    pub weight: f64,
    /// Values in the order of [`SurveyDataset::covariate_names`].
    pub covariates: Vec<CovariateValue>,
    pub outcome: Option<f64>,
    pub segment: Option<String>,
    /// Values in the order of the schema's `auxiliary` list.
    pub auxiliary: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterInfo {
    pub stratum: usize,
    pub label: String,
    pub members: Vec<usize>,
}

impl ClusterInfo {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub stratum: String,
    pub clusters: usize,
    pub observations: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub strata: Vec<StratumSummary>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn single(msg: String) -> Self {
        ValidationReport {
            errors: vec![msg],
            ..Default::default()
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.errors.join("; "))
    }
}

/// Checks the hard invariants of a set of records. Row numbers in messages are
/// 1-based data rows (the header is not counted).
pub fn validate_records(records: &[ObservationRecord]) -> ValidationReport {
    let mut report = ValidationReport::default();
    if records.is_empty() {
        report.errors.push("dataset has no observations".into());
        return report;
    }
    let mut cluster_stratum: HashMap<&str, &str> = HashMap::new();
    let mut summaries: Vec<StratumSummary> = Vec::new();
    let mut stratum_pos: HashMap<&str, usize> = HashMap::new();
    let mut seen_clusters: HashMap<(&str, &str), ()> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let row = i + 1;
        if !(r.weight.is_finite() && r.weight > 0.0) {
            report.errors.push(format!(
                "row {row}: weight must be strictly positive and finite (got {})",
                r.weight
            ));
        }
        if let Some(&s) = cluster_stratum.get(r.cluster.as_str()) {
            if s != r.stratum {
                report.errors.push(format!(
                    "row {row}: cluster crosses strata (cluster `{}` appears in `{s}` and `{}`)",
                    r.cluster, r.stratum
                ));
            }
        } else {
            cluster_stratum.insert(&r.cluster, &r.stratum);
        }
        for (j, v) in r.covariates.iter().enumerate() {
            if let CovariateValue::Real(x) = v {
                if !x.is_finite() {
                    report
                        .errors
                        .push(format!("row {row}: covariate {} is not finite", j + 1));
                }
            }
        }
        if let Some(y) = r.outcome {
            if !y.is_finite() {
                report.errors.push(format!("row {row}: outcome is not finite"));
            }
        }
        if r.auxiliary.iter().any(|x| !x.is_finite()) {
            report
                .errors
                .push(format!("row {row}: auxiliary column is not finite"));
        }
        let pos = *stratum_pos.entry(&r.stratum).or_insert_with(|| {
            summaries.push(StratumSummary {
                stratum: r.stratum.clone(),
                ..Default::default()
            });
            summaries.len() - 1
        });
        summaries[pos].observations += 1;
        if seen_clusters
            .insert((r.stratum.as_str(), r.cluster.as_str()), ())
            .is_none()
        {
            summaries[pos].clusters += 1;
        }
    }
    if let Some(first) = records.first() {
        let ncov = first.covariates.len();
        let naux = first.auxiliary.len();
        if records
            .iter()
            .any(|r| r.covariates.len() != ncov || r.auxiliary.len() != naux)
        {
            report
                .errors
                .push("records disagree on the number of covariate columns".into());
        }
        if records.iter().any(|r| r.outcome.is_some() != first.outcome.is_some()) {
            report
                .errors
                .push("outcome present for some observations but not others".into());
        }
        if records.iter().any(|r| r.segment.is_some() != first.segment.is_some()) {
            report
                .errors
                .push("segment present for some observations but not others".into());
        }
    }
    report.strata = summaries;
    report
}

/// Target-population survey sample under a stratified cluster design.
#[derive(Clone, Debug, PartialEq)]
pub struct SurveyDataset {
    schema: Schema,
    covariate_names: Vec<String>,
    records: Vec<ObservationRecord>,
    strata: Vec<String>,
    clusters: Vec<ClusterInfo>,
    obs_cluster: Vec<usize>,
}

impl SurveyDataset {
    /// Builds a dataset from records. `schema.covariates` must name the
    /// covariate columns in record order (it is filled from `covariate_names`
    /// when absent).
    pub fn from_records(
        mut schema: Schema,
        covariate_names: Vec<String>,
        records: Vec<ObservationRecord>,
    ) -> Result<Self> {
        let report = validate_records(&records);
        if !report.is_ok() {
            return Err(Error::Validation(report));
        }
        if records[0].covariates.len() != covariate_names.len() {
            return Err(Error::Schema(format!(
                "{} covariate names for {} covariate values",
                covariate_names.len(),
                records[0].covariates.len()
            )));
        }
        if records[0].auxiliary.len() != schema.auxiliary.len() {
            return Err(Error::Schema("auxiliary columns do not match schema".into()));
        }
        schema.covariates = Some(covariate_names.clone());

        let mut strata = Vec::new();
        let mut stratum_index: HashMap<String, usize> = HashMap::new();
        let mut clusters: Vec<ClusterInfo> = Vec::new();
        let mut cluster_index: HashMap<(usize, String), usize> = HashMap::new();
        let mut obs_cluster = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let h = *stratum_index.entry(r.stratum.clone()).or_insert_with(|| {
                strata.push(r.stratum.clone());
                strata.len() - 1
            });
            let q = *cluster_index
                .entry((h, r.cluster.clone()))
                .or_insert_with(|| {
                    clusters.push(ClusterInfo {
                        stratum: h,
                        label: r.cluster.clone(),
                        members: Vec::new(),
                    });
                    clusters.len() - 1
                });
            clusters[q].members.push(i);
            obs_cluster.push(q);
        }
        Ok(SurveyDataset {
            schema,
            covariate_names,
            records,
            strata,
            clusters,
            obs_cluster,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn records(&self) -> &[ObservationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn strata(&self) -> &[String] {
        &self.strata
    }

    pub fn clusters(&self) -> &[ClusterInfo] {
        &self.clusters
    }

    /// Cluster index of observation `i`.
    pub fn cluster_of(&self, i: usize) -> usize {
        self.obs_cluster[i]
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.weight).collect()
    }

    pub fn segments(&self) -> Option<Vec<&str>> {
        self.records
            .iter()
            .map(|r| r.segment.as_deref())
            .collect::<Option<Vec<_>>>()
    }

    /// Numeric values of a named column: the outcome, an auxiliary column, or a
    /// numeric covariate.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        if self.schema.outcome.as_deref() == Some(name) {
            return self
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    r.outcome
                        .ok_or_else(|| Error::Data(format!("row {}: outcome missing", i + 1)))
                })
                .collect();
        }
        if let Some(j) = self.schema.auxiliary.iter().position(|a| a == name) {
            return Ok(self.records.iter().map(|r| r.auxiliary[j]).collect());
        }
        if let Some(j) = self.covariate_names.iter().position(|a| a == name) {
            return self
                .records
                .iter()
                .map(|r| match &r.covariates[j] {
                    CovariateValue::Real(x) => Ok(*x),
                    CovariateValue::Category(_) => Err(Error::Schema(format!(
                        "column `{name}` is categorical, not numeric"
                    ))),
                })
                .collect();
        }
        Err(Error::Schema(format!("no numeric column named `{name}`")))
    }

    /// Keeps the given observations (in the given order). Clusters and strata
    /// that lose all members disappear.
    pub fn subset(&self, keep: &[usize]) -> Result<SurveyDataset> {
        let records = keep.iter().map(|&i| self.records[i].clone()).collect();
        SurveyDataset::from_records(self.schema.clone(), self.covariate_names.clone(), records)
    }

    /// Same records with every weight replaced.
    pub fn with_weights(&self, weights: &[f64]) -> Result<SurveyDataset> {
        if weights.len() != self.len() {
            return Err(Error::Argument("weight vector length mismatch".into()));
        }
        let records = self
            .records
            .iter()
            .zip(weights)
            .map(|(r, &w)| ObservationRecord {
                weight: w,
                ..r.clone()
            })
            .collect();
        SurveyDataset::from_records(self.schema.clone(), self.covariate_names.clone(), records)
    }

    pub fn validation_report(&self) -> ValidationReport {
        validate_records(&self.records)
    }

    fn header(&self) -> Vec<String> {
        let s = &self.schema;
        let mut h = Vec::new();
        h.extend(s.id.clone());
        h.push(s.stratum.clone());
        h.push(s.cluster.clone());
        h.push(s.weight.clone());
        h.extend(s.outcome.clone());
        h.extend(s.segment.clone());
        h.extend(self.covariate_names.iter().cloned());
        h.extend(s.auxiliary.iter().cloned());
        h
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for r in &self.records {
            let mut row = Vec::new();
            if self.schema.id.is_some() {
                row.push(r.id.clone());
            }
            row.push(r.stratum.clone());
            row.push(r.cluster.clone());
            row.push(r.weight.to_string());
            if let Some(y) = r.outcome {
                row.push(y.to_string());
            }
            if let Some(s) = &r.segment {
                row.push(s.clone());
            }
            row.extend(r.covariates.iter().map(ToString::to_string));
            row.extend(r.auxiliary.iter().map(ToString::to_string));
            w.write_record(&row)?;
        }
        w.into_inner()
            .map_err(|e| Error::Data(format!("csv buffer: {e}")))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_bytes()?).map_err(|e| Error::io(path, e))
    }
}

/// Raw CSV contents: header plus string rows.
pub(crate) struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let header = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(|s| s.trim().to_string()).collect());
        }
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    }

    pub fn numeric(&self, col: usize, report: &mut ValidationReport) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| match row[col].parse::<f64>() {
                Ok(x) => x,
                Err(_) => {
                    report.errors.push(format!(
                        "row {}: column `{}` is not a number (`{}`)",
                        i + 1,
                        self.header[col],
                        row[col]
                    ));
                    f64::NAN
                }
            })
            .collect()
    }
}

/// Loads a survey CSV, mapping columns through `schema`. Row order is preserved.
pub fn load_survey_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<SurveyDataset> {
    let table = Table::read(path.as_ref())?;
    survey_from_table(&table, schema)
}

fn survey_from_table(table: &Table, schema: &Schema) -> Result<SurveyDataset> {
    let stratum = table.column(&schema.stratum)?;
    let cluster = table.column(&schema.cluster)?;
    let weight = table.column(&schema.weight)?;
    let id = schema.id.as_deref().map(|c| table.column(c)).transpose()?;
    let outcome = schema.outcome.as_deref().map(|c| table.column(c)).transpose()?;
    let segment = schema.segment.as_deref().map(|c| table.column(c)).transpose()?;
    let aux: Vec<usize> = schema
        .auxiliary
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<_>>()?;
    let covariate_names: Vec<String> = match &schema.covariates {
        Some(list) => list.clone(),
        None => {
            let reserved = schema.reserved();
            table
                .header
                .iter()
                .filter(|h| !reserved.contains(&h.as_str()))
                .cloned()
                .collect()
        }
    };
    let cov_cols: Vec<usize> = covariate_names
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<_>>()?;

    let mut report = ValidationReport::default();
    for (i, row) in table.rows.iter().enumerate() {
        if row.len() != table.header.len() {
            report.errors.push(format!("row {}: wrong number of fields", i + 1));
        }
    }
    if !report.is_ok() {
        return Err(Error::Validation(report));
    }
    for (name, &c) in covariate_names.iter().zip(&cov_cols) {
        for (i, row) in table.rows.iter().enumerate() {
            if row[c].is_empty() {
                report
                    .errors
                    .push(format!("row {}: covariate `{name}` is missing", i + 1));
            }
        }
    }
    let mut categorical = schema.categorical.clone();
    for (name, &c) in covariate_names.iter().zip(&cov_cols) {
        let numeric = table.rows.iter().all(|r| r[c].parse::<f64>().is_ok());
        if !numeric && !categorical.contains(name) {
            categorical.push(name.clone());
        }
    }
    let weights = table.numeric(weight, &mut report);
    let outcomes = outcome.map(|c| table.numeric(c, &mut report));
    let aux_values: Vec<Vec<f64>> = aux.iter().map(|&c| table.numeric(c, &mut report)).collect();
    if !report.is_ok() {
        return Err(Error::Validation(report));
    }

    let records = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| ObservationRecord {
            id: id.map_or_else(|| (i + 1).to_string(), |c| row[c].clone()),
            stratum: row[stratum].clone(),
            cluster: row[cluster].clone(),
            weight: weights[i],
            covariates: covariate_names
                .iter()
                .zip(&cov_cols)
                .map(|(name, &c)| {
                    if categorical.contains(name) {
                        CovariateValue::Category(row[c].clone())
                    } else {
                        CovariateValue::Real(row[c].parse().unwrap_or(f64::NAN))
                    }
                })
                .collect(),
            outcome: outcomes.as_ref().map(|o| o[i]),
            segment: segment.map(|c| row[c].clone()),
            auxiliary: aux_values.iter().map(|a| a[i]).collect(),
        })
        .collect::<Vec<_>>();

    let mut resolved = schema.clone();
    resolved.categorical = categorical;
    SurveyDataset::from_records(resolved, covariate_names, records)
}

/// Posterior CATE draws, `n_draws` rows by `n_obs` columns, aligned with a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct CateDraws {
    n_draws: usize,
    n_obs: usize,
    values: Vec<f64>,
    obs_ids: Vec<String>,
}

impl CateDraws {
    pub fn from_rows(rows: Vec<Vec<f64>>, obs_ids: Vec<String>) -> Result<Self> {
        let n_obs = obs_ids.len();
        if rows.is_empty() {
            return Err(Error::Data("no CATE draws".into()));
        }
        let mut report = ValidationReport::default();
        for (d, row) in rows.iter().enumerate() {
            if row.len() != n_obs {
                return Err(Error::Alignment(format!(
                    "draw {} has {} entries, expected {n_obs}",
                    d + 1,
                    row.len()
                )));
            }
            if let Some(j) = row.iter().position(|x| !x.is_finite()) {
                report.errors.push(format!(
                    "draw {}: entry for observation `{}` is not finite",
                    d + 1,
                    obs_ids[j]
                ));
            }
        }
        if !report.is_ok() {
            return Err(Error::Validation(report));
        }
        Ok(CateDraws {
            n_draws: rows.len(),
            n_obs,
            values: rows.into_iter().flatten().collect(),
            obs_ids,
        })
    }

    /// A single draw row holding fixed per-observation values (e.g. an outcome).
    pub fn degenerate(values: Vec<f64>, obs_ids: Vec<String>) -> Result<Self> {
        CateDraws::from_rows(vec![values], obs_ids)
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.values[d * self.n_obs..(d + 1) * self.n_obs]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_obs)
    }

    pub fn obs_ids(&self) -> &[String] {
        &self.obs_ids
    }

    /// Per-observation posterior means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_obs];
        for row in self.rows() {
            for (acc, x) in m.iter_mut().zip(row) {
                *acc += x;
            }
        }
        m.iter_mut().for_each(|x| *x /= self.n_draws as f64);
        m
    }

    /// Number of entries outside [-1, 1]. Effects on binary outcomes should have none.
    pub fn out_of_unit_range(&self) -> usize {
        self.values.iter().filter(|x| x.abs() > 1.0).count()
    }

    /// Applies `f(observation, value)` to every entry.
    pub fn map(&self, mut f: impl FnMut(usize, f64) -> f64) -> CateDraws {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &x)| f(k % self.n_obs, x))
            .collect();
        CateDraws {
            values,
            ..self.clone()
        }
    }

    pub fn select_columns(&self, keep: &[usize]) -> CateDraws {
        let values = self
            .rows()
            .flat_map(|row| keep.iter().map(move |&j| row[j]))
            .collect();
        CateDraws {
            n_draws: self.n_draws,
            n_obs: keep.len(),
            values,
            obs_ids: keep.iter().map(|&j| self.obs_ids[j].clone()).collect(),
        }
    }

    pub fn check_aligned(&self, dataset: &SurveyDataset) -> Result<()> {
        if self.n_obs != dataset.len() {
            return Err(Error::Alignment(format!(
                "CATE draws have {} observation columns, dataset has {} observations",
                self.n_obs,
                dataset.len()
            )));
        }
        if let Some((a, b)) = self
            .obs_ids
            .iter()
            .zip(dataset.ids())
            .find(|(a, b)| a.as_str() != *b)
        {
            return Err(Error::Alignment(format!(
                "CATE column `{a}` does not match dataset observation `{b}`"
            )));
        }
        Ok(())
    }

    /// Matrix CSV: `draw_id` followed by one column per observation id.
    pub fn to_matrix_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["draw_id".to_string()];
        header.extend(self.obs_ids.iter().cloned());
        w.write_record(&header)?;
        for (d, row) in self.rows().enumerate() {
            let mut rec = vec![(d + 1).to_string()];
            rec.extend(row.iter().map(ToString::to_string));
            w.write_record(&rec)?;
        }
        w.into_inner()
            .map_err(|e| Error::Data(format!("csv buffer: {e}")))
    }
}

/// Loads CATE draws in either matrix form (`draw_id` + one column per
/// observation id) or segment form (`segment,draw_id,value`, expanded through
/// the dataset's segment column).
pub fn load_cate_draws(path: impl AsRef<Path>, dataset: &SurveyDataset) -> Result<CateDraws> {
    let table = Table::read(path.as_ref())?;
    let is_segment_form = table.header.len() == 3
        && ["segment", "draw_id", "value"]
            .iter()
            .all(|c| table.header.iter().any(|h| h == c));
    if is_segment_form {
        segment_draws(&table, dataset)
    } else {
        matrix_draws(&table, dataset)
    }
}

fn matrix_draws(table: &Table, dataset: &SurveyDataset) -> Result<CateDraws> {
    if table.header.first().map(String::as_str) != Some("draw_id") {
        return Err(Error::Schema(
            "CATE matrix must start with a `draw_id` column".into(),
        ));
    }
    let cols = &table.header[1..];
    if cols.len() != dataset.len() {
        return Err(Error::Alignment(format!(
            "CATE matrix has {} observation columns, dataset has {} observations",
            cols.len(),
            dataset.len()
        )));
    }
    let position: HashMap<&str, usize> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (c.as_str(), j + 1))
        .collect();
    let order: Vec<usize> = dataset
        .ids()
        .map(|id| {
            position.get(id).copied().ok_or_else(|| {
                Error::Alignment(format!("observation `{id}` has no column in the CATE matrix"))
            })
        })
        .collect::<Result<_>>()?;
    let mut report = ValidationReport::default();
    let mut rows = Vec::with_capacity(table.rows.len());
    for (d, row) in table.rows.iter().enumerate() {
        if row.len() != table.header.len() {
            return Err(Error::Validation(ValidationReport::single(format!(
                "draw row {}: wrong number of fields",
                d + 1
            ))));
        }
        let values: Vec<f64> = order
            .iter()
            .map(|&c| match row[c].parse::<f64>() {
                Ok(x) if x.is_finite() => x,
                _ => {
                    report.errors.push(format!(
                        "draw row {}: entry `{}` for observation `{}` is not a finite number",
                        d + 1,
                        row[c],
                        table.header[c]
                    ));
                    f64::NAN
                }
            })
            .collect();
        rows.push(values);
    }
    if !report.is_ok() {
        return Err(Error::Validation(report));
    }
    CateDraws::from_rows(rows, dataset.ids().map(String::from).collect())
}

fn segment_draws(table: &Table, dataset: &SurveyDataset) -> Result<CateDraws> {
    let segments = dataset.segments().ok_or_else(|| {
        Error::Schema("segment-form CATE draws need a segment column in the survey schema".into())
    })?;
    let (sc, dc, vc) = (
        table.column("segment")?,
        table.column("draw_id")?,
        table.column("value")?,
    );
    let mut report = ValidationReport::default();
    let values = table.numeric(vc, &mut report);
    if let Some(i) = values.iter().position(|x| !x.is_finite()) {
        if report.is_ok() {
            report.errors.push(format!("row {}: value is not finite", i + 1));
        }
    }
    if !report.is_ok() {
        return Err(Error::Validation(report));
    }
    let mut draw_ids: Vec<&str> = Vec::new();
    let mut draw_pos: HashMap<&str, usize> = HashMap::new();
    let mut lookup: HashMap<&str, HashMap<usize, f64>> = HashMap::new();
    for (row, &v) in table.rows.iter().zip(&values) {
        let d = *draw_pos.entry(row[dc].as_str()).or_insert_with(|| {
            draw_ids.push(row[dc].as_str());
            draw_ids.len() - 1
        });
        if lookup
            .entry(row[sc].as_str())
            .or_default()
            .insert(d, v)
            .is_some()
        {
            return Err(Error::Data(format!(
                "segment `{}` has draw `{}` twice",
                row[sc], row[dc]
            )));
        }
    }
    for (seg, draws) in &lookup {
        if draws.len() != draw_ids.len() {
            return Err(Error::Alignment(format!(
                "segment `{seg}` has {} draws, expected {}",
                draws.len(),
                draw_ids.len()
            )));
        }
    }
    let per_obs: Vec<&HashMap<usize, f64>> = segments
        .iter()
        .zip(dataset.ids())
        .map(|(s, id)| {
            lookup.get(s).ok_or_else(|| {
                Error::Alignment(format!("observation `{id}` is in segment `{s}` which has no draws"))
            })
        })
        .collect::<Result<_>>()?;
    let rows = (0..draw_ids.len())
        .map(|d| per_obs.iter().map(|m| m[&d]).collect())
        .collect();
    CateDraws::from_rows(rows, dataset.ids().map(String::from).collect())
}

/// Column names of a source-study unit file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceSchema {
    pub id: Option<String>,
    /// `P(complier | X, source)` per unit.
    pub compliance: String,
    /// 1 for compliers, 0 otherwise.
    pub complier: String,
    /// Unit-level complier effect, used by the shift bounds.
    pub effect: Option<String>,
    pub segment: Option<String>,
}

impl Default for SourceSchema {
    fn default() -> Self {
        SourceSchema {
            id: None,
            compliance: "compliance".into(),
            complier: "complier".into(),
            effect: None,
            segment: None,
        }
    }
}

/// Source-study units described by the same covariates as a target survey.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSample {
    pub ids: Vec<String>,
    pub covariates: Vec<Vec<CovariateValue>>,
    pub compliance: Vec<f64>,
    pub complier: Vec<bool>,
    pub effect: Option<Vec<f64>>,
    pub segment: Option<Vec<String>>,
}

impl SourceSample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn complier_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.complier[i]).collect()
    }
}

/// Loads source units, reading the covariates named by `target` with the
/// target's categorical typing.
pub fn load_source_csv(
    path: impl AsRef<Path>,
    schema: &SourceSchema,
    target: &SurveyDataset,
) -> Result<SourceSample> {
    let table = Table::read(path.as_ref())?;
    let cov_cols: Vec<usize> = target
        .covariate_names()
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<_>>()?;
    let compliance_col = table.column(&schema.compliance)?;
    let complier_col = table.column(&schema.complier)?;
    let id = schema.id.as_deref().map(|c| table.column(c)).transpose()?;
    let effect = schema.effect.as_deref().map(|c| table.column(c)).transpose()?;
    let segment = schema.segment.as_deref().map(|c| table.column(c)).transpose()?;

    let mut report = ValidationReport::default();
    for (i, row) in table.rows.iter().enumerate() {
        if row.len() != table.header.len() {
            report.errors.push(format!("row {}: wrong number of fields", i + 1));
        }
    }
    if !report.is_ok() {
        return Err(Error::Validation(report));
    }
    let compliance = table.numeric(compliance_col, &mut report);
    for (i, p) in compliance.iter().enumerate() {
        if p.is_finite() && !(0.0..=1.0).contains(p) {
            report.errors.push(format!("row {}: compliance {p} outside [0, 1]", i + 1));
        }
    }
    let complier: Vec<bool> = table
        .numeric(complier_col, &mut report)
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            if x != 0.0 && x != 1.0 && !x.is_nan() {
                report.errors.push(format!("row {}: complier must be 0 or 1", i + 1));
            }
            x == 1.0
        })
        .collect();
    let effect = effect.map(|c| table.numeric(c, &mut report));
    let categorical = &target.schema().categorical;
    let covariates: Vec<Vec<CovariateValue>> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            target
                .covariate_names()
                .iter()
                .zip(&cov_cols)
                .map(|(name, &c)| {
                    if categorical.contains(name) {
                        CovariateValue::Category(row[c].clone())
                    } else {
                        let x = row[c].parse::<f64>().unwrap_or(f64::NAN);
                        if !x.is_finite() {
                            report.errors.push(format!(
                                "row {}: covariate `{name}` is not a finite number",
                                i + 1
                            ));
                        }
                        CovariateValue::Real(x)
                    }
                })
                .collect()
        })
        .collect();
    if !report.is_ok() {
        return Err(Error::Validation(report));
    }
    Ok(SourceSample {
        ids: table
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| id.map_or_else(|| format!("source-{}", i + 1), |c| r[c].clone()))
            .collect(),
        covariates,
        compliance,
        complier,
        effect,
        segment: segment.map(|c| table.rows.iter().map(|r| r[c].clone()).collect()),
    })
}

/// Writes source units in the layout [`load_source_csv`] reads.
pub fn source_csv_bytes(
    sample: &SourceSample,
    covariate_names: &[String],
    schema: &SourceSchema,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = schema.id.iter().cloned().collect();
    header.extend(covariate_names.iter().cloned());
    header.push(schema.compliance.clone());
    header.push(schema.complier.clone());
    if let (Some(col), Some(_)) = (&schema.effect, &sample.effect) {
        header.push(col.clone());
    }
    if let (Some(col), Some(_)) = (&schema.segment, &sample.segment) {
        header.push(col.clone());
    }
    w.write_record(&header)?;
    for i in 0..sample.len() {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        if schema.id.is_some() {
            row.push(sample.ids[i].clone());
        }
        row.extend(sample.covariates[i].iter().map(|v| v.to_string()));
        row.push(sample.compliance[i].to_string());
        row.push(if sample.complier[i] { "1" } else { "0" }.into());
        if let (Some(_), Some(e)) = (&schema.effect, &sample.effect) {
            row.push(e[i].to_string());
        }
        if let (Some(_), Some(s)) = (&schema.segment, &sample.segment) {
            row.push(s[i].clone());
        }
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv buffer: {e}")))
}

/// A complete finite population with a measure of size per cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub data: SurveyDataset,
    /// Indexed like `data.clusters()`.
    pub measure_of_size: Vec<f64>,
}

impl Population {
    pub fn new(data: SurveyDataset, measure_of_size: Vec<f64>) -> Result<Self> {
        if measure_of_size.len() != data.n_clusters() {
            return Err(Error::Spec(format!(
                "{} measures of size for {} clusters",
                measure_of_size.len(),
                data.n_clusters()
            )));
        }
        if let Some(q) = measure_of_size
            .iter()
            .position(|m| !(m.is_finite() && *m > 0.0))
        {
            return Err(Error::Spec(format!(
                "cluster `{}` has a non-positive measure of size",
                data.clusters()[q].label
            )));
        }
        Ok(Population {
            data,
            measure_of_size,
        })
    }

    /// Reads the measure of size from an auxiliary column; it must be constant
    /// within each cluster.
    pub fn from_size_column(data: SurveyDataset, column: &str) -> Result<Self> {
        let values = data.numeric_column(column)?;
        let mut mos = Vec::with_capacity(data.n_clusters());
        for c in data.clusters() {
            let first = values[c.members[0]];
            if c.members.iter().any(|&i| values[i] != first) {
                return Err(Error::Spec(format!(
                    "measure of size `{column}` varies within cluster `{}`",
                    c.label
                )));
            }
            mos.push(first);
        }
        Population::new(data, mos)
    }

    /// Treats a weighted survey sample as the population itself: each record
    /// counts once and a cluster's measure of size is the inverse of its mean
    /// sampling weight.
    pub fn from_sample_weights(sample: &SurveyDataset) -> Result<Self> {
        let mos = sample
            .clusters()
            .iter()
            .map(|c| {
                let mean = c.members.iter().map(|&i| sample.records()[i].weight).sum::<f64>()
                    / c.size() as f64;
                1.0 / mean
            })
            .collect();
        let data = sample.with_weights(&vec![1.0; sample.len()])?;
        Population::new(data, mos)
    }

    /// Population mean of a numeric column, weighting each record by its weight.
    pub fn mean_of(&self, column: &str) -> Result<f64> {
        let y = self.data.numeric_column(column)?;
        let (num, den) = self
            .data
            .records()
            .iter()
            .zip(&y)
            .fold((0.0, 0.0), |(n, d), (r, &y)| (n + r.weight * y, d + r.weight));
        Ok(num / den)
    }
}

/// Generator for one extra synthetic covariate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateGenerator {
    Normal { name: String, mean: f64, sd: f64 },
    Bernoulli { name: String, p: f64 },
    Categorical { name: String, levels: Vec<String>, probs: Vec<f64> },
}

impl CovariateGenerator {
    pub fn name(&self) -> &str {
        match self {
            CovariateGenerator::Normal { name, .. }
            | CovariateGenerator::Bernoulli { name, .. }
            | CovariateGenerator::Categorical { name, .. } => name,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> CovariateValue {
        match self {
            CovariateGenerator::Normal { mean, sd, .. } => {
                let z: f64 = rng.sample(StandardNormal);
                CovariateValue::Real(mean + sd * z)
            }
            CovariateGenerator::Bernoulli { p, .. } => {
                CovariateValue::Real(if rng.random::<f64>() < *p { 1.0 } else { 0.0 })
            }
            CovariateGenerator::Categorical { levels, probs, .. } => {
                let total: f64 = probs.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut k = levels.len() - 1;
                for (j, p) in probs.iter().enumerate() {
                    if u < *p {
                        k = j;
                        break;
                    }
                    u -= p;
                }
                CovariateValue::Category(levels[k].clone())
            }
        }
    }

    fn check(&self) -> Result<()> {
        let bad = match self {
            CovariateGenerator::Normal { mean, sd, .. } => !(mean.is_finite() && *sd >= 0.0),
            CovariateGenerator::Bernoulli { p, .. } => !(0.0..=1.0).contains(p),
            CovariateGenerator::Categorical { levels, probs, .. } => {
                levels.is_empty()
                    || levels.len() != probs.len()
                    || probs.iter().any(|p| !(*p >= 0.0))
                    || probs.iter().sum::<f64>() <= 0.0
            }
        };
        if bad {
            Err(Error::Spec(format!("invalid generator for `{}`", self.name())))
        } else {
            Ok(())
        }
    }
}

/// Age model: cluster means vary with stratum, a cluster effect, and the
/// cluster's log measure of size (`size_effect` per SD), which makes PPS
/// selection informative for age.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgeModel {
    pub mean: f64,
    pub stratum_sd: f64,
    pub cluster_sd: f64,
    pub individual_sd: f64,
    pub size_effect: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for AgeModel {
    fn default() -> Self {
        AgeModel {
            mean: 30.0,
            stratum_sd: 0.5,
            cluster_sd: 1.5,
            individual_sd: 8.0,
            size_effect: 1.5,
            min: 15.0,
            max: 49.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_strata: usize,
    pub clusters_per_stratum: usize,
    /// Inclusive range of cluster membership counts.
    pub cluster_size_range: (usize, usize),
    pub seed: u64,
    pub age: AgeModel,
    /// Log-scale SD of the measure of size around the cluster's member count.
    pub size_spread: f64,
    pub covariates: Vec<CovariateGenerator>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_strata: 8,
            clusters_per_stratum: 40,
            cluster_size_range: (26, 40),
            seed: 7,
            age: AgeModel::default(),
            size_spread: 0.3,
            covariates: vec![
                CovariateGenerator::Categorical {
                    name: "education".into(),
                    levels: ["none", "primary", "secondary", "higher"]
                        .map(String::from)
                        .to_vec(),
                    probs: vec![0.3, 0.2, 0.4, 0.1],
                },
                CovariateGenerator::Bernoulli {
                    name: "married".into(),
                    p: 0.7,
                },
            ],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_strata == 0 {
            return Err(Error::Spec("n_strata must be positive".into()));
        }
        if self.clusters_per_stratum == 0 {
            return Err(Error::Spec("clusters_per_stratum must be positive".into()));
        }
        let (lo, hi) = self.cluster_size_range;
        if lo == 0 || hi < lo {
            return Err(Error::Spec(format!(
                "cluster size range {lo}..={hi} is empty or contains zero"
            )));
        }
        let a = &self.age;
        if !(a.stratum_sd >= 0.0
            && a.cluster_sd >= 0.0
            && a.individual_sd >= 0.0
            && a.size_effect.is_finite()
            && a.min <= a.max
            && self.size_spread >= 0.0)
        {
            return Err(Error::Spec("invalid age model".into()));
        }
        self.covariates.iter().try_for_each(CovariateGenerator::check)
    }
}

pub const AGE: &str = "age";
pub const MEASURE_OF_SIZE: &str = "mos";

/// Schema of the CSV written for generated populations.
pub fn synthetic_schema() -> Schema {
    Schema {
        id: Some("id".into()),
        auxiliary: vec![MEASURE_OF_SIZE.into()],
        ..Schema::default()
    }
}

/// Draws a finite population. A pure function of `spec` (including its seed).
pub fn generate_synthetic_population(spec: &SyntheticSpec) -> Result<Population> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let (lo, hi) = spec.cluster_size_range;
    let mut names = vec![AGE.to_string()];
    names.extend(spec.covariates.iter().map(|g| g.name().to_string()));
    let mut records = Vec::new();
    let mut mos = Vec::new();
    let mut next_id = 1usize;
    for h in 0..spec.n_strata {
        let stratum = format!("S{:02}", h + 1);
        let stratum_shift = spec.age.stratum_sd * std.sample(&mut rng);
        for c in 0..spec.clusters_per_stratum {
            let cluster = format!("{stratum}-C{:03}", c + 1);
            let size = rng.random_range(lo..=hi);
            let z = std.sample(&mut rng);
            mos.push(size as f64 * (spec.size_spread * z).exp());
            let cluster_mean = spec.age.mean
                + stratum_shift
                + spec.age.cluster_sd * std.sample(&mut rng)
                + spec.age.size_effect * z;
            for _ in 0..size {
                let age = (cluster_mean + spec.age.individual_sd * std.sample(&mut rng))
                    .clamp(spec.age.min, spec.age.max);
                let mut covariates = vec![CovariateValue::Real(age)];
                covariates.extend(spec.covariates.iter().map(|g| g.sample(&mut rng)));
                records.push(ObservationRecord {
                    id: next_id.to_string(),
                    stratum: stratum.clone(),
                    cluster: cluster.clone(),
                    weight: 1.0,
                    covariates,
                    outcome: None,
                    segment: None,
                    auxiliary: vec![0.0],
                });
                next_id += 1;
            }
        }
    }
    // Clusters are generated contiguously, so cluster index order matches `mos`.
    let mut q = 0;
    let mut prev: Option<String> = None;
    for r in &mut records {
        if prev.as_deref().is_some_and(|p| p != r.cluster) {
            q += 1;
        }
        prev = Some(r.cluster.clone());
        r.auxiliary[0] = mos[q];
    }
    let mut schema = synthetic_schema();
    schema.categorical = spec
        .covariates
        .iter()
        .filter(|g| matches!(g, CovariateGenerator::Categorical { .. }))
        .map(|g| g.name().to_string())
        .collect();
    let data = SurveyDataset::from_records(schema, names, records)?;
    Population::new(data, mos)
}

/// Per-stratum counts, keyed by stratum label.
pub fn clusters_per_stratum(data: &SurveyDataset) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for c in data.clusters() {
        *out.entry(data.strata()[c.stratum].clone()).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_row_file() {
        let f = write_tmp("stratum,cluster,weight,x\nA,1,2.0,0.5\nA,1,2.0,1.5\nB,2,1.0,3\n");
        let ds = load_survey_csv(f.path(), &Schema::default()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.n_strata(), 2);
        assert_eq!(ds.n_clusters(), 2);
        assert_eq!(ds.weights(), vec![2.0, 2.0, 1.0]);
        assert_eq!(ds.covariate_names(), ["x"]);
        assert_eq!(ds.numeric_column("x").unwrap(), vec![0.5, 1.5, 3.0]);
    }

    #[test]
    fn cluster_crossing_strata_is_rejected() {
        let f = write_tmp("stratum,cluster,weight\nA,1,1\nB,1,1\n");
        let err = load_survey_csv(f.path(), &Schema::default()).unwrap_err();
        assert!(err.to_string().contains("cluster crosses strata"), "{err}");
    }

    #[test]
    fn zero_weight_names_row() {
        let f = write_tmp("stratum,cluster,weight\nA,1,1\nA,1,0\n");
        let err = load_survey_csv(f.path(), &Schema::default()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = write_tmp("stratum,psu,weight\nA,1,1\n");
        let err = load_survey_csv(f.path(), &Schema::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn missing_covariate_value_is_error() {
        let f = write_tmp("stratum,cluster,weight,x\nA,1,1,2\nA,1,1,\n");
        let err = load_survey_csv(f.path(), &Schema::default()).unwrap_err();
        assert!(err.to_string().contains("missing"), "{err}");
    }

    #[test]
    fn segment_draws_expand_by_lookup() {
        let data = write_tmp("id,stratum,cluster,weight,seg\na,A,1,1,seg1\nb,A,1,1,seg2\nc,A,2,1,seg1\n");
        let schema = Schema {
            id: Some("id".into()),
            segment: Some("seg".into()),
            ..Schema::default()
        };
        let ds = load_survey_csv(data.path(), &schema).unwrap();
        let cate = write_tmp(
            "segment,draw_id,value\nseg1,1,0.1\nseg1,2,0.2\nseg2,1,0.5\nseg2,2,0.6\n",
        );
        let draws = load_cate_draws(cate.path(), &ds).unwrap();
        assert_eq!(draws.n_draws(), 2);
        assert_eq!(draws.row(0), [0.1, 0.5, 0.1]);
        assert_eq!(draws.row(1), [0.2, 0.6, 0.2]);
    }

    #[test]
    fn matrix_draws_are_reordered_and_checked() {
        let data = write_tmp("id,stratum,cluster,weight\na,A,1,1\nb,A,1,1\nc,A,2,1\nd,A,2,1\n");
        let schema = Schema {
            id: Some("id".into()),
            ..Schema::default()
        };
        let ds = load_survey_csv(data.path(), &schema).unwrap();
        let short = write_tmp("draw_id,a,b,c\n1,0,0,0\n");
        assert!(matches!(
            load_cate_draws(short.path(), &ds).unwrap_err(),
            Error::Alignment(_)
        ));
        let zeros = write_tmp("draw_id,d,c,b,a\n1,0,0,0,0\n2,0,0,0,0\n");
        let draws = load_cate_draws(zeros.path(), &ds).unwrap();
        assert_eq!(draws.n_draws(), 2);
        assert!(draws.rows().all(|r| r.iter().all(|&x| x == 0.0)));
        let shuffled = write_tmp("draw_id,d,c,b,a\n1,4,3,2,1\n");
        assert_eq!(load_cate_draws(shuffled.path(), &ds).unwrap().row(0), [1.0, 2.0, 3.0, 4.0]);
        let bad = write_tmp("draw_id,a,b,c,d\n1,0,inf,0,0\n");
        assert!(matches!(
            load_cate_draws(bad.path(), &ds).unwrap_err(),
            Error::Validation(_)
        ));
    }

    #[test]
    fn synthetic_population_is_deterministic() {
        let spec = SyntheticSpec {
            n_strata: 2,
            clusters_per_stratum: 3,
            cluster_size_range: (26, 40),
            seed: 7,
            ..SyntheticSpec::default()
        };
        let a = generate_synthetic_population(&spec).unwrap();
        let b = generate_synthetic_population(&spec).unwrap();
        assert_eq!(a.data.to_csv_bytes().unwrap(), b.data.to_csv_bytes().unwrap());
        assert_eq!(a, b);
        assert_eq!(a.data.n_clusters(), 6);
        assert!(a.data.clusters().iter().all(|c| (26..=40).contains(&c.size())));
    }

    #[test]
    fn population_mean_matches_enumeration() {
        let pop = generate_synthetic_population(&SyntheticSpec {
            n_strata: 3,
            clusters_per_stratum: 4,
            ..SyntheticSpec::default()
        })
        .unwrap();
        // independent pass over the raw records
        let mut num = 0.0;
        let mut den = 0.0;
        for r in pop.data.records() {
            let CovariateValue::Real(a) = r.covariates[0] else { panic!() };
            num += r.weight * a;
            den += r.weight;
        }
        assert!((pop.mean_of(AGE).unwrap() - num / den).abs() < 1e-12);
    }

    #[test]
    fn zero_strata_is_spec_error() {
        let spec = SyntheticSpec {
            n_strata: 0,
            ..SyntheticSpec::default()
        };
        assert!(matches!(
            generate_synthetic_population(&spec).unwrap_err(),
            Error::Spec(_)
        ));
    }

    #[test]
    fn sample_weights_become_measure_of_size() {
        let f = write_tmp("stratum,cluster,weight\nA,1,2\nA,1,4\nA,2,0.5\n");
        let ds = load_survey_csv(f.path(), &Schema::default()).unwrap();
        let pop = Population::from_sample_weights(&ds).unwrap();
        assert_eq!(pop.measure_of_size, vec![1.0 / 3.0, 2.0]);
        assert!(pop.data.weights().iter().all(|&w| w == 1.0));
    }
}
