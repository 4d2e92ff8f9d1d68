//! A small end-to-end example: a PPS sample from a synthetic population with
//! eight effect-modifier segments, segment-level CATE draws, and a source
//! sample that under-represents the segments with the largest effects.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bootstrap::mean_sd;
use crate::data::{
    generate_synthetic_population, source_csv_bytes, CateDraws, CovariateValue,
    ObservationRecord, SourceSample, SourceSchema, SurveyDataset, SyntheticSpec, AGE,
};
use crate::error::{Error, Result};
use crate::simulate::{draw_pps_two_stage, RespondentCount, SimulationDesign};

pub const SEGMENT: &str = "segment";
pub const COMPLIANCE: &str = "compliance";
pub const COMPLIER: &str = "complier";
pub const EFFECT: &str = "effect";

pub const TARGET_FILE: &str = "target.csv";
pub const CATE_FILE: &str = "cate_segments.csv";
pub const SOURCE_FILE: &str = "source.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoSpec {
    pub population: SyntheticSpec,
    pub clusters_per_stratum: usize,
    pub respondents: usize,
    pub n_draws: usize,
    /// Target-weighted mean of the CATE draws.
    pub pate_mean: f64,
    /// SD across draws of the target-weighted CATE mean.
    pub pate_sd: f64,
    /// Distance between the smallest and largest segment effect.
    pub effect_range: f64,
    pub source_size: usize,
    pub seed: u64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        DemoSpec {
            population: SyntheticSpec::default(),
            clusters_per_stratum: 12,
            respondents: 20,
            n_draws: 1000,
            pate_mean: 0.56,
            pate_sd: 0.14,
            effect_range: 0.66,
            source_size: 800,
            seed: 2018,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DemoData {
    /// Carries `segment` and auxiliary `mos`, `compliance` columns.
    pub target: SurveyDataset,
    /// Draws per segment, all of length `n_draws`.
    pub segment_draws: BTreeMap<String, Vec<f64>>,
    pub cate: CateDraws,
    pub source: SourceSample,
}

pub fn source_schema() -> SourceSchema {
    SourceSchema {
        id: Some("id".into()),
        compliance: COMPLIANCE.into(),
        complier: COMPLIER.into(),
        effect: Some(EFFECT.into()),
        segment: Some(SEGMENT.into()),
    }
}

const EDUCATION: [&str; 4] = ["higher", "secondary", "primary", "none"];

fn segment_of(covariates: &[CovariateValue]) -> (String, usize) {
    let edu = covariates[1].to_string();
    let married = matches!(covariates[2], CovariateValue::Real(x) if x == 1.0);
    let rank = EDUCATION.iter().position(|e| *e == edu).unwrap_or(0) + if married { 4 } else { 0 };
    let label = format!("{edu}-{}", if married { "married" } else { "single" });
    (label, rank)
}

fn compliance_of(covariates: &[CovariateValue]) -> f64 {
    let CovariateValue::Real(age) = covariates[0] else { return 0.5 };
    let (_, rank) = segment_of(covariates);
    let eta = 0.4 - 0.04 * (age - 30.0) + 0.2 * (rank % 4) as f64 - 0.3 + 0.3 * (rank / 4) as f64;
    1.0 / (1.0 + (-eta).exp())
}

pub fn build_demo(spec: &DemoSpec) -> Result<DemoData> {
    if spec.n_draws == 0 || spec.source_size == 0 {
        return Err(Error::Spec("demo needs draws and source units".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pop = generate_synthetic_population(&spec.population)?;
    if pop.data.covariate_names().len() < 3 {
        return Err(Error::Spec("demo needs age, education and married covariates".into()));
    }
    let mut design = SimulationDesign::uniform(&pop, spec.clusters_per_stratum, AGE);
    design.respondents = RespondentCount::Fixed(spec.respondents);
    let sample = draw_pps_two_stage(&pop, &design, &mut rng)?;

    let mut schema = sample.schema().clone();
    schema.segment = Some(SEGMENT.into());
    schema.auxiliary.push(COMPLIANCE.into());
    let records: Vec<ObservationRecord> = sample
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.segment = Some(segment_of(&r.covariates).0);
            r.auxiliary.push(compliance_of(&r.covariates));
            r
        })
        .collect();
    let target = SurveyDataset::from_records(schema, sample.covariate_names().to_vec(), records)?;

    // Segment centers evenly spread by rank; the common shift and the scale of
    // the shared draw-level term are tuned until the target-weighted series of
    // clamped draws has mean `pate_mean` and SD `pate_sd`.
    let mut share = [0.0; 8];
    let mut labels = vec![String::new(); 8];
    for r in target.records() {
        let (label, rank) = segment_of(&r.covariates);
        share[rank] += r.weight;
        labels[rank] = label;
    }
    let total: f64 = share.iter().sum();
    let z: Vec<f64> = (0..spec.n_draws).map(|_| rng.sample(StandardNormal)).collect();
    let noise: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..spec.n_draws).map(|_| 0.02 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let spread = |k: usize| spec.effect_range * (k as f64 / 7.0 - 0.5);
    let draws_for = |shift: f64, scale: f64, k: usize| -> Vec<f64> {
        (0..spec.n_draws)
            .map(|d| (shift + spread(k) + scale * z[d] + noise[k][d]).clamp(-1.0, 1.0))
            .collect()
    };
    let (mut shift, mut scale) = (spec.pate_mean, spec.pate_sd);
    for _ in 0..50 {
        let mut series = vec![0.0; spec.n_draws];
        for k in 0..8 {
            for (m, x) in series.iter_mut().zip(draws_for(shift, scale, k)) {
                *m += share[k] / total * x;
            }
        }
        let (mean, sd) = mean_sd(&series);
        shift += spec.pate_mean - mean;
        if sd > 0.0 {
            scale *= spec.pate_sd / sd;
        }
    }
    let segment_draws: BTreeMap<String, Vec<f64>> = (0..8)
        .filter(|&k| share[k] > 0.0)
        .map(|k| (labels[k].clone(), draws_for(shift, scale, k)))
        .collect();
    let cate = expand_segments(&target, &segment_draws)?;

    // Source units: population members accepted less often in high-effect
    // segments and at older ages.
    let records = pop.data.records();
    let mut source = SourceSample {
        ids: Vec::new(),
        covariates: Vec::new(),
        compliance: Vec::new(),
        complier: Vec::new(),
        effect: Some(Vec::new()),
        segment: Some(Vec::new()),
    };
    while source.len() < spec.source_size {
        let r = &records[rng.random_range(0..records.len())];
        let (label, rank) = segment_of(&r.covariates);
        let CovariateValue::Real(age) = r.covariates[0] else { unreachable!() };
        let accept = (1.0 - 0.8 * rank as f64 / 7.0) * if age > 40.0 { 0.25 } else { 1.0 };
        if rng.random::<f64>() >= accept {
            continue;
        }
        let p = compliance_of(&r.covariates);
        let effect = (shift + spread(rank) - 0.1 + 0.28 * rng.sample::<f64, _>(StandardNormal)).clamp(-1.0, 1.0);
        source.ids.push(format!("src-{:04}", source.len() + 1));
        source.covariates.push(r.covariates.clone());
        source.compliance.push(p);
        source.complier.push(rng.random::<f64>() < p);
        source.effect.as_mut().unwrap().push(effect);
        source.segment.as_mut().unwrap().push(label);
    }
    Ok(DemoData {
        target,
        segment_draws,
        cate,
        source,
    })
}

fn expand_segments(target: &SurveyDataset, draws: &BTreeMap<String, Vec<f64>>) -> Result<CateDraws> {
    let segs = target
        .segments()
        .ok_or_else(|| Error::Schema("target has no segment column".into()))?;
    let n_draws = draws.values().next().map_or(0, Vec::len);
    let rows = (0..n_draws)
        .map(|d| segs.iter().map(|s| draws[*s][d]).collect())
        .collect();
    CateDraws::from_rows(rows, target.ids().map(String::from).collect())
}

/// Segment-form CATE file: `segment,draw_id,value`.
pub fn segment_draws_csv_bytes(draws: &BTreeMap<String, Vec<f64>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([SEGMENT, "draw_id", "value"])?;
    for (seg, values) in draws {
        for (d, v) in values.iter().enumerate() {
            w.serialize((seg, d + 1, v))?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::Data(format!("csv buffer: {e}")))
}

/// Writes the target survey, segment CATE draws and source sample into `dir`.
pub fn write_demo(data: &DemoData, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    data.target.write_csv(dir.join(TARGET_FILE))?;
    let write = |name: &str, bytes: Vec<u8>| {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write(CATE_FILE, segment_draws_csv_bytes(&data.segment_draws)?)?;
    write(
        SOURCE_FILE,
        source_csv_bytes(&data.source, data.target.covariate_names(), &source_schema())?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::{estimate_pate, ScaledWeightMode};
    use crate::data::{load_cate_draws, load_source_csv, load_survey_csv};

    #[test]
    fn demo_matches_calibration_targets() {
        let demo = build_demo(&DemoSpec::default()).unwrap();
        assert_eq!(demo.segment_draws.len(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = estimate_pate(&demo.target, &demo.cate, ScaledWeightMode::ProductNormalized, 1000, &mut rng).unwrap();
        assert!((s.mean - 0.56).abs() < 0.02, "{}", s.mean);
        assert!((s.sd - 0.14).abs() < 0.02, "{}", s.sd);
        assert!(demo.source.complier.iter().filter(|c| **c).count() > 200);
    }

    #[test]
    fn demo_files_round_trip() {
        let demo = build_demo(&DemoSpec { n_draws: 20, source_size: 50, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_demo(&demo, dir.path()).unwrap();
        let target = load_survey_csv(dir.path().join(TARGET_FILE), demo.target.schema()).unwrap();
        assert_eq!(target.len(), demo.target.len());
        let cate = load_cate_draws(dir.path().join(CATE_FILE), &target).unwrap();
        assert_eq!(cate.n_draws(), 20);
        assert_eq!(cate.row(3), demo.cate.row(3));
        let source = load_source_csv(dir.path().join(SOURCE_FILE), &source_schema(), &target).unwrap();
        assert_eq!(source, demo.source);
    }
}
