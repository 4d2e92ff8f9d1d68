//! Sensitivity of the population average to unmeasured effect modification.
//!
//! Two analyses share one set of bootstrap weight draws per call:
//! a binary confounder with prevalence `ξ` that shifts effects by `sign·κ`,
//! and a bounded density-ratio shift `1/Γ ≤ z ≤ Γ` solved as a small LP.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{anchored_combination, anchored_mean, PateEngine, PosteriorSummary, ScaledWeightMode};
use crate::data::{CateDraws, SurveyDataset};
use crate::error::{Error, Result};

/// Effects live on the risk-difference scale.
pub fn clip_h(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfounderSpec {
    pub kappa: f64,
    /// +1 or −1.
    pub sign: f64,
    pub xi: Vec<f64>,
    pub level: f64,
}

impl Default for ConfounderSpec {
    fn default() -> Self {
        ConfounderSpec {
            kappa: 0.66,
            sign: -1.0,
            xi: (0..=20).map(|j| j as f64 / 20.0).collect(),
            level: 0.95,
        }
    }
}

impl ConfounderSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.kappa.is_finite() {
            return Err(Error::Argument(format!("kappa must be finite, got {}", self.kappa)));
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err(Error::Argument(format!("sign must be +1 or -1, got {}", self.sign)));
        }
        if self.xi.is_empty() {
            return Err(Error::Argument("xi grid is empty".into()));
        }
        if let Some(x) = self.xi.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Argument(format!("xi {x} outside [0, 1]")));
        }
        Ok(())
    }
}

/// How target units are grouped when bounding the density ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftCells {
    /// One cell holding every unit.
    #[default]
    Marginal,
    /// One cell per value of the dataset's segment column.
    BySegment,
}

/// Cell label used by [`ShiftCells::Marginal`].
pub const MARGINAL_CELL: &str = "all";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftSpec {
    pub gammas: Vec<f64>,
    pub cells: ShiftCells,
    pub level: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            gammas: default_gamma_grid(),
            cells: ShiftCells::Marginal,
            level: 0.95,
        }
    }
}

/// 15 log-spaced points on `[1, 8]`.
pub fn default_gamma_grid() -> Vec<f64> {
    (0..15).map(|j| 8f64.powf(j as f64 / 14.0)).collect()
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() {
            return Err(Error::Argument("gamma grid is empty".into()));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(g.is_finite() && **g >= 1.0)) {
            return Err(Error::Argument(format!("gamma {g} must be finite and >= 1")));
        }
        Ok(())
    }
}

/// Source-side complier effects for one cell, with base weights `ω`
/// (normalized internally).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceCell {
    pub effects: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SourceCell {
    pub fn uniform(effects: Vec<f64>) -> Self {
        let weights = vec![1.0; effects.len()];
        SourceCell { effects, weights }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensitivityCurve {
    Confounder {
        xi: Vec<f64>,
        points: Vec<PosteriorSummary>,
    },
    Shift {
        gamma: Vec<f64>,
        lower: Vec<PosteriorSummary>,
        upper: Vec<PosteriorSummary>,
    },
}

impl SensitivityCurve {
    pub fn parameters(&self) -> &[f64] {
        match self {
            SensitivityCurve::Confounder { xi, .. } => xi,
            SensitivityCurve::Shift { gamma, .. } => gamma,
        }
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        match self {
            SensitivityCurve::Confounder { xi, points } => {
                w.write_record(["parameter", "mean", "ci_lower", "ci_upper"])?;
                for (x, p) in xi.iter().zip(points) {
                    w.serialize((x, p.mean, p.ci_lower, p.ci_upper))?;
                }
            }
            SensitivityCurve::Shift { gamma, lower, upper } => {
                w.write_record([
                    "parameter",
                    "lower_mean",
                    "lower_ci_lower",
                    "lower_ci_upper",
                    "upper_mean",
                    "upper_ci_lower",
                    "upper_ci_upper",
                ])?;
                for ((g, lo), hi) in gamma.iter().zip(lower).zip(upper) {
                    w.serialize((g, lo.mean, lo.ci_lower, lo.ci_upper, hi.mean, hi.ci_lower, hi.ci_upper))?;
                }
            }
        }
        w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))
    }
}

fn weight_draws<R: Rng + ?Sized>(
    engine: &PateEngine,
    mode: ScaledWeightMode,
    n_bb: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut weights = Vec::with_capacity(n_bb);
    let base = engine.run(mode, n_bb, rng, |_, _, w, _| weights.push(w.to_vec()))?;
    Ok((base, weights))
}

/// PATE under a binary unmeasured modifier of prevalence `ξ`, marginalized
/// analytically: each entry `c` becomes `(1−ξ)h(c) + ξh(c + sign·κ)`.
/// All grid points share one set of weight draws, so `ξ = 0` reproduces
/// `estimate_pate` with the same rng state draw for draw when every entry
/// is already in `[−1, 1]`.
pub fn pate_confounder_curve<R: Rng + ?Sized>(
    dataset: &SurveyDataset,
    cate: &CateDraws,
    spec: &ConfounderSpec,
    mode: ScaledWeightMode,
    n_bb: usize,
    rng: &mut R,
) -> Result<SensitivityCurve> {
    spec.validate()?;
    let engine = PateEngine::new(dataset, cate)?;
    let (_, weights) = weight_draws(&engine, mode, n_bb, rng)?;
    let shift = spec.sign * spec.kappa;
    let mut points = Vec::with_capacity(spec.xi.len());
    for &xi in &spec.xi {
        let shifted = cate.map(|_, c| (1.0 - xi) * clip_h(c) + xi * clip_h(c + shift));
        let e = PateEngine::new(dataset, &shifted)?;
        let draws = weights
            .iter()
            .enumerate()
            .map(|(b, w)| anchored_combination(w, e.means(b % e.n_draws)))
            .collect();
        points.push(PosteriorSummary::from_draws(draws, spec.level)?);
    }
    Ok(SensitivityCurve::Confounder {
        xi: spec.xi.clone(),
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Min,
    Max,
}

fn check_lp(tau: &[f64], omega: &[f64], gamma: f64) -> Result<()> {
    if tau.is_empty() || tau.len() != omega.len() {
        return Err(Error::Argument(format!(
            "LP needs matching non-empty tau and omega, got {} and {}",
            tau.len(),
            omega.len()
        )));
    }
    if !(gamma.is_finite() && gamma >= 1.0) {
        return Err(Error::Argument(format!("gamma {gamma} must be finite and >= 1")));
    }
    if tau.iter().any(|t| !t.is_finite()) || omega.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Argument("tau must be finite and omega nonnegative".into()));
    }
    let total: f64 = omega.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("omega sums to {total}, not 1")));
    }
    Ok(())
}

/// Optimizes `Σ ω_i z_i τ_i` over `1/Γ ≤ z_i ≤ Γ`, `Σ ω_i z_i = 1`. With
/// `a_i = ω_i z_i` every `a_i` starts at its lower bound and the remaining
/// mass fills units in `τ` order. Returns the optimum and `z`.
pub fn lp_bound_greedy(
    tau: &[f64],
    omega: &[f64],
    gamma: f64,
    direction: Direction,
) -> Result<(f64, Vec<f64>)> {
    check_lp(tau, omega, gamma)?;
    let mut a: Vec<f64> = omega.iter().map(|w| w / gamma).collect();
    let mut remaining = 1.0 - a.iter().sum::<f64>();
    let mut order: Vec<usize> = (0..tau.len()).collect();
    match direction {
        Direction::Max => order.sort_by(|&i, &j| tau[j].total_cmp(&tau[i])),
        Direction::Min => order.sort_by(|&i, &j| tau[i].total_cmp(&tau[j])),
    }
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        let add = (omega[i] * gamma - a[i]).min(remaining);
        a[i] += add;
        remaining -= add;
    }
    let bound = a.iter().zip(tau).map(|(a, t)| a * t).sum();
    let z = a
        .iter()
        .zip(omega)
        .map(|(a, w)| if *w > 0.0 { a / w } else { 1.0 })
        .collect();
    Ok((bound, z))
}

/// Largest instance [`lp_bound_oracle`] accepts.
pub const ORACLE_MAX_N: usize = 12;

/// Brute-force LP optimum by vertex enumeration: every coordinate but one
/// sits at a box bound and the free one closes the equality constraint.
pub fn lp_bound_oracle(tau: &[f64], omega: &[f64], gamma: f64, direction: Direction) -> Result<f64> {
    check_lp(tau, omega, gamma)?;
    let n = tau.len();
    if n > ORACLE_MAX_N {
        return Err(Error::Argument(format!(
            "oracle enumerates vertices and is limited to n <= {ORACLE_MAX_N}, got {n}"
        )));
    }
    let lo: Vec<f64> = omega.iter().map(|w| w / gamma).collect();
    let hi: Vec<f64> = omega.iter().map(|w| w * gamma).collect();
    let mut best: Option<f64> = None;
    for free in 0..n {
        for mask in 0u32..(1 << (n - 1)) {
            let mut a = vec![0.0; n];
            let mut bit = 0;
            for i in (0..n).filter(|&i| i != free) {
                a[i] = if mask >> bit & 1 == 1 { hi[i] } else { lo[i] };
                bit += 1;
            }
            a[free] = 1.0 - a.iter().sum::<f64>();
            if a[free] < lo[free] - 1e-12 || a[free] > hi[free] + 1e-12 {
                continue;
            }
            let value: f64 = a.iter().zip(tau).map(|(a, t)| a * t).sum();
            best = Some(match (best, direction) {
                (None, _) => value,
                (Some(b), Direction::Max) => b.max(value),
                (Some(b), Direction::Min) => b.min(value),
            });
        }
    }
    best.ok_or_else(|| Error::Data("LP has no feasible vertex".into()))
}

/// `(min, max)` shift of the ω-weighted cell mean when ω is tilted by `z`.
/// Exactly zero at `Γ = 1`.
fn cell_offsets(cell: &SourceCell, gamma: f64) -> Result<(f64, f64)> {
    if gamma == 1.0 {
        return Ok((0.0, 0.0));
    }
    let total: f64 = cell.weights.iter().sum();
    let omega: Vec<f64> = cell.weights.iter().map(|w| w / total).collect();
    let base = cell.effects[0]
        + omega
            .iter()
            .zip(&cell.effects)
            .map(|(w, t)| w * (t - cell.effects[0]))
            .sum::<f64>();
    let centered: Vec<f64> = cell.effects.iter().map(|t| t - base).collect();
    let (lo, _) = lp_bound_greedy(&centered, &omega, gamma, Direction::Min)?;
    let (hi, _) = lp_bound_greedy(&centered, &omega, gamma, Direction::Max)?;
    Ok((lo.min(0.0), hi.max(0.0)))
}

/// Bounds on the PATE when the target/source density ratio of an unmeasured
/// modifier lies in `[1/Γ, Γ]` within each cell.
///
/// Per cell, the LP gives how far the source effect mean can move under the
/// tilt. Each draw's bound is the baseline draw plus those movements weighted
/// by the cell's target share under the same bootstrap weights. `Γ = 1`
/// returns the baseline draws exactly.
pub fn pate_shift_bounds<R: Rng + ?Sized>(
    dataset: &SurveyDataset,
    cate: &CateDraws,
    source: &BTreeMap<String, SourceCell>,
    spec: &ShiftSpec,
    mode: ScaledWeightMode,
    n_bb: usize,
    rng: &mut R,
) -> Result<SensitivityCurve> {
    spec.validate()?;
    let labels: Vec<String> = match spec.cells {
        ShiftCells::Marginal => vec![MARGINAL_CELL.to_string(); dataset.len()],
        ShiftCells::BySegment => dataset
            .segments()
            .ok_or_else(|| Error::Argument("segment cells need a segment column".into()))?
            .into_iter()
            .map(String::from)
            .collect(),
    };
    let mut cells: Vec<&String> = labels.iter().collect();
    cells.sort();
    cells.dedup();
    for (name, cell) in source {
        if cell.effects.len() != cell.weights.len() {
            return Err(Error::Alignment(format!(
                "source cell `{name}` has {} effects but {} weights",
                cell.effects.len(),
                cell.weights.len()
            )));
        }
        if cell.effects.iter().any(|t| !t.is_finite())
            || cell.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::Data(format!("source cell `{name}` has invalid values")));
        }
    }
    let mut source_cells = Vec::with_capacity(cells.len());
    for name in &cells {
        match source.get(*name) {
            Some(c) if !c.effects.is_empty() && c.weights.iter().sum::<f64>() > 0.0 => {
                source_cells.push(c)
            }
            _ => {
                return Err(Error::Data(format!(
                    "cell `{name}` has no source units; the shift is not bounded there"
                )))
            }
        }
    }

    // Share of each cluster's members falling in each cell.
    let cell_index: BTreeMap<&String, usize> = cells.iter().enumerate().map(|(k, c)| (*c, k)).collect();
    let k = cells.len();
    let composition: Vec<Vec<f64>> = dataset
        .clusters()
        .iter()
        .map(|c| {
            let mut f = vec![0.0; k];
            for &i in &c.members {
                f[cell_index[&labels[i]]] += 1.0;
            }
            f.iter().map(|x| x / c.size() as f64).collect()
        })
        .collect();

    let engine = PateEngine::new(dataset, cate)?;
    let mut shares: Vec<Vec<f64>> = Vec::with_capacity(n_bb);
    let baseline = engine.run(mode, n_bb, rng, |_, _, w, _| {
        let mut s = vec![0.0; k];
        for (wq, f) in w.iter().zip(&composition) {
            for (sk, fk) in s.iter_mut().zip(f) {
                *sk += wq * fk;
            }
        }
        shares.push(s);
    })?;

    let mut lower = Vec::with_capacity(spec.gammas.len());
    let mut upper = Vec::with_capacity(spec.gammas.len());
    for &gamma in &spec.gammas {
        let offsets = source_cells
            .iter()
            .map(|c| cell_offsets(c, gamma))
            .collect::<Result<Vec<_>>>()?;
        let shifted = |pick: fn(&(f64, f64)) -> f64| -> Vec<f64> {
            baseline
                .iter()
                .zip(&shares)
                .map(|(b, s)| b + s.iter().zip(&offsets).map(|(sk, o)| sk * pick(o)).sum::<f64>())
                .collect()
        };
        lower.push(PosteriorSummary::from_draws(shifted(|o| o.0), spec.level)?);
        upper.push(PosteriorSummary::from_draws(shifted(|o| o.1), spec.level)?);
    }
    Ok(SensitivityCurve::Shift {
        gamma: spec.gammas.clone(),
        lower,
        upper,
    })
}

/// Groups source effects by label into uniform-weight cells.
pub fn source_cells_from_pairs<'a>(
    pairs: impl IntoIterator<Item = (&'a str, f64)>,
) -> BTreeMap<String, SourceCell> {
    let mut out: BTreeMap<String, SourceCell> = BTreeMap::new();
    for (label, effect) in pairs {
        let cell = out
            .entry(label.to_string())
            .or_insert_with(|| SourceCell::uniform(vec![]));
        cell.effects.push(effect);
        cell.weights.push(1.0);
    }
    out
}

/// Mean of the source effects in a cell under its base weights.
pub fn source_cell_mean(cell: &SourceCell) -> f64 {
    let total: f64 = cell.weights.iter().sum();
    if cell.weights.iter().all(|w| *w == cell.weights[0]) {
        return anchored_mean(cell.effects.iter().copied());
    }
    cell.weights.iter().zip(&cell.effects).map(|(w, t)| w * t).sum::<f64>() / total
}
