//! Perturbation sweeps, Robust-AUC, and the fixed-parameter baseline
//! ensembles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cem::{CemConfig, MpcController};
use crate::ensemble::{Ensemble, Member, PhysicsMember};
use crate::env::{EnvInstance, ParamName, PerturbationGrid, PhysicsParams, MAX_RETURN};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustCurve {
    pub parameter: ParamName,
    pub values: Vec<f64>,
    pub median_return: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    pub episodes_per_value: usize,
    /// Per-value episode returns, in episode order.
    pub returns: Vec<Vec<f64>>,
}

impl RobustCurve {
    pub fn from_returns(parameter: ParamName, values: Vec<f64>, returns: Vec<Vec<f64>>) -> Self {
        let episodes_per_value = returns.first().map_or(0, Vec::len);
        let (mut median, mut q25, mut q75) = (Vec::new(), Vec::new(), Vec::new());
        for r in &returns {
            let mut sorted = r.clone();
            sorted.sort_by(f64::total_cmp);
            q25.push(quantile(&sorted, 0.25));
            median.push(quantile(&sorted, 0.5));
            q75.push(quantile(&sorted, 0.75));
        }
        RobustCurve {
            parameter,
            values,
            median_return: median,
            q25,
            q75,
            episodes_per_value,
            returns,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustAucReport {
    pub method: String,
    pub curve: RobustCurve,
    pub auc: f64,
    pub nominal_value: f64,
}

impl RobustAucReport {
    pub fn new(method: impl Into<String>, curve: RobustCurve) -> Result<Self> {
        let auc = robust_auc(&curve, MAX_RETURN)?;
        Ok(RobustAucReport {
            method: method.into(),
            nominal_value: curve.parameter.nominal(),
            curve,
            auc,
        })
    }

    /// Median return at the grid value closest (in log distance) to nominal.
    pub fn nominal_median(&self) -> f64 {
        let target = self.nominal_value.ln();
        let i = (0..self.curve.values.len())
            .min_by(|&a, &b| {
                let da = (self.curve.values[a].ln() - target).abs();
                let db = (self.curve.values[b].ln() - target).abs();
                da.total_cmp(&db)
            })
            .unwrap_or(0);
        self.curve.median_return.get(i).copied().unwrap_or(f64::NAN)
    }
}

/// Trapezoid integral of the median curve over the raw parameter axis,
/// divided by `(range · max_return)`.
pub fn robust_auc(curve: &RobustCurve, max_return: f64) -> Result<f64> {
    auc_of(&curve.values, &curve.median_return, max_return)
}

pub fn auc_of(values: &[f64], medians: &[f64], max_return: f64) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let (lo, hi) = (values[0], values[n - 1]);
    if !(hi > lo) {
        return Err(Error::GridBounds { lo, hi });
    }
    let area: f64 = (1..n)
        .map(|i| 0.5 * (medians[i] + medians[i - 1]) * (values[i] - values[i - 1]))
        .sum();
    Ok(area / ((hi - lo) * max_return))
}

/// Return of one evaluation episode. Environment noise and planner noise
/// come from `(seed, point, episode)` only, so every method evaluated with
/// the same keys sees the same realizations.
pub fn evaluate_episode(
    ensemble: &Ensemble,
    cem: &CemConfig,
    params: PhysicsParams,
    episode_length: usize,
    seed: u64,
    point: u64,
    episode: u64,
) -> Result<f64> {
    let root = derive_rng(seed, streams::EVAL);
    let mut env = EnvInstance::new(params, episode_length, root.substream(&[point, episode, 0]));
    let mut ctl = MpcController::new(cem.clone(), root.substream(&[point, episode, 1]));
    let mut total = 0.0;
    while !env.is_done() {
        let a = ctl.act(ensemble, &env.state());
        total += env.step(a)?.reward;
    }
    Ok(total)
}

/// `episodes` returns at one parameter setting.
pub fn evaluate_point(
    ensemble: &Ensemble,
    cem: &CemConfig,
    params: PhysicsParams,
    episodes: usize,
    seed: u64,
    point: u64,
) -> Result<Vec<f64>> {
    (0..episodes as u64)
        .into_par_iter()
        .map(|ep| evaluate_episode(ensemble, cem, params, EPISODE_LENGTH, seed, point, ep))
        .collect()
}

const EPISODE_LENGTH: usize = 100;

/// Runs every grid value with its parameter perturbed and everything else
/// nominal. The ensemble is only read.
pub fn evaluate_sweep(ensemble: &Ensemble, cem: &CemConfig, grid: &PerturbationGrid, seed: u64) -> Result<RobustCurve> {
    let nominal = PhysicsParams::nominal();
    let eps = grid.episodes_per_value;
    let jobs: Vec<(usize, u64)> = (0..grid.values.len())
        .flat_map(|i| (0..eps as u64).map(move |e| (i, e)))
        .collect();
    let flat: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, e)| {
            let params = nominal.perturbed(grid.parameter, grid.values[i]);
            evaluate_episode(ensemble, cem, params, EPISODE_LENGTH, seed, i as u64, e)
        })
        .collect::<Result<_>>()?;
    let returns = flat.chunks(eps.max(1)).map(<[f64]>::to_vec).collect();
    Ok(RobustCurve::from_returns(grid.parameter, grid.values.clone(), returns))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Every member at the nominal parameters.
    Single,
    /// A `√B × √B` log-spaced grid over `[nominal/spread, nominal·spread]`.
    Uniform,
}

impl std::str::FromStr for BaselineKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single" => Ok(BaselineKind::Single),
            "uniform" => Ok(BaselineKind::Uniform),
            other => Err(format!("unknown baseline `{other}` (expected single or uniform)")),
        }
    }
}

/// Log-spaced factors `spread^(−1 + 2i/(k−1))`; `[1]` when `k == 1`.
fn grid_factors(k: usize, spread: f64) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    (0..k)
        .map(|i| spread.powf(-1.0 + 2.0 * i as f64 / (k - 1) as f64))
        .collect()
}

pub fn make_baseline_ensemble(kind: BaselineKind, nominal: &PhysicsParams, b: usize, spread: f64) -> Result<Ensemble> {
    let members = match kind {
        BaselineKind::Single => vec![(nominal.pole_mass, nominal.pole_length); b.max(1)],
        BaselineKind::Uniform => {
            let k = (b as f64).sqrt().round() as usize;
            if k * k != b || b == 0 {
                return Err(Error::NotSquare(b));
            }
            let f = grid_factors(k, spread);
            let mut out = Vec::with_capacity(b);
            for fm in &f {
                for fl in &f {
                    out.push((nominal.pole_mass * fm, nominal.pole_length * fl));
                }
            }
            out
        }
    };
    Ok(Ensemble::new(
        members
            .into_iter()
            .map(|(m, l)| Member::Physics(PhysicsMember::new(m, l)))
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub auc: f64,
    pub nominal_median: f64,
}

/// Rows sorted by auc (descending), ties broken by method name.
pub fn compare_methods(reports: &BTreeMap<String, RobustAucReport>) -> Result<Vec<ComparisonRow>> {
    let mut it = reports.values();
    if let Some(first) = it.next() {
        if it.any(|r| r.curve.values != first.curve.values || r.curve.parameter != first.curve.parameter) {
            return Err(Error::MismatchedGrids);
        }
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|(name, r)| ComparisonRow {
            method: name.clone(),
            auc: r.auc,
            nominal_median: r.nominal_median(),
        })
        .collect();
    rows.sort_by(|a, b| b.auc.total_cmp(&a.auc).then_with(|| a.method.cmp(&b.method)));
    Ok(rows)
}

pub fn curve_csv(curve: &RobustCurve) -> String {
    let mut out = String::from("value,median,q25,q75\n");
    for i in 0..curve.values.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            curve.values[i], curve.median_return[i], curve.q25[i], curve.q75[i]
        );
    }
    out
}

pub fn write_curve_csv(curve: &RobustCurve, path: &Path) -> Result<()> {
    std::fs::write(path, curve_csv(curve)).map_err(|e| Error::io(path, e))
}

/// Summary record written next to the curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub parameter: ParamName,
    pub auc: f64,
    pub nominal_median: f64,
    pub grid: Vec<f64>,
    pub episodes_per_value: usize,
    pub seed: u64,
}

impl Summary {
    pub fn from_report(r: &RobustAucReport, seed: u64) -> Self {
        Summary {
            method: r.method.clone(),
            parameter: r.curve.parameter,
            auc: r.auc,
            nominal_median: r.nominal_median(),
            grid: r.curve.values.clone(),
            episodes_per_value: r.curve.episodes_per_value,
            seed,
        }
    }
}

pub fn summary_json(summaries: &[Summary]) -> String {
    serde_json::to_string_pretty(summaries).expect("summaries serialize") + "\n"
}
