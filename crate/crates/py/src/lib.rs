//! Python bindings: configuration, ensembles, training, robustness sweeps
//! and the loss primitives.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use uduc_core::cem::{cem_plan, CemConfig};
use uduc_core::config::{apply_overrides, parse_config, serialize_config, validate_config, ValidatedConfig};
use uduc_core::ensemble::{decode_checkpoint, encode_checkpoint, Ensemble as CoreEnsemble, GaussianPrediction};
use uduc_core::env::{dynamics_mean, make_grid_spaced, ParamName, PhysicsParams, Spacing, DT, MAX_RETURN};
use uduc_core::losses::{info_nce_from_scores, pe_loss_pred};
use uduc_core::rng::derive_rng;
use uduc_core::robust::{auc_of, evaluate_sweep, make_baseline_ensemble, BaselineKind, RobustAucReport};
use uduc_core::trainer::run_training;
use uduc_core::types::{Action, State, STATE_DIM};
use uduc_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::EpisodeDone => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn state(v: [f64; STATE_DIM]) -> State {
    State(v)
}

/// Validated experiment configuration.
///
/// `Config(toml="", overrides=[])` parses a TOML document, applies
/// `key=value` overrides and validates the result.
#[pyclass(module = "uduc", frozen)]
struct Config {
    inner: ValidatedConfig,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (toml = "", overrides = Vec::new()))]
    fn new(toml: &str, overrides: Vec<String>) -> PyResult<Self> {
        let raw = apply_overrides(&parse_config(toml).map_err(to_py)?, &overrides).map_err(to_py)?;
        Ok(Config {
            inner: validate_config(raw).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> String {
        serialize_config(&self.inner)
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn ensemble_size(&self) -> usize {
        self.inner.ensemble_size
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(tau={}, ensemble_size={}, seed={})",
            self.inner.tau, self.inner.ensemble_size, self.inner.seed
        )
    }
}

/// Probabilistic ensemble with Polyak target copies.
#[pyclass(module = "uduc", frozen)]
struct Ensemble {
    inner: CoreEnsemble,
}

#[pymethods]
impl Ensemble {
    /// Physics ensemble with the given `(pole_mass, pole_length)` members.
    #[staticmethod]
    fn physics(params: Vec<(f64, f64)>) -> PyResult<Self> {
        if params.is_empty() || params.iter().any(|&(m, l)| !(m > 0.0 && l > 0.0)) {
            return Err(PyValueError::new_err("need at least one member with positive parameters"));
        }
        Ok(Ensemble {
            inner: CoreEnsemble::physics_from(&params),
        })
    }

    /// `kind` is `"single"` or `"uniform"`.
    #[staticmethod]
    #[pyo3(signature = (kind, members = 9, spread = 2.0))]
    fn baseline(kind: &str, members: usize, spread: f64) -> PyResult<Self> {
        let kind: BaselineKind = kind.parse().map_err(PyValueError::new_err)?;
        let inner = make_baseline_ensemble(kind, &PhysicsParams::nominal(), members, spread).map_err(to_py)?;
        Ok(Ensemble { inner })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Ensemble {
            inner: decode_checkpoint(data).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let data = std::fs::read(path).map_err(|e| to_py(Error::io(path, e)))?;
        Self::from_bytes(&data)
    }

    fn to_bytes(&self) -> Vec<u8> {
        encode_checkpoint(&self.inner)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| to_py(Error::io(path, e)))
    }

    fn __len__(&self) -> usize {
        self.inner.size()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner.kind() {
            uduc_core::config::ModelKind::Physics => "physics",
            uduc_core::config::ModelKind::Mlp => "mlp",
        }
    }

    /// Live `(pole_mass, pole_length)` per member, or `None` for MLP members.
    fn physics_params(&self) -> Option<Vec<(f64, f64)>> {
        self.inner.physics_params()
    }

    /// `(mean, variance)` of member `b`'s next-state Gaussian.
    #[pyo3(signature = (b, state, action, target = false))]
    fn predict(
        &self,
        b: usize,
        state: [f64; STATE_DIM],
        action: f64,
        target: bool,
    ) -> PyResult<([f64; STATE_DIM], [f64; STATE_DIM])> {
        if b >= self.inner.size() {
            return Err(PyValueError::new_err(format!("member {b} out of range")));
        }
        let m = if target { self.inner.target(b) } else { self.inner.member(b) };
        let p = m.predict(&State(state), Action::new(action));
        Ok((p.mean.0, p.variance))
    }

    /// First action of a CEM plan from `state`.
    #[pyo3(signature = (state, seed = 0, config = None))]
    fn plan(&self, state: [f64; STATE_DIM], seed: u64, config: Option<&Config>) -> f64 {
        let cem: CemConfig = config.map(|c| c.inner.cem.clone()).unwrap_or_default();
        let mut rng = derive_rng(seed, 0);
        cem_plan(&self.inner, &State(state), &cem, &mut rng).force()
    }

    fn __repr__(&self) -> String {
        format!("Ensemble(kind={}, members={})", self.kind(), self.inner.size())
    }
}

/// Trains an ensemble. Returns `(ensemble, log)` where `log` holds
/// `episode_returns`, `rewards` and per-update `losses` rows
/// `(step, member, total, nll, contrastive, l2, grad_norm)`.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: &Config) -> PyResult<(Ensemble, Bound<'py, PyDict>)> {
    let cfg = config.inner.clone();
    let (ensemble, log) = py
        .detach(|| run_training(&cfg, &cfg.cem))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("episode_returns", log.episode_returns())?;
    d.set_item("rewards", log.steps.iter().map(|r| r.reward).collect::<Vec<_>>())?;
    let losses: Vec<(usize, usize, f64, f64, f64, f64, f64)> = log
        .losses
        .iter()
        .map(|l| (l.step, l.member, l.total, l.nll, l.contrastive, l.l2, l.grad_norm))
        .collect();
    d.set_item("losses", losses)?;
    Ok((Ensemble { inner: ensemble }, d))
}

/// Robustness sweep of one parameter. Returns a dict with the grid values,
/// per-value median and quartiles of the return, and the Robust-AUC.
#[pyfunction]
#[pyo3(signature = (ensemble, parameter = "pole_mass", points = 20, episodes = 100, seed = 0, lo = None, hi = None, spacing = "log", config = None))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    ensemble: &Ensemble,
    parameter: &str,
    points: usize,
    episodes: usize,
    seed: u64,
    lo: Option<f64>,
    hi: Option<f64>,
    spacing: &str,
    config: Option<&Config>,
) -> PyResult<Bound<'py, PyDict>> {
    let name: ParamName = parameter.parse().map_err(PyValueError::new_err)?;
    let spacing: Spacing = spacing.parse().map_err(PyValueError::new_err)?;
    let (dlo, dhi) = name.test_range();
    let grid = make_grid_spaced(name, lo.unwrap_or(dlo), hi.unwrap_or(dhi), points, spacing)
        .map_err(to_py)?
        .with_episodes(episodes);
    let cem: CemConfig = config.map(|c| c.inner.cem.clone()).unwrap_or_default();
    let e = &ensemble.inner;
    let report = py
        .detach(|| evaluate_sweep(e, &cem, &grid, seed).and_then(|c| RobustAucReport::new("model", c)))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("parameter", name.as_str())?;
    d.set_item("values", &report.curve.values)?;
    d.set_item("median", &report.curve.median_return)?;
    d.set_item("q25", &report.curve.q25)?;
    d.set_item("q75", &report.curve.q75)?;
    d.set_item("auc", report.auc)?;
    Ok(d)
}

/// Normalized area under a median-return curve.
#[pyfunction]
#[pyo3(signature = (values, medians, max_return = MAX_RETURN))]
fn robust_auc(values: Vec<f64>, medians: Vec<f64>, max_return: f64) -> PyResult<f64> {
    if values.len() != medians.len() {
        return Err(PyValueError::new_err("values and medians differ in length"));
    }
    auc_of(&values, &medians, max_return).map_err(to_py)
}

/// Gaussian negative log-likelihood (up to constants) of `target`.
#[pyfunction]
fn pe_loss(mean: [f64; STATE_DIM], variance: [f64; STATE_DIM], target: [f64; STATE_DIM]) -> PyResult<f64> {
    if variance.iter().any(|v| !(*v > 0.0)) {
        return Err(PyValueError::new_err("variances must be positive"));
    }
    let pred = GaussianPrediction {
        mean: state(mean),
        variance,
    };
    Ok(pe_loss_pred(&pred, &State(target)))
}

/// `-log softmax(scores)[0]`.
#[pyfunction]
fn info_nce(scores: Vec<f64>) -> PyResult<f64> {
    if scores.is_empty() {
        return Err(PyValueError::new_err("need at least one score"));
    }
    Ok(info_nce_from_scores(&scores))
}

/// Noise-free cart-pole step.
#[pyfunction]
#[pyo3(signature = (state, force, pole_mass = 0.1, pole_length = 1.0))]
fn cartpole_step(state: [f64; STATE_DIM], force: f64, pole_mass: f64, pole_length: f64) -> [f64; STATE_DIM] {
    dynamics_mean(&State(state), Action::new(force), &PhysicsParams::with_pole(pole_mass, pole_length), DT).0
}

#[pymodule]
fn uduc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Ensemble>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(robust_auc, m)?)?;
    m.add_function(wrap_pyfunction!(pe_loss, m)?)?;
    m.add_function(wrap_pyfunction!(info_nce, m)?)?;
    m.add_function(wrap_pyfunction!(cartpole_step, m)?)?;
    m.add("MAX_RETURN", MAX_RETURN)?;
    Ok(())
}
