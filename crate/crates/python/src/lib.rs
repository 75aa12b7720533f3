//! Python bindings. Results come back as plain dicts (decoded from the same
//! JSON the CLI writes), samples as the opaque `Sample` class.

use ldte::{
    analytic_band, analytic_variance, bootstrap_band, compute_stratum_stats, default_threshold_grid, estimate as run_estimate,
    fit_cross_fitted, integer_support_grid, BandMethod, BootstrapOptions, CarScheme, CsvSchema, DgpConfig, EffectKind,
    EstimatorConfig, ExperimentSample, GbtParams, LdteResult, LearnerSpec, McConfig, McEstimator, RidgeParams, SchemeKind,
    Targets, ThresholdGrid,
};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

create_exception!(pyldte, LdteError, PyValueError, "Raised for invalid data or unidentified estimates.");

fn err(e: ldte::LdteError) -> PyErr {
    LdteError::new_err(e.to_string())
}

fn to_python(py: Python<'_>, value: &impl Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "Sample", frozen)]
struct Sample {
    inner: ExperimentSample,
}

#[pymethods]
impl Sample {
    /// Sample from columns; `strata` labels may be any values with a string form.
    #[new]
    #[pyo3(signature = (outcome, treatment, assignment, strata, covariates=None))]
    fn new(
        outcome: Vec<f64>,
        treatment: Vec<u8>,
        assignment: Vec<u8>,
        strata: Vec<Bound<'_, PyAny>>,
        covariates: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let labels = strata
            .iter()
            .map(|s| Ok(s.str()?.to_string()))
            .collect::<PyResult<Vec<String>>>()?;
        ExperimentSample::new(outcome, treatment, assignment, &labels, covariates.unwrap_or_default())
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, outcome, treatment, assignment, stratum, covariates=None, delimiter=","))]
    fn from_csv(
        path: &str,
        outcome: &str,
        treatment: &str,
        assignment: &str,
        stratum: &str,
        covariates: Option<Vec<String>>,
        delimiter: &str,
    ) -> PyResult<Self> {
        let delimiter = match delimiter.as_bytes() {
            [b] => *b,
            _ => return Err(PyValueError::new_err("delimiter must be one ASCII character")),
        };
        let schema = CsvSchema {
            outcome: outcome.into(),
            treatment: treatment.into(),
            assignment: assignment.into(),
            stratum: stratum.into(),
            covariates: covariates.unwrap_or_default(),
            delimiter,
        };
        ldte::load_sample(path, &schema).map(|inner| Self { inner }).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_strata(&self) -> usize {
        self.inner.n_strata()
    }

    #[getter]
    fn stratum_labels(&self) -> Vec<String> {
        self.inner.stratum_labels().to_vec()
    }

    #[getter]
    fn covariate_dim(&self) -> usize {
        self.inner.covariate_dim()
    }

    #[getter]
    fn outcome(&self) -> Vec<f64> {
        self.inner.outcome().to_vec()
    }

    #[getter]
    fn treatment(&self) -> Vec<u8> {
        self.inner.treatment().to_vec()
    }

    #[getter]
    fn assignment(&self) -> Vec<u8> {
        self.inner.assignment().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Sample(n={}, strata={}, covariates={})",
            self.inner.len(),
            self.inner.n_strata(),
            self.inner.covariate_dim()
        )
    }
}

fn learner_spec(name: &str) -> PyResult<LearnerSpec> {
    match name {
        "zero" => Ok(LearnerSpec::zero()),
        "ridge" => Ok(LearnerSpec::ridge(RidgeParams::default())),
        "gbt" => Ok(LearnerSpec::gbt(GbtParams::default())),
        other => Err(PyValueError::new_err(format!("unknown learner {other:?}; use zero, ridge or gbt"))),
    }
}

#[derive(Serialize)]
struct Estimate {
    #[serde(flatten)]
    result: LdteResult,
    method: BandMethod,
    level: f64,
    se: Vec<f64>,
    ci_lower: Vec<f64>,
    ci_upper: Vec<f64>,
    #[serde(rename = "B")]
    bootstrap_draws: Option<usize>,
    rejected_draws: usize,
}

/// LDTE or LPTE with a confidence band. Give at most one of `thresholds`,
/// `quantiles` or `integer_support`; nine quantiles are used otherwise.
#[pyfunction]
#[pyo3(signature = (
    sample, thresholds=None, quantiles=None, integer_support=false, support_cap=None,
    learner="gbt", folds=2, effect="ldte", bootstrap=None, level=0.95, seed=0, weak_floor=0.01
))]
#[allow(clippy::too_many_arguments)]
fn estimate(
    py: Python<'_>,
    sample: &Sample,
    thresholds: Option<Vec<f64>>,
    quantiles: Option<usize>,
    integer_support: bool,
    support_cap: Option<f64>,
    learner: &str,
    folds: usize,
    effect: &str,
    bootstrap: Option<usize>,
    level: f64,
    seed: u64,
    weak_floor: f64,
) -> PyResult<Py<PyAny>> {
    let modes = usize::from(thresholds.is_some()) + usize::from(quantiles.is_some()) + usize::from(integer_support);
    if modes > 1 {
        return Err(PyValueError::new_err("give at most one of thresholds, quantiles, integer_support"));
    }
    let kind = match effect {
        "ldte" => EffectKind::Ldte,
        "lpte" => EffectKind::Lpte,
        other => return Err(PyValueError::new_err(format!("unknown effect {other:?}"))),
    };
    let spec = learner_spec(learner)?;
    let s = &sample.inner;
    let out = py
        .detach(|| -> ldte::Result<Estimate> {
            let grid = match (thresholds, quantiles) {
                (Some(t), _) => ThresholdGrid::new(t)?,
                (None, Some(q)) => default_threshold_grid(s, q)?,
                (None, None) if integer_support => integer_support_grid(s, support_cap)?,
                (None, None) => default_threshold_grid(s, 9)?,
            };
            let stats = compute_stratum_stats(s);
            let config = EstimatorConfig { weak_floor };
            let fit = fit_cross_fitted(s, &grid, &spec, folds, seed)?;
            let result = run_estimate(s, &fit, &stats, &grid, kind, &config)?;
            let band = match bootstrap {
                Some(draws) => {
                    let opts = BootstrapOptions { draws, level, seed };
                    bootstrap_band(s, &fit, &stats, &grid, kind, &opts, &config)?
                }
                None => analytic_band(&result, &analytic_variance(s, &fit, &stats, &grid, &result)?, level)?,
            };
            Ok(Estimate {
                result,
                method: band.method,
                level: band.level,
                se: band.se,
                ci_lower: band.lower,
                ci_upper: band.upper,
                bootstrap_draws: band.draws,
                rejected_draws: band.rejected_draws,
            })
        })
        .map_err(err)?;
    to_python(py, &out)
}

/// Treatment assignment within strata (`simple`, `block`, `efron` or `wei`).
#[pyfunction]
#[pyo3(signature = (strata, scheme="simple", target=0.5, block_size=None, gamma=2.0/3.0, strength=1.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn assign(
    strata: Vec<Bound<'_, PyAny>>,
    scheme: &str,
    target: f64,
    block_size: Option<usize>,
    gamma: f64,
    strength: f64,
    seed: u64,
) -> PyResult<Vec<u8>> {
    let labels = strata
        .iter()
        .map(|s| Ok(s.str()?.to_string()))
        .collect::<PyResult<Vec<String>>>()?;
    let (codes, _) = ldte::data::encode_labels(&labels);
    let kind = match scheme {
        "simple" => SchemeKind::SimpleRandom,
        "block" => SchemeKind::StratifiedBlock {
            block_size: block_size.ok_or_else(|| PyValueError::new_err("block scheme needs block_size"))?,
        },
        "efron" => SchemeKind::EfronBiasedCoin { gamma },
        "wei" => SchemeKind::WeiAdaptive { strength },
        other => return Err(PyValueError::new_err(format!("unknown scheme {other:?}"))),
    };
    let scheme = CarScheme::new(kind, Targets::All(target)).map_err(err)?;
    ldte::assign(&scheme, &codes, seed).map_err(err)
}

fn dgp_config(py: Python<'_>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<DgpConfig> {
    let Some(overrides) = overrides else {
        return Ok(DgpConfig::default());
    };
    let text: String = py.import("json")?.call_method1("dumps", (overrides,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("dgp: {e}")))
}

/// One draw of the synthetic design, with latent potential outcomes.
#[pyfunction]
#[pyo3(signature = (n, seed=0, dgp=None))]
fn generate(py: Python<'_>, n: usize, seed: u64, dgp: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
    let config = dgp_config(py, dgp)?;
    let g = py.detach(|| ldte::generate(&config, n, seed)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("y0", g.y0)?;
    out.set_item("y1", g.y1)?;
    out.set_item("d0", g.d0)?;
    out.set_item("d1", g.d1)?;
    let compliance: Vec<String> = g
        .compliance
        .iter()
        .map(|c| serde_json::to_value(c).map(|v| v.as_str().unwrap_or_default().to_string()))
        .collect::<Result<_, _>>()
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    out.set_item("compliance", compliance)?;
    out.set_item("sample", Py::new(py, Sample { inner: g.sample })?)?;
    Ok(out.into_any().unbind())
}

/// Monte Carlo study; returns RMSE, CI length and coverage per estimator.
#[pyfunction]
#[pyo3(signature = (n, reps, seed=0, levels=None, estimators=None, n_ref=1_000_000, folds=2, level=0.95, dgp=None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    n: usize,
    reps: usize,
    seed: u64,
    levels: Option<Vec<f64>>,
    estimators: Option<Vec<String>>,
    n_ref: usize,
    folds: usize,
    level: f64,
    dgp: Option<&Bound<'_, PyDict>>,
) -> PyResult<Py<PyAny>> {
    let mut config = McConfig::new(n, reps, seed);
    config.dgp = dgp_config(py, dgp)?;
    config.n_ref = n_ref;
    config.folds = folds;
    config.level = level;
    if let Some(levels) = levels {
        config.levels = levels;
    }
    if let Some(names) = estimators {
        config.estimators = names
            .iter()
            .map(|name| match name.as_str() {
                "unadjusted" => Ok(McEstimator::Unadjusted),
                "linear" => Ok(McEstimator::LinearAdjusted),
                "ml" => Ok(McEstimator::MlAdjusted {
                    learner: LearnerSpec::gbt(GbtParams::default()),
                }),
                other => Err(PyValueError::new_err(format!("unknown estimator {other:?}"))),
            })
            .collect::<PyResult<_>>()?;
    }
    let report = py.detach(|| ldte::run_monte_carlo(&config)).map_err(err)?;
    to_python(py, &report)
}

#[pymodule]
fn pyldte(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LdteError", m.py().get_type::<LdteError>())?;
    m.add_class::<Sample>()?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(assign, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
