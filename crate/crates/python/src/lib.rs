//! Python bindings. Structured results (trajectories, summaries, reports)
//! cross the boundary as JSON and arrive as plain dicts and lists.

use nalgebra::Vector3;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use spinflip::effective::{Atom, MarkedMeasure};
use spinflip::geometry::rotation_to as rotation;
use spinflip::harness::io::summary_rows;
use spinflip::harness::validate::validate as validate_config;
use spinflip::harness::{self, ExperimentConfig, Observable, PhysicalParams, SweepAxis};
use spinflip::magnetics::{equilibrium_fractions, intensity};
use spinflip::particles::sample_positions as sample;
use spinflip::pdmp::{default_pairs, run_paths, simulate_path, summarize};
use spinflip::transport;
use spinflip::{Error, Spin, UnitVector, Vec3};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn unit(v: [f64; 3]) -> PyResult<UnitVector> {
    UnitVector::normalize(Vector3::from(v)).map_err(py_err)
}

fn spin(s: i8) -> PyResult<Spin> {
    match s {
        1 => Ok(Spin::Up),
        -1 => Ok(Spin::Down),
        _ => Err(PyValueError::new_err(format!("spin must be +1 or -1, got {s}"))),
    }
}

/// Experiment configuration, parsed from TOML.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(s) => ExperimentConfig::from_toml_str(s).map_err(py_err)?,
            None => ExperimentConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn from_path(path: &str) -> PyResult<Self> {
        Ok(PyConfig { inner: ExperimentConfig::from_path(path.as_ref()).map_err(py_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    /// Copy with one sweep parameter replaced ("epsilon", "phi" or "N").
    fn with_axis(&self, axis: &str, value: f64) -> PyResult<Self> {
        let axis: SweepAxis = axis.parse().map_err(py_err)?;
        Ok(PyConfig { inner: self.inner.with_axis(axis, value).map_err(py_err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.particles.n
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.spin.epsilon
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.inner.phi()
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.inner.radius()
    }

    fn __repr__(&self) -> String {
        format!("Config(n={}, epsilon={}, phi={}, hash={})", self.n(), self.epsilon(), self.phi(), self.hash())
    }
}

/// R ∈ SO(3) with R e₃ = ζ, as a nested list.
#[pyfunction]
fn rotation_to(zeta: [f64; 3]) -> PyResult<[[f64; 3]; 3]> {
    let r = rotation(&unit(zeta)?).map_err(py_err)?;
    Ok(std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])))
}

/// (m⁺, m⁻) for a = b H·ζ.
#[pyfunction]
fn m_pm(a: f64) -> (f64, f64) {
    equilibrium_fractions(a)
}

/// tanh(a).
#[pyfunction]
fn m0(a: f64) -> f64 {
    a.tanh()
}

/// λ^σ = exp(-σ a) for a = b H·ζ.
#[pyfunction]
fn lambda_pm(a: f64, sigma: i8) -> PyResult<f64> {
    Ok(intensity(a, spin(sigma)?))
}

#[pyfunction]
fn oseen(x: [f64; 3]) -> PyResult<[[f64; 3]; 3]> {
    let m = spinflip::stokes::oseen(&Vector3::from(x)).map_err(py_err)?;
    Ok(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
}

/// Particle centers for a configuration.
#[pyfunction]
fn sample_positions(config: &PyConfig) -> PyResult<Vec<[f64; 3]>> {
    let c = &config.inner;
    let xs = sample(c.particles.n, &c.particles.hypotheses, c.radius(), c.particles.seed).map_err(py_err)?;
    Ok(xs.iter().map(|x| [x.x, x.y, x.z]).collect())
}

/// Admissibility report and kernel checks.
#[pyfunction]
#[pyo3(signature = (config, probes = 1000))]
fn validate(py: Python<'_>, config: &PyConfig, probes: usize) -> PyResult<Py<PyAny>> {
    let report = py.detach(|| validate_config(&config.inner, probes)).map_err(py_err)?;
    to_py(py, &report)
}

/// One trajectory; a list of checkpoints {t, orientations, spins}.
#[pyfunction]
#[pyo3(signature = (config, seed = None))]
fn simulate(py: Python<'_>, config: &PyConfig, seed: Option<u64>) -> PyResult<Py<PyAny>> {
    let c = &config.inner;
    let traj = py
        .detach(|| {
            let state = c.build_configuration()?;
            let params = c.simulation_params()?;
            simulate_path(&state, &params, c.simulation.horizon, seed.unwrap_or(c.simulation.seed), c.simulation.mode)
        })
        .map_err(py_err)?;
    to_py(py, &traj.checkpoints)
}

/// Ensemble statistics as a list of row dicts.
#[pyfunction]
fn ensemble(py: Python<'_>, config: &PyConfig) -> PyResult<Py<PyAny>> {
    let c = &config.inner;
    let rows = py
        .detach(|| {
            let state = c.build_configuration()?;
            let mut params = c.simulation_params()?;
            params.record_jumps = false;
            let paths = run_paths(&state, &params, c.simulation.horizon, c.ensemble.runs, c.ensemble.base_seed, c.simulation.mode)?;
            let star = spinflip::effective::evolve_star(&state, &params.rates, &params.field, params.mobility.gamma, &params.output_times, params.dt_max)?;
            let pairs = if c.ensemble.pairs.is_empty() { default_pairs(state.len()) } else { c.ensemble.pairs.clone() };
            let summary = summarize(&paths, &pairs, Some(&star), &params.rates, &params.field, state.len())?;
            Ok::<_, Error>(summary_rows(&summary, &c.hash()))
        })
        .map_err(py_err)?;
    to_py(py, &rows)
}

/// Sweep rows; axis, values and observables default to the config.
#[pyfunction]
#[pyo3(signature = (config, axis = None, values = None, observables = None))]
fn sweep(
    py: Python<'_>,
    config: &PyConfig,
    axis: Option<&str>,
    values: Option<Vec<f64>>,
    observables: Option<Vec<String>>,
) -> PyResult<Py<PyAny>> {
    let c = &config.inner;
    let axis = match axis {
        Some(a) => a.parse::<SweepAxis>().map_err(py_err)?,
        None => c.sweep.axis,
    };
    let values = values.unwrap_or_else(|| c.sweep.values.clone());
    let observables = match observables {
        Some(o) => o.iter().map(|s| s.parse::<Observable>()).collect::<Result<Vec<_>, _>>().map_err(py_err)?,
        None => c.sweep.observables.clone(),
    };
    let rows = py.detach(|| harness::sweep(c, axis, &values, &observables, &[]));
    to_py(py, &rows)
}

type PyAtom = ([f64; 3], [f64; 3], Option<i8>);

fn measure(atoms: Vec<PyAtom>, weights: Option<Vec<f64>>) -> PyResult<MarkedMeasure> {
    let atoms = atoms
        .into_iter()
        .map(|(x, z, m)| {
            Ok(Atom { position: Vec3::from(x), orientation: unit(z)?, mark: m.map(spin).transpose()? })
        })
        .collect::<PyResult<Vec<_>>>()?;
    match weights {
        Some(w) => MarkedMeasure::new(atoms, w),
        None => MarkedMeasure::uniform(atoms),
    }
    .map_err(py_err)
}

/// Exact W₂ between two discrete measures. Atoms are
/// (position, orientation, spin or None) triples.
#[pyfunction]
#[pyo3(signature = (a, b, weights_a = None, weights_b = None))]
fn w2_exact(a: Vec<PyAtom>, b: Vec<PyAtom>, weights_a: Option<Vec<f64>>, weights_b: Option<Vec<f64>>) -> PyResult<f64> {
    let mu = measure(a, weights_a)?;
    let nu = measure(b, weights_b)?;
    transport::w2_exact(&mu, &nu).map_err(py_err)
}

/// ε, b, T̄ and r from SI parameters given as TOML; missing keys take the
/// typical values.
#[pyfunction]
#[pyo3(signature = (toml = ""))]
fn nondimensionalize(py: Python<'_>, toml: &str) -> PyResult<Py<PyAny>> {
    let p = PhysicalParams::from_toml_str(toml).map_err(py_err)?;
    to_py(py, &harness::nondimensionalize(&p).map_err(py_err)?)
}

/// Log-log fit {slope, intercept, r_squared, points}.
#[pyfunction]
fn fit_scaling(py: Python<'_>, xs: Vec<f64>, ys: Vec<f64>) -> PyResult<Py<PyAny>> {
    to_py(py, &harness::fit_scaling(&xs, &ys).map_err(py_err)?)
}

#[pymodule(name = "spinflip")]
fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(rotation_to, m)?)?;
    m.add_function(wrap_pyfunction!(m_pm, m)?)?;
    m.add_function(wrap_pyfunction!(m0, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_pm, m)?)?;
    m.add_function(wrap_pyfunction!(oseen, m)?)?;
    m.add_function(wrap_pyfunction!(sample_positions, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(w2_exact, m)?)?;
    m.add_function(wrap_pyfunction!(nondimensionalize, m)?)?;
    m.add_function(wrap_pyfunction!(fit_scaling, m)?)?;
    Ok(())
}
