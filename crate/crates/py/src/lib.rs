//! Python module `qwork`.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qwork_core::fluct;
use qwork_core::interferometer as ifm;
use qwork_core::quench::{self, Direction, InverseTemperature, QuenchProtocol};
use qwork_core::spectral;
use qwork_core::tpm;

fn err(e: qwork_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn direction(s: &str) -> PyResult<Direction> {
    match s {
        "forward" => Ok(Direction::Forward),
        "backward" => Ok(Direction::Backward),
        _ => Err(PyValueError::new_err(format!("direction must be 'forward' or 'backward', got {s:?}"))),
    }
}

/// `float('inf')` selects the zero-temperature state.
fn beta(b: f64) -> PyResult<InverseTemperature> {
    InverseTemperature::new(b).map_err(err)
}

#[pyclass(name = "Protocol", frozen)]
#[derive(Clone)]
struct PyProtocol(QuenchProtocol);

#[pymethods]
impl PyProtocol {
    #[new]
    #[pyo3(signature = (nu1, nu2, tau, direction = "forward"))]
    fn new(nu1: f64, nu2: f64, tau: f64, direction: &str) -> PyResult<Self> {
        Ok(Self(QuenchProtocol::new(nu1, nu2, tau, self::direction(direction)?).map_err(err)?))
    }

    /// Half-gaps 2.5 and 1.0 kHz, 0.1 ms ramp.
    #[staticmethod]
    #[pyo3(signature = (direction = "forward"))]
    fn reference(direction: &str) -> PyResult<Self> {
        Ok(Self(QuenchProtocol::reference(self::direction(direction)?)))
    }

    fn reversed(&self) -> Self {
        Self(self.0.with_direction(self.0.direction.reversed()))
    }

    #[getter]
    fn nu1(&self) -> f64 {
        self.0.nu1
    }

    #[getter]
    fn nu2(&self) -> f64 {
        self.0.nu2
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau
    }

    #[getter]
    fn direction(&self) -> &'static str {
        self.0.direction.label()
    }

    fn initial_half_gap(&self) -> f64 {
        self.0.initial_half_gap()
    }

    fn final_half_gap(&self) -> f64 {
        self.0.final_half_gap()
    }

    /// The four work values in kHz, ascending.
    fn work_values(&self) -> PyResult<[f64; 4]> {
        tpm::work_values(&self.0).map_err(err)
    }

    /// Row-major 2x2 quench propagator.
    fn propagator(&self) -> [[Complex64; 2]; 2] {
        let u = quench::propagator(&self.0);
        [[u[(0, 0)], u[(0, 1)]], [u[(1, 0)], u[(1, 1)]]]
    }

    fn __repr__(&self) -> String {
        format!("Protocol(nu1={}, nu2={}, tau={}, direction='{}')", self.0.nu1, self.0.nu2, self.0.tau, self.0.direction.label())
    }
}

#[pyclass(name = "NoiseModel", frozen)]
#[derive(Clone)]
struct PyNoise(ifm::NoiseModel);

#[pymethods]
impl PyNoise {
    #[new]
    #[pyo3(signature = (gamma_f = 0.0, gamma_b = 0.0, rf_sigma = 0.0, c_dephasing = 0.0, readout_sigma = 0.0))]
    fn new(gamma_f: f64, gamma_b: f64, rf_sigma: f64, c_dephasing: f64, readout_sigma: f64) -> PyResult<Self> {
        let n = ifm::NoiseModel { gamma_f, gamma_b, rf_sigma, c_dephasing, readout_sigma };
        n.validate().map_err(err)?;
        Ok(Self(n))
    }

    #[getter]
    fn gamma_f(&self) -> f64 {
        self.0.gamma_f
    }

    #[getter]
    fn gamma_b(&self) -> f64 {
        self.0.gamma_b
    }

    #[getter]
    fn rf_sigma(&self) -> f64 {
        self.0.rf_sigma
    }

    #[getter]
    fn c_dephasing(&self) -> f64 {
        self.0.c_dephasing
    }

    #[getter]
    fn readout_sigma(&self) -> f64 {
        self.0.readout_sigma
    }
}

#[pyclass(name = "Series", frozen)]
#[derive(Clone)]
struct PySeries(ifm::MagnetizationSeries);

#[pymethods]
impl PySeries {
    #[new]
    fn new(u_grid: Vec<f64>, samples: Vec<Complex64>) -> PyResult<Self> {
        Ok(Self(ifm::MagnetizationSeries::new(u_grid, samples).map_err(err)?))
    }

    /// ms
    #[getter]
    fn u_grid(&self) -> Vec<f64> {
        self.0.u_grid.clone()
    }

    #[getter]
    fn samples(&self) -> Vec<Complex64> {
        self.0.samples.clone()
    }

    fn truncated(&self, n: usize) -> Self {
        Self(self.0.truncated(n))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Interferometer", frozen)]
struct PyInterferometer(ifm::Interferometer);

#[pymethods]
impl PyInterferometer {
    #[new]
    fn new(protocol: &PyProtocol) -> Self {
        Self(ifm::Interferometer::new(&protocol.0))
    }

    /// Ideal readout at conjugate time `u` (ms).
    fn run(&self, beta: f64, u: f64) -> PyResult<Complex64> {
        self.0.run_abstract(self::beta(beta)?, u).map_err(err)
    }

    /// Pulse-level series on `n` points at `rate_khz`.
    #[pyo3(signature = (beta, noise = None, n = ifm::DEFAULT_SAMPLES, rate_khz = ifm::DEFAULT_RATE_KHZ, seed = 0))]
    fn sample(&self, py: Python<'_>, beta: f64, noise: Option<PyNoise>, n: usize, rate_khz: f64, seed: u64) -> PyResult<PySeries> {
        let b = self::beta(beta)?;
        let noise = noise.map_or(ifm::NoiseModel::noiseless(), |n| n.0);
        py.detach(|| ifm::sample_series_with(&self.0, b, &noise, n, rate_khz, seed))
            .map(PySeries)
            .map_err(err)
    }
}

/// Exact work statistics: dict with `p0`, `pcond` and `atoms` as
/// `(work, prob, initial, final)` tuples.
#[pyfunction]
fn exact_statistics<'py>(py: Python<'py>, protocol: &PyProtocol, beta: f64) -> PyResult<Bound<'py, PyDict>> {
    let ex = tpm::ExactStatistics::compute(&protocol.0, self::beta(beta)?).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("p0", ex.table.p0)?;
    d.set_item("pcond", ex.table.pcond)?;
    let atoms: Vec<_> = ex.distribution.atoms.iter().map(|a| (a.work, a.prob, a.initial, a.final_level)).collect();
    d.set_item("atoms", atoms)?;
    d.set_item("jarzynski_lhs", tpm::jarzynski_lhs(&ex.distribution, self::beta(beta)?).ok())?;
    Ok(d)
}

/// Exact characteristic function at `u` (ms).
#[pyfunction]
fn chi_exact(protocol: &PyProtocol, beta: f64, u: f64) -> PyResult<Complex64> {
    let ex = tpm::ExactStatistics::compute(&protocol.0, self::beta(beta)?).map_err(err)?;
    Ok(tpm::chi_exact(&ex.distribution, u))
}

/// kT in kHz from the excited population of a level pair with half-gap `nu`.
#[pyfunction]
fn temperature_from_population(p1: f64, nu: f64) -> PyResult<f64> {
    quench::temperature_from_population(p1, nu).map_err(err)
}

#[pyclass(name = "FitModel", frozen)]
#[derive(Clone)]
struct PyFit(spectral::FitModel);

#[pymethods]
impl PyFit {
    /// 1/ms
    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma
    }

    /// kHz, ascending.
    #[getter]
    fn omegas(&self) -> [f64; 4] {
        self.0.omegas()
    }

    #[getter]
    fn alphas(&self) -> [Complex64; 4] {
        self.0.alphas()
    }

    /// 13x13, ordered gamma, omegas, then Re/Im of each amplitude.
    #[getter]
    fn covariance(&self) -> Vec<Vec<f64>> {
        self.0.covariance.iter().map(|r| r.to_vec()).collect()
    }

    #[getter]
    fn residual_rms(&self) -> f64 {
        self.0.residual_rms
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }

    fn sigma(&self, index: usize) -> PyResult<f64> {
        if index >= spectral::PARAMS {
            return Err(PyValueError::new_err(format!("parameter index {index} out of range")));
        }
        Ok(self.0.sigma(index))
    }

    fn evaluate(&self, u: f64) -> Complex64 {
        self.0.evaluate(u)
    }

    fn distribution(&self) -> PyResult<PyDistribution> {
        spectral::distribution_from_fit(&self.0).map(PyDistribution).map_err(err)
    }

    /// `<exp(-beta W)>` by analytic continuation of the fit.
    fn jarzynski_continuation(&self, beta: f64) -> PyResult<f64> {
        fluct::jarzynski_continuation(&self.0, beta).map_err(err)
    }
}

#[pyclass(name = "Distribution", frozen)]
#[derive(Clone)]
struct PyDistribution(spectral::ReconstructedDistribution);

#[pymethods]
impl PyDistribution {
    /// `(work, prob, sigma_work, sigma_prob)` tuples, ascending in work.
    #[getter]
    fn atoms(&self) -> Vec<(f64, f64, f64, f64)> {
        self.0.atoms.iter().map(|a| (a.work, a.prob, a.sigma_work, a.sigma_prob)).collect()
    }

    fn total_probability(&self) -> f64 {
        self.0.total_probability()
    }

    /// Initial populations and conditional rows; `None` for an empty row.
    fn conditionals(&self, protocol: &PyProtocol) -> ([f64; 2], [Option<[f64; 2]>; 2]) {
        let c = spectral::conditional_estimate(&self.0, protocol.0.initial_half_gap(), protocol.0.final_half_gap());
        (c.p0, c.rows)
    }
}

#[pyfunction]
fn fit_series(py: Python<'_>, series: &PySeries) -> PyResult<PyFit> {
    py.detach(|| spectral::fit_series(&series.0)).map(PyFit).map_err(err)
}

#[pyclass(name = "CrooksFit", frozen)]
#[derive(Clone)]
struct PyCrooks(fluct::CrooksFit);

#[pymethods]
impl PyCrooks {
    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta_est
    }

    #[getter]
    fn sigma_beta(&self) -> f64 {
        self.0.sigma_beta
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.0.intercept
    }

    #[getter]
    fn delta_f(&self) -> Option<f64> {
        self.0.delta_f_est
    }

    #[getter]
    fn sigma_delta_f(&self) -> Option<f64> {
        self.0.sigma_delta_f
    }

    /// `(work, ln_ratio, sigma)` tuples.
    #[getter]
    fn points(&self) -> Vec<(f64, f64, f64)> {
        self.0.points.iter().map(|p| (p.work, p.ln_ratio, p.sigma)).collect()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.warnings.clone()
    }
}

/// Pairs forward and time-reversed backward atoms and fits the Crooks line.
#[pyfunction]
fn crooks_fit(forward: &PyDistribution, backward: &PyDistribution) -> PyResult<PyCrooks> {
    let points = fluct::crooks_points(&forward.0, &backward.0).map_err(err)?;
    fluct::crooks_fit(&points).map(PyCrooks).map_err(err)
}

/// Continuation, Crooks and theory estimates of `exp(-beta dF)` with flags.
#[pyfunction]
#[pyo3(signature = (fit_forward, crooks, protocol, beta, trials = 1000, seed = 0))]
fn jarzynski_report<'py>(
    py: Python<'py>,
    fit_forward: &PyFit,
    crooks: &PyCrooks,
    protocol: &PyProtocol,
    beta: f64,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let b = self::beta(beta)?;
    let r = fluct::jarzynski_report(&fit_forward.0, &crooks.0, &protocol.0, b, trials, seed).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("beta", r.beta)?;
    for (k, e) in [("continuation", r.lhs_continuation), ("crooks", r.rhs_crooks), ("theory", r.rhs_theory)] {
        d.set_item(k, (e.value, e.sigma))?;
    }
    d.set_item("continuation_vs_crooks", r.flags.lhs_vs_crooks)?;
    d.set_item("continuation_vs_theory", r.flags.lhs_vs_theory)?;
    d.set_item("crooks_vs_theory", r.flags.crooks_vs_theory)?;
    Ok(d)
}

/// Process tomography of both quench directions under rf inhomogeneity.
#[pyfunction]
#[pyo3(signature = (protocol, rf_sigma = 0.0, seed = 0))]
fn process_tomography<'py>(py: Python<'py>, protocol: &PyProtocol, rf_sigma: f64, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let p = protocol.0;
    let r = py.detach(|| qwork_core::qpt::analyze(&p, rf_sigma, seed)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("microreversibility_deviation", r.microreversibility_deviation)?;
    for rep in [&r.forward, &r.backward] {
        let m = PyDict::new(py);
        m.set_item("worst_case_distance", rep.metrics.worst_case_distance)?;
        m.set_item("unitality_deviation", rep.metrics.unitality_deviation)?;
        m.set_item("imag_norm", rep.metrics.imag_norm)?;
        m.set_item("xi_real", rep.xi.real_part())?;
        m.set_item("xi_imag", rep.xi.imag_part())?;
        m.set_item("p0", rep.table.p0)?;
        m.set_item("pcond", rep.table.pcond)?;
        d.set_item(rep.direction.label(), m)?;
    }
    Ok(d)
}

#[pymodule]
fn qwork(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProtocol>()?;
    m.add_class::<PyNoise>()?;
    m.add_class::<PySeries>()?;
    m.add_class::<PyInterferometer>()?;
    m.add_class::<PyFit>()?;
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyCrooks>()?;
    m.add_function(wrap_pyfunction!(exact_statistics, m)?)?;
    m.add_function(wrap_pyfunction!(chi_exact, m)?)?;
    m.add_function(wrap_pyfunction!(temperature_from_population, m)?)?;
    m.add_function(wrap_pyfunction!(fit_series, m)?)?;
    m.add_function(wrap_pyfunction!(crooks_fit, m)?)?;
    m.add_function(wrap_pyfunction!(jarzynski_report, m)?)?;
    m.add_function(wrap_pyfunction!(process_tomography, m)?)?;
    Ok(())
}
