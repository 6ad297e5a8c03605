//! Python bindings for the `cqed` simulator. Frequencies are MHz (ω/2π),
//! input powers pW and transmitted powers fW.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cqed::analysis::{self, FitOptions, WindowSpec};
use cqed::cli::MonteCarloSummary;
use cqed::config::{preset_source, RunConfig};
use cqed::hilbert;
use cqed::semiclassical::{self, BranchPolicy};
use cqed::spectrum::{diagonal_scan, vertical_scan};
use cqed::steadystate;
use cqed::units::{mhz, to_mhz};
use cqed::{Error, Model, PowerCalibration};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::SolverFailure(_) | Error::RootFinding { .. } | Error::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_model(tag: &str) -> PyResult<Model> {
    tag.parse().map_err(to_py)
}

fn parse_branch(tag: &str) -> PyResult<BranchPolicy> {
    match tag {
        "lower" => Ok(BranchPolicy::Lower),
        "upper" => Ok(BranchPolicy::Upper),
        "follow" => Ok(BranchPolicy::Follow),
        other => Err(PyValueError::new_err(format!("unknown branch '{other}'"))),
    }
}

/// Atom–cavity parameters in MHz.
#[pyclass(name = "SystemParams", module = "pycqed")]
struct PySystemParams {
    inner: cqed::SystemParams,
}

#[pymethods]
impl PySystemParams {
    #[new]
    #[pyo3(signature = (g_mhz, kappa_mhz = 1.25, gamma_mhz = 3.0, delta_a_mhz = 0.0, delta_c_mhz = 0.0, eta_mhz = 0.0, n_fock = 6))]
    fn new(g_mhz: f64, kappa_mhz: f64, gamma_mhz: f64, delta_a_mhz: f64, delta_c_mhz: f64, eta_mhz: f64, n_fock: usize) -> PyResult<Self> {
        let inner = cqed::SystemParams {
            g: mhz(g_mhz),
            kappa: mhz(kappa_mhz),
            gamma: mhz(gamma_mhz),
            delta_a: mhz(delta_a_mhz),
            delta_c: mhz(delta_c_mhz),
            eta: mhz(eta_mhz),
            n_fock,
        };
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn g_mhz(&self) -> f64 {
        to_mhz(self.inner.g)
    }
    #[getter]
    fn kappa_mhz(&self) -> f64 {
        to_mhz(self.inner.kappa)
    }
    #[getter]
    fn gamma_mhz(&self) -> f64 {
        to_mhz(self.inner.gamma)
    }
    #[getter]
    fn delta_a_mhz(&self) -> f64 {
        to_mhz(self.inner.delta_a)
    }
    #[getter]
    fn delta_c_mhz(&self) -> f64 {
        to_mhz(self.inner.delta_c)
    }
    #[getter]
    fn eta_mhz(&self) -> f64 {
        to_mhz(self.inner.eta)
    }
    #[getter]
    fn n_fock(&self) -> usize {
        self.inner.n_fock
    }

    /// Copy with the drive set from an input power in pW.
    fn with_power(&self, p_in_pw: f64) -> PyResult<Self> {
        let eta = steadystate::drive_from_power(p_in_pw, self.inner.kappa, &PowerCalibration::default()).map_err(to_py)?;
        Ok(Self { inner: self.inner.with_eta(eta) })
    }

    fn with_detunings(&self, delta_a_mhz: f64, delta_c_mhz: f64) -> Self {
        Self { inner: self.inner.with_detunings(mhz(delta_a_mhz), mhz(delta_c_mhz)) }
    }

    fn __repr__(&self) -> String {
        format!(
            "SystemParams(g_mhz={}, kappa_mhz={}, gamma_mhz={}, delta_a_mhz={}, delta_c_mhz={}, eta_mhz={}, n_fock={})",
            self.g_mhz(),
            self.kappa_mhz(),
            self.gamma_mhz(),
            self.delta_a_mhz(),
            self.delta_c_mhz(),
            self.eta_mhz(),
            self.n_fock()
        )
    }
}

/// Transmission spectrum of one input power.
#[pyclass(name = "Spectrum", module = "pycqed")]
struct PySpectrum {
    inner: cqed::Spectrum,
}

#[pymethods]
impl PySpectrum {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self { inner: cqed::Spectrum::read_csv(text.as_bytes()).map_err(to_py)? })
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn p_in_pw(&self) -> f64 {
        self.inner.p_in
    }
    #[getter]
    fn model(&self) -> &'static str {
        self.inner.model.tag()
    }
    #[getter]
    fn delta_c_mhz(&self) -> Vec<f64> {
        self.inner.delta_c_mhz()
    }
    #[getter]
    fn delta_a_mhz(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| to_mhz(p.delta_a)).collect()
    }
    #[getter]
    fn power_out_fw(&self) -> Vec<f64> {
        self.inner.powers()
    }
    #[getter]
    fn stderr_fw(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.stderr).collect()
    }
    #[getter]
    fn n_photon(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.n_photon).collect()
    }
    #[getter]
    fn p_excited(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.p_excited).collect()
    }
    #[getter]
    fn gaps(&self) -> usize {
        self.inner.gaps.len()
    }

    fn __len__(&self) -> usize {
        self.inner.points.len()
    }

    fn __repr__(&self) -> String {
        format!("Spectrum(model='{}', p_in_pw={}, points={})", self.inner.model, self.inner.p_in, self.inner.points.len())
    }
}

/// Steady-state observables of the full quantum model.
#[pyfunction]
fn steady_state<'py>(py: Python<'py>, params: PyRef<'py, PySystemParams>) -> PyResult<Bound<'py, PyDict>> {
    let p = params.inner;
    let rho = py.detach(|| steadystate::steady_state(&p)).map_err(to_py)?;
    let obs = rho.observables();
    let d = PyDict::new(py);
    d.set_item("n_photon", obs.n_photon)?;
    d.set_item("p_excited", obs.p_excited)?;
    d.set_item("coherence", (obs.coherence.re, obs.coherence.im))?;
    d.set_item("trace", rho.trace().re)?;
    d.set_item("min_eigenvalue", rho.min_eigenvalue())?;
    Ok(d)
}

/// Transmitted power in fW at the drive and detunings of `params`.
#[pyfunction]
fn transmission(py: Python<'_>, params: PyRef<'_, PySystemParams>) -> PyResult<f64> {
    let p = params.inner;
    py.detach(|| steadystate::transmission(&p, &PowerCalibration::default())).map_err(to_py)
}

/// Weak-drive closed form: mean photon number and excitation.
#[pyfunction]
fn single_excitation(params: PyRef<'_, PySystemParams>) -> (f64, f64) {
    let obs = steadystate::single_excitation_observables(&params.inner);
    (obs.n_photon, obs.p_excited)
}

/// Maxwell–Bloch fixed points as `(n_photon, p_excited, stable)`.
#[pyfunction]
fn maxwell_bloch_states(params: PyRef<'_, PySystemParams>) -> PyResult<Vec<(f64, f64, bool)>> {
    let states = semiclassical::mb_steady_states(&params.inner).map_err(to_py)?;
    Ok(states.iter().map(|s| (s.photon_number(), s.excitation(), s.stable)).collect())
}

/// Lab-frame dressed pair of the (n+1)-excitation manifold.
#[pyfunction]
fn dressed_frequencies(omega_a_mhz: f64, omega_c_mhz: f64, g_mhz: f64, n: usize) -> (f64, f64) {
    let (lo, hi) = hilbert::dressed_frequencies(mhz(omega_a_mhz), mhz(omega_c_mhz), mhz(g_mhz), n);
    (to_mhz(lo), to_mhz(hi))
}

/// Cavity detunings of the (n+1)-photon resonances at atom detuning Δa.
#[pyfunction]
#[pyo3(signature = (g_mhz, n, delta_a_mhz = 0.0))]
fn multiphoton_resonances(g_mhz: f64, n: usize, delta_a_mhz: f64) -> PyResult<(f64, f64)> {
    let (lo, hi) = hilbert::multiphoton_resonance_at_atom_detuning(mhz(g_mhz), mhz(delta_a_mhz), n).map_err(to_py)?;
    Ok((to_mhz(lo), to_mhz(hi)))
}

/// Spectrum along a vertical (fixed Δa) or diagonal (fixed Δc - Δa) scan.
#[pyfunction]
#[pyo3(signature = (params, p_in_pw, lo_mhz, hi_mhz, step_mhz, model = "quantum", delta_a_mhz = None, atom_cavity_mhz = None, branch = "lower"))]
#[allow(clippy::too_many_arguments)]
fn spectrum(
    py: Python<'_>,
    params: PyRef<'_, PySystemParams>,
    p_in_pw: f64,
    lo_mhz: f64,
    hi_mhz: f64,
    step_mhz: f64,
    model: &str,
    delta_a_mhz: Option<f64>,
    atom_cavity_mhz: Option<f64>,
    branch: &str,
) -> PyResult<PySpectrum> {
    let scan = match (delta_a_mhz, atom_cavity_mhz) {
        (Some(da), None) => vertical_scan(da, lo_mhz, hi_mhz, step_mhz),
        (None, Some(ac)) => diagonal_scan(ac, lo_mhz, hi_mhz, step_mhz),
        _ => return Err(PyValueError::new_err("give exactly one of delta_a_mhz or atom_cavity_mhz")),
    }
    .map_err(to_py)?;
    let model = parse_model(model)?;
    let branch = parse_branch(branch)?;
    let base = params.inner;
    let cal = PowerCalibration::default();
    let inner = py
        .detach(|| match model {
            Model::Quantum => steadystate::spectrum_quantum(&base, &scan, p_in_pw, &cal),
            Model::SingleExcitation => steadystate::spectrum_single_excitation(&base, &scan, p_in_pw, &cal),
            Model::MaxwellBloch => semiclassical::spectrum_mb(&base, &scan, p_in_pw, &cal, branch),
            Model::MonteCarlo => Err(Error::InvalidParameter("use run_montecarlo for Monte Carlo spectra".into())),
        })
        .map_err(to_py)?;
    Ok(PySpectrum { inner })
}

/// Mean transmitted power over `[lo, hi]` MHz as `(mean, stderr, count)`.
#[pyfunction]
fn window_average(spectrum: PyRef<'_, PySpectrum>, lo_mhz: f64, hi_mhz: f64) -> PyResult<(f64, f64, usize)> {
    let window = WindowSpec::new(lo_mhz, hi_mhz).map_err(to_py)?;
    let w = analysis::window_average(&spectrum.inner, &window).map_err(to_py)?;
    Ok((w.mean, w.stderr, w.count))
}

/// On-minus-off window excess per power and the log–log slope.
#[pyfunction]
fn nonlinear_response<'py>(
    py: Python<'py>,
    spectra: Vec<PyRef<'py, PySpectrum>>,
    on: (f64, f64),
    off: (f64, f64),
) -> PyResult<Bound<'py, PyDict>> {
    let owned: Vec<cqed::Spectrum> = spectra.iter().map(|s| s.inner.clone()).collect();
    let on = WindowSpec::new(on.0, on.1).map_err(to_py)?;
    let off = WindowSpec::new(off.0, off.1).map_err(to_py)?;
    let r = analysis::nonlinear_response(&owned, &on, &off).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("p_in_pw", r.points.iter().map(|p| p.p_in).collect::<Vec<_>>())?;
    d.set_item("delta_fw", r.points.iter().map(|p| p.delta_power).collect::<Vec<_>>())?;
    d.set_item("stderr_fw", r.points.iter().map(|p| p.stderr).collect::<Vec<_>>())?;
    d.set_item("slope", r.slope)?;
    d.set_item("intercept", r.intercept)?;
    d.set_item("used", r.used)?;
    Ok(d)
}

/// Local maxima as `(delta_c_mhz, height, prominence)`.
#[pyfunction]
#[pyo3(signature = (spectrum, min_prominence = 0.0))]
fn find_peaks(spectrum: PyRef<'_, PySpectrum>, min_prominence: f64) -> Vec<(f64, f64, f64)> {
    analysis::find_peaks(&spectrum.inner, min_prominence).into_iter().map(|p| (p.delta_c_mhz, p.height, p.prominence)).collect()
}

/// Least-squares fit of g and Δa to measured spectra.
#[pyfunction]
#[pyo3(signature = (spectra, params, model = "quantum", fixed_delta_a_mhz = None))]
fn fit_g_delta<'py>(
    py: Python<'py>,
    spectra: Vec<PyRef<'py, PySpectrum>>,
    params: PyRef<'py, PySystemParams>,
    model: &str,
    fixed_delta_a_mhz: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let owned: Vec<cqed::Spectrum> = spectra.iter().map(|s| s.inner.clone()).collect();
    let model = parse_model(model)?;
    let opts = FitOptions { fixed_delta_a: fixed_delta_a_mhz, ..FitOptions::default() };
    let base = params.inner;
    let r = py
        .detach(|| analysis::fit_g_delta(&owned, &base, &PowerCalibration::default(), model, &opts))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("g_mhz", r.g_mhz)?;
    d.set_item("delta_a_mhz", r.delta_a_mhz)?;
    d.set_item("offsets_fw", r.offsets_fw)?;
    d.set_item("residual", r.residual)?;
    d.set_item("converged", r.converged)?;
    d.set_item("evaluations", r.evaluations)?;
    d.set_item("refinement_trace", r.refinement_trace)?;
    Ok(d)
}

/// Parse a preset plus TOML text plus `key=value` overrides into TOML text.
#[pyfunction]
#[pyo3(signature = (preset = None, toml = None, overrides = Vec::new()))]
fn config(preset: Option<&str>, toml: Option<&str>, overrides: Vec<String>) -> PyResult<String> {
    load_config(preset, toml, &overrides)?.to_toml().map_err(to_py)
}

fn load_config(preset: Option<&str>, toml: Option<&str>, overrides: &[String]) -> PyResult<RunConfig> {
    let mut sources = Vec::new();
    if let Some(p) = preset {
        sources.push(preset_source(p).map_err(to_py)?);
    }
    if let Some(t) = toml {
        sources.push(t);
    }
    let cfg = RunConfig::layered(&sources, overrides).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Trapping-event Monte Carlo. Returns the summary and the post-selected spectrum.
#[pyfunction]
#[pyo3(signature = (preset = Some("montecarlo"), toml = None, overrides = Vec::new()))]
fn run_montecarlo<'py>(
    py: Python<'py>,
    preset: Option<&str>,
    toml: Option<&str>,
    overrides: Vec<String>,
) -> PyResult<(Bound<'py, PyDict>, PySpectrum)> {
    let cfg = load_config(preset, toml, &overrides)?;
    let run = py.detach(|| cqed::cli::cmd_montecarlo(&cfg)).map_err(to_py)?;
    let s = MonteCarloSummary::of(&run);
    let d = PyDict::new(py);
    d.set_item("n_events", s.n_events)?;
    d.set_item("rejected_events", s.rejected_events)?;
    d.set_item("accepted_probes", s.accepted_probes)?;
    d.set_item("total_probes", s.total_probes)?;
    d.set_item("survival_fraction", s.survival_fraction)?;
    d.set_item("threshold_counts", s.threshold_counts)?;
    d.set_item("accepted_mean_g_mhz", s.accepted_mean_g_mhz)?;
    d.set_item("accepted_mean_stark_mhz", s.accepted_mean_stark_mhz)?;
    Ok((d, PySpectrum { inner: run.spectrum }))
}

#[pymodule]
fn pycqed(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystemParams>()?;
    m.add_class::<PySpectrum>()?;
    m.add_function(wrap_pyfunction!(steady_state, m)?)?;
    m.add_function(wrap_pyfunction!(transmission, m)?)?;
    m.add_function(wrap_pyfunction!(single_excitation, m)?)?;
    m.add_function(wrap_pyfunction!(maxwell_bloch_states, m)?)?;
    m.add_function(wrap_pyfunction!(dressed_frequencies, m)?)?;
    m.add_function(wrap_pyfunction!(multiphoton_resonances, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(window_average, m)?)?;
    m.add_function(wrap_pyfunction!(nonlinear_response, m)?)?;
    m.add_function(wrap_pyfunction!(find_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(fit_g_delta, m)?)?;
    m.add_function(wrap_pyfunction!(config, m)?)?;
    m.add_function(wrap_pyfunction!(run_montecarlo, m)?)?;
    Ok(())
}
