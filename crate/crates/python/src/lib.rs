//! Python bindings. Structured results come back as plain dicts and lists.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use spinscope_core::estimation::{self, DistanceMetric, FdStep, FisherOptions};
use spinscope_core::measurement::{self, NoiseConfig};
use spinscope_core::register::{derive_frame, ElectronSpin, NuclearSpin};
use spinscope_core::spectrum::{self, SpectrumOptions, Window};
use spinscope_core::TWO_PI;

fn err(e: spinscope_core::Error) -> PyErr {
    match e {
        spinscope_core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

/// Electron, environment and nuclear spins.
#[pyclass(module = "spinscope", skip_from_py_object)]
#[derive(Clone)]
pub struct Register {
    inner: spinscope_core::Register,
}

#[pymethods]
impl Register {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Register { inner: spinscope_core::Register::from_json_str(text).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Register { inner: spinscope_core::register::load_register(path).map_err(err)? })
    }

    /// Register from (label, A_zz Hz, A_zx Hz) tuples of ¹³C spins and the
    /// electron projections; default environment.
    #[staticmethod]
    #[pyo3(signature = (spins, s0 = 0.0, s1 = -1.0))]
    fn carbon(spins: Vec<(String, f64, f64)>, s0: f64, s1: f64) -> PyResult<Self> {
        let spins = spins.into_iter().map(|(l, a, b)| NuclearSpin::carbon13(l, a, b)).collect();
        let e = ElectronSpin { s0, s1, detuning: 0.0 };
        Ok(Register { inner: spinscope_core::Register::new(e, Default::default(), spins).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    #[getter]
    fn n_spins(&self) -> usize {
        self.inner.spins.len()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.spins.iter().map(|s| s.label.clone()).collect()
    }

    /// Derived per-spin frames (angular units).
    fn frames<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.frames().map_err(err)?)
    }

    /// (f_alpha, f_beta) in Hz per spin.
    fn branch_frequencies(&self) -> PyResult<Vec<(f64, f64)>> {
        Ok(self.inner.frames().map_err(err)?.iter().map(|f| (f.omega_0 / TWO_PI, f.omega_1 / TWO_PI)).collect())
    }

    fn with_electron(&self, s0: f64, s1: f64) -> PyResult<Self> {
        let r = self.inner.with_electron(ElectronSpin { s0, s1, detuning: self.inner.electron.detuning });
        r.validate().map_err(err)?;
        Ok(Register { inner: r })
    }

    fn __repr__(&self) -> String {
        format!("Register(n_spins={}, s0={}, s1={})", self.inner.spins.len(), self.inner.electron.s0, self.inner.electron.s1)
    }
}

/// A one-dimensional sweep: τ for ramsey/hahn/dd, T for the correlation sequences.
#[pyclass(module = "spinscope", skip_from_py_object)]
#[derive(Clone)]
pub struct Protocol {
    inner: spinscope_core::Protocol,
}

#[pymethods]
impl Protocol {
    #[staticmethod]
    fn ramsey() -> Self {
        Protocol { inner: spinscope_core::Protocol::Ramsey }
    }

    #[staticmethod]
    fn hahn() -> Self {
        Protocol { inner: spinscope_core::Protocol::HahnEcho }
    }

    #[staticmethod]
    fn dd(pulses: usize) -> PyResult<Self> {
        let p = spinscope_core::Protocol::Dd { pulses };
        p.validate().map_err(err)?;
        Ok(Protocol { inner: p })
    }

    #[staticmethod]
    fn five_pulse(tau1: f64, tau2: f64) -> Self {
        Protocol { inner: spinscope_core::Protocol::FivePulse { tau1, tau2 } }
    }

    #[staticmethod]
    fn dd_eseem(tau1: f64, tau2: f64, pulses: usize) -> PyResult<Self> {
        let p = spinscope_core::Protocol::DdEseem { tau1, tau2, pulses };
        p.validate().map_err(err)?;
        Ok(Protocol { inner: p })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.kind().name()
    }

    /// Closed-form ⟨σ_z⟩ over `grid`.
    #[pyo3(signature = (register, grid, include_decay = false))]
    fn evaluate(&self, register: &Register, grid: Vec<f64>, include_decay: bool) -> PyResult<Vec<f64>> {
        self.inner.evaluate_grid(&register.inner, &grid, include_decay).map_err(err)
    }

    /// Exact density-matrix result at sweep value `x`.
    fn oracle(&self, register: &Register, x: f64) -> PyResult<f64> {
        let o = spinscope_core::Oracle::new(&register.inner).map_err(err)?;
        o.simulate(&self.inner.descriptor(x).map_err(err)?).map_err(err)
    }

    /// Pulse/delay layout at sweep value `x`.
    fn descriptor<'py>(&self, py: Python<'py>, x: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.descriptor(x).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Protocol({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

/// Probability trace; noisy unless `noiseless`.
#[pyfunction]
#[pyo3(signature = (register, protocol, grid, include_decay = true, noiseless = false, reps = 10_000, seed = 0, photons_bright = 3.0, photons_dark = 0.1))]
#[allow(clippy::too_many_arguments)]
fn synthesize_trace<'py>(
    py: Python<'py>,
    register: &Register,
    protocol: &Protocol,
    grid: Vec<f64>,
    include_decay: bool,
    noiseless: bool,
    reps: u64,
    seed: u64,
    photons_bright: f64,
    photons_dark: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = NoiseConfig { reps, photons_bright, photons_dark, seed };
    let noise = (!noiseless).then_some(&cfg);
    let t = py
        .detach(|| measurement::synthesize_trace(&register.inner, &protocol.inner, &grid, include_decay, noise))
        .map_err(err)?;
    to_py(py, &t)
}

#[pyfunction]
#[pyo3(signature = (p, reps = 10_000, photons_bright = 3.0, photons_dark = 0.1))]
fn readout_std(p: f64, reps: u64, photons_bright: f64, photons_dark: f64) -> f64 {
    measurement::readout_std(p, &NoiseConfig { reps, photons_bright, photons_dark, seed: 0 })
}

/// FIM, CRB, detectability and ellipses as one dict.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (register, protocol, grid, reps = 10_000, include_decay = true, metric = "per_type", fd_step = None))]
fn fisher<'py>(
    py: Python<'py>,
    register: &Register,
    protocol: &Protocol,
    grid: Vec<f64>,
    reps: u64,
    include_decay: bool,
    metric: &str,
    fd_step: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let metric = match metric {
        "per_type" => DistanceMetric::PerType,
        "euclidean" => DistanceMetric::Euclidean,
        m => return Err(PyValueError::new_err(format!("unknown metric '{m}' (per_type, euclidean)"))),
    };
    let opts = FisherOptions { fd_step: fd_step.map_or(FdStep::Auto, FdStep::Fixed), include_decay, ..Default::default() };
    let res = py
        .detach(|| estimation::analyze(&register.inner, &protocol.inner, &grid, &opts, reps, metric))
        .map_err(err)?;
    to_py(py, &res)
}

/// (value, bound) of the S=1 longitudinal resolution for one spin.
#[pyfunction]
#[pyo3(signature = (a_zx_hz, larmor_hz, t2, tau_p = None))]
fn sensitivity_dd_s1(a_zx_hz: f64, larmor_hz: f64, t2: f64, tau_p: Option<f64>) -> PyResult<(f64, f64)> {
    let spin = NuclearSpin::carbon13("x", 0.0, a_zx_hz);
    let b = larmor_hz / spin.gamma_n;
    let frame = derive_frame(&spin, &ElectronSpin::nv_like(), b).map_err(err)?;
    let s = estimation::sensitivity_dd_s1(&frame, t2, tau_p.unwrap_or(t2 / 2.0));
    Ok((s.value, s.bound))
}

/// (value, bound) of the S=1/2 transverse resolution.
#[pyfunction]
#[pyo3(signature = (t2, tau_k = None))]
fn sensitivity_dd_s_half(t2: f64, tau_k: Option<f64>) -> (f64, f64) {
    let s = estimation::sensitivity_dd_s_half(t2, tau_k.unwrap_or(t2));
    (s.value, s.bound)
}

/// (freqs Hz, amplitudes) of a uniformly sampled trace.
#[pyfunction]
#[pyo3(signature = (times, values, window = "hann", zero_pad = 4))]
fn fft_spectrum(times: Vec<f64>, values: Vec<f64>, window: &str, zero_pad: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let window = match window {
        "hann" => Window::Hann,
        "none" => Window::None,
        w => return Err(PyValueError::new_err(format!("unknown window '{w}' (hann, none)"))),
    };
    let s = spectrum::fft_spectrum(&times, &values, &SpectrumOptions { window, zero_pad }).map_err(err)?;
    Ok((s.freqs, s.amps))
}

/// Interpolated peaks above `threshold`·max as (freq Hz, amplitude).
#[pyfunction]
#[pyo3(signature = (freqs, amps, threshold = 0.1))]
fn find_peaks(freqs: Vec<f64>, amps: Vec<f64>, threshold: f64) -> PyResult<Vec<(f64, f64)>> {
    if freqs.len() != amps.len() {
        return Err(PyValueError::new_err("freqs and amps differ in length"));
    }
    let s = spectrum::Spectrum { freqs, amps, window: Window::None, source: String::new() };
    Ok(spectrum::find_peaks(&s, threshold).map_err(err)?.into_iter().map(|p| (p.freq, p.amp)).collect())
}

#[pymodule]
fn spinscope(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Register>()?;
    m.add_class::<Protocol>()?;
    m.add_function(wrap_pyfunction!(synthesize_trace, m)?)?;
    m.add_function(wrap_pyfunction!(readout_std, m)?)?;
    m.add_function(wrap_pyfunction!(fisher, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity_dd_s1, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity_dd_s_half, m)?)?;
    m.add_function(wrap_pyfunction!(fft_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(find_peaks, m)?)?;
    Ok(())
}
