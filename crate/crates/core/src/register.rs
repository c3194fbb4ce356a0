//! Physical model: electron sublevels, environment, nuclear spins, and the
//! per-nucleus frame quantities every signal is built from.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::TWO_PI;

/// |γ| of ¹³C in Hz/T.
pub const GAMMA_13C: f64 = 10.7084e6;
/// |γ| of ²⁹Si in Hz/T.
pub const GAMMA_29SI: f64 = 8.465e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuclearSpin {
    pub label: String,
    #[serde(rename = "a_zz_hz")]
    pub a_zz: f64,
    #[serde(rename = "a_zx_hz")]
    pub a_zx: f64,
    #[serde(rename = "gamma_n_hz_per_t")]
    pub gamma_n: f64,
    pub species: String,
}

impl NuclearSpin {
    pub fn carbon13(label: impl Into<String>, a_zz: f64, a_zx: f64) -> Self {
        NuclearSpin { label: label.into(), a_zz, a_zx, gamma_n: GAMMA_13C, species: "13C".into() }
    }
}

/// The two electron sublevels used as qubit, by their S_z projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectronSpin {
    pub s0: f64,
    pub s1: f64,
    #[serde(rename = "detuning_hz", default)]
    pub detuning: f64,
}

impl ElectronSpin {
    /// S=1, m_s = 0 and -1.
    pub fn nv_like() -> Self {
        ElectronSpin { s0: 0.0, s1: -1.0, detuning: 0.0 }
    }

    /// S=1/2, m_s = -1/2 and +1/2.
    pub fn group_iv() -> Self {
        ElectronSpin { s0: -0.5, s1: 0.5, detuning: 0.0 }
    }

    pub fn ds(&self) -> f64 {
        self.s1 - self.s0
    }
}

fn default_stretch() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    #[serde(rename = "b_field_t")]
    pub b_field: f64,
    #[serde(rename = "t1_s")]
    pub t1: f64,
    #[serde(rename = "t2_s")]
    pub t2: f64,
    #[serde(rename = "t2_star_s")]
    pub t2_star: f64,
    #[serde(default = "default_stretch")]
    pub stretch_m: f64,
    #[serde(default)]
    pub t2_scaling_exponent: f64,
}

impl Default for Environment {
    /// T1 = 1 s, T2 = 100 µs, and a field putting ¹³C at 500 kHz.
    fn default() -> Self {
        Environment {
            b_field: 500e3 / GAMMA_13C,
            t1: 1.0,
            t2: 100e-6,
            t2_star: 10e-6,
            stretch_m: 2.0,
            t2_scaling_exponent: 0.0,
        }
    }
}

impl Environment {
    /// T2 for an N-pulse decoupling train: T2 · N^exponent.
    pub fn t2_for_pulses(&self, n: usize) -> f64 {
        self.t2 * (n as f64).powf(self.t2_scaling_exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Register {
    pub electron: ElectronSpin,
    pub environment: Environment,
    #[serde(default)]
    pub spins: Vec<NuclearSpin>,
}

/// Quantities derived for one nucleus. Angular units throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedSpinFrame {
    pub omega_l: f64,
    pub omega_0: f64,
    pub omega_1: f64,
    pub n0: [f64; 3],
    pub n1: [f64; 3],
    pub axes_dot: f64,
    pub k_mod: f64,
    pub k_depth: f64,
    pub eta: f64,
    pub eta_alpha: f64,
    pub eta_beta: f64,
    /// A_zz in rad/s.
    pub a_zz: f64,
    /// A_zx in rad/s.
    pub a_zx: f64,
    pub s0: f64,
    pub s1: f64,
}

impl DerivedSpinFrame {
    pub fn omega(&self, branch: usize) -> f64 {
        if branch == 0 {
            self.omega_0
        } else {
            self.omega_1
        }
    }
}

/// ω_L = 2π γ_n B.
pub fn larmor_frequency(spin: &NuclearSpin, b_field: f64) -> f64 {
    TWO_PI * spin.gamma_n * b_field
}

pub fn derive_frame(spin: &NuclearSpin, electron: &ElectronSpin, b_field: f64) -> Result<DerivedSpinFrame> {
    let wl = larmor_frequency(spin, b_field);
    let a = TWO_PI * spin.a_zz;
    let b = TWO_PI * spin.a_zx;
    let (s0, s1) = (electron.s0, electron.s1);

    let z0 = wl + s0 * a;
    let x0 = s0 * b;
    let z1 = wl + s1 * a;
    let x1 = s1 * b;
    let w0 = x0.hypot(z0);
    let w1 = x1.hypot(z1);
    for (branch, w) in [(0, w0), (1, w1)] {
        if !(w > 0.0) {
            return Err(Error::DegenerateFrame { label: spin.label.clone(), branch });
        }
    }
    let n0 = [x0 / w0, 0.0, z0 / w0];
    let n1 = [x1 / w1, 0.0, z1 / w1];
    let axes_dot = (n0[0] * n1[0] + n0[2] * n1[2]).clamp(-1.0, 1.0);
    let k_mod = (s1 - s0) * wl * b / (w0 * w1);
    let eta_alpha = x0.atan2(z0);
    let eta_beta = x1.atan2(z1);

    Ok(DerivedSpinFrame {
        omega_l: wl,
        omega_0: w0,
        omega_1: w1,
        n0,
        n1,
        axes_dot,
        k_mod,
        k_depth: k_mod * k_mod,
        eta: 0.5 * (eta_alpha - eta_beta),
        eta_alpha,
        eta_beta,
        a_zz: a,
        a_zx: b,
        s0,
        s1,
    })
}

fn check_finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(field, "must be finite"))
    }
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    check_finite(field, v)?;
    if v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be > 0, got {v}")))
    }
}

impl Register {
    pub fn new(electron: ElectronSpin, environment: Environment, spins: Vec<NuclearSpin>) -> Result<Self> {
        let r = Register { electron, environment, spins };
        r.validate()?;
        Ok(r)
    }

    pub fn bare(electron: ElectronSpin) -> Self {
        Register { electron, environment: Environment::default(), spins: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.electron;
        check_finite("electron.s0", e.s0)?;
        check_finite("electron.s1", e.s1)?;
        check_finite("electron.detuning_hz", e.detuning)?;
        if e.s0 == e.s1 {
            return Err(Error::validation("electron.s1", "must differ from s0"));
        }

        let env = &self.environment;
        check_finite("environment.b_field_t", env.b_field)?;
        if env.b_field < 0.0 {
            return Err(Error::validation("environment.b_field_t", "must be >= 0"));
        }
        check_positive("environment.t1_s", env.t1)?;
        check_positive("environment.t2_s", env.t2)?;
        check_positive("environment.t2_star_s", env.t2_star)?;
        check_positive("environment.stretch_m", env.stretch_m)?;
        check_finite("environment.t2_scaling_exponent", env.t2_scaling_exponent)?;

        let mut seen = HashSet::new();
        for (i, s) in self.spins.iter().enumerate() {
            if s.label.is_empty() {
                return Err(Error::validation(format!("spins[{i}].label"), "must not be empty"));
            }
            if !seen.insert(s.label.as_str()) {
                return Err(Error::validation(format!("spins[{i}].label"), format!("duplicate label '{}'", s.label)));
            }
            check_finite(&format!("spins[{i}].a_zz_hz"), s.a_zz)?;
            check_finite(&format!("spins[{i}].a_zx_hz"), s.a_zx)?;
            if s.a_zx < 0.0 {
                return Err(Error::validation(format!("spins[{i}].a_zx_hz"), "must be >= 0"));
            }
            check_positive(&format!("spins[{i}].gamma_n_hz_per_t"), s.gamma_n)?;
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let r: Register = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("register serializes")
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("register serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn frames(&self) -> Result<Vec<DerivedSpinFrame>> {
        self.spins
            .iter()
            .map(|s| derive_frame(s, &self.electron, self.environment.b_field))
            .collect()
    }

    pub fn with_electron(&self, electron: ElectronSpin) -> Self {
        Register { electron, ..self.clone() }
    }

    pub fn with_spins(&self, spins: Vec<NuclearSpin>) -> Self {
        Register { spins, ..self.clone() }
    }
}

pub fn load_register(path: impl AsRef<Path>) -> Result<Register> {
    let text = std::fs::read_to_string(path.as_ref())?;
    Register::from_json_str(&text)
}
