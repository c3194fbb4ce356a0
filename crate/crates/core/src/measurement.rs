//! Photon-counting readout model and probability traces.
//!
//! Each shot projects the electron to bright (probability p) or dark, then
//! emits a Poisson number of photons. Per sweep point the generator is
//! ChaCha20 seeded with `seed` and switched to stream `point index`, so
//! results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::Protocol;
use crate::register::Register;

pub const PRNG_NAME: &str = "ChaCha20 (rand_chacha), stream = point index";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub reps: u64,
    pub photons_bright: f64,
    pub photons_dark: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { reps: 10_000, photons_bright: 3.0, photons_dark: 0.1, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::validation("reps", "must be >= 1"));
        }
        if !(self.photons_dark >= 0.0 && self.photons_bright > self.photons_dark && self.photons_bright.is_finite()) {
            return Err(Error::validation("photons_bright", "need photons_bright > photons_dark >= 0"));
        }
        Ok(())
    }
}

/// p = (1 + ⟨σ_z⟩)/2, with ⟨σ_z⟩ = 1 the bright state.
pub fn probability_from_signal(sigma_z: f64) -> Result<f64> {
    if !(sigma_z.abs() <= 1.0 + 1e-9) {
        return Err(Error::OutOfRange { what: "sigma_z".into(), value: sigma_z, lo: -1.0, hi: 1.0 });
    }
    Ok((1.0 + sigma_z.clamp(-1.0, 1.0)) / 2.0)
}

fn poisson(rng: &mut ChaCha20Rng, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng)
}

/// One noisy estimate p̂ from `reps` shots, drawn from stream `stream`.
/// Photon totals are drawn per group: a sum of m Poisson(λ) is Poisson(mλ).
pub fn sample_point(p: f64, cfg: &NoiseConfig, stream: u64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let n_bright = Binomial::new(cfg.reps, p).expect("valid binomial").sample(&mut rng);
    let n_dark = cfg.reps - n_bright;
    let photons = poisson(&mut rng, cfg.photons_bright * n_bright as f64) + poisson(&mut rng, cfg.photons_dark * n_dark as f64);
    let mean = photons / cfg.reps as f64;
    ((mean - cfg.photons_dark) / (cfg.photons_bright - cfg.photons_dark)).clamp(0.0, 1.0)
}

/// Delta-method standard deviation of p̂.
pub fn readout_std(p: f64, cfg: &NoiseConfig) -> f64 {
    let (b, d) = (cfg.photons_bright, cfg.photons_dark);
    let var_shot = p * b + (1.0 - p) * d + p * (1.0 - p) * (b - d).powi(2);
    (var_shot / cfg.reps as f64).sqrt() / (b - d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub register_digest: String,
    pub protocol: Protocol,
    pub include_decay: bool,
    pub noise: Option<NoiseConfig>,
    pub prng: Option<String>,
    /// reps × Σ shot durations; zero when noiseless.
    pub acquisition_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub sweep_name: String,
    pub sweep_values: Vec<f64>,
    pub values: Vec<f64>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }
}

pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation("grid", "must not be empty"));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("grid", "values must be finite"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("grid", "must be strictly increasing"));
    }
    Ok(())
}

/// Evaluates `protocol` on `grid`, maps to p and, with `noise`, samples p̂.
pub fn synthesize_trace(
    register: &Register,
    protocol: &Protocol,
    grid: &[f64],
    include_decay: bool,
    noise: Option<&NoiseConfig>,
) -> Result<Trace> {
    check_grid(grid)?;
    protocol.validate()?;
    if let Some(cfg) = noise {
        cfg.validate()?;
    }
    let signal = protocol.evaluate_grid(register, grid, include_decay)?;
    let probs: Vec<f64> = signal.iter().map(|&s| probability_from_signal(s)).collect::<Result<_>>()?;
    let values = match noise {
        None => probs,
        Some(cfg) => probs.par_iter().enumerate().map(|(i, &p)| sample_point(p, cfg, i as u64)).collect(),
    };
    let acquisition_time_s = match noise {
        None => 0.0,
        Some(cfg) => cfg.reps as f64 * grid.iter().map(|&x| protocol.duration(x)).sum::<f64>(),
    };
    Ok(Trace {
        sweep_name: protocol.sweep_name().into(),
        sweep_values: grid.to_vec(),
        values,
        meta: TraceMeta {
            register_digest: register.digest(),
            protocol: *protocol,
            include_decay,
            noise: noise.copied(),
            prng: noise.map(|_| PRNG_NAME.to_string()),
            acquisition_time_s,
        },
    })
}
