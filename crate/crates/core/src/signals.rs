//! Closed-form sequence signals.
//!
//! Every function returns ⟨σ_z⟩ of the electron. Products run over nuclei;
//! the optional decay factors multiply the whole expression. The oracle does
//! not model relaxation, so comparisons against it use `include_decay = false`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{make_descriptor, Oracle, ProtocolKind, SequenceParams};
use crate::register::{larmor_frequency, DerivedSpinFrame, ElectronSpin, Register};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalOptions {
    pub include_decay: bool,
    /// π-pulse count for decoupling sequences.
    pub pulses_n: usize,
    /// Resonance order.
    pub order_p: usize,
}

impl Default for SignalOptions {
    fn default() -> Self {
        SignalOptions { include_decay: false, pulses_n: 2, order_p: 0 }
    }
}

impl SignalOptions {
    pub fn with_pulses(pulses_n: usize) -> Self {
        SignalOptions { pulses_n, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EseemTiming {
    pub tau1: f64,
    pub tau2: f64,
    pub t_free: f64,
}

impl EseemTiming {
    pub fn new(tau1: f64, tau2: f64, t_free: f64) -> Self {
        EseemTiming { tau1, tau2, t_free }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("tau1", self.tau1), ("tau2", self.tau2), ("t_free", self.t_free)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::validation("tau", format!("must be finite and >= 0, got {tau}")))
    }
}

fn check_even(n: usize) -> Result<()> {
    if n >= 2 && n.is_multiple_of(2) {
        Ok(())
    } else {
        Err(Error::OddPulseCount(n))
    }
}

pub fn ramsey(register: &Register, tau: f64, opts: &SignalOptions) -> Result<f64> {
    check_tau(tau)?;
    let e = &register.electron;
    let delta = crate::TWO_PI * e.detuning;
    let mut v = (e.ds() * delta * tau).cos();
    for f in register.frames()? {
        let (a, b) = (f.omega_0 * tau / 2.0, f.omega_1 * tau / 2.0);
        v *= a.cos() * b.cos() + f.axes_dot * a.sin() * b.sin();
    }
    if opts.include_decay {
        let env = &register.environment;
        v *= (-(tau / env.t2_star).powf(env.stretch_m)).exp();
    }
    Ok(v)
}

/// sin²(ω₀τ/2) sin²(ω₁τ/2)
fn blind_product(f: &DerivedSpinFrame, tau: f64) -> f64 {
    ((f.omega_0 * tau / 2.0).sin() * (f.omega_1 * tau / 2.0).sin()).powi(2)
}

pub fn hahn_echo(register: &Register, tau: f64, opts: &SignalOptions) -> Result<f64> {
    check_tau(tau)?;
    let mut v = 1.0;
    for f in register.frames()? {
        v *= 1.0 - 2.0 * f.k_mod * f.k_mod * blind_product(&f, tau);
    }
    if opts.include_decay {
        v *= (-2.0 * tau / register.environment.t2).exp();
    }
    Ok(v)
}

fn effective_cos(f: &DerivedSpinFrame, tau: f64) -> f64 {
    let (a, b) = (f.omega_0 * tau, f.omega_1 * tau);
    a.cos() * b.cos() - f.axes_dot * a.sin() * b.sin()
}

fn clamp_unit(c: f64) -> Result<f64> {
    if c.abs() - 1.0 > 1e-9 {
        return Err(Error::Domain(format!("arccos argument {c} outside [-1, 1]")));
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// Rotation half-angle θ of one CPMG cell for this nucleus, in [0, π].
pub fn dd_effective_angle(frame: &DerivedSpinFrame, tau: f64) -> Result<f64> {
    Ok(clamp_unit(effective_cos(frame, tau))?.acos())
}

/// sin²(Nθ/2)/cos²(θ/2) from c = cos θ, even N. Near θ = π the ratio is
/// evaluated as U_{N-1}(sin(θ/2))², which tends to N².
pub fn dd_filter(cos_theta: f64, n: usize) -> f64 {
    let c = cos_theta.clamp(-1.0, 1.0);
    let cos_half = ((1.0 + c) / 2.0).sqrt();
    if cos_half >= 1e-6 {
        let theta = c.acos();
        let s = (n as f64 * theta / 2.0).sin();
        return s * s / (cos_half * cos_half);
    }
    let t = ((1.0 - c) / 2.0).sqrt();
    // Chebyshev U_{N-1}(t) by recurrence.
    let (mut u_prev, mut u) = (1.0, 2.0 * t);
    if n == 1 {
        return 1.0;
    }
    for _ in 2..n {
        let next = 2.0 * t * u - u_prev;
        u_prev = u;
        u = next;
    }
    u * u
}

fn dd_dip(f: &DerivedSpinFrame, tau: f64, n: usize) -> Result<f64> {
    let c = clamp_unit(effective_cos(f, tau))?;
    Ok(f.k_mod * f.k_mod * blind_product(f, tau) * dd_filter(c, n))
}

fn dd_decay(register: &Register, tau: f64, n: usize) -> f64 {
    let env = &register.environment;
    (-2.0 * n as f64 * tau / env.t2_for_pulses(n)).exp()
}

pub fn dd(register: &Register, tau: f64, opts: &SignalOptions) -> Result<f64> {
    check_tau(tau)?;
    check_even(opts.pulses_n)?;
    let mut v = 1.0;
    for f in register.frames()? {
        v *= 1.0 - 2.0 * dd_dip(&f, tau, opts.pulses_n)?;
    }
    if opts.include_decay {
        v *= dd_decay(register, tau, opts.pulses_n);
    }
    Ok(v)
}

/// First-order (summation) approximation of `dd`.
pub fn dd_summation(register: &Register, tau: f64, opts: &SignalOptions) -> Result<f64> {
    check_tau(tau)?;
    check_even(opts.pulses_n)?;
    let mut sum = 0.0;
    for f in register.frames()? {
        sum += dd_dip(&f, tau, opts.pulses_n)?;
    }
    let mut v = 1.0 - 2.0 * sum;
    if opts.include_decay {
        v *= dd_decay(register, tau, opts.pulses_n);
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonanceTime {
    /// (2p+1)π/(ω₀+ω₁).
    pub tau: f64,
    /// High-field expansion of the same quantity, for diagnostics.
    pub tau_expanded: f64,
}

pub fn resonance_times(frame: &DerivedSpinFrame, electron: &ElectronSpin, order_p: usize) -> ResonanceTime {
    let odd = (2 * order_p + 1) as f64 * PI;
    let (s0, s1) = (electron.s0, electron.s1);
    let wl = frame.omega_l;
    let r_zz = frame.a_zz / wl;
    let r_zx = frame.a_zx / wl;
    let denom = 2.0 * wl * (1.0 + (s0 + s1) / 2.0 * r_zz + (s0 * s0 + s1 * s1) / 4.0 * r_zx * r_zx);
    ResonanceTime { tau: odd / (frame.omega_0 + frame.omega_1), tau_expanded: odd / denom }
}

/// Lorentzian half-width w (seconds) of a decoupling dip.
pub fn lorentzian_width(frame: &DerivedSpinFrame, electron: &ElectronSpin) -> f64 {
    (electron.ds() * frame.a_zx / (2.0 * frame.omega_l * frame.omega_l)).abs()
}

/// Lorentzian model of a single dip at offset δτ from its resonance time.
pub fn dd_lorentzian(frame: &DerivedSpinFrame, electron: &ElectronSpin, pulses_n: usize, delta_tau: f64) -> f64 {
    let wl = frame.omega_l;
    let ratio = electron.ds() * frame.a_zx / wl;
    if 10.0 * (frame.a_zz.abs().max(frame.a_zx)) > wl {
        log::warn!("Lorentzian dip model used outside the high-field regime");
    }
    let depth = 2.0 * (pulses_n as f64 / 2.0 * ratio).sin().powi(2);
    let w = lorentzian_width(frame, electron);
    if w == 0.0 {
        return 1.0;
    }
    1.0 - depth * w * w / (delta_tau * delta_tau + w * w)
}

/// Single-pulse-pair echo envelope E_2p(t) (t is the echo half-time).
pub fn two_pulse_envelope(frame: &DerivedSpinFrame, t: f64) -> f64 {
    let k = frame.k_depth;
    let (wa, wb) = (frame.omega_0, frame.omega_1);
    (1.0 - k / 2.0) + k / 2.0 * ((wa * t).cos() + (wb * t).cos() - 0.5 * ((wa - wb) * t).cos() - 0.5 * ((wa + wb) * t).cos())
}

fn e2p(k: f64, wa: f64, wb: f64, t: f64) -> f64 {
    (1.0 - k / 2.0) + k / 2.0 * ((wa * t).cos() + (wb * t).cos() - 0.5 * ((wa - wb) * t).cos() - 0.5 * ((wa + wb) * t).cos())
}

/// sin(ω_aτ₁/2)sin(ω_aτ₂/2)sin(ω_bτ₁/2)sin(ω_bτ₂/2)
fn blind_term(wa: f64, wb: f64, t: &EseemTiming) -> f64 {
    (wa * t.tau1 / 2.0).sin() * (wa * t.tau2 / 2.0).sin() * (wb * t.tau1 / 2.0).sin() * (wb * t.tau2 / 2.0).sin()
}

/// E_{a+}, E_{a-} for the branch with frequency `wa`; the other branch has
/// `wb`. The β pair is obtained by swapping the frequencies and negating η.
fn pathway_pair(k: f64, eta: f64, wa: f64, wb: f64, t: &EseemTiming) -> (f64, f64) {
    let b = blind_term(wa, wb, t);
    let c = (wa * t.tau1 / 2.0).cos() * (wa * t.tau2 / 2.0).cos() * (wb * t.tau1 / 2.0).sin() * (wb * t.tau2 / 2.0).sin();
    let pa_p = wa * (t.tau1 + t.tau2) / 2.0;
    let pb_p = wb * (t.tau1 + t.tau2) / 2.0;
    let pb_m = wb * (t.tau1 - t.tau2) / 2.0;
    let wt = wa * t.t_free;
    let x = -4.0 * k * k * c
        + 4.0 * k * eta.cos().powi(4) * (wt + pa_p + pb_p).cos()
        + 2.0 * k * k * pb_m.cos() * (wt + pa_p).cos()
        + 4.0 * k * eta.sin().powi(4) * (wt + pa_p - pb_p).cos();
    let base = e2p(k, wa, wb, t.tau1) * e2p(k, wa, wb, t.tau2);
    (base - b * x, base + b * x)
}

/// Per-nucleus factors [E_{α+}, E_{α-}, E_{β+}, E_{β-}].
pub fn pathway_factors(frame: &DerivedSpinFrame, timing: &EseemTiming) -> [f64; 4] {
    let k = frame.k_depth;
    let (ap, am) = pathway_pair(k, frame.eta, frame.omega_0, frame.omega_1, timing);
    let (bp, bm) = pathway_pair(k, -frame.eta, frame.omega_1, frame.omega_0, timing);
    [ap, am, bp, bm]
}

/// Exact α and β components, ∏E₊ - ∏E₋ for each branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EseemComponents {
    pub alpha: f64,
    pub beta: f64,
}

pub fn eseem_components(register: &Register, timing: &EseemTiming) -> Result<EseemComponents> {
    timing.validate()?;
    let mut prod = [1.0; 4];
    for f in register.frames()? {
        let e = pathway_factors(&f, timing);
        for i in 0..4 {
            prod[i] *= e[i];
        }
    }
    Ok(EseemComponents { alpha: prod[0] - prod[1], beta: prod[2] - prod[3] })
}

pub fn five_pulse_eseem(register: &Register, timing: &EseemTiming, opts: &SignalOptions) -> Result<f64> {
    let c = eseem_components(register, timing)?;
    let mut v = 0.25 * (c.alpha + c.beta);
    if opts.include_decay {
        let env = &register.environment;
        v *= (-(2.0 * timing.tau1 + 2.0 * timing.tau2) / env.t2 - timing.t_free / env.t1).exp();
    }
    Ok(v)
}

/// First-order summation rule for the α and β components.
pub fn eseem_summation(register: &Register, timing: &EseemTiming) -> Result<EseemComponents> {
    timing.validate()?;
    let mut out = EseemComponents { alpha: 0.0, beta: 0.0 };
    let frames = register.frames()?;
    if frames.iter().any(|f| f.k_depth > 0.1) {
        log::warn!("summation rule used with modulation depth above 0.1");
    }
    let term = |k: f64, eta: f64, wa: f64, wb: f64| {
        let b = blind_term(wa, wb, timing);
        let phase = wa * timing.t_free + (wa + wb) * (timing.tau1 + timing.tau2) / 2.0;
        -8.0 * b * k * eta.cos().powi(4) * phase.cos()
    };
    for f in &frames {
        out.alpha += term(f.k_depth, f.eta, f.omega_0, f.omega_1);
        out.beta += term(f.k_depth, -f.eta, f.omega_1, f.omega_0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Alpha,
    Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpotLists {
    pub blind: Vec<f64>,
    pub bright: Vec<f64>,
}

/// τ values where the nucleus's correlation signal vanishes (even multiples
/// of π/ω) or peaks (odd multiples), for m = 0..=max_order.
pub fn blind_bright_spots(frame: &DerivedSpinFrame, which: Branch, max_order: usize) -> SpotLists {
    let w = match which {
        Branch::Alpha => frame.omega_0,
        Branch::Beta => frame.omega_1,
    };
    let unit = PI / w;
    SpotLists {
        blind: (0..=max_order).map(|m| (2 * m) as f64 * unit).collect(),
        bright: (0..=max_order).map(|m| (2 * m + 1) as f64 * unit).collect(),
    }
}

/// One nuclear species treated as a bath with aggregate modulation `k` at
/// Larmor frequency `omega_l` (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    pub k: f64,
    pub omega_l: f64,
}

/// Groups spins by species; k² of a bath is the sum of the members' k_mod².
pub fn baths_by_species(register: &Register) -> Result<Vec<(String, BathSpec)>> {
    let mut out: Vec<(String, f64, f64)> = Vec::new();
    for (spin, f) in register.spins.iter().zip(register.frames()?) {
        let wl = larmor_frequency(spin, register.environment.b_field);
        match out.iter_mut().find(|(s, _, _)| *s == spin.species) {
            Some(entry) => entry.1 += f.k_mod * f.k_mod,
            None => out.push((spin.species.clone(), f.k_mod * f.k_mod, wl)),
        }
    }
    Ok(out.into_iter().map(|(s, k2, wl)| (s, BathSpec { k: k2.sqrt(), omega_l: wl })).collect())
}

pub fn bispecies_dd(bath1: &BathSpec, bath2: &BathSpec, tau: f64) -> f64 {
    let term = |b: &BathSpec| 2.0 * b.k * b.k * (b.omega_l * tau / 2.0).sin().powi(4);
    1.0 - term(bath1) - term(bath2)
}

/// Correlation sequence with N-pulse CPMG blocks. No closed form; evaluated by
/// the oracle. Decay (if requested) uses the block duration against T2(N) and
/// the free evolution against T1.
pub fn dd_eseem(register: &Register, timing: &EseemTiming, pulses_per_block: usize, opts: &SignalOptions) -> Result<f64> {
    let oracle = Oracle::new(register)?;
    dd_eseem_with(&oracle, register, timing, pulses_per_block, opts)
}

/// Same as [`dd_eseem`] with a prebuilt oracle, for sweeps.
pub fn dd_eseem_with(
    oracle: &Oracle,
    register: &Register,
    timing: &EseemTiming,
    pulses_per_block: usize,
    opts: &SignalOptions,
) -> Result<f64> {
    timing.validate()?;
    check_even(pulses_per_block)?;
    let p = SequenceParams {
        tau1: Some(timing.tau1),
        tau2: Some(timing.tau2),
        t_free: Some(timing.t_free),
        pulses: Some(pulses_per_block),
        ..Default::default()
    };
    let mut v = oracle.simulate(&make_descriptor(ProtocolKind::DdEseem, &p)?)?;
    if opts.include_decay {
        let env = &register.environment;
        let n = pulses_per_block as f64;
        v *= (-(2.0 * n * (timing.tau1 + timing.tau2)) / env.t2_for_pulses(pulses_per_block) - timing.t_free / env.t1).exp();
    }
    Ok(v)
}
