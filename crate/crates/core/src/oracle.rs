//! Brute-force density-matrix simulator on the electron two-level subspace
//! tensored with every nuclear spin.
//!
//! The electron Hamiltonian is diagonal in {|s0>, |s1>}, so the full
//! propagator for a delay is block diagonal: one nuclear unitary per electron
//! branch. The state is stored as four d×d blocks `rho[a][b]`, pulses mix the
//! blocks, and delays act as `rho[a][b] -> U_a rho[a][b] U_b†`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::str::FromStr;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::register::{larmor_frequency, Register};
use crate::TWO_PI;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

pub const MAX_ORACLE_SPINS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseAxis {
    X,
    Y,
}

/// One step of an ideal sequence. Pulses act on the electron only and are
/// instantaneous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceElement {
    Pulse { axis: PulseAxis, angle: f64 },
    Delay { duration: f64 },
    /// Drops electron coherence (off-diagonal blocks). Stands in for a free
    /// evolution much longer than T2*.
    Dephase,
}

/// Readout is always ⟨σ_z⟩ of the electron two-level subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDescriptor {
    pub elements: Vec<SequenceElement>,
}

impl SequenceDescriptor {
    pub fn new(elements: Vec<SequenceElement>) -> Result<Self> {
        let d = SequenceDescriptor { elements };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.elements.is_empty() {
            return Err(Error::InvalidSequence("empty descriptor".into()));
        }
        for (i, el) in self.elements.iter().enumerate() {
            match *el {
                SequenceElement::Pulse { angle, .. } => {
                    if !(angle > -TWO_PI && angle <= TWO_PI) {
                        return Err(Error::InvalidSequence(format!("element {i}: angle {angle} outside (-2π, 2π]")));
                    }
                }
                SequenceElement::Delay { duration } => {
                    if !(duration >= 0.0 && duration.is_finite()) {
                        return Err(Error::InvalidSequence(format!("element {i}: bad duration {duration}")));
                    }
                }
                SequenceElement::Dephase => {}
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.elements
            .iter()
            .map(|e| match e {
                SequenceElement::Delay { duration } => *duration,
                _ => 0.0,
            })
            .sum()
    }

    pub fn pulse_count(&self) -> usize {
        self.elements.iter().filter(|e| matches!(e, SequenceElement::Pulse { .. })).count()
    }
}

fn pulse(axis: PulseAxis, angle: f64) -> SequenceElement {
    SequenceElement::Pulse { axis, angle }
}

fn delay(duration: f64) -> SequenceElement {
    SequenceElement::Delay { duration }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Ramsey,
    Hahn,
    Dd,
    #[serde(rename = "5p_eseem")]
    FivePulse,
    DdEseem,
}

impl ProtocolKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolKind::Ramsey => "ramsey",
            ProtocolKind::Hahn => "hahn",
            ProtocolKind::Dd => "dd",
            ProtocolKind::FivePulse => "5p_eseem",
            ProtocolKind::DdEseem => "dd_eseem",
        }
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ramsey" => ProtocolKind::Ramsey,
            "hahn" | "hahn_echo" => ProtocolKind::Hahn,
            "dd" => ProtocolKind::Dd,
            "5p_eseem" | "5p" | "five_pulse" => ProtocolKind::FivePulse,
            "dd_eseem" => ProtocolKind::DdEseem,
            other => return Err(Error::validation("protocol", format!("unknown protocol '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceParams {
    pub tau: Option<f64>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub t_free: Option<f64>,
    pub pulses: Option<usize>,
}

fn need<T: Copy>(v: Option<T>, kind: ProtocolKind, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::IncompleteParams { protocol: kind.name().into(), param: name.into() })
}

/// π/2 open, then n π pulses with τ, 2τ, ..., 2τ, τ spacing. No closing pulse.
fn cpmg_body(out: &mut Vec<SequenceElement>, tau: f64, n: usize) {
    out.push(pulse(PulseAxis::X, FRAC_PI_2));
    out.push(delay(tau));
    for i in 0..n {
        out.push(pulse(PulseAxis::X, PI));
        out.push(delay(if i + 1 < n { 2.0 * tau } else { tau }));
    }
}

/// Two CPMG blocks separated by a dephased free evolution. The y-phase
/// closing pulses turn the residual nuclear-induced coherence into
/// population; the bare electron then reads 0.
fn correlation_sequence(tau1: f64, tau2: f64, t_free: f64, n: usize) -> Vec<SequenceElement> {
    let mut el = Vec::with_capacity(4 * n + 8);
    cpmg_body(&mut el, tau1, n);
    el.push(pulse(PulseAxis::Y, FRAC_PI_2));
    el.push(delay(t_free));
    el.push(SequenceElement::Dephase);
    cpmg_body(&mut el, tau2, n);
    el.push(pulse(PulseAxis::Y, -FRAC_PI_2));
    el
}

/// Canonical descriptors. Closing pulses are phased so that the bare
/// electron reads +1 (Ramsey, Hahn, DD) or 0 (correlation sequences).
pub fn make_descriptor(kind: ProtocolKind, p: &SequenceParams) -> Result<SequenceDescriptor> {
    let elements = match kind {
        ProtocolKind::Ramsey => {
            let tau = need(p.tau, kind, "tau")?;
            vec![pulse(PulseAxis::X, FRAC_PI_2), delay(tau), pulse(PulseAxis::X, -FRAC_PI_2)]
        }
        ProtocolKind::Hahn => {
            let tau = need(p.tau, kind, "tau")?;
            let mut el = Vec::new();
            cpmg_body(&mut el, tau, 1);
            el.push(pulse(PulseAxis::X, FRAC_PI_2));
            el
        }
        ProtocolKind::Dd => {
            let tau = need(p.tau, kind, "tau")?;
            let n = need(p.pulses, kind, "pulses")?;
            if n == 0 {
                return Err(Error::validation("pulses", "must be >= 1"));
            }
            let mut el = Vec::new();
            cpmg_body(&mut el, tau, n);
            // N π_x pulses compose to ±identity (even N) or a flip (odd N).
            let close = if n % 2 == 0 { -FRAC_PI_2 } else { FRAC_PI_2 };
            el.push(pulse(PulseAxis::X, close));
            el
        }
        ProtocolKind::FivePulse => {
            let t1 = need(p.tau1, kind, "tau1")?;
            let t2 = need(p.tau2, kind, "tau2")?;
            let t = need(p.t_free, kind, "t_free")?;
            correlation_sequence(t1, t2, t, 1)
        }
        ProtocolKind::DdEseem => {
            let t1 = need(p.tau1, kind, "tau1")?;
            let t2 = need(p.tau2, kind, "tau2")?;
            let t = need(p.t_free, kind, "t_free")?;
            let n = need(p.pulses, kind, "pulses")?;
            if n < 2 || n % 2 != 0 {
                return Err(Error::OddPulseCount(n));
            }
            correlation_sequence(t1, t2, t, n)
        }
    };
    SequenceDescriptor::new(elements)
}

/// Per-branch nuclear Hamiltonians with cached eigendecompositions.
#[derive(Debug, Clone)]
pub struct HamiltonianPair {
    pub n_spins: usize,
    pub dim: usize,
    /// H⁽⁰⁾ and H⁽¹⁾ (real symmetric, rad/s).
    pub h: [DMatrix<f64>; 2],
    /// Electron phase rates Δ·s_i (rad/s).
    pub electron_phase: [f64; 2],
    eigvals: [DVector<f64>; 2],
    eigvecs: [CMatrix; 2],
}

pub fn build_hamiltonians(register: &Register) -> Result<HamiltonianPair> {
    let n = register.spins.len();
    if n > MAX_ORACLE_SPINS {
        return Err(Error::RegisterTooLarge { n, max: MAX_ORACLE_SPINS });
    }
    let dim = 1usize << n;
    let s = [register.electron.s0, register.electron.s1];
    let b_field = register.environment.b_field;
    let mut h = [DMatrix::<f64>::zeros(dim, dim), DMatrix::<f64>::zeros(dim, dim)];
    for (k, spin) in register.spins.iter().enumerate() {
        let wl = larmor_frequency(spin, b_field);
        let a = TWO_PI * spin.a_zz;
        let b = TWO_PI * spin.a_zx;
        let bit = 1usize << (n - 1 - k);
        for (branch, hm) in h.iter_mut().enumerate() {
            let zz = wl + s[branch] * a;
            let zx = s[branch] * b;
            for r in 0..dim {
                let mz = if r & bit == 0 { 0.5 } else { -0.5 };
                hm[(r, r)] += zz * mz;
                hm[(r, r ^ bit)] += 0.5 * zx;
            }
        }
    }
    let delta = TWO_PI * register.electron.detuning;
    let decompose = |m: &DMatrix<f64>| {
        let e = SymmetricEigen::new(m.clone());
        (e.eigenvalues, e.eigenvectors.map(|v| C64::new(v, 0.0)))
    };
    let (l0, v0) = decompose(&h[0]);
    let (l1, v1) = decompose(&h[1]);
    Ok(HamiltonianPair {
        n_spins: n,
        dim,
        h,
        electron_phase: [delta * s[0], delta * s[1]],
        eigvals: [l0, l1],
        eigvecs: [v0, v1],
    })
}

impl HamiltonianPair {
    pub fn eigenvalues(&self, branch: usize) -> &DVector<f64> {
        &self.eigvals[branch]
    }

    /// exp(-i (H⁽ⁱ⁾ + Δ s_i) t).
    pub fn propagator(&self, branch: usize, t: f64) -> CMatrix {
        let v = &self.eigvecs[branch];
        let lam = &self.eigvals[branch];
        let phase = self.electron_phase[branch];
        let mut scaled = v.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= C64::from_polar(1.0, -(lam[j] + phase) * t);
        }
        &scaled * v.adjoint()
    }

    /// max |U†U - 1| over both branches.
    pub fn unitarity_error(&self, t: f64) -> f64 {
        (0..2)
            .map(|b| {
                let u = self.propagator(b, t);
                let m = u.adjoint() * &u - CMatrix::identity(self.dim, self.dim);
                m.iter().map(|z| z.norm()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// exp(-i θ σ_axis / 2) on the electron.
fn rotation(axis: PulseAxis, angle: f64) -> [[C64; 2]; 2] {
    let c = C64::new((angle / 2.0).cos(), 0.0);
    let s = (angle / 2.0).sin();
    match axis {
        PulseAxis::X => [[c, C64::new(0.0, -s)], [C64::new(0.0, -s), c]],
        PulseAxis::Y => [[c, C64::new(-s, 0.0)], [C64::new(s, 0.0), c]],
    }
}

#[derive(Clone)]
struct State {
    /// Row-major blocks: 00, 01, 10, 11.
    blocks: [CMatrix; 4],
}

impl State {
    fn initial(dim: usize) -> Self {
        let z = CMatrix::zeros(dim, dim);
        let mut s = State { blocks: [z.clone(), z.clone(), z.clone(), z] };
        s.blocks[0] = CMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0);
        s
    }

    fn apply_pulse(&mut self, r: &[[C64; 2]; 2]) {
        let old = self.blocks.clone();
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = CMatrix::zeros(old[0].nrows(), old[0].ncols());
                for c in 0..2 {
                    for e in 0..2 {
                        let w = r[a][c] * r[b][e].conj();
                        if w.norm() > 0.0 {
                            acc += &old[2 * c + e] * w;
                        }
                    }
                }
                self.blocks[2 * a + b] = acc;
            }
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn apply_delay(&mut self, u: &[CMatrix; 2]) {
        let ud = [u[0].adjoint(), u[1].adjoint()];
        for a in 0..2 {
            for b in 0..2 {
                let blk = &self.blocks[2 * a + b];
                self.blocks[2 * a + b] = &u[a] * blk * &ud[b];
            }
        }
    }

    fn dephase(&mut self) {
        self.blocks[1].fill(C64::new(0.0, 0.0));
        self.blocks[2].fill(C64::new(0.0, 0.0));
    }

    fn sigma_z(&self) -> C64 {
        self.blocks[0].trace() - self.blocks[3].trace()
    }

    fn max_abs(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.iter()).map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// One electron coherence pathway: the (ket, bra) branch taken during each
/// delay, and its contribution to ⟨σ_z⟩ after merging with its conjugate.
#[derive(Debug, Clone, PartialEq)]
pub struct Pathway {
    pub branches: Vec<(u8, u8)>,
    pub contribution: f64,
}

const MAX_PATHWAY_COMPONENTS: usize = 1 << 16;

/// Exact simulator bound to one register.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub hamiltonians: HamiltonianPair,
}

impl Oracle {
    pub fn new(register: &Register) -> Result<Self> {
        register.validate()?;
        Ok(Oracle { hamiltonians: build_hamiltonians(register)? })
    }

    fn propagators(&self, cache: &mut Vec<(u64, [CMatrix; 2])>, t: f64) -> [CMatrix; 2] {
        let key = t.to_bits();
        if let Some((_, u)) = cache.iter().find(|(k, _)| *k == key) {
            return u.clone();
        }
        let u = [self.hamiltonians.propagator(0, t), self.hamiltonians.propagator(1, t)];
        cache.push((key, u.clone()));
        u
    }

    /// ⟨σ_z⟩ at the end of the sequence, starting from |0⟩⟨0| ⊗ 1/d.
    pub fn simulate(&self, desc: &SequenceDescriptor) -> Result<f64> {
        desc.validate()?;
        let mut cache = Vec::new();
        let mut st = State::initial(self.hamiltonians.dim);
        for el in &desc.elements {
            match *el {
                SequenceElement::Pulse { axis, angle } => st.apply_pulse(&rotation(axis, angle)),
                SequenceElement::Delay { duration } => {
                    let u = self.propagators(&mut cache, duration);
                    st.apply_delay(&u);
                }
                SequenceElement::Dephase => st.dephase(),
            }
        }
        Ok(st.sigma_z().re)
    }

    /// Splits the evolution into electron-coherence pathways (one block per
    /// delay), merges each pathway with its ket/bra conjugate and returns the
    /// non-negligible ones. Contributions sum to `simulate`.
    pub fn pathways(&self, desc: &SequenceDescriptor) -> Result<Vec<Pathway>> {
        desc.validate()?;
        let mut cache = Vec::new();
        let mut comps: Vec<(Vec<(u8, u8)>, State)> = vec![(Vec::new(), State::initial(self.hamiltonians.dim))];
        for el in &desc.elements {
            match *el {
                SequenceElement::Pulse { axis, angle } => {
                    let r = rotation(axis, angle);
                    comps.iter_mut().for_each(|(_, s)| s.apply_pulse(&r));
                }
                SequenceElement::Dephase => {
                    comps.iter_mut().for_each(|(_, s)| s.dephase());
                    comps.retain(|(_, s)| s.max_abs() > 1e-15);
                }
                SequenceElement::Delay { duration } => {
                    let u = self.propagators(&mut cache, duration);
                    let mut next = Vec::new();
                    for (lab, s) in &comps {
                        for idx in 0..4 {
                            let blk = &s.blocks[idx];
                            if blk.iter().all(|z| z.norm() <= 1e-15) {
                                continue;
                            }
                            let (a, b) = (idx / 2, idx % 2);
                            let mut part = State::initial(self.hamiltonians.dim);
                            part.blocks[0].fill(C64::new(0.0, 0.0));
                            part.blocks[idx] = &u[a] * blk * u[b].adjoint();
                            let mut l = lab.clone();
                            l.push((a as u8, b as u8));
                            next.push((l, part));
                        }
                    }
                    if next.len() > MAX_PATHWAY_COMPONENTS {
                        return Err(Error::InvalidSequence("too many pathway components".into()));
                    }
                    comps = next;
                }
            }
        }
        let mut merged: BTreeMap<Vec<(u8, u8)>, C64> = BTreeMap::new();
        for (lab, s) in comps {
            let conj: Vec<(u8, u8)> = lab.iter().map(|&(a, b)| (b, a)).collect();
            let key = if conj < lab { conj } else { lab };
            *merged.entry(key).or_insert(C64::new(0.0, 0.0)) += s.sigma_z();
        }
        Ok(merged
            .into_iter()
            .filter(|(_, v)| v.norm() > 1e-12)
            .map(|(branches, v)| Pathway { branches, contribution: v.re })
            .collect())
    }
}

/// Convenience wrapper building a fresh oracle.
pub fn simulate(register: &Register, desc: &SequenceDescriptor) -> Result<f64> {
    Oracle::new(register)?.simulate(desc)
}
