//! Protocols as one-dimensional sweeps: τ for Ramsey, echo and decoupling,
//! the free evolution T for the correlation sequences.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::oracle::{make_descriptor, ProtocolKind, SequenceDescriptor, SequenceParams};
use crate::register::Register;
use crate::signals::{self, EseemTiming, SignalOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum Protocol {
    Ramsey,
    HahnEcho,
    Dd { pulses: usize },
    #[serde(rename = "5p_eseem")]
    FivePulse { tau1: f64, tau2: f64 },
    DdEseem { tau1: f64, tau2: f64, pulses: usize },
}

impl Protocol {
    pub fn kind(&self) -> ProtocolKind {
        match self {
            Protocol::Ramsey => ProtocolKind::Ramsey,
            Protocol::HahnEcho => ProtocolKind::Hahn,
            Protocol::Dd { .. } => ProtocolKind::Dd,
            Protocol::FivePulse { .. } => ProtocolKind::FivePulse,
            Protocol::DdEseem { .. } => ProtocolKind::DdEseem,
        }
    }

    pub fn sweep_name(&self) -> &'static str {
        match self {
            Protocol::Ramsey | Protocol::HahnEcho | Protocol::Dd { .. } => "tau",
            Protocol::FivePulse { .. } | Protocol::DdEseem { .. } => "T",
        }
    }

    pub fn is_correlation(&self) -> bool {
        matches!(self, Protocol::FivePulse { .. } | Protocol::DdEseem { .. })
    }

    pub fn params(&self, x: f64) -> SequenceParams {
        match *self {
            Protocol::Ramsey | Protocol::HahnEcho => SequenceParams { tau: Some(x), ..Default::default() },
            Protocol::Dd { pulses } => SequenceParams { tau: Some(x), pulses: Some(pulses), ..Default::default() },
            Protocol::FivePulse { tau1, tau2 } => {
                SequenceParams { tau1: Some(tau1), tau2: Some(tau2), t_free: Some(x), ..Default::default() }
            }
            Protocol::DdEseem { tau1, tau2, pulses } => SequenceParams {
                tau1: Some(tau1),
                tau2: Some(tau2),
                t_free: Some(x),
                pulses: Some(pulses),
                ..Default::default()
            },
        }
    }

    pub fn descriptor(&self, x: f64) -> Result<SequenceDescriptor> {
        make_descriptor(self.kind(), &self.params(x))
    }

    /// Free-evolution time of one shot at sweep value `x`.
    pub fn duration(&self, x: f64) -> f64 {
        match *self {
            Protocol::Ramsey => x,
            Protocol::HahnEcho => 2.0 * x,
            Protocol::Dd { pulses } => 2.0 * pulses as f64 * x,
            Protocol::FivePulse { tau1, tau2 } => 2.0 * (tau1 + tau2) + x,
            Protocol::DdEseem { tau1, tau2, pulses } => 2.0 * pulses as f64 * (tau1 + tau2) + x,
        }
    }

    /// Closed-form signal (oracle-backed for `DdEseem`).
    pub fn evaluate(&self, register: &Register, x: f64, include_decay: bool) -> Result<f64> {
        let base = SignalOptions { include_decay, ..Default::default() };
        match *self {
            Protocol::Ramsey => signals::ramsey(register, x, &base),
            Protocol::HahnEcho => signals::hahn_echo(register, x, &base),
            Protocol::Dd { pulses } => signals::dd(register, x, &SignalOptions { pulses_n: pulses, ..base }),
            Protocol::FivePulse { tau1, tau2 } => {
                signals::five_pulse_eseem(register, &EseemTiming::new(tau1, tau2, x), &base)
            }
            Protocol::DdEseem { tau1, tau2, pulses } => {
                signals::dd_eseem(register, &EseemTiming::new(tau1, tau2, x), pulses, &base)
            }
        }
    }

    /// Evaluates a whole grid; builds the oracle once for `DdEseem`.
    pub fn evaluate_grid(&self, register: &Register, grid: &[f64], include_decay: bool) -> Result<Vec<f64>> {
        if let Protocol::DdEseem { tau1, tau2, pulses } = *self {
            let oracle = crate::oracle::Oracle::new(register)?;
            let opts = SignalOptions { include_decay, ..Default::default() };
            return grid
                .iter()
                .map(|&x| signals::dd_eseem_with(&oracle, register, &EseemTiming::new(tau1, tau2, x), pulses, &opts))
                .collect();
        }
        grid.iter().map(|&x| self.evaluate(register, x, include_decay)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Protocol::Dd { pulses } | Protocol::DdEseem { pulses, .. } if pulses < 2 || pulses % 2 != 0 => {
                Err(crate::Error::OddPulseCount(pulses))
            }
            _ => Ok(()),
        }
    }
}
