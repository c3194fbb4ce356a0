//! Signals, exact oracle, readout noise and Fisher analysis for nuclear spins
//! coupled to a single color-center electron spin.
//!
//! Couplings and frequencies enter in Hz. Everything internal is angular
//! (rad/s); the conversion happens once in [`register::derive_frame`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod measurement;
pub mod oracle;
pub mod protocol;
pub mod register;
pub mod signals;
pub mod spectrum;

pub use error::{Error, Result};
pub use estimation::{FisherOptions, FisherResult, ParamVector};
pub use measurement::{NoiseConfig, Trace};
pub use oracle::{Oracle, ProtocolKind, SequenceDescriptor, SequenceElement, SequenceParams};
pub use protocol::Protocol;
pub use register::{DerivedSpinFrame, ElectronSpin, Environment, NuclearSpin, Register};
pub use signals::{EseemTiming, SignalOptions};
pub use spectrum::{CorrelationMap, Spectrum};

/// 2π, the Hz to rad/s factor.
pub const TWO_PI: f64 = std::f64::consts::TAU;
