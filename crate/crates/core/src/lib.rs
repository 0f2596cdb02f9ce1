//! Optimal market making with hedging under transient market impact.
//!
//! The crate covers the full pipeline for a dealer quoting a size ladder to
//! clients while hedging in an interbank market whose impact decays
//! exponentially:
//!
//! - [`params`]: config loading, validation and units
//! - [`intensity`]: client arrival curves and the OTC Hamiltonian
//! - [`closedform`]: long-horizon quadratic approximation of the value function
//! - [`hjb`]: explicit backward solver on an (inventory, impact) grid
//! - [`simulate`]: Monte Carlo of the controlled system and P&L accounting
//! - [`io`]: CSV and binary artifacts

pub mod closedform;
pub mod hjb;
pub mod intensity;
pub mod io;
pub mod params;
pub mod simulate;

pub use closedform::{ClosedFormCoeffs, Side};
pub use hjb::{ControlField, GridSpec, SolveMode, SolveOutput, ValueField};
pub use intensity::{IntensityCurve, IntensityShape};
pub use params::{ModelParams, RawConfig};
pub use simulate::{PathStats, PerformanceReport, SimState};
