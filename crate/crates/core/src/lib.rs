//! Compile symmetric positive-definite systems `A x = b` into analog
//! resistive solver networks and simulate them.
//!
//! Units throughout: conductances and matrix entries in microsiemens (uS),
//! currents and right-hand sides in microamperes (uA), voltages in volts,
//! power in microwatts, time in seconds.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod devices;
pub mod error;
pub mod io;
pub mod linalg;
pub mod linsys;
pub mod mapping;
pub mod simulate;
pub mod verify;

pub use analysis::{ErrorFloor, ErrorMetrics, MeasuredPower, PowerReport, StudyDataset, StudyKind, StudySpec};
pub use devices::{Fidelity, NegResRealization, OpAmpLibrary, OpAmpModel};
pub use error::{Error, Result};
pub use linsys::{GeneratorSpec, LinearSystem, SystemClass};
pub use mapping::{
    ComponentCount, DPolicy, Design, Element, ElementKind, MapOptions, Network, ProposedMapping,
    Stability, TransformedSystem,
};
pub use simulate::{SimConfig, SimResult, Trajectory};
