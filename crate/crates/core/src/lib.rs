//! Multi-objective dwell-time planning for HDR cervical brachytherapy.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: analytic shapes (ellipsoids, capsules) with membership and
//!   signed distance, plus uniform sampling.
//! * [`case`]: patient cases, protocols, the synthetic phantom and the
//!   clinical dwell-activation rules.
//! * [`dose`]: point-source dose superposition, dose slices and the
//!   contiguous high-dose-volume check.
//! * [`dv`]: dose-volume indices, EQD2 conversion and aim classification.
//! * [`objectives`]: coverage/sparing/added objectives, dominance and the
//!   default balanced plan.
//! * [`optimizer`]: the population-based optimizer, Pareto archive, repair
//!   of dwell-time vectors and warm-start re-optimization.
//! * [`metrics`]: hypervolume of objective sets.
//!
//! Inner loops (dose at many points, batch plan evaluation) run on rayon when
//! the `parallel` feature is enabled; [`Parallelism::Sequential`] forces the
//! single-threaded path at runtime. Both paths produce bit-identical results.

pub mod case;
pub mod dose;
pub mod dv;
mod error;
pub mod geometry;
pub mod metrics;
pub mod objectives;
pub mod optimizer;
mod par;

pub use error::{Error, Result};
pub use par::Parallelism;

/// Version tag written into every persisted document.
pub const SCHEMA_VERSION: u32 = 1;
