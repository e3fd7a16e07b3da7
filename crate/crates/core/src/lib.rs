//! Quantum super-resolution imaging by photon statistics (QSIPS).
//!
//! Synthesizes photon-counting stacks from non-Poissonian emitters,
//! estimates per-pixel cumulants, builds QSIPS and SOFI maps and fuses
//! structured-illumination acquisitions.

pub mod analysis;
pub mod combinatorics;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod fft;
pub mod field;
pub mod frame_sim;
pub mod io;
pub mod numeric;
pub mod photon_models;
pub mod pipeline;
pub mod reconstruction;
pub mod scene;
pub mod sim_fusion;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Execution;
