//! Distributed rate-splitting (D-RSMA) beamforming for a network of one GEO
//! satellite and several LEO satellites sharing the same band.
//!
//! The crate is organised bottom-up:
//!
//! * [`channel`] samples placement geometry, estimated channels, phase-error
//!   statistics and the second-order channel matrices used by the optimizer.
//! * [`rates`] evaluates power segments, instantaneous SINRs and the
//!   deterministic ergodic-rate approximations.
//! * [`conic`] is a small modelling layer over an interior-point conic solver
//!   (Hermitian PSD variables through a real embedding, exponential cones).
//! * [`sca`] runs the penalized successive convex approximation and extracts
//!   rank-one precoders.
//! * [`schemes`] expresses D-RSMA, M-RSMA and M-SDMA as stream masks.
//! * [`experiment`] drives Monte Carlo sweeps and writes CSV / PNG output.

// Links the system OpenBLAS used by the solver's dense PSD cone kernels.
extern crate openblas_src;

pub mod channel;
pub mod config;
pub mod conic;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod par;
pub mod rates;
pub mod sca;
pub mod schemes;

pub use config::{NetworkLayout, ScenarioConfig};
pub use error::{Error, Result};
pub use schemes::{Scheme, StreamMask};
