//! Sub-transient synchronous generator simulation, synthetic PMU measurement
//! generation, and Unscented-Kalman-Filter event playback for joint dynamic
//! state estimation and parameter calibration.
//!
//! The crate is organised around the pipeline:
//!
//! 1. [`truth_sim`] — ground-truth trajectories of one machine against an
//!    infinite bus through a line, with a timed three-phase fault.
//! 2. [`pmu_synth`] — noisy PMU frames (phasors, phasor derivatives,
//!    frequency, ROCOF) at a reporting rate, interpolated to the filter rate.
//! 3. [`calib`] — event playback with the UKF over either the conventional
//!    ([`gen_model`]) or the augmented ([`aug_model`]) machine model, plus the
//!    Monte Carlo evaluation harness.
//!
//! [`sigma_filter`] is the model-agnostic UKF used by the playback.

pub mod aug_model;
pub mod calib;
pub mod config;
pub mod error;
pub mod gen_model;
pub mod params;
pub mod pmu_synth;
pub mod sigma_filter;
pub mod truth_sim;

pub use error::{Error, Result};
