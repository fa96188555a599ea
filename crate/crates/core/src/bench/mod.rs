//! Synthetic experiments, Monte Carlo harness and file formats.

pub mod io;
pub mod synth;
pub mod trials;

pub use synth::{generate, GroundTruth, Instance, SynthConfig};
pub use trials::{run_trial, run_trials, Aggregate, TrialRecord, TrialSettings, TrialSummary};
