//! Simulation, signal processing and verification for continuous-variable
//! hypercubic cluster states made by phase-modulating two-mode squeezed light.

pub mod config;
pub mod dsp;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod graph;
pub mod io;
pub mod nullifier;
pub mod synth;

pub use config::{ExperimentConfig, RunSpec};
pub use dsp::{BinnedSignal, CovarianceEstimate};
pub use error::{CvlError, Result};
pub use gaussian::{
    Beam, CovarianceMatrix, DriveSpec, DriveTone, ModeLayout, Normalization, SqueezeProfile, SymplecticMatrix,
};
pub use graph::{AdjacencyGraph, GluSpec};
pub use nullifier::{NullifierMatrix, NullifierReport};
pub use synth::{QuadConfig, SynthConfig, TraceSet};
