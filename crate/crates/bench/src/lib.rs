//! Shared fixtures for the criterion benches.

use cvl::config::{preset, ExperimentConfig};
use cvl::gaussian::{DriveSpec, ModeLayout, SqueezeProfile};
use cvl::synth::{QuadConfig, SqueezeModel, SynthConfig};

pub fn config(name: &str) -> ExperimentConfig {
    preset(name).expect("built-in preset")
}

/// 3-D layout with its drive and a flat -3 dB profile.
pub fn chain_3d() -> (ModeLayout, SqueezeProfile, DriveSpec) {
    let c = config("fig3-3d");
    let profile = c.profile().expect("valid profile");
    (c.layout, profile, c.drive)
}

/// One 10 ms XP run of the 3-D state.
pub fn synth_3d(seed: u64) -> SynthConfig {
    let c = config("fig3-3d");
    let mut s = SynthConfig::new(c.layout, SqueezeModel::Flat { r: 0.17 }, c.drive, QuadConfig::XP, seed);
    s.lf_excess = c.synth.lf_excess;
    s
}
