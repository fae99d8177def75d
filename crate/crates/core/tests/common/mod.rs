#![allow(dead_code)]

use cvl::dsp::{bin_filter, RunData};
use cvl::gaussian::{DriveSpec, ModeLayout, SqueezeProfile};
use cvl::synth::{synth_traces, QuadConfig, SqueezeModel, SynthConfig, TraceKind, TraceSet};

/// 20 interior bins of 90 kHz at 100 kHz spacing, two guard bins a side.
pub fn small_layout() -> ModeLayout {
    ModeLayout::new(20, 100e3, 90e3, 100e3, 2).unwrap()
}

/// 1 ms at 10 ns, 16 bits, no electronic noise or delay.
pub fn clean(layout: ModeLayout, squeeze: SqueezeModel, drive: DriveSpec, quad: QuadConfig, seed: u64) -> SynthConfig {
    let mut c = SynthConfig::new(layout, squeeze, drive, quad, seed);
    c.samples = 100_000;
    c.digitizer_bits = 16;
    c.fullscale = 8.0;
    c.elec_noise_db = None;
    c.delay_s = 0.0;
    c
}

pub fn flat_db(db: f64) -> SqueezeModel {
    SqueezeModel::Flat { r: SqueezeProfile::r_for_db(db) }
}

pub fn binned(ts: &TraceSet, kind: TraceKind, eom_on: bool) -> RunData {
    let c = &ts.meta.config;
    RunData {
        label: c.quad_config,
        kind,
        eom_on,
        probe: bin_filter(&ts.probe, c.sample_dt_s, &c.layout).unwrap(),
        conjugate: bin_filter(&ts.conjugate, c.sample_dt_s, &c.layout).unwrap(),
        drive: c.drive.clone(),
    }
}

pub fn run(cfg: &SynthConfig) -> RunData {
    let ts = synth_traces(cfg).unwrap();
    binned(&ts, TraceKind::Signal, !cfg.drive.is_off())
}
