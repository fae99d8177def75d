//! Experiment configuration, run plans and named presets.

use serde::{Deserialize, Serialize};

use crate::error::{CvlError, Result};
use crate::gaussian::{DriveSpec, ModeLayout, SqueezeProfile};
use crate::graph::GluSpec;
use crate::synth::{derive_seed, LowFrequencyExcess, QuadConfig, SqueezeModel, SynthConfig, TraceKind};

pub const CONFIG_VERSION: u32 = 1;

/// Acquisition settings shared by every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    pub delay_s: f64,
    pub elec_noise_db: Option<f64>,
    pub sample_dt_s: f64,
    pub samples: usize,
    pub digitizer_bits: u32,
    pub fullscale: f64,
    pub phase_jitter_rad: f64,
    pub lf_excess: Option<LowFrequencyExcess>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            delay_s: 10.4e-9,
            elec_noise_db: Some(-6.0),
            sample_dt_s: 1e-8,
            samples: 1_000_000,
            digitizer_bits: 8,
            fullscale: 5.0,
            phase_jitter_rad: 0.0,
            lf_excess: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    ShotRatio,
    ElecSubtract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub normalization: NormalizationMode,
    /// Skip the search and use this conjugate delay.
    pub fixed_delay_s: Option<f64>,
    pub delay_search_s: (f64, f64),
    /// Number of XX (or PP) runs pooled for the delay search.
    pub delay_runs: usize,
    pub threshold: f64,
    pub max_extraneous_fraction: f64,
    pub glu: GluSpec,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            normalization: NormalizationMode::ElecSubtract,
            fixed_delay_s: None,
            delay_search_s: (0.0, 30e-9),
            delay_runs: 4,
            threshold: 0.05,
            max_extraneous_fraction: 0.05,
            glu: GluSpec::default(),
        }
    }
}

fn default_quads() -> Vec<QuadConfig> {
    vec![QuadConfig::XX, QuadConfig::PP, QuadConfig::XP]
}

fn default_shot_runs() -> usize {
    4
}

fn default_dark_runs() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub layout: ModeLayout,
    pub squeeze: SqueezeModel,
    pub drive: DriveSpec,
    #[serde(default)]
    pub synth: SynthOptions,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    /// EOM-on runs per quadrature configuration.
    pub runs: usize,
    /// EOM-off XX and PP runs each; defaults to `runs`.
    #[serde(default)]
    pub eom_off_runs: Option<usize>,
    #[serde(default = "default_shot_runs")]
    pub shot_runs: usize,
    #[serde(default = "default_dark_runs")]
    pub dark_runs: usize,
    #[serde(default = "default_quads")]
    pub quad_configs: Vec<QuadConfig>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub id: String,
    pub kind: TraceKind,
    pub quad: QuadConfig,
    pub eom_on: bool,
    pub index: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CvlError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.quad_configs.is_empty() && self.runs > 0 {
            return Err(CvlError::Config("runs requested but no quadrature configurations listed".into()));
        }
        let a = &self.analysis;
        if !(a.threshold >= 0.0 && a.max_extraneous_fraction >= 0.0) {
            return Err(CvlError::Config("threshold and extraneous fraction must be non-negative".into()));
        }
        if !(a.delay_search_s.0 < a.delay_search_s.1) {
            return Err(CvlError::Config("delay search range is empty".into()));
        }
        if a.normalization == NormalizationMode::ElecSubtract && self.dark_runs == 0 {
            return Err(CvlError::Config("elec-subtract normalization needs dark runs".into()));
        }
        let probe = self.synth_config(&RunSpec {
            id: String::new(),
            kind: TraceKind::Signal,
            quad: QuadConfig::XX,
            eom_on: true,
            index: 0,
            seed: 0,
        });
        probe.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn eom_off_count(&self) -> usize {
        self.eom_off_runs.unwrap_or(self.runs)
    }

    pub fn profile(&self) -> Result<SqueezeProfile> {
        self.squeeze.profile(&self.layout)
    }

    /// Signal runs (EOM on, then EOM off), shot runs and dark runs, each
    /// with a seed derived from the base seed and a unique tag.
    pub fn run_plan(&self) -> Vec<RunSpec> {
        let mut plan = Vec::new();
        let mut push = |kind: TraceKind, quad: QuadConfig, eom_on: bool, index: usize| {
            let kind_tag = match kind {
                TraceKind::Signal => 0u64,
                TraceKind::Shot => 1,
                TraceKind::Dark => 2,
            };
            let quad_tag = match quad {
                QuadConfig::XX => 0u64,
                QuadConfig::PP => 1,
                QuadConfig::XP => 2,
            };
            let tag = (kind_tag << 48) | (quad_tag << 40) | ((eom_on as u64) << 32) | index as u64;
            let id = match kind {
                TraceKind::Signal => {
                    format!("{}-{}-{index:03}", quad.as_str().to_lowercase(), if eom_on { "on" } else { "off" })
                }
                TraceKind::Shot => format!("shot-{index:03}"),
                TraceKind::Dark => format!("dark-{index:03}"),
            };
            plan.push(RunSpec { id, kind, quad, eom_on, index, seed: derive_seed(self.seed, tag) });
        };
        let drive_on = !self.drive.is_off();
        for &q in &self.quad_configs {
            for i in 0..self.runs {
                push(TraceKind::Signal, q, drive_on, i);
            }
        }
        if drive_on {
            for q in [QuadConfig::XX, QuadConfig::PP] {
                for i in 0..self.eom_off_count() {
                    push(TraceKind::Signal, q, false, i);
                }
            }
        }
        for i in 0..self.shot_runs {
            push(TraceKind::Shot, QuadConfig::XX, false, i);
        }
        for i in 0..self.dark_runs {
            push(TraceKind::Dark, QuadConfig::XX, false, i);
        }
        plan
    }

    pub fn synth_config(&self, run: &RunSpec) -> SynthConfig {
        let s = &self.synth;
        let drive = if run.eom_on { self.drive.clone() } else { DriveSpec { tones: vec![], ..self.drive.clone() } };
        SynthConfig {
            layout: self.layout,
            squeeze: self.squeeze.clone(),
            drive,
            quad_config: run.quad,
            delay_s: s.delay_s,
            elec_noise_db: s.elec_noise_db,
            sample_dt_s: s.sample_dt_s,
            samples: s.samples,
            digitizer_bits: s.digitizer_bits,
            fullscale: s.fullscale,
            seed: run.seed,
            phase_jitter_rad: s.phase_jitter_rad,
            lf_excess: s.lf_excess,
        }
    }
}

pub const PRESETS: &[&str] = &["fig2-1d", "fig3-3d", "figs1-2d", "figs4-4d", "even-control"];

/// Named parameter sets for the 1-D, 2-D, 3-D and 4-D states and the
/// even-multiple control.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let m = 0.18;
    let base = |name: &str, layout: ModeLayout, squeeze: SqueezeModel, tones: &[f64], runs: usize| -> Result<_> {
        Ok(ExperimentConfig {
            version: CONFIG_VERSION,
            name: name.to_string(),
            layout,
            squeeze,
            drive: DriveSpec::uniform(tones, m)?,
            synth: SynthOptions::default(),
            analysis: AnalysisOptions::default(),
            runs,
            eom_off_runs: None,
            shot_runs: default_shot_runs(),
            dark_runs: default_dark_runs(),
            quad_configs: default_quads(),
            seed: 20_240_601,
        })
    };
    match name {
        "fig2-1d" => base(
            name,
            ModeLayout::new(100, 200e3, 180e3, 100e3, 1)?,
            SqueezeModel::default(),
            &[200e3],
            12,
        ),
        "fig3-3d" => {
            let mut c = base(
                name,
                ModeLayout::new(200, 100e3, 90e3, 100e3, 0)?,
                SqueezeModel::Flat { r: SqueezeProfile::r_for_db(-3.0) },
                &[100e3, 300e3, 900e3],
                24,
            )?;
            c.synth.lf_excess = Some(LowFrequencyExcess { corner_hz: 40e3, level_db: 25.0 });
            Ok(c)
        }
        "figs1-2d" => base(
            name,
            ModeLayout::new(200, 100e3, 90e3, 100e3, 5)?,
            SqueezeModel::default(),
            &[100e3, 500e3],
            12,
        ),
        "figs4-4d" => {
            let mut c = base(
                name,
                ModeLayout::new(600, 33e3, 30e3, 33e3, 27)?,
                SqueezeModel::Flat { r: 0.221 },
                &[33e3, 99e3, 297e3, 891e3],
                24,
            )?;
            c.quad_configs = vec![QuadConfig::XP];
            c.eom_off_runs = Some(4);
            Ok(c)
        }
        "even-control" => base(
            name,
            ModeLayout::new(200, 100e3, 90e3, 100e3, 2)?,
            SqueezeModel::default(),
            &[100e3, 200e3],
            12,
        ),
        _ => Err(CvlError::Config(format!("unknown preset {name:?}; available: {}", PRESETS.join(", ")))),
    }
}
