use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CvlError, Result};

/// Quadrature ordering tag carried by every exported matrix.
pub const ORDERING: &str = "Xp,Xc,Pp,Pc";

/// Frequency-bin geometry. Bin `i` (0-based, guards included) is centred at
/// `start_center_hz + i * spacing_hz`; bins `G..G+M` are the interior modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeLayout {
    pub mode_count: usize,
    pub spacing_hz: f64,
    pub bin_width_hz: f64,
    pub start_center_hz: f64,
    pub guard_modes: usize,
}

impl ModeLayout {
    pub fn new(
        mode_count: usize,
        spacing_hz: f64,
        bin_width_hz: f64,
        start_center_hz: f64,
        guard_modes: usize,
    ) -> Result<Self> {
        let layout = Self { mode_count, spacing_hz, bin_width_hz, start_center_hz, guard_modes };
        layout.validate()?;
        Ok(layout)
    }

    /// Layout with the customary 90% bin fill.
    pub fn with_fill(mode_count: usize, spacing_hz: f64, start_center_hz: f64, guard_modes: usize) -> Result<Self> {
        Self::new(mode_count, spacing_hz, 0.9 * spacing_hz, start_center_hz, guard_modes)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |c: bool, msg: &str| if c { Ok(()) } else { Err(CvlError::Layout(msg.to_string())) };
        ok(self.mode_count >= 2, "mode_count must be at least 2")?;
        ok(self.spacing_hz.is_finite() && self.spacing_hz > 0.0, "spacing must be positive")?;
        ok(self.bin_width_hz.is_finite() && self.bin_width_hz > 0.0, "bin width must be positive")?;
        ok(self.bin_width_hz < self.spacing_hz, "bin width must be smaller than the spacing")?;
        ok(
            self.start_center_hz.is_finite() && self.start_center_hz >= self.bin_width_hz / 2.0,
            "first bin would overlap negative frequencies",
        )
    }

    /// Number of simulated bins, guards included.
    pub fn bins(&self) -> usize {
        self.mode_count + 2 * self.guard_modes
    }

    /// Phase-space dimension 4(M+2G).
    pub fn dim(&self) -> usize {
        4 * self.bins()
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.start_center_hz + bin as f64 * self.spacing_hz
    }

    pub fn interior(&self) -> Range<usize> {
        self.guard_modes..self.guard_modes + self.mode_count
    }

    pub fn is_interior(&self, bin: usize) -> bool {
        self.interior().contains(&bin)
    }

    pub fn top_edge_hz(&self) -> f64 {
        self.center(self.bins() - 1) + self.bin_width_hz / 2.0
    }

    pub fn xp(&self, bin: usize) -> usize {
        bin
    }
    pub fn xc(&self, bin: usize) -> usize {
        self.bins() + bin
    }
    pub fn pp(&self, bin: usize) -> usize {
        2 * self.bins() + bin
    }
    pub fn pc(&self, bin: usize) -> usize {
        3 * self.bins() + bin
    }

    /// Bin offset corresponding to a drive frequency; it must be an integer
    /// multiple of the spacing.
    pub fn offset_of(&self, frequency_hz: f64) -> Result<usize> {
        let k = frequency_hz / self.spacing_hz;
        let kr = k.round();
        if !(kr >= 1.0) || (k - kr).abs() > 1e-9 * kr.max(1.0) {
            return Err(CvlError::Drive(format!(
                "tone at {frequency_hz} Hz is not a positive multiple of the {} Hz spacing",
                self.spacing_hz
            )));
        }
        Ok(kr as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveTone {
    pub frequency_hz: f64,
    pub mod_index: f64,
    #[serde(default)]
    pub phase: f64,
}

impl DriveTone {
    pub fn new(frequency_hz: f64, mod_index: f64) -> Self {
        Self { frequency_hz, mod_index, phase: 0.0 }
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Beam {
    Probe,
    Conjugate,
    BothHalved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    pub tones: Vec<DriveTone>,
    pub target_beam: Beam,
}

impl DriveSpec {
    pub fn new(tones: Vec<DriveTone>, target_beam: Beam) -> Result<Self> {
        let d = Self { tones, target_beam };
        d.validate()?;
        Ok(d)
    }

    pub fn off() -> Self {
        Self { tones: Vec::new(), target_beam: Beam::Conjugate }
    }

    /// Equal-index tones on the conjugate beam.
    pub fn uniform(frequencies_hz: &[f64], mod_index: f64) -> Result<Self> {
        Self::new(
            frequencies_hz.iter().map(|&f| DriveTone::new(f, mod_index)).collect(),
            Beam::Conjugate,
        )
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.tones {
            if !(t.mod_index >= 0.0) || !t.mod_index.is_finite() {
                return Err(CvlError::Drive(format!("modulation index {} must be finite and >= 0", t.mod_index)));
            }
            if !(t.frequency_hz > 0.0) || !t.phase.is_finite() {
                return Err(CvlError::Drive("tone frequency must be positive and phase finite".into()));
            }
        }
        for w in self.tones.windows(2) {
            if !(w[1].frequency_hz > w[0].frequency_hz) {
                return Err(CvlError::Drive("tone frequencies must be strictly increasing".into()));
            }
        }
        Ok(())
    }

    pub fn is_off(&self) -> bool {
        self.tones.iter().all(|t| t.mod_index == 0.0)
    }

    pub fn offsets(&self, layout: &ModeLayout) -> Result<Vec<usize>> {
        self.tones.iter().map(|t| layout.offset_of(t.frequency_hz)).collect()
    }

    /// Indices above 0.5 stop being small; callers may want to warn.
    pub fn exceeds_small_index(&self) -> bool {
        self.tones.iter().any(|t| t.mod_index > 0.5)
    }

    pub fn with_beam(&self, beam: Beam) -> Self {
        Self { tones: self.tones.clone(), target_beam: beam }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqueezeProfile {
    pub r_of_bin: Vec<f64>,
}

impl SqueezeProfile {
    pub fn new(r_of_bin: Vec<f64>) -> Result<Self> {
        if let Some(r) = r_of_bin.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return Err(CvlError::Config(format!("squeezing parameter {r} must be finite and >= 0")));
        }
        Ok(Self { r_of_bin })
    }

    pub fn flat(layout: &ModeLayout, r: f64) -> Result<Self> {
        Self::new(vec![r; layout.bins()])
    }

    /// r giving an EPR variance of `db` (negative) relative to shot noise.
    pub fn r_for_db(db: f64) -> f64 {
        -(10f64.powf(db / 10.0)).ln() / 4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Absolute,
    ShotNormalized,
}

/// Linear phase-space map in (Xp, Xc, Pp, Pc) block ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMatrix {
    pub bins: usize,
    pub entries: DMatrix<f64>,
}

impl SymplecticMatrix {
    pub fn identity(bins: usize) -> Self {
        Self { bins, entries: DMatrix::identity(4 * bins, 4 * bins) }
    }

    pub fn dim(&self) -> usize {
        4 * self.bins
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub bins: usize,
    pub entries: DMatrix<f64>,
    pub normalization: Normalization,
}

impl CovarianceMatrix {
    pub fn new(bins: usize, entries: DMatrix<f64>, normalization: Normalization) -> Result<Self> {
        if entries.nrows() != 4 * bins || entries.ncols() != 4 * bins {
            return Err(CvlError::Dimension(format!(
                "covariance is {}x{}, expected {}x{}",
                entries.nrows(),
                entries.ncols(),
                4 * bins,
                4 * bins
            )));
        }
        Ok(Self { bins, entries, normalization })
    }

    pub fn dim(&self) -> usize {
        4 * self.bins
    }

    /// Vacuum variance in the current normalization.
    pub fn shot_level(&self) -> f64 {
        match self.normalization {
            Normalization::Absolute => 0.5,
            Normalization::ShotNormalized => 1.0,
        }
    }

    pub fn to_shot_normalized(&self) -> Self {
        match self.normalization {
            Normalization::ShotNormalized => self.clone(),
            Normalization::Absolute => Self {
                bins: self.bins,
                entries: &self.entries * 2.0,
                normalization: Normalization::ShotNormalized,
            },
        }
    }

    pub fn to_absolute(&self) -> Self {
        match self.normalization {
            Normalization::Absolute => self.clone(),
            Normalization::ShotNormalized => Self {
                bins: self.bins,
                entries: &self.entries * 0.5,
                normalization: Normalization::Absolute,
            },
        }
    }

    /// X quadrant (rows and columns 0..2n).
    pub fn xx(&self) -> DMatrix<f64> {
        let h = 2 * self.bins;
        self.entries.view((0, 0), (h, h)).into_owned()
    }
    pub fn xp(&self) -> DMatrix<f64> {
        let h = 2 * self.bins;
        self.entries.view((0, h), (h, h)).into_owned()
    }
    pub fn pp(&self) -> DMatrix<f64> {
        let h = 2 * self.bins;
        self.entries.view((h, h), (h, h)).into_owned()
    }

    pub fn asymmetry(&self) -> f64 {
        let scale = self.entries.amax().max(f64::MIN_POSITIVE);
        (&self.entries - self.entries.transpose()).amax() / scale
    }
}
