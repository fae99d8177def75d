//! Homodyne trace synthesis. Each positive FFT frequency gets a complex
//! Gaussian (Xp, Xc, Pp, Pc) sample with the two-mode-squeezed covariance of
//! the local squeezing parameter; EOM tones then couple frequencies offset by
//! the tone, the conjugate detector is delayed, white electronic noise is
//! added and both channels are digitized.
//!
//! Units: shot noise is unit variance per time sample over the full band.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{CvlError, Result};
use crate::gaussian::{bessel_j, Beam, DriveSpec, ModeLayout, SqueezeProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SqueezeModel {
    Flat { r: f64 },
    /// r0 · exp(-(f/bandwidth)²), optionally times f²/(f² + f_low²).
    Smooth { r0: f64, bandwidth_hz: f64, low_rolloff_hz: Option<f64> },
    /// One value per simulated bin; gaps take the nearer bin's value.
    Bins { r_of_bin: Vec<f64> },
}

impl Default for SqueezeModel {
    fn default() -> Self {
        SqueezeModel::Smooth { r0: 0.2, bandwidth_hz: 10e6, low_rolloff_hz: None }
    }
}

impl SqueezeModel {
    pub fn r_at(&self, f: f64, layout: &ModeLayout) -> f64 {
        match self {
            SqueezeModel::Flat { r } => *r,
            SqueezeModel::Smooth { r0, bandwidth_hz, low_rolloff_hz } => {
                let hi = (-(f / bandwidth_hz).powi(2)).exp();
                let lo = low_rolloff_hz.map_or(1.0, |fl| f * f / (f * f + fl * fl));
                r0 * hi * lo
            }
            SqueezeModel::Bins { r_of_bin } => {
                let x = ((f - layout.start_center_hz) / layout.spacing_hz).round();
                let i = x.clamp(0.0, (r_of_bin.len() - 1) as f64) as usize;
                r_of_bin[i]
            }
        }
    }

    pub fn profile(&self, layout: &ModeLayout) -> Result<SqueezeProfile> {
        SqueezeProfile::new((0..layout.bins()).map(|i| self.r_at(layout.center(i), layout)).collect())
    }

    pub fn validate(&self, layout: &ModeLayout) -> Result<()> {
        let bad = |m: &str| Err(CvlError::Config(m.to_string()));
        match self {
            SqueezeModel::Flat { r } if !(r.is_finite() && *r >= 0.0) => bad("flat r must be finite and >= 0"),
            SqueezeModel::Smooth { r0, bandwidth_hz, .. } if !(r0.is_finite() && *r0 >= 0.0 && *bandwidth_hz > 0.0) => {
                bad("smooth profile needs r0 >= 0 and a positive bandwidth")
            }
            SqueezeModel::Bins { r_of_bin } if r_of_bin.len() != layout.bins() => {
                bad("per-bin profile length must equal the number of simulated bins")
            }
            _ => self.profile(layout).map(|_| ()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuadConfig {
    XX,
    PP,
    XP,
}

impl QuadConfig {
    pub fn labels(&self) -> (char, char) {
        match self {
            QuadConfig::XX => ('X', 'X'),
            QuadConfig::PP => ('P', 'P'),
            QuadConfig::XP => ('X', 'P'),
        }
    }

    pub fn from_labels(p: char, c: char) -> Result<Self> {
        match (p, c) {
            ('X', 'X') => Ok(QuadConfig::XX),
            ('P', 'P') => Ok(QuadConfig::PP),
            ('X', 'P') => Ok(QuadConfig::XP),
            _ => Err(CvlError::Format(format!("unsupported quadrature pair {p}{c}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            QuadConfig::XX => "XX",
            QuadConfig::PP => "PP",
            QuadConfig::XP => "XP",
        }
    }
}

/// Classical excess noise below `corner_hz` on every quadrature of both
/// beams, `level_db` above shot noise. The EOM up-mixes it into the bins
/// that sit on the drive frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowFrequencyExcess {
    pub corner_hz: f64,
    pub level_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub layout: ModeLayout,
    pub squeeze: SqueezeModel,
    pub drive: DriveSpec,
    pub quad_config: QuadConfig,
    pub delay_s: f64,
    /// Electronic noise floor relative to shot noise; `None` disables it.
    pub elec_noise_db: Option<f64>,
    pub sample_dt_s: f64,
    pub samples: usize,
    pub digitizer_bits: u32,
    pub fullscale: f64,
    pub seed: u64,
    #[serde(default)]
    pub phase_jitter_rad: f64,
    #[serde(default)]
    pub lf_excess: Option<LowFrequencyExcess>,
}

impl SynthConfig {
    pub fn new(layout: ModeLayout, squeeze: SqueezeModel, drive: DriveSpec, quad_config: QuadConfig, seed: u64) -> Self {
        Self {
            layout,
            squeeze,
            drive,
            quad_config,
            delay_s: 10.4e-9,
            elec_noise_db: Some(-6.0),
            sample_dt_s: 1e-8,
            samples: 1_000_000,
            digitizer_bits: 8,
            fullscale: 5.0,
            seed,
            phase_jitter_rad: 0.0,
            lf_excess: None,
        }
    }

    pub fn window_s(&self) -> f64 {
        self.samples as f64 * self.sample_dt_s
    }

    pub fn df(&self) -> f64 {
        1.0 / self.window_s()
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        self.drive.validate()?;
        self.squeeze.validate(&self.layout)?;
        let bad = |m: String| Err(CvlError::Config(m));
        if self.samples < 16 || self.samples % 2 != 0 {
            return bad(format!("sample count {} must be even and at least 16", self.samples));
        }
        if !(self.sample_dt_s > 0.0) {
            return bad("sample interval must be positive".into());
        }
        if !(2..=16).contains(&self.digitizer_bits) {
            return bad(format!("digitizer bits {} outside 2..=16", self.digitizer_bits));
        }
        if !(self.fullscale > 0.0) {
            return bad("fullscale must be positive".into());
        }
        if !self.delay_s.is_finite() || self.delay_s < 0.0 {
            return bad("delay must be finite and >= 0".into());
        }
        let nyquist = 0.5 / self.sample_dt_s;
        if self.layout.top_edge_hz() >= nyquist {
            return bad(format!("top bin edge {} Hz is above Nyquist {nyquist} Hz", self.layout.top_edge_hz()));
        }
        let t = self.window_s();
        for tone in &self.drive.tones {
            let periods = tone.frequency_hz * t;
            if (periods - periods.round()).abs() > 1e-6 {
                return bad(format!("window holds {periods} periods of the {} Hz tone", tone.frequency_hz));
            }
        }
        self.drive.offsets(&self.layout)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Signal,
    Shot,
    Dark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub config: SynthConfig,
    pub kind: TraceKind,
    pub probe_quad: char,
    pub conjugate_quad: char,
    pub clip_fraction: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub probe: Vec<f64>,
    pub conjugate: Vec<f64>,
    pub meta: TraceMeta,
}

impl TraceSet {
    pub fn quantization_step(&self) -> f64 {
        quantization_step(self.meta.config.digitizer_bits, self.meta.config.fullscale)
    }
}

pub fn synth_traces(config: &SynthConfig) -> Result<TraceSet> {
    synthesize(config, TraceKind::Signal)
}

/// Vacuum on both signal ports; electronic noise is still present.
pub fn shot_traces(config: &SynthConfig) -> Result<TraceSet> {
    synthesize(config, TraceKind::Shot)
}

/// Electronic noise only.
pub fn dark_traces(config: &SynthConfig) -> Result<TraceSet> {
    synthesize(config, TraceKind::Dark)
}

/// Deterministic per-run seed from a base seed and a run tag.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(tag);
    rng.random()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Unit-power circular complex normal.
fn cnormal(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(normal(rng), normal(rng)) * std::f64::consts::FRAC_1_SQRT_2
}

struct Spectra {
    xp: Vec<Complex64>,
    xc: Vec<Complex64>,
    pp: Vec<Complex64>,
    pc: Vec<Complex64>,
}

fn draw_spectra(cfg: &SynthConfig, kind: TraceKind, rng: &mut ChaCha8Rng) -> Spectra {
    let n = cfg.samples;
    let nf = n / 2 + 1;
    let df = cfg.df();
    let scale = (n as f64).sqrt();
    let mut s = Spectra {
        xp: vec![Complex64::default(); nf],
        xc: vec![Complex64::default(); nf],
        pp: vec![Complex64::default(); nf],
        pc: vec![Complex64::default(); nf],
    };
    let excess = match (kind, cfg.lf_excess) {
        (TraceKind::Signal, Some(e)) => Some((e.corner_hz, 10f64.powf(e.level_db / 10.0).sqrt())),
        _ => None,
    };
    let mut cached = (f64::NAN, 0.0, 0.0, 0.0);
    for k in 0..nf {
        let f = k as f64 * df;
        let r = if kind == TraceKind::Signal { cfg.squeeze.r_at(f, &cfg.layout) } else { 0.0 };
        if r != cached.0 {
            // Cholesky of [[C, S], [S, C]] with C = cosh 4r, S = sinh 4r.
            let (c, sh) = ((4.0 * r).cosh(), (4.0 * r).sinh());
            let a = c.sqrt();
            cached = (r, a, sh / a, 1.0 / a);
        }
        let (_, a, b, c) = cached;
        let real_bin = k == 0 || k == nf - 1;
        let mut z = [Complex64::default(); 4];
        for zi in z.iter_mut() {
            *zi = if real_bin { Complex64::new(normal(rng), 0.0) } else { cnormal(rng) };
        }
        s.xp[k] = scale * a * z[0];
        s.xc[k] = scale * (b * z[0] + c * z[1]);
        s.pp[k] = scale * a * z[2];
        s.pc[k] = scale * (-b * z[2] + c * z[3]);
        if let Some((corner, amp)) = excess {
            if f < corner {
                for q in [&mut s.xp[k], &mut s.xc[k], &mut s.pp[k], &mut s.pc[k]] {
                    let e = if real_bin { Complex64::new(normal(rng), 0.0) } else { cnormal(rng) };
                    *q += scale * amp * e;
                }
            }
        }
    }
    s
}

/// Hermitian extension of a half spectrum: index j of the full length-n DFT.
fn full(h: &[Complex64], n: usize, j: i64) -> Complex64 {
    let j = j.rem_euclid(n as i64) as usize;
    if j < h.len() {
        h[j]
    } else {
        h[n - j].conj()
    }
}

/// X' = J0 X + 2 J1 cos(Ωt + φ) P, P' = J0 P - 2 J1 cos(Ωt + φ) X, expressed
/// as couplings between DFT indices k and k ± q.
fn eom_tone(x: &mut Vec<Complex64>, p: &mut Vec<Complex64>, n: usize, q: usize, m: f64, phase: f64) {
    let (j0, j1) = (bessel_j(0, m), bessel_j(1, m));
    let (up, dn) = (Complex64::from_polar(j1, phase), Complex64::from_polar(j1, -phase));
    let q = q as i64;
    let mix = |h: &[Complex64], k: i64| up * full(h, n, k - q) + dn * full(h, n, k + q);
    let nx: Vec<Complex64> = (0..x.len() as i64).map(|k| j0 * x[k as usize] + mix(p, k)).collect();
    let np: Vec<Complex64> = (0..p.len() as i64).map(|k| j0 * p[k as usize] - mix(x, k)).collect();
    *x = nx;
    *p = np;
}

fn apply_drive(s: &mut Spectra, cfg: &SynthConfig) {
    let n = cfg.samples;
    let df = cfg.df();
    for tone in &cfg.drive.tones {
        let q = (tone.frequency_hz / df).round() as usize;
        match cfg.drive.target_beam {
            Beam::Probe => eom_tone(&mut s.xp, &mut s.pp, n, q, tone.mod_index, tone.phase),
            Beam::Conjugate => eom_tone(&mut s.xc, &mut s.pc, n, q, tone.mod_index, tone.phase),
            Beam::BothHalved => {
                eom_tone(&mut s.xp, &mut s.pp, n, q, 0.5 * tone.mod_index, tone.phase);
                eom_tone(&mut s.xc, &mut s.pc, n, q, 0.5 * tone.mod_index, tone.phase);
            }
        }
    }
}

/// Multiplies by exp(-2πi f τ) (a delay by τ).
pub fn phase_ramp(h: &mut [Complex64], df: f64, tau: f64) {
    for (k, v) in h.iter_mut().enumerate() {
        *v *= Complex64::from_polar(1.0, -2.0 * PI * k as f64 * df * tau);
    }
}

fn irfft(h: &mut [Complex64], n: usize) -> Vec<f64> {
    let mut planner = RealFftPlanner::<f64>::new();
    let c2r = planner.plan_fft_inverse(n);
    let last = h.len() - 1;
    h[0].im = 0.0;
    h[last].im = 0.0;
    let mut out = vec![0.0; n];
    c2r.process(h, &mut out).expect("length matches plan");
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

fn synthesize(cfg: &SynthConfig, kind: TraceKind) -> Result<TraceSet> {
    cfg.validate()?;
    let n = cfg.samples;
    let df = cfg.df();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (pl, cl) = cfg.quad_config.labels();

    let (mut probe, mut conj) = if kind == TraceKind::Dark {
        (vec![0.0; n], vec![0.0; n])
    } else {
        let mut s = draw_spectra(cfg, kind, &mut rng);
        if kind == TraceKind::Signal {
            apply_drive(&mut s, cfg);
        }
        let frac = cfg.delay_s / cfg.sample_dt_s;
        let whole = frac.floor();
        let tau_frac = (frac - whole) * cfg.sample_dt_s;
        if tau_frac != 0.0 {
            phase_ramp(&mut s.xc, df, tau_frac);
            phase_ramp(&mut s.pc, df, tau_frac);
        }
        let (probe, mut conj) = if cfg.phase_jitter_rad > 0.0 && kind == TraceKind::Signal {
            let (xp, pp) = (irfft(&mut s.xp, n), irfft(&mut s.pp, n));
            let (xc, pc) = (irfft(&mut s.xc, n), irfft(&mut s.pc, n));
            let sigma = cfg.phase_jitter_rad;
            let mut pick = |x: &[f64], p: &[f64], label: char| -> Vec<f64> {
                x.iter()
                    .zip(p)
                    .map(|(&xv, &pv)| {
                        let d = sigma * normal(&mut rng);
                        let (a, b) = if label == 'X' { (xv, pv) } else { (pv, -xv) };
                        a * d.cos() + b * d.sin()
                    })
                    .collect()
            };
            (pick(&xp, &pp, pl), pick(&xc, &pc, cl))
        } else {
            let probe = if pl == 'X' { irfft(&mut s.xp, n) } else { irfft(&mut s.pp, n) };
            let conj = if cl == 'X' { irfft(&mut s.xc, n) } else { irfft(&mut s.pc, n) };
            (probe, conj)
        };
        conj.rotate_right((whole as usize) % n);
        (probe, conj)
    };

    if let Some(db) = cfg.elec_noise_db {
        let sd = 10f64.powf(db / 20.0);
        for v in probe.iter_mut().chain(conj.iter_mut()) {
            *v += sd * normal(&mut rng);
        }
    }
    let qp = quantize(&probe, cfg.digitizer_bits, cfg.fullscale);
    let qc = quantize(&conj, cfg.digitizer_bits, cfg.fullscale);
    Ok(TraceSet {
        probe: qp.values,
        conjugate: qc.values,
        meta: TraceMeta {
            config: cfg.clone(),
            kind,
            probe_quad: pl,
            conjugate_quad: cl,
            clip_fraction: [qp.clip_fraction, qc.clip_fraction],
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub values: Vec<f64>,
    pub codes: Vec<i16>,
    pub step: f64,
    pub clip_fraction: f64,
}

pub fn quantization_step(bits: u32, fullscale: f64) -> f64 {
    fullscale / ((1i32 << (bits - 1)) - 1) as f64
}

/// Mid-tread uniform quantizer with codes in ±(2^(bits-1) - 1); samples
/// beyond ±fullscale are clipped and counted.
pub fn quantize(trace: &[f64], bits: u32, fullscale: f64) -> Quantized {
    let step = quantization_step(bits, fullscale);
    let max = ((1i32 << (bits - 1)) - 1) as f64;
    let mut clipped = 0usize;
    let codes: Vec<i16> = trace
        .iter()
        .map(|&x| {
            if x.abs() > fullscale {
                clipped += 1;
            }
            (x / step).round().clamp(-max, max) as i16
        })
        .collect();
    let values = codes.iter().map(|&c| c as f64 * step).collect();
    Quantized { values, codes, step, clip_fraction: clipped as f64 / trace.len().max(1) as f64 }
}
