//! Analysis pipeline for digitized homodyne traces.
//!
//! Each frequency bin is cut out of the FFT with a sharp mask and kept as a
//! short complex baseband series whose centre frequency is moved to a common
//! demodulation reference (the first simulated bin). The covariance of two
//! bins is ½ Re⟨a b*⟩, which equals the covariance of the band-limited real
//! signals after common demodulation.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_integer::Integer;
use realfft::RealFftPlanner;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CvlError, Result};
use crate::gaussian::{CovarianceMatrix, DriveSpec, ModeLayout, Normalization};
use crate::nullifier::to_db;
use crate::synth::{QuadConfig, TraceKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub n: usize,
    pub dt: f64,
    pub coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn df(&self) -> f64 {
        1.0 / (self.n as f64 * self.dt)
    }

    pub fn window_s(&self) -> f64 {
        self.n as f64 * self.dt
    }
}

/// Unnormalized real-input DFT.
pub fn spectrum(trace: &[f64], dt: f64) -> Spectrum {
    let n = trace.len();
    let mut planner = RealFftPlanner::<f64>::new();
    let r2c = planner.plan_fft_forward(n);
    let mut input = trace.to_vec();
    let mut coeffs = r2c.make_output_vec();
    r2c.process(&mut input, &mut coeffs).expect("length matches plan");
    Spectrum { n, dt, coeffs }
}

/// Undoes a delay of `tau` seconds (multiplies by exp(+2πi f τ)).
pub fn compensate_delay(s: &mut Spectrum, tau: f64) {
    let df = s.df();
    for (k, v) in s.coeffs.iter_mut().enumerate() {
        *v *= Complex64::from_polar(1.0, 2.0 * PI * k as f64 * df * tau);
    }
}

/// Inclusive DFT index range kept for bin `i`.
fn bin_range(layout: &ModeLayout, i: usize, df: f64) -> (usize, usize) {
    let c = layout.center(i);
    let w = layout.bin_width_hz / 2.0;
    let lo = ((c - w) / df - 1e-9).ceil().max(0.0) as usize;
    let hi = ((c + w) / df + 1e-9).floor() as usize;
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSignal {
    pub layout: ModeLayout,
    pub demod_hz: f64,
    pub window_s: f64,
    /// DFT resolution of the source trace.
    pub df: f64,
    /// Per bin: complex baseband samples at times n·window/len.
    pub bins: Vec<Vec<Complex64>>,
    /// Per bin: DFT index of the bin centre.
    pub center_index: Vec<i64>,
    /// Per bin: masked energy Σ|X_k|² of the source coefficients.
    pub mask_energy: Vec<f64>,
}

impl BinnedSignal {
    pub fn len(&self) -> usize {
        self.bins.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step_s(&self) -> f64 {
        self.window_s / self.len() as f64
    }

    /// Energy of bin `i` recovered from its baseband series (Parseval).
    pub fn baseband_energy(&self, i: usize, n_source: usize) -> f64 {
        let l = self.len() as f64;
        let s: f64 = self.bins[i].iter().map(|z| z.norm_sqr()).sum();
        s * (n_source as f64).powi(2) / (4.0 * l)
    }

    /// Multiplies every bin by exp(iφ).
    pub fn rotated(&self, phase: f64) -> Self {
        let r = Complex64::from_polar(1.0, phase);
        let mut out = self.clone();
        out.bins.iter_mut().flatten().for_each(|z| *z *= r);
        out
    }

    /// Offset (in DFT indices) of bin `i` from the demodulation reference.
    fn demod_offset(&self, i: usize) -> i64 {
        self.center_index[i] - (self.demod_hz / self.df).round() as i64
    }
}

pub fn bin_filter(trace: &[f64], dt: f64, layout: &ModeLayout) -> Result<BinnedSignal> {
    bin_filter_spectrum(&spectrum(trace, dt), layout)
}

pub fn bin_filter_spectrum(spec: &Spectrum, layout: &ModeLayout) -> Result<BinnedSignal> {
    bin_filter_with_demod(spec, layout, layout.center(0))
}

/// As [`bin_filter_spectrum`] with an explicit common demodulation
/// frequency. Covariances do not depend on this choice.
pub fn bin_filter_with_demod(spec: &Spectrum, layout: &ModeLayout, demod_hz: f64) -> Result<BinnedSignal> {
    layout.validate()?;
    let df = spec.df();
    let nyquist = 0.5 / spec.dt;
    if layout.top_edge_hz() >= nyquist {
        return Err(CvlError::Layout(format!(
            "top bin edge {} Hz is above Nyquist {nyquist} Hz",
            layout.top_edge_hz()
        )));
    }
    let nb = layout.bins();
    let ranges: Vec<(usize, usize)> = (0..nb).map(|i| bin_range(layout, i, df)).collect();
    let count = ranges.iter().map(|(lo, hi)| hi + 1 - lo).max().unwrap_or(1);
    let len = count.next_power_of_two();
    let d = (demod_hz / df).round() as i64;
    let scale = 2.0 / spec.n as f64;
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(len);
    let mut bins = Vec::with_capacity(nb);
    let mut center_index = Vec::with_capacity(nb);
    let mut mask_energy = Vec::with_capacity(nb);
    for (i, &(lo, hi)) in ranges.iter().enumerate() {
        let ci = (layout.center(i) / df).round() as i64;
        let mut buf = vec![Complex64::default(); len];
        let mut energy = 0.0;
        for k in lo..=hi {
            let pos = (d + k as i64 - ci).rem_euclid(len as i64) as usize;
            buf[pos] = spec.coeffs[k] * scale;
            energy += spec.coeffs[k].norm_sqr();
        }
        ifft.process(&mut buf);
        bins.push(buf);
        center_index.push(ci);
        mask_energy.push(energy);
    }
    Ok(BinnedSignal { layout: *layout, demod_hz, window_s: spec.window_s(), df, bins, center_index, mask_energy })
}

/// Number of leading samples (out of `len` spanning `window_s`) covering a
/// whole number of periods of every tone, and whether the cut is exact.
/// Trims at most one common period from the tail.
pub fn whole_period_len(len: usize, window_s: f64, tones_hz: &[f64]) -> (usize, bool) {
    if tones_hz.is_empty() || len == 0 {
        return (len, true);
    }
    let integral = tones_hz.iter().all(|f| (f - f.round()).abs() < 1e-6 && f.round() >= 1.0);
    let g = if integral {
        tones_hz.iter().map(|f| f.round() as u64).fold(0u64, |a, b| a.gcd(&b)) as f64
    } else {
        tones_hz.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let periods = window_s * g;
    let is_int = |x: f64| (x - x.round()).abs() < 1e-9 * x.abs().max(1.0);
    if is_int(periods) {
        return (len, true);
    }
    let per_period = (len as f64 / periods).ceil() as usize;
    for m in (len.saturating_sub(per_period)..len).rev() {
        if is_int(m as f64 * periods / len as f64) {
            return (m, true);
        }
    }
    ((periods.floor() / periods * len as f64).floor() as usize, false)
}

/// Stacks the first `m` samples of each bin as columns [Re; Im] and
/// [Im; -Re] so that one GEMM yields Re⟨a b*⟩ or Im⟨a b*⟩.
fn stacked(sig: &BinnedSignal, m: usize, imag: bool) -> DMatrix<f64> {
    let nb = sig.bins.len();
    let mut out = DMatrix::zeros(2 * m, nb);
    for (j, b) in sig.bins.iter().enumerate() {
        let mut col = out.column_mut(j);
        for (t, z) in b.iter().take(m).enumerate() {
            if imag {
                col[t] = z.im;
                col[m + t] = -z.re;
            } else {
                col[t] = z.re;
                col[m + t] = z.im;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovBlock {
    /// a.bins × b.bins, entry (i, j) = ½ Re⟨a_i b_j*⟩.
    pub cov: DMatrix<f64>,
    pub samples_used: usize,
    pub samples_trimmed: usize,
    pub exact_periods: bool,
}

pub fn quad_covariance(a: &BinnedSignal, b: &BinnedSignal, tones_hz: &[f64]) -> Result<CovBlock> {
    if a.len() != b.len() || (a.window_s - b.window_s).abs() > 1e-12 * a.window_s {
        return Err(CvlError::Dimension("binned signals do not share a window".into()));
    }
    let (m, exact) = whole_period_len(a.len(), a.window_s, tones_hz);
    let sa = stacked(a, m, false);
    let sb = if std::ptr::eq(a, b) { sa.clone() } else { stacked(b, m, false) };
    let cov = sa.tr_mul(&sb) * (0.5 / m as f64);
    Ok(CovBlock { cov, samples_used: m, samples_trimmed: a.len() - m, exact_periods: exact })
}

/// Diagonal only: ½⟨|a_i|²⟩.
pub fn bin_variances(a: &BinnedSignal, tones_hz: &[f64]) -> Vec<f64> {
    let (m, _) = whole_period_len(a.len(), a.window_s, tones_hz);
    a.bins.iter().map(|b| 0.5 * b.iter().take(m).map(|z| z.norm_sqr()).sum::<f64>() / m as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockIn {
    pub re: f64,
    pub im: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl LockIn {
    fn from_value(v: Complex64) -> Self {
        Self { re: v.re, im: v.im, amplitude: v.norm(), phase: v.arg() }
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    /// Signal at reference phase φ: Re(L e^{-iφ}).
    pub fn at_phase(&self, phase: f64) -> f64 {
        (self.value() * Complex64::from_polar(1.0, -phase)).re
    }
}

/// Software lock-in between bin `bx` of `x` and bin `bp` of `p` at the
/// difference frequency Ω: averages x(t)·p(t)* against cos Ωt and sin Ωt
/// over whole periods.
pub fn lockin_xp(x: &BinnedSignal, bx: usize, p: &BinnedSignal, bp: usize, tone_hz: f64) -> Result<LockIn> {
    if x.len() != p.len() {
        return Err(CvlError::Dimension("binned signals differ in length".into()));
    }
    let fx = x.center_index[bx] as f64 * x.df;
    let fp = p.center_index[bp] as f64 * p.df;
    if ((fx - fp).abs() - tone_hz).abs() > 1e-6 * tone_hz.max(1.0) {
        return Err(CvlError::Drive(format!("bins at {fx} Hz and {fp} Hz are not {tone_hz} Hz apart")));
    }
    let (m, _) = whole_period_len(x.len(), x.window_s, &[tone_hz]);
    let l = x.len() as f64;
    // Analytic signals at true frequency (relative to the common demod) and
    // the reference at the difference frequency, on the decimated grid.
    let (ox, op) = (x.demod_offset(bx) as f64, p.demod_offset(bp) as f64);
    let dq = (fx - fp) / x.df;
    let mut acc = Complex64::default();
    for t in 0..m {
        let ph = 2.0 * PI * t as f64 / l;
        let zx = x.bins[bx][t] * Complex64::from_polar(1.0, ph * ox);
        let zp = p.bins[bp][t] * Complex64::from_polar(1.0, ph * op);
        let reference = Complex64::new((ph * dq).cos(), -(ph * dq).sin());
        acc += zx * zp.conj() * reference;
    }
    Ok(LockIn::from_value(acc * (0.5 / m as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EprSign {
    /// var(Xp - Xc)
    Difference,
    /// var(Pp + Pc)
    Sum,
}

impl From<QuadConfig> for EprSign {
    fn from(q: QuadConfig) -> Self {
        match q {
            QuadConfig::PP => EprSign::Sum,
            _ => EprSign::Difference,
        }
    }
}

/// Cross-spectral sums over the kept coefficients of every bin, reusable
/// across candidate delays and accumulable across runs.
#[derive(Debug, Clone)]
pub struct DelayObjective {
    df: f64,
    sign: f64,
    /// Per bin: (indices, P·C* products) and Σ(|P|² + |C|²).
    bins: Vec<(Vec<f64>, Vec<Complex64>, f64)>,
}

impl DelayObjective {
    pub fn new(layout: &ModeLayout, df: f64, sign: EprSign) -> Self {
        let bins = (0..layout.bins())
            .map(|i| {
                let (lo, hi) = bin_range(layout, i, df);
                ((lo..=hi).map(|k| k as f64).collect(), vec![Complex64::default(); hi + 1 - lo], 0.0)
            })
            .collect();
        Self { df, sign: if sign == EprSign::Difference { -1.0 } else { 1.0 }, bins }
    }

    pub fn add(&mut self, probe: &Spectrum, conj: &Spectrum) {
        for (ks, cross, power) in self.bins.iter_mut() {
            for (c, &k) in cross.iter_mut().zip(ks.iter()) {
                let k = k as usize;
                *c += probe.coeffs[k] * conj.coeffs[k].conj();
                *power += probe.coeffs[k].norm_sqr() + conj.coeffs[k].norm_sqr();
            }
        }
    }

    /// Mean over bins of the normalized EPR variance after compensating a
    /// conjugate delay of `tau`.
    pub fn value(&self, tau: f64) -> f64 {
        let mut total = 0.0;
        for (ks, cross, power) in &self.bins {
            let mut s = 0.0;
            for (c, &k) in cross.iter().zip(ks) {
                s += (c * Complex64::from_polar(1.0, -2.0 * PI * k * self.df * tau)).re;
            }
            total += 1.0 + 2.0 * self.sign * s / power;
        }
        total / self.bins.len() as f64
    }

    /// Grid scan then golden-section refinement.
    pub fn minimize(&self, range_s: (f64, f64), step_s: f64) -> Result<f64> {
        let (a, b) = range_s;
        let steps = ((b - a) / step_s).ceil().max(1.0) as usize;
        let grid: Vec<(f64, f64)> = (0..=steps)
            .map(|i| {
                let t = a + (b - a) * i as f64 / steps as f64;
                (t, self.value(t))
            })
            .collect();
        let (imin, &(tmin, vmin)) =
            grid.iter().enumerate().min_by(|x, y| x.1 .1.total_cmp(&y.1 .1)).expect("nonempty grid");
        // Uncorrelated channels sit at 1 for every delay.
        if 1.0 - vmin < 0.1 {
            return Err(CvlError::DelayNotFound(format!(
                "best normalized EPR variance is {vmin:.3}; no broadband correlation to align"
            )));
        }
        let (mut lo, mut hi) = (grid[imin.saturating_sub(1)].0, grid[(imin + 1).min(steps)].0);
        let gr = (5f64.sqrt() - 1.0) / 2.0;
        let (mut c, mut d) = (hi - gr * (hi - lo), lo + gr * (hi - lo));
        let (mut fc, mut fd) = (self.value(c), self.value(d));
        for _ in 0..60 {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - gr * (hi - lo);
                fc = self.value(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + gr * (hi - lo);
                fd = self.value(d);
            }
        }
        let t = 0.5 * (lo + hi);
        Ok(if self.value(t) <= vmin { t } else { tmin })
    }
}

/// Delay of the conjugate trace that best restores broadband two-mode
/// squeezing in an XX or PP run.
pub fn estimate_delay(
    probe: &[f64],
    conj: &[f64],
    dt: f64,
    layout: &ModeLayout,
    range_s: (f64, f64),
    sign: EprSign,
) -> Result<f64> {
    let (ps, cs) = (spectrum(probe, dt), spectrum(conj, dt));
    let mut obj = DelayObjective::new(layout, ps.df(), sign);
    obj.add(&ps, &cs);
    obj.minimize(range_s, 0.2e-9)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub label: QuadConfig,
    pub kind: TraceKind,
    pub eom_on: bool,
    pub probe: BinnedSignal,
    pub conjugate: BinnedSignal,
    pub drive: DriveSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sector {
    XpXp,
    XcXc,
    XpXc,
    PpPp,
    PcPc,
    PpPc,
    XpPc,
}

impl Sector {
    pub fn name(&self) -> &'static str {
        match self {
            Sector::XpXp => "XpXp",
            Sector::XcXc => "XcXc",
            Sector::XpXc => "XpXc",
            Sector::PpPp => "PpPp",
            Sector::PcPc => "PcPc",
            Sector::PpPc => "PpPc",
            Sector::XpPc => "XpPc",
        }
    }

    /// Row and column block offsets (in units of n) within Σ.
    fn blocks(&self) -> (usize, usize) {
        match self {
            Sector::XpXp => (0, 0),
            Sector::XcXc => (1, 1),
            Sector::XpXc => (0, 1),
            Sector::PpPp => (2, 2),
            Sector::PcPc => (3, 3),
            Sector::PpPc => (2, 3),
            Sector::XpPc => (0, 3),
        }
    }
}

/// One run's covariance sectors. XP runs carry only the cross block plus
/// per-bin variances.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSectors {
    pub label: QuadConfig,
    pub kind: TraceKind,
    pub eom_on: bool,
    pub drive: DriveSpec,
    pub sectors: BTreeMap<Sector, DMatrix<f64>>,
    /// XpPc lock-in values for every (probe bin, conjugate bin) pair at a
    /// tone offset: (tone index, probe bin, conjugate bin) → value.
    pub lockin: BTreeMap<(usize, usize, usize), Complex64>,
    pub window_s: f64,
    pub samples_trimmed: usize,
}

pub fn run_sectors(run: &RunData) -> Result<RunSectors> {
    let tones: Vec<f64> = if run.eom_on { run.drive.tones.iter().map(|t| t.frequency_hz).collect() } else { vec![] };
    let cross = quad_covariance(&run.probe, &run.conjugate, &tones)?;
    let mut sectors = BTreeMap::new();
    let mut lockin = BTreeMap::new();
    let diag = |v: Vec<f64>| DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v));
    match run.label {
        QuadConfig::XX | QuadConfig::PP => {
            let pp = quad_covariance(&run.probe, &run.probe, &tones)?.cov;
            let cc = quad_covariance(&run.conjugate, &run.conjugate, &tones)?.cov;
            let (a, b, c) = if run.label == QuadConfig::XX {
                (Sector::XpXp, Sector::XcXc, Sector::XpXc)
            } else {
                (Sector::PpPp, Sector::PcPc, Sector::PpPc)
            };
            sectors.insert(a, pp);
            sectors.insert(b, cc);
            sectors.insert(c, cross.cov.clone());
        }
        QuadConfig::XP => {
            sectors.insert(Sector::XpXp, diag(bin_variances(&run.probe, &tones)));
            sectors.insert(Sector::PcPc, diag(bin_variances(&run.conjugate, &tones)));
            sectors.insert(Sector::XpPc, cross.cov.clone());
            if run.eom_on {
                let layout = run.probe.layout;
                let offsets = run.drive.offsets(&layout)?;
                for (t, (&k, tone)) in offsets.iter().zip(&run.drive.tones).enumerate() {
                    for i in 0..layout.bins() {
                        for j in [i.checked_sub(k), Some(i + k).filter(|&j| j < layout.bins())].into_iter().flatten()
                        {
                            let l = lockin_xp(&run.probe, i, &run.conjugate, j, tone.frequency_hz)?;
                            lockin.insert((t, i, j), l.value());
                        }
                    }
                }
            }
        }
    }
    Ok(RunSectors {
        label: run.label,
        kind: run.kind,
        eom_on: run.eom_on,
        drive: run.drive.clone(),
        sectors,
        lockin,
        window_s: run.probe.window_s,
        samples_trimmed: cross.samples_trimmed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FillMask {
    pub xx: bool,
    pub pp: bool,
    pub xp: bool,
    /// Always false: same-beam XP blocks are never measured.
    pub same_beam_xp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateUnits {
    Raw,
    ShotNormalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub layout: ModeLayout,
    pub entries: DMatrix<f64>,
    /// Standard error of each entry from run-to-run scatter (NaN with < 2 runs).
    pub stderr: DMatrix<f64>,
    pub mask: FillMask,
    pub run_counts: BTreeMap<Sector, usize>,
    pub units: EstimateUnits,
    pub lockin: BTreeMap<(usize, usize, usize), Complex64>,
    pub drive: DriveSpec,
    pub eom_on: bool,
    pub window_s: f64,
}

impl CovarianceEstimate {
    pub fn as_covariance(&self) -> CovarianceMatrix {
        let normalization = match self.units {
            EstimateUnits::ShotNormalized => Normalization::ShotNormalized,
            EstimateUnits::Raw => Normalization::ShotNormalized,
        };
        CovarianceMatrix { bins: self.layout.bins(), entries: self.entries.clone(), normalization }
    }

    pub fn has(&self, s: Sector) -> bool {
        self.run_counts.get(&s).copied().unwrap_or(0) > 0
    }

    /// Per-bin variance seen by the probe and conjugate detectors, from
    /// whichever quadrature sectors were measured.
    pub fn detector_variances(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.layout.bins();
        let avg = |a: Option<Sector>, b: Option<Sector>, oa: usize, ob: usize, i: usize| {
            let mut v = Vec::new();
            if a.is_some_and(|s| self.has(s)) {
                v.push(self.entries[(oa * n + i, oa * n + i)]);
            }
            if b.is_some_and(|s| self.has(s)) {
                v.push(self.entries[(ob * n + i, ob * n + i)]);
            }
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let probe = (0..n).map(|i| avg(Some(Sector::XpXp), Some(Sector::PpPp), 0, 2, i)).collect();
        let conj = (0..n).map(|i| avg(Some(Sector::XcXc), Some(Sector::PcPc), 1, 3, i)).collect();
        (probe, conj)
    }
}

#[derive(Debug, Clone)]
struct Moments {
    sum: DMatrix<f64>,
    sumsq: DMatrix<f64>,
    count: usize,
}

/// Streams runs into per-sector means and scatter.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    layout: ModeLayout,
    drive: Option<DriveSpec>,
    eom_on: Option<bool>,
    moments: BTreeMap<Sector, Moments>,
    lockin: BTreeMap<(usize, usize, usize), (Complex64, usize)>,
    window_s: f64,
}

impl CovarianceAccumulator {
    pub fn new(layout: ModeLayout) -> Self {
        Self { layout, drive: None, eom_on: None, moments: BTreeMap::new(), lockin: BTreeMap::new(), window_s: 0.0 }
    }

    pub fn add(&mut self, run: &RunSectors) -> Result<()> {
        match (&self.drive, self.eom_on) {
            (Some(d), Some(e)) if *d != run.drive || e != run.eom_on => {
                return Err(CvlError::Config("runs being assembled have different drive settings".into()))
            }
            _ => {
                self.drive = Some(run.drive.clone());
                self.eom_on = Some(run.eom_on);
            }
        }
        self.window_s = run.window_s;
        for (s, m) in &run.sectors {
            let e = self.moments.entry(*s).or_insert_with(|| Moments {
                sum: DMatrix::zeros(m.nrows(), m.ncols()),
                sumsq: DMatrix::zeros(m.nrows(), m.ncols()),
                count: 0,
            });
            if e.sum.shape() != m.shape() {
                return Err(CvlError::Dimension(format!("sector {} changed shape between runs", s.name())));
            }
            e.sum += m;
            e.sumsq += m.component_mul(m);
            e.count += 1;
        }
        for (k, v) in &run.lockin {
            let e = self.lockin.entry(*k).or_insert((Complex64::default(), 0));
            e.0 += v;
            e.1 += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<CovarianceEstimate> {
        let n = self.layout.bins();
        let dim = 4 * n;
        let mut entries = DMatrix::zeros(dim, dim);
        let mut stderr = DMatrix::from_element(dim, dim, f64::NAN);
        let mut run_counts = BTreeMap::new();
        // Full-matrix sectors win over the diagonal-only variances of XP runs.
        let mut order: Vec<(&Sector, &Moments)> = self.moments.iter().collect();
        order.sort_by_key(|(_, m)| m.sum.iter().filter(|v| **v != 0.0).count());
        for (s, m) in order {
            let r = m.count as f64;
            let mean = &m.sum / r;
            let se = m.sum.zip_map(&m.sumsq, |a, b| {
                if m.count < 2 {
                    f64::NAN
                } else {
                    ((b - a * a / r) / (r - 1.0)).max(0.0).sqrt() / r.sqrt()
                }
            });
            let (bi, bj) = s.blocks();
            let diag_only = mean.iter().enumerate().all(|(idx, v)| *v == 0.0 || idx % (n + 1) == 0) && n > 1;
            let put = |dst: &mut DMatrix<f64>, src: &DMatrix<f64>, oi: usize, oj: usize, transpose: bool| {
                for i in 0..n {
                    for j in 0..n {
                        if diag_only && i != j {
                            continue;
                        }
                        let v = if transpose { src[(j, i)] } else { src[(i, j)] };
                        dst[(oi * n + i, oj * n + j)] = v;
                    }
                }
            };
            put(&mut entries, &mean, bi, bj, false);
            put(&mut stderr, &se, bi, bj, false);
            if bi != bj {
                put(&mut entries, &mean, bj, bi, true);
                put(&mut stderr, &se, bj, bi, true);
            }
            if *s == Sector::XpPc {
                // XcPp duplicates XpPc, and its transpose fills the PX quadrant.
                put(&mut entries, &mean, 1, 2, false);
                put(&mut stderr, &se, 1, 2, false);
                put(&mut entries, &mean, 2, 1, true);
                put(&mut stderr, &se, 2, 1, true);
            }
            run_counts.insert(*s, m.count);
        }
        let has = |s: Sector| run_counts.contains_key(&s);
        let mask = FillMask {
            xx: has(Sector::XpXc),
            pp: has(Sector::PpPc),
            xp: has(Sector::XpPc),
            same_beam_xp: false,
        };
        let lockin = self.lockin.iter().map(|(k, (v, c))| (*k, v / *c as f64)).collect();
        Ok(CovarianceEstimate {
            layout: self.layout,
            entries,
            stderr,
            mask,
            run_counts,
            units: EstimateUnits::Raw,
            lockin,
            drive: self.drive.clone().unwrap_or_else(DriveSpec::off),
            eom_on: self.eom_on.unwrap_or(false),
            window_s: self.window_s,
        })
    }
}

pub fn assemble_covariance(runs: &[RunData]) -> Result<CovarianceEstimate> {
    let first = runs.first().ok_or_else(|| CvlError::MissingSector("no runs supplied".into()))?;
    let mut acc = CovarianceAccumulator::new(first.probe.layout);
    for r in runs {
        if r.probe.layout != first.probe.layout {
            return Err(CvlError::Config("runs being assembled use different layouts".into()));
        }
        acc.add(&run_sectors(r)?)?;
    }
    acc.finish()
}

/// Electronic-noise variance per bin for each detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElecSpectrum {
    pub probe: Vec<f64>,
    pub conjugate: Vec<f64>,
}

impl ElecSpectrum {
    pub fn from_estimate(dark: &CovarianceEstimate) -> Self {
        let (probe, conjugate) = dark.detector_variances();
        Self { probe, conjugate }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NormalizeMode {
    ShotRatio,
    ElecSubtract(ElecSpectrum),
}

/// Divides by the per-bin shot variance (geometric mean for cross terms);
/// in elec-subtract mode the electronic variance is first removed from the
/// diagonal and from the shot reference.
pub fn normalize(
    sigma: &CovarianceEstimate,
    shot: &CovarianceEstimate,
    mode: &NormalizeMode,
) -> Result<CovarianceEstimate> {
    if sigma.layout != shot.layout {
        return Err(CvlError::Config("signal and shot layouts differ".into()));
    }
    let n = sigma.layout.bins();
    let (sp, sc) = shot.detector_variances();
    let (ep, ec) = match mode {
        NormalizeMode::ShotRatio => (vec![0.0; n], vec![0.0; n]),
        NormalizeMode::ElecSubtract(e) => (e.probe.clone(), e.conjugate.clone()),
    };
    let is_probe = |a: usize| a < n || (2 * n..3 * n).contains(&a);
    let mut denom = vec![0.0; 4 * n];
    let mut elec = vec![0.0; 4 * n];
    for a in 0..4 * n {
        let i = a % n;
        let (s, e) = if is_probe(a) { (sp[i], ep[i]) } else { (sc[i], ec[i]) };
        let d = s - e;
        if !(d > 0.0) {
            return Err(CvlError::NonpositiveShot(i));
        }
        denom[a] = d;
        elec[a] = e;
    }
    let mut out = sigma.clone();
    for a in 0..4 * n {
        for b in 0..4 * n {
            let v = sigma.entries[(a, b)];
            if v == 0.0 {
                continue;
            }
            let sub = if a == b { elec[a] } else { 0.0 };
            let scale = (denom[a] * denom[b]).sqrt();
            out.entries[(a, b)] = (v - sub) / scale;
            out.stderr[(a, b)] = sigma.stderr[(a, b)] / scale;
        }
    }
    for ((_, i, j), v) in out.lockin.iter_mut() {
        *v /= (denom[*i] * denom[3 * n + *j]).sqrt();
    }
    out.units = EstimateUnits::ShotNormalized;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqueezingRow {
    pub mode: usize,
    pub center_hz: f64,
    pub x_db: Option<f64>,
    pub p_db: Option<f64>,
}

/// Per-bin EPR variance, var(Xp - Xc)/2 and var(Pp + Pc)/2, in dB.
pub fn squeezing_spectrum(est: &CovarianceEstimate) -> Vec<SqueezingRow> {
    let l = &est.layout;
    let e = &est.entries;
    l.interior()
        .map(|i| {
            let x = est.mask.xx.then(|| {
                to_db((e[(l.xp(i), l.xp(i))] + e[(l.xc(i), l.xc(i))] - 2.0 * e[(l.xp(i), l.xc(i))]) / 2.0)
            });
            let p = est.mask.pp.then(|| {
                to_db((e[(l.pp(i), l.pp(i))] + e[(l.pc(i), l.pc(i))] + 2.0 * e[(l.pp(i), l.pc(i))]) / 2.0)
            });
            SqueezingRow { mode: i, center_hz: l.center(i), x_db: x, p_db: p }
        })
        .collect()
}

/// Estimated tone phase from lock-in pairs: the lower partner carries
/// e^{+iφ} and the upper e^{-iφ}, so φ = ½ arg Σ L_lower L_upper*.
pub fn lockin_tone_phases(est: &CovarianceEstimate) -> Vec<f64> {
    let n = est.layout.bins();
    (0..est.drive.tones.len())
        .map(|t| {
            let mut acc = Complex64::default();
            for ((tt, i, j), v) in &est.lockin {
                if *tt != t || *j >= *i {
                    continue;
                }
                let k = i - j;
                if let Some(up) = est.lockin.get(&(t, *i, i + k)).filter(|_| i + k < n) {
                    acc += v * up.conj();
                }
            }
            0.5 * acc.arg()
        })
        .collect()
}

/// Σ with the XP quadrant rebuilt from phase-compensated lock-in values
/// at the tone offsets (zero elsewhere).
pub fn lockin_covariance(est: &CovarianceEstimate, phases: &[f64]) -> CovarianceMatrix {
    let l = est.layout;
    let mut sigma = est.as_covariance();
    let n = l.bins();
    for a in 0..2 * n {
        for b in 2 * n..4 * n {
            sigma.entries[(a, b)] = 0.0;
            sigma.entries[(b, a)] = 0.0;
        }
    }
    for ((t, i, j), v) in &est.lockin {
        let phi = if j < i { phases[*t] } else { -phases[*t] };
        let val = (v * Complex64::from_polar(1.0, -phi)).re;
        for (r, c) in [(l.xp(*i), l.pc(*j)), (l.xc(*i), l.pp(*j))] {
            sigma.entries[(r, c)] = val;
            sigma.entries[(c, r)] = val;
        }
    }
    sigma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub pairs: usize,
    pub runs: usize,
    pub max_abs_t: f64,
    pub exceed_3sigma: usize,
    /// Family-wise critical |t| at the two-sided 3σ level.
    pub critical_t: f64,
    pub pass: bool,
}

/// Cross-bin (i ≠ j) entries of every measured sector tested against zero
/// with the run-to-run standard error. The 3σ level (two-sided p = 0.0027)
/// is applied family-wise over all pairs with a Bonferroni correction and
/// Student-t quantiles.
pub fn bin_independence(est: &CovarianceEstimate) -> Result<IndependenceReport> {
    let n = est.layout.bins();
    let mut ts = Vec::new();
    let mut runs = usize::MAX;
    for (s, &count) in &est.run_counts {
        let (bi, bj) = s.blocks();
        let full = est.entries.view((bi * n, bj * n), (n, n)).iter().enumerate().any(|(k, v)| *v != 0.0 && k % (n + 1) != 0);
        if !full {
            continue;
        }
        runs = runs.min(count);
        for i in est.layout.interior() {
            for j in est.layout.interior() {
                if i == j || (bi == bj && j < i) {
                    continue;
                }
                let (a, b) = (bi * n + i, bj * n + j);
                let se = est.stderr[(a, b)];
                if se.is_finite() && se > 0.0 {
                    ts.push(est.entries[(a, b)] / se);
                }
            }
        }
    }
    if ts.is_empty() || runs < 2 || runs == usize::MAX {
        return Err(CvlError::MissingSector("independence test needs at least two runs per sector".into()));
    }
    let p_fw = 0.0027;
    let p_each = p_fw / ts.len() as f64;
    let dist = StudentsT::new(0.0, 1.0, (runs - 1) as f64).map_err(|e| CvlError::Config(e.to_string()))?;
    let critical_t = dist.inverse_cdf(1.0 - p_each / 2.0);
    let max_abs_t = ts.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let exceed_3sigma = ts.iter().filter(|t| t.abs() > 3.0).count();
    Ok(IndependenceReport {
        pairs: ts.len(),
        runs,
        max_abs_t,
        exceed_3sigma,
        critical_t,
        pass: max_abs_t < critical_t,
    })
}
