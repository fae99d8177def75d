//! Gaussian-state engine: two-mode squeezing and multi-tone EOM symplectic
//! maps in (Xp, Xc, Pp, Pc) block ordering, chained onto the vacuum.
//!
//! Vacuum variance is 1/2 per quadrature. The EOM keeps only the first
//! sidebands; [`symplectic_defect`] measures what that truncation costs.

mod sparse;
mod types;

pub use sparse::SparseRows;
pub use types::*;

use nalgebra::DMatrix;

use crate::error::{CvlError, Result};

pub fn vacuum_covariance(layout: &ModeLayout) -> CovarianceMatrix {
    CovarianceMatrix {
        bins: layout.bins(),
        entries: DMatrix::identity(layout.dim(), layout.dim()) * 0.5,
        normalization: Normalization::Absolute,
    }
}

pub fn tms_symplectic(layout: &ModeLayout, profile: &SqueezeProfile) -> Result<SymplecticMatrix> {
    let n = layout.bins();
    if profile.r_of_bin.len() != n {
        return Err(CvlError::LengthMismatch { expected: n, got: profile.r_of_bin.len() });
    }
    let mut s = SymplecticMatrix::identity(n);
    for (i, &r) in profile.r_of_bin.iter().enumerate() {
        let (c, sh) = ((2.0 * r).cosh(), (2.0 * r).sinh());
        let (xp, xc, pp, pc) = (layout.xp(i), layout.xc(i), layout.pp(i), layout.pc(i));
        let e = &mut s.entries;
        e[(xp, xp)] = c;
        e[(xp, xc)] = sh;
        e[(xc, xp)] = sh;
        e[(xc, xc)] = c;
        e[(pp, pp)] = c;
        e[(pp, pc)] = -sh;
        e[(pc, pp)] = -sh;
        e[(pc, pc)] = c;
    }
    Ok(s)
}

/// Bessel function of the first kind by its power series; converges to
/// machine precision well beyond m = 2.
pub fn bessel_j(n: u32, m: f64) -> f64 {
    let half = 0.5 * m;
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / k as f64;
    }
    let q = -half * half;
    let mut sum = term;
    for k in 1..200u32 {
        term *= q / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// Single-tone first-sideband EOM. On the modulated beam:
/// X' = J0 X + J1 K P, P' = J0 P - J1 K X, with K the adjacency at offset k.
pub fn eom_symplectic_single(layout: &ModeLayout, tone: &DriveTone, beam: Beam) -> Result<SymplecticMatrix> {
    if tone.phase != 0.0 {
        return Err(CvlError::Drive(format!(
            "analytic engine requires in-phase tones, got phase {}",
            tone.phase
        )));
    }
    let n = layout.bins();
    let k = layout.offset_of(tone.frequency_hz)?;
    if k > n - 1 {
        return Err(CvlError::Drive(format!("offset {k} couples no simulated bins (only {n} bins)")));
    }
    let mut s = SymplecticMatrix::identity(n);
    match beam {
        Beam::Probe => write_beam_block(&mut s.entries, layout, 0, k, tone.mod_index),
        Beam::Conjugate => write_beam_block(&mut s.entries, layout, 1, k, tone.mod_index),
        Beam::BothHalved => {
            write_beam_block(&mut s.entries, layout, 0, k, 0.5 * tone.mod_index);
            write_beam_block(&mut s.entries, layout, 1, k, 0.5 * tone.mod_index);
        }
    }
    Ok(s)
}

fn write_beam_block(e: &mut DMatrix<f64>, layout: &ModeLayout, beam: usize, k: usize, m: f64) {
    let n = layout.bins();
    let (j0, j1) = (bessel_j(0, m), bessel_j(1, m));
    let x0 = beam * n;
    let p0 = 2 * n + beam * n;
    for i in 0..n {
        e[(x0 + i, x0 + i)] = j0;
        e[(p0 + i, p0 + i)] = j0;
        for j in [i.checked_sub(k), Some(i + k).filter(|&j| j < n)].into_iter().flatten() {
            e[(x0 + i, p0 + j)] = j1;
            e[(p0 + i, x0 + j)] = -j1;
        }
    }
}

/// Ordered product of single-tone maps, lowest frequency applied first.
pub fn eom_symplectic(layout: &ModeLayout, drive: &DriveSpec) -> Result<SymplecticMatrix> {
    drive.validate()?;
    let mut s = SymplecticMatrix::identity(layout.bins());
    for tone in &drive.tones {
        let f = eom_symplectic_single(layout, tone, drive.target_beam)?;
        s.entries = SparseRows::from_dense(&f.entries).mul_dense(&s.entries);
    }
    Ok(s)
}

/// S Σ Sᵀ, symmetrized.
pub fn apply(s: &SymplecticMatrix, sigma: &CovarianceMatrix) -> Result<CovarianceMatrix> {
    if s.dim() != sigma.dim() {
        return Err(CvlError::Dimension(format!(
            "symplectic is {0}x{0}, covariance is {1}x{1}",
            s.dim(),
            sigma.dim()
        )));
    }
    let out = match SparseRows::try_sparse(&s.entries) {
        Some(rows) => rows.congruence(&sigma.entries),
        None => &s.entries * &sigma.entries * s.entries.transpose(),
    };
    Ok(CovarianceMatrix {
        bins: sigma.bins,
        entries: symmetrize(&out),
        normalization: sigma.normalization,
    })
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Canonical form for the (X..., P...) ordering: [[0, I], [-I, 0]].
pub fn omega(dim: usize) -> DMatrix<f64> {
    let h = dim / 2;
    let mut o = DMatrix::zeros(dim, dim);
    for i in 0..h {
        o[(i, h + i)] = 1.0;
        o[(h + i, i)] = -1.0;
    }
    o
}

/// Largest entry of |S Ω Sᵀ - Ω|.
pub fn symplectic_defect(s: &SymplecticMatrix) -> f64 {
    let o = omega(s.dim());
    let sos = match SparseRows::try_sparse(&s.entries) {
        Some(rows) => rows.mul_dense(&rows.mul_dense(&o.transpose()).transpose()),
        None => &s.entries * &o * s.entries.transpose(),
    };
    (sos - o).amax()
}

/// -Ω Sᵀ Ω, the exact inverse whenever S is symplectic. For the
/// first-sideband EOM this is Sᵀ, which is the substitution rule used in
/// the direct nullifier expansion.
pub fn symplectic_inverse(s: &SymplecticMatrix) -> SymplecticMatrix {
    let n = s.bins;
    let h = 2 * n;
    let st = s.entries.transpose();
    // -Ω A Ω for A = [[a, b], [c, d]] is [[d, -c], [-b, a]].
    let mut out = DMatrix::zeros(2 * h, 2 * h);
    out.view_mut((0, 0), (h, h)).copy_from(&st.view((h, h), (h, h)));
    out.view_mut((0, h), (h, h)).copy_from(&(-st.view((h, 0), (h, h)).into_owned()));
    out.view_mut((h, 0), (h, h)).copy_from(&(-st.view((0, h), (h, h)).into_owned()));
    out.view_mut((h, h), (h, h)).copy_from(&st.view((0, 0), (h, h)));
    SymplecticMatrix { bins: n, entries: out }
}

/// ½ S_eom S_tms S_tmsᵀ S_eomᵀ, absolute units.
pub fn chain_covariance(layout: &ModeLayout, profile: &SqueezeProfile, drive: &DriveSpec) -> Result<CovarianceMatrix> {
    let tms = apply(&tms_symplectic(layout, profile)?, &vacuum_covariance(layout))?;
    if drive.tones.is_empty() {
        return Ok(tms);
    }
    apply(&eom_symplectic(layout, drive)?, &tms)
}
