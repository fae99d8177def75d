//! Nullifier witnesses: unit-weight EPR rows, their EOM-transformed form,
//! per-mode variances and the error matrix of the P - VX nullifiers.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CvlError, Result};
use crate::gaussian::{
    bessel_j, symplectic_defect, symplectic_inverse, CovarianceMatrix, SparseRows, DriveTone, ModeLayout, SymplecticMatrix,
};

/// 2n × 4n coefficient rows: X-nullifiers first, then P-nullifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct NullifierMatrix {
    pub bins: usize,
    pub rows: DMatrix<f64>,
}

impl NullifierMatrix {
    pub fn x_row(&self, bin: usize) -> usize {
        bin
    }

    pub fn p_row(&self, bin: usize) -> usize {
        self.bins + bin
    }

    /// Nonzero (column, coefficient) pairs of one row.
    pub fn sparse_row(&self, row: usize) -> Vec<(usize, f64)> {
        self.rows.row(row).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, v)| (c, *v)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    X,
    P,
}

pub fn epr_nullifier_matrix(layout: &ModeLayout) -> NullifierMatrix {
    let n = layout.bins();
    let mut rows = DMatrix::zeros(2 * n, 4 * n);
    for i in 0..n {
        rows[(i, layout.xp(i))] = 1.0;
        rows[(i, layout.xc(i))] = -1.0;
        rows[(n + i, layout.pp(i))] = 1.0;
        rows[(n + i, layout.pc(i))] = 1.0;
    }
    NullifierMatrix { bins: n, rows }
}

/// N · S⁻¹ with the symplectic inverse -Ω Sᵀ Ω.
pub fn transform_nullifiers(n: &NullifierMatrix, s: &SymplecticMatrix) -> Result<NullifierMatrix> {
    if n.rows.ncols() != s.dim() {
        return Err(CvlError::Dimension(format!(
            "nullifier rows have {} columns, symplectic is {}x{}",
            n.rows.ncols(),
            s.dim(),
            s.dim()
        )));
    }
    let defect = symplectic_defect(s);
    if !(defect < 0.5) {
        return Err(CvlError::Singular(format!("EOM map is far from symplectic (defect {defect:.3e})")));
    }
    let inv = symplectic_inverse(s);
    Ok(NullifierMatrix { bins: n.bins, rows: SparseRows::from_dense(&n.rows).mul_dense(&inv.entries) })
}

/// n Σ nᵀ for a sparse coefficient vector.
pub fn quad_form(coeffs: &[(usize, f64)], sigma: &DMatrix<f64>) -> f64 {
    coeffs
        .iter()
        .map(|&(a, ca)| ca * coeffs.iter().map(|&(b, cb)| cb * sigma[(a, b)]).sum::<f64>())
        .sum()
}

pub fn nullifier_variance(n: &NullifierMatrix, row: usize, sigma: &CovarianceMatrix) -> Result<f64> {
    if n.rows.ncols() != sigma.dim() || row >= n.rows.nrows() {
        return Err(CvlError::Dimension(format!(
            "row {row} of a {}x{} nullifier matrix against a {}-dim covariance",
            n.rows.nrows(),
            n.rows.ncols(),
            sigma.dim()
        )));
    }
    Ok(quad_form(&n.sparse_row(row), &sigma.entries))
}

/// Explicit term sum for one mode with one tone on the conjugate beam, using
/// X'c(i) ≈ J0 Xc(i) - J1 Pc(i-k) - J1 Pc(i+k) and
/// P'c(i) ≈ J0 Pc(i) + J1 Xc(i-k) + J1 Xc(i+k).
pub fn direct_expansion_variance(
    sigma: &CovarianceMatrix,
    layout: &ModeLayout,
    mode: usize,
    tone: &DriveTone,
    quadrature: Quadrature,
) -> Result<f64> {
    if sigma.dim() != layout.dim() {
        return Err(CvlError::Dimension("covariance does not match layout".into()));
    }
    let k = layout.offset_of(tone.frequency_hz)?;
    if mode < k || mode + k >= layout.bins() {
        return Err(CvlError::Edge { mode, offset: k });
    }
    let (j0, j1) = (bessel_j(0, tone.mod_index), bessel_j(1, tone.mod_index));
    let s = |a: usize, b: usize| sigma.entries[(a, b)];
    let (lo, hi) = (mode - k, mode + k);
    let v = match quadrature {
        Quadrature::X => {
            let (xp, xc) = (layout.xp(mode), layout.xc(mode));
            let (pl, ph) = (layout.pc(lo), layout.pc(hi));
            s(xp, xp) - 2.0 * j0 * s(xp, xc) + 2.0 * j1 * s(xp, pl) + 2.0 * j1 * s(xp, ph) + j0 * j0 * s(xc, xc)
                - 2.0 * j0 * j1 * s(xc, pl)
                - 2.0 * j0 * j1 * s(xc, ph)
                + j1 * j1 * (s(pl, pl) + 2.0 * s(pl, ph) + s(ph, ph))
        }
        Quadrature::P => {
            let (pp, pc) = (layout.pp(mode), layout.pc(mode));
            let (xl, xh) = (layout.xc(lo), layout.xc(hi));
            s(pp, pp) + 2.0 * j0 * s(pp, pc) + 2.0 * j1 * s(pp, xl) + 2.0 * j1 * s(pp, xh) + j0 * j0 * s(pc, pc)
                + 2.0 * j0 * j1 * s(pc, xl)
                + 2.0 * j0 * j1 * s(pc, xh)
                + j1 * j1 * (s(xl, xl) + 2.0 * s(xl, xh) + s(xh, xh))
        }
    };
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Matrix,
    Lockin,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Matrix => "matrix",
            Method::Lockin => "lockin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub mode: usize,
    pub mode_center_hz: f64,
    pub epr_x_db: f64,
    pub epr_p_db: f64,
    pub null_x_db: f64,
    pub null_p_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullifierReport {
    pub method: Method,
    pub rows: Vec<ReportRow>,
    pub run_count: usize,
    pub window_s: f64,
}

impl NullifierReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode_center_hz,epr_x_db,epr_p_db,null_x_db,null_p_db,method\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.mode_center_hz,
                r.epr_x_db,
                r.epr_p_db,
                r.null_x_db,
                r.null_p_db,
                self.method.as_str()
            );
        }
        s
    }

    pub fn row_for_mode(&self, mode: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Shot-normalized dB for every interior mode; the shot reference uses the
/// same row on `shot`, so the row norm cancels.
pub fn nullifier_report(
    sigma: &CovarianceMatrix,
    shot: &CovarianceMatrix,
    n: &NullifierMatrix,
    layout: &ModeLayout,
    method: Method,
) -> Result<NullifierReport> {
    if sigma.dim() != layout.dim() || shot.dim() != layout.dim() || n.rows.ncols() != layout.dim() {
        return Err(CvlError::Dimension("report inputs do not match the layout".into()));
    }
    let epr = epr_nullifier_matrix(layout);
    let ratio = |m: &NullifierMatrix, row: usize, bin: usize| -> Result<f64> {
        let coeffs = m.sparse_row(row);
        let r = quad_form(&coeffs, &shot.entries);
        if !(r > 0.0) {
            return Err(CvlError::NonpositiveShot(bin));
        }
        Ok(to_db(quad_form(&coeffs, &sigma.entries) / r))
    };
    let rows = layout
        .interior()
        .map(|i| {
            Ok(ReportRow {
                mode: i,
                mode_center_hz: layout.center(i),
                epr_x_db: ratio(&epr, epr.x_row(i), i)?,
                epr_p_db: ratio(&epr, epr.p_row(i), i)?,
                null_x_db: ratio(n, n.x_row(i), i)?,
                null_p_db: ratio(n, n.p_row(i), i)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NullifierReport { method, rows, run_count: 0, window_s: 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMatrix {
    pub u: DMatrix<f64>,
    pub error_vector: Vec<f64>,
}

/// U = 2 cov[P - VX] assembled from the absolute-unit blocks of Σ.
pub fn error_matrix(sigma: &CovarianceMatrix, v: &DMatrix<f64>) -> Result<ErrorMatrix> {
    let h = 2 * sigma.bins;
    if v.nrows() != h || v.ncols() != h {
        return Err(CvlError::Dimension(format!("V is {}x{}, expected {h}x{h}", v.nrows(), v.ncols())));
    }
    let abs = sigma.to_absolute();
    let (sxx, sxp, spp) = (abs.xx(), abs.xp(), abs.pp());
    let vsxp = v * &sxp;
    let u = (spp - &vsxp - vsxp.transpose() + v * sxx * v.transpose()) * 2.0;
    let u = crate::gaussian::symmetrize(&u);
    let error_vector = u.diagonal().iter().copied().collect();
    Ok(ErrorMatrix { u, error_vector })
}
