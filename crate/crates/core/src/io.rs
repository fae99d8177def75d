//! On-disk formats.
//!
//! Covariance matrices: CSV with `#` header comments (ordering tag, layout,
//! normalization) or the binary `CVL1` container. Traces: the binary `CVLT`
//! container holding digitizer codes, or a CSV dump for inspection.
//!
//! All binary fields are little-endian.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CvlError, Result};
use crate::gaussian::{CovarianceMatrix, ModeLayout, Normalization, ORDERING};
use crate::synth::{quantization_step, TraceMeta, TraceSet};

const MATRIX_MAGIC: &[u8; 4] = b"CVL1";
const TRACE_MAGIC: &[u8; 4] = b"CVLT";
const TRACE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub ordering: String,
    pub layout: ModeLayout,
    pub normalization: Normalization,
}

fn bad(msg: impl Into<String>) -> CvlError {
    CvlError::Format(msg.into())
}

pub fn covariance_to_csv(sigma: &CovarianceMatrix, layout: &ModeLayout) -> Result<String> {
    check_layout(sigma, layout)?;
    let mut s = String::new();
    let _ = writeln!(s, "# ordering: {ORDERING}");
    let _ = writeln!(s, "# layout: {}", serde_json::to_string(layout)?);
    let _ = writeln!(s, "# normalization: {}", serde_json::to_string(&sigma.normalization)?.trim_matches('"'));
    for row in sigma.entries.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub fn covariance_from_csv(text: &str) -> Result<(CovarianceMatrix, ModeLayout)> {
    let mut ordering = None;
    let mut layout = None;
    let mut normalization = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            let (key, val) = c.split_once(':').ok_or_else(|| bad(format!("line {}: malformed header", ln + 1)))?;
            let val = val.trim();
            match key.trim() {
                "ordering" => ordering = Some(val.to_string()),
                "layout" => layout = Some(serde_json::from_str::<ModeLayout>(val)?),
                "normalization" => normalization = Some(serde_json::from_value(serde_json::Value::String(val.into()))?),
                _ => {}
            }
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| bad(format!("line {}: {e}", ln + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let header = MatrixHeader {
        ordering: ordering.ok_or_else(|| bad("missing ordering header"))?,
        layout: layout.ok_or_else(|| bad("missing layout header"))?,
        normalization: normalization.unwrap_or(Normalization::ShotNormalized),
    };
    let dim = rows.len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(bad("covariance CSV is not square"));
    }
    let entries = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
    finish(header, entries)
}

fn check_layout(sigma: &CovarianceMatrix, layout: &ModeLayout) -> Result<()> {
    if sigma.dim() != layout.dim() {
        return Err(CvlError::Dimension(format!("covariance dim {} vs layout dim {}", sigma.dim(), layout.dim())));
    }
    Ok(())
}

fn finish(header: MatrixHeader, entries: DMatrix<f64>) -> Result<(CovarianceMatrix, ModeLayout)> {
    if header.ordering != ORDERING {
        return Err(bad(format!("unsupported quadrature ordering {:?}", header.ordering)));
    }
    header.layout.validate()?;
    let sigma = CovarianceMatrix::new(header.layout.bins(), entries, header.normalization)?;
    Ok((sigma, header.layout))
}

/// `CVL1` | u64 rows | u64 cols | u32 header length | header JSON | f64 entries, row-major.
pub fn covariance_to_cvl1(sigma: &CovarianceMatrix, layout: &ModeLayout) -> Result<Vec<u8>> {
    check_layout(sigma, layout)?;
    let header = MatrixHeader { ordering: ORDERING.into(), layout: *layout, normalization: sigma.normalization };
    let json = serde_json::to_vec(&header)?;
    let (r, c) = sigma.entries.shape();
    let mut out = Vec::with_capacity(24 + json.len() + 8 * r * c);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(r as u64).to_le_bytes());
    out.extend_from_slice(&(c as u64).to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for row in sigma.entries.row_iter() {
        for v in row.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.arr::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.arr()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.arr()?))
    }
}

pub fn covariance_from_cvl1(bytes: &[u8]) -> Result<(CovarianceMatrix, ModeLayout)> {
    let mut rd = Reader { buf: bytes, pos: 0 };
    if rd.take(4)? != MATRIX_MAGIC {
        return Err(bad("not a CVL1 file"));
    }
    let r = rd.u64()? as usize;
    let c = rd.u64()? as usize;
    let hlen = rd.u32()? as usize;
    let header: MatrixHeader = serde_json::from_slice(rd.take(hlen)?)?;
    if r != c || r.checked_mul(c).and_then(|n| n.checked_mul(8)) != Some(bytes.len() - rd.pos) {
        return Err(bad(format!("CVL1 payload does not hold a {r}x{c} matrix")));
    }
    let mut entries = DMatrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            entries[(i, j)] = rd.f64()?;
        }
    }
    finish(header, entries)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// CSV when the extension is `.csv`, `CVL1` otherwise.
pub fn write_covariance(path: &Path, sigma: &CovarianceMatrix, layout: &ModeLayout) -> Result<()> {
    if is_csv(path) {
        fs::write(path, covariance_to_csv(sigma, layout)?)?;
    } else {
        fs::write(path, covariance_to_cvl1(sigma, layout)?)?;
    }
    Ok(())
}

/// Detects the format from the leading magic.
pub fn read_covariance(path: &Path) -> Result<(CovarianceMatrix, ModeLayout)> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(MATRIX_MAGIC) {
        covariance_from_cvl1(&bytes)
    } else {
        covariance_from_csv(std::str::from_utf8(&bytes).map_err(|e| bad(e.to_string()))?)
    }
}

/// `CVLT` | u16 version | f64 dt | u64 n | u8 probe label | u8 conjugate label |
/// f64 fullscale | u8 bits | u64 seed | u32 meta length | meta JSON |
/// probe codes | conjugate codes. Codes are i8 for bits ≤ 8, else i16.
pub fn trace_to_bytes(ts: &TraceSet) -> Result<Vec<u8>> {
    let cfg = &ts.meta.config;
    let n = ts.probe.len();
    if ts.conjugate.len() != n {
        return Err(CvlError::LengthMismatch { expected: n, got: ts.conjugate.len() });
    }
    let step = quantization_step(cfg.digitizer_bits, cfg.fullscale);
    let wide = cfg.digitizer_bits > 8;
    let meta = serde_json::to_vec(&ts.meta)?;
    let mut out = Vec::with_capacity(64 + meta.len() + 2 * n * if wide { 2 } else { 1 });
    out.extend_from_slice(TRACE_MAGIC);
    out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    out.extend_from_slice(&cfg.sample_dt_s.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.push(ts.meta.probe_quad as u8);
    out.push(ts.meta.conjugate_quad as u8);
    out.extend_from_slice(&cfg.fullscale.to_le_bytes());
    out.push(cfg.digitizer_bits as u8);
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for &v in ts.probe.iter().chain(&ts.conjugate) {
        let code = (v / step).round();
        if wide {
            out.extend_from_slice(&(code as i16).to_le_bytes());
        } else {
            out.push(code as i8 as u8);
        }
    }
    Ok(out)
}

pub fn trace_from_bytes(bytes: &[u8]) -> Result<TraceSet> {
    let mut rd = Reader { buf: bytes, pos: 0 };
    if rd.take(4)? != TRACE_MAGIC {
        return Err(bad("not a CVLT file"));
    }
    let version = rd.u16()?;
    if version != TRACE_VERSION {
        return Err(bad(format!("unsupported CVLT version {version}")));
    }
    let dt = rd.f64()?;
    let n = rd.u64()? as usize;
    let (pl, cl) = (rd.u8()? as char, rd.u8()? as char);
    let fullscale = rd.f64()?;
    let bits = rd.u8()? as u32;
    let seed = rd.u64()?;
    let mlen = rd.u32()? as usize;
    let meta: TraceMeta = serde_json::from_slice(rd.take(mlen)?)?;
    let cfg = &meta.config;
    if cfg.sample_dt_s != dt
        || cfg.fullscale != fullscale
        || cfg.digitizer_bits != bits
        || cfg.seed != seed
        || meta.probe_quad != pl
        || meta.conjugate_quad != cl
    {
        return Err(bad("CVLT header disagrees with its metadata"));
    }
    if !(2..=16).contains(&bits) {
        return Err(bad(format!("unsupported digitizer width {bits}")));
    }
    let step = quantization_step(bits, fullscale);
    let wide = bits > 8;
    let width = if wide { 2 } else { 1 };
    if bytes.len() - rd.pos != 2 * n * width {
        return Err(bad(format!("CVLT payload holds {} bytes, expected {}", bytes.len() - rd.pos, 2 * n * width)));
    }
    let mut decode = || -> Result<Vec<f64>> {
        (0..n)
            .map(|_| {
                let code = if wide { i16::from_le_bytes(rd.arr()?) } else { rd.u8()? as i8 as i16 };
                Ok(code as f64 * step)
            })
            .collect()
    };
    let probe = decode()?;
    let conjugate = decode()?;
    Ok(TraceSet { probe, conjugate, meta })
}

pub fn write_trace(path: &Path, ts: &TraceSet) -> Result<()> {
    fs::write(path, trace_to_bytes(ts)?)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<TraceSet> {
    trace_from_bytes(&fs::read(path)?)
}

pub fn trace_to_csv(ts: &TraceSet) -> String {
    let dt = ts.meta.config.sample_dt_s;
    let mut s = format!("# probe: {}, conjugate: {}\nt_s,probe,conjugate\n", ts.meta.probe_quad, ts.meta.conjugate_quad);
    for (i, (p, c)) in ts.probe.iter().zip(&ts.conjugate).enumerate() {
        let _ = writeln!(s, "{},{p},{c}", i as f64 * dt);
    }
    s
}
