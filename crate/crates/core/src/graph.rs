//! Adjacency structure of cluster-state covariances: extraction from XP
//! correlations, V/U graphical-calculus form, GLU rotations and hypercube
//! lattice verification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CvlError, Result};
use crate::gaussian::{apply, symmetrize, CovarianceMatrix, DriveSpec, ModeLayout, SymplecticMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Lattice,
    Traceback,
    Extraneous,
    Unclassified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphSource {
    CovarianceWeight,
    GraphicalCalculusV,
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub index: usize,
    pub center_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
    pub kind: EdgeKind,
}

/// Undirected graph over probe/conjugate mode pairs; `a < b` for every edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    pub source: GraphSource,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl AdjacencyGraph {
    pub fn edge_map(&self) -> BTreeMap<(usize, usize), &Edge> {
        self.edges.iter().map(|e| ((e.a, e.b), e)).collect()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.a == node || e.b == node).count()
    }

    /// Edge count per bin offset |a - b|.
    pub fn offset_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for e in &self.edges {
            *h.entry(e.b - e.a).or_insert(0) += 1;
        }
        h
    }
}

fn interior_nodes(layout: &ModeLayout) -> Vec<Node> {
    layout.interior().map(|i| Node { index: i, center_hz: layout.center(i) }).collect()
}

/// Cross-beam XP weight between interior modes i ≠ j: the mean of the four
/// entries XpPc(i,j), XpPc(j,i), XcPp(i,j), XcPp(j,i) of the shot-normalized
/// covariance. Same-index probe/conjugate pairs never appear.
pub fn covariance_adjacency(sigma: &CovarianceMatrix, layout: &ModeLayout, threshold: f64) -> Result<AdjacencyGraph> {
    if sigma.dim() != layout.dim() {
        return Err(CvlError::Dimension("covariance does not match layout".into()));
    }
    let s = sigma.to_shot_normalized();
    let e = &s.entries;
    let mut edges = Vec::new();
    for i in layout.interior() {
        for j in (i + 1)..(layout.guard_modes + layout.mode_count) {
            let w = 0.25
                * (e[(layout.xp(i), layout.pc(j))]
                    + e[(layout.xp(j), layout.pc(i))]
                    + e[(layout.xc(i), layout.pp(j))]
                    + e[(layout.xc(j), layout.pp(i))]);
            if w.abs() >= threshold && w != 0.0 {
                edges.push(Edge { a: i, b: j, weight: w, kind: EdgeKind::Unclassified });
            }
        }
    }
    Ok(AdjacencyGraph { source: GraphSource::CovarianceWeight, nodes: interior_nodes(layout), edges })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    fn matches(self, number: usize) -> bool {
        (number % 2 == 0) == (self == Parity::Even)
    }

    pub fn flipped(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

/// Single-mode rotations on alternating modes. Mode numbers are
/// `bin + origin`, so with origin 1 the first simulated bin is odd.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GluSpec {
    pub theta: f64,
    pub probe_parity: Parity,
    pub conjugate_parity: Parity,
    pub origin: usize,
}

impl Default for GluSpec {
    fn default() -> Self {
        Self {
            theta: -std::f64::consts::FRAC_PI_2,
            probe_parity: Parity::Even,
            conjugate_parity: Parity::Odd,
            origin: 1,
        }
    }
}

impl GluSpec {
    pub fn flipped(&self) -> Self {
        Self { probe_parity: self.probe_parity.flipped(), conjugate_parity: self.conjugate_parity.flipped(), ..*self }
    }
}

/// Symplectic of (X, P) -> (cos θ X + sin θ P, -sin θ X + cos θ P) on the
/// selected modes (indices into the 2n mode space: probe bins then
/// conjugate bins).
pub fn rotation_symplectic(bins: usize, modes: impl IntoIterator<Item = usize>, theta: f64) -> SymplecticMatrix {
    let mut s = SymplecticMatrix::identity(bins);
    let h = 2 * bins;
    let (c, sn) = (theta.cos(), theta.sin());
    for a in modes {
        let e = &mut s.entries;
        e[(a, a)] = c;
        e[(a, h + a)] = sn;
        e[(h + a, a)] = -sn;
        e[(h + a, h + a)] = c;
    }
    s
}

pub fn glu_symplectic(bins: usize, spec: &GluSpec) -> SymplecticMatrix {
    let probe = (0..bins).filter(|&i| spec.probe_parity.matches(i + spec.origin));
    let conj = (0..bins).filter(|&i| spec.conjugate_parity.matches(i + spec.origin)).map(|i| bins + i);
    rotation_symplectic(bins, probe.chain(conj).collect::<Vec<_>>(), spec.theta)
}

pub fn glu_transform(sigma: &CovarianceMatrix, spec: &GluSpec) -> Result<CovarianceMatrix> {
    apply(&glu_symplectic(sigma.bins, spec), sigma)
}

/// Same rotation on every conjugate mode: the EPR pairs then read as
/// two-mode graph edges. Used as the reference form before GLU.
pub fn rotate_conjugate(sigma: &CovarianceMatrix, theta: f64) -> Result<CovarianceMatrix> {
    let n = sigma.bins;
    apply(&rotation_symplectic(n, n..2 * n, theta), sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VuExtraction {
    pub v: DMatrix<f64>,
    pub u: DMatrix<f64>,
    /// max |Σ_PP - (U + V U⁻¹ V)/2|, zero for pure states.
    pub residual: f64,
    /// Set when the same-beam XP blocks were unmeasured (all zero).
    pub approximate: bool,
}

pub fn extract_v_u(sigma: &CovarianceMatrix) -> Result<VuExtraction> {
    let abs = sigma.to_absolute();
    let n = abs.bins;
    let (sxx, sxp, spp) = (abs.xx(), abs.xp(), abs.pp());
    let chol = sxx.clone().cholesky().ok_or_else(|| CvlError::Singular("Σ_XX is not positive definite".into()))?;
    let v = symmetrize(&chol.solve(&sxp));
    let u = symmetrize(&(chol.inverse() * 0.5));
    let u_chol = u.clone().cholesky().ok_or_else(|| CvlError::Singular("U is not positive definite".into()))?;
    let recon = (&u + &v * u_chol.solve(&v)) * 0.5;
    let residual = (spp - recon).amax();
    let same_beam_zero = (0..n).all(|i| (0..n).all(|j| sxp[(i, j)] == 0.0 && sxp[(n + i, n + j)] == 0.0));
    let cross_nonzero = sxp.view((0, n), (n, n)).iter().any(|v| *v != 0.0);
    Ok(VuExtraction { v, u, residual, approximate: same_beam_zero && cross_nonzero })
}

/// ‖offdiag U‖_F / ‖diag U‖_F restricted to interior modes of both beams.
pub fn offdiag_ratio(u: &DMatrix<f64>, layout: &ModeLayout) -> f64 {
    let n = layout.bins();
    let idx: Vec<usize> = layout.interior().chain(layout.interior().map(|i| n + i)).collect();
    let (mut off, mut diag) = (0.0, 0.0);
    for &a in &idx {
        for &b in &idx {
            let x = u[(a, b)] * u[(a, b)];
            if a == b {
                diag += x;
            } else {
                off += x;
            }
        }
    }
    (off / diag).sqrt()
}

/// Lattice implied by the drive: node i links to i ± k_j inside the
/// interior. An edge along k_j is a traceback edge when it crosses a
/// block boundary of the next larger offset, i.e. when folding the 1-D
/// frequency axis into the lattice wraps it around.
pub fn expected_hypercube(layout: &ModeLayout, drive: &DriveSpec) -> Result<AdjacencyGraph> {
    let offsets = drive.offsets(layout)?;
    let g = layout.guard_modes;
    let m = layout.mode_count;
    let mut edges = Vec::new();
    for (d, &k) in offsets.iter().enumerate() {
        let next = offsets.get(d + 1).copied();
        for r in 0..m.saturating_sub(k) {
            let wraps = next.is_some_and(|kn| r / kn != (r + k) / kn);
            edges.push(Edge {
                a: g + r,
                b: g + r + k,
                weight: 1.0,
                kind: if wraps { EdgeKind::Traceback } else { EdgeKind::Lattice },
            });
        }
    }
    edges.sort_by_key(|e| (e.a, e.b));
    edges.dedup_by_key(|e| (e.a, e.b));
    Ok(AdjacencyGraph { source: GraphSource::Expected, nodes: interior_nodes(layout), edges })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub threshold: f64,
    pub max_extraneous_fraction: f64,
    pub expected_edges: usize,
    pub matched: Vec<(usize, usize)>,
    pub missing: Vec<(usize, usize)>,
    pub extraneous: Vec<Edge>,
    pub traceback: Vec<(usize, usize)>,
    pub pass: bool,
    /// Measured edges above threshold, tagged by kind.
    pub classified: AdjacencyGraph,
}

impl StructureReport {
    pub fn extraneous_fraction(&self) -> f64 {
        self.extraneous.len() as f64 / self.expected_edges.max(1) as f64
    }
}

pub fn verify_structure(
    measured: &AdjacencyGraph,
    expected: &AdjacencyGraph,
    threshold: f64,
    max_extraneous_fraction: f64,
) -> Result<StructureReport> {
    let mn: BTreeSet<usize> = measured.nodes.iter().map(|n| n.index).collect();
    let en: BTreeSet<usize> = expected.nodes.iter().map(|n| n.index).collect();
    if mn != en {
        return Err(CvlError::NodeMismatch(format!(
            "measured has {} nodes, expected has {}",
            mn.len(),
            en.len()
        )));
    }
    let exp = expected.edge_map();
    let present: Vec<&Edge> = measured.edges.iter().filter(|e| e.weight.abs() >= threshold).collect();
    let present_keys: BTreeSet<(usize, usize)> = present.iter().map(|e| (e.a, e.b)).collect();

    let mut matched = Vec::new();
    let mut missing = Vec::new();
    let mut traceback = Vec::new();
    for (&key, e) in &exp {
        if present_keys.contains(&key) {
            matched.push(key);
            if e.kind == EdgeKind::Traceback {
                traceback.push(key);
            }
        } else {
            missing.push(key);
        }
    }
    let mut classified_edges = Vec::new();
    let mut extraneous = Vec::new();
    for e in present {
        let kind = match exp.get(&(e.a, e.b)) {
            Some(x) => x.kind,
            None => EdgeKind::Extraneous,
        };
        let c = Edge { kind, ..e.clone() };
        if kind == EdgeKind::Extraneous {
            extraneous.push(c.clone());
        }
        classified_edges.push(c);
    }
    let expected_edges = exp.len();
    let pass = missing.is_empty()
        && (extraneous.is_empty() || (extraneous.len() as f64) < max_extraneous_fraction * expected_edges as f64);
    Ok(StructureReport {
        threshold,
        max_extraneous_fraction,
        expected_edges,
        matched,
        missing,
        extraneous,
        traceback,
        pass,
        classified: AdjacencyGraph { source: measured.source, nodes: measured.nodes.clone(), edges: classified_edges },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Json,
    Dot,
}

pub fn export_graph(g: &AdjacencyGraph, format: GraphFormat) -> Result<String> {
    match format {
        GraphFormat::Json => Ok(serde_json::to_string_pretty(g)?),
        GraphFormat::Dot => {
            let mut s = String::from("graph cvl {\n");
            for n in &g.nodes {
                let _ = writeln!(s, "  {} [label=\"{} ({} Hz)\"];", n.index, n.index, n.center_hz);
            }
            for e in &g.edges {
                let _ = writeln!(s, "  {} -- {} [label=\"{:.4}\", kind=\"{:?}\"];", e.a, e.b, e.weight, e.kind);
            }
            s.push_str("}\n");
            Ok(s)
        }
    }
}

pub fn import_graph_json(text: &str) -> Result<AdjacencyGraph> {
    Ok(serde_json::from_str(text)?)
}
