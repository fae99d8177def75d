//! End-to-end pipeline: simulate runs to disk, analyze a set of runs,
//! evaluate the analytic reference, and verify graph structure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, NormalizationMode, RunSpec};
use crate::dsp::{
    bin_filter_spectrum, bin_independence, compensate_delay, lockin_covariance, lockin_tone_phases, normalize,
    run_sectors, spectrum, squeezing_spectrum, CovarianceAccumulator, CovarianceEstimate, DelayObjective, ElecSpectrum,
    EprSign, IndependenceReport, NormalizeMode, RunData, RunSectors, Sector, SqueezingRow,
};
use crate::error::{CvlError, Result};
use crate::gaussian::{
    chain_covariance, eom_symplectic, symplectic_defect, CovarianceMatrix, DriveSpec, ModeLayout, Normalization,
};
use crate::graph::{
    covariance_adjacency, expected_hypercube, export_graph, extract_v_u, glu_transform, offdiag_ratio,
    rotate_conjugate, verify_structure, GraphFormat, StructureReport,
};
use crate::io::{read_trace, write_covariance, write_trace};
use crate::nullifier::{
    epr_nullifier_matrix, error_matrix, nullifier_report, transform_nullifiers, Method, NullifierReport,
};
use crate::synth::{dark_traces, shot_traces, synth_traces, QuadConfig, TraceKind, TraceSet};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub run: RunSpec,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub name: String,
    pub config: String,
    pub runs: Vec<ManifestEntry>,
}

pub fn simulate_run(cfg: &ExperimentConfig, run: &RunSpec) -> Result<TraceSet> {
    let sc = cfg.synth_config(run);
    match run.kind {
        TraceKind::Signal => synth_traces(&sc),
        TraceKind::Shot => shot_traces(&sc),
        TraceKind::Dark => dark_traces(&sc),
    }
}

/// Writes one trace file per planned run, the config snapshot and the
/// manifest.
pub fn write_simulation(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let traces = out.join("traces");
    fs::create_dir_all(&traces)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_json()?)?;
    let plan = cfg.run_plan();
    let runs = plan
        .par_iter()
        .map(|run| {
            let file = format!("traces/{}.cvlt", run.id);
            write_trace(&out.join(&file), &simulate_run(cfg, run)?)?;
            Ok(ManifestEntry { run: run.clone(), file })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { version: cfg.version, name: cfg.name.clone(), config: CONFIG_FILE.into(), runs };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Loads a manifest and the config snapshot it names. Trace paths are
/// resolved relative to the manifest.
pub fn load_manifest(path: &Path) -> Result<(Manifest, ExperimentConfig, PathBuf)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = ExperimentConfig::from_json(&fs::read_to_string(base.join(&manifest.config))?)?;
    Ok((manifest, cfg, base))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub name: String,
    pub delay_s: f64,
    pub delay_source: String,
    pub normalization: NormalizationMode,
    pub run_counts: BTreeMap<String, usize>,
    pub samples_trimmed: usize,
    pub tone_phases_rad: Vec<f64>,
    pub independence: Option<IndependenceReport>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AnalysisResult {
    pub layout: ModeLayout,
    pub drive: DriveSpec,
    /// Normalized EOM-on estimate (EOM-off when the drive is off).
    pub primary: Option<CovarianceEstimate>,
    /// Normalized EOM-off estimate, when the drive is on.
    pub reference: Option<CovarianceEstimate>,
    pub shot: CovarianceEstimate,
    pub elec: Option<ElecSpectrum>,
    pub spectrum: Vec<SqueezingRow>,
    pub matrix_report: Option<NullifierReport>,
    pub lockin_report: Option<NullifierReport>,
    pub summary: AnalysisSummary,
}

impl AnalysisResult {
    pub fn covariance(&self) -> Option<CovarianceMatrix> {
        self.primary.as_ref().map(CovarianceEstimate::as_covariance)
    }
}

fn group_name(run: &RunSpec) -> &'static str {
    match (run.kind, run.eom_on) {
        (TraceKind::Signal, true) => "eom-on",
        (TraceKind::Signal, false) => "eom-off",
        (TraceKind::Shot, _) => "shot",
        (TraceKind::Dark, _) => "dark",
    }
}

fn check_trace(run: &RunSpec, ts: &TraceSet, layout: &ModeLayout) -> Result<()> {
    let (p, c) = run.quad.labels();
    if ts.meta.kind != run.kind || (run.kind == TraceKind::Signal && (ts.meta.probe_quad, ts.meta.conjugate_quad) != (p, c))
    {
        return Err(CvlError::Format(format!("trace for run {} does not match its manifest entry", run.id)));
    }
    if ts.meta.config.layout != *layout {
        return Err(CvlError::Config(format!("trace for run {} uses a different layout", run.id)));
    }
    Ok(())
}

/// Pools XX runs (EOM off preferred, then PP) to find the conjugate delay.
fn find_delay<F>(cfg: &ExperimentConfig, plan: &[RunSpec], load: &F) -> Result<(f64, String)>
where
    F: Fn(&RunSpec) -> Result<TraceSet> + Sync,
{
    if let Some(d) = cfg.analysis.fixed_delay_s {
        return Ok((d, "fixed".into()));
    }
    let order = [(QuadConfig::XX, false), (QuadConfig::XX, true), (QuadConfig::PP, false), (QuadConfig::PP, true)];
    for (quad, eom) in order {
        let picks: Vec<&RunSpec> = plan
            .iter()
            .filter(|r| r.kind == TraceKind::Signal && r.quad == quad && r.eom_on == eom)
            .take(cfg.analysis.delay_runs.max(1))
            .collect();
        if picks.is_empty() {
            continue;
        }
        let spectra = picks
            .par_iter()
            .map(|r| {
                let ts = load(r)?;
                check_trace(r, &ts, &cfg.layout)?;
                let dt = ts.meta.config.sample_dt_s;
                Ok((spectrum(&ts.probe, dt), spectrum(&ts.conjugate, dt)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut obj = DelayObjective::new(&cfg.layout, spectra[0].0.df(), EprSign::from(quad));
        for (p, c) in &spectra {
            obj.add(p, c);
        }
        let tau = obj.minimize(cfg.analysis.delay_search_s, 0.2e-9)?;
        let source = format!("{} {} runs, EOM {}", picks.len(), quad.as_str(), if eom { "on" } else { "off" });
        return Ok((tau, source));
    }
    Ok((0.0, "no squeezed runs".into()))
}

fn process_run(cfg: &ExperimentConfig, run: &RunSpec, ts: &TraceSet, delay: f64) -> Result<RunSectors> {
    check_trace(run, ts, &cfg.layout)?;
    let dt = ts.meta.config.sample_dt_s;
    let ps = spectrum(&ts.probe, dt);
    let mut cs = spectrum(&ts.conjugate, dt);
    compensate_delay(&mut cs, delay);
    let drive = if run.eom_on { cfg.drive.clone() } else { DriveSpec { tones: vec![], ..cfg.drive.clone() } };
    let data = RunData {
        label: run.quad,
        kind: run.kind,
        eom_on: run.eom_on,
        probe: bin_filter_spectrum(&ps, &cfg.layout)?,
        conjugate: bin_filter_spectrum(&cs, &cfg.layout)?,
        drive,
    };
    run_sectors(&data)
}

fn sector_runs(q: QuadConfig) -> (Sector, &'static str) {
    match q {
        QuadConfig::XX => (Sector::XpXc, "XX runs"),
        QuadConfig::PP => (Sector::PpPc, "PP runs"),
        QuadConfig::XP => (Sector::XpPc, "XP runs"),
    }
}

/// Delay search, per-run covariance sectors (in parallel), averaging,
/// normalization and nullifier reports.
pub fn analyze_runs<F>(cfg: &ExperimentConfig, plan: &[RunSpec], load: F) -> Result<AnalysisResult>
where
    F: Fn(&RunSpec) -> Result<TraceSet> + Sync,
{
    let layout = cfg.layout;
    let (delay, delay_source) = find_delay(cfg, plan, &load)?;
    let sectors = plan
        .par_iter()
        .map(|run| process_run(cfg, run, &load(run)?, delay))
        .collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<&str, CovarianceAccumulator> = BTreeMap::new();
    let mut run_counts = BTreeMap::new();
    let mut samples_trimmed = 0;
    for (run, s) in plan.iter().zip(&sectors) {
        let g = group_name(run);
        groups.entry(g).or_insert_with(|| CovarianceAccumulator::new(layout)).add(s)?;
        *run_counts.entry(format!("{g} {}", run.quad.as_str())).or_insert(0) += 1;
        samples_trimmed = samples_trimmed.max(s.samples_trimmed);
    }
    let finish = |g: &str| groups.get(g).map(CovarianceAccumulator::finish).transpose();
    let shot_raw = finish("shot")?.ok_or_else(|| CvlError::MissingSector("shot-noise runs".into()))?;
    let dark_raw = finish("dark")?;
    let mode = match cfg.analysis.normalization {
        NormalizationMode::ShotRatio => NormalizeMode::ShotRatio,
        NormalizationMode::ElecSubtract => {
            let dark = dark_raw.as_ref().ok_or_else(|| CvlError::MissingSector("dark (electronic noise) runs".into()))?;
            NormalizeMode::ElecSubtract(ElecSpectrum::from_estimate(dark))
        }
    };
    let elec = match &mode {
        NormalizeMode::ElecSubtract(e) => Some(e.clone()),
        NormalizeMode::ShotRatio => None,
    };
    let on = finish("eom-on")?.map(|e| normalize(&e, &shot_raw, &mode)).transpose()?;
    let off = finish("eom-off")?.map(|e| normalize(&e, &shot_raw, &mode)).transpose()?;
    let mut notes = Vec::new();

    let (primary, reference) = match (on, off) {
        (Some(a), b) => (Some(a), b),
        (None, Some(b)) if cfg.drive.is_off() => (Some(b), None),
        (None, b) => (None, b),
    };
    if let Some(p) = &primary {
        let missing: Vec<String> = cfg
            .quad_configs
            .iter()
            .map(|&q| sector_runs(q))
            .filter(|(s, _)| !p.has(*s))
            .map(|(s, what)| format!("{} ({what})", s.name()))
            .collect();
        if !missing.is_empty() {
            return Err(CvlError::MissingSector(missing.join(", ")));
        }
    } else if cfg.runs > 0 && !cfg.drive.is_off() {
        return Err(CvlError::MissingSector("all EOM-on sectors (no EOM-on runs found)".into()));
    }

    let spectrum_rows = match (&reference, &primary) {
        (Some(r), _) => squeezing_spectrum(r),
        (None, Some(p)) => squeezing_spectrum(p),
        (None, None) => {
            notes.push("no signal runs: spectrum is the shot-noise reference against itself".into());
            squeezing_spectrum(&normalize(&shot_raw, &shot_raw, &NormalizeMode::ShotRatio)?)
        }
    };

    let independence = match &reference {
        Some(r) => bin_independence(r).ok(),
        None if cfg.drive.is_off() => primary.as_ref().and_then(|p| bin_independence(p).ok()),
        None => None,
    };

    let mut matrix_report = None;
    let mut lockin_report = None;
    let mut tone_phases = Vec::new();
    if let Some(p) = &primary {
        let need_xp = !cfg.drive.is_off();
        if p.mask.xx && p.mask.pp && (p.mask.xp || !need_xp) {
            let n = transform_nullifiers(&epr_nullifier_matrix(&layout), &eom_symplectic(&layout, &cfg.drive)?)?;
            let shot = vacuum_shot(&layout);
            let count = p.run_counts.values().copied().min().unwrap_or(0);
            let mut rep = nullifier_report(&p.as_covariance(), &shot, &n, &layout, Method::Matrix)?;
            rep.run_count = count;
            rep.window_s = p.window_s;
            matrix_report = Some(rep);
            if need_xp && !p.lockin.is_empty() {
                tone_phases = lockin_tone_phases(p);
                let sigma = lockin_covariance(p, &tone_phases);
                let mut rep = nullifier_report(&sigma, &shot, &n, &layout, Method::Lockin)?;
                rep.run_count = count;
                rep.window_s = p.window_s;
                lockin_report = Some(rep);
            }
        } else {
            notes.push("nullifier reports need XX, PP and XP sectors; skipped".into());
        }
    }

    Ok(AnalysisResult {
        layout,
        drive: cfg.drive.clone(),
        primary,
        reference,
        shot: shot_raw,
        elec,
        spectrum: spectrum_rows,
        matrix_report,
        lockin_report,
        summary: AnalysisSummary {
            name: cfg.name.clone(),
            delay_s: delay,
            delay_source,
            normalization: cfg.analysis.normalization,
            run_counts,
            samples_trimmed,
            tone_phases_rad: tone_phases,
            independence,
            notes,
        },
    })
}

fn vacuum_shot(layout: &ModeLayout) -> CovarianceMatrix {
    let d = layout.dim();
    CovarianceMatrix { bins: layout.bins(), entries: nalgebra::DMatrix::identity(d, d), normalization: Normalization::ShotNormalized }
}

/// Synthesizes every planned run on the fly instead of reading files.
pub fn analyze_in_memory(cfg: &ExperimentConfig) -> Result<AnalysisResult> {
    cfg.validate()?;
    analyze_runs(cfg, &cfg.run_plan(), |r| simulate_run(cfg, r))
}

pub fn analyze_manifest(path: &Path) -> Result<(AnalysisResult, ExperimentConfig)> {
    let (manifest, cfg, base) = load_manifest(path)?;
    let plan: Vec<RunSpec> = manifest.runs.iter().map(|e| e.run.clone()).collect();
    let files: BTreeMap<&str, PathBuf> = manifest.runs.iter().map(|e| (e.run.id.as_str(), base.join(&e.file))).collect();
    let result = analyze_runs(&cfg, &plan, |r| read_trace(&files[r.id.as_str()]))?;
    Ok((result, cfg))
}

fn spectrum_csv(rows: &[SqueezingRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("mode,mode_center_hz,epr_x_db,epr_p_db\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.mode, r.center_hz, opt(r.x_db), opt(r.p_db));
    }
    s
}

/// EOM-off EPR, EOM-on EPR and nullifiers side by side, one row per mode.
fn curves_csv(spectrum: &[SqueezingRow], report: &NullifierReport) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from(
        "mode,mode_center_hz,epr_off_x_db,epr_off_p_db,epr_on_x_db,epr_on_p_db,null_x_db,null_p_db\n",
    );
    for r in &report.rows {
        let off = spectrum.iter().find(|o| o.mode == r.mode);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.mode,
            r.mode_center_hz,
            opt(off.and_then(|o| o.x_db)),
            opt(off.and_then(|o| o.p_db)),
            r.epr_x_db,
            r.epr_p_db,
            r.null_x_db,
            r.null_p_db
        );
    }
    s
}

fn lockin_csvs(est: &CovarianceEstimate, phases: &[f64]) -> (String, String) {
    let mut tones = String::from("tone_hz,phase_rad\n");
    for (t, ph) in est.drive.tones.iter().zip(phases) {
        let _ = writeln!(tones, "{},{}", t.frequency_hz, ph);
    }
    let mut pairs = String::from("tone_hz,probe_mode,conjugate_mode,re,im,amplitude,phase_rad\n");
    for ((t, i, j), v) in &est.lockin {
        let _ = writeln!(
            pairs,
            "{},{},{},{},{},{},{}",
            est.drive.tones[*t].frequency_hz,
            i,
            j,
            v.re,
            v.im,
            v.norm(),
            v.arg()
        );
    }
    (tones, pairs)
}

/// Writes the analysis outputs and returns the file names written.
pub fn write_analysis(
    result: &AnalysisResult,
    cfg: &ExperimentConfig,
    out: &Path,
    methods: &[Method],
) -> Result<Vec<String>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: &str| -> Result<()> {
        fs::write(out.join(name), body)?;
        written.push(name.to_string());
        Ok(())
    };
    put(CONFIG_FILE, &cfg.to_json()?)?;
    put("spectrum.csv", &spectrum_csv(&result.spectrum))?;
    if let Some(r) = &result.matrix_report {
        put("curves.csv", &curves_csv(&result.spectrum, r))?;
    }
    for m in methods {
        let rep = match m {
            Method::Matrix => &result.matrix_report,
            Method::Lockin => &result.lockin_report,
        };
        if let Some(r) = rep {
            put(&format!("nullifiers_{}.csv", m.as_str()), &r.to_csv())?;
        }
    }
    if let Some(p) = &result.primary {
        if !p.lockin.is_empty() {
            let (tones, pairs) = lockin_csvs(p, &result.summary.tone_phases_rad);
            put("lockin_phases.csv", &tones)?;
            put("lockin_pairs.csv", &pairs)?;
        }
    }
    put("analysis.json", &(serde_json::to_string_pretty(&result.summary)? + "\n"))?;
    drop(put);
    let mut mats = Vec::new();
    if let Some(p) = &result.primary {
        mats.push(("covariance", p.as_covariance()));
    }
    if let Some(r) = &result.reference {
        mats.push(("covariance_eom_off", r.as_covariance()));
    }
    for (stem, sigma) in mats {
        for ext in ["csv", "cvl1"] {
            let name = format!("{stem}.{ext}");
            write_covariance(&out.join(&name), &sigma, &result.layout)?;
            written.push(name);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub name: String,
    pub bins: usize,
    pub interior_modes: usize,
    pub tones_hz: Vec<f64>,
    pub mod_index: Vec<f64>,
    pub offsets: Vec<usize>,
    pub symplectic_defect: f64,
    pub vu_residual: f64,
    pub offdiag_ratio_before_glu: f64,
    pub offdiag_ratio_after_glu: f64,
    pub error_vector_max: f64,
    pub error_vector_mean: f64,
    pub expected_edges: usize,
    pub structure_pass: bool,
}

#[derive(Debug, Clone)]
pub struct TheoryResult {
    pub sigma: CovarianceMatrix,
    pub report: NullifierReport,
    pub error_vector: Vec<f64>,
    pub structure: StructureReport,
    pub summary: TheorySummary,
}

/// Interior entries of a per-mode vector of length 2n (probe then conjugate).
fn interior_values(v: &[f64], layout: &ModeLayout) -> Vec<f64> {
    let n = layout.bins();
    layout.interior().map(|i| v[i]).chain(layout.interior().map(|i| v[n + i])).collect()
}

/// Analytic chain, nullifiers, GLU-transformed V/U and error vector, and
/// the structure check of the analytic covariance.
pub fn theory(cfg: &ExperimentConfig) -> Result<TheoryResult> {
    let layout = cfg.layout;
    let profile = cfg.profile()?;
    let sigma = chain_covariance(&layout, &profile, &cfg.drive)?.to_shot_normalized();
    let s_eom = eom_symplectic(&layout, &cfg.drive)?;
    let n = transform_nullifiers(&epr_nullifier_matrix(&layout), &s_eom)?;
    let report = nullifier_report(&sigma, &vacuum_shot(&layout), &n, &layout, Method::Matrix)?;

    let glu = glu_transform(&sigma, &cfg.analysis.glu)?;
    let vu = extract_v_u(&glu)?;
    let before = extract_v_u(&rotate_conjugate(&sigma, cfg.analysis.glu.theta)?)?;
    let err = error_matrix(&glu, &vu.v)?;
    let ev = interior_values(&err.error_vector, &layout);

    let expected = expected_hypercube(&layout, &cfg.drive)?;
    let measured = covariance_adjacency(&sigma, &layout, cfg.analysis.threshold)?;
    let structure =
        verify_structure(&measured, &expected, cfg.analysis.threshold, cfg.analysis.max_extraneous_fraction)?;

    let summary = TheorySummary {
        name: cfg.name.clone(),
        bins: layout.bins(),
        interior_modes: layout.mode_count,
        tones_hz: cfg.drive.tones.iter().map(|t| t.frequency_hz).collect(),
        mod_index: cfg.drive.tones.iter().map(|t| t.mod_index).collect(),
        offsets: cfg.drive.offsets(&layout)?,
        symplectic_defect: symplectic_defect(&s_eom),
        vu_residual: vu.residual,
        offdiag_ratio_before_glu: offdiag_ratio(&before.u, &layout),
        offdiag_ratio_after_glu: offdiag_ratio(&vu.u, &layout),
        error_vector_max: ev.iter().cloned().fold(f64::MIN, f64::max),
        error_vector_mean: ev.iter().sum::<f64>() / ev.len() as f64,
        expected_edges: structure.expected_edges,
        structure_pass: structure.pass,
    };
    Ok(TheoryResult { sigma, report, error_vector: err.error_vector, structure, summary })
}

pub fn write_theory(result: &TheoryResult, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(out)?;
    let layout = cfg.layout;
    let n = layout.bins();
    let mut ev = String::from("beam,mode,mode_center_hz,error\n");
    for (a, v) in result.error_vector.iter().enumerate() {
        let (beam, i) = if a < n { ("probe", a) } else { ("conjugate", a - n) };
        if layout.is_interior(i) {
            let _ = writeln!(ev, "{beam},{i},{},{v}", layout.center(i));
        }
    }
    let expected = expected_hypercube(&layout, &cfg.drive)?;
    let files: Vec<(&str, String)> = vec![
        (CONFIG_FILE, cfg.to_json()?),
        ("theory_nullifiers.csv", result.report.to_csv()),
        ("error_vector.csv", ev),
        ("expected_graph.json", export_graph(&expected, GraphFormat::Json)?),
        ("expected_graph.dot", export_graph(&expected, GraphFormat::Dot)?),
        ("theory_graph.json", export_graph(&result.structure.classified, GraphFormat::Json)?),
        ("theory.json", serde_json::to_string_pretty(&result.summary)? + "\n"),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        fs::write(out.join(name), body)?;
        written.push(name.to_string());
    }
    for ext in ["csv", "cvl1"] {
        let name = format!("theory_covariance.{ext}");
        write_covariance(&out.join(&name), &result.sigma, &layout)?;
        written.push(name);
    }
    Ok(written)
}

/// Structure check of a covariance against the lattice its config implies.
pub fn verify_covariance(
    sigma: &CovarianceMatrix,
    layout: &ModeLayout,
    cfg: &ExperimentConfig,
    threshold: f64,
) -> Result<StructureReport> {
    if *layout != cfg.layout {
        return Err(CvlError::Config("covariance layout differs from the config layout".into()));
    }
    let sigma = sigma.to_shot_normalized();
    let expected = expected_hypercube(layout, &cfg.drive)?;
    let measured = covariance_adjacency(&sigma, layout, threshold)?;
    verify_structure(&measured, &expected, threshold, cfg.analysis.max_extraneous_fraction)
}
