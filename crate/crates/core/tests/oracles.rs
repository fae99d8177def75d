//! Values checked against independent computations: numerical quadrature,
//! hand-expanded matrices, closed-form statistics and brute-force counting.

use std::f64::consts::PI;

use cvl::dsp::{normalize, CovarianceAccumulator, NormalizeMode, ElecSpectrum, RunSectors, Sector};
use cvl::gaussian::{
    bessel_j, chain_covariance, eom_symplectic_single, tms_symplectic, apply, vacuum_covariance, Beam, DriveSpec,
    DriveTone, ModeLayout, SqueezeProfile,
};
use cvl::graph::{expected_hypercube, EdgeKind};
use cvl::synth::{quantize, QuadConfig, TraceKind};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

/// Jn(m) = (1/π) ∫₀^π cos(nτ - m sin τ) dτ by composite Simpson.
fn bessel_integral(n: u32, m: f64) -> f64 {
    let steps = 2000;
    let h = PI / steps as f64;
    let f = |t: f64| (n as f64 * t - m * t.sin()).cos();
    let mut s = f(0.0) + f(PI);
    for i in 1..steps {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 / PI
}

#[test]
fn bessel_matches_integral_representation() {
    for &m in &[0.0, 0.05, 0.09, 0.18, 0.36, 0.5, 1.0, 2.4] {
        for n in 0..4 {
            let a = bessel_j(n, m);
            let b = bessel_integral(n, m);
            assert!((a - b).abs() < 1e-12, "J{n}({m}): series {a} vs integral {b}");
        }
    }
    assert!((bessel_j(1, 0.18) - 0.0896).abs() < 5e-5);
}

#[test]
fn tms_single_pair_by_hand() {
    // One bin: Σ_abs = ½ [[c, s, 0, 0], [s, c, 0, 0], [0, 0, c, -s], [0, 0, -s, c]]
    // with c = cosh 4r, s = sinh 4r.
    let layout = ModeLayout::new(1 + 1, 100e3, 90e3, 100e3, 0).unwrap();
    let r = 0.25;
    let sigma = apply(&tms_symplectic(&layout, &SqueezeProfile::flat(&layout, r).unwrap()).unwrap(), &vacuum_covariance(&layout))
        .unwrap();
    let e = &sigma.entries;
    let (xp, xc, pp, pc) = (layout.xp(0), layout.xc(0), layout.pp(0), layout.pc(0));
    assert!((e[(xp, xp)] - 1f64.cosh() / 2.0).abs() < 1e-12);
    assert!((e[(xp, xc)] - 0.5876).abs() < 1e-4);
    assert!((e[(pp, pc)] + 0.5876).abs() < 1e-4);
    // EPR variance, shot-normalized: (Xp - Xc)²/2 relative to 1/2.
    let epr = (e[(xp, xp)] + e[(xc, xc)] - 2.0 * e[(xp, xc)]) / 2.0 / 0.5;
    assert!((epr - 0.3679).abs() < 1e-4);
    let epr_p = (e[(pp, pp)] + e[(pc, pc)] + 2.0 * e[(pp, pc)]) / 2.0 / 0.5;
    assert!((epr_p - (-1f64).exp()).abs() < 1e-12);
}

#[test]
fn eom_two_bins_by_hand() {
    // Conjugate EOM, two bins, offset 1: only Xc/Pc rows change.
    let layout = ModeLayout::new(2, 100e3, 90e3, 100e3, 0).unwrap();
    let m = 0.36;
    let s = eom_symplectic_single(&layout, &DriveTone::new(100e3, m), Beam::Conjugate).unwrap();
    let (j0, j1) = (bessel_j(0, m), bessel_j(1, m));
    let mut expect = DMatrix::<f64>::identity(8, 8);
    // Xc0 = 2, Xc1 = 3, Pc0 = 6, Pc1 = 7
    for (x, p) in [(2, 6), (3, 7)] {
        expect[(x, x)] = j0;
        expect[(p, p)] = j0;
    }
    expect[(2, 7)] = j1;
    expect[(3, 6)] = j1;
    expect[(6, 3)] = -j1;
    expect[(7, 2)] = -j1;
    assert_eq!(s.entries, expect);
}

#[test]
fn eom_single_sideband_covariance_by_hand() {
    // Conjugate EOM on a TMS chain: cov(Xp_i, Pc'_{i±1}) = -J1 cov(Xp_i, Xc_i).
    let layout = ModeLayout::new(6, 100e3, 90e3, 100e3, 0).unwrap();
    let r = 0.2;
    let m = 0.18;
    let drive = DriveSpec::new(vec![DriveTone::new(100e3, m)], Beam::Conjugate).unwrap();
    let sigma = chain_covariance(&layout, &SqueezeProfile::flat(&layout, r).unwrap(), &drive).unwrap();
    let want = -bessel_j(1, m) * (4.0 * r).sinh() / 2.0;
    for i in 1..5 {
        for j in [i - 1, i + 1] {
            assert!((sigma.entries[(layout.xp(i), layout.pc(j))] - want).abs() < 1e-14);
        }
    }
}

#[test]
fn quantization_noise_is_step_squared_over_twelve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bits = 8;
    let fullscale = 4.0;
    let x: Vec<f64> = (0..400_000).map(|_| rng.random_range(-3.0..3.0)).collect();
    let q = quantize(&x, bits, fullscale);
    let var = x.iter().zip(&q.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    let oracle = q.step * q.step / 12.0;
    assert!((var / oracle - 1.0).abs() < 0.01, "{var} vs {oracle}");
    assert_eq!(q.clip_fraction, 0.0);
}

#[test]
fn clip_fraction_at_one_sigma_is_gaussian_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x: Vec<f64> = (0..400_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let q = quantize(&x, 8, 1.0);
    // 2Φ(-1) = erfc(1/√2)
    let oracle = 0.317_310_507_862_914_1;
    assert!((q.clip_fraction - oracle).abs() < 3e-3, "{}", q.clip_fraction);
}

fn diag_estimate(layout: &ModeLayout, probe_var: f64, conj_var: f64, cross: f64) -> cvl::dsp::CovarianceEstimate {
    let n = layout.bins();
    let mut sectors = BTreeMap::new();
    sectors.insert(Sector::XpXp, DMatrix::from_diagonal_element(n, n, probe_var));
    sectors.insert(Sector::XcXc, DMatrix::from_diagonal_element(n, n, conj_var));
    sectors.insert(Sector::XpXc, DMatrix::from_diagonal_element(n, n, cross));
    let run = RunSectors {
        label: QuadConfig::XX,
        kind: TraceKind::Signal,
        eom_on: false,
        drive: DriveSpec::off(),
        sectors,
        lockin: BTreeMap::new(),
        window_s: 0.01,
        samples_trimmed: 0,
    };
    let mut acc = CovarianceAccumulator::new(*layout);
    acc.add(&run).unwrap();
    acc.finish().unwrap()
}

#[test]
fn power_addition_with_electronic_floor() {
    // True EPR variance 0.5 of shot (-3 dB), electronic floor 0.25 of shot (-6 dB).
    let layout = ModeLayout::new(4, 100e3, 90e3, 100e3, 0).unwrap();
    let (shot, elec) = (1.0, 0.25);
    // var(Xp - Xc)/2 = 0.5 with equal variances v and covariance c: v - c = 0.5.
    let (v, c) = (1.5, 1.0);
    let raw = diag_estimate(&layout, v + elec, v + elec, c);
    let shot_est = diag_estimate(&layout, shot + elec, shot + elec, 0.0);
    let dark = diag_estimate(&layout, elec, elec, 0.0);

    let epr_db = |e: &cvl::dsp::CovarianceEstimate| {
        let x = &e.entries;
        10.0 * ((x[(0, 0)] + x[(4, 4)] - 2.0 * x[(0, 4)]) / 2.0).log10()
    };
    let ratio = normalize(&raw, &shot_est, &NormalizeMode::ShotRatio).unwrap();
    let sub = normalize(&raw, &shot_est, &NormalizeMode::ElecSubtract(ElecSpectrum::from_estimate(&dark))).unwrap();
    let oracle_ratio = 10.0 * ((0.5 + 0.25) / (1.0 + 0.25f64)).log10();
    let oracle_sub = 10.0 * (((0.5 + 0.25) - 0.25) / ((1.0 + 0.25) - 0.25f64)).log10();
    assert!((epr_db(&ratio) - oracle_ratio).abs() < 1e-12, "{} vs {oracle_ratio}", epr_db(&ratio));
    assert!((epr_db(&sub) - oracle_sub).abs() < 1e-12);
    assert!((epr_db(&sub) + 3.0103).abs() < 1e-3);
    assert!(epr_db(&ratio) > -2.3 && epr_db(&ratio) < -2.1);
}

/// Lattice edges of a 3×3×3 cube found by comparing coordinates.
fn brute_force_cube_edges() -> (usize, usize) {
    let coord = |r: usize| [r % 3, (r / 3) % 3, r / 9];
    let mut lattice = 0;
    let mut total = 0;
    for k in [1usize, 3, 9] {
        for r in 0..27 - k {
            total += 1;
            let (a, b) = (coord(r), coord(r + k));
            let diffs: Vec<usize> = (0..3).map(|d| a[d].abs_diff(b[d])).collect();
            if diffs.iter().filter(|&&d| d == 1).count() == 1 && diffs.iter().all(|&d| d <= 1) {
                lattice += 1;
            }
        }
    }
    (lattice, total)
}

#[test]
fn cube_edge_counts_match_brute_force() {
    let (lattice, total) = brute_force_cube_edges();
    assert_eq!(lattice, 54);
    let layout = ModeLayout::new(27, 100e3, 90e3, 100e3, 0).unwrap();
    let g = expected_hypercube(&layout, &DriveSpec::uniform(&[100e3, 300e3, 900e3], 0.18).unwrap()).unwrap();
    assert_eq!(g.edges.len(), total);
    assert_eq!(g.edges.iter().filter(|e| e.kind == EdgeKind::Lattice).count(), lattice);
    assert_eq!(g.edges.iter().filter(|e| e.kind == EdgeKind::Traceback).count(), total - lattice);
}
