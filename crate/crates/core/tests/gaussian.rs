use cvl::gaussian::{
    apply, bessel_j, chain_covariance, eom_symplectic, eom_symplectic_single, omega, symplectic_defect,
    symplectic_inverse, tms_symplectic, vacuum_covariance, Beam, CovarianceMatrix, DriveSpec, DriveTone, ModeLayout,
    Normalization, SqueezeProfile, SymplecticMatrix,
};
use cvl::CvlError;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn layout(m: usize, g: usize) -> ModeLayout {
    ModeLayout::new(m, 100e3, 90e3, 100e3, g).unwrap()
}

fn conj_drive(freqs: &[f64], m: f64) -> DriveSpec {
    DriveSpec::new(freqs.iter().map(|&f| DriveTone::new(f, m)).collect(), Beam::Conjugate).unwrap()
}

#[test]
fn layout_rejects_bad_geometry() {
    assert!(matches!(ModeLayout::new(10, 100e3, 100e3, 100e3, 0), Err(CvlError::Layout(_))));
    assert!(matches!(ModeLayout::new(10, 100e3, 90e3, 10e3, 0), Err(CvlError::Layout(_))));
    assert!(matches!(ModeLayout::new(1, 100e3, 90e3, 100e3, 0), Err(CvlError::Layout(_))));
    let l = ModeLayout::with_fill(10, 200e3, 100e3, 2).unwrap();
    assert_eq!(l.bin_width_hz, 180e3);
    assert_eq!(l.bins(), 14);
    assert_eq!(l.dim(), 56);
    assert_eq!(l.interior(), 2..12);
}

#[test]
fn offsets_must_be_whole_spacings() {
    let l = layout(20, 0);
    assert_eq!(l.offset_of(300e3).unwrap(), 3);
    assert!(matches!(l.offset_of(150e3), Err(CvlError::Drive(_))));
}

#[test]
fn vacuum_is_half_identity() {
    let l = layout(5, 1);
    let v = vacuum_covariance(&l);
    assert_eq!(v.entries, DMatrix::identity(28, 28) * 0.5);
    assert_eq!(v.to_shot_normalized().entries, DMatrix::identity(28, 28));
    assert_eq!(v.to_shot_normalized().to_absolute(), v);
}

#[test]
fn zero_squeezing_and_zero_index_are_identity() {
    let l = layout(6, 1);
    let tms = tms_symplectic(&l, &SqueezeProfile::flat(&l, 0.0).unwrap()).unwrap();
    assert!((tms.entries.clone() - DMatrix::identity(l.dim(), l.dim())).amax() < 1e-15);
    let s = eom_symplectic(&l, &conj_drive(&[100e3], 0.0)).unwrap();
    assert!((s.entries - DMatrix::identity(l.dim(), l.dim())).amax() < 1e-15);
}

#[test]
fn profile_length_is_checked() {
    let l = layout(6, 1);
    let p = SqueezeProfile::new(vec![0.1; 3]).unwrap();
    assert!(tms_symplectic(&l, &p).is_err());
}

#[test]
fn eom_rejects_phase_and_offsets_beyond_chain() {
    let l = layout(4, 0);
    let tone = DriveTone::new(100e3, 0.18).with_phase(0.3);
    assert!(matches!(eom_symplectic_single(&l, &tone, Beam::Conjugate), Err(CvlError::Drive(_))));
    assert!(eom_symplectic_single(&l, &DriveTone::new(400e3, 0.18), Beam::Conjugate).is_err());
    assert!(eom_symplectic_single(&l, &DriveTone::new(300e3, 0.18), Beam::Conjugate).is_ok());
}

#[test]
fn apply_checks_dimensions() {
    let a = vacuum_covariance(&layout(4, 0));
    let s = SymplecticMatrix::identity(5);
    assert!(matches!(apply(&s, &a), Err(CvlError::Dimension(_))));
    assert!(CovarianceMatrix::new(3, DMatrix::zeros(10, 10), Normalization::Absolute).is_err());
}

#[test]
fn symplectic_inverse_of_eom_is_transpose() {
    let l = layout(12, 2);
    let s = eom_symplectic(&l, &conj_drive(&[100e3, 300e3], 0.18)).unwrap();
    let inv = symplectic_inverse(&s);
    // Single tone: exact transpose. Two tones: products of transposes in reverse order.
    let s1 = eom_symplectic(&l, &conj_drive(&[100e3], 0.18)).unwrap();
    assert!((symplectic_inverse(&s1).entries - s1.entries.transpose()).amax() < 1e-15);
    assert!((inv.entries - s.entries.transpose()).amax() < 1e-15);
}

#[test]
fn bessel_anchor_values() {
    // 60 V drive: m = 60π/520 ≈ 0.3625, quoted as 0.36.
    let m60 = 60.0 * std::f64::consts::PI / 520.0;
    assert!((bessel_j(0, m60) - 0.967).abs() < 5e-4);
    assert!((bessel_j(1, m60) - 0.178).abs() < 5e-4);
    assert!((30.0 * std::f64::consts::PI / 520.0 - 0.181).abs() < 5e-4);
    assert_eq!(bessel_j(0, 0.0), 1.0);
    assert_eq!(bessel_j(3, 0.0), 0.0);
}

#[test]
fn probe_and_conjugate_placement_agree_off_the_same_beam_blocks() {
    let l = layout(30, 4);
    let p = SqueezeProfile::flat(&l, 0.3).unwrap();
    let conj = chain_covariance(&l, &p, &conj_drive(&[100e3, 300e3], 0.18)).unwrap();
    let probe = chain_covariance(&l, &p, &conj_drive(&[100e3, 300e3], 0.18).with_beam(Beam::Probe)).unwrap();
    let n = l.bins();
    // Cross-beam blocks coincide; same-beam blocks differ at second order.
    for (ra, ca) in [(0, 1), (0, 3), (1, 2), (2, 3)] {
        for i in l.interior() {
            for j in l.interior() {
                let (a, b) = (ra * n + i, ca * n + j);
                assert!((conj.entries[(a, b)] - probe.entries[(a, b)]).abs() < 1e-12, "block ({ra},{ca}) {i},{j}");
            }
        }
    }
    let same = (0..n).map(|i| (conj.entries[(i, i)] - probe.entries[(i, i)]).abs()).fold(0.0, f64::max);
    assert!(same > 1e-4);
}

#[test]
fn both_halved_uses_half_index_on_each_beam() {
    let l = layout(8, 1);
    let d = DriveSpec::new(vec![DriveTone::new(100e3, 0.36)], Beam::BothHalved).unwrap();
    let s = eom_symplectic(&l, &d).unwrap();
    let j1 = bessel_j(1, 0.18);
    let n = l.bins();
    assert!((s.entries[(l.xp(2), 2 * n + 3)] - j1).abs() < 1e-15);
    assert!((s.entries[(l.xc(2), 3 * n + 3)] - j1).abs() < 1e-15);
}

#[test]
fn multi_tone_order_matters_only_at_the_edges() {
    let l = layout(40, 4);
    let p = SqueezeProfile::flat(&l, 0.2).unwrap();
    let a = chain_covariance(&l, &p, &conj_drive(&[100e3, 300e3], 0.18)).unwrap();
    let mut rev = conj_drive(&[100e3, 300e3], 0.18);
    rev.tones.reverse();
    // eom_symplectic applies in ascending frequency, so build the reversed
    // product by hand.
    let s_hi = eom_symplectic_single(&l, &rev.tones[0], Beam::Conjugate).unwrap();
    let s_lo = eom_symplectic_single(&l, &rev.tones[1], Beam::Conjugate).unwrap();
    let tms = apply(&tms_symplectic(&l, &p).unwrap(), &vacuum_covariance(&l)).unwrap();
    let b = apply(&s_lo, &apply(&s_hi, &tms).unwrap()).unwrap();
    let n = l.bins();
    let mut interior_diff: f64 = 0.0;
    let mut full_diff: f64 = 0.0;
    for ra in 0..4 {
        for ca in 0..4 {
            for i in 0..n {
                for j in 0..n {
                    let d = (a.entries[(ra * n + i, ca * n + j)] - b.entries[(ra * n + i, ca * n + j)]).abs();
                    full_diff = full_diff.max(d);
                    if l.is_interior(i) && l.is_interior(j) {
                        interior_diff = interior_diff.max(d);
                    }
                }
            }
        }
    }
    assert!(interior_diff < 1e-12, "{interior_diff}");
    assert!(full_diff > 1e-6);
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tms_is_exactly_symplectic(r in prop::collection::vec(0.0f64..1.0, 6)) {
        let l = layout(4, 1);
        let s = tms_symplectic(&l, &SqueezeProfile::new(r).unwrap()).unwrap();
        prop_assert!(symplectic_defect(&s) < 1e-12);
    }

    #[test]
    fn tms_state_is_physical(r in 0.0f64..1.0) {
        // Σ + iΩ/2 ⪰ 0, checked through the real 2d×2d embedding.
        let l = layout(3, 0);
        let sigma = apply(&tms_symplectic(&l, &SqueezeProfile::flat(&l, r).unwrap()).unwrap(), &vacuum_covariance(&l)).unwrap();
        let d = l.dim();
        let o = omega(d) * 0.5;
        let mut big = DMatrix::zeros(2 * d, 2 * d);
        big.view_mut((0, 0), (d, d)).copy_from(&sigma.entries);
        big.view_mut((d, d), (d, d)).copy_from(&sigma.entries);
        big.view_mut((0, d), (d, d)).copy_from(&(-&o));
        big.view_mut((d, 0), (d, d)).copy_from(&o);
        prop_assert!(min_eig(&big) > -1e-9);
    }

    #[test]
    fn eom_defect_is_bounded_by_first_sideband_loss(m in 0.01f64..0.5, k in 1usize..4, extra in 2usize..12) {
        // every bin keeps at least one partner inside the chain
        let n = 2 * k + extra;
        let l = layout(n, 0);
        let s = eom_symplectic_single(&l, &DriveTone::new(k as f64 * 100e3, m), Beam::Conjugate).unwrap();
        let (j0, j1) = (bessel_j(0, m), bessel_j(1, m));
        let d = symplectic_defect(&s);
        prop_assert!(d >= j1 * j1 - 1e-12);
        prop_assert!(d <= (1.0 - j0 * j0 - j1 * j1).max(j1 * j1) + 1e-12);
    }

    #[test]
    fn apply_keeps_symmetry_and_normalization(r in 0.0f64..0.6, m in 0.0f64..0.4) {
        let l = layout(10, 1);
        let sigma = chain_covariance(&l, &SqueezeProfile::flat(&l, r).unwrap(), &conj_drive(&[100e3, 300e3], m)).unwrap();
        prop_assert_eq!(sigma.normalization, Normalization::Absolute);
        prop_assert!(sigma.asymmetry() == 0.0);
        let shot = sigma.to_shot_normalized();
        prop_assert!((shot.entries.clone() * 0.5 - sigma.entries.clone()).amax() < 1e-15);
    }

    #[test]
    fn sparse_and_dense_apply_agree(r in 0.0f64..0.6, m in 0.0f64..0.4) {
        let l = layout(12, 1);
        let p = SqueezeProfile::flat(&l, r).unwrap();
        let tms = apply(&tms_symplectic(&l, &p).unwrap(), &vacuum_covariance(&l)).unwrap();
        let s = eom_symplectic(&l, &conj_drive(&[100e3, 300e3], m)).unwrap();
        let sparse = apply(&s, &tms).unwrap();
        let dense = &s.entries * &tms.entries * s.entries.transpose();
        prop_assert!((sparse.entries - dense).amax() < 1e-13);
    }
}
