mod common;

use common::{clean, flat_db, small_layout};
use cvl::dsp::{assemble_covariance, lockin_tone_phases};
use cvl::gaussian::{DriveSpec, DriveTone, ModeLayout};
use cvl::synth::{
    dark_traces, derive_seed, quantization_step, quantize, shot_traces, synth_traces, LowFrequencyExcess, QuadConfig,
    SqueezeModel, TraceKind,
};
use cvl::CvlError;

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

#[test]
fn same_seed_same_traces() {
    let c = clean(small_layout(), flat_db(-3.0), DriveSpec::uniform(&[100e3], 0.18).unwrap(), QuadConfig::XP, 7);
    let a = synth_traces(&c).unwrap();
    let b = synth_traces(&c).unwrap();
    assert_eq!(a, b);
    let mut c2 = c.clone();
    c2.seed = 8;
    assert_ne!(synth_traces(&c2).unwrap().probe, a.probe);
}

#[test]
fn derived_seeds_are_stable_and_distinct() {
    assert_eq!(derive_seed(1, 2), derive_seed(1, 2));
    assert_ne!(derive_seed(1, 2), derive_seed(1, 3));
    assert_ne!(derive_seed(1, 2), derive_seed(2, 2));
}

#[test]
fn shot_traces_have_unit_variance() {
    let c = clean(small_layout(), flat_db(-6.0), DriveSpec::off(), QuadConfig::XX, 3);
    let s = shot_traces(&c).unwrap();
    assert_eq!(s.meta.kind, TraceKind::Shot);
    for x in [&s.probe, &s.conjugate] {
        assert!((variance(x) - 1.0).abs() < 0.02, "{}", variance(x));
    }
    let corr: f64 = s.probe.iter().zip(&s.conjugate).map(|(a, b)| a * b).sum::<f64>() / s.probe.len() as f64;
    assert!(corr.abs() < 0.02);
}

#[test]
fn dark_traces_carry_only_electronic_noise() {
    let mut c = clean(small_layout(), flat_db(-6.0), DriveSpec::off(), QuadConfig::XX, 4);
    c.elec_noise_db = Some(-6.0);
    let d = dark_traces(&c).unwrap();
    let want = 10f64.powf(-0.6);
    assert!((variance(&d.probe) / want - 1.0).abs() < 0.02);
    c.elec_noise_db = None;
    assert!(dark_traces(&c).unwrap().probe.iter().all(|v| *v == 0.0));
}

#[test]
fn broadband_epr_difference_is_squeezed() {
    // Every frequency carries the same r, so the time-domain difference
    // shows the squeezing directly.
    let c = clean(small_layout(), flat_db(-6.0), DriveSpec::off(), QuadConfig::XX, 5);
    let t = synth_traces(&c).unwrap();
    let d: Vec<f64> = t.probe.iter().zip(&t.conjugate).map(|(a, b)| (a - b) / 2f64.sqrt()).collect();
    let db = 10.0 * variance(&d).log10();
    assert!((db + 6.0).abs() < 0.1, "{db}");
    let mut c = c;
    c.quad_config = QuadConfig::PP;
    let t = synth_traces(&c).unwrap();
    let s: Vec<f64> = t.probe.iter().zip(&t.conjugate).map(|(a, b)| (a + b) / 2f64.sqrt()).collect();
    assert!((10.0 * variance(&s).log10() + 6.0).abs() < 0.1);
}

#[test]
fn integer_delay_is_a_circular_shift() {
    let mut c = clean(small_layout(), flat_db(-6.0), DriveSpec::off(), QuadConfig::XX, 6);
    let a = synth_traces(&c).unwrap();
    c.delay_s = 3e-8;
    let b = synth_traces(&c).unwrap();
    assert_eq!(a.probe, b.probe);
    let n = a.conjugate.len();
    for t in 0..100 {
        assert_eq!(b.conjugate[(t + 3) % n], a.conjugate[t]);
    }
}

#[test]
fn quantization_grid_and_clipping() {
    let step = quantization_step(8, 1.0);
    assert!((step - 1.0 / 127.0).abs() < 1e-15);
    let q = quantize(&[0.0, 0.3, 2.0, -2.0], 8, 1.0);
    assert_eq!(q.clip_fraction, 0.5);
    assert_eq!(q.codes, vec![0, 38, 127, -127]);
    for (v, c) in q.values.iter().zip(&q.codes) {
        assert_eq!(*v, *c as f64 * step);
    }
}

#[test]
fn configuration_errors_are_reported() {
    let base = clean(small_layout(), flat_db(-3.0), DriveSpec::uniform(&[100e3], 0.18).unwrap(), QuadConfig::XX, 1);
    let bad = |f: &dyn Fn(&mut cvl::synth::SynthConfig)| {
        let mut c = base.clone();
        f(&mut c);
        matches!(synth_traces(&c), Err(CvlError::Config(_) | CvlError::Layout(_) | CvlError::Drive(_)))
    };
    assert!(bad(&|c| c.samples = 99_999));
    assert!(bad(&|c| c.digitizer_bits = 1));
    assert!(bad(&|c| c.digitizer_bits = 17));
    assert!(bad(&|c| c.fullscale = 0.0));
    assert!(bad(&|c| c.delay_s = -1e-9));
    // 1.0001 ms holds a non-integer number of 100 kHz periods
    assert!(bad(&|c| c.samples = 100_010));
    assert!(bad(&|c| c.sample_dt_s = 5e-7));
    assert!(bad(&|c| c.squeeze = SqueezeModel::Bins { r_of_bin: vec![0.1; 3] }));
    assert!(bad(&|c| c.layout = ModeLayout { bin_width_hz: 120e3, ..c.layout }));
    assert!(synth_traces(&base).is_ok());
}

#[test]
fn low_frequency_excess_only_touches_low_bins() {
    let mut c = clean(small_layout(), flat_db(0.0), DriveSpec::off(), QuadConfig::XX, 9);
    c.lf_excess = Some(LowFrequencyExcess { corner_hz: 150e3, level_db: 20.0 });
    let est = assemble_covariance(&[common::run(&c)]).unwrap();
    let l = c.layout;
    // Per-bin shot variance is the bandwidth fraction.
    let shot = l.bin_width_hz * 2.0 * c.sample_dt_s;
    let v = |i: usize| est.entries[(l.xp(i), l.xp(i))] / shot;
    assert!(v(0) > 50.0, "{}", v(0));
    let rest = (3..l.bins()).map(v).sum::<f64>() / (l.bins() - 3) as f64;
    assert!((rest - 1.0).abs() < 0.05, "{rest}");
}

#[test]
fn tone_phase_moves_the_lockin_phase() {
    let l = small_layout();
    let mut phases = Vec::new();
    for phi in [0.0, 0.7] {
        let drive = DriveSpec::new(
            vec![DriveTone::new(100e3, 0.18).with_phase(phi)],
            cvl::gaussian::Beam::Conjugate,
        )
        .unwrap();
        // 10 ms windows keep the statistical phase error near 0.015 rad
        let runs: Vec<_> = (0..4)
            .map(|s| {
                let mut c = clean(l, flat_db(-6.0), drive.clone(), QuadConfig::XP, 100 + s);
                c.samples = 1_000_000;
                common::run(&c)
            })
            .collect();
        phases.push(lockin_tone_phases(&assemble_covariance(&runs).unwrap())[0]);
    }
    assert!(phases[0].abs() < 0.05, "{phases:?}");
    assert!((phases[1] - 0.7).abs() < 0.05, "{phases:?}");
}
