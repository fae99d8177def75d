use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use cvl::dsp::{bin_filter, quad_covariance, spectrum};
use cvl::gaussian::{apply, chain_covariance, eom_symplectic, tms_symplectic, vacuum_covariance};
use cvl::synth::synth_traces;
use cvl_bench::{chain_3d, synth_3d};

fn gaussian(c: &mut Criterion) {
    let (layout, profile, drive) = chain_3d();
    let mut g = c.benchmark_group("gaussian");
    g.sample_size(10);
    g.bench_function("eom_symplectic_3d", |b| b.iter(|| eom_symplectic(&layout, &drive).unwrap()));
    let s = eom_symplectic(&layout, &drive).unwrap();
    let tms = apply(&tms_symplectic(&layout, &profile).unwrap(), &vacuum_covariance(&layout)).unwrap();
    g.bench_function("apply_eom_3d", |b| b.iter(|| apply(&s, &tms).unwrap()));
    g.bench_function("chain_covariance_3d", |b| b.iter(|| chain_covariance(&layout, &profile, &drive).unwrap()));
    g.finish();
}

fn dsp(c: &mut Criterion) {
    let cfg = synth_3d(1);
    let traces = synth_traces(&cfg).unwrap();
    let mut g = c.benchmark_group("dsp");
    g.sample_size(10);
    g.bench_function("synth_xp_10ms", |b| {
        b.iter_batched(|| synth_3d(2), |c| synth_traces(&c).unwrap(), BatchSize::SmallInput)
    });
    g.bench_function("spectrum_1e6", |b| b.iter(|| spectrum(&traces.probe, cfg.sample_dt_s)));
    g.bench_function("bin_filter_200", |b| b.iter(|| bin_filter(&traces.probe, cfg.sample_dt_s, &cfg.layout).unwrap()));
    let p = bin_filter(&traces.probe, cfg.sample_dt_s, &cfg.layout).unwrap();
    let q = bin_filter(&traces.conjugate, cfg.sample_dt_s, &cfg.layout).unwrap();
    let tones: Vec<f64> = cfg.drive.tones.iter().map(|t| t.frequency_hz).collect();
    g.bench_function("quad_covariance_200x200", |b| b.iter(|| quad_covariance(&p, &q, &tones).unwrap()));
    g.finish();
}

criterion_group!(benches, gaussian, dsp);
criterion_main!(benches);
