use bimono::bdsim::{run_full, RunLimits};
use bimono::model::bd_rhs;
use bimono::pde::step_implicit;
use bimono::semigroup::{iterate_profile, ClusterProfile};
use bimono::{blayer, lv, phase34, stability};
use bimono_bench::{reference_pde, self_similar_state};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn rhs(c: &mut Criterion) {
    let (p, s) = self_similar_state();
    let mut dc = vec![0.0; s.c.len()];
    c.bench_function("bd_rhs n=1000", |b| b.iter(|| bd_rhs(p.epsilon, s.v, s.w, black_box(&s.c), &mut dc)));
}

fn lv_cycle(c: &mut Criterion) {
    c.bench_function("lv cycle E=1 eps=0.01", |b| b.iter(|| lv::solve_cycle(black_box(1.0), 0.01).unwrap()));
}

fn full_cycles(c: &mut Criterion) {
    let (p, s) = self_similar_state();
    let limits = RunLimits { max_cycles: 2, t_end: 1e6, sample_dt: 0.0 };
    let mut g = c.benchmark_group("full system");
    g.sample_size(10);
    g.bench_function("two cycles eps=0.02 n=1000", |b| b.iter(|| run_full(&p, &s, limits).unwrap()));
    g.finish();
}

fn pde_step(c: &mut Criterion) {
    let (grid, state) = reference_pde();
    c.bench_function("implicit step 500 cells", |b| b.iter(|| step_implicit(black_box(&state), 0.6, 0.6, &grid).unwrap()));
}

fn profile_map(c: &mut Criterion) {
    let p = ClusterProfile::half_gaussian(1.0);
    c.bench_function("profile map sigma2=1e-3", |b| b.iter(|| iterate_profile(black_box(&p), 1e-3).unwrap()));
}

fn reduced_models(c: &mut Criterion) {
    let mut g = c.benchmark_group("reduced models");
    g.sample_size(10);
    g.bench_function("boundary layer default grid", |b| b.iter(|| blayer::solve_default(1e-9).unwrap()));
    g.bench_function("phase III 5 cycles", |b| {
        b.iter(|| phase34::run_phase3_cycle(1e-3, 0.01, None, 5, phase34::Phase3Model::Reduced).unwrap())
    });
    g.bench_function("truncated Jacobian spectrum n=300", |b| b.iter(|| stability::truncated_spectrum(0.02, 300).unwrap()));
    g.finish();
}

criterion_group!(benches, rhs, lv_cycle, full_cycles, pde_step, profile_map, reduced_models);
criterion_main!(benches);
