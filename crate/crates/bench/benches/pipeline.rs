//! Wall-clock benchmarks for the hot paths: polynomial products, a dense
//! semidefinite solve, end-to-end synthesis on the cubic benchmark, and
//! one integrator step.

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conobs_core::benchmarks::{benchmark, poly19_model};
use conobs_core::poly::Polynomial;
use conobs_core::sdp::{solve, Constraint, Objective, SdpProblem, SolveOptions};
use conobs_core::sim::{simulate, SimConfig};
use conobs_core::synth::{synthesize, SynthesisConfig};

fn poly_mul(c: &mut Criterion) {
    let a = Polynomial::parse("x1 - 1/3*x1^3 - x1*x2^2 + 2*y - x2*y^2").unwrap();
    let b = Polynomial::parse("x1^2 + x2^2 + y^2 + x1*x2 - 0.5*x1*y").unwrap();
    c.bench_function("poly_mul_deg3_x_deg2", |bench| bench.iter(|| a.mul(&b)));
}

fn sdp_solve(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 12;
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = &g * g.transpose() + DMatrix::identity(n, n) * 0.1;
    let mut p = SdpProblem::new(vec![n], 0);
    for _ in 0..8 {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let a = (&m + m.transpose()) * 0.5;
        let rhs = a.dot(&x0);
        p.constraints.push(Constraint { mats: vec![(0, a)], free: vec![], rhs });
    }
    p.objective = Objective { mats: vec![(0, DMatrix::identity(n, n))], free: vec![] };
    c.bench_function("sdp_solve_12x12_8eq", |bench| {
        bench.iter(|| solve(&p, &SolveOptions::default()).unwrap())
    });
}

fn synth_cubic(c: &mut Criterion) {
    let model = poly19_model();
    let cfg = SynthesisConfig { lambda: 1.0, deg_phi: 2, deg_fz: 3, ..Default::default() };
    c.bench_function("synthesize_cubic_rate1", |bench| {
        bench.iter(|| synthesize(&model, &cfg).unwrap())
    });
}

fn integrator_step(c: &mut Criterion) {
    let b = benchmark("poly19").unwrap();
    let cfg = SimConfig { t_final: 0.1, dt: 1e-3, noise_amplitude: 0.0, ..b.sim.clone() };
    c.bench_function("simulate_cubic_100_steps", |bench| {
        bench.iter(|| simulate(&b.model, Some(&b.observer), &b.x0, &b.y0, &b.xi0, &cfg).unwrap())
    });
}

criterion_group!(benches, poly_mul, sdp_solve, synth_cubic, integrator_step);
criterion_main!(benches);
