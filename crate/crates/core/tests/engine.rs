use std::sync::Arc;

use chaoslab::engine::{regenerate_increments, simulate_independent, simulate_interacting, GaussianInit, PointMass};
use chaoslab::grid::TimeGrid;
use chaoslab::law::{FrozenLaw, Tabulation};
use chaoslab::models::{
    make_bounded_kernel_spec, make_kinetic_spec, make_zero_interaction_spec, BoundedKernelModel, KineticModel,
};
use chaoslab::rng::RngPlan;
use chaoslab::stats::mean_se;

#[test]
fn pure_noise_terminal_variance() {
    // X_T = X_0 + sigma W_T with X_0 ~ N(0, 1): Var = 1 + sigma^2 T
    let model = make_zero_interaction_spec(1, 0.5).unwrap();
    let grid = TimeGrid::horizon(2.0, 40).unwrap();
    let ens = simulate_interacting(&model, 20_000, &grid, &GaussianInit::standard(1), &RngPlan::new(1).replication(0)).unwrap();
    let sq: Vec<f64> = (0..ens.n_paths()).map(|i| ens.state(i, 40)[0].powi(2)).collect();
    let s = mean_se(&sq);
    let expected = 1.0 + 0.25 * 2.0;
    assert!((s.mean - expected).abs() < 4.0 * s.std_err, "{} vs {expected} (se {})", s.mean, s.std_err);
}

#[test]
fn no_interaction_paths_match_bitwise() {
    let model = make_zero_interaction_spec(2, 1.0).unwrap();
    let grid = TimeGrid::horizon(1.0, 25).unwrap();
    let init = GaussianInit::standard(2);
    let streams = RngPlan::new(4).replication(3);
    let a = simulate_interacting(&model, 17, &grid, &init, &streams).unwrap();
    let law = FrozenLaw::new(&model, Arc::new(a.clone()), Tabulation::Exact).unwrap();
    let b = simulate_independent(&model, 17, &law, &grid, &init, &streams).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn linear_kernel_mean_is_brownian() {
    // sum_i sum_j (x_j - x_i) = 0, so the particle mean only moves with the noise
    let sigma = 0.7;
    let model = make_bounded_kernel_spec(&BoundedKernelModel::linear(2.0, sigma, 1)).unwrap();
    let grid = TimeGrid::horizon(1.0, 50).unwrap();
    let plan = RngPlan::new(8);
    let mut drift = Vec::new();
    for r in 0..2000 {
        let streams = plan.replication(r);
        let ens = simulate_interacting(&model, 2, &grid, &GaussianInit::standard(1), &streams).unwrap();
        let dw = regenerate_increments(&streams, 2, &grid, 1);
        let noise: f64 = dw.iter().sum::<f64>() / 2.0;
        let moved = (ens.state(0, 50)[0] + ens.state(1, 50)[0] - ens.state(0, 0)[0] - ens.state(1, 0)[0]) / 2.0;
        assert!((moved - sigma * noise).abs() < 1e-12);
        drift.push(moved * moved);
    }
    // Var(mean increment) = sigma^2 T / N
    let s = mean_se(&drift);
    let expected = sigma * sigma / 2.0;
    assert!((s.mean - expected).abs() < 4.0 * s.std_err, "{} vs {expected}", s.mean);
}

#[test]
fn relabelling_streams_permutes_particles() {
    let model = make_bounded_kernel_spec(&BoundedKernelModel::tanh(1.5, 1.0, 2)).unwrap();
    let grid = TimeGrid::horizon(1.0, 30).unwrap();
    let init = GaussianInit::standard(2);
    let streams = RngPlan::new(21).replication(0);
    let perm = vec![3, 0, 5, 1, 2, 4];
    let a = simulate_interacting(&model, 6, &grid, &init, &streams).unwrap();
    let b = simulate_interacting(&model, 6, &grid, &init, &streams.clone().permuted(perm.clone()).unwrap()).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        for k in 0..=30 {
            for (x, y) in b.state(i, k).iter().zip(a.state(p, k)) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn same_seed_same_paths_on_any_pool() {
    let model = make_bounded_kernel_spec(&BoundedKernelModel::tanh(1.0, 1.0, 1)).unwrap();
    let grid = TimeGrid::horizon(0.2, 8).unwrap();
    let init = GaussianInit::standard(1);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_interacting(&model, 600, &grid, &init, &RngPlan::new(5).replication(1)).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(8));
    let other = simulate_interacting(&model, 600, &grid, &init, &RngPlan::new(6).replication(1)).unwrap();
    assert_ne!(one, other);
}

#[test]
fn kinetic_positions_carry_no_noise() {
    let model = make_kinetic_spec(&KineticModel::tanh(1.0, 1.0, 1)).unwrap();
    let grid = TimeGrid::horizon(1.0, 40).unwrap();
    let h = grid.step();
    let ens = simulate_interacting(&model, 16, &grid, &PointMass(vec![0.0, 0.0]), &RngPlan::new(2).replication(0)).unwrap();
    for i in 0..16 {
        for k in 0..40 {
            let (now, next) = (ens.state(i, k), ens.state(i, k + 1));
            assert_eq!(next[0], now[0] + now[1] * h);
        }
    }
    assert!((0..16).any(|i| ens.state(i, 40)[1] != 0.0));
}

#[test]
fn tabulated_law_tracks_exact_law() {
    let model = make_bounded_kernel_spec(&BoundedKernelModel::tanh(1.0, 1.0, 1)).unwrap();
    let grid = TimeGrid::horizon(0.5, 10).unwrap();
    let base = Arc::new(simulate_interacting(&model, 4000, &grid, &GaussianInit::standard(1), &RngPlan::new(9).replication(0)).unwrap());
    let exact = FrozenLaw::new(&model, base.clone(), Tabulation::Exact).unwrap();
    let table = FrozenLaw::new(&model, base, Tabulation::default()).unwrap();
    let probe = simulate_interacting(&model, 300, &grid, &GaussianInit { mean: vec![0.0], std: 3.0 }, &RngPlan::new(10).replication(0)).unwrap();
    let (mut a, mut b) = ([0.0], [0.0]);
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        for i in 0..300 {
            exact.eval(k, probe.prefix(i, k), &mut a);
            table.eval(k, probe.prefix(i, k), &mut b);
            worst = worst.max((a[0] - b[0]).abs());
        }
    }
    assert!(worst < 1e-6, "max table error {worst}");
}
