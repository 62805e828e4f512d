use chaoslab::engine::{simulate_interacting, GaussianInit};
use chaoslab::grid::TimeGrid;
use chaoslab::law::FrozenLaw;
use chaoslab::models::{make_bounded_kernel_spec, BoundedKernelModel};
use chaoslab::reference::{build_reference_law, PicardConfig};
use chaoslab::rng::RngPlan;
use chaoslab::stats::mean_se;

#[test]
fn linear_reference_law_keeps_mean_zero() {
    let model = make_bounded_kernel_spec(&BoundedKernelModel::linear(1.0, 1.0, 1)).unwrap();
    let grid = TimeGrid::horizon(1.0, 20).unwrap();
    let law = build_reference_law(&model, 4000, &grid, &GaussianInit::standard(1), &RngPlan::new(3), &PicardConfig::default()).unwrap();
    let e = law.ensemble();
    let xs: Vec<f64> = (0..e.n_paths()).map(|i| e.state(i, 20)[0]).collect();
    let s = mean_se(&xs);
    assert!(s.mean.abs() < 4.0 * s.std_err, "{} +- {}", s.mean, s.std_err);
}

/// Root mean square of `B(law a) - B(law b)` over probe paths and steps.
fn rms_gap(a: &FrozenLaw, b: &FrozenLaw, probe: &chaoslab::ensemble::PathEnsemble) -> f64 {
    let (mut x, mut y) = ([0.0], [0.0]);
    let mut sum = 0.0;
    let mut count = 0.0;
    for k in 1..probe.grid().n_steps() {
        for i in 0..probe.n_paths() {
            a.eval(k, probe.prefix(i, k), &mut x);
            b.eval(k, probe.prefix(i, k), &mut y);
            sum += (x[0] - y[0]).powi(2);
            count += 1.0;
        }
    }
    (sum / count).sqrt()
}

#[test]
fn frozen_drift_noise_shrinks_like_root_n_ref() {
    // two independent laws of equal size differ by O(N_ref^{-1/2})
    let model = make_bounded_kernel_spec(&BoundedKernelModel::tanh(1.0, 1.0, 1)).unwrap();
    let grid = TimeGrid::horizon(0.5, 20).unwrap();
    let init = GaussianInit::standard(1);
    let cfg = PicardConfig {
        n_picard: 1,
        ..PicardConfig::default()
    };
    let probe = simulate_interacting(&model, 400, &grid, &init, &RngPlan::new(1).replication(0)).unwrap();
    let gap = |n_ref: usize| {
        let a = build_reference_law(&model, n_ref, &grid, &init, &RngPlan::new(2), &cfg).unwrap();
        let b = build_reference_law(&model, n_ref, &grid, &init, &RngPlan::new(3), &cfg).unwrap();
        rms_gap(a.frozen(), b.frozen(), &probe)
    };
    let ratio = gap(1000) / gap(4000);
    assert!(ratio > 2.0 / 1.5 && ratio < 2.0 * 1.5, "ratio {ratio}");
}
