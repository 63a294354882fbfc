use std::sync::Arc;

use cdssm::sde::{girsanov_log_rn, Ellipticity, FnSde};
use cdssm::{euler_simulate, make_grid, stream, Purpose, WienerIncrements};
use proptest::prelude::*;

fn ou(theta: f64, sigma: f64) -> FnSde {
    FnSde::new(
        1,
        1,
        Ellipticity::Elliptic,
        move |_, x, o| o[0] = -theta * x[0],
        move |_, _, o| o[0] = sigma,
    )
}

fn zero(_: f64, _: &[f64], o: &mut [f64]) {
    o.iter_mut().for_each(|v| *v = 0.0);
}

#[test]
fn girsanov_importance_sampling_recovers_ou_moments() {
    let (theta, x0, delta, n) = (1.0, 0.5, 1.0, 200);
    let model = ou(theta, 1.0);
    let bm = FnSde::new(1, 1, Ellipticity::Elliptic, zero, |_, _, o| o[0] = 1.0);
    let grid = Arc::new(make_grid(delta, n, 0.0).unwrap());
    let target = move |_: f64, x: &[f64], o: &mut [f64]| o[0] = -theta * x[0];
    let draws = 100_000;
    let mut rng = stream(5, Purpose::Simulate, 0, 0);
    let (mut w1, mut w2) = (Vec::with_capacity(draws), Vec::with_capacity(draws));
    for _ in 0..draws {
        let noise = WienerIncrements::sample(grid.clone(), 1, &mut rng);
        let path = euler_simulate(&bm, &[x0], &noise).unwrap();
        let w = girsanov_log_rn(&target, &zero, &model, &path).unwrap().exp();
        let e = path.end()[0];
        w1.push(w * e);
        w2.push(w * e * e);
    }
    let mean_exact = x0 * (-theta * delta).exp();
    let var_exact = (1.0 - (-2.0 * theta * delta).exp()) / (2.0 * theta);
    for (vals, exact) in [(w1, mean_exact), (w2, var_exact + mean_exact * mean_exact)] {
        let m = vals.iter().sum::<f64>() / draws as f64;
        let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (draws as f64 - 1.0)).sqrt();
        let se = sd / (draws as f64).sqrt();
        assert!((m - exact).abs() < 3.0 * se, "estimate {m} exact {exact} se {se}");
    }
}

#[test]
fn girsanov_swap_sums_to_zero() {
    let model = ou(0.7, 0.8);
    let grid = Arc::new(make_grid(2.0, 300, 0.0).unwrap());
    let mut rng = stream(8, Purpose::Simulate, 0, 0);
    let path = euler_simulate(&model, &[1.0], &WienerIncrements::sample(grid, 1, &mut rng)).unwrap();
    let b1 = |_: f64, x: &[f64], o: &mut [f64]| o[0] = -0.7 * x[0];
    let b2 = |s: f64, x: &[f64], o: &mut [f64]| o[0] = s.sin() - x[0] * x[0];
    let ab = girsanov_log_rn(&b1, &b2, &model, &path).unwrap();
    let ba = girsanov_log_rn(&b2, &b1, &model, &path).unwrap();
    assert!(ab.abs() > 1e-3);
    assert!((ab + ba).abs() < 1e-10);
}

#[test]
fn girsanov_converges_at_first_order_on_fixed_path() {
    // Smooth path v = sin on [0, 1], b = -x against b' = 0, σ = 1.
    let model = ou(1.0, 1.0);
    let b = |_: f64, x: &[f64], o: &mut [f64]| o[0] = -x[0];
    let exact = {
        // ∫ -v dv - ½∫ v² ds.
        let v1 = 1f64.sin();
        -0.5 * v1 * v1 - 0.5 * (0.5 - (2.0f64).sin() / 4.0)
    };
    let mut errs = Vec::new();
    for n in [50, 100, 200, 400, 800] {
        let grid = Arc::new(make_grid(1.0, n, 0.0).unwrap());
        let vals: Vec<f64> = grid.points().iter().map(|s| s.sin()).collect();
        let path = cdssm::Path::new(grid, 1, vals).unwrap();
        errs.push((girsanov_log_rn(&b, &zero, &model, &path).unwrap() - exact).abs());
    }
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..2.2).contains(&ratio), "refinement ratio {ratio}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn girsanov_identical_drifts_is_zero(seed in any::<u64>(), theta in -2.0f64..2.0, n in 1usize..60) {
        let model = ou(theta, 1.3);
        let grid = Arc::new(make_grid(0.8, n, 0.0).unwrap());
        let mut rng = stream(seed, Purpose::Simulate, 0, 0);
        let path = euler_simulate(&model, &[0.3], &WienerIncrements::sample(grid, 1, &mut rng)).unwrap();
        let b = move |_: f64, x: &[f64], o: &mut [f64]| o[0] = -theta * x[0];
        prop_assert_eq!(girsanov_log_rn(&b, &b, &model, &path).unwrap(), 0.0);
    }

    #[test]
    fn euler_is_linear_in_noise_for_additive_models(seed in any::<u64>(), n in 1usize..50, x0 in -3.0f64..3.0) {
        let model = FnSde::new(2, 2, Ellipticity::Elliptic, zero, |_, _, o| o.copy_from_slice(&[1.0, 0.5, 0.0, 2.0]));
        let grid = Arc::new(make_grid(1.5, n, 0.0).unwrap());
        let mut rng = stream(seed, Purpose::Simulate, 0, 0);
        let noise = WienerIncrements::sample(grid.clone(), 2, &mut rng);
        let doubled = WienerIncrements::new(grid, 2, noise.values().iter().map(|v| 2.0 * v).collect()).unwrap();
        let p1 = euler_simulate(&model, &[x0, -x0], &noise).unwrap();
        let p2 = euler_simulate(&model, &[x0, -x0], &doubled).unwrap();
        for i in 0..p1.grid().len() {
            for k in 0..2 {
                let x0k = if k == 0 { x0 } else { -x0 };
                prop_assert!(((p2.at(i)[k] - x0k) - 2.0 * (p1.at(i)[k] - x0k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grids_are_strictly_increasing(delta in 0.01f64..10.0, n in 1usize..200, gap in 0.0f64..0.5) {
        let g = make_grid(delta, n, gap).unwrap();
        prop_assert_eq!(g.points()[0], 0.0);
        prop_assert_eq!(*g.points().last().unwrap(), delta);
        prop_assert!(g.points().windows(2).all(|w| w[0] < w[1]));
    }
}
