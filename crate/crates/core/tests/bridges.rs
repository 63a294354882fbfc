use std::sync::Arc;

use cdssm::bridges::{bridge_sample, map_f, map_f_inv, map_h, sample_bridge_noise};
use cdssm::sde::{Ellipticity, FnSde};
use cdssm::{euler_simulate, make_grid, stream, zoo, Bridge, BridgeKind, GuidedProxy, Purpose, WienerIncrements};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn bm(sigma: f64) -> FnSde {
    FnSde::new(
        1,
        1,
        Ellipticity::Elliptic,
        |_, _, o| o[0] = 0.0,
        move |_, _, o| o[0] = sigma,
    )
}

fn nonlinear2() -> FnSde {
    FnSde::new(
        2,
        2,
        Ellipticity::Elliptic,
        |s, x, o| {
            o[0] = -x[0] + 0.5 * x[1].sin();
            o[1] = 0.3 * s - x[0] * x[1] * 0.2;
        },
        |_, x, o| o.copy_from_slice(&[1.0 + 0.1 * x[1].cos(), 0.2, 0.0, 0.7 + 0.05 * x[0] * x[0]]),
    )
}

fn kolmogorov_p(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..100 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        p += sign * 2.0 * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn delyon_hu_map_gives_brownian_bridge_midpoints() {
    let (e0, e1, delta, n) = (0.3, -0.5, 1.0, 1000);
    let grid = Arc::new(make_grid(delta, n, 0.0).unwrap());
    let model = bm(1.0);
    let bridge = Bridge::new(&model, BridgeKind::DelyonHu, grid.clone(), &[e0], &[e1]).unwrap();
    let draws = 100_000;
    let mut rng = stream(21, Purpose::Simulate, 0, 0);
    let mut mids: Vec<f64> = (0..draws)
        .map(|_| {
            let noise = WienerIncrements::sample(grid.clone(), 1, &mut rng);
            map_f(&bridge, &model, &noise).unwrap().at(n / 2)[0]
        })
        .collect();
    mids.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let law = Normal::new(0.5 * (e0 + e1), (delta / 4.0).sqrt()).unwrap();
    let d = mids
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let c = law.cdf(*x);
            (c - i as f64 / draws as f64)
                .abs()
                .max(((i + 1) as f64 / draws as f64 - c).abs())
        })
        .fold(0.0, f64::max);
    let p = kolmogorov_p(d, draws);
    assert!(p > 0.01, "KS distance {d}, p = {p}");
}

#[test]
fn zero_noise_delyon_hu_traces_the_chord() {
    let grid = Arc::new(make_grid(2.0, 16, 0.0).unwrap());
    let model = bm(0.0001);
    let bridge = Bridge::new(&model, BridgeKind::DelyonHu, grid.clone(), &[1.0], &[3.0]).unwrap();
    let noise = WienerIncrements::new(grid.clone(), 1, vec![0.0; 16]).unwrap();
    let path = bridge_sample(&bridge, &model, &noise).unwrap();
    for (i, s) in grid.points().iter().enumerate() {
        assert!((path.at(i)[0] - (1.0 + s)).abs() < 1e-12);
    }
}

#[test]
fn delyon_hu_refuses_hypo_elliptic_models() {
    let grid = Arc::new(make_grid(1.0, 10, 0.0).unwrap());
    let ibm = zoo::integrated_bm(1.0).unwrap();
    assert!(Bridge::new(&ibm, BridgeKind::DelyonHu, grid.clone(), &[0.0, 0.0], &[1.0, 0.0]).is_err());
    let guided = Bridge::new(&ibm, BridgeKind::default(), grid, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
    assert!(guided.matching_error(&ibm).unwrap() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bridges_end_exactly_at_the_target(seed in any::<u64>(), n in 2usize..80, e in -3.0f64..3.0, kind in 0usize..4) {
        let kind = [
            BridgeKind::DelyonHu,
            BridgeKind::Guided(GuidedProxy::EndpointBm),
            BridgeKind::Guided(GuidedProxy::LinearizedAtStart),
            BridgeKind::Guided(GuidedProxy::LinearizedAtEnd),
        ][kind];
        let model = nonlinear2();
        let grid = Arc::new(make_grid(0.9, n, 0.0).unwrap());
        let end = [e, -0.5 * e];
        let bridge = Bridge::new(&model, kind, grid.clone(), &[0.2, 0.1], &end).unwrap();
        let mut rng = stream(seed, Purpose::Simulate, 0, 0);
        let noise = WienerIncrements::sample(grid, 2, &mut rng);
        let path = map_h(&bridge, &model, &noise).unwrap();
        prop_assert_eq!(path.end(), &end[..]);
        prop_assert_eq!(path.start(), &[0.2, 0.1][..]);
    }

    #[test]
    fn forward_map_round_trips(seed in any::<u64>(), n in 2usize..60) {
        let model = nonlinear2();
        let grid = Arc::new(make_grid(0.7, n, 0.0).unwrap());
        let mut rng = stream(seed, Purpose::Simulate, 0, 0);
        let path = euler_simulate(&model, &[0.4, -0.3], &WienerIncrements::sample(grid.clone(), 2, &mut rng)).unwrap();
        let bridge = Bridge::new(&model, BridgeKind::DelyonHu, grid.clone(), path.start(), path.end()).unwrap();
        let u = map_f_inv(&bridge, &model, &path).unwrap();
        let back = map_f(&bridge, &model, &u).unwrap();
        for (a, b) in back.values().iter().zip(path.values()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        let fresh = sample_bridge_noise(grid, 2, &mut rng);
        let again = map_f_inv(&bridge, &model, &map_f(&bridge, &model, &fresh).unwrap()).unwrap();
        for (a, b) in again.values().iter().zip(fresh.values()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}
