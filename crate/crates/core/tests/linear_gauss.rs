#![allow(clippy::needless_range_loop)]

use approx::assert_relative_eq;
use cdssm::linear_gauss::{endpoint_posterior, rho_tilde_log_grad, solve_transition};
use cdssm::{kalman_cd, zoo, Gaussian, LinearGaussianObs, LinearSde};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn lin2() -> LinearSde {
    LinearSde::constant(
        &DVector::from_vec(vec![0.3, -0.1]),
        &DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -0.4, -0.2]),
        &DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.2, 0.4]),
    )
    .unwrap()
}

#[test]
fn semigroup_on_nested_intervals() {
    let lin = lin2();
    let full = solve_transition(&lin, 0.0, 1.3, 200).unwrap();
    let head = solve_transition(&lin, 0.0, 0.5, 200).unwrap();
    let tail = solve_transition(&lin, 0.5, 1.3, 200).unwrap();
    assert_relative_eq!(full.phi, &tail.phi * &head.phi, epsilon = 1e-8);
    assert_relative_eq!(full.offset, &tail.phi * &head.offset + &tail.offset, epsilon = 1e-8);
    assert_relative_eq!(
        full.cov,
        &tail.phi * &head.cov * tail.phi.transpose() + &tail.cov,
        epsilon = 1e-8
    );
}

#[test]
fn posterior_precision_adds_observation_information() {
    let lin = lin2();
    let obs = LinearGaussianObs::new(
        DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
        DMatrix::from_element(1, 1, 0.2),
    )
    .unwrap();
    let tr = solve_transition(&lin, 0.0, 0.7, 100).unwrap();
    let post = endpoint_posterior(&lin, &obs, &[0.4], &[0.1, -0.2], 0.7).unwrap();
    let prec_post = post.cov.clone().try_inverse().unwrap();
    let prec_prior = tr.cov.clone().try_inverse().unwrap();
    let h = obs.h();
    let info = h.transpose() * obs.r().clone().try_inverse().unwrap() * h;
    assert_relative_eq!(prec_post, prec_prior + &info, epsilon = 1e-8, max_relative = 1e-10);
    // Normal equations at the posterior mean.
    let mu = tr.mean(&DVector::from_vec(vec![0.1, -0.2]));
    let lhs = (&tr.cov.clone().try_inverse().unwrap() + &info) * &post.mean;
    let rhs = tr.cov.clone().try_inverse().unwrap() * mu
        + h.transpose() * obs.r().clone().try_inverse().unwrap() * DVector::from_vec(vec![0.4]);
    assert!((lhs - rhs).norm() < 1e-8);
}

#[test]
fn posterior_limits() {
    let lin = lin2();
    let tr = solve_transition(&lin, 0.0, 0.7, 100).unwrap();
    let e_prev = [0.1, -0.2];
    let mu = tr.mean(&DVector::from_column_slice(&e_prev));
    let vague = LinearGaussianObs::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 1e12).unwrap();
    let post = endpoint_posterior(&lin, &vague, &[3.0, 3.0], &e_prev, 0.7).unwrap();
    assert_relative_eq!(post.mean, mu, max_relative = 1e-6, epsilon = 1e-9);
    assert_relative_eq!(post.cov, tr.cov, max_relative = 1e-6);
    let sharp = LinearGaussianObs::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 1e-12).unwrap();
    let post = endpoint_posterior(&lin, &sharp, &[3.0, -1.0], &e_prev, 0.7).unwrap();
    assert!((post.mean[0] - 3.0).abs() < 1e-5 && (post.mean[1] + 1.0).abs() < 1e-5);
}

#[test]
fn rho_tilde_brownian_closed_form_and_vague_limit() {
    let bm = LinearSde::constant(&DVector::zeros(1), &DMatrix::zeros(1, 1), &DMatrix::identity(1, 1)).unwrap();
    let r = 0.3;
    let obs = LinearGaussianObs::observe_coordinate(1, 0, r).unwrap();
    let (s, x, y, delta) = (0.2, 0.4, 1.1, 1.0);
    let (log, grad) = rho_tilde_log_grad(&bm, &obs, &[y], s, &[x], delta).unwrap();
    let var = delta - s + r;
    assert_relative_eq!(
        log,
        -0.5 * ((y - x) * (y - x) / var + (2.0 * std::f64::consts::PI * var).ln()),
        epsilon = 1e-12
    );
    assert_relative_eq!(grad[0], (y - x) / var, epsilon = 1e-12);
    let vague = LinearGaussianObs::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 1e12).unwrap();
    let (_, g) = rho_tilde_log_grad(&lin2(), &vague, &[1.0, 2.0], 0.1, &[0.0, 0.0], 1.0).unwrap();
    assert!(g.norm() < 1e-6);
}

#[test]
fn kalman_matches_dense_joint_gaussian() {
    // Integrated Brownian motion with a diffuse start, T = 3, against the
    // joint Gaussian law of (Y_1, Y_2, Y_3) built from closed-form transitions.
    let sigma = 0.8;
    let lin = zoo::integrated_bm(sigma).unwrap();
    let obs = LinearGaussianObs::observe_coordinate(2, 0, 0.25).unwrap();
    let times = [0.0, 0.5, 1.2, 1.5];
    let data = vec![vec![0.3], vec![0.1], vec![-0.4]];
    let prior = Gaussian {
        mean: DVector::from_vec(vec![0.2, -0.1]),
        cov: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]),
    };
    let out = kalman_cd(&lin, &obs, &prior, &times, &data, 200).unwrap();

    let phi = |dt: f64| DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let q = |dt: f64| {
        DMatrix::from_row_slice(2, 2, &[dt.powi(3) / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt]) * (sigma * sigma)
    };
    // State mean and joint covariance of (X_1, X_2, X_3), 6 × 6.
    let mut means = Vec::new();
    let mut blocks: Vec<Vec<DMatrix<f64>>> = vec![vec![DMatrix::zeros(2, 2); 3]; 3];
    let mut m = prior.mean.clone();
    let mut marg = prior.cov.clone();
    let mut trans = Vec::new();
    for t in 0..3 {
        let f = phi(times[t + 1] - times[t]);
        m = &f * &m;
        marg = &f * &marg * f.transpose() + q(times[t + 1] - times[t]);
        means.push(m.clone());
        blocks[t][t] = marg.clone();
        trans.push(f);
    }
    for j in 0..3 {
        for i in j + 1..3 {
            let mut prop = DMatrix::identity(2, 2);
            for k in j + 1..=i {
                prop = &trans[k] * prop;
            }
            blocks[i][j] = &prop * &blocks[j][j];
            blocks[j][i] = blocks[i][j].transpose();
        }
    }
    let mut cov_y = DMatrix::zeros(3, 3);
    let mut mean_y = DVector::zeros(3);
    for i in 0..3 {
        mean_y[i] = means[i][0];
        for j in 0..3 {
            cov_y[(i, j)] = blocks[i][j][(0, 0)] + if i == j { 0.25 } else { 0.0 };
        }
    }
    let y = DVector::from_vec(vec![0.3, 0.1, -0.4]);
    let chol = cov_y.clone().cholesky().unwrap();
    let r = &y - &mean_y;
    let quad = r.dot(&chol.solve(&r));
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let dense = -0.5 * (quad + logdet + 3.0 * (2.0 * std::f64::consts::PI).ln());
    assert_relative_eq!(out.log_likelihood, dense, epsilon = 1e-8);
}

#[test]
fn deterministic_flow_when_noise_vanishes() {
    let lin = zoo::ou(0.8, 1.0, 0.0).unwrap();
    let obs = LinearGaussianObs::observe_coordinate(1, 0, 0.5).unwrap();
    let times = [0.0, 0.4, 1.0, 1.7];
    let x0 = 3.0;
    let prior = Gaussian {
        mean: DVector::from_element(1, x0),
        cov: DMatrix::zeros(1, 1),
    };
    let out = kalman_cd(&lin, &obs, &prior, &times, &[vec![5.0], vec![-2.0], vec![0.0]], 200).unwrap();
    for (t, g) in out.filtered.iter().enumerate() {
        let flow = 1.0 + (x0 - 1.0) * (-0.8 * times[t + 1]).exp();
        assert_relative_eq!(g.mean[0], flow, epsilon = 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn filter_update_never_increases_covariance(seed in 0u64..1000, r in 0.01f64..2.0) {
        let ts: Vec<f64> = (0..=6).map(|k| 0.3 * k as f64 + 0.01 * ((seed + k) % 7) as f64).collect();
        let data: Vec<Vec<f64>> = (0..6).map(|k| vec![((seed * 31 + k * 17) % 13) as f64 / 6.0 - 1.0]).collect();
        let lin = zoo::integrated_bm(0.9).unwrap();
        let obs = LinearGaussianObs::observe_coordinate(2, 0, r).unwrap();
        let prior = Gaussian { mean: DVector::zeros(2), cov: DMatrix::identity(2, 2) };
        let out = kalman_cd(&lin, &obs, &prior, &ts, &data, 100).unwrap();
        for (p, f) in out.predicted.iter().zip(&out.filtered) {
            let diff = &p.cov - &f.cov;
            let min_eig = diff.symmetric_eigen().eigenvalues.min();
            prop_assert!(min_eig >= -1e-10);
        }
    }
}
