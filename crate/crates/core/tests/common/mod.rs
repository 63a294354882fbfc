#![allow(dead_code)]

use std::sync::Arc;

use cdssm::{
    kalman_cd, simulate, zoo, BridgeKind, CdSsm, DensityMode, EndpointProposal, FkModel, ForwardProposal, Gaussian,
    KalmanOutput, LinearGaussianObs, LinearSde,
};
use nalgebra::{DMatrix, DVector};

pub struct Fixture {
    pub lin: LinearSde,
    pub obs: LinearGaussianObs,
    pub ssm: Arc<CdSsm>,
    pub states: Vec<Vec<f64>>,
}

pub fn times(t_len: usize, delta: f64) -> Vec<f64> {
    (0..=t_len).map(|k| k as f64 * delta).collect()
}

/// OU with θ, σ observed directly with noise variance `r`, data simulated at `n_sim` steps.
pub fn ou_fixture(theta: f64, sigma: f64, r: f64, delta: f64, t_len: usize, n_steps: usize, seed: u64) -> Fixture {
    let lin = zoo::ou(theta, 0.0, sigma).unwrap();
    let obs = LinearGaussianObs::observe_coordinate(1, 0, r).unwrap();
    let ts = times(t_len, delta);
    let sim = simulate(&lin, &obs, &[0.0], &ts, 200, seed).unwrap();
    let ssm = CdSsm::new(
        Arc::new(lin.clone()),
        Arc::new(obs.clone()),
        vec![0.0],
        ts,
        sim.data,
        n_steps,
        0.0,
    )
    .unwrap();
    Fixture {
        lin,
        obs,
        ssm: Arc::new(ssm),
        states: sim.states,
    }
}

pub fn ibm_fixture(sigma: f64, r: f64, delta: f64, t_len: usize, n_steps: usize, seed: u64) -> Fixture {
    let lin = zoo::integrated_bm(sigma).unwrap();
    let obs = LinearGaussianObs::observe_coordinate(2, 0, r).unwrap();
    let ts = times(t_len, delta);
    let sim = simulate(&lin, &obs, &[0.0, 0.0], &ts, 200, seed).unwrap();
    let ssm = CdSsm::new(
        Arc::new(lin.clone()),
        Arc::new(obs.clone()),
        vec![0.0, 0.0],
        ts,
        sim.data,
        n_steps,
        0.0,
    )
    .unwrap();
    Fixture {
        lin,
        obs,
        ssm: Arc::new(ssm),
        states: sim.states,
    }
}

pub fn kalman(f: &Fixture) -> KalmanOutput {
    let d = f.ssm.dim();
    let prior = Gaussian {
        mean: DVector::from_column_slice(f.ssm.x0()),
        cov: DMatrix::zeros(d, d),
    };
    kalman_cd(&f.lin, &f.obs, &prior, f.ssm.times(), f.ssm.data(), 200).unwrap()
}

pub fn fm(f: &Fixture) -> FkModel {
    cdssm::make_fm(
        f.ssm.clone(),
        ForwardProposal::default(),
        BridgeKind::DelyonHu,
        DensityMode::Auto,
    )
    .unwrap()
}

pub fn bm(f: &Fixture) -> FkModel {
    cdssm::make_bm(
        f.ssm.clone(),
        EndpointProposal::default(),
        BridgeKind::default(),
        DensityMode::Auto,
    )
    .unwrap()
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Exact log-likelihood of an OU model observed with noise, by Kalman filtering.
pub fn ou_kalman_loglik(theta: f64, sigma: f64, r: f64, times: &[f64], data: &[Vec<f64>]) -> f64 {
    let lin = match zoo::ou(theta, 0.0, sigma) {
        Ok(l) => l,
        Err(_) => return f64::NEG_INFINITY,
    };
    let obs = LinearGaussianObs::observe_coordinate(1, 0, r).unwrap();
    let prior = Gaussian {
        mean: DVector::zeros(1),
        cov: DMatrix::zeros(1, 1),
    };
    kalman_cd(&lin, &obs, &prior, times, data, 100).map_or(f64::NEG_INFINITY, |k| k.log_likelihood)
}

/// Random-walk Metropolis on `log_target`, returning the draws after `burn_in`.
pub fn rw_metropolis(
    log_target: impl Fn(&[f64]) -> f64,
    init: &[f64],
    step: &[f64],
    n_iter: usize,
    burn_in: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = cdssm::stream(seed, cdssm::Purpose::Chain, 7, 7);
    let mut x = init.to_vec();
    let mut lx = log_target(&x);
    let mut out = Vec::with_capacity(n_iter - burn_in);
    for it in 0..n_iter {
        let cand: Vec<f64> = x
            .iter()
            .zip(step)
            .map(|(v, s)| v + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lc = log_target(&cand);
        if rng.random::<f64>().ln() < lc - lx {
            x = cand;
            lx = lc;
        }
        if it >= burn_in {
            out.push(x.clone());
        }
    }
    out
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let size = xs.len() / batches;
    let means: Vec<f64> = xs
        .chunks(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let (_, sd) = mean_sd(&means);
    (xs.iter().sum::<f64>() / xs.len() as f64, sd / (batches as f64).sqrt())
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[((v.len() - 1) as f64 * q).round() as usize]
}
