//! Shared fixtures for the benchmarks in `benches/`.

use std::sync::Arc;

use cdssm::{simulate, zoo, CdSsm, LinearGaussianObs, SdeModel};

/// Noisy observations of a double-well diffusion at unit spacing.
pub fn double_well(t_len: usize, n_steps: usize) -> Arc<CdSsm> {
    model(Arc::new(zoo::DoubleWell { sigma: 0.7 }), t_len, n_steps)
}

/// Noisy observations of a scalar OU process at unit spacing.
pub fn ou(t_len: usize, n_steps: usize) -> Arc<CdSsm> {
    model(Arc::new(zoo::ou(1.0, 0.0, 0.5).expect("valid OU")), t_len, n_steps)
}

fn model(sde: Arc<dyn SdeModel>, t_len: usize, n_steps: usize) -> Arc<CdSsm> {
    let obs = LinearGaussianObs::observe_coordinate(1, 0, 0.1).expect("valid observation");
    let times: Vec<f64> = (0..=t_len).map(|k| k as f64).collect();
    let sim = simulate(&*sde, &obs, &[0.0], &times, 200, 1).expect("simulation");
    let ssm = CdSsm::new(sde, Arc::new(obs), vec![0.0], times, sim.data, n_steps, 0.0).expect("valid model");
    Arc::new(ssm)
}
