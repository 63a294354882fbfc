//! Reference models: Ornstein–Uhlenbeck, double well, FitzHugh–Nagumo and
//! integrated Brownian motion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linear_gauss::LinearSde;
use crate::sde::{Ellipticity, SdeModel};

/// `dX = θ(μ − X) ds + σ dB` in one dimension.
pub fn ou(theta: f64, mu: f64, sigma: f64) -> Result<LinearSde> {
    LinearSde::constant(
        &DVector::from_element(1, theta * mu),
        &DMatrix::from_element(1, 1, -theta),
        &DMatrix::from_element(1, 1, sigma),
    )
}

/// `dX₁ = X₂ ds`, `dX₂ = σ dB`.
pub fn integrated_bm(sigma: f64) -> Result<LinearSde> {
    LinearSde::constant(
        &DVector::zeros(2),
        &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        &DMatrix::from_row_slice(2, 1, &[0.0, sigma]),
    )
}

/// `dX = −4X(X² − 1) ds + σ dB`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWell {
    pub sigma: f64,
}

impl SdeModel for DoubleWell {
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn ellipticity(&self) -> Ellipticity {
        Ellipticity::Elliptic
    }
    fn drift(&self, _s: f64, x: &[f64], out: &mut [f64]) {
        out[0] = -4.0 * x[0] * (x[0] * x[0] - 1.0);
    }
    fn diffusion(&self, _s: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = self.sigma;
    }
    fn drift_jacobian(&self, _s: f64, x: &[f64], out: &mut [f64]) -> bool {
        out[0] = 4.0 - 12.0 * x[0] * x[0];
        true
    }
}

/// Stochastic FitzHugh–Nagumo with noise on the recovery variable only:
/// `dV = (V − V³ − U + s)/ε ds`, `dU = (γV − U + β) ds + σ dB`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitzHughNagumo {
    pub eps: f64,
    pub s: f64,
    pub gamma: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl Default for FitzHughNagumo {
    fn default() -> Self {
        FitzHughNagumo {
            eps: 0.1,
            s: 0.0,
            gamma: 1.5,
            beta: 0.8,
            sigma: 0.3,
        }
    }
}

impl SdeModel for FitzHughNagumo {
    fn dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn ellipticity(&self) -> Ellipticity {
        Ellipticity::HypoElliptic
    }
    fn drift(&self, _s: f64, x: &[f64], out: &mut [f64]) {
        let (v, u) = (x[0], x[1]);
        out[0] = (v - v * v * v - u + self.s) / self.eps;
        out[1] = self.gamma * v - u + self.beta;
    }
    fn diffusion(&self, _s: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = self.sigma;
    }
    fn drift_jacobian(&self, _s: f64, x: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(&[(1.0 - 3.0 * x[0] * x[0]) / self.eps, -1.0 / self.eps, self.gamma, -1.0]);
        true
    }
}

/// Checks that all listed parameters are finite and strictly positive.
pub fn positive(params: &[(&str, f64)]) -> Result<()> {
    for (name, v) in params {
        if !(v.is_finite() && *v > 0.0) {
            return Err(Error::invalid(format!("parameter {name} must be positive, got {v}")));
        }
    }
    Ok(())
}
