//! Static-parameter inference: particle marginal Metropolis–Hastings and
//! particle Gibbs with backward-sampled trajectory refresh.
//!
//! Random walks run on the unconstrained scale; priors are given on the
//! natural scale and the Jacobian of the transform is added automatically.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feynman_kac::FeynmanKac;
use crate::linalg;
use crate::rng::{derive_seed, stream, Purpose};
use crate::smc::{conditional_particle_filter, ffbs_one, particle_filter, FilterOptions, Resampler, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Positive parameter sampled on the log scale.
    Log,
}

impl Transform {
    fn to_natural(self, phi: f64) -> f64 {
        match self {
            Transform::Identity => phi,
            Transform::Log => phi.exp(),
        }
    }

    fn to_free(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => theta,
            Transform::Log => theta.ln(),
        }
    }

    fn log_jacobian(self, phi: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => phi,
        }
    }
}

type PriorFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type BuildFn<F> = dyn Fn(&[f64]) -> Result<F> + Send + Sync;

/// Parameters, their prior and the model they induce.
pub struct ParamSpace<F> {
    names: Vec<String>,
    transforms: Vec<Transform>,
    prior: Box<PriorFn>,
    build: Box<BuildFn<F>>,
}

impl<F> std::fmt::Debug for ParamSpace<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamSpace")
            .field("names", &self.names)
            .field("transforms", &self.transforms)
            .finish()
    }
}

impl<F: FeynmanKac> ParamSpace<F> {
    /// `prior` is the log prior density of natural-scale θ; `build` maps θ to
    /// a Feynman–Kac model on the fixed data.
    pub fn new(
        names: Vec<String>,
        transforms: Vec<Transform>,
        prior: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        build: impl Fn(&[f64]) -> Result<F> + Send + Sync + 'static,
    ) -> Result<Self> {
        if names.len() != transforms.len() || names.is_empty() {
            return Err(Error::invalid("need one transform per named parameter"));
        }
        Ok(ParamSpace {
            names,
            transforms,
            prior: Box::new(prior),
            build: Box::new(build),
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn to_natural(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter()
            .zip(&self.transforms)
            .map(|(p, t)| t.to_natural(*p))
            .collect()
    }

    pub fn to_free(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.transforms).map(|(v, t)| t.to_free(*v)).collect()
    }

    /// Log prior of the unconstrained coordinates.
    pub fn log_prior_free(&self, phi: &[f64]) -> f64 {
        let theta = self.to_natural(phi);
        let jac: f64 = phi.iter().zip(&self.transforms).map(|(p, t)| t.log_jacobian(*p)).sum();
        let lp = (self.prior)(&theta);
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp + jac
        }
    }

    pub fn build(&self, theta: &[f64]) -> Result<F> {
        (self.build)(theta)
    }
}

/// MCMC output on the natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub names: Vec<String>,
    pub draws: Vec<Vec<f64>>,
    pub log_post: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Final retained trajectory (particle Gibbs only).
    pub trajectory: Option<Trajectory>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    /// Values of coordinate `k` after discarding `burn_in` draws.
    pub fn column(&self, k: usize, burn_in: usize) -> Vec<f64> {
        self.draws.iter().skip(burn_in).map(|d| d[k]).collect()
    }
}

/// Lower Cholesky factor of a random-walk covariance given row-major.
fn rw_factor(cov: &[f64], p: usize) -> Result<Vec<f64>> {
    if cov.len() != p * p {
        return Err(Error::invalid("random-walk covariance must be p × p"));
    }
    let mut l = cov.to_vec();
    if cov.iter().all(|&c| c == 0.0) {
        return Ok(l);
    }
    if !linalg::cholesky_in_place(&mut l, p) {
        return Err(Error::invalid("random-walk covariance must be positive definite"));
    }
    Ok(l)
}

fn propose<R: Rng + ?Sized>(phi: &[f64], chol: &[f64], scale: f64, rng: &mut R) -> Vec<f64> {
    let p = phi.len();
    let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    (0..p)
        .map(|i| phi[i] + scale * (0..=i).map(|k| chol[i * p + k] * z[k]).sum::<f64>())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmmhOptions {
    pub n_particles: usize,
    pub n_iter: usize,
    /// Random-walk covariance on the unconstrained scale, row-major `p × p`.
    pub rw_cov: Vec<f64>,
    pub resampler: Resampler,
    pub seed: u64,
    /// Natural-scale starting point.
    pub init: Vec<f64>,
}

fn estimate_log_lik<F: FeynmanKac>(space: &ParamSpace<F>, theta: &[f64], opts: &FilterOptions) -> Result<f64> {
    let fk = match space.build(theta) {
        Ok(fk) => fk,
        Err(Error::InvalidArgument(_)) | Err(Error::NumericFailure { .. }) => return Ok(f64::NEG_INFINITY),
        Err(e) => return Err(e),
    };
    match particle_filter(&fk, opts) {
        Ok(c) => Ok(c.log_likelihood),
        Err(Error::DegenerateWeights { .. }) | Err(Error::NumericFailure { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Particle marginal Metropolis–Hastings. The likelihood estimate of the
/// current state is carried along, never recomputed.
pub fn pmmh<F: FeynmanKac>(space: &ParamSpace<F>, opts: &PmmhOptions) -> Result<Chain> {
    let p = space.dim();
    if opts.init.len() != p {
        return Err(Error::invalid("initial point has the wrong dimension"));
    }
    let chol = rw_factor(&opts.rw_cov, p)?;
    let filter = |iter: usize| FilterOptions {
        n_particles: opts.n_particles,
        resampler: opts.resampler,
        seed: derive_seed(opts.seed, Purpose::Chain, iter as u64),
        store_history: false,
    };
    let mut phi = space.to_free(&opts.init);
    let mut lp = space.log_prior_free(&phi);
    if !lp.is_finite() {
        return Err(Error::invalid("initial point has zero prior density"));
    }
    let mut ll = estimate_log_lik(space, &opts.init, &filter(0))?;
    if !ll.is_finite() {
        return Err(Error::invalid("likelihood estimate at the initial point is zero"));
    }
    let mut rng = stream(opts.seed, Purpose::Chain, 0, 0);
    let mut chain = Chain {
        names: space.names().to_vec(),
        draws: Vec::with_capacity(opts.n_iter),
        log_post: Vec::with_capacity(opts.n_iter),
        accepted: Vec::with_capacity(opts.n_iter),
        trajectory: None,
    };
    for iter in 1..=opts.n_iter {
        let cand = propose(&phi, &chol, 1.0, &mut rng);
        let lp_c = space.log_prior_free(&cand);
        let mut accept = false;
        if lp_c.is_finite() {
            let ll_c = estimate_log_lik(space, &space.to_natural(&cand), &filter(iter))?;
            let log_ratio = lp_c + ll_c - lp - ll;
            if ll_c.is_finite() && rng.random::<f64>().ln() < log_ratio {
                phi = cand;
                lp = lp_c;
                ll = ll_c;
                accept = true;
            }
        }
        chain.draws.push(space.to_natural(&phi));
        chain.log_post.push(lp + ll);
        chain.accepted.push(accept);
    }
    Ok(chain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsOptions {
    pub n_particles: usize,
    pub n_iter: usize,
    /// Initial random-walk covariance on the unconstrained scale.
    pub rw_cov: Vec<f64>,
    /// Metropolis steps on θ per sweep.
    pub theta_steps: usize,
    /// Scale adaptation runs during the first `burn_in` sweeps only.
    pub burn_in: usize,
    pub target_accept: f64,
    pub seed: u64,
    pub init: Vec<f64>,
}

impl GibbsOptions {
    pub fn new(n_particles: usize, n_iter: usize, init: Vec<f64>, rw_cov: Vec<f64>, seed: u64) -> Self {
        GibbsOptions {
            n_particles,
            n_iter,
            rw_cov,
            theta_steps: 1,
            burn_in: n_iter / 4,
            target_accept: 0.3,
            seed,
            init,
        }
    }
}

/// `log p(θ) + Σ_t log(M_t G_t)` along a fixed trajectory in transformed
/// coordinates, with paths rebuilt under θ.
pub fn trajectory_log_density<F: FeynmanKac>(space: &ParamSpace<F>, phi: &[f64], traj: &Trajectory) -> Result<f64> {
    let lp = space.log_prior_free(phi);
    if !lp.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let fk = match space.build(&space.to_natural(phi)) {
        Ok(fk) => fk,
        Err(Error::InvalidArgument(_)) | Err(Error::NumericFailure { .. }) => return Ok(f64::NEG_INFINITY),
        Err(e) => return Err(e),
    };
    if !fk.supports_backward() {
        return Err(Error::invalid(
            "particle Gibbs needs the transformed forward or backward construction",
        ));
    }
    let d = fk.dim();
    let terms: Result<Vec<f64>> = (0..fk.len())
        .into_par_iter()
        .map_init(
            || fk.workspace(),
            |ws, t| {
                let prev = if t == 0 {
                    fk.initial_point()
                } else {
                    &traj.e[(t - 1) * d..t * d]
                };
                match fk.log_backward_weight(t, prev, &traj.e[t * d..(t + 1) * d], &traj.u[t], ws) {
                    Ok(v) if v.is_nan() => Ok(f64::NEG_INFINITY),
                    Ok(v) => Ok(v),
                    Err(Error::NumericFailure { .. }) => Ok(f64::NEG_INFINITY),
                    Err(e) => Err(e),
                }
            },
        )
        .collect();
    Ok(lp + terms?.iter().sum::<f64>())
}

/// Particle Gibbs: alternates a conditional particle filter with one
/// backward-sampled trajectory, and random-walk updates of θ given the
/// trajectory's end points and driving noise.
pub fn particle_gibbs<F: FeynmanKac>(space: &ParamSpace<F>, opts: &GibbsOptions) -> Result<Chain> {
    let p = space.dim();
    if opts.init.len() != p {
        return Err(Error::invalid("initial point has the wrong dimension"));
    }
    if opts.n_particles < 2 {
        return Err(Error::invalid("particle Gibbs needs at least two particles"));
    }
    let chol = rw_factor(&opts.rw_cov, p)?;
    let mut phi = space.to_free(&opts.init);
    let mut rng = stream(opts.seed, Purpose::Chain, 0, 0);
    let mut log_scale = 0.0f64;
    let mut chain = Chain {
        names: space.names().to_vec(),
        draws: Vec::with_capacity(opts.n_iter),
        log_post: Vec::with_capacity(opts.n_iter),
        accepted: Vec::with_capacity(opts.n_iter * opts.theta_steps),
        trajectory: None,
    };
    let mut reference: Option<Trajectory> = None;
    for iter in 0..opts.n_iter {
        let fk = space.build(&space.to_natural(&phi))?;
        let fopts =
            FilterOptions::new(opts.n_particles, derive_seed(opts.seed, Purpose::Chain, iter as u64)).history(true);
        let cloud = match &reference {
            None => particle_filter(&fk, &fopts.clone().resampler(Resampler::default()))?,
            Some(r) => conditional_particle_filter(&fk, &fopts, r)?,
        };
        let mut brng = stream(opts.seed, Purpose::Backward, iter as u64, 0);
        let traj = ffbs_one(&fk, &cloud, &mut brng, false)?;
        drop(fk);
        let mut cur = trajectory_log_density(space, &phi, &traj)?;
        for _ in 0..opts.theta_steps {
            let cand = propose(&phi, &chol, log_scale.exp(), &mut rng);
            let new = trajectory_log_density(space, &cand, &traj)?;
            let log_ratio = new - cur;
            let alpha = if log_ratio.is_nan() {
                0.0
            } else {
                log_ratio.min(0.0).exp()
            };
            let accept = rng.random::<f64>() < alpha;
            if accept {
                phi = cand;
                cur = new;
            }
            if iter < opts.burn_in {
                let gamma = ((iter + 1) as f64).powf(-0.6);
                log_scale += gamma * (alpha - opts.target_accept);
            }
            chain.accepted.push(accept);
        }
        chain.draws.push(space.to_natural(&phi));
        chain.log_post.push(cur);
        reference = Some(traj);
    }
    chain.trajectory = reference;
    Ok(chain)
}
