//! Particle inference for continuous-discrete state-space models: an Itô SDE
//! observed with noise at discrete times.
//!
//! The crate provides Euler discretisation and path functionals ([`sde`]),
//! linear-Gaussian machinery and an exact Kalman oracle ([`linear_gauss`]),
//! diffusion bridges ([`bridges`]), data-driven proposals ([`proposals`]),
//! four Feynman–Kac assemblies ([`feynman_kac`]), particle filtering and
//! backward sampling ([`smc`]), and parameter inference ([`param_infer`]).

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bridges;
pub mod error;
pub mod feynman_kac;
pub mod linalg;
pub mod linear_gauss;
pub mod param_infer;
pub mod proposals;
pub mod rng;
pub mod sde;
pub mod smc;
pub mod zoo;

pub use bridges::{Bridge, BridgeKind, GuidedProxy};
pub use error::{Error, Result};
pub use feynman_kac::{
    make_bm, make_bootstrap, make_fm, make_guided_forward, simulate, CdSsm, DensityMode, FeynmanKac, FkModel, Flavor,
    Simulation, ZState,
};
pub use linear_gauss::{kalman_cd, GaussTransition, Gaussian, KalmanOutput, LinearSde};
pub use param_infer::{particle_gibbs, pmmh, Chain, GibbsOptions, ParamSpace, PmmhOptions, Transform};
pub use proposals::{EndpointKind, EndpointProposal, ForwardProposal, ProxyKind};
pub use rng::{derive_seed, stream, Purpose};
pub use sde::{
    euler_simulate, make_grid, Ellipticity, FlatObs, FnSde, LinearGaussianObs, ObsModel, Path, SdeModel, TimeGrid,
    WienerIncrements,
};
pub use smc::{
    conditional_particle_filter, ess, ffbs, genealogy, particle_filter, Cloud, FilterOptions, Resampler, Scheme,
    Trajectory, Trigger,
};
