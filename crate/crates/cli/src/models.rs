//! Model zoo and Feynman–Kac assembly from a [`RunConfig`].

use std::sync::Arc;

use cdssm::{
    make_bm, make_bootstrap, make_fm, make_guided_forward, zoo, BridgeKind, CdSsm, DensityMode, EndpointKind,
    EndpointProposal, FkModel, ForwardProposal, GuidedProxy, LinearGaussianObs, LinearSde, ProxyKind, Resampler,
    Scheme, SdeModel, Trigger,
};
use nalgebra::DMatrix;

use crate::config::{
    BridgeChoice, DensityChoice, EndpointChoice, Method, ModelConfig, ProxyChoice, RunConfig, SchemeChoice,
};
use crate::CliError;

pub enum Signal {
    Linear(LinearSde),
    Other(Arc<dyn SdeModel>),
}

impl Signal {
    pub fn build(model: &ModelConfig) -> Result<Signal, CliError> {
        Ok(match *model {
            ModelConfig::Ou { theta, mu, sigma } => Signal::Linear(zoo::ou(theta, mu, sigma)?),
            ModelConfig::Ibm { sigma } => Signal::Linear(zoo::integrated_bm(sigma)?),
            ModelConfig::DoubleWell { sigma } => Signal::Other(Arc::new(zoo::DoubleWell { sigma })),
            ModelConfig::Fhn {
                eps,
                s,
                gamma,
                beta,
                sigma,
            } => Signal::Other(Arc::new(zoo::FitzHughNagumo {
                eps,
                s,
                gamma,
                beta,
                sigma,
            })),
        })
    }

    pub fn sde(&self) -> Arc<dyn SdeModel> {
        match self {
            Signal::Linear(l) => Arc::new(l.clone()),
            Signal::Other(s) => s.clone(),
        }
    }

    pub fn linear(&self) -> Option<&LinearSde> {
        match self {
            Signal::Linear(l) => Some(l),
            Signal::Other(_) => None,
        }
    }
}

pub fn observation(cfg: &RunConfig) -> Result<LinearGaussianObs, CliError> {
    let d = cfg.model.dim();
    let coords = &cfg.observation.coordinates;
    let m = coords.len();
    let h = DMatrix::from_fn(m, d, |i, j| if coords[i] == j { 1.0 } else { 0.0 });
    let r = DMatrix::identity(m, m) * cfg.observation.var;
    Ok(LinearGaussianObs::new(h, r)?)
}

pub fn resampler(cfg: &RunConfig) -> Resampler {
    let scheme = match cfg.method.resampling {
        SchemeChoice::Multinomial => Scheme::Multinomial,
        SchemeChoice::Systematic => Scheme::Systematic,
        SchemeChoice::Stratified => Scheme::Stratified,
    };
    let trigger = if cfg.method.ess_threshold >= 1.0 {
        Trigger::Always
    } else {
        Trigger::EssBelow(cfg.method.ess_threshold)
    };
    Resampler::new(scheme, trigger)
}

fn bridge_kind(choice: BridgeChoice) -> BridgeKind {
    match choice {
        BridgeChoice::DelyonHu => BridgeKind::DelyonHu,
        BridgeChoice::GuidedEndpointBm => BridgeKind::Guided(GuidedProxy::EndpointBm),
        BridgeChoice::GuidedLinearizedStart => BridgeKind::Guided(GuidedProxy::LinearizedAtStart),
        BridgeChoice::GuidedLinearizedEnd => BridgeKind::Guided(GuidedProxy::LinearizedAtEnd),
    }
}

/// The state-space model on `data` with the signal given by `model`.
pub fn state_space(
    cfg: &RunConfig,
    model: &ModelConfig,
    times: Vec<f64>,
    data: Vec<Vec<f64>>,
) -> Result<Arc<CdSsm>, CliError> {
    let signal = Signal::build(model)?;
    let obs = observation(cfg)?;
    Ok(Arc::new(CdSsm::new(
        signal.sde(),
        Arc::new(obs),
        cfg.x0(),
        times,
        data,
        cfg.method.n_steps,
        cfg.method.endpoint_gap,
    )?))
}

pub fn feynman_kac(cfg: &RunConfig, ssm: Arc<CdSsm>) -> Result<FkModel, CliError> {
    let m = &cfg.method;
    let proxy = match m.proxy {
        ProxyChoice::Linearized => ProxyKind::Linearized,
        ProxyChoice::Frozen => ProxyKind::FrozenCoefficients,
    };
    let mode = match m.density {
        DensityChoice::Auto => DensityMode::Auto,
        DensityChoice::Discrete => DensityMode::Discrete,
        DensityChoice::Continuum => DensityMode::Continuum,
    };
    Ok(match m.kind {
        Method::Bootstrap => make_bootstrap(ssm),
        Method::Guided => make_guided_forward(ssm, ForwardProposal::new(proxy))?,
        Method::Fm => make_fm(ssm, ForwardProposal::new(proxy), bridge_kind(m.aux_bridge), mode)?,
        Method::Bm => {
            let kind = match m.endpoint {
                EndpointChoice::Conjugate => EndpointKind::ConjugateGaussian,
                EndpointChoice::Euler => EndpointKind::BootstrapEuler,
            };
            make_bm(ssm, EndpointProposal::new(kind, proxy), bridge_kind(m.bridge), mode)?
        }
    })
}
