//! Run configuration read from TOML.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub observation: ObservationConfig,
    pub schedule: Schedule,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub smooth: SmoothConfig,
    #[serde(default)]
    pub infer: Option<InferConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Ou {
        #[serde(default = "one")]
        theta: f64,
        #[serde(default)]
        mu: f64,
        #[serde(default = "half")]
        sigma: f64,
    },
    DoubleWell {
        #[serde(default = "one")]
        sigma: f64,
    },
    Fhn {
        #[serde(default = "fhn_eps")]
        eps: f64,
        #[serde(default)]
        s: f64,
        #[serde(default = "fhn_gamma")]
        gamma: f64,
        #[serde(default = "fhn_beta")]
        beta: f64,
        #[serde(default = "fhn_sigma")]
        sigma: f64,
    },
    Ibm {
        #[serde(default = "one")]
        sigma: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn fhn_eps() -> f64 {
    0.1
}
fn fhn_gamma() -> f64 {
    1.5
}
fn fhn_beta() -> f64 {
    0.8
}
fn fhn_sigma() -> f64 {
    0.3
}

/// Noisy observation of selected state coordinates, `R = var · I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    #[serde(default = "default_coords")]
    pub coordinates: Vec<usize>,
    #[serde(default = "default_obs_var")]
    pub var: f64,
}

fn default_coords() -> Vec<usize> {
    vec![0]
}
fn default_obs_var() -> f64 {
    0.1
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig {
            coordinates: default_coords(),
            var: default_obs_var(),
        }
    }
}

/// Either explicit observation times (starting at `s_0`) or a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub len: Option<usize>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

impl Schedule {
    pub fn times(&self) -> Result<Vec<f64>, CliError> {
        match (&self.times, self.delta, self.len) {
            (Some(t), None, None) => Ok(t.clone()),
            (None, Some(delta), Some(len)) if delta > 0.0 && len > 0 => {
                Ok((0..=len).map(|k| k as f64 * delta).collect())
            }
            (None, Some(_), Some(_)) => Err(CliError::config(
                "schedule.delta must be positive and schedule.len at least 1",
            )),
            _ => Err(CliError::config(
                "schedule needs either `times` or both `delta` and `len`",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bootstrap,
    Guided,
    Fm,
    #[default]
    Bm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProxyChoice {
    #[default]
    Linearized,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BridgeChoice {
    DelyonHu,
    GuidedEndpointBm,
    #[default]
    GuidedLinearizedStart,
    GuidedLinearizedEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EndpointChoice {
    #[default]
    Conjugate,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DensityChoice {
    #[default]
    Auto,
    Discrete,
    Continuum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeChoice {
    Multinomial,
    #[default]
    Systematic,
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    #[serde(default)]
    pub kind: Method,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub endpoint_gap: f64,
    #[serde(default)]
    pub proxy: ProxyChoice,
    #[serde(default)]
    pub bridge: BridgeChoice,
    /// Auxiliary bridge of the forward transform.
    #[serde(default = "default_aux")]
    pub aux_bridge: BridgeChoice,
    #[serde(default)]
    pub endpoint: EndpointChoice,
    #[serde(default)]
    pub density: DensityChoice,
    #[serde(default)]
    pub resampling: SchemeChoice,
    /// Resample when ESS/N falls below this; 1 or more resamples every step.
    #[serde(default = "default_ess")]
    pub ess_threshold: f64,
}

fn default_particles() -> usize {
    1000
}
fn default_steps() -> usize {
    20
}
fn default_aux() -> BridgeChoice {
    BridgeChoice::DelyonHu
}
fn default_ess() -> f64 {
    0.5
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            kind: Method::default(),
            particles: default_particles(),
            n_steps: default_steps(),
            endpoint_gap: 0.0,
            proxy: ProxyChoice::default(),
            bridge: BridgeChoice::default(),
            aux_bridge: default_aux(),
            endpoint: EndpointChoice::default(),
            density: DensityChoice::default(),
            resampling: SchemeChoice::default(),
            ess_threshold: default_ess(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_sim_steps")]
    pub n_steps: usize,
    #[serde(default = "yes")]
    pub include_states: bool,
}

fn default_sim_steps() -> usize {
    200
}
fn yes() -> bool {
    true
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            n_steps: default_sim_steps(),
            include_states: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothConfig {
    #[serde(default = "default_draws")]
    pub draws: usize,
}

fn default_draws() -> usize {
    100
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig { draws: default_draws() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pmmh,
    Gibbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferConfig {
    pub algorithm: Algorithm,
    pub n_iter: usize,
    /// Sweeps of scale adaptation (particle Gibbs only).
    #[serde(default)]
    pub burn_in: Option<usize>,
    pub params: Vec<ParamConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamConfig {
    pub name: String,
    pub init: f64,
    pub prior: Prior,
    /// Random-walk standard deviation on the unconstrained scale.
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    Normal { mean: f64, sd: f64 },
    LogNormal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
}

impl Prior {
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Normal { mean, sd } => -0.5 * ((x - mean) / sd).powi(2) - sd.ln(),
            Prior::LogNormal { mean, sd } if x > 0.0 => -0.5 * ((x.ln() - mean) / sd).powi(2) - sd.ln() - x.ln(),
            Prior::LogNormal { .. } => f64::NEG_INFINITY,
            Prior::Uniform { low, high } if (low..=high).contains(&x) => -(high - low).ln(),
            Prior::Uniform { .. } => f64::NEG_INFINITY,
        }
    }

    pub fn positive(&self) -> bool {
        matches!(self, Prior::LogNormal { .. })
    }

    fn check(&self) -> Result<(), CliError> {
        let ok = match *self {
            Prior::Normal { sd, .. } | Prior::LogNormal { sd, .. } => sd > 0.0,
            Prior::Uniform { low, high } => low < high,
        };
        if ok {
            Ok(())
        } else {
            Err(CliError::config(
                "prior scale must be positive and uniform bounds ordered",
            ))
        }
    }
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Ou { .. } => "ou",
            ModelConfig::DoubleWell { .. } => "double_well",
            ModelConfig::Fhn { .. } => "fhn",
            ModelConfig::Ibm { .. } => "ibm",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelConfig::Ou { .. } | ModelConfig::DoubleWell { .. } => 1,
            ModelConfig::Fhn { .. } | ModelConfig::Ibm { .. } => 2,
        }
    }

    pub fn is_elliptic(&self) -> bool {
        matches!(self, ModelConfig::Ou { .. } | ModelConfig::DoubleWell { .. })
    }

    /// Whether the exact Kalman filter applies.
    pub fn is_linear(&self) -> bool {
        matches!(self, ModelConfig::Ou { .. } | ModelConfig::Ibm { .. })
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ModelConfig::Ou { .. } => &["theta", "mu", "sigma"],
            ModelConfig::DoubleWell { .. } => &["sigma"],
            ModelConfig::Fhn { .. } => &["eps", "s", "gamma", "beta", "sigma"],
            ModelConfig::Ibm { .. } => &["sigma"],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let pos = self.param_names().iter().position(|n| *n == name)?;
        Some(self.values()[pos])
    }

    pub fn with(&self, name: &str, value: f64) -> Option<ModelConfig> {
        let pos = self.param_names().iter().position(|n| *n == name)?;
        let mut v = self.values();
        v[pos] = value;
        Some(match self {
            ModelConfig::Ou { .. } => ModelConfig::Ou {
                theta: v[0],
                mu: v[1],
                sigma: v[2],
            },
            ModelConfig::DoubleWell { .. } => ModelConfig::DoubleWell { sigma: v[0] },
            ModelConfig::Fhn { .. } => ModelConfig::Fhn {
                eps: v[0],
                s: v[1],
                gamma: v[2],
                beta: v[3],
                sigma: v[4],
            },
            ModelConfig::Ibm { .. } => ModelConfig::Ibm { sigma: v[0] },
        })
    }

    fn values(&self) -> Vec<f64> {
        match *self {
            ModelConfig::Ou { theta, mu, sigma } => vec![theta, mu, sigma],
            ModelConfig::DoubleWell { sigma } | ModelConfig::Ibm { sigma } => vec![sigma],
            ModelConfig::Fhn {
                eps,
                s,
                gamma,
                beta,
                sigma,
            } => vec![eps, s, gamma, beta, sigma],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = self.model.dim();
        let times = self.schedule.times()?;
        if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CliError::config(
                "observation times must be strictly increasing with at least two entries",
            ));
        }
        if self.schedule.x0.as_ref().is_some_and(|x| x.len() != d) {
            return Err(CliError::config(format!(
                "x0 must have {d} entries for model `{}`",
                self.model.name()
            )));
        }
        let obs = &self.observation;
        if obs.coordinates.is_empty() || obs.coordinates.iter().any(|&c| c >= d) || !(obs.var > 0.0) {
            return Err(CliError::config(
                "observation needs valid coordinates and a positive variance",
            ));
        }
        let m = &self.method;
        if m.particles == 0 || m.n_steps == 0 || self.simulate.n_steps == 0 {
            return Err(CliError::config("particles and n_steps must be positive"));
        }
        if !(0.0..1.0).contains(&m.endpoint_gap) {
            return Err(CliError::config("endpoint_gap must lie in [0, 1)"));
        }
        if !self.model.is_elliptic() {
            if m.kind == Method::Fm {
                return Err(CliError::config(format!(
                    "method `fm` needs an elliptic signal; `{}` is hypo-elliptic (use `bm`)",
                    self.model.name()
                )));
            }
            if m.kind == Method::Guided {
                return Err(CliError::config("method `guided` needs an elliptic signal"));
            }
            if m.density == DensityChoice::Discrete {
                return Err(CliError::config("discrete path densities need an elliptic signal"));
            }
            if m.kind == Method::Bm && m.bridge == BridgeChoice::DelyonHu {
                return Err(CliError::config("the Delyon–Hu bridge needs an elliptic signal"));
            }
        }
        if matches!(m.kind, Method::Fm | Method::Bm) && m.n_steps < 2 {
            return Err(CliError::config("bridge-based methods need n_steps >= 2"));
        }
        if let Some(inf) = &self.infer {
            if inf.params.is_empty() || inf.n_iter == 0 {
                return Err(CliError::config("infer needs at least one parameter and n_iter > 0"));
            }
            for p in &inf.params {
                if self.model.get(&p.name).is_none() {
                    return Err(CliError::config(format!(
                        "unknown parameter `{}` for model `{}` (expected one of {:?})",
                        p.name,
                        self.model.name(),
                        self.model.param_names()
                    )));
                }
                p.prior.check()?;
                if !(p.step >= 0.0) || !p.prior.log_density(p.init).is_finite() {
                    return Err(CliError::config(format!(
                        "parameter `{}`: bad step or initial value",
                        p.name
                    )));
                }
            }
            if inf.algorithm == Algorithm::Gibbs && !matches!(m.kind, Method::Fm | Method::Bm) {
                return Err(CliError::config("particle Gibbs needs method `fm` or `bm`"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (fields in declaration order, defaults filled in).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn x0(&self) -> Vec<f64> {
        self.schedule.x0.clone().unwrap_or_else(|| vec![0.0; self.model.dim()])
    }
}
