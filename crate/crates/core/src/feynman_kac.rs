//! Feynman–Kac assemblies of a continuous-discrete state-space model: the
//! bootstrap, guided-forward, transformed-forward and transformed-backward
//! (kernel, potential) pairs consumed by the particle algorithms.
//!
//! Observation indices `t` are zero-based: segment `t` runs from `times[t]`
//! to `times[t + 1]` and ends with observation `data[t]`. The state `x(times[0])`
//! is known.
//!
//! In the transformed flavors a particle is `z = (e, u)`: the segment end
//! point and driving-noise increments on the segment grid. Their kernel
//! densities are taken with respect to Lebesgue measure on `e` times the law
//! of the free increments, so they can be evaluated for any ancestor.

use std::sync::Arc;

use rand::Rng;

use crate::bridges::{Bridge, BridgeKind};
use crate::error::{Error, Result};
use crate::linalg;
use crate::linear_gauss::Rk4Scratch;
use crate::proposals::{EndpointLaw, EndpointProposal, EndpointScratch, ForwardGuide, ForwardProposal};
use crate::rng::{stream, Purpose, StreamRng};
use crate::sde::{self, check_finite, make_grid, ObsModel, Path, PathBuffers, SdeModel, TimeGrid, TimeShifted};

/// A latent SDE observed at discrete times.
#[derive(Clone)]
pub struct CdSsm {
    sde: Arc<dyn SdeModel>,
    obs: Arc<dyn ObsModel>,
    x0: Vec<f64>,
    times: Vec<f64>,
    data: Vec<Vec<f64>>,
    grids: Vec<Arc<TimeGrid>>,
    n_steps: usize,
}

impl std::fmt::Debug for CdSsm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CdSsm")
            .field("dim", &self.sde.dim())
            .field("x0", &self.x0)
            .field("times", &self.times)
            .field("n_steps", &self.n_steps)
            .finish()
    }
}

fn make_grids(times: &[f64], n_steps: usize, endpoint_gap: f64) -> Result<Vec<Arc<TimeGrid>>> {
    let mut grids: Vec<Arc<TimeGrid>> = Vec::with_capacity(times.len().saturating_sub(1));
    for w in times.windows(2) {
        let g = make_grid(w[1] - w[0], n_steps, endpoint_gap)?;
        match grids.last() {
            Some(prev) if **prev == g => grids.push(prev.clone()),
            _ => grids.push(Arc::new(g)),
        }
    }
    Ok(grids)
}

impl CdSsm {
    /// `times` holds `s_0 < s_1 < … < s_T`; `data[t]` is observed at `times[t + 1]`.
    pub fn new(
        sde: Arc<dyn SdeModel>,
        obs: Arc<dyn ObsModel>,
        x0: Vec<f64>,
        times: Vec<f64>,
        data: Vec<Vec<f64>>,
        n_steps: usize,
        endpoint_gap: f64,
    ) -> Result<Self> {
        if x0.len() != sde.dim() {
            return Err(Error::invalid("x0 does not match the state dimension"));
        }
        if times.len() != data.len() + 1 {
            return Err(Error::invalid(
                "need exactly one more observation time than observations",
            ));
        }
        if data.iter().any(|y| y.len() != obs.obs_dim()) {
            return Err(Error::invalid("an observation has the wrong dimension"));
        }
        if sde.noise_dim() == 0 || sde.noise_dim() > sde.dim() {
            return Err(Error::invalid("noise dimension must lie in 1..=dim"));
        }
        let grids = make_grids(&times, n_steps, endpoint_gap)?;
        Ok(CdSsm {
            sde,
            obs,
            x0,
            times,
            data,
            grids,
            n_steps,
        })
    }

    /// The same model with different data and parameters left untouched.
    pub fn with_data(&self, data: Vec<Vec<f64>>) -> Result<Self> {
        let mut out = self.clone();
        if data.len() + 1 != out.times.len() {
            return Err(Error::invalid("data length does not match the observation times"));
        }
        out.data = data;
        Ok(out)
    }

    /// Same observations and grids with a different signal of equal dimensions.
    pub fn with_sde(&self, sde: Arc<dyn SdeModel>) -> Result<Self> {
        if sde.dim() != self.sde.dim() || sde.noise_dim() != self.sde.noise_dim() {
            return Err(Error::invalid("replacement signal has different dimensions"));
        }
        let mut out = self.clone();
        out.sde = sde;
        Ok(out)
    }

    pub fn sde(&self) -> &Arc<dyn SdeModel> {
        &self.sde
    }

    pub fn obs(&self) -> &Arc<dyn ObsModel> {
        &self.obs
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of observations `T`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sde.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.sde.noise_dim()
    }

    pub fn grid(&self, t: usize) -> &Arc<TimeGrid> {
        &self.grids[t]
    }

    /// The signal as seen from segment `t`.
    pub fn segment_sde(&self, t: usize) -> TimeShifted<'_> {
        TimeShifted {
            inner: &*self.sde,
            offset: self.times[t],
        }
    }
}

/// A simulated trajectory: observations and the latent state at every observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub data: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
}

/// Draws latent states by Euler–Maruyama with `n_steps` per segment and
/// observations from `obs`.
pub fn simulate(
    sde: &dyn SdeModel,
    obs: &dyn ObsModel,
    x0: &[f64],
    times: &[f64],
    n_steps: usize,
    seed: u64,
) -> Result<Simulation> {
    let grids = make_grids(times, n_steps, 0.0)?;
    let d = sde.dim();
    let mut x = x0.to_vec();
    let mut buf = PathBuffers::for_dims(d, sde.noise_dim());
    let mut data = Vec::with_capacity(grids.len());
    let mut states = Vec::with_capacity(grids.len());
    for (t, grid) in grids.iter().enumerate() {
        let mut rng = stream(seed, Purpose::Simulate, t as u64, 0);
        let mut noise = vec![0.0; grid.n_intervals() * sde.noise_dim()];
        sde::fill_increments(grid.points(), sde.noise_dim(), &mut rng, &mut noise);
        let mut path = vec![0.0; grid.len() * d];
        let model = TimeShifted {
            inner: sde,
            offset: times[t],
        };
        sde::euler_into(&model, &x, grid.points(), &noise, &mut path, &mut buf)?;
        x.copy_from_slice(&path[grid.n_intervals() * d..]);
        let mut orng = stream(seed, Purpose::Observe, t as u64, 0);
        data.push(obs.sample(t, &x, &mut orng));
        states.push(x.clone());
    }
    Ok(Simulation { data, states })
}

/// A particle in transformed coordinates, optionally with its segment path.
#[derive(Debug, Clone, PartialEq)]
pub struct ZState {
    pub e: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Option<Path>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    Bootstrap,
    GuidedForward,
    /// Transformed forward construction (elliptic models only).
    Forward,
    /// Transformed backward construction.
    Backward,
}

/// How path-space densities are discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensityMode {
    /// `Discrete` for elliptic models, `Continuum` otherwise.
    #[default]
    Auto,
    /// Exact ratios of Euler transition densities on the segment grid.
    Discrete,
    /// Quadratures of the continuous-time Radon–Nikodym formulas.
    Continuum,
}

/// Uniform interface of a Feynman–Kac model over `T` steps.
pub trait FeynmanKac: Send + Sync {
    type Workspace: Send;

    fn flavor(&self) -> Flavor;
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    /// Length of the stored noise coordinate `u` of one particle.
    fn noise_len(&self, t: usize) -> usize;
    fn initial_point(&self) -> &[f64];
    fn workspace(&self) -> Self::Workspace;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether kernel densities exist, i.e. backward sampling is valid.
    fn supports_backward(&self) -> bool {
        matches!(self.flavor(), Flavor::Forward | Flavor::Backward)
    }

    /// Draws `z_t` given the previous end point into `e` (and `u` when
    /// requested) and returns `log G_t`.
    fn sample(
        &self,
        t: usize,
        prev: &[f64],
        rng: &mut StreamRng,
        ws: &mut Self::Workspace,
        e: &mut [f64],
        u: Option<&mut [f64]>,
    ) -> Result<f64>;

    fn log_potential(&self, t: usize, prev: &[f64], e: &[f64], u: &[f64], ws: &mut Self::Workspace) -> Result<f64>;

    /// Density of the kernel at `(e, u)` given the previous end point.
    fn log_kernel_density(&self, t: usize, prev: &[f64], e: &[f64], u: &[f64], ws: &mut Self::Workspace)
        -> Result<f64>;

    /// `log M_t(z | prev) + log G_t(prev, z)`, the backward-sampling weight.
    fn log_backward_weight(
        &self,
        t: usize,
        prev: &[f64],
        e: &[f64],
        u: &[f64],
        ws: &mut Self::Workspace,
    ) -> Result<f64> {
        Ok(self.log_kernel_density(t, prev, e, u, ws)? + self.log_potential(t, prev, e, u, ws)?)
    }

    /// The segment path of `(e, u)` started from `prev`.
    fn materialize(&self, t: usize, prev: &[f64], e: &[f64], u: &[f64], ws: &mut Self::Workspace) -> Result<Path>;
}

#[derive(Debug, Clone)]
enum Kernel {
    Bootstrap,
    GuidedForward(ForwardProposal),
    Forward {
        proposal: ForwardProposal,
        aux: BridgeKind,
    },
    Backward {
        endpoint: EndpointProposal,
        bridge: BridgeKind,
    },
}

/// One of the four Feynman–Kac assemblies of a [`CdSsm`].
#[derive(Debug, Clone)]
pub struct FkModel {
    ssm: Arc<CdSsm>,
    kernel: Kernel,
    discrete: bool,
}

/// Per-worker buffers for [`FkModel`].
#[derive(Debug, Clone)]
pub struct FkWorkspace {
    buf: PathBuffers,
    rk: Rk4Scratch,
    path: Vec<f64>,
    noise: Vec<f64>,
    bridge: Option<Bridge>,
    guide: Option<ForwardGuide>,
    law: EndpointLaw,
    ep: EndpointScratch,
}

fn resolve_mode(ssm: &CdSsm, mode: DensityMode) -> Result<bool> {
    match mode {
        DensityMode::Auto => Ok(ssm.sde.is_elliptic()),
        DensityMode::Discrete if !ssm.sde.is_elliptic() => {
            Err(Error::invalid("discrete path densities need an elliptic diffusion"))
        }
        DensityMode::Discrete => Ok(true),
        DensityMode::Continuum => Ok(false),
    }
}

/// Bootstrap: Euler simulation of the signal, potential `f_t(y_t | e_t)`.
pub fn make_bootstrap(ssm: Arc<CdSsm>) -> FkModel {
    FkModel {
        ssm,
        kernel: Kernel::Bootstrap,
        discrete: true,
    }
}

fn require_forward(ssm: &CdSsm) -> Result<()> {
    if !ssm.sde.is_elliptic() {
        return Err(Error::invalid(
            "forward constructions need an elliptic diffusion; use the backward construction for hypo-elliptic models",
        ));
    }
    if ssm.obs.linear_gaussian().is_none() {
        return Err(Error::invalid(
            "the guided forward drift needs a linear-Gaussian observation",
        ));
    }
    Ok(())
}

/// Euler simulation under the guided drift, potential
/// `dP/dM→ · f_t`. Filtering only.
pub fn make_guided_forward(ssm: Arc<CdSsm>, proposal: ForwardProposal) -> Result<FkModel> {
    require_forward(&ssm)?;
    Ok(FkModel {
        ssm,
        kernel: Kernel::GuidedForward(proposal),
        discrete: true,
    })
}

/// Transformed forward construction: the guided forward path mapped to the
/// noise of the auxiliary bridge `aux`.
pub fn make_fm(ssm: Arc<CdSsm>, proposal: ForwardProposal, aux: BridgeKind, mode: DensityMode) -> Result<FkModel> {
    require_forward(&ssm)?;
    if ssm.sde.noise_dim() != ssm.sde.dim() {
        return Err(Error::invalid(
            "the forward construction needs a square invertible diffusion",
        ));
    }
    let discrete = resolve_mode(&ssm, mode)?;
    if ssm.n_steps < 2 {
        return Err(Error::invalid(
            "bridge constructions need at least two steps per segment",
        ));
    }
    Ok(FkModel {
        ssm,
        kernel: Kernel::Forward { proposal, aux },
        discrete,
    })
}

/// Transformed backward construction: end point from `endpoint`, path from
/// the bridge `bridge` driven by independent noise.
pub fn make_bm(ssm: Arc<CdSsm>, endpoint: EndpointProposal, bridge: BridgeKind, mode: DensityMode) -> Result<FkModel> {
    let discrete = resolve_mode(&ssm, mode)?;
    if ssm.n_steps < 2 {
        return Err(Error::invalid(
            "bridge constructions need at least two steps per segment",
        ));
    }
    if bridge == BridgeKind::DelyonHu && !ssm.sde.is_elliptic() {
        return Err(Error::invalid("the Delyon–Hu bridge needs an elliptic diffusion"));
    }
    Ok(FkModel {
        ssm,
        kernel: Kernel::Backward { endpoint, bridge },
        discrete,
    })
}

impl FkModel {
    pub fn ssm(&self) -> &Arc<CdSsm> {
        &self.ssm
    }

    /// Whether path densities use exact Euler ratios.
    pub fn is_discrete(&self) -> bool {
        self.discrete
    }

    fn y(&self, t: usize) -> &[f64] {
        &self.ssm.data[t]
    }

    fn log_obs(&self, t: usize, e: &[f64]) -> f64 {
        self.ssm.obs.log_density(t, self.y(t), e)
    }

    fn prepare_guide(&self, t: usize, prev: &[f64], proposal: &ForwardProposal, ws: &mut FkWorkspace) -> Result<()> {
        let ssm = &*self.ssm;
        let lg = ssm.obs.linear_gaussian().expect("checked at construction");
        let model = ssm.segment_sde(t);
        let guide = ws
            .guide
            .get_or_insert_with(|| ForwardGuide::new(ssm.dim(), ssm.noise_dim(), lg));
        guide.reset(&model, proposal, ssm.grids[t].clone(), prev, self.y(t), &mut ws.rk)
    }

    fn prepare_bridge(&self, t: usize, kind: BridgeKind, prev: &[f64], e: &[f64], ws: &mut FkWorkspace) -> Result<()> {
        let ssm = &*self.ssm;
        let model = ssm.segment_sde(t);
        let bridge = ws
            .bridge
            .get_or_insert_with(|| Bridge::blank(kind, ssm.grids[t].clone(), ssm.dim(), ssm.noise_dim()));
        bridge.reset(&model, ssm.grids[t].clone(), prev, e, &mut ws.rk)
    }

    /// Euler path under the guided forward drift (or the signal drift when
    /// `guided` is false) into `ws.path`, returning the Girsanov log-weight
    /// `dP/dM→` (zero for the signal drift). `noise` holds the increments.
    fn forward_path(&self, t: usize, prev: &[f64], guided: bool, noise: &[f64], ws: &mut FkWorkspace) -> Result<f64> {
        let ssm = &*self.ssm;
        let model = ssm.segment_sde(t);
        let grid = &ssm.grids[t];
        let (d, dw) = (ssm.dim(), ssm.noise_dim());
        let n = grid.n_intervals();
        ws.path.resize((n + 1) * d, 0.0);
        if !guided {
            sde::euler_into(&model, prev, grid.points(), noise, &mut ws.path, &mut ws.buf)?;
            return Ok(0.0);
        }
        let points = grid.points();
        let guide = ws.guide.as_ref().expect("guide prepared");
        let buf = &mut ws.buf;
        ws.path[..d].copy_from_slice(prev);
        let mut total = 0.0;
        for i in 0..n {
            let s = points[i];
            let dt = points[i + 1] - s;
            let (head, tail) = ws.path.split_at_mut((i + 1) * d);
            let x = &head[i * d..];
            guide.drifts_at(&model, i, x, buf)?;
            let db = &noise[i * dw..(i + 1) * dw];
            for k in 0..d {
                let kick: f64 = (0..dw).map(|c| buf.sigma[k * dw + c] * db[c]).sum();
                tail[k] = x[k] + buf.a[k] * dt + kick;
            }
            check_finite("forward path", &tail[..d], i + 1, points[i + 1], x)?;
            if !buf.factor_sigma(d, dw) {
                return Err(Error::numeric_at(
                    "diffusion covariance is not positive definite",
                    i,
                    s,
                    x,
                ));
            }
            total += sde::girsanov_increment(
                &buf.b,
                &buf.a,
                x,
                &tail[..d],
                dt,
                &buf.cov,
                d,
                &mut buf.work,
                &mut buf.work2,
            );
        }
        if !total.is_finite() {
            return Err(Error::numeric_at("non-finite Girsanov weight", n, points[n], prev));
        }
        Ok(total)
    }

    /// Girsanov log-weight `dP/dM→` of the path stored in `ws.path`.
    fn forward_girsanov_of_path(&self, t: usize, ws: &mut FkWorkspace) -> Result<f64> {
        let ssm = &*self.ssm;
        let model = ssm.segment_sde(t);
        let points = ssm.grids[t].points();
        let d = ssm.dim();
        let guide = ws.guide.as_ref().expect("guide prepared");
        let buf = &mut ws.buf;
        let mut total = 0.0;
        for i in 0..points.len() - 1 {
            let x = &ws.path[i * d..(i + 1) * d];
            let x_next = &ws.path[(i + 1) * d..(i + 2) * d];
            guide.drifts_at(&model, i, x, buf)?;
            sde::diffusion_chol(&model, points[i], x, buf, i)?;
            total += sde::girsanov_increment(
                &buf.b,
                &buf.a,
                x,
                x_next,
                points[i + 1] - points[i],
                &buf.cov,
                d,
                &mut buf.work,
                &mut buf.work2,
            );
        }
        Ok(total)
    }

    /// Discrete forward kernel density of the bridge path in `ws.path`:
    /// `Σ_{i<n} log N(Δv; b→ δ, Σ δ) - Σ_{i<n-1} log N(Δv; a δ, Σ δ)` with `a`
    /// the auxiliary bridge drift.
    fn forward_kernel_discrete(&self, t: usize, prev: &[f64], e: &[f64], ws: &mut FkWorkspace) -> Result<f64> {
        let ssm = &*self.ssm;
        let model = ssm.segment_sde(t);
        let points = ssm.grids[t].points();
        let n = points.len() - 1;
        let d = ssm.dim();
        let guide = ws.guide.as_ref().expect("guide prepared");
        let buf = &mut ws.buf;
        // Free steps: log N(Δv; b→δ) - log N(Δv; aδ) is a Girsanov summand.
        // Bridge drifts go into buf.b by swapping roles.
        let bridge = ws.bridge.as_ref().expect("bridge prepared");
        let mut total = 0.0;
        let mut a_bridge = vec![0.0; d];
        for i in 0..n - 1 {
            let x = &ws.path[i * d..(i + 1) * d];
            let x_next = &ws.path[(i + 1) * d..(i + 2) * d];
            bridge.drift_only(&model, i, x, buf, &mut a_bridge)?;
            guide.drifts_at(&model, i, x, buf)?;
            sde::diffusion_chol(&model, points[i], x, buf, i)?;
            total += sde::girsanov_increment(
                &buf.a,
                &a_bridge,
                x,
                x_next,
                points[i + 1] - points[i],
                &buf.cov,
                d,
                &mut buf.work,
                &mut buf.work2,
            );
        }
        let x = &ws.path[(n - 1) * d..n * d];
        guide.drifts_at(&model, n - 1, x, buf)?;
        sde::diffusion_chol(&model, points[n - 1], x, buf, n - 1)?;
        let dt = points[n] - points[n - 1];
        for k in 0..d {
            buf.r[k] = e[k] - x[k] - buf.a[k] * dt;
        }
        total += linalg::gaussian_logpdf_chol(&buf.cov, d, dt, &buf.r, &mut buf.work);
        if !total.is_finite() {
            return Err(Error::numeric_at(
                "non-finite forward kernel density",
                n,
                points[n],
                prev,
            ));
        }
        Ok(total)
    }

    fn fill_bridge_noise(&self, t: usize, rng: &mut StreamRng, u: &mut [f64]) {
        let grid = &self.ssm.grids[t];
        let dw = self.ssm.noise_dim();
        let n = grid.n_intervals();
        sde::fill_increments(&grid.points()[..n], dw, rng, &mut u[..(n - 1) * dw]);
        u[(n - 1) * dw..].iter_mut().for_each(|v| *v = 0.0);
    }

    /// Path of `(prev, e, u)` into `ws.path` for the bridge flavors.
    fn bridge_path(
        &self,
        t: usize,
        kind: BridgeKind,
        prev: &[f64],
        e: &[f64],
        u: &[f64],
        ws: &mut FkWorkspace,
    ) -> Result<()> {
        self.prepare_bridge(t, kind, prev, e, ws)?;
        let model = self.ssm.segment_sde(t);
        let grid = &self.ssm.grids[t];
        ws.path.resize(grid.len() * self.ssm.dim(), 0.0);
        let bridge = ws.bridge.as_ref().expect("bridge prepared");
        bridge.fill_path(&model, u, &mut ws.path, &mut ws.buf)
    }

    fn bridge_rn_of_path(&self, t: usize, ws: &mut FkWorkspace) -> Result<f64> {
        let model = self.ssm.segment_sde(t);
        let bridge = ws.bridge.as_ref().expect("bridge prepared");
        if self.discrete {
            bridge.discrete_log_rn_flat(&model, &ws.path, &mut ws.buf)
        } else {
            bridge.continuum_log_rn_flat(&model, &ws.path, &mut ws.buf)
        }
    }

    fn endpoint_law(&self, t: usize, prev: &[f64], endpoint: &EndpointProposal, ws: &mut FkWorkspace) -> Result<()> {
        let ssm = &*self.ssm;
        let model = ssm.segment_sde(t);
        endpoint.fill_law(
            &model,
            &*ssm.obs,
            prev,
            self.y(t),
            ssm.grids[t].delta(),
            &mut ws.law,
            &mut ws.ep,
        )
    }

    fn check_u(&self, t: usize, u: &[f64]) -> Result<()> {
        if u.len() != self.noise_len(t) {
            return Err(Error::invalid("noise coordinate has the wrong length"));
        }
        Ok(())
    }
}

impl FeynmanKac for FkModel {
    type Workspace = FkWorkspace;

    fn flavor(&self) -> Flavor {
        match self.kernel {
            Kernel::Bootstrap => Flavor::Bootstrap,
            Kernel::GuidedForward(_) => Flavor::GuidedForward,
            Kernel::Forward { .. } => Flavor::Forward,
            Kernel::Backward { .. } => Flavor::Backward,
        }
    }

    fn len(&self) -> usize {
        self.ssm.len()
    }

    fn dim(&self) -> usize {
        self.ssm.dim()
    }

    fn noise_len(&self, t: usize) -> usize {
        self.ssm.grids[t].n_intervals() * self.ssm.noise_dim()
    }

    fn initial_point(&self) -> &[f64] {
        &self.ssm.x0
    }

    fn workspace(&self) -> FkWorkspace {
        let (d, dw) = (self.ssm.dim(), self.ssm.noise_dim());
        FkWorkspace {
            buf: PathBuffers::for_dims(d, dw),
            rk: Rk4Scratch::new(d, dw),
            path: Vec::new(),
            noise: Vec::new(),
            bridge: None,
            guide: None,
            law: EndpointLaw::new(d),
            ep: EndpointScratch::new(d, dw),
        }
    }

    fn sample(
        &self,
        t: usize,
        prev: &[f64],
        rng: &mut StreamRng,
        ws: &mut FkWorkspace,
        e: &mut [f64],
        u: Option<&mut [f64]>,
    ) -> Result<f64> {
        let d = self.dim();
        let nl = self.noise_len(t);
        let n = self.ssm.grids[t].n_intervals();
        let points = self.ssm.grids[t].points();
        let mut noise = std::mem::take(&mut ws.noise);
        noise.resize(nl, 0.0);
        let result = (|| match &self.kernel {
            Kernel::Bootstrap | Kernel::GuidedForward(_) => {
                sde::fill_increments(points, self.ssm.noise_dim(), rng, &mut noise);
                let guided = if let Kernel::GuidedForward(p) = &self.kernel {
                    self.prepare_guide(t, prev, p, ws)?;
                    true
                } else {
                    false
                };
                let log_rn = self.forward_path(t, prev, guided, &noise, ws)?;
                e.copy_from_slice(&ws.path[n * d..]);
                if let Some(u) = u {
                    u.copy_from_slice(&noise);
                }
                Ok(log_rn + self.log_obs(t, e))
            }
            Kernel::Forward { proposal, aux } => {
                sde::fill_increments(points, self.ssm.noise_dim(), rng, &mut noise);
                self.prepare_guide(t, prev, proposal, ws)?;
                let log_rn = self.forward_path(t, prev, true, &noise, ws)?;
                e.copy_from_slice(&ws.path[n * d..]);
                if let Some(u) = u {
                    self.prepare_bridge(t, *aux, prev, e, ws)?;
                    let model = self.ssm.segment_sde(t);
                    let bridge = ws.bridge.as_ref().expect("bridge prepared");
                    bridge.noise_from_path(&model, &ws.path, u, &mut ws.buf)?;
                }
                Ok(log_rn + self.log_obs(t, e))
            }
            Kernel::Backward { endpoint, bridge } => {
                self.endpoint_law(t, prev, endpoint, ws)?;
                ws.law.sample_into(rng, e);
                let log_m = ws.law.log_pdf(e);
                self.fill_bridge_noise(t, rng, &mut noise);
                self.prepare_bridge(t, *bridge, prev, e, ws)?;
                let model = self.ssm.segment_sde(t);
                ws.path.resize((n + 1) * d, 0.0);
                let br = ws.bridge.as_ref().expect("bridge prepared");
                let rn = if self.discrete {
                    br.fill_path_discrete_rn(&model, &noise, &mut ws.path, &mut ws.buf)?
                } else {
                    br.fill_path(&model, &noise, &mut ws.path, &mut ws.buf)?;
                    br.continuum_log_rn_flat(&model, &ws.path, &mut ws.buf)?
                };
                if let Some(u) = u {
                    u.copy_from_slice(&noise);
                }
                Ok(rn - log_m + self.log_obs(t, e))
            }
        })();
        ws.noise = noise;
        result
    }

    fn log_potential(&self, t: usize, prev: &[f64], e: &[f64], u: &[f64], ws: &mut FkWorkspace) -> Result<f64> {
        self.check_u(t, u)?;
        match &self.kernel {
            Kernel::Bootstrap => Ok(self.log_obs(t, e)),
            Kernel::GuidedForward(p) => {
                self.prepare_guide(t, prev, p, ws)?;
                let rn = self.forward_path(t, prev, true, u, ws)?;
                Ok(rn + self.log_obs(t, e))
            }
            Kernel::Forward { proposal, aux } => {
                self.bridge_path(t, *aux, prev, e, u, ws)?;
                self.prepare_guide(t, prev, proposal, ws)?;
                let rn = self.forward_girsanov_of_path(t, ws)?;
                Ok(rn + self.log_obs(t, e))
            }
            Kernel::Backward { endpoint, bridge } => {
                self.bridge_path(t, *bridge, prev, e, u, ws)?;
                let rn = self.bridge_rn_of_path(t, ws)?;
                self.endpoint_law(t, prev, endpoint, ws)?;
                Ok(rn - ws.law.log_pdf(e) + self.log_obs(t, e))
            }
        }
    }

    fn log_kernel_density(&self, t: usize, prev: &[f64], e: &[f64], u: &[f64], ws: &mut FkWorkspace) -> Result<f64> {
        self.check_u(t, u)?;
        match &self.kernel {
            Kernel::Bootstrap | Kernel::GuidedForward(_) => Err(Error::invalid(
                "untransformed kernels put all their mass on paths glued to one ancestor and have no density for backward sampling",
            )),
            Kernel::Forward { proposal, aux } => {
                self.bridge_path(t, *aux, prev, e, u, ws)?;
                self.prepare_guide(t, prev, proposal, ws)?;
                if self.discrete {
                    self.forward_kernel_discrete(t, prev, e, ws)
                } else {
                    let joint = self.bridge_rn_of_path(t, ws)?;
                    Ok(joint - self.forward_girsanov_of_path(t, ws)?)
                }
            }
            Kernel::Backward { endpoint, .. } => {
                self.endpoint_law(t, prev, endpoint, ws)?;
                Ok(ws.law.log_pdf(e))
            }
        }
    }

    fn log_backward_weight(&self, t: usize, prev: &[f64], e: &[f64], u: &[f64], ws: &mut FkWorkspace) -> Result<f64> {
        self.check_u(t, u)?;
        match &self.kernel {
            // Kernel density times potential is the bridge density ratio times
            // the observation density; the proposal terms cancel.
            Kernel::Forward { aux: kind, .. } | Kernel::Backward { bridge: kind, .. } => {
                self.bridge_path(t, *kind, prev, e, u, ws)?;
                Ok(self.bridge_rn_of_path(t, ws)? + self.log_obs(t, e))
            }
            _ => Ok(self.log_kernel_density(t, prev, e, u, ws)? + self.log_potential(t, prev, e, u, ws)?),
        }
    }

    fn materialize(&self, t: usize, prev: &[f64], e: &[f64], u: &[f64], ws: &mut FkWorkspace) -> Result<Path> {
        self.check_u(t, u)?;
        let grid = self.ssm.grids[t].clone();
        match &self.kernel {
            Kernel::Bootstrap => {
                self.forward_path(t, prev, false, u, ws)?;
            }
            Kernel::GuidedForward(p) => {
                self.prepare_guide(t, prev, p, ws)?;
                self.forward_path(t, prev, true, u, ws)?;
            }
            Kernel::Forward { aux: kind, .. } | Kernel::Backward { bridge: kind, .. } => {
                self.bridge_path(t, *kind, prev, e, u, ws)?;
            }
        }
        Path::new(grid, self.dim(), ws.path.clone())
    }
}

/// Draws a fresh noise coordinate for the bridge flavors (final increment zero).
pub fn sample_noise<R: Rng + ?Sized>(grid: &TimeGrid, dim: usize, bridge: bool, rng: &mut R, out: &mut [f64]) {
    let n = grid.n_intervals();
    if bridge {
        sde::fill_increments(&grid.points()[..n], dim, rng, &mut out[..(n - 1) * dim]);
        out[(n - 1) * dim..].iter_mut().for_each(|v| *v = 0.0);
    } else {
        sde::fill_increments(grid.points(), dim, rng, out);
    }
}
