//! Diffusion bridges between two fixed end points: Delyon–Hu and guided
//! proposals, their log-densities against the true bridge, and the maps
//! between driving noise and bridge paths.
//!
//! Every bridge path is an Euler recursion on the segment grid whose final
//! value is overwritten with the target end point. The last noise increment
//! therefore never influences the path, and the noise coordinate of a bridge
//! is taken to have that increment equal to zero.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::linear_gauss::{self, LinearSde, Rk4Scratch, TransitionTable, DEFAULT_QUAD_STEPS};
use crate::sde::{self, check_finite, Path, PathBuffers, SdeModel, TimeGrid, WienerIncrements};

/// Linear SDE used as the transition proxy of a guided bridge. Every choice
/// takes the constant diffusion `σ(Δ, e_end)`, which matches the signal
/// diffusion at the end point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidedProxy {
    /// Zero drift.
    EndpointBm,
    /// Drift linearized at the start point.
    #[default]
    LinearizedAtStart,
    /// Drift linearized at the end point.
    LinearizedAtEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeKind {
    /// Pull `(e - x)/(Δ - s)` with the signal diffusion; elliptic models only.
    DelyonHu,
    /// Signal drift plus `Σ ∇ log p̃` for a linear proxy `p̃`.
    Guided(GuidedProxy),
}

impl Default for BridgeKind {
    fn default() -> Self {
        BridgeKind::Guided(GuidedProxy::default())
    }
}

#[derive(Debug, Clone)]
struct Guide {
    proxy: LinearSde,
    table: TransitionTable,
    /// Grid the table was built on; `None` forces a rebuild.
    table_grid: Option<Arc<TimeGrid>>,
    /// Cholesky factors of `V(t_i)` for every grid point but the last.
    vchol: Vec<f64>,
    /// `Σ̃ = σ̃ σ̃ᵀ`.
    cov_tilde: Vec<f64>,
    log_pg: f64,
    matching_error: f64,
}

/// A bridge proposal from `e_prev` at time 0 to `e_end` at time `Δ`.
#[derive(Debug, Clone)]
pub struct Bridge {
    kind: BridgeKind,
    grid: Arc<TimeGrid>,
    d: usize,
    dw: usize,
    e_prev: Vec<f64>,
    e_end: Vec<f64>,
    guide: Option<Guide>,
    quad_steps: usize,
}

impl Bridge {
    pub fn new(
        model: &dyn SdeModel,
        kind: BridgeKind,
        grid: Arc<TimeGrid>,
        e_prev: &[f64],
        e_end: &[f64],
    ) -> Result<Self> {
        let mut b = Bridge {
            kind,
            grid,
            d: model.dim(),
            dw: model.noise_dim(),
            e_prev: Vec::new(),
            e_end: Vec::new(),
            guide: None,
            quad_steps: DEFAULT_QUAD_STEPS,
        };
        let mut rk = Rk4Scratch::new(b.d, b.dw);
        let grid = b.grid.clone();
        b.reset(model, grid, e_prev, e_end, &mut rk)?;
        Ok(b)
    }

    /// A bridge that must be [`reset`](Bridge::reset) before use.
    pub(crate) fn blank(kind: BridgeKind, grid: Arc<TimeGrid>, d: usize, dw: usize) -> Self {
        Bridge {
            kind,
            grid,
            d,
            dw,
            e_prev: Vec::new(),
            e_end: Vec::new(),
            guide: None,
            quad_steps: DEFAULT_QUAD_STEPS,
        }
    }

    /// Re-targets the bridge to a new grid and end points, reusing its allocations.
    pub(crate) fn reset(
        &mut self,
        model: &dyn SdeModel,
        grid: Arc<TimeGrid>,
        e_prev: &[f64],
        e_end: &[f64],
        rk: &mut Rk4Scratch,
    ) -> Result<()> {
        let d = self.d;
        self.grid = grid;
        if e_prev.len() != d || e_end.len() != d {
            return Err(Error::invalid("bridge end points must match the model dimension"));
        }
        self.e_prev.clear();
        self.e_prev.extend_from_slice(e_prev);
        self.e_end.clear();
        self.e_end.extend_from_slice(e_end);
        match self.kind {
            BridgeKind::DelyonHu => {
                if !model.is_elliptic() {
                    return Err(Error::invalid("the Delyon–Hu bridge needs an elliptic diffusion"));
                }
                Ok(())
            }
            BridgeKind::Guided(proxy) => self.build_guide(model, proxy, rk),
        }
    }

    fn build_guide(&mut self, model: &dyn SdeModel, proxy_kind: GuidedProxy, rk: &mut Rk4Scratch) -> Result<()> {
        let (d, dw) = (self.d, self.dw);
        let delta = self.grid.delta();
        let mut sigma_end = vec![0.0; d * dw];
        model.diffusion(delta, &self.e_end, &mut sigma_end);
        check_finite("diffusion", &sigma_end, self.grid.n_intervals(), delta, &self.e_end)?;
        let proxy = match proxy_kind {
            GuidedProxy::EndpointBm => {
                LinearSde::constant_flat(d, dw, vec![0.0; d], vec![0.0; d * d], sigma_end.clone())?
            }
            GuidedProxy::LinearizedAtStart => {
                linear_gauss::linearize_flat(model, 0.0, &self.e_prev, sigma_end.clone())?
            }
            GuidedProxy::LinearizedAtEnd => linear_gauss::linearize_flat(model, delta, &self.e_end, sigma_end.clone())?,
        };
        let points = self.grid.points();
        let n = points.len() - 1;
        let mut guide = match self.guide.take() {
            Some(g)
                if g.proxy.same_coefficients(&proxy)
                    && g.table_grid.as_ref().is_some_and(|tg| Arc::ptr_eq(tg, &self.grid)) =>
            {
                g
            }
            Some(mut g) => {
                g.proxy = proxy;
                g.table_grid = None;
                g
            }
            None => Guide {
                proxy,
                table: TransitionTable::empty(d),
                table_grid: None,
                vchol: Vec::new(),
                cov_tilde: vec![0.0; d * d],
                log_pg: 0.0,
                matching_error: 0.0,
            },
        };
        if guide.table_grid.is_none() {
            guide.vchol.clear();
            linear_gauss::fill_transition_table(&guide.proxy, points, self.quad_steps, &mut guide.table, rk)?;
        }
        guide.vchol.resize(n * d * d, 0.0);
        for i in (0..n).filter(|_| guide.table_grid.is_none()) {
            let dst = &mut guide.vchol[i * d * d..(i + 1) * d * d];
            dst.copy_from_slice(guide.table.cov(i));
            if !linalg::cholesky_in_place(dst, d) {
                return Err(Error::numeric_at(
                    "guided proxy covariance is degenerate; the proxy must be controllable",
                    i,
                    points[i],
                    &self.e_prev,
                ));
            }
        }
        guide.table_grid = Some(self.grid.clone());
        linalg::outer_self(&sigma_end, d, dw, &mut guide.cov_tilde);
        guide.matching_error = 0.0;
        let mut work = vec![0.0; d];
        let mut resid = vec![0.0; d];
        let phi0 = guide.table.phi(0);
        let m0 = guide.table.offset(0);
        for k in 0..d {
            resid[k] = self.e_end[k] - linalg::dot(&phi0[k * d..(k + 1) * d], &self.e_prev) - m0[k];
        }
        guide.log_pg = linalg::gaussian_logpdf_chol(&guide.vchol[..d * d], d, 1.0, &resid, &mut work);
        self.guide = Some(guide);
        Ok(())
    }

    pub fn kind(&self) -> BridgeKind {
        self.kind
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn e_prev(&self) -> &[f64] {
        &self.e_prev
    }

    pub fn e_end(&self) -> &[f64] {
        &self.e_end
    }

    /// The guided proxy, if any.
    pub fn proxy(&self) -> Option<&LinearSde> {
        self.guide.as_ref().map(|g| &g.proxy)
    }

    /// `log p̃(e_end | e_prev)` under the guided proxy.
    pub fn log_proxy_density(&self) -> Option<f64> {
        self.guide.as_ref().map(|g| g.log_pg)
    }

    /// Relative Frobenius distance between `Σ̃(Δ)` and `Σ(Δ, e_end)`.
    pub fn matching_error(&self, model: &dyn SdeModel) -> Option<f64> {
        let g = self.guide.as_ref()?;
        let d = self.d;
        let mut sigma = vec![0.0; d * self.dw];
        let mut cov = vec![0.0; d * d];
        model.diffusion(self.grid.delta(), &self.e_end, &mut sigma);
        linalg::outer_self(&sigma, d, self.dw, &mut cov);
        let num: f64 = cov.iter().zip(&g.cov_tilde).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = cov.iter().map(|a| a * a).sum();
        Some(g.matching_error.max((num / den.max(f64::MIN_POSITIVE)).sqrt()))
    }

    /// Guided score `r̃ = Φᵀ V⁻¹ (e - Φ x - m)` at grid point `i` into `buf.r`.
    fn score(&self, g: &Guide, i: usize, x: &[f64], buf: &mut PathBuffers) {
        let d = self.d;
        let phi = g.table.phi(i);
        let m = g.table.offset(i);
        for k in 0..d {
            buf.work[k] = self.e_end[k] - linalg::dot(&phi[k * d..(k + 1) * d], x) - m[k];
        }
        linalg::cholesky_solve(&g.vchol[i * d * d..(i + 1) * d * d], d, &mut buf.work);
        linalg::mat_t_vec(phi, d, d, &buf.work, &mut buf.r);
    }

    /// Signal drift into `buf.b`, diffusion into `buf.sigma`, bridge drift
    /// into `buf.a`, all at grid point `i < n`.
    fn drifts_at(&self, model: &dyn SdeModel, i: usize, x: &[f64], buf: &mut PathBuffers) -> Result<()> {
        let (d, dw) = (self.d, self.dw);
        let s = self.grid.points()[i];
        model.drift(s, x, &mut buf.b);
        check_finite("drift", &buf.b, i, s, x)?;
        model.diffusion(s, x, &mut buf.sigma);
        check_finite("diffusion", &buf.sigma, i, s, x)?;
        match &self.guide {
            None => {
                let tau = self.grid.delta() - s;
                for k in 0..d {
                    buf.a[k] = (self.e_end[k] - x[k]) / tau;
                }
            }
            Some(g) => {
                self.score(g, i, x, buf);
                linalg::mat_t_vec(&buf.sigma, d, dw, &buf.r, &mut buf.work2[..dw.max(1)]);
                // buf.work2 holds σᵀ r̃ (dw ≤ d).
                for k in 0..d {
                    let push: f64 = (0..dw).map(|c| buf.sigma[k * dw + c] * buf.work2[c]).sum();
                    buf.a[k] = buf.b[k] + push;
                }
            }
        }
        check_finite("bridge drift", &buf.a, i, s, x)
    }

    /// Bridge drift alone at grid point `i` into `out`; clobbers `buf`.
    pub(crate) fn drift_only(
        &self,
        model: &dyn SdeModel,
        i: usize,
        x: &[f64],
        buf: &mut PathBuffers,
        out: &mut [f64],
    ) -> Result<()> {
        self.drifts_at(model, i, x, buf)?;
        out.copy_from_slice(&buf.a);
        Ok(())
    }

    /// Pinned Euler path driven by `noise` into `out`.
    pub(crate) fn fill_path(
        &self,
        model: &dyn SdeModel,
        noise: &[f64],
        out: &mut [f64],
        buf: &mut PathBuffers,
    ) -> Result<()> {
        let (d, dw) = (self.d, self.dw);
        let points = self.grid.points();
        let n = points.len() - 1;
        out[..d].copy_from_slice(&self.e_prev);
        for i in 0..n - 1 {
            let dt = points[i + 1] - points[i];
            let (head, tail) = out.split_at_mut((i + 1) * d);
            let x = &head[i * d..];
            self.drifts_at(model, i, x, buf)?;
            let db = &noise[i * dw..(i + 1) * dw];
            for k in 0..d {
                let kick: f64 = (0..dw).map(|c| buf.sigma[k * dw + c] * db[c]).sum();
                tail[k] = x[k] + buf.a[k] * dt + kick;
            }
            check_finite("bridge path", &tail[..d], i + 1, points[i + 1], x)?;
        }
        out[n * d..].copy_from_slice(&self.e_end);
        Ok(())
    }

    /// Pinned path and, in the same pass, its discrete log-ratio (see
    /// [`Bridge::discrete_log_rn_flat`]).
    pub(crate) fn fill_path_discrete_rn(
        &self,
        model: &dyn SdeModel,
        noise: &[f64],
        out: &mut [f64],
        buf: &mut PathBuffers,
    ) -> Result<f64> {
        let (d, dw) = (self.d, self.dw);
        let points = self.grid.points();
        let n = points.len() - 1;
        out[..d].copy_from_slice(&self.e_prev);
        let mut total = 0.0;
        for i in 0..n - 1 {
            let s = points[i];
            let dt = points[i + 1] - s;
            let (head, tail) = out.split_at_mut((i + 1) * d);
            let x = &head[i * d..];
            self.drifts_at(model, i, x, buf)?;
            let db = &noise[i * dw..(i + 1) * dw];
            for k in 0..d {
                let kick: f64 = (0..dw).map(|c| buf.sigma[k * dw + c] * db[c]).sum();
                tail[k] = x[k] + buf.a[k] * dt + kick;
            }
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
        out[n * d..].copy_from_slice(&self.e_end);
        total += self.last_step_logpdf(model, out, buf)?;
        if !total.is_finite() {
            return Err(Error::numeric_at("non-finite bridge weight", n, points[n], &self.e_end));
        }
        Ok(total)
    }

    /// `log N(e - v_{n-1}; b δ, Σ δ)` for the final, pinned step.
    fn last_step_logpdf(&self, model: &dyn SdeModel, path: &[f64], buf: &mut PathBuffers) -> Result<f64> {
        let d = self.d;
        let points = self.grid.points();
        let n = points.len() - 1;
        let s = points[n - 1];
        let dt = points[n] - s;
        let x = &path[(n - 1) * d..n * d];
        model.drift(s, x, &mut buf.b);
        check_finite("drift", &buf.b, n - 1, s, x)?;
        sde::diffusion_chol(model, s, x, buf, n - 1)?;
        for k in 0..d {
            buf.r[k] = self.e_end[k] - x[k] - buf.b[k] * dt;
        }
        Ok(linalg::gaussian_logpdf_chol(&buf.cov, d, dt, &buf.r, &mut buf.work))
    }

    /// Log-ratio of the Euler density of the whole path under the signal to
    /// the Euler density of its free steps under the bridge:
    /// `Σ_{i<n} log N(Δv_i; b δ_i, Σ δ_i) - Σ_{i<n-1} log N(Δv_i; a δ_i, Σ δ_i)`.
    /// This is the time-discretized `p_t(e|e_prev) · dP_bridge/dM_bridge`.
    pub(crate) fn discrete_log_rn_flat(
        &self,
        model: &dyn SdeModel,
        path: &[f64],
        buf: &mut PathBuffers,
    ) -> Result<f64> {
        let d = self.d;
        let points = self.grid.points();
        let n = points.len() - 1;
        let mut total = 0.0;
        for i in 0..n - 1 {
            let s = points[i];
            let dt = points[i + 1] - s;
            let x = &path[i * d..(i + 1) * d];
            let x_next = &path[(i + 1) * d..(i + 2) * d];
            self.drifts_at(model, i, x, buf)?;
            if !buf.factor_sigma(d, self.dw) {
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
                x_next,
                dt,
                &buf.cov,
                d,
                &mut buf.work,
                &mut buf.work2,
            );
        }
        total += self.last_step_logpdf(model, path, buf)?;
        if !total.is_finite() {
            return Err(Error::numeric_at("non-finite bridge weight", n, points[n], &self.e_end));
        }
        Ok(total)
    }

    /// Noise increments that reproduce `path` under this bridge; the final
    /// increment is zero. Needs a square, invertible diffusion.
    pub(crate) fn noise_from_path(
        &self,
        model: &dyn SdeModel,
        path: &[f64],
        noise: &mut [f64],
        buf: &mut PathBuffers,
    ) -> Result<()> {
        let d = self.d;
        if self.dw != d {
            return Err(Error::invalid(
                "inverting a bridge map needs a square diffusion coefficient",
            ));
        }
        let points = self.grid.points();
        let n = points.len() - 1;
        for i in 0..n - 1 {
            let s = points[i];
            let dt = points[i + 1] - s;
            let x = &path[i * d..(i + 1) * d];
            self.drifts_at(model, i, x, buf)?;
            let u = &mut noise[i * d..(i + 1) * d];
            for k in 0..d {
                u[k] = path[(i + 1) * d + k] - x[k] - buf.a[k] * dt;
            }
            buf.mat.copy_from_slice(&buf.sigma);
            if !linalg::lu_solve_in_place(&mut buf.mat, d, u) {
                return Err(Error::numeric_at("diffusion coefficient is singular", i, s, x));
            }
        }
        noise[(n - 1) * d..].iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }

    /// Continuum `p_t · dP_bridge/dM_bridge` of a path: the Delyon–Hu or
    /// guided formula according to the bridge kind.
    pub(crate) fn continuum_log_rn_flat(
        &self,
        model: &dyn SdeModel,
        path: &[f64],
        buf: &mut PathBuffers,
    ) -> Result<f64> {
        match self.kind {
            BridgeKind::DelyonHu => delyon_hu_flat(model, self.grid.points(), path, &self.e_prev, &self.e_end, buf),
            BridgeKind::Guided(_) => self.guided_log_rn_flat(model, path, buf),
        }
    }

    /// `log p̃(e|e_prev) + Σ_i φ(t_i, v_i) δ_i` for a guided bridge.
    pub(crate) fn guided_log_rn_flat(&self, model: &dyn SdeModel, path: &[f64], buf: &mut PathBuffers) -> Result<f64> {
        let g = self
            .guide
            .as_ref()
            .ok_or_else(|| Error::invalid("guided log-density requested for a non-guided bridge"))?;
        let points = self.grid.points();
        let n = points.len() - 1;
        let mut total = g.log_pg;
        for i in 0..n {
            let x = &path[i * self.d..(i + 1) * self.d];
            total += self.phi_at(model, g, i, x, buf)? * (points[i + 1] - points[i]);
        }
        if !total.is_finite() {
            return Err(Error::numeric_at("non-finite guided weight", n, points[n], &self.e_end));
        }
        Ok(total)
    }

    /// `φ = (b - b̃)ᵀ r̃ - ½ tr((Σ - Σ̃)(H̃ - r̃ r̃ᵀ))` at grid point `i`.
    fn phi_at(&self, model: &dyn SdeModel, g: &Guide, i: usize, x: &[f64], buf: &mut PathBuffers) -> Result<f64> {
        let (d, dw) = (self.d, self.dw);
        let s = self.grid.points()[i];
        model.drift(s, x, &mut buf.b);
        check_finite("drift", &buf.b, i, s, x)?;
        g.proxy.drift(s, x, &mut buf.a);
        model.diffusion(s, x, &mut buf.sigma);
        check_finite("diffusion", &buf.sigma, i, s, x)?;
        self.score(g, i, x, buf);
        let mut val = 0.0;
        for k in 0..d {
            val += (buf.b[k] - buf.a[k]) * buf.r[k];
        }
        // H̃ = Φᵀ V⁻¹ Φ, one column at a time.
        let phi = g.table.phi(i);
        let chol = &g.vchol[i * d * d..(i + 1) * d * d];
        for c in 0..d {
            for k in 0..d {
                buf.work[k] = phi[k * d + c];
            }
            linalg::cholesky_solve(chol, d, &mut buf.work);
            for r in 0..d {
                buf.mat2[r * d + c] = (0..d).map(|k| phi[k * d + r] * buf.work[k]).sum();
            }
        }
        linalg::outer_self(&buf.sigma, d, dw, &mut buf.mat);
        let mut tr = 0.0;
        for r in 0..d {
            for c in 0..d {
                let diff = buf.mat[r * d + c] - g.cov_tilde[r * d + c];
                tr += diff * (buf.mat2[c * d + r] - buf.r[c] * buf.r[r]);
            }
        }
        val -= 0.5 * tr;
        if !val.is_finite() {
            return Err(Error::numeric_at("non-finite guided φ", i, s, x));
        }
        Ok(val)
    }
}

fn check_path(bridge: &Bridge, path: &Path) -> Result<()> {
    if path.grid().as_ref() != bridge.grid.as_ref() || path.dim() != bridge.d {
        return Err(Error::invalid("path and bridge use different grids or dimensions"));
    }
    Ok(())
}

fn check_noise(bridge: &Bridge, noise: &WienerIncrements) -> Result<()> {
    if noise.grid().as_ref() != bridge.grid.as_ref() || noise.dim() != bridge.dw {
        return Err(Error::invalid("noise and bridge use different grids or dimensions"));
    }
    Ok(())
}

/// Wiener increments on `grid` with the final increment set to zero.
pub fn sample_bridge_noise<R: Rng + ?Sized>(grid: Arc<TimeGrid>, dim: usize, rng: &mut R) -> WienerIncrements {
    let n = grid.n_intervals();
    let mut values = vec![0.0; n * dim];
    sde::fill_increments(&grid.points()[..n], dim, rng, &mut values[..(n - 1) * dim]);
    WienerIncrements::new(grid, dim, values).expect("sizes are consistent")
}

/// Euler path of the bridge SDE driven by `noise`, pinned to `e_end`.
pub fn bridge_sample(bridge: &Bridge, model: &dyn SdeModel, noise: &WienerIncrements) -> Result<Path> {
    check_noise(bridge, noise)?;
    let mut values = vec![0.0; bridge.grid.len() * bridge.d];
    let mut buf = PathBuffers::for_dims(bridge.d, bridge.dw);
    bridge.fill_path(model, noise.values(), &mut values, &mut buf)?;
    Path::new(bridge.grid.clone(), bridge.d, values)
}

/// Noise-to-path map of the auxiliary bridge; the same recursion as
/// [`bridge_sample`], restricted to square invertible diffusions so that
/// [`map_f_inv`] exists.
pub fn map_f(bridge: &Bridge, model: &dyn SdeModel, noise: &WienerIncrements) -> Result<Path> {
    if bridge.dw != bridge.d || !model.is_elliptic() {
        return Err(Error::invalid(
            "the forward noise map needs a square invertible diffusion",
        ));
    }
    bridge_sample(bridge, model, noise)
}

/// Inverse of [`map_f`]: the increments reproducing `path`, final one zero.
pub fn map_f_inv(bridge: &Bridge, model: &dyn SdeModel, path: &Path) -> Result<WienerIncrements> {
    check_path(bridge, path)?;
    let mut values = vec![0.0; bridge.grid.n_intervals() * bridge.dw];
    let mut buf = PathBuffers::for_dims(bridge.d, bridge.dw);
    bridge.noise_from_path(model, path.values(), &mut values, &mut buf)?;
    WienerIncrements::new(bridge.grid.clone(), bridge.dw, values)
}

/// Noise-to-path map of the backward proposal bridge.
pub fn map_h(bridge: &Bridge, model: &dyn SdeModel, noise: &WienerIncrements) -> Result<Path> {
    bridge_sample(bridge, model, noise)
}

/// Continuum log-density of the signal bridge against the Delyon–Hu bridge,
/// without the `-log p_t(e_end | e_prev)` term:
/// `log N(e_end; e_prev, Δ Σ(0, e_prev)) + ½ log det Σ(0, e_prev)
///  - ½ log det Σ(Δ, e_end) + φ`, with
/// `φ = ∫ bᵀΣ⁻¹ dv - ½ ∫ bᵀΣ⁻¹ b ds - ½ ⋄-term` on the path grid.
pub fn delyon_hu_log_rn(model: &dyn SdeModel, path: &Path, e_prev: &[f64], e_end: &[f64]) -> Result<f64> {
    if !model.is_elliptic() {
        return Err(Error::invalid("the Delyon–Hu density needs an elliptic diffusion"));
    }
    if path.dim() != model.dim() {
        return Err(Error::invalid("path dimension does not match the model"));
    }
    let mut buf = PathBuffers::for_dims(model.dim(), model.noise_dim());
    delyon_hu_flat(model, path.grid().points(), path.values(), e_prev, e_end, &mut buf)
}

pub(crate) fn delyon_hu_flat(
    model: &dyn SdeModel,
    points: &[f64],
    values: &[f64],
    e_prev: &[f64],
    e_end: &[f64],
    buf: &mut PathBuffers,
) -> Result<f64> {
    let d = model.dim();
    let n = points.len() - 1;
    let delta = points[n];
    sde::diffusion_chol(model, 0.0, e_prev, buf, 0)?;
    let logdet0 = linalg::cholesky_logdet(&buf.cov, d);
    for k in 0..d {
        buf.r[k] = e_end[k] - e_prev[k];
    }
    let prefactor = linalg::gaussian_logpdf_chol(&buf.cov, d, delta, &buf.r, &mut buf.work);
    sde::diffusion_chol(model, delta, e_end, buf, n)?;
    let logdet_end = linalg::cholesky_logdet(&buf.cov, d);
    let drift = |s: f64, x: &[f64], out: &mut [f64]| model.drift(s, x, out);
    let zero = |_: f64, _: &[f64], out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0);
    let ito = sde::girsanov_flat(&drift, &zero, model, points, values, buf)?;
    let diamond = sde::diamond_flat(model, points, values, e_end, buf)?;
    Ok(prefactor + 0.5 * (logdet0 - logdet_end) + ito - 0.5 * diamond)
}

/// Continuum log-density of the signal bridge against a guided bridge,
/// without the `-log p_t(e_end | e_prev)` term: `log p̃(e_end|e_prev) + ∫ φ ds`
/// with left-point quadrature.
pub fn guided_log_rn(bridge: &Bridge, model: &dyn SdeModel, path: &Path) -> Result<f64> {
    check_path(bridge, path)?;
    let mut buf = PathBuffers::for_dims(bridge.d, bridge.dw);
    bridge.guided_log_rn_flat(model, path.values(), &mut buf)
}

/// Time-discretized `p_t(e_end|e_prev) · dP_bridge/dM_bridge` of `path`: the
/// Euler density of all steps under the signal over the Euler density of the
/// free (unpinned) steps under the bridge. Elliptic models only.
pub fn discrete_bridge_log_rn(bridge: &Bridge, model: &dyn SdeModel, path: &Path) -> Result<f64> {
    check_path(bridge, path)?;
    if !model.is_elliptic() {
        return Err(Error::invalid(
            "the discrete bridge density needs an elliptic diffusion",
        ));
    }
    let mut buf = PathBuffers::for_dims(bridge.d, bridge.dw);
    bridge.discrete_log_rn_flat(model, path.values(), &mut buf)
}

/// Largest `|φ|` along `path`; a numeric boundedness check for guided
/// bridges of hypo-elliptic models.
pub fn guided_phi_sup(bridge: &Bridge, model: &dyn SdeModel, path: &Path) -> Result<f64> {
    check_path(bridge, path)?;
    let g = bridge
        .guide
        .as_ref()
        .ok_or_else(|| Error::invalid("φ is only defined for guided bridges"))?;
    let mut buf = PathBuffers::for_dims(bridge.d, bridge.dw);
    let mut sup = 0.0f64;
    for i in 0..bridge.grid.n_intervals() {
        sup = sup.max(bridge.phi_at(model, g, i, path.at(i), &mut buf)?.abs());
    }
    Ok(sup)
}

/// Log of the Gaussian density `N(x; mean, cov)` for a small dense `cov`.
#[cfg(test)]
fn dense_logpdf(x: &[f64], mean: &[f64], cov: &[f64]) -> Option<f64> {
    let d = x.len();
    let mut l = cov.to_vec();
    if !linalg::cholesky_in_place(&mut l, d) {
        return None;
    }
    let r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let mut w = vec![0.0; d];
    let q = linalg::mahalanobis_sq(&l, d, &r, &mut w);
    Some(-0.5 * (q + linalg::cholesky_logdet(&l, d) + d as f64 * linalg::LOG_2PI))
}
