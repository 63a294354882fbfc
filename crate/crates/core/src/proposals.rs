//! Data-aware proposals: the guided forward drift `b + Σ ∇ log ρ̃` and the
//! end-point proposal used by backward constructions.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::linear_gauss::{self, FlatTransition, LinearSde, Rk4Scratch, TransitionTable, DEFAULT_QUAD_STEPS};
use crate::sde::{check_finite, LinearGaussianObs, ObsModel, PathBuffers, SdeModel, TimeGrid};

/// How the linear proxy of a segment is chosen from its start point.
#[derive(Debug, Clone, Default)]
pub enum ProxyKind {
    /// First-order expansion of the drift at the start point, diffusion frozen there.
    #[default]
    Linearized,
    /// Drift and diffusion frozen at the start point.
    FrozenCoefficients,
    /// A user-supplied linear SDE, shared by every segment.
    Fixed(LinearSde),
}

impl ProxyKind {
    /// The proxy for a segment starting at `e_prev` (segment-local time).
    pub fn proxy_for(&self, model: &dyn SdeModel, e_prev: &[f64]) -> Result<LinearSde> {
        let (d, dw) = (model.dim(), model.noise_dim());
        match self {
            ProxyKind::Linearized => linear_gauss::linearize_at(model, e_prev),
            ProxyKind::FrozenCoefficients => {
                let mut b0 = vec![0.0; d];
                let mut sigma = vec![0.0; d * dw];
                model.drift(0.0, e_prev, &mut b0);
                model.diffusion(0.0, e_prev, &mut sigma);
                check_finite("drift", &b0, 0, 0.0, e_prev)?;
                LinearSde::constant_flat(d, dw, b0, vec![0.0; d * d], sigma)
            }
            ProxyKind::Fixed(lin) => {
                if lin.dim() != d {
                    return Err(Error::invalid("fixed proxy dimension does not match the model"));
                }
                Ok(lin.clone())
            }
        }
    }
}

/// Builds guided forward drifts `b + Σ ∇ log ρ̃` with a Gaussian proxy `ρ̃`.
#[derive(Debug, Clone)]
pub struct ForwardProposal {
    pub proxy: ProxyKind,
    pub quad_steps: usize,
}

impl Default for ForwardProposal {
    fn default() -> Self {
        ForwardProposal::new(ProxyKind::default())
    }
}

impl ForwardProposal {
    pub fn new(proxy: ProxyKind) -> Self {
        ForwardProposal {
            proxy,
            quad_steps: DEFAULT_QUAD_STEPS,
        }
    }

    /// `b(s, x) + Σ(s, x) ∇_x log ρ̃(s, x)` for a segment of length `delta`
    /// starting at `e_prev` with observation `y` at its end.
    #[allow(clippy::too_many_arguments)]
    pub fn drift(
        &self,
        model: &dyn SdeModel,
        obs: &LinearGaussianObs,
        s: f64,
        x: &[f64],
        y: &[f64],
        e_prev: &[f64],
        delta: f64,
    ) -> Result<DVector<f64>> {
        if !(s < delta) {
            return Err(Error::invalid("the forward drift is defined for s < Δ"));
        }
        let lin = self.proxy.proxy_for(model, e_prev)?;
        let tr = linear_gauss::solve_transition(&lin, s, delta, self.quad_steps)?;
        let (_, grad) = tr.predictive_log_grad(obs, y, &DVector::from_column_slice(x))?;
        let (d, dw) = (model.dim(), model.noise_dim());
        let mut b = vec![0.0; d];
        let mut sigma = vec![0.0; d * dw];
        model.drift(s, x, &mut b);
        model.diffusion(s, x, &mut sigma);
        let mut st = vec![0.0; dw];
        linalg::mat_t_vec(&sigma, d, dw, grad.as_slice(), &mut st);
        let out: Vec<f64> = (0..d)
            .map(|k| b[k] + (0..dw).map(|c| sigma[k * dw + c] * st[c]).sum::<f64>())
            .collect();
        check_finite("forward drift", &out, 0, s, x)?;
        Ok(DVector::from_vec(out))
    }

    /// Tabulated drift for the grid of one segment.
    pub fn guide(
        &self,
        model: &dyn SdeModel,
        obs: &LinearGaussianObs,
        grid: Arc<TimeGrid>,
        e_prev: &[f64],
        y: &[f64],
    ) -> Result<ForwardGuide> {
        let mut g = ForwardGuide::new(model.dim(), model.noise_dim(), obs);
        let mut rk = Rk4Scratch::new(model.dim(), model.noise_dim());
        g.reset(model, self, grid, e_prev, y, &mut rk)?;
        Ok(g)
    }
}

/// `∇ log ρ̃` tabulated on a segment grid: at point `i` the gradient is
/// `Aᵢᵀ Sᵢ⁻¹ (cᵢ - Aᵢ x)` with `Aᵢ = H Φᵢ`, `cᵢ = y - H mᵢ`,
/// `Sᵢ = H Vᵢ Hᵀ + R`.
#[derive(Debug, Clone)]
pub struct ForwardGuide {
    d: usize,
    dw: usize,
    m: usize,
    grid: Option<Arc<TimeGrid>>,
    /// Proxy the cached table belongs to.
    proxy: Option<LinearSde>,
    quad_steps: usize,
    h: Vec<f64>,
    r: Vec<f64>,
    table: TransitionTable,
    a: Vec<f64>,
    c: Vec<f64>,
    schol: Vec<f64>,
    tmp: Vec<f64>,
}

impl ForwardGuide {
    pub(crate) fn new(d: usize, dw: usize, obs: &LinearGaussianObs) -> Self {
        let m = obs.h().nrows();
        let h: Vec<f64> = (0..m * d).map(|k| obs.h()[(k / d, k % d)]).collect();
        let r: Vec<f64> = (0..m * m).map(|k| obs.r()[(k / m, k % m)]).collect();
        ForwardGuide {
            d,
            dw,
            m,
            grid: None,
            proxy: None,
            quad_steps: 0,
            h,
            r,
            table: TransitionTable::empty(d),
            a: Vec::new(),
            c: Vec::new(),
            schol: Vec::new(),
            tmp: vec![0.0; d * d.max(m)],
        }
    }

    pub(crate) fn reset(
        &mut self,
        model: &dyn SdeModel,
        fp: &ForwardProposal,
        grid: Arc<TimeGrid>,
        e_prev: &[f64],
        y: &[f64],
        rk: &mut Rk4Scratch,
    ) -> Result<()> {
        let (d, m) = (self.d, self.m);
        let lin = fp.proxy.proxy_for(model, e_prev)?;
        let reuse = self.grid.as_ref().is_some_and(|g| Arc::ptr_eq(g, &grid))
            && self.proxy.as_ref().is_some_and(|p| p.same_coefficients(&lin))
            && self.quad_steps == fp.quad_steps;
        let grid = self.grid.insert(grid).clone();
        let points = grid.points();
        let n = points.len() - 1;
        if reuse {
            for i in 0..n {
                let off = self.table.offset(i);
                for r in 0..m {
                    self.c[i * m + r] = y[r] - linalg::dot(&self.h[r * d..(r + 1) * d], off);
                }
            }
            return Ok(());
        }
        self.proxy = None;
        linear_gauss::fill_transition_table(&lin, points, fp.quad_steps, &mut self.table, rk)?;
        self.a.resize(n * m * d, 0.0);
        self.c.resize(n * m, 0.0);
        self.schol.resize(n * m * m, 0.0);
        for i in 0..n {
            let phi = self.table.phi(i);
            let off = self.table.offset(i);
            let v = self.table.cov(i);
            let a = &mut self.a[i * m * d..(i + 1) * m * d];
            for r in 0..m {
                for c in 0..d {
                    a[r * d + c] = (0..d).map(|k| self.h[r * d + k] * phi[k * d + c]).sum();
                }
                self.c[i * m + r] = y[r] - linalg::dot(&self.h[r * d..(r + 1) * d], off);
            }
            // tmp = H V (m×d); S = tmp Hᵀ + R.
            for r in 0..m {
                for c in 0..d {
                    self.tmp[r * d + c] = (0..d).map(|k| self.h[r * d + k] * v[k * d + c]).sum();
                }
            }
            let s = &mut self.schol[i * m * m..(i + 1) * m * m];
            for r in 0..m {
                for c in 0..m {
                    s[r * m + c] =
                        self.r[r * m + c] + linalg::dot(&self.tmp[r * d..(r + 1) * d], &self.h[c * d..(c + 1) * d]);
                }
            }
            if !linalg::cholesky_in_place(s, m) {
                return Err(Error::numeric_at(
                    "predictive observation covariance is singular",
                    i,
                    points[i],
                    e_prev,
                ));
            }
        }
        self.proxy = Some(lin);
        self.quad_steps = fp.quad_steps;
        Ok(())
    }

    /// `∇ log ρ̃` at grid point `i` into `out` (length `d`); `resid` needs `m` entries.
    pub(crate) fn grad_into(&self, i: usize, x: &[f64], resid: &mut [f64], out: &mut [f64]) {
        let (d, m) = (self.d, self.m);
        let a = &self.a[i * m * d..(i + 1) * m * d];
        for r in 0..m {
            resid[r] = self.c[i * m + r] - linalg::dot(&a[r * d..(r + 1) * d], x);
        }
        linalg::cholesky_solve(&self.schol[i * m * m..(i + 1) * m * m], m, &mut resid[..m]);
        linalg::mat_t_vec(a, m, d, &resid[..m], out);
    }

    /// `log ρ̃` and its gradient at grid point `i`.
    pub fn log_rho_grad(&self, i: usize, x: &[f64]) -> (f64, Vec<f64>) {
        let (d, m) = (self.d, self.m);
        let a = &self.a[i * m * d..(i + 1) * m * d];
        let resid: Vec<f64> = (0..m)
            .map(|r| self.c[i * m + r] - linalg::dot(&a[r * d..(r + 1) * d], x))
            .collect();
        let chol = &self.schol[i * m * m..(i + 1) * m * m];
        let mut w = vec![0.0; m];
        let log = linalg::gaussian_logpdf_chol(chol, m, 1.0, &resid, &mut w);
        let mut rr = vec![0.0; m];
        let mut g = vec![0.0; d];
        self.grad_into(i, x, &mut rr, &mut g);
        (log, g)
    }

    /// Signal drift into `buf.b`, diffusion into `buf.sigma` and guided
    /// forward drift into `buf.a` at grid point `i`.
    pub(crate) fn drifts_at(&self, model: &dyn SdeModel, i: usize, x: &[f64], buf: &mut PathBuffers) -> Result<()> {
        let (d, dw) = (self.d, self.dw);
        let s = self.grid.as_ref().expect("guide is initialized").points()[i];
        model.drift(s, x, &mut buf.b);
        check_finite("drift", &buf.b, i, s, x)?;
        model.diffusion(s, x, &mut buf.sigma);
        check_finite("diffusion", &buf.sigma, i, s, x)?;
        let mut resid = std::mem::take(&mut buf.mat2);
        if resid.len() < self.m {
            resid.resize(self.m, 0.0);
        }
        self.grad_into(i, x, &mut resid, &mut buf.r);
        buf.mat2 = resid;
        linalg::mat_t_vec(&buf.sigma, d, dw, &buf.r, &mut buf.work2);
        for k in 0..d {
            buf.a[k] = buf.b[k] + (0..dw).map(|c| buf.sigma[k * dw + c] * buf.work2[c]).sum::<f64>();
        }
        check_finite("forward drift", &buf.a, i, s, x)
    }
}

/// Law of the end point proposal `m←(e | e_prev)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EndpointKind {
    /// Conjugate update of the linear proxy transition with the observation.
    #[default]
    ConjugateGaussian,
    /// A single Euler step of the signal over the whole segment, ignoring the data.
    BootstrapEuler,
}

#[derive(Debug, Clone, Default)]
pub struct EndpointProposal {
    pub kind: EndpointKind,
    pub proxy: ProxyKind,
    pub quad_steps: usize,
}

impl EndpointProposal {
    pub fn new(kind: EndpointKind, proxy: ProxyKind) -> Self {
        EndpointProposal {
            kind,
            proxy,
            quad_steps: DEFAULT_QUAD_STEPS,
        }
    }

    /// Gaussian law of the end point for a segment of length `delta`.
    pub fn law(
        &self,
        model: &dyn SdeModel,
        obs: &dyn ObsModel,
        e_prev: &[f64],
        y: &[f64],
        delta: f64,
    ) -> Result<EndpointLaw> {
        let mut law = EndpointLaw::new(model.dim());
        let mut scratch = EndpointScratch::new(model.dim(), model.noise_dim());
        self.fill_law(model, obs, e_prev, y, delta, &mut law, &mut scratch)?;
        Ok(law)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn fill_law(
        &self,
        model: &dyn SdeModel,
        obs: &dyn ObsModel,
        e_prev: &[f64],
        y: &[f64],
        delta: f64,
        law: &mut EndpointLaw,
        sc: &mut EndpointScratch,
    ) -> Result<()> {
        let d = model.dim();
        let dw = model.noise_dim();
        law.mean.resize(d, 0.0);
        law.chol.resize(d * d, 0.0);
        match self.kind {
            EndpointKind::BootstrapEuler => {
                let mut sigma = vec![0.0; d * dw];
                model.drift(0.0, e_prev, &mut law.mean);
                check_finite("drift", &law.mean, 0, 0.0, e_prev)?;
                for k in 0..d {
                    law.mean[k] = e_prev[k] + law.mean[k] * delta;
                }
                model.diffusion(0.0, e_prev, &mut sigma);
                linalg::outer_self(&sigma, d, dw, &mut law.chol);
                law.chol.iter_mut().for_each(|v| *v *= delta);
            }
            EndpointKind::ConjugateGaussian => {
                let lg = obs.linear_gaussian().ok_or_else(|| {
                    Error::invalid("the conjugate end-point proposal needs a linear-Gaussian observation")
                })?;
                let lin = self.proxy.proxy_for(model, e_prev)?;
                let steps = if self.quad_steps == 0 {
                    DEFAULT_QUAD_STEPS
                } else {
                    self.quad_steps
                };
                let cached = sc
                    .key
                    .as_ref()
                    .is_some_and(|(p, dl, st)| *dl == delta && *st == steps && p.same_coefficients(&lin));
                if !cached {
                    sc.key = None;
                    linear_gauss::solve_transition_flat(&lin, 0.0, delta, steps, &mut sc.st, &mut sc.rk)?;
                    let mut vchol = sc.st.v.clone();
                    if !linalg::cholesky_in_place(&mut vchol, d) {
                        return Err(Error::numeric_at(
                            "proxy transition covariance is degenerate; the proxy must be controllable",
                            0,
                            0.0,
                            e_prev,
                        ));
                    }
                    sc.key = Some((lin, delta, steps));
                }
                for k in 0..d {
                    law.mean[k] = linalg::dot(&sc.st.phi[k * d..(k + 1) * d], e_prev) + sc.st.m[k];
                }
                conjugate_update(&mut law.mean, &sc.st.v, lg, y, &mut law.chol)?;
            }
        }
        if !linalg::cholesky_in_place(&mut law.chol, d) {
            return Err(Error::numeric_at(
                "end-point proposal covariance is not positive definite",
                0,
                delta,
                e_prev,
            ));
        }
        if law.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric_at(
                "non-finite end-point proposal mean",
                0,
                delta,
                e_prev,
            ));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        model: &dyn SdeModel,
        obs: &dyn ObsModel,
        e_prev: &[f64],
        y: &[f64],
        delta: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let law = self.law(model, obs, e_prev, y, delta)?;
        let mut out = vec![0.0; model.dim()];
        law.sample_into(rng, &mut out);
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn log_pdf(
        &self,
        model: &dyn SdeModel,
        obs: &dyn ObsModel,
        e_prev: &[f64],
        y: &[f64],
        delta: f64,
        e: &[f64],
    ) -> Result<f64> {
        Ok(self.law(model, obs, e_prev, y, delta)?.log_pdf(e))
    }
}

/// Kalman-form conjugate update: `mean` becomes the posterior mean and
/// `cov_out` the Joseph-form posterior covariance.
fn conjugate_update(
    mean: &mut [f64],
    v: &[f64],
    obs: &LinearGaussianObs,
    y: &[f64],
    cov_out: &mut [f64],
) -> Result<()> {
    let d = mean.len();
    let h = obs.h();
    let r = obs.r();
    let m = h.nrows();
    // hv = H V (m×d), s = H V Hᵀ + R.
    let mut hv = vec![0.0; m * d];
    for i in 0..m {
        for j in 0..d {
            hv[i * d + j] = (0..d).map(|k| h[(i, k)] * v[k * d + j]).sum();
        }
    }
    let mut s = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            s[i * m + j] = r[(i, j)] + (0..d).map(|k| hv[i * d + k] * h[(j, k)]).sum::<f64>();
        }
    }
    if !linalg::cholesky_in_place(&mut s, m) {
        return Err(Error::numeric("innovation covariance is singular"));
    }
    // gain K = V Hᵀ S⁻¹ (d×m), column by column of Kᵀ = S⁻¹ H V.
    let mut gain = vec![0.0; d * m];
    let mut col = vec![0.0; m];
    for j in 0..d {
        for i in 0..m {
            col[i] = hv[i * d + j];
        }
        linalg::cholesky_solve(&s, m, &mut col);
        for i in 0..m {
            gain[j * m + i] = col[i];
        }
    }
    let innov: Vec<f64> = (0..m)
        .map(|i| y[i] - (0..d).map(|k| h[(i, k)] * mean[k]).sum::<f64>())
        .collect();
    for j in 0..d {
        mean[j] += linalg::dot(&gain[j * m..(j + 1) * m], &innov);
    }
    // Joseph form: (I - KH) V (I - KH)ᵀ + K R Kᵀ.
    let mut ikh = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let kh: f64 = (0..m).map(|k| gain[i * m + k] * h[(k, j)]).sum();
            ikh[i * d + j] = if i == j { 1.0 } else { 0.0 } - kh;
        }
    }
    let mut tmp = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            tmp[i * d + j] = (0..d).map(|k| ikh[i * d + k] * v[k * d + j]).sum();
        }
    }
    for i in 0..d {
        for j in 0..d {
            let a: f64 = (0..d).map(|k| tmp[i * d + k] * ikh[j * d + k]).sum();
            let mut b = 0.0;
            for p in 0..m {
                for q in 0..m {
                    b += gain[i * m + p] * r[(p, q)] * gain[j * m + q];
                }
            }
            cov_out[i * d + j] = a + b;
        }
    }
    for i in 0..d {
        for j in 0..i {
            let a = 0.5 * (cov_out[i * d + j] + cov_out[j * d + i]);
            cov_out[i * d + j] = a;
            cov_out[j * d + i] = a;
        }
    }
    Ok(())
}

/// `N(mean, L Lᵀ)` with `L = chol`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointLaw {
    pub mean: Vec<f64>,
    pub chol: Vec<f64>,
}

impl EndpointLaw {
    pub(crate) fn new(d: usize) -> Self {
        EndpointLaw {
            mean: vec![0.0; d],
            chol: vec![0.0; d * d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        let mut z = [0.0f64; 16];
        let mut zv;
        let z: &mut [f64] = if d <= 16 {
            &mut z[..d]
        } else {
            zv = vec![0.0; d];
            &mut zv
        };
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..d {
            out[i] = self.mean[i] + (0..=i).map(|k| self.chol[i * d + k] * z[k]).sum::<f64>();
        }
    }

    pub fn log_pdf(&self, e: &[f64]) -> f64 {
        let d = self.dim();
        let r: Vec<f64> = e.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut w = vec![0.0; d];
        linalg::gaussian_logpdf_chol(&self.chol, d, 1.0, &r, &mut w)
    }

    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        linalg::outer_self(&self.chol, d, d, &mut out);
        out
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EndpointScratch {
    st: FlatTransition,
    rk: Rk4Scratch,
    key: Option<(LinearSde, f64, usize)>,
}

impl EndpointScratch {
    pub fn new(d: usize, dw: usize) -> Self {
        EndpointScratch {
            st: FlatTransition::identity(d),
            rk: Rk4Scratch::new(d, dw),
            key: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{make_grid, Ellipticity, FnSde};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn bm1() -> FnSde {
        FnSde::new(1, 1, Ellipticity::Elliptic, |_, _, o| o[0] = 0.0, |_, _, o| o[0] = 1.0)
    }

    #[test]
    fn scalar_brownian_forward_drift() {
        let r = 0.3;
        let obs = LinearGaussianObs::observe_coordinate(1, 0, r).unwrap();
        let fp = ForwardProposal::new(ProxyKind::Linearized);
        let (s, x, y, delta) = (0.2, 0.4, 1.5, 1.0);
        let got = fp.drift(&bm1(), &obs, s, &[x], &[y], &[0.0], delta).unwrap();
        assert_relative_eq!(got[0], (y - x) / (delta - s + r), epsilon = 1e-10);

        let grid = Arc::new(make_grid(delta, 5, 0.0).unwrap());
        let guide = fp.guide(&bm1(), &obs, grid, &[0.0], &[y]).unwrap();
        let (log, g) = guide.log_rho_grad(1, &[x]);
        assert_relative_eq!(g[0], (y - x) / (delta - s + r), epsilon = 1e-10);
        assert_relative_eq!(log, linalg::normal_logpdf(y, x, delta - s + r), epsilon = 1e-10);
    }

    #[test]
    fn uninformative_observation_leaves_drift_alone() {
        let model = FnSde::new(
            1,
            1,
            Ellipticity::Elliptic,
            |_, x, o| o[0] = -x[0] * x[0],
            |_, _, o| o[0] = 0.7,
        );
        let obs = LinearGaussianObs::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let fp = ForwardProposal::new(ProxyKind::Linearized);
        let got = fp.drift(&model, &obs, 0.1, &[0.8], &[3.0], &[0.5], 0.5).unwrap();
        assert_eq!(got[0], -(0.8f64 * 0.8));
    }

    #[test]
    fn conjugate_endpoint_scalar_example() {
        // Unit-variance transition at Δ = 1 from 0.
        let obs = LinearGaussianObs::observe_coordinate(1, 0, 1.0).unwrap();
        let ep = EndpointProposal::new(EndpointKind::ConjugateGaussian, ProxyKind::Linearized);
        let law = ep.law(&bm1(), &obs, &[0.0], &[2.0], 1.0).unwrap();
        assert_relative_eq!(law.mean[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(law.covariance()[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            law.log_pdf(&[0.3]),
            linalg::normal_logpdf(0.3, 1.0, 0.5),
            epsilon = 1e-12
        );
    }

    #[test]
    fn bootstrap_endpoint_single_step() {
        let obs = LinearGaussianObs::observe_coordinate(1, 0, 1.0).unwrap();
        let ep = EndpointProposal::new(EndpointKind::BootstrapEuler, ProxyKind::Linearized);
        let lp = ep.log_pdf(&bm1(), &obs, &[0.4], &[9.0], 0.8, &[1.1]).unwrap();
        assert_relative_eq!(lp, linalg::normal_logpdf(1.1, 0.4, 0.8), epsilon = 1e-12);
    }
}
