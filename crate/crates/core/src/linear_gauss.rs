//! Linear SDEs with Gaussian transitions: the proxy engine for guided
//! proposals and the exact Kalman oracle.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, LOG_2PI};
use crate::sde::{Ellipticity, LinearGaussianObs, SdeModel};

/// RK4 steps per segment used when a caller does not choose.
pub const DEFAULT_QUAD_STEPS: usize = 100;

type CoefFn = dyn Fn(f64, &mut [f64]) + Send + Sync;

#[derive(Clone)]
enum Coeffs {
    Constant {
        b0: Vec<f64>,
        b1: Vec<f64>,
        sigma: Vec<f64>,
    },
    Varying {
        b0: Arc<CoefFn>,
        b1: Arc<CoefFn>,
        sigma: Arc<CoefFn>,
        offset: f64,
    },
}

/// `dX = (b₀(s) + b₁(s) X) ds + σ(s) dB`.
#[derive(Clone)]
pub struct LinearSde {
    dim: usize,
    noise_dim: usize,
    ellipticity: Ellipticity,
    coeffs: Coeffs,
}

impl fmt::Debug for LinearSde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("LinearSde");
        s.field("dim", &self.dim).field("noise_dim", &self.noise_dim);
        if let Coeffs::Constant { b0, b1, sigma } = &self.coeffs {
            s.field("b0", b0).field("b1", b1).field("sigma", sigma);
        } else {
            s.field("coefficients", &"time-varying");
        }
        s.finish()
    }
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn from_row_major(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v)
}

fn classify(d: usize, dw: usize, sigma: &[f64]) -> Ellipticity {
    if dw < d {
        return Ellipticity::HypoElliptic;
    }
    let mut cov = vec![0.0; d * d];
    linalg::outer_self(sigma, d, dw, &mut cov);
    if linalg::cholesky_in_place(&mut cov, d) {
        Ellipticity::Elliptic
    } else {
        Ellipticity::HypoElliptic
    }
}

impl LinearSde {
    pub fn constant(b0: &DVector<f64>, b1: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        let d = b0.len();
        if b1.nrows() != d || b1.ncols() != d || sigma.nrows() != d || sigma.ncols() > d || sigma.ncols() == 0 {
            return Err(Error::invalid("inconsistent linear SDE coefficient shapes"));
        }
        Self::constant_flat(
            d,
            sigma.ncols(),
            b0.as_slice().to_vec(),
            to_row_major(b1),
            to_row_major(sigma),
        )
    }

    pub(crate) fn constant_flat(d: usize, dw: usize, b0: Vec<f64>, b1: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if [&b0, &b1, &sigma].iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::numeric("non-finite linear SDE coefficients"));
        }
        Ok(LinearSde {
            dim: d,
            noise_dim: dw,
            ellipticity: classify(d, dw, &sigma),
            coeffs: Coeffs::Constant { b0, b1, sigma },
        })
    }

    /// Time-varying coefficients; each closure fills a row-major buffer.
    pub fn time_varying(
        dim: usize,
        noise_dim: usize,
        b0: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
        b1: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
        sigma: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        let mut s0 = vec![0.0; dim * noise_dim];
        sigma(0.0, &mut s0);
        LinearSde {
            dim,
            noise_dim,
            ellipticity: classify(dim, noise_dim, &s0),
            coeffs: Coeffs::Varying {
                b0: Arc::new(b0),
                b1: Arc::new(b1),
                sigma: Arc::new(sigma),
                offset: 0.0,
            },
        }
    }

    /// Whether both describe the same coefficients bit for bit (closures by identity).
    pub(crate) fn same_coefficients(&self, other: &LinearSde) -> bool {
        if self.dim != other.dim || self.noise_dim != other.noise_dim {
            return false;
        }
        match (&self.coeffs, &other.coeffs) {
            (
                Coeffs::Constant { b0, b1, sigma },
                Coeffs::Constant {
                    b0: c0,
                    b1: c1,
                    sigma: cs,
                },
            ) => b0 == c0 && b1 == c1 && sigma == cs,
            (
                Coeffs::Varying { b0, b1, sigma, offset },
                Coeffs::Varying {
                    b0: c0,
                    b1: c1,
                    sigma: cs,
                    offset: o,
                },
            ) => Arc::ptr_eq(b0, c0) && Arc::ptr_eq(b1, c1) && Arc::ptr_eq(sigma, cs) && offset == o,
            _ => false,
        }
    }

    /// The same SDE with its clock advanced by `offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        let mut out = self.clone();
        if let Coeffs::Varying { offset: o, .. } = &mut out.coeffs {
            *o += offset;
        }
        out
    }

    /// Replaces the diffusion coefficient with a constant one.
    pub fn with_constant_sigma(&self, sigma: &DMatrix<f64>) -> Result<Self> {
        match &self.coeffs {
            Coeffs::Constant { b0, b1, .. } => {
                Self::constant_flat(self.dim, sigma.ncols(), b0.clone(), b1.clone(), to_row_major(sigma))
            }
            Coeffs::Varying { .. } => Err(Error::invalid("diffusion replacement needs constant coefficients")),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.coeffs, Coeffs::Constant { .. })
    }

    pub(crate) fn eval(&self, s: f64, c: &mut Coef) {
        let d = self.dim;
        match &self.coeffs {
            Coeffs::Constant { b0, b1, sigma } => {
                c.b0.copy_from_slice(b0);
                c.b1.copy_from_slice(b1);
                c.sigma.copy_from_slice(sigma);
            }
            Coeffs::Varying { b0, b1, sigma, offset } => {
                b0(offset + s, &mut c.b0);
                b1(offset + s, &mut c.b1);
                sigma(offset + s, &mut c.sigma);
            }
        }
        linalg::outer_self(&c.sigma, d, self.noise_dim, &mut c.cov);
    }

    pub fn b0_at(&self, s: f64) -> DVector<f64> {
        let mut c = Coef::new(self.dim, self.noise_dim);
        self.eval(s, &mut c);
        DVector::from_vec(c.b0)
    }

    pub fn b1_at(&self, s: f64) -> DMatrix<f64> {
        let mut c = Coef::new(self.dim, self.noise_dim);
        self.eval(s, &mut c);
        from_row_major(self.dim, self.dim, &c.b1)
    }

    pub fn sigma_at(&self, s: f64) -> DMatrix<f64> {
        let mut c = Coef::new(self.dim, self.noise_dim);
        self.eval(s, &mut c);
        from_row_major(self.dim, self.noise_dim, &c.sigma)
    }
}

impl SdeModel for LinearSde {
    fn dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn ellipticity(&self) -> Ellipticity {
        self.ellipticity
    }
    fn drift(&self, s: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.coeffs {
            Coeffs::Constant { b0, b1, .. } => {
                for i in 0..d {
                    out[i] = b0[i] + linalg::dot(&b1[i * d..(i + 1) * d], x);
                }
            }
            Coeffs::Varying { b0, b1, offset, .. } => {
                let mut m = vec![0.0; d * d];
                b0(offset + s, out);
                b1(offset + s, &mut m);
                for i in 0..d {
                    out[i] += linalg::dot(&m[i * d..(i + 1) * d], x);
                }
            }
        }
    }
    fn diffusion(&self, s: f64, _x: &[f64], out: &mut [f64]) {
        match &self.coeffs {
            Coeffs::Constant { sigma, .. } => out.copy_from_slice(sigma),
            Coeffs::Varying { sigma, offset, .. } => sigma(offset + s, out),
        }
    }
    fn drift_jacobian(&self, s: f64, _x: &[f64], out: &mut [f64]) -> bool {
        match &self.coeffs {
            Coeffs::Constant { b1, .. } => out.copy_from_slice(b1),
            Coeffs::Varying { b1, offset, .. } => b1(offset + s, out),
        }
        true
    }
}

/// Coefficients of a linear SDE evaluated at one time, row-major.
#[derive(Debug, Clone)]
pub(crate) struct Coef {
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
    pub sigma: Vec<f64>,
    pub cov: Vec<f64>,
}

impl Coef {
    pub fn new(d: usize, dw: usize) -> Self {
        Coef {
            b0: vec![0.0; d],
            b1: vec![0.0; d * d],
            sigma: vec![0.0; d * dw],
            cov: vec![0.0; d * d],
        }
    }
}

/// `Φ(Δ, r)`, `m(r)`, `V(r)` for a single time `r`, flat and row-major.
#[derive(Debug, Clone)]
pub(crate) struct FlatTransition {
    pub phi: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlatTransition {
    pub fn identity(d: usize) -> Self {
        let mut phi = vec![0.0; d * d];
        for i in 0..d {
            phi[i * d + i] = 1.0;
        }
        FlatTransition {
            phi,
            m: vec![0.0; d],
            v: vec![0.0; d * d],
        }
    }
}

/// Reusable buffers for the backward RK4 recursions.
#[derive(Debug, Clone)]
pub(crate) struct Rk4Scratch {
    d: usize,
    c0: Coef,
    cm: Coef,
    c1: Coef,
    k: [FlatTransition; 4],
    stage: Vec<f64>,
    tmp: Vec<f64>,
    unit: FlatTransition,
    unit_h: f64,
}

impl Rk4Scratch {
    pub fn new(d: usize, dw: usize) -> Self {
        let z = FlatTransition::identity(d);
        Rk4Scratch {
            d,
            c0: Coef::new(d, dw),
            cm: Coef::new(d, dw),
            c1: Coef::new(d, dw),
            k: [z.clone(), z.clone(), z.clone(), z.clone()],
            stage: vec![0.0; d * d],
            tmp: vec![0.0; d * d],
            unit: z,
            unit_h: f64::NAN,
        }
    }

    /// Forgets the cached single-step triple; needed before reuse with another SDE.
    pub fn invalidate(&mut self) {
        self.unit_h = f64::NAN;
    }

    pub fn fits(&self, d: usize, dw: usize) -> bool {
        self.d == d && self.c0.sigma.len() == d * dw
    }
}

/// `out = A B` for `d×d` row-major matrices.
fn matmul(a: &[f64], b: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| a[i * d + k] * b[k * d + j]).sum();
        }
    }
}

/// `out += A B Aᵀ` for `d×d` row-major matrices.
fn add_sandwich(a: &[f64], b: &[f64], d: usize, tmp: &mut [f64], out: &mut [f64]) {
    matmul(a, b, d, tmp);
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] += (0..d).map(|k| tmp[i * d + k] * a[j * d + k]).sum::<f64>();
        }
    }
}

/// Derivative with respect to `r` of `(Φ(Δ,r), m(r), V(r))`.
fn derivative(phi: &[f64], c: &Coef, d: usize, tmp: &mut [f64], out: &mut FlatTransition) {
    matmul(phi, &c.b1, d, &mut out.phi);
    out.phi.iter_mut().for_each(|v| *v = -*v);
    for i in 0..d {
        out.m[i] = -linalg::dot(&phi[i * d..(i + 1) * d], &c.b0);
    }
    out.v.iter_mut().for_each(|v| *v = 0.0);
    add_sandwich(phi, &c.cov, d, tmp, &mut out.v);
    out.v.iter_mut().for_each(|v| *v = -*v);
}

/// One RK4 step of length `h` from `r` to `r - h`, in place.
fn rk4_step(st: &mut FlatTransition, h: f64, s: &mut Rk4Scratch) {
    let d = s.d;
    let Rk4Scratch {
        c0,
        cm,
        c1,
        k,
        stage,
        tmp,
        ..
    } = s;
    let [k1, k2, k3, k4] = k;
    derivative(&st.phi, c0, d, tmp, k1);
    for (o, (p, q)) in stage.iter_mut().zip(st.phi.iter().zip(&k1.phi)) {
        *o = p - 0.5 * h * q;
    }
    derivative(stage, cm, d, tmp, k2);
    for (o, (p, q)) in stage.iter_mut().zip(st.phi.iter().zip(&k2.phi)) {
        *o = p - 0.5 * h * q;
    }
    derivative(stage, cm, d, tmp, k3);
    for (o, (p, q)) in stage.iter_mut().zip(st.phi.iter().zip(&k3.phi)) {
        *o = p - h * q;
    }
    derivative(stage, c1, d, tmp, k4);
    let w = h / 6.0;
    for i in 0..d * d {
        st.phi[i] -= w * (k1.phi[i] + 2.0 * k2.phi[i] + 2.0 * k3.phi[i] + k4.phi[i]);
        st.v[i] -= w * (k1.v[i] + 2.0 * k2.v[i] + 2.0 * k3.v[i] + k4.v[i]);
    }
    for i in 0..d {
        st.m[i] -= w * (k1.m[i] + 2.0 * k2.m[i] + 2.0 * k3.m[i] + k4.m[i]);
    }
}

/// Moves `st` from time `r_hi` back to `r_lo` with `steps` RK4 steps.
///
/// Constant coefficients use the composition
/// `Φ ← Φ P`, `m ← m + Φ q`, `V ← V + Φ Q Φᵀ` of a single-step triple, which is
/// algebraically the same RK4 recursion.
pub(crate) fn propagate_back(
    lin: &LinearSde,
    r_hi: f64,
    r_lo: f64,
    steps: usize,
    st: &mut FlatTransition,
    s: &mut Rk4Scratch,
) {
    let d = lin.dim;
    let h = (r_hi - r_lo) / steps as f64;
    if lin.is_constant() {
        if s.unit_h != h {
            lin.eval(0.0, &mut s.c0);
            s.cm.clone_from(&s.c0);
            s.c1.clone_from(&s.c0);
            let mut unit = FlatTransition::identity(d);
            rk4_step(&mut unit, h, s);
            s.unit = unit;
            s.unit_h = h;
        }
        for _ in 0..steps {
            add_sandwich(&st.phi, &s.unit.v, d, &mut s.tmp, &mut st.v);
            for i in 0..d {
                st.m[i] += linalg::dot(&st.phi[i * d..(i + 1) * d], &s.unit.m);
            }
            matmul(&st.phi, &s.unit.phi, d, &mut s.tmp);
            st.phi.copy_from_slice(&s.tmp);
        }
    } else {
        for k in 0..steps {
            let r = r_hi - k as f64 * h;
            lin.eval(r, &mut s.c0);
            lin.eval(r - 0.5 * h, &mut s.cm);
            lin.eval(r - h, &mut s.c1);
            rk4_step(st, h, s);
        }
    }
}

fn symmetrize(v: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..i {
            let a = 0.5 * (v[i * d + j] + v[j * d + i]);
            v[i * d + j] = a;
            v[j * d + i] = a;
        }
    }
}

/// Gaussian transition `X(Δ) | X(s) = x ~ N(Φ x + m, V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussTransition {
    pub phi: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// A Gaussian law.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussTransition {
    fn from_flat(d: usize, f: &FlatTransition) -> Self {
        GaussTransition {
            phi: from_row_major(d, d, &f.phi),
            offset: DVector::from_column_slice(&f.m),
            cov: from_row_major(d, d, &f.v),
        }
    }

    pub fn mean(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.phi * x + &self.offset
    }

    /// Fails unless the smallest eigenvalue of `V` exceeds `1e-12 · trace(V)`.
    pub fn check_positive_definite(&self) -> Result<()> {
        let eig = self.cov.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        let tr = self.cov.trace();
        if !(tr > 0.0) || !(min > 1e-12 * tr) {
            return Err(Error::numeric(format!(
                "proxy transition covariance is degenerate (min eigenvalue {min:e}, trace {tr:e})"
            )));
        }
        Ok(())
    }

    /// `log N(x_end; Φ x_start + m, V)`.
    pub fn log_density(&self, x_end: &DVector<f64>, x_start: &DVector<f64>) -> Result<f64> {
        let chol = self
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numeric("transition covariance is not positive definite"))?;
        let r = x_end - self.mean(x_start);
        Ok(gauss_logpdf(&chol, &r))
    }

    /// `log N(y; H μ(x), H V Hᵀ + R)` and its gradient in `x`.
    pub fn predictive_log_grad(
        &self,
        obs: &LinearGaussianObs,
        y: &[f64],
        x: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>)> {
        let h = obs.h();
        let s = h * &self.cov * h.transpose() + obs.r();
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numeric("predictive observation covariance is singular"))?;
        let resid = DVector::from_column_slice(y) - h * self.mean(x);
        let log = gauss_logpdf(&chol, &resid);
        let grad = self.phi.transpose() * h.transpose() * chol.solve(&resid);
        Ok((log, grad))
    }

    /// Conjugate update of `N(μ(x), V)` with the observation `y`.
    pub fn posterior(&self, obs: &LinearGaussianObs, y: &[f64], x: &DVector<f64>) -> Result<Gaussian> {
        self.check_positive_definite()?;
        kalman_update(&self.mean(x), &self.cov, obs, &DVector::from_column_slice(y)).map(|(g, _, _)| g)
    }
}

pub(crate) fn gauss_logpdf(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, r: &DVector<f64>) -> f64 {
    let l = chol.l_dirty();
    let z = l
        .solve_lower_triangular(r)
        .expect("Cholesky factor has a positive diagonal");
    let logdet: f64 = (0..r.len()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * (z.norm_squared() + logdet + r.len() as f64 * LOG_2PI)
}

/// Kalman update in Joseph form. Returns the posterior, the innovation
/// log-density and the gain.
fn kalman_update(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    obs: &LinearGaussianObs,
    y: &DVector<f64>,
) -> Result<(Gaussian, f64, DMatrix<f64>)> {
    let h = obs.h();
    let s = h * cov * h.transpose() + obs.r();
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numeric("innovation covariance is singular"))?;
    let resid = y - h * mean;
    let loglik = gauss_logpdf(&chol, &resid);
    let gain = chol.solve(&(h * cov)).transpose();
    let post_mean = mean + &gain * resid;
    let i_kh = DMatrix::identity(mean.len(), mean.len()) - &gain * h;
    let mut post_cov = &i_kh * cov * i_kh.transpose() + &gain * obs.r() * gain.transpose();
    post_cov = 0.5 * (&post_cov + post_cov.transpose());
    Ok((
        Gaussian {
            mean: post_mean,
            cov: post_cov,
        },
        loglik,
        gain,
    ))
}

/// Flat transition from `s` to `delta` into `st`.
pub(crate) fn solve_transition_flat(
    lin: &LinearSde,
    s: f64,
    delta: f64,
    quad_steps: usize,
    st: &mut FlatTransition,
    scratch: &mut Rk4Scratch,
) -> Result<()> {
    let d = lin.dim;
    if !scratch.fits(d, lin.noise_dim) {
        *scratch = Rk4Scratch::new(d, lin.noise_dim);
    }
    scratch.invalidate();
    *st = FlatTransition::identity(d);
    propagate_back(lin, delta, s, quad_steps, st, scratch);
    symmetrize(&mut st.v, d);
    if st.phi.iter().chain(&st.m).chain(&st.v).any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite linear SDE transition"));
    }
    Ok(())
}

/// Transition of `lin` from time `s` to `delta` by `quad_steps` RK4 steps.
pub fn solve_transition(lin: &LinearSde, s: f64, delta: f64, quad_steps: usize) -> Result<GaussTransition> {
    if !(s >= 0.0 && s < delta) {
        return Err(Error::invalid(format!("need 0 <= s < Δ, got s = {s}, Δ = {delta}")));
    }
    if quad_steps == 0 {
        return Err(Error::invalid("quad_steps must be positive"));
    }
    let d = lin.dim;
    let mut st = FlatTransition::identity(d);
    let mut scratch = Rk4Scratch::new(d, lin.noise_dim);
    propagate_back(lin, delta, s, quad_steps, &mut st, &mut scratch);
    symmetrize(&mut st.v, d);
    if st.phi.iter().chain(&st.m).chain(&st.v).any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite linear SDE transition"));
    }
    Ok(GaussTransition::from_flat(d, &st))
}

/// `Φ(Δ, t_i)`, `m(t_i)`, `V(t_i)` at every point of a grid ending at `Δ`.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    d: usize,
    phi: Vec<f64>,
    offset: Vec<f64>,
    cov: Vec<f64>,
}

impl TransitionTable {
    pub(crate) fn empty(d: usize) -> Self {
        TransitionTable {
            d,
            phi: Vec::new(),
            offset: Vec::new(),
            cov: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.offset.len() / self.d.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }

    pub fn phi(&self, i: usize) -> &[f64] {
        &self.phi[i * self.d * self.d..(i + 1) * self.d * self.d]
    }

    pub fn offset(&self, i: usize) -> &[f64] {
        &self.offset[i * self.d..(i + 1) * self.d]
    }

    pub fn cov(&self, i: usize) -> &[f64] {
        &self.cov[i * self.d * self.d..(i + 1) * self.d * self.d]
    }

    pub fn transition(&self, i: usize) -> GaussTransition {
        let d = self.d;
        GaussTransition {
            phi: from_row_major(d, d, self.phi(i)),
            offset: DVector::from_column_slice(self.offset(i)),
            cov: from_row_major(d, d, self.cov(i)),
        }
    }
}

/// Fills `table` for the grid `points`; each interval gets
/// `max(1, ceil(quad_steps · δ_i / Δ))` RK4 steps.
pub(crate) fn fill_transition_table(
    lin: &LinearSde,
    points: &[f64],
    quad_steps: usize,
    table: &mut TransitionTable,
    scratch: &mut Rk4Scratch,
) -> Result<()> {
    let d = lin.dim;
    if !scratch.fits(d, lin.noise_dim) {
        *scratch = Rk4Scratch::new(d, lin.noise_dim);
    }
    // A single-step triple is only reusable for the SDE that produced it.
    scratch.invalidate();
    let n = points.len();
    let delta = points[n - 1];
    table.d = d;
    table.phi.resize(n * d * d, 0.0);
    table.offset.resize(n * d, 0.0);
    table.cov.resize(n * d * d, 0.0);
    let mut st = FlatTransition::identity(d);
    let last = n - 1;
    table.phi[last * d * d..].copy_from_slice(&st.phi);
    table.offset[last * d..].copy_from_slice(&st.m);
    table.cov[last * d * d..].copy_from_slice(&st.v);
    for i in (0..last).rev() {
        let h = points[i + 1] - points[i];
        let steps = ((quad_steps as f64 * h / delta).ceil() as usize).max(1);
        propagate_back(lin, points[i + 1], points[i], steps, &mut st, scratch);
        symmetrize(&mut st.v, d);
        table.phi[i * d * d..(i + 1) * d * d].copy_from_slice(&st.phi);
        table.offset[i * d..(i + 1) * d].copy_from_slice(&st.m);
        table.cov[i * d * d..(i + 1) * d * d].copy_from_slice(&st.v);
    }
    if table
        .phi
        .iter()
        .chain(&table.offset)
        .chain(&table.cov)
        .any(|v| !v.is_finite())
    {
        return Err(Error::numeric("non-finite linear SDE transition"));
    }
    Ok(())
}

/// Transition table of `lin` on `points`.
pub fn transition_table(lin: &LinearSde, points: &[f64], quad_steps: usize) -> Result<TransitionTable> {
    let mut table = TransitionTable::empty(lin.dim);
    let mut scratch = Rk4Scratch::new(lin.dim, lin.noise_dim);
    fill_transition_table(lin, points, quad_steps, &mut table, &mut scratch)?;
    Ok(table)
}

/// Central finite-difference Jacobian with step `1e-6 · (1 + |x_k|)`.
pub(crate) fn jacobian(model: &dyn SdeModel, s: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
    if model.drift_jacobian(s, x, out) {
        return if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::numeric_at("non-finite drift Jacobian", 0, s, x))
        };
    }
    let d = model.dim();
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for k in 0..d {
        let h = 1e-6 * (1.0 + x[k].abs());
        xp[k] = x[k] + h;
        model.drift(s, &xp, &mut fp);
        xp[k] = x[k] - h;
        model.drift(s, &xp, &mut fm);
        xp[k] = x[k];
        for i in 0..d {
            out[i * d + k] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric_at("non-finite drift Jacobian", 0, s, x))
    }
}

/// First-order expansion of the drift at `(s, x)` with diffusion frozen at `sigma_at`.
pub(crate) fn linearize_flat(model: &dyn SdeModel, s: f64, x: &[f64], sigma: Vec<f64>) -> Result<LinearSde> {
    let d = model.dim();
    let mut b1 = vec![0.0; d * d];
    jacobian(model, s, x, &mut b1)?;
    let mut b0 = vec![0.0; d];
    model.drift(s, x, &mut b0);
    for i in 0..d {
        b0[i] -= linalg::dot(&b1[i * d..(i + 1) * d], x);
    }
    if b0.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric_at("non-finite drift", 0, s, x));
    }
    LinearSde::constant_flat(d, model.noise_dim(), b0, b1, sigma)
}

/// Constant-coefficient linearization of `model` at `(0, e_prev)`:
/// `b̃₁ = ∂b/∂x`, `b̃₀ = b - b̃₁ e_prev`, `σ̃ = σ(0, e_prev)`.
pub fn linearize_at(model: &dyn SdeModel, e_prev: &[f64]) -> Result<LinearSde> {
    let mut sigma = vec![0.0; model.dim() * model.noise_dim()];
    model.diffusion(0.0, e_prev, &mut sigma);
    linearize_flat(model, 0.0, e_prev, sigma)
}

/// Log of the Gaussian proxy `ρ̃(s, x) = N(y; H μ(x), H V Hᵀ + R)` for the
/// transition of `lin` from `s` to `delta`, and its gradient in `x`.
pub fn rho_tilde_log_grad(
    lin: &LinearSde,
    obs: &LinearGaussianObs,
    y: &[f64],
    s: f64,
    x: &[f64],
    delta: f64,
) -> Result<(f64, DVector<f64>)> {
    let tr = solve_transition(lin, s, delta, DEFAULT_QUAD_STEPS)?;
    tr.predictive_log_grad(obs, y, &DVector::from_column_slice(x))
}

/// Conjugate posterior of the endpoint `X(Δ)` given `X(0) = e_prev` and `y`.
pub fn endpoint_posterior(
    lin: &LinearSde,
    obs: &LinearGaussianObs,
    y: &[f64],
    e_prev: &[f64],
    delta: f64,
) -> Result<Gaussian> {
    let tr = solve_transition(lin, 0.0, delta, DEFAULT_QUAD_STEPS)?;
    tr.posterior(obs, y, &DVector::from_column_slice(e_prev))
}

/// Output of the continuous-discrete Kalman filter and RTS smoother.
#[derive(Debug, Clone)]
pub struct KalmanOutput {
    pub predicted: Vec<Gaussian>,
    pub filtered: Vec<Gaussian>,
    pub smoothed: Vec<Gaussian>,
    pub log_likelihood: f64,
}

/// Exact filter, smoother and log-likelihood for `lin` observed through
/// `obs` at `times[1..]`, starting from `N(prior)` at `times[0]`.
pub fn kalman_cd(
    lin: &LinearSde,
    obs: &LinearGaussianObs,
    prior: &Gaussian,
    times: &[f64],
    data: &[Vec<f64>],
    quad_steps: usize,
) -> Result<KalmanOutput> {
    if times.len() != data.len() + 1 {
        return Err(Error::invalid("need one more time than observations"));
    }
    let mut mean = prior.mean.clone();
    let mut cov = prior.cov.clone();
    let mut predicted = Vec::with_capacity(data.len());
    let mut filtered = Vec::with_capacity(data.len());
    let mut transitions = Vec::with_capacity(data.len());
    let mut loglik = 0.0;
    for (t, y) in data.iter().enumerate() {
        let tr = solve_transition(&lin.shifted(times[t]), 0.0, times[t + 1] - times[t], quad_steps)?;
        let pm = &tr.phi * &mean + &tr.offset;
        let mut pc = &tr.phi * &cov * tr.phi.transpose() + &tr.cov;
        pc = 0.5 * (&pc + pc.transpose());
        let (post, ll, _) = kalman_update(&pm, &pc, obs, &DVector::from_column_slice(y))?;
        loglik += ll;
        predicted.push(Gaussian { mean: pm, cov: pc });
        mean = post.mean.clone();
        cov = post.cov.clone();
        filtered.push(post);
        transitions.push(tr);
    }
    let mut smoothed = filtered.clone();
    for t in (0..data.len().saturating_sub(1)).rev() {
        let next_pred = &predicted[t + 1];
        let pinv = psd_pseudo_inverse(&next_pred.cov);
        let gain = &filtered[t].cov * transitions[t + 1].phi.transpose() * pinv;
        let m = &filtered[t].mean + &gain * (&smoothed[t + 1].mean - &next_pred.mean);
        let mut c = &filtered[t].cov + &gain * (&smoothed[t + 1].cov - &next_pred.cov) * gain.transpose();
        c = 0.5 * (&c + c.transpose());
        smoothed[t] = Gaussian { mean: m, cov: c };
    }
    Ok(KalmanOutput {
        predicted,
        filtered,
        smoothed,
        log_likelihood: loglik,
    })
}

/// Pseudo-inverse of a symmetric PSD matrix, discarding eigenvalues below
/// `1e-12 · trace`.
fn psd_pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = 0.5 * (m + m.transpose());
    let tr = sym.trace();
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam > 1e-12 * tr {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::FnSde;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b0: f64, c: f64) -> LinearSde {
        LinearSde::constant(
            &DVector::from_element(1, b0),
            &DMatrix::from_element(1, 1, a),
            &DMatrix::from_element(1, 1, c),
        )
        .unwrap()
    }

    fn ibm() -> LinearSde {
        LinearSde::constant(
            &DVector::zeros(2),
            &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            &DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn brownian_transition() {
        let bm = LinearSde::constant(&DVector::zeros(2), &DMatrix::zeros(2, 2), &DMatrix::identity(2, 2)).unwrap();
        let tr = solve_transition(&bm, 0.3, 1.0, 50).unwrap();
        assert_relative_eq!(tr.phi, DMatrix::identity(2, 2), epsilon = 1e-14);
        assert_relative_eq!(tr.offset, DVector::zeros(2), epsilon = 1e-14);
        assert_relative_eq!(tr.cov, DMatrix::identity(2, 2) * 0.7, epsilon = 1e-14);
    }

    #[test]
    fn scalar_closed_form() {
        let (a, c, delta, s) = (-1.3, 0.7, 0.8, 0.1);
        let tr = solve_transition(&scalar(a, 0.0, c), s, delta, 200).unwrap();
        let tau = delta - s;
        assert_relative_eq!(tr.phi[(0, 0)], (a * tau).exp(), epsilon = 1e-8);
        assert_relative_eq!(
            tr.cov[(0, 0)],
            c * c * ((2.0 * a * tau).exp() - 1.0) / (2.0 * a),
            epsilon = 1e-8
        );
        let with_offset = solve_transition(&scalar(a, 0.4, c), s, delta, 200).unwrap();
        assert_relative_eq!(with_offset.offset[0], 0.4 * ((a * tau).exp() - 1.0) / a, epsilon = 1e-8);
    }

    #[test]
    fn integrated_brownian_covariance() {
        let delta = 0.7;
        let tr = solve_transition(&ibm(), 0.0, delta, 100).unwrap();
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[delta.powi(3) / 3.0, delta * delta / 2.0, delta * delta / 2.0, delta],
        );
        assert_relative_eq!(tr.cov, expected, epsilon = 1e-8);
        tr.check_positive_definite().unwrap();
    }

    #[test]
    fn varying_coefficients_match_constant_path() {
        let c = scalar(-0.9, 0.3, 0.5);
        let v = LinearSde::time_varying(1, 1, |_, o| o[0] = 0.3, |_, o| o[0] = -0.9, |_, o| o[0] = 0.5);
        let a = solve_transition(&c, 0.2, 1.1, 37).unwrap();
        let b = solve_transition(&v, 0.2, 1.1, 37).unwrap();
        assert_relative_eq!(a.phi, b.phi, epsilon = 1e-13);
        assert_relative_eq!(a.offset, b.offset, epsilon = 1e-13);
        assert_relative_eq!(a.cov, b.cov, epsilon = 1e-13);
    }

    #[test]
    fn table_matches_direct_solves() {
        let lin = ibm();
        let points = [0.0, 0.2, 0.45, 0.6, 1.0];
        let table = transition_table(&lin, &points, 200).unwrap();
        assert_eq!(table.len(), 5);
        for (i, &s) in points[..4].iter().enumerate() {
            let direct = solve_transition(&lin, s, 1.0, 400).unwrap();
            assert_relative_eq!(table.transition(i).cov, direct.cov, epsilon = 1e-10);
            assert_relative_eq!(table.transition(i).phi, direct.phi, epsilon = 1e-10);
        }
        assert_eq!(table.cov(4), &[0.0; 4]);
    }

    #[test]
    fn linearization_examples() {
        let cubic = FnSde::new(
            1,
            1,
            Ellipticity::Elliptic,
            |_, x, o| o[0] = -x[0].powi(3),
            |_, _, o| o[0] = 1.0,
        );
        let lin = linearize_at(&cubic, &[1.0]).unwrap();
        assert_relative_eq!(lin.b1_at(0.0)[(0, 0)], -3.0, epsilon = 1e-8);
        assert_relative_eq!(lin.b0_at(0.0)[0], 2.0, epsilon = 1e-8);

        let konst = FnSde::new(1, 1, Ellipticity::Elliptic, |_, _, o| o[0] = 0.25, |_, _, o| o[0] = 1.0);
        let lin = linearize_at(&konst, &[3.0]).unwrap();
        assert_relative_eq!(lin.b1_at(0.0)[(0, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(lin.b0_at(0.0)[0], 0.25, epsilon = 1e-10);
    }

    #[test]
    fn scalar_conjugate_posterior() {
        let tr = GaussTransition {
            phi: DMatrix::identity(1, 1),
            offset: DVector::zeros(1),
            cov: DMatrix::identity(1, 1),
        };
        let obs = LinearGaussianObs::observe_coordinate(1, 0, 1.0).unwrap();
        let post = tr.posterior(&obs, &[2.0], &DVector::zeros(1)).unwrap();
        assert_relative_eq!(post.mean[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(post.cov[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn kalman_single_step_example() {
        let bm = scalar(0.0, 0.0, 1.0);
        let obs = LinearGaussianObs::observe_coordinate(1, 0, 1.0).unwrap();
        let prior = Gaussian {
            mean: DVector::zeros(1),
            cov: DMatrix::identity(1, 1),
        };
        let out = kalman_cd(&bm, &obs, &prior, &[0.0, 1.0], &[vec![0.0]], 100).unwrap();
        assert_relative_eq!(out.predicted[0].cov[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(out.filtered[0].cov[(0, 0)], 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(out.filtered[0].mean[0], 0.0);
        assert_relative_eq!(
            out.log_likelihood,
            linalg::normal_logpdf(0.0, 0.0, 3.0),
            epsilon = 1e-12
        );
    }
}
