//! Time meshes, discretized paths, Euler–Maruyama simulation and the path
//! functionals shared by every other module.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

/// A strictly increasing mesh on `[0, Δ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a time grid needs at least two points"));
        }
        if points[0] != 0.0 {
            return Err(Error::invalid("a time grid must start at 0"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::invalid(
                "time grid points must be finite and strictly increasing",
            ));
        }
        Ok(TimeGrid { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Segment length Δ.
    pub fn delta(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn n_intervals(&self) -> usize {
        self.points.len() - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self, i: usize) -> f64 {
        self.points[i + 1] - self.points[i]
    }
}

/// Uniform mesh of `n_steps` intervals on `[0, delta]`.
///
/// With `endpoint_gap > 0` the first `n_steps - 1` intervals are spread over
/// `[0, delta·(1 - gap)]` and the final interval covers the remaining
/// `delta·gap`, so `delta·(1 - gap)` is the last interior point.
pub fn make_grid(delta: f64, n_steps: usize, endpoint_gap: f64) -> Result<TimeGrid> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("segment length must be positive, got {delta}")));
    }
    if n_steps == 0 {
        return Err(Error::invalid("n_steps must be at least 1"));
    }
    if !(0.0..1.0).contains(&endpoint_gap) {
        return Err(Error::invalid(format!(
            "endpoint_gap must lie in [0, 1), got {endpoint_gap}"
        )));
    }
    let mut points = Vec::with_capacity(n_steps + 1);
    if endpoint_gap == 0.0 {
        points.extend((0..n_steps).map(|i| delta * i as f64 / n_steps as f64));
    } else {
        if n_steps == 1 {
            return Err(Error::invalid("an endpoint gap needs at least two steps"));
        }
        let interior = delta * (1.0 - endpoint_gap);
        points.extend((0..n_steps).map(|i| interior * i as f64 / (n_steps - 1) as f64));
    }
    points.push(delta);
    TimeGrid::new(points)
}

/// A discretized path: one `dim`-vector per grid point, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    grid: Arc<TimeGrid>,
    dim: usize,
    values: Vec<f64>,
}

impl Path {
    pub fn new(grid: Arc<TimeGrid>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * dim {
            return Err(Error::invalid(format!(
                "path has {} values, expected {} points of dimension {dim}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Path { grid, dim, values })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn start(&self) -> &[f64] {
        self.at(0)
    }

    pub fn end(&self) -> &[f64] {
        self.at(self.grid.len() - 1)
    }
}

/// Wiener increments on the intervals of a grid, `dim` components each.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerIncrements {
    grid: Arc<TimeGrid>,
    dim: usize,
    values: Vec<f64>,
}

impl WienerIncrements {
    pub fn new(grid: Arc<TimeGrid>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_intervals() * dim {
            return Err(Error::invalid(format!(
                "expected {} increments of dimension {dim}, got {} values",
                grid.n_intervals(),
                values.len()
            )));
        }
        Ok(WienerIncrements { grid, dim, values })
    }

    /// Independent `N(0, δ_i I)` increments.
    pub fn sample<R: Rng + ?Sized>(grid: Arc<TimeGrid>, dim: usize, rng: &mut R) -> Self {
        let mut values = vec![0.0; grid.n_intervals() * dim];
        fill_increments(grid.points(), dim, rng, &mut values);
        WienerIncrements { grid, dim, values }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub(crate) fn fill_increments<R: Rng + ?Sized>(points: &[f64], dim: usize, rng: &mut R, out: &mut [f64]) {
    for (i, w) in points.windows(2).enumerate() {
        let sd = (w[1] - w[0]).sqrt();
        for k in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            out[i * dim + k] = sd * z;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ellipticity {
    /// `σσᵀ` is invertible everywhere.
    Elliptic,
    /// Fewer noise than state dimensions; `σσᵀ` is singular.
    HypoElliptic,
}

/// `dX = b(s, X) ds + σ(s, X) dB` with `X ∈ ℝ^dim`, `B ∈ ℝ^noise_dim`.
pub trait SdeModel: Send + Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn ellipticity(&self) -> Ellipticity;
    fn drift(&self, s: f64, x: &[f64], out: &mut [f64]);
    /// Row-major `dim × noise_dim` diffusion coefficient.
    fn diffusion(&self, s: f64, x: &[f64], out: &mut [f64]);

    /// Analytic drift Jacobian (row-major `dim × dim`); return `false` to fall
    /// back to finite differences.
    fn drift_jacobian(&self, _s: f64, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    fn is_elliptic(&self) -> bool {
        self.ellipticity() == Ellipticity::Elliptic
    }
}

impl fmt::Debug for dyn SdeModel + '_ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("dim", &self.dim())
            .field("noise_dim", &self.noise_dim())
            .field("ellipticity", &self.ellipticity())
            .finish()
    }
}

type VecFn = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// An SDE given by closures.
pub struct FnSde {
    dim: usize,
    noise_dim: usize,
    ellipticity: Ellipticity,
    drift: VecFn,
    diffusion: VecFn,
}

impl FnSde {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        ellipticity: Ellipticity,
        drift: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        FnSde {
            dim,
            noise_dim,
            ellipticity,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
        }
    }
}

impl SdeModel for FnSde {
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
        (self.drift)(s, x, out)
    }
    fn diffusion(&self, s: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(s, x, out)
    }
}

/// The model seen from a segment starting at absolute time `offset`.
pub struct TimeShifted<'a> {
    pub inner: &'a dyn SdeModel,
    pub offset: f64,
}

impl SdeModel for TimeShifted<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }
    fn ellipticity(&self) -> Ellipticity {
        self.inner.ellipticity()
    }
    fn drift(&self, s: f64, x: &[f64], out: &mut [f64]) {
        self.inner.drift(self.offset + s, x, out)
    }
    fn diffusion(&self, s: f64, x: &[f64], out: &mut [f64]) {
        self.inner.diffusion(self.offset + s, x, out)
    }
    fn drift_jacobian(&self, s: f64, x: &[f64], out: &mut [f64]) -> bool {
        self.inner.drift_jacobian(self.offset + s, x, out)
    }
}

/// Observation density `f_t(y | e)` for the zero-based observation index `t`.
pub trait ObsModel: Send + Sync {
    fn obs_dim(&self) -> usize;
    fn log_density(&self, t: usize, y: &[f64], e: &[f64]) -> f64;
    fn sample(&self, t: usize, e: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// Linear-Gaussian structure, when present.
    fn linear_gaussian(&self) -> Option<&LinearGaussianObs> {
        None
    }
}

/// `y = H e + ε`, `ε ~ N(0, R)`.
#[derive(Debug, Clone)]
pub struct LinearGaussianObs {
    h: DMatrix<f64>,
    r: DMatrix<f64>,
    r_chol: Vec<f64>,
}

impl LinearGaussianObs {
    pub fn new(h: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let m = h.nrows();
        if r.nrows() != m || r.ncols() != m {
            return Err(Error::invalid("R must be square with as many rows as H"));
        }
        let mut r_chol: Vec<f64> = (0..m * m).map(|k| r[(k / m, k % m)]).collect();
        if !linalg::cholesky_in_place(&mut r_chol, m) {
            return Err(Error::invalid("observation covariance R is not positive definite"));
        }
        Ok(LinearGaussianObs { h, r, r_chol })
    }

    /// Scalar observation `y = e_{index} + ε`, `ε ~ N(0, var)`.
    pub fn observe_coordinate(dim: usize, index: usize, var: f64) -> Result<Self> {
        let mut h = DMatrix::zeros(1, dim);
        h[(0, index)] = 1.0;
        Self::new(h, DMatrix::from_element(1, 1, var))
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn mean(&self, e: &[f64]) -> DVector<f64> {
        &self.h * DVector::from_column_slice(e)
    }
}

impl ObsModel for LinearGaussianObs {
    fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    fn log_density(&self, _t: usize, y: &[f64], e: &[f64]) -> f64 {
        let m = self.h.nrows();
        let d = self.h.ncols();
        let mut resid = [0.0f64; 8];
        let mut work = [0.0f64; 8];
        if m <= 8 {
            for i in 0..m {
                let mut v = y[i];
                for k in 0..d {
                    v -= self.h[(i, k)] * e[k];
                }
                resid[i] = v;
            }
            return linalg::gaussian_logpdf_chol(&self.r_chol, m, 1.0, &resid[..m], &mut work[..m]);
        }
        let r: Vec<f64> = (DVector::from_column_slice(y) - self.mean(e)).iter().copied().collect();
        let mut w = vec![0.0; m];
        linalg::gaussian_logpdf_chol(&self.r_chol, m, 1.0, &r, &mut w)
    }

    fn sample(&self, _t: usize, e: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let m = self.h.nrows();
        let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let mut noise = vec![0.0; m];
        for i in 0..m {
            noise[i] = (0..=i).map(|k| self.r_chol[i * m + k] * z[k]).sum();
        }
        self.mean(e).iter().zip(noise).map(|(a, b)| a + b).collect()
    }

    fn linear_gaussian(&self) -> Option<&LinearGaussianObs> {
        Some(self)
    }
}

/// An observation carrying no information: `log f ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct FlatObs {
    pub obs_dim: usize,
}

impl ObsModel for FlatObs {
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }
    fn log_density(&self, _t: usize, _y: &[f64], _e: &[f64]) -> f64 {
        0.0
    }
    fn sample(&self, _t: usize, _e: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0; self.obs_dim]
    }
}

/// Per-call buffers for the path loops below.
#[derive(Debug, Default, Clone)]
pub(crate) struct PathBuffers {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma: Vec<f64>,
    pub cov: Vec<f64>,
    pub work: Vec<f64>,
    pub work2: Vec<f64>,
    pub r: Vec<f64>,
    pub mat: Vec<f64>,
    pub mat2: Vec<f64>,
    /// The `σ` whose `σσᵀ` factor currently sits in `cov`.
    cov_key: Vec<f64>,
}

impl PathBuffers {
    pub fn for_dims(d: usize, dw: usize) -> Self {
        PathBuffers {
            a: vec![0.0; d],
            b: vec![0.0; d],
            sigma: vec![0.0; d * dw],
            cov: vec![0.0; d * d],
            work: vec![0.0; d],
            work2: vec![0.0; d],
            r: vec![0.0; d],
            mat: vec![0.0; d * d],
            mat2: vec![0.0; d * d],
            cov_key: Vec::new(),
        }
    }

    /// Cholesky factor of `σσᵀ` for the current `sigma` into `cov`, reused
    /// when `sigma` is unchanged since the last call.
    pub fn factor_sigma(&mut self, d: usize, dw: usize) -> bool {
        if self.cov_key.len() == d * dw && self.cov_key[..] == self.sigma[..d * dw] {
            return true;
        }
        linalg::outer_self(&self.sigma, d, dw, &mut self.cov);
        if !linalg::cholesky_in_place(&mut self.cov, d) {
            self.cov_key.clear();
            return false;
        }
        self.cov_key.clear();
        self.cov_key.extend_from_slice(&self.sigma[..d * dw]);
        true
    }
}

pub(crate) fn check_finite(what: &str, v: &[f64], step: usize, time: f64, x: &[f64]) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric_at(format!("non-finite {what}"), step, time, x))
    }
}

/// Cholesky factor of `Σ(s, x)` into `buf.cov`; `buf.sigma` is overwritten.
pub(crate) fn diffusion_chol(
    model: &dyn SdeModel,
    s: f64,
    x: &[f64],
    buf: &mut PathBuffers,
    step: usize,
) -> Result<()> {
    let d = model.dim();
    let dw = model.noise_dim();
    model.diffusion(s, x, &mut buf.sigma);
    check_finite("diffusion", &buf.sigma, step, s, x)?;
    if !buf.factor_sigma(d, dw) {
        return Err(Error::numeric_at(
            "diffusion covariance is not positive definite",
            step,
            s,
            x,
        ));
    }
    Ok(())
}

/// Euler–Maruyama recursion into `out` (`(n+1)·d` values) from increments `noise`.
pub(crate) fn euler_into(
    model: &dyn SdeModel,
    x0: &[f64],
    points: &[f64],
    noise: &[f64],
    out: &mut [f64],
    buf: &mut PathBuffers,
) -> Result<()> {
    let d = model.dim();
    let dw = model.noise_dim();
    out[..d].copy_from_slice(x0);
    for i in 0..points.len() - 1 {
        let s = points[i];
        let dt = points[i + 1] - s;
        let (head, tail) = out.split_at_mut((i + 1) * d);
        let x = &head[i * d..];
        model.drift(s, x, &mut buf.a);
        check_finite("drift", &buf.a, i, s, x)?;
        model.diffusion(s, x, &mut buf.sigma);
        check_finite("diffusion", &buf.sigma, i, s, x)?;
        let db = &noise[i * dw..(i + 1) * dw];
        for k in 0..d {
            let kick: f64 = (0..dw).map(|c| buf.sigma[k * dw + c] * db[c]).sum();
            tail[k] = x[k] + buf.a[k] * dt + kick;
        }
    }
    Ok(())
}

/// Euler–Maruyama path of `model` from `x0` driven by `noise`.
pub fn euler_simulate(model: &dyn SdeModel, x0: &[f64], noise: &WienerIncrements) -> Result<Path> {
    let d = model.dim();
    if x0.len() != d {
        return Err(Error::invalid(format!(
            "x0 has length {}, model dimension is {d}",
            x0.len()
        )));
    }
    if noise.dim() != model.noise_dim() {
        return Err(Error::invalid("noise dimension does not match the model"));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("x0 must be finite"));
    }
    let grid = noise.grid().clone();
    let mut values = vec![0.0; grid.len() * d];
    let mut buf = PathBuffers::for_dims(d, model.noise_dim());
    euler_into(model, x0, grid.points(), noise.values(), &mut values, &mut buf)?;
    Path::new(grid, d, values)
}

/// A drift `(s, x) → out`.
pub type DriftFn<'a> = &'a (dyn Fn(f64, &[f64], &mut [f64]) + Sync);

/// Left-point log Radon–Nikodym derivative of the law with drift `target`
/// against the law with drift `proposal`, both with the diffusion of `model`:
/// `Σ_i (b - b')ᵀ Σ⁻¹ Δv_i - ½ (b - b')ᵀ Σ⁻¹ (b + b') δ_i`.
pub fn girsanov_log_rn(target: DriftFn, proposal: DriftFn, model: &dyn SdeModel, path: &Path) -> Result<f64> {
    if path.dim() != model.dim() {
        return Err(Error::invalid("path dimension does not match the model"));
    }
    let mut buf = PathBuffers::for_dims(model.dim(), model.noise_dim());
    girsanov_flat(target, proposal, model, path.grid().points(), path.values(), &mut buf)
}

pub(crate) fn girsanov_flat(
    target: DriftFn,
    proposal: DriftFn,
    model: &dyn SdeModel,
    points: &[f64],
    values: &[f64],
    buf: &mut PathBuffers,
) -> Result<f64> {
    let d = model.dim();
    let mut total = 0.0;
    for i in 0..points.len() - 1 {
        let s = points[i];
        let dt = points[i + 1] - s;
        let x = &values[i * d..(i + 1) * d];
        let x_next = &values[(i + 1) * d..(i + 2) * d];
        target(s, x, &mut buf.a);
        proposal(s, x, &mut buf.b);
        check_finite("target drift", &buf.a, i, s, x)?;
        check_finite("proposal drift", &buf.b, i, s, x)?;
        diffusion_chol(model, s, x, buf, i)?;
        total += girsanov_increment(
            &buf.a,
            &buf.b,
            x,
            x_next,
            dt,
            &buf.cov,
            d,
            &mut buf.work,
            &mut buf.work2,
        );
        if !total.is_finite() {
            return Err(Error::numeric_at("non-finite Girsanov sum", i, s, x));
        }
    }
    Ok(total)
}

/// One left-point Girsanov summand given the Cholesky factor `chol` of Σ.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn girsanov_increment(
    target: &[f64],
    proposal: &[f64],
    x: &[f64],
    x_next: &[f64],
    dt: f64,
    chol: &[f64],
    d: usize,
    diff: &mut [f64],
    sum: &mut [f64],
) -> f64 {
    for k in 0..d {
        diff[k] = target[k] - proposal[k];
        sum[k] = (x_next[k] - x[k]) - 0.5 * (target[k] + proposal[k]) * dt;
    }
    if diff.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    linalg::cholesky_solve(chol, d, diff);
    linalg::dot(diff, &sum[..d])
}

/// Explicit inverse of `Σ(s, x)` into `out` (row-major).
pub(crate) fn precision_at(
    model: &dyn SdeModel,
    s: f64,
    x: &[f64],
    buf: &mut PathBuffers,
    step: usize,
    out: &mut [f64],
) -> Result<()> {
    let d = model.dim();
    diffusion_chol(model, s, x, buf, step)?;
    for c in 0..d {
        let col = &mut buf.work;
        col.iter_mut().for_each(|v| *v = 0.0);
        col[c] = 1.0;
        linalg::cholesky_solve(&buf.cov, d, col);
        for r in 0..d {
            out[r * d + c] = col[r];
        }
    }
    Ok(())
}

/// Backward-evaluated bridge functional
/// `Σ_i cᵀ (Σ⁻¹(t_{i+1}, v_{i+1}) - Σ⁻¹(t_i, v_i)) (e - v_p)` with
/// `c = (e - v_p)/(Δ - t_p)`, where `p = i + 1` except on the final interval,
/// which uses its left point so that `1/(Δ - s)` is never evaluated at `Δ`.
/// It vanishes whenever the diffusion coefficient is constant.
pub fn diamond_integral(model: &dyn SdeModel, path: &Path, e: &[f64]) -> Result<f64> {
    let mut buf = PathBuffers::for_dims(model.dim(), model.noise_dim());
    diamond_flat(model, path.grid().points(), path.values(), e, &mut buf)
}

pub(crate) fn diamond_flat(
    model: &dyn SdeModel,
    points: &[f64],
    values: &[f64],
    e: &[f64],
    buf: &mut PathBuffers,
) -> Result<f64> {
    let d = model.dim();
    let n = points.len() - 1;
    let delta = points[n];
    let at = |i: usize| &values[i * d..(i + 1) * d];
    let mut prec_prev = vec![0.0; d * d];
    let mut prec_next = vec![0.0; d * d];
    let mut resid = vec![0.0; d];
    precision_at(model, points[0], at(0), buf, 0, &mut prec_prev)?;
    let mut total = 0.0;
    for i in 0..n {
        precision_at(model, points[i + 1], at(i + 1), buf, i + 1, &mut prec_next)?;
        let p = if i + 1 < n { i + 1 } else { i };
        let vp = at(p);
        let scale = 1.0 / (delta - points[p]);
        for k in 0..d {
            resid[k] = e[k] - vp[k];
        }
        let mut term = 0.0;
        for r in 0..d {
            for c in 0..d {
                term += resid[r] * (prec_next[r * d + c] - prec_prev[r * d + c]) * resid[c];
            }
        }
        total += scale * term;
        if !total.is_finite() {
            return Err(Error::numeric_at("non-finite diamond sum", i, points[i], at(i)));
        }
        std::mem::swap(&mut prec_prev, &mut prec_next);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_relative_eq;

    fn constant_model(d: usize, drift: f64, sigma: f64) -> FnSde {
        FnSde::new(
            d,
            d,
            Ellipticity::Elliptic,
            move |_, _, out| out.iter_mut().for_each(|v| *v = drift),
            move |_, _, out| {
                out.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..d {
                    out[k * d + k] = sigma;
                }
            },
        )
    }

    #[test]
    fn grid_examples() {
        let g = make_grid(1.0, 4, 0.0).unwrap();
        assert_eq!(g.points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(make_grid(2.0, 1, 0.0).unwrap().points(), &[0.0, 2.0]);
        let g = make_grid(1.0, 1000, 1e-3).unwrap();
        assert_eq!(g.n_intervals(), 1000);
        assert_relative_eq!(g.points()[999], 0.999, epsilon = 1e-15);
        assert_eq!(g.delta(), 1.0);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(matches!(make_grid(0.0, 3, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(make_grid(-1.0, 3, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(make_grid(1.0, 0, 0.0), Err(Error::InvalidArgument(_))));
        assert!(make_grid(1.0, 1, 0.1).is_err());
        assert!(make_grid(1.0, 3, 1.0).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.5]).is_err());
    }

    #[test]
    fn euler_constant_and_cumulative_sum() {
        let grid = Arc::new(make_grid(1.0, 5, 0.0).unwrap());
        let mut rng = stream(1, Purpose::Simulate, 0, 0);
        let noise = WienerIncrements::sample(grid.clone(), 1, &mut rng);

        let frozen = constant_model(1, 0.0, 0.0);
        let p = euler_simulate(&frozen, &[1.0], &noise).unwrap();
        assert!(p.values().iter().all(|&v| v == 1.0));

        let bm = constant_model(1, 0.0, 1.0);
        let p = euler_simulate(&bm, &[0.5], &noise).unwrap();
        let mut acc = 0.5;
        for i in 0..5 {
            acc += noise.at(i)[0];
            assert_relative_eq!(p.at(i + 1)[0], acc, epsilon = 1e-15);
        }
    }

    #[test]
    fn euler_decay_matches_exponential() {
        let grid = Arc::new(make_grid(1.0, 10_000, 0.0).unwrap());
        let model = FnSde::new(
            1,
            1,
            Ellipticity::Elliptic,
            |_, x, o| o[0] = -x[0],
            |_, _, o| o[0] = 0.0,
        );
        let noise = WienerIncrements::new(grid.clone(), 1, vec![0.0; 10_000]).unwrap();
        let p = euler_simulate(&model, &[1.0], &noise).unwrap();
        assert!((p.end()[0] - (-1f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn euler_reports_non_finite_drift() {
        let grid = Arc::new(make_grid(1.0, 4, 0.0).unwrap());
        let model = FnSde::new(
            1,
            1,
            Ellipticity::Elliptic,
            |s, _, o| o[0] = if s > 0.4 { f64::NAN } else { 0.0 },
            |_, _, o| o[0] = 1.0,
        );
        let noise = WienerIncrements::new(grid, 1, vec![0.1; 4]).unwrap();
        match euler_simulate(&model, &[0.0], &noise) {
            Err(Error::NumericFailure { step, time, .. }) => {
                assert_eq!(step, 2);
                assert_eq!(time, 0.5);
            }
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }

    #[test]
    fn girsanov_constant_drift_closed_form() {
        let grid = Arc::new(make_grid(1.5, 30, 0.0).unwrap());
        let bm = constant_model(1, 0.0, 1.0);
        let mut rng = stream(2, Purpose::Simulate, 0, 0);
        let noise = WienerIncrements::sample(grid, 1, &mut rng);
        let path = euler_simulate(&bm, &[0.2], &noise).unwrap();
        let mu = 0.7;
        let target = move |_: f64, _: &[f64], o: &mut [f64]| o[0] = mu;
        let zero = |_: f64, _: &[f64], o: &mut [f64]| o[0] = 0.0;
        let got = girsanov_log_rn(&target, &zero, &bm, &path).unwrap();
        let expected = mu * (path.end()[0] - path.start()[0]) - 0.5 * mu * mu * 1.5;
        assert_relative_eq!(got, expected, epsilon = 1e-12);
        assert_eq!(girsanov_log_rn(&target, &target, &bm, &path).unwrap(), 0.0);
    }

    #[test]
    fn girsanov_rejects_singular_diffusion() {
        let grid = Arc::new(make_grid(1.0, 3, 0.0).unwrap());
        let frozen = constant_model(1, 0.0, 0.0);
        let noise = WienerIncrements::new(grid, 1, vec![0.0; 3]).unwrap();
        let path = euler_simulate(&frozen, &[0.0], &noise).unwrap();
        let one = |_: f64, _: &[f64], o: &mut [f64]| o[0] = 1.0;
        let zero = |_: f64, _: &[f64], o: &mut [f64]| o[0] = 0.0;
        assert!(matches!(
            girsanov_log_rn(&one, &zero, &frozen, &path),
            Err(Error::NumericFailure { .. })
        ));
    }

    #[test]
    fn diamond_vanishes_for_constant_diffusion_and_flat_path() {
        let grid = Arc::new(make_grid(1.0, 20, 0.0).unwrap());
        let bm = constant_model(2, 0.0, 0.8);
        let mut rng = stream(3, Purpose::Simulate, 0, 0);
        let noise = WienerIncrements::sample(grid.clone(), 2, &mut rng);
        let path = euler_simulate(&bm, &[0.0, 1.0], &noise).unwrap();
        assert_eq!(diamond_integral(&bm, &path, &[0.3, 0.3]).unwrap(), 0.0);

        let varying = FnSde::new(
            1,
            1,
            Ellipticity::Elliptic,
            |_, _, o| o[0] = 0.0,
            |s, x, o| o[0] = 1.0 + 0.5 * (x[0] + s).sin().powi(2),
        );
        let flat = Path::new(grid, 1, vec![0.4; 21]).unwrap();
        assert_eq!(diamond_integral(&varying, &flat, &[0.4]).unwrap(), 0.0);
    }

    #[test]
    fn linear_gaussian_obs_density() {
        let obs = LinearGaussianObs::observe_coordinate(2, 0, 0.3).unwrap();
        let got = obs.log_density(0, &[1.1], &[0.4, -7.0]);
        assert_relative_eq!(got, linalg::normal_logpdf(1.1, 0.4, 0.3), epsilon = 1e-12);
    }
}
