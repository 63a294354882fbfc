//! Particle filtering, conditional particle filtering and forward-filtering
//! backward-sampling over any [`FeynmanKac`] model.
//!
//! Every particle move draws from its own `(seed, t, j)` stream, so results do
//! not depend on the number of worker threads.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feynman_kac::FeynmanKac;
use crate::linalg::log_sum_exp;
use crate::rng::{derive_seed, stream, Purpose, StreamRng};
use crate::sde::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    Multinomial,
    #[default]
    Systematic,
    Stratified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trigger {
    Always,
    /// Resample when ESS drops below this fraction of N.
    EssBelow(f64),
}

impl Default for Trigger {
    fn default() -> Self {
        Trigger::EssBelow(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Resampler {
    pub scheme: Scheme,
    pub trigger: Trigger,
}

impl Resampler {
    pub fn new(scheme: Scheme, trigger: Trigger) -> Self {
        Resampler { scheme, trigger }
    }

    fn fires(&self, ess: f64, n: usize) -> bool {
        match self.trigger {
            Trigger::Always => true,
            Trigger::EssBelow(frac) => ess < frac * n as f64,
        }
    }
}

/// `1 / Σ W²` for normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Draws `n_out` ancestor indices from normalized `weights` into `out`
/// (sorted for the systematic and stratified schemes).
pub fn resample<R: Rng + ?Sized>(scheme: Scheme, weights: &[f64], n_out: usize, rng: &mut R, out: &mut Vec<usize>) {
    out.clear();
    if n_out == 0 {
        return;
    }
    let n = weights.len();
    let mut uniforms: Vec<f64> = match scheme {
        Scheme::Multinomial => {
            // Sorted uniforms via normalized exponential spacings.
            let mut acc = 0.0;
            let mut v: Vec<f64> = (0..n_out)
                .map(|_| {
                    acc += -(1.0 - rng.random::<f64>()).ln();
                    acc
                })
                .collect();
            let total = acc - (1.0 - rng.random::<f64>()).ln();
            v.iter_mut().for_each(|x| *x /= total);
            v
        }
        Scheme::Systematic => {
            let u: f64 = rng.random();
            (0..n_out).map(|k| (k as f64 + u) / n_out as f64).collect()
        }
        Scheme::Stratified => (0..n_out)
            .map(|k| (k as f64 + rng.random::<f64>()) / n_out as f64)
            .collect(),
    };
    let mut cum = 0.0;
    let mut j = 0;
    for u in uniforms.drain(..) {
        while j + 1 < n && cum + weights[j] <= u {
            cum += weights[j];
            j += 1;
        }
        out.push(j);
    }
}

/// One categorical draw from unnormalized log-weights.
pub(crate) fn sample_log_categorical<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> Option<usize> {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let total: f64 = log_w.iter().map(|l| (l - m).exp()).sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (j, l) in log_w.iter().enumerate() {
        let w = (l - m).exp();
        if w > 0.0 {
            last = j;
        }
        acc += w;
        if acc > target {
            return Some(j);
        }
    }
    Some(last)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOptions {
    pub n_particles: usize,
    pub resampler: Resampler,
    pub seed: u64,
    /// Keep the noise coordinates of every generation (needed by FFBS).
    pub store_history: bool,
}

impl FilterOptions {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        FilterOptions {
            n_particles,
            resampler: Resampler::default(),
            seed,
            store_history: false,
        }
    }

    pub fn resampler(mut self, resampler: Resampler) -> Self {
        self.resampler = resampler;
        self
    }

    pub fn history(mut self, store: bool) -> Self {
        self.store_history = store;
        self
    }
}

/// Particles at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// End points, `N × d` row-major.
    pub e: Vec<f64>,
    /// Noise coordinates, `N × noise_len`, when history is kept.
    pub u: Option<Vec<f64>>,
    /// Index into the previous generation (identity at `t = 0`).
    pub ancestors: Vec<usize>,
    /// `log G_t` of each particle.
    pub log_g: Vec<f64>,
    /// Normalized filtering weights.
    pub weights: Vec<f64>,
    pub ess: f64,
    /// Whether ancestors were drawn by resampling.
    pub resampled: bool,
    /// Particles whose propagation failed numerically (weight zero).
    pub failures: usize,
}

/// Output of a particle filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Cloud {
    pub n: usize,
    pub dim: usize,
    pub generations: Vec<Generation>,
    /// `log p̂(y_t | y_{<t})` for each t.
    pub log_lik_increments: Vec<f64>,
    pub log_likelihood: f64,
}

impl Cloud {
    pub fn len(&self) -> usize {
        self.generations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generations.is_empty()
    }

    pub fn e(&self, t: usize, j: usize) -> &[f64] {
        &self.generations[t].e[j * self.dim..(j + 1) * self.dim]
    }

    /// Weighted mean of the end points at `t`.
    pub fn filter_mean(&self, t: usize) -> Vec<f64> {
        let g = &self.generations[t];
        let mut mean = vec![0.0; self.dim];
        for (j, w) in g.weights.iter().enumerate() {
            for k in 0..self.dim {
                mean[k] += w * g.e[j * self.dim + k];
            }
        }
        mean
    }

    /// Weighted per-coordinate variance of the end points at `t`.
    pub fn filter_var(&self, t: usize) -> Vec<f64> {
        let mean = self.filter_mean(t);
        let g = &self.generations[t];
        let mut var = vec![0.0; self.dim];
        for (j, w) in g.weights.iter().enumerate() {
            for k in 0..self.dim {
                let r = g.e[j * self.dim + k] - mean[k];
                var[k] += w * r * r;
            }
        }
        var
    }

    /// Index at generation `t` of the ancestor of final particle `j`.
    pub fn ancestor_at(&self, j: usize, t: usize) -> usize {
        let mut idx = j;
        for s in (t + 1..self.len()).rev() {
            idx = self.generations[s].ancestors[idx];
        }
        idx
    }

    /// Number of distinct generation-`t` ancestors of the final particles.
    pub fn unique_ancestors_at(&self, t: usize) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        for j in 0..self.n {
            let a = self.ancestor_at(j, t);
            if !seen[a] {
                seen[a] = true;
                count += 1;
            }
        }
        count
    }
}

/// A smoothing trajectory in transformed coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Particle index chosen at each t.
    pub indices: Vec<usize>,
    /// End points, `T × d` row-major.
    pub e: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    /// Segment paths rebuilt from the chosen ancestors.
    pub paths: Option<Vec<Path>>,
}

impl Trajectory {
    pub fn end_point(&self, t: usize) -> &[f64] {
        let d = self.e.len() / self.u.len().max(1);
        &self.e[t * d..(t + 1) * d]
    }
}

fn normalize(log_w: &[f64], out: &mut Vec<f64>) -> Option<f64> {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return None;
    }
    out.clear();
    out.extend(log_w.iter().map(|l| (l - lse).exp()));
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= s);
    Some(lse)
}

fn particle_rng(seed: u64, t: usize, j: usize) -> StreamRng {
    stream(seed, Purpose::Propagate, t as u64, j as u64)
}

/// Moves every particle of generation `t`. Returns the failure count.
#[allow(clippy::too_many_arguments)]
fn propagate<F: FeynmanKac>(
    fk: &F,
    t: usize,
    seed: u64,
    prev_e: Option<&[f64]>,
    ancestors: &[usize],
    skip: usize,
    e_out: &mut [f64],
    u_out: Option<&mut [f64]>,
    log_g: &mut [f64],
) -> Result<usize> {
    let d = fk.dim();
    let nl = fk.noise_len(t);
    let x0 = fk.initial_point();
    let step = |ws: &mut F::Workspace, j: usize, e: &mut [f64], u: Option<&mut [f64]>, lg: &mut f64| -> Result<bool> {
        let prev = match prev_e {
            Some(p) => &p[ancestors[j] * d..(ancestors[j] + 1) * d],
            None => x0,
        };
        let mut rng = particle_rng(seed, t, j);
        match fk.sample(t, prev, &mut rng, ws, e, u) {
            Ok(v) if v.is_nan() => {
                *lg = f64::NEG_INFINITY;
                Ok(true)
            }
            Ok(v) => {
                *lg = v;
                Ok(false)
            }
            Err(Error::NumericFailure { .. }) => {
                *lg = f64::NEG_INFINITY;
                Ok(true)
            }
            Err(err) => Err(err),
        }
    };
    let e_out = &mut e_out[skip * d..];
    let log_g = &mut log_g[skip..];
    let failures: Result<Vec<bool>> = match u_out {
        Some(u_out) => e_out
            .par_chunks_mut(d)
            .zip(u_out[skip * nl..].par_chunks_mut(nl.max(1)))
            .zip(log_g.par_iter_mut())
            .enumerate()
            .map_init(
                || fk.workspace(),
                |ws, (k, ((e, u), lg))| step(ws, k + skip, e, Some(u), lg),
            )
            .collect(),
        None => e_out
            .par_chunks_mut(d)
            .zip(log_g.par_iter_mut())
            .enumerate()
            .map_init(|| fk.workspace(), |ws, (k, (e, lg))| step(ws, k + skip, e, None, lg))
            .collect(),
    };
    Ok(failures?.into_iter().filter(|&f| f).count())
}

/// Particle filter.
pub fn particle_filter<F: FeynmanKac>(fk: &F, opts: &FilterOptions) -> Result<Cloud> {
    run_filter(fk, opts, None)
}

/// Conditional particle filter: slot 0 carries `reference` at every step and
/// the other particles resample multinomially at every step.
pub fn conditional_particle_filter<F: FeynmanKac>(
    fk: &F,
    opts: &FilterOptions,
    reference: &Trajectory,
) -> Result<Cloud> {
    if reference.u.len() != fk.len() {
        return Err(Error::invalid("reference trajectory length does not match the model"));
    }
    let mut opts = opts.clone();
    opts.resampler = Resampler::new(Scheme::Multinomial, Trigger::Always);
    run_filter(fk, &opts, Some(reference))
}

fn run_filter<F: FeynmanKac>(fk: &F, opts: &FilterOptions, reference: Option<&Trajectory>) -> Result<Cloud> {
    let n = opts.n_particles;
    if n == 0 {
        return Err(Error::invalid("a particle filter needs at least one particle"));
    }
    let d = fk.dim();
    let store_u = opts.store_history || reference.is_some();
    let mut generations: Vec<Generation> = Vec::with_capacity(fk.len());
    let mut increments = Vec::with_capacity(fk.len());
    let mut log_lik = 0.0;
    let mut ref_ws = reference.map(|_| fk.workspace());
    for t in 0..fk.len() {
        let nl = fk.noise_len(t);
        let (ancestors, carried, resampled) = match generations.last() {
            None => ((0..n).collect::<Vec<_>>(), vec![-(n as f64).ln(); n], false),
            Some(prev) if reference.is_some() || opts.resampler.fires(prev.ess, n) => {
                let mut rng = stream(opts.seed, Purpose::Resample, t as u64, 0);
                let mut a = Vec::with_capacity(n);
                if reference.is_some() {
                    resample(opts.resampler.scheme, &prev.weights, n - 1, &mut rng, &mut a);
                    a.insert(0, 0);
                } else {
                    resample(opts.resampler.scheme, &prev.weights, n, &mut rng, &mut a);
                }
                (a, vec![-(n as f64).ln(); n], true)
            }
            Some(prev) => ((0..n).collect(), prev.weights.iter().map(|w| w.ln()).collect(), false),
        };
        let mut e = vec![0.0; n * d];
        let mut u = if store_u { Some(vec![0.0; n * nl]) } else { None };
        let mut log_g = vec![0.0; n];
        let skip = usize::from(reference.is_some());
        let prev_e = generations.last().map(|g| g.e.as_slice());
        let mut failures = propagate(
            fk,
            t,
            opts.seed,
            prev_e,
            &ancestors,
            skip,
            &mut e,
            u.as_deref_mut(),
            &mut log_g,
        )?;
        if let (Some(r), Some(ws)) = (reference, ref_ws.as_mut()) {
            let prev = if t == 0 { fk.initial_point() } else { r.end_point(t - 1) };
            let e_ref = r.end_point(t);
            e[..d].copy_from_slice(e_ref);
            u.as_mut().expect("stored")[..nl].copy_from_slice(&r.u[t]);
            log_g[0] = match fk.log_potential(t, prev, e_ref, &r.u[t], ws) {
                Ok(v) if !v.is_nan() => v,
                Ok(_) | Err(Error::NumericFailure { .. }) => {
                    failures += 1;
                    f64::NEG_INFINITY
                }
                Err(err) => return Err(err),
            };
        }
        let log_w: Vec<f64> = carried.iter().zip(&log_g).map(|(c, g)| c + g).collect();
        let mut weights = Vec::with_capacity(n);
        let inc = normalize(&log_w, &mut weights).ok_or(Error::DegenerateWeights { t })?;
        log_lik += inc;
        increments.push(inc);
        let ess_t = ess(&weights);
        generations.push(Generation {
            e,
            u,
            ancestors,
            log_g,
            weights,
            ess: ess_t,
            resampled,
            failures,
        });
    }
    Ok(Cloud {
        n,
        dim: d,
        generations,
        log_lik_increments: increments,
        log_likelihood: log_lik,
    })
}

/// Draws `n_draws` smoothing trajectories by backward sampling. The cloud must
/// come from a filter run with history on a model with kernel densities.
pub fn ffbs<F: FeynmanKac>(
    fk: &F,
    cloud: &Cloud,
    n_draws: usize,
    seed: u64,
    materialize: bool,
) -> Result<Vec<Trajectory>> {
    if !fk.supports_backward() {
        return Err(Error::invalid(
            "backward sampling needs kernel densities; use the transformed forward or backward construction",
        ));
    }
    if cloud.generations.iter().any(|g| g.u.is_none()) {
        return Err(Error::invalid(
            "backward sampling needs a filter run that stored its history",
        ));
    }
    (0..n_draws)
        .map(|k| {
            let mut rng = stream(derive_seed(seed, Purpose::Backward, k as u64), Purpose::Backward, 0, 0);
            ffbs_one(fk, cloud, &mut rng, materialize)
        })
        .collect()
}

pub(crate) fn ffbs_one<F: FeynmanKac>(
    fk: &F,
    cloud: &Cloud,
    rng: &mut StreamRng,
    materialize: bool,
) -> Result<Trajectory> {
    let t_len = cloud.len();
    let d = cloud.dim;
    let mut idx = vec![0usize; t_len];
    if t_len == 0 {
        return Ok(Trajectory {
            indices: idx,
            e: Vec::new(),
            u: Vec::new(),
            paths: materialize.then(Vec::new),
        });
    }
    let last = &cloud.generations[t_len - 1];
    let log_last: Vec<f64> = last.weights.iter().map(|w| w.ln()).collect();
    idx[t_len - 1] = sample_log_categorical(&log_last, rng).ok_or(Error::DegenerateWeights { t: t_len - 1 })?;
    for t in (0..t_len - 1).rev() {
        let next = &cloud.generations[t + 1];
        let b = idx[t + 1];
        let nl = fk.noise_len(t + 1);
        let e_next = &next.e[b * d..(b + 1) * d];
        let u_next = &next.u.as_ref().expect("checked")[b * nl..(b + 1) * nl];
        let gen = &cloud.generations[t];
        let log_w: Result<Vec<f64>> = gen
            .weights
            .par_iter()
            .enumerate()
            .map_init(
                || fk.workspace(),
                |ws, (j, &w)| {
                    if w == 0.0 {
                        return Ok(f64::NEG_INFINITY);
                    }
                    match fk.log_backward_weight(t + 1, &gen.e[j * d..(j + 1) * d], e_next, u_next, ws) {
                        Ok(v) if v.is_nan() => Ok(f64::NEG_INFINITY),
                        Ok(v) => Ok(w.ln() + v),
                        Err(Error::NumericFailure { .. }) => Ok(f64::NEG_INFINITY),
                        Err(err) => Err(err),
                    }
                },
            )
            .collect();
        idx[t] = sample_log_categorical(&log_w?, rng).ok_or(Error::DegenerateWeights { t })?;
    }
    let mut e = Vec::with_capacity(t_len * d);
    let mut u = Vec::with_capacity(t_len);
    for (t, &j) in idx.iter().enumerate() {
        let g = &cloud.generations[t];
        let nl = fk.noise_len(t);
        e.extend_from_slice(&g.e[j * d..(j + 1) * d]);
        u.push(g.u.as_ref().expect("checked")[j * nl..(j + 1) * nl].to_vec());
    }
    let paths = if materialize {
        let mut ws = fk.workspace();
        let mut out = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let prev = if t == 0 {
                fk.initial_point()
            } else {
                &e[(t - 1) * d..t * d]
            };
            out.push(fk.materialize(t, prev, &e[t * d..(t + 1) * d], &u[t], &mut ws)?);
        }
        Some(out)
    } else {
        None
    };
    Ok(Trajectory {
        indices: idx,
        e,
        u,
        paths,
    })
}

/// The genealogical trajectory ending at final particle `j`.
pub fn genealogy<F: FeynmanKac>(fk: &F, cloud: &Cloud, j: usize) -> Result<Trajectory> {
    if cloud.generations.iter().any(|g| g.u.is_none()) {
        return Err(Error::invalid("genealogy needs a filter run that stored its history"));
    }
    let t_len = cloud.len();
    let d = cloud.dim;
    let mut idx = vec![0usize; t_len];
    let mut k = j;
    for t in (0..t_len).rev() {
        idx[t] = k;
        k = cloud.generations[t].ancestors[k];
    }
    let mut e = Vec::with_capacity(t_len * d);
    let mut u = Vec::with_capacity(t_len);
    for (t, &i) in idx.iter().enumerate() {
        let nl = fk.noise_len(t);
        e.extend_from_slice(cloud.e(t, i));
        u.push(cloud.generations[t].u.as_ref().expect("checked")[i * nl..(i + 1) * nl].to_vec());
    }
    Ok(Trajectory {
        indices: idx,
        e,
        u,
        paths: None,
    })
}
