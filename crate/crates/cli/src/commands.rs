//! The `simulate`, `filter`, `smooth` and `infer` subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cdssm::{
    derive_seed, ffbs, kalman_cd, particle_filter, particle_gibbs, pmmh, simulate as simulate_ssm, Cloud, Error,
    FilterOptions, FkModel, Gaussian, GibbsOptions, ParamSpace, PmmhOptions, Purpose, Transform,
};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::config::{Algorithm, Method, RunConfig};
use crate::io::{self, fmt, Header, Record, ResultFile};
use crate::models::{feynman_kac, observation, resampler, state_space, Signal};
use crate::CliError;

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Simulates latent states and observations; returns the data file path.
pub fn simulate(cfg: &RunConfig, seed: u64, out: &Path) -> Result<PathBuf, CliError> {
    let times = cfg.schedule.times()?;
    let signal = Signal::build(&cfg.model)?;
    let obs = observation(cfg)?;
    let sim = simulate_ssm(&*signal.sde(), &obs, &cfg.x0(), &times, cfg.simulate.n_steps, seed)?;
    let records: Vec<Record> = sim
        .data
        .into_iter()
        .zip(sim.states)
        .enumerate()
        .map(|(k, (y, x))| Record {
            t: k + 1,
            s: times[k + 1],
            y,
            x_true: cfg.simulate.include_states.then_some(x),
        })
        .collect();
    let header = Header {
        config_hash: cfg.hash(),
        seed,
        model: cfg.model.name().to_string(),
    };
    let path = out.join("data.jsonl");
    io::write_data(&path, &header, &records)?;
    Ok(path)
}

/// Observations from `path`, checked against the configured schedule.
pub fn load_data(cfg: &RunConfig, path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let times = cfg.schedule.times()?;
    let (_, records) = io::read_data(path)?;
    if records.len() + 1 != times.len() {
        return Err(CliError::config(format!(
            "data has {} records but the schedule has {} observation times",
            records.len(),
            times.len() - 1
        )));
    }
    let m = cfg.observation.coordinates.len();
    for (k, r) in records.iter().enumerate() {
        let s = times[k + 1];
        if r.t != k + 1 || (r.s - s).abs() > 1e-9 * s.abs().max(1.0) || r.y.len() != m {
            return Err(CliError::config(format!(
                "data record {} does not match the schedule (expected t={}, s={s}, {m} values)",
                k + 1,
                k + 1
            )));
        }
    }
    Ok(records.into_iter().map(|r| r.y).collect())
}

fn filter_options(cfg: &RunConfig, seed: u64) -> FilterOptions {
    FilterOptions::new(cfg.method.particles, seed).resampler(resampler(cfg))
}

fn build(cfg: &RunConfig, times: Vec<f64>, data: Vec<Vec<f64>>) -> Result<FkModel, CliError> {
    let ssm = state_space(cfg, &cfg.model, times, data)?;
    feynman_kac(cfg, ssm)
}

fn filter_columns(d: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "s".to_string()];
    cols.extend((0..d).map(|k| format!("mean_{k}")));
    cols.extend((0..d).map(|k| format!("var_{k}")));
    cols.extend(["ess", "resampled", "failures", "log_lik_increment", "log_lik"].map(String::from));
    cols
}

fn write_filter_rows(file: &mut ResultFile, cloud: &Cloud, times: &[f64]) -> Result<(), CliError> {
    let mut cumulative = 0.0;
    for (t, g) in cloud.generations.iter().enumerate() {
        cumulative += cloud.log_lik_increments[t];
        let mut row = vec![(t + 1).to_string(), fmt(times[t + 1])];
        row.extend(cloud.filter_mean(t).into_iter().map(fmt));
        row.extend(cloud.filter_var(t).into_iter().map(fmt));
        row.extend([
            fmt(g.ess),
            g.resampled.to_string(),
            g.failures.to_string(),
            fmt(cloud.log_lik_increments[t]),
            fmt(cumulative),
        ]);
        file.row(&row)?;
    }
    Ok(())
}

fn kalman_log_lik(cfg: &RunConfig, data: &[Vec<f64>]) -> Result<Option<f64>, CliError> {
    let signal = Signal::build(&cfg.model)?;
    let Some(lin) = signal.linear() else {
        return Ok(None);
    };
    let d = cfg.model.dim();
    let prior = Gaussian {
        mean: DVector::from_vec(cfg.x0()),
        cov: DMatrix::zeros(d, d),
    };
    let k = kalman_cd(lin, &observation(cfg)?, &prior, &cfg.schedule.times()?, data, 200)?;
    Ok(Some(k.log_likelihood))
}

/// Particle filter. On degenerate weights at step t the first t rows are
/// still written (replayed on the truncated data with the same streams).
pub fn filter(cfg: &RunConfig, seed: u64, data_path: &Path, out: &Path) -> Result<f64, CliError> {
    let data = load_data(cfg, data_path)?;
    let times = cfg.schedule.times()?;
    let fk = build(cfg, times.clone(), data.clone())?;
    let opts = filter_options(cfg, seed);
    let hash = cfg.hash();
    let mut file = ResultFile::create(&out.join("filter.csv"), &hash, seed, &filter_columns(cfg.model.dim()))?;
    match particle_filter(&fk, &opts) {
        Ok(cloud) => {
            write_filter_rows(&mut file, &cloud, &times)?;
            file.finish(None)?;
            let failures: usize = cloud.generations.iter().map(|g| g.failures).sum();
            write_json(
                &out.join("filter_summary.json"),
                &json!({
                    "config_hash": hash,
                    "seed": seed,
                    "method": cfg.method.kind,
                    "particles": cfg.method.particles,
                    "log_likelihood": cloud.log_likelihood,
                    "kalman_log_likelihood": kalman_log_lik(cfg, &data)?,
                    "failures": failures,
                }),
            )?;
            Ok(cloud.log_likelihood)
        }
        Err(Error::DegenerateWeights { t }) => {
            if t > 0 {
                let prefix = build(cfg, times[..=t].to_vec(), data[..t].to_vec())?;
                let cloud = particle_filter(&prefix, &opts)?;
                write_filter_rows(&mut file, &cloud, &times)?;
            }
            let msg = format!("all particle weights vanished at t={}", t + 1);
            file.finish(Some(&format!("error: {msg}")))?;
            Err(CliError::Degenerate(msg))
        }
        Err(e) => {
            file.finish(Some(&format!("error: {e}")))?;
            Err(e.into())
        }
    }
}

/// FFBS draws from a filter run with history.
pub fn smooth(cfg: &RunConfig, seed: u64, data_path: &Path, out: &Path) -> Result<usize, CliError> {
    if !matches!(cfg.method.kind, Method::Fm | Method::Bm) {
        return Err(CliError::config("smoothing needs method `fm` or `bm`"));
    }
    let data = load_data(cfg, data_path)?;
    let times = cfg.schedule.times()?;
    let d = cfg.model.dim();
    let mut cols = vec!["draw".to_string(), "t".to_string(), "s".to_string()];
    cols.extend((0..d).map(|k| format!("x_{k}")));
    let hash = cfg.hash();
    let mut file = ResultFile::create(&out.join("smooth.csv"), &hash, seed, &cols)?;
    let draws = cfg.smooth.draws;
    if draws == 0 {
        file.finish(None)?;
        return Ok(0);
    }
    let fk = build(cfg, times.clone(), data)?;
    let run = particle_filter(&fk, &filter_options(cfg, seed).history(true))
        .and_then(|cloud| ffbs(&fk, &cloud, draws, derive_seed(seed, Purpose::Backward, 0), true).map(|t| (cloud, t)));
    let (cloud, trajectories) = match run {
        Ok(v) => v,
        Err(e) => {
            file.finish(Some(&format!("error: {e}")))?;
            return Err(e.into());
        }
    };
    let mut gap = 0.0f64;
    for (k, traj) in trajectories.iter().enumerate() {
        for t in 0..times.len() - 1 {
            let mut row = vec![k.to_string(), (t + 1).to_string(), fmt(times[t + 1])];
            row.extend(traj.end_point(t).iter().map(|v| fmt(*v)));
            file.row(&row)?;
        }
        if let Some(paths) = &traj.paths {
            let mut prev = cfg.x0();
            for (t, p) in paths.iter().enumerate() {
                gap = gap.max(max_abs_diff(p.start(), &prev));
                gap = gap.max(max_abs_diff(p.end(), traj.end_point(t)));
                prev = p.end().to_vec();
            }
        }
    }
    file.finish(Some(&format!("max_continuity_gap={gap}")))?;
    write_json(
        &out.join("smooth_summary.json"),
        &json!({
            "config_hash": hash,
            "seed": seed,
            "method": cfg.method.kind,
            "draws": draws,
            "log_likelihood": cloud.log_likelihood,
            "max_continuity_gap": gap,
        }),
    )?;
    Ok(draws)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// PMMH or particle Gibbs over the configured parameters.
pub fn infer(cfg: &RunConfig, seed: u64, data_path: &Path, out: &Path) -> Result<usize, CliError> {
    let inf = cfg
        .infer
        .clone()
        .ok_or_else(|| CliError::config("the infer command needs an [infer] table"))?;
    let data = load_data(cfg, data_path)?;
    let times = cfg.schedule.times()?;
    let names: Vec<String> = inf.params.iter().map(|p| p.name.clone()).collect();
    let transforms = inf
        .params
        .iter()
        .map(|p| {
            if p.prior.positive() {
                Transform::Log
            } else {
                Transform::Identity
            }
        })
        .collect();
    let priors: Vec<_> = inf.params.iter().map(|p| p.prior.clone()).collect();
    let base = Arc::new(cfg.clone());
    let (build_names, build_times, build_data) = (names.clone(), times.clone(), data);
    let space = ParamSpace::new(
        names.clone(),
        transforms,
        move |theta| priors.iter().zip(theta).map(|(p, v)| p.log_density(*v)).sum(),
        move |theta| {
            let mut model = base.model.clone();
            for (n, v) in build_names.iter().zip(theta) {
                model = model.with(n, *v).expect("parameter names were validated");
            }
            let ssm = state_space(&base, &model, build_times.clone(), build_data.clone()).map_err(engine)?;
            feynman_kac(&base, ssm).map_err(engine)
        },
    )?;
    let p = names.len();
    let mut rw_cov = vec![0.0; p * p];
    for (k, par) in inf.params.iter().enumerate() {
        rw_cov[k * p + k] = par.step * par.step;
    }
    let init: Vec<f64> = inf.params.iter().map(|p| p.init).collect();
    let mut cols = vec!["iter".to_string()];
    cols.extend(names.iter().cloned());
    cols.extend(["log_post", "accepted"].map(String::from));
    let hash = cfg.hash();
    let mut file = ResultFile::create(&out.join("chain.csv"), &hash, seed, &cols)?;
    let result = match inf.algorithm {
        Algorithm::Pmmh => pmmh(
            &space,
            &PmmhOptions {
                n_particles: cfg.method.particles,
                n_iter: inf.n_iter,
                rw_cov,
                resampler: resampler(cfg),
                seed,
                init,
            },
        ),
        Algorithm::Gibbs => {
            let mut opts = GibbsOptions::new(cfg.method.particles, inf.n_iter, init, rw_cov, seed);
            if let Some(b) = inf.burn_in {
                opts.burn_in = b;
            }
            particle_gibbs(&space, &opts)
        }
    };
    let chain = match result {
        Ok(c) => c,
        Err(e) => {
            file.finish(Some(&format!("error: {e}")))?;
            return Err(e.into());
        }
    };
    for (k, draw) in chain.draws.iter().enumerate() {
        let mut row = vec![(k + 1).to_string()];
        row.extend(draw.iter().map(|v| fmt(*v)));
        row.push(fmt(chain.log_post[k]));
        row.push(chain.accepted[k].to_string());
        file.row(&row)?;
    }
    file.finish(None)?;
    let half = chain.len() / 2;
    let means: serde_json::Map<String, serde_json::Value> = names
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let col = chain.column(k, half);
            (n.clone(), json!(col.iter().sum::<f64>() / col.len().max(1) as f64))
        })
        .collect();
    write_json(
        &out.join("chain_summary.json"),
        &json!({
            "config_hash": hash,
            "seed": seed,
            "algorithm": inf.algorithm,
            "n_iter": inf.n_iter,
            "acceptance_rate": chain.acceptance_rate(),
            "posterior_mean_second_half": means,
        }),
    )?;
    Ok(chain.len())
}

fn engine(e: CliError) -> Error {
    match e {
        CliError::Config(m) => Error::InvalidArgument(m),
        other => Error::InvalidArgument(other.to_string()),
    }
}
