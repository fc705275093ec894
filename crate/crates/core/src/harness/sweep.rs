//! Parameter sweeps over ε, φ or N.
//!
//! Each axis value runs one ensemble with the configured base seed, so
//! neighbouring values share random numbers. Rows come out in the order of
//! `values`, then time, then observable, whatever the thread schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Observable, SweepAxis};
use crate::effective::{build_f_star, build_h, build_h1, evolve_star, MarkedMeasure, StarPaths};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::particles::ParticleConfiguration;
use crate::pdmp::{default_pairs, run_paths, summarize, Estimate, Trajectory};
use crate::stokes::{lp_ball_norm, SingularitySet};
use crate::transport::{default_delta, w2_binned_upper, w2_exact};

/// Checkpoint-time matching tolerance.
const TIME_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub t: f64,
    pub observable: String,
    pub estimate: f64,
    pub stderr: f64,
    pub phi: f64,
    pub n: usize,
    pub epsilon: f64,
    pub config_hash: String,
    /// `ok`, or the error that stopped this value.
    pub status: String,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Ensemble output shared by all observables of one axis value.
pub struct EnsembleRun {
    pub config: ParticleConfiguration,
    pub paths: Vec<Trajectory>,
    pub star: StarPaths,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EnsembleRun> {
    let config = cfg.build_configuration()?;
    let mut params = cfg.simulation_params()?;
    params.record_jumps = false;
    let paths = run_paths(&config, &params, cfg.simulation.horizon, cfg.ensemble.runs, cfg.ensemble.base_seed, cfg.simulation.mode)?;
    let star = evolve_star(&config, &params.rates, &params.field, params.mobility.gamma, &params.output_times, params.dt_max)?;
    Ok(EnsembleRun { config, paths, star })
}

fn checkpoint_index(cfg: &ExperimentConfig, t: f64) -> Result<usize> {
    cfg.output_times()
        .iter()
        .position(|&s| (s - t).abs() <= TIME_TOLERANCE)
        .ok_or_else(|| Error::Config(format!("t = {t} is not on the checkpoint grid")))
}

/// Evaluation times of the sweep: the configured list, or the horizon.
pub fn sweep_times(cfg: &ExperimentConfig) -> Vec<f64> {
    if cfg.sweep.times.is_empty() {
        vec![cfg.simulation.horizon]
    } else {
        cfg.sweep.times.clone()
    }
}

/// Runs the ensemble once and evaluates every observable at every time.
pub fn evaluate(cfg: &ExperimentConfig, observables: &[Observable], times: &[f64]) -> Result<Vec<(f64, Observable, Estimate)>> {
    let indices = times.iter().map(|&t| checkpoint_index(cfg, t)).collect::<Result<Vec<_>>>()?;
    let run = run_experiment(cfg)?;
    let rates = cfg.rates()?;
    let pairs = if cfg.ensemble.pairs.is_empty() { default_pairs(run.config.len()) } else { cfg.ensemble.pairs.clone() };
    let needs_summary = observables.iter().any(|o| matches!(o, Observable::Cov | Observable::SumD));
    let summary = if needs_summary {
        Some(summarize(&run.paths, &pairs, Some(&run.star), &rates, &cfg.field, run.config.len())?)
    } else {
        None
    };
    let mut out = Vec::new();
    for &k in &indices {
        let t = run.star.times[k];
        for &obs in observables {
            let e = match obs {
                Observable::W2F => w2f(&run, k, t)?,
                Observable::W2H => w2h(cfg, &run, k, t)?,
                Observable::LpU => lp_u(cfg, &run, k)?,
                Observable::Cov => {
                    let s = &summary.as_ref().expect("summary computed").slices[k];
                    let np = s.covariance.len().max(1) as f64;
                    Estimate {
                        mean: s.covariance.iter().map(|e| e.mean).sum::<f64>() / np,
                        stderr: s.covariance.iter().map(|e| e.stderr.powi(2)).sum::<f64>().sqrt() / np,
                    }
                }
                Observable::SumD => {
                    let s = &summary.as_ref().expect("summary computed").slices[k];
                    // delta method: Var(D²) ≈ (2D)² Var(p̂)
                    let var: f64 = s.discrepancy.iter().zip(&s.p_up).map(|(d, p)| (2.0 * d * p.stderr).powi(2)).sum();
                    Estimate { mean: s.discrepancy.iter().map(|d| d * d).sum(), stderr: var.sqrt() }
                }
            };
            out.push((t, obs, e));
        }
    }
    Ok(out)
}

fn w2f(run: &EnsembleRun, k: usize, t: f64) -> Result<Estimate> {
    let fstar = build_f_star(&run.star, t)?;
    let samples = run
        .paths
        .par_iter()
        .map(|p| {
            let f = MarkedMeasure::empirical(&run.config.centers, &p.checkpoints[k].orientations, None)?;
            Ok(w2_exact(&f, &fstar)?.powi(2))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(samples))
}

fn w2h(cfg: &ExperimentConfig, run: &EnsembleRun, k: usize, t: f64) -> Result<Estimate> {
    let rates = cfg.rates()?;
    let h2 = build_h(&build_f_star(&run.star, t)?, &rates, &cfg.field, t)?;
    let delta = default_delta(run.config.len());
    let domain = cfg.particles.hypotheses.domain;
    let samples = run
        .paths
        .par_iter()
        .map(|p| {
            let h1 = build_h1(&p.checkpoints[k], &run.config.orientations, &run.star)?;
            Ok(w2_binned_upper(&h1, &h2, delta, &domain)?.bound)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(samples))
}

/// The effective fluid u at time index `k`, sampled by the star cloud.
pub fn effective_fluid(cfg: &ExperimentConfig, run: &EnsembleRun, k: usize) -> Result<SingularitySet> {
    let t = run.star.times[k];
    let cloud: Vec<_> = run.config.centers.iter().copied().zip(run.star.orientations[k].iter().copied()).collect();
    let clamp = cfg.quadrature.clamp.unwrap_or(2.0 * run.config.radius);
    let mobility = cfg.mobility()?;
    Ok(SingularitySet::effective(&cloud, cfg.phi(), &cfg.rates()?, &cfg.field, &mobility.shape, t, clamp))
}

/// ũ_N for path `p` at time index `k`.
pub fn microscopic_fluid(cfg: &ExperimentConfig, run: &EnsembleRun, p: &Trajectory, k: usize) -> Result<SingularitySet> {
    let c = &p.checkpoints[k];
    let state = ParticleConfiguration { orientations: c.orientations.clone(), spins: c.spins.clone(), ..run.config.clone() };
    Ok(SingularitySet::microscopic(&state, &cfg.field, &cfg.mobility()?.shape, c.t))
}

fn lp_u(cfg: &ExperimentConfig, run: &EnsembleRun, k: usize) -> Result<Estimate> {
    let u = effective_fluid(cfg, run, k)?;
    let center = Vec3::from(cfg.quadrature.center);
    let phi = cfg.phi();
    let samples = run
        .paths
        .par_iter()
        .map(|p| {
            let un = microscopic_fluid(cfg, run, p, k)?;
            Ok(lp_ball_norm(|x| un.velocity(x), |x| u.velocity(x), cfg.quadrature.p, &center, cfg.quadrature.nodes)? / phi)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(samples))
}

fn status_of(e: &Error) -> String {
    match e {
        Error::Infeasible(m) => format!("infeasible: {m}"),
        Error::Config(m) => format!("config: {m}"),
        other => format!("error: {other}"),
    }
}

/// Rows for one axis value; failures become status rows.
pub fn sweep_value(base: &ExperimentConfig, axis: SweepAxis, value: f64, observables: &[Observable]) -> Vec<SweepRow> {
    let cfg = base.with_axis(axis, value);
    let (hash, phi, n, eps) = match &cfg {
        Ok(c) => (c.hash(), c.phi(), c.particles.n, c.spin.epsilon),
        Err(_) => (String::new(), f64::NAN, base.particles.n, base.spin.epsilon),
    };
    let row = |t: f64, obs: Observable, e: Estimate, status: String| SweepRow {
        axis: axis.to_string(),
        value,
        t,
        observable: obs.id().into(),
        estimate: e.mean,
        stderr: e.stderr,
        phi,
        n,
        epsilon: eps,
        config_hash: hash.clone(),
        status,
    };
    let result = cfg.and_then(|c| evaluate(&c, observables, &sweep_times(&c)));
    match result {
        Ok(vals) => vals.into_iter().map(|(t, o, e)| row(t, o, e, "ok".into())).collect(),
        Err(e) => {
            log::warn!("sweep {axis} = {value}: {e}");
            let nan = Estimate { mean: f64::NAN, stderr: f64::NAN };
            observables.iter().map(|&o| row(f64::NAN, o, nan, status_of(&e))).collect()
        }
    }
}

/// Runs every value not already covered by `existing` (same axis, value
/// and configuration hash) and returns only the new rows.
pub fn sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    observables: &[Observable],
    existing: &[SweepRow],
) -> Vec<SweepRow> {
    let mut out = Vec::new();
    for &v in values {
        let done = base.with_axis(axis, v).ok().is_some_and(|c| {
            let h = c.hash();
            existing.iter().any(|r| r.axis == axis.to_string() && r.value == v && r.config_hash == h)
        });
        if done {
            log::info!("sweep {axis} = {v}: already present, skipping");
            continue;
        }
        out.extend(sweep_value(base, axis, v, observables));
    }
    out
}

pub fn read_rows<R: std::io::Read>(r: R) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Rows of one observable as (axis value, estimate) pairs at time `t`.
pub fn series(rows: &[SweepRow], observable: Observable, t: f64) -> Vec<(f64, Estimate)> {
    rows.iter()
        .filter(|r| r.is_ok() && r.observable == observable.id() && (r.t - t).abs() <= TIME_TOLERANCE)
        .map(|r| (r.value, Estimate { mean: r.estimate, stderr: r.stderr }))
        .collect()
}
