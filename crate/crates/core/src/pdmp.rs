//! Exact simulation of the spin/orientation jump process.
//!
//! Between jumps the orientations follow the drift of [`crate::stokes`];
//! particle j flips at rate λ_j/ε. Jumps are generated by thinning a
//! homogeneous Poisson clock of rate Λ = e^{b sup|H|}/ε per particle, each
//! particle drawing from its own counter-based random stream.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::{evolve_star, spin_discrepancy, StarPaths};
use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::geometry::{Spin, UnitVector, Vec3};
use crate::magnetics::{intensity, intensity_bound, SpinRateParams};
use crate::particles::{validate_config, BoxDomain, Hypotheses, ParticleConfiguration};
use crate::stokes::{angular_velocities, decoupled_angular_velocity, DriftMode, MobilityConstants};

/// Largest tolerated |‖ξ‖ - 1| after an integrator step, before projection.
pub const RENORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Default number of checkpoints on [0, T].
pub const DEFAULT_CHECKPOINTS: usize = 101;

const MAX_HALVINGS: u32 = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationParams {
    pub rates: SpinRateParams,
    pub mobility: MobilityConstants,
    pub field: FieldSpec,
    /// Set over which sup|H| is taken for the thinning majorant.
    pub domain: BoxDomain,
    /// When set, configurations are checked before simulating.
    pub hypotheses: Option<Hypotheses>,
    /// Checkpoint times; must lie in [0, T] and increase.
    pub output_times: Vec<f64>,
    /// Upper bound on the integrator step; the effective step is
    /// min(dt_max, ε/4).
    pub dt_max: f64,
    /// Keep the full list of jump times (ensembles usually do not need it).
    pub record_jumps: bool,
}

impl SimulationParams {
    pub fn new(rates: SpinRateParams, field: FieldSpec, horizon: f64) -> Self {
        SimulationParams {
            rates,
            mobility: MobilityConstants::default(),
            field,
            domain: BoxDomain::default(),
            hypotheses: Some(Hypotheses::default()),
            output_times: uniform_grid(horizon, DEFAULT_CHECKPOINTS),
            dt_max: 0.01,
            record_jumps: true,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.dt_max.min(self.rates.epsilon / 4.0)
    }

    /// Per-particle majorant Λ of the flip rate.
    pub fn majorant(&self) -> f64 {
        intensity_bound(&self.rates, self.field.sup_norm(&self.domain)) / self.rates.epsilon
    }
}

/// `n` equally spaced times from 0 to `horizon` inclusive.
pub fn uniform_grid(horizon: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![horizon],
        _ => (0..n).map(|k| horizon * k as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub orientations: Vec<UnitVector>,
    pub spins: Vec<Spin>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Strictly increasing; empty unless jumps were recorded.
    pub jump_times: Vec<f64>,
    pub jump_particle: Vec<usize>,
    pub jump_count: usize,
    /// Thinning proposals, accepted or not.
    pub proposals: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub final_state: Checkpoint,
}

/// ξ̇ for every particle.
pub fn drift(
    config: &ParticleConfiguration,
    field: &FieldSpec,
    mobility: &MobilityConstants,
    t: f64,
    mode: DriftMode,
) -> Vec<Vec3> {
    angular_velocities(config, field, mobility, t, mode)
}

fn renormalize(v: Vec3, t: f64) -> Result<UnitVector> {
    let n = v.norm();
    let deficit = (n - 1.0).abs();
    if !(deficit <= RENORMALIZATION_TOLERANCE) {
        return Err(Error::StepSize { t, deficit });
    }
    UnitVector::normalize(v)
}

/// One RK4 step of a single orientation; stage states are projected back
/// to the sphere before the drift is evaluated.
fn rk4_unit<F>(xi: &UnitVector, t: f64, dt: f64, f: &F) -> Result<UnitVector>
where
    F: Fn(f64, &UnitVector) -> Vec3,
{
    let y = *xi.as_vec();
    let stage = |v: Vec3| UnitVector::normalize(v).unwrap_or(*xi);
    let k1 = f(t, xi);
    let k2 = f(t + dt / 2.0, &stage(y + k1 * (dt / 2.0)));
    let k3 = f(t + dt / 2.0, &stage(y + k2 * (dt / 2.0)));
    let k4 = f(t + dt, &stage(y + k3 * dt));
    renormalize(y + (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0), t)
}

/// Integrates one orientation from `t0` to `t1` with steps of at most `dt`,
/// halving the step when renormalization fails.
pub(crate) fn advance_unit<F>(xi: &UnitVector, t0: f64, t1: f64, dt: f64, f: &F) -> Result<UnitVector>
where
    F: Fn(f64, &UnitVector) -> Vec3,
{
    let mut xi = *xi;
    let mut t = t0;
    let mut h = dt;
    let mut halvings = 0;
    while t < t1 {
        let step = h.min(t1 - t);
        match rk4_unit(&xi, t, step, f) {
            Ok(next) => {
                xi = next;
                t = if t1 - t <= h { t1 } else { t + step };
            }
            Err(e @ Error::StepSize { .. }) => {
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    return Err(e);
                }
                h /= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(xi)
}

/// One RK4 step of the joint orientation ODE, spins held fixed.
pub fn flow_step(
    config: &mut ParticleConfiguration,
    field: &FieldSpec,
    mobility: &MobilityConstants,
    t: f64,
    dt: f64,
    mode: DriftMode,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("step size must be positive, got {dt}")));
    }
    if mode == DriftMode::Frozen {
        return Ok(());
    }
    let y: Vec<Vec3> = config.orientations.iter().map(|u| *u.as_vec()).collect();
    let mut scratch = config.clone();
    let mut eval = |t: f64, states: &[Vec3]| -> Vec<Vec3> {
        for (o, (s, y)) in scratch.orientations.iter_mut().zip(states.iter().zip(&y)) {
            *o = UnitVector::normalize(*s).unwrap_or_else(|_| UnitVector::normalize(*y).unwrap());
        }
        angular_velocities(&scratch, field, mobility, t, mode)
    };
    let axpy = |a: &[Vec3], k: &[Vec3], s: f64| -> Vec<Vec3> { a.iter().zip(k).map(|(a, k)| a + k * s).collect() };
    let k1 = eval(t, &y);
    let k2 = eval(t + dt / 2.0, &axpy(&y, &k1, dt / 2.0));
    let k3 = eval(t + dt / 2.0, &axpy(&y, &k2, dt / 2.0));
    let k4 = eval(t + dt, &axpy(&y, &k3, dt));
    let mut next = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        let v = y[i] + (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (dt / 6.0);
        next.push(renormalize(v, t)?);
    }
    config.orientations = next;
    Ok(())
}

/// Running state of one path.
struct PathState<'a> {
    config: ParticleConfiguration,
    params: &'a SimulationParams,
    mode: DriftMode,
    dt: f64,
    /// Time each orientation is current at. All equal unless the drift is
    /// decoupled, in which case particles are advanced lazily.
    clock: Vec<f64>,
}

impl PathState<'_> {
    fn advance_particle(&mut self, j: usize, s: f64) -> Result<()> {
        if self.clock[j] >= s {
            return Ok(());
        }
        match self.mode {
            DriftMode::Frozen => {}
            DriftMode::Decoupled => {
                let x = self.config.centers[j];
                let w = self.config.spins[j].value();
                let gamma = self.params.mobility.gamma;
                let field = &self.params.field;
                let f = |t: f64, xi: &UnitVector| decoupled_angular_velocity(gamma, w, xi, &field.value(t, &x));
                self.config.orientations[j] = advance_unit(&self.config.orientations[j], self.clock[j], s, self.dt, &f)?;
            }
            DriftMode::Interacting => return self.advance_all(s),
        }
        self.clock[j] = s;
        Ok(())
    }

    fn advance_all(&mut self, s: f64) -> Result<()> {
        if self.mode != DriftMode::Interacting {
            for j in 0..self.config.len() {
                self.advance_particle(j, s)?;
            }
            return Ok(());
        }
        let mut t = self.clock[0];
        let mut halvings = 0;
        while t < s {
            let rates = angular_velocities(&self.config, &self.params.field, &self.params.mobility, t, self.mode);
            let vmax = rates.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let mut h = self.dt;
            if vmax > 0.0 {
                h = h.min(0.1 / vmax);
            }
            h /= f64::powi(2.0, halvings);
            let step = h.min(s - t);
            let backup = self.config.orientations.clone();
            match flow_step(&mut self.config, &self.params.field, &self.params.mobility, t, step, self.mode) {
                Ok(()) => {
                    t = if s - t <= h { s } else { t + step };
                }
                Err(e @ Error::StepSize { .. }) => {
                    self.config.orientations = backup;
                    halvings += 1;
                    if halvings as u32 > MAX_HALVINGS {
                        return Err(e);
                    }
                }
                Err(e) => return Err(e),
            }
        }
        self.clock.iter_mut().for_each(|c| *c = s);
        Ok(())
    }

    fn snapshot(&mut self, t: f64) -> Result<Checkpoint> {
        self.advance_all(t)?;
        Ok(Checkpoint { t, orientations: self.config.orientations.clone(), spins: self.config.spins.clone() })
    }

    fn flip_rate(&self, j: usize, s: f64) -> f64 {
        let x = self.config.centers[j];
        let a = self.params.rates.b * self.params.field.value(s, &x).dot(self.config.orientations[j].as_vec());
        intensity(a, self.config.spins[j]) / self.params.rates.epsilon
    }
}

/// Candidate clock of particle `j`.
pub fn particle_stream(seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    rng
}

fn exponential(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    // 1 - U lies in (0, 1], so the log is finite
    -(1.0 - rng.random::<f64>()).ln() / rate
}

/// Earliest candidate time and its particle; ties go to the lowest index.
fn earliest(candidates: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (j, &c) in candidates.iter().enumerate() {
        if c < best.0 {
            best = (c, j);
        }
    }
    best
}

/// Next accepted jump after `t`, or `None` if none occurs before `horizon`.
///
/// Advances the orientations to each proposal time so that acceptance uses
/// rates on the true trajectory. `candidates[j]` holds particle j's next
/// proposal and is refreshed from `streams[j]`.
fn next_jump_inner(
    state: &mut PathState<'_>,
    candidates: &mut [f64],
    streams: &mut [ChaCha8Rng],
    horizon: f64,
    proposals: &mut usize,
    checkpoint_hook: &mut dyn FnMut(&mut PathState<'_>, f64) -> Result<()>,
) -> Result<Option<(f64, usize)>> {
    let bound = state.params.majorant();
    loop {
        let (s, j) = earliest(candidates);
        if s > horizon {
            return Ok(None);
        }
        checkpoint_hook(state, s)?;
        *proposals += 1;
        state.advance_particle(j, s)?;
        let rate = state.flip_rate(j, s);
        if rate > bound * (1.0 + 1e-12) {
            return Err(Error::MajorantViolated { rate, bound });
        }
        let u: f64 = streams[j].random();
        candidates[j] = s + exponential(&mut streams[j], bound);
        if u * bound < rate {
            return Ok(Some((s, j)));
        }
    }
}

/// Next accepted jump from a state at time `t`, drawing everything from
/// `rng`: proposals arrive at the pooled rate NΛ, each assigned to a
/// uniformly chosen particle. The orientations in `config` are advanced to
/// the returned time.
pub fn next_jump(
    config: &mut ParticleConfiguration,
    params: &SimulationParams,
    t: f64,
    mode: DriftMode,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let n = config.len();
    let bound = params.majorant();
    let mut state = PathState { config: config.clone(), params, mode, dt: params.step_size(), clock: vec![t; n] };
    let mut s = t;
    loop {
        s += exponential(rng, bound * n as f64);
        let j = rng.random_range(0..n);
        state.advance_particle(j, s)?;
        let rate = state.flip_rate(j, s);
        if rate > bound * (1.0 + 1e-12) {
            return Err(Error::MajorantViolated { rate, bound });
        }
        if rng.random::<f64>() * bound < rate {
            state.advance_all(s)?;
            *config = state.config;
            return Ok((s, j));
        }
    }
}

/// One trajectory on [0, `horizon`], deterministic in `seed`.
pub fn simulate_path(
    config: &ParticleConfiguration,
    params: &SimulationParams,
    horizon: f64,
    seed: u64,
    mode: DriftMode,
) -> Result<Trajectory> {
    params.rates.check()?;
    if !(horizon >= 0.0) {
        return Err(Error::Parameter("horizon must be nonnegative".into()));
    }
    if params.output_times.windows(2).any(|w| !(w[0] < w[1]))
        || params.output_times.iter().any(|&t| t < 0.0 || t > horizon)
    {
        return Err(Error::Parameter("output times must increase within [0, T]".into()));
    }
    if let Some(hyp) = &params.hypotheses {
        let report = validate_config(config, hyp);
        if !report.is_admissible() {
            return Err(Error::Infeasible(format!("configuration violates {:?}", report.violations)));
        }
    }
    let n = config.len();
    let bound = params.majorant();
    let mut state = PathState { config: config.clone(), params, mode, dt: params.step_size(), clock: vec![0.0; n] };
    let mut streams: Vec<ChaCha8Rng> = (0..n).map(|j| particle_stream(seed, j)).collect();
    let mut candidates: Vec<f64> = streams.iter_mut().map(|r| exponential(r, bound)).collect();

    let mut checkpoints = Vec::with_capacity(params.output_times.len());
    let mut next_out = 0usize;
    let times = &params.output_times;
    let mut hook = |st: &mut PathState<'_>, s: f64| -> Result<()> {
        while next_out < times.len() && times[next_out] < s {
            checkpoints.push(st.snapshot(times[next_out])?);
            next_out += 1;
        }
        Ok(())
    };

    let mut traj_times = Vec::new();
    let mut traj_particle = Vec::new();
    let mut jump_count = 0;
    let mut proposals = 0;
    while let Some((s, j)) = next_jump_inner(&mut state, &mut candidates, &mut streams, horizon, &mut proposals, &mut hook)? {
        state.config.spins[j] = state.config.spins[j].flipped();
        jump_count += 1;
        if params.record_jumps {
            traj_times.push(s);
            traj_particle.push(j);
        }
    }
    hook(&mut state, f64::INFINITY)?;
    let final_state = state.snapshot(horizon)?;
    Ok(Trajectory {
        jump_times: traj_times,
        jump_particle: traj_particle,
        jump_count,
        proposals,
        checkpoints,
        final_state,
    })
}

/// `m` paths with seeds `base_seed + k`, in run order.
pub fn run_paths(
    config: &ParticleConfiguration,
    params: &SimulationParams,
    horizon: f64,
    m: usize,
    base_seed: u64,
    mode: DriftMode,
) -> Result<Vec<Trajectory>> {
    (0..m)
        .into_par_iter()
        .map(|k| simulate_path(config, params, horizon, base_seed.wrapping_add(k as u64), mode))
        .collect()
}

/// Mean and standard error of a sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: impl IntoIterator<Item = f64>) -> Estimate {
        let xs: Vec<f64> = xs.into_iter().collect();
        let m = xs.len() as f64;
        if xs.is_empty() {
            return Estimate { mean: f64::NAN, stderr: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / m;
        if xs.len() < 2 {
            return Estimate { mean, stderr: f64::NAN };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        Estimate { mean, stderr: (var / m).sqrt() }
    }
}

/// Ensemble statistics at one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSlice {
    pub t: f64,
    /// ⟨σ_i⟩ per particle.
    pub spin_mean: Vec<Estimate>,
    /// P̂[σ_i = +1] per particle.
    pub p_up: Vec<Estimate>,
    /// ⟨ξ_i⟩ per particle.
    pub orientation_mean: Vec<[f64; 3]>,
    /// ⟨ξ_i · e₃⟩ per particle.
    pub orientation_e3: Vec<Estimate>,
    /// ⟨σ_i σ_j⟩ for the configured pairs.
    pub pair_product: Vec<Estimate>,
    /// Cov(σ_i, σ_j) for the configured pairs.
    pub covariance: Vec<Estimate>,
    /// |P̂[σ_i = +1] - m⁺(t, X_i, ξ*_i(t))| per particle.
    pub discrepancy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub runs: usize,
    pub pairs: Vec<(usize, usize)>,
    pub slices: Vec<TimeSlice>,
}

/// All pairs among the first four particles.
pub fn default_pairs(n: usize) -> Vec<(usize, usize)> {
    let k = n.min(4);
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            out.push((i, j));
        }
    }
    out
}

/// Moments of an ensemble of paths that share the same checkpoint grid.
pub fn summarize(
    paths: &[Trajectory],
    pairs: &[(usize, usize)],
    star: Option<&StarPaths>,
    rates: &SpinRateParams,
    field: &FieldSpec,
    n: usize,
) -> Result<EnsembleSummary> {
    if paths.len() < 2 {
        return Err(Error::Parameter("an ensemble needs at least two runs".into()));
    }
    let n_out = paths[0].checkpoints.len();
    for &(i, j) in pairs {
        if i >= n || j >= n {
            return Err(Error::Parameter(format!("pair ({i}, {j}) out of range")));
        }
    }
    let mut slices = Vec::with_capacity(n_out);
    for c in 0..n_out {
        let t = paths[0].checkpoints[c].t;
        let spin = |k: usize, i: usize| paths[k].checkpoints[c].spins[i].value();
        let runs = 0..paths.len();
        let spin_mean: Vec<Estimate> = (0..n).map(|i| Estimate::from_samples(runs.clone().map(|k| spin(k, i)))).collect();
        let p_up = spin_mean
            .iter()
            .map(|e| Estimate { mean: (1.0 + e.mean) / 2.0, stderr: e.stderr / 2.0 })
            .collect::<Vec<_>>();
        let orientation_mean = (0..n)
            .map(|i| {
                let s: Vec3 = runs.clone().map(|k| *paths[k].checkpoints[c].orientations[i].as_vec()).sum();
                (s / paths.len() as f64).into()
            })
            .collect();
        let orientation_e3 = (0..n)
            .map(|i| Estimate::from_samples(runs.clone().map(|k| paths[k].checkpoints[c].orientations[i].as_vec().z)))
            .collect();
        let pair_product = pairs
            .iter()
            .map(|&(i, j)| Estimate::from_samples(runs.clone().map(|k| spin(k, i) * spin(k, j))))
            .collect();
        let covariance = pairs
            .iter()
            .map(|&(i, j)| {
                let (mi, mj) = (spin_mean[i].mean, spin_mean[j].mean);
                let m = paths.len() as f64;
                let e = Estimate::from_samples(runs.clone().map(|k| (spin(k, i) - mi) * (spin(k, j) - mj)));
                // unbiased sample covariance
                Estimate { mean: e.mean * m / (m - 1.0), stderr: e.stderr }
            })
            .collect();
        let discrepancy = match star {
            Some(sp) => {
                let freq: Vec<f64> = p_up.iter().map(|e| e.mean).collect();
                spin_discrepancy(&freq, sp, rates, field, t)?.values
            }
            None => Vec::new(),
        };
        slices.push(TimeSlice {
            t,
            spin_mean,
            p_up,
            orientation_mean,
            orientation_e3,
            pair_product,
            covariance,
            discrepancy,
        });
    }
    Ok(EnsembleSummary { runs: paths.len(), pairs: pairs.to_vec(), slices })
}

/// `m` independent paths summarized on the checkpoint grid, including the
/// spin discrepancy against the fast-flip orientation paths.
pub fn run_ensemble(
    config: &ParticleConfiguration,
    params: &SimulationParams,
    horizon: f64,
    m: usize,
    base_seed: u64,
    mode: DriftMode,
) -> Result<EnsembleSummary> {
    if m < 2 {
        return Err(Error::Parameter(format!("an ensemble needs M >= 2, got {m}")));
    }
    let mut quiet = params.clone();
    quiet.record_jumps = false;
    let paths = run_paths(config, &quiet, horizon, m, base_seed, mode)?;
    let star = evolve_star(config, &params.rates, &params.field, params.mobility.gamma, &params.output_times, params.dt_max)?;
    summarize(&paths, &default_pairs(config.len()), Some(&star), &params.rates, &params.field, config.len())
}

/// Test functions of the weak-form check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestFunction {
    One,
    Sigma1,
    Xi1E3,
    Sigma1Sigma2,
    Sigma1Xi1E3,
}

impl TestFunction {
    pub const CATALOGUE: [&'static str; 5] = ["one", "sigma1", "xi1_e3", "sigma1_sigma2", "sigma1_xi1_e3"];

    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "one" => Ok(TestFunction::One),
            "sigma1" => Ok(TestFunction::Sigma1),
            "xi1_e3" => Ok(TestFunction::Xi1E3),
            "sigma1_sigma2" => Ok(TestFunction::Sigma1Sigma2),
            "sigma1_xi1_e3" => Ok(TestFunction::Sigma1Xi1E3),
            other => Err(Error::UnknownTestFunction(other.to_string())),
        }
    }

    fn min_particles(self) -> usize {
        match self {
            TestFunction::Sigma1Sigma2 => 2,
            _ => 1,
        }
    }

    pub fn eval(self, xi: &[UnitVector], sigma: &[Spin]) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::Sigma1 => sigma[0].value(),
            TestFunction::Xi1E3 => xi[0].as_vec().z,
            TestFunction::Sigma1Sigma2 => sigma[0].value() * sigma[1].value(),
            TestFunction::Sigma1Xi1E3 => sigma[0].value() * xi[0].as_vec().z,
        }
    }

    /// Generator applied to the test function at the given state:
    /// V · ∇_ξ φ + (1/ε) Σ_i λ_i (φ ∘ τ_i - φ).
    pub fn generator(
        self,
        state: &Checkpoint,
        config: &ParticleConfiguration,
        params: &SimulationParams,
        mode: DriftMode,
    ) -> f64 {
        let t = state.t;
        let rate = |i: usize| {
            let a = params.rates.b * params.field.value(t, &config.centers[i]).dot(state.orientations[i].as_vec());
            intensity(a, state.spins[i]) / params.rates.epsilon
        };
        let drift1 = || {
            let mut c = config.clone();
            c.orientations = state.orientations.clone();
            c.spins = state.spins.clone();
            match mode {
                DriftMode::Interacting => drift(&c, &params.field, &params.mobility, t, mode)[0],
                DriftMode::Frozen => Vector3::zeros(),
                DriftMode::Decoupled => crate::stokes::angular_velocity(&c, &params.field, &params.mobility, t, 0, mode),
            }
        };
        let s1 = state.spins[0].value();
        match self {
            TestFunction::One => 0.0,
            TestFunction::Sigma1 => rate(0) * (-2.0 * s1),
            TestFunction::Xi1E3 => drift1().z,
            TestFunction::Sigma1Sigma2 => {
                let p = s1 * state.spins[1].value();
                (rate(0) + rate(1)) * (-2.0 * p)
            }
            TestFunction::Sigma1Xi1E3 => {
                let z = state.orientations[0].as_vec().z;
                s1 * drift1().z + rate(0) * (-2.0 * s1 * z)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Residual {
    pub value: f64,
    pub stderr: f64,
    /// The two terms whose difference is the residual.
    pub time_derivative: f64,
    pub generator: f64,
}

/// Weak-form check at time `t`: the central difference
/// (φ(Z(t+dt)) - φ(Z(t-dt)))/(2dt) minus (Lφ)(Z(t)), averaged over `m`
/// paths. The per-path differences give the standard error.
#[allow(clippy::too_many_arguments)]
pub fn generator_residual(
    config: &ParticleConfiguration,
    params: &SimulationParams,
    test_fn: &str,
    t: f64,
    dt: f64,
    m: usize,
    base_seed: u64,
    mode: DriftMode,
) -> Result<Residual> {
    let phi = TestFunction::parse(test_fn)?;
    if config.len() < phi.min_particles() {
        return Err(Error::Parameter(format!("test function `{test_fn}` needs more particles")));
    }
    if !(dt > 0.0 && t - dt >= 0.0) {
        return Err(Error::Parameter("need 0 < dt <= t".into()));
    }
    if m < 2 {
        return Err(Error::Parameter("need at least two runs".into()));
    }
    let mut p = params.clone();
    p.output_times = vec![t - dt, t, t + dt];
    p.record_jumps = false;
    let paths = run_paths(config, &p, t + dt, m, base_seed, mode)?;
    let terms: Vec<(f64, f64)> = paths
        .par_iter()
        .map(|path| {
            let [a, b, c] = [&path.checkpoints[0], &path.checkpoints[1], &path.checkpoints[2]];
            let fd = (phi.eval(&c.orientations, &c.spins) - phi.eval(&a.orientations, &a.spins)) / (2.0 * dt);
            (fd, phi.generator(b, config, &p, mode))
        })
        .collect();
    let d = Estimate::from_samples(terms.iter().map(|(fd, g)| fd - g));
    let fd = terms.iter().map(|x| x.0).sum::<f64>() / m as f64;
    let g = terms.iter().map(|x| x.1).sum::<f64>() / m as f64;
    Ok(Residual { value: d.mean, stderr: d.stderr, time_derivative: fd, generator: g })
}
