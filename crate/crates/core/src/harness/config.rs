//! TOML experiment configuration.
//!
//! Every section rejects unknown keys, so the structs below are the schema.
//! Omitted sections take their defaults, which reproduce the shipped
//! reference experiment.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::geometry::{Spin, UnitVector};
use crate::magnetics::{m_pm, ShapeCoupling, SpinRateParams};
use crate::particles::{radius_for_volume_fraction, sample_orientations, sample_positions, Hypotheses, ParticleConfiguration, UNIT_BALL_VOLUME};
use crate::pdmp::{uniform_grid, SimulationParams};
use crate::stokes::{DriftMode, MobilityConstants, DEFAULT_QUADRATURE_NODES};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialOrientation {
    /// i.i.d. uniform on the sphere.
    #[default]
    Random,
    /// Uniform samples reflected into ζ·e₃ ≥ 0.
    UpperHemisphere,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialSpin {
    #[default]
    Up,
    Down,
    /// sign(H(0, X_i)·ξ_i), +1 on ties.
    Aligned,
    /// Independent draws with P[+1] = m⁺(0, X_i, ξ_i).
    EquilibriumSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticlesSection {
    pub n: usize,
    /// Volume fraction; determines the radius unless `radius` is given.
    pub phi: Option<f64>,
    pub radius: Option<f64>,
    pub reference_volume: f64,
    pub seed: u64,
    pub orientation: InitialOrientation,
    pub spin: InitialSpin,
    pub hypotheses: Hypotheses,
}

impl Default for ParticlesSection {
    fn default() -> Self {
        ParticlesSection {
            n: 64,
            phi: Some(1e-3),
            radius: None,
            reference_volume: UNIT_BALL_VOLUME,
            seed: 1,
            orientation: InitialOrientation::Random,
            spin: InitialSpin::Up,
            hypotheses: Hypotheses::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinSection {
    pub epsilon: f64,
    pub b: f64,
}

impl Default for SpinSection {
    fn default() -> Self {
        SpinSection { epsilon: 0.01, b: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub horizon: f64,
    pub checkpoints: usize,
    pub dt_max: f64,
    pub mode: DriftMode,
    pub seed: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection { horizon: 1.0, checkpoints: 101, dt_max: 0.01, mode: DriftMode::Decoupled, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub runs: usize,
    pub base_seed: u64,
    /// Pairs for ⟨σ_iσ_j⟩; empty means all pairs among the first four.
    pub pairs: Vec<(usize, usize)>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { runs: 200, base_seed: 1000, pairs: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Epsilon,
    Phi,
    #[serde(rename = "N")]
    N,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(SweepAxis::Epsilon),
            "phi" => Ok(SweepAxis::Phi),
            "N" | "n" => Ok(SweepAxis::N),
            other => Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Phi => "phi",
            SweepAxis::N => "N",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Observable {
    /// E[W₂²(f_N, f*_N)].
    #[serde(rename = "w2f")]
    W2F,
    /// E of the binned upper bound on W₂²(h_N, h²_N).
    #[serde(rename = "w2h")]
    W2H,
    /// E‖ũ_N - u‖_{Lᵖ(B₁)} / φ.
    #[serde(rename = "lp_u")]
    LpU,
    /// Mean Cov(σ_i, σ_j) over the configured pairs.
    #[serde(rename = "cov")]
    Cov,
    /// Σ_i D_i².
    #[serde(rename = "sumD")]
    SumD,
}

impl Observable {
    pub const ALL: [Observable; 5] = [Observable::W2F, Observable::W2H, Observable::LpU, Observable::Cov, Observable::SumD];

    pub fn id(self) -> &'static str {
        match self {
            Observable::W2F => "w2f",
            Observable::W2H => "w2h",
            Observable::LpU => "lp_u",
            Observable::Cov => "cov",
            Observable::SumD => "sumD",
        }
    }
}

impl std::str::FromStr for Observable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Observable::ALL
            .into_iter()
            .find(|o| o.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown observable `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub observables: Vec<Observable>,
    /// Evaluation times (on the checkpoint grid); empty means the horizon.
    pub times: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            axis: SweepAxis::Epsilon,
            values: vec![0.1, 0.05, 0.02, 0.01, 0.005],
            observables: vec![Observable::W2F],
            times: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSection {
    pub nodes: usize,
    pub p: f64,
    pub center: [f64; 3],
    /// Regularization radius of the effective velocity; unset means 2r.
    pub clamp: Option<f64>,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        QuadratureSection { nodes: DEFAULT_QUADRATURE_NODES, p: 1.2, center: [0.0; 3], clamp: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilitySection {
    pub gamma: f64,
    pub gamma_bar: f64,
    #[serde(default)]
    pub shape: Option<Vec<f64>>,
}

impl Default for MobilitySection {
    fn default() -> Self {
        MobilitySection { gamma: 1.0 / 6.0, gamma_bar: 1.0 / 6.0, shape: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub particles: ParticlesSection,
    pub spin: SpinSection,
    pub mobility: MobilitySection,
    pub field: FieldSpec,
    pub simulation: SimulationSection,
    pub ensemble: EnsembleSection,
    pub sweep: SweepSection,
    pub quadrature: QuadratureSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// First 16 hex digits of the SHA-256 of the normalized TOML.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn check(&self) -> Result<()> {
        let p = &self.particles;
        if p.n == 0 {
            return Err(Error::Config("particles.n must be at least 1".into()));
        }
        match (p.phi, p.radius) {
            (Some(_), Some(_)) => return Err(Error::Config("give either particles.phi or particles.radius, not both".into())),
            (None, None) => return Err(Error::Config("one of particles.phi or particles.radius is required".into())),
            (Some(phi), None) if !(phi > 0.0) => return Err(Error::Config("particles.phi must be positive".into())),
            (None, Some(r)) if !(r > 0.0) => return Err(Error::Config("particles.radius must be positive".into())),
            _ => {}
        }
        if !(p.reference_volume > 0.0) {
            return Err(Error::Config("particles.reference_volume must be positive".into()));
        }
        self.rates().map_err(|e| Error::Config(e.to_string()))?;
        self.mobility()?.check().map_err(|e| Error::Config(e.to_string()))?;
        if !self.field.is_finite() {
            return Err(Error::Config("field parameters must be finite".into()));
        }
        let s = &self.simulation;
        if !(s.horizon > 0.0) || !(s.dt_max > 0.0) || s.checkpoints < 2 {
            return Err(Error::Config("simulation needs horizon > 0, dt_max > 0 and at least two checkpoints".into()));
        }
        if !(self.quadrature.p > 1.0 && self.quadrature.p < 1.5) || self.quadrature.nodes == 0 {
            return Err(Error::Config("quadrature.p must lie in (1, 1.5) and nodes must be positive".into()));
        }
        if let Some(shape) = &self.mobility.shape {
            ShapeCoupling::from_coefficients(shape)?;
        }
        Ok(())
    }

    pub fn radius(&self) -> f64 {
        let p = &self.particles;
        match (p.radius, p.phi) {
            (Some(r), _) => r,
            (None, Some(phi)) => radius_for_volume_fraction(phi, p.n, p.reference_volume),
            (None, None) => unreachable!("checked at load"),
        }
    }

    /// φ = N r³|𝓑|.
    pub fn phi(&self) -> f64 {
        self.particles.n as f64 * self.radius().powi(3) * self.particles.reference_volume
    }

    pub fn rates(&self) -> Result<SpinRateParams> {
        SpinRateParams::new(self.spin.epsilon, self.spin.b)
    }

    pub fn mobility(&self) -> Result<MobilityConstants> {
        let shape = match &self.mobility.shape {
            Some(c) => ShapeCoupling::from_coefficients(c)?,
            None => ShapeCoupling::default(),
        };
        Ok(MobilityConstants { gamma: self.mobility.gamma, gamma_bar: self.mobility.gamma_bar, shape })
    }

    pub fn output_times(&self) -> Vec<f64> {
        uniform_grid(self.simulation.horizon, self.simulation.checkpoints)
    }

    pub fn simulation_params(&self) -> Result<SimulationParams> {
        let mut p = SimulationParams::new(self.rates()?, self.field.clone(), self.simulation.horizon);
        p.mobility = self.mobility()?;
        p.domain = self.particles.hypotheses.domain;
        p.hypotheses = Some(self.particles.hypotheses);
        p.output_times = self.output_times();
        p.dt_max = self.simulation.dt_max;
        Ok(p)
    }

    /// Deterministic initial configuration from the particle seed.
    pub fn build_configuration(&self) -> Result<ParticleConfiguration> {
        let p = &self.particles;
        let r = self.radius();
        let centers = sample_positions(p.n, &p.hypotheses, r, p.seed)?;
        let mut orientations = sample_orientations(p.n, p.seed.wrapping_add(1));
        if p.orientation == InitialOrientation::UpperHemisphere {
            for o in orientations.iter_mut() {
                let v = *o.as_vec();
                if v.z < 0.0 {
                    *o = UnitVector::normalize(nalgebra::Vector3::new(v.x, v.y, -v.z))?;
                }
            }
        }
        let rates = self.rates()?;
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_add(2));
        let spins = (0..p.n)
            .map(|i| match p.spin {
                InitialSpin::Up => Spin::Up,
                InitialSpin::Down => Spin::Down,
                InitialSpin::Aligned => {
                    let h = self.field.value(0.0, &centers[i]);
                    if h.dot(orientations[i].as_vec()) >= 0.0 {
                        Spin::Up
                    } else {
                        Spin::Down
                    }
                }
                InitialSpin::EquilibriumSample => {
                    let (mp, _) = m_pm(&rates, &self.field, 0.0, &centers[i], &orientations[i]);
                    if rng.random::<f64>() < mp {
                        Spin::Up
                    } else {
                        Spin::Down
                    }
                }
            })
            .collect();
        ParticleConfiguration::new(centers, orientations, spins, r, p.reference_volume)
    }

    /// Copy with one sweep axis set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        match axis {
            SweepAxis::Epsilon => c.spin.epsilon = value,
            SweepAxis::Phi => {
                c.particles.phi = Some(value);
                c.particles.radius = None;
            }
            SweepAxis::N => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::Config(format!("N must be a positive integer, got {value}")));
                }
                c.particles.n = value as usize;
            }
        }
        c.check()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn defaults_are_the_reference_experiment() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c.particles.n, 64);
        assert_relative_eq!(c.phi(), 1e-3, epsilon = 1e-15);
        assert_eq!(c.spin.b, 1.0);
        assert_eq!(c.field, FieldSpec::default());
        assert_eq!(c.simulation.horizon, 1.0);
        assert_eq!(c.ensemble.runs, 200);
        assert_eq!(c.sweep.values, vec![0.1, 0.05, 0.02, 0.01, 0.005]);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for bad in [
            "[particles]\nnn = 3",
            "[spin]\nepsilon = -1.0",
            "[field]\nkind = \"dipole\"",
            "[particles]\nradius = 0.01",
            "[quadrature]\np = 2.0",
            "[mobility]\ngamma = 0.1\ngamma_bar = 0.1\nshape = [1.0]",
        ] {
            let e = ExperimentConfig::from_toml_str(bad).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{bad}: {e}");
            assert_eq!(e.exit_code(), 2);
        }
        let ok = "[particles]\nphi = 1e-4\n\n[field]\nkind = \"rotating-in-plane\"\namplitude = 1.0\nomega = 2.0\n";
        let c = ExperimentConfig::from_toml_str(ok).unwrap();
        assert_relative_eq!(c.phi(), 1e-4, epsilon = 1e-16);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.spin.epsilon = 0.02;
        assert_ne!(a.hash(), b.hash());
        let round = ExperimentConfig::from_toml_str(&a.to_toml_string()).unwrap();
        assert_eq!(round, a);
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn configuration_is_deterministic_and_consistent() {
        let mut c = ExperimentConfig::default();
        c.particles.spin = InitialSpin::Aligned;
        let a = c.build_configuration().unwrap();
        assert_eq!(a, c.build_configuration().unwrap());
        assert_relative_eq!(a.volume_fraction(), c.phi(), epsilon = 1e-15);
        for (o, s) in a.orientations.iter().zip(&a.spins) {
            assert_eq!(*s == Spin::Up, o.as_vec().z >= 0.0);
        }
        c.particles.orientation = InitialOrientation::UpperHemisphere;
        c.particles.spin = InitialSpin::EquilibriumSample;
        let b = c.build_configuration().unwrap();
        assert!(b.orientations.iter().all(|o| o.as_vec().z >= 0.0));
    }

    #[test]
    fn axis_overrides() {
        let c = ExperimentConfig::default();
        assert_eq!(c.with_axis(SweepAxis::Epsilon, 0.05).unwrap().spin.epsilon, 0.05);
        assert_relative_eq!(c.with_axis(SweepAxis::Phi, 1e-4).unwrap().phi(), 1e-4, epsilon = 1e-16);
        assert_eq!(c.with_axis(SweepAxis::N, 27.0).unwrap().particles.n, 27);
        assert!(c.with_axis(SweepAxis::N, 2.5).is_err());
        assert!(c.with_axis(SweepAxis::Epsilon, 0.0).is_err());
    }
}
