//! The fast-flip limit: decoupled orientation paths ξ*, the measures built
//! from them, and the spin discrepancy against a simulated ensemble.

use std::io::{Read, Write};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::geometry::{project_tangent, Spin, UnitVector, Vec3};
use crate::magnetics::{equilibrium_fractions, SpinRateParams};
use crate::particles::ParticleConfiguration;
use crate::pdmp::{advance_unit, Checkpoint};

/// Checkpoint times closer than this are the same grid point.
pub const GRID_TOLERANCE: f64 = 1e-12;

/// Weight sums must be 1 to this tolerance.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

/// ξ̇* = γ m⁰(t, x, ζ) P_{ζ⊥} H(t, x).
pub fn effective_drift(rates: &SpinRateParams, gamma: f64, field: &FieldSpec, t: f64, x: &Vec3, zeta: &UnitVector) -> Vec3 {
    let h = field.value(t, x);
    let m0 = (rates.b * h.dot(zeta.as_vec())).tanh();
    project_tangent(zeta, &h) * (gamma * m0)
}

/// ξ*_i sampled on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StarPaths {
    pub times: Vec<f64>,
    pub centers: Vec<Vec3>,
    /// `orientations[k][i]` is ξ*_i(times[k]).
    pub orientations: Vec<Vec<UnitVector>>,
}

impl StarPaths {
    fn index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= GRID_TOLERANCE)
            .ok_or_else(|| Error::Parameter(format!("t = {t} is not on the checkpoint grid")))
    }

    /// Orientations at a grid time.
    pub fn at(&self, t: f64) -> Result<&[UnitVector]> {
        Ok(&self.orientations[self.index(t)?])
    }
}

/// Integrates each ξ*_i independently from the configuration's initial
/// orientations and samples at `times` (which must increase from ≥ 0).
pub fn evolve_star(
    config: &ParticleConfiguration,
    rates: &SpinRateParams,
    field: &FieldSpec,
    gamma: f64,
    times: &[f64],
    dt: f64,
) -> Result<StarPaths> {
    evolve_cloud(&config.centers, &config.orientations, rates, field, gamma, times, dt)
}

/// Pushes an arbitrary (X, ξ) cloud forward along the ξ* flow.
pub fn evolve_cloud(
    centers: &[Vec3],
    initial: &[UnitVector],
    rates: &SpinRateParams,
    field: &FieldSpec,
    gamma: f64,
    times: &[f64],
    dt: f64,
) -> Result<StarPaths> {
    if centers.len() != initial.len() {
        return Err(Error::SizeMismatch("centers and orientations differ in length".into()));
    }
    if times.windows(2).any(|w| !(w[0] < w[1])) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::Parameter("checkpoint times must increase from t >= 0".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Parameter("step size must be positive".into()));
    }
    let per_particle: Vec<Vec<UnitVector>> = centers
        .par_iter()
        .zip(initial.par_iter())
        .map(|(x, xi0)| {
            let f = |t: f64, z: &UnitVector| effective_drift(rates, gamma, field, t, x, z);
            let mut out = Vec::with_capacity(times.len());
            let mut xi = *xi0;
            let mut t = 0.0;
            for &s in times {
                xi = advance_unit(&xi, t, s, dt, &f)?;
                t = s;
                out.push(xi);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let orientations = (0..times.len()).map(|k| per_particle.iter().map(|p| p[k]).collect()).collect();
    Ok(StarPaths { times: times.to_vec(), centers: centers.to_vec(), orientations })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub position: Vec3,
    pub orientation: UnitVector,
    /// `None` for spin-marginalized measures.
    pub mark: Option<Spin>,
}

/// A finitely supported probability measure on K × S² (× {±1}).
#[derive(Clone, Debug, PartialEq)]
pub struct MarkedMeasure {
    pub atoms: Vec<Atom>,
    pub weights: Vec<f64>,
}

impl MarkedMeasure {
    pub fn new(atoms: Vec<Atom>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::SizeMismatch("atoms and weights differ in length".into()));
        }
        if atoms.is_empty() {
            return Err(Error::Parameter("a measure needs at least one atom".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Parameter("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE * (atoms.len() as f64).max(1.0) {
            return Err(Error::Parameter(format!("weights sum to {total}, not 1")));
        }
        Ok(MarkedMeasure { atoms, weights })
    }

    /// Equal weights 1/n.
    pub fn uniform(atoms: Vec<Atom>) -> Result<Self> {
        let n = atoms.len();
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    /// Empirical measure of a configuration, with or without spins.
    pub fn empirical(centers: &[Vec3], orientations: &[UnitVector], spins: Option<&[Spin]>) -> Result<Self> {
        if centers.len() != orientations.len() || spins.is_some_and(|s| s.len() != centers.len()) {
            return Err(Error::SizeMismatch("centers, orientations and spins differ in length".into()));
        }
        let atoms = (0..centers.len())
            .map(|i| Atom { position: centers[i], orientation: orientations[i], mark: spins.map(|s| s[i]) })
            .collect();
        Self::uniform(atoms)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn is_marked(&self) -> bool {
        self.atoms.iter().all(|a| a.mark.is_some())
    }

    pub fn is_mark_free(&self) -> bool {
        self.atoms.iter().all(|a| a.mark.is_none())
    }

    pub fn has_uniform_weights(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|x| (x - w).abs() <= 1e-15)
    }

    /// Σ w ς over marked atoms.
    pub fn spin_mean(&self) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| a.mark.map_or(0.0, |s| w * s.value()))
            .sum()
    }

    /// CSV with header x,y,z,zeta1,zeta2,zeta3,mark,weight; mark 0 means
    /// no spin.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "y", "z", "zeta1", "zeta2", "zeta3", "mark", "weight"])?;
        for (a, wt) in self.atoms.iter().zip(&self.weights) {
            let z = a.orientation.as_vec();
            let mark = a.mark.map_or(0, |s| if s == Spin::Up { 1 } else { -1 });
            wtr.write_record(&[
                a.position.x.to_string(),
                a.position.y.to_string(),
                a.position.z.to_string(),
                z.x.to_string(),
                z.y.to_string(),
                z.z.to_string(),
                mark.to_string(),
                wt.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            x: f64,
            y: f64,
            z: f64,
            zeta1: f64,
            zeta2: f64,
            zeta3: f64,
            mark: i8,
            weight: f64,
        }
        let mut rdr = csv::Reader::from_reader(r);
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            let mark = match row.mark {
                0 => None,
                1 => Some(Spin::Up),
                -1 => Some(Spin::Down),
                m => return Err(Error::Config(format!("mark must be -1, 0 or 1, got {m}"))),
            };
            atoms.push(Atom {
                position: Vector3::new(row.x, row.y, row.z),
                orientation: UnitVector::try_new(Vector3::new(row.zeta1, row.zeta2, row.zeta3))?,
                mark,
            });
            weights.push(row.weight);
        }
        Self::new(atoms, weights)
    }
}

/// f*_N(t): equal-weight atoms at (X_i, ξ*_i(t)).
pub fn build_f_star(paths: &StarPaths, t: f64) -> Result<MarkedMeasure> {
    MarkedMeasure::empirical(&paths.centers, paths.at(t)?, None)
}

/// Splits every atom of a mark-free measure into (+1, w m⁺) and (-1, w m⁻).
pub fn build_h(f: &MarkedMeasure, rates: &SpinRateParams, field: &FieldSpec, t: f64) -> Result<MarkedMeasure> {
    if !f.is_mark_free() {
        return Err(Error::Parameter("build_h needs a mark-free measure".into()));
    }
    let mut atoms = Vec::with_capacity(2 * f.len());
    let mut weights = Vec::with_capacity(2 * f.len());
    for (a, w) in f.atoms.iter().zip(&f.weights) {
        let (mp, mm) = equilibrium_fractions(rates.b * field.value(t, &a.position).dot(a.orientation.as_vec()));
        atoms.push(Atom { mark: Some(Spin::Up), ..*a });
        weights.push(w * mp);
        atoms.push(Atom { mark: Some(Spin::Down), ..*a });
        weights.push(w * mm);
    }
    MarkedMeasure::new(atoms, weights)
}

/// h¹_N(t): the simulated spins carried at the star orientations.
pub fn build_h1(state: &Checkpoint, initial: &[UnitVector], paths: &StarPaths) -> Result<MarkedMeasure> {
    let start = paths.orientations.first().zip(paths.times.first());
    match start {
        Some((xi0, &t0)) if t0.abs() <= GRID_TOLERANCE && xi0.as_slice() == initial => {}
        Some((_, &t0)) if t0.abs() > GRID_TOLERANCE => {
            return Err(Error::Parameter("star paths must include t = 0 to check initial data".into()))
        }
        _ => return Err(Error::Parameter("star paths and trajectory start from different data".into())),
    }
    if state.spins.len() != paths.centers.len() {
        return Err(Error::SizeMismatch("spin count differs from particle count".into()));
    }
    MarkedMeasure::empirical(&paths.centers, paths.at(state.t)?, Some(&state.spins))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Discrepancy {
    pub t: f64,
    /// D_i = |P̂[σ_i = +1] - m⁺(t, X_i, ξ*_i(t))|.
    pub values: Vec<f64>,
    /// Σ_i D_i².
    pub sum_sq: f64,
}

/// D_i from the plug-in frequencies P̂[σ_i = +1] at a grid time.
pub fn spin_discrepancy(
    p_up: &[f64],
    paths: &StarPaths,
    rates: &SpinRateParams,
    field: &FieldSpec,
    t: f64,
) -> Result<Discrepancy> {
    let xi = paths.at(t)?;
    if p_up.len() != xi.len() {
        return Err(Error::SizeMismatch("frequency count differs from particle count".into()));
    }
    let values: Vec<f64> = (0..xi.len())
        .map(|i| {
            let a = rates.b * field.value(t, &paths.centers[i]).dot(xi[i].as_vec());
            (p_up[i] - equilibrium_fractions(a).0).abs()
        })
        .collect();
    let sum_sq = values.iter().map(|d| d * d).sum();
    Ok(Discrepancy { t, values, sum_sq })
}
