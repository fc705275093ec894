//! Particle configurations and the admissibility hypotheses on their
//! centers: containment in a compact box (H1), non-overlap with margin θ
//! (H2) and the N^(-1/3) separation (H3).

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sphere_point, Spin, UnitVector, Vec3};

/// Volume of the unit ball, the default reference particle.
pub const UNIT_BALL_VOLUME: f64 = 4.0 * PI / 3.0;

/// Axis-aligned box; the default is the unit cube centered at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for BoxDomain {
    fn default() -> Self {
        BoxDomain { min: [-0.5; 3], max: [0.5; 3] }
    }
}

impl BoxDomain {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).any(|k| !(max[k] > min[k])) {
            return Err(Error::Parameter("box must have positive extent on every axis".into()));
        }
        Ok(BoxDomain { min: min.into(), max: max.into() })
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|k| x[k] >= self.min[k] && x[k] <= self.max[k])
    }

    pub fn edges(&self) -> Vec3 {
        Vector3::from(self.max) - Vector3::from(self.min)
    }

    pub fn center(&self) -> Vec3 {
        (Vector3::from(self.max) + Vector3::from(self.min)) * 0.5
    }

    pub fn volume(&self) -> f64 {
        self.edges().product()
    }

    pub fn diameter(&self) -> f64 {
        self.edges().norm()
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vector3::zeros(); 8];
        for (m, c) in out.iter_mut().enumerate() {
            for k in 0..3 {
                c[k] = if (m >> k) & 1 == 1 { self.max[k] } else { self.min[k] };
            }
        }
        out
    }
}

/// Fixed centers together with the evolving orientations and spins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfiguration {
    pub centers: Vec<Vec3>,
    pub orientations: Vec<UnitVector>,
    pub spins: Vec<Spin>,
    pub radius: f64,
    /// |𝓑| of the reference particle.
    pub reference_volume: f64,
}

impl ParticleConfiguration {
    pub fn new(
        centers: Vec<Vec3>,
        orientations: Vec<UnitVector>,
        spins: Vec<Spin>,
        radius: f64,
        reference_volume: f64,
    ) -> Result<Self> {
        let n = centers.len();
        if n == 0 {
            return Err(Error::Parameter("a configuration needs at least one particle".into()));
        }
        if orientations.len() != n || spins.len() != n {
            return Err(Error::SizeMismatch(format!(
                "{} centers, {} orientations, {} spins",
                n,
                orientations.len(),
                spins.len()
            )));
        }
        if !(radius > 0.0) || !(reference_volume > 0.0) {
            return Err(Error::Parameter("radius and reference volume must be positive".into()));
        }
        Ok(ParticleConfiguration { centers, orientations, spins, radius, reference_volume })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// |𝓑_j| = r³ |𝓑|.
    pub fn particle_volume(&self) -> f64 {
        self.radius.powi(3) * self.reference_volume
    }

    /// φ = N r³ |𝓑|.
    pub fn volume_fraction(&self) -> f64 {
        self.len() as f64 * self.particle_volume()
    }
}

/// Radius giving volume fraction `phi` for `n` particles.
pub fn radius_for_volume_fraction(phi: f64, n: usize, reference_volume: f64) -> f64 {
    (phi / (n as f64 * reference_volume)).cbrt()
}

/// Constants of the admissibility hypotheses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hypotheses {
    pub theta: f64,
    pub c0: f64,
    #[serde(default)]
    pub domain: BoxDomain,
}

impl Default for Hypotheses {
    fn default() -> Self {
        Hypotheses { theta: 2.5, c0: 0.3, domain: BoxDomain::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "hypothesis")]
pub enum Violation {
    /// Center outside the compact set K.
    H1 { index: usize },
    /// |X_i - X_j| < 2θr.
    H2 { i: usize, j: usize, distance: f64 },
    /// |X_i - X_j| < c₀ N^(-1/3).
    H3 { i: usize, j: usize, distance: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub violations: Vec<Violation>,
    pub min_distance: Option<f64>,
}

impl AdmissibilityReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every violated hypothesis with the offending index or pair.
pub fn validate_positions(centers: &[Vec3], radius: f64, hyp: &Hypotheses) -> AdmissibilityReport {
    let n = centers.len();
    let mut report = AdmissibilityReport::default();
    for (i, x) in centers.iter().enumerate() {
        if !hyp.domain.contains(x) {
            report.violations.push(Violation::H1 { index: i });
        }
    }
    let non_overlap = 2.0 * hyp.theta * radius;
    let separation = hyp.c0 * (n as f64).powf(-1.0 / 3.0);
    let mut min_d = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let d = (centers[i] - centers[j]).norm();
            min_d = min_d.min(d);
            if d < non_overlap {
                report.violations.push(Violation::H2 { i, j, distance: d });
            }
            if d < separation {
                report.violations.push(Violation::H3 { i, j, distance: d });
            }
        }
    }
    if n > 1 {
        report.min_distance = Some(min_d);
    }
    report
}

pub fn validate_config(config: &ParticleConfiguration, hyp: &Hypotheses) -> AdmissibilityReport {
    validate_positions(&config.centers, config.radius, hyp)
}

const JITTER_FRACTION: f64 = 0.2;
const SAMPLE_RETRIES: u64 = 16;

/// Jittered-grid sampler for centers satisfying H1–H3.
///
/// The box is split into `k³` cells with `k = ceil(N^(1/3))`; N of them are
/// chosen by a seeded shuffle and each center is placed at its cell center
/// plus a uniform jitter of total width 20% of the cell edge. Adjacent
/// centers therefore stay at least 0.8 × edge apart, and the edge must be at
/// least max(c₀N^(-1/3), 2θr) / 0.8.
pub fn sample_positions(
    n: usize,
    hyp: &Hypotheses,
    radius: f64,
    seed: u64,
) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Err(Error::Parameter("N must be at least 1".into()));
    }
    let dom = &hyp.domain;
    if n == 1 {
        return Ok(vec![dom.center()]);
    }
    let required = (hyp.c0 * (n as f64).powf(-1.0 / 3.0)).max(2.0 * hyp.theta * radius);
    // guard against N^(1/3) rounding just below an integer
    let mut k = (n as f64).cbrt().round() as usize;
    while k.pow(3) < n {
        k += 1;
    }
    let edges = dom.edges();
    let cell = edges / k as f64;
    let min_cell = cell.min();
    if (1.0 - JITTER_FRACTION) * min_cell < required {
        return Err(Error::Infeasible(format!(
            "{n} centers need spacing {required:.4e} but a {k}³ grid in the box only gives {:.4e}",
            (1.0 - JITTER_FRACTION) * min_cell
        )));
    }
    let lo = Vector3::from(dom.min);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<usize> = (0..k.pow(3)).collect();
    cells.shuffle(&mut rng);
    let mut chosen: Vec<usize> = cells[..n].to_vec();
    chosen.sort_unstable();

    for _ in 0..SAMPLE_RETRIES {
        let centers: Vec<Vec3> = chosen
            .iter()
            .map(|&c| {
                let idx = [c % k, (c / k) % k, c / (k * k)];
                Vector3::from_fn(|a, _| {
                    let mid = lo[a] + (idx[a] as f64 + 0.5) * cell[a];
                    let jitter = rng.random_range(-0.5..0.5) * JITTER_FRACTION * cell[a];
                    mid + jitter
                })
            })
            .collect();
        if validate_positions(&centers, radius, hyp).is_admissible() {
            return Ok(centers);
        }
    }
    Err(Error::Infeasible(format!(
        "no admissible jittered grid for N = {n} after {SAMPLE_RETRIES} attempts"
    )))
}

/// Seeded i.i.d. uniform orientations.
pub fn sample_orientations(n: usize, seed: u64) -> Vec<UnitVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sphere_point(rng.random(), rng.random())).collect()
}
