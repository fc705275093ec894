//! Configuration admissibility plus numerical self-checks of the kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{sphere_point, Mat3, Vec3};
use crate::particles::{validate_config, AdmissibilityReport};
use crate::stokes::{grad_oseen, oseen, PointSource, SingularitySet};

use super::config::ExperimentConfig;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelChecks {
    pub probes: usize,
    /// max |Φ(λx) - Φ(x)/λ| / |Φ(x)/λ| over probes and scalings.
    pub homogeneity: f64,
    /// max relative deviation of ∂Φ from central differences.
    pub gradient: f64,
    /// max |div ũ| by central differences for a random superposition.
    pub divergence: f64,
}

impl KernelChecks {
    pub fn passed(&self) -> bool {
        self.homogeneity <= 1e-12 && self.gradient <= 1e-7 && self.divergence <= 1e-5
    }
}

fn max_abs(m: &Mat3) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn random_point(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec3 {
    let dir = *sphere_point(rng.random(), rng.random()).as_vec();
    dir * rng.random_range(lo..hi)
}

/// Homogeneity, finite-difference gradient and divergence checks at
/// `probes` random points.
pub fn kernel_checks(probes: usize, seed: u64) -> Result<KernelChecks> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut homogeneity: f64 = 0.0;
    let mut gradient: f64 = 0.0;
    for _ in 0..probes {
        let x = random_point(&mut rng, 0.05, 2.0);
        let phi = oseen(&x)?;
        for lambda in [0.5, 2.0, 7.3] {
            let scaled = oseen(&(x * lambda))?;
            homogeneity = homogeneity.max(max_abs(&(scaled - phi / lambda)) / max_abs(&(phi / lambda)));
        }
        let g = grad_oseen(&x)?;
        let h = 1e-4 * x.norm();
        let scale = g.max_abs();
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let fd = (oseen(&(x + e))? - oseen(&(x - e))?) / (2.0 * h);
            gradient = gradient.max(max_abs(&(fd - g.0[k])) / scale);
        }
    }
    let sources: Vec<PointSource> = (0..8)
        .map(|_| {
            let a = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            PointSource {
                center: random_point(&mut rng, 0.0, 0.5),
                force: random_point(&mut rng, 0.0, 1.0),
                stresslet: a,
            }
        })
        .collect();
    let set = SingularitySet { sources, clamp_radius: 1e-3 };
    let mut divergence: f64 = 0.0;
    let mut checked = 0;
    while checked < probes {
        let x = random_point(&mut rng, 0.0, 1.5);
        if set.sources.iter().any(|s| (x - s.center).norm() < 0.1) {
            continue;
        }
        checked += 1;
        let h = 1e-6;
        let div: f64 = (0..3)
            .map(|k| {
                let mut e = Vec3::zeros();
                e[k] = h;
                (set.velocity(&(x + e))[k] - set.velocity(&(x - e))[k]) / (2.0 * h)
            })
            .sum();
        divergence = divergence.max(div.abs());
    }
    Ok(KernelChecks { probes, homogeneity, gradient, divergence })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub config_hash: String,
    pub n: usize,
    pub radius: f64,
    pub phi: f64,
    pub admissibility: AdmissibilityReport,
    pub kernels: KernelChecks,
}

/// Builds the configuration and runs every check; sampling failures are
/// returned as errors.
pub fn validate(cfg: &ExperimentConfig, probes: usize) -> Result<ValidationReport> {
    let config = cfg.build_configuration()?;
    Ok(ValidationReport {
        config_hash: cfg.hash(),
        n: config.len(),
        radius: config.radius,
        phi: config.volume_fraction(),
        admissibility: validate_config(&config, &cfg.particles.hypotheses),
        kernels: kernel_checks(probes, 7)?,
    })
}
