//! Dimensional parameters and their reduction to (ε, b, T̄, r).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particles::UNIT_BALL_VOLUME;

/// SI inputs. Defaults are the typical magnetite-in-water values with
/// H̄ = 1 A/m and L = 1 m.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalParams {
    /// Viscosity ν (kg m⁻¹ s⁻¹).
    pub viscosity: f64,
    /// Saturation magnetization m_s (A m⁻¹).
    pub saturation_magnetization: f64,
    pub mu0: f64,
    /// Anisotropy energy density K (J m⁻³).
    pub anisotropy: f64,
    pub boltzmann: f64,
    /// Θ (K).
    pub temperature: f64,
    /// Elementary flip time τ₀ (s).
    pub tau0: f64,
    /// ř (m).
    pub particle_radius: f64,
    /// H̄ (A m⁻¹).
    pub field_scale: f64,
    /// L (m).
    pub length_scale: f64,
    /// |𝓑| of the reference body.
    pub reference_volume: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            viscosity: 1e-3,
            saturation_magnetization: 1e6,
            mu0: 4e-7 * std::f64::consts::PI,
            anisotropy: 1e3,
            boltzmann: 1.380649e-23,
            temperature: 300.0,
            tau0: 1e-9,
            particle_radius: 1e-8,
            field_scale: 1.0,
            length_scale: 1.0,
            reference_volume: UNIT_BALL_VOLUME,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nondimensional {
    pub epsilon: f64,
    pub b: f64,
    /// T̄ in seconds.
    pub time_scale: f64,
    pub r: f64,
}

impl PhysicalParams {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    fn check(&self) -> Result<()> {
        let named = [
            ("viscosity", self.viscosity),
            ("saturation_magnetization", self.saturation_magnetization),
            ("mu0", self.mu0),
            ("anisotropy", self.anisotropy),
            ("boltzmann", self.boltzmann),
            ("temperature", self.temperature),
            ("tau0", self.tau0),
            ("particle_radius", self.particle_radius),
            ("field_scale", self.field_scale),
            ("length_scale", self.length_scale),
            ("reference_volume", self.reference_volume),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// T̄ = ν/(μ₀ m_s H̄), b = ř³|𝓑|μ₀ m_s H̄/(k_BΘ),
/// ε = (τ₀/T̄) exp(-ř³|𝓑|K/(k_BΘ)), r = ř/L.
pub fn nondimensionalize(p: &PhysicalParams) -> Result<Nondimensional> {
    p.check()?;
    let vol = p.particle_radius.powi(3) * p.reference_volume;
    let thermal = p.boltzmann * p.temperature;
    let time_scale = p.viscosity / (p.mu0 * p.saturation_magnetization * p.field_scale);
    Ok(Nondimensional {
        epsilon: p.tau0 / time_scale * (-vol * p.anisotropy / thermal).exp(),
        b: vol * p.mu0 * p.saturation_magnetization * p.field_scale / thermal,
        time_scale,
        r: p.particle_radius / p.length_scale,
    })
}
