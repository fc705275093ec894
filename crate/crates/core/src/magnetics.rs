//! Spin-flip intensities, local-equilibrium spin fractions, and the
//! magnetic force, torque and stresslet carried by each particle.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::geometry::{axial_from_skew, rotation_to, wedge, Mat3, Spin, UnitVector, Vec3};
use crate::particles::ParticleConfiguration;

/// ε (inverse flip-rate scale) and b (field coupling).
///
/// b = 0 (field-blind flips) and ε ≥ 1 are accepted for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinRateParams {
    pub epsilon: f64,
    pub b: f64,
}

impl SpinRateParams {
    pub fn new(epsilon: f64, b: f64) -> Result<Self> {
        let p = SpinRateParams { epsilon, b };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Parameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.b >= 0.0) || !self.b.is_finite() {
            return Err(Error::Parameter(format!("b must be nonnegative, got {}", self.b)));
        }
        Ok(())
    }
}

/// λ^σ as a function of a = b H·ζ.
#[inline]
pub fn intensity(a: f64, spin: Spin) -> f64 {
    (-spin.value() * a).exp()
}

/// (m⁺, m⁻) as a function of a = b H·ζ, via the logistic form.
#[inline]
pub fn equilibrium_fractions(a: f64) -> (f64, f64) {
    (logistic(2.0 * a), logistic(-2.0 * a))
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn coupling(params: &SpinRateParams, field: &FieldSpec, t: f64, x: &Vec3, zeta: &UnitVector) -> f64 {
    params.b * field.value(t, x).dot(zeta.as_vec())
}

/// λ^σ(t, x, ζ) = exp(-σ b H(t,x)·ζ). The flip rate is this divided by ε.
pub fn lambda_pm(
    params: &SpinRateParams,
    field: &FieldSpec,
    t: f64,
    x: &Vec3,
    zeta: &UnitVector,
    spin: Spin,
) -> f64 {
    intensity(coupling(params, field, t, x, zeta), spin)
}

/// Local-equilibrium spin fractions (m⁺, m⁻).
pub fn m_pm(params: &SpinRateParams, field: &FieldSpec, t: f64, x: &Vec3, zeta: &UnitVector) -> (f64, f64) {
    equilibrium_fractions(coupling(params, field, t, x, zeta))
}

/// Average equilibrium spin m⁰ = tanh(b H·ζ).
pub fn m0(params: &SpinRateParams, field: &FieldSpec, t: f64, x: &Vec3, zeta: &UnitVector) -> f64 {
    coupling(params, field, t, x, zeta).tanh()
}

/// Shape coupling 𝓡(ζ): skew(3) → sym₀(3).
///
/// Stored in the body frame of the reference particle (symmetry axis e₃)
/// as a 5×3 table acting on the axial vector w of a skew matrix A
/// (A x = w × x) and returning coordinates in the traceless-symmetric basis
///
/// E₀ = e₁⊗e₂ + e₂⊗e₁, E₁ = e₁⊗e₃ + e₃⊗e₁, E₂ = e₂⊗e₃ + e₃⊗e₂,
/// E₃ = e₁⊗e₁ - e₃⊗e₃, E₄ = e₂⊗e₂ - e₃⊗e₃.
///
/// In the lab frame 𝓡(ζ)A = R (𝓡₀ (Rᵀ A R)) Rᵀ with R = R_ζ. Spheres have
/// 𝓡 = 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct ShapeCoupling {
    pub table: [[f64; 3]; 5],
}

impl From<Vec<f64>> for ShapeCoupling {
    fn from(v: Vec<f64>) -> Self {
        let mut table = [[0.0; 3]; 5];
        for (k, x) in v.into_iter().take(15).enumerate() {
            table[k / 3][k % 3] = x;
        }
        ShapeCoupling { table }
    }
}

impl From<ShapeCoupling> for Vec<f64> {
    fn from(s: ShapeCoupling) -> Vec<f64> {
        s.table.iter().flatten().copied().collect()
    }
}

impl ShapeCoupling {
    /// Reads the 15 row-major coefficients.
    pub fn from_coefficients(c: &[f64]) -> Result<Self> {
        if c.len() != 15 {
            return Err(Error::Config(format!("shape coupling needs 15 coefficients, got {}", c.len())));
        }
        Ok(ShapeCoupling::from(c.to_vec()))
    }

    pub fn is_zero(&self) -> bool {
        self.table.iter().flatten().all(|&x| x == 0.0)
    }

    fn basis(k: usize) -> Mat3 {
        let mut m = Matrix3::zeros();
        match k {
            0 => {
                m[(0, 1)] = 1.0;
                m[(1, 0)] = 1.0;
            }
            1 => {
                m[(0, 2)] = 1.0;
                m[(2, 0)] = 1.0;
            }
            2 => {
                m[(1, 2)] = 1.0;
                m[(2, 1)] = 1.0;
            }
            3 => {
                m[(0, 0)] = 1.0;
                m[(2, 2)] = -1.0;
            }
            _ => {
                m[(1, 1)] = 1.0;
                m[(2, 2)] = -1.0;
            }
        }
        m
    }

    /// 𝓡(ζ)A for skew A.
    pub fn apply(&self, zeta: &UnitVector, skew: &Mat3) -> Mat3 {
        if self.is_zero() {
            return Matrix3::zeros();
        }
        let r = rotation_to(zeta).expect("UnitVector is unit by construction");
        let w = axial_from_skew(&(r.transpose() * skew * r));
        let mut body = Matrix3::zeros();
        for (k, row) in self.table.iter().enumerate() {
            let c = row[0] * w.x + row[1] * w.y + row[2] * w.z;
            body += Self::basis(k) * c;
        }
        r * body * r.transpose()
    }
}

/// Point sources exerted by one particle on the fluid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MagneticLoad {
    pub force: Vec3,
    pub torque: Vec3,
    pub stresslet: Mat3,
}

/// Force, torque and stresslet of a particle with orientation ξ and spin
/// weight s (s = σ for the microscopic system, s = m⁰ for the effective one):
///
/// F = |𝓑ⱼ| s (∇H)ᵀ ξ, T = |𝓑ⱼ| s ξ × H, S = |𝓑ⱼ| s (Id + 𝓡(ξ))(ξ ∧ H).
pub fn magnetic_load(
    volume: f64,
    spin_weight: f64,
    xi: &UnitVector,
    h: &Vec3,
    grad_h: &Mat3,
    shape: &ShapeCoupling,
) -> MagneticLoad {
    let s = volume * spin_weight;
    let x = xi.as_vec();
    let w = wedge(x, h);
    MagneticLoad {
        force: grad_h.transpose() * x * s,
        torque: x.cross(h) * s,
        stresslet: (w + shape.apply(xi, &w)) * s,
    }
}

/// (F_j, T_j, S_j) for particle `j` of `config` at time `t`.
pub fn force_torque_stresslet(
    config: &ParticleConfiguration,
    field: &FieldSpec,
    shape: &ShapeCoupling,
    j: usize,
    t: f64,
) -> MagneticLoad {
    let x = &config.centers[j];
    let (h, g) = field.eval(t, x);
    magnetic_load(
        config.particle_volume(),
        config.spins[j].value(),
        &config.orientations[j],
        &h,
        &g,
        shape,
    )
}

/// e^(b sup|H|): bound on λ^± over the whole run.
pub fn intensity_bound(params: &SpinRateParams, sup_field: f64) -> f64 {
    (params.b * sup_field).exp()
}
