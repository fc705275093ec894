//! Stokes fundamental solution, point-singularity flows, particle angular
//! velocities, the effective fluid velocity, and interaction diagnostics.
//!
//! The finite-N fluid is represented by the superposition ũ_N = Σ ṽ_j of
//! one force-plus-stresslet singularity per particle,
//!
//! ```text
//! ṽ_j(x) = Φ(x - X_j) F_j + ∇Φ(x - X_j) : S_j,
//! ```
//!
//! with (∇Φ : S)_i = Σ_jk ∂_k Φ_ij S_jk. Velocity gradients use the
//! convention `G[(i, l)] = ∂_l u_i`, so a rigid rotation u = ω × x has
//! `G ξ = ω × ξ`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::geometry::{axial_from_skew, project_tangent, Mat3, UnitVector, Vec3};
use crate::magnetics::{magnetic_load, ShapeCoupling, SpinRateParams};
use crate::particles::ParticleConfiguration;
use crate::quadrature::ball_rule;

const INV_8PI: f64 = 1.0 / (8.0 * PI);

/// Distances below this are treated as the singular point.
pub const SINGULAR_DISTANCE: f64 = 1e-12;

/// Rotational resistance constants of the reference particle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityConstants {
    pub gamma: f64,
    pub gamma_bar: f64,
    #[serde(default)]
    pub shape: ShapeCoupling,
}

impl Default for MobilityConstants {
    fn default() -> Self {
        sphere_mobility()
    }
}

impl MobilityConstants {
    pub fn check(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.gamma_bar > 0.0) {
            return Err(Error::Parameter("gamma and gamma_bar must be positive".into()));
        }
        Ok(())
    }
}

/// Unit ball: γ = γ̄ = |𝓑|/(8π) = 1/6 and 𝓡 = 0.
pub fn sphere_mobility() -> MobilityConstants {
    MobilityConstants { gamma: 1.0 / 6.0, gamma_bar: 1.0 / 6.0, shape: ShapeCoupling::default() }
}

/// How particles feel each other's flow.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMode {
    /// Orientations do not move.
    Frozen,
    /// Each particle rotates as if alone in the fluid.
    #[default]
    Decoupled,
    /// Adds the rotation induced at X_i by every other particle's singularity.
    Interacting,
}

impl std::str::FromStr for DriftMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(DriftMode::Frozen),
            "decoupled" => Ok(DriftMode::Decoupled),
            "interacting" => Ok(DriftMode::Interacting),
            other => Err(Error::Config(format!("unknown drift mode `{other}`"))),
        }
    }
}

fn check_regular(x: &Vec3) -> Result<f64> {
    let r = x.norm();
    if !(r > SINGULAR_DISTANCE) {
        return Err(Error::Singular { distance: r });
    }
    Ok(r)
}

/// Φ(x) = (1/8π)(I/|x| + x⊗x/|x|³).
pub fn oseen(x: &Vec3) -> Result<Mat3> {
    let r = check_regular(x)?;
    Ok(oseen_unchecked(x, r))
}

#[inline]
fn oseen_unchecked(x: &Vec3, r: f64) -> Mat3 {
    let r3 = r * r * r;
    (Matrix3::identity() / r + x * x.transpose() / r3) * INV_8PI
}

/// ∇Φ(x): entry `[k][(i, j)] = ∂_k Φ_ij(x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelGradient(pub [Mat3; 3]);

impl KernelGradient {
    /// (∇Φ : S)_i = Σ_jk ∂_k Φ_ij S_jk.
    pub fn contract(&self, s: &Mat3) -> Vec3 {
        let mut out = Vector3::zeros();
        for k in 0..3 {
            out += self.0[k] * s.column(k);
        }
        out
    }

    /// Σ_i ∂_i Φ_ij, the divergence of each column.
    pub fn divergence(&self) -> Vec3 {
        Vector3::from_fn(|j, _| (0..3).map(|i| self.0[i][(i, j)]).sum())
    }

    pub fn scale(&self, s: f64) -> KernelGradient {
        KernelGradient([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn max_abs_diff(&self, other: &KernelGradient) -> f64 {
        (0..3).map(|k| (self.0[k] - other.0[k]).abs().max()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        (0..3).map(|k| self.0[k].abs().max()).fold(0.0, f64::max)
    }
}

/// ∂_k Φ_ij = (1/8π)(-δ_ij x_k + δ_ik x_j + δ_jk x_i)/|x|³ - (3/8π) x_i x_j x_k/|x|⁵.
pub fn grad_oseen(x: &Vec3) -> Result<KernelGradient> {
    let r = check_regular(x)?;
    Ok(grad_oseen_unchecked(x, r))
}

fn grad_oseen_unchecked(x: &Vec3, r: f64) -> KernelGradient {
    let r3 = r * r * r;
    let r5 = r3 * r * r;
    let mut g = [Matrix3::zeros(); 3];
    for (k, gk) in g.iter_mut().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                let mut v = -3.0 * x[i] * x[j] * x[k] / r5;
                if i == j {
                    v -= x[k] / r3;
                }
                if i == k {
                    v += x[j] / r3;
                }
                if j == k {
                    v += x[i] / r3;
                }
                gk[(i, j)] = v * INV_8PI;
            }
        }
    }
    KernelGradient(g)
}

/// ∂_l ∂_k Φ_ij contracted with S over (j, k): returns `[(i, l)]`.
fn stresslet_gradient_unchecked(x: &Vec3, r: f64, s: &Mat3) -> Mat3 {
    let r2 = r * r;
    let r3 = r2 * r;
    let r5 = r3 * r2;
    let r7 = r5 * r2;
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for l in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                for k in 0..3 {
                    let sjk = s[(j, k)];
                    if sjk == 0.0 {
                        continue;
                    }
                    let h = -d(i, j) * (d(k, l) / r3 - 3.0 * x[k] * x[l] / r5)
                        + (d(i, k) * d(j, l) + d(j, k) * d(i, l)) / r3
                        - 3.0 * (d(i, k) * x[j] + d(j, k) * x[i]) * x[l] / r5
                        - 3.0 * (d(i, l) * x[j] * x[k] + d(j, l) * x[i] * x[k] + d(k, l) * x[i] * x[j]) / r5
                        + 15.0 * x[i] * x[j] * x[k] * x[l] / r7;
                    acc += h * sjk;
                }
            }
            out[(i, l)] = acc * INV_8PI;
        }
    }
    out
}

fn stokeslet_gradient_unchecked(x: &Vec3, r: f64, f: &Vec3) -> Mat3 {
    let g = grad_oseen_unchecked(x, r);
    // [(i, l)] = Σ_j ∂_l Φ_ij F_j
    Matrix3::from_columns(&[g.0[0] * f, g.0[1] * f, g.0[2] * f])
}

/// ṽ_j(x) = Φ(x - X_j) F_j + ∇Φ(x - X_j) : S_j.
pub fn singularity_field(x: &Vec3, center: &Vec3, force: &Vec3, stresslet: &Mat3) -> Result<Vec3> {
    let d = x - center;
    let r = check_regular(&d)?;
    Ok(point_velocity(&d, r, force, stresslet))
}

/// ∇ṽ_j(x), `[(i, l)] = ∂_l ṽ_i`.
pub fn singularity_gradient(x: &Vec3, center: &Vec3, force: &Vec3, stresslet: &Mat3) -> Result<Mat3> {
    let d = x - center;
    let r = check_regular(&d)?;
    Ok(point_gradient(&d, r, force, stresslet))
}

#[inline]
fn point_velocity(d: &Vec3, r: f64, force: &Vec3, stresslet: &Mat3) -> Vec3 {
    let mut v = oseen_unchecked(d, r) * force;
    if *stresslet != Matrix3::zeros() {
        v += grad_oseen_unchecked(d, r).contract(stresslet);
    }
    v
}

#[inline]
fn point_gradient(d: &Vec3, r: f64, force: &Vec3, stresslet: &Mat3) -> Mat3 {
    stokeslet_gradient_unchecked(d, r, force) + stresslet_gradient_unchecked(d, r, stresslet)
}

/// ½ curl ṽ_j at displacement `d` from the source, in closed form.
///
/// The stokeslet contributes F × d/(8π|d|³); the skew part of S is a rotlet
/// with torque τ = -2 axial(S) and contributes (3d(d·τ)/|d|⁵ - τ/|d|³)/(16π);
/// the traceless symmetric part E contributes 3 d × (E d)/(8π|d|⁵).
#[inline]
fn point_rotation_rate(d: &Vec3, r: f64, force: &Vec3, stresslet: &Mat3) -> Vec3 {
    let r2 = r * r;
    let r3 = r2 * r;
    let r5 = r3 * r2;
    let tau = -2.0 * axial_from_skew(stresslet);
    let e = (stresslet + stresslet.transpose()) * 0.5;
    let mut w = force.cross(d) / r3;
    w += (d * (3.0 * d.dot(&tau) / r5) - tau / r3) * 0.5;
    if e != Matrix3::zeros() {
        w += d.cross(&(e * d)) * (3.0 / r5);
    }
    w * INV_8PI
}

/// Displacement from a source, pushed out to `clamp` if closer.
#[inline]
fn clamped(d: Vec3, clamp: f64) -> (Vec3, f64) {
    let r = d.norm();
    if r >= clamp {
        (d, r)
    } else if r > SINGULAR_DISTANCE {
        (d * (clamp / r), clamp)
    } else {
        (Vector3::new(0.0, 0.0, clamp), clamp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSource {
    pub center: Vec3,
    pub force: Vec3,
    pub stresslet: Mat3,
}

/// A superposition of force-plus-stresslet singularities, evaluated with
/// kernels frozen at `clamp_radius` inside that distance of a source.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularitySet {
    pub sources: Vec<PointSource>,
    pub clamp_radius: f64,
}

impl SingularitySet {
    /// The microscopic surrogate ũ_N at time `t`, clamped at 2r.
    pub fn microscopic(
        config: &ParticleConfiguration,
        field: &FieldSpec,
        shape: &ShapeCoupling,
        t: f64,
    ) -> Self {
        let vol = config.particle_volume();
        let sources = (0..config.len())
            .map(|j| {
                let x = config.centers[j];
                let (h, g) = field.eval(t, &x);
                let load = magnetic_load(vol, config.spins[j].value(), &config.orientations[j], &h, &g, shape);
                PointSource { center: x, force: load.force, stresslet: load.stresslet }
            })
            .collect();
        SingularitySet { sources, clamp_radius: 2.0 * config.radius }
    }

    /// Particle discretization of the effective fluid: every sample of f
    /// carries weight φ/M and spin weight m⁰(t, X, ξ).
    #[allow(clippy::too_many_arguments)]
    pub fn effective(
        cloud: &[(Vec3, UnitVector)],
        phi: f64,
        params: &SpinRateParams,
        field: &FieldSpec,
        shape: &ShapeCoupling,
        t: f64,
        clamp_radius: f64,
    ) -> Self {
        let w = phi / cloud.len().max(1) as f64;
        let sources = cloud
            .iter()
            .map(|(x, xi)| {
                let (h, g) = field.eval(t, x);
                let m0 = (params.b * h.dot(xi.as_vec())).tanh();
                let load = magnetic_load(w, m0, xi, &h, &g, shape);
                PointSource { center: *x, force: load.force, stresslet: load.stresslet }
            })
            .collect();
        SingularitySet { sources, clamp_radius }
    }

    pub fn velocity(&self, x: &Vec3) -> Vec3 {
        self.sources
            .iter()
            .map(|s| {
                let (d, r) = clamped(x - s.center, self.clamp_radius);
                point_velocity(&d, r, &s.force, &s.stresslet)
            })
            .sum()
    }

    pub fn gradient(&self, x: &Vec3) -> Mat3 {
        self.gradient_excluding(x, usize::MAX)
    }

    /// Σ_{j ≠ skip} ∇ṽ_j(x).
    pub fn gradient_excluding(&self, x: &Vec3, skip: usize) -> Mat3 {
        self.sources
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != skip)
            .map(|(_, s)| {
                let (d, r) = clamped(x - s.center, self.clamp_radius);
                point_gradient(&d, r, &s.force, &s.stresslet)
            })
            .sum()
    }

    /// Σ_{j ≠ skip} ½ curl ṽ_j(x).
    pub fn rotation_rate_excluding(&self, x: &Vec3, skip: usize) -> Vec3 {
        self.sources
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != skip)
            .map(|(_, s)| {
                let (d, r) = clamped(x - s.center, self.clamp_radius);
                point_rotation_rate(&d, r, &s.force, &s.stresslet)
            })
            .sum()
    }
}

/// ũ_N(t, x).
pub fn superposed_velocity(
    config: &ParticleConfiguration,
    field: &FieldSpec,
    shape: &ShapeCoupling,
    t: f64,
    x: &Vec3,
) -> Vec3 {
    SingularitySet::microscopic(config, field, shape, t).velocity(x)
}

/// ∇ũ_N(t, x).
pub fn superposed_gradient(
    config: &ParticleConfiguration,
    field: &FieldSpec,
    shape: &ShapeCoupling,
    t: f64,
    x: &Vec3,
) -> Mat3 {
    SingularitySet::microscopic(config, field, shape, t).gradient(x)
}

/// ξ̇_i of an isolated particle: σ_i γ P_{ξ_i⊥} H(t, X_i).
#[inline]
pub fn decoupled_angular_velocity(gamma: f64, spin_weight: f64, xi: &UnitVector, h: &Vec3) -> Vec3 {
    project_tangent(xi, h) * (gamma * spin_weight)
}

/// ξ̇_i for particle `i`.
///
/// The interacting mode adds (½ curl Σ_{j≠i} ṽ_j)(X_i) × ξ_i, the rotation
/// the other particles' flow imposes on the rigid particle. The result is
/// projected onto the tangent plane at ξ_i.
pub fn angular_velocity(
    config: &ParticleConfiguration,
    field: &FieldSpec,
    mobility: &MobilityConstants,
    t: f64,
    i: usize,
    mode: DriftMode,
) -> Vec3 {
    match mode {
        DriftMode::Frozen => Vector3::zeros(),
        DriftMode::Decoupled => {
            let h = field.value(t, &config.centers[i]);
            decoupled_angular_velocity(mobility.gamma, config.spins[i].value(), &config.orientations[i], &h)
        }
        DriftMode::Interacting => {
            let set = SingularitySet::microscopic(config, field, &mobility.shape, t);
            interacting_velocity(config, field, mobility, t, &set, i)
        }
    }
}

fn interacting_velocity(
    config: &ParticleConfiguration,
    field: &FieldSpec,
    mobility: &MobilityConstants,
    t: f64,
    set: &SingularitySet,
    i: usize,
) -> Vec3 {
    let xi = &config.orientations[i];
    let h = field.value(t, &config.centers[i]);
    let own = decoupled_angular_velocity(mobility.gamma, config.spins[i].value(), xi, &h);
    let omega = set.rotation_rate_excluding(&config.centers[i], i);
    project_tangent(xi, &(own + omega.cross(xi.as_vec())))
}

/// ξ̇ for all particles at once; the interacting mode shares one
/// singularity set across targets.
pub fn angular_velocities(
    config: &ParticleConfiguration,
    field: &FieldSpec,
    mobility: &MobilityConstants,
    t: f64,
    mode: DriftMode,
) -> Vec<Vec3> {
    match mode {
        DriftMode::Frozen => vec![Vector3::zeros(); config.len()],
        DriftMode::Decoupled => (0..config.len())
            .map(|i| angular_velocity(config, field, mobility, t, i, mode))
            .collect(),
        DriftMode::Interacting => {
            let set = SingularitySet::microscopic(config, field, &mobility.shape, t);
            (0..config.len())
                .map(|i| interacting_velocity(config, field, mobility, t, &set, i))
                .collect()
        }
    }
}

/// (1/N) Σ_i |ξ̇_i(interacting) - ξ̇_i(decoupled)|² at a fixed state.
pub fn decoupling_gap(config: &ParticleConfiguration, field: &FieldSpec, mobility: &MobilityConstants, t: f64) -> f64 {
    let a = angular_velocities(config, field, mobility, t, DriftMode::Interacting);
    let b = angular_velocities(config, field, mobility, t, DriftMode::Decoupled);
    a.iter().zip(&b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / config.len().max(1) as f64
}

/// u(t, x) of the effective Stokes system, with f represented by the
/// sample cloud `(X_j, ξ_j)`.
#[allow(clippy::too_many_arguments)]
pub fn effective_velocity(
    cloud: &[(Vec3, UnitVector)],
    phi: f64,
    params: &SpinRateParams,
    field: &FieldSpec,
    shape: &ShapeCoupling,
    t: f64,
    x: &Vec3,
    clamp_radius: f64,
) -> Vec3 {
    SingularitySet::effective(cloud, phi, params, field, shape, t, clamp_radius).velocity(x)
}

/// Default effective-velocity regularization radius.
pub const EFFECTIVE_CLAMP: f64 = 1e-6;

/// ‖a - b‖_{Lᵖ(B₁(x₀))} by product Gauss quadrature with `nodes` points per
/// direction (radius, polar angle, azimuth).
pub fn lp_ball_norm<A, B>(field_a: A, field_b: B, p: f64, center: &Vec3, nodes: usize) -> Result<f64>
where
    A: Fn(&Vec3) -> Vec3,
    B: Fn(&Vec3) -> Vec3,
{
    if !(p > 1.0 && p < 1.5) {
        return Err(Error::Parameter(format!("p must lie in (1, 3/2), got {p}")));
    }
    if nodes == 0 {
        return Err(Error::Parameter("quadrature needs at least one node".into()));
    }
    let integral: f64 = ball_rule(center, 1.0, nodes)
        .iter()
        .map(|(x, w)| w * (field_a(x) - field_b(x)).norm().powf(p))
        .sum();
    Ok(integral.powf(1.0 / p))
}

/// Default quadrature resolution per direction.
pub const DEFAULT_QUADRATURE_NODES: usize = 24;

/// 𝒮_n = sup_i Σ_j d_ij^(-n) with d_ii = d_min.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InteractionSum {
    pub order: u32,
    pub value: f64,
    /// Scale of the expected bound: N for n = 2, N^(4/3) for n = 4.
    pub reference: f64,
}

/// `d_min` defaults to the smallest pairwise distance (or 1 for N = 1).
pub fn interaction_sums(centers: &[Vec3], order: u32, d_min: Option<f64>) -> Result<InteractionSum> {
    if centers.is_empty() {
        return Err(Error::Parameter("interaction sums need at least one center".into()));
    }
    if order != 2 && order != 4 {
        return Err(Error::Parameter(format!("interaction sums are defined for n = 2 or 4, got {order}")));
    }
    let n = centers.len();
    let d_min = match d_min {
        Some(d) => d,
        None => {
            let mut m = f64::INFINITY;
            for i in 0..n {
                for j in i + 1..n {
                    m = m.min((centers[i] - centers[j]).norm());
                }
            }
            if m.is_finite() {
                m
            } else {
                1.0
            }
        }
    };
    if !(d_min > 0.0) {
        return Err(Error::Parameter("d_min must be positive".into()));
    }
    let e = order as i32;
    let value = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = if i == j { d_min } else { (centers[i] - centers[j]).norm() };
                    d.powi(-e)
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let reference = if order == 2 { n as f64 } else { (n as f64).powf(4.0 / 3.0) };
    Ok(InteractionSum { order, value, reference })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sphere_point, Spin};
    use crate::particles::UNIT_BALL_VOLUME;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn fd_grad_oseen(x: &Vec3, h: f64) -> KernelGradient {
        let mut g = [Matrix3::zeros(); 3];
        for (k, gk) in g.iter_mut().enumerate() {
            let mut e = Vector3::zeros();
            e[k] = h;
            *gk = (oseen(&(x + e)).unwrap() - oseen(&(x - e)).unwrap()) / (2.0 * h);
        }
        KernelGradient(g)
    }

    #[test]
    fn oseen_at_e1() {
        let m = oseen(&Vector3::x()).unwrap();
        assert_relative_eq!(m[(0, 0)], 1.0 / (4.0 * PI), epsilon = 1e-16);
        assert_relative_eq!(m[(1, 1)], 1.0 / (8.0 * PI), epsilon = 1e-16);
        assert_relative_eq!(m[(0, 0)], 0.07957747154594767, epsilon = 1e-16);
        assert_eq!(m[(0, 1)], 0.0);
    }

    #[test]
    fn oseen_symmetry_and_homogeneity() {
        let x = Vector3::new(0.3, -1.1, 0.7);
        let m = oseen(&x).unwrap();
        assert_eq!(m, m.transpose());
        assert_eq!(m, oseen(&-x).unwrap());
        assert_relative_eq!(oseen(&(2.0 * x)).unwrap(), m / 2.0, epsilon = 1e-17);
    }

    #[test]
    fn singular_inputs_are_rejected() {
        assert!(matches!(oseen(&Vector3::zeros()), Err(Error::Singular { .. })));
        assert!(matches!(grad_oseen(&Vector3::new(1e-13, 0.0, 0.0)), Err(Error::Singular { .. })));
        assert!(singularity_field(&Vector3::x(), &Vector3::x(), &Vector3::z(), &Matrix3::zeros()).is_err());
    }

    #[test]
    fn grad_oseen_matches_finite_differences() {
        let x = Vector3::new(1.0, 2.0, 2.0);
        let exact = grad_oseen(&x).unwrap();
        let fd = fd_grad_oseen(&x, 1e-4);
        assert!(exact.max_abs_diff(&fd) / exact.max_abs() < 1e-7);
    }

    #[test]
    fn grad_oseen_homogeneity_and_divergence() {
        let x = Vector3::new(-0.4, 0.9, 0.25);
        let g = grad_oseen(&x).unwrap();
        let g2 = grad_oseen(&(2.0 * x)).unwrap();
        assert!(g2.max_abs_diff(&g.scale(0.25)) < 1e-15);
        assert!(g.divergence().norm() < 1e-15);
    }

    #[test]
    fn singularity_field_examples() {
        let c = Vector3::new(0.1, 0.2, 0.3);
        let zero = singularity_field(&(c + Vector3::x()), &c, &Vector3::zeros(), &Matrix3::zeros()).unwrap();
        assert_eq!(zero, Vector3::zeros());
        let v = singularity_field(&(c + Vector3::x()), &c, &Vector3::z(), &Matrix3::zeros()).unwrap();
        assert_relative_eq!(v, Vector3::new(0.0, 0.0, 1.0 / (8.0 * PI)), epsilon = 1e-16);
    }

    #[test]
    fn singularity_field_decay() {
        let f = Vector3::new(0.3, -0.2, 0.5);
        let s = crate::geometry::wedge(&Vector3::new(0.1, 0.4, 0.2), &Vector3::z());
        let x = Vector3::new(0.6, 0.1, -0.3);
        let o = Vector3::zeros();
        let zero_s = Matrix3::zeros();
        let near = singularity_field(&x, &o, &f, &zero_s).unwrap().norm();
        let far = singularity_field(&(2.0 * x), &o, &f, &zero_s).unwrap().norm();
        assert_relative_eq!(far, near / 2.0, epsilon = 1e-15);
        let near = singularity_field(&x, &o, &Vector3::zeros(), &s).unwrap().norm();
        let far = singularity_field(&(2.0 * x), &o, &Vector3::zeros(), &s).unwrap().norm();
        assert_relative_eq!(far, near / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn skew_stresslet_is_a_rotlet() {
        let torque = Vector3::new(0.2, -0.5, 0.3);
        let s = -0.5 * crate::geometry::skew_from_axial(&torque);
        let x = Vector3::new(0.4, 0.3, -0.8);
        let v = singularity_field(&x, &Vector3::zeros(), &Vector3::zeros(), &s).unwrap();
        let rotlet = torque.cross(&x) / (8.0 * PI * x.norm().powi(3));
        assert_relative_eq!(v, rotlet, epsilon = 1e-15);
    }

    fn random_source(rng: &mut impl Rng) -> (Vec3, Mat3) {
        let f = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let s = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        // traceless, otherwise arbitrary
        let s = s - Matrix3::identity() * (s.trace() / 3.0);
        (f, s)
    }

    #[test]
    fn gradients_and_rotation_rates_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let h = 1e-5;
        for _ in 0..50 {
            let (f, s) = random_source(&mut rng);
            let x = Vector3::new(rng.random_range(0.3..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let o = Vector3::zeros();
            let g = singularity_gradient(&x, &o, &f, &s).unwrap();
            let mut fd = Matrix3::zeros();
            for l in 0..3 {
                let mut e = Vector3::zeros();
                e[l] = h;
                let d = (singularity_field(&(x + e), &o, &f, &s).unwrap()
                    - singularity_field(&(x - e), &o, &f, &s).unwrap())
                    / (2.0 * h);
                fd.set_column(l, &d);
            }
            assert!((g - fd).norm() / g.norm() < 1e-7, "{g} vs {fd}");
            // ½ curl from the closed form agrees with the skew part of ∇v
            let w = point_rotation_rate(&x, x.norm(), &f, &s);
            assert_relative_eq!(w, axial_from_skew(&g), epsilon = 1e-12);
            assert!(g.trace().abs() < 1e-12);
        }
    }

    fn two_particle_config(spins: [Spin; 2], xi: [UnitVector; 2], sep: f64, r: f64) -> ParticleConfiguration {
        ParticleConfiguration::new(
            vec![Vector3::new(-sep / 2.0, 0.0, 0.0), Vector3::new(sep / 2.0, 0.0, 0.0)],
            xi.to_vec(),
            spins.to_vec(),
            r,
            UNIT_BALL_VOLUME,
        )
        .unwrap()
    }

    #[test]
    fn superposition_reduces_to_single_field() {
        let c = ParticleConfiguration::new(
            vec![Vector3::new(0.1, 0.0, 0.0)],
            vec![UnitVector::from_spherical(0.8, 0.3)],
            vec![Spin::Up],
            0.05,
            UNIT_BALL_VOLUME,
        )
        .unwrap();
        let field = FieldSpec::linear_gradient(Matrix3::new(0.1, 0.2, 0.0, 0.2, 0.0, 0.1, 0.0, 0.1, -0.1), Vector3::z());
        let shape = ShapeCoupling::default();
        let x = Vector3::new(0.5, 0.4, -0.2);
        let load = crate::magnetics::force_torque_stresslet(&c, &field, &shape, 0, 0.0);
        let direct = singularity_field(&x, &c.centers[0], &load.force, &load.stresslet).unwrap();
        assert_relative_eq!(superposed_velocity(&c, &field, &shape, 0.0, &x), direct, epsilon = 1e-16);
    }

    #[test]
    fn zero_field_gives_zero_flow() {
        let c = two_particle_config([Spin::Up, Spin::Down], [UnitVector::E1, UnitVector::E2], 0.4, 0.02);
        let v = superposed_velocity(&c, &FieldSpec::zero(), &ShapeCoupling::default(), 0.0, &Vector3::new(0.1, 0.3, 0.0));
        assert_eq!(v, Vector3::zeros());
    }

    #[test]
    fn mirror_pair_has_no_axial_velocity_at_midpoint() {
        let xi0 = UnitVector::from_spherical(0.6, 0.0);
        let xi1 = UnitVector::try_new(Vector3::new(-xi0.as_vec().x, 0.0, xi0.as_vec().z)).unwrap();
        let field = FieldSpec::default();
        let shape = ShapeCoupling::default();
        let c = two_particle_config([Spin::Up, Spin::Down], [xi0, xi1], 0.5, 0.02);
        let v = superposed_velocity(&c, &field, &shape, 0.0, &Vector3::zeros());
        assert!(v.x.abs() < 1e-18, "{v}");
        // with equal spins the pair is a mirror image of itself under x → -x,
        // so the axial component vanishes on the whole mid-plane
        let c = two_particle_config([Spin::Up, Spin::Up], [xi0, xi1], 0.5, 0.02);
        for p in [Vector3::new(0.0, 0.1, 0.2), Vector3::new(0.0, -0.3, 0.05)] {
            let v = superposed_velocity(&c, &field, &shape, 0.0, &p);
            assert!(v.x.abs() < 1e-15 * v.norm(), "{v}");
            assert!(v.norm() > 0.0);
        }
    }

    #[test]
    fn sphere_mobility_values() {
        let m = sphere_mobility();
        assert_relative_eq!(m.gamma, 1.0 / 6.0);
        assert_relative_eq!(m.gamma, UNIT_BALL_VOLUME / (8.0 * PI), epsilon = 1e-15);
        assert_eq!(m.gamma, m.gamma_bar);
        assert!(m.shape.is_zero());
    }

    #[test]
    fn decoupled_angular_velocity_examples() {
        let m = sphere_mobility();
        let mk = |xi: UnitVector| {
            ParticleConfiguration::new(vec![Vector3::zeros()], vec![xi], vec![Spin::Up], 0.01, UNIT_BALL_VOLUME)
                .unwrap()
        };
        let field = FieldSpec::default();
        let w = angular_velocity(&mk(UnitVector::E3), &field, &m, 0.0, 0, DriftMode::Decoupled);
        assert_eq!(w, Vector3::zeros());
        let xi = UnitVector::normalize(Vector3::new(1.0, 0.0, 1.0)).unwrap();
        let w = angular_velocity(&mk(xi), &field, &m, 0.0, 0, DriftMode::Decoupled);
        assert_relative_eq!(w, Vector3::new(-1.0 / 12.0, 0.0, 1.0 / 12.0), epsilon = 1e-16);
        // a lone particle feels no interaction
        let wi = angular_velocity(&mk(xi), &field, &m, 0.0, 0, DriftMode::Interacting);
        assert_relative_eq!(wi, w, epsilon = 1e-16);
    }

    #[test]
    fn isolated_sphere_rotation_matches_its_own_rotlet() {
        // the rotlet of particle i evaluated at its own surface scale gives
        // ω = T/(8π r³), and ω × ξ must equal σγ P H
        let r: f64 = 0.03;
        let xi = UnitVector::from_spherical(1.0, 0.4);
        let h = Vector3::z();
        let torque = xi.as_vec().cross(&h) * (r.powi(3) * UNIT_BALL_VOLUME);
        let omega = torque / (8.0 * PI * r.powi(3));
        let expected = decoupled_angular_velocity(sphere_mobility().gamma, 1.0, &xi, &h);
        assert_relative_eq!(omega.cross(xi.as_vec()), expected, epsilon = 1e-15);
    }

    #[test]
    fn angular_velocity_is_tangent_in_both_modes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let n = 20;
        let centers = crate::particles::sample_positions(n, &Default::default(), 0.01, 3).unwrap();
        let xi: Vec<_> = (0..n).map(|_| sphere_point(rng.random(), rng.random())).collect();
        let spins: Vec<_> = (0..n).map(|_| if rng.random::<bool>() { Spin::Up } else { Spin::Down }).collect();
        let c = ParticleConfiguration::new(centers, xi, spins, 0.01, UNIT_BALL_VOLUME).unwrap();
        let field = FieldSpec::linear_gradient(Matrix3::new(0.3, 0.1, 0.0, 0.1, -0.2, 0.0, 0.0, 0.0, -0.1), Vector3::new(0.2, 0.0, 1.0));
        for mode in [DriftMode::Decoupled, DriftMode::Interacting] {
            let all = angular_velocities(&c, &field, &sphere_mobility(), 0.2, mode);
            for (i, w) in all.iter().enumerate() {
                assert!(w.dot(c.orientations[i].as_vec()).abs() < 1e-12);
                let single = angular_velocity(&c, &field, &sphere_mobility(), 0.2, i, mode);
                assert_relative_eq!(*w, single, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn effective_velocity_cases() {
        let p = SpinRateParams::new(0.1, 1.0).unwrap();
        let shape = ShapeCoupling::default();
        let cloud = vec![(Vector3::new(0.1, 0.0, 0.0), UnitVector::from_spherical(0.7, 0.1))];
        let x = Vector3::new(0.5, 0.5, 0.1);
        assert_eq!(effective_velocity(&cloud, 1e-3, &p, &FieldSpec::zero(), &shape, 0.0, &x, EFFECTIVE_CLAMP), Vector3::zeros());
        // orientation orthogonal to a uniform field: m⁰ = 0
        let flat = vec![(Vector3::zeros(), UnitVector::E1)];
        assert_eq!(effective_velocity(&flat, 1e-3, &p, &FieldSpec::default(), &shape, 0.0, &x, EFFECTIVE_CLAMP), Vector3::zeros());
        // one sample reproduces φ × the singularity field with σ → m⁰
        let field = FieldSpec::default();
        let phi = 2e-3;
        let (xc, xi) = cloud[0];
        let h = field.value(0.0, &xc);
        let m0 = (p.b * h.dot(xi.as_vec())).tanh();
        let load = magnetic_load(phi, m0, &xi, &h, &field.gradient(0.0, &xc), &shape);
        let direct = singularity_field(&x, &xc, &load.force, &load.stresslet).unwrap();
        let u = effective_velocity(&cloud, phi, &p, &field, &shape, 0.0, &x, EFFECTIVE_CLAMP);
        assert_relative_eq!(u, direct, epsilon = 1e-18);
        // linear in φ
        let half = effective_velocity(&cloud, phi / 2.0, &p, &field, &shape, 0.0, &x, EFFECTIVE_CLAMP);
        assert!((half * 2.0 - u).norm() <= 1e-10 * u.norm());
    }

    #[test]
    fn lp_norm_cases() {
        let zero = |_: &Vec3| Vector3::zeros();
        let c = Vector3::new(0.0, 0.3, -0.4);
        let a = |x: &Vec3| Vector3::new(x.x.sin(), x.y * x.z, 1.0);
        assert_eq!(lp_ball_norm(a, a, 1.2, &c, 8).unwrap(), 0.0);
        let k = Vector3::new(0.3, -0.4, 1.2);
        let v = lp_ball_norm(move |_| k, zero, 1.25, &c, 10).unwrap();
        assert_relative_eq!(v, k.norm() * (4.0 * PI / 3.0).powf(1.0 / 1.25), epsilon = 1e-12);
        assert!(lp_ball_norm(a, zero, 1.5, &c, 8).is_err());
        assert!(lp_ball_norm(a, zero, 1.0, &c, 8).is_err());
    }

    #[test]
    fn lp_norm_converges_under_refinement() {
        let zero = |_: &Vec3| Vector3::zeros();
        let f = |x: &Vec3| Vector3::new((2.0 * x.x).cos(), x.y * x.y - x.z, (x.x + x.y).exp());
        let c = Vector3::new(0.1, 0.0, 0.2);
        let coarse = lp_ball_norm(f, zero, 1.3, &c, 24).unwrap();
        let fine = lp_ball_norm(f, zero, 1.3, &c, 48).unwrap();
        assert!((coarse - fine).abs() / fine < 0.01);
    }

    #[test]
    fn interaction_sum_cases() {
        let one = interaction_sums(&[Vector3::zeros()], 2, Some(0.5)).unwrap();
        assert_relative_eq!(one.value, 4.0);
        let two = interaction_sums(&[Vector3::zeros(), Vector3::x()], 2, Some(1.0)).unwrap();
        assert_relative_eq!(two.value, 2.0);
        assert!(interaction_sums(&[Vector3::zeros()], 3, None).is_err());
    }

    #[test]
    fn interaction_sum_scaling_on_grids() {
        // N = k³ points on a grid of spacing N^(-1/3): 𝒮₂/N and 𝒮₄/N^(4/3) stay bounded
        let mut ratios2 = Vec::new();
        let mut ratios4 = Vec::new();
        for k in [4usize, 5, 6, 8] {
            let n = k.pow(3);
            let h = (n as f64).powf(-1.0 / 3.0);
            let mut pts = Vec::new();
            for a in 0..k {
                for b in 0..k {
                    for c in 0..k {
                        pts.push(Vector3::new(a as f64, b as f64, c as f64) * h);
                    }
                }
            }
            let s2 = interaction_sums(&pts, 2, None).unwrap();
            let s4 = interaction_sums(&pts, 4, None).unwrap();
            ratios2.push(s2.value / s2.reference);
            ratios4.push(s4.value / s4.reference);
        }
        let spread = |r: &[f64]| r.iter().cloned().fold(0.0, f64::max) / r.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread(&ratios2) < 1.5, "{ratios2:?}");
        assert!(spread(&ratios4) < 1.5, "{ratios4:?}");
    }
}
