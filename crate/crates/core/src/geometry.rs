//! Vectors on the unit sphere, spins, and the small amount of rotation
//! algebra the rest of the crate needs.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on |v| - 1 accepted by [`UnitVector::try_new`].
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// A point on S².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitVector(Vec3);

impl UnitVector {
    pub const E1: UnitVector = UnitVector(Vector3::new(1.0, 0.0, 0.0));
    pub const E2: UnitVector = UnitVector(Vector3::new(0.0, 1.0, 0.0));
    pub const E3: UnitVector = UnitVector(Vector3::new(0.0, 0.0, 1.0));

    /// Accepts `v` if it is unit length within [`UNIT_TOLERANCE`]. Vectors
    /// already unit to rounding are kept bit-for-bit so that serialized
    /// states read back unchanged; others are renormalized.
    pub fn try_new(v: Vec3) -> Result<Self> {
        let norm = v.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotUnit { norm });
        }
        if (norm - 1.0).abs() <= 1e-15 {
            return Ok(UnitVector(v));
        }
        Ok(UnitVector(v / norm))
    }

    /// Projects an arbitrary nonzero vector onto the sphere.
    pub fn normalize(v: Vec3) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(UnitVector(v / norm))
    }

    pub fn from_spherical(polar: f64, azimuth: f64) -> Self {
        let (st, ct) = polar.sin_cos();
        let (sp, cp) = azimuth.sin_cos();
        UnitVector(Vector3::new(st * cp, st * sp, ct))
    }

    #[inline]
    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }

    #[inline]
    pub fn into_inner(self) -> Vec3 {
        self.0
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }

    /// Polar angle measured from e₃.
    pub fn polar_angle(&self) -> f64 {
        self.0.z.clamp(-1.0, 1.0).acos()
    }
}

impl std::ops::Neg for UnitVector {
    type Output = UnitVector;
    fn neg(self) -> UnitVector {
        UnitVector(-self.0)
    }
}

impl TryFrom<[f64; 3]> for UnitVector {
    type Error = Error;
    fn try_from(a: [f64; 3]) -> Result<Self> {
        UnitVector::try_new(Vector3::from(a))
    }
}

impl From<UnitVector> for [f64; 3] {
    fn from(u: UnitVector) -> [f64; 3] {
        u.to_array()
    }
}

/// Magnetic spin state of one particle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Spin {
    Down,
    Up,
}

impl Spin {
    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Spin::Up => 1.0,
            Spin::Down => -1.0,
        }
    }

    #[inline]
    pub fn flipped(self) -> Spin {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }

    pub fn from_sign(x: f64) -> Spin {
        if x >= 0.0 {
            Spin::Up
        } else {
            Spin::Down
        }
    }
}

impl TryFrom<i8> for Spin {
    type Error = Error;
    fn try_from(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Spin::Up),
            -1 => Ok(Spin::Down),
            _ => Err(Error::Parameter(format!("spin must be +1 or -1, got {v}"))),
        }
    }
}

impl From<Spin> for i8 {
    fn from(s: Spin) -> i8 {
        match s {
            Spin::Up => 1,
            Spin::Down => -1,
        }
    }
}

impl fmt::Display for Spin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", i8::from(*self))
    }
}

/// Rotation R ∈ SO(3) with R e₃ = ζ.
///
/// Rodrigues rotation about e₃ × ζ by the angle between e₃ and ζ. When
/// e₃ × ζ vanishes numerically at the south pole the result is pinned to
/// diag(1, -1, -1), a rotation by π about e₁.
pub fn rotation_to(zeta: &UnitVector) -> Result<Mat3> {
    let z = UnitVector::try_new(*zeta.as_vec())?.into_inner();
    let c = z.z;
    // v = e3 × z, R = I + [v]x + [v]x² / (1 + c)
    let v = Vector3::new(-z.y, z.x, 0.0);
    let s2 = v.norm_squared();
    if c < 0.0 && s2 < 1e-30 {
        return Ok(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)));
    }
    // 1 + c loses all precision near the south pole; (1 - c)(1 + c) = s²
    let one_plus_c = if c < 0.0 { s2 / (1.0 - c) } else { 1.0 + c };
    let k = skew_from_axial(&v);
    Ok(Matrix3::identity() + k + k * k / one_plus_c)
}

/// v - (v·ζ)ζ.
#[inline]
pub fn project_tangent(zeta: &UnitVector, v: &Vec3) -> Vec3 {
    let z = zeta.as_vec();
    v - z * v.dot(z)
}

/// Skew-symmetric part of the tensor product, a ∧ b = ½(a⊗b - b⊗a).
#[inline]
pub fn wedge(a: &Vec3, b: &Vec3) -> Mat3 {
    (a * b.transpose() - b * a.transpose()) * 0.5
}

/// Cross-product matrix: `skew_from_axial(w) * x == w × x`.
#[inline]
pub fn skew_from_axial(w: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`skew_from_axial`] applied to the skew part of `m`.
#[inline]
pub fn axial_from_skew(m: &Mat3) -> Vec3 {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Uniformly distributed point on S² from two uniforms in [0, 1).
pub fn sphere_point(u1: f64, u2: f64) -> UnitVector {
    let z = 1.0 - 2.0 * u1;
    let s = (1.0 - z * z).max(0.0).sqrt();
    let phi = 2.0 * std::f64::consts::PI * u2;
    UnitVector(Vector3::new(s * phi.cos(), s * phi.sin(), z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rotation_of_e3_is_identity() {
        let r = rotation_to(&UnitVector::E3).unwrap();
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn rotation_of_minus_e3_uses_fixed_convention() {
        let r = rotation_to(&-UnitVector::E3).unwrap();
        assert_eq!(r, Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)));
    }

    #[test]
    fn rotation_to_e1() {
        let r = rotation_to(&UnitVector::E1).unwrap();
        assert_relative_eq!(r * Vector3::z(), Vector3::x(), epsilon = 1e-14);
        assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-14);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rotation_rejects_non_unit() {
        // bypass the constructor to smuggle in a bad vector
        let bad = UnitVector(Vector3::new(1.0, 1.0, 0.0));
        assert!(matches!(rotation_to(&bad), Err(Error::NotUnit { .. })));
        assert!(UnitVector::try_new(Vector3::new(1.0 + 1e-6, 0.0, 0.0)).is_err());
        assert!(UnitVector::try_new(Vector3::new(1.0 + 1e-10, 0.0, 0.0)).is_ok());
    }

    #[test]
    fn tangent_projection_examples() {
        let e3 = UnitVector::E3;
        assert_eq!(project_tangent(&e3, &Vector3::z()), Vector3::zeros());
        assert_eq!(project_tangent(&e3, &Vector3::x()), Vector3::x());
        assert_eq!(
            project_tangent(&e3, &Vector3::new(1.0, 0.0, 1.0)),
            Vector3::new(1.0, 0.0, 0.0)
        );
    }

    #[test]
    fn axial_round_trip() {
        let w = Vector3::new(0.3, -1.2, 2.0);
        let x = Vector3::new(1.0, 0.5, -0.25);
        assert_relative_eq!(skew_from_axial(&w) * x, w.cross(&x), epsilon = 1e-15);
        assert_relative_eq!(axial_from_skew(&skew_from_axial(&w)), w, epsilon = 1e-15);
        // a ∧ b acts as -½ (a × b) ×
        let a = Vector3::new(0.2, 0.1, 0.9);
        let b = Vector3::new(-0.4, 0.3, 0.1);
        assert_relative_eq!(wedge(&a, &b) * x, -0.5 * a.cross(&b).cross(&x), epsilon = 1e-15);
    }

    #[test]
    fn random_rotations_map_e3() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let z = sphere_point(rng.random(), rng.random());
            let r = rotation_to(&z).unwrap();
            assert!((r * Vector3::z() - z.as_vec()).norm() < 1e-10);
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_tangent(
            polar in 0.0..std::f64::consts::PI,
            az in 0.0..std::f64::consts::TAU,
            v in proptest::array::uniform3(-10.0f64..10.0),
        ) {
            let z = UnitVector::from_spherical(polar, az);
            let v = Vector3::from(v);
            let p = project_tangent(&z, &v);
            prop_assert!((project_tangent(&z, &p) - p).norm() <= 1e-12 * (1.0 + v.norm()));
            prop_assert!(p.dot(z.as_vec()).abs() <= 1e-12 * (1.0 + v.norm()));
        }

        #[test]
        fn rotation_near_south_pole_is_orthogonal(eps in 1e-12f64..1e-4, az in 0.0..std::f64::consts::TAU) {
            let z = UnitVector::from_spherical(std::f64::consts::PI - eps, az);
            let r = rotation_to(&z).unwrap();
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-10);
            prop_assert!((r * Vector3::z() - z.as_vec()).norm() < 1e-10);
        }
    }
}
