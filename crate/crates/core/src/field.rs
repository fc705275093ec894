//! External magnetic field models.
//!
//! Every variant is smooth with bounded second derivatives on bounded
//! sets, and comes with an analytic gradient. The gradient convention is
//! `grad[(i, k)] = ∂H_i / ∂x_k`, so the Kelvin force direction is
//! `gradᵀ ξ`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::particles::BoxDomain;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    /// H(t, x) = h0.
    Uniform { h0: [f64; 3] },
    /// H(t, x) = amplitude (cos(ωt + phase), sin(ωt + phase), 0).
    RotatingInPlane {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// H(t, x) = offset + G x.
    LinearGradient {
        gradient: [[f64; 3]; 3],
        #[serde(default)]
        offset: [f64; 3],
    },
    /// Sum of the component fields.
    Composite { components: Vec<FieldSpec> },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Uniform { h0: [0.0, 0.0, 1.0] }
    }
}

impl FieldSpec {
    pub fn uniform(h0: Vec3) -> Self {
        FieldSpec::Uniform { h0: h0.into() }
    }

    pub fn zero() -> Self {
        FieldSpec::Uniform { h0: [0.0; 3] }
    }

    pub fn linear_gradient(gradient: Mat3, offset: Vec3) -> Self {
        let mut rows = [[0.0; 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = gradient[(i, k)];
            }
        }
        FieldSpec::LinearGradient { gradient: rows, offset: offset.into() }
    }

    /// Parses a field declaration; unknown `kind` tags are configuration
    /// errors.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(value.clone()).map_err(|e| Error::Config(e.to_string()))
    }

    /// H(t, x).
    pub fn value(&self, t: f64, x: &Vec3) -> Vec3 {
        match self {
            FieldSpec::Uniform { h0 } => Vector3::from(*h0),
            FieldSpec::RotatingInPlane { amplitude, omega, phase } => {
                let (s, c) = (omega * t + phase).sin_cos();
                Vector3::new(amplitude * c, amplitude * s, 0.0)
            }
            FieldSpec::LinearGradient { gradient, offset } => {
                Vector3::from(*offset) + gradient_matrix(gradient) * x
            }
            FieldSpec::Composite { components } => {
                components.iter().map(|c| c.value(t, x)).sum()
            }
        }
    }

    /// ∇H(t, x) with `[(i, k)] = ∂H_i/∂x_k`.
    pub fn gradient(&self, t: f64, x: &Vec3) -> Mat3 {
        match self {
            FieldSpec::Uniform { .. } | FieldSpec::RotatingInPlane { .. } => Matrix3::zeros(),
            FieldSpec::LinearGradient { gradient, .. } => gradient_matrix(gradient),
            FieldSpec::Composite { components } => {
                components.iter().map(|c| c.gradient(t, x)).sum()
            }
        }
    }

    /// (H, ∇H) at (t, x).
    pub fn eval(&self, t: f64, x: &Vec3) -> (Vec3, Mat3) {
        (self.value(t, x), self.gradient(t, x))
    }

    /// Upper bound on sup |H(t, x)| over all t and x in `domain`.
    pub fn sup_norm(&self, domain: &BoxDomain) -> f64 {
        match self {
            FieldSpec::Uniform { h0 } => Vector3::from(*h0).norm(),
            FieldSpec::RotatingInPlane { amplitude, .. } => amplitude.abs(),
            FieldSpec::LinearGradient { gradient, offset } => {
                let g = gradient_matrix(gradient);
                let o = Vector3::from(*offset);
                // |H| is convex in x, so its maximum over the box sits at a corner
                domain
                    .corners()
                    .iter()
                    .map(|c| (o + g * c).norm())
                    .fold(0.0, f64::max)
            }
            FieldSpec::Composite { components } => {
                components.iter().map(|c| c.sup_norm(domain)).sum()
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            FieldSpec::Uniform { h0 } => h0.iter().all(|v| v.is_finite()),
            FieldSpec::RotatingInPlane { amplitude, omega, phase } => {
                amplitude.is_finite() && omega.is_finite() && phase.is_finite()
            }
            FieldSpec::LinearGradient { gradient, offset } => gradient
                .iter()
                .flatten()
                .chain(offset.iter())
                .all(|v| v.is_finite()),
            FieldSpec::Composite { components } => components.iter().all(|c| c.is_finite()),
        }
    }
}

fn gradient_matrix(rows: &[[f64; 3]; 3]) -> Mat3 {
    Matrix3::from_fn(|i, k| rows[i][k])
}
