//! Upper bound on W₂² from a covering of K × S² by cells of diameter ≤ δ.
//!
//! Spatial cells are cubes of edge δ/√6 (diameter δ/√2). Sphere cells are
//! squares of the gnomonic chart of each cube face, side 2/m with
//! m = ⌈4/δ⌉; the chart inverse is 1-Lipschitz, so their chord diameter is
//! at most 2√2/m ≤ δ/√2. A product cell therefore has diameter ≤ δ.
//!
//! Inside a cell, same-spin mass is matched at cost ≤ δ², the rest of the
//! common cell mass is matched across spins at cost ≤ δ² + 4, and whatever
//! is left over is moved anywhere at cost ≤ diam(K)² + 8.

use std::collections::HashMap;

use serde::Serialize;

use crate::effective::MarkedMeasure;
use crate::error::{Error, Result};
use crate::geometry::{Spin, UnitVector};
use crate::particles::BoxDomain;

/// Cell geometry for a given δ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Covering {
    pub delta: f64,
    pub spatial_per_axis: [usize; 3],
    /// Subdivisions per axis of each cube face.
    pub face_divisions: usize,
}

impl Covering {
    pub fn new(domain: &BoxDomain, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Parameter(format!("δ must be positive, got {delta}")));
        }
        let edge = delta / 6f64.sqrt();
        let e = domain.edges();
        let per = |l: f64| ((l / edge).ceil() as usize).max(1);
        Ok(Covering {
            delta,
            spatial_per_axis: [per(e.x), per(e.y), per(e.z)],
            face_divisions: ((4.0 / delta).ceil() as usize).max(1),
        })
    }

    pub fn cell_count(&self) -> usize {
        self.spatial_per_axis.iter().product::<usize>() * 6 * self.face_divisions * self.face_divisions
    }
}

/// (face, a, b) of the gnomonic cube-face cell containing ζ.
pub fn sphere_cell(zeta: &UnitVector, divisions: usize) -> (usize, usize, usize) {
    let v = zeta.as_vec();
    let mut k = 0;
    for i in 1..3 {
        if v[i].abs() > v[k].abs() {
            k = i;
        }
    }
    let face = 2 * k + usize::from(v[k] < 0.0);
    let (p, q) = ((k + 1) % 3, (k + 2) % 3);
    let idx = |c: f64| {
        let u = (c / v[k].abs()).clamp(-1.0, 1.0);
        (((u + 1.0) / 2.0 * divisions as f64).floor() as usize).min(divisions - 1)
    };
    (face, idx(v[p]), idx(v[q]))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinnedBound {
    /// Upper bound on W₂².
    pub bound: f64,
    pub delta: f64,
    /// δ² times the mass matched inside cells.
    pub delta_term: f64,
    /// 4 × mass matched inside cells across spins.
    pub spin_term: f64,
    /// (diam(K)² + 8) × mass left unmatched by the cells.
    pub leftover_term: f64,
    /// (1/N)-style raw count Σ_Q |W¹⁺_Q - W²⁺_Q|.
    pub plus_mismatch: f64,
    pub cells_total: usize,
    pub cells_occupied: usize,
}

#[derive(Default, Clone, Copy)]
struct CellMass {
    up: [f64; 2],
    down: [f64; 2],
    free: [f64; 2],
}

/// Binned upper bound on W₂²(h¹, h²).
pub fn w2_binned_upper(h1: &MarkedMeasure, h2: &MarkedMeasure, delta: f64, domain: &BoxDomain) -> Result<BinnedBound> {
    let cov = Covering::new(domain, delta)?;
    let edge = delta / 6f64.sqrt();
    let mut cells: HashMap<[usize; 6], CellMass> = HashMap::new();
    for (side, m) in [h1, h2].into_iter().enumerate() {
        for (a, &w) in m.atoms.iter().zip(&m.weights) {
            if !domain.contains(&a.position) {
                return Err(Error::Parameter(format!("atom at {:?} lies outside K", a.position)));
            }
            let rel = a.position - nalgebra::Vector3::from(domain.min);
            let ix = |d: usize| ((rel[d] / edge).floor() as usize).min(cov.spatial_per_axis[d] - 1);
            let (f, p, q) = sphere_cell(&a.orientation, cov.face_divisions);
            let cell = cells.entry([ix(0), ix(1), ix(2), f, p, q]).or_default();
            match a.mark {
                Some(Spin::Up) => cell.up[side] += w,
                Some(Spin::Down) => cell.down[side] += w,
                None => cell.free[side] += w,
            }
        }
    }
    let mut matched = 0.0;
    let mut cross = 0.0;
    let mut leftover = 0.0;
    let mut plus_mismatch = 0.0;
    // deterministic summation order
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();
    for k in keys {
        let c = cells[&k];
        let same = c.up[0].min(c.up[1]) + c.down[0].min(c.down[1]) + c.free[0].min(c.free[1]);
        let tot = |s: usize| c.up[s] + c.down[s] + c.free[s];
        let common = tot(0).min(tot(1));
        matched += common;
        cross += (common - same).max(0.0);
        leftover += (tot(0) - tot(1)).max(0.0);
        plus_mismatch += (c.up[0] - c.up[1]).abs();
    }
    let dmax2 = domain.diameter().powi(2) + 8.0;
    let delta_term = delta * delta * matched;
    let spin_term = 4.0 * cross;
    let leftover_term = dmax2 * leftover;
    Ok(BinnedBound {
        bound: delta_term + spin_term + leftover_term,
        delta,
        delta_term,
        spin_term,
        leftover_term,
        plus_mismatch,
        cells_total: cov.cell_count(),
        cells_occupied: cells.len(),
    })
}

/// δ = N^(-1/9).
pub fn default_delta(n: usize) -> f64 {
    (n as f64).powf(-1.0 / 9.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective::Atom;
    use crate::geometry::sphere_point;
    use crate::transport::{w2_exact, w2_spin_coupling, BasePlan};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_cells_have_small_chord_diameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 5;
        let mut by_cell: HashMap<(usize, usize, usize), Vec<UnitVector>> = HashMap::new();
        for _ in 0..40_000 {
            let z = sphere_point(rng.random(), rng.random());
            by_cell.entry(sphere_cell(&z, m)).or_default().push(z);
        }
        assert_eq!(by_cell.len(), 6 * m * m);
        let bound = 2.0 * 2f64.sqrt() / m as f64;
        for pts in by_cell.values() {
            for a in pts.iter().take(60) {
                for b in pts.iter().take(60) {
                    assert!((a.as_vec() - b.as_vec()).norm() <= bound + 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_measures_give_delta_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let atoms = crate::transport::tests::random_atoms(&mut rng, 20, true);
        let h = MarkedMeasure::uniform(atoms).unwrap();
        let b = w2_binned_upper(&h, &h, 0.5, &BoxDomain::default()).unwrap();
        assert!((b.bound - 0.25).abs() < 1e-12);
        assert_eq!(b.spin_term, 0.0);
        assert_eq!(b.leftover_term, 0.0);
        assert!(w2_binned_upper(&h, &h, 0.0, &BoxDomain::default()).is_err());
    }

    #[test]
    fn cell_count_scales_like_delta_to_minus_five() {
        let dom = BoxDomain::default();
        let a = Covering::new(&dom, 0.5).unwrap().cell_count() as f64;
        let b = Covering::new(&dom, 0.25).unwrap().cell_count() as f64;
        let c = Covering::new(&dom, 0.125).unwrap().cell_count() as f64;
        // ratio tends to 2⁵ = 32 as the ceilings wash out
        assert!((b / a) > 16.0 && (b / a) < 64.0, "{}", b / a);
        assert!((c / b - 32.0).abs() < 10.0, "{}", c / b);
        // leading constant 6^(3/2) · 6 · 16 ≈ 1411
        assert!(c <= 2e3 * 0.125f64.powi(-5));
    }

    #[test]
    fn atoms_outside_the_domain_are_rejected() {
        let a = Atom { position: Vector3::new(2.0, 0.0, 0.0), orientation: UnitVector::E3, mark: Some(Spin::Up) };
        let h = MarkedMeasure::uniform(vec![a]).unwrap();
        assert!(w2_binned_upper(&h, &h, 0.5, &BoxDomain::default()).is_err());
    }

    #[test]
    fn bounds_dominate_exact_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dom = BoxDomain::default();
        for _ in 0..200 {
            let n = rng.random_range(1..=3);
            let f1 = MarkedMeasure::uniform(crate::transport::tests::random_atoms(&mut rng, n, false)).unwrap();
            let f2 = MarkedMeasure::uniform(crate::transport::tests::random_atoms(&mut rng, n, false)).unwrap();
            let quarter = |rng: &mut ChaCha8Rng| rng.random_range(0..=4) as f64 / 4.0;
            let p1: Vec<f64> = (0..n).map(|_| quarter(&mut rng)).collect();
            let p2: Vec<f64> = (0..n).map(|_| quarter(&mut rng)).collect();
            let lift = |f: &MarkedMeasure, p: &[f64]| {
                let mut atoms = Vec::new();
                let mut w = Vec::new();
                for (i, a) in f.atoms.iter().enumerate() {
                    atoms.push(Atom { mark: Some(Spin::Up), ..*a });
                    w.push(f.weights[i] * p[i]);
                    atoms.push(Atom { mark: Some(Spin::Down), ..*a });
                    w.push(f.weights[i] * (1.0 - p[i]));
                }
                MarkedMeasure::new(atoms, w).unwrap()
            };
            let (h1, h2) = (lift(&f1, &p1), lift(&f2, &p2));
            let exact = w2_exact(&h1, &h2).unwrap().powi(2);
            let coupling = w2_spin_coupling(&f1, &p1, &f2, &p2, BasePlan::Optimal).unwrap().squared;
            assert!(coupling >= exact - 1e-10, "{coupling} < {exact}");
            for delta in [0.3, 1.0] {
                let b = w2_binned_upper(&h1, &h2, delta, &dom).unwrap().bound;
                assert!(b >= exact - 1e-10, "{b} < {exact}");
            }
        }
    }
}
