//! 2-Wasserstein distances between finitely supported measures on
//! K × S² (× {±1}).
//!
//! The ground cost is |x₁ - x₂|² + |ζ₁ - ζ₂|² + |ς₁ - ς₂|², so the spin
//! factor contributes 0 or 4.

mod binned;
pub mod hungarian;

pub use binned::{default_delta, sphere_cell, w2_binned_upper, BinnedBound, Covering};

use rayon::prelude::*;
use serde::Serialize;

use crate::effective::{Atom, MarkedMeasure};
use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::magnetics::{equilibrium_fractions, SpinRateParams};

/// Largest common denominator allowed when splitting weighted atoms.
pub const ATOM_BUDGET: usize = 10_000;

/// Largest instance accepted by the permutation oracle.
pub const BRUTEFORCE_MAX: usize = 8;

/// Squared ground distance between two atoms.
pub fn ground_cost(a: &Atom, b: &Atom) -> f64 {
    let dx = (a.position - b.position).norm_squared();
    let dz = (a.orientation.as_vec() - b.orientation.as_vec()).norm_squared();
    let ds = match (a.mark, b.mark) {
        (Some(s), Some(t)) if s != t => 4.0,
        _ => 0.0,
    };
    dx + dz + ds
}

fn check_compatible(mu: &MarkedMeasure, nu: &MarkedMeasure) -> Result<()> {
    let marked = mu.is_marked() && nu.is_marked();
    let free = mu.is_mark_free() && nu.is_mark_free();
    if !(marked || free) {
        return Err(Error::Parameter("both measures must be marked or both mark-free".into()));
    }
    Ok(())
}

/// Dense n × m matrix of squared ground distances.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
}

impl CostMatrix {
    pub fn between(a: &[Atom], b: &[Atom]) -> Self {
        let entries: Vec<f64> = a
            .par_iter()
            .flat_map_iter(|x| b.iter().map(move |y| ground_cost(x, y)))
            .collect();
        CostMatrix { rows: a.len(), cols: b.len(), entries }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }
}

/// Smallest q ≤ `max_den` with w q within 1e-9 of an integer, by continued
/// fractions.
fn denominator(w: f64, max_den: usize) -> Option<usize> {
    if w == 0.0 {
        return Some(1);
    }
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut x = w;
    for _ in 0..64 {
        let a = x.floor();
        let (h2, k2) = (a as i64 * h1 + h0, a as i64 * k1 + k0);
        if k2 as usize > max_den {
            return None;
        }
        if (w * k2 as f64 - h2 as f64).abs() <= 1e-9 {
            return Some(k2 as usize);
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = x - a;
        if frac.abs() < 1e-15 {
            return None;
        }
        x = 1.0 / frac;
    }
    None
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Common denominator D of all weights and the atom multiplicities w D.
fn split_counts(mu: &MarkedMeasure, nu: &MarkedMeasure) -> Result<(usize, Vec<usize>, Vec<usize>)> {
    let mut d = 1usize;
    for &w in mu.weights.iter().chain(&nu.weights) {
        let q = denominator(w, ATOM_BUDGET).ok_or(Error::AtomBudget { needed: usize::MAX, cap: ATOM_BUDGET })?;
        d = d / gcd(d, q) * q;
        if d > ATOM_BUDGET {
            return Err(Error::AtomBudget { needed: d, cap: ATOM_BUDGET });
        }
    }
    let counts = |m: &MarkedMeasure| -> Vec<usize> { m.weights.iter().map(|w| (w * d as f64).round() as usize).collect() };
    let (a, b) = (counts(mu), counts(nu));
    if a.iter().sum::<usize>() != d || b.iter().sum::<usize>() != d {
        return Err(Error::SizeMismatch("weights do not split onto a common grid".into()));
    }
    Ok((d, a, b))
}

fn expand(counts: &[usize]) -> Vec<usize> {
    counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c)).collect()
}

/// A transport plan between atoms: (i, j, mass).
pub type Plan = Vec<(usize, usize, f64)>;

/// Optimal plan and its squared cost.
pub fn optimal_plan(mu: &MarkedMeasure, nu: &MarkedMeasure) -> Result<(Plan, f64)> {
    check_compatible(mu, nu)?;
    if mu.len() == nu.len() && mu.has_uniform_weights() && nu.has_uniform_weights() {
        let n = mu.len();
        let c = CostMatrix::between(&mu.atoms, &nu.atoms);
        let (assign, total) = hungarian::solve(&c.entries, n, n);
        let w = 1.0 / n as f64;
        let plan = assign.iter().enumerate().map(|(i, &j)| (i, j, w)).collect();
        return Ok((plan, total * w));
    }
    let (d, ca, cb) = split_counts(mu, nu)?;
    let (ia, ib) = (expand(&ca), expand(&cb));
    let a: Vec<Atom> = ia.iter().map(|&i| mu.atoms[i]).collect();
    let b: Vec<Atom> = ib.iter().map(|&j| nu.atoms[j]).collect();
    let c = CostMatrix::between(&a, &b);
    let (assign, total) = hungarian::solve(&c.entries, d, d);
    let w = 1.0 / d as f64;
    let plan = assign.iter().enumerate().map(|(k, &l)| (ia[k], ib[l], w)).collect();
    Ok((plan, total * w))
}

/// W₂(μ, ν) by exact assignment, splitting weighted atoms onto a common
/// grid of at most [`ATOM_BUDGET`] atoms.
pub fn w2_exact(mu: &MarkedMeasure, nu: &MarkedMeasure) -> Result<f64> {
    Ok(optimal_plan(mu, nu)?.1.max(0.0).sqrt())
}

/// W₂ by exhaustive search over permutations (n ≤ 8, uniform weights).
pub fn w2_bruteforce(mu: &MarkedMeasure, nu: &MarkedMeasure) -> Result<f64> {
    check_compatible(mu, nu)?;
    let n = mu.len();
    if n != nu.len() || !mu.has_uniform_weights() || !nu.has_uniform_weights() {
        return Err(Error::SizeMismatch("brute force needs equal counts of uniform atoms".into()));
    }
    if n > BRUTEFORCE_MAX {
        return Err(Error::AtomBudget { needed: n, cap: BRUTEFORCE_MAX });
    }
    let c = CostMatrix::between(&mu.atoms, &nu.atoms);
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum::<f64>();
    let mut best = cost(&perm);
    // Heap's algorithm
    let mut stack = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            best = best.min(cost(&perm));
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    Ok((best / n as f64).max(0.0).sqrt())
}

/// Which mark-free plan the spin coupling lifts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasePlan {
    /// Atom i to atom i (needs equal counts and weights).
    Identity,
    /// The optimal plan from [`optimal_plan`].
    Optimal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpinCouplingBound {
    /// Upper bound on W₂ between the lifted measures.
    pub distance: f64,
    pub squared: f64,
    /// Σ w (|Δx|² + |Δζ|²) of the base plan.
    pub transport_part: f64,
    /// Σ w 4|m⁺₁ - m⁺₂|.
    pub spin_part: f64,
}

/// m⁺(t, x, ζ) at every atom.
pub fn plus_fractions(mu: &MarkedMeasure, rates: &SpinRateParams, field: &FieldSpec, t: f64) -> Vec<f64> {
    mu.atoms
        .iter()
        .map(|a| equilibrium_fractions(rates.b * field.value(t, &a.position).dot(a.orientation.as_vec())).0)
        .collect()
}

/// Cost of lifting a plan between mark-free μ, ν to the measures
/// μ ⊗ (m⁺δ₊ + m⁻δ₋), ν ⊗ (n⁺δ₊ + n⁻δ₋): each pair keeps min(m⁺, n⁺) on
/// (+, +), min(m⁻, n⁻) on (-, -) and moves |m⁺ - n⁺| across spins at cost 4.
pub fn w2_spin_coupling(
    mu: &MarkedMeasure,
    plus_mu: &[f64],
    nu: &MarkedMeasure,
    plus_nu: &[f64],
    base: BasePlan,
) -> Result<SpinCouplingBound> {
    if !mu.is_mark_free() || !nu.is_mark_free() {
        return Err(Error::Parameter("spin coupling lifts mark-free measures".into()));
    }
    if plus_mu.len() != mu.len() || plus_nu.len() != nu.len() {
        return Err(Error::SizeMismatch("one m⁺ value per atom is required".into()));
    }
    if plus_mu.iter().chain(plus_nu).any(|m| !(0.0..=1.0).contains(m)) {
        return Err(Error::Parameter("m⁺ must lie in [0, 1]".into()));
    }
    let plan: Plan = match base {
        BasePlan::Identity => {
            if mu.len() != nu.len() || mu.weights.iter().zip(&nu.weights).any(|(a, b)| (a - b).abs() > 1e-15) {
                return Err(Error::SizeMismatch("identity plan needs matching marginals".into()));
            }
            mu.weights.iter().enumerate().map(|(i, &w)| (i, i, w)).collect()
        }
        BasePlan::Optimal => optimal_plan(mu, nu)?.0,
    };
    let mut transport_part = 0.0;
    let mut spin_part = 0.0;
    for (i, j, w) in plan {
        transport_part += w * ground_cost(&mu.atoms[i], &nu.atoms[j]);
        spin_part += w * 4.0 * (plus_mu[i] - plus_nu[j]).abs();
    }
    let squared = transport_part + spin_part;
    Ok(SpinCouplingBound { distance: squared.sqrt(), squared, transport_part, spin_part })
}

/// One-line JSON record of a distance computation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceRecord {
    pub distance: f64,
    pub squared: f64,
    pub method: String,
    pub parameters: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sphere_point, Spin, UnitVector};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_atoms(rng: &mut impl Rng, n: usize, marked: bool) -> Vec<Atom> {
        (0..n)
            .map(|_| Atom {
                position: Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
                orientation: sphere_point(rng.random(), rng.random()),
                mark: marked.then(|| if rng.random::<bool>() { Spin::Up } else { Spin::Down }),
            })
            .collect()
    }

    #[test]
    fn ground_cost_spin_term_is_zero_or_four() {
        let a = Atom { position: Vector3::zeros(), orientation: UnitVector::E3, mark: Some(Spin::Up) };
        let b = Atom { mark: Some(Spin::Down), ..a };
        assert_eq!(ground_cost(&a, &a), 0.0);
        assert_eq!(ground_cost(&a, &b), 4.0);
        let c = Atom { position: Vector3::new(1.0, 0.0, 0.0), orientation: UnitVector::E1, mark: Some(Spin::Up) };
        assert_relative_eq!(ground_cost(&a, &c), 1.0 + 2.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = MarkedMeasure::uniform(random_atoms(&mut rng, 7, false)).unwrap();
        assert_eq!(w2_exact(&mu, &mu).unwrap(), 0.0);
        let a = Atom { position: Vector3::zeros(), orientation: UnitVector::E3, mark: None };
        let b = Atom { position: Vector3::new(0.3, 0.4, 0.0), ..a };
        let d = w2_exact(&MarkedMeasure::uniform(vec![a]).unwrap(), &MarkedMeasure::uniform(vec![b]).unwrap()).unwrap();
        assert_relative_eq!(d, 0.5, epsilon = 1e-15);
        let marked = MarkedMeasure::uniform(vec![Atom { mark: Some(Spin::Up), ..a }]).unwrap();
        assert!(w2_exact(&marked, &mu).is_err());
    }

    #[test]
    fn exact_matches_bruteforce_for_six_atoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mu = MarkedMeasure::uniform(random_atoms(&mut rng, 6, true)).unwrap();
            let nu = MarkedMeasure::uniform(random_atoms(&mut rng, 6, true)).unwrap();
            let e = w2_exact(&mu, &nu).unwrap();
            let b = w2_bruteforce(&mu, &nu).unwrap();
            assert!((e - b).abs() < 1e-10);
        }
    }

    #[test]
    fn bruteforce_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let atoms = random_atoms(&mut rng, 5, false);
        let mu = MarkedMeasure::uniform(atoms.clone()).unwrap();
        assert_eq!(w2_bruteforce(&mu, &mu).unwrap(), 0.0);
        let mut swapped = atoms;
        swapped.swap(0, 3);
        assert_eq!(w2_bruteforce(&mu, &MarkedMeasure::uniform(swapped).unwrap()).unwrap(), 0.0);
        let big = MarkedMeasure::uniform(random_atoms(&mut rng, 9, false)).unwrap();
        assert!(matches!(w2_bruteforce(&big, &big), Err(Error::AtomBudget { .. })));
    }

    #[test]
    fn metric_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let m: Vec<_> = (0..3).map(|_| MarkedMeasure::uniform(random_atoms(&mut rng, 10, false)).unwrap()).collect();
            let ab = w2_exact(&m[0], &m[1]).unwrap();
            let ba = w2_exact(&m[1], &m[0]).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            let bc = w2_exact(&m[1], &m[2]).unwrap();
            let ac = w2_exact(&m[0], &m[2]).unwrap();
            assert!(ac <= ab + bc + 1e-10);
        }
    }

    #[test]
    fn weighted_measures_split_onto_a_common_grid() {
        let a = Atom { position: Vector3::zeros(), orientation: UnitVector::E3, mark: None };
        let b = Atom { position: Vector3::new(1.0, 0.0, 0.0), ..a };
        let mu = MarkedMeasure::new(vec![a, b], vec![0.25, 0.75]).unwrap();
        let nu = MarkedMeasure::uniform(vec![a, b]).unwrap();
        // a quarter of the mass moves distance 1
        assert_relative_eq!(w2_exact(&mu, &nu).unwrap(), 0.5, epsilon = 1e-12);
        let three = MarkedMeasure::uniform(vec![a, b, b]).unwrap();
        assert_relative_eq!(w2_exact(&nu, &three).unwrap().powi(2), 1.0 / 6.0, epsilon = 1e-12);
        let odd = MarkedMeasure::new(vec![a, b], vec![0.1234567, 1.0 - 0.1234567]).unwrap();
        assert!(matches!(w2_exact(&odd, &nu), Err(Error::AtomBudget { .. })));
    }

    #[test]
    fn spin_coupling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = MarkedMeasure::uniform(random_atoms(&mut rng, 4, false)).unwrap();
        let plus = vec![0.3, 0.6, 0.9, 0.5];
        let same = w2_spin_coupling(&mu, &plus, &mu, &plus, BasePlan::Identity).unwrap();
        assert_eq!(same.squared, 0.0);
        let mut other = plus.clone();
        other[2] -= 0.2;
        let diff = w2_spin_coupling(&mu, &plus, &mu, &other, BasePlan::Identity).unwrap();
        assert_relative_eq!(diff.squared, 4.0 * 0.25 * 0.2, epsilon = 1e-15);
        let nu = MarkedMeasure::uniform(random_atoms(&mut rng, 4, false)).unwrap();
        let opt = w2_spin_coupling(&mu, &plus, &nu, &plus, BasePlan::Optimal).unwrap();
        assert_relative_eq!(opt.transport_part, w2_exact(&mu, &nu).unwrap().powi(2), epsilon = 1e-12);
    }
}
