//! Finite nonnegative atomic measures, particle configurations and the
//! transport distances used to compare them.

mod config;
mod io;
pub mod simplex;
mod wasserstein;

pub use config::{config_distance, Configuration, Label};
pub use wasserstein::{
    wbar1, wbar1_dense, wbar1_dual_lower_bound, wbar1_line, wbar1_with_padding, CemeteryMetric,
    LipschitzTest, MAX_TRANSPORT_ATOMS,
};

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Atoms whose weight falls below this are dropped on construction.
pub const WEIGHT_FLOOR: f64 = 1e-15;

/// A finite nonnegative measure made of weighted Dirac atoms in R^d.
///
/// Mass, first moment and second moment are computed once on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMeasure {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
    mass: f64,
    first: Vec<f64>,
    second: f64,
}

/// Mass, first moment vector and second moment of a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureMoments {
    pub mass: f64,
    pub first: Vec<f64>,
    pub second: f64,
}

impl FiniteMeasure {
    pub fn empty(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self {
            dim,
            positions: Vec::new(),
            weights: Vec::new(),
            mass: 0.0,
            first: vec![0.0; dim],
            second: 0.0,
        }
    }

    /// Builds a measure from flattened positions (row-major, `dim` per atom)
    /// and weights.
    pub fn from_flat(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if positions.len() != weights.len() * dim {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates for {} atoms of dimension {dim}",
                positions.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidMeasure(format!("weight {w} is negative or non-finite")));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite atom position".into()));
        }
        let (positions, weights) = if weights.iter().any(|&w| w < WEIGHT_FLOOR) {
            let mut p = Vec::with_capacity(positions.len());
            let mut q = Vec::with_capacity(weights.len());
            for (i, &w) in weights.iter().enumerate() {
                if w >= WEIGHT_FLOOR {
                    p.extend_from_slice(&positions[i * dim..(i + 1) * dim]);
                    q.push(w);
                }
            }
            (p, q)
        } else {
            (positions, weights)
        };
        let mut mass = 0.0;
        let mut first = vec![0.0; dim];
        let mut second = 0.0;
        for (x, &w) in positions.chunks_exact(dim).zip(&weights) {
            mass += w;
            for (f, xi) in first.iter_mut().zip(x) {
                *f += w * xi;
            }
            second += w * x.iter().map(|v| v * v).sum::<f64>();
        }
        Ok(Self { dim, positions, weights, mass, first, second })
    }

    pub fn from_atoms(dim: usize, atoms: &[(Vec<f64>, f64)]) -> Result<Self> {
        let mut positions = Vec::with_capacity(atoms.len() * dim);
        let mut weights = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            if x.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
            }
            positions.extend_from_slice(x);
            weights.push(*w);
        }
        Self::from_flat(dim, positions, weights)
    }

    /// One-dimensional measure from scalar positions and weights.
    pub fn from_points(points: &[f64], weights: &[f64]) -> Result<Self> {
        Self::from_flat(1, points.to_vec(), weights.to_vec())
    }

    pub fn dirac(position: Vec<f64>, weight: f64) -> Result<Self> {
        let dim = position.len();
        Self::from_flat(dim, position, vec![weight])
    }

    /// Two-atom one-dimensional measure reproducing the given mass, first and
    /// second moments exactly. Requires `m1^2 <= mass * m2`.
    pub fn from_moments_1d(mass: f64, m1: f64, m2: f64) -> Result<Self> {
        if !(mass.is_finite() && m1.is_finite() && m2.is_finite()) || mass < 0.0 {
            return Err(Error::InvalidMeasure(format!("invalid moments ({mass}, {m1}, {m2})")));
        }
        if mass < WEIGHT_FLOOR {
            return Ok(Self::empty(1));
        }
        let mean = m1 / mass;
        let var = m2 / mass - mean * mean;
        if var < -1e-9 * (1.0 + m2 / mass) {
            return Err(Error::InvalidMeasure(format!(
                "moments violate Cauchy-Schwarz: m1^2 = {} > mass*m2 = {}",
                m1 * m1,
                mass * m2
            )));
        }
        let sd = var.max(0.0).sqrt();
        Self::from_flat(1, vec![mean - sd, mean + sd], vec![0.5 * mass, 0.5 * mass])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> f64 {
        self.second
    }

    pub fn moments(&self) -> MeasureMoments {
        MeasureMoments { mass: self.mass, first: self.first.clone(), second: self.second }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.positions.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    /// ⟨μ, φ⟩.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_flat(self.dim, self.positions.clone(), self.weights.iter().map(|w| w * factor).collect())
    }

    /// Union of atoms of `self` scaled by `a` and `other` scaled by `b`.
    pub fn blend(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let mut weights: Vec<f64> = self.weights.iter().map(|w| a * w).collect();
        weights.extend(other.weights.iter().map(|w| b * w));
        Self::from_flat(self.dim, positions, weights)
    }

    /// Random subsample of at most `cap` atoms drawn without replacement with
    /// probability proportional to weight; kept atoms share the total mass in
    /// proportion to their original weight.
    pub fn subsample<R: Rng + ?Sized>(&self, cap: usize, rng: &mut R) -> Self {
        if self.len() <= cap || cap == 0 {
            return self.clone();
        }
        // Efraimidis-Spirakis weighted reservoir keys.
        let mut keys: Vec<(f64, usize)> = self
            .weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                (u.ln() / w, i)
            })
            .collect();
        keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut idx: Vec<usize> = keys[..cap].iter().map(|k| k.1).collect();
        idx.sort_unstable();
        let kept: f64 = idx.iter().map(|&i| self.weights[i]).sum();
        let scale = self.mass / kept;
        let mut positions = Vec::with_capacity(cap * self.dim);
        let mut weights = Vec::with_capacity(cap);
        for &i in &idx {
            positions.extend_from_slice(self.position(i));
            weights.push(self.weights[i] * scale);
        }
        Self::from_flat(self.dim, positions, weights).expect("subsample of a valid measure")
    }

    /// Merges atoms into cells of a uniform one-dimensional grid with the given
    /// origin and spacing; each cell's mass sits at the cell centre.
    pub fn binned_1d(&self, origin: f64, spacing: f64) -> Result<Self> {
        if self.dim != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: self.dim });
        }
        let mut cells = std::collections::BTreeMap::<i64, f64>::new();
        for (x, w) in self.iter() {
            let k = ((x[0] - origin) / spacing).floor() as i64;
            *cells.entry(k).or_insert(0.0) += w;
        }
        let positions = cells.keys().map(|&k| origin + (k as f64 + 0.5) * spacing).collect();
        let weights = cells.values().copied().collect();
        Self::from_flat(1, positions, weights)
    }
}

/// (mass, first moment, second moment) of a measure.
pub fn moments(mu: &FiniteMeasure) -> MeasureMoments {
    mu.moments()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_empty_measure() {
        let m = moments(&FiniteMeasure::empty(1));
        assert_eq!((m.mass, m.first[0], m.second), (0.0, 0.0, 0.0));
    }

    #[test]
    fn moments_of_weighted_dirac() {
        let m = moments(&FiniteMeasure::dirac(vec![2.0], 3.0).unwrap());
        assert_eq!((m.mass, m.first[0], m.second), (3.0, 6.0, 12.0));
    }

    #[test]
    fn moments_of_symmetric_pair() {
        let mu = FiniteMeasure::from_points(&[-1.0, 1.0], &[1.0, 1.0]).unwrap();
        let m = moments(&mu);
        assert_eq!((m.mass, m.first[0], m.second), (2.0, 0.0, 2.0));
    }

    #[test]
    fn zero_weights_are_dropped() {
        let mu = FiniteMeasure::from_points(&[0.0, 1.0, 2.0], &[1.0, 1e-17, 0.0]).unwrap();
        assert_eq!(mu.len(), 1);
    }

    #[test]
    fn negative_weight_rejected() {
        assert!(FiniteMeasure::from_points(&[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn dimension_checked() {
        assert!(FiniteMeasure::from_atoms(2, &[(vec![1.0], 1.0)]).is_err());
        assert!(FiniteMeasure::from_flat(2, vec![1.0, 2.0, 3.0], vec![1.0]).is_err());
    }

    #[test]
    fn two_atom_moment_match() {
        let mu = FiniteMeasure::from_moments_1d(2.0, 1.0, 3.0).unwrap();
        let m = mu.moments();
        assert!((m.mass - 2.0).abs() < 1e-14);
        assert!((m.first[0] - 1.0).abs() < 1e-14);
        assert!((m.second - 3.0).abs() < 1e-14);
        assert!(FiniteMeasure::from_moments_1d(1.0, 2.0, 1.0).is_err());
        assert!(FiniteMeasure::from_moments_1d(0.0, 0.0, 0.0).unwrap().is_empty());
    }

    #[test]
    fn subsample_preserves_mass() {
        use rand::SeedableRng;
        let pts: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let mu = FiniteMeasure::from_points(&pts, &vec![0.5; 100]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let sub = mu.subsample(10, &mut rng);
        assert_eq!(sub.len(), 10);
        assert!((sub.mass() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn binning_moves_atoms_to_centres() {
        let mu = FiniteMeasure::from_points(&[0.01, 0.04, 0.26], &[1.0, 1.0, 2.0]).unwrap();
        let b = mu.binned_1d(0.0, 0.1).unwrap();
        assert_eq!(b.len(), 2);
        assert!((b.position(0)[0] - 0.05).abs() < 1e-15 && (b.weights()[0] - 2.0).abs() < 1e-15);
        assert!((b.position(1)[0] - 0.25).abs() < 1e-15);
    }
}
