use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ulam-Harris-Neveu label: the genealogical path from a root ancestor.
///
/// Child `i` (1-based) of label `k` is `k` with `i` appended.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(Vec<u32>);

impl Label {
    pub fn new(path: Vec<u32>) -> Result<Self> {
        if path.is_empty() || path.contains(&0) {
            return Err(Error::InvalidConfiguration(format!(
                "label {path:?} must be a non-empty sequence of positive integers"
            )));
        }
        Ok(Label(path))
    }

    /// Root label `[i]`.
    pub fn root(i: u32) -> Self {
        assert!(i > 0);
        Label(vec![i])
    }

    pub fn child(&self, i: u32) -> Self {
        assert!(i > 0);
        let mut path = Vec::with_capacity(self.0.len() + 1);
        path.extend_from_slice(&self.0);
        path.push(i);
        Label(path)
    }

    pub fn path(&self) -> &[u32] {
        &self.0
    }

    pub fn generation(&self) -> usize {
        self.0.len()
    }

    pub fn parent(&self) -> Option<Label> {
        (self.0.len() > 1).then(|| Label(self.0[..self.0.len() - 1].to_vec()))
    }

    /// True when `self` is an ancestor of (or equal to) `other`.
    pub fn is_prefix_of(&self, other: &Label) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("."))
    }
}

/// A finite set of alive particles: labels form an antichain, each with a position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    dim: usize,
    particles: Vec<(Label, Vec<f64>)>,
}

impl Configuration {
    pub fn empty(dim: usize) -> Self {
        Self { dim, particles: Vec::new() }
    }

    /// Validates the antichain property and dimensions; particles are stored
    /// sorted by label.
    pub fn new(dim: usize, mut particles: Vec<(Label, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfiguration("dimension must be positive".into()));
        }
        for (label, x) in &particles {
            if x.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfiguration(format!("particle {label} has a non-finite position")));
            }
        }
        particles.sort_by(|a, b| a.0.cmp(&b.0));
        // In lexicographic order every descendant of a label directly follows it.
        for pair in particles.windows(2) {
            if pair[0].0.is_prefix_of(&pair[1].0) {
                return Err(Error::InvalidConfiguration(format!(
                    "labels {} and {} are not an antichain",
                    pair[0].0, pair[1].0
                )));
            }
        }
        Ok(Self { dim, particles })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[(Label, Vec<f64>)] {
        &self.particles
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.particles.iter().map(|p| &p.0)
    }

    /// ⟨e, f⟩ for a label-independent test function.
    pub fn pair<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.particles.iter().map(|(_, x)| f(x)).sum()
    }
}

/// `#(K1 Δ K2) + Σ_{k ∈ K1∩K2} min(|x^k - y^k|, 1)`.
pub fn config_distance(e1: &Configuration, e2: &Configuration) -> Result<f64> {
    if e1.dim != e2.dim {
        return Err(Error::DimensionMismatch { expected: e1.dim, got: e2.dim });
    }
    let (a, b) = (&e1.particles, &e2.particles);
    let (mut i, mut j) = (0, 0);
    let mut unmatched = 0usize;
    let mut shared = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => {
                unmatched += 1;
                i += 1;
            }
            Ordering::Greater => {
                unmatched += 1;
                j += 1;
            }
            Ordering::Equal => {
                let d: f64 = a[i].1.iter().zip(&b[j].1).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                shared += d.min(1.0);
                i += 1;
                j += 1;
            }
        }
    }
    unmatched += (a.len() - i) + (b.len() - j);
    Ok(unmatched as f64 + shared)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(items: &[(&[u32], f64)]) -> Configuration {
        Configuration::new(1, items.iter().map(|(l, x)| (Label::new(l.to_vec()).unwrap(), vec![*x])).collect())
            .unwrap()
    }

    #[test]
    fn distance_identity() {
        let e = cfg(&[(&[1], 0.3)]);
        assert_eq!(config_distance(&e, &e).unwrap(), 0.0);
    }

    #[test]
    fn distance_shared_label() {
        let d = config_distance(&cfg(&[(&[1], 0.3)]), &cfg(&[(&[1], 0.5)])).unwrap();
        assert!((d - 0.2).abs() < 1e-15);
    }

    #[test]
    fn distance_disjoint_labels() {
        assert_eq!(config_distance(&cfg(&[(&[1], 0.0)]), &cfg(&[(&[2], 0.0)])).unwrap(), 2.0);
    }

    #[test]
    fn distance_truncates_shared_displacement() {
        let d = config_distance(&cfg(&[(&[1], 0.0), (&[2], 0.0)]), &cfg(&[(&[1], 2.0)])).unwrap();
        assert_eq!(d, 2.0);
    }

    #[test]
    fn antichain_enforced() {
        let r = Configuration::new(
            1,
            vec![(Label::new(vec![1]).unwrap(), vec![0.0]), (Label::new(vec![1, 2]).unwrap(), vec![0.0])],
        );
        assert!(r.is_err());
        let dup = Configuration::new(1, vec![(Label::root(1), vec![0.0]), (Label::root(1), vec![1.0])]);
        assert!(dup.is_err());
        // siblings and cousins are fine
        assert!(Configuration::new(
            1,
            vec![
                (Label::new(vec![1, 1]).unwrap(), vec![0.0]),
                (Label::new(vec![1, 2]).unwrap(), vec![0.0]),
                (Label::new(vec![2]).unwrap(), vec![0.0]),
                (Label::new(vec![12]).unwrap(), vec![0.0]),
            ]
        )
        .is_ok());
    }

    #[test]
    fn dimension_mismatch() {
        let e1 = Configuration::empty(1);
        let e2 = Configuration::empty(2);
        assert!(config_distance(&e1, &e2).is_err());
    }

    #[test]
    fn labels_reject_zero() {
        assert!(Label::new(vec![1, 0]).is_err());
        assert!(Label::new(vec![]).is_err());
        assert_eq!(Label::root(3).child(2).to_string(), "3.2");
        assert_eq!(Label::root(3).child(2).parent(), Some(Label::root(3)));
    }
}
