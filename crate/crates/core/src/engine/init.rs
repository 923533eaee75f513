use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{Configuration, FiniteMeasure, Label};

/// Initial mean measure `ν₀`, either atomic or a named one-dimensional family.
#[derive(Debug, Clone)]
pub enum InitialLaw {
    Atomic { measure: FiniteMeasure, index: Option<WeightedIndex<f64>> },
    Gaussian { mass: f64, mean: f64, sd: f64 },
    Uniform { mass: f64, lo: f64, hi: f64 },
}

impl InitialLaw {
    pub fn atomic(measure: FiniteMeasure) -> Result<Self> {
        let index = if measure.is_empty() {
            None
        } else {
            Some(
                WeightedIndex::new(measure.weights().iter().copied())
                    .map_err(|e| Error::InvalidMeasure(format!("cannot sample atoms: {e}")))?,
            )
        };
        Ok(InitialLaw::Atomic { measure, index })
    }

    pub fn gaussian(mass: f64, mean: f64, sd: f64) -> Result<Self> {
        if !(mass >= 0.0) || !(sd >= 0.0) || !mean.is_finite() || !mass.is_finite() || !sd.is_finite() {
            return Err(Error::InvalidParameter(format!("gaussian(mass = {mass}, mean = {mean}, sd = {sd})")));
        }
        Ok(InitialLaw::Gaussian { mass, mean, sd })
    }

    pub fn uniform(mass: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(mass >= 0.0) || !(hi > lo) || !mass.is_finite() || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("uniform(mass = {mass}, a = {lo}, b = {hi})")));
        }
        Ok(InitialLaw::Uniform { mass, lo, hi })
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Atomic { measure, .. } => measure.dim(),
            _ => 1,
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            InitialLaw::Atomic { measure, .. } => measure.mass(),
            InitialLaw::Gaussian { mass, .. } | InitialLaw::Uniform { mass, .. } => *mass,
        }
    }

    /// `(mass, m1, m2)` for one-dimensional laws.
    pub fn moments_1d(&self) -> (f64, f64, f64) {
        match self {
            InitialLaw::Atomic { measure, .. } => (measure.mass(), measure.first_moment()[0], measure.second_moment()),
            InitialLaw::Gaussian { mass, mean, sd } => (*mass, mass * mean, mass * (sd * sd + mean * mean)),
            InitialLaw::Uniform { mass, lo, hi } => {
                let m = 0.5 * (lo + hi);
                let var = (hi - lo) * (hi - lo) / 12.0;
                (*mass, mass * m, mass * (var + m * m))
            }
        }
    }

    /// The law as an atomic measure; continuous families become two-atom
    /// moment-matching measures.
    pub fn to_measure(&self) -> Result<FiniteMeasure> {
        match self {
            InitialLaw::Atomic { measure, .. } => Ok(measure.clone()),
            _ => {
                let (m, m1, m2) = self.moments_1d();
                FiniteMeasure::from_moments_1d(m, m1, m2)
            }
        }
    }

    /// One draw from the normalized law `ν₀ / mass`.
    pub fn sample_position<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            InitialLaw::Atomic { measure, index } => {
                let i = index.as_ref().expect("sampling from an empty measure").sample(rng);
                out.copy_from_slice(measure.position(i));
            }
            InitialLaw::Gaussian { mean, sd, .. } => {
                out[0] = Normal::new(*mean, *sd).expect("validated").sample(rng);
            }
            InitialLaw::Uniform { lo, hi, .. } => {
                out[0] = Uniform::new(*lo, *hi).expect("validated").sample(rng);
            }
        }
    }
}

/// How the particle count of an initial configuration is drawn. Positions
/// are always i.i.d. from `ν₀ / mass`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Exactly `mass` particles; the mass must be an integer.
    DeterministicRounding,
    /// `⌊mass⌋ + Bernoulli(frac(mass))` particles.
    BernoulliResidual,
    /// `Poisson(mass)` particles.
    Poisson,
}

/// Draws a configuration with expected mean measure `ν₀`; roots are labelled
/// `[1], ..., [n]`.
pub fn init_population<R: Rng + ?Sized>(law: &InitialLaw, scheme: InitScheme, rng: &mut R) -> Result<Configuration> {
    let mass = law.mass();
    let n = match scheme {
        InitScheme::DeterministicRounding => {
            let r = mass.round();
            if (mass - r).abs() > 1e-9 {
                return Err(Error::NonIntegerMass(mass));
            }
            r as usize
        }
        InitScheme::BernoulliResidual => {
            let whole = mass.floor();
            let frac = mass - whole;
            whole as usize + usize::from(frac > 0.0 && rng.random::<f64>() < frac)
        }
        InitScheme::Poisson => {
            if mass > 0.0 {
                Poisson::new(mass).map_err(|e| Error::InvalidParameter(e.to_string()))?.sample(rng) as usize
            } else {
                0
            }
        }
    };
    let dim = law.dim();
    let mut particles = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = vec![0.0; dim];
        law.sample_position(rng, &mut x);
        particles.push((Label::root(i as u32 + 1), x));
    }
    Configuration::new(dim, particles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::tree_rng;
    use crate::stats::MeanEstimate;

    #[test]
    fn deterministic_rounding_emits_exact_count() {
        let law = InitialLaw::gaussian(3.0, 0.0, 1.0).unwrap();
        let cfg = init_population(&law, InitScheme::DeterministicRounding, &mut tree_rng(1, 0)).unwrap();
        let labels: Vec<String> = cfg.labels().map(|l| l.to_string()).collect();
        assert_eq!(labels, ["1", "2", "3"]);
    }

    #[test]
    fn zero_mass_gives_empty_configuration() {
        let law = InitialLaw::atomic(FiniteMeasure::empty(1)).unwrap();
        for scheme in [InitScheme::DeterministicRounding, InitScheme::BernoulliResidual, InitScheme::Poisson] {
            assert!(init_population(&law, scheme, &mut tree_rng(1, 0)).unwrap().is_empty());
        }
    }

    #[test]
    fn non_integer_mass_rejected_by_rounding() {
        let law = InitialLaw::gaussian(2.5, 0.0, 1.0).unwrap();
        assert!(matches!(
            init_population(&law, InitScheme::DeterministicRounding, &mut tree_rng(1, 0)),
            Err(Error::NonIntegerMass(_))
        ));
    }

    #[test]
    fn bernoulli_residual_mean_count() {
        let law = InitialLaw::gaussian(2.5, 0.0, 1.0).unwrap();
        let counts: Vec<f64> = (0..100_000)
            .map(|i| init_population(&law, InitScheme::BernoulliResidual, &mut tree_rng(11, i)).unwrap().len() as f64)
            .collect();
        assert!(counts.iter().all(|&c| c == 2.0 || c == 3.0));
        let est = MeanEstimate::from_samples(&counts);
        assert!(est.within(2.5, 3.0), "{est:?}");
    }

    #[test]
    fn atomic_law_samples_support() {
        let mu = FiniteMeasure::from_points(&[-1.0, 4.0], &[1.0, 3.0]).unwrap();
        let law = InitialLaw::atomic(mu).unwrap();
        let cfg = init_population(&law, InitScheme::DeterministicRounding, &mut tree_rng(2, 0)).unwrap();
        assert_eq!(cfg.len(), 4);
        assert!(cfg.particles().iter().all(|(_, x)| x[0] == -1.0 || x[0] == 4.0));
    }
}
