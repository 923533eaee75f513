use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::FiniteMeasure;
use crate::time::TimeFn;

/// `(t, x, μ, a, out)`: writes a d-vector into `out`.
pub type VectorCoefficient = Arc<dyn Fn(f64, &[f64], &FiniteMeasure, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, μ, a) -> value`.
pub type ScalarCoefficient = Arc<dyn Fn(f64, &[f64], &FiniteMeasure, &[f64]) -> f64 + Send + Sync>;
/// `(t, x, out)`: writes the control value into `out`.
pub type Feedback = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Default cap on the number of offspring per branching event.
pub const DEFAULT_MAX_OFFSPRING: usize = 10;

const PROB_TOL: f64 = 1e-12;

/// Offspring-count distribution `(p_0, ..., p_ℓmax)`, possibly depending on
/// `(t, x, μ, a)`.
#[derive(Clone)]
pub struct ProgenyLaw {
    evaluator: VectorCoefficient,
    max_offspring: usize,
    mean_bound: f64,
    lipschitz: Vec<f64>,
    constant: Option<Vec<f64>>,
}

impl fmt::Debug for ProgenyLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProgenyLaw")
            .field("max_offspring", &self.max_offspring)
            .field("mean_bound", &self.mean_bound)
            .field("constant", &self.constant)
            .finish()
    }
}

impl ProgenyLaw {
    /// A state-independent law. Entries beyond [`DEFAULT_MAX_OFFSPRING`] are
    /// folded into the last retained entry.
    pub fn constant(p: Vec<f64>) -> Result<Self> {
        Self::constant_with_cap(p, DEFAULT_MAX_OFFSPRING)
    }

    pub fn constant_with_cap(mut p: Vec<f64>, max_offspring: usize) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidParameter("empty progeny law".into()));
        }
        if p.iter().any(|v| !v.is_finite() || *v < -PROB_TOL || *v > 1.0 + PROB_TOL) {
            return Err(Error::InvalidParameter(format!("progeny probabilities {p:?} must lie in [0, 1]")));
        }
        if p.len() > max_offspring + 1 {
            let tail: f64 = p[max_offspring + 1..].iter().sum();
            p.truncate(max_offspring + 1);
            p[max_offspring] += tail;
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("progeny probabilities sum to {total}, not 1")));
        }
        for v in p.iter_mut() {
            *v = v.max(0.0) / total;
        }
        let mean_bound = p.iter().enumerate().map(|(l, v)| l as f64 * v).sum();
        let len = p.len();
        let table = p.clone();
        let evaluator: VectorCoefficient = Arc::new(move |_, _, _, _, out: &mut [f64]| {
            out[..table.len()].copy_from_slice(&table);
        });
        Ok(Self { evaluator, max_offspring: len - 1, mean_bound, lipschitz: vec![0.0; len], constant: Some(p) })
    }

    /// A general law. `mean_bound` is the uniform bound `M₁` on `Σ ℓ p_ℓ`;
    /// `lipschitz` holds the constants `C_ℓ` (metadata only).
    pub fn new(evaluator: VectorCoefficient, max_offspring: usize, mean_bound: f64, lipschitz: Vec<f64>) -> Result<Self> {
        if !(mean_bound >= 0.0) {
            return Err(Error::InvalidParameter(format!("mean bound must be nonnegative, got {mean_bound}")));
        }
        Ok(Self { evaluator, max_offspring, mean_bound, lipschitz, constant: None })
    }

    pub fn max_offspring(&self) -> usize {
        self.max_offspring
    }

    /// `M₁`.
    pub fn mean_bound(&self) -> f64 {
        self.mean_bound
    }

    /// `M = Σ ℓ C_ℓ`.
    pub fn lipschitz_moment(&self) -> f64 {
        self.lipschitz.iter().enumerate().map(|(l, c)| l as f64 * c).sum()
    }

    pub fn as_constant(&self) -> Option<&[f64]> {
        self.constant.as_deref()
    }

    /// Evaluates, validates and renormalizes the law into `out`
    /// (length `max_offspring + 1`).
    pub fn evaluate(&self, t: f64, x: &[f64], mu: &FiniteMeasure, a: &[f64], out: &mut [f64]) -> Result<()> {
        if let Some(p) = &self.constant {
            out.copy_from_slice(p);
            return Ok(());
        }
        out.fill(0.0);
        (self.evaluator)(t, x, mu, a, out);
        let mut total = 0.0;
        for v in out.iter_mut() {
            if !v.is_finite() || *v < -PROB_TOL || *v > 1.0 + PROB_TOL {
                return Err(Error::OutOfRange(format!("progeny probability {v} at t = {t}, x = {x:?}")));
            }
            *v = v.max(0.0);
            total += *v;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::OutOfRange(format!("progeny probabilities sum to {total} at t = {t}, x = {x:?}")));
        }
        let mut mean = 0.0;
        for (l, v) in out.iter_mut().enumerate() {
            *v /= total;
            mean += l as f64 * *v;
        }
        if mean > self.mean_bound + 1e-12 {
            return Err(Error::OutOfRange(format!(
                "mean offspring {mean} exceeds declared bound {} at t = {t}, x = {x:?}",
                self.mean_bound
            )));
        }
        Ok(())
    }
}

/// `Σ (ℓ - 1) p_ℓ`.
pub fn net_offspring(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(l, v)| (l as f64 - 1.0) * v).sum()
}

/// The index `ℓ` with `u ∈ [Σ_{i<ℓ} p_i, Σ_{i≤ℓ} p_i)`.
pub fn sample_offspring(u: f64, p: &[f64]) -> usize {
    let mut acc = 0.0;
    for (l, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return l;
        }
    }
    // u can only land here through rounding of the cumulative sum
    p.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

/// Drift, diffusion, death rate and progeny law of a controlled branching
/// diffusion with mean-field interaction.
#[derive(Clone)]
pub struct ModelCoefficients {
    pub dim: usize,
    pub control_dim: usize,
    pub drift: VectorCoefficient,
    /// Row-major `d × d` matrix.
    pub diffusion: VectorCoefficient,
    pub death_rate: ScalarCoefficient,
    pub gamma_bar: f64,
    pub progeny: ProgenyLaw,
    /// Optional constant `C` of the growth bound `|b| + |σ| ≤ C(1 + |x| + mass + |a|)`.
    pub growth_constant: Option<f64>,
    /// Set when the death rate is the constant `gamma_bar`.
    pub constant_rate: Option<f64>,
}

impl fmt::Debug for ModelCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelCoefficients")
            .field("dim", &self.dim)
            .field("control_dim", &self.control_dim)
            .field("gamma_bar", &self.gamma_bar)
            .field("progeny", &self.progeny)
            .finish_non_exhaustive()
    }
}

impl ModelCoefficients {
    pub fn new(
        dim: usize,
        control_dim: usize,
        drift: VectorCoefficient,
        diffusion: VectorCoefficient,
        death_rate: ScalarCoefficient,
        gamma_bar: f64,
        progeny: ProgenyLaw,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("state dimension must be positive".into()));
        }
        if !(gamma_bar > 0.0) || !gamma_bar.is_finite() {
            return Err(Error::InvalidParameter(format!("dominating rate must be positive, got {gamma_bar}")));
        }
        Ok(Self {
            dim,
            control_dim,
            drift,
            diffusion,
            death_rate,
            gamma_bar,
            progeny,
            growth_constant: None,
            constant_rate: None,
        })
    }

    /// Constant death rate `gamma` (which is also the dominating rate).
    pub fn with_constant_rate(
        dim: usize,
        control_dim: usize,
        drift: VectorCoefficient,
        diffusion: VectorCoefficient,
        gamma: f64,
        progeny: ProgenyLaw,
    ) -> Result<Self> {
        let mut m = Self::new(dim, control_dim, drift, diffusion, Arc::new(move |_, _, _, _| gamma), gamma, progeny)?;
        m.constant_rate = Some(gamma);
        Ok(m)
    }

    pub fn with_growth_constant(mut self, c: f64) -> Self {
        self.growth_constant = Some(c);
        self
    }

    /// Death rate at a point, checked against `[0, γ̄]`.
    pub fn rate(&self, t: f64, x: &[f64], mu: &FiniteMeasure, a: &[f64]) -> Result<f64> {
        let g = (self.death_rate)(t, x, mu, a);
        if !g.is_finite() || g < 0.0 || g > self.gamma_bar * (1.0 + 1e-12) {
            return Err(Error::OutOfRange(format!(
                "death rate {g} outside [0, {}] at t = {t}, x = {x:?}",
                self.gamma_bar
            )));
        }
        Ok(g)
    }

    /// `γ(t,x,μ,a) Σ (ℓ-1) p_ℓ(t,x,μ,a)`, the local mass growth rate.
    pub fn growth_rate(&self, t: f64, x: &[f64], mu: &FiniteMeasure, a: &[f64]) -> Result<f64> {
        let g = self.rate(t, x, mu, a)?;
        let mut p = vec![0.0; self.progeny.max_offspring() + 1];
        self.progeny.evaluate(t, x, mu, a, &mut p)?;
        Ok(g * net_offspring(&p))
    }

    /// Checks the declared linear-growth bound at the given points.
    pub fn spot_check_growth(&self, points: &[(f64, Vec<f64>, Vec<f64>)], mu: &FiniteMeasure) -> Result<()> {
        let Some(c) = self.growth_constant else {
            return Ok(());
        };
        let mut b = vec![0.0; self.dim];
        let mut s = vec![0.0; self.dim * self.dim];
        for (t, x, a) in points {
            (self.drift)(*t, x, mu, a, &mut b);
            (self.diffusion)(*t, x, mu, a, &mut s);
            let lhs = norm(&b) + norm(&s);
            let rhs = c * (1.0 + norm(x) + mu.mass() + norm(a));
            if lhs > rhs * (1.0 + 1e-12) {
                return Err(Error::OutOfRange(format!("growth bound violated at t = {t}, x = {x:?}: {lhs} > {rhs}")));
            }
        }
        Ok(())
    }
}

/// Scalar control law form.
#[derive(Debug, Clone)]
pub enum ControlKind {
    /// `a = k0(t) + k1(t) x` (one-dimensional state and control).
    Affine { k0: TimeFn, k1: TimeFn },
    General,
}

/// Feedback `a = α(t, x)`, applied identically to every particle.
#[derive(Clone)]
pub struct ClosedLoopControl {
    feedback: Feedback,
    dim: usize,
    lipschitz: f64,
    kind: ControlKind,
}

impl fmt::Debug for ClosedLoopControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosedLoopControl")
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("kind", &self.kind)
            .finish()
    }
}

impl ClosedLoopControl {
    pub fn zero(dim: usize) -> Self {
        Self { feedback: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)), dim, lipschitz: 0.0, kind: ControlKind::General }
    }

    pub fn general(dim: usize, lipschitz: f64, feedback: Feedback) -> Self {
        Self { feedback, dim, lipschitz, kind: ControlKind::General }
    }

    /// `a = k0(t) + k1(t) x`; `lipschitz` should bound `|k0|` and `|k1|` on the horizon.
    pub fn affine(k0: TimeFn, k1: TimeFn, lipschitz: f64) -> Self {
        let (f0, f1) = (k0.clone(), k1.clone());
        let feedback: Feedback = Arc::new(move |t, x, out: &mut [f64]| {
            out[0] = f0.eval(t) + f1.eval(t) * x[0];
        });
        Self { feedback, dim: 1, lipschitz, kind: ControlKind::Affine { k0, k1 } }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn kind(&self) -> &ControlKind {
        &self.kind
    }

    #[inline]
    pub fn apply(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.feedback)(t, x, out)
    }

    /// Checks `|α(t,x) - α(t,x')| ≤ L|x - x'|` over all pairs of the given
    /// states at each time, and `|α(t,x)| ≤ L(1 + |x|)`.
    pub fn spot_check(&self, times: &[f64], states: &[Vec<f64>]) -> Result<()> {
        let mut a = vec![0.0; self.dim];
        let mut b = vec![0.0; self.dim];
        let tol = 1e-9;
        for &t in times {
            for (i, x) in states.iter().enumerate() {
                self.apply(t, x, &mut a);
                if norm(&a) > self.lipschitz * (1.0 + norm(x)) + tol {
                    return Err(Error::OutOfRange(format!("control growth bound violated at t = {t}, x = {x:?}")));
                }
                for y in &states[i + 1..] {
                    self.apply(t, y, &mut b);
                    let diff: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
                    let dx: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
                    if norm(&diff) > self.lipschitz * norm(&dx) + tol {
                        return Err(Error::OutOfRange(format!(
                            "control is not {}-Lipschitz between {x:?} and {y:?} at t = {t}",
                            self.lipschitz
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
