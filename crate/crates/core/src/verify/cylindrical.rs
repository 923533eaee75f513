use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::FiniteMeasure;

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A test function `φ: ℝ^d → ℝ` with gradient and row-major Hessian.
#[derive(Clone)]
pub struct InnerFunction {
    pub value: ScalarFn,
    pub gradient: VectorFn,
    pub hessian: VectorFn,
}

impl InnerFunction {
    pub fn new(value: ScalarFn, gradient: VectorFn, hessian: VectorFn) -> Self {
        Self { value, gradient, hessian }
    }

    /// `φ ≡ 1`.
    pub fn one() -> Self {
        Self::new(Arc::new(|_| 1.0), Arc::new(|_, g| g.fill(0.0)), Arc::new(|_, h| h.fill(0.0)))
    }

    /// `φ(x) = x_i`.
    pub fn coordinate(i: usize) -> Self {
        Self::new(
            Arc::new(move |x| x[i]),
            Arc::new(move |_, g| {
                g.fill(0.0);
                g[i] = 1.0;
            }),
            Arc::new(|_, h| h.fill(0.0)),
        )
    }

    /// `φ(x) = |x|²`.
    pub fn square_norm() -> Self {
        Self::new(
            Arc::new(|x| x.iter().map(|v| v * v).sum()),
            Arc::new(|x, g| g.iter_mut().zip(x).for_each(|(g, x)| *g = 2.0 * x)),
            Arc::new(|x, h| {
                let d = x.len();
                h.fill(0.0);
                (0..d).for_each(|i| h[i * d + i] = 2.0);
            }),
        )
    }
}

type OuterFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type OuterGrad = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `F(m) = outer(⟨m, φ₁⟩, .., ⟨m, φ_k⟩)`, whose derivatives are
/// `δF/δμ(m, x) = Σ ∂_i outer · φ_i(x)` and `D_μF(m, x) = Σ ∂_i outer · ∇φ_i(x)`.
#[derive(Clone)]
pub struct CylindricalFunction {
    dim: usize,
    outer: OuterFn,
    outer_grad: OuterGrad,
    inner: Vec<InnerFunction>,
}

impl fmt::Debug for CylindricalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CylindricalFunction").field("dim", &self.dim).field("k", &self.inner.len()).finish()
    }
}

/// Derivatives of `F` at a point, with the outer gradient already applied.
#[derive(Debug, Clone)]
pub struct CylindricalDerivatives {
    /// `δF/δμ(m, x)`.
    pub linear: f64,
    /// `D_μF(m, x)`.
    pub intrinsic: Vec<f64>,
    /// `∂_x D_μF(m, x)`, row-major.
    pub intrinsic_jacobian: Vec<f64>,
}

impl CylindricalFunction {
    pub fn new(dim: usize, outer: OuterFn, outer_grad: OuterGrad, inner: Vec<InnerFunction>) -> Result<Self> {
        if dim == 0 || inner.is_empty() {
            return Err(Error::InvalidParameter("a cylindrical function needs d ≥ 1 and k ≥ 1".into()));
        }
        Ok(Self { dim, outer, outer_grad, inner })
    }

    /// `⟨m, φ⟩` (outer is the identity).
    pub fn linear(dim: usize, phi: InnerFunction) -> Self {
        Self { dim, outer: Arc::new(|y| y[0]), outer_grad: Arc::new(|_, g| g[0] = 1.0), inner: vec![phi] }
    }

    /// Total mass `m̄`.
    pub fn mass(dim: usize) -> Self {
        Self::linear(dim, InnerFunction::one())
    }

    /// First moment `⟨m, x⟩` in one dimension.
    pub fn first_moment() -> Self {
        Self::linear(1, InnerFunction::coordinate(0))
    }

    /// `⟨m, x⟩²` in one dimension.
    pub fn first_moment_squared() -> Self {
        Self {
            dim: 1,
            outer: Arc::new(|y| y[0] * y[0]),
            outer_grad: Arc::new(|y, g| g[0] = 2.0 * y[0]),
            inner: vec![InnerFunction::coordinate(0)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn arity(&self) -> usize {
        self.inner.len()
    }

    /// `(⟨m, φ₁⟩, .., ⟨m, φ_k⟩)`.
    pub fn inner_values(&self, m: &FiniteMeasure) -> Result<Vec<f64>> {
        if m.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: m.dim() });
        }
        Ok(self.inner.iter().map(|phi| m.integrate(|x| (phi.value)(x))).collect())
    }

    pub fn eval(&self, m: &FiniteMeasure) -> Result<f64> {
        Ok((self.outer)(&self.inner_values(m)?))
    }

    /// Gradient of the outer function at `m`.
    pub fn outer_gradient(&self, m: &FiniteMeasure) -> Result<Vec<f64>> {
        let y = self.inner_values(m)?;
        let mut g = vec![0.0; y.len()];
        (self.outer_grad)(&y, &mut g);
        Ok(g)
    }

    /// Derivatives at `x`, given the outer gradient from [`Self::outer_gradient`].
    pub fn derivatives_at(&self, outer_grad: &[f64], x: &[f64]) -> CylindricalDerivatives {
        let d = self.dim;
        let mut out =
            CylindricalDerivatives { linear: 0.0, intrinsic: vec![0.0; d], intrinsic_jacobian: vec![0.0; d * d] };
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        for (phi, c) in self.inner.iter().zip(outer_grad) {
            out.linear += c * (phi.value)(x);
            (phi.gradient)(x, &mut g);
            (phi.hessian)(x, &mut h);
            out.intrinsic.iter_mut().zip(&g).for_each(|(o, v)| *o += c * v);
            out.intrinsic_jacobian.iter_mut().zip(&h).for_each(|(o, v)| *o += c * v);
        }
        out
    }

    /// `δF/δμ(m, x)`.
    pub fn linear_derivative(&self, m: &FiniteMeasure, x: &[f64]) -> Result<f64> {
        Ok(self.derivatives_at(&self.outer_gradient(m)?, x).linear)
    }

    /// `D_μF(m, x)`.
    pub fn intrinsic_derivative(&self, m: &FiniteMeasure, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.derivatives_at(&self.outer_gradient(m)?, x).intrinsic)
    }

    /// Checks `|φ_i(x)| ≤ c (1 + |x|²)` at the sampled points.
    pub fn check_quadratic_growth(&self, points: &[Vec<f64>], c: f64) -> Result<()> {
        for x in points {
            let bound = c * (1.0 + x.iter().map(|v| v * v).sum::<f64>());
            for (i, phi) in self.inner.iter().enumerate() {
                let v = (phi.value)(x);
                if !(v.abs() <= bound) {
                    return Err(Error::OutOfRange(format!("|φ_{}({x:?})| = {} exceeds {bound}", i + 1, v.abs())));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FiniteMeasure {
        FiniteMeasure::from_points(&[-1.0, 0.5, 2.0], &[0.5, 1.0, 0.25]).unwrap()
    }

    #[test]
    fn moments_evaluate() {
        let m = sample();
        assert!((CylindricalFunction::mass(1).eval(&m).unwrap() - 1.75).abs() < 1e-15);
        assert!((CylindricalFunction::first_moment().eval(&m).unwrap() - 0.5).abs() < 1e-15);
        assert!((CylindricalFunction::first_moment_squared().eval(&m).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn linear_derivative_matches_directional_difference() {
        // d/dε F(m + ε δ_x) at ε = 0 equals δF/δμ(m, x).
        let f = CylindricalFunction::new(
            1,
            Arc::new(|y| y[0] * y[1].sin()),
            Arc::new(|y, g| {
                g[0] = y[1].sin();
                g[1] = y[0] * y[1].cos();
            }),
            vec![InnerFunction::coordinate(0), InnerFunction::square_norm()],
        )
        .unwrap();
        let m = sample();
        for x in [-0.7, 0.3, 1.9] {
            let eps = 1e-6;
            let bumped = m.blend(1.0, &FiniteMeasure::dirac(vec![x], 1.0).unwrap(), eps).unwrap();
            let shrunk = m.blend(1.0, &FiniteMeasure::dirac(vec![x], 1.0).unwrap(), -eps);
            let fd = match shrunk {
                Ok(s) => (f.eval(&bumped).unwrap() - f.eval(&s).unwrap()) / (2.0 * eps),
                Err(_) => (f.eval(&bumped).unwrap() - f.eval(&m).unwrap()) / eps,
            };
            let exact = f.linear_derivative(&m, &[x]).unwrap();
            assert!((fd - exact).abs() < 1e-5, "{fd} vs {exact}");
            // D_μF is the x-gradient of δF/δμ.
            let h = 1e-6;
            let grad =
                (f.linear_derivative(&m, &[x + h]).unwrap() - f.linear_derivative(&m, &[x - h]).unwrap()) / (2.0 * h);
            assert!((grad - f.intrinsic_derivative(&m, &[x]).unwrap()[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn growth_guard() {
        let f = CylindricalFunction::linear(1, InnerFunction::square_norm());
        assert!(f.check_quadratic_growth(&[vec![3.0], vec![-10.0]], 1.0).is_ok());
        let cubic = InnerFunction::new(Arc::new(|x| x[0].powi(3)), Arc::new(|x, g| g[0] = 3.0 * x[0] * x[0]), Arc::new(|x, h| h[0] = 6.0 * x[0]));
        assert!(CylindricalFunction::linear(1, cubic).check_quadratic_growth(&[vec![10.0]], 1.0).is_err());
    }
}
