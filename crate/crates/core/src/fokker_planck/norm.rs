use serde::{Deserialize, Serialize};

use super::density::SpaceGrid;
use crate::error::{Error, Result};

/// Exponential weight `e^{η(x)}` with `η(x) = η₀ √(1 + |x|²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNormSpec {
    pub eta0: f64,
}

impl WeightedNormSpec {
    pub fn new(eta0: f64) -> Result<Self> {
        if !(eta0 >= 0.0) || !eta0.is_finite() {
            return Err(Error::InvalidParameter(format!("eta0 = {eta0} must be finite and non-negative")));
        }
        Ok(Self { eta0 })
    }

    pub fn eta(&self, x: f64) -> f64 {
        self.eta0 * (1.0 + x * x).sqrt()
    }
}

/// `√(Σ_j e^{η(x_j)} ρ_j² Δx)`; `∞` when the weighted sum overflows.
pub fn eta_norm(rho: &[f64], space: &SpaceGrid, spec: &WeightedNormSpec) -> Result<f64> {
    if rho.len() != space.cells() {
        return Err(Error::DimensionMismatch { expected: space.cells(), got: rho.len() });
    }
    if let Some(r) = rho.iter().find(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("density value {r}")));
    }
    let mut sum = 0.0;
    for (j, r) in rho.iter().enumerate() {
        if *r == 0.0 {
            continue;
        }
        let w = spec.eta(space.center(j)).exp();
        if !w.is_finite() {
            return Ok(f64::INFINITY);
        }
        sum += w * r * r;
    }
    Ok((sum * space.dx()).sqrt())
}
