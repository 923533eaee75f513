use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cost::CostSpec;
use crate::engine::{ModelCoefficients, ProgenyLaw, VectorCoefficient};
use crate::error::{Error, Result};
use crate::time::{TimeFn, TimeFnSpec};

/// Mass, first and second moment of a one-dimensional measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mass: f64,
    pub m1: f64,
    pub m2: f64,
}

impl Moments {
    /// Checks `mass ≥ 0`, `m1² ≤ mass·m2` and zero moments at zero mass.
    pub fn new(mass: f64, m1: f64, m2: f64) -> Result<Self> {
        let m = Self { mass, m1, m2 };
        m.validate()?;
        Ok(m)
    }

    pub const ZERO: Moments = Moments { mass: 0.0, m1: 0.0, m2: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let Moments { mass, m1, m2 } = *self;
        if !(mass.is_finite() && m1.is_finite() && m2.is_finite()) {
            return Err(Error::NonFinite(format!("moments ({mass}, {m1}, {m2})")));
        }
        if mass < 0.0 || m2 < 0.0 {
            return Err(Error::InvalidMeasure(format!("negative mass or second moment in ({mass}, {m1}, {m2})")));
        }
        if mass == 0.0 && (m1 != 0.0 || m2 != 0.0) {
            return Err(Error::InvalidMeasure(format!("zero mass with moments ({m1}, {m2})")));
        }
        if m1 * m1 > mass * m2 * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::InvalidMeasure(format!("m1² = {} exceeds mass·m2 = {}", m1 * m1, mass * m2)));
        }
        Ok(())
    }
}

/// One-dimensional linear-quadratic model:
/// `b = b1 x + b2 m̄ + b3 a`, constant `σ`, `γ` and progeny law, running cost
/// `L1 x² + L2 m̄ + L3 m1 + L4 a²` and terminal cost `g1 x² + g2 m̄ + g3 m1`.
#[derive(Debug, Clone)]
pub struct LQModel {
    pub b1: TimeFn,
    pub b2: TimeFn,
    pub b3: TimeFn,
    pub sigma: f64,
    pub gamma: f64,
    pub p: Vec<f64>,
    pub l1: TimeFn,
    pub l2: TimeFn,
    pub l3: TimeFn,
    pub l4: TimeFn,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub t0: f64,
    pub horizon: f64,
    theta: f64,
    progeny: ProgenyLaw,
}

/// JSON form of [`LQModel`]. Functions of time are numbers or tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LQConfig {
    pub b1: TimeFnSpec,
    pub b2: TimeFnSpec,
    pub b3: TimeFnSpec,
    pub sigma: f64,
    pub gamma: f64,
    pub p: Vec<f64>,
    #[serde(rename = "L1")]
    pub l1: TimeFnSpec,
    #[serde(rename = "L2")]
    pub l2: TimeFnSpec,
    #[serde(rename = "L3")]
    pub l3: TimeFnSpec,
    #[serde(rename = "L4")]
    pub l4: TimeFnSpec,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    #[serde(default)]
    pub t0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl LQConfig {
    pub fn build(&self) -> Result<LQModel> {
        LQModel::new(LQModelParts {
            b: [self.b1.build()?, self.b2.build()?, self.b3.build()?],
            sigma: self.sigma,
            gamma: self.gamma,
            p: self.p.clone(),
            l: [self.l1.build()?, self.l2.build()?, self.l3.build()?, self.l4.build()?],
            g: [self.g1, self.g2, self.g3],
            t0: self.t0,
            horizon: self.horizon,
        })
    }
}

/// Constructor arguments of [`LQModel`].
#[derive(Debug, Clone)]
pub struct LQModelParts {
    pub b: [TimeFn; 3],
    pub sigma: f64,
    pub gamma: f64,
    pub p: Vec<f64>,
    pub l: [TimeFn; 4],
    pub g: [f64; 3],
    pub t0: f64,
    pub horizon: f64,
}

/// Number of points at which `L4 > 0` is checked.
const L4_SAMPLES: usize = 1000;

impl LQModel {
    pub fn new(parts: LQModelParts) -> Result<Self> {
        let LQModelParts { b: [b1, b2, b3], sigma, gamma, p, l: [l1, l2, l3, l4], g: [g1, g2, g3], t0, horizon } = parts;
        if !(horizon > t0) || !t0.is_finite() || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("need t0 < T, got [{t0}, {horizon}]")));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("branching rate must be positive, got {gamma}")));
        }
        if ![sigma, g1, g2, g3].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("LQ constant".into()));
        }
        let progeny = ProgenyLaw::constant(p)?;
        let q = progeny.as_constant().expect("constant law").to_vec();
        if !(progeny.mean_bound() > 0.0) {
            return Err(Error::InvalidParameter("mean offspring number must be strictly positive".into()));
        }
        for i in 0..=L4_SAMPLES {
            let t = t0 + (horizon - t0) * i as f64 / L4_SAMPLES as f64;
            let v = l4.eval(t);
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("L4({t}) = {v} must be positive")));
            }
        }
        let theta = gamma * q.iter().enumerate().map(|(l, v)| (l as f64 - 1.0) * v).sum::<f64>();
        Ok(Self { b1, b2, b3, sigma, gamma, p: q, l1, l2, l3, l4, g1, g2, g3, t0, horizon, theta, progeny })
    }

    /// Constant coefficients on `[0, T]`.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        b: [f64; 3],
        sigma: f64,
        gamma: f64,
        p: Vec<f64>,
        l: [f64; 4],
        g: [f64; 3],
        horizon: f64,
    ) -> Result<Self> {
        Self::new(LQModelParts {
            b: b.map(TimeFn::Constant),
            sigma,
            gamma,
            p,
            l: l.map(TimeFn::Constant),
            g,
            t0: 0.0,
            horizon,
        })
    }

    /// `θ = γ Σ (ℓ - 1) p_ℓ`.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn progeny(&self) -> &ProgenyLaw {
        &self.progeny
    }

    /// `L4(t)`, failing when not positive.
    pub fn l4_at(&self, t: f64) -> Result<f64> {
        let v = self.l4.eval(t);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::InvalidParameter(format!("L4({t}) = {v} must be positive")))
        }
    }

    /// `⟨L(t, ·, m, α), m⟩` for the affine control `α = k0 + k1 x`.
    pub fn running_cost(&self, t: f64, m: &Moments, k0: f64, k1: f64) -> f64 {
        let alpha_sq = k0 * k0 * m.mass + 2.0 * k0 * k1 * m.m1 + k1 * k1 * m.m2;
        self.l1.eval(t) * m.m2 + self.l2.eval(t) * m.mass * m.mass + self.l3.eval(t) * m.mass * m.m1 + self.l4.eval(t) * alpha_sq
    }

    /// `⟨g(·, m), m⟩`.
    pub fn terminal_cost(&self, m: &Moments) -> f64 {
        self.g1 * m.m2 + self.g2 * m.mass * m.mass + self.g3 * m.mass * m.m1
    }

    /// Coefficients for the particle engine.
    pub fn to_coefficients(&self) -> Result<ModelCoefficients> {
        let (b1, b2, b3) = (self.b1.clone(), self.b2.clone(), self.b3.clone());
        let drift: VectorCoefficient = Arc::new(move |t, x: &[f64], mu, a: &[f64], out: &mut [f64]| {
            out[0] = b1.eval(t) * x[0] + b2.eval(t) * mu.mass() + b3.eval(t) * a[0];
        });
        let sigma = self.sigma;
        let diffusion: VectorCoefficient = Arc::new(move |_, _, _, _, out: &mut [f64]| out[0] = sigma);
        ModelCoefficients::with_constant_rate(1, 1, drift, diffusion, self.gamma, self.progeny.clone())
    }

    /// Pointwise running and terminal costs.
    pub fn to_cost_spec(&self) -> CostSpec {
        let (l1, l2, l3, l4) = (self.l1.clone(), self.l2.clone(), self.l3.clone(), self.l4.clone());
        let (g1, g2, g3) = (self.g1, self.g2, self.g3);
        CostSpec::new(
            Arc::new(move |t, x: &[f64], mu, a: &[f64]| {
                l1.eval(t) * x[0] * x[0] + l2.eval(t) * mu.mass() + l3.eval(t) * mu.first_moment()[0] + l4.eval(t) * a[0] * a[0]
            }),
            Arc::new(move |x: &[f64], mu| g1 * x[0] * x[0] + g2 * mu.mass() + g3 * mu.first_moment()[0]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_from_progeny() {
        let m = LQModel::constant([0.0; 3], 1.0, 2.0, vec![0.2, 0.3, 0.5], [0.0, 0.0, 0.0, 1.0], [0.0; 3], 1.0).unwrap();
        assert!((m.theta() - 2.0 * (-0.2 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_l4_rejected() {
        let r = LQModel::constant([0.0; 3], 1.0, 1.0, vec![0.0, 1.0], [0.0, 0.0, 0.0, 0.0], [0.0; 3], 1.0);
        assert!(r.is_err());
        let l4 = TimeFn::closure(|t| 0.5 - t);
        let r = LQModel::new(LQModelParts {
            b: [TimeFn::default(), TimeFn::default(), TimeFn::default()],
            sigma: 1.0,
            gamma: 1.0,
            p: vec![0.0, 1.0],
            l: [TimeFn::default(), TimeFn::default(), TimeFn::default(), l4],
            g: [0.0; 3],
            t0: 0.0,
            horizon: 1.0,
        });
        assert!(r.is_err());
    }

    #[test]
    fn zero_mean_offspring_rejected() {
        assert!(LQModel::constant([0.0; 3], 1.0, 1.0, vec![1.0], [0.0, 0.0, 0.0, 1.0], [0.0; 3], 1.0).is_err());
    }

    #[test]
    fn moments_validation() {
        assert!(Moments::new(1.0, 2.0, 1.0).is_err());
        assert!(Moments::new(0.0, 0.0, 1.0).is_err());
        assert!(Moments::new(-1.0, 0.0, 1.0).is_err());
        assert!(Moments::new(2.0, 2.0, 2.0).is_ok());
    }

    #[test]
    fn config_rejects_unknown_and_missing_keys() {
        let ok = r#"{"b1":0,"b2":0,"b3":1,"sigma":1,"gamma":1,"p":[0,1],"L1":1,"L2":0,"L3":0,"L4":{"t":[0,1],"v":[1,2]},"g1":1,"g2":0,"g3":0,"T":1}"#;
        let cfg: LQConfig = serde_json::from_str(ok).unwrap();
        let m = cfg.build().unwrap();
        assert_eq!(m.l4.eval(0.5), 1.5);
        let missing = ok.replace(r#""L4":{"t":[0,1],"v":[1,2]},"#, "");
        assert!(serde_json::from_str::<LQConfig>(&missing).is_err());
        let extra = ok.replace(r#""T":1"#, r#""T":1,"bogus":2"#);
        assert!(serde_json::from_str::<LQConfig>(&extra).is_err());
    }

    #[test]
    fn cost_spec_integrates_to_moment_form() {
        let m = LQModel::constant([0.0; 3], 1.0, 1.0, vec![0.0, 1.0], [1.3, -0.4, 0.7, 2.0], [0.5, 1.5, -1.0], 1.0).unwrap();
        let mu = crate::measures::FiniteMeasure::from_points(&[-1.0, 0.5, 2.0], &[0.3, 1.0, 0.7]).unwrap();
        let costs = m.to_cost_spec();
        let (k0, k1) = (0.3, -0.8);
        let direct = mu.integrate(|x| (costs.running)(0.2, x, &mu, &[k0 + k1 * x[0]]));
        let mom = Moments { mass: mu.mass(), m1: mu.first_moment()[0], m2: mu.second_moment() };
        assert!((direct - m.running_cost(0.2, &mom, k0, k1)).abs() < 1e-12);
        let direct = mu.integrate(|x| (costs.terminal)(x, &mu));
        assert!((direct - m.terminal_cost(&mom)).abs() < 1e-12);
    }
}
