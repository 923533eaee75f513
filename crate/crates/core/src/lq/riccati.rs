use std::io::Write;

use serde::{Deserialize, Serialize};

use super::model::{LQModel, Moments};
use crate::error::{Error, Result};
use crate::output::write_hash_line;
use crate::stats::fmt_f64;
use crate::time::{hermite, hermite_derivative, TimeGrid};

/// Values above this magnitude abort the backward integration.
pub const BLOW_UP: f64 = 1e8;

/// Which form of the Riccati system to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiccatiConvention {
    /// The `Γ` equations carry the growth rate `θ` on their linear terms.
    #[default]
    ThetaExplicit,
    /// The `Γ` equations with bare linear terms (`θ` replaced by 1).
    PaperPrinted,
}

/// `(Λ, Γ1, Γ2, Γ3, Γ4)`.
pub type RiccatiState = [f64; 5];

/// Time derivative of `(Λ, Γ1, .., Γ4)`.
pub fn riccati_rhs(model: &LQModel, convention: RiccatiConvention, t: f64, y: &RiccatiState) -> Result<RiccatiState> {
    let [lam, g1, g2, _g3, g4] = *y;
    let b1 = model.b1.eval(t);
    let b2 = model.b2.eval(t);
    let b3 = model.b3.eval(t);
    let l4 = model.l4_at(t)?;
    let theta = model.theta();
    let c = match convention {
        RiccatiConvention::ThetaExplicit => theta,
        RiccatiConvention::PaperPrinted => 1.0,
    };
    let s2 = model.sigma * model.sigma;
    Ok([
        (b3 * lam).powi(2) / l4 - model.l1.eval(t) - 2.0 * b1 * lam - theta * lam,
        -s2 * lam - c * g1,
        b3 * b3 * lam * g2 / l4 - 2.0 * b2 * lam - b1 * g2 - 2.0 * c * g2 - model.l3.eval(t),
        -model.l2.eval(t) - 2.0 * c * y[3],
        (b3 * g2).powi(2) / (4.0 * l4) - b2 * g2 - 3.0 * c * g4,
    ])
}

/// Riccati solution on a grid with dense cubic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    grid: TimeGrid,
    values: Vec<RiccatiState>,
    derivatives: Vec<RiccatiState>,
    model: LQModel,
    convention: RiccatiConvention,
}

fn axpy(y: &RiccatiState, h: f64, k: &RiccatiState) -> RiccatiState {
    std::array::from_fn(|i| y[i] + h * k[i])
}

/// Integrates the Riccati system backward from `T` with classical RK4 on
/// `grid`, which must end at the model horizon.
pub fn solve_riccati(model: &LQModel, grid: &TimeGrid, convention: RiccatiConvention) -> Result<RiccatiSolution> {
    if (grid.horizon() - model.horizon).abs() > 1e-12 * (1.0 + model.horizon.abs()) {
        return Err(Error::InvalidGrid(format!("grid ends at {}, model horizon is {}", grid.horizon(), model.horizon)));
    }
    let n = grid.len();
    let mut values = vec![[0.0; 5]; n];
    let mut derivatives = vec![[0.0; 5]; n];
    let mut y = [model.g1, 0.0, model.g3, model.g2, 0.0];
    values[n - 1] = y;
    derivatives[n - 1] = riccati_rhs(model, convention, grid.time(n - 1), &y)?;
    for j in (0..n - 1).rev() {
        let t = grid.time(j + 1);
        let h = -(grid.time(j + 1) - grid.time(j));
        let k1 = derivatives[j + 1];
        let k2 = riccati_rhs(model, convention, t + 0.5 * h, &axpy(&y, 0.5 * h, &k1))?;
        let k3 = riccati_rhs(model, convention, t + 0.5 * h, &axpy(&y, 0.5 * h, &k2))?;
        let k4 = riccati_rhs(model, convention, t + h, &axpy(&y, h, &k3))?;
        y = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        let tj = grid.time(j);
        if y.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
            return Err(Error::BlowUp(format!("|(Λ, Γ)| exceeds {BLOW_UP:e} at t = {tj}: {y:?}")));
        }
        values[j] = y;
        derivatives[j] = riccati_rhs(model, convention, tj, &y)?;
    }
    Ok(RiccatiSolution { grid: *grid, values, derivatives, model: model.clone(), convention })
}

impl RiccatiSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn model(&self) -> &LQModel {
        &self.model
    }

    pub fn convention(&self) -> RiccatiConvention {
        self.convention
    }

    pub fn values(&self) -> &[RiccatiState] {
        &self.values
    }

    /// Shifts one component of the stored values by a constant, keeping the
    /// stored derivatives (used to probe the HJB residual).
    pub fn perturbed(&self, component: usize, shift: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| v[component] += shift);
        out
    }

    fn locate(&self, t: f64) -> Result<usize> {
        let (t0, t1) = (self.grid.t0(), self.grid.horizon());
        let tol = 1e-12 * (1.0 + t1.abs());
        if t < t0 - tol || t > t1 + tol {
            return Err(Error::OutOfRange(format!("t = {t} outside [{t0}, {t1}]")));
        }
        let dt = self.grid.dt();
        Ok((((t - t0) / dt).floor().max(0.0) as usize).min(self.grid.steps() - 1))
    }

    /// `(Λ, Γ1, .., Γ4)(t)`.
    pub fn eval(&self, t: f64) -> Result<RiccatiState> {
        let j = self.locate(t)?;
        let (a, b) = (self.grid.time(j), self.grid.time(j + 1));
        let (ya, yb, da, db) = (&self.values[j], &self.values[j + 1], &self.derivatives[j], &self.derivatives[j + 1]);
        Ok(std::array::from_fn(|i| hermite(t, a, b, ya[i], yb[i], da[i], db[i])))
    }

    /// Time derivative of the interpolant; equals the system's right-hand
    /// side at grid times.
    pub fn derivative(&self, t: f64) -> Result<RiccatiState> {
        let j = self.locate(t)?;
        let (a, b) = (self.grid.time(j), self.grid.time(j + 1));
        let (ya, yb, da, db) = (&self.values[j], &self.values[j + 1], &self.derivatives[j], &self.derivatives[j + 1]);
        Ok(std::array::from_fn(|i| hermite_derivative(t, a, b, ya[i], yb[i], da[i], db[i])))
    }

    /// CSV `t,Lambda,Gamma1,Gamma2,Gamma3,Gamma4`.
    pub fn write_csv<W: Write>(&self, mut out: W, hash: Option<&str>) -> Result<()> {
        write_hash_line(&mut out, hash)?;
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["t", "Lambda", "Gamma1", "Gamma2", "Gamma3", "Gamma4"])?;
        for (j, v) in self.values.iter().enumerate() {
            let mut row = vec![fmt_f64(self.grid.time(j))];
            row.extend(v.iter().map(|x| fmt_f64(*x)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `w(t, m) = Λ m₂ + Γ1 m̄ + Γ2 m̄ m₁ + Γ3 m̄² + Γ4 m̄³`.
pub fn lq_value(sol: &RiccatiSolution, t: f64, m: &Moments) -> Result<f64> {
    let [lam, g1, g2, g3, g4] = sol.eval(t)?;
    Ok(value_from(&[lam, g1, g2, g3, g4], m))
}

pub(crate) fn value_from(y: &RiccatiState, m: &Moments) -> f64 {
    let [lam, g1, g2, g3, g4] = *y;
    lam * m.m2 + g1 * m.mass + g2 * m.mass * m.m1 + g3 * m.mass * m.mass + g4 * m.mass.powi(3)
}

/// Pointwise minimizer `α*(t, x) = -(2 b3 Λ x + b3 Γ2 m̄) / (2 L4)`.
pub fn lq_optimal_control(sol: &RiccatiSolution, t: f64, x: f64, mass: f64) -> Result<f64> {
    let (k0, k1) = optimal_affine_at(sol, t, mass)?;
    Ok(k0 + k1 * x)
}

/// `(k0, k1)` with `α*(t, x) = k0 + k1 x` at mass `m̄`.
pub fn optimal_affine_at(sol: &RiccatiSolution, t: f64, mass: f64) -> Result<(f64, f64)> {
    let y = sol.eval(t)?;
    let m = sol.model();
    let b3 = m.b3.eval(t);
    let l4 = m.l4_at(t)?;
    Ok((-b3 * y[2] * mass / (2.0 * l4), -b3 * y[0] / l4))
}
