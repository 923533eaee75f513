use std::sync::Arc;

use super::model::{LQModel, Moments};
use super::riccati::{optimal_affine_at, RiccatiSolution, BLOW_UP};
use crate::engine::ClosedLoopControl;
use crate::error::{Error, Result};
use crate::meanfield::{FlowProvenance, MeasureFlow};
use crate::time::{TimeFn, TimeGrid};

/// Affine feedback `a = k0(t) + k1(t) x`.
#[derive(Debug, Clone)]
pub struct AffineControl {
    pub k0: TimeFn,
    pub k1: TimeFn,
}

impl AffineControl {
    pub fn new(k0: impl Into<TimeFn>, k1: impl Into<TimeFn>) -> Self {
        Self { k0: k0.into(), k1: k1.into() }
    }

    /// `(k0 + d0, k1 + d1)`.
    pub fn shifted(&self, d0: f64, d1: f64) -> Self {
        let (k0, k1) = (self.k0.clone(), self.k1.clone());
        Self { k0: TimeFn::closure(move |t| k0.eval(t) + d0), k1: TimeFn::closure(move |t| k1.eval(t) + d1) }
    }

    /// Engine feedback, with the Lipschitz constant bounded by
    /// `max(|k0|, |k1|)` sampled on `grid`.
    pub fn to_closed_loop(&self, grid: &TimeGrid) -> ClosedLoopControl {
        let mut lip = 0.0f64;
        for j in 0..grid.len() {
            let t = grid.time(j);
            lip = lip.max(self.k0.eval(t).abs()).max(self.k1.eval(t).abs());
        }
        ClosedLoopControl::affine(self.k0.clone(), self.k1.clone(), lip)
    }
}

/// The optimal feedback along the flow started from mass `mass0` at `t0`:
/// `k1 = -b3 Λ / L4`, `k0 = -b3 Γ2 m̄_t / (2 L4)` with `m̄_t = m̄₀ e^{θ(t - t0)}`.
pub fn optimal_affine_control(sol: &Arc<RiccatiSolution>, t0: f64, mass0: f64) -> AffineControl {
    let theta = sol.model().theta();
    let (s0, s1) = (sol.clone(), sol.clone());
    let clamp = move |s: &RiccatiSolution, t: f64| t.clamp(s.grid().t0(), s.grid().horizon());
    AffineControl {
        k0: TimeFn::closure(move |t| {
            let tc = clamp(&s0, t);
            optimal_affine_at(&s0, tc, mass0 * (theta * (t - t0)).exp()).map(|k| k.0).unwrap_or(f64::NAN)
        }),
        k1: TimeFn::closure(move |t| {
            let tc = clamp(&s1, t);
            optimal_affine_at(&s1, tc, 0.0).map(|k| k.1).unwrap_or(f64::NAN)
        }),
    }
}

/// `d/dt (m̄, m1, m2)` under an affine control.
pub fn moment_rhs(model: &LQModel, t: f64, m: &Moments, k0: f64, k1: f64) -> [f64; 3] {
    let theta = model.theta();
    let (b1, b2, b3) = (model.b1.eval(t), model.b2.eval(t), model.b3.eval(t));
    let shift = b2 * m.mass + b3 * k0;
    [
        theta * m.mass,
        (b1 + b3 * k1 + theta) * m.m1 + shift * m.mass,
        (2.0 * b1 + 2.0 * b3 * k1 + theta) * m.m2 + 2.0 * shift * m.m1 + model.sigma * model.sigma * m.mass,
    ]
}

/// Moments and accumulated running cost along a closed-loop flow.
#[derive(Debug, Clone)]
pub struct PolicyPath {
    pub grid: TimeGrid,
    pub moments: Vec<Moments>,
    /// `∫_{t0}^{t_j} ⟨L, μ_u⟩ du`.
    pub running: Vec<f64>,
}

impl PolicyPath {
    pub fn terminal_moments(&self) -> &Moments {
        self.moments.last().expect("non-empty path")
    }

    /// Moment flow as two-atom measures.
    pub fn to_flow(&self) -> Result<MeasureFlow> {
        let m: Vec<(f64, f64, f64)> = self.moments.iter().map(|m| (m.mass, m.m1, m.m2)).collect();
        MeasureFlow::from_moments_1d(self.grid, &m, FlowProvenance::MomentOde)
    }
}

/// Integrates moments and running cost jointly by RK4 on `grid`.
pub fn lq_policy_path(model: &LQModel, control: &AffineControl, grid: &TimeGrid, m0: &Moments) -> Result<PolicyPath> {
    m0.validate()?;
    let f = |t: f64, y: &[f64; 4]| -> [f64; 4] {
        let m = Moments { mass: y[0], m1: y[1], m2: y[2] };
        let (k0, k1) = (control.k0.eval(t), control.k1.eval(t));
        let d = moment_rhs(model, t, &m, k0, k1);
        [d[0], d[1], d[2], model.running_cost(t, &m, k0, k1)]
    };
    let n = grid.len();
    let mut moments = Vec::with_capacity(n);
    let mut running = Vec::with_capacity(n);
    let mut y = [m0.mass, m0.m1, m0.m2, 0.0];
    moments.push(*m0);
    running.push(0.0);
    for j in 0..grid.steps() {
        let t = grid.time(j);
        let h = grid.time(j + 1) - t;
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * h, &std::array::from_fn(|i| y[i] + 0.5 * h * k1[i]));
        let k3 = f(t + 0.5 * h, &std::array::from_fn(|i| y[i] + 0.5 * h * k2[i]));
        let k4 = f(t + h, &std::array::from_fn(|i| y[i] + h * k3[i]));
        y = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        if y.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
            return Err(Error::BlowUp(format!("moment flow exceeds {BLOW_UP:e} at t = {}: {y:?}", grid.time(j + 1))));
        }
        moments.push(Moments { mass: y[0], m1: y[1], m2: y[2] });
        running.push(y[3]);
    }
    Ok(PolicyPath { grid: *grid, moments, running })
}

/// Moment flow `(m̄, m1, m2)` on `grid` under an affine control.
pub fn lq_moment_flow(model: &LQModel, control: &AffineControl, grid: &TimeGrid, m0: &Moments) -> Result<Vec<Moments>> {
    Ok(lq_policy_path(model, control, grid, m0)?.moments)
}

/// `J(t0, m0, α)` for an affine control, by RK4 on `grid` (which must end at
/// the horizon).
pub fn lq_cost_ode(model: &LQModel, control: &AffineControl, grid: &TimeGrid, m0: &Moments) -> Result<f64> {
    if (grid.horizon() - model.horizon).abs() > 1e-12 * (1.0 + model.horizon.abs()) {
        return Err(Error::InvalidGrid(format!("grid ends at {}, model horizon is {}", grid.horizon(), model.horizon)));
    }
    let path = lq_policy_path(model, control, grid, m0)?;
    Ok(path.running.last().unwrap() + model.terminal_cost(path.terminal_moments()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::{lq_value, solve_riccati, RiccatiConvention};

    fn grid(t0: f64, dt: f64) -> TimeGrid {
        TimeGrid::new(t0, 1.0, dt).unwrap()
    }

    fn full_model() -> LQModel {
        LQModel::constant([0.2, 0.1, 1.0], 0.5, 1.5, vec![0.2, 0.3, 0.5], [0.4, 0.3, 0.2, 1.0], [1.0, 0.5, 0.5], 1.0).unwrap()
    }

    #[test]
    fn frozen_moments_without_dynamics() {
        let m = LQModel::constant([0.0; 3], 0.0, 1.0, vec![0.5, 0.0, 0.5], [0.0, 0.0, 0.0, 1.0], [0.0; 3], 1.0).unwrap();
        let m0 = Moments::new(2.0, 1.0, 3.0).unwrap();
        let flow = lq_moment_flow(&m, &AffineControl::new(0.0, 0.0), &grid(0.0, 0.01), &m0).unwrap();
        assert!(flow.iter().all(|x| *x == m0));
    }

    #[test]
    fn mass_is_exponential() {
        let m = full_model();
        let m0 = Moments::new(2.0, 1.0, 3.0).unwrap();
        let flow = lq_moment_flow(&m, &AffineControl::new(0.3, -0.5), &grid(0.0, 0.01), &m0).unwrap();
        for (j, x) in flow.iter().enumerate() {
            let t = j as f64 * 0.01;
            assert!((x.mass - 2.0 * (m.theta() * t).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_cost_is_zero() {
        let m = LQModel::constant([0.2, 0.1, 1.0], 0.5, 1.5, vec![0.2, 0.3, 0.5], [0.0, 0.0, 0.0, 1.0], [0.0; 3], 1.0).unwrap();
        let j = lq_cost_ode(&m, &AffineControl::new(0.0, 0.0), &grid(0.0, 0.01), &Moments::new(1.0, 0.5, 1.0).unwrap()).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn heat_second_moment_cost() {
        let m = LQModel::constant([0.0; 3], 1.0, 1.0, vec![0.0, 1.0], [0.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 1.0).unwrap();
        let x0: f64 = 0.6;
        let j = lq_cost_ode(&m, &AffineControl::new(0.0, 0.0), &grid(0.0, 0.01), &Moments::new(1.0, x0, x0 * x0).unwrap())
            .unwrap();
        assert!((j - (x0 * x0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn optimal_cost_equals_value() {
        let m = full_model();
        let g = grid(0.0, 0.001);
        let sol = Arc::new(solve_riccati(&m, &g, RiccatiConvention::ThetaExplicit).unwrap());
        let m0 = Moments::new(1.5, 0.6, 1.2).unwrap();
        let opt = optimal_affine_control(&sol, 0.0, m0.mass);
        let j = lq_cost_ode(&m, &opt, &g, &m0).unwrap();
        let v = lq_value(&sol, 0.0, &m0).unwrap();
        assert!((j - v).abs() < 1e-6, "J = {j}, w = {v}");
        for (d0, d1) in [(0.1, 0.0), (0.0, 0.1), (-0.2, 0.3)] {
            assert!(lq_cost_ode(&m, &opt.shifted(d0, d1), &g, &m0).unwrap() > v);
        }
    }
}
