use super::model::Moments;
use super::riccati::{value_from, RiccatiSolution};
use crate::error::Result;
use crate::measures::FiniteMeasure;

/// `∂_t w + ⟨L(t, ·, m, α*), m⟩ + ⟨𝒢^{α*}_t w, m⟩` at `(t, m)`.
///
/// The time derivative comes from the stored derivative of the Riccati
/// interpolant. The remaining terms are integrated atom by atom over a
/// two-atom measure with the moments of `m`, using the derivatives of `w`
/// and the pointwise minimizer `α*`; all integrands are quadratic in `x`, so
/// this is exact.
pub fn hjb_residual(sol: &RiccatiSolution, t: f64, m: &Moments) -> Result<f64> {
    m.validate()?;
    let y = sol.eval(t)?;
    let dy = sol.derivative(t)?;
    let model = sol.model();
    let [lam, g1, g2, g3, g4] = y;
    let (b1, b2, b3) = (model.b1.eval(t), model.b2.eval(t), model.b3.eval(t));
    let (l1, l2, l3) = (model.l1.eval(t), model.l2.eval(t), model.l3.eval(t));
    let l4 = model.l4_at(t)?;
    let s2 = model.sigma * model.sigma;
    let theta = model.theta();
    let mbar = m.mass;
    let mu = FiniteMeasure::from_moments_1d(m.mass, m.m1, m.m2)?;
    let integral = mu.integrate(|p| {
        let x = p[0];
        let alpha = -(2.0 * b3 * lam * x + b3 * g2 * mbar) / (2.0 * l4);
        let linear = lam * x * x + g1 + g2 * m.m1 + g2 * mbar * x + 2.0 * g3 * mbar + 3.0 * g4 * mbar * mbar;
        let d_mu = 2.0 * lam * x + g2 * mbar;
        let dx_d_mu = 2.0 * lam;
        let drift = b1 * x + b2 * mbar + b3 * alpha;
        let running = l1 * x * x + l2 * mbar + l3 * m.m1 + l4 * alpha * alpha;
        running + drift * d_mu + 0.5 * s2 * dx_d_mu + theta * linear
    });
    Ok(value_from(&dy, m) + integral)
}

/// The control-dependent part `L4 a² + C a` of the Hamiltonian integrand,
/// with `C = 2 b3 Λ x + b3 Γ2 m̄`.
pub fn control_hamiltonian(sol: &RiccatiSolution, t: f64, x: f64, mass: f64, a: f64) -> Result<f64> {
    let y = sol.eval(t)?;
    let model = sol.model();
    let b3 = model.b3.eval(t);
    let c = 2.0 * b3 * y[0] * x + b3 * y[2] * mass;
    Ok(model.l4_at(t)? * a * a + c * a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::{lq_optimal_control, solve_riccati, LQModel, RiccatiConvention};
    use crate::time::TimeGrid;

    fn model(theta_sign: f64) -> LQModel {
        let p = if theta_sign < 0.0 {
            vec![0.5, 0.3, 0.2]
        } else if theta_sign == 0.0 {
            vec![0.3, 0.4, 0.3]
        } else {
            vec![0.1, 0.3, 0.6]
        };
        LQModel::constant([0.3, -0.2, 0.8], 0.6, 1.2, p, [0.5, 0.4, -0.3, 0.7], [1.0, 0.5, -0.4], 1.0).unwrap()
    }

    #[test]
    fn zero_measure_has_zero_residual() {
        let sol = solve_riccati(&model(1.0), &TimeGrid::new(0.0, 1.0, 0.01).unwrap(), RiccatiConvention::ThetaExplicit).unwrap();
        assert_eq!(hjb_residual(&sol, 0.37, &Moments::ZERO).unwrap(), 0.0);
    }

    #[test]
    fn theta_explicit_solves_hjb() {
        let grid = TimeGrid::new(0.0, 1.0, 0.001).unwrap();
        for s in [-1.0, 0.0, 1.0] {
            let sol = solve_riccati(&model(s), &grid, RiccatiConvention::ThetaExplicit).unwrap();
            for (t, m) in [(0.0, (1.0, 0.5, 2.0)), (0.4567, (3.0, -2.0, 4.0)), (0.999, (5.0, 5.0, 25.0))] {
                let r = hjb_residual(&sol, t, &Moments::new(m.0, m.1, m.2).unwrap()).unwrap();
                assert!(r.abs() < 1e-6, "θ sign {s}, t = {t}: {r}");
            }
        }
    }

    #[test]
    fn printed_system_fails_hjb_when_theta_is_not_one() {
        let grid = TimeGrid::new(0.0, 1.0, 0.001).unwrap();
        let sol = solve_riccati(&model(1.0), &grid, RiccatiConvention::PaperPrinted).unwrap();
        let r = hjb_residual(&sol, 0.3, &Moments::new(2.0, 1.0, 3.0).unwrap()).unwrap();
        assert!(r.abs() > 1e-3, "{r}");
    }

    #[test]
    fn perturbed_lambda_breaks_residual() {
        let grid = TimeGrid::new(0.0, 1.0, 0.001).unwrap();
        let sol = solve_riccati(&model(1.0), &grid, RiccatiConvention::ThetaExplicit).unwrap().perturbed(0, 1.0);
        let r = hjb_residual(&sol, 0.5, &Moments::new(1.0, 0.0, 1.0).unwrap()).unwrap();
        assert!(r.abs() > 0.1, "{r}");
    }

    #[test]
    fn optimal_control_minimizes_hamiltonian() {
        let grid = TimeGrid::new(0.0, 1.0, 0.01).unwrap();
        let sol = solve_riccati(&model(1.0), &grid, RiccatiConvention::ThetaExplicit).unwrap();
        for (t, x, mass) in [(0.1, -1.0, 2.0), (0.5, 0.3, 0.5), (0.9, 2.0, 4.0)] {
            let a_star = lq_optimal_control(&sol, t, x, mass).unwrap();
            let h_star = control_hamiltonian(&sol, t, x, mass, a_star).unwrap();
            for a in [-3.0, -0.1, 0.0, 0.5, 2.0] {
                assert!(h_star <= control_hamiltonian(&sol, t, x, mass, a).unwrap() + 1e-14);
            }
        }
    }
}
