use serde::{Deserialize, Serialize};

use super::cylindrical::CylindricalFunction;
use super::report::CheckReport;
use crate::engine::{
    simulate_moments, ClosedLoopControl, ForestSpec, InitScheme, InitialLaw, ModelCoefficients, MomentCollector,
    Simulator,
};
use crate::error::{Error, Result};
use crate::meanfield::{flow_property_check, MeasureFlow, PicardOptions};
use crate::stats::MeanEstimate;
use crate::time::TimeGrid;

/// Minimum number of trees for the population-bound check.
pub const MIN_BOUND_TREES: usize = 10_000;

/// Mean of `sup_s #K_s` against `mass · e^{γ̄ M₁ (T - t)} + 3 SE`, where
/// `M₁` bounds the mean offspring number.
pub fn check_population_bound(
    trees: &MomentCollector,
    nu0_mass: f64,
    gamma_bar: f64,
    mean_offspring_bound: f64,
    span: f64,
) -> Result<CheckReport> {
    let sup = trees.sup_counts();
    if sup.len() < MIN_BOUND_TREES {
        return Err(Error::TooFewSamples { min: MIN_BOUND_TREES, got: sup.len() });
    }
    let est = MeanEstimate::from_samples(sup);
    let bound = nu0_mass * (gamma_bar * mean_offspring_bound * span).exp();
    Ok(CheckReport::new("population_bound", est.mean, bound + 3.0 * est.std_error, est.n)
        .detail("mean_sup_count", est.mean)
        .detail("se", est.std_error)
        .detail("bound", bound))
}

/// `E[#K_T] / m̄₀` against `e^{θ (T - t)}`: the statistic is the deviation in
/// standard errors, against the threshold `k`.
pub fn check_mass_law(trees: &MomentCollector, nu0_mass: f64, theta: f64, span: f64, k: f64) -> Result<CheckReport> {
    if trees.trees() < 2 || !(nu0_mass > 0.0) {
        return Err(Error::TooFewSamples { min: 2, got: trees.trees() });
    }
    let est = MeanEstimate::from_samples(trees.final_counts());
    let ratio = est.mean / nu0_mass;
    let se = est.std_error / nu0_mass;
    let target = (theta * span).exp();
    let z = if ratio == target { 0.0 } else { (ratio - target).abs() / se };
    Ok(CheckReport::new("mass_law", z, k, est.n)
        .detail("ratio", ratio)
        .detail("se", se)
        .detail("expected", target))
}

/// Flow property between `(t, ν₀)` and a restart at `u`, compared at `s`:
/// the statistic is the largest moment difference in combined standard
/// errors, against the threshold `k`.
#[allow(clippy::too_many_arguments)]
pub fn check_flow_property(
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    law: &InitialLaw,
    grid: &TimeGrid,
    times: (f64, f64, f64),
    opts: &PicardOptions,
    restart_scheme: InitScheme,
    k: f64,
) -> Result<CheckReport> {
    let r = flow_property_check(model, control, law, grid, times, opts, restart_scheme)?;
    let z = r
        .moment_diff
        .iter()
        .zip(&r.moment_se)
        .map(|(d, se)| if *d == 0.0 { 0.0 } else { d.abs() / se })
        .fold(0.0, f64::max);
    Ok(CheckReport::new("flow_property", z, k, 2 * opts.n_trees)
        .detail("u", r.u)
        .detail("wbar1", r.wbar1)
        .detail("mass_diff", r.moment_diff[0])
        .detail("m1_diff", r.moment_diff[1])
        .detail("m2_diff", r.moment_diff[2])
        .detail("mass_se", r.moment_se[0])
        .detail("m1_se", r.moment_se[1])
        .detail("m2_se", r.moment_se[2]))
}

/// Time quadrature of the generator integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItoQuadrature {
    #[default]
    Trapezoid,
    LeftEndpoint,
}

/// `∫ ⟨b·D_μF + ½ Tr(σσ^⊤ ∂_x D_μF) + γ Σ(ℓ-1)p_ℓ δF/δμ, μ_u⟩` integrand at
/// flow index `j`.
pub fn ito_integrand(
    f: &CylindricalFunction,
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    flow: &MeasureFlow,
    j: usize,
) -> Result<f64> {
    let d = model.dim;
    if f.dim() != d || flow.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: f.dim().min(flow.dim()) });
    }
    let t = flow.grid().time(j);
    let mu = flow.at(j);
    let g = f.outer_gradient(mu)?;
    let mut a = vec![0.0; model.control_dim];
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * d];
    let mut total = 0.0;
    for (x, w) in mu.iter() {
        control.apply(t, x, &mut a);
        (model.drift)(t, x, mu, &a, &mut b);
        (model.diffusion)(t, x, mu, &a, &mut s);
        let growth = model.growth_rate(t, x, mu, &a)?;
        let der = f.derivatives_at(&g, x);
        let transport: f64 = b.iter().zip(&der.intrinsic).map(|(b, v)| b * v).sum();
        let mut trace = 0.0;
        for i in 0..d {
            for k in 0..d {
                let sst: f64 = (0..d).map(|l| s[i * d + l] * s[k * d + l]).sum();
                trace += sst * der.intrinsic_jacobian[k * d + i];
            }
        }
        total += w * (transport + 0.5 * trace + growth * der.linear);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("Itô integrand at t = {t}")));
    }
    Ok(total)
}

/// Residual of `F(μ_t) - F(μ_s) - ∫_s^t ⟨generator, μ_u⟩ du` on the flow grid.
pub fn ito_residual(
    f: &CylindricalFunction,
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    flow: &MeasureFlow,
    interval: (f64, f64),
    quadrature: ItoQuadrature,
) -> Result<f64> {
    let grid = flow.grid();
    let (js, jt) = (grid.index_of(interval.0)?, grid.index_of(interval.1)?);
    if js > jt {
        return Err(Error::InvalidParameter(format!("interval ({}, {}) is reversed", interval.0, interval.1)));
    }
    let dt = grid.dt();
    let mut integral = 0.0;
    for j in js..jt {
        let left = ito_integrand(f, model, control, flow, j)?;
        integral += match quadrature {
            ItoQuadrature::LeftEndpoint => dt * left,
            ItoQuadrature::Trapezoid => 0.5 * dt * (left + ito_integrand(f, model, control, flow, j + 1)?),
        };
    }
    Ok((f.eval(flow.at(jt))? - f.eval(flow.at(js))? - integral).abs())
}

/// The Itô-formula residual against a tolerance.
pub fn ito_formula_check(
    f: &CylindricalFunction,
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    flow: &MeasureFlow,
    interval: (f64, f64),
    quadrature: ItoQuadrature,
    tol: f64,
) -> Result<CheckReport> {
    let r = ito_residual(f, model, control, flow, interval, quadrature)?;
    let steps = flow.grid().index_of(interval.1)? - flow.grid().index_of(interval.0)?;
    Ok(CheckReport::new("ito_formula", r, tol, steps + 1).detail("residual", r))
}

/// One of the two populations compared by [`check_initial_law_invariance`].
#[derive(Debug, Clone, Copy)]
pub struct Lifting {
    pub scheme: InitScheme,
    pub seed: u64,
}

/// Simulates the frozen-flow model from two liftings of the same `ν₀` and
/// compares the mean-measure moments at every grid time. The statistic is the
/// largest difference in units of the combined standard error.
#[allow(clippy::too_many_arguments)]
pub fn check_initial_law_invariance(
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    law: &InitialLaw,
    liftings: (Lifting, Lifting),
    flow: &MeasureFlow,
    grid: &TimeGrid,
    n_trees: usize,
    k: f64,
) -> Result<CheckReport> {
    let sim = Simulator::new(model, control, flow, *grid)?;
    let run = |l: Lifting| simulate_moments(&sim, &ForestSpec { law, scheme: l.scheme, n_trees, seed: l.seed });
    let (a, b) = (run(liftings.0)?, run(liftings.1)?);
    let mut worst = 0.0f64;
    let mut max_abs = 0.0f64;
    for j in 0..grid.len() {
        for q in 0..model.dim + 2 {
            let (ea, eb) = (a.estimate(j, q), b.estimate(j, q));
            let diff = (ea.mean - eb.mean).abs();
            let se = ea.combined_se(&eb);
            max_abs = max_abs.max(diff);
            let z = if diff == 0.0 {
                0.0
            } else if se > 0.0 {
                diff / se
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
    }
    Ok(CheckReport::new("initial_law_invariance", worst, k, 2 * n_trees).detail("max_abs_diff", max_abs))
}
