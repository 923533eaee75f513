use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::report::CheckReport;
use crate::cost::{estimate_cost, CostEstimate};
use crate::engine::{InitScheme, InitialLaw};
use crate::error::{Error, Result};
use crate::lq::{
    hjb_residual, lq_policy_path, lq_value, optimal_affine_control, solve_riccati, AffineControl, LQModel, Moments,
    RiccatiConvention, RiccatiSolution,
};
use crate::time::TimeGrid;

/// Both sides of the dynamic programming identity on `[t, s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppSides {
    pub lhs: f64,
    /// Minimum over the panel and the optimal feedback.
    pub rhs_min: f64,
    /// Value of the optimal feedback's right-hand side.
    pub rhs_optimal: f64,
    /// Right-hand side of each panel control, in order.
    pub rhs_panel: Vec<f64>,
}

/// `∫_t^s ⟨L, μ_u⟩ du + w(s, μ_s)` under `control` from `m` at `t`.
fn dpp_rhs(sol: &RiccatiSolution, sub: &TimeGrid, m: &Moments, control: &AffineControl) -> Result<f64> {
    let path = lq_policy_path(sol.model(), control, sub, m)?;
    Ok(path.running.last().unwrap() + lq_value(sol, sub.horizon(), path.terminal_moments())?)
}

/// Evaluates `w(t, m)` against `min_α [∫_t^s ⟨L, μ_u⟩ du + w(s, μ_s)]` over
/// the panel together with the optimal feedback started at `(t, m)`.
pub fn dpp_sides(sol: &Arc<RiccatiSolution>, m: &Moments, t: f64, s: f64, panel: &[AffineControl]) -> Result<DppSides> {
    let grid = sol.grid();
    let (jt, js) = (grid.index_of(t)?, grid.index_of(s)?);
    if jt > js {
        return Err(Error::InvalidParameter(format!("need t <= s, got t = {t}, s = {s}")));
    }
    let sub = grid.tail_from(jt)?.head_to(js - jt)?;
    let lhs = lq_value(sol, t, m)?;
    let rhs_optimal = dpp_rhs(sol, &sub, m, &optimal_affine_control(sol, t, m.mass))?;
    let rhs_panel = panel.iter().map(|c| dpp_rhs(sol, &sub, m, c)).collect::<Result<Vec<_>>>()?;
    let rhs_min = rhs_panel.iter().copied().fold(rhs_optimal, f64::min);
    Ok(DppSides { lhs, rhs_min, rhs_optimal, rhs_panel })
}

/// Passes iff `lhs ≤ rhs_min + tol` and `lhs ≥ rhs(α*) - tol`; the statistic
/// is the larger of the two violations.
pub fn check_dpp(
    sol: &Arc<RiccatiSolution>,
    m: &Moments,
    t: f64,
    s: f64,
    panel: &[AffineControl],
    tol: f64,
) -> Result<CheckReport> {
    let d = dpp_sides(sol, m, t, s, panel)?;
    let stat = (d.lhs - d.rhs_min).max(d.rhs_optimal - d.lhs);
    Ok(CheckReport::new("dpp", stat, tol, panel.len() + 1)
        .detail("t", t)
        .detail("s", s)
        .detail("lhs", d.lhs)
        .detail("rhs_min", d.rhs_min)
        .detail("rhs_optimal", d.rhs_optimal))
}

/// Twenty `(δk0, δk1)` shifts: `δk0 ∈ {-0.5, -0.2, 0, 0.2, 0.5}` crossed
/// with `δk1 ∈ {-0.5, -0.2, 0.2, 0.5}`.
pub fn perturbation_grid() -> Vec<(f64, f64)> {
    let d0 = [-0.5, -0.2, 0.0, 0.2, 0.5];
    let d1 = [-0.5, -0.2, 0.2, 0.5];
    d0.iter().flat_map(|&a| d1.iter().map(move |&b| (a, b))).collect()
}

/// The optimal feedback from `(t, mass)` shifted by each of `shifts`.
pub fn shifted_panel(sol: &Arc<RiccatiSolution>, t: f64, mass: f64, shifts: &[(f64, f64)]) -> Vec<AffineControl> {
    let opt = optimal_affine_control(sol, t, mass);
    shifts.iter().map(|&(d0, d1)| opt.shifted(d0, d1)).collect()
}

/// Monte Carlo budget for the stochastic half of the verification check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McBudget {
    pub n_trees: usize,
    pub dt: f64,
    pub seed: u64,
    pub scheme: InitScheme,
    /// Width of the acceptance band in standard errors.
    pub k: f64,
}

/// Tree estimate of `J(t₀, ν₀, α*)`: the optimal feedback is simulated
/// against its own moment-ODE flow.
pub fn mc_optimal_cost(sol: &Arc<RiccatiSolution>, law: &InitialLaw, mc: &McBudget) -> Result<CostEstimate> {
    let model = sol.model();
    let t0 = sol.grid().t0();
    let (mass, m1, m2) = law.moments_1d();
    let m0 = Moments::new(mass, m1, m2)?;
    let grid = TimeGrid::new(t0, sol.grid().horizon(), mc.dt)?;
    let opt = optimal_affine_control(sol, t0, mass);
    let flow = lq_policy_path(model, &opt, &grid, &m0)?.to_flow()?;
    let coeffs = model.to_coefficients()?;
    let costs = model.to_cost_spec();
    estimate_cost(&coeffs, &costs, &opt.to_closed_loop(&grid), law, mc.scheme, &flow, grid, mc.n_trees, mc.seed)
}

/// `J(α*) = w(t₀, m₀)` to `tol`, `J(α* + δ) ≥ w - tol` for every shift
/// `δ = (δk0, δk1)`, and optionally the tree estimate of `J(α*)` within
/// `k · SE` of `w`. The statistic is the largest violation, each normalized
/// by its own tolerance, against a threshold of 1.
pub fn check_verification(
    sol: &Arc<RiccatiSolution>,
    law: &InitialLaw,
    perturbations: &[(f64, f64)],
    tol: f64,
    mc: Option<&McBudget>,
) -> Result<CheckReport> {
    let model = sol.model();
    let grid = sol.grid();
    let t0 = grid.t0();
    let (mass, m1, m2) = law.moments_1d();
    let m0 = Moments::new(mass, m1, m2)?;
    let w = lq_value(sol, t0, &m0)?;
    let opt = optimal_affine_control(sol, t0, mass);
    let cost = |c: &AffineControl| -> Result<f64> {
        let p = lq_policy_path(model, c, grid, &m0)?;
        Ok(p.running.last().unwrap() + model.terminal_cost(p.terminal_moments()))
    };
    let j_opt = cost(&opt)?;
    let mut stat = (j_opt - w).abs() / tol;
    let mut min_margin = f64::INFINITY;
    for &(d0, d1) in perturbations {
        let margin = cost(&opt.shifted(d0, d1))? - w;
        min_margin = min_margin.min(margin);
        stat = stat.max(-margin / tol);
    }
    let mut rep = CheckReport::new("verification", 0.0, 1.0, perturbations.len() + 1)
        .detail("value", w)
        .detail("cost_optimal", j_opt)
        .detail("min_perturbation_margin", min_margin);
    if let Some(mc) = mc {
        let est = mc_optimal_cost(sol, law, mc)?;
        let z = (est.mean - w).abs() / (mc.k * est.std_error);
        stat = stat.max(if z.is_nan() { 0.0 } else { z });
        rep = rep.detail("mc_mean", est.mean).detail("mc_se", est.std_error).detail("mc_trees", est.n as f64);
        rep.samples += est.n;
    }
    rep.statistic = stat;
    rep.pass = stat <= rep.threshold;
    Ok(rep)
}

/// Evaluation points of [`check_hjb_residual`]: `n_times` grid times (both
/// ends included) crossed with moment triples spread over
/// `mass ∈ [0.1, 3]`, `m1 / mass ∈ [-2, 2]` and positive variance.
pub fn hjb_sample_points(sol: &RiccatiSolution, n_times: usize, n_moments: usize) -> Vec<(f64, Moments)> {
    let grid = sol.grid();
    let n_times = n_times.max(2);
    let mut out = Vec::with_capacity(n_times * n_moments);
    for a in 0..n_times {
        let j = (a * grid.steps()) / (n_times - 1);
        let t = grid.time(j);
        for b in 0..n_moments {
            // Low-discrepancy coordinates keep the points deterministic and spread.
            let u = [(b as f64 + 0.5) / n_moments as f64, frac(b as f64 * 0.618_033_988_749_895), frac(b as f64 * 0.754_877_666_246_693)];
            let mass = 0.1 + 2.9 * u[0];
            let mean = -2.0 + 4.0 * u[1];
            let var = 0.05 + 2.0 * u[2];
            out.push((t, Moments { mass, m1: mass * mean, m2: mass * (var + mean * mean) }));
        }
    }
    out
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

/// Largest `|hjb_residual|` over `n_times × n_moments` sample points.
pub fn check_hjb_residual(sol: &RiccatiSolution, n_times: usize, n_moments: usize, tol: f64) -> Result<CheckReport> {
    let pts = hjb_sample_points(sol, n_times, n_moments);
    let mut worst = 0.0f64;
    for (t, m) in &pts {
        let r = hjb_residual(sol, *t, m)?;
        worst = if r.is_nan() { f64::NAN } else { worst.max(r.abs()) };
    }
    Ok(CheckReport::new("hjb_residual", worst, tol, pts.len()))
}

/// Self-convergence of the Riccati integrator over successively refined steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiOrder {
    pub dts: Vec<f64>,
    /// Max-norm differences between consecutive refinements at the coarsest grid times.
    pub differences: Vec<f64>,
    /// `log2` ratios of consecutive differences (for halving steps).
    pub orders: Vec<f64>,
}

/// Solves with each step in `dts` (each dividing the previous) and measures
/// the observed order from consecutive differences.
pub fn riccati_self_convergence(model: &LQModel, convention: RiccatiConvention, dts: &[f64]) -> Result<RiccatiOrder> {
    if dts.len() < 3 {
        return Err(Error::InvalidParameter(format!("need at least three step sizes, got {}", dts.len())));
    }
    let sols = dts
        .iter()
        .map(|&dt| solve_riccati(model, &TimeGrid::new(model.t0, model.horizon, dt)?, convention))
        .collect::<Result<Vec<_>>>()?;
    let coarse = sols[0].grid();
    let mut differences = Vec::with_capacity(dts.len() - 1);
    for pair in sols.windows(2) {
        let mut d = 0.0f64;
        for j in 0..coarse.len() {
            let t = coarse.time(j);
            let (a, b) = (&pair[0].values()[pair[0].grid().index_of(t)?], &pair[1].values()[pair[1].grid().index_of(t)?]);
            d = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(d, f64::max);
        }
        differences.push(d);
    }
    let orders = differences
        .windows(2)
        .zip(dts.windows(2))
        .map(|(d, h)| (d[0] / d[1]).ln() / (h[0] / h[1]).ln())
        .collect();
    Ok(RiccatiOrder { dts: dts.to_vec(), differences, orders })
}

/// Passes when every observed order is at least `min_order`; the statistic
/// is `min_order - min(observed)`, against a threshold of 0.
pub fn check_riccati_order(model: &LQModel, convention: RiccatiConvention, dts: &[f64], min_order: f64) -> Result<CheckReport> {
    let r = riccati_self_convergence(model, convention, dts)?;
    let observed = r.orders.iter().copied().fold(f64::INFINITY, f64::min);
    let mut rep = CheckReport::new("riccati_order", min_order - observed, 0.0, dts.len()).detail("order", observed);
    for (i, d) in r.differences.iter().enumerate() {
        rep = rep.detail(&format!("difference_{i}"), *d);
    }
    Ok(rep)
}
