//! Monte Carlo evaluation of the cost functional of a closed-loop control.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{
    run_forest, ClosedLoopControl, ForestObserver, ForestSpec, InitScheme, InitialLaw, ModelCoefficients, Particle,
    Simulator, TreeObserver,
};
use crate::error::{Error, Result};
use crate::meanfield::{solve_flow_picard, MeasureFlow, PicardOptions};
use crate::measures::FiniteMeasure;
use crate::stats::MeanEstimate;
use crate::time::TimeGrid;

/// `L(t, x, μ, a)`.
pub type RunningCost = Arc<dyn Fn(f64, &[f64], &FiniteMeasure, &[f64]) -> f64 + Send + Sync>;
/// `g(x, μ)`.
pub type TerminalCost = Arc<dyn Fn(&[f64], &FiniteMeasure) -> f64 + Send + Sync>;

/// Running and terminal costs with optional quadratic-growth constants.
#[derive(Clone)]
pub struct CostSpec {
    pub running: RunningCost,
    pub terminal: TerminalCost,
    pub c_l: Option<f64>,
    pub c_g: Option<f64>,
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostSpec").field("c_l", &self.c_l).field("c_g", &self.c_g).finish_non_exhaustive()
    }
}

impl CostSpec {
    pub fn new(running: RunningCost, terminal: TerminalCost) -> Self {
        Self { running, terminal, c_l: None, c_g: None }
    }

    pub fn with_growth(mut self, c_l: f64, c_g: f64) -> Self {
        self.c_l = Some(c_l);
        self.c_g = Some(c_g);
        self
    }

    /// Checks `|L| ≤ C_L(1 + |x|² + m₂ + m̄ + |a|²)` and
    /// `|g| ≤ C_g(1 + |x|² + m₂ + m̄)` at the given `(t, x, a)` points.
    pub fn spot_check(&self, points: &[(f64, Vec<f64>, Vec<f64>)], mu: &FiniteMeasure) -> Result<()> {
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        for (t, x, a) in points {
            let base = 1.0 + sq(x) + mu.second_moment() + mu.mass();
            if let Some(c) = self.c_l {
                let l = (self.running)(*t, x, mu, a);
                if !(l.abs() <= c * (base + sq(a)) * (1.0 + 1e-12)) {
                    return Err(Error::OutOfRange(format!("running cost {l} violates its growth bound at t = {t}, x = {x:?}")));
                }
            }
            if let Some(c) = self.c_g {
                let g = (self.terminal)(x, mu);
                if !(g.abs() <= c * base * (1.0 + 1e-12)) {
                    return Err(Error::OutOfRange(format!("terminal cost {g} violates its growth bound at x = {x:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Cost estimate with its running/terminal breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub running: MeanEstimate,
    pub terminal: MeanEstimate,
    /// Set when the flow came from a Picard solve.
    pub flow_converged: Option<bool>,
}

impl CostEstimate {
    /// `{mean, se, N, running, terminal, config_hash}`.
    pub fn to_json(&self, hash: Option<&str>) -> serde_json::Value {
        serde_json::json!({
            "mean": self.mean,
            "se": self.std_error,
            "N": self.n,
            "running": self.running.mean,
            "running_se": self.running.std_error,
            "terminal": self.terminal.mean,
            "terminal_se": self.terminal.std_error,
            "flow_converged": self.flow_converged,
            "config_hash": hash,
        })
    }
}

/// Per-tree cost accumulator: left-endpoint quadrature of the running cost
/// on the simulation grid plus the terminal cost, against the frozen flow.
pub struct CostObserver<'a> {
    sim: &'a Simulator<'a>,
    costs: &'a CostSpec,
    a: Vec<f64>,
    run: f64,
    term: f64,
    runs: Vec<f64>,
    terms: Vec<f64>,
}

impl<'a> CostObserver<'a> {
    pub fn new(sim: &'a Simulator<'a>, costs: &'a CostSpec) -> Self {
        Self { sim, costs, a: vec![0.0; sim.control().dim()], run: 0.0, term: 0.0, runs: Vec::new(), terms: Vec::new() }
    }

    pub fn running_samples(&self) -> &[f64] {
        &self.runs
    }

    pub fn terminal_samples(&self) -> &[f64] {
        &self.terms
    }

    pub fn estimate(&self) -> CostEstimate {
        let totals: Vec<f64> = self.runs.iter().zip(&self.terms).map(|(r, g)| r + g).collect();
        let total = MeanEstimate::from_samples(&totals);
        CostEstimate {
            mean: total.mean,
            std_error: total.std_error,
            n: total.n,
            running: MeanEstimate::from_samples(&self.runs),
            terminal: MeanEstimate::from_samples(&self.terms),
            flow_converged: None,
        }
    }
}

impl TreeObserver for CostObserver<'_> {
    fn snapshot(&mut self, step: usize, t: f64, particles: &[Particle]) -> Result<()> {
        let grid = self.sim.grid();
        let mu = self.sim.measure(step);
        if step < grid.steps() {
            let dt = grid.dt();
            let mut acc = 0.0;
            for p in particles {
                self.sim.control().apply(t, &p.x, &mut self.a);
                acc += (self.costs.running)(t, &p.x, mu, &self.a);
            }
            self.run += dt * acc;
        } else {
            self.term = particles.iter().map(|p| (self.costs.terminal)(&p.x, mu)).sum();
        }
        if !(self.run.is_finite() && self.term.is_finite()) {
            return Err(Error::NonFinite(format!("cost accumulator at t = {t}")));
        }
        Ok(())
    }
}

impl ForestObserver for CostObserver<'_> {
    fn begin_tree(&mut self, _index: usize) {
        self.run = 0.0;
        self.term = 0.0;
    }

    fn end_tree(&mut self, _index: usize) {
        self.runs.push(self.run);
        self.terms.push(self.term);
    }

    fn merge(&mut self, other: Self) {
        self.runs.extend(other.runs);
        self.terms.extend(other.terms);
    }
}

/// Minimum number of trees for a cost estimate.
pub const MIN_COST_TREES: usize = 100;

/// Estimates `J(t₀, ν₀, α)` over `n_trees` trees simulated against a
/// supplied flow.
#[allow(clippy::too_many_arguments)]
pub fn estimate_cost(
    model: &ModelCoefficients,
    costs: &CostSpec,
    control: &ClosedLoopControl,
    law: &InitialLaw,
    scheme: InitScheme,
    flow: &MeasureFlow,
    grid: TimeGrid,
    n_trees: usize,
    seed: u64,
) -> Result<CostEstimate> {
    if n_trees < MIN_COST_TREES {
        return Err(Error::TooFewSamples { min: MIN_COST_TREES, got: n_trees });
    }
    let sim = Simulator::new(model, control, flow, grid)?;
    let spec = ForestSpec { law, scheme, n_trees, seed };
    let obs = run_forest(&sim, &spec, || CostObserver::new(&sim, costs))?;
    Ok(obs.estimate())
}

/// Solves the flow by Picard first, then estimates the cost with a fresh
/// stream. Non-convergence is reported through `flow_converged`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_cost_picard(
    model: &ModelCoefficients,
    costs: &CostSpec,
    control: &ClosedLoopControl,
    law: &InitialLaw,
    grid: TimeGrid,
    picard: &PicardOptions,
    n_trees: usize,
    seed: u64,
) -> Result<(CostEstimate, MeasureFlow)> {
    let (flow, diag, _) = solve_flow_picard(model, control, law, &grid, picard)?;
    let mut est = estimate_cost(model, costs, control, law, picard.scheme, &flow, grid, n_trees, seed)?;
    est.flow_converged = Some(diag.converged);
    Ok((est, flow))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ProgenyLaw, VectorCoefficient};

    fn model(sigma: f64) -> ModelCoefficients {
        let zero: VectorCoefficient = Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0));
        let diffusion: VectorCoefficient = Arc::new(move |_, _, _, _, out: &mut [f64]| out[0] = sigma);
        ModelCoefficients::with_constant_rate(1, 1, zero, diffusion, 1.0, ProgenyLaw::constant(vec![0.0, 1.0]).unwrap())
            .unwrap()
    }

    fn run(costs: &CostSpec, sigma: f64, law: &InitialLaw, n: usize) -> CostEstimate {
        let grid = TimeGrid::new(0.0, 1.0, 0.01).unwrap();
        let flow = MeasureFlow::constant(grid, law.to_measure().unwrap());
        estimate_cost(&model(sigma), costs, &ClosedLoopControl::zero(1), law, InitScheme::BernoulliResidual, &flow, grid, n, 4)
            .unwrap()
    }

    #[test]
    fn counting_terminal_cost_is_mass() {
        let costs = CostSpec::new(Arc::new(|_, _, _, _| 0.0), Arc::new(|_, _| 1.0));
        let law = InitialLaw::gaussian(2.5, 0.0, 1.0).unwrap();
        let est = run(&costs, 1.0, &law, 20_000);
        assert!((est.mean - 2.5).abs() <= 3.0 * est.std_error, "{est:?}");
        assert_eq!(est.running.mean, 0.0);
    }

    #[test]
    fn heat_second_moment() {
        let costs = CostSpec::new(Arc::new(|_, _, _, _| 0.0), Arc::new(|x: &[f64], _| x[0] * x[0]));
        let law = InitialLaw::atomic(FiniteMeasure::dirac(vec![0.7], 1.0).unwrap()).unwrap();
        let est = run(&costs, 1.0, &law, 20_000);
        assert!((est.mean - (0.49 + 1.0)).abs() <= 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn running_cost_uses_left_endpoints() {
        // L = 1 per particle: running part is exactly T for a single immortal particle
        let costs = CostSpec::new(Arc::new(|_, _, _, _| 1.0), Arc::new(|_, _| 0.0));
        let law = InitialLaw::atomic(FiniteMeasure::dirac(vec![0.0], 1.0).unwrap()).unwrap();
        let est = run(&costs, 0.0, &law, 100);
        assert!((est.mean - 1.0).abs() < 1e-12);
        assert_eq!(est.std_error, 0.0);
        assert!((est.running.mean + est.terminal.mean - est.mean).abs() < 1e-12);
    }

    #[test]
    fn reproducible() {
        let costs = CostSpec::new(Arc::new(|_, x: &[f64], _, _| x[0].abs()), Arc::new(|x: &[f64], _| x[0]));
        let law = InitialLaw::gaussian(1.0, 0.0, 1.0).unwrap();
        assert_eq!(run(&costs, 1.0, &law, 500), run(&costs, 1.0, &law, 500));
    }

    #[test]
    fn growth_spot_check() {
        let costs = CostSpec::new(Arc::new(|_, x: &[f64], _, a: &[f64]| x[0] * x[0] + a[0] * a[0]), Arc::new(|x: &[f64], _| x[0].powi(3)))
            .with_growth(1.0, 1.0);
        let mu = FiniteMeasure::empty(1);
        assert!(costs.spot_check(&[(0.0, vec![0.5], vec![1.0])], &mu).is_ok());
        assert!(costs.spot_check(&[(0.0, vec![5.0], vec![1.0])], &mu).is_err());
    }

    #[test]
    fn too_few_trees() {
        let costs = CostSpec::new(Arc::new(|_, _, _, _| 0.0), Arc::new(|_, _| 1.0));
        let law = InitialLaw::gaussian(1.0, 0.0, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        let flow = MeasureFlow::constant(grid, law.to_measure().unwrap());
        let r = estimate_cost(&model(1.0), &costs, &ClosedLoopControl::zero(1), &law, InitScheme::Poisson, &flow, grid, 10, 1);
        assert!(matches!(r, Err(Error::TooFewSamples { .. })));
    }
}
