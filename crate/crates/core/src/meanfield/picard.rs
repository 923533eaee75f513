use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flow::{FlowProvenance, MeasureFlow};
use crate::engine::{
    derive_seed, simulate_flow, ClosedLoopControl, ForestSpec, InitScheme, InitialLaw, ModelCoefficients, MomentCollector,
    Simulator,
};
use crate::error::{Error, Result};
use crate::measures::{wbar1, CemeteryMetric, FiniteMeasure};
use crate::time::TimeGrid;

/// Minimum number of trees per Picard iterate.
pub const MIN_TREES: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PicardOptions {
    pub n_trees: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the new iterate when blending with the previous one.
    pub damping: f64,
    /// Atom cap per side for the W̄₁ residual.
    pub residual_cap: usize,
    /// Number of grid times (evenly spread, final time included) at which the
    /// residual is evaluated.
    pub residual_times: usize,
    pub scheme: InitScheme,
    pub seed: u64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            n_trees: 10_000,
            tol: 0.02,
            max_iter: 10,
            damping: 1.0,
            residual_cap: 2000,
            residual_times: 20,
            scheme: InitScheme::BernoulliResidual,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardDiagnostics {
    /// Per iteration: max over the residual times of W̄₁ between consecutive iterates.
    pub residuals: Vec<f64>,
    /// Per iteration: max over the grid of `|Δmass|, |Δm1|, |Δm2|` (first coordinate).
    pub moment_residuals: Vec<[f64; 3]>,
    pub iterations: usize,
    pub converged: bool,
}

/// Grid indices used for residuals: `count` evenly spaced indices ending at the final time.
pub fn residual_indices(grid: &TimeGrid, count: usize) -> Vec<usize> {
    let steps = grid.steps();
    let count = count.clamp(1, steps.max(1));
    let mut idx: Vec<usize> = (1..=count).map(|i| (i * steps).div_ceil(count)).collect();
    idx.dedup();
    idx
}

/// `max_j W̄₁(μ_j, ν_j)` over the given indices, on atoms subsampled to `cap`.
pub fn flow_distance(a: &MeasureFlow, b: &MeasureFlow, indices: &[usize], cap: usize, seed: u64) -> Result<f64> {
    let spec = CemeteryMetric::origin(a.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for &j in indices {
        let x = a.at(j).subsample(cap, &mut rng);
        let y = b.at(j).subsample(cap, &mut rng);
        worst = worst.max(wbar1(&x, &y, &spec)?);
    }
    Ok(worst)
}

fn moment_gap(a: &MeasureFlow, b: &MeasureFlow) -> [f64; 3] {
    let mut gap = [0.0f64; 3];
    for (x, y) in a.measures().iter().zip(b.measures()) {
        gap[0] = gap[0].max((x.mass() - y.mass()).abs());
        gap[1] = gap[1].max((x.first_moment()[0] - y.first_moment()[0]).abs());
        gap[2] = gap[2].max((x.second_moment() - y.second_moment()).abs());
    }
    gap
}

/// Starting guess: `ν₀` scaled by `e^{θ̂(t - t₀)}`, with `θ̂` the local growth
/// rate at the mean position of `ν₀`.
pub fn initial_guess(
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    law: &InitialLaw,
    grid: &TimeGrid,
) -> Result<MeasureFlow> {
    let nu0 = law.to_measure()?;
    let t0 = grid.t0();
    let theta = if nu0.mass() > 0.0 {
        let mean: Vec<f64> = nu0.first_moment().iter().map(|v| v / nu0.mass()).collect();
        let mut a = vec![0.0; control.dim()];
        control.apply(t0, &mean, &mut a);
        model.growth_rate(t0, &mean, &nu0, &a)?
    } else {
        0.0
    };
    let measures = (0..grid.len())
        .map(|j| nu0.scaled((theta * (grid.time(j) - t0)).exp()))
        .collect::<Result<Vec<FiniteMeasure>>>()?;
    MeasureFlow::new(*grid, measures, FlowProvenance::Supplied)
}

/// Picard iteration for the mean-field flow: each iterate simulates
/// `n_trees` trees against the previous flow (fresh random stream per
/// iterate) and takes their empirical mean measure.
///
/// Returns the first iterate whose residual is below `tol`, or the last one
/// with `converged = false`. The moment statistics are those of the returned
/// iterate's simulation.
pub fn solve_flow_picard(
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    law: &InitialLaw,
    grid: &TimeGrid,
    opts: &PicardOptions,
) -> Result<(MeasureFlow, PicardDiagnostics, MomentCollector)> {
    if opts.n_trees < MIN_TREES {
        return Err(Error::TooFewSamples { min: MIN_TREES, got: opts.n_trees });
    }
    if !(opts.tol >= 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidParameter(format!("tol = {}, max_iter = {}", opts.tol, opts.max_iter)));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidParameter(format!("damping {} outside (0, 1]", opts.damping)));
    }
    let indices = residual_indices(grid, opts.residual_times);
    let mut current = initial_guess(model, control, law, grid)?;
    let mut diag = PicardDiagnostics { residuals: Vec::new(), moment_residuals: Vec::new(), iterations: 0, converged: false };
    let mut last_stats = None;
    for k in 1..=opts.max_iter {
        let sim = Simulator::new(model, control, &current, *grid)?;
        let spec = ForestSpec { law, scheme: opts.scheme, n_trees: opts.n_trees, seed: derive_seed(opts.seed, k as u64) };
        let (mut next, stats) = simulate_flow(&sim, &spec)?;
        if opts.damping < 1.0 {
            let se = next.moment_se().map(|s| s.to_vec());
            let blended = next
                .measures()
                .iter()
                .zip(current.measures())
                .map(|(new, old)| new.blend(opts.damping, old, 1.0 - opts.damping))
                .collect::<Result<Vec<_>>>()?;
            next = MeasureFlow::new(*grid, blended, FlowProvenance::Supplied)?;
            if let Some(se) = se {
                next = next.with_moment_se(se)?;
            }
        }
        let r = flow_distance(&next, &current, &indices, opts.residual_cap, derive_seed(opts.seed, 1_000_000 + k as u64))?;
        diag.residuals.push(r);
        diag.moment_residuals.push(moment_gap(&next, &current));
        diag.iterations = k;
        current = next;
        last_stats = Some(stats);
        if r < opts.tol {
            diag.converged = true;
            break;
        }
    }
    let flow = current.with_provenance(FlowProvenance::Picard { iterations: diag.iterations, residuals: diag.residuals.clone() });
    Ok((flow, diag, last_stats.expect("at least one iteration")))
}

/// W̄₁ residual between two independent `n_trees` estimates of the flow
/// induced by the same frozen flow: the Monte Carlo floor of Picard residuals.
pub fn residual_noise_floor(
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    law: &InitialLaw,
    frozen: &MeasureFlow,
    opts: &PicardOptions,
) -> Result<f64> {
    let grid = *frozen.grid();
    let sim = Simulator::new(model, control, frozen, grid)?;
    let run = |tag: u64| {
        let spec = ForestSpec { law, scheme: opts.scheme, n_trees: opts.n_trees, seed: derive_seed(opts.seed, tag) };
        simulate_flow(&sim, &spec).map(|r| r.0)
    };
    let a = run(2_000_001)?;
    let b = run(2_000_002)?;
    flow_distance(&a, &b, &residual_indices(&grid, opts.residual_times), opts.residual_cap, derive_seed(opts.seed, 2_000_003))
}

/// Moment differences at the final time between a flow solved over `[t, s]`
/// and one restarted at `u` from the first flow's marginal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowPropertyReport {
    pub t: f64,
    pub u: f64,
    pub s: f64,
    pub wbar1: f64,
    /// `(A - B)` at `s` for mass, m1, m2.
    pub moment_diff: [f64; 3],
    /// Combined standard errors of those differences.
    pub moment_se: [f64; 3],
}

impl FlowPropertyReport {
    pub fn within(&self, k: f64) -> bool {
        self.moment_diff.iter().zip(&self.moment_se).all(|(d, se)| d.abs() <= k * se)
    }
}

/// Flow A solves from `(t, ν₀)` to `s`; flow B from `(u, μ^A_u)` to `s`.
/// Both use Picard with `opts`; the restart population is drawn from
/// `μ^A_u` with `restart_scheme`.
pub fn flow_property_check(
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    law: &InitialLaw,
    grid: &TimeGrid,
    (t, u, s): (f64, f64, f64),
    opts: &PicardOptions,
    restart_scheme: InitScheme,
) -> Result<FlowPropertyReport> {
    if !(t <= u && u <= s) {
        return Err(Error::InvalidParameter(format!("need t <= u <= s, got {t}, {u}, {s}")));
    }
    let (jt, ju, js) = (grid.index_of(t)?, grid.index_of(u)?, grid.index_of(s)?);
    let sub = grid.tail_from(jt)?.head_to(js - jt)?;
    let (flow_a, _, stats_a) = solve_flow_picard(model, control, law, &sub, opts)?;
    let end_a = sub.steps();
    let (ma, sea) = moments_with_se(&flow_a, &stats_a, end_a);
    if ju == js {
        return Ok(FlowPropertyReport { t, u, s, wbar1: 0.0, moment_diff: [0.0; 3], moment_se: [0.0; 3] });
    }
    let restart = InitialLaw::atomic(flow_a.at(ju - jt).clone())?;
    let sub_b = grid.tail_from(ju)?.head_to(js - ju)?;
    let opts_b = PicardOptions { seed: derive_seed(opts.seed, 3_000_000), scheme: restart_scheme, ..opts.clone() };
    let (flow_b, _, stats_b) = solve_flow_picard(model, control, &restart, &sub_b, &opts_b)?;
    let (mb, seb) = moments_with_se(&flow_b, &stats_b, sub_b.steps());
    let w = flow_distance(&flow_a.tail_from(ju - jt)?, &flow_b, &[sub_b.steps()], opts.residual_cap, derive_seed(opts.seed, 3_000_001))?;
    let mut moment_diff = [0.0; 3];
    let mut moment_se = [0.0; 3];
    for i in 0..3 {
        moment_diff[i] = ma[i] - mb[i];
        moment_se[i] = (sea[i] * sea[i] + seb[i] * seb[i]).sqrt();
    }
    Ok(FlowPropertyReport { t, u, s, wbar1: w, moment_diff, moment_se })
}

fn moments_with_se(flow: &MeasureFlow, stats: &MomentCollector, j: usize) -> ([f64; 3], [f64; 3]) {
    let mu = flow.at(j);
    (
        [mu.mass(), mu.first_moment()[0], mu.second_moment()],
        [stats.mass(j).std_error, stats.first(j, 0).std_error, stats.second(j).std_error],
    )
}
