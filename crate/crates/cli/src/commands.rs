use anyhow::{anyhow, Context};
use branchflow::cost::CostObserver;
use branchflow::engine::{
    derive_seed, init_population, run_forest, simulate_terminal, tree_rng, ForestSpec, MomentCollector, Simulator,
    TrajectoryRecorder,
};
use branchflow::fokker_planck::{fp_solve, FpOptions, SpaceGrid};
use branchflow::lq::{lq_cost_ode, lq_moment_flow, lq_value, optimal_affine_at};
use branchflow::measures::{wbar1, CemeteryMetric};
use branchflow::stats::fmt_f64;
use branchflow::verify::{hjb_sample_points, SuiteSummary};
use serde_json::{json, Value};

use crate::checks::run_suite;
use crate::config::CheckSpec;
use crate::experiment::Experiment;
use crate::output::OutDir;
use crate::ExitError;

/// Seed tags separating the random streams of one run.
const FINAL_TAG: u64 = 1;
const CROSS_CHECK_TAG: u64 = 2;

/// `riccati.csv`, `value_surface.csv` and `optimal_control.csv`.
pub fn lq_solve(exp: &Experiment, out: &mut OutDir) -> anyhow::Result<()> {
    let lq = exp.lq()?;
    let sol = &lq.solution;
    sol.write_csv(out.file("riccati.csv")?, out.hash())?;

    let mut rows = Vec::new();
    for (t, m) in hjb_sample_points(sol, 11, 20) {
        let w = lq_value(sol, t, &m)?;
        rows.push([t, m.mass, m.m1, m.m2, w].map(fmt_f64).to_vec());
    }
    out.csv("value_surface.csv", &["t", "mass", "m1", "m2", "value"], rows)?;

    let t0 = sol.grid().t0();
    let mass0 = exp.law.mass();
    let mut rows = Vec::new();
    for t in sol.grid().times() {
        let mass = mass0 * (exp.theta * (t - t0)).exp();
        let (k0, k1) = optimal_affine_at(sol, t, mass)?;
        rows.push([t, mass, k0, k1].map(fmt_f64).to_vec());
    }
    out.csv("optimal_control.csv", &["t", "mass", "k0", "k1"], rows)?;
    Ok(())
}

fn moment_rows(exp: &Experiment, mc: &MomentCollector) -> Vec<Vec<String>> {
    (0..exp.grid.len())
        .map(|j| {
            let est: Vec<_> = (0..3).map(|q| mc.estimate(j, q)).collect();
            let mut row = vec![fmt_f64(exp.grid.time(j))];
            row.extend(est.iter().map(|e| fmt_f64(e.mean)));
            row.extend(est.iter().map(|e| fmt_f64(e.std_error)));
            row
        })
        .collect()
}

/// Flow solve, final forest, `flow_moments.csv`, `trees.csv` and `cost.json`.
/// Returns an exit error when Picard did not converge in strict mode.
pub fn simulate(exp: &Experiment, out: &mut OutDir) -> anyhow::Result<Option<ExitError>> {
    let budget = &exp.config.budget;
    let solved = exp.configured_flow()?;
    let sim = Simulator::new(&exp.model, &exp.control, &solved.flow, exp.grid)?;
    let spec = ForestSpec { law: &exp.law, scheme: budget.scheme, n_trees: budget.n_trees, seed: derive_seed(budget.seed, FINAL_TAG) };
    let (moments, costs) =
        run_forest(&sim, &spec, || (MomentCollector::new(1, &exp.grid), CostObserver::new(&sim, &exp.costs)))?;

    let header = ["t", "mass", "m1", "m2", "mass_se", "m1_se", "m2_se"];
    out.csv("flow_moments.csv", &header, moment_rows(exp, &moments))?;

    let mut rows = Vec::new();
    for i in 0..exp.config.outputs.tree_samples.min(budget.n_trees) {
        let mut rng = tree_rng(spec.seed, i as u64);
        let init = init_population(&exp.law, spec.scheme, &mut rng)?;
        let mut rec = TrajectoryRecorder::new(1, exp.grid);
        sim.run(&init, &mut rng, &mut rec)?;
        let traj = rec.finish();
        for (j, snap) in traj.snapshots.iter().enumerate() {
            for (label, x) in snap.particles() {
                rows.push(vec![fmt_f64(exp.grid.time(j)), i.to_string(), label.to_string(), fmt_f64(x[0])]);
            }
        }
    }
    out.csv("trees.csv", &["t", "tree", "label", "x"], rows)?;

    let mut est = costs.estimate();
    est.flow_converged = solved.picard.as_ref().map(|d| d.converged);
    let mut report = est.to_json(out.hash());
    let map = report.as_object_mut().expect("cost report is an object");
    map.insert("flow".into(), serde_json::to_value(budget.flow)?);
    if let Some(d) = &solved.picard {
        map.insert("picard".into(), json!({ "iterations": d.iterations, "converged": d.converged, "residuals": d.residuals }));
    }
    if let Some(lq) = &exp.lq {
        let m0 = exp.initial_moments()?;
        map.insert("lq_value".into(), json!(lq_value(&lq.solution, exp.grid.t0(), &m0)?));
        map.insert("lq_cost_ode".into(), json!(lq_cost_ode(&lq.model, &lq.control, &exp.grid, &m0)?));
        let ode = lq_moment_flow(&lq.model, &lq.control, &exp.grid, &m0)?;
        let rows = ode.iter().enumerate().map(|(j, m)| [exp.grid.time(j), m.mass, m.m1, m.m2].map(fmt_f64).to_vec());
        out.csv("ode_moments.csv", &["t", "mass", "m1", "m2"], rows)?;
    }
    out.json("cost.json", report)?;

    Ok(match &solved.picard {
        Some(d) if budget.strict && !d.converged => Some(ExitError::new(
            3,
            format!("Picard iteration did not converge in {} iterations (residuals {:?})", d.iterations, d.residuals),
        )),
        _ => None,
    })
}

/// Runs the listed checks; `only` restricts the list to one kind, falling
/// back to `default` when the config lists none of that kind.
pub fn verify(exp: &Experiment, out: &mut OutDir, only: Option<(&str, CheckSpec)>) -> anyhow::Result<SuiteSummary> {
    let checks: Vec<CheckSpec> = match only {
        None => exp.config.checks.clone(),
        Some((kind, default)) => {
            let listed: Vec<CheckSpec> = exp.config.checks.iter().filter(|c| c.kind() == kind).cloned().collect();
            if listed.is_empty() {
                vec![default]
            } else {
                listed
            }
        }
    };
    let summary = run_suite(exp, &checks);
    summary.write_csv(out.file("checks.csv")?)?;
    out.json("summary.json", summary.to_json())?;
    Ok(summary)
}

/// `density.csv`, `mass_trace.csv` and, when configured, `cross_check.json`.
pub fn fp(exp: &Experiment, out: &mut OutDir) -> anyhow::Result<()> {
    let g = &exp.config.grid;
    let (lo, hi, dx) = match (g.x_lo, g.x_hi, g.dx) {
        (Some(lo), Some(hi), Some(dx)) => (lo, hi, dx),
        _ => return Err(anyhow!("fp needs grid.x_lo, grid.x_hi and grid.dx")),
    };
    let space = SpaceGrid::with_spacing(lo, hi, dx).context("invalid space grid")?;
    let rho0 = space.project_law(&exp.law).map_err(|e| anyhow!("mass leak: initial law does not fit in [{lo}, {hi}]: {e}"))?;
    let total = exp.law.mass();
    let inside = space.mass(&rho0);
    let leak = if total > 0.0 { (total - inside).abs() / total } else { 0.0 };
    if leak > exp.config.fp.leak_tol {
        return Err(anyhow!(
            "mass leak: {leak:.3e} of the initial mass lies outside [{lo}, {hi}] (tolerance {:.1e}); widen the x-span",
            exp.config.fp.leak_tol
        ));
    }
    let flow = exp.configured_flow()?;
    let f = &exp.config.fp;
    let opts = FpOptions { scheme: f.scheme, boundary: f.boundary, max_cfl: f.max_cfl };
    let sol = fp_solve(&exp.model, &exp.control, &flow.flow, &rho0, &space, &exp.grid, &opts)?;
    sol.write_csv(out.file("density.csv")?, out.hash())?;
    sol.write_mass_csv(out.file("mass_trace.csv")?, out.hash())?;

    if let Some(cc) = &f.cross_check {
        let budget = &exp.config.budget;
        let sim = Simulator::new(&exp.model, &exp.control, &flow.flow, exp.grid)?;
        let spec = ForestSpec {
            law: &exp.law,
            scheme: budget.scheme,
            n_trees: cc.n_trees,
            seed: derive_seed(budget.seed, CROSS_CHECK_TAG),
        };
        let (terminal, moments) = simulate_terminal(&sim, &spec)?;
        let binned = terminal.binned_1d(space.lo(), space.dx())?;
        let fd = sol.measure(exp.grid.steps())?;
        let d = wbar1(&binned, &fd, &CemeteryMetric::origin(1))?;
        let mass = moments.mass(exp.grid.steps());
        let report: Value = json!({
            "n_trees": cc.n_trees,
            "dx": space.dx(),
            "wbar1": d,
            "fd_final_mass": fd.mass(),
            "particle_final_mass": mass.mean,
            "particle_final_mass_se": mass.std_error,
            "min_density_before_clip": sol.min_before_clip(),
            "mass_balance_defect": sol.mass_balance_defect(),
        });
        out.json("cross_check.json", report)?;
    }
    Ok(())
}

/// The DPP check used by `dpp-check` when the config lists none.
pub fn default_dpp() -> CheckSpec {
    CheckSpec::Dpp { name: None, pairs: None, panel_size: 20, tol: 1e-6 }
}
