use branchflow::engine::{derive_seed, simulate_moments, ForestSpec, InitScheme, Simulator};
use branchflow::verify::{
    check_dpp, check_flow_property, check_hjb_residual, check_initial_law_invariance, check_mass_law,
    check_population_bound, check_riccati_order, check_verification, ito_formula_check, perturbation_grid, shifted_panel,
    CheckReport, CheckSuite, CylindricalFunction, Lifting, McBudget, SuiteSummary,
};
use branchflow::{Error, Result};

use crate::config::{CheckSpec, ItoFunction};
use crate::experiment::Experiment;

fn to_core(e: anyhow::Error) -> Error {
    match e.downcast::<Error>() {
        Ok(e) => e,
        Err(e) => Error::InvalidParameter(format!("{e:#}")),
    }
}

/// Grid time nearest to `t`.
fn snap(exp: &Experiment, t: f64) -> f64 {
    let g = &exp.grid;
    let j = ((t - g.t0()) / g.dt()).round().clamp(0.0, g.steps() as f64) as usize;
    g.time(j)
}

fn run_check(exp: &Experiment, spec: &CheckSpec, tag: u64) -> Result<CheckReport> {
    let budget = &exp.config.budget;
    let seed = derive_seed(budget.seed, 9_000 + tag);
    let (t0, horizon) = (exp.grid.t0(), exp.grid.horizon());
    let lq = || exp.lq().map_err(to_core);
    match spec {
        CheckSpec::HjbResidual { n_times, n_moments, tol, .. } => {
            check_hjb_residual(&lq()?.solution, *n_times, *n_moments, *tol)
        }
        CheckSpec::Verification { perturbations, tol, mc, .. } => {
            let shifts = perturbations.clone().unwrap_or_else(perturbation_grid);
            let mc = mc.as_ref().map(|m| McBudget { n_trees: m.n_trees, dt: m.dt, seed, scheme: budget.scheme, k: m.k });
            check_verification(&lq()?.solution, &exp.law, &shifts, *tol, mc.as_ref())
        }
        CheckSpec::Dpp { pairs, panel_size, tol, .. } => {
            let sol = &lq()?.solution;
            let span = horizon - t0;
            let pairs = pairs.clone().unwrap_or_else(|| {
                vec![(t0, t0 + 0.5 * span), (t0 + 0.25 * span, t0 + 0.75 * span), (t0 + 0.5 * span, horizon)]
            });
            let m0 = exp.initial_moments().map_err(to_core)?;
            let shifts: Vec<(f64, f64)> = perturbation_grid().into_iter().cycle().take(*panel_size).collect();
            let mut worst: Option<CheckReport> = None;
            for (t, s) in pairs {
                let panel = shifted_panel(sol, t, m0.mass, &shifts);
                let rep = check_dpp(sol, &m0, t, s, &panel, *tol)?;
                if worst.as_ref().is_none_or(|w| !(rep.statistic <= w.statistic)) {
                    worst = Some(rep);
                }
            }
            worst.ok_or_else(|| Error::InvalidParameter("no (t, s) pairs".into()))
        }
        CheckSpec::PopulationBound { n_trees, .. } => {
            let flow = exp.configured_flow().map_err(to_core)?;
            let sim = Simulator::new(&exp.model, &exp.control, &flow.flow, exp.grid)?;
            let spec = ForestSpec { law: &exp.law, scheme: budget.scheme, n_trees: n_trees.unwrap_or(budget.n_trees), seed };
            let trees = simulate_moments(&sim, &spec)?;
            check_population_bound(&trees, exp.law.mass(), exp.model.gamma_bar, exp.model.progeny.mean_bound(), horizon - t0)
        }
        CheckSpec::MassLaw { n_trees, k, .. } => {
            let flow = exp.configured_flow().map_err(to_core)?;
            let sim = Simulator::new(&exp.model, &exp.control, &flow.flow, exp.grid)?;
            let spec = ForestSpec { law: &exp.law, scheme: budget.scheme, n_trees: n_trees.unwrap_or(budget.n_trees), seed };
            check_mass_law(&simulate_moments(&sim, &spec)?, exp.law.mass(), exp.theta, horizon - t0, *k)
        }
        CheckSpec::Ito { function, interval, tol, quadrature, flow, .. } => {
            let f = match function {
                ItoFunction::Mass => CylindricalFunction::mass(1),
                ItoFunction::FirstMoment => CylindricalFunction::first_moment(),
                ItoFunction::FirstMomentSquared => CylindricalFunction::first_moment_squared(),
            };
            let solved = exp.flow(flow.unwrap_or(budget.flow)).map_err(to_core)?;
            ito_formula_check(&f, &exp.model, &exp.control, &solved.flow, interval.unwrap_or((t0, horizon)), *quadrature, *tol)
        }
        CheckSpec::InitialLawInvariance { schemes, n_trees, k, .. } => {
            let flow = exp.configured_flow().map_err(to_core)?;
            let liftings = (
                Lifting { scheme: schemes.0, seed: derive_seed(seed, 1) },
                Lifting { scheme: schemes.1, seed: derive_seed(seed, 2) },
            );
            let n = n_trees.unwrap_or(budget.n_trees);
            check_initial_law_invariance(&exp.model, &exp.control, &exp.law, liftings, &flow.flow, &exp.grid, n, *k)
        }
        CheckSpec::FlowProperty { u, restart_scheme, k, .. } => {
            let u = snap(exp, u.unwrap_or(0.5 * (t0 + horizon)));
            let mut opts = exp.picard_options();
            opts.seed = seed;
            let restart = restart_scheme.unwrap_or(InitScheme::BernoulliResidual);
            check_flow_property(&exp.model, &exp.control, &exp.law, &exp.grid, (t0, u, horizon), &opts, restart, *k)
        }
        CheckSpec::RiccatiOrder { dts, min_order, .. } => {
            let lq = lq()?;
            check_riccati_order(&lq.model, exp.config.riccati.convention, dts, *min_order)
        }
    }
}

/// Runs `checks`, each seeded by its position in the list.
pub fn run_suite(exp: &Experiment, checks: &[CheckSpec]) -> SuiteSummary {
    let mut suite = CheckSuite::new();
    for (i, spec) in checks.iter().enumerate() {
        suite.add(spec.name(), move || run_check(exp, spec, i as u64));
    }
    suite.run(exp.hash())
}
