use std::sync::{Arc, OnceLock};

use anyhow::{anyhow, bail, Context};
use branchflow::cost::CostSpec;
use branchflow::engine::{
    net_offspring, ClosedLoopControl, InitialLaw, ModelCoefficients, ProgenyLaw, VectorCoefficient,
};
use branchflow::lq::{lq_policy_path, optimal_affine_control, solve_riccati, AffineControl, LQModel, Moments, RiccatiSolution};
use branchflow::meanfield::{solve_flow_picard, MeasureFlow, PicardDiagnostics, PicardOptions};
use branchflow::measures::FiniteMeasure;
use branchflow::{TimeFn, TimeGrid};

use crate::config::{ControlSection, ExperimentConfig, FlowKind, GenericConfig, InitialSection, ModelSection};

/// LQ pieces: the model, its Riccati solution and the control as an affine law.
pub struct LqParts {
    pub model: LQModel,
    pub solution: Arc<RiccatiSolution>,
    pub control: AffineControl,
}

/// A flow together with the Picard diagnostics that produced it, if any.
pub struct SolvedFlow {
    pub flow: MeasureFlow,
    pub picard: Option<PicardDiagnostics>,
}

/// Everything a subcommand needs, built once from the config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
    pub grid: TimeGrid,
    pub law: InitialLaw,
    pub model: ModelCoefficients,
    pub costs: CostSpec,
    pub control: ClosedLoopControl,
    /// `γ Σ (ℓ - 1) p_ℓ`.
    pub theta: f64,
    pub lq: Option<LqParts>,
    flows: [OnceLock<Result<Arc<SolvedFlow>, String>>; 3],
}

fn build_law(initial: &InitialSection) -> branchflow::Result<InitialLaw> {
    match initial {
        InitialSection::Gaussian { mass, mean, sd } => InitialLaw::gaussian(*mass, *mean, *sd),
        InitialSection::Uniform { mass, a, b } => InitialLaw::uniform(*mass, *a, *b),
        InitialSection::Atoms { atoms } => {
            let (xs, ws): (Vec<f64>, Vec<f64>) = atoms.iter().copied().unzip();
            InitialLaw::atomic(FiniteMeasure::from_points(&xs, &ws)?)
        }
    }
}

fn build_generic(c: &GenericConfig) -> branchflow::Result<(ModelCoefficients, CostSpec)> {
    let [b0, b1, b2, b3, b4] = [&c.b0, &c.b1, &c.b2, &c.b3, &c.b4].map(|s| s.build());
    let (b0, b1, b2, b3, b4) = (b0?, b1?, b2?, b3?, b4?);
    let drift: VectorCoefficient = Arc::new(move |t, x: &[f64], mu: &FiniteMeasure, a: &[f64], out: &mut [f64]| {
        out[0] = b0.eval(t)
            + b1.eval(t) * x[0]
            + b2.eval(t) * mu.mass()
            + b3.eval(t) * a[0]
            + b4.eval(t) * mu.first_moment()[0];
    });
    let sigma = c.sigma;
    if !sigma.is_finite() {
        return Err(branchflow::Error::NonFinite(format!("sigma = {sigma}")));
    }
    let diffusion: VectorCoefficient = Arc::new(move |_, _, _, _, out: &mut [f64]| out[0] = sigma);
    let model = ModelCoefficients::with_constant_rate(1, 1, drift, diffusion, c.gamma, ProgenyLaw::constant(c.p.clone())?)?;
    let [l1, l2, l3, l4] = [&c.l1, &c.l2, &c.l3, &c.l4].map(|s| s.build());
    let (l1, l2, l3, l4) = (l1?, l2?, l3?, l4?);
    let (g1, g2, g3) = (c.g1, c.g2, c.g3);
    let costs = CostSpec::new(
        Arc::new(move |t, x: &[f64], mu: &FiniteMeasure, a: &[f64]| {
            l1.eval(t) * x[0] * x[0] + l2.eval(t) * mu.mass() + l3.eval(t) * mu.first_moment()[0] + l4.eval(t) * a[0] * a[0]
        }),
        Arc::new(move |x: &[f64], mu: &FiniteMeasure| g1 * x[0] * x[0] + g2 * mu.mass() + g3 * mu.first_moment()[0]),
    );
    Ok((model, costs))
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> anyhow::Result<Self> {
        let hash = config.hash();
        let (t0, horizon) = config.span();
        let grid = TimeGrid::new(t0, horizon, config.grid.dt).context("invalid time grid")?;
        let law = build_law(&config.initial).context("invalid initial law")?;
        if law.dim() != 1 {
            bail!("initial law must be one-dimensional");
        }
        let control_section = config.control();
        let affine = match &control_section {
            ControlSection::Zero => None,
            ControlSection::Optimal => None,
            ControlSection::Affine { k0, k1 } => Some(AffineControl::new(k0.build()?, k1.build()?)),
        };
        let (model, costs, lq, theta, control) = match &config.model {
            ModelSection::Lq(c) => {
                let lq_model = c.build().context("invalid LQ model")?;
                let rgrid = TimeGrid::new(t0, horizon, config.riccati.dt.unwrap_or(config.grid.dt))
                    .context("invalid Riccati grid")?;
                let solution = Arc::new(solve_riccati(&lq_model, &rgrid, config.riccati.convention)?);
                let affine = match control_section {
                    ControlSection::Optimal => optimal_affine_control(&solution, t0, law.mass()),
                    ControlSection::Zero => AffineControl::new(TimeFn::constant(0.0), TimeFn::constant(0.0)),
                    ControlSection::Affine { .. } => affine.expect("affine control built"),
                };
                let control = affine.to_closed_loop(&grid);
                let model = lq_model.to_coefficients()?;
                let costs = lq_model.to_cost_spec();
                let theta = lq_model.theta();
                (model, costs, Some(LqParts { model: lq_model, solution, control: affine }), theta, control)
            }
            ModelSection::Generic(c) => {
                let (model, costs) = build_generic(c).context("invalid generic model")?;
                let control = match affine {
                    Some(a) => a.to_closed_loop(&grid),
                    None => ClosedLoopControl::zero(1),
                };
                (model, costs, None, c.gamma * net_offspring(&c.p), control)
            }
        };
        Ok(Self { config, hash, grid, law, model, costs, control, theta, lq, flows: Default::default() })
    }

    pub fn hash(&self) -> Option<&str> {
        Some(&self.hash)
    }

    pub fn lq(&self) -> anyhow::Result<&LqParts> {
        self.lq.as_ref().ok_or_else(|| anyhow!("this operation needs an LQ model"))
    }

    /// `(m̄, m₁, m₂)` of `ν₀`.
    pub fn initial_moments(&self) -> anyhow::Result<Moments> {
        let (mass, m1, m2) = self.law.moments_1d();
        Ok(Moments::new(mass, m1, m2)?)
    }

    pub fn picard_options(&self) -> PicardOptions {
        let b = &self.config.budget;
        PicardOptions {
            n_trees: b.picard_trees.unwrap_or(b.n_trees),
            tol: b.picard_tol,
            max_iter: b.picard_max_iter,
            damping: b.damping,
            residual_cap: b.residual_cap,
            residual_times: b.residual_times,
            scheme: b.scheme,
            seed: b.seed,
        }
    }

    /// The flow of the given kind, computed once.
    pub fn flow(&self, kind: FlowKind) -> anyhow::Result<Arc<SolvedFlow>> {
        let slot = &self.flows[kind as usize];
        slot.get_or_init(|| self.solve_flow(kind).map(Arc::new).map_err(|e| format!("{e:#}")))
            .clone()
            .map_err(|e| anyhow!(e))
    }

    fn solve_flow(&self, kind: FlowKind) -> anyhow::Result<SolvedFlow> {
        match kind {
            FlowKind::Picard => {
                let (flow, diag, _) = solve_flow_picard(&self.model, &self.control, &self.law, &self.grid, &self.picard_options())?;
                Ok(SolvedFlow { flow, picard: Some(diag) })
            }
            FlowKind::MomentOde => {
                let lq = self.lq.as_ref().ok_or_else(|| anyhow!("flow `moment_ode` needs an LQ model"))?;
                let path = lq_policy_path(&lq.model, &lq.control, &self.grid, &self.initial_moments()?)?;
                Ok(SolvedFlow { flow: path.to_flow()?, picard: None })
            }
            FlowKind::Frozen => Ok(SolvedFlow { flow: MeasureFlow::constant(self.grid, self.law.to_measure()?), picard: None }),
        }
    }

    /// The flow selected by `budget.flow`.
    pub fn configured_flow(&self) -> anyhow::Result<Arc<SolvedFlow>> {
        self.flow(self.config.budget.flow)
    }
}
