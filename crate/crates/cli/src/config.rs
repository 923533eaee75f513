use std::path::Path;

use anyhow::{bail, Context};
use branchflow::engine::InitScheme;
use branchflow::fokker_planck::{Boundary, FpScheme};
use branchflow::lq::{LQConfig, RiccatiConvention};
use branchflow::verify::ItoQuadrature;
use branchflow::TimeFnSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One experiment: model, control, initial law, grids, budgets and checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub control: Option<ControlSection>,
    pub initial: InitialSection,
    pub grid: GridSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub riccati: RiccatiSection,
    #[serde(default)]
    pub fp: FpSection,
    #[serde(default)]
    pub outputs: OutputSection,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSection {
    Lq(LQConfig),
    Generic(GenericConfig),
}

fn zero() -> TimeFnSpec {
    TimeFnSpec::Constant(0.0)
}

/// One-dimensional model with drift `b0 + b1 x + b2 m̄ + b3 a + b4 m₁`,
/// constant `σ`, constant rate `γ` and progeny law `p`; costs
/// `L1 x² + L2 m̄ + L3 m₁ + L4 a²` and `g1 x² + g2 m̄ + g3 m₁`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericConfig {
    #[serde(default = "zero")]
    pub b0: TimeFnSpec,
    #[serde(default = "zero")]
    pub b1: TimeFnSpec,
    #[serde(default = "zero")]
    pub b2: TimeFnSpec,
    #[serde(default = "zero")]
    pub b3: TimeFnSpec,
    #[serde(default = "zero")]
    pub b4: TimeFnSpec,
    pub sigma: f64,
    pub gamma: f64,
    pub p: Vec<f64>,
    #[serde(rename = "L1", default = "zero")]
    pub l1: TimeFnSpec,
    #[serde(rename = "L2", default = "zero")]
    pub l2: TimeFnSpec,
    #[serde(rename = "L3", default = "zero")]
    pub l3: TimeFnSpec,
    #[serde(rename = "L4", default = "zero")]
    pub l4: TimeFnSpec,
    #[serde(default)]
    pub g1: f64,
    #[serde(default)]
    pub g2: f64,
    #[serde(default)]
    pub g3: f64,
    #[serde(default)]
    pub t0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

/// Feedback `α(t, x)`. `optimal` needs an LQ model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSection {
    Zero,
    Optimal,
    /// `α = k0(t) + k1(t) x`; tables give custom time profiles.
    Affine { k0: TimeFnSpec, k1: TimeFnSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSection {
    Gaussian { mass: f64, mean: f64, sd: f64 },
    Uniform { mass: f64, a: f64, b: f64 },
    /// `[[x, weight], ...]`.
    Atoms { atoms: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dt: f64,
    #[serde(default)]
    pub x_lo: Option<f64>,
    #[serde(default)]
    pub x_hi: Option<f64>,
    #[serde(default)]
    pub dx: Option<f64>,
}

/// Which flow `μ` the particles and the density see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    /// Picard fixed point of the particle system.
    #[default]
    Picard,
    /// Closed-form moment flow of an LQ model under its affine control.
    MomentOde,
    /// `μ_t ≡ ν₀`.
    Frozen,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetSection {
    pub n_trees: usize,
    pub seed: u64,
    pub scheme: InitScheme,
    pub flow: FlowKind,
    pub picard_trees: Option<usize>,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub damping: f64,
    pub residual_cap: usize,
    pub residual_times: usize,
    /// Exit with code 3 when Picard does not converge.
    pub strict: bool,
}

impl Default for BudgetSection {
    fn default() -> Self {
        Self {
            n_trees: 10_000,
            seed: 0,
            scheme: InitScheme::BernoulliResidual,
            flow: FlowKind::Picard,
            picard_trees: None,
            picard_tol: 0.02,
            picard_max_iter: 10,
            damping: 1.0,
            residual_cap: 2000,
            residual_times: 20,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiccatiSection {
    pub convention: RiccatiConvention,
    /// Step of the Riccati integrator; defaults to `grid.dt`.
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpSection {
    pub scheme: FpScheme,
    pub boundary: Boundary,
    pub max_cfl: f64,
    /// Largest relative `ν₀` mass allowed outside `[x_lo, x_hi]`.
    pub leak_tol: f64,
    pub cross_check: Option<CrossCheckSection>,
}

impl Default for FpSection {
    fn default() -> Self {
        Self { scheme: FpScheme::Imex, boundary: Boundary::ZeroFlux, max_cfl: 0.9, leak_tol: 1e-10, cross_check: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossCheckSection {
    pub n_trees: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<String>,
    /// Number of individual trees written by `simulate`.
    pub tree_samples: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: None, tree_samples: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItoFunction {
    Mass,
    FirstMoment,
    FirstMomentSquared,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n_trees: usize,
    pub dt: f64,
    #[serde(default = "three")]
    pub k: f64,
}

fn three() -> f64 {
    3.0
}

fn tight() -> f64 {
    1e-6
}

fn ten() -> usize {
    10
}

fn hundred() -> usize {
    100
}

fn twenty() -> usize {
    20
}

fn order_dts() -> Vec<f64> {
    vec![1e-2, 5e-3, 2.5e-3]
}

fn min_order() -> f64 {
    3.5
}

/// One entry of the check list; `name` defaults to the kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    HjbResidual {
        name: Option<String>,
        #[serde(default = "ten")]
        n_times: usize,
        #[serde(default = "hundred")]
        n_moments: usize,
        #[serde(default = "tight")]
        tol: f64,
    },
    Verification {
        name: Option<String>,
        /// `(δk0, δk1)` shifts; defaults to a 20-point grid.
        perturbations: Option<Vec<(f64, f64)>>,
        #[serde(default = "tight")]
        tol: f64,
        mc: Option<McSection>,
    },
    Dpp {
        name: Option<String>,
        /// `(t, s)` pairs; defaults to three pairs spread over the horizon.
        pairs: Option<Vec<(f64, f64)>>,
        #[serde(default = "twenty")]
        panel_size: usize,
        #[serde(default = "tight")]
        tol: f64,
    },
    PopulationBound {
        name: Option<String>,
        n_trees: Option<usize>,
    },
    MassLaw {
        name: Option<String>,
        n_trees: Option<usize>,
        #[serde(default = "three")]
        k: f64,
    },
    Ito {
        name: Option<String>,
        function: ItoFunction,
        interval: Option<(f64, f64)>,
        #[serde(default = "tight")]
        tol: f64,
        #[serde(default)]
        quadrature: ItoQuadrature,
        flow: Option<FlowKind>,
    },
    InitialLawInvariance {
        name: Option<String>,
        schemes: (InitScheme, InitScheme),
        n_trees: Option<usize>,
        #[serde(default = "three")]
        k: f64,
    },
    FlowProperty {
        name: Option<String>,
        u: Option<f64>,
        restart_scheme: Option<InitScheme>,
        #[serde(default = "three")]
        k: f64,
    },
    RiccatiOrder {
        name: Option<String>,
        #[serde(default = "order_dts")]
        dts: Vec<f64>,
        #[serde(default = "min_order")]
        min_order: f64,
    },
}

impl CheckSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            CheckSpec::HjbResidual { .. } => "hjb_residual",
            CheckSpec::Verification { .. } => "verification",
            CheckSpec::Dpp { .. } => "dpp",
            CheckSpec::PopulationBound { .. } => "population_bound",
            CheckSpec::MassLaw { .. } => "mass_law",
            CheckSpec::Ito { .. } => "ito",
            CheckSpec::InitialLawInvariance { .. } => "initial_law_invariance",
            CheckSpec::FlowProperty { .. } => "flow_property",
            CheckSpec::RiccatiOrder { .. } => "riccati_order",
        }
    }

    pub fn name(&self) -> String {
        let name = match self {
            CheckSpec::HjbResidual { name, .. }
            | CheckSpec::Verification { name, .. }
            | CheckSpec::Dpp { name, .. }
            | CheckSpec::PopulationBound { name, .. }
            | CheckSpec::MassLaw { name, .. }
            | CheckSpec::Ito { name, .. }
            | CheckSpec::InitialLawInvariance { name, .. }
            | CheckSpec::FlowProperty { name, .. }
            | CheckSpec::RiccatiOrder { name, .. } => name,
        };
        name.clone().unwrap_or_else(|| self.kind().to_string())
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.grid.dt > 0.0) || !self.grid.dt.is_finite() {
            bail!("grid.dt must be positive, got {}", self.grid.dt);
        }
        if self.budget.n_trees == 0 {
            bail!("budget.n_trees must be positive");
        }
        if matches!(self.control, Some(ControlSection::Optimal)) && !self.is_lq() {
            bail!("control kind `optimal` needs an LQ model");
        }
        let mut names: Vec<String> = self.checks.iter().map(CheckSpec::name).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            bail!("duplicate check name `{}`", w[0]);
        }
        Ok(())
    }

    pub fn is_lq(&self) -> bool {
        matches!(self.model, ModelSection::Lq(_))
    }

    /// `(t0, T)` of the model section.
    pub fn span(&self) -> (f64, f64) {
        match &self.model {
            ModelSection::Lq(c) => (c.t0, c.horizon),
            ModelSection::Generic(c) => (c.t0, c.horizon),
        }
    }

    /// The configured control, defaulting to `optimal` for LQ models and
    /// `zero` otherwise.
    pub fn control(&self) -> ControlSection {
        self.control.clone().unwrap_or(if self.is_lq() { ControlSection::Optimal } else { ControlSection::Zero })
    }

    /// SHA-256 of the canonical JSON form (sorted keys, defaults filled in).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}
