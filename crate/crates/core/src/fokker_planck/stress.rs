use serde::Serialize;

use super::density::SpaceGrid;
use super::solver::{fp_solve, FpOptions};
use crate::engine::{
    derive_seed, simulate_terminal, ClosedLoopControl, ForestSpec, InitScheme, InitialLaw, ModelCoefficients, Simulator,
};
use crate::error::{Error, Result};
use crate::meanfield::MeasureFlow;
use crate::measures::{wbar1, CemeteryMetric, FiniteMeasure};
use crate::stats::MeanEstimate;
use crate::time::TimeGrid;

/// Sampled bounds on the coefficients over a space-time box.
#[derive(Debug, Clone, Serialize)]
pub struct EllipticityReport {
    pub min_sigma2: f64,
    pub max_sigma2: f64,
    pub max_drift: f64,
    pub samples: usize,
    /// `σ² ≥ c₀ > 0` at every sampled point.
    pub uniformly_elliptic: bool,
}

/// Samples `σ²` and `|b|` at `xs` and every time of `grid`.
pub fn ellipticity_check(
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    flow: &MeasureFlow,
    grid: &TimeGrid,
    xs: &[f64],
) -> Result<EllipticityReport> {
    if model.dim != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: model.dim });
    }
    let idx = flow.indices_for(grid)?;
    let mut a = vec![0.0; model.control_dim];
    let (mut b, mut s) = ([0.0], [0.0]);
    let mut rep =
        EllipticityReport { min_sigma2: f64::INFINITY, max_sigma2: 0.0, max_drift: 0.0, samples: 0, uniformly_elliptic: false };
    for (n, &jf) in idx.iter().enumerate() {
        let t = grid.time(n);
        let mu = flow.at(jf);
        for &x in xs {
            control.apply(t, &[x], &mut a);
            (model.drift)(t, &[x], mu, &a, &mut b);
            (model.diffusion)(t, &[x], mu, &a, &mut s);
            let s2 = s[0] * s[0];
            rep.min_sigma2 = rep.min_sigma2.min(s2);
            rep.max_sigma2 = rep.max_sigma2.max(s2);
            rep.max_drift = rep.max_drift.max(b[0].abs());
            rep.samples += 1;
        }
    }
    rep.uniformly_elliptic = rep.samples > 0 && rep.min_sigma2 > 0.0;
    Ok(rep)
}

/// Inputs of [`uniqueness_stress`].
#[derive(Debug, Clone)]
pub struct UniquenessSpec<'a> {
    pub law: &'a InitialLaw,
    pub x_lo: f64,
    pub x_hi: f64,
    /// Cell widths, coarsest first.
    pub resolutions: Vec<f64>,
    /// Initial-population schemes lifting the same `ν₀`.
    pub schemes: Vec<InitScheme>,
    pub n_trees: usize,
    /// Independent same-scheme replicate pairs used to size the null.
    pub null_replicates: usize,
    pub seed: u64,
    pub fp: FpOptions,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairDistance {
    pub a: String,
    pub b: String,
    pub wbar1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub resolutions: Vec<f64>,
    pub fd_final_mass: Vec<f64>,
    pub fd_distances: Vec<PairDistance>,
    /// `d(h_k, h_{k+1}) / d(h_{k+1}, h_{k+2})` for successive resolutions.
    pub fd_ratios: Vec<f64>,
    pub particle_final_mass: Vec<MeanEstimate>,
    pub particle_distances: Vec<PairDistance>,
    /// Distances from each particle marginal to the finest FD marginal.
    pub particle_fd_distances: Vec<PairDistance>,
    pub null_mean: f64,
    pub null_sd: f64,
    /// Every cross-scheme distance lies below `null_mean + 3 null_sd`.
    pub schemes_consistent: bool,
    pub ellipticity: EllipticityReport,
}

fn pairwise(names: &[String], measures: &[FiniteMeasure], metric: &CemeteryMetric) -> Result<Vec<PairDistance>> {
    let mut out = Vec::new();
    for i in 0..measures.len() {
        for j in i + 1..measures.len() {
            out.push(PairDistance { a: names[i].clone(), b: names[j].clone(), wbar1: wbar1(&measures[i], &measures[j], metric)? });
        }
    }
    Ok(out)
}

/// Final-time marginals of the frozen-flow model from several FD resolutions
/// and several initial-population schemes, compared pairwise in `W̄₁`.
pub fn uniqueness_stress(
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    flow: &MeasureFlow,
    grid: &TimeGrid,
    spec: &UniquenessSpec<'_>,
) -> Result<UniquenessReport> {
    if spec.resolutions.is_empty() || spec.schemes.is_empty() {
        return Err(Error::InvalidParameter("need at least one resolution and one scheme".into()));
    }
    let metric = CemeteryMetric::origin(1);
    let mut fd_final = Vec::new();
    let mut fd_names = Vec::new();
    let mut finest = None;
    for &dx in &spec.resolutions {
        let space = SpaceGrid::with_spacing(spec.x_lo, spec.x_hi, dx)?;
        let rho0 = space.project_law(spec.law)?;
        let sol = fp_solve(model, control, flow, &rho0, &space, grid, &spec.fp)?;
        fd_final.push(sol.measure(grid.steps())?);
        fd_names.push(format!("fd(dx={dx})"));
        if finest.is_none_or(|s: SpaceGrid| space.dx() < s.dx()) {
            finest = Some(space);
        }
    }
    let finest = finest.expect("non-empty resolutions");
    let fd_distances = pairwise(&fd_names, &fd_final, &metric)?;
    let successive: Vec<f64> =
        fd_final.windows(2).map(|w| wbar1(&w[0], &w[1], &metric)).collect::<Result<_>>()?;
    let fd_ratios = successive.windows(2).map(|w| w[0] / w[1]).collect();

    let sim = Simulator::new(model, control, flow, *grid)?;
    let marginal = |scheme: InitScheme, seed: u64| -> Result<(FiniteMeasure, MeanEstimate)> {
        let fs = ForestSpec { law: spec.law, scheme, n_trees: spec.n_trees, seed };
        let (mu, moments) = simulate_terminal(&sim, &fs)?;
        Ok((mu.binned_1d(finest.lo(), finest.dx())?, moments.mass(grid.steps())))
    };
    let mut particle = Vec::new();
    let mut particle_mass = Vec::new();
    let mut particle_names = Vec::new();
    for (k, &scheme) in spec.schemes.iter().enumerate() {
        let (mu, mass) = marginal(scheme, derive_seed(spec.seed, k as u64))?;
        particle.push(mu);
        particle_mass.push(mass);
        particle_names.push(format!("{scheme:?}"));
    }
    let particle_distances = pairwise(&particle_names, &particle, &metric)?;
    let reference = fd_final[fd_final.len() - 1].clone();
    let particle_fd_distances = particle
        .iter()
        .zip(&particle_names)
        .map(|(mu, name)| {
            Ok(PairDistance { a: name.clone(), b: "fd(finest)".into(), wbar1: wbar1(mu, &reference, &metric)? })
        })
        .collect::<Result<_>>()?;

    let mut null = Vec::new();
    for r in 0..spec.null_replicates {
        let base = derive_seed(spec.seed, 1_000 + 2 * r as u64);
        let (a, _) = marginal(spec.schemes[0], base)?;
        let (b, _) = marginal(spec.schemes[0], derive_seed(spec.seed, 1_001 + 2 * r as u64))?;
        null.push(wbar1(&a, &b, &metric)?);
    }
    let null_est = MeanEstimate::from_samples(&null);
    let null_sd = null_est.std_error * (null.len() as f64).sqrt();
    let schemes_consistent =
        !null.is_empty() && particle_distances.iter().all(|d| d.wbar1 <= null_est.mean + 3.0 * null_sd);

    let xs = finest.centers();
    let step = (xs.len() / 50).max(1);
    let sample: Vec<f64> = xs.iter().step_by(step).copied().collect();
    let ellipticity = ellipticity_check(model, control, flow, grid, &sample)?;

    Ok(UniquenessReport {
        resolutions: spec.resolutions.clone(),
        fd_final_mass: fd_final.iter().map(|m| m.mass()).collect(),
        fd_distances,
        fd_ratios,
        particle_final_mass: particle_mass,
        particle_distances,
        particle_fd_distances,
        null_mean: null_est.mean,
        null_sd,
        schemes_consistent,
        ellipticity,
    })
}
