use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::density::{Boundary, DensityFlow, SpaceGrid};
use crate::engine::{ClosedLoopControl, ModelCoefficients};
use crate::error::{Error, Result};
use crate::meanfield::MeasureFlow;
use crate::measures::FiniteMeasure;
use crate::time::TimeGrid;

/// Time stepping of the diffusion term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpScheme {
    /// Explicit upwind advection (sub-stepped to its CFL limit), implicit
    /// diffusion, exact exponential source.
    #[default]
    Imex,
    /// Everything explicit; requires `Δt ≤ 0.4 Δx² / σ²` and the advection CFL.
    Explicit,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpOptions {
    pub scheme: FpScheme,
    pub boundary: Boundary,
    /// Largest fraction of a cell's mass advected out in one (sub)step.
    pub max_cfl: f64,
}

impl Default for FpOptions {
    fn default() -> Self {
        Self { scheme: FpScheme::Imex, boundary: Boundary::ZeroFlux, max_cfl: 0.9 }
    }
}

/// Explicit diffusion stability factor.
const EXPLICIT_SAFETY: f64 = 0.4;

struct Coefficients {
    drift: Vec<f64>,
    diff2: Vec<f64>,
    growth: Vec<f64>,
}

fn coefficients(
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    mu: &FiniteMeasure,
    space: &SpaceGrid,
    t: f64,
) -> Result<Coefficients> {
    let n = space.cells();
    let mut out = Coefficients { drift: vec![0.0; n], diff2: vec![0.0; n], growth: vec![0.0; n] };
    let mut a = vec![0.0; model.control_dim];
    let (mut b, mut s) = ([0.0], [0.0]);
    for j in 0..n {
        let x = [space.center(j)];
        control.apply(t, &x, &mut a);
        (model.drift)(t, &x, mu, &a, &mut b);
        (model.diffusion)(t, &x, mu, &a, &mut s);
        let g = model.growth_rate(t, &x, mu, &a)?;
        if !b[0].is_finite() || !s[0].is_finite() || !g.is_finite() || a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "coefficients at t = {t}, x = {}: drift {}, diffusion {}, growth {g}, control {a:?}",
                x[0], b[0], s[0]
            )));
        }
        out.drift[j] = b[0];
        out.diff2[j] = s[0] * s[0];
        out.growth[j] = g;
    }
    Ok(out)
}

/// Face velocities `v_0, .., v_J`; boundary faces follow the boundary tag.
fn face_velocities(drift: &[f64], boundary: Boundary) -> Vec<f64> {
    let n = drift.len();
    let mut v = vec![0.0; n + 1];
    for f in 1..n {
        v[f] = 0.5 * (drift[f - 1] + drift[f]);
    }
    if boundary == Boundary::ZeroValue {
        v[0] = drift[0].min(0.0);
        v[n] = drift[n - 1].max(0.0);
    }
    v
}

/// Largest per-cell outflow rate of the upwind scheme.
fn outflow_rate(v: &[f64], dx: f64) -> f64 {
    (0..v.len() - 1).map(|j| v[j + 1].max(0.0) - v[j].min(0.0)).fold(0.0, f64::max) / dx
}

fn advect(rho: &mut [f64], v: &[f64], dx: f64, h: f64, flux: &mut Vec<f64>) {
    let n = rho.len();
    flux.clear();
    flux.resize(n + 1, 0.0);
    for f in 0..=n {
        let left = if f > 0 { rho[f - 1] } else { 0.0 };
        let right = if f < n { rho[f] } else { 0.0 };
        flux[f] = v[f].max(0.0) * left + v[f].min(0.0) * right;
    }
    let r = h / dx;
    for j in 0..n {
        rho[j] -= r * (flux[j + 1] - flux[j]);
    }
}

/// Solves `(I - h D) y = rhs` for the zero-flux (or zero-value) diffusion
/// operator `D ρ = ½ ∂²_x(σ² ρ)` by the Thomas algorithm.
fn diffuse_implicit(rho: &mut [f64], a: &[f64], boundary: Boundary, c: f64, work: &mut Vec<f64>) {
    let n = rho.len();
    work.clear();
    work.resize(n, 0.0);
    let diag = |j: usize| {
        let faces = if boundary == Boundary::ZeroValue { 2.0 } else { f64::from(j > 0) + f64::from(j + 1 < n) };
        1.0 + c * a[j] * faces
    };
    // Forward sweep: work holds the modified upper coefficients.
    let mut denom = diag(0);
    work[0] = if n > 1 { -c * a[1] / denom } else { 0.0 };
    rho[0] /= denom;
    for j in 1..n {
        let lower = -c * a[j - 1];
        denom = diag(j) - lower * work[j - 1];
        work[j] = if j + 1 < n { -c * a[j + 1] / denom } else { 0.0 };
        rho[j] = (rho[j] - lower * rho[j - 1]) / denom;
    }
    for j in (0..n - 1).rev() {
        rho[j] -= work[j] * rho[j + 1];
    }
}

fn diffuse_explicit(rho: &mut [f64], a: &[f64], boundary: Boundary, c: f64, work: &mut Vec<f64>) {
    let n = rho.len();
    work.clear();
    work.extend(rho.iter().zip(a).map(|(r, a)| r * a));
    for j in 0..n {
        let mut d = 0.0;
        if j > 0 {
            d += work[j - 1] - work[j];
        } else if boundary == Boundary::ZeroValue {
            d -= work[j];
        }
        if j + 1 < n {
            d += work[j + 1] - work[j];
        } else if boundary == Boundary::ZeroValue {
            d -= work[j];
        }
        rho[j] += c * d;
    }
}

fn weighted_sum(space: &SpaceGrid, w: &[f64], rho: &[f64]) -> f64 {
    w.iter().zip(rho).map(|(w, r)| w * r).sum::<f64>() * space.dx()
}

/// Solves the forward equation of the model frozen at `flow` under the
/// closed-loop `control`, from the cell-averaged density `density0`.
pub fn fp_solve(
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    flow: &MeasureFlow,
    density0: &[f64],
    space: &SpaceGrid,
    grid: &TimeGrid,
    opts: &FpOptions,
) -> Result<DensityFlow> {
    if model.dim != 1 || flow.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: model.dim.max(flow.dim()) });
    }
    if control.dim() != model.control_dim {
        return Err(Error::DimensionMismatch { expected: model.control_dim, got: control.dim() });
    }
    if density0.len() != space.cells() {
        return Err(Error::DimensionMismatch { expected: space.cells(), got: density0.len() });
    }
    if let Some(r) = density0.iter().find(|r| !r.is_finite() || **r < 0.0) {
        return Err(Error::InvalidMeasure(format!("initial density value {r}")));
    }
    if !(opts.max_cfl > 0.0 && opts.max_cfl <= 1.0) {
        return Err(Error::InvalidParameter(format!("max_cfl = {} must lie in (0, 1]", opts.max_cfl)));
    }
    let idx = flow.indices_for(grid)?;
    let dx = space.dx();
    let dt = grid.dt();
    let mut rho = density0.to_vec();
    let mut densities = Vec::with_capacity(grid.len());
    let mut masses = Vec::with_capacity(grid.len());
    let mut source = Vec::with_capacity(grid.len());
    let mut min_before_clip = 0.0f64;
    let (mut flux, mut work) = (Vec::new(), Vec::new());

    for (n, &jf) in idx.iter().enumerate() {
        let t = grid.time(n);
        let coef = coefficients(model, control, flow.at(jf), space, t)?;
        densities.push(rho.clone());
        masses.push(space.mass(&rho));
        source.push(weighted_sum(space, &coef.growth, &rho));
        if n == grid.steps() {
            break;
        }
        let v = face_velocities(&coef.drift, opts.boundary);
        let cfl = outflow_rate(&v, dx) * dt;
        let max_a = coef.diff2.iter().copied().fold(0.0, f64::max);
        let c = 0.5 * dt / (dx * dx);
        let substeps = match opts.scheme {
            FpScheme::Imex => (cfl / opts.max_cfl - 1e-9).ceil().max(1.0) as usize,
            FpScheme::Explicit => {
                if cfl > opts.max_cfl * (1.0 + 1e-9) {
                    return Err(Error::Unstable(format!(
                        "advection CFL number {cfl:.3} exceeds {} at t = {t}",
                        opts.max_cfl
                    )));
                }
                if dt * max_a > EXPLICIT_SAFETY * dx * dx {
                    return Err(Error::Unstable(format!(
                        "explicit diffusion needs dt <= {EXPLICIT_SAFETY} dx^2 / sigma^2 = {:.3e}, got {dt:.3e}",
                        EXPLICIT_SAFETY * dx * dx / max_a
                    )));
                }
                1
            }
        };
        let h = dt / substeps as f64;
        for _ in 0..substeps {
            advect(&mut rho, &v, dx, h, &mut flux);
        }
        match opts.scheme {
            FpScheme::Imex => diffuse_implicit(&mut rho, &coef.diff2, opts.boundary, c, &mut work),
            FpScheme::Explicit => diffuse_explicit(&mut rho, &coef.diff2, opts.boundary, c, &mut work),
        }
        for (r, g) in rho.iter_mut().zip(&coef.growth) {
            *r *= (g * dt).exp();
            if !r.is_finite() {
                return Err(Error::NonFinite(format!("density became {r} at t = {}", grid.time(n + 1))));
            }
            if *r < 0.0 {
                min_before_clip = min_before_clip.min(*r);
                *r = 0.0;
            }
        }
    }
    Ok(DensityFlow {
        space: *space,
        grid: *grid,
        boundary: opts.boundary,
        densities,
        masses,
        source,
        min_before_clip,
    })
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A time-independent test function with its first two derivatives.
#[derive(Clone)]
pub struct TestFunction {
    pub value: RealFn,
    pub first: RealFn,
    pub second: RealFn,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TestFunction")
    }
}

impl TestFunction {
    pub fn new(value: RealFn, first: RealFn, second: RealFn) -> Self {
        Self { value, first, second }
    }

    /// The smooth bump `exp(-1 / (1 - r²))`, `r = (x - center) / radius`,
    /// supported on `|r| < 1`.
    pub fn bump(center: f64, radius: f64) -> Self {
        let parts = move |x: f64| -> (f64, f64, f64) {
            let r = (x - center) / radius;
            let u = 1.0 - r * r;
            if u <= 0.0 {
                return (0.0, 0.0, 0.0);
            }
            let p = (-1.0 / u).exp();
            let d1 = -2.0 * r * p / (u * u);
            let d2 = p * (-2.0 / (u * u) - 8.0 * r * r / u.powi(3) + 4.0 * r * r / u.powi(4));
            (p, d1 / radius, d2 / (radius * radius))
        };
        Self::new(Arc::new(move |x| parts(x).0), Arc::new(move |x| parts(x).1), Arc::new(move |x| parts(x).2))
    }
}

/// `|⟨φ, ρ_T⟩ - ⟨φ, ρ_0⟩ - ∫ ⟨ℒφ + πφ, ρ_t⟩ dt|` with
/// `ℒφ = b φ' + ½ σ² φ''`, integrated by the trapezoid rule on the solution grid.
pub fn weak_form_residual(
    sol: &DensityFlow,
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    flow: &MeasureFlow,
    phi: &TestFunction,
) -> Result<f64> {
    let space = sol.space();
    let grid = sol.grid();
    let idx = flow.indices_for(grid)?;
    let xs = space.centers();
    let values: Vec<f64> = xs.iter().map(|x| (phi.value)(*x)).collect();
    let d1: Vec<f64> = xs.iter().map(|x| (phi.first)(*x)).collect();
    let d2: Vec<f64> = xs.iter().map(|x| (phi.second)(*x)).collect();
    let mut integral = 0.0;
    for (n, &jf) in idx.iter().enumerate() {
        let coef = coefficients(model, control, flow.at(jf), space, grid.time(n))?;
        let gen: Vec<f64> = (0..xs.len())
            .map(|j| coef.drift[j] * d1[j] + 0.5 * coef.diff2[j] * d2[j] + coef.growth[j] * values[j])
            .collect();
        let w = if n == 0 || n == grid.steps() { 0.5 } else { 1.0 };
        integral += w * grid.dt() * weighted_sum(space, &gen, sol.density(n));
    }
    let end = weighted_sum(space, &values, sol.final_density());
    let start = weighted_sum(space, &values, sol.density(0));
    Ok((end - start - integral).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{InitialLaw, ProgenyLaw};

    fn model(drift: f64, sigma: f64, p: Vec<f64>) -> ModelCoefficients {
        ModelCoefficients::with_constant_rate(
            1,
            1,
            Arc::new(move |_, _, _, _, b| b[0] = drift),
            Arc::new(move |_, _, _, _, s| s[0] = sigma),
            1.0,
            ProgenyLaw::constant(p).unwrap(),
        )
        .unwrap()
    }

    fn frozen(grid: &TimeGrid) -> MeasureFlow {
        MeasureFlow::constant(*grid, FiniteMeasure::dirac(vec![0.0], 1.0).unwrap())
    }

    fn variance(space: &SpaceGrid, rho: &[f64]) -> f64 {
        let mu = space.to_measure(rho).unwrap();
        let m = mu.first_moment()[0] / mu.mass();
        mu.second_moment() / mu.mass() - m * m
    }

    #[test]
    fn heat_equation_conserves_mass_and_spreads() {
        let m = model(0.0, 0.5, vec![0.0, 1.0]);
        let space = SpaceGrid::with_spacing(-5.0, 5.0, 0.01).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 0.01).unwrap();
        let rho0 = space.project_law(&InitialLaw::gaussian(1.0, 0.0, 0.5).unwrap()).unwrap();
        let sol = fp_solve(&m, &ClosedLoopControl::zero(1), &frozen(&grid), &rho0, &space, &grid, &FpOptions::default())
            .unwrap();
        let drift = (sol.masses()[grid.steps()] - sol.masses()[0]).abs();
        assert!(drift < 1e-8, "mass drift {drift}");
        let growth = variance(&space, sol.final_density()) - variance(&space, &rho0);
        assert!((growth - 0.25).abs() < 0.02 * 0.25, "variance growth {growth}");
        assert!(sol.min_before_clip() >= -1e-12);
    }

    #[test]
    fn constant_growth_matches_exponential() {
        // θ = Σ(ℓ-1)p_ℓ = 0.5 with γ = 1.
        let m = model(0.3, 0.4, vec![0.0, 0.5, 0.5]);
        let space = SpaceGrid::with_spacing(-4.0, 4.0, 0.02).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 0.01).unwrap();
        let rho0 = space.project_law(&InitialLaw::gaussian(2.0, 0.0, 0.5).unwrap()).unwrap();
        let sol = fp_solve(&m, &ClosedLoopControl::zero(1), &frozen(&grid), &rho0, &space, &grid, &FpOptions::default())
            .unwrap();
        for (j, mass) in sol.masses().iter().enumerate() {
            let exact = 2.0 * (0.5 * grid.time(j)).exp();
            assert!((mass - exact).abs() < 0.005 * exact, "t = {}: {mass} vs {exact}", grid.time(j));
        }
        assert!(sol.mass_balance_defect() < 0.01);
    }

    #[test]
    fn deterministic_transport_shifts_profile() {
        let c = 0.5;
        let m = model(c, 0.0, vec![0.0, 1.0]);
        let space = SpaceGrid::with_spacing(-2.0, 2.0, 0.01).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 0.02).unwrap();
        let opts = FpOptions { max_cfl: 1.0, ..FpOptions::default() };
        let rho0 = space.project_law(&InitialLaw::uniform(1.0, -0.5, 0.0).unwrap()).unwrap();
        let sol = fp_solve(&m, &ClosedLoopControl::zero(1), &frozen(&grid), &rho0, &space, &grid, &opts).unwrap();
        let mu = sol.measure(grid.steps()).unwrap();
        let mean = mu.first_moment()[0] / mu.mass();
        assert!((mean - (-0.25 + c)).abs() <= space.dx(), "mean {mean}");
        // CFL number 1 moves every cell exactly one cell per substep.
        let shifted: Vec<f64> = (0..space.cells()).map(|j| if j >= 50 { rho0[j - 50] } else { 0.0 }).collect();
        let diff: f64 = sol.final_density().iter().zip(&shifted).map(|(a, b)| (a - b).abs()).sum::<f64>() * space.dx();
        assert!(diff < 1e-9, "L1 difference {diff}");
    }

    #[test]
    fn explicit_mode_checks_stability() {
        let m = model(0.0, 1.0, vec![0.0, 1.0]);
        let space = SpaceGrid::with_spacing(-3.0, 3.0, 0.05).unwrap();
        let rho0 = space.project_law(&InitialLaw::gaussian(1.0, 0.0, 0.5).unwrap()).unwrap();
        let opts = FpOptions { scheme: FpScheme::Explicit, ..FpOptions::default() };
        let coarse = TimeGrid::new(0.0, 0.1, 0.01).unwrap();
        let err = fp_solve(&m, &ClosedLoopControl::zero(1), &frozen(&coarse), &rho0, &space, &coarse, &opts).unwrap_err();
        assert!(matches!(err, Error::Unstable(_)));
        let fine = TimeGrid::new(0.0, 0.1, 0.001).unwrap();
        let sol = fp_solve(&m, &ClosedLoopControl::zero(1), &frozen(&fine), &rho0, &space, &fine, &opts).unwrap();
        let imex = fp_solve(&m, &ClosedLoopControl::zero(1), &frozen(&fine), &rho0, &space, &fine, &FpOptions::default())
            .unwrap();
        let gap: f64 = sol.final_density().iter().zip(imex.final_density()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(gap * space.dx() < 1e-3);
    }

    #[test]
    fn zero_value_boundary_leaks_mass() {
        let m = model(2.0, 0.3, vec![0.0, 1.0]);
        let space = SpaceGrid::with_spacing(-1.0, 1.0, 0.02).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 0.005).unwrap();
        let rho0 = space.project_law(&InitialLaw::uniform(1.0, -0.5, 0.5).unwrap()).unwrap();
        let flux = FpOptions::default();
        let leak = FpOptions { boundary: Boundary::ZeroValue, ..FpOptions::default() };
        let a = fp_solve(&m, &ClosedLoopControl::zero(1), &frozen(&grid), &rho0, &space, &grid, &flux).unwrap();
        let b = fp_solve(&m, &ClosedLoopControl::zero(1), &frozen(&grid), &rho0, &space, &grid, &leak).unwrap();
        assert!((a.masses()[grid.steps()] - 1.0).abs() < 1e-10);
        assert!(b.masses()[grid.steps()] < 0.2);
        assert!(a.boundary_mass(grid.steps()) > 0.1);
    }

    #[test]
    fn non_finite_coefficients_are_reported() {
        let mut m = model(0.0, 0.3, vec![0.0, 1.0]);
        m.drift = Arc::new(|_, x, _, _, b| b[0] = if x[0] > 0.5 { f64::NAN } else { 0.0 });
        let space = SpaceGrid::with_spacing(-1.0, 1.0, 0.1).unwrap();
        let grid = TimeGrid::new(0.0, 0.1, 0.01).unwrap();
        let rho0 = vec![1.0; space.cells()];
        let err = fp_solve(&m, &ClosedLoopControl::zero(1), &frozen(&grid), &rho0, &space, &grid, &FpOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn bump_derivatives_match_differences() {
        let phi = TestFunction::bump(0.2, 0.7);
        let h = 1e-5;
        for x in [-0.3, 0.0, 0.25, 0.6, 0.85] {
            let fd1 = ((phi.value)(x + h) - (phi.value)(x - h)) / (2.0 * h);
            let fd2 = ((phi.first)(x + h) - (phi.first)(x - h)) / (2.0 * h);
            assert!((fd1 - (phi.first)(x)).abs() < 1e-6);
            assert!((fd2 - (phi.second)(x)).abs() < 1e-5);
        }
        assert_eq!((phi.value)(1.0), 0.0);
    }

    #[test]
    fn weak_form_residual_is_first_order() {
        let m = model(0.4, 0.5, vec![0.1, 0.3, 0.6]);
        let control = ClosedLoopControl::zero(1);
        let mut residuals = Vec::new();
        for (dx, dt) in [(0.02, 0.01), (0.01, 0.005)] {
            let space = SpaceGrid::with_spacing(-4.0, 4.0, dx).unwrap();
            let grid = TimeGrid::new(0.0, 1.0, dt).unwrap();
            let rho0 = space.project_law(&InitialLaw::gaussian(1.0, 0.0, 0.4).unwrap()).unwrap();
            let flow = frozen(&grid);
            let sol = fp_solve(&m, &control, &flow, &rho0, &space, &grid, &FpOptions::default()).unwrap();
            let r: Vec<f64> = [(-1.0, 1.0), (0.0, 0.8), (0.5, 1.5), (1.0, 1.2), (-0.5, 2.0)]
                .iter()
                .map(|&(c, r)| weak_form_residual(&sol, &m, &control, &flow, &TestFunction::bump(c, r)).unwrap())
                .collect();
            residuals.push(r);
        }
        for (a, b) in residuals[0].iter().zip(&residuals[1]) {
            let ratio = a / b;
            assert!((2.0 / 1.4..=2.0 * 1.4).contains(&ratio), "residual ratio {ratio} ({a} -> {b})");
        }
    }
}
