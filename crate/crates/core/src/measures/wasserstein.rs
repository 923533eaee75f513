//! Extended Wasserstein-1 distance between finite measures of possibly
//! different mass.
//!
//! The lighter measure is padded with a cemetery atom `∂` carrying the mass
//! deficit. Ground costs use the truncated metric `ρ(x, y) = min(|x - y|, 1)`
//! extended by `ρ(x, ∂) = ρ(x, x₀) + 1`.

use rand::{Rng, SeedableRng};

use super::simplex::{transport_cost, MinCostFlow};
use super::FiniteMeasure;
use crate::error::{Error, Result};

/// Largest number of atoms per side accepted by the exact solvers.
pub const MAX_TRANSPORT_ATOMS: usize = 10_000;

/// Ground metric with cemetery point.
#[derive(Debug, Clone, PartialEq)]
pub struct CemeteryMetric {
    base: Vec<f64>,
}

impl CemeteryMetric {
    /// Cemetery anchored at the origin of R^d.
    pub fn origin(dim: usize) -> Self {
        Self { base: vec![0.0; dim] }
    }

    pub fn with_base(base: Vec<f64>) -> Self {
        Self { base }
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    #[inline]
    pub fn rho(&self, x: &[f64], y: &[f64]) -> f64 {
        euclid(x, y).min(1.0)
    }

    #[inline]
    pub fn rho_cemetery(&self, x: &[f64]) -> f64 {
        self.rho(x, &self.base) + 1.0
    }
}

#[inline]
fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn check_inputs(mu: &FiniteMeasure, nu: &FiniteMeasure, spec: &CemeteryMetric) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    if spec.dim() != mu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: spec.dim() });
    }
    let largest = mu.len().max(nu.len());
    if largest > MAX_TRANSPORT_ATOMS {
        return Err(Error::TooManyAtoms { atoms: largest, limit: MAX_TRANSPORT_ATOMS });
    }
    Ok(())
}

/// Extended Wasserstein-1 distance. One-dimensional inputs use the sparse
/// line-graph formulation, higher dimensions the dense bipartite one.
pub fn wbar1(mu: &FiniteMeasure, nu: &FiniteMeasure, spec: &CemeteryMetric) -> Result<f64> {
    if mu.dim() == 1 {
        wbar1_line(mu, nu, spec)
    } else {
        wbar1_dense(mu, nu, spec)
    }
}

/// Dense bipartite formulation, padding to `max(mass(mu), mass(nu))`.
pub fn wbar1_dense(mu: &FiniteMeasure, nu: &FiniteMeasure, spec: &CemeteryMetric) -> Result<f64> {
    wbar1_with_padding(mu, nu, spec, mu.mass().max(nu.mass()))
}

/// Dense bipartite formulation with an explicit padding mass `m`, which must
/// be at least the larger of the two masses.
pub fn wbar1_with_padding(mu: &FiniteMeasure, nu: &FiniteMeasure, spec: &CemeteryMetric, m: f64) -> Result<f64> {
    check_inputs(mu, nu, spec)?;
    let heavier = mu.mass().max(nu.mass());
    if !(m >= heavier * (1.0 - 1e-12)) {
        return Err(Error::InvalidParameter(format!("padding mass {m} is below the larger mass {heavier}")));
    }
    if m <= 0.0 {
        return Ok(0.0);
    }
    let pad_mu = (m - mu.mass()).max(0.0);
    let pad_nu = (m - nu.mass()).max(0.0);

    // Index len() stands for the cemetery.
    let mut supply: Vec<f64> = mu.weights().to_vec();
    let mu_cem = pad_mu > 0.0;
    if mu_cem {
        supply.push(pad_mu);
    }
    let mut demand: Vec<f64> = nu.weights().to_vec();
    let nu_cem = pad_nu > 0.0;
    if nu_cem {
        demand.push(pad_nu);
    }
    let (n_mu, n_nu) = (mu.len(), nu.len());
    transport_cost(&supply, &demand, |i, j| match (i < n_mu, j < n_nu) {
        (true, true) => spec.rho(mu.position(i), nu.position(j)),
        (true, false) => spec.rho_cemetery(mu.position(i)),
        (false, true) => spec.rho_cemetery(nu.position(j)),
        (false, false) => 0.0,
    })
}

/// One-dimensional formulation as a transshipment problem on a sparse graph
/// whose shortest-path metric reproduces the truncated metric: sorted support
/// points joined along the line, a hub at distance 1/2 from every point, and
/// the cemetery joined to `x₀` (cost 1) and to the hub (cost 3/2).
pub fn wbar1_line(mu: &FiniteMeasure, nu: &FiniteMeasure, spec: &CemeteryMetric) -> Result<f64> {
    check_inputs(mu, nu, spec)?;
    if mu.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: mu.dim() });
    }
    let x0 = spec.base()[0];
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(mu.len() + nu.len() + 1);
    pts.extend(mu.iter().map(|(x, w)| (x[0], w)));
    pts.extend(nu.iter().map(|(x, w)| (x[0], -w)));
    pts.push((x0, 0.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut nodes: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for (x, s) in pts {
        match nodes.last_mut() {
            Some(last) if last.0 == x => last.1 += s,
            _ => nodes.push((x, s)),
        }
    }
    let n = nodes.len();
    let mut net = MinCostFlow::with_capacity(n + 2, 4 * n + 4);
    for &(_, s) in &nodes {
        net.add_node(s);
    }
    let hub = net.add_node(0.0);
    let cemetery = net.add_node(nu.mass() - mu.mass());
    for i in 0..n {
        if i + 1 < n {
            let gap = nodes[i + 1].0 - nodes[i].0;
            net.add_arc(i, i + 1, gap);
            net.add_arc(i + 1, i, gap);
        }
        net.add_arc(i, hub, 0.5);
        net.add_arc(hub, i, 0.5);
    }
    let base = nodes.iter().position(|p| p.0 == x0).expect("x0 inserted");
    net.add_arc(cemetery, base, 1.0);
    net.add_arc(base, cemetery, 1.0);
    net.add_arc(cemetery, hub, 1.5);
    net.add_arc(hub, cemetery, 1.5);
    Ok(net.solve()?.total_cost)
}

/// A test function for the dual bound; must be 1-Lipschitz for the truncated
/// metric and vanish somewhere (hence bounded by 1 in absolute value).
pub type LipschitzTest<'a> = &'a dyn Fn(&[f64]) -> f64;

/// `max_φ ⟨mu - nu, φ⟩ + |mass(mu) - mass(nu)|` over the supplied test
/// functions. Never exceeds `2 · wbar1(mu, nu)`.
///
/// Each test function is screened on pairs of support atoms; a violation of
/// the Lipschitz or boundedness property is rejected.
pub fn wbar1_dual_lower_bound(
    mu: &FiniteMeasure,
    nu: &FiniteMeasure,
    test_fns: &[LipschitzTest<'_>],
    spec: &CemeteryMetric,
) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    let support: Vec<&[f64]> = mu.iter().chain(nu.iter()).map(|(x, _)| x).collect();
    for (k, phi) in test_fns.iter().enumerate() {
        screen_lipschitz(*phi, &support, spec).map_err(|msg| Error::NotLipschitz(format!("test function {k}: {msg}")))?;
    }
    let mass_gap = (mu.mass() - nu.mass()).abs();
    let best = test_fns
        .iter()
        .map(|phi| mu.integrate(phi) - nu.integrate(phi))
        .fold(0.0f64, f64::max);
    Ok(best + mass_gap)
}

fn screen_lipschitz(phi: LipschitzTest<'_>, support: &[&[f64]], spec: &CemeteryMetric) -> std::result::Result<(), String> {
    const TOL: f64 = 1e-12;
    let values: Vec<f64> = support.iter().map(|x| phi(x)).collect();
    for (x, v) in support.iter().zip(&values) {
        if !v.is_finite() || v.abs() > 1.0 + TOL {
            return Err(format!("|φ({x:?})| = {} exceeds 1", v.abs()));
        }
    }
    let check = |i: usize, j: usize| -> std::result::Result<(), String> {
        let gap = (values[i] - values[j]).abs();
        let r = spec.rho(support[i], support[j]);
        if gap > r + TOL {
            Err(format!("|φ(x) - φ(y)| = {gap} > ρ = {r} at x = {:?}, y = {:?}", support[i], support[j]))
        } else {
            Ok(())
        }
    };
    let n = support.len();
    if n <= 200 {
        for i in 0..n {
            for j in i + 1..n {
                check(i, j)?;
            }
        }
    } else {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..20_000 {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            check(i, j)?;
        }
    }
    Ok(())
}
