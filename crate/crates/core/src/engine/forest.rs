use rayon::prelude::*;

use super::init::{init_population, InitScheme, InitialLaw};
use super::rng::tree_rng;
use super::tree::{Particle, Simulator, TreeObserver};
use crate::error::{Error, Result};
use crate::meanfield::{FlowProvenance, MeasureFlow, MomentSe};
use crate::measures::{FiniteMeasure, Label};
use crate::stats::MeanEstimate;
use crate::time::TimeGrid;

/// Trees handled by one sequential worker unit. Fixed, so that results do
/// not depend on the number of threads.
const CHUNK: usize = 64;

/// Observer accumulating over many trees; partial results from chunks are
/// merged in tree order.
pub trait ForestObserver: TreeObserver + Send + Sized {
    fn begin_tree(&mut self, _index: usize) {}
    fn end_tree(&mut self, _index: usize) {}
    fn merge(&mut self, other: Self);
}

/// An independent population of `n_trees` trees started from `ν₀`.
#[derive(Debug, Clone)]
pub struct ForestSpec<'a> {
    pub law: &'a InitialLaw,
    pub scheme: InitScheme,
    pub n_trees: usize,
    pub seed: u64,
}

/// Simulates every tree of the forest (tree `i` uses stream `i` of `seed`,
/// both for its initial configuration and its dynamics) and returns the
/// merged observer.
pub fn run_forest<O, F>(sim: &Simulator<'_>, spec: &ForestSpec<'_>, make: F) -> Result<O>
where
    O: ForestObserver,
    F: Fn() -> O + Sync,
{
    if spec.n_trees == 0 {
        return Err(Error::TooFewSamples { min: 1, got: 0 });
    }
    let chunks: Vec<(usize, usize)> =
        (0..spec.n_trees).step_by(CHUNK).map(|lo| (lo, (lo + CHUNK).min(spec.n_trees))).collect();
    let parts: Vec<Result<O>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut obs = make();
            for i in lo..hi {
                let mut rng = tree_rng(spec.seed, i as u64);
                let init = init_population(spec.law, spec.scheme, &mut rng)?;
                obs.begin_tree(i);
                sim.run(&init, &mut rng, &mut obs)?;
                obs.end_tree(i);
            }
            Ok(obs)
        })
        .collect();
    let mut iter = parts.into_iter();
    let mut acc = iter.next().expect("at least one chunk")?;
    for part in iter {
        acc.merge(part?);
    }
    Ok(acc)
}

impl<A: ForestObserver, B: ForestObserver> TreeObserver for (A, B) {
    fn snapshot(&mut self, step: usize, t: f64, particles: &[Particle]) -> Result<()> {
        self.0.snapshot(step, t, particles)?;
        self.1.snapshot(step, t, particles)
    }

    fn branch(&mut self, t: f64, parent: &Label, x: &[f64], offspring: usize) {
        self.0.branch(t, parent, x, offspring);
        self.1.branch(t, parent, x, offspring);
    }
}

impl<A: ForestObserver, B: ForestObserver> ForestObserver for (A, B) {
    fn begin_tree(&mut self, index: usize) {
        self.0.begin_tree(index);
        self.1.begin_tree(index);
    }

    fn end_tree(&mut self, index: usize) {
        self.0.end_tree(index);
        self.1.end_tree(index);
    }

    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        self.1.merge(other.1);
    }
}

/// Per-time tree-level moment statistics, plus per-tree path functionals
/// (supremum of the population count and of `Σ_k |X^k|²`, final count).
#[derive(Debug, Clone)]
pub struct MomentCollector {
    dim: usize,
    /// Per grid time: sums over trees of `q` and `q²` for
    /// `q ∈ (count, Σx_1..Σx_d, Σ|x|²)`.
    sums: Vec<Vec<f64>>,
    squares: Vec<Vec<f64>>,
    trees: usize,
    sup_count: Vec<f64>,
    sup_second: Vec<f64>,
    final_count: Vec<f64>,
    current_sup: (f64, f64),
    last_count: f64,
    scratch: Vec<f64>,
}

impl MomentCollector {
    pub fn new(dim: usize, grid: &TimeGrid) -> Self {
        let q = dim + 2;
        Self {
            dim,
            sums: vec![vec![0.0; q]; grid.len()],
            squares: vec![vec![0.0; q]; grid.len()],
            trees: 0,
            sup_count: Vec::new(),
            sup_second: Vec::new(),
            final_count: Vec::new(),
            current_sup: (0.0, 0.0),
            last_count: 0.0,
            scratch: vec![0.0; q],
        }
    }

    pub fn trees(&self) -> usize {
        self.trees
    }

    /// Mean and standard error of quantity `q` at grid index `j`
    /// (`q = 0` count, `1..=d` first moment, `d + 1` second moment).
    pub fn estimate(&self, j: usize, q: usize) -> MeanEstimate {
        let n = self.trees as f64;
        let mean = self.sums[j][q] / n;
        let var = if self.trees > 1 { ((self.squares[j][q] - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        MeanEstimate { mean, std_error: (var / n).sqrt(), n: self.trees }
    }

    pub fn mass(&self, j: usize) -> MeanEstimate {
        self.estimate(j, 0)
    }

    pub fn first(&self, j: usize, i: usize) -> MeanEstimate {
        self.estimate(j, 1 + i)
    }

    pub fn second(&self, j: usize) -> MeanEstimate {
        self.estimate(j, self.dim + 1)
    }

    /// Per-tree `sup_s #K_s`.
    pub fn sup_counts(&self) -> &[f64] {
        &self.sup_count
    }

    /// Per-tree `sup_s Σ_k |X^k_s|²`.
    pub fn sup_second_moments(&self) -> &[f64] {
        &self.sup_second
    }

    /// Per-tree terminal count.
    pub fn final_counts(&self) -> &[f64] {
        &self.final_count
    }

    /// Moment standard errors per grid time.
    pub fn moment_se(&self) -> Vec<MomentSe> {
        (0..self.sums.len())
            .map(|j| MomentSe {
                mass: self.mass(j).std_error,
                first: (0..self.dim).map(|i| self.first(j, i).std_error).collect(),
                second: self.second(j).std_error,
            })
            .collect()
    }
}

impl TreeObserver for MomentCollector {
    fn snapshot(&mut self, step: usize, _t: f64, particles: &[Particle]) -> Result<()> {
        let q = self.dim + 2;
        let buf = &mut self.scratch;
        buf.fill(0.0);
        buf[0] = particles.len() as f64;
        for p in particles {
            let mut sq = 0.0;
            for (i, xi) in p.x.iter().enumerate() {
                buf[1 + i] += xi;
                sq += xi * xi;
            }
            buf[q - 1] += sq;
        }
        for ((s, sq), &v) in self.sums[step].iter_mut().zip(self.squares[step].iter_mut()).zip(&buf[..q]) {
            *s += v;
            *sq += v * v;
        }
        self.current_sup.0 = self.current_sup.0.max(buf[0]);
        self.current_sup.1 = self.current_sup.1.max(buf[q - 1]);
        self.last_count = buf[0];
        Ok(())
    }
}

impl ForestObserver for MomentCollector {
    fn begin_tree(&mut self, _index: usize) {
        self.current_sup = (0.0, 0.0);
    }

    fn end_tree(&mut self, _index: usize) {
        self.trees += 1;
        self.sup_count.push(self.current_sup.0);
        self.sup_second.push(self.current_sup.1);
        self.final_count.push(self.last_count);
    }

    fn merge(&mut self, other: Self) {
        for (a, b) in self.sums.iter_mut().zip(other.sums) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.squares.iter_mut().zip(other.squares) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.trees += other.trees;
        self.sup_count.extend(other.sup_count);
        self.sup_second.extend(other.sup_second);
        self.final_count.extend(other.final_count);
    }
}

/// Collects all alive positions at every grid time (or at selected steps),
/// for building the empirical mean-measure flow.
#[derive(Debug, Clone)]
pub struct AtomCollector {
    dim: usize,
    positions: Vec<Vec<f64>>,
    keep: Option<Vec<bool>>,
    trees: usize,
}

impl AtomCollector {
    pub fn new(dim: usize, grid: &TimeGrid) -> Self {
        Self { dim, positions: vec![Vec::new(); grid.len()], keep: None, trees: 0 }
    }

    /// Keeps positions at the listed grid steps only.
    pub fn at_steps(dim: usize, grid: &TimeGrid, steps: &[usize]) -> Self {
        let mut keep = vec![false; grid.len()];
        for &s in steps {
            if s < keep.len() {
                keep[s] = true;
            }
        }
        Self { dim, positions: vec![Vec::new(); grid.len()], keep: Some(keep), trees: 0 }
    }

    /// Empirical mean measure at grid step `step`, weight `1/N` per atom.
    pub fn measure(&self, step: usize) -> Result<FiniteMeasure> {
        if self.keep.as_ref().is_some_and(|k| !k.get(step).copied().unwrap_or(false)) {
            return Err(Error::InvalidParameter(format!("step {step} was not collected")));
        }
        let p = self.positions.get(step).ok_or_else(|| Error::InvalidParameter(format!("step {step} beyond the grid")))?;
        let w = 1.0 / self.trees.max(1) as f64;
        FiniteMeasure::from_flat(self.dim, p.clone(), vec![w; p.len() / self.dim])
    }

    /// Empirical flow with weight `1/N` per atom.
    pub fn into_flow(self, grid: TimeGrid, moment_se: Option<Vec<MomentSe>>) -> Result<MeasureFlow> {
        let w = 1.0 / self.trees as f64;
        let measures = self
            .positions
            .into_iter()
            .map(|p| {
                let n = p.len() / self.dim;
                FiniteMeasure::from_flat(self.dim, p, vec![w; n])
            })
            .collect::<Result<Vec<_>>>()?;
        let flow = MeasureFlow::new(grid, measures, FlowProvenance::Supplied)?;
        match moment_se {
            Some(se) => flow.with_moment_se(se),
            None => Ok(flow),
        }
    }
}

impl TreeObserver for AtomCollector {
    fn snapshot(&mut self, step: usize, _t: f64, particles: &[Particle]) -> Result<()> {
        if self.keep.as_ref().is_some_and(|k| !k[step]) {
            return Ok(());
        }
        let buf = &mut self.positions[step];
        for p in particles {
            buf.extend_from_slice(&p.x);
        }
        Ok(())
    }
}

impl ForestObserver for AtomCollector {
    fn end_tree(&mut self, _index: usize) {
        self.trees += 1;
    }

    fn merge(&mut self, other: Self) {
        for (a, b) in self.positions.iter_mut().zip(other.positions) {
            a.extend(b);
        }
        self.trees += other.trees;
    }
}

/// Simulates a forest and returns its empirical mean-measure flow with moment
/// standard errors, along with the moment statistics.
pub fn simulate_flow(sim: &Simulator<'_>, spec: &ForestSpec<'_>) -> Result<(MeasureFlow, MomentCollector)> {
    let grid = *sim.grid();
    let d = sim.model().dim;
    let (atoms, moments) =
        run_forest(sim, spec, || (AtomCollector::new(d, &grid), MomentCollector::new(d, &grid)))?;
    let flow = atoms.into_flow(grid, Some(moments.moment_se()))?;
    Ok((flow, moments))
}

/// Empirical mean measure at the final grid time, with the moment
/// statistics of the forest.
pub fn simulate_terminal(sim: &Simulator<'_>, spec: &ForestSpec<'_>) -> Result<(FiniteMeasure, MomentCollector)> {
    let grid = *sim.grid();
    let d = sim.model().dim;
    let last = grid.steps();
    let (atoms, moments) =
        run_forest(sim, spec, || (AtomCollector::at_steps(d, &grid, &[last]), MomentCollector::new(d, &grid)))?;
    Ok((atoms.measure(last)?, moments))
}

/// Moment statistics only (no atoms kept).
pub fn simulate_moments(sim: &Simulator<'_>, spec: &ForestSpec<'_>) -> Result<MomentCollector> {
    let grid = *sim.grid();
    run_forest(sim, spec, || MomentCollector::new(sim.model().dim, &grid))
}
