use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{sample_offspring, ClosedLoopControl, ModelCoefficients};
use crate::error::{Error, Result};
use crate::meanfield::MeasureFlow;
use crate::measures::{Configuration, FiniteMeasure, Label};
use crate::output::write_hash_line;
use crate::stats::fmt_f64;
use crate::time::TimeGrid;

/// An alive particle.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub label: Label,
    pub x: Vec<f64>,
}

/// Callbacks from a running tree simulation.
pub trait TreeObserver {
    /// Alive particles at grid index `step` (called for `0..=steps`).
    fn snapshot(&mut self, step: usize, t: f64, particles: &[Particle]) -> Result<()>;

    /// A branching event: `parent` died at `t` (end of its step) at position
    /// `x`, leaving `offspring` children.
    fn branch(&mut self, _t: f64, _parent: &Label, _x: &[f64], _offspring: usize) {}
}

/// Steps trees against a frozen flow on a fixed grid.
pub struct Simulator<'a> {
    model: &'a ModelCoefficients,
    control: &'a ClosedLoopControl,
    measures: Vec<&'a FiniteMeasure>,
    grid: TimeGrid,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a ModelCoefficients,
        control: &'a ClosedLoopControl,
        flow: &'a MeasureFlow,
        grid: TimeGrid,
    ) -> Result<Self> {
        if flow.dim() != model.dim {
            return Err(Error::DimensionMismatch { expected: model.dim, got: flow.dim() });
        }
        if control.dim() != model.control_dim {
            return Err(Error::DimensionMismatch { expected: model.control_dim, got: control.dim() });
        }
        let measures = flow.indices_for(&grid)?.into_iter().map(|i| flow.at(i)).collect();
        Ok(Self { model, control, measures, grid })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn model(&self) -> &ModelCoefficients {
        self.model
    }

    pub fn control(&self) -> &ClosedLoopControl {
        self.control
    }

    /// Frozen measure at grid index `j`.
    pub fn measure(&self, j: usize) -> &FiniteMeasure {
        self.measures[j]
    }

    /// Runs one tree from `init`, drawing all randomness from `rng`.
    pub fn run<R: Rng + ?Sized, O: TreeObserver + ?Sized>(&self, init: &Configuration, rng: &mut R, obs: &mut O) -> Result<()> {
        let d = self.model.dim;
        if init.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: init.dim() });
        }
        let dt = self.grid.dt();
        let sqdt = dt.sqrt();
        let gamma_bar = self.model.gamma_bar;
        let candidate = -(-gamma_bar * dt).exp_m1();
        let exact_rate = self.model.constant_rate == Some(gamma_bar);
        let mut particles: Vec<Particle> =
            init.particles().iter().map(|(label, x)| Particle { label: label.clone(), x: x.clone() }).collect();
        let mut next: Vec<Particle> = Vec::with_capacity(particles.len());
        let mut a = vec![0.0; self.model.control_dim];
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * d];
        let mut z = vec![0.0; d];
        let mut x_old = vec![0.0; d];
        let mut p = vec![0.0; self.model.progeny.max_offspring() + 1];

        obs.snapshot(0, self.grid.time(0), &particles)?;
        for j in 0..self.grid.steps() {
            let t = self.grid.time(j);
            let t_next = self.grid.time(j + 1);
            let mu = self.measures[j];
            next.clear();
            for mut part in particles.drain(..) {
                x_old.copy_from_slice(&part.x);
                self.control.apply(t, &x_old, &mut a);
                (self.model.drift)(t, &x_old, mu, &a, &mut b);
                (self.model.diffusion)(t, &x_old, mu, &a, &mut s);
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                for i in 0..d {
                    let noise: f64 = (0..d).map(|k| s[i * d + k] * z[k]).sum();
                    part.x[i] = x_old[i] + b[i] * dt + noise * sqdt;
                }
                if part.x.iter().any(|v| !v.is_finite()) || a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "particle {} at t = {t}: state {:?}, control {a:?}, drift {b:?}",
                        part.label, part.x
                    )));
                }
                if rng.random::<f64>() < candidate {
                    let accept = if exact_rate {
                        true
                    } else {
                        let g = self.model.rate(t, &x_old, mu, &a)?;
                        rng.random::<f64>() * gamma_bar < g
                    };
                    if accept {
                        self.model.progeny.evaluate(t, &x_old, mu, &a, &mut p)?;
                        let l = sample_offspring(rng.random::<f64>(), &p);
                        obs.branch(t_next, &part.label, &part.x, l);
                        for i in 1..=l {
                            next.push(Particle { label: part.label.child(i as u32), x: part.x.clone() });
                        }
                        continue;
                    }
                }
                next.push(part);
            }
            std::mem::swap(&mut particles, &mut next);
            obs.snapshot(j + 1, t_next, &particles)?;
        }
        Ok(())
    }
}

/// A branching event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchEvent {
    pub time: f64,
    pub parent: Label,
    pub offspring: usize,
    pub position: Vec<f64>,
}

/// Full record of one simulated tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeTrajectory {
    pub grid: TimeGrid,
    pub snapshots: Vec<Configuration>,
    pub events: Vec<BranchEvent>,
}

impl TreeTrajectory {
    pub fn count_at(&self, j: usize) -> usize {
        self.snapshots[j].len()
    }

    /// Checks genealogy consistency: children extend their parent by one
    /// index, a label is alive exactly between its birth and its death.
    pub fn check_labels(&self) -> Result<()> {
        use std::collections::HashMap;
        let mut death: HashMap<&Label, usize> = HashMap::new();
        for e in &self.events {
            let k = self.grid.index_of(e.time)?;
            if k == 0 || !self.snapshots[k - 1].labels().any(|l| l == &e.parent) {
                return Err(Error::InvalidConfiguration(format!("parent {} not alive before t = {}", e.parent, e.time)));
            }
            for i in 1..=e.offspring {
                let child = e.parent.child(i as u32);
                if !self.snapshots[k].labels().any(|l| l == &child) {
                    return Err(Error::InvalidConfiguration(format!("child {child} missing at its birth t = {}", e.time)));
                }
            }
            death.insert(&e.parent, k);
        }
        for (j, snap) in self.snapshots.iter().enumerate() {
            for l in snap.labels() {
                if death.get(l).is_some_and(|&k| k <= j) {
                    return Err(Error::InvalidConfiguration(format!("label {l} alive after its death, t = {}", self.grid.time(j))));
                }
                if let Some(parent) = l.parent() {
                    let born = death.get(&parent).is_some_and(|&k| k <= j);
                    if !born && !self.snapshots[0].labels().any(|r| r == l) {
                        return Err(Error::InvalidConfiguration(format!("label {l} alive without a birth event")));
                    }
                }
            }
        }
        Ok(())
    }

    /// JSON event log: grid plus the list of events.
    pub fn write_event_log<W: Write>(&self, out: W, hash: Option<&str>) -> Result<()> {
        let value = serde_json::json!({
            "config_hash": hash,
            "grid": { "t0": self.grid.t0(), "T": self.grid.horizon(), "dt": self.grid.dt() },
            "events": self.events,
        });
        serde_json::to_writer_pretty(out, &value)?;
        Ok(())
    }

    /// Snapshot CSV: `t,label,x_1..x_d`, labels written dot-separated.
    pub fn write_snapshots_csv<W: Write>(&self, mut out: W, hash: Option<&str>) -> Result<()> {
        write_hash_line(&mut out, hash)?;
        let mut wtr = csv::Writer::from_writer(out);
        let d = self.snapshots.first().map_or(1, |s| s.dim());
        let mut header = vec!["t".to_string(), "label".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        wtr.write_record(&header)?;
        for (j, snap) in self.snapshots.iter().enumerate() {
            let t = fmt_f64(self.grid.time(j));
            for (label, x) in snap.particles() {
                let mut row = vec![t.clone(), label.to_string()];
                row.extend(x.iter().map(|v| fmt_f64(*v)));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Observer building a [`TreeTrajectory`].
#[derive(Debug)]
pub struct TrajectoryRecorder {
    dim: usize,
    grid: TimeGrid,
    snapshots: Vec<Configuration>,
    events: Vec<BranchEvent>,
}

impl TrajectoryRecorder {
    pub fn new(dim: usize, grid: TimeGrid) -> Self {
        Self { dim, grid, snapshots: Vec::with_capacity(grid.len()), events: Vec::new() }
    }

    pub fn finish(self) -> TreeTrajectory {
        TreeTrajectory { grid: self.grid, snapshots: self.snapshots, events: self.events }
    }
}

impl TreeObserver for TrajectoryRecorder {
    fn snapshot(&mut self, _step: usize, _t: f64, particles: &[Particle]) -> Result<()> {
        let cfg = Configuration::new(self.dim, particles.iter().map(|p| (p.label.clone(), p.x.clone())).collect())?;
        self.snapshots.push(cfg);
        Ok(())
    }

    fn branch(&mut self, t: f64, parent: &Label, x: &[f64], offspring: usize) {
        self.events.push(BranchEvent { time: t, parent: parent.clone(), offspring, position: x.to_vec() });
    }
}

/// Simulates one tree with its own seeded stream.
pub fn simulate_tree(
    model: &ModelCoefficients,
    control: &ClosedLoopControl,
    flow: &MeasureFlow,
    init: &Configuration,
    grid: TimeGrid,
    seed: u64,
) -> Result<TreeTrajectory> {
    let sim = Simulator::new(model, control, flow, grid)?;
    let mut rng = super::tree_rng(seed, 0);
    let mut rec = TrajectoryRecorder::new(model.dim, grid);
    sim.run(init, &mut rng, &mut rec)?;
    Ok(rec.finish())
}

/// Mean measure estimate at grid time `t`: every alive particle of every
/// tree with weight `1/N`.
pub fn empirical_measure(trees: &[TreeTrajectory], t: f64) -> Result<FiniteMeasure> {
    let first = trees.first().ok_or_else(|| Error::InvalidParameter("no trees".into()))?;
    let dim = first.snapshots.first().map_or(1, |s| s.dim());
    let w = 1.0 / trees.len() as f64;
    let mut positions = Vec::new();
    let mut weights = Vec::new();
    for tree in trees {
        let j = tree.grid.index_of(t)?;
        for (_, x) in tree.snapshots[j].particles() {
            positions.extend_from_slice(x);
            weights.push(w);
        }
    }
    FiniteMeasure::from_flat(dim, positions, weights)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::engine::{
        simulate_moments, ForestSpec, InitScheme, InitialLaw, ProgenyLaw, VectorCoefficient,
    };
    use crate::stats::MeanEstimate;

    fn zero() -> VectorCoefficient {
        Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0))
    }

    fn model(drift: VectorCoefficient, sigma: f64, gamma: f64, p: Vec<f64>) -> ModelCoefficients {
        let diffusion: VectorCoefficient = Arc::new(move |_, _, _, _, out: &mut [f64]| out[0] = sigma);
        ModelCoefficients::with_constant_rate(1, 1, drift, diffusion, gamma, ProgenyLaw::constant(p).unwrap()).unwrap()
    }

    fn dummy_flow(grid: TimeGrid) -> MeasureFlow {
        MeasureFlow::constant(grid, FiniteMeasure::empty(1))
    }

    fn roots(xs: &[f64]) -> Configuration {
        Configuration::new(1, xs.iter().enumerate().map(|(i, &x)| (Label::root(i as u32 + 1), vec![x])).collect()).unwrap()
    }

    #[test]
    fn single_child_branching_freezes_count_and_positions() {
        let m = model(zero(), 0.0, 3.0, vec![0.0, 1.0]);
        let grid = TimeGrid::new(0.0, 1.0, 0.01).unwrap();
        let init = roots(&[0.5, -1.0, 2.0]);
        let tr = simulate_tree(&m, &ClosedLoopControl::zero(1), &dummy_flow(grid), &init, grid, 5).unwrap();
        assert!(!tr.events.is_empty());
        for snap in &tr.snapshots {
            let mut xs: Vec<f64> = snap.particles().iter().map(|p| p.1[0]).collect();
            xs.sort_by(f64::total_cmp);
            assert_eq!(xs, vec![-1.0, 0.5, 2.0]);
        }
        tr.check_labels().unwrap();
    }

    #[test]
    fn pure_death_survival_probability() {
        let m = model(zero(), 0.0, 1.0, vec![1.0]);
        let grid = TimeGrid::new(0.0, 1.0, 0.01).unwrap();
        let flow = dummy_flow(grid);
        let control = ClosedLoopControl::zero(1);
        let sim = Simulator::new(&m, &control, &flow, grid).unwrap();
        let law = InitialLaw::atomic(FiniteMeasure::dirac(vec![0.0], 1.0).unwrap()).unwrap();
        let spec = ForestSpec { law: &law, scheme: InitScheme::DeterministicRounding, n_trees: 100_000, seed: 3 };
        let stats = simulate_moments(&sim, &spec).unwrap();
        let est = MeanEstimate::from_samples(stats.final_counts());
        assert!(est.within((-1.0f64).exp(), 3.0), "{est:?}");
    }

    #[test]
    fn critical_branching_keeps_mean_count() {
        let m = model(zero(), 1.0, 2.0, vec![0.5, 0.0, 0.5]);
        let grid = TimeGrid::new(0.0, 1.0, 0.01).unwrap();
        let flow = dummy_flow(grid);
        let control = ClosedLoopControl::zero(1);
        let sim = Simulator::new(&m, &control, &flow, grid).unwrap();
        let law = InitialLaw::gaussian(5.0, 0.0, 1.0).unwrap();
        let spec = ForestSpec { law: &law, scheme: InitScheme::DeterministicRounding, n_trees: 100_000, seed: 9 };
        let stats = simulate_moments(&sim, &spec).unwrap();
        let est = MeanEstimate::from_samples(stats.final_counts());
        assert!(est.within(5.0, 3.0), "{est:?}");
        let j = grid.steps();
        assert_eq!(stats.mass(j).mean, est.mean);
    }

    #[test]
    fn trajectories_are_reproducible_and_consistent() {
        let drift: VectorCoefficient = Arc::new(|_, x: &[f64], _, _, out: &mut [f64]| out[0] = -x[0]);
        let m = model(drift, 0.7, 1.5, vec![0.3, 0.2, 0.3, 0.2]);
        let grid = TimeGrid::new(0.0, 1.0, 0.02).unwrap();
        let init = roots(&[0.0, 1.0]);
        let c = ClosedLoopControl::zero(1);
        let a = simulate_tree(&m, &c, &dummy_flow(grid), &init, grid, 42).unwrap();
        let b = simulate_tree(&m, &c, &dummy_flow(grid), &init, grid, 42).unwrap();
        assert_eq!(a, b);
        a.check_labels().unwrap();
        for e in &a.events {
            let k = grid.index_of(e.time).unwrap();
            for (label, x) in a.snapshots[k].particles() {
                if label.parent().as_ref() == Some(&e.parent) {
                    assert_eq!(x, &e.position);
                }
            }
        }
    }

    #[test]
    fn uncovered_grid_rejected() {
        let m = model(zero(), 0.0, 1.0, vec![1.0]);
        let flow = dummy_flow(TimeGrid::new(0.0, 0.5, 0.1).unwrap());
        let grid = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        let r = simulate_tree(&m, &ClosedLoopControl::zero(1), &flow, &roots(&[0.0]), grid, 1);
        assert!(matches!(r, Err(Error::FlowCoverage(_))));
    }

    #[test]
    fn nan_drift_aborts_with_particle_name() {
        let drift: VectorCoefficient = Arc::new(|t, _, _, _, out: &mut [f64]| out[0] = if t > 0.3 { f64::NAN } else { 0.0 });
        let m = model(drift, 0.0, 1.0, vec![0.0, 1.0]);
        let grid = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        let err = simulate_tree(&m, &ClosedLoopControl::zero(1), &dummy_flow(grid), &roots(&[0.0]), grid, 1).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::NonFinite(_)) && msg.contains("particle 1") && msg.contains("t = 0.3"), "{msg}");
    }

    #[test]
    fn empirical_measure_examples() {
        let grid = TimeGrid::new(0.0, 1.0, 1.0).unwrap();
        let tree = |xs: &[f64]| TreeTrajectory { grid, snapshots: vec![roots(xs), roots(xs)], events: vec![] };
        let mu = empirical_measure(&[tree(&[0.0, 1.0, 2.0])], 1.0).unwrap();
        assert_eq!(mu, FiniteMeasure::from_points(&[0.0, 1.0, 2.0], &[1.0; 3]).unwrap());
        let mu = empirical_measure(&[tree(&[0.0]), tree(&[4.0])], 0.0).unwrap();
        assert_eq!(mu, FiniteMeasure::from_points(&[0.0, 4.0], &[0.5, 0.5]).unwrap());
        assert!(matches!(empirical_measure(&[tree(&[0.0])], 0.5), Err(Error::OffGrid(_))));
    }
}
