use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::FiniteMeasure;
use crate::output::write_hash_line;
use crate::stats::fmt_f64;
use crate::time::TimeGrid;

/// How a flow was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowProvenance {
    Picard { iterations: usize, residuals: Vec<f64> },
    MomentOde,
    FdSolver,
    Supplied,
}

/// Standard errors of the moments of a Monte Carlo flow at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSe {
    pub mass: f64,
    pub first: Vec<f64>,
    pub second: f64,
}

/// Time-gridded deterministic flow `t ↦ μ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    grid: TimeGrid,
    measures: Vec<FiniteMeasure>,
    moment_se: Option<Vec<MomentSe>>,
    provenance: FlowProvenance,
}

impl MeasureFlow {
    pub fn new(grid: TimeGrid, measures: Vec<FiniteMeasure>, provenance: FlowProvenance) -> Result<Self> {
        if measures.len() != grid.len() {
            return Err(Error::FlowCoverage(format!("{} measures for {} grid times", measures.len(), grid.len())));
        }
        let dim = measures[0].dim();
        for (j, mu) in measures.iter().enumerate() {
            if mu.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: mu.dim() });
            }
            if !mu.mass().is_finite() {
                return Err(Error::NonFinite(format!("mass at grid time {}", grid.time(j))));
            }
        }
        Ok(Self { grid, measures, moment_se: None, provenance })
    }

    /// The same measure at every grid time.
    pub fn constant(grid: TimeGrid, mu: FiniteMeasure) -> Self {
        Self { grid, measures: vec![mu; grid.len()], moment_se: None, provenance: FlowProvenance::Supplied }
    }

    /// One-dimensional flow of two-atom measures matching `(mass, m1, m2)` per time.
    pub fn from_moments_1d(grid: TimeGrid, moments: &[(f64, f64, f64)], provenance: FlowProvenance) -> Result<Self> {
        let measures = moments
            .iter()
            .map(|&(m, m1, m2)| FiniteMeasure::from_moments_1d(m, m1, m2))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, measures, provenance)
    }

    pub fn with_moment_se(mut self, se: Vec<MomentSe>) -> Result<Self> {
        if se.len() != self.measures.len() {
            return Err(Error::FlowCoverage(format!("{} standard errors for {} grid times", se.len(), self.measures.len())));
        }
        self.moment_se = Some(se);
        Ok(self)
    }

    pub fn with_provenance(mut self, provenance: FlowProvenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }

    pub fn measures(&self) -> &[FiniteMeasure] {
        &self.measures
    }

    pub fn at(&self, j: usize) -> &FiniteMeasure {
        &self.measures[j]
    }

    pub fn at_time(&self, t: f64) -> Result<&FiniteMeasure> {
        Ok(&self.measures[self.grid.index_of(t)?])
    }

    pub fn moment_se(&self) -> Option<&[MomentSe]> {
        self.moment_se.as_deref()
    }

    pub fn provenance(&self) -> &FlowProvenance {
        &self.provenance
    }

    pub fn masses(&self) -> Vec<f64> {
        self.measures.iter().map(|m| m.mass()).collect()
    }

    /// For each time of `grid`, the index of the same time in this flow.
    pub fn indices_for(&self, grid: &TimeGrid) -> Result<Vec<usize>> {
        (0..grid.len())
            .map(|j| {
                let t = grid.time(j);
                self.grid.index_of(t).map_err(|_| Error::FlowCoverage(format!("no measure at t = {t}")))
            })
            .collect()
    }

    /// The part of the flow from grid index `j` onward.
    pub fn tail_from(&self, j: usize) -> Result<Self> {
        let grid = self.grid.tail_from(j)?;
        let measures = self.measures[j..].to_vec();
        let moment_se = self.moment_se.as_ref().map(|se| se[j..].to_vec());
        Ok(Self { grid, measures, moment_se, provenance: self.provenance.clone() })
    }

    /// CSV with one row per `(t, atom)`: `t,atom,x_1..x_d,weight`.
    pub fn write_atoms_csv<W: Write>(&self, mut out: W, hash: Option<&str>) -> Result<()> {
        write_hash_line(&mut out, hash)?;
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "atom".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x_{i}")));
        header.push("weight".into());
        wtr.write_record(&header)?;
        for (j, mu) in self.measures.iter().enumerate() {
            let t = fmt_f64(self.grid.time(j));
            for (i, (x, w)) in mu.iter().enumerate() {
                let mut row = vec![t.clone(), i.to_string()];
                row.extend(x.iter().map(|v| fmt_f64(*v)));
                row.push(fmt_f64(w));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Moments summary CSV: `t,mass,m1_1..m1_d,m2` plus `_se` columns when
    /// standard errors are known.
    pub fn write_moments_csv<W: Write>(&self, mut out: W, hash: Option<&str>) -> Result<()> {
        write_hash_line(&mut out, hash)?;
        let mut wtr = csv::Writer::from_writer(out);
        let d = self.dim();
        let first_names: Vec<String> = if d == 1 { vec!["m1".into()] } else { (1..=d).map(|i| format!("m1_{i}")).collect() };
        let mut header = vec!["t".to_string(), "mass".to_string()];
        header.extend(first_names.iter().cloned());
        header.push("m2".into());
        if self.moment_se.is_some() {
            header.push("mass_se".into());
            header.extend(first_names.iter().map(|n| format!("{n}_se")));
            header.push("m2_se".into());
        }
        wtr.write_record(&header)?;
        for (j, mu) in self.measures.iter().enumerate() {
            let mut row = vec![fmt_f64(self.grid.time(j)), fmt_f64(mu.mass())];
            row.extend(mu.first_moment().iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(mu.second_moment()));
            if let Some(se) = &self.moment_se {
                row.push(fmt_f64(se[j].mass));
                row.extend(se[j].first.iter().map(|v| fmt_f64(*v)));
                row.push(fmt_f64(se[j].second));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
