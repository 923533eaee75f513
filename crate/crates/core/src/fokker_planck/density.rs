use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::InitialLaw;
use crate::error::{Error, Result};
use crate::measures::FiniteMeasure;
use crate::output::write_hash_line;
use crate::stats::{fmt_f64, CompensatedSum};
use crate::time::TimeGrid;

/// Uniform cell partition of `[lo, hi]`; values live at cell centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    lo: f64,
    hi: f64,
    cells: usize,
}

impl SpaceGrid {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) || cells < 3 {
            return Err(Error::InvalidGrid(format!("space grid [{lo}, {hi}] with {cells} cells")));
        }
        Ok(Self { lo, hi, cells })
    }

    /// Grid with spacing `dx`, which must divide `hi - lo`.
    pub fn with_spacing(lo: f64, hi: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing {dx} must be positive")));
        }
        let n = (hi - lo) / dx;
        let cells = n.round();
        if (n - cells).abs() > 1e-6 {
            return Err(Error::InvalidGrid(format!("spacing {dx} does not divide [{lo}, {hi}]")));
        }
        Self::new(lo, hi, cells as usize)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn center(&self, j: usize) -> f64 {
        self.lo + (j as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|j| self.center(j)).collect()
    }

    /// Index of the cell containing `x`, if inside the domain.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if x < self.lo || x > self.hi {
            return None;
        }
        Some((((x - self.lo) / self.dx()).floor() as usize).min(self.cells - 1))
    }

    /// `Σ ρ_j Δx`.
    pub fn mass(&self, rho: &[f64]) -> f64 {
        let mut s = CompensatedSum::new();
        rho.iter().for_each(|r| s.add(*r));
        s.value() * self.dx()
    }

    /// Cell averages of `f` by Simpson's rule.
    pub fn cell_averages<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        let h = self.dx();
        (0..self.cells)
            .map(|j| {
                let a = self.lo + j as f64 * h;
                (f(a) + 4.0 * f(a + 0.5 * h) + f(a + h)) / 6.0
            })
            .collect()
    }

    /// Cell-averaged density of a one-dimensional initial law. Atoms are
    /// spread over the cell that contains them.
    pub fn project_law(&self, law: &InitialLaw) -> Result<Vec<f64>> {
        if law.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: law.dim() });
        }
        match law {
            InitialLaw::Gaussian { mass, mean, sd } => {
                if !(*sd > 0.0) {
                    return self.project_atoms(&FiniteMeasure::dirac(vec![*mean], *mass)?);
                }
                let c = mass / (sd * (2.0 * std::f64::consts::PI).sqrt());
                Ok(self.cell_averages(|x| c * (-0.5 * ((x - mean) / sd).powi(2)).exp()))
            }
            InitialLaw::Uniform { mass, lo, hi } => {
                let h = self.dx();
                let c = mass / (hi - lo);
                Ok((0..self.cells)
                    .map(|j| {
                        let a = self.lo + j as f64 * h;
                        let overlap = ((a + h).min(*hi) - a.max(*lo)).max(0.0);
                        c * overlap / h
                    })
                    .collect())
            }
            InitialLaw::Atomic { measure, .. } => self.project_atoms(measure),
        }
    }

    fn project_atoms(&self, mu: &FiniteMeasure) -> Result<Vec<f64>> {
        let mut rho = vec![0.0; self.cells];
        let h = self.dx();
        for (x, w) in mu.iter() {
            let j = self
                .cell_of(x[0])
                .ok_or_else(|| Error::OutOfRange(format!("atom at {} outside [{}, {}]", x[0], self.lo, self.hi)))?;
            rho[j] += w / h;
        }
        Ok(rho)
    }

    /// Cell masses as atoms at the cell centres.
    pub fn to_measure(&self, rho: &[f64]) -> Result<FiniteMeasure> {
        let h = self.dx();
        FiniteMeasure::from_flat(1, self.centers(), rho.iter().map(|r| (r * h).max(0.0)).collect())
    }
}

/// Condition imposed at both ends of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// No mass crosses the boundary.
    #[default]
    ZeroFlux,
    /// The density vanishes outside the domain; mass may leave.
    ZeroValue,
}

/// Density history on a space-time grid.
#[derive(Debug, Clone)]
pub struct DensityFlow {
    pub(crate) space: SpaceGrid,
    pub(crate) grid: TimeGrid,
    pub(crate) boundary: Boundary,
    pub(crate) densities: Vec<Vec<f64>>,
    pub(crate) masses: Vec<f64>,
    pub(crate) source: Vec<f64>,
    pub(crate) min_before_clip: f64,
}

impl DensityFlow {
    pub fn space(&self) -> &SpaceGrid {
        &self.space
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn density(&self, j: usize) -> &[f64] {
        &self.densities[j]
    }

    pub fn densities(&self) -> &[Vec<f64>] {
        &self.densities
    }

    pub fn final_density(&self) -> &[f64] {
        self.densities.last().expect("non-empty history")
    }

    /// Total mass at each grid time.
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// `⟨π(t_j), ρ_j⟩` at each grid time.
    pub fn source_trace(&self) -> &[f64] {
        &self.source
    }

    /// Most negative value produced before clipping (0 if none).
    pub fn min_before_clip(&self) -> f64 {
        self.min_before_clip
    }

    pub fn measure(&self, j: usize) -> Result<FiniteMeasure> {
        self.space.to_measure(&self.densities[j])
    }

    pub fn measure_at(&self, t: f64) -> Result<FiniteMeasure> {
        self.measure(self.grid.index_of(t)?)
    }

    /// Largest relative defect of the discrete mass balance
    /// `m_{j+1} - m_j = Δt (⟨π, ρ_j⟩ + ⟨π, ρ_{j+1}⟩) / 2`, in units of `Δt`.
    pub fn mass_balance_defect(&self) -> f64 {
        let dt = self.grid.dt();
        (0..self.grid.steps())
            .map(|j| {
                let lhs = (self.masses[j + 1] - self.masses[j]) / dt;
                let rhs = 0.5 * (self.source[j] + self.source[j + 1]);
                (lhs - rhs).abs() / self.masses[j].abs().max(1e-300)
            })
            .fold(0.0, f64::max)
    }

    /// Mass held in the outermost cell at each end at grid index `j`.
    pub fn boundary_mass(&self, j: usize) -> f64 {
        let rho = &self.densities[j];
        (rho[0] + rho[rho.len() - 1]) * self.space.dx()
    }

    /// CSV `t,x,rho`.
    pub fn write_csv<W: Write>(&self, mut out: W, hash: Option<&str>) -> Result<()> {
        write_hash_line(&mut out, hash)?;
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["t", "x", "rho"])?;
        let xs = self.space.centers();
        for (j, rho) in self.densities.iter().enumerate() {
            let t = fmt_f64(self.grid.time(j));
            for (x, r) in xs.iter().zip(rho) {
                wtr.write_record([t.as_str(), &fmt_f64(*x), &fmt_f64(*r)])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// CSV `t,mass,source`.
    pub fn write_mass_csv<W: Write>(&self, mut out: W, hash: Option<&str>) -> Result<()> {
        write_hash_line(&mut out, hash)?;
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["t", "mass", "source"])?;
        for j in 0..self.grid.len() {
            wtr.write_record([fmt_f64(self.grid.time(j)), fmt_f64(self.masses[j]), fmt_f64(self.source[j])])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
