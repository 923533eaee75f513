//! Uniform time grids and scalar functions of time.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t0 < t0 + dt < ... < T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    /// `dt` must divide `T - t0` up to a relative tolerance of 1e-9.
    pub fn new(t0: f64, horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if !(horizon >= t0) || !t0.is_finite() || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!("need t0 <= T, got [{t0}, {horizon}]")));
        }
        let ratio = (horizon - t0) / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidGrid(format!("dt = {dt} does not divide [{t0}, {horizon}]")));
        }
        Ok(Self { t0, horizon, steps: steps as usize })
    }

    pub fn with_steps(t0: f64, horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 && horizon != t0 {
            return Err(Error::InvalidGrid("zero steps on a non-degenerate interval".into()));
        }
        if !(horizon >= t0) {
            return Err(Error::InvalidGrid(format!("need t0 <= T, got [{t0}, {horizon}]")));
        }
        Ok(Self { t0, horizon, steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid points (`steps + 1`).
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            (self.horizon - self.t0) / self.steps as f64
        }
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            self.t0 + j as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.time(j)).collect()
    }

    /// Index of a grid time, tolerating rounding of order 1e-9·dt.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if self.steps == 0 {
            return if (t - self.t0).abs() <= 1e-12 * (1.0 + t.abs()) { Ok(0) } else { Err(Error::OffGrid(t)) };
        }
        let x = (t - self.t0) / self.dt();
        let j = x.round();
        if j < 0.0 || j > self.steps as f64 || (x - j).abs() > 1e-6 {
            return Err(Error::OffGrid(t));
        }
        Ok(j as usize)
    }

    /// The sub-grid starting at grid index `j`.
    pub fn tail_from(&self, j: usize) -> Result<Self> {
        if j > self.steps {
            return Err(Error::InvalidGrid(format!("index {j} beyond {} steps", self.steps)));
        }
        Ok(Self { t0: self.time(j), horizon: self.horizon, steps: self.steps - j })
    }

    /// The sub-grid ending at grid index `j`.
    pub fn head_to(&self, j: usize) -> Result<Self> {
        if j > self.steps {
            return Err(Error::InvalidGrid(format!("index {j} beyond {} steps", self.steps)));
        }
        Ok(Self { t0: self.t0, horizon: self.time(j), steps: j })
    }
}

/// A real function of time: constant, tabulated with piecewise-cubic
/// interpolation, or an arbitrary closure.
#[derive(Clone)]
pub enum TimeFn {
    Constant(f64),
    Table(CubicTable),
    Closure(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl TimeFn {
    pub fn constant(v: f64) -> Self {
        TimeFn::Constant(v)
    }

    pub fn closure<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        TimeFn::Closure(Arc::new(f))
    }

    pub fn table(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Ok(TimeFn::Table(CubicTable::new(times, values)?))
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFn::Constant(v) => *v,
            TimeFn::Table(tab) => tab.eval(t),
            TimeFn::Closure(f) => f(t),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            TimeFn::Constant(v) => Some(*v),
            _ => None,
        }
    }
}

impl Default for TimeFn {
    fn default() -> Self {
        TimeFn::Constant(0.0)
    }
}

impl From<f64> for TimeFn {
    fn from(v: f64) -> Self {
        TimeFn::Constant(v)
    }
}

impl fmt::Debug for TimeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeFn::Constant(v) => write!(f, "Constant({v})"),
            TimeFn::Table(t) => write!(f, "Table({} knots)", t.times.len()),
            TimeFn::Closure(_) => write!(f, "Closure"),
        }
    }
}

/// Serialized form of a [`TimeFn`]: a number or a table `{"t": [...], "v": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeFnSpec {
    Constant(f64),
    Table { t: Vec<f64>, v: Vec<f64> },
}

impl TimeFnSpec {
    pub fn build(&self) -> Result<TimeFn> {
        match self {
            TimeFnSpec::Constant(v) if v.is_finite() => Ok(TimeFn::Constant(*v)),
            TimeFnSpec::Constant(v) => Err(Error::NonFinite(format!("constant {v}"))),
            TimeFnSpec::Table { t, v } => TimeFn::table(t.clone(), v.clone()),
        }
    }
}

impl From<f64> for TimeFnSpec {
    fn from(v: f64) -> Self {
        TimeFnSpec::Constant(v)
    }
}

/// Piecewise-cubic Hermite interpolant with Catmull-Rom slopes (one-sided at
/// the ends). Constant extrapolation outside the knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicTable {
    times: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl CubicTable {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "table needs matching non-empty knots, got {} times and {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("table times must be strictly increasing".into()));
        }
        if values.iter().chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("table entry".into()));
        }
        let n = times.len();
        let slopes = (0..n)
            .map(|i| {
                if n == 1 {
                    0.0
                } else if i == 0 {
                    (values[1] - values[0]) / (times[1] - times[0])
                } else if i == n - 1 {
                    (values[n - 1] - values[n - 2]) / (times[n - 1] - times[n - 2])
                } else {
                    (values[i + 1] - values[i - 1]) / (times[i + 1] - times[i - 1])
                }
            })
            .collect();
        Ok(Self { times, values, slopes })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        hermite(
            t,
            self.times[i],
            self.times[i + 1],
            self.values[i],
            self.values[i + 1],
            self.slopes[i],
            self.slopes[i + 1],
        )
    }
}

/// Cubic Hermite interpolation on `[a, b]` from end values and end slopes.
#[inline]
pub fn hermite(t: f64, a: f64, b: f64, ya: f64, yb: f64, da: f64, db: f64) -> f64 {
    let h = b - a;
    let s = (t - a) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * ya + (s3 - 2.0 * s2 + s) * h * da + (-2.0 * s3 + 3.0 * s2) * yb + (s3 - s2) * h * db
}

/// Derivative of [`hermite`] with respect to `t`.
#[inline]
pub fn hermite_derivative(t: f64, a: f64, b: f64, ya: f64, yb: f64, da: f64, db: f64) -> f64 {
    let h = b - a;
    let s = (t - a) / h;
    let s2 = s * s;
    ((6.0 * s2 - 6.0 * s) * ya + (6.0 * s - 6.0 * s2) * yb) / h + (3.0 * s2 - 4.0 * s + 1.0) * da + (3.0 * s2 - 2.0 * s) * db
}
