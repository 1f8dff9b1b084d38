use std::io::Write;

use crate::error::{Error, Result};

/// Values of a process on increasing grid times.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PathGrid {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::Dimension(format!(
                "path with {} times and {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("path times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("path values".into()));
        }
        Ok(PathGrid { times, values })
    }

    /// Values on the uniform grid `k * horizon / (len - 1)`.
    pub fn uniform(horizon: f64, values: Vec<f64>) -> Result<Self> {
        let steps = values.len().saturating_sub(1).max(1) as f64;
        let times = (0..values.len())
            .map(|k| horizon * k as f64 / steps)
            .collect();
        PathGrid::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn initial(&self) -> f64 {
        self.values[0]
    }

    pub fn terminal(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Every `step`-th node, keeping both endpoints aligned.
    pub fn subsample(&self, step: usize) -> Result<Self> {
        if step == 0 || (self.len() - 1) % step != 0 {
            return Err(Error::InvalidArgument(format!(
                "subsampling step {step} does not divide {} intervals",
                self.len() - 1
            )));
        }
        Ok(PathGrid {
            times: self.times.iter().step_by(step).copied().collect(),
            values: self.values.iter().step_by(step).copied().collect(),
        })
    }

    /// Pointwise `scale * (self - other)` on identical grids.
    pub fn scaled_difference(&self, other: &PathGrid, scale: f64) -> Result<Self> {
        if self.times != other.times {
            return Err(Error::Dimension("paths live on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| scale * (a - b))
            .collect();
        PathGrid::new(self.times.clone(), values)
    }

    /// CSV with columns `time,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,value")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(out, "{t},{v}")?;
        }
        Ok(())
    }
}
