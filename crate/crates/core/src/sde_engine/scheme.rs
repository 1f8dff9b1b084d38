use super::{DriverPaths, PathGrid, SdeSpec, TimeGrid};
use crate::error::{Error, Result};

/// How the reference ("exact") solution is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// Euler scheme on the fine grid.
    FineEuler,
    /// The spec's closed-form solution evaluated on the fine Brownian path.
    Exact,
}

impl ReferenceMode {
    /// `Exact` when the spec carries a closed form, `FineEuler` otherwise.
    pub fn preferred(spec: &SdeSpec) -> Self {
        if spec.exact.is_some() {
            ReferenceMode::Exact
        } else {
            ReferenceMode::FineEuler
        }
    }
}

/// Euler recursion `x_{k+1} = x_k + a(x_k, t_k) dB_k + b(x_k, t_k) dt` with
/// `t_k = k * dt`.
pub fn euler_values(spec: &SdeSpec, dt: f64, increments: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut x = spec.x0;
    out.push(x);
    for (k, db) in increments.iter().enumerate() {
        let t = k as f64 * dt;
        x += spec.a(x, t) * db + spec.b(x, t) * dt;
        if !x.is_finite() {
            return Err(Error::BlowUp {
                step: k + 1,
                time: (k + 1) as f64 * dt,
            });
        }
        out.push(x);
    }
    Ok(out)
}

fn coarse_times(grid: &TimeGrid) -> Vec<f64> {
    (0..=grid.n()).map(|k| grid.coarse_time(k)).collect()
}

fn check_grid(spec: &SdeSpec, drv: &DriverPaths) -> Result<()> {
    let h = drv.grid().horizon();
    if (h - spec.horizon).abs() > 1e-12 * spec.horizon {
        return Err(Error::InvalidArgument(format!(
            "driver horizon {h} does not match SDE horizon {}",
            spec.horizon
        )));
    }
    Ok(())
}

/// Euler approximation `X^n` on the coarse grid, coefficients frozen at the
/// left node.
pub fn euler_path(spec: &SdeSpec, drv: &DriverPaths) -> Result<PathGrid> {
    check_grid(spec, drv)?;
    let values = euler_values(spec, drv.grid().dt(), &drv.db_coarse())?;
    PathGrid::new(coarse_times(drv.grid()), values)
}

/// Reference solution on every fine node (`n_fine + 1` values).
pub fn reference_fine(spec: &SdeSpec, drv: &DriverPaths, mode: ReferenceMode) -> Result<Vec<f64>> {
    check_grid(spec, drv)?;
    let grid = drv.grid();
    match mode {
        ReferenceMode::FineEuler => euler_values(spec, grid.dt_fine(), drv.db_fine()),
        ReferenceMode::Exact => {
            let exact = spec
                .exact
                .as_ref()
                .ok_or_else(|| Error::Unsupported("SDE has no closed-form solution".into()))?;
            drv.b_fine()
                .iter()
                .enumerate()
                .map(|(j, &b)| {
                    let x = exact(grid.fine_time(j), b);
                    if x.is_finite() {
                        Ok(x)
                    } else {
                        Err(Error::BlowUp {
                            step: j,
                            time: grid.fine_time(j),
                        })
                    }
                })
                .collect()
        }
    }
}

/// Reference solution subsampled to the coarse grid.
pub fn reference_path(spec: &SdeSpec, drv: &DriverPaths, mode: ReferenceMode) -> Result<PathGrid> {
    let fine = reference_fine(spec, drv, mode)?;
    let values = fine.iter().step_by(drv.grid().refine()).copied().collect();
    PathGrid::new(coarse_times(drv.grid()), values)
}

/// `sqrt(n) (X^n - X)` on the coarse grid, both driven by the same `B`.
pub fn scaled_error_path(spec: &SdeSpec, drv: &DriverPaths, mode: ReferenceMode) -> Result<PathGrid> {
    let approx = euler_path(spec, drv)?;
    let reference = reference_path(spec, drv, mode)?;
    approx.scaled_difference(&reference, (drv.grid().n() as f64).sqrt())
}
