use crate::error::{Error, Result};
use crate::sde_engine::{reference_fine, DriverPaths, PathGrid, ReferenceMode, SdeSpec};

use super::WeightProcess;

/// A reference path `X` with its sharp `X^#` and the weight seen along it,
/// all on the fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentPath {
    pub x: PathGrid,
    pub sharp: PathGrid,
    pub alpha: Vec<f64>,
}

impl TangentPath {
    /// `X^#` at the last fine node at or before `t`.
    pub fn sharp_at(&self, t: f64) -> f64 {
        self.sharp.values()[node_at(&self.x, t)]
    }

    pub fn x_at(&self, t: f64) -> f64 {
        self.x.values()[node_at(&self.x, t)]
    }
}

/// Index of the last grid node at or before `t`.
pub(crate) fn node_at(path: &PathGrid, t: f64) -> usize {
    let times = path.times();
    let tol = 1e-12 * times[times.len() - 1].abs().max(1.0);
    times.partition_point(|&s| s <= t + tol).saturating_sub(1)
}

/// Solves the tangent SDE
///
/// ```text
/// dX^# = a'_x(X,t) X^# dB + a(X,t) sqrt(alpha_t) dB̂ + b'_x(X,t) X^# dt,  X^#_0 = 0
/// ```
///
/// by Euler on the fine grid, along the reference path of `spec`.
pub fn simulate_tangent(spec: &SdeSpec, weight: &WeightProcess, drv: &DriverPaths, mode: ReferenceMode) -> Result<TangentPath> {
    let x = reference_fine(spec, drv, mode)?;
    tangent_along(spec, weight, &x, drv)
}

/// Tangent process along a given fine-grid reference path `x`, reusing it
/// across `B̂` replicas.
pub fn tangent_along(spec: &SdeSpec, weight: &WeightProcess, x: &[f64], drv: &DriverPaths) -> Result<TangentPath> {
    let grid = drv.grid();
    let n = grid.n_fine();
    if x.len() != n + 1 {
        return Err(Error::Dimension(format!(
            "reference path has {} nodes, grid has {}",
            x.len(),
            n + 1
        )));
    }
    let dt = grid.dt_fine();
    let alpha = x
        .iter()
        .enumerate()
        .map(|(j, &xj)| weight.eval(spec, xj, grid.fine_time(j)))
        .collect::<Result<Vec<f64>>>()?;
    let mut sharp = Vec::with_capacity(n + 1);
    let mut s = 0.0;
    sharp.push(s);
    for j in 0..n {
        let t = grid.fine_time(j);
        let xj = x[j];
        s += spec.a_x(xj, t) * s * drv.db_fine()[j]
            + spec.a(xj, t) * alpha[j].sqrt() * drv.dbhat_fine()[j]
            + spec.b_x(xj, t) * s * dt;
        if !s.is_finite() {
            return Err(Error::BlowUp {
                step: j + 1,
                time: grid.fine_time(j + 1),
            });
        }
        sharp.push(s);
    }
    let times: Vec<f64> = (0..=n).map(|j| grid.fine_time(j)).collect();
    Ok(TangentPath {
        x: PathGrid::new(times.clone(), x.to_vec())?,
        sharp: PathGrid::new(times, sharp)?,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde_engine::make_drivers;

    #[test]
    fn unit_diffusion_sharp_is_bhat() {
        let spec = SdeSpec::from_fns(0.0, |_, _| 1.0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0);
        let drv = make_drivers(4, 8, 2).unwrap();
        let tp = simulate_tangent(&spec, &WeightProcess::constant(1.0), &drv, ReferenceMode::FineEuler).unwrap();
        for (s, b) in tp.sharp.values().iter().zip(drv.bhat_fine()) {
            assert!((s - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_bhat_gives_zero_sharp() {
        let spec = SdeSpec::lognormal(100.0, 0.2, 0.05);
        let drv = make_drivers(4, 8, 2).unwrap();
        let quiet = drv.with_bhat(vec![0.0; drv.grid().n_fine()]).unwrap();
        let tp = simulate_tangent(&spec, &WeightProcess::adapted(), &quiet, ReferenceMode::Exact).unwrap();
        assert!(tp.sharp.values().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn weight_floor_is_enforced_along_path() {
        let spec = SdeSpec::from_fns(1.0, |_, _| 1.0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0);
        let drv = make_drivers(4, 2, 2).unwrap();
        assert!(matches!(
            simulate_tangent(&spec, &WeightProcess::adapted(), &drv, ReferenceMode::FineEuler),
            Err(Error::WeightFloor { .. })
        ));
    }

    #[test]
    fn node_lookup() {
        let p = PathGrid::uniform(1.0, vec![0.0; 5]).unwrap();
        assert_eq!(node_at(&p, 0.0), 0);
        assert_eq!(node_at(&p, 0.5), 2);
        assert_eq!(node_at(&p, 0.6), 2);
        assert_eq!(node_at(&p, 1.0), 4);
    }
}
