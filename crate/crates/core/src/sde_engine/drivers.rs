use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Nested uniform grids on `[0, horizon]`: `n` coarse steps, each split into
/// `refine` fine steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    n: usize,
    refine: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(n: usize, refine: usize, horizon: f64) -> Result<Self> {
        if n == 0 || refine == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid needs n >= 1 and refine >= 1, got n = {n}, refine = {refine}"
            )));
        }
        if n.checked_mul(refine).is_none() {
            return Err(Error::InvalidArgument(format!(
                "n * refine overflows ({n} * {refine})"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        Ok(TimeGrid { n, refine, horizon })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn refine(&self) -> usize {
        self.refine
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_fine(&self) -> usize {
        self.n * self.refine
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n as f64
    }

    pub fn dt_fine(&self) -> f64 {
        self.horizon / self.n_fine() as f64
    }

    /// Time of fine node `j`.
    pub fn fine_time(&self, j: usize) -> f64 {
        self.horizon * j as f64 / self.n_fine() as f64
    }

    /// Time of coarse node `k`.
    pub fn coarse_time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.n as f64
    }

    /// Index of the last fine node at or before `t`.
    pub fn fine_index(&self, t: f64) -> usize {
        let j = (t / self.horizon * self.n_fine() as f64 + 1e-9).floor();
        (j.max(0.0) as usize).min(self.n_fine())
    }
}

/// Independent random sources. Every (seed, path, sub-index, channel)
/// addresses its own ChaCha stream, so any path can be regenerated in
/// isolation and parallel runs reproduce serial runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Channel {
    B = 0,
    W = 1,
    BHat = 2,
    Inner = 3,
    Walk = 4,
    Brownian = 5,
}

const SUB_BITS: u32 = 20;
const CHANNEL_BITS: u32 = 4;

/// Counter-based generator for one stream.
pub fn stream_rng(seed: u64, path: u64, sub: u64, channel: Channel) -> ChaCha8Rng {
    debug_assert!(path < 1 << (64 - SUB_BITS - CHANNEL_BITS));
    debug_assert!(sub < 1 << SUB_BITS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((path << (SUB_BITS + CHANNEL_BITS)) | (sub << CHANNEL_BITS) | channel as u64);
    rng
}

fn gaussian_increments(len: usize, variance: f64, mut rng: ChaCha8Rng) -> Vec<f64> {
    let sd = variance.sqrt();
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect()
}

/// Fine-grid increments of three independent Brownian motions: `B` drives
/// the SDE, `W` is the extra noise of the Euler error limit, `B̂` drives the
/// sharp on the copy space.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPaths {
    grid: TimeGrid,
    seed: u64,
    path: u64,
    db: Vec<f64>,
    dw: Vec<f64>,
    dbhat: Vec<f64>,
}

/// Drivers on `[0, 1]` for path index 0.
pub fn make_drivers(n: usize, refine: usize, seed: u64) -> Result<DriverPaths> {
    DriverPaths::generate(TimeGrid::new(n, refine, 1.0)?, seed, 0)
}

impl DriverPaths {
    pub fn generate(grid: TimeGrid, seed: u64, path: u64) -> Result<Self> {
        if path >= 1 << (64 - SUB_BITS - CHANNEL_BITS) {
            return Err(Error::InvalidArgument(format!("path index {path} out of range")));
        }
        let (len, var) = (grid.n_fine(), grid.dt_fine());
        Ok(DriverPaths {
            grid,
            seed,
            path,
            db: gaussian_increments(len, var, stream_rng(seed, path, 0, Channel::B)),
            dw: gaussian_increments(len, var, stream_rng(seed, path, 0, Channel::W)),
            dbhat: gaussian_increments(len, var, stream_rng(seed, path, 0, Channel::BHat)),
        })
    }

    /// Builds drivers from explicit fine increments.
    pub fn from_increments(grid: TimeGrid, db: Vec<f64>, dw: Vec<f64>, dbhat: Vec<f64>) -> Result<Self> {
        let n = grid.n_fine();
        if db.len() != n || dw.len() != n || dbhat.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} fine increments, got {}/{}/{}",
                db.len(),
                dw.len(),
                dbhat.len()
            )));
        }
        if db.iter().chain(&dw).chain(&dbhat).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("driver increments".into()));
        }
        Ok(DriverPaths {
            grid,
            seed: 0,
            path: 0,
            db,
            dw,
            dbhat,
        })
    }

    /// Same `B` and `W`, fresh `B̂` drawn from replica stream `replica`
    /// (replica 0 is the original draw).
    pub fn with_bhat_replica(&self, replica: u64) -> Result<Self> {
        if replica >= 1 << SUB_BITS {
            return Err(Error::InvalidArgument(format!("replica {replica} out of range")));
        }
        let rng = stream_rng(self.seed, self.path, replica, Channel::BHat);
        Ok(DriverPaths {
            dbhat: gaussian_increments(self.db.len(), self.grid.dt_fine(), rng),
            ..self.clone()
        })
    }

    pub fn with_bhat(&self, dbhat: Vec<f64>) -> Result<Self> {
        let mut out = DriverPaths::from_increments(self.grid, self.db.clone(), self.dw.clone(), dbhat)?;
        out.seed = self.seed;
        out.path = self.path;
        Ok(out)
    }

    pub fn with_w(&self, dw: Vec<f64>) -> Result<Self> {
        let mut out = DriverPaths::from_increments(self.grid, self.db.clone(), dw, self.dbhat.clone())?;
        out.seed = self.seed;
        out.path = self.path;
        Ok(out)
    }

    /// The same Brownian paths seen on a fine grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.grid.refine % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "coarsening factor {factor} must divide refine {}",
                self.grid.refine
            )));
        }
        let agg = |v: &[f64]| v.chunks(factor).map(|c| c.iter().sum()).collect::<Vec<f64>>();
        Ok(DriverPaths {
            grid: TimeGrid::new(self.grid.n, self.grid.refine / factor, self.grid.horizon)?,
            seed: self.seed,
            path: self.path,
            db: agg(&self.db),
            dw: agg(&self.dw),
            dbhat: agg(&self.dbhat),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path
    }

    pub fn db_fine(&self) -> &[f64] {
        &self.db
    }

    pub fn dw_fine(&self) -> &[f64] {
        &self.dw
    }

    pub fn dbhat_fine(&self) -> &[f64] {
        &self.dbhat
    }

    /// Coarse increments of `B`, each the in-order sum of its fine increments.
    pub fn db_coarse(&self) -> Vec<f64> {
        self.db
            .chunks(self.grid.refine)
            .map(|c| c.iter().sum())
            .collect()
    }

    /// `B` at the fine nodes, starting from 0.
    pub fn b_fine(&self) -> Vec<f64> {
        cumulative(&self.db)
    }

    pub fn w_fine(&self) -> Vec<f64> {
        cumulative(&self.dw)
    }

    pub fn bhat_fine(&self) -> Vec<f64> {
        cumulative(&self.dbhat)
    }

    /// CSV audit dump: `index,time,dB,dW,dBhat` (time is the left node).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,time,dB,dW,dBhat")?;
        for j in 0..self.db.len() {
            writeln!(
                out,
                "{j},{},{},{},{}",
                self.grid.fine_time(j),
                self.db[j],
                self.dw[j],
                self.dbhat[j]
            )?;
        }
        Ok(())
    }
}

/// `n_paths` independent driver sets sharing a grid and a seed; path `p`
/// uses stream index `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ensemble {
    pub grid: TimeGrid,
    pub seed: u64,
    pub n_paths: usize,
}

impl Ensemble {
    pub fn new(grid: TimeGrid, seed: u64, n_paths: usize) -> Result<Self> {
        if n_paths < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: n_paths,
            });
        }
        Ok(Ensemble { grid, seed, n_paths })
    }

    pub fn drivers(&self, path: u64) -> Result<DriverPaths> {
        DriverPaths::generate(self.grid, self.seed, path)
    }
}

fn cumulative(increments: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for d in increments {
        acc += d;
        out.push(acc);
    }
    out
}
