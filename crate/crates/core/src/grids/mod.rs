//! Quantization codebooks ("grids") and their evaluation against `N(0, I_p)`.
//!
//! A [`Grid`] holds `n` points of dimension `p`. Builders live in
//! [`builders`]; the binary/JSON formats in [`io`].

pub mod builders;
pub mod io;
pub use io::{grid_crc, grid_from_bytes, grid_to_bytes, grid_to_json};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng;

pub use builders::{
    build_af_grid, build_nf_grid, build_uniform_constrained, clvq_build, lloyd_max_1d,
    lloyd_refine, ClvqParams, LloydOutcome,
};

/// Largest supported point count.
pub const MAX_POINTS: usize = 4096;
/// Largest supported grid dimension.
pub const MAX_DIM: usize = 8;

/// Distance used to select the nearest point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    L2,
    L1,
}

impl Metric {
    pub fn to_byte(self) -> u8 {
        match self {
            Metric::L2 => 0,
            Metric::L1 => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Metric::L2),
            1 => Some(Metric::L1),
            _ => None,
        }
    }
}

/// Which builder produced a grid, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub builder: String,
    pub params: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(builder: &str, params: String, seed: Option<u64>) -> Self {
        Self { builder: builder.to_string(), params, seed }
    }
}

/// An `n`-point codebook in `R^p`, points stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    p: usize,
    n: usize,
    points: Vec<f64>,
    metric: Metric,
    mse_per_dim: f64,
    provenance: Provenance,
}

impl Grid {
    /// Validates shape, finiteness and distinctness. `mse_per_dim` is taken as given.
    pub fn new(
        p: usize,
        points: Vec<f64>,
        metric: Metric,
        mse_per_dim: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        if p == 0 || p > MAX_DIM {
            return Err(invalid(format!("grid dimension {p} outside 1..={MAX_DIM}")));
        }
        if points.is_empty() || points.len() % p != 0 {
            return Err(invalid("point buffer length must be a positive multiple of p"));
        }
        let n = points.len() / p;
        if n > MAX_POINTS {
            return Err(invalid(format!("grid size {n} exceeds {MAX_POINTS}")));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(invalid("grid points must be finite"));
        }
        if !mse_per_dim.is_finite() || mse_per_dim < 0.0 {
            return Err(invalid("mse_per_dim must be finite and non-negative"));
        }
        let grid = Self { p, n, points, metric, mse_per_dim, provenance };
        for i in 0..n {
            for j in 0..i {
                let same = grid.point(i).iter().zip(grid.point(j)).all(|(a, b)| (a - b).abs() <= 1e-12);
                if same {
                    return Err(invalid(format!("grid points {j} and {i} coincide")));
                }
            }
        }
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn mse_per_dim(&self) -> f64 {
        self.mse_per_dim
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.p..(i + 1) * self.p]
    }

    /// Bits needed to store one index: `⌈log₂ n⌉`.
    pub fn index_bits(&self) -> u32 {
        index_bits(self.n)
    }

    /// Nearest point by brute-force scan. Ties go to the lowest index.
    /// Returns the index and the squared Euclidean distance to that point.
    pub fn nearest(&self, v: &[f64]) -> Result<(usize, f64)> {
        if v.len() != self.p {
            return Err(invalid(format!("query has dimension {}, grid has {}", v.len(), self.p)));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(invalid("query must be finite"));
        }
        let mut best = (0, f64::INFINITY);
        for i in 0..self.n {
            let d = self.distance(i, v);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok((best.0, sq_dist(self.point(best.0), v)))
    }

    fn distance(&self, i: usize, v: &[f64]) -> f64 {
        match self.metric {
            Metric::L2 => sq_dist(self.point(i), v),
            Metric::L1 => self.point(i).iter().zip(v).map(|(a, b)| (a - b).abs()).sum(),
        }
    }

    /// Index accelerating repeated nearest-point queries; results match [`Grid::nearest`].
    pub fn searcher(&self) -> NearestSearch<'_> {
        NearestSearch::new(self)
    }

    /// Whether the point set is symmetric about the origin within `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| {
            let neg: Vec<f64> = self.point(i).iter().map(|x| -x).collect();
            (0..self.n).any(|j| self.point(j).iter().zip(&neg).all(|(a, b)| (a - b).abs() <= tol))
        })
    }
}

pub fn index_bits(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact nearest-point search over points sorted by their first coordinate.
///
/// The scan walks outward from the query's first coordinate and stops a side
/// once the first-coordinate gap alone exceeds the best distance found, so the
/// winner (including the lowest-index tie rule) is the brute-force winner.
pub struct NearestSearch<'a> {
    grid: &'a Grid,
    order: Vec<usize>,
    keys: Vec<f64>,
}

impl<'a> NearestSearch<'a> {
    fn new(grid: &'a Grid) -> Self {
        let mut order: Vec<usize> = (0..grid.n).collect();
        order.sort_by(|&a, &b| grid.point(a)[0].total_cmp(&grid.point(b)[0]).then(a.cmp(&b)));
        let keys = order.iter().map(|&i| grid.point(i)[0]).collect();
        Self { grid, order, keys }
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    /// `v` must have the grid's dimension and be finite.
    pub fn nearest(&self, v: &[f64]) -> (usize, f64) {
        let g = self.grid;
        let x0 = v[0];
        let start = self.keys.partition_point(|&k| k < x0);
        let gap = |k: f64| match g.metric {
            Metric::L2 => (k - x0) * (k - x0),
            Metric::L1 => (k - x0).abs(),
        };
        let mut best = (usize::MAX, f64::INFINITY);
        let consider = |slot: usize, best: &mut (usize, f64)| {
            let i = self.order[slot];
            let d = g.distance(i, v);
            if d < best.1 || (d == best.1 && i < best.0) {
                *best = (i, d);
            }
        };
        let (mut lo, mut hi) = (start, start);
        let (mut lo_open, mut hi_open) = (start > 0, start < self.keys.len());
        while lo_open || hi_open {
            if hi_open {
                if gap(self.keys[hi]) > best.1 {
                    hi_open = false;
                } else {
                    consider(hi, &mut best);
                    hi += 1;
                    hi_open = hi < self.keys.len();
                }
            }
            if lo_open {
                if gap(self.keys[lo - 1]) > best.1 {
                    lo_open = false;
                } else {
                    consider(lo - 1, &mut best);
                    lo -= 1;
                    lo_open = lo > 0;
                }
            }
        }
        (best.0, sq_dist(g.point(best.0), v))
    }
}

const MC_SHARD: usize = 1 << 15;

/// Monte-Carlo estimate of `E‖Z − nearest(Z)‖²/p` for `Z ~ N(0, I_p)`.
///
/// Returns `(mse_per_dim, standard_error)`. Samples are drawn in fixed-size
/// shards with per-shard streams, so the result does not depend on the
/// number of worker threads.
pub fn estimate_grid_mse(grid: &Grid, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples < 1000 {
        return Err(invalid("estimate_grid_mse needs at least 1000 samples"));
    }
    let search = grid.searcher();
    let p = grid.dim();
    let shards = samples.div_ceil(MC_SHARD);
    let partial: Vec<(f64, f64)> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let count = MC_SHARD.min(samples - s * MC_SHARD);
            let mut r = rng::stream(seed, &[0x6d5e, s as u64]);
            let mut z = vec![0.0; p];
            let (mut sum, mut sumsq) = (0.0, 0.0);
            for _ in 0..count {
                for x in z.iter_mut() {
                    *x = StandardNormal.sample(&mut r);
                }
                let e = search.nearest(&z).1 / p as f64;
                sum += e;
                sumsq += e * e;
            }
            (sum, sumsq)
        })
        .collect();
    let (sum, sumsq) = partial.iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    let m = samples as f64;
    let mean = sum / m;
    let var = ((sumsq / m - mean * mean) * m / (m - 1.0)).max(0.0);
    Ok((mean, (var / m).sqrt()))
}
