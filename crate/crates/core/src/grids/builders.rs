//! Grid builders: competitive learning (CLVQ) with Lloyd polish, exact 1-D
//! Lloyd–Max, MSE-optimal uniform grids, and the NF / AF baselines.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_grid_mse, Grid, Metric, Provenance, MAX_DIM, MAX_POINTS};
use crate::error::{invalid, Result};
use crate::gauss;
use crate::rng;

const FIXED_POINT_ITER_CAP: usize = 2_000_000;

/// Tuning of [`clvq_build`]. `None` fields take size-dependent defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClvqParams {
    /// Competitive-learning steps; default `200·n`.
    pub steps: Option<usize>,
    /// Step size `γ_t = a / (b + t)`.
    pub a: f64,
    /// Default `n`.
    pub b: Option<f64>,
    /// Lloyd polish sample count; default `max(4096·n, 65536)`.
    pub lloyd_samples: Option<usize>,
    pub lloyd_max_iters: usize,
    pub lloyd_tol: f64,
    /// Monte-Carlo samples for the final distortion estimate when `p ≥ 2`.
    pub mse_samples: usize,
}

impl Default for ClvqParams {
    fn default() -> Self {
        Self {
            steps: None,
            a: 1.0,
            b: None,
            lloyd_samples: None,
            lloyd_max_iters: 200,
            lloyd_tol: 1e-7,
            mse_samples: 1 << 20,
        }
    }
}

fn check_size(p: usize, n: usize) -> Result<()> {
    if n < 1 || n > MAX_POINTS {
        return Err(invalid(format!("grid size n={n} outside 1..={MAX_POINTS}")));
    }
    if p < 1 || p > MAX_DIM {
        return Err(invalid(format!("grid dimension p={p} outside 1..={MAX_DIM}")));
    }
    Ok(())
}

/// Gaussian-MSE-optimized codebook by competitive learning followed by Lloyd refinement.
pub fn clvq_build(p: usize, n: usize, seed: u64, params: &ClvqParams) -> Result<Grid> {
    check_size(p, n)?;
    let steps = params.steps.unwrap_or(200 * n);
    if steps < n {
        return Err(invalid(format!("clvq needs at least n={n} steps, got {steps}")));
    }
    let b = params.b.unwrap_or(n as f64);
    if !(params.a > 0.0) || !(b >= 0.0) {
        return Err(invalid("clvq schedule needs a > 0 and b >= 0"));
    }

    let mut r = rng::stream(seed, &[0xc1a0, 0]);
    let mut pts: Vec<f64> = (0..n * p).map(|_| StandardNormal.sample(&mut r)).collect();
    let mut z = vec![0.0; p];
    for t in 0..steps {
        for x in z.iter_mut() {
            *x = StandardNormal.sample(&mut r);
        }
        let mut best = (0, f64::INFINITY);
        for i in 0..n {
            let d = super::sq_dist(&pts[i * p..(i + 1) * p], &z);
            if d < best.1 {
                best = (i, d);
            }
        }
        let gamma = params.a / (b + t as f64);
        for (c, zi) in pts[best.0 * p..(best.0 + 1) * p].iter_mut().zip(&z) {
            *c += gamma * (zi - *c);
        }
    }

    let prov = Provenance::new(
        "clvq",
        format!("p={p},n={n},steps={steps},a={},b={b}", params.a),
        Some(seed),
    );
    let raw = Grid { p, n, points: pts, metric: Metric::L2, mse_per_dim: 0.0, provenance: prov.clone() };
    let samples = params.lloyd_samples.unwrap_or((4096 * n).max(1 << 16)).max(10 * n);
    let refined = lloyd_refine(&raw, samples, params.lloyd_max_iters, params.lloyd_tol, rng::derive(seed, &[0x110d]))?;
    let mut grid = refined.grid;
    grid.provenance = prov;
    let mse = if p == 1 {
        gauss::scalar_mse(&grid.points)
    } else {
        estimate_grid_mse(&grid, params.mse_samples, rng::derive(seed, &[0xe57]))?.0
    };
    Grid::new(p, grid.points, Metric::L2, mse, grid.provenance)
}

/// Result of [`lloyd_refine`]: the polished grid and the per-iteration
/// distortion (mean squared error per dimension on the fixed sample).
#[derive(Debug, Clone)]
pub struct LloydOutcome {
    pub grid: Grid,
    pub distortions: Vec<f64>,
}

/// Batch Lloyd iterations on one fixed sample of `N(0, I_p)`.
///
/// Stops when the relative distortion improvement drops below `tol` or after
/// `max_iters` centroid updates. An empty cell is re-seeded at the sample
/// farthest from its assigned point. The returned grid is the last one
/// evaluated; its `mse_per_dim` is the sample distortion.
pub fn lloyd_refine(grid: &Grid, samples: usize, max_iters: usize, tol: f64, seed: u64) -> Result<LloydOutcome> {
    let (p, n) = (grid.p, grid.n);
    if samples < 10 * n {
        return Err(invalid(format!("lloyd_refine needs at least 10·n = {} samples", 10 * n)));
    }
    let mut r = rng::stream(seed, &[0x5a3]);
    let data: Vec<f64> = (0..samples * p).map(|_| StandardNormal.sample(&mut r)).collect();

    let mut current = Grid { metric: Metric::L2, ..grid.clone() };
    let mut distortions = Vec::new();
    let mut assign = vec![0usize; samples];
    let mut dist = vec![0.0f64; samples];
    for it in 0..=max_iters {
        let search = current.searcher();
        data.par_chunks_exact(p)
            .zip(assign.par_iter_mut().zip(dist.par_iter_mut()))
            .for_each(|(z, (a, d))| (*a, *d) = search.nearest(z));
        let d_now = dist.iter().sum::<f64>() / (samples * p) as f64;
        let converged = distortions
            .last()
            .is_some_and(|&prev: &f64| prev <= 0.0 || (prev - d_now) / prev < tol);
        distortions.push(d_now);
        current.mse_per_dim = d_now;
        if converged || it == max_iters {
            break;
        }

        let mut sums = vec![0.0; n * p];
        let mut counts = vec![0usize; n];
        for (s, z) in data.chunks_exact(p).enumerate() {
            let i = assign[s];
            counts[i] += 1;
            for (acc, x) in sums[i * p..(i + 1) * p].iter_mut().zip(z) {
                *acc += x;
            }
        }
        let empty: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
        let mut next = current.points.clone();
        for i in (0..n).filter(|&i| counts[i] > 0) {
            for k in 0..p {
                next[i * p + k] = sums[i * p + k] / counts[i] as f64;
            }
        }
        if !empty.is_empty() {
            let mut by_dist: Vec<usize> = (0..samples).collect();
            by_dist.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            for (&cell, &s) in empty.iter().zip(&by_dist) {
                next[cell * p..(cell + 1) * p].copy_from_slice(&data[s * p..(s + 1) * p]);
            }
        }
        current.points = next;
    }
    let grid = Grid::new(p, current.points, Metric::L2, current.mse_per_dim, current.provenance)?;
    Ok(LloydOutcome { grid, distortions })
}

fn symmetrize(points: &mut [f64]) {
    let n = points.len();
    for i in 0..n / 2 {
        let m = 0.5 * (points[n - 1 - i] - points[i]);
        points[i] = -m;
        points[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.0;
    }
}

fn nf_points(n: usize) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..n).map(|i| gauss::quantile((i as f64 + 0.5) / n as f64)).collect();
    symmetrize(&mut pts);
    pts
}

/// Scalar fixed-point iteration `c ← centroid(cell(c))` from the NF start.
fn scalar_fixed_point(n: usize, tol: f64, centroid: impl Fn(f64, f64) -> Option<f64>) -> Vec<f64> {
    let mut pts = nf_points(n);
    for _ in 0..FIXED_POINT_ITER_CAP {
        let bounds = gauss::cell_bounds(&pts);
        let mut moved: f64 = 0.0;
        let next: Vec<f64> = pts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let c2 = centroid(bounds[i], bounds[i + 1]).unwrap_or(c);
                moved = moved.max((c2 - c).abs());
                c2
            })
            .collect();
        pts = next;
        symmetrize(&mut pts);
        if moved < tol {
            break;
        }
    }
    pts
}

/// MSE-optimal scalar quantizer of `N(0,1)` (exact conditional means).
pub fn lloyd_max_1d(n: usize, tol: f64) -> Result<Grid> {
    check_size(1, n)?;
    let pts = scalar_fixed_point(n, tol, gauss::cell_mean);
    let mse = gauss::scalar_mse(&pts);
    Grid::new(1, pts, Metric::L2, mse, Provenance::new("lloydmax", format!("n={n},tol={tol:e}"), None))
}

/// Uniform symmetric grid `c·(k − (n−1)/2)` with the step `c` minimizing Gaussian MSE.
pub fn build_uniform_constrained(n: usize) -> Result<Grid> {
    if n < 2 {
        return Err(invalid("uniform grid needs at least 2 levels"));
    }
    check_size(1, n)?;
    let pts_for = |c: f64| -> Vec<f64> {
        let mid = (n as f64 - 1.0) / 2.0;
        (0..n).map(|k| c * (k as f64 - mid)).collect()
    };
    let mse = |c: f64| gauss::scalar_mse(&pts_for(c));

    // Coarse geometric scan for a bracket, then golden-section search.
    let scan: Vec<f64> = (0..=2000).map(|k| 1e-4 * (4e4f64).powf(k as f64 / 2000.0)).collect();
    let vals: Vec<f64> = scan.iter().map(|&c| mse(c)).collect();
    let k = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let (mut lo, mut hi) = (scan[k.saturating_sub(1)], scan[(k + 1).min(scan.len() - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (mse(x1), mse(x2));
    while hi - lo > 1e-10 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = mse(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = mse(x2);
        }
    }
    let step = 0.5 * (lo + hi);
    let mut pts = pts_for(step);
    symmetrize(&mut pts);
    let m = gauss::scalar_mse(&pts);
    Grid::new(1, pts, Metric::L2, m, Provenance::new("uniform", format!("n={n},step={step:.12}"), None))
}

/// Normal-float baseline: equal-mass quantiles `Φ⁻¹((i + ½)/n)`.
pub fn build_nf_grid(n: usize) -> Result<Grid> {
    check_size(1, n)?;
    let pts = nf_points(n);
    let mse = gauss::scalar_mse(&pts);
    Grid::new(1, pts, Metric::L2, mse, Provenance::new("nf", format!("n={n}"), None))
}

/// Abnormal-float baseline: L1-optimal scalar grid (conditional medians).
pub fn build_af_grid(n: usize, tol: f64) -> Result<Grid> {
    check_size(1, n)?;
    let pts = scalar_fixed_point(n, tol, gauss::cell_median);
    let mse = gauss::scalar_mse(&pts);
    Grid::new(1, pts, Metric::L1, mse, Provenance::new("af", format!("n={n},tol={tol:e}"), None))
}
