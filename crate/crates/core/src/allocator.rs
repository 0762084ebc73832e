//! Per-layer option selection under a total-bits budget.
//!
//! Minimizes `Σ_l α_l t²_{l,j_l}` subject to `Σ_l cost(l, j_l) ≤ ⌊b_max·d⌋`
//! where `cost` is the exact stored bit count. Ties in the objective go to
//! fewer total bits, then to the lexicographically smallest choice vector.
//! Objective sums are always accumulated in layer order, so every solver
//! here computes bit-identical objective values for the same choice vector.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grids::Grid;
use crate::linearity::{AlphaVector, LossModel};
use crate::quantizer::{encode, measure_relative_error, QuantConfig};

pub use crate::quantizer::effective_bitwidth;

/// A measured menu cell: relative error and exact storage cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MenuCell {
    pub t2: f64,
    pub cost_bits: u64,
}

/// Per-layer option table. `cells[l][j]` is `None` when option `j` cannot encode layer `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantMenu {
    pub layer_sizes: Vec<usize>,
    pub labels: Vec<String>,
    pub bits: Vec<f64>,
    pub cells: Vec<Vec<Option<MenuCell>>>,
}

impl QuantMenu {
    pub fn new(
        layer_sizes: Vec<usize>,
        labels: Vec<String>,
        bits: Vec<f64>,
        cells: Vec<Vec<Option<MenuCell>>>,
    ) -> Result<Self> {
        let m = Self { layer_sizes, labels, bits, cells };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let (l, j) = (self.layer_sizes.len(), self.labels.len());
        if l == 0 || j == 0 {
            return Err(invalid("menu needs at least one layer and one option"));
        }
        if self.bits.len() != j || self.cells.len() != l || self.cells.iter().any(|r| r.len() != j) {
            return Err(invalid("menu dimensions are inconsistent"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(invalid("layer sizes must be positive"));
        }
        if self.bits.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(invalid("option bitwidths must be positive"));
        }
        for cell in self.cells.iter().flatten().flatten() {
            if !(cell.t2 >= 0.0) || !cell.t2.is_finite() {
                return Err(invalid(format!("menu error {} must be finite and non-negative", cell.t2)));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn options(&self) -> usize {
        self.labels.len()
    }

    pub fn total_params(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// CSV rows `layer,option,bits,cost_bits,t2` for every available cell.
    pub fn to_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row {
            layer: usize,
            option: usize,
            bits: f64,
            cost_bits: u64,
            t2: f64,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for (l, row) in self.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if let Some(c) = cell {
                    w.serialize(Row { layer: l, option: j, bits: self.bits[j], cost_bits: c.cost_bits, t2: c.t2 })?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
    }

    /// JSON header: option labels, option bits and layer sizes.
    pub fn header_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MenuHeader {
            labels: self.labels.clone(),
            bits: self.bits.clone(),
            layer_sizes: self.layer_sizes.clone(),
        })?)
    }

    /// Rebuild a menu from its CSV body and JSON header. Missing rows are unavailable cells.
    pub fn from_csv(csv_text: &str, header_json: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            layer: usize,
            option: usize,
            bits: f64,
            cost_bits: u64,
            t2: f64,
        }
        let h: MenuHeader = serde_json::from_str(header_json)?;
        let mut cells = vec![vec![None; h.labels.len()]; h.layer_sizes.len()];
        for row in csv::Reader::from_reader(csv_text.as_bytes()).deserialize() {
            let r: Row = row?;
            if r.layer >= h.layer_sizes.len() || r.option >= h.labels.len() {
                return Err(invalid(format!("menu row ({}, {}) out of range", r.layer, r.option)));
            }
            if r.bits.to_bits() != h.bits[r.option].to_bits() {
                return Err(invalid(format!("row bits {} disagree with header for option {}", r.bits, r.option)));
            }
            cells[r.layer][r.option] = Some(MenuCell { t2: r.t2, cost_bits: r.cost_bits });
        }
        Self::new(h.layer_sizes, h.labels, h.bits, cells)
    }
}

#[derive(Serialize, Deserialize)]
struct MenuHeader {
    labels: Vec<String>,
    bits: Vec<f64>,
    layer_sizes: Vec<usize>,
}

/// One quantizer on the menu. `grid` is `None` only for a lossless config.
#[derive(Debug, Clone)]
pub struct MenuOption {
    pub label: String,
    pub grid: Option<Grid>,
    pub config: QuantConfig,
}

impl MenuOption {
    pub fn new(label: impl Into<String>, grid: Option<Grid>, config: QuantConfig) -> Self {
        Self { label: label.into(), grid, config }
    }
}

/// Measure `t²` for every (layer, option) by encoding and decoding.
///
/// Cells whose encode fails (e.g. a layer not divisible by `g`) are left unavailable.
pub fn build_menu(model: &dyn LossModel, options: &[MenuOption]) -> Result<QuantMenu> {
    let weights = model.weights();
    let tasks: Vec<(usize, usize)> =
        (0..weights.len()).flat_map(|l| (0..options.len()).map(move |j| (l, j))).collect();
    let flat: Vec<Option<MenuCell>> = tasks
        .par_iter()
        .map(|&(l, j)| {
            let o = &options[j];
            let w = &weights[l];
            let q = encode(w, o.grid.as_ref(), &o.config).ok()?;
            let t2 = measure_relative_error(w, &q, o.grid.as_ref()).ok()?;
            Some(MenuCell { t2, cost_bits: q.payload_bits() })
        })
        .collect();
    let cells = flat.chunks(options.len().max(1)).map(|c| c.to_vec()).collect();
    QuantMenu::new(
        weights.iter().map(|w| w.len()).collect(),
        options.iter().map(|o| o.label.clone()).collect(),
        options.iter().map(|o| o.config.effective_bits()).collect(),
        cells,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub choice: Vec<usize>,
    pub total_bits: u64,
    pub budget_bits: u64,
    pub avg_bits_per_param: f64,
    pub predicted_delta: f64,
}

struct Instance {
    /// `vals[l][j] = α_l·t²_{l,j}`; `None` for unavailable cells.
    vals: Vec<Vec<Option<(f64, u64)>>>,
    budget: u64,
    params: usize,
}

fn budget_bits(menu: &QuantMenu, b_max: f64) -> Result<u64> {
    if !(b_max >= 0.0) || !b_max.is_finite() {
        return Err(invalid(format!("budget {b_max} must be finite and non-negative")));
    }
    Ok((b_max * menu.total_params() as f64).floor() as u64)
}

fn instance(menu: &QuantMenu, alphas: &AlphaVector, b_max: f64) -> Result<Instance> {
    menu.validate()?;
    if alphas.len() != menu.layers() {
        return Err(invalid(format!("{} alphas for {} layers", alphas.len(), menu.layers())));
    }
    if alphas.alphas.iter().any(|a| !a.is_finite()) {
        return Err(invalid("alphas must be finite"));
    }
    let vals: Vec<Vec<Option<(f64, u64)>>> = menu
        .cells
        .iter()
        .zip(&alphas.alphas)
        .map(|(row, &a)| row.iter().map(|c| c.map(|c| (a * c.t2, c.cost_bits))).collect())
        .collect();
    if let Some(l) = vals.iter().position(|r| r.iter().all(Option::is_none)) {
        return Err(invalid(format!("layer {l} has no available option")));
    }
    let budget = budget_bits(menu, b_max)?;
    let min_cost: u64 = vals.iter().map(|r| r.iter().flatten().map(|v| v.1).min().unwrap()).sum();
    if min_cost > budget {
        return Err(Error::Infeasible { min_avg_bits: min_cost as f64 / menu.total_params() as f64 });
    }
    Ok(Instance { vals, budget, params: menu.total_params() })
}

fn objective(inst: &Instance, choice: &[usize]) -> (f64, u64) {
    choice.iter().enumerate().fold((0.0, 0), |(o, c), (l, &j)| {
        let (v, cost) = inst.vals[l][j].expect("chosen cell is available");
        (o + v, c + cost)
    })
}

fn finish(inst: &Instance, choice: Vec<usize>) -> Allocation {
    let (obj, bits) = objective(inst, &choice);
    Allocation {
        choice,
        total_bits: bits,
        budget_bits: inst.budget,
        avg_bits_per_param: bits as f64 / inst.params as f64,
        predicted_delta: obj,
    }
}

/// Order of (objective, bits) under the tie rule; lexicographic order is the caller's job.
fn better(a: (f64, u64), b: (f64, u64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Options per layer that are strictly worse in both cost and weighted error than another.
pub fn dominated_options(menu: &QuantMenu, alphas: &AlphaVector) -> Result<Vec<Vec<bool>>> {
    if alphas.len() != menu.layers() {
        return Err(invalid("alpha count does not match menu"));
    }
    Ok(menu
        .cells
        .iter()
        .zip(&alphas.alphas)
        .map(|(row, &a)| {
            row.iter()
                .map(|c| {
                    c.is_some_and(|c| {
                        row.iter().flatten().any(|o| o.cost_bits < c.cost_bits && a * o.t2 < a * c.t2)
                    })
                })
                .collect()
        })
        .collect())
}

/// Copy of `menu` with dominated cells marked unavailable.
pub fn prune_dominated(menu: &QuantMenu, alphas: &AlphaVector) -> Result<QuantMenu> {
    let dominated = dominated_options(menu, alphas)?;
    let mut out = menu.clone();
    for (row, flags) in out.cells.iter_mut().zip(dominated) {
        for (cell, d) in row.iter_mut().zip(flags) {
            if d {
                *cell = None;
            }
        }
    }
    Ok(out)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// DP table entries above this count switch to the frontier solver.
pub const DP_TABLE_CAP: usize = 1 << 26;

/// Exact solver. Uses the budget DP when its table fits under [`DP_TABLE_CAP`],
/// otherwise the exact Pareto-frontier sweep.
pub fn solve_mckp(menu: &QuantMenu, alphas: &AlphaVector, b_max: f64) -> Result<Allocation> {
    let inst = instance(menu, alphas, b_max)?;
    let (unit, cap) = dp_shape(&inst);
    let choice = if (cap + 1).saturating_mul(inst.vals.len()) <= DP_TABLE_CAP {
        dp_solve(&inst, unit, cap)
    } else {
        frontier_solve(&inst)
    };
    Ok(finish(&inst, choice))
}

/// The budget DP, regardless of table size.
pub fn solve_mckp_dp(menu: &QuantMenu, alphas: &AlphaVector, b_max: f64) -> Result<Allocation> {
    let inst = instance(menu, alphas, b_max)?;
    let (unit, cap) = dp_shape(&inst);
    Ok(finish(&inst, dp_solve(&inst, unit, cap)))
}

/// The Pareto-frontier sweep, whose memory depends on the number of distinct
/// partial costs rather than on the budget.
pub fn solve_mckp_frontier(menu: &QuantMenu, alphas: &AlphaVector, b_max: f64) -> Result<Allocation> {
    let inst = instance(menu, alphas, b_max)?;
    Ok(finish(&inst, frontier_solve(&inst)))
}

/// GCD of all costs and the rescaled capacity.
fn dp_shape(inst: &Instance) -> (u64, usize) {
    let unit = inst.vals.iter().flatten().flatten().fold(0, |g, v| gcd(g, v.1)).max(1);
    let max_total: u64 = inst.vals.iter().map(|r| r.iter().flatten().map(|v| v.1).max().unwrap()).sum();
    (unit, (inst.budget.min(max_total) / unit) as usize)
}

/// Compare two partial choice vectors held as back-pointer chains.
fn chain_cmp(back: &[Vec<u32>], costs: &[Vec<Option<u64>>], mut l: usize, mut wa: usize, mut wb: usize) -> Ordering {
    // Walk both chains from the last layer down, remembering the choices, then
    // compare front to back.
    let mut a = Vec::new();
    let mut b = Vec::new();
    loop {
        let (ja, jb) = (back[l][wa] as usize, back[l][wb] as usize);
        a.push(ja);
        b.push(jb);
        if l == 0 {
            break;
        }
        wa -= costs[l][ja].unwrap() as usize;
        wb -= costs[l][jb].unwrap() as usize;
        l -= 1;
    }
    a.iter().rev().cmp(b.iter().rev())
}

fn dp_solve(inst: &Instance, unit: u64, cap: usize) -> Vec<usize> {
    const NONE: u32 = u32::MAX;
    let layers = inst.vals.len();
    let costs: Vec<Vec<Option<u64>>> =
        inst.vals.iter().map(|r| r.iter().map(|v| v.map(|v| v.1 / unit)).collect()).collect();
    let mut back: Vec<Vec<u32>> = Vec::with_capacity(layers);
    let mut prev: Vec<f64> = Vec::new();
    for l in 0..layers {
        let mut cur = vec![f64::INFINITY; cap + 1];
        let mut choice = vec![NONE; cap + 1];
        for w in 0..=cap {
            for (j, v) in inst.vals[l].iter().enumerate() {
                let Some((val, _)) = *v else { continue };
                let c = costs[l][j].unwrap() as usize;
                if c > w {
                    continue;
                }
                let cand = if l == 0 {
                    if c != w {
                        continue;
                    }
                    val
                } else {
                    let p = prev[w - c];
                    if p == f64::INFINITY {
                        continue;
                    }
                    p + val
                };
                let replace = match choice[w] {
                    NONE => true,
                    old => match cand.total_cmp(&cur[w]) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal if l == 0 => j < old as usize,
                        Ordering::Equal => {
                            let oc = costs[l][old as usize].unwrap() as usize;
                            match chain_cmp(&back, &costs, l - 1, w - c, w - oc) {
                                Ordering::Less => true,
                                Ordering::Greater => false,
                                Ordering::Equal => j < old as usize,
                            }
                        }
                    },
                };
                if replace {
                    cur[w] = cand;
                    choice[w] = j as u32;
                }
            }
        }
        back.push(choice);
        prev = cur;
    }
    // Lowest objective, then fewest bits; each final state holds one vector.
    let best_w = (0..=cap)
        .filter(|&w| back[layers - 1][w] != NONE)
        .min_by(|&a, &b| prev[a].total_cmp(&prev[b]).then(a.cmp(&b)))
        .expect("feasible instance has a final state");
    let mut out = vec![0; layers];
    let mut w = best_w;
    for l in (0..layers).rev() {
        let j = back[l][w] as usize;
        out[l] = j;
        w -= costs[l][j].unwrap() as usize;
    }
    out
}

fn frontier_solve(inst: &Instance) -> Vec<usize> {
    // Each entry: (objective, cost, choice prefix). Kept sorted by cost with
    // strictly decreasing objective, so no entry is dominated.
    let mut front: Vec<(f64, u64, Vec<usize>)> = vec![(0.0, 0, Vec::new())];
    for row in &inst.vals {
        let mut next: Vec<(f64, u64, Vec<usize>)> = Vec::new();
        for (o, c, prefix) in &front {
            for (j, v) in row.iter().enumerate() {
                let Some((val, cost)) = *v else { continue };
                if c + cost > inst.budget {
                    continue;
                }
                let mut p = prefix.clone();
                p.push(j);
                next.push((o + val, c + cost, p));
            }
        }
        next.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.total_cmp(&b.0)).then(a.2.cmp(&b.2)));
        let mut kept: Vec<(f64, u64, Vec<usize>)> = Vec::new();
        for e in next {
            if kept.last().is_none_or(|k| e.0 < k.0) {
                kept.push(e);
            }
        }
        front = kept;
    }
    // Frontier objectives strictly decrease with cost: the last entry is optimal
    // and no cheaper entry ties it.
    front.pop().expect("feasible instance has a frontier").2
}

/// Exhaustive search with the same tie rule, for verification.
pub fn brute_force_alloc(menu: &QuantMenu, alphas: &AlphaVector, b_max: f64) -> Result<Allocation> {
    menu.validate()?;
    if let Some(l) = menu.cells.iter().position(|r| r.iter().all(Option::is_none)) {
        return Err(Error::TooLarge(format!("layer {l} has an empty option set; refusing to enumerate")));
    }
    let space = (menu.options() as f64).powi(menu.layers() as i32);
    if space > 1e7 {
        return Err(Error::TooLarge(format!("{space:.0} assignments exceed the 1e7 enumeration limit")));
    }
    let inst = instance(menu, alphas, b_max)?;
    let (layers, options) = (inst.vals.len(), menu.options());
    let mut cur = vec![0usize; layers];
    let mut best: Option<(f64, u64, Vec<usize>)> = None;
    loop {
        if cur.iter().enumerate().all(|(l, &j)| inst.vals[l][j].is_some()) {
            let (o, c) = objective(&inst, &cur);
            // Odometer order is lexicographic, so only strict improvements replace.
            if c <= inst.budget && best.as_ref().is_none_or(|b| better((o, c), (b.0, b.1)) == Ordering::Less) {
                best = Some((o, c, cur.clone()));
            }
        }
        let mut l = layers;
        loop {
            if l == 0 {
                return Ok(finish(&inst, best.expect("feasible instance has a solution").2));
            }
            l -= 1;
            cur[l] += 1;
            if cur[l] < options {
                break;
            }
            cur[l] = 0;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub b_max: f64,
    pub allocation: Option<Allocation>,
    /// Set when this budget could not be solved, e.g. infeasible.
    pub error: Option<String>,
    pub min_avg_bits: Option<f64>,
}

/// Solve each budget in ascending order; per-budget failures are recorded.
pub fn predicted_curve(menu: &QuantMenu, alphas: &AlphaVector, budgets: &[f64]) -> Result<Vec<CurvePoint>> {
    if budgets.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(invalid("budgets must be sorted ascending"));
    }
    Ok(budgets
        .iter()
        .map(|&b| match solve_mckp(menu, alphas, b) {
            Ok(a) => CurvePoint { b_max: b, allocation: Some(a), error: None, min_avg_bits: None },
            Err(e) => CurvePoint {
                b_max: b,
                allocation: None,
                min_avg_bits: match e {
                    Error::Infeasible { min_avg_bits } => Some(min_avg_bits),
                    _ => None,
                },
                error: Some(e.to_string()),
            },
        })
        .collect())
}
