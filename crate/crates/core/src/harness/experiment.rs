//! Measured-vs-predicted loss sweeps over noise levels, uniform quantization
//! configs and allocator choices.

use rayon::prelude::*;
use serde::Serialize;

use crate::allocator::{build_menu, predicted_curve, MenuOption, QuantMenu};
use crate::error::{invalid, Error, Result};
use crate::hadamard::RhtSeed;
use crate::linearity::{gaussian_noise_insert, quantize_layers, AlphaVector, LayerQuant, LossModel};
use crate::rng;

/// Relative prediction error above which a row is flagged as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 0.25;

/// One uniform quantization configuration applied to every layer.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub id: String,
    pub plan: Vec<LayerQuant>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub configs: Vec<SweepConfig>,
    pub noise_levels: Vec<f64>,
    /// Noise draws per level, and RHT seeds per quantization config.
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub config_id: String,
    pub avg_bits: Option<f64>,
    pub layer_or_global: String,
    pub t2: f64,
    pub measured_delta: f64,
    pub predicted_delta: f64,
    pub in_range: bool,
    pub diverged: bool,
}

impl ReportRow {
    pub fn relative_error(&self) -> f64 {
        relative_error(self.measured_delta, self.predicted_delta)
    }
}

fn relative_error(measured: f64, predicted: f64) -> f64 {
    if measured == predicted {
        0.0
    } else {
        (measured - predicted).abs() / measured.abs()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LinearityReport {
    pub base_loss: f64,
    pub rows: Vec<ReportRow>,
}

fn rows_to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header).map_err(|e| Error::Serde(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

impl LinearityReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(
            &self.rows,
            &["config_id", "avg_bits", "layer_or_global", "t2", "measured_delta", "predicted_delta", "in_range", "diverged"],
        )
    }

    pub fn global_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.layer_or_global == "global")
    }
}

fn with_seed(plan: &[LayerQuant], seed: u64, keys: &[u64]) -> Vec<LayerQuant> {
    plan.iter()
        .enumerate()
        .map(|(l, lq)| {
            let mut lq = lq.clone();
            let mut k = keys.to_vec();
            k.push(l as u64);
            lq.config.seed = RhtSeed(rng::derive(seed, &k));
            lq
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Measured-vs-predicted sweep: global noise rows at every level, plus global and
/// per-layer rows for every quantization config, each averaged over `reps`.
///
/// A row is in range when every participating `t` is at most the upper end
/// of the calibrated range.
pub fn run_linearity_experiment(
    model: &dyn LossModel,
    alphas: &AlphaVector,
    spec: &ExperimentSpec,
) -> Result<LinearityReport> {
    let weights = model.weights();
    let layers = weights.len();
    if alphas.len() != layers {
        return Err(invalid(format!("{} alphas for {layers} layers", alphas.len())));
    }
    let base = model.loss(weights)?;
    let mut report = LinearityReport { base_loss: base, rows: Vec::new() };
    if spec.noise_levels.is_empty() && spec.configs.is_empty() {
        return Ok(report);
    }
    if spec.reps == 0 {
        return Err(invalid("reps must be at least 1"));
    }
    let t_max2 = alphas.range.1 * alphas.range.1;
    let total: usize = weights.iter().map(Vec::len).sum();
    let row = |config_id: &str, avg_bits, scope: String, t2: f64, measured: f64, predicted: f64, in_range| ReportRow {
        config_id: config_id.to_string(),
        avg_bits,
        layer_or_global: scope,
        t2,
        measured_delta: measured,
        predicted_delta: predicted,
        in_range,
        diverged: relative_error(measured, predicted) > DIVERGENCE_THRESHOLD,
    };

    for (j, &t) in spec.noise_levels.iter().enumerate() {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(invalid(format!("noise level {t} must be finite and non-negative")));
        }
        let deltas: Vec<f64> = (0..spec.reps)
            .into_par_iter()
            .map(|r| {
                let w: Vec<Vec<f64>> = weights
                    .iter()
                    .enumerate()
                    .map(|(l, w)| gaussian_noise_insert(w, t, rng::derive(spec.seed, &[0x0153, j as u64, r as u64, l as u64])))
                    .collect::<Result<_>>()?;
                Ok(model.loss(&w)? - base)
            })
            .collect::<Result<_>>()?;
        let predicted: f64 = alphas.alphas.iter().map(|a| a * t * t).sum();
        report.rows.push(row(&format!("noise_t{t}"), None, "global".into(), t * t, mean(&deltas), predicted, t * t <= t_max2));
    }

    for (c, cfg) in spec.configs.iter().enumerate() {
        if cfg.plan.len() != layers {
            return Err(invalid(format!("config {} has {} plan entries for {layers} layers", cfg.id, cfg.plan.len())));
        }
        let bits: u64 = cfg.plan.iter().zip(weights).map(|(lq, w)| lq.config.cost_bits(w.len())).sum();
        let avg_bits = bits as f64 / total as f64;
        // Per rep: per-layer (decoded, t²) under a fresh RHT seed.
        let runs: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..spec.reps)
            .into_par_iter()
            .map(|r| quantize_layers(weights, &with_seed(&cfg.plan, spec.seed, &[0x0c0f, c as u64, r as u64])))
            .collect::<Result<_>>()?;
        let t2: Vec<f64> = (0..layers).map(|l| mean(&runs.iter().map(|(_, t)| t[l]).collect::<Vec<_>>())).collect();
        let global: Vec<f64> = runs.par_iter().map(|(w, _)| Ok(model.loss(w)? - base)).collect::<Result<_>>()?;
        let predicted: f64 = alphas.alphas.iter().zip(&t2).map(|(a, t)| a * t).sum();
        let mean_t2 = t2.iter().zip(weights).map(|(t, w)| t * w.len() as f64).sum::<f64>() / total as f64;
        let all_in = t2.iter().all(|&t| t <= t_max2);
        report.rows.push(row(&cfg.id, Some(avg_bits), "global".into(), mean_t2, mean(&global), predicted, all_in));
        for l in 0..layers {
            let deltas: Vec<f64> = runs
                .par_iter()
                .map(|(dec, _)| {
                    let mut w = weights.to_vec();
                    w[l] = dec[l].clone();
                    Ok(model.loss(&w)? - base)
                })
                .collect::<Result<_>>()?;
            report.rows.push(row(
                &cfg.id,
                Some(avg_bits),
                format!("layer{l}"),
                t2[l],
                mean(&deltas),
                alphas.alphas[l] * t2[l],
                t2[l] <= t_max2,
            ));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationRow {
    pub b_max: f64,
    pub avg_bits: Option<f64>,
    /// Option labels per layer, `|`-separated.
    pub choice: String,
    pub predicted_delta: Option<f64>,
    pub measured_delta: Option<f64>,
    pub in_range: bool,
    pub diverged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AllocationReport {
    pub menu: QuantMenu,
    pub rows: Vec<AllocationRow>,
}

impl AllocationReport {
    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(
            &self.rows,
            &["b_max", "avg_bits", "choice", "predicted_delta", "measured_delta", "in_range", "diverged", "error"],
        )
    }
}

/// Solve the allocation at each budget, quantize with the chosen options
/// under `reps` fresh RHT seeds, and compare measured to predicted loss.
pub fn run_allocation_experiment(
    model: &dyn LossModel,
    alphas: &AlphaVector,
    options: &[MenuOption],
    budgets: &[f64],
    reps: usize,
    seed: u64,
) -> Result<AllocationReport> {
    if reps == 0 {
        return Err(invalid("reps must be at least 1"));
    }
    let menu = build_menu(model, options)?;
    let curve = predicted_curve(&menu, alphas, budgets)?;
    let weights = model.weights();
    let base = model.loss(weights)?;
    let t_max2 = alphas.range.1 * alphas.range.1;
    let mut rows = Vec::with_capacity(curve.len());
    for (b, point) in curve.into_iter().enumerate() {
        let Some(a) = point.allocation else {
            rows.push(AllocationRow {
                b_max: point.b_max,
                avg_bits: None,
                choice: String::new(),
                predicted_delta: None,
                measured_delta: None,
                in_range: false,
                diverged: false,
                error: point.error,
            });
            continue;
        };
        let plan: Vec<LayerQuant> = a
            .choice
            .iter()
            .map(|&j| LayerQuant { grid: options[j].grid.clone(), config: options[j].config })
            .collect();
        let deltas: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let (w, _) = quantize_layers(weights, &with_seed(&plan, seed, &[0xa110, b as u64, r as u64]))?;
                Ok(model.loss(&w)? - base)
            })
            .collect::<Result<_>>()?;
        let measured = mean(&deltas);
        let in_range = a
            .choice
            .iter()
            .enumerate()
            .all(|(l, &j)| menu.cells[l][j].is_some_and(|c| c.t2 <= t_max2));
        rows.push(AllocationRow {
            b_max: point.b_max,
            avg_bits: Some(a.avg_bits_per_param),
            choice: a.choice.iter().map(|&j| menu.labels[j].as_str()).collect::<Vec<_>>().join("|"),
            predicted_delta: Some(a.predicted_delta),
            measured_delta: Some(measured),
            in_range,
            diverged: relative_error(measured, a.predicted_delta) > DIVERGENCE_THRESHOLD,
            error: None,
        });
    }
    Ok(AllocationReport { menu, rows })
}
