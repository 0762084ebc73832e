use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use higgs::allocator::{build_menu, predicted_curve, solve_mckp, MenuOption, QuantMenu};
use higgs::grids::{
    build_af_grid, build_nf_grid, build_uniform_constrained, clvq_build, estimate_grid_mse, grid_crc, grid_to_bytes,
    grid_to_json, lloyd_max_1d, ClvqParams, Grid,
};
use higgs::hadamard::RhtSeed;
use higgs::harness::{run_allocation_experiment, run_linearity_experiment, ExperimentSpec, SweepConfig};
use higgs::linearity::{calibrate_alphas, AlphaVector, CalibrationConfig, KlObjective, LayerQuant};
use higgs::quantizer::{
    decode, encode, measure_relative_error, tensor_from_bytes, tensor_to_bytes, QuantConfig, ScaleBits,
};
use serde::Serialize;
use serde_json::json;

use crate::files::{check_paths, read_bytes, read_grid, read_tensor, read_text, sidecar, write_atomic, write_tensor, Dtype, Tensor};
use crate::model::{Model, ModelArgs};
use crate::{parse_labeled, CliError, Common, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Builder {
    Clvq,
    Lloydmax,
    Uniform,
    Nf,
    Af,
}

#[derive(Debug, Args, Serialize)]
pub struct GridBuildArgs {
    #[arg(long, value_enum)]
    pub builder: Builder,
    /// Grid dimension.
    #[arg(short, default_value_t = 1)]
    pub p: usize,
    /// Number of points.
    #[arg(short, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Competitive-learning steps (clvq only).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Monte-Carlo samples for the reported standard error when p > 1.
    #[arg(long, default_value_t = 1 << 20)]
    pub mc_samples: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the points as JSON.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn grid_build(a: &GridBuildArgs, c: Common) -> Result<Report, CliError> {
    let mut outs = vec![a.out.as_path()];
    outs.extend(a.json_out.as_deref());
    check_paths(&[], &outs)?;
    let n = a.n as usize;
    if a.builder != Builder::Clvq && a.p != 1 {
        return Err(usage(format!("{:?} grids are scalar; use -p 1", a.builder)));
    }
    let grid = match a.builder {
        Builder::Clvq => clvq_build(a.p, n, c.seed, &ClvqParams { steps: a.steps, ..ClvqParams::default() })?,
        Builder::Lloydmax => lloyd_max_1d(n, 1e-12)?,
        Builder::Uniform => build_uniform_constrained(n)?,
        Builder::Nf => build_nf_grid(n)?,
        Builder::Af => build_af_grid(n, 1e-12)?,
    };
    // Scalar grids carry their exact Gaussian MSE.
    let stderr = if grid.dim() == 1 { 0.0 } else { estimate_grid_mse(&grid, a.mc_samples, c.seed)?.1 };
    write_atomic(&a.out, &grid_to_bytes(&grid))?;
    if let Some(p) = &a.json_out {
        write_atomic(p, grid_to_json(&grid)?.as_bytes())?;
    }
    let crc = grid_crc(&grid);
    let bits = (n as f64).log2() / a.p as f64;
    Ok(Report {
        lines: vec![
            format!("mse_per_dim = {:.6} ± {:.6}", grid.mse_per_dim(), stderr),
            format!("builder = {:?}, p = {}, n = {n}, bits/dim = {bits:.4}, crc = {crc:#010x}", a.builder, a.p),
            format!("seed = {}", c.seed),
            format!("wrote {}", a.out.display()),
        ],
        value: json!({
            "command": "grid build",
            "config": a,
            "seeds": { "seed": c.seed },
            "mse_per_dim": grid.mse_per_dim(),
            "stderr": stderr,
            "bits_per_dim": bits,
            "crc": crc,
            "points": grid.len(),
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ScaleArg {
    #[value(name = "16")]
    F16,
    #[value(name = "32")]
    F32,
    #[value(name = "64")]
    F64,
}

impl From<ScaleArg> for ScaleBits {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::F16 => ScaleBits::F16,
            ScaleArg::F32 => ScaleBits::F32,
            ScaleArg::F64 => ScaleBits::F64,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct QuantizeArgs {
    /// Tensor file: `.txt`, or a raw blob with a `.json` sidecar.
    #[arg(long)]
    pub input: PathBuf,
    /// HGRD grid file.
    #[arg(long, required_unless_present = "lossless", conflicts_with = "lossless")]
    pub grid: Option<PathBuf>,
    /// Keep rotated values at full precision.
    #[arg(long)]
    pub lossless: bool,
    /// Group size (power of two dividing the tensor length).
    #[arg(short, default_value_t = 1024)]
    pub g: usize,
    /// Scale precision in bits.
    #[arg(long, value_enum, default_value = "16")]
    pub scale_bits: ScaleArg,
    #[arg(long)]
    pub out: PathBuf,
}

fn quant_config(grid: Option<&Grid>, g: usize, seed: u64, scale_bits: ScaleArg) -> Result<QuantConfig, CliError> {
    Ok(match grid {
        Some(grid) => QuantConfig::for_grid(grid, g, RhtSeed(seed))?.with_scale_bits(scale_bits.into()),
        None => QuantConfig::lossless(g, RhtSeed(seed))?,
    })
}

pub fn quantize(a: &QuantizeArgs, c: Common) -> Result<Report, CliError> {
    let mut inputs = vec![a.input.as_path()];
    inputs.extend(a.grid.as_deref());
    check_paths(&inputs, &[&a.out])?;
    let tensor = read_tensor(&a.input)?;
    let grid = a.grid.as_deref().map(read_grid).transpose()?;
    let cfg = quant_config(grid.as_ref(), a.g, c.seed, a.scale_bits)?;
    let q = encode(&tensor.data, grid.as_ref(), &cfg)?.reshape(&tensor.shape)?;
    let t2 = measure_relative_error(&tensor.data, &q, grid.as_ref())?;
    write_atomic(&a.out, &tensor_to_bytes(&q))?;
    let eff = cfg.effective_bits();
    Ok(Report {
        lines: vec![
            format!("t2 = {t2:.6e}"),
            format!("effective_bits = {eff:.4}"),
            format!("payload_bits = {}", q.payload_bits()),
            format!("shape = {:?}, seed = {}", tensor.shape, c.seed),
            format!("wrote {}", a.out.display()),
        ],
        value: json!({
            "command": "quantize",
            "config": a,
            "seeds": { "seed": c.seed },
            "t2": t2,
            "effective_bits": eff,
            "payload_bits": q.payload_bits(),
            "shape": tensor.shape,
        }),
    })
}

#[derive(Debug, Args, Serialize)]
pub struct DequantizeArgs {
    /// HQTZ file.
    #[arg(long)]
    pub input: PathBuf,
    /// Grid the tensor was encoded with; omit for lossless tensors.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: Dtype,
}

pub fn dequantize(a: &DequantizeArgs, c: Common) -> Result<Report, CliError> {
    let mut inputs = vec![a.input.as_path()];
    inputs.extend(a.grid.as_deref());
    check_paths(&inputs, &[&a.out])?;
    let q = tensor_from_bytes(&read_bytes(&a.input)?)?;
    let grid = a.grid.as_deref().map(read_grid).transpose()?;
    let data = decode(&q, grid.as_ref())?;
    let t = Tensor { shape: q.shape().to_vec(), data };
    write_tensor(&a.out, &t, a.dtype)?;
    Ok(Report {
        lines: vec![format!("shape = {:?}", t.shape), format!("wrote {}", a.out.display())],
        value: json!({
            "command": "dequantize",
            "config": a,
            "seeds": { "seed": c.seed, "rht_seed": q.config().seed.0 },
            "shape": t.shape,
        }),
    })
}

#[derive(Debug, Args, Serialize)]
pub struct MenuBuildArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Menu option as LABEL=GRID.hgrd, or LABEL=lossless.
    #[arg(long = "option", value_parser = parse_labeled, required = true)]
    pub options: Vec<(String, PathBuf)>,
    #[arg(short, default_value_t = 1024)]
    pub g: usize,
    #[arg(long, value_enum, default_value = "16")]
    pub scale_bits: ScaleArg,
    /// Menu CSV; the header is written to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

fn load_options(
    specs: &[(String, PathBuf)],
    g: usize,
    seed: u64,
    scale_bits: ScaleArg,
) -> Result<Vec<MenuOption>, CliError> {
    let grids: Vec<&Path> = specs.iter().map(|(_, p)| p.as_path()).filter(|p| *p != Path::new("lossless")).collect();
    check_paths(&grids, &[])?;
    specs
        .iter()
        .map(|(label, path)| {
            let grid = if path == Path::new("lossless") { None } else { Some(read_grid(path)?) };
            let cfg = quant_config(grid.as_ref(), g, seed, scale_bits)?;
            Ok(MenuOption::new(label.clone(), grid, cfg))
        })
        .collect()
}

pub fn menu_build(a: &MenuBuildArgs, c: Common) -> Result<Report, CliError> {
    let header = sidecar(&a.out);
    check_paths(&[], &[&a.out, &header])?;
    let options = load_options(&a.options, a.g, c.seed, a.scale_bits)?;
    let model = a.model.build(c.seed)?;
    let menu = build_menu(model.as_loss(), &options)?;
    write_atomic(&a.out, menu.to_csv()?.as_bytes())?;
    write_atomic(&header, menu.header_json()?.as_bytes())?;
    let mut lines = vec![format!("{} layers × {} options, seed = {}", menu.layers(), menu.options(), c.seed)];
    for (j, label) in menu.labels.iter().enumerate() {
        let t2: Vec<String> =
            (0..menu.layers()).map(|l| menu.cells[l][j].map_or("-".into(), |x| format!("{:.4e}", x.t2))).collect();
        lines.push(format!("{label} ({:.4} bits): t2 = [{}]", menu.bits[j], t2.join(", ")));
    }
    lines.push(format!("wrote {} and {}", a.out.display(), header.display()));
    Ok(Report {
        lines,
        value: json!({
            "command": "menu build",
            "config": a,
            "seeds": { "seed": c.seed, "model_seed": a.model.seed(c.seed) },
            "labels": menu.labels,
            "bits": menu.bits,
            "cells": menu.cells,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Loss,
    Kl,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrationArgs {
    /// Number of noise levels.
    #[arg(long, default_value_t = 15)]
    pub levels: usize,
    /// Noise range `lo,hi` for the relative level t.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.01, 0.2])]
    pub range: Vec<f64>,
    /// Noise draws per level.
    #[arg(long, default_value_t = 16)]
    pub cal_reps: usize,
    #[arg(long, value_enum, default_value = "loss")]
    pub objective: Objective,
    /// Random input rows for the KL objective.
    #[arg(long, default_value_t = 1024)]
    pub kl_rows: usize,
}

impl CalibrationArgs {
    fn config(&self, seed: u64) -> Result<CalibrationConfig, CliError> {
        let (lo, hi) = (self.range[0], self.range[1]);
        if self.levels == 0 {
            return Err(usage("--levels must be at least 1"));
        }
        let t_levels = higgs::linearity::uniform_levels(lo, hi, self.levels);
        Ok(CalibrationConfig { t_levels, reps: self.cal_reps, seed, range: (lo, hi) })
    }

    fn run(&self, model: &Model, seed: u64) -> Result<higgs::linearity::Calibration, CliError> {
        let cfg = self.config(seed)?;
        Ok(match (self.objective, model) {
            (Objective::Loss, m) => calibrate_alphas(m.as_loss(), &cfg)?,
            (Objective::Kl, Model::Tiny(t)) => {
                let kl = KlObjective::random_inputs(t.as_ref(), self.kl_rows, higgs_derive(seed, 0x6b1))?;
                calibrate_alphas(&kl, &cfg)?
            }
            (Objective::Kl, Model::Quadratic(_)) => return Err(usage("the KL objective needs a classifier model (--model tiny)")),
        })
    }
}

fn higgs_derive(seed: u64, key: u64) -> u64 {
    higgs::rng::derive(seed, &[key])
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
    /// Alpha JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-draw samples as CSV.
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
}

pub fn calibrate(a: &CalibrateArgs, c: Common) -> Result<Report, CliError> {
    let mut outs = vec![a.out.as_path()];
    outs.extend(a.samples_out.as_deref());
    check_paths(&[], &outs)?;
    a.calibration.config(c.seed)?;
    let model = a.model.build(c.seed)?;
    let cal = a.calibration.run(&model, c.seed)?;
    write_atomic(&a.out, cal.summary_json()?.as_bytes())?;
    if let Some(p) = &a.samples_out {
        write_atomic(p, cal.samples_csv()?.as_bytes())?;
    }
    let analytic = model.analytic_alphas();
    let mut lines = vec![format!("seed = {}, model_seed = {}", c.seed, a.model.seed(c.seed))];
    for (l, (alpha, fit)) in cal.alphas.alphas.iter().zip(&cal.alphas.fits).enumerate() {
        let r2 = fit.r2.map_or("undefined".into(), |r| format!("{r:.4}"));
        let mut line = format!("layer {l}: alpha = {alpha:.6} ± {:.2e}, R² = {r2}", fit.sampling_error);
        if let Some(an) = &analytic {
            line.push_str(&format!(", analytic = {:.6} (rel err {:.3e})", an[l], (alpha / an[l] - 1.0).abs()));
        }
        lines.push(line);
    }
    lines.push(format!("wrote {}", a.out.display()));
    Ok(Report {
        lines,
        value: json!({
            "command": "calibrate",
            "config": a,
            "seeds": { "seed": c.seed, "model_seed": a.model.seed(c.seed) },
            "alphas": cal.alphas.alphas,
            "r2": cal.alphas.fits.iter().map(|f| f.r2).collect::<Vec<_>>(),
            "analytic_alphas": analytic,
            "base_loss": cal.alphas.base_loss,
        }),
    })
}

#[derive(Debug, Args, Serialize)]
pub struct AllocateArgs {
    /// Menu CSV (header at `<menu>.json`).
    #[arg(long)]
    pub menu: PathBuf,
    /// Alpha JSON from `calibrate`.
    #[arg(long)]
    pub alphas: PathBuf,
    /// Average bits per parameter; repeat or comma-separate for a curve.
    #[arg(long = "budget", value_delimiter = ',', required = true)]
    pub budgets: Vec<f64>,
    /// Allocation (one budget) or curve (several) as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Predicted curve as CSV.
    #[arg(long)]
    pub curve_out: Option<PathBuf>,
}

fn load_menu(path: &Path) -> Result<QuantMenu, CliError> {
    let header = sidecar(path);
    check_paths(&[path, &header], &[])?;
    Ok(QuantMenu::from_csv(&read_text(path)?, &read_text(&header)?)?)
}

fn load_alphas(path: &Path) -> Result<AlphaVector, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Corrupt(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct CurveRow {
    b_max: f64,
    feasible: bool,
    avg_bits: Option<f64>,
    total_bits: Option<u64>,
    predicted_delta: Option<f64>,
    choice: String,
    min_avg_bits: Option<f64>,
}

/// One budget: exit 5 when infeasible. Several budgets: the predicted curve;
/// exit 5 only when no budget is feasible.
pub fn allocate(a: &AllocateArgs, c: Common) -> Result<Report, CliError> {
    let mut outs = Vec::new();
    outs.extend(a.out.as_deref());
    outs.extend(a.curve_out.as_deref());
    check_paths(&[&a.alphas], &outs)?;
    let menu = load_menu(&a.menu)?;
    let alphas = load_alphas(&a.alphas)?;
    if a.budgets.len() == 1 {
        let alloc = solve_mckp(&menu, &alphas, a.budgets[0])?;
        let labels: Vec<&str> = alloc.choice.iter().map(|&j| menu.labels[j].as_str()).collect();
        let value = json!({
            "command": "allocate",
            "config": a,
            "seeds": { "seed": c.seed, "alpha_seed": alphas.seed },
            "allocation": alloc,
            "labels": labels,
        });
        if let Some(p) = &a.out {
            write_atomic(p, serde_json::to_string_pretty(&value).map_err(|e| CliError::Lib(e.into()))?.as_bytes())?;
        }
        return Ok(Report {
            lines: vec![
                format!("budget = {} bits/param", a.budgets[0]),
                format!("choice = [{}]", labels.join(", ")),
                format!("avg_bits = {:.6}, total_bits = {}", alloc.avg_bits_per_param, alloc.total_bits),
                format!("predicted_delta = {:.6e}", alloc.predicted_delta),
            ],
            value,
        });
    }
    let mut budgets = a.budgets.clone();
    budgets.sort_by(f64::total_cmp);
    let curve = predicted_curve(&menu, &alphas, &budgets)?;
    let rows: Vec<CurveRow> = curve
        .iter()
        .map(|p| CurveRow {
            b_max: p.b_max,
            feasible: p.allocation.is_some(),
            avg_bits: p.allocation.as_ref().map(|x| x.avg_bits_per_param),
            total_bits: p.allocation.as_ref().map(|x| x.total_bits),
            predicted_delta: p.allocation.as_ref().map(|x| x.predicted_delta),
            choice: p
                .allocation
                .as_ref()
                .map(|x| x.choice.iter().map(|&j| menu.labels[j].as_str()).collect::<Vec<_>>().join("|"))
                .unwrap_or_default(),
            min_avg_bits: p.min_avg_bits,
        })
        .collect();
    if rows.iter().all(|r| !r.feasible) {
        let min = rows.iter().find_map(|r| r.min_avg_bits).unwrap_or(f64::NAN);
        return Err(CliError::Lib(higgs::Error::Infeasible { min_avg_bits: min }));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::Lib(e.into()))?;
    }
    let csv_text = String::from_utf8(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)
        .map_err(|e| CliError::Io(e.to_string()))?;
    let value = json!({
        "command": "allocate",
        "config": a,
        "seeds": { "seed": c.seed, "alpha_seed": alphas.seed },
        "curve": rows,
    });
    if let Some(p) = &a.curve_out {
        write_atomic(p, csv_text.as_bytes())?;
    }
    if let Some(p) = &a.out {
        write_atomic(p, serde_json::to_string_pretty(&value).map_err(|e| CliError::Lib(e.into()))?.as_bytes())?;
    }
    let mut lines = vec!["b_max  avg_bits  predicted_delta  choice".to_string()];
    for r in &rows {
        lines.push(match r.predicted_delta {
            Some(d) => format!("{:.4}  {:.4}  {:.6e}  {}", r.b_max, r.avg_bits.unwrap(), d, r.choice),
            None => format!("{:.4}  infeasible (minimum {:.4})", r.b_max, r.min_avg_bits.unwrap_or(f64::NAN)),
        });
    }
    Ok(Report { lines, value })
}

#[derive(Debug, Args, Serialize)]
pub struct LinearityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Alpha JSON; calibrated inline when omitted.
    #[arg(long)]
    pub alphas: Option<PathBuf>,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
    /// Uniform quantization config as LABEL=GRID.hgrd.
    #[arg(long = "grid", value_parser = parse_labeled)]
    pub grids: Vec<(String, PathBuf)>,
    #[arg(short, default_value_t = 1024)]
    pub g: usize,
    #[arg(long, value_enum, default_value = "16")]
    pub scale_bits: ScaleArg,
    /// Global noise levels t.
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2, 0.3, 0.5])]
    pub noise: Vec<f64>,
    /// Noise draws per level and RHT seeds per config.
    #[arg(long, default_value_t = 8)]
    pub reps: usize,
    /// Report CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Budgets for the measured allocation curve.
    #[arg(long = "budget", value_delimiter = ',')]
    pub budgets: Vec<f64>,
    /// Allocation-curve CSV; required with --budget.
    #[arg(long, requires = "budgets")]
    pub alloc_out: Option<PathBuf>,
}

pub fn linearity(a: &LinearityArgs, c: Common) -> Result<Report, CliError> {
    let mut outs = vec![a.out.as_path()];
    outs.extend(a.alloc_out.as_deref());
    let mut ins = Vec::new();
    ins.extend(a.alphas.as_deref());
    check_paths(&ins, &outs)?;
    if !a.budgets.is_empty() && (a.alloc_out.is_none() || a.grids.is_empty()) {
        return Err(usage("--budget needs --alloc-out and at least one --grid"));
    }
    let options = load_options(&a.grids, a.g, c.seed, a.scale_bits)?;
    if a.alphas.is_none() {
        a.calibration.config(c.seed)?;
    }
    let model = a.model.build(c.seed)?;
    let alphas = match &a.alphas {
        Some(p) => load_alphas(p)?,
        None => a.calibration.run(&model, c.seed)?.alphas,
    };
    let layers = model.as_loss().weights().len();
    let configs: Vec<SweepConfig> = options
        .iter()
        .map(|o| SweepConfig {
            id: o.label.clone(),
            plan: vec![LayerQuant { grid: o.grid.clone(), config: o.config }; layers],
        })
        .collect();
    let spec = ExperimentSpec { configs, noise_levels: a.noise.clone(), reps: a.reps, seed: c.seed };
    let report = run_linearity_experiment(model.as_loss(), &alphas, &spec)?;
    write_atomic(&a.out, report.to_csv()?.as_bytes())?;
    let mut lines = vec![format!("seed = {}, model_seed = {}, base_loss = {:.6}", c.seed, a.model.seed(c.seed), report.base_loss)];
    for r in report.global_rows() {
        lines.push(format!(
            "{:<16} t2 = {:.4e}  measured = {:.4e}  predicted = {:.4e}  {}{}",
            r.config_id,
            r.t2,
            r.measured_delta,
            r.predicted_delta,
            if r.in_range { "in-range" } else { "out-of-range" },
            if r.diverged { "  DIVERGED" } else { "" }
        ));
    }
    lines.push(format!("wrote {}", a.out.display()));
    let mut alloc_rows = None;
    if let Some(p) = &a.alloc_out {
        let ar = run_allocation_experiment(model.as_loss(), &alphas, &options, &a.budgets, a.reps, c.seed)?;
        write_atomic(p, ar.to_csv()?.as_bytes())?;
        lines.push(format!("wrote {}", p.display()));
        alloc_rows = Some(ar.rows);
    }
    Ok(Report {
        lines,
        value: json!({
            "command": "linearity",
            "config": a,
            "seeds": { "seed": c.seed, "model_seed": a.model.seed(c.seed) },
            "alphas": alphas.alphas,
            "base_loss": report.base_loss,
            "rows": report.rows,
            "allocation": alloc_rows,
        }),
    })
}
