//! Linear error model: `E[φ(Ŵ)] ≈ φ(W★) + Σ_l α_l t_l²`.
//!
//! Per-layer coefficients are calibrated by inserting Gaussian noise of a
//! known relative size into one layer at a time and regressing the loss
//! increase on `t²` through the origin.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grids::Grid;
use crate::quantizer::{decode, encode, QuantConfig};
use crate::rng;

/// Which scalar the model reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveTag {
    Loss,
    Kl,
}

/// A scalar objective over an ordered list of flat weight blocks.
pub trait LossModel: Sync {
    /// Reference weights `W★`, one block per layer.
    fn weights(&self) -> &[Vec<f64>];

    fn loss(&self, weights: &[Vec<f64>]) -> Result<f64>;

    fn gradient(&self, _weights: &[Vec<f64>]) -> Option<Result<Vec<Vec<f64>>>> {
        None
    }

    fn objective(&self) -> ObjectiveTag {
        ObjectiveTag::Loss
    }

    fn layer_count(&self) -> usize {
        self.weights().len()
    }
}

/// A model producing class log-probabilities for input rows.
pub trait Classifier: LossModel {
    fn input_dim(&self) -> usize;
    fn classes(&self) -> usize;
    /// Row-major `rows × classes` log-probabilities.
    fn log_probs(&self, weights: &[Vec<f64>], inputs: &[f64]) -> Result<Vec<f64>>;
}

/// A model whose loss is a sum of per-sample terms.
pub trait PerSampleLoss {
    fn sample_count(&self) -> usize;
    /// Loss of the batch computed in one pass over all its samples.
    fn batch_loss(&self, batch: &[usize], form: BatchForm) -> Result<f64>;
    /// Loss of a single sample, evaluated on its own.
    fn sample_loss(&self, index: usize) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchForm {
    Sum,
    Mean,
}

fn frobenius(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `W + (t·‖W‖_F/√d)·Σ` with `Σ` i.i.d. standard normal.
pub fn gaussian_noise_insert(w: &[f64], t: f64, seed: u64) -> Result<Vec<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("noise level t = {t} must be finite and non-negative")));
    }
    if t == 0.0 {
        return Ok(w.to_vec());
    }
    let norm = frobenius(w);
    if norm == 0.0 || w.is_empty() {
        return Err(invalid("noise insertion needs a block with non-zero norm"));
    }
    let sigma = t * norm / (w.len() as f64).sqrt();
    let mut r = rng::stream(seed, &[0x9a15]);
    Ok(w
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(&mut r);
            x + sigma * z
        })
        .collect())
}

/// `J` noise levels evenly spaced on `[lo, hi]`.
pub fn uniform_levels(lo: f64, hi: f64, j: usize) -> Vec<f64> {
    if j == 1 {
        return vec![lo];
    }
    (0..j).map(|k| if k + 1 == j { hi } else { lo + (hi - lo) * k as f64 / (j - 1) as f64 }).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub t_levels: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    /// Declared applicability range of `t`; every level must lie inside.
    pub range: (f64, f64),
}

impl CalibrationConfig {
    pub const DEFAULT_RANGE: (f64, f64) = (0.01, 0.2);

    /// `j` evenly spaced levels over the default range, 16 repetitions.
    pub fn uniform(j: usize, seed: u64) -> Self {
        let (lo, hi) = Self::DEFAULT_RANGE;
        Self { t_levels: uniform_levels(lo, hi, j), reps: 16, seed, range: Self::DEFAULT_RANGE }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range;
        if !(lo > 0.0 && lo < hi) {
            return Err(invalid(format!("bad applicability range ({lo}, {hi})")));
        }
        if self.t_levels.len() < 2 {
            return Err(invalid("calibration needs at least two noise levels"));
        }
        if self.reps == 0 {
            return Err(invalid("calibration needs at least one repetition"));
        }
        if let Some(t) = self.t_levels.iter().find(|&&t| !(t > 0.0 && t >= lo && t <= hi)) {
            return Err(invalid(format!("noise level {t} outside the range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Least-squares fit of `Δ = α·t²` through the origin, with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Coefficient of determination about the mean of `Δ`; `None` when all `Δ` are equal.
    pub r2: Option<f64>,
    pub residuals: Vec<f64>,
    /// Standard error of `α` from the fit residuals.
    pub std_error: f64,
    /// Standard error of `α` from the spread of replicates at each level;
    /// 0 when there are no replicates to compare.
    pub sampling_error: f64,
    /// Diagnostic fit `Δ = a + b·t²`, as `(a, b)`.
    pub intercept_fit: (f64, f64),
    /// `R² < 0.9`, or undefined.
    pub degraded: bool,
}

/// Fit `Δ_j = α·t_j²` by least squares through the origin.
pub fn fit_through_origin(t2: &[f64], delta: &[f64]) -> (f64, FitDiagnostics) {
    let s44: f64 = t2.iter().map(|x| x * x).sum();
    let s2d: f64 = t2.iter().zip(delta).map(|(x, d)| x * d).sum();
    let all_zero = delta.iter().all(|&d| d == 0.0);
    let alpha = if all_zero || s44 == 0.0 { 0.0 } else { s2d / s44 };
    let residuals: Vec<f64> = t2.iter().zip(delta).map(|(x, d)| d - alpha * x).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let m = delta.len() as f64;
    let mean = delta.iter().sum::<f64>() / m;
    let ss_tot: f64 = delta.iter().map(|d| (d - mean) * (d - mean)).sum();
    let r2 = (ss_tot > 0.0 && !all_zero).then(|| 1.0 - ss_res / ss_tot);
    let std_error = if m > 1.0 && s44 > 0.0 { (ss_res / (m - 1.0) / s44).sqrt() } else { 0.0 };

    let tm = t2.iter().sum::<f64>() / m;
    let sxx: f64 = t2.iter().map(|x| (x - tm) * (x - tm)).sum();
    let sxy: f64 = t2.iter().zip(delta).map(|(x, d)| (x - tm) * (d - mean)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let diag = FitDiagnostics {
        r2,
        residuals,
        std_error,
        sampling_error: 0.0,
        intercept_fit: (mean - b * tm, b),
        degraded: r2.is_none_or(|r| r < 0.9),
    };
    (alpha, diag)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector {
    pub alphas: Vec<f64>,
    pub fits: Vec<FitDiagnostics>,
    /// Per-layer mean `Δ` at each level.
    pub mean_deltas: Vec<Vec<f64>>,
    pub t_levels: Vec<f64>,
    pub reps: usize,
    pub range: (f64, f64),
    pub objective: ObjectiveTag,
    pub seed: u64,
    pub base_loss: f64,
}

impl AlphaVector {
    /// Coefficients without calibration metadata, e.g. analytic values.
    pub fn from_alphas(alphas: Vec<f64>, objective: ObjectiveTag) -> Self {
        Self {
            fits: Vec::new(),
            mean_deltas: Vec::new(),
            t_levels: Vec::new(),
            reps: 0,
            range: CalibrationConfig::DEFAULT_RANGE,
            objective,
            seed: 0,
            base_loss: 0.0,
            alphas,
        }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

/// One noisy evaluation: layer `layer` perturbed at level `t`, repetition `rep`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub layer: usize,
    pub t: f64,
    pub rep: usize,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub alphas: AlphaVector,
    pub samples: Vec<CalibrationSample>,
}

impl Calibration {
    /// CSV with columns `layer,t,rep,delta`.
    pub fn samples_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.samples {
            w.serialize(s)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Serde(e.to_string()))?)
            .map_err(|e| Error::Serde(e.to_string()))
    }

    /// JSON summary: alphas, fit diagnostics, levels, range, objective and seed.
    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.alphas)?)
    }
}

fn with_layer(base: &[Vec<f64>], layer: usize, block: Vec<f64>) -> Vec<Vec<f64>> {
    let mut w = base.to_vec();
    w[layer] = block;
    w
}

/// Calibrate one `α_l` per layer by single-layer noise insertion.
///
/// The noise draw for `(layer, level, rep)` uses its own derived seed.
pub fn calibrate_alphas(model: &dyn LossModel, cfg: &CalibrationConfig) -> Result<Calibration> {
    cfg.validate()?;
    let base = model.weights();
    if base.is_empty() {
        return Err(invalid("model has no layers"));
    }
    let base_loss = model.loss(base)?;
    let (layers, levels, reps) = (base.len(), cfg.t_levels.len(), cfg.reps);
    let tasks: Vec<(usize, usize, usize)> = (0..layers)
        .flat_map(|l| (0..levels).flat_map(move |j| (0..reps).map(move |r| (l, j, r))))
        .collect();
    let samples: Vec<CalibrationSample> = tasks
        .par_iter()
        .map(|&(l, j, r)| {
            let t = cfg.t_levels[j];
            let seed = rng::derive(cfg.seed, &[l as u64, j as u64, r as u64]);
            let w = with_layer(base, l, gaussian_noise_insert(&base[l], t, seed)?);
            Ok(CalibrationSample { layer: l, t, rep: r, delta: model.loss(&w)? - base_loss })
        })
        .collect::<Result<_>>()?;

    let t2: Vec<f64> = cfg.t_levels.iter().map(|t| t * t).collect();
    let mut alphas = Vec::with_capacity(layers);
    let mut fits = Vec::with_capacity(layers);
    let mut mean_deltas = Vec::with_capacity(layers);
    for l in 0..layers {
        let means: Vec<f64> = (0..levels)
            .map(|j| {
                let start = (l * levels + j) * reps;
                samples[start..start + reps].iter().map(|s| s.delta).sum::<f64>() / reps as f64
            })
            .collect();
        let (a, mut fit) = fit_through_origin(&t2, &means);
        if reps > 1 {
            // Var(α̂) = Σ t⁴·Var(mean Δ_j) / (Σ t⁴)².
            let s44: f64 = t2.iter().map(|x| x * x).sum();
            let v: f64 = (0..levels)
                .map(|j| {
                    let start = (l * levels + j) * reps;
                    let ss: f64 = samples[start..start + reps].iter().map(|s| (s.delta - means[j]).powi(2)).sum();
                    t2[j] * t2[j] * ss / ((reps - 1) * reps) as f64
                })
                .sum();
            if s44 > 0.0 {
                fit.sampling_error = v.sqrt() / s44;
            }
        }
        alphas.push(a);
        fits.push(fit);
        mean_deltas.push(means);
    }
    Ok(Calibration {
        alphas: AlphaVector {
            alphas,
            fits,
            mean_deltas,
            t_levels: cfg.t_levels.clone(),
            reps,
            range: cfg.range,
            objective: model.objective(),
            seed: cfg.seed,
            base_loss,
        },
        samples,
    })
}

/// `base + Σ_l α_l t_l²`.
pub fn predict_loss(base_loss: f64, alphas: &AlphaVector, t_squared: &[f64]) -> Result<f64> {
    if alphas.len() != t_squared.len() {
        return Err(invalid(format!("{} alphas but {} error terms", alphas.len(), t_squared.len())));
    }
    Ok(base_loss + alphas.alphas.iter().zip(t_squared).map(|(a, t)| a * t).sum::<f64>())
}

/// How one layer is quantized. `grid` is `None` only for a lossless config.
#[derive(Debug, Clone)]
pub struct LayerQuant {
    pub grid: Option<Grid>,
    pub config: QuantConfig,
}

/// Quantize-dequantize every layer; returns the reconstructed weights and per-layer `t²`.
pub fn quantize_layers(weights: &[Vec<f64>], plan: &[LayerQuant]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if weights.len() != plan.len() {
        return Err(invalid(format!("{} layers but {} plan entries", weights.len(), plan.len())));
    }
    let out: Vec<(Vec<f64>, f64)> = weights
        .par_iter()
        .zip(plan)
        .map(|(w, lq)| {
            let q = encode(w, lq.grid.as_ref(), &lq.config)?;
            let w_hat = decode(&q, lq.grid.as_ref())?;
            let norm2: f64 = w.iter().map(|x| x * x).sum();
            if norm2 == 0.0 {
                return Err(invalid("relative error undefined for a zero layer"));
            }
            let err: f64 = w.iter().zip(&w_hat).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok((w_hat, err / norm2))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

/// Per-layer relative quantization error `t_l²` under `plan`.
pub fn measure_layer_errors(model: &dyn LossModel, plan: &[LayerQuant]) -> Result<Vec<f64>> {
    Ok(quantize_layers(model.weights(), plan)?.1)
}

/// Mean over rows of `KL(softmax(ref) ‖ softmax(pert))` from log-probabilities.
fn mean_kl(reference: &[f64], perturbed: &[f64], classes: usize) -> Result<f64> {
    let rows = reference.len() / classes;
    let mut total = 0.0;
    for (a, b) in reference.chunks(classes).zip(perturbed.chunks(classes)) {
        let kl: f64 = a.iter().zip(b).map(|(la, lb)| la.exp() * (la - lb)).sum();
        total += kl.max(0.0);
    }
    let kl = total / rows as f64;
    if !kl.is_finite() {
        return Err(Error::Numeric("KL divergence is not finite".into()));
    }
    Ok(kl)
}

/// Mean KL from the reference model's predictions to those under `weights`.
pub fn kl_objective<M: Classifier + ?Sized>(model: &M, weights: &[Vec<f64>], inputs: &[f64]) -> Result<f64> {
    let reference = model.log_probs(model.weights(), inputs)?;
    let perturbed = model.log_probs(weights, inputs)?;
    mean_kl(&reference, &perturbed, model.classes())
}

/// Data-free objective: KL to the reference model on a fixed batch of random inputs.
pub struct KlObjective<'a, M: Classifier> {
    model: &'a M,
    inputs: Vec<f64>,
    reference: Vec<f64>,
}

impl<'a, M: Classifier> KlObjective<'a, M> {
    /// `rows` inputs drawn i.i.d. from `N(0, I)` under `seed`.
    pub fn random_inputs(model: &'a M, rows: usize, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, &[0x0b1e]);
        let inputs = (0..rows * model.input_dim()).map(|_| StandardNormal.sample(&mut r)).collect();
        Self::with_inputs(model, inputs)
    }

    pub fn with_inputs(model: &'a M, inputs: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() % model.input_dim() != 0 {
            return Err(invalid("input batch must be a non-empty whole number of rows"));
        }
        let reference = model.log_probs(model.weights(), &inputs)?;
        Ok(Self { model, inputs, reference })
    }
}

impl<M: Classifier> LossModel for KlObjective<'_, M> {
    fn weights(&self) -> &[Vec<f64>] {
        self.model.weights()
    }

    fn loss(&self, weights: &[Vec<f64>]) -> Result<f64> {
        let perturbed = self.model.log_probs(weights, &self.inputs)?;
        mean_kl(&self.reference, &perturbed, self.model.classes())
    }

    fn objective(&self) -> ObjectiveTag {
        ObjectiveTag::Kl
    }
}

/// Finite-difference Hessian block, scaled by the layer norms, with diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HessianProbe {
    /// Row-major `k × k`, entry `(a, b)` scaled by `‖W_{l_a}‖·‖W_{l_b}‖`.
    pub matrix: Vec<f64>,
    pub size: usize,
    pub gradient_norm: f64,
    /// `‖A − Aᵀ‖_F / ‖A‖_F`.
    pub symmetry_defect: f64,
    /// `Σ|off-diagonal| / Σ|diagonal|`.
    pub dominance_ratio: f64,
    /// `‖off-diagonal‖_F / ‖diagonal‖_F`.
    pub offdiag_mass: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

impl HessianProbe {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.matrix[a * self.size + b]
    }
}

/// Probe `D★ ∇²φ D★` on the coordinates `subset` (pairs of layer, index).
///
/// Uses central differences of the gradient when the model has one, double
/// central differences of the loss otherwise.
pub fn scaled_hessian_block(model: &dyn LossModel, subset: &[(usize, usize)], h: f64) -> Result<HessianProbe> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(invalid(format!("finite-difference step {h} must be positive")));
    }
    if subset.is_empty() || subset.len() > 2000 {
        return Err(invalid("subset size must be in 1..=2000"));
    }
    let base = model.weights();
    for &(l, i) in subset {
        if l >= base.len() || i >= base[l].len() {
            return Err(invalid(format!("coordinate ({l}, {i}) out of range")));
        }
    }
    let k = subset.len();
    let bump = |moves: &[(usize, f64)]| {
        let mut w = base.to_vec();
        for &(a, step) in moves {
            let (l, i) = subset[a];
            w[l][i] += step;
        }
        w
    };
    let mut raw = vec![0.0; k * k];
    let gradient_norm = match model.gradient(base) {
        Some(g0) => {
            let g0 = g0?;
            let cols: Vec<Vec<f64>> = (0..k)
                .into_par_iter()
                .map(|b| {
                    let gp = model.gradient(&bump(&[(b, h)])).expect("gradient available")?;
                    let gm = model.gradient(&bump(&[(b, -h)])).expect("gradient available")?;
                    Ok(subset.iter().map(|&(l, i)| (gp[l][i] - gm[l][i]) / (2.0 * h)).collect())
                })
                .collect::<Result<_>>()?;
            for (b, col) in cols.iter().enumerate() {
                for a in 0..k {
                    raw[a * k + b] = col[a];
                }
            }
            g0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
        }
        None => {
            let f0 = model.loss(base)?;
            let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a..k).map(move |b| (a, b))).collect();
            let vals: Vec<f64> = pairs
                .par_iter()
                .map(|&(a, b)| {
                    if a == b {
                        let fp = model.loss(&bump(&[(a, h)]))?;
                        let fm = model.loss(&bump(&[(a, -h)]))?;
                        Ok((fp - 2.0 * f0 + fm) / (h * h))
                    } else {
                        let f = |sa: f64, sb: f64| model.loss(&bump(&[(a, sa * h), (b, sb * h)]));
                        Ok((f(1.0, 1.0)? - f(1.0, -1.0)? - f(-1.0, 1.0)? + f(-1.0, -1.0)?) / (4.0 * h * h))
                    }
                })
                .collect::<Result<_>>()?;
            for (&(a, b), v) in pairs.iter().zip(vals) {
                raw[a * k + b] = v;
                raw[b * k + a] = v;
            }
            // Gradient norm over the subset only, by central differences.
            subset
                .iter()
                .enumerate()
                .map(|(a, _)| {
                    let d = (model.loss(&bump(&[(a, h)]))? - model.loss(&bump(&[(a, -h)]))?) / (2.0 * h);
                    Ok(d * d)
                })
                .sum::<Result<f64>>()?
                .sqrt()
        }
    };
    let norms: Vec<f64> = base.iter().map(|w| frobenius(w)).collect();
    let matrix: Vec<f64> = (0..k * k)
        .map(|e| raw[e] * norms[subset[e / k].0] * norms[subset[e % k].0])
        .collect();

    let fro = |f: &dyn Fn(usize, usize) -> f64| {
        (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).map(|(a, b)| f(a, b).powi(2)).sum::<f64>().sqrt()
    };
    let m = |a: usize, b: usize| matrix[a * k + b];
    let total = fro(&m);
    let symmetry_defect = if total > 0.0 { fro(&|a, b| m(a, b) - m(b, a)) / total } else { 0.0 };
    let diag_abs: f64 = (0..k).map(|a| m(a, a).abs()).sum();
    let off_abs: f64 = (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).filter(|(a, b)| a != b).map(|(a, b)| m(a, b).abs()).sum();
    let diag_fro = fro(&|a, b| if a == b { m(a, b) } else { 0.0 });
    let off_fro = fro(&|a, b| if a != b { m(a, b) } else { 0.0 });
    let sym = DMatrix::from_fn(k, k, |a, b| 0.5 * (m(a, b) + m(b, a)));
    let eig = SymmetricEigen::new(sym).eigenvalues;
    Ok(HessianProbe {
        size: k,
        gradient_norm,
        symmetry_defect,
        dominance_ratio: if diag_abs > 0.0 { off_abs / diag_abs } else { f64::INFINITY },
        offdiag_mass: if diag_fro > 0.0 { off_fro / diag_fro } else { f64::INFINITY },
        min_eigenvalue: eig.min(),
        max_eigenvalue: eig.max(),
        matrix,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdditivityReport {
    pub batch_size: usize,
    pub form: BatchForm,
    pub batch_loss: f64,
    pub sum_of_samples: f64,
    /// `|batch − Σ samples| / max(|Σ samples|, tiny)`.
    pub defect: f64,
    pub passed: bool,
}

/// Compare the loss of a batch against the sum of its per-sample losses.
pub fn batch_additivity_check(model: &dyn PerSampleLoss, batch: &[usize], form: BatchForm) -> Result<AdditivityReport> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= model.sample_count()) {
        return Err(invalid(format!("sample index {i} out of range")));
    }
    let full = model.batch_loss(batch, form)?;
    let parts = batch.iter().map(|&i| model.sample_loss(i)).sum::<Result<f64>>()?;
    let defect = (full - parts).abs() / parts.abs().max(f64::MIN_POSITIVE);
    Ok(AdditivityReport {
        batch_size: batch.len(),
        form,
        batch_loss: full,
        sum_of_samples: parts,
        defect,
        passed: defect < 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `½ c‖W₀ − W★₀‖² + ⟨v, W₁ − W★₁⟩`: curved first layer, flat second.
    struct CurvedAndFlat {
        w: Vec<Vec<f64>>,
        c: f64,
        v: Vec<f64>,
    }

    impl LossModel for CurvedAndFlat {
        fn weights(&self) -> &[Vec<f64>] {
            &self.w
        }
        fn loss(&self, w: &[Vec<f64>]) -> Result<f64> {
            let q: f64 = w[0].iter().zip(&self.w[0]).map(|(a, b)| (a - b) * (a - b)).sum();
            let lin: f64 = w[1].iter().zip(&self.w[1]).zip(&self.v).map(|((a, b), v)| v * (a - b)).sum();
            Ok(0.5 * self.c * q + lin)
        }
    }

    fn fixture() -> CurvedAndFlat {
        let w0: Vec<f64> = (0..256).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let w1: Vec<f64> = (0..128).map(|i| (i as f64 * 0.3).cos()).collect();
        let v = (0..128).map(|i| (i as f64).sin() * 0.1).collect();
        CurvedAndFlat { w: vec![w0, w1], c: 0.02, v }
    }

    #[test]
    fn noise_zero_level_is_identity() {
        let w = vec![1.0, -2.0, 3.5];
        assert_eq!(gaussian_noise_insert(&w, 0.0, 9).unwrap(), w);
        assert!(gaussian_noise_insert(&w, -0.1, 9).is_err());
        assert!(gaussian_noise_insert(&[0.0; 3], 0.1, 9).is_err());
    }

    #[test]
    fn noise_std_follows_formula() {
        // ‖W‖ = 2, d = 4, t = 0.5: per-entry std 0.5.
        let mut acc = 0.0;
        let trials = 20_000;
        for s in 0..trials {
            let out = gaussian_noise_insert(&[1.0; 4], 0.5, s).unwrap();
            acc += out.iter().map(|x| (x - 1.0) * (x - 1.0)).sum::<f64>();
        }
        let var = acc / (4 * trials) as f64;
        assert!((var.sqrt() - 0.5).abs() < 0.005, "std {}", var.sqrt());
    }

    #[test]
    fn noise_relative_energy_matches_t_squared() {
        let w: Vec<f64> = (0..64).map(|i| (i as f64 * 0.9).sin() + 0.2).collect();
        let n2: f64 = w.iter().map(|x| x * x).sum();
        let mean = (0..1000)
            .map(|s| {
                let out = gaussian_noise_insert(&w, 0.1, s).unwrap();
                out.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n2
            })
            .sum::<f64>()
            / 1000.0;
        assert!((mean / 0.01 - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn exact_synthetic_deltas_recover_alpha() {
        let t2: Vec<f64> = uniform_levels(0.01, 0.2, 7).iter().map(|t| t * t).collect();
        let delta: Vec<f64> = t2.iter().map(|x| 3.25 * x).collect();
        let (a, fit) = fit_through_origin(&t2, &delta);
        assert!((a - 3.25).abs() < 1e-12);
        assert!((fit.r2.unwrap() - 1.0).abs() < 1e-12);
        assert!(fit.std_error < 1e-12);
        assert!(fit.intercept_fit.0.abs() < 1e-12);
    }

    #[test]
    fn all_zero_deltas_give_zero_alpha_and_undefined_r2() {
        let (a, fit) = fit_through_origin(&[0.01, 0.04], &[0.0, 0.0]);
        assert_eq!(a, 0.0);
        assert!(fit.r2.is_none() && fit.degraded);
    }

    #[test]
    fn calibration_separates_curved_and_flat_layers() {
        let m = fixture();
        let cfg = CalibrationConfig { reps: 32, ..CalibrationConfig::uniform(8, 4) };
        let cal = calibrate_alphas(&m, &cfg).unwrap();
        // Curved layer: α = c‖W★‖²/2.
        let n2: f64 = m.w[0].iter().map(|x| x * x).sum();
        let expect = 0.5 * m.c * n2;
        assert!((cal.alphas.alphas[0] / expect - 1.0).abs() < 0.05, "{} vs {expect}", cal.alphas.alphas[0]);
        let (a1, se1) = (cal.alphas.alphas[1], cal.alphas.fits[1].std_error);
        assert!(a1.abs() < 3.0 * se1, "flat layer alpha {a1} vs se {se1}");
        assert_eq!(cal.samples.len(), 2 * 8 * 32);
        assert!(cal.samples_csv().unwrap().starts_with("layer,t,rep,delta\n"));
        let js: serde_json::Value = serde_json::from_str(&cal.summary_json().unwrap()).unwrap();
        assert_eq!(js["objective"], "loss");
    }

    #[test]
    fn calibration_is_deterministic() {
        let m = fixture();
        let cfg = CalibrationConfig::uniform(4, 11);
        assert_eq!(calibrate_alphas(&m, &cfg).unwrap().alphas, calibrate_alphas(&m, &cfg).unwrap().alphas);
    }

    #[test]
    fn calibration_rejects_bad_levels() {
        let m = fixture();
        let mut cfg = CalibrationConfig::uniform(4, 1);
        cfg.t_levels = vec![0.05];
        assert!(calibrate_alphas(&m, &cfg).is_err());
        cfg.t_levels = vec![0.05, 0.5];
        assert!(calibrate_alphas(&m, &cfg).is_err());
        cfg.t_levels = vec![0.05, 0.1];
        cfg.reps = 0;
        assert!(calibrate_alphas(&m, &cfg).is_err());
    }

    #[test]
    fn prediction_is_base_plus_weighted_sum() {
        let a = AlphaVector::from_alphas(vec![2.0], ObjectiveTag::Loss);
        assert_eq!(predict_loss(1.5, &a, &[0.0]).unwrap(), 1.5);
        assert!((predict_loss(1.5, &a, &[0.01]).unwrap() - 1.52).abs() < 1e-15);
        assert!(predict_loss(1.5, &a, &[0.01, 0.02]).is_err());
    }

    #[test]
    fn hessian_by_loss_differences_on_quadratic() {
        let m = fixture();
        let subset = [(0, 0), (0, 5), (1, 3)];
        let probe = scaled_hessian_block(&m, &subset, 1e-3).unwrap();
        let n0: f64 = m.w[0].iter().map(|x| x * x).sum();
        assert!((probe.get(0, 0) / (m.c * n0) - 1.0).abs() < 1e-5);
        assert!(probe.get(0, 1).abs() < 1e-6 * m.c * n0);
        assert!(probe.get(2, 2).abs() < 1e-6 * m.c * n0);
        assert!(scaled_hessian_block(&m, &subset, 0.0).is_err());
        assert!(scaled_hessian_block(&m, &[(2, 0)], 1e-3).is_err());
    }
}
