//! Small tanh MLP classifier on a frozen synthetic dataset.
//!
//! The objective is summed cross-entropy over the training split plus
//! `½λ‖θ‖²` over all weights and biases. The decay term gives the objective
//! a finite minimizer; the trainer stops at a certified near-stationary
//! point. Only the weight matrices are exposed as layers; biases stay fixed.

use std::collections::VecDeque;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linearity::{BatchForm, Classifier, LossModel, PerSampleLoss};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub train_samples: usize,
    pub heldout_samples: usize,
    /// Cluster centers are drawn from `N(0, center_scale²·I)`.
    pub center_scale: f64,
    /// Within-cluster noise is `N(0, noise_scale²·I)`.
    pub noise_scale: f64,
    pub weight_decay: f64,
    pub max_iters: usize,
    /// Stop once `‖∇‖ < grad_tol·(1 + loss)`.
    pub grad_tol: f64,
}

impl Default for TinyConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden: vec![64, 64],
            classes: 8,
            train_samples: 2048,
            heldout_samples: 512,
            center_scale: 0.5,
            noise_scale: 1.0,
            weight_decay: 8.0,
            max_iters: 20_000,
            grad_tol: 1e-4,
        }
    }
}

impl TinyConfig {
    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(invalid("tiny model needs positive widths, at least one hidden layer and two classes"));
        }
        if self.train_samples == 0 {
            return Err(invalid("tiny model needs training samples"));
        }
        if !(self.weight_decay > 0.0) || !(self.grad_tol > 0.0) {
            return Err(invalid("weight decay and gradient tolerance must be positive"));
        }
        Ok(())
    }

    /// `[input, hidden.., classes]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(self.classes);
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct TinyModel {
    config: TinyConfig,
    seed: u64,
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    train_x: Vec<f64>,
    train_y: Vec<usize>,
    held_x: Vec<f64>,
    held_y: Vec<usize>,
    trace: Vec<TraceEntry>,
}

const ROW_CHUNK: usize = 128;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Forward pass over `rows` inputs. Returns the post-activation of every
/// layer input (index 0 is `x` itself) followed by the logits.
fn forward(dims: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>], x: &[f64], rows: usize) -> Vec<Vec<f64>> {
    let layers = dims.len() - 1;
    let mut acts = Vec::with_capacity(layers + 1);
    acts.push(x.to_vec());
    for k in 0..layers {
        let (din, dout) = (dims[k], dims[k + 1]);
        let a = &acts[k];
        let mut z = vec![0.0; rows * dout];
        for r in 0..rows {
            let ar = &a[r * din..(r + 1) * din];
            for o in 0..dout {
                z[r * dout + o] = dot(&weights[k][o * din..(o + 1) * din], ar) + biases[k][o];
            }
        }
        if k + 1 < layers {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(z);
    }
    acts
}

fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// Per-row cross-entropy.
fn row_losses(logits: &[f64], y: &[usize], classes: usize) -> Vec<f64> {
    logits.chunks(classes).zip(y).map(|(l, &c)| -log_softmax_row(l)[c]).collect()
}

struct Grad {
    loss: f64,
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

/// Summed cross-entropy and its gradient over one block of rows.
fn chunk_grad(dims: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>], x: &[f64], y: &[usize]) -> Grad {
    let rows = y.len();
    let layers = dims.len() - 1;
    let classes = dims[layers];
    let acts = forward(dims, weights, biases, x, rows);
    let logits = &acts[layers];
    let mut loss = 0.0;
    let mut delta = vec![0.0; rows * classes];
    for r in 0..rows {
        let lp = log_softmax_row(&logits[r * classes..(r + 1) * classes]);
        loss -= lp[y[r]];
        for c in 0..classes {
            delta[r * classes + c] = lp[c].exp() - if c == y[r] { 1.0 } else { 0.0 };
        }
    }
    let mut gw: Vec<Vec<f64>> = weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut gb: Vec<Vec<f64>> = biases.iter().map(|b| vec![0.0; b.len()]).collect();
    for k in (0..layers).rev() {
        let (din, dout) = (dims[k], dims[k + 1]);
        let a = &acts[k];
        for r in 0..rows {
            let dr = &delta[r * dout..(r + 1) * dout];
            let ar = &a[r * din..(r + 1) * din];
            for o in 0..dout {
                axpy(dr[o], ar, &mut gw[k][o * din..(o + 1) * din]);
                gb[k][o] += dr[o];
            }
        }
        if k > 0 {
            let mut prev = vec![0.0; rows * din];
            for r in 0..rows {
                let pr = &mut prev[r * din..(r + 1) * din];
                for o in 0..dout {
                    axpy(delta[r * dout + o], &weights[k][o * din..(o + 1) * din], pr);
                }
                for (p, av) in pr.iter_mut().zip(&a[r * din..(r + 1) * din]) {
                    *p *= 1.0 - av * av;
                }
            }
            delta = prev;
        }
    }
    Grad { loss, w: gw, b: gb }
}

/// Summed cross-entropy and gradient over a full split, in fixed row blocks.
fn full_grad(dims: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>], x: &[f64], y: &[usize]) -> Grad {
    let din = dims[0];
    let parts: Vec<Grad> = y
        .par_chunks(ROW_CHUNK)
        .enumerate()
        .map(|(c, yc)| {
            let start = c * ROW_CHUNK;
            chunk_grad(dims, weights, biases, &x[start * din..(start + yc.len()) * din], yc)
        })
        .collect();
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("at least one row");
    for p in it {
        acc.loss += p.loss;
        acc.w.iter_mut().flatten().zip(p.w.iter().flatten()).for_each(|(a, b)| *a += b);
        acc.b.iter_mut().flatten().zip(p.b.iter().flatten()).for_each(|(a, b)| *a += b);
    }
    acc
}

/// Summed cross-entropy over a split, in fixed row blocks.
fn full_loss(dims: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>], x: &[f64], y: &[usize]) -> f64 {
    let din = dims[0];
    let classes = *dims.last().unwrap();
    let parts: Vec<f64> = y
        .par_chunks(ROW_CHUNK)
        .enumerate()
        .map(|(c, yc)| {
            let start = c * ROW_CHUNK;
            let acts = forward(dims, weights, biases, &x[start * din..(start + yc.len()) * din], yc.len());
            row_losses(acts.last().unwrap(), yc, classes).iter().sum::<f64>()
        })
        .collect();
    parts.iter().sum()
}

fn sq_norm(blocks: &[Vec<f64>]) -> f64 {
    blocks.iter().flatten().map(|x| x * x).sum()
}

fn make_split(cfg: &TinyConfig, centers: &[f64], rows: usize, seed: u64, key: u64) -> (Vec<f64>, Vec<usize>) {
    let mut r = rng::stream(seed, &[0xda7a, key]);
    let d = cfg.input_dim;
    let mut x = Vec::with_capacity(rows * d);
    let mut y = Vec::with_capacity(rows);
    for _ in 0..rows {
        let c = rand::Rng::random_range(&mut r, 0..cfg.classes);
        y.push(c);
        for k in 0..d {
            let e: f64 = StandardNormal.sample(&mut r);
            x.push(centers[c * d + k] + cfg.noise_scale * e);
        }
    }
    (x, y)
}

impl TinyModel {
    fn unit_check(&self, weights: &[Vec<f64>]) -> Result<()> {
        if weights.len() != self.weights.len() || weights.iter().zip(&self.weights).any(|(a, b)| a.len() != b.len()) {
            return Err(invalid("weight blocks do not match the model"));
        }
        Ok(())
    }

    pub fn config(&self) -> &TinyConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// `(rows, cols)` of weight matrix `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.dims[l + 1], self.dims[l])
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn initial_loss(&self) -> f64 {
        self.trace.first().map_or(f64::NAN, |t| t.loss)
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.grad_norm)
    }

    fn decay(&self, weights: &[Vec<f64>]) -> f64 {
        0.5 * self.config.weight_decay * (sq_norm(weights) + sq_norm(&self.biases))
    }

    /// Summed cross-entropy over the held-out split.
    pub fn heldout_loss(&self, weights: &[Vec<f64>]) -> Result<f64> {
        self.unit_check(weights)?;
        Ok(full_loss(&self.dims, weights, &self.biases, &self.held_x, &self.held_y))
    }

    /// Held-out cross-entropy as a [`LossModel`].
    pub fn heldout(&self) -> HeldoutLoss<'_> {
        HeldoutLoss(self)
    }

    /// `exp(mean cross-entropy)` on the training split.
    pub fn perplexity(&self, weights: &[Vec<f64>]) -> Result<f64> {
        self.unit_check(weights)?;
        let ce = full_loss(&self.dims, weights, &self.biases, &self.train_x, &self.train_y);
        Ok((ce / self.train_y.len() as f64).exp())
    }

    pub fn accuracy(&self, weights: &[Vec<f64>]) -> Result<f64> {
        self.unit_check(weights)?;
        let classes = self.config.classes;
        let acts = forward(&self.dims, weights, &self.biases, &self.held_x, self.held_y.len());
        let hits = acts
            .last()
            .unwrap()
            .chunks(classes)
            .zip(&self.held_y)
            .filter(|(l, &y)| l.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 == y)
            .count();
        Ok(hits as f64 / self.held_y.len().max(1) as f64)
    }
}

impl LossModel for TinyModel {
    fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    fn loss(&self, weights: &[Vec<f64>]) -> Result<f64> {
        self.unit_check(weights)?;
        let ce = full_loss(&self.dims, weights, &self.biases, &self.train_x, &self.train_y);
        let v = ce + self.decay(weights);
        if !v.is_finite() {
            return Err(Error::Numeric("tiny model loss is not finite".into()));
        }
        Ok(v)
    }

    fn gradient(&self, weights: &[Vec<f64>]) -> Option<Result<Vec<Vec<f64>>>> {
        if let Err(e) = self.unit_check(weights) {
            return Some(Err(e));
        }
        let g = full_grad(&self.dims, weights, &self.biases, &self.train_x, &self.train_y);
        let lambda = self.config.weight_decay;
        Some(Ok(g
            .w
            .into_iter()
            .zip(weights)
            .map(|(gw, w)| gw.iter().zip(w).map(|(a, b)| a + lambda * b).collect())
            .collect()))
    }
}

impl Classifier for TinyModel {
    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn classes(&self) -> usize {
        self.config.classes
    }

    fn log_probs(&self, weights: &[Vec<f64>], inputs: &[f64]) -> Result<Vec<f64>> {
        self.unit_check(weights)?;
        let d = self.config.input_dim;
        if inputs.len() % d != 0 {
            return Err(invalid("input length is not a whole number of rows"));
        }
        let acts = forward(&self.dims, weights, &self.biases, inputs, inputs.len() / d);
        let out: Vec<f64> = acts.last().unwrap().chunks(self.config.classes).flat_map(log_softmax_row).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite log-probabilities".into()));
        }
        Ok(out)
    }
}

impl PerSampleLoss for TinyModel {
    fn sample_count(&self) -> usize {
        self.train_y.len()
    }

    fn batch_loss(&self, batch: &[usize], form: BatchForm) -> Result<f64> {
        let d = self.config.input_dim;
        let x: Vec<f64> = batch.iter().flat_map(|&i| self.train_x[i * d..(i + 1) * d].iter().copied()).collect();
        let y: Vec<usize> = batch.iter().map(|&i| self.train_y[i]).collect();
        let acts = forward(&self.dims, &self.weights, &self.biases, &x, batch.len());
        let total: f64 = row_losses(acts.last().unwrap(), &y, self.config.classes).iter().sum();
        Ok(match form {
            BatchForm::Sum => total,
            BatchForm::Mean => total / batch.len() as f64,
        })
    }

    fn sample_loss(&self, index: usize) -> Result<f64> {
        let d = self.config.input_dim;
        let x = &self.train_x[index * d..(index + 1) * d];
        let acts = forward(&self.dims, &self.weights, &self.biases, x, 1);
        Ok(row_losses(acts.last().unwrap(), &[self.train_y[index]], self.config.classes)[0])
    }
}

/// Summed held-out cross-entropy of a [`TinyModel`], no decay term.
pub struct HeldoutLoss<'a>(&'a TinyModel);

impl LossModel for HeldoutLoss<'_> {
    fn weights(&self) -> &[Vec<f64>] {
        &self.0.weights
    }

    fn loss(&self, weights: &[Vec<f64>]) -> Result<f64> {
        self.0.heldout_loss(weights)
    }
}

/// Train to a near-stationary point of the regularized objective.
///
/// Full-batch L-BFGS (memory 12) with a backtracking Armijo line search that
/// halves the step until sufficient decrease. Deterministic given `seed`.
pub fn train_tiny(config: &TinyConfig, seed: u64) -> Result<TinyModel> {
    config.validate()?;
    let dims = config.dims();
    let mut r = rng::stream(seed, &[0xce47]);
    let centers: Vec<f64> = (0..config.classes * config.input_dim)
        .map(|_| config.center_scale * Distribution::<f64>::sample(&StandardNormal, &mut r))
        .collect();
    let (train_x, train_y) = make_split(config, &centers, config.train_samples, seed, 0);
    let (held_x, held_y) = make_split(config, &centers, config.heldout_samples, seed, 1);

    let mut r = rng::stream(seed, &[0x1417]);
    let weights: Vec<Vec<f64>> = dims
        .windows(2)
        .map(|w| {
            let s = 1.0 / (w[0] as f64).sqrt();
            (0..w[0] * w[1]).map(|_| s * Distribution::<f64>::sample(&StandardNormal, &mut r)).collect()
        })
        .collect();
    let biases: Vec<Vec<f64>> = dims[1..].iter().map(|&n| vec![0.0; n]).collect();

    let mut model = TinyModel {
        config: config.clone(),
        seed,
        dims,
        weights,
        biases,
        train_x,
        train_y,
        held_x,
        held_y,
        trace: Vec::new(),
    };
    let shapes: Vec<usize> = model.weights.iter().chain(&model.biases).map(Vec::len).collect();
    let flatten = |m: &TinyModel| -> Vec<f64> { m.weights.iter().chain(&m.biases).flatten().copied().collect() };
    let unflatten = |theta: &[f64]| -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(shapes.len());
        let mut pos = 0;
        for &n in &shapes {
            out.push(theta[pos..pos + n].to_vec());
            pos += n;
        }
        out
    };
    let nw = model.weights.len();
    let lambda = config.weight_decay;
    let eval = |theta: &[f64]| -> (f64, Vec<f64>) {
        let blocks = unflatten(theta);
        let (w, b) = blocks.split_at(nw);
        let g = full_grad(&model.dims, w, b, &model.train_x, &model.train_y);
        let f = g.loss + 0.5 * lambda * theta.iter().map(|x| x * x).sum::<f64>();
        let grad: Vec<f64> =
            g.w.iter().chain(&g.b).flatten().zip(theta).map(|(gi, ti)| gi + lambda * ti).collect();
        (f, grad)
    };

    let mut theta = flatten(&model);
    let (mut f, mut g) = eval(&theta);
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut trace = Vec::new();
    let mut step = 0.0;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for iter in 0..=config.max_iters {
        let gn = norm(&g);
        trace.push(TraceEntry { iter, loss: f, grad_norm: gn, step });
        if gn < config.grad_tol * (1.0 + f.abs()) {
            let blocks = unflatten(&theta);
            let (w, b) = blocks.split_at(nw);
            model.weights = w.to_vec();
            model.biases = b.to_vec();
            model.trace = trace;
            return Ok(model);
        }
        if iter == config.max_iters {
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut coef = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(-a, y, &mut q);
            coef.push(a);
        }
        let gamma = match mem.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / gn.max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in mem.iter().zip(coef.iter().rev()) {
            let b = rho * dot(y, &q);
            axpy(a - b, s, &mut q);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            mem.clear();
            d = g.iter().map(|v| -v / gn.max(1.0)).collect();
            slope = dot(&g, &d);
        }
        step = 1.0;
        let accepted = loop {
            let cand: Vec<f64> = theta.iter().zip(&d).map(|(t, di)| t + step * di).collect();
            let (fc, gc) = eval(&cand);
            if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                break Some((cand, fc, gc));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((cand, fc, gc)) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if mem.len() == 12 {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        theta = cand;
        f = fc;
        g = gc;
    }
    let last = trace.last().copied().unwrap();
    Err(Error::NoConvergence(format!(
        "tiny model training stopped after {} iterations at loss {:.6}, gradient norm {:.3e} (target {:.3e}); trace has {} entries",
        last.iter,
        last.loss,
        last.grad_norm,
        config.grad_tol * (1.0 + last.loss.abs()),
        trace.len()
    )))
}
