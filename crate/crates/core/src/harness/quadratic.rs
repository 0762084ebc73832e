//! Block-quadratic objective with a known minimizer.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::linearity::LossModel;
use crate::rng;

/// `φ(W) = φ★ + ½ Σ_l c_l ‖W_l − W★_l‖²` with `c_l = z_l·d_l/‖W★_l‖²`.
///
/// With that curvature, noise of relative size `t_l` in block `l` raises the
/// expected loss by exactly `(z_l·d_l/2)·t_l²`, and `D★∇²φD★ = diag(z_l·d_l·I)`.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    wstar: Vec<Vec<f64>>,
    z: Vec<f64>,
    curvature: Vec<f64>,
    base: f64,
}

pub fn quadratic_model(z: &[f64], wstar: Vec<Vec<f64>>, base: f64) -> Result<QuadraticModel> {
    if z.is_empty() || z.len() != wstar.len() {
        return Err(invalid("need one curvature per block and at least one block"));
    }
    if let Some(bad) = z.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(invalid(format!("curvature {bad} must be positive and finite")));
    }
    if !base.is_finite() {
        return Err(invalid("base loss must be finite"));
    }
    let mut curvature = Vec::with_capacity(z.len());
    for (w, &zl) in wstar.iter().zip(z) {
        let n2: f64 = w.iter().map(|x| x * x).sum();
        if w.is_empty() || !(n2 > 0.0) || !n2.is_finite() {
            return Err(invalid("every W★ block needs a finite non-zero norm"));
        }
        curvature.push(zl * w.len() as f64 / n2);
    }
    Ok(QuadraticModel { wstar, z: z.to_vec(), curvature, base })
}

impl QuadraticModel {
    /// Blocks of the given sizes with `W★` entries drawn from `N(0, 1)`.
    pub fn random(z: &[f64], dims: &[usize], base: f64, seed: u64) -> Result<Self> {
        if z.len() != dims.len() {
            return Err(invalid("need one curvature per block"));
        }
        let wstar = dims
            .iter()
            .enumerate()
            .map(|(l, &d)| {
                let mut r = rng::stream(seed, &[0x9ad, l as u64]);
                (0..d).map(|_| StandardNormal.sample(&mut r)).collect()
            })
            .collect();
        quadratic_model(z, wstar, base)
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// `α_l = z_l·d_l/2`.
    pub fn analytic_alphas(&self) -> Vec<f64> {
        self.z.iter().zip(&self.wstar).map(|(z, w)| z * w.len() as f64 / 2.0).collect()
    }

    /// Diagonal of the (diagonal) Hessian for block `l`.
    pub fn curvature(&self, l: usize) -> f64 {
        self.curvature[l]
    }
}

impl LossModel for QuadraticModel {
    fn weights(&self) -> &[Vec<f64>] {
        &self.wstar
    }

    fn loss(&self, w: &[Vec<f64>]) -> Result<f64> {
        if w.len() != self.wstar.len() || w.iter().zip(&self.wstar).any(|(a, b)| a.len() != b.len()) {
            return Err(invalid("weight blocks do not match the model"));
        }
        let q: f64 = w
            .iter()
            .zip(&self.wstar)
            .zip(&self.curvature)
            .map(|((a, b), c)| c * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            .sum();
        Ok(self.base + 0.5 * q)
    }

    fn gradient(&self, w: &[Vec<f64>]) -> Option<Result<Vec<Vec<f64>>>> {
        Some(Ok(w
            .iter()
            .zip(&self.wstar)
            .zip(&self.curvature)
            .map(|((a, b), c)| a.iter().zip(b).map(|(x, y)| c * (x - y)).collect())
            .collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearity::gaussian_noise_insert;

    #[test]
    fn minimum_is_base_with_zero_gradient() {
        let m = QuadraticModel::random(&[1.0, 3.0], &[8, 16], 2.5, 1).unwrap();
        assert_eq!(m.loss(m.weights()).unwrap(), 2.5);
        let g = m.gradient(m.weights()).unwrap().unwrap();
        assert!(g.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_curvature() {
        assert!(quadratic_model(&[0.0], vec![vec![1.0]], 0.0).is_err());
        assert!(quadratic_model(&[1.0], vec![vec![0.0]], 0.0).is_err());
        assert!(quadratic_model(&[1.0, 2.0], vec![vec![1.0]], 0.0).is_err());
    }

    #[test]
    fn expected_increase_is_alpha_t_squared() {
        // z = 2, d = 10, t = 0.1: α·t² = 10·0.01 = 0.1.
        let m = QuadraticModel::random(&[2.0], &[10], 0.0, 7).unwrap();
        assert_eq!(m.analytic_alphas(), vec![10.0]);
        let draws = 1000;
        let mean = (0..draws)
            .map(|s| {
                let w = gaussian_noise_insert(&m.weights()[0], 0.1, s).unwrap();
                m.loss(&[w]).unwrap()
            })
            .sum::<f64>()
            / draws as f64;
        assert!((mean / 0.1 - 1.0).abs() < 0.05, "mean increase {mean}");
    }
}
