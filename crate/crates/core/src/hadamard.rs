//! Seeded Random Hadamard Transform over power-of-two blocks.
//!
//! `rht_forward(v) = H · (d ⊙ v)` where `H` is the unnormalized Sylvester
//! Hadamard matrix and `d ∈ {±1}^g` a sign vector derived from the seed.
//! The `1/√g` normalization is folded into the quantizer's stored scales.
//!
//! Sign derivation: for block length `g` and seed `ξ`, 64-bit word `k` of the
//! sign mask is `rng::derive(ξ, [g, k])` (SplitMix64 chain). Bit `i mod 64` of
//! word `⌊i/64⌋`, least significant bit first, set means sign `-1`. Every block
//! of length `g` inside one tensor uses the same sign vector.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng;

/// Seed of the random sign diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RhtSeed(pub u64);

/// Diagonal `±1` sign vector of a transform block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignVector {
    negative: Vec<bool>,
}

impl SignVector {
    pub fn from_seed(seed: RhtSeed, g: usize) -> Self {
        let words = g.div_ceil(64);
        let mut negative = Vec::with_capacity(g);
        for k in 0..words {
            let w = rng::derive(seed.0, &[g as u64, k as u64]);
            let take = (g - k * 64).min(64);
            negative.extend((0..take).map(|b| (w >> b) & 1 == 1));
        }
        Self { negative }
    }

    /// All signs `+1`; turns the RHT into a plain Walsh–Hadamard transform.
    pub fn ones(g: usize) -> Self {
        Self { negative: vec![false; g] }
    }

    pub fn len(&self) -> usize {
        self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.negative.is_empty()
    }

    pub fn sign(&self, i: usize) -> f64 {
        if self.negative[i] {
            -1.0
        } else {
            1.0
        }
    }

    fn apply(&self, v: &mut [f64]) {
        for (x, &neg) in v.iter_mut().zip(&self.negative) {
            if neg {
                *x = -*x;
            }
        }
    }
}

fn check_len(g: usize) -> Result<()> {
    if g == 0 || !g.is_power_of_two() {
        return Err(invalid(format!("transform length {g} is not a power of two")));
    }
    Ok(())
}

/// In-place unnormalized fast Walsh–Hadamard transform (Sylvester ordering).
pub fn fwht_in_place(v: &mut [f64]) -> Result<()> {
    check_len(v.len())?;
    let n = v.len();
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    Ok(())
}

pub fn fwht(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    fwht_in_place(&mut out)?;
    Ok(out)
}

/// `H · (d ⊙ v)` in place with explicit signs.
pub fn rht_forward_in_place(v: &mut [f64], signs: &SignVector) -> Result<()> {
    check_len(v.len())?;
    if signs.len() != v.len() {
        return Err(invalid("sign vector length does not match block length"));
    }
    signs.apply(v);
    fwht_in_place(v)
}

/// `d ⊙ (H · v) / g` in place with explicit signs.
pub fn rht_inverse_in_place(v: &mut [f64], signs: &SignVector) -> Result<()> {
    check_len(v.len())?;
    if signs.len() != v.len() {
        return Err(invalid("sign vector length does not match block length"));
    }
    fwht_in_place(v)?;
    let inv = 1.0 / v.len() as f64;
    for x in v.iter_mut() {
        *x *= inv;
    }
    signs.apply(v);
    Ok(())
}

pub fn rht_forward(v: &[f64], seed: RhtSeed) -> Result<Vec<f64>> {
    check_len(v.len())?;
    let mut out = v.to_vec();
    rht_forward_in_place(&mut out, &SignVector::from_seed(seed, v.len()))?;
    Ok(out)
}

pub fn rht_inverse(v: &[f64], seed: RhtSeed) -> Result<Vec<f64>> {
    check_len(v.len())?;
    let mut out = v.to_vec();
    rht_inverse_in_place(&mut out, &SignVector::from_seed(seed, v.len()))?;
    Ok(out)
}
