//! Standard normal density, distribution and cell integrals.

use libm::erfc;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Φ(x)`, accurate for large positive `x`.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF.
pub fn quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::standard();
    if p < 0.5 {
        n.inverse_cdf(p)
    } else {
        -n.inverse_cdf(1.0 - p)
    }
}

/// Probability mass of `(a, b)`, computed on the tail that avoids cancellation.
pub fn mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        sf(a) - sf(b)
    } else if b <= 0.0 {
        cdf(b) - cdf(a)
    } else {
        1.0 - cdf(a) - sf(b)
    }
}

fn x_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        x * pdf(x)
    }
}

/// Zeroth, first and second partial moments of `N(0,1)` over `(a, b)`.
pub fn cell_moments(a: f64, b: f64) -> (f64, f64, f64) {
    let m0 = mass(a, b);
    let m1 = pdf(a) - pdf(b);
    let m2 = m0 + x_pdf(a) - x_pdf(b);
    (m0, m1, m2)
}

/// `E[(Z - c)^2 ; a < Z < b]`.
pub fn cell_sq_error(a: f64, b: f64, c: f64) -> f64 {
    let (m0, m1, m2) = cell_moments(a, b);
    (m2 - 2.0 * c * m1 + c * c * m0).max(0.0)
}

/// Conditional mean of `Z` on `(a, b)`.
pub fn cell_mean(a: f64, b: f64) -> Option<f64> {
    let (m0, m1, _) = cell_moments(a, b);
    (m0 > 0.0).then(|| m1 / m0)
}

/// Conditional median of `Z` on `(a, b)`.
pub fn cell_median(a: f64, b: f64) -> Option<f64> {
    if a + b > 0.0 {
        // Work on the mirrored cell so the quantile argument stays small.
        return cell_median(-b, -a).map(|m| -m);
    }
    let (ca, cb) = (cdf(a), cdf(b));
    (cb > ca).then(|| quantile(0.5 * (ca + cb)))
}

/// Exact mean squared error of rounding `N(0,1)` to the nearest of `points`.
pub fn scalar_mse(points: &[f64]) -> f64 {
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bounds = cell_bounds(&sorted);
    sorted
        .iter()
        .enumerate()
        .map(|(i, &c)| cell_sq_error(bounds[i], bounds[i + 1], c))
        .sum()
}

/// Nearest-point cell boundaries of sorted scalar points, `±∞` at the ends.
pub fn cell_bounds(sorted: &[f64]) -> Vec<f64> {
    let mut b = Vec::with_capacity(sorted.len() + 1);
    b.push(f64::NEG_INFINITY);
    b.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    b.push(f64::INFINITY);
    b
}
