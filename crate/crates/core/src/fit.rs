//! Power-law fits and tail sums for polynomially decaying sequences.

use alloc::vec::Vec;

use crate::math::{ln, powf, sqrt};

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (0 when only two points were used).
    pub stderr: f64,
    pub points: usize,
}

impl LogLogFit {
    /// `slope ± z · stderr`
    pub fn band(&self, z: f64) -> (f64, f64) {
        (self.slope - z * self.stderr, self.slope + z * self.stderr)
    }

    pub fn predict(&self, x: f64) -> f64 {
        libm::exp(self.intercept + self.slope * ln(x))
    }
}

/// Fits `ln y = a + b ln x` over the points with `x > 0` and `y > floor`.
///
/// Returns `None` when fewer than two points survive.
pub fn loglog_fit(xs: &[f64], ys: &[f64], floor: f64) -> Option<LogLogFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > floor && y.is_finite())
        .map(|(x, y)| (ln(*x), ln(*y)))
        .collect();
    let n = pts.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if n > 2 {
        let rss: f64 = pts
            .iter()
            .map(|p| {
                let r = p.1 - intercept - slope * p.0;
                r * r
            })
            .sum();
        sqrt(rss / (nf - 2.0) / sxx)
    } else {
        0.0
    };
    Some(LogLogFit {
        slope,
        intercept,
        stderr,
        points: n,
    })
}

/// Fits only the indices `n ∈ [lo, hi]` of a sequence indexed from 0.
pub fn loglog_fit_range(values: &[f64], lo: usize, hi: usize, floor: f64) -> Option<LogLogFit> {
    let hi = hi.min(values.len().saturating_sub(1));
    if lo > hi {
        return None;
    }
    let xs: Vec<f64> = (lo..=hi).map(|n| n as f64).collect();
    loglog_fit(&xs, &values[lo..=hi], floor)
}

/// Smallest `Ĉ` with `|values[n]| ≤ Ĉ n^exponent` for `n ∈ [lo, hi]`.
pub fn envelope_constant(values: &[f64], lo: usize, hi: usize, exponent: f64) -> f64 {
    let hi = hi.min(values.len().saturating_sub(1));
    (lo.max(1)..=hi)
        .map(|n| values[n].abs() / powf(n as f64, exponent))
        .fold(0.0, f64::max)
}

/// Upper bound for `Σ_{n > start} n^exponent`; infinite when `exponent ≥ -1`.
pub fn power_tail_sum(start: usize, exponent: f64) -> f64 {
    if exponent >= -1.0 {
        return f64::INFINITY;
    }
    let m = start.max(1) as f64;
    powf(m, exponent + 1.0) / (-exponent - 1.0)
}
