// Thin wrappers so the numerical code reads the same with or without std.

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub(crate) fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// `y^γ` for `y ≥ 0`, with `0^γ = 0` for `γ > 0` and `0^0 = 1`.
#[inline]
pub(crate) fn pow_nonneg(y: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else if y <= 0.0 {
        0.0
    } else {
        exp(gamma * ln(y))
    }
}

/// Standard normal CDF scaled by `sigma`.
pub(crate) fn normal_cdf(x: f64, sigma: f64) -> f64 {
    0.5 * erfc(-x / (sigma * core::f64::consts::SQRT_2))
}

/// Pairwise (tree) summation; the order is fixed by the slice, so results are
/// reproducible regardless of how the inputs were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: alloc::vec::Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, sqrt(var / n as f64))
}

/// `(0..count).map(f)`, spread over the rayon pool when `parallel` is on.
/// Output order is the index order either way.
#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(count: usize, f: F) -> alloc::vec::Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(count: usize, f: F) -> alloc::vec::Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..count).map(f).collect()
}
