//! Brute-force references shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use qlsv_core::grid::GradedGrid;

/// Left branch `x(1 + (2x)^γ)` written out independently of the library.
pub fn left_branch(gamma: f64, x: f64) -> f64 {
    x * (1.0 + (2.0 * x).powf(gamma))
}

/// Preimage of `y` under the left branch by bisection.
pub fn left_preimage(gamma: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y >= 1.0 {
        return 0.5;
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if left_branch(gamma, mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn map_point(gamma: f64, x: f64) -> f64 {
    if x < 0.5 {
        left_branch(gamma, x)
    } else {
        2.0 * x - 1.0
    }
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Dense Ulam kernel `P[i][j]`: fraction of source cell `i` mapped into
/// target cell `j`, from preimage intervals of every target cell.
pub fn dense_kernel(gamma: f64, grid: &GradedGrid) -> Vec<Vec<f64>> {
    let n = grid.n();
    let x = grid.nodes();
    let w = grid.widths();
    let pre: Vec<[(f64, f64); 2]> = (0..n)
        .map(|j| {
            [
                (left_preimage(gamma, x[j]), left_preimage(gamma, x[j + 1])),
                (0.5 * (x[j] + 1.0), 0.5 * (x[j + 1] + 1.0)),
            ]
        })
        .collect();
    (0..n)
        .map(|i| {
            let cell = (x[i], x[i + 1]);
            (0..n)
                .map(|j| (overlap(cell, pre[j][0]) + overlap(cell, pre[j][1])) / w[i])
                .collect()
        })
        .collect()
}

pub fn dense_apply(p: &[Vec<f64>], grid: &GradedGrid, f: &[f64]) -> Vec<f64> {
    let n = grid.n();
    let w = grid.widths();
    let mut out = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            out[j] += f[i] * w[i] * p[i][j];
        }
    }
    for j in 0..n {
        out[j] /= w[j];
    }
    out
}

/// Power iteration from Lebesgue until successive iterates agree to `tol`.
pub fn dense_fixed_point(p: &[Vec<f64>], grid: &GradedGrid, tol: f64, max_iter: usize) -> Vec<f64> {
    let w = grid.widths();
    let mut f = vec![1.0; grid.n()];
    for _ in 0..max_iter {
        let g = dense_apply(p, grid, &f);
        let diff: f64 = g.iter().zip(&f).zip(w).map(|((a, b), c)| (a - b).abs() * c).sum();
        f = g;
        if diff < tol {
            break;
        }
    }
    f
}

pub fn l1(grid: &Arc<GradedGrid>, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(grid.widths()).map(|((x, y), w)| (x - y).abs() * w).sum()
}

/// SplitMix-style stream for test inputs that should not depend on `rand`.
pub struct TestRng(pub u64);

impl TestRng {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }
}
