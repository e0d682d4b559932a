//! Graded partitions of `[0, 1]` and cell-average functions on them.
//!
//! Nodes are `x_i = (i/N)^p`, so cells cluster at the origin where the
//! invariant densities blow up like `x^{-α}`. A [`GridFunction`] stores one
//! value per cell, interpreted as the cell average; this is the natural
//! representation for Ulam transfer operators, which move cell masses.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{floor, pairwise_sum, powf};
use crate::profile::Smooth;

/// Smallest supported cell count.
pub const MIN_CELLS: usize = 4;

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

#[derive(Debug, Clone, PartialEq)]
pub struct GradedGrid {
    n: usize,
    p: f64,
    nodes: Vec<f64>,
    widths: Vec<f64>,
}

impl GradedGrid {
    pub fn new(n: usize, p: f64) -> Result<Self> {
        if n < MIN_CELLS {
            return Err(Error::InvalidGrid("cell count below 4"));
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidGrid("cell count exceeds u32"));
        }
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::InvalidGrid("grading exponent must be >= 1"));
        }
        let mut nodes: Vec<f64> = (0..=n).map(|i| powf(i as f64 / n as f64, p)).collect();
        nodes[0] = 0.0;
        nodes[n] = 1.0;
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("nodes not strictly increasing"));
        }
        let widths = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { n, p, nodes, widths })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn p(&self) -> f64 {
        self.p
    }

    #[inline]
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    #[inline]
    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.nodes[i] + self.nodes[i + 1])
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.center(i)).collect()
    }

    /// Index of the cell containing `x` (half-open cells, `x = 1` in the last).
    pub fn cell_of(&self, x: f64) -> usize {
        if x <= 0.0 {
            return 0;
        }
        if x >= 1.0 {
            return self.n - 1;
        }
        let guess = floor(self.n as f64 * powf(x, 1.0 / self.p));
        let mut i = (guess.max(0.0) as usize).min(self.n - 1);
        while i > 0 && self.nodes[i] > x {
            i -= 1;
        }
        while i + 1 < self.n && self.nodes[i + 1] <= x {
            i += 1;
        }
        i
    }

    /// Two grids are interchangeable when they have the same `N` and `p`.
    pub fn same_as(&self, other: &GradedGrid) -> bool {
        self.n == other.n && self.p == other.p
    }

    /// Minimal grading exponent that keeps `x^{-α}` integrable cellwise.
    pub fn min_grading_for(alpha_max: f64) -> f64 {
        1.0 / (1.0 - alpha_max)
    }
}

/// `make_grid(N, p)`: shared handle to a graded grid.
pub fn make_grid(n: usize, p: f64) -> Result<Arc<GradedGrid>> {
    GradedGrid::new(n, p).map(Arc::new)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    /// Nonnegative, unit mass.
    Density,
    Signed,
}

const DENSITY_MASS_TOL: f64 = 1e-10;

/// Cell averages of a function on a [`GradedGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<GradedGrid>,
    values: Vec<f64>,
    tag: Tag,
}

impl GridFunction {
    pub fn new(grid: Arc<GradedGrid>, values: Vec<f64>, tag: Tag) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::InvalidArgument(alloc::format!(
                "expected {} cell values, got {}",
                grid.n(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite cell value".into()));
        }
        let f = Self { grid, values, tag };
        if tag == Tag::Density {
            f.check_density()?;
        }
        Ok(f)
    }

    pub(crate) fn from_parts(grid: Arc<GradedGrid>, values: Vec<f64>, tag: Tag) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Self { grid, values, tag }
    }

    fn check_density(&self) -> Result<()> {
        if let Some(v) = self.values.iter().find(|v| **v < 0.0) {
            return Err(Error::Domain {
                what: "negative density value",
                value: *v,
            });
        }
        let mass = integrate(self);
        if (mass - 1.0).abs() > DENSITY_MASS_TOL {
            return Err(Error::Domain {
                what: "density mass",
                value: mass,
            });
        }
        Ok(())
    }

    pub fn zeros(grid: Arc<GradedGrid>) -> Self {
        let n = grid.n();
        Self::from_parts(grid, vec![0.0; n], Tag::Signed)
    }

    pub fn constant(grid: Arc<GradedGrid>, c: f64) -> Self {
        let n = grid.n();
        let tag = if c == 1.0 { Tag::Density } else { Tag::Signed };
        Self::from_parts(grid, vec![c; n], tag)
    }

    /// Lebesgue density (constant 1).
    pub fn lebesgue(grid: Arc<GradedGrid>) -> Self {
        Self::constant(grid, 1.0)
    }

    /// Cell averages of `f` by 5-point Gauss–Legendre on each cell.
    pub fn from_fn(grid: Arc<GradedGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = cell_averages(&grid, f);
        Self::from_parts(grid, values, Tag::Signed)
    }

    /// Exact cell averages from an antiderivative `F` of the target function.
    pub fn from_antiderivative(grid: Arc<GradedGrid>, antiderivative: impl Fn(f64) -> f64) -> Self {
        let nodes = grid.nodes();
        let prim: Vec<f64> = nodes.iter().map(|&x| antiderivative(x)).collect();
        let values = (0..grid.n())
            .map(|i| (prim[i + 1] - prim[i]) / grid.widths()[i])
            .collect();
        Self::from_parts(grid, values, Tag::Signed)
    }

    /// Normalizes a nonnegative function to unit mass.
    pub fn into_density(mut self) -> Result<Self> {
        if self.values.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument("density candidate has negative cells".into()));
        }
        let mass = integrate(&self);
        if !(mass > 0.0) {
            return Err(Error::InvalidArgument("density candidate has zero mass".into()));
        }
        self.values.iter_mut().for_each(|v| *v /= mass);
        self.tag = Tag::Density;
        Ok(self)
    }

    pub fn with_tag(mut self, tag: Tag) -> Result<Self> {
        self.tag = tag;
        if tag == Tag::Density {
            self.check_density()?;
        }
        Ok(self)
    }

    pub fn as_signed(mut self) -> Self {
        self.tag = Tag::Signed;
        self
    }

    #[inline]
    pub fn grid(&self) -> &Arc<GradedGrid> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn tag(&self) -> Tag {
        self.tag
    }

    /// Value of the cellwise-constant representative at `x`.
    pub fn value_at(&self, x: f64) -> f64 {
        self.values[self.grid.cell_of(x)]
    }

    /// Piecewise-linear reconstruction through the cell centers, constant
    /// outside the first and last centers.
    pub fn interpolate(&self, x: f64) -> f64 {
        interpolate_cells(&self.grid, &self.values, x)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn l1_norm(&self) -> f64 {
        let terms: Vec<f64> = self
            .values
            .iter()
            .zip(self.grid.widths())
            .map(|(v, w)| v.abs() * w)
            .collect();
        pairwise_sum(&terms)
    }

    pub fn ensure_same_grid(&self, other: &GridFunction) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_parts(
            self.grid.clone(),
            self.values.iter().map(|v| v * c).collect(),
            Tag::Signed,
        )
    }

    /// `self + c · other`
    pub fn add_scaled(&self, c: f64, other: &GridFunction) -> Result<Self> {
        self.ensure_same_grid(other)?;
        Ok(Self::from_parts(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
            Tag::Signed,
        ))
    }

    /// Cellwise product (exact for products where one factor is constant on cells).
    pub fn mul_cells(&self, other: &[f64]) -> Self {
        Self::from_parts(
            self.grid.clone(),
            self.values.iter().zip(other).map(|(a, b)| a * b).collect(),
            Tag::Signed,
        )
    }

    /// `∫ φ · self dm` for cell averages `φ_i` of a test function.
    pub fn pair_with(&self, cell_values: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .values
            .iter()
            .zip(cell_values)
            .zip(self.grid.widths())
            .map(|((v, c), w)| v * c * w)
            .collect();
        pairwise_sum(&terms)
    }
}

/// Cell averages of `f` by 5-point Gauss–Legendre.
pub(crate) fn interpolate_cells(grid: &GradedGrid, values: &[f64], x: f64) -> f64 {
    let i = grid.cell_of(x);
    let c = grid.center(i);
    let j = if x < c {
        if i == 0 {
            return values[0];
        }
        i - 1
    } else {
        if i + 1 == grid.n() {
            return values[i];
        }
        i + 1
    };
    let cj = grid.center(j);
    values[i] + (values[j] - values[i]) * (x - c) / (cj - c)
}

pub fn cell_averages(grid: &GradedGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let nodes = grid.nodes();
    (0..grid.n())
        .map(|i| {
            let (a, b) = (nodes[i], nodes[i + 1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let s: f64 = GL5_NODES
                .iter()
                .zip(GL5_WEIGHTS.iter())
                .map(|(t, w)| w * f(mid + half * t))
                .sum();
            0.5 * s
        })
        .collect()
}

/// `∫_0^1 f dm = Σ f_i |cell_i|`.
pub fn integrate(f: &GridFunction) -> f64 {
    let terms: Vec<f64> = f
        .values
        .iter()
        .zip(f.grid.widths())
        .map(|(v, w)| v * w)
        .collect();
    pairwise_sum(&terms)
}

/// Running integrals `∫_0^{x_k} f dm` at every node.
pub fn cumulative_integral(f: &GridFunction) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.values.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for (v, w) in f.values.iter().zip(f.grid.widths()) {
        acc += v * w;
        out.push(acc);
    }
    out
}

pub fn l1_distance(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    f.ensure_same_grid(g)?;
    let terms: Vec<f64> = f
        .values
        .iter()
        .zip(&g.values)
        .zip(f.grid.widths())
        .map(|((a, b), w)| (a - b).abs() * w)
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Derivative at the cell centers from the quadratic through neighbouring
/// centers; one-sided second-order stencils at both ends.
pub fn differentiate(f: &GridFunction) -> Result<GridFunction> {
    let n = f.grid.n();
    if n < 3 {
        return Err(Error::InvalidGrid("differentiate needs at least 3 cells"));
    }
    let c = f.grid.centers();
    let v = &f.values;
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        let h1 = c[i] - c[i - 1];
        let h2 = c[i + 1] - c[i];
        out[i] = -h2 / (h1 * (h1 + h2)) * v[i - 1]
            + (h2 - h1) / (h1 * h2) * v[i]
            + h1 / (h2 * (h1 + h2)) * v[i + 1];
    }
    out[0] = one_sided(c[0], c[1], c[2], v[0], v[1], v[2]);
    out[n - 1] = one_sided(c[n - 1], c[n - 2], c[n - 3], v[n - 1], v[n - 2], v[n - 3]);
    Ok(GridFunction::from_parts(f.grid.clone(), out, Tag::Signed))
}

// Derivative at x0 of the quadratic through (x0,f0), (x1,f1), (x2,f2).
fn one_sided(x0: f64, x1: f64, x2: f64, f0: f64, f1: f64, f2: f64) -> f64 {
    let d1 = x1 - x0;
    let d2 = x2 - x0;
    -(d1 + d2) / (d1 * d2) * f0 + d2 / (d1 * (d2 - d1)) * f1 - d1 / (d2 * (d2 - d1)) * f2
}

/// Sup-norm estimates `(‖F‖_{C⁰}, ‖F‖_{C¹}, ‖F‖_{C²})` where
/// `‖F‖_{C^k}` is the max over orders `0..=k` of the sup-norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservableNorms {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub samples: usize,
}

pub fn observable_norms(f: &dyn Smooth, samples: usize) -> Result<ObservableNorms> {
    let m = samples.max(2);
    let (mut s0, mut s1, mut s2) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..m {
        let x = k as f64 / (m - 1) as f64;
        let (a, b, c) = (f.value(x), f.d1(x), f.d2(x));
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::Domain {
                what: "non-finite observable sample at x",
                value: x,
            });
        }
        s0 = s0.max(a.abs());
        s1 = s1.max(b.abs());
        s2 = s2.max(c.abs());
    }
    let c1 = s0.max(s1);
    Ok(ObservableNorms {
        c0: s0,
        c1,
        c2: c1.max(s2),
        samples: m,
    })
}

/// Magic bytes of the [`GridFunction`] binary record.
pub const GFN1_MAGIC: &[u8; 4] = b"GFN1";

/// `"GFN1"`, `N: u32 LE`, `p: f64 LE`, tag byte (0 density, 1 signed), `N` cell values.
pub fn encode_grid_function(f: &GridFunction) -> Vec<u8> {
    let n = f.grid.n();
    let mut out = Vec::with_capacity(17 + 8 * n);
    out.extend_from_slice(GFN1_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&f.grid.p().to_le_bytes());
    out.push(match f.tag {
        Tag::Density => 0,
        Tag::Signed => 1,
    });
    for v in &f.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_grid_function`]; rejects bad magic, length or tag.
pub fn decode_grid_function(bytes: &[u8]) -> Result<GridFunction> {
    let bad = |why: &str| Error::InvalidArgument(alloc::format!("GFN1 record: {why}"));
    if bytes.len() < 17 || &bytes[..4] != GFN1_MAGIC {
        return Err(bad("bad magic"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let p = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let tag = match bytes[16] {
        0 => Tag::Density,
        1 => Tag::Signed,
        _ => return Err(bad("bad tag")),
    };
    if bytes.len() != 17 + 8 * n {
        return Err(bad("bad length"));
    }
    let values = bytes[17..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    GridFunction::new(make_grid(n, p)?, values, tag)
}
