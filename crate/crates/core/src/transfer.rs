//! Ulam transfer operators and their compositions along the base dynamics.
//!
//! The kernel of [`TransferOperator`] holds exact preimage-measure fractions
//! `m(cell_i ∩ T⁻¹ cell_j) / m(cell_i)`. Preimages of the grid nodes under the
//! two branches are `g_γ(x_j)` and `(x_j + 1)/2`; one merge of those sorted
//! breakpoints with the grid nodes yields every nonzero entry.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spin::RwLock;

use crate::base::{BasePoint, BaseSystem, ParameterProcess};
use crate::error::{Error, Result};
use crate::fit::{loglog_fit_range, LogLogFit};
use crate::grid::{cell_averages, cumulative_integral, integrate, GradedGrid, GridFunction, Tag};
use crate::lsv::MapParameter;
use crate::math::{floor, ln, map_indexed, pairwise_sum, powf};
use crate::profile::Smooth;
use crate::stats::{step_point, DensitySampler};

/// Sparse Ulam matrix of `L_γ`, stored by source cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferOperator {
    param: MapParameter,
    grid: Arc<GradedGrid>,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    fractions: Vec<f64>,
}

impl TransferOperator {
    pub fn build(param: MapParameter, grid: Arc<GradedGrid>) -> Result<Self> {
        let n = grid.n();
        let nodes = grid.nodes();
        // Breakpoints of T⁻¹(cells): left branch then right branch.
        let mut breaks = Vec::with_capacity(2 * n + 1);
        let mut prev = 0.0f64;
        for &y in nodes.iter() {
            let g = param.left_inverse_unchecked(y)?.max(prev);
            breaks.push(g);
            prev = g;
        }
        breaks[n] = 0.5;
        for &y in &nodes[1..] {
            breaks.push(0.5 * (y + 1.0));
        }
        breaks[2 * n] = 1.0;

        let widths = grid.widths();
        let mut row_start = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(4 * n);
        let mut fractions = Vec::with_capacity(4 * n);
        let mut k = 0usize;
        for i in 0..n {
            row_start.push(cols.len());
            let (lo, hi) = (nodes[i], nodes[i + 1]);
            while k + 1 < 2 * n && breaks[k + 1] <= lo {
                k += 1;
            }
            let start = cols.len();
            let mut kk = k;
            while kk < 2 * n && breaks[kk] < hi {
                let overlap = hi.min(breaks[kk + 1]) - lo.max(breaks[kk]);
                if overlap > 0.0 {
                    cols.push((kk % n) as u32);
                    fractions.push(overlap / widths[i]);
                }
                kk += 1;
            }
            let total: f64 = fractions[start..].iter().sum();
            if !(total > 0.0) {
                return Err(Error::InvalidArgument(format!("source cell {i} has no image")));
            }
            fractions[start..].iter_mut().for_each(|w| *w /= total);
        }
        row_start.push(cols.len());
        Ok(Self {
            param,
            grid,
            row_start,
            cols,
            fractions,
        })
    }

    /// Rebuilds an operator from `(row, col, weight)` triplets sorted by row.
    pub fn from_triplets(param: MapParameter, grid: Arc<GradedGrid>, triplets: &[(u32, u32, f64)]) -> Result<Self> {
        let n = grid.n();
        let mut row_start = vec![0usize; n + 1];
        let mut last = 0u32;
        for &(r, c, w) in triplets {
            if r as usize >= n || c as usize >= n || !(w.is_finite() && w >= 0.0) || r < last {
                return Err(Error::InvalidArgument("malformed operator triplet".into()));
            }
            last = r;
            row_start[r as usize + 1] += 1;
        }
        for i in 0..n {
            row_start[i + 1] += row_start[i];
        }
        Ok(Self {
            param,
            grid,
            row_start,
            cols: triplets.iter().map(|t| t.1).collect(),
            fractions: triplets.iter().map(|t| t.2).collect(),
        })
    }

    pub fn triplets(&self) -> Vec<(u32, u32, f64)> {
        let mut out = Vec::with_capacity(self.cols.len());
        for i in 0..self.grid.n() {
            for k in self.row_start[i]..self.row_start[i + 1] {
                out.push((i as u32, self.cols[k], self.fractions[k]));
            }
        }
        out
    }

    #[inline]
    pub fn param(&self) -> MapParameter {
        self.param
    }

    #[inline]
    pub fn grid(&self) -> &Arc<GradedGrid> {
        &self.grid
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// `(target, fraction)` pairs of source cell `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_start[i]..self.row_start[i + 1]).map(move |k| (self.cols[k] as usize, self.fractions[k]))
    }

    /// Cell-average form: `out_j = Σ_i f_i |c_i| P_ij / |c_j|`.
    pub fn apply_values(&self, src: &[f64], dst: &mut [f64]) {
        let w = self.grid.widths();
        dst.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..src.len() {
            let mass = src[i] * w[i];
            if mass == 0.0 {
                continue;
            }
            for k in self.row_start[i]..self.row_start[i + 1] {
                dst[self.cols[k] as usize] += mass * self.fractions[k];
            }
        }
        dst.iter_mut().zip(w).for_each(|(v, wj)| *v /= wj);
    }

    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        if !self.grid.same_as(f.grid()) {
            return Err(Error::GridMismatch);
        }
        let mut out = vec![0.0; self.grid.n()];
        self.apply_values(f.values(), &mut out);
        Ok(GridFunction::from_parts(self.grid.clone(), out, f.tag()))
    }
}

pub fn build_operator(param: MapParameter, grid: Arc<GradedGrid>) -> Result<TransferOperator> {
    TransferOperator::build(param, grid)
}

pub fn apply(op: &TransferOperator, f: &GridFunction) -> Result<GridFunction> {
    op.apply(f)
}

/// Where cocycle code gets its operators from.
pub trait OperatorSource: Sync {
    fn operator(&self, param: MapParameter, grid: &Arc<GradedGrid>) -> Result<Arc<TransferOperator>>;
}

/// Builds every operator from scratch.
#[derive(Debug, Default, Clone, Copy)]
pub struct Uncached;

impl OperatorSource for Uncached {
    fn operator(&self, param: MapParameter, grid: &Arc<GradedGrid>) -> Result<Arc<TransferOperator>> {
        TransferOperator::build(param, grid.clone()).map(Arc::new)
    }
}

/// Cache key: `γ` rounded to 12 significant digits, `N` and the bits of `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct OperatorKey {
    pub mantissa: i64,
    pub exponent: i32,
    pub n: usize,
    pub p_bits: u64,
}

impl OperatorKey {
    pub fn new(gamma: f64, grid: &GradedGrid) -> Self {
        let (mantissa, exponent) = if gamma == 0.0 {
            (0, 0)
        } else {
            let e = floor(libm::log10(gamma.abs())) as i32;
            let scaled = gamma * libm::pow(10.0, (11 - e) as f64);
            (libm::round(scaled) as i64, e)
        };
        Self {
            mantissa,
            exponent,
            n: grid.n(),
            p_bits: grid.p().to_bits(),
        }
    }
}

type CacheState = (BTreeMap<OperatorKey, Arc<TransferOperator>>, VecDeque<OperatorKey>);

/// Bounded in-memory operator cache with FIFO eviction.
pub struct MemoryCache {
    capacity: usize,
    inner: RwLock<CacheState>,
}

impl MemoryCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            inner: RwLock::new((BTreeMap::new(), VecDeque::new())),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.read().0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &OperatorKey) -> Option<Arc<TransferOperator>> {
        self.inner.read().0.get(key).cloned()
    }

    /// Inserts unless another thread won the race; returns the stored value.
    pub fn insert(&self, key: OperatorKey, op: Arc<TransferOperator>) -> Arc<TransferOperator> {
        let mut guard = self.inner.write();
        let (map, order) = &mut *guard;
        if let Some(existing) = map.get(&key) {
            return existing.clone();
        }
        if map.len() >= self.capacity {
            if let Some(old) = order.pop_front() {
                map.remove(&old);
            }
        }
        map.insert(key, op.clone());
        order.push_back(key);
        op
    }
}

impl Default for MemoryCache {
    fn default() -> Self {
        Self::new(256)
    }
}

impl OperatorSource for MemoryCache {
    fn operator(&self, param: MapParameter, grid: &Arc<GradedGrid>) -> Result<Arc<TransferOperator>> {
        let key = OperatorKey::new(param.gamma(), grid);
        if let Some(op) = self.get(&key) {
            return Ok(op);
        }
        let op = Arc::new(TransferOperator::build(param, grid.clone())?);
        Ok(self.insert(key, op))
    }
}

/// Pullback controls. The depth doubles from `min_depth` until the one-step
/// residual drops below `target` or `max_depth` is reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PullbackSettings {
    pub min_depth: usize,
    pub max_depth: usize,
    pub target: f64,
}

impl PullbackSettings {
    pub fn fixed(depth: usize) -> Self {
        Self {
            min_depth: depth,
            max_depth: depth,
            target: 0.0,
        }
    }
}

impl Default for PullbackSettings {
    fn default() -> Self {
        Self {
            min_depth: 2000,
            max_depth: 2000,
            target: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivariantDensity {
    pub omega_anchor: BasePoint,
    pub eps: f64,
    pub h: GridFunction,
    pub pullback_depth: usize,
    /// `‖L^depth 1 − L^{depth−1} 1‖_{L¹}` for the two runs ending at `ω`.
    pub residual: f64,
    pub min_value: f64,
    pub mass_drift: f64,
}

impl EquivariantDensity {
    pub fn converged(&self, target: f64) -> bool {
        self.residual <= target
    }
}

/// The cocycle `ω ↦ L_{ω,ε}` on a fixed grid.
#[derive(Clone, Copy)]
pub struct Cocycle<'a> {
    pub base: &'a BaseSystem,
    pub params: &'a ParameterProcess,
    pub grid: &'a Arc<GradedGrid>,
    pub source: &'a dyn OperatorSource,
}

impl<'a> Cocycle<'a> {
    pub fn new(
        base: &'a BaseSystem,
        params: &'a ParameterProcess,
        grid: &'a Arc<GradedGrid>,
        source: &'a dyn OperatorSource,
    ) -> Self {
        Self {
            base,
            params,
            grid,
            source,
        }
    }

    pub fn parameter(&self, omega: BasePoint, eps: f64) -> Result<MapParameter> {
        self.params.parameter_at(self.base, omega, eps)
    }

    pub fn operator(&self, omega: BasePoint, eps: f64) -> Result<Arc<TransferOperator>> {
        let p = self.parameter(omega, eps)?;
        self.source.operator(p, self.grid)
    }

    /// `L^n_{ω,ε} f`.
    pub fn compose_along(&self, omega: BasePoint, n: usize, f: &GridFunction, eps: f64) -> Result<GridFunction> {
        if !self.grid.same_as(f.grid()) {
            return Err(Error::GridMismatch);
        }
        let mut cur = f.values().to_vec();
        let mut next = vec![0.0; cur.len()];
        for k in 0..n {
            let op = self.operator(self.base.advance(omega, k as i64), eps)?;
            op.apply_values(&cur, &mut next);
            core::mem::swap(&mut cur, &mut next);
        }
        Ok(GridFunction::from_parts(self.grid.clone(), cur, f.tag()))
    }

    /// Pullback `L^L_{σ^{-L}ω,ε} 1` at one fixed depth.
    pub fn pullback(&self, omega: BasePoint, depth: usize, eps: f64) -> Result<EquivariantDensity> {
        if depth == 0 {
            return Err(Error::InvalidArgument("pullback depth must be at least 1".into()));
        }
        let n = self.grid.n();
        let mut a = vec![1.0; n];
        let mut b: Option<Vec<f64>> = None;
        let mut scratch = vec![0.0; n];
        for k in (1..=depth).rev() {
            if k + 1 == depth {
                b = Some(vec![1.0; n]);
            }
            let op = self.operator(self.base.advance(omega, -(k as i64)), eps)?;
            op.apply_values(&a, &mut scratch);
            core::mem::swap(&mut a, &mut scratch);
            if let Some(bv) = b.as_mut() {
                op.apply_values(bv, &mut scratch);
                core::mem::swap(bv, &mut scratch);
            }
        }
        let b = b.unwrap_or_else(|| vec![1.0; n]);
        let w = self.grid.widths();
        let residual = pairwise_sum(
            &a.iter()
                .zip(&b)
                .zip(w)
                .map(|((x, y), wi)| (x - y).abs() * wi)
                .collect::<Vec<_>>(),
        );
        let h = GridFunction::from_parts(self.grid.clone(), a, Tag::Signed);
        let mass = integrate(&h);
        let h = h.into_density()?;
        let min_value = h.min_value();
        Ok(EquivariantDensity {
            omega_anchor: omega,
            eps,
            h,
            pullback_depth: depth,
            residual,
            min_value,
            mass_drift: (mass - 1.0).abs(),
        })
    }

    /// `h_{ω,ε}` by pullback with depth doubling per `settings`.
    pub fn equivariant_density(
        &self,
        omega: BasePoint,
        settings: PullbackSettings,
        eps: f64,
    ) -> Result<EquivariantDensity> {
        let max_depth = settings.max_depth.max(1);
        let mut depth = settings.min_depth.clamp(1, max_depth);
        loop {
            let d = self.pullback(omega, depth, eps)?;
            if d.residual <= settings.target || depth >= max_depth {
                return Ok(d);
            }
            depth = (2 * depth).min(max_depth);
        }
    }

    /// `L^n_ω ψ = L^n_ω(ψ h_ω) / h_{σⁿω}`, guarded by `rho`.
    #[allow(clippy::too_many_arguments)]
    pub fn normalized_apply(
        &self,
        omega: BasePoint,
        h_omega: &GridFunction,
        h_target: &GridFunction,
        psi: &GridFunction,
        n: usize,
        eps: f64,
        rho: f64,
    ) -> Result<GridFunction> {
        psi.ensure_same_grid(h_omega)?;
        psi.ensure_same_grid(h_target)?;
        let min = h_target.min_value();
        if !(min >= rho) || min <= 0.0 {
            return Err(Error::DegenerateDensity { min, rho });
        }
        let weighted = psi.mul_cells(h_omega.values());
        let pushed = self.compose_along(omega, n, &weighted, eps)?;
        let values = pushed
            .values()
            .iter()
            .zip(h_target.values())
            .map(|(a, b)| a / b)
            .collect();
        Ok(GridFunction::from_parts(self.grid.clone(), values, Tag::Signed))
    }

    /// `‖L^n_{ω,ε}(φ₀ h)‖_{L¹}` for `n = 0..=n_max`, with `φ₀ = φ − ∫φh`.
    pub fn decay_profile(
        &self,
        omega: BasePoint,
        phi: &dyn Smooth,
        h: &GridFunction,
        n_max: usize,
        eps: f64,
    ) -> Result<DecayProfile> {
        let phi_cells = cell_averages(self.grid, |x| phi.value(x));
        let mean = h.pair_with(&phi_cells);
        let start: Vec<f64> = phi_cells
            .iter()
            .zip(h.values())
            .map(|(p, hv)| (p - mean) * hv)
            .collect();
        let f = GridFunction::from_parts(self.grid.clone(), start, Tag::Signed);
        self.decay_of(omega, &f, n_max, eps)
    }

    /// `‖L^n_{ω,ε} f‖_{L¹}` for `n = 0..=n_max` and a fit over `[n_max/4, n_max]`.
    pub fn decay_of(&self, omega: BasePoint, f: &GridFunction, n_max: usize, eps: f64) -> Result<DecayProfile> {
        if n_max < 16 {
            return Err(Error::InvalidArgument("decay profiles need n_max >= 16".into()));
        }
        let mut norms = Vec::with_capacity(n_max + 1);
        let mut cur = f.values().to_vec();
        let mut next = vec![0.0; cur.len()];
        let w = self.grid.widths();
        let l1 = |v: &[f64]| pairwise_sum(&v.iter().zip(w).map(|(a, b)| a.abs() * b).collect::<Vec<_>>());
        norms.push(l1(&cur));
        for k in 0..n_max {
            let op = self.operator(self.base.advance(omega, k as i64), eps)?;
            op.apply_values(&cur, &mut next);
            core::mem::swap(&mut cur, &mut next);
            norms.push(l1(&cur));
        }
        Ok(DecayProfile::new(norms, n_max / 4, n_max))
    }

    /// Monte Carlo tail `ℙ_ν(τ_ω ≥ n)` of the first entry time into `[1/2, 1]`.
    pub fn entry_time_tail(
        &self,
        omega: BasePoint,
        nu: &GridFunction,
        n_max: usize,
        trials: usize,
        seed: u64,
        eps: f64,
    ) -> Result<EntryTimeTail> {
        let sampler = DensitySampler::new(nu)?;
        let params: Vec<MapParameter> = (0..n_max)
            .map(|k| self.parameter(self.base.advance(omega, k as i64), eps))
            .collect::<Result<_>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // counts[t] = #trials with τ = t (t = n_max + 1 means "not yet entered").
        let mut counts = vec![0u64; n_max + 2];
        for _ in 0..trials {
            let mut x = sampler.sample(&mut rng);
            let mut tau = n_max + 1;
            for (k, p) in params.iter().enumerate() {
                x = step_point(*p, x, &mut rng);
                if x >= 0.5 {
                    tau = k + 1;
                    break;
                }
            }
            counts[tau] += 1;
        }
        let mut tail = vec![0.0; n_max + 1];
        let mut survivors = trials as u64;
        for n in 0..=n_max {
            // τ ≥ n  ⇔  not entered at steps 1..n−1
            if n >= 1 {
                survivors -= counts[n - 1];
            }
            tail[n] = survivors as f64 / trials as f64;
        }
        let floor = 10.0 / trials as f64;
        let fit = loglog_fit_range(&tail, (n_max / 4).max(2), n_max, floor);
        Ok(EntryTimeTail { tail, fit, trials })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayProfile {
    /// `norms[n]` for `n = 0..=n_max`.
    pub norms: Vec<f64>,
    pub fit: Option<LogLogFit>,
    pub fit_range: (usize, usize),
}

impl DecayProfile {
    pub fn new(norms: Vec<f64>, lo: usize, hi: usize) -> Self {
        let floor = 10.0 * f64::EPSILON * norms.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        let mut end = hi.min(norms.len().saturating_sub(1));
        if let Some(first_small) = (lo..=end).find(|&n| norms[n] < floor) {
            end = first_small.saturating_sub(1);
        }
        let lo = lo.max(1);
        let fit = if end > lo {
            loglog_fit_range(&norms, lo, end, floor)
        } else {
            None
        };
        Self {
            norms,
            fit,
            fit_range: (lo, end),
        }
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryTimeTail {
    /// `tail[n] = ℙ(τ ≥ n)` for `n = 0..=n_max`.
    pub tail: Vec<f64>,
    pub fit: Option<LogLogFit>,
    pub trials: usize,
}

/// Which cone conditions to test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    Star,
    C2,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ConeCondition {
    Nonneg,
    Decreasing,
    WeightedIncreasing,
    IntegralBound,
    FirstDerivative,
    SecondDerivative,
}

impl ConeCondition {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConeCondition::Nonneg => "nonneg",
            ConeCondition::Decreasing => "decreasing",
            ConeCondition::WeightedIncreasing => "x^(alpha+1) phi increasing",
            ConeCondition::IntegralBound => "integral bound",
            ConeCondition::FirstDerivative => "C2 first derivative",
            ConeCondition::SecondDerivative => "C2 second derivative",
        }
    }
}

/// Cone constants. `a`, `b1`, `b2` are diagnostics parameters; see
/// [`ConeParams::calibrated`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeParams {
    pub a: f64,
    pub alpha: f64,
    pub b1: f64,
    pub b2: f64,
    /// Tolerated negative margin.
    pub slack: f64,
}

impl ConeParams {
    /// Constants that every density computed in the test sweeps satisfies
    /// with room to spare.
    pub fn calibrated(alpha: f64) -> Self {
        Self {
            a: 2.0 / (1.0 - alpha),
            alpha,
            b1: 2.0,
            b2: 6.0,
            slack: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeMargin {
    pub condition: ConeCondition,
    /// Worst (smallest) dimensionless margin; negative means violated.
    pub margin: f64,
    /// Cell center or node where the worst margin occurs.
    pub location: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeReport {
    pub member: bool,
    pub margins: Vec<ConeMargin>,
    pub violations: Vec<ConeMargin>,
}

impl ConeReport {
    pub fn margin(&self, c: ConeCondition) -> Option<f64> {
        self.margins.iter().find(|m| m.condition == c).map(|m| m.margin)
    }

    pub fn worst_margin(&self) -> f64 {
        self.margins.iter().map(|m| m.margin).fold(f64::INFINITY, f64::min)
    }
}

fn worst(cond: ConeCondition, items: impl Iterator<Item = (f64, f64)>) -> ConeMargin {
    let mut best = ConeMargin {
        condition: cond,
        margin: f64::INFINITY,
        location: 0.0,
    };
    for (m, loc) in items {
        if m < best.margin || m.is_nan() {
            best.margin = if m.is_nan() { f64::NEG_INFINITY } else { m };
            best.location = loc;
        }
    }
    best
}

/// Membership of `f` in `𝒞*(a)` and/or `𝒞₂(b₁, b₂)` on the grid.
///
/// Margins are dimensionless: the monotonicity margins are divided by
/// `∫|f|`, the integral margin is `1 − ∫₀ˣf / (a x^{1−α} ∫f)` and the
/// derivative margins are `1 − x|f'|/(b₁ f)` and `1 − x²|f''|/(b₂ f)`.
/// Derivatives are taken in `(ln x, ln f)` over [`cone_stencil_spacing`]
/// cells. The first cell is exempt from the derivative tests (and the second
/// from the second-derivative test, whose stencil reaches the first).
pub fn cone_check(f: &GridFunction, cone: &ConeParams, which: ConeKind) -> ConeReport {
    let grid = f.grid();
    let n = grid.n();
    let v = f.values();
    let nodes = grid.nodes();
    let widths = grid.widths();
    let centers = grid.centers();
    let scale = f.l1_norm().max(f64::MIN_POSITIVE);
    let mut margins = Vec::new();

    margins.push(worst(
        ConeCondition::Nonneg,
        (0..n).map(|i| (v[i] / scale, centers[i])),
    ));

    if matches!(which, ConeKind::Star | ConeKind::Both) {
        margins.push(worst(
            ConeCondition::Decreasing,
            (0..n - 1).map(|i| ((v[i] - v[i + 1]) / scale, nodes[i + 1])),
        ));
        // Cell analogue of x^{α+1}φ: divide by the average of x^{-α-1}.
        let al = cone.alpha;
        let q: Vec<f64> = (1..n)
            .map(|i| {
                let avg = (powf(nodes[i], -al) - powf(nodes[i + 1], -al)) / (al * widths[i]);
                v[i] / avg
            })
            .collect();
        margins.push(worst(
            ConeCondition::WeightedIncreasing,
            (0..q.len().saturating_sub(1)).map(|k| ((q[k + 1] - q[k]) / scale, nodes[k + 2])),
        ));
        let cum = cumulative_integral(f);
        let total = cum[n];
        margins.push(worst(
            ConeCondition::IntegralBound,
            (1..=n).map(|k| {
                let bound = cone.a * powf(nodes[k], 1.0 - al) * total;
                (1.0 - cum[k] / bound, nodes[k])
            }),
        ));
    }

    if matches!(which, ConeKind::C2 | ConeKind::Both) && n >= 3 {
        // With u = ln x and F = ln f: x f'/f = F_u and x²f''/f = F_uu + F_u² − F_u.
        // Quadratics in (u, F) are exact for power laws, which is what the
        // cone densities look like near 0. Ulam images oscillate on the cell
        // scale, so the stencil spans `cone_stencil_spacing` cells (fewer
        // near 0, where the graded cells already cover a wide range of u).
        let logs: Vec<f64> = v.iter().map(|&y| if y > 0.0 { ln(y) } else { f64::NAN }).collect();
        let us: Vec<f64> = centers.iter().map(|&c| ln(c)).collect();
        let spacing = cone_stencil_spacing(n);
        let derivs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let m = (i / 4).clamp(1, spacing);
                let mid = i.clamp(m, n - 1 - m);
                let (a, b) = (mid - m, mid + m);
                log_derivatives([us[a], us[mid], us[b]], [logs[a], logs[mid], logs[b]], us[i])
            })
            .collect();
        let guard = |m: f64| if m.is_nan() { f64::NEG_INFINITY } else { m };
        margins.push(worst(
            ConeCondition::FirstDerivative,
            (1..n).map(|i| (guard(1.0 - derivs[i].0.abs() / cone.b1), centers[i])),
        ));
        margins.push(worst(
            ConeCondition::SecondDerivative,
            (2..n).map(|i| {
                let (d1, d2) = derivs[i];
                (guard(1.0 - (d2 + d1 * d1 - d1).abs() / cone.b2), centers[i])
            }),
        ));
    }

    let violations: Vec<ConeMargin> = margins.iter().filter(|m| m.margin < -cone.slack).copied().collect();
    ConeReport {
        member: violations.is_empty(),
        margins,
        violations,
    }
}

/// Stencil half-width, in cells, for the derivative cone conditions.
pub fn cone_stencil_spacing(n: usize) -> usize {
    ((libm::sqrt(n as f64) / 2.0) as usize).clamp(1, (n - 1) / 2)
}

/// First and second derivative at `at` of the quadratic through three points.
fn log_derivatives(u: [f64; 3], f: [f64; 3], at: f64) -> (f64, f64) {
    let d01 = (f[1] - f[0]) / (u[1] - u[0]);
    let d12 = (f[2] - f[1]) / (u[2] - u[1]);
    let d012 = (d12 - d01) / (u[2] - u[0]);
    (d01 + d012 * ((at - u[0]) + (at - u[1])), 2.0 * d012)
}

/// Decay exponent `1 − 1/α` of correlations for generic observables.
pub fn generic_decay_exponent(alpha: f64) -> f64 {
    1.0 - 1.0 / alpha
}

/// Decay exponent `1 − (1 + min(γ, α))/α` for observables vanishing like `x^γ`.
pub fn special_decay_exponent(alpha: f64, gamma_obs: f64) -> f64 {
    1.0 - (1.0 + gamma_obs.min(alpha)) / alpha
}

/// Pullback densities for a batch of anchors, in anchor order.
pub fn densities_at(
    cocycle: &Cocycle<'_>,
    anchors: &[BasePoint],
    settings: PullbackSettings,
    eps: f64,
) -> Result<Vec<EquivariantDensity>> {
    map_indexed(anchors.len(), |i| cocycle.equivariant_density(anchors[i], settings, eps))
        .into_iter()
        .collect()
}

/// Geometric mean ratio `norms[n]/norms[n/2]`, a crude local rate estimate.
pub fn local_rate(norms: &[f64], n: usize) -> Option<f64> {
    let m = n / 2;
    if m == 0 || n >= norms.len() || norms[m] <= 0.0 || norms[n] <= 0.0 {
        return None;
    }
    Some(ln(norms[n] / norms[m]) / ln(n as f64 / m as f64))
}

/// Magic bytes of the [`TransferOperator`] binary record.
pub const TOP1_MAGIC: &[u8; 4] = b"TOP1";

impl TransferOperator {
    /// `"TOP1"`, `γ: f64`, `N: u32`, `p: f64`, `nnz: u64`, then `(row u32, col u32, w f64)`; all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let nnz = self.cols.len();
        let mut out = Vec::with_capacity(32 + 16 * nnz);
        out.extend_from_slice(TOP1_MAGIC);
        out.extend_from_slice(&self.param.gamma().to_le_bytes());
        out.extend_from_slice(&(self.grid.n() as u32).to_le_bytes());
        out.extend_from_slice(&self.grid.p().to_le_bytes());
        out.extend_from_slice(&(nnz as u64).to_le_bytes());
        for (r, c, w) in self.triplets() {
            out.extend_from_slice(&r.to_le_bytes());
            out.extend_from_slice(&c.to_le_bytes());
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// Inverse of [`TransferOperator::to_bytes`]. Besides the framing, every
    /// row must carry unit mass, which catches most payload corruption.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |why: &str| Error::InvalidArgument(format!("TOP1 record: {why}"));
        if bytes.len() < 32 || &bytes[..4] != TOP1_MAGIC {
            return Err(bad("bad magic"));
        }
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let gamma = f64_at(4);
        let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let p = f64_at(16);
        let nnz = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
        if nnz > (bytes.len() as u64) / 16 || bytes.len() as u64 != 32 + 16 * nnz {
            return Err(bad("bad length"));
        }
        let triplets: Vec<(u32, u32, f64)> = bytes[32..]
            .chunks_exact(16)
            .map(|c| {
                (
                    u32::from_le_bytes(c[0..4].try_into().unwrap()),
                    u32::from_le_bytes(c[4..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..16].try_into().unwrap()),
                )
            })
            .collect();
        let op = Self::from_triplets(MapParameter::with_boundary(gamma)?, Arc::new(GradedGrid::new(n, p)?), &triplets)?;
        for i in 0..n {
            let mass: f64 = op.row(i).map(|(_, w)| w).sum();
            if (mass - 1.0).abs() > 1e-12 {
                return Err(bad("row mass is not 1"));
            }
        }
        Ok(op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::ParamExpr;
    use crate::grid::{l1_distance, make_grid};

    fn op(gamma: f64, n: usize, p: f64) -> TransferOperator {
        TransferOperator::build(MapParameter::with_boundary(gamma).unwrap(), make_grid(n, p).unwrap()).unwrap()
    }

    #[test]
    fn doubling_fixes_lebesgue_and_kills_cosine() {
        let o = op(0.0, 1024, 1.0);
        let g = o.grid().clone();
        let one = GridFunction::lebesgue(g.clone());
        assert!(l1_distance(&o.apply(&one).unwrap(), &one).unwrap() < 1e-14);
        let c = GridFunction::from_fn(g, |x| (2.0 * core::f64::consts::PI * x).cos());
        let out = o.apply(&c).unwrap();
        assert!(out.l1_norm() < 1e-5);
    }

    #[test]
    fn mass_and_positivity() {
        let o = op(0.37, 512, 3.0);
        let g = o.grid().clone();
        let f = GridFunction::from_fn(g.clone(), |x| (5.0 * x).sin() + 0.3);
        let out = o.apply(&f).unwrap();
        assert!((integrate(&out) - integrate(&f)).abs() < 1e-12);
        let pos = GridFunction::from_fn(g, |x| 1.0 + x * x);
        assert!(o.apply(&pos).unwrap().values().iter().all(|v| *v >= 0.0));
        let zero = GridFunction::zeros(o.grid().clone());
        assert_eq!(o.apply(&zero).unwrap().l1_norm(), 0.0);
    }

    #[test]
    fn triplet_roundtrip() {
        let o = op(0.25, 64, 2.0);
        let t = o.triplets();
        let back = TransferOperator::from_triplets(o.param(), o.grid().clone(), &t).unwrap();
        assert_eq!(back, o);
    }

    #[test]
    fn rows_are_stochastic() {
        let o = op(0.6, 300, 3.0);
        for i in 0..300 {
            let s: f64 = o.row(i).map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cache_key_rounds_to_twelve_digits() {
        let g = make_grid(16, 1.0).unwrap();
        assert_eq!(OperatorKey::new(0.25, &g), OperatorKey::new(0.25 + 1e-15, &g));
        assert_ne!(OperatorKey::new(0.25, &g), OperatorKey::new(0.25 + 1e-10, &g));
        let cache = MemoryCache::new(2);
        for gamma in [0.1, 0.2, 0.3] {
            cache.operator(MapParameter::new(gamma).unwrap(), &g).unwrap();
        }
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn compose_zero_is_identity_and_two_steps_unroll() {
        let base = BaseSystem::golden_rotation();
        let params = ParameterProcess::new(&base, ParamExpr::sin(0.25, 0.05), ParamExpr::Const(1.0), 0.1, 0.4, 0.05).unwrap();
        let grid = make_grid(256, 3.0).unwrap();
        let cc = Cocycle::new(&base, &params, &grid, &Uncached);
        let w = BasePoint::rotation(0.3);
        let f = GridFunction::from_fn(grid.clone(), |x| 1.0 + x);
        assert_eq!(cc.compose_along(w, 0, &f, 0.0).unwrap(), f);
        let two = cc.compose_along(w, 2, &f, 0.01).unwrap();
        let manual = cc
            .operator(base.advance(w, 1), 0.01)
            .unwrap()
            .apply(&cc.operator(w, 0.01).unwrap().apply(&f).unwrap())
            .unwrap();
        assert_eq!(two, manual);
    }

    #[test]
    fn unit_function_is_in_the_star_cone() {
        let g = make_grid(512, 3.0).unwrap();
        let cone = ConeParams::calibrated(0.3);
        assert!(cone_check(&GridFunction::lebesgue(g.clone()), &cone, ConeKind::Star).member);
        let x = GridFunction::from_fn(g, |x| x);
        let r = cone_check(&x, &cone, ConeKind::Star);
        assert!(!r.member);
        assert!(r.violations.iter().any(|v| v.condition == ConeCondition::Decreasing));
    }

    #[test]
    fn entry_time_trivial_cases() {
        let base = BaseSystem::golden_rotation();
        let params = ParameterProcess::new(&base, ParamExpr::Const(0.3), ParamExpr::Const(0.0), 0.2, 0.4, 0.0).unwrap();
        let grid = make_grid(64, 1.0).unwrap();
        let cc = Cocycle::new(&base, &params, &grid, &Uncached);
        let nu = GridFunction::lebesgue(grid.clone());
        let t = cc.entry_time_tail(BasePoint::rotation(0.0), &nu, 20, 1000, 1, 0.0).unwrap();
        assert_eq!(t.tail[0], 1.0);
        assert_eq!(t.tail[1], 1.0);
        assert!(t.tail.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn top1_round_trip_and_rejections() {
        let g = make_grid(64, 2.0).unwrap();
        for gamma in [0.0, 0.3] {
            let op = TransferOperator::build(MapParameter::with_boundary(gamma).unwrap(), g.clone()).unwrap();
            let bytes = op.to_bytes();
            assert_eq!(bytes.len(), 32 + 16 * op.nnz());
            assert_eq!(TransferOperator::from_bytes(&bytes).unwrap(), op);
            assert!(TransferOperator::from_bytes(&bytes[..bytes.len() - 8]).is_err());
            let mut bad = bytes.clone();
            bad[1] = 0;
            assert!(TransferOperator::from_bytes(&bad).is_err());
            let mut bad = bytes;
            let last = bad.len() - 1;
            bad[last] ^= 0x40;
            assert!(TransferOperator::from_bytes(&bad).is_err());
        }
    }
}
