//! Observables, fiberwise centering, quenched CLT experiments and the
//! Green–Kubo variance.
//!
//! A fiber observable is `F = a − c·b` with closed-form profiles `a`, `b`
//! (`b` only for the special vanishing family, where `c = c_ω`). Centering
//! subtracts `m = ∫F h dm` computed on the grid, so centered observables
//! integrate to zero against the grid densities up to round-off.

use alloc::boxed::Box;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::base::{BasePoint, BaseState};
use crate::error::{Error, Result};
use crate::fit::{envelope_constant, loglog_fit, power_tail_sum, LogLogFit};
use crate::grid::{cell_averages, observable_norms, GradedGrid, GridFunction, Tag};
use crate::lsv::MapParameter;
use crate::math::{map_indexed, mean_and_stderr, normal_cdf, pairwise_sum, pow_nonneg, sqrt};
use crate::profile::{Profile, Smooth};
use crate::transfer::{
    generic_decay_exponent, special_decay_exponent, Cocycle, EquivariantDensity, PullbackSettings,
};
use crate::Verdict;

/// Below this `∫u dμ_ω` a special observable is rejected.
pub const SPECIAL_MASS_FLOOR: f64 = 1e-12;

/// Normalized sums with `|S| ≤ UNIT_MASS_RESOLUTION` count as exactly 0 in
/// the degenerate (unit mass) branch.
pub const UNIT_MASS_RESOLUTION: f64 = 1e-8;

const TRIAL_CHUNKS: usize = 64;

/// Inverse-CDF sampling from a cellwise-constant density.
#[derive(Debug, Clone)]
pub struct DensitySampler {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    values: Vec<f64>,
}

impl DensitySampler {
    pub fn new(h: &GridFunction) -> Result<Self> {
        if h.values().iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument("sampling density has negative cells".into()));
        }
        let w = h.grid().widths();
        let mut cdf = Vec::with_capacity(w.len() + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for (v, wi) in h.values().iter().zip(w) {
            acc += v * wi;
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::InvalidArgument("sampling density has zero mass".into()));
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        Ok(Self {
            nodes: h.grid().nodes().to_vec(),
            cdf,
            values: h.values().iter().map(|v| v / acc).collect(),
        })
    }

    /// Exact for the cellwise representation: the CDF is linear inside cells.
    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.values.len();
        let i = self.cdf.partition_point(|c| *c <= u).clamp(1, n) - 1;
        let (lo, hi) = (self.nodes[i], self.nodes[i + 1]);
        if self.values[i] <= 0.0 {
            return lo;
        }
        (lo + (u - self.cdf[i]) / self.values[i]).clamp(lo, hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }
}

/// One step of the true map on a point.
///
/// The doubling map shifts out one bit per step, so in floating point every
/// orbit reaches 0 after about 53 steps. Boundary mode therefore refills the
/// lowest bits with fresh random bits, which reproduces the law of a true
/// orbit. For `γ > 0` a landing exactly on the fixed point 0 (an artefact of
/// dyadic round-off) is nudged the same way.
#[inline]
pub fn step_point<R: RngCore + ?Sized>(param: MapParameter, x: f64, rng: &mut R) -> f64 {
    if param.is_boundary() {
        let mut y = 2.0 * x;
        if y >= 1.0 {
            y -= 1.0;
        }
        let fresh = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let z = y + fresh * f64::EPSILON;
        return if z >= 1.0 { y } else { z };
    }
    let y = param.apply(x);
    if y == 0.0 {
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * f64::EPSILON
    } else {
        y
    }
}

/// Per-fiber observable selector.
pub type FiberFn = dyn Fn(&BaseState) -> Profile + Send + Sync;

#[derive(Clone)]
pub enum ObservableFamily {
    /// The same `F` on every fiber.
    Fixed(Profile),
    /// `φ_ω = u (g − c_ω)` with `c_ω = ∫gu dμ_ω / ∫u dμ_ω` and `u ≤ K x^{γ_obs}`.
    Special {
        u: Profile,
        g: Profile,
        gamma_obs: f64,
        k: f64,
    },
    /// `ω ↦ F_ω`.
    Custom(Arc<FiberFn>),
}

impl core::fmt::Debug for ObservableFamily {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ObservableFamily::Fixed(p) => f.debug_tuple("Fixed").field(p).finish(),
            ObservableFamily::Special { u, g, gamma_obs, k } => f
                .debug_struct("Special")
                .field("u", u)
                .field("g", g)
                .field("gamma_obs", gamma_obs)
                .field("k", k)
                .finish(),
            ObservableFamily::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObservableProcess {
    pub family: ObservableFamily,
    /// `esssup ‖F_ω‖_{C²}`; infinite for special profiles that are not `C²` at 0.
    pub uniform_c2_bound: f64,
}

fn c2_or_inf(p: &dyn Smooth) -> f64 {
    observable_norms(p, 4096).map(|n| n.c2).unwrap_or(f64::INFINITY)
}

impl ObservableProcess {
    pub fn fixed(f: Profile) -> Self {
        let bound = c2_or_inf(&f);
        Self {
            family: ObservableFamily::Fixed(f),
            uniform_c2_bound: bound,
        }
    }

    /// Validates `u ≥ 0` and measures `K = sup u(x)/x^{γ_obs}` on samples.
    pub fn special(u: Profile, g: Profile, gamma_obs: f64) -> Result<Self> {
        if !(gamma_obs >= 0.0 && gamma_obs.is_finite()) {
            return Err(Error::Config(format!("gamma_obs must be >= 0, got {gamma_obs}")));
        }
        let mut k = 0.0f64;
        for i in 1..=4096 {
            let x = i as f64 / 4096.0;
            let v = u.value(x);
            if v < 0.0 {
                return Err(Error::Config(format!("special observable u is negative at {x}")));
            }
            k = k.max(v / pow_nonneg(x, gamma_obs));
        }
        if u.value(0.0) != 0.0 && gamma_obs > 0.0 {
            return Err(Error::Config("special observable u must vanish at 0".into()));
        }
        if k == 0.0 {
            return Err(Error::Config("special observable u vanishes identically".into()));
        }
        let ug = Profile::Product(Box::new(u.clone()), Box::new(g.clone()));
        let bound = c2_or_inf(&ug).max(c2_or_inf(&u) * g.sup_norm(4096));
        Ok(Self {
            family: ObservableFamily::Special { u, g, gamma_obs, k },
            uniform_c2_bound: bound,
        })
    }

    pub fn custom(bound: f64, f: Arc<FiberFn>) -> Self {
        Self {
            family: ObservableFamily::Custom(f),
            uniform_c2_bound: bound,
        }
    }

    pub fn is_special(&self) -> bool {
        matches!(self.family, ObservableFamily::Special { .. })
    }

    pub fn gamma_obs(&self) -> Option<f64> {
        match self.family {
            ObservableFamily::Special { gamma_obs, .. } => Some(gamma_obs),
            _ => None,
        }
    }

    /// True when every fiber is a constant function.
    pub fn is_constant(&self) -> bool {
        match &self.family {
            ObservableFamily::Fixed(p) => p.is_constant(),
            ObservableFamily::Special { g, .. } => g.is_constant(),
            ObservableFamily::Custom(_) => false,
        }
    }

    /// Correlation decay exponent used for truncation tails.
    pub fn decay_exponent(&self, alpha: f64) -> f64 {
        match self.gamma_obs() {
            Some(g) => special_decay_exponent(alpha, g),
            None => generic_decay_exponent(alpha),
        }
    }
}

/// `F = a − c·b` before centering; `c = 0` when `b` is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberProfile {
    pub a: Profile,
    pub b: Option<Profile>,
}

impl FiberProfile {
    #[inline]
    pub fn eval(&self, c: f64, x: f64) -> f64 {
        match &self.b {
            Some(b) => self.a.value(x) - c * b.value(x),
            None => self.a.value(x),
        }
    }
}

/// Cell averages of `a`, `b`, `a²`, `ab`, `b²` on one grid.
#[derive(Debug, Clone)]
struct BasisCells {
    a: Vec<f64>,
    b: Option<Vec<f64>>,
    a2: Vec<f64>,
    ab: Vec<f64>,
    b2: Vec<f64>,
}

impl BasisCells {
    fn new(profile: &FiberProfile, grid: &GradedGrid) -> Self {
        let a = cell_averages(grid, |x| profile.a.value(x));
        let a2 = cell_averages(grid, |x| {
            let v = profile.a.value(x);
            v * v
        });
        match &profile.b {
            Some(bp) => Self {
                b: Some(cell_averages(grid, |x| bp.value(x))),
                ab: cell_averages(grid, |x| profile.a.value(x) * bp.value(x)),
                b2: cell_averages(grid, |x| {
                    let v = bp.value(x);
                    v * v
                }),
                a,
                a2,
            },
            None => Self {
                a,
                b: None,
                a2,
                ab: Vec::new(),
                b2: Vec::new(),
            },
        }
    }

    /// Cell averages of `a − c b`.
    fn raw(&self, c: f64) -> Vec<f64> {
        match &self.b {
            Some(b) => self.a.iter().zip(b).map(|(x, y)| x - c * y).collect(),
            None => self.a.clone(),
        }
    }

    /// Cell averages of `(a − c b − m)²`.
    fn centered_square(&self, c: f64, m: f64) -> Vec<f64> {
        let raw = self.raw(c);
        (0..self.a.len())
            .map(|i| {
                let sq = match &self.b {
                    Some(_) => self.a2[i] - 2.0 * c * self.ab[i] + c * c * self.b2[i],
                    None => self.a2[i],
                };
                sq - 2.0 * m * raw[i] + m * m
            })
            .collect()
    }
}

/// A fiber observable centered against one density.
#[derive(Debug, Clone)]
pub struct CenteredFiber {
    pub profile: FiberProfile,
    /// `c_ω` for special observables, 0 otherwise.
    pub c: f64,
    /// `∫F h dm` that was subtracted.
    pub mean: f64,
    /// Cell averages of the centered observable.
    pub cells: Vec<f64>,
    /// Cell averages of its square.
    pub square_cells: Vec<f64>,
}

impl CenteredFiber {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.profile.eval(self.c, x) - self.mean
    }

    /// `∫ f h dm` on the grid.
    pub fn integral_against(&self, h: &GridFunction) -> f64 {
        h.pair_with(&self.cells)
    }

    pub fn as_grid_function(&self, grid: Arc<GradedGrid>) -> GridFunction {
        GridFunction::from_parts(grid, self.cells.clone(), Tag::Signed)
    }
}

fn center_with(profile: FiberProfile, basis: &BasisCells, c: f64, h: &GridFunction) -> CenteredFiber {
    let raw = basis.raw(c);
    let mean = h.pair_with(&raw);
    let cells = raw.iter().map(|v| v - mean).collect();
    let square_cells = basis.centered_square(c, mean);
    CenteredFiber {
        profile,
        c,
        mean,
        cells,
        square_cells,
    }
}

/// `F − ∫F h dm`.
pub fn center_observable(f: &Profile, h: &GridFunction) -> CenteredFiber {
    let profile = FiberProfile { a: f.clone(), b: None };
    let basis = BasisCells::new(&profile, h.grid());
    center_with(profile, &basis, 0.0, h)
}

fn special_constant(basis: &BasisCells, h: &GridFunction) -> Result<f64> {
    let b = basis.b.as_ref().expect("special basis has b");
    let mass = h.pair_with(b);
    if !(mass >= SPECIAL_MASS_FLOOR) {
        return Err(Error::DegenerateObservable { mass });
    }
    Ok(h.pair_with(&basis.a) / mass)
}

/// `φ_ω = u (g − c_ω)` with `c_ω = ∫gu h / ∫u h`.
pub fn build_special_observable(u: &Profile, g: &Profile, h: &GridFunction) -> Result<CenteredFiber> {
    let profile = FiberProfile {
        a: Profile::Product(Box::new(u.clone()), Box::new(g.clone())),
        b: Some(u.clone()),
    };
    let basis = BasisCells::new(&profile, h.grid());
    let c = special_constant(&basis, h)?;
    Ok(center_with(profile, &basis, c, h))
}

/// An observable process bound to a grid, with the fiber-independent cell
/// averages computed once.
pub struct PreparedObservable<'o> {
    obs: &'o ObservableProcess,
    grid: Arc<GradedGrid>,
    shared: Option<(FiberProfile, BasisCells)>,
}

impl<'o> PreparedObservable<'o> {
    pub fn new(obs: &'o ObservableProcess, grid: &Arc<GradedGrid>) -> Self {
        let shared = match &obs.family {
            ObservableFamily::Fixed(f) => {
                let p = FiberProfile { a: f.clone(), b: None };
                let b = BasisCells::new(&p, grid);
                Some((p, b))
            }
            ObservableFamily::Special { u, g, .. } => {
                let p = FiberProfile {
                    a: Profile::Product(Box::new(u.clone()), Box::new(g.clone())),
                    b: Some(u.clone()),
                };
                let b = BasisCells::new(&p, grid);
                Some((p, b))
            }
            ObservableFamily::Custom(_) => None,
        };
        Self {
            obs,
            grid: grid.clone(),
            shared,
        }
    }

    pub fn observable(&self) -> &ObservableProcess {
        self.obs
    }

    /// `c_ω` from the density at that fiber (special family; 0 otherwise).
    pub fn fiber_constant(&self, h: &GridFunction) -> Result<f64> {
        match (&self.obs.family, &self.shared) {
            (ObservableFamily::Special { .. }, Some((_, basis))) => special_constant(basis, h),
            _ => Ok(0.0),
        }
    }

    /// Centered fiber at `state` against `h`. `c` overrides the special
    /// constant (used to freeze `F_ω` across perturbations).
    pub fn fiber(&self, state: &BaseState, h: &GridFunction, c: Option<f64>) -> Result<CenteredFiber> {
        match &self.shared {
            Some((p, basis)) => {
                let c = match c {
                    Some(c) => c,
                    None => self.fiber_constant(h)?,
                };
                Ok(center_with(p.clone(), basis, c, h))
            }
            None => {
                let ObservableFamily::Custom(f) = &self.obs.family else {
                    unreachable!("only custom observables lack shared cells")
                };
                let p = FiberProfile { a: f(state), b: None };
                let basis = BasisCells::new(&p, &self.grid);
                Ok(center_with(p, &basis, 0.0, h))
            }
        }
    }

    /// Uncentered `F` cell averages at `state` with constant `c`.
    pub fn raw_cells(&self, state: &BaseState, c: f64) -> Vec<f64> {
        match &self.shared {
            Some((_, basis)) => basis.raw(c),
            None => {
                let ObservableFamily::Custom(f) = &self.obs.family else { unreachable!() };
                let p = f(state);
                cell_averages(&self.grid, |x| p.value(x))
            }
        }
    }
}

/// Special constants `c_{σⁿω}` along the unperturbed orbit, `n = 0..=n_max`.
pub fn frozen_constants(
    cc: &Cocycle<'_>,
    prep: &PreparedObservable<'_>,
    omega: BasePoint,
    h0: &GridFunction,
    n_max: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n_max + 1);
    let mut h = h0.values().to_vec();
    let mut next = vec![0.0; h.len()];
    for n in 0..=n_max {
        let hf = GridFunction::from_parts(cc.grid.clone(), h.clone(), Tag::Signed);
        out.push(prep.fiber_constant(&hf)?);
        if n < n_max {
            cc.operator(cc.base.advance(omega, n as i64), 0.0)?.apply_values(&h, &mut next);
            core::mem::swap(&mut h, &mut next);
        }
    }
    Ok(out)
}

/// `term0 = ∫f_ω² h_ω` and `C_n = ∫ f_{σⁿω} L^n_ω(f_ω h_ω)` for one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorCorrelations {
    pub anchor: BasePoint,
    pub term0: f64,
    /// `correlations[n − 1] = C_n`, `n = 1..=n_max`.
    pub correlations: Vec<f64>,
    pub residual: f64,
    pub min_density: f64,
}

impl AnchorCorrelations {
    /// `term0 + 2 Σ C_n`.
    pub fn variance(&self) -> f64 {
        self.term0 + 2.0 * pairwise_sum(&self.correlations)
    }
}

/// Correlations along the orbit of `ω` starting from the density `density`.
pub fn anchor_correlations(
    cc: &Cocycle<'_>,
    prep: &PreparedObservable<'_>,
    density: &EquivariantDensity,
    n_max: usize,
    eps: f64,
    frozen: Option<&[f64]>,
) -> Result<AnchorCorrelations> {
    let omega = density.omega_anchor;
    let grid = cc.grid;
    let mut h = density.h.values().to_vec();
    let hf = &density.h;
    let c0 = frozen.map(|f| f[0]);
    let f0 = prep.fiber(&cc.base.state(omega), hf, c0)?;
    let term0 = hf.pair_with(&f0.square_cells);
    let mut v: Vec<f64> = f0.cells.iter().zip(&h).map(|(f, hv)| f * hv).collect();
    let mut scratch = vec![0.0; h.len()];
    let mut correlations = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let op = cc.operator(cc.base.advance(omega, n as i64 - 1), eps)?;
        op.apply_values(&v, &mut scratch);
        core::mem::swap(&mut v, &mut scratch);
        op.apply_values(&h, &mut scratch);
        core::mem::swap(&mut h, &mut scratch);
        let hn = GridFunction::from_parts(grid.clone(), h.clone(), Tag::Signed);
        let point = cc.base.advance(omega, n as i64);
        let fnn = prep.fiber(&cc.base.state(point), &hn, frozen.map(|f| f[n]))?;
        let vn = GridFunction::from_parts(grid.clone(), v.clone(), Tag::Signed);
        correlations.push(vn.pair_with(&fnn.cells));
    }
    Ok(AnchorCorrelations {
        anchor: omega,
        term0,
        correlations,
        residual: density.residual,
        min_density: density.min_value,
    })
}

/// Green–Kubo controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenKuboSettings {
    pub n_max: usize,
    pub omega_count: usize,
    pub seed: u64,
    pub pullback: PullbackSettings,
}

impl Default for GreenKuboSettings {
    fn default() -> Self {
        Self {
            n_max: 512,
            omega_count: 32,
            seed: 0,
            pullback: PullbackSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub eps: f64,
    pub sigma2: f64,
    /// `ℙ`-average of `∫ f_ω² dμ_ω`.
    pub term0: f64,
    pub n_max: usize,
    /// `2 Ĉ Σ_{n>n_max} n^{s}` with the fitted envelope constant `Ĉ`.
    pub tail_bound: f64,
    pub mc_stderr: f64,
    pub envelope: f64,
    pub decay_exponent: f64,
    /// Average `C_n` over anchors, `n = 1..=n_max`.
    pub mean_correlations: Vec<f64>,
    /// Per-anchor `term0 + 2ΣC_n`, in anchor order.
    pub per_anchor: Vec<f64>,
    pub anchors: Vec<BasePoint>,
    pub max_residual: f64,
    pub min_density: f64,
}

impl VarianceEstimate {
    /// Nonnegativity up to the reported error budget.
    pub fn consistent_sign(&self) -> bool {
        self.sigma2 >= -(self.tail_bound + 3.0 * self.mc_stderr)
    }

    pub fn error_budget(&self) -> f64 {
        self.tail_bound + 3.0 * self.mc_stderr
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma2 <= 3.0 * (self.tail_bound + self.mc_stderr)
    }
}

/// Reduces per-anchor correlations into a [`VarianceEstimate`].
pub fn summarize_variance(
    eps: f64,
    alpha: f64,
    exponent: f64,
    boundary: bool,
    rows: &[AnchorCorrelations],
) -> VarianceEstimate {
    let count = rows.len().max(1);
    let n_max = rows.first().map(|r| r.correlations.len()).unwrap_or(0);
    let per_anchor: Vec<f64> = rows.iter().map(AnchorCorrelations::variance).collect();
    let (sigma2, mc_stderr) = mean_and_stderr(&per_anchor);
    let term0 = pairwise_sum(&rows.iter().map(|r| r.term0).collect::<Vec<_>>()) / count as f64;
    let mean_correlations: Vec<f64> = (0..n_max)
        .map(|k| pairwise_sum(&rows.iter().map(|r| r.correlations[k]).collect::<Vec<_>>()) / count as f64)
        .collect();
    let mean_abs: Vec<f64> = (0..=n_max)
        .map(|n| {
            if n == 0 {
                0.0
            } else {
                pairwise_sum(&rows.iter().map(|r| r.correlations[n - 1].abs()).collect::<Vec<_>>()) / count as f64
            }
        })
        .collect();
    let (envelope, tail_bound) = if n_max == 0 {
        (0.0, 0.0)
    } else if boundary {
        // Exponential decay: bound the tail by the last quarter's mass.
        let lo = (3 * n_max / 4).max(1);
        let s: f64 = mean_abs[lo..=n_max].iter().sum();
        (s, 2.0 * s)
    } else {
        let c = envelope_constant(&mean_abs, (n_max / 4).max(1), n_max, exponent);
        (c, 2.0 * c * power_tail_sum(n_max, exponent))
    };
    let _ = alpha;
    VarianceEstimate {
        eps,
        sigma2,
        term0,
        n_max,
        tail_bound,
        mc_stderr,
        envelope,
        decay_exponent: exponent,
        mean_correlations,
        per_anchor,
        anchors: rows.iter().map(|r| r.anchor).collect(),
        max_residual: rows.iter().map(|r| r.residual).fold(0.0, f64::max),
        min_density: rows.iter().map(|r| r.min_density).fold(f64::INFINITY, f64::min),
    }
}

/// Anchors used by the variance estimators for a given seed.
pub fn variance_anchors(cc: &Cocycle<'_>, settings: &GreenKuboSettings) -> Vec<BasePoint> {
    cc.base.sample_omegas(settings.omega_count, settings.seed, 0)
}

/// `Σ²_ε` at explicit anchors; special constants are frozen at `ε = 0`.
pub fn green_kubo_at(
    cc: &Cocycle<'_>,
    obs: &ObservableProcess,
    eps: f64,
    anchors: &[BasePoint],
    n_max: usize,
    pullback: PullbackSettings,
) -> Result<VarianceEstimate> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be positive".into()));
    }
    let prep = PreparedObservable::new(obs, cc.grid);
    let rows: Vec<AnchorCorrelations> = map_indexed(anchors.len(), |i| {
        let omega = anchors[i];
        let density = cc.equivariant_density(omega, pullback, eps)?;
        let frozen = if obs.is_special() && eps != 0.0 {
            let d0 = cc.equivariant_density(omega, pullback, 0.0)?;
            Some(frozen_constants(cc, &prep, omega, &d0.h, n_max)?)
        } else {
            None
        };
        anchor_correlations(cc, &prep, &density, n_max, eps, frozen.as_deref())
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let alpha = cc.params.alpha_upper();
    let exponent = obs.decay_exponent(alpha.max(f64::MIN_POSITIVE));
    Ok(summarize_variance(eps, alpha, exponent, cc.params.is_boundary(), &rows))
}

/// `Σ²_ε` by Green–Kubo over `omega_count` sampled anchors.
pub fn green_kubo_variance(
    cc: &Cocycle<'_>,
    obs: &ObservableProcess,
    eps: f64,
    settings: &GreenKuboSettings,
) -> Result<VarianceEstimate> {
    if settings.n_max < 16 {
        return Err(Error::InvalidArgument("green_kubo_variance needs n_max >= 16".into()));
    }
    if settings.omega_count < 8 {
        return Err(Error::InvalidArgument("green_kubo_variance needs omega_count >= 8".into()));
    }
    let anchors = variance_anchors(cc, settings);
    green_kubo_at(cc, obs, eps, &anchors, settings.n_max, settings.pullback)
}

/// Kolmogorov–Smirnov distance between a sample and `N(0, σ²)`.
pub fn ks_normal(samples: &[f64], sigma: f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x, sigma);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Kolmogorov–Smirnov distance to the unit mass at 0.
pub fn ks_unit_mass(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let below = samples.iter().filter(|s| **s < -UNIT_MASS_RESOLUTION).count() as f64;
    let above = samples.iter().filter(|s| **s > UNIT_MASS_RESOLUTION).count() as f64;
    (below / n).max(above / n)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = if x[i] <= y[j] { x[i] } else { y[j] };
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    d
}

/// 5% critical value `1.36/√trials`.
pub fn ks_critical(trials: usize) -> f64 {
    1.36 / sqrt(trials as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltReport {
    pub anchor: BasePoint,
    pub n: usize,
    pub trials: usize,
    pub sigma2_hat: f64,
    pub ks_stat: f64,
    pub ks_critical: f64,
    pub pass: bool,
    /// The unit-mass comparison was used.
    pub degenerate: bool,
    pub sample_mean: f64,
    pub sample_variance: f64,
    /// `S_n/√n` per trial.
    pub samples: Vec<f64>,
    pub density_residual: f64,
}

impl CltReport {
    pub fn verdict_label(&self) -> &'static str {
        match (self.pass, self.degenerate) {
            (true, true) => "pass(unit-mass)",
            (true, false) => "pass",
            (false, true) => "fail(unit-mass)",
            (false, false) => "fail",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CltSettings {
    pub n: usize,
    pub trials: usize,
    pub eps: f64,
    pub seed: u64,
    pub pullback: PullbackSettings,
}

/// Monte Carlo distribution of `S_n/√n` at one anchor, compared with
/// `N(0, σ̂²)` (or the unit mass at 0 when `σ̂²` is within its error budget of 0).
pub fn birkhoff_clt(
    cc: &Cocycle<'_>,
    obs: &ObservableProcess,
    omega: BasePoint,
    variance: &VarianceEstimate,
    settings: &CltSettings,
) -> Result<CltReport> {
    let n = settings.n;
    let eps = settings.eps;
    if n == 0 || settings.trials == 0 {
        return Err(Error::InvalidArgument("n and trials must be positive".into()));
    }
    let prep = PreparedObservable::new(obs, cc.grid);
    let density = cc.equivariant_density(omega, settings.pullback, eps)?;
    let sampler = DensitySampler::new(&density.h)?;

    // Per-step map parameters and centered fibers, by pushing h forward.
    let mut params = Vec::with_capacity(n);
    let mut fibers: Vec<(FiberProfile, f64, f64)> = Vec::with_capacity(n);
    let frozen = if obs.is_special() && eps != 0.0 {
        let d0 = cc.equivariant_density(omega, settings.pullback, 0.0)?;
        Some(frozen_constants(cc, &prep, omega, &d0.h, n)?)
    } else {
        None
    };
    let mut h = density.h.values().to_vec();
    let mut scratch = vec![0.0; h.len()];
    for k in 0..n {
        let point = cc.base.advance(omega, k as i64);
        let hk = GridFunction::from_parts(cc.grid.clone(), h.clone(), Tag::Signed);
        let fiber = prep.fiber(&cc.base.state(point), &hk, frozen.as_ref().map(|f| f[k]))?;
        fibers.push((fiber.profile, fiber.c, fiber.mean));
        let p = cc.parameter(point, eps)?;
        params.push(p);
        if k + 1 < n {
            cc.source.operator(p, cc.grid)?.apply_values(&h, &mut scratch);
            core::mem::swap(&mut h, &mut scratch);
        }
    }

    let trials = settings.trials;
    let norm = sqrt(n as f64);
    let chunk = trials.div_ceil(TRIAL_CHUNKS);
    let chunks: Vec<Vec<f64>> = map_indexed(TRIAL_CHUNKS, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(c as u64 + 1);
        let lo = c * chunk;
        let hi = ((c + 1) * chunk).min(trials);
        (lo..hi)
            .map(|_| {
                let mut x = sampler.sample(&mut rng);
                let mut s = 0.0;
                for k in 0..n {
                    let (p, c, m) = &fibers[k];
                    s += p.eval(*c, x) - m;
                    x = step_point(params[k], x, &mut rng);
                }
                s / norm
            })
            .collect()
    });
    let samples: Vec<f64> = chunks.into_iter().flatten().collect();
    let (sample_mean, _) = mean_and_stderr(&samples);
    let dev: Vec<f64> = samples.iter().map(|s| (s - sample_mean) * (s - sample_mean)).collect();
    let sample_variance = pairwise_sum(&dev) / (samples.len().max(2) - 1) as f64;
    let crit = ks_critical(trials);
    let degenerate = variance.is_degenerate();
    let ks_stat = if degenerate {
        ks_unit_mass(&samples)
    } else {
        ks_normal(&samples, sqrt(variance.sigma2))
    };
    Ok(CltReport {
        anchor: omega,
        n,
        trials,
        sigma2_hat: variance.sigma2,
        ks_stat,
        ks_critical: crit,
        pass: ks_stat <= crit,
        degenerate,
        sample_mean,
        sample_variance,
        samples,
        density_residual: density.residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityPoint {
    pub eps: f64,
    pub estimate: VarianceEstimate,
    /// Mean over anchors of `S_ε(ω) − S_0(ω)`.
    pub diff: f64,
    pub diff_stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    pub sigma2_zero: VarianceEstimate,
    pub points: Vec<ContinuityPoint>,
    pub max_abs_diff: f64,
    /// Fit of `|Σ²_ε − Σ²_0|` against `|ε|` over the nonzero grid points.
    pub modulus: Option<LogLogFit>,
    /// `min(1, 1 − 2α)`.
    pub expected_exponent: f64,
}

/// `ε ↦ Σ²_ε` on a grid with paired anchors, plus the local modulus.
pub fn variance_continuity_experiment(
    cc: &Cocycle<'_>,
    obs: &ObservableProcess,
    eps_grid: &[f64],
    settings: &GreenKuboSettings,
) -> Result<ContinuityReport> {
    let eps0 = cc.params.eps0();
    if let Some(e) = eps_grid.iter().find(|e| e.abs() >= eps0 && **e != 0.0) {
        return Err(Error::InvalidArgument(format!("eps {e} outside (-eps0, eps0)")));
    }
    let anchors = variance_anchors(cc, settings);
    let zero = green_kubo_at(cc, obs, 0.0, &anchors, settings.n_max, settings.pullback)?;
    let mut points = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let est = if eps == 0.0 {
            zero.clone()
        } else {
            green_kubo_at(cc, obs, eps, &anchors, settings.n_max, settings.pullback)?
        };
        let diffs: Vec<f64> = est.per_anchor.iter().zip(&zero.per_anchor).map(|(a, b)| a - b).collect();
        let (diff, diff_stderr) = mean_and_stderr(&diffs);
        points.push(ContinuityPoint {
            eps,
            estimate: est,
            diff,
            diff_stderr,
        });
    }
    let max_abs_diff = points.iter().map(|p| p.diff.abs()).fold(0.0, f64::max);
    let nz: Vec<&ContinuityPoint> = points.iter().filter(|p| p.eps != 0.0).collect();
    let xs: Vec<f64> = nz.iter().map(|p| p.eps.abs()).collect();
    let ys: Vec<f64> = nz.iter().map(|p| p.diff.abs()).collect();
    let alpha = cc.params.alpha_upper();
    Ok(ContinuityReport {
        sigma2_zero: zero,
        points,
        max_abs_diff,
        modulus: loglog_fit(&xs, &ys, 0.0),
        expected_exponent: (1.0 - 2.0 * alpha).min(1.0),
    })
}

/// Aggregate of per-anchor CLT verdicts.
pub fn clt_verdict(reports: &[CltReport], required: usize) -> Verdict {
    if reports.iter().filter(|r| r.pass).count() >= required {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}
