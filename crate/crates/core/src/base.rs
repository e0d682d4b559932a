//! The ergodic driver `(Ω, σ, ℙ)` and the parameter processes `β`, `δ`.
//!
//! Three drivers ship: an irrational rotation of the circle (invertible,
//! ergodic, not mixing), an iid sequence over a finite alphabet and a
//! stationary finite Markov chain. A [`BasePoint`] is a value object; its
//! `index` counts applications of `σ`, so [`BaseSystem::advance`] is exact in
//! both directions for every kind.
//!
//! Symbols of the iid and Markov drivers come from a counter-based stream
//! (ChaCha8 keyed by the system seed and the sample path, one stream per
//! coordinate), so coordinate `k` is a pure function of `(seed, path, k)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spin::RwLock;

use crate::error::{Error, Result};
use crate::lsv::MapParameter;
use crate::math::{floor, sin};

/// Rotation angles whose continued fraction terminates below this
/// denominator are rejected as rational.
pub const MIN_CONVERGENT_DENOMINATOR: f64 = 1e6;

/// Slack applied to the `[α̲, α]` bounds when validating parameter ranges.
pub const GUARDBAND: f64 = 1e-3;

const RANGE_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub enum BaseKind {
    Rotation { angle: f64 },
    Iid { law: Vec<f64> },
    Markov { kernel: Vec<Vec<f64>>, stationary: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasePoint {
    /// Starting phase on the circle (rotation only).
    pub anchor: f64,
    /// Sample path identifier (iid and Markov only).
    pub path: u64,
    /// Number of applications of `σ` from the anchor.
    pub index: i64,
}

impl BasePoint {
    pub fn rotation(anchor: f64) -> Self {
        Self {
            anchor: anchor - floor(anchor),
            path: 0,
            index: 0,
        }
    }

    pub fn path(path: u64) -> Self {
        Self {
            anchor: 0.0,
            path,
            index: 0,
        }
    }
}

/// What the parameter expressions see at a base point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseState {
    /// Circle position for rotations, `symbol / alphabet size` otherwise.
    pub position: f64,
    pub symbol: Option<usize>,
}

#[derive(Debug, Default)]
struct Window {
    forward: Vec<usize>,
    backward: Vec<usize>,
}

pub struct BaseSystem {
    kind: BaseKind,
    seed: u64,
    reversed: Vec<Vec<f64>>,
    windows: RwLock<BTreeMap<u64, Window>>,
}

impl core::fmt::Debug for BaseSystem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("BaseSystem")
            .field("kind", &self.kind)
            .field("seed", &self.seed)
            .finish()
    }
}

impl Clone for BaseSystem {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind.clone(),
            seed: self.seed,
            reversed: self.reversed.clone(),
            windows: RwLock::new(BTreeMap::new()),
        }
    }
}

fn check_law(law: &[f64], what: &str) -> Result<()> {
    if law.is_empty() {
        return Err(Error::Config(format!("{what}: empty probability vector")));
    }
    if law.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Config(format!("{what}: entries must be finite and nonnegative")));
    }
    let s: f64 = law.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what}: entries sum to {s}, expected 1")));
    }
    Ok(())
}

/// Rejects angles that are rational up to double precision with a small
/// denominator.
pub fn check_irrational(angle: f64) -> Result<()> {
    if !(angle > 0.0 && angle < 1.0) {
        return Err(Error::Config(format!("rotation angle {angle} must lie in (0, 1)")));
    }
    let (mut p0, mut q0, mut p1, mut q1) = (0.0f64, 1.0f64, 1.0f64, 0.0f64);
    let mut x = angle;
    for _ in 0..64 {
        let a = floor(x);
        let (p, q) = (a * p1 + p0, a * q1 + q0);
        if q >= MIN_CONVERGENT_DENOMINATOR {
            return Ok(());
        }
        if (angle - p / q).abs() <= 4.0 * f64::EPSILON {
            return Err(Error::Config(format!(
                "rotation angle {angle} is rational to double precision (≈ {p}/{q})"
            )));
        }
        (p0, q0, p1, q1) = (p1, q1, p, q);
        let r = x - a;
        if r <= 0.0 {
            return Err(Error::Config(format!("rotation angle {angle} has a terminating expansion")));
        }
        x = 1.0 / r;
    }
    Ok(())
}

fn stationary_law(kernel: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = kernel.len();
    let mut pi = vec![1.0 / m as f64; m];
    for _ in 0..100_000 {
        let mut next = vec![0.0; m];
        for (i, row) in kernel.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                next[j] += pi[i] * p;
            }
        }
        // Lazy step keeps periodic chains from oscillating.
        let next: Vec<f64> = next.iter().zip(&pi).map(|(a, b)| 0.5 * (a + b)).collect();
        let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if diff < 1e-15 {
            let s: f64 = pi.iter().sum();
            return Ok(pi.into_iter().map(|v| v / s).collect());
        }
    }
    Err(Error::NoConvergence {
        what: "stationary law of the Markov kernel",
        iterations: 100_000,
        residual: f64::NAN,
    })
}

#[inline]
fn zigzag(k: i64) -> u64 {
    ((k << 1) ^ (k >> 63)) as u64
}

/// Uniform `[0, 1)` variate attached to coordinate `k` of sample path `path`.
fn coordinate_uniform(seed: u64, path: u64, k: i64) -> f64 {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(zigzag(k));
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn categorical(law: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in law.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    law.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// SplitMix64 finalizer, used to derive independent path ids from a seed.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl BaseSystem {
    pub fn rotation(angle: f64) -> Result<Self> {
        check_irrational(angle)?;
        Ok(Self {
            kind: BaseKind::Rotation { angle },
            seed: 0,
            reversed: Vec::new(),
            windows: RwLock::new(BTreeMap::new()),
        })
    }

    /// Rotation by the fractional part of the golden ratio.
    pub fn golden_rotation() -> Self {
        Self::rotation((libm::sqrt(5.0) - 1.0) / 2.0).expect("golden angle is irrational")
    }

    pub fn iid(law: Vec<f64>, seed: u64) -> Result<Self> {
        check_law(&law, "iid law")?;
        Ok(Self {
            kind: BaseKind::Iid { law },
            seed,
            reversed: Vec::new(),
            windows: RwLock::new(BTreeMap::new()),
        })
    }

    pub fn markov(kernel: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let m = kernel.len();
        if m == 0 || kernel.iter().any(|r| r.len() != m) {
            return Err(Error::Config("Markov kernel must be a non-empty square matrix".into()));
        }
        for (i, row) in kernel.iter().enumerate() {
            check_law(row, &format!("Markov kernel row {i}"))?;
        }
        let stationary = stationary_law(&kernel)?;
        if stationary.iter().any(|p| *p <= 0.0) {
            return Err(Error::Config("Markov chain has transient states".into()));
        }
        // Time reversal: P̃(i, j) = π_j P(j, i) / π_i.
        let reversed = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| stationary[j] * kernel[j][i] / stationary[i])
                    .collect()
            })
            .collect();
        Ok(Self {
            kind: BaseKind::Markov { kernel, stationary },
            seed,
            reversed,
            windows: RwLock::new(BTreeMap::new()),
        })
    }

    pub fn kind(&self) -> &BaseKind {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn alphabet_size(&self) -> Option<usize> {
        match &self.kind {
            BaseKind::Rotation { .. } => None,
            BaseKind::Iid { law } => Some(law.len()),
            BaseKind::Markov { kernel, .. } => Some(kernel.len()),
        }
    }

    /// `σ^k ω`.
    #[inline]
    pub fn advance(&self, omega: BasePoint, k: i64) -> BasePoint {
        BasePoint {
            index: omega.index + k,
            ..omega
        }
    }

    pub fn state(&self, omega: BasePoint) -> BaseState {
        match &self.kind {
            BaseKind::Rotation { angle } => {
                let t = omega.index as f64 * angle;
                let mut pos = omega.anchor + (t - floor(t));
                if pos >= 1.0 {
                    pos -= 1.0;
                }
                BaseState {
                    position: pos,
                    symbol: None,
                }
            }
            BaseKind::Iid { law } => {
                let s = categorical(law, coordinate_uniform(self.seed, omega.path, omega.index));
                self.symbol_state(s, law.len())
            }
            BaseKind::Markov { kernel, .. } => {
                let s = self.markov_symbol(omega.path, omega.index);
                self.symbol_state(s, kernel.len())
            }
        }
    }

    fn symbol_state(&self, s: usize, m: usize) -> BaseState {
        BaseState {
            position: s as f64 / m as f64,
            symbol: Some(s),
        }
    }

    fn markov_symbol(&self, path: u64, k: i64) -> usize {
        let BaseKind::Markov { kernel, stationary } = &self.kind else {
            unreachable!("markov_symbol on a non-Markov base");
        };
        let need = k.unsigned_abs() as usize;
        {
            let windows = self.windows.read();
            if let Some(w) = windows.get(&path) {
                if k >= 0 && need < w.forward.len() {
                    return w.forward[need];
                }
                if k < 0 && need <= w.backward.len() {
                    return w.backward[need - 1];
                }
            }
        }
        let mut windows = self.windows.write();
        let w = windows.entry(path).or_default();
        if w.forward.is_empty() {
            w.forward
                .push(categorical(stationary, coordinate_uniform(self.seed, path, 0)));
        }
        if k >= 0 {
            while w.forward.len() <= need {
                let j = w.forward.len();
                let prev = w.forward[j - 1];
                let u = coordinate_uniform(self.seed, path, j as i64);
                w.forward.push(categorical(&kernel[prev], u));
            }
            w.forward[need]
        } else {
            while w.backward.len() < need {
                let j = w.backward.len() + 1;
                let prev = if j == 1 { w.forward[0] } else { w.backward[j - 2] };
                let u = coordinate_uniform(self.seed, path, -(j as i64));
                w.backward.push(categorical(&self.reversed[prev], u));
            }
            w.backward[need - 1]
        }
    }

    /// Base points distributed according to `ℙ`.
    ///
    /// Rotations use stratified uniform anchors `(i + U_i)/count`; the
    /// symbolic drivers start `count` independent stationary paths and move
    /// `burn_in` steps along each.
    pub fn sample_omegas(&self, count: usize, seed: u64, burn_in: u64) -> Vec<BasePoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.kind {
            BaseKind::Rotation { .. } => (0..count)
                .map(|i| {
                    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                    BasePoint::rotation((i as f64 + u) / count as f64)
                })
                .collect(),
            _ => (0..count)
                .map(|_| BasePoint {
                    anchor: 0.0,
                    path: rng.next_u64(),
                    index: burn_in as i64,
                })
                .collect(),
        }
    }

    /// Independent uniform draws from `ℙ` (no stratification).
    pub fn sample_omegas_iid(&self, count: usize, seed: u64) -> Vec<BasePoint> {
        match &self.kind {
            BaseKind::Rotation { .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..count)
                    .map(|_| {
                        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                        BasePoint::rotation(u)
                    })
                    .collect()
            }
            _ => self.sample_omegas(count, seed, 0),
        }
    }
}

/// Closed-form parameter expressions over the base state.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamExpr {
    Const(f64),
    /// `offset + slope · position`
    Affine { offset: f64, slope: f64 },
    /// `mean + amp · sin(2π (freq · position + phase))`
    Sin { mean: f64, amp: f64, freq: f64, phase: f64 },
    /// Piecewise constant: indexed by the symbol, or by `⌊position · len⌋`.
    Step(Vec<f64>),
}

impl ParamExpr {
    pub fn sin(mean: f64, amp: f64) -> Self {
        ParamExpr::Sin {
            mean,
            amp,
            freq: 1.0,
            phase: 0.0,
        }
    }

    pub fn eval(&self, state: &BaseState) -> f64 {
        match self {
            ParamExpr::Const(c) => *c,
            ParamExpr::Affine { offset, slope } => offset + slope * state.position,
            ParamExpr::Sin {
                mean,
                amp,
                freq,
                phase,
            } => mean + amp * sin(2.0 * core::f64::consts::PI * (freq * state.position + phase)),
            ParamExpr::Step(values) => {
                let i = match state.symbol {
                    Some(s) => s,
                    None => floor(state.position * values.len() as f64) as usize,
                };
                values[i.min(values.len() - 1)]
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ParamExpr::Const(c) => *c == 0.0,
            ParamExpr::Affine { offset, slope } => *offset == 0.0 && *slope == 0.0,
            ParamExpr::Sin { mean, amp, .. } => *mean == 0.0 && *amp == 0.0,
            ParamExpr::Step(v) => v.iter().all(|x| *x == 0.0),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            ParamExpr::Const(_) => true,
            ParamExpr::Affine { slope, .. } => *slope == 0.0,
            ParamExpr::Sin { amp, freq, .. } => *amp == 0.0 || *freq == 0.0,
            ParamExpr::Step(v) => v.windows(2).all(|w| w[0] == w[1]),
        }
    }

    /// `(min, max)` over a dense sample of the states the driver can produce.
    pub fn range_on(&self, base: &BaseSystem) -> Result<(f64, f64)> {
        if let ParamExpr::Step(v) = self {
            if v.is_empty() {
                return Err(Error::Config("step expression needs at least one value".into()));
            }
            if let Some(m) = base.alphabet_size() {
                if v.len() < m {
                    return Err(Error::Config(format!(
                        "step expression has {} values for an alphabet of {m}",
                        v.len()
                    )));
                }
            }
        }
        let states: Vec<BaseState> = match base.alphabet_size() {
            Some(m) => (0..m)
                .map(|s| BaseState {
                    position: s as f64 / m as f64,
                    symbol: Some(s),
                })
                .collect(),
            None => (0..RANGE_SAMPLES)
                .map(|i| BaseState {
                    position: i as f64 / RANGE_SAMPLES as f64,
                    symbol: None,
                })
                .collect(),
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &states {
            let v = self.eval(s);
            if !v.is_finite() {
                return Err(Error::Config("parameter expression is not finite".into()));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok((lo, hi))
    }
}

/// `ω ↦ β(ω), δ(ω)` together with the bounds `α̲ ≤ β ± ε₀ ≤ α`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterProcess {
    beta: ParamExpr,
    delta: ParamExpr,
    alpha_lower: f64,
    alpha_upper: f64,
    eps0: f64,
    boundary: bool,
    beta_range: (f64, f64),
}

impl ParameterProcess {
    /// Validates the bounds on a dense sample with a [`GUARDBAND`] tolerance.
    pub fn new(
        base: &BaseSystem,
        beta: ParamExpr,
        delta: ParamExpr,
        alpha_lower: f64,
        alpha_upper: f64,
        eps0: f64,
    ) -> Result<Self> {
        if !(alpha_lower > 0.0 && alpha_lower <= alpha_upper && alpha_upper < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < alpha_lower <= alpha_upper < 1, got {alpha_lower}, {alpha_upper}"
            )));
        }
        if !(eps0 >= 0.0 && eps0.is_finite()) {
            return Err(Error::Config(format!("eps0 must be nonnegative, got {eps0}")));
        }
        let (bmin, bmax) = beta.range_on(base)?;
        let (dmin, dmax) = delta.range_on(base)?;
        if !(bmin > 0.0 && bmax < 1.0) {
            return Err(Error::Config(format!("beta range [{bmin}, {bmax}] leaves (0, 1)")));
        }
        if dmin < -GUARDBAND || dmax > 1.0 + GUARDBAND {
            return Err(Error::Config(format!("delta range [{dmin}, {dmax}] leaves [0, 1]")));
        }
        if bmin - eps0 < alpha_lower - GUARDBAND {
            return Err(Error::Config(format!(
                "min beta - eps0 = {} is below alpha_lower = {alpha_lower}",
                bmin - eps0
            )));
        }
        if bmax + eps0 > alpha_upper + GUARDBAND {
            return Err(Error::Config(format!(
                "max beta + eps0 = {} exceeds alpha_upper = {alpha_upper}",
                bmax + eps0
            )));
        }
        Ok(Self {
            beta,
            delta,
            alpha_lower,
            alpha_upper,
            eps0,
            boundary: false,
            beta_range: (bmin, bmax),
        })
    }

    /// The doubling map at every base point (`β ≡ 0`, no perturbation).
    pub fn doubling() -> Self {
        Self {
            beta: ParamExpr::Const(0.0),
            delta: ParamExpr::Const(0.0),
            alpha_lower: 0.0,
            alpha_upper: 0.0,
            eps0: 0.0,
            boundary: true,
            beta_range: (0.0, 0.0),
        }
    }

    /// Same bounds and `β`, different `δ`.
    pub fn with_delta(&self, base: &BaseSystem, delta: ParamExpr) -> Result<Self> {
        if self.boundary {
            return Err(Error::Config("the doubling process cannot be perturbed".into()));
        }
        Self::new(
            base,
            self.beta.clone(),
            delta,
            self.alpha_lower,
            self.alpha_upper,
            self.eps0,
        )
    }

    pub fn beta(&self) -> &ParamExpr {
        &self.beta
    }

    pub fn delta(&self) -> &ParamExpr {
        &self.delta
    }

    pub fn alpha_lower(&self) -> f64 {
        self.alpha_lower
    }

    pub fn alpha_upper(&self) -> f64 {
        self.alpha_upper
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn is_boundary(&self) -> bool {
        self.boundary
    }

    pub fn beta_range(&self) -> (f64, f64) {
        self.beta_range
    }

    pub fn is_autonomous(&self) -> bool {
        self.beta.is_constant() && self.delta.is_constant()
    }

    pub fn delta_vanishes(&self) -> bool {
        self.delta.is_zero()
    }

    /// `α < 1/2`: CLT for generic `C¹` observables.
    pub fn clt_range(&self) -> bool {
        self.alpha_upper < 0.5
    }

    /// `α < 1/5`: differentiability of the variance.
    pub fn differentiable_range(&self) -> bool {
        self.alpha_upper < 0.2
    }

    /// `α < (1 + η)/5`: differentiability for special observables.
    pub fn special_differentiable_range(&self, eta: f64) -> bool {
        self.alpha_upper < (1.0 + eta) / 5.0
    }

    pub fn delta_at(&self, base: &BaseSystem, omega: BasePoint) -> f64 {
        self.delta.eval(&base.state(omega))
    }

    pub fn beta_at(&self, base: &BaseSystem, omega: BasePoint) -> f64 {
        self.beta.eval(&base.state(omega))
    }

    /// `β(ω) + ε δ(ω)` as a map parameter, checked against `[α̲, α]`.
    pub fn parameter_at(&self, base: &BaseSystem, omega: BasePoint, eps: f64) -> Result<MapParameter> {
        if self.boundary {
            return Ok(MapParameter::doubling());
        }
        if eps.abs() > self.eps0 * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "|eps| = {} exceeds eps0 = {}",
                eps.abs(),
                self.eps0
            )));
        }
        let state = base.state(omega);
        let beta = self.beta.eval(&state);
        let value = if eps == 0.0 {
            beta
        } else {
            beta + eps * self.delta.eval(&state)
        };
        if value < self.alpha_lower - GUARDBAND || value > self.alpha_upper + GUARDBAND {
            return Err(Error::Config(format!(
                "parameter {value} outside [{}, {}]",
                self.alpha_lower, self.alpha_upper
            )));
        }
        MapParameter::new(value).map_err(|_| Error::Config(format!("parameter {value} outside (0, 1)")))
    }
}

/// Free-function form of [`ParameterProcess::parameter_at`].
pub fn parameter_at(
    params: &ParameterProcess,
    base: &BaseSystem,
    omega: BasePoint,
    eps: f64,
) -> Result<MapParameter> {
    params.parameter_at(base, omega, eps)
}

/// Free-function form of [`BaseSystem::advance`].
pub fn advance(base: &BaseSystem, omega: BasePoint, k: i64) -> BasePoint {
    base.advance(omega, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden() -> f64 {
        (5f64.sqrt() - 1.0) / 2.0
    }

    #[test]
    fn rotation_advance_closed_form() {
        let base = BaseSystem::rotation(golden()).unwrap();
        let w = BasePoint::rotation(0.1);
        let s = base.state(base.advance(w, 3)).position;
        let expected = (0.1 + 3.0 * golden()).fract();
        assert!((s - expected).abs() < 1e-15);
        assert_eq!(base.advance(base.advance(w, 5), -5), w);
        assert_eq!(base.advance(w, 0), w);
    }

    #[test]
    fn rational_angles_rejected() {
        assert!(BaseSystem::rotation(0.5).is_err());
        assert!(BaseSystem::rotation(355.0 / 1000.0).is_err());
        assert!(BaseSystem::rotation(1.0 / 7.0).is_err());
        assert!(BaseSystem::rotation(golden()).is_ok());
        assert!(BaseSystem::rotation(2f64.sqrt() - 1.0).is_ok());
    }

    #[test]
    fn parameter_at_examples() {
        let base = BaseSystem::golden_rotation();
        let params = ParameterProcess::new(
            &base,
            ParamExpr::sin(0.15, 0.05),
            ParamExpr::Const(1.0),
            0.05,
            0.25,
            0.05,
        )
        .unwrap();
        let w = BasePoint::rotation(0.25);
        assert!((params.parameter_at(&base, w, 0.01).unwrap().gamma() - 0.21).abs() < 1e-15);
        assert_eq!(params.parameter_at(&base, w, 0.0).unwrap().gamma(), 0.2);
        assert!(params.parameter_at(&base, w, 0.06).is_err());
        let frozen = params.with_delta(&base, ParamExpr::Const(0.0)).unwrap();
        assert_eq!(
            frozen.parameter_at(&base, w, 0.03).unwrap(),
            frozen.parameter_at(&base, w, 0.0).unwrap()
        );
    }

    #[test]
    fn bounds_validated() {
        let base = BaseSystem::golden_rotation();
        // 0.3 + 0.1 + 0.05 = 0.45 > 0.4
        assert!(ParameterProcess::new(&base, ParamExpr::sin(0.3, 0.1), ParamExpr::Const(1.0), 0.1, 0.4, 0.05).is_err());
        // lower edge violated
        assert!(ParameterProcess::new(&base, ParamExpr::sin(0.2, 0.1), ParamExpr::Const(1.0), 0.1, 0.4, 0.05).is_err());
        // within the guardband
        assert!(ParameterProcess::new(&base, ParamExpr::sin(0.2, 0.1), ParamExpr::Const(1.0), 0.0505, 0.35, 0.05).is_ok());
        assert!(ParameterProcess::new(&base, ParamExpr::Const(0.2), ParamExpr::Const(1.5), 0.1, 0.4, 0.05).is_err());
    }

    #[test]
    fn iid_is_pure_in_the_coordinate() {
        let base = BaseSystem::iid(vec![0.3, 0.7], 9).unwrap();
        let w = BasePoint::path(42);
        let a: Vec<_> = (-20..20).map(|k| base.state(base.advance(w, k)).symbol).collect();
        let b: Vec<_> = (-20..20).rev().map(|k| base.state(base.advance(w, k)).symbol).collect();
        let b: Vec<_> = b.into_iter().rev().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn markov_window_consistent_across_extension_order() {
        let kernel = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let b1 = BaseSystem::markov(kernel.clone(), 3).unwrap();
        let b2 = BaseSystem::markov(kernel, 3).unwrap();
        let w = BasePoint::path(7);
        let _ = b2.state(b2.advance(w, -50));
        let _ = b2.state(b2.advance(w, 50));
        for k in -50..=50 {
            assert_eq!(b1.state(b1.advance(w, k)), b2.state(b2.advance(w, k)));
        }
    }

    #[test]
    fn markov_stationary_law() {
        let base = BaseSystem::markov(vec![vec![0.9, 0.1], vec![0.2, 0.8]], 1).unwrap();
        let BaseKind::Markov { stationary, .. } = base.kind() else { unreachable!() };
        assert!((stationary[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn count_one_is_reproducible() {
        let base = BaseSystem::golden_rotation();
        assert_eq!(base.sample_omegas(1, 5, 0), base.sample_omegas(1, 5, 0));
    }

    #[test]
    fn step_expression_on_symbols() {
        let base = BaseSystem::iid(vec![0.5, 0.5], 1).unwrap();
        let e = ParamExpr::Step(vec![0.2, 0.3]);
        assert_eq!(e.range_on(&base).unwrap(), (0.2, 0.3));
        assert!(ParamExpr::Step(vec![0.2]).range_on(&base).is_err());
    }
}
