//! Linear response of the equivariant densities and of the variance.
//!
//! The operator derivative is discretized in flux form. Writing the
//! left-branch part of `(L_γ f)_j` as `|c_j|⁻¹ ∫_{g(x_j)}^{g(x_{j+1})} f` and
//! using `∂_γ g = −X g'` gives
//!
//! ```text
//! (∂_γ L_γ f)_j = −(Φ(x_{j+1}) − Φ(x_j)) / |c_j|,   Φ(y) = X_γ(y) g_γ'(y) f(g_γ(y)),
//! ```
//!
//! the cell average of `−(X_γ N_γ f)'`. It telescopes to zero mass because
//! `X_γ` vanishes at both ends. `f(g(y))` is read from a local average of the
//! exact antiderivative of the cell values (see [`smoothing_window`]).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::base::BasePoint;
use crate::error::{Error, Result};
use crate::fit::{envelope_constant, loglog_fit, loglog_fit_range, power_tail_sum, LogLogFit};
use crate::grid::{
    cell_averages, differentiate, l1_distance, observable_norms, GradedGrid, GridFunction, Tag,
};
use crate::lsv::{preimage_and_flux, MapParameter};
use crate::math::{map_indexed, mean_and_stderr, pairwise_sum};
use crate::profile::Smooth;
use crate::stats::{
    anchor_correlations, frozen_constants, green_kubo_at, GreenKuboSettings, ObservableProcess,
    PreparedObservable, VarianceEstimate,
};
use crate::transfer::{
    cone_check, generic_decay_exponent, Cocycle, ConeKind, ConeParams, ConeReport, DecayProfile,
    PullbackSettings,
};
use crate::Verdict;

/// Node data of `∂_γ L_γ` on one grid: preimages `g(x_j)` and fluxes `X g'`.
#[derive(Debug, Clone)]
pub struct ParameterDerivative {
    preimages: Vec<f64>,
    fluxes: Vec<f64>,
}

impl ParameterDerivative {
    pub fn new(param: MapParameter, grid: &GradedGrid) -> Result<Self> {
        let nodes = grid.nodes();
        let n = grid.n();
        let mut preimages = Vec::with_capacity(n + 1);
        let mut fluxes = Vec::with_capacity(n + 1);
        for (j, &y) in nodes.iter().enumerate() {
            if j == 0 || j == n || param.is_boundary() {
                preimages.push(if j == n { 0.5 } else { 0.5 * y });
                fluxes.push(0.0);
            } else {
                let (g, flux) = preimage_and_flux(param, y)?;
                preimages.push(g);
                fluxes.push(flux);
            }
        }
        Ok(Self { preimages, fluxes })
    }

    pub fn apply_values(&self, grid: &GradedGrid, f: &[f64], out: &mut [f64]) {
        let widths = grid.widths();
        let m = smoothing_window(grid.n());
        let cum = cumulative_values(grid, f);
        let phi: Vec<f64> = self
            .preimages
            .iter()
            .zip(&self.fluxes)
            .map(|(g, flux)| {
                if *flux == 0.0 {
                    0.0
                } else {
                    flux * window_average(grid, f, &cum, *g, m)
                }
            })
            .collect();
        for j in 0..out.len() {
            out[j] = -(phi[j + 1] - phi[j]) / widths[j];
        }
    }

    pub fn apply(&self, f: &GridFunction) -> GridFunction {
        let mut out = vec![0.0; f.values().len()];
        self.apply_values(f.grid(), f.values(), &mut out);
        GridFunction::from_parts(f.grid().clone(), out, Tag::Signed)
    }
}

/// Half-width, in local cell widths, of the average used for `f∘g`.
///
/// Ulam densities carry an oscillation on the cell scale; differencing
/// point values of `f∘g` over one cell would amplify it to `O(1)`. A window
/// of `N^{1/3}/2` cells balances that noise against smoothing bias.
pub fn smoothing_window(n: usize) -> f64 {
    libm::round(0.5 * libm::cbrt(n as f64)).max(2.0)
}

fn cumulative_values(grid: &GradedGrid, f: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(f.len() + 1);
    let mut acc = 0.0;
    c.push(0.0);
    for (v, w) in f.iter().zip(grid.widths()) {
        acc += v * w;
        c.push(acc);
    }
    c
}

fn antiderivative_at(grid: &GradedGrid, f: &[f64], cum: &[f64], x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    let i = grid.cell_of(x);
    cum[i] + f[i] * (x - grid.nodes()[i])
}

fn window_average(grid: &GradedGrid, f: &[f64], cum: &[f64], g: f64, m: f64) -> f64 {
    let half = m * grid.widths()[grid.cell_of(g)];
    let a = (g - half).max(0.0);
    let b = (g + half).min(1.0);
    let half = (g - a).min(b - g);
    if half <= 0.0 {
        return f[grid.cell_of(g)];
    }
    (antiderivative_at(grid, f, cum, g + half) - antiderivative_at(grid, f, cum, g - half)) / (2.0 * half)
}

/// `∂_γ L_γ f = −(X_γ N_γ f)'` on the grid.
pub fn operator_parameter_derivative(param: MapParameter, f: &GridFunction) -> Result<GridFunction> {
    Ok(ParameterDerivative::new(param, f.grid())?.apply(f))
}

/// Cross-check: `X_γ N_γ f` sampled at cell centers, differentiated on the
/// grid and negated.
pub fn parameter_derivative_by_differentiation(param: MapParameter, f: &GridFunction) -> Result<GridFunction> {
    let grid = f.grid();
    let values = grid
        .centers()
        .iter()
        .map(|&y| {
            let (g, flux) = preimage_and_flux(param, y)?;
            Ok(flux * f.interpolate(g))
        })
        .collect::<Result<Vec<f64>>>()?;
    let xn = GridFunction::from_parts(grid.clone(), values, Tag::Signed);
    Ok(differentiate(&xn)?.scaled(-1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondDerivative {
    pub value: GridFunction,
    pub step: f64,
    /// The step is small enough for round-off to dominate.
    pub cancellation_warning: bool,
}

/// Central difference in `γ` of [`operator_parameter_derivative`].
pub fn operator_parameter_second_derivative(
    param: MapParameter,
    f: &GridFunction,
    step: f64,
) -> Result<SecondDerivative> {
    let g = param.gamma();
    if !(step > 0.0) || g - step <= 0.0 || g + step >= 1.0 {
        return Err(Error::InvalidArgument(format!("step {step} leaves (0, 1) around {g}")));
    }
    let plus = operator_parameter_derivative(MapParameter::new(g + step)?, f)?;
    let minus = operator_parameter_derivative(MapParameter::new(g - step)?, f)?;
    let value = plus.add_scaled(-1.0, &minus)?.scaled(0.5 / step);
    Ok(SecondDerivative {
        value,
        step,
        cancellation_warning: step < 1e-6,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeDecomposition {
    pub psi1: GridFunction,
    pub psi2: GridFunction,
    pub lambda: f64,
    pub shift_a: f64,
    pub shift_b: f64,
    /// `max ‖ψᵢ‖_{L¹} / ‖φ‖_{C²}`.
    pub d_ratio: f64,
    pub report1: ConeReport,
    pub report2: ConeReport,
}

/// `φh = ψ₁ − ψ₂` with `ψ₂ = (λx + A)h + B`, `ψ₁ = ψ₂ + φh`,
/// `λ = −2‖φ‖_{C¹}`, `A = 3‖φ‖_{C¹}` and `B` the smallest value allowed by
/// the cone constants.
pub fn cone_decompose(phi: &dyn Smooth, h: &GridFunction, cone: &ConeParams) -> Result<ConeDecomposition> {
    let grid = h.grid();
    let norms = observable_norms(phi, 4 * grid.n())?;
    let c1 = norms.c1;
    let d2_sup = (0..=4 * grid.n())
        .map(|k| phi.d2(k as f64 / (4 * grid.n()) as f64).abs())
        .fold(0.0, f64::max);
    let (a, al, b1, b2) = (cone.a, cone.alpha, cone.b1, cone.b2);
    let lambda = -2.0 * c1;
    let shift_a = 3.0 * c1;
    let shift_b = [
        a / (al + 1.0) * c1,
        4.0 * a / (a - 1.0) * c1,
        3.0 * a / b1 * c1,
        a / b2 * d2_sup + 6.0 * a * b1 / b2 * c1,
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let phi_cells = cell_averages(grid, |x| phi.value(x));
    let centers = grid.centers();
    let psi2: Vec<f64> = (0..grid.n())
        .map(|i| (lambda * centers[i] + shift_a) * h.values()[i] + shift_b)
        .collect();
    let psi1: Vec<f64> = (0..grid.n())
        .map(|i| psi2[i] + phi_cells[i] * h.values()[i])
        .collect();
    let psi1 = GridFunction::from_parts(grid.clone(), psi1, Tag::Signed);
    let psi2 = GridFunction::from_parts(grid.clone(), psi2, Tag::Signed);
    let d_ratio = if norms.c2 > 0.0 {
        psi1.l1_norm().max(psi2.l1_norm()) / norms.c2
    } else {
        0.0
    };
    let report1 = cone_check(&psi1, cone, ConeKind::Both);
    let report2 = cone_check(&psi2, cone, ConeKind::Both);
    Ok(ConeDecomposition {
        psi1,
        psi2,
        lambda,
        shift_a,
        shift_b,
        d_ratio,
        report1,
        report2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSeries {
    pub omega_anchor: BasePoint,
    pub k: usize,
    pub hhat: GridFunction,
    /// `‖δ L^i ∂L h‖_{L¹}` for `i = 0..=K`.
    pub term_norms: Vec<f64>,
    pub tail_estimate: f64,
    /// Term norms did not decrease over the last quartile.
    pub convergence_warning: bool,
    /// `h_ω` obtained on the way (pullback pushed `K + 1` steps forward).
    pub h: GridFunction,
    pub residual: f64,
}

/// `ĥ_ω = Σ_{i=0}^{K} δ(σ^{−(i+1)}ω) L^i_{σ^{−i}ω} ∂_γL_{β(σ^{−(i+1)}ω)} h_{σ^{−(i+1)}ω}`.
pub fn response_density(
    cc: &Cocycle<'_>,
    omega: BasePoint,
    k: usize,
    pullback: PullbackSettings,
) -> Result<ResponseSeries> {
    if k < 1 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let grid = cc.grid;
    let n = grid.n();
    let start = cc.base.advance(omega, -(k as i64 + 1));
    let density = cc.equivariant_density(start, pullback, 0.0)?;
    let mut h = density.h.values().to_vec();
    let mut scratch = vec![0.0; n];
    // live[s] is the summand born at t = −(K+1) + s.
    let mut live: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    for s in 0..=k {
        let point = cc.base.advance(start, s as i64);
        let param = cc.parameter(point, 0.0)?;
        let op = cc.source.operator(param, grid)?;
        for term in live.iter_mut() {
            op.apply_values(term, &mut scratch);
            core::mem::swap(term, &mut scratch);
        }
        let delta = cc.params.delta_at(cc.base, point);
        let mut born = vec![0.0; n];
        if delta != 0.0 {
            ParameterDerivative::new(param, grid)?.apply_values(grid, &h, &mut born);
            born.iter_mut().for_each(|v| *v *= delta);
        }
        live.push(born);
        op.apply_values(&h, &mut scratch);
        core::mem::swap(&mut h, &mut scratch);
    }
    let widths = grid.widths();
    let l1 = |v: &[f64]| pairwise_sum(&v.iter().zip(widths).map(|(a, w)| a.abs() * w).collect::<Vec<_>>());
    // term i was born at s = K − i
    let term_norms: Vec<f64> = (0..=k).map(|i| l1(&live[k - i])).collect();
    let mut hhat = vec![0.0; n];
    for i in 0..=k {
        for (acc, v) in hhat.iter_mut().zip(&live[k - i]) {
            *acc += v;
        }
    }
    let alpha = cc.params.alpha_upper().max(f64::MIN_POSITIVE);
    let s = generic_decay_exponent(alpha);
    let lo = (k / 4).max(1);
    let envelope = envelope_constant(&term_norms, lo, k, s);
    let tail_estimate = envelope * power_tail_sum(k, s);
    let q = (3 * k / 4).max(1);
    let convergence_warning = loglog_fit_range(&term_norms, q, k, 0.0)
        .map(|f| f.slope >= 0.0)
        .unwrap_or(false);
    let hw = GridFunction::from_parts(grid.clone(), h, Tag::Signed).into_density()?;
    Ok(ResponseSeries {
        omega_anchor: omega,
        k,
        hhat: GridFunction::from_parts(grid.clone(), hhat, Tag::Signed),
        term_norms,
        tail_estimate,
        convergence_warning,
        h: hw,
        residual: density.residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponsePoint {
    pub eps: f64,
    /// `‖ε⁻¹(h_{ω,ε} − h_ω) − ĥ_ω‖_{L¹}`
    pub residual: f64,
    /// `‖h_{ω,ε} − h_ω‖_{L¹}`
    pub stability: f64,
    /// Truncation, pullback and discretization floor for `residual`.
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseValidation {
    pub series: ResponseSeries,
    pub points: Vec<ResponsePoint>,
    pub residual_fit: Option<LogLogFit>,
    pub stability_fit: Option<LogLogFit>,
    /// `1 − 2α`
    pub expected_slope: f64,
    /// `η` in the `η/|ε|` discretization floor: grid-scale kinks of the
    /// discrete densities in `ε` do not vanish with `ε`, so the difference
    /// quotient carries an error of order `η/|ε|`. Estimated as
    /// `|ε| r(ε)` at the smallest `|ε|`, which is an overestimate whenever the
    /// true residual there is not negligible.
    pub discretization: f64,
    pub verdict: Verdict,
    pub stability_verdict: Verdict,
}

/// Response settings shared by the validation and variance-derivative runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseSettings {
    pub k: usize,
    pub pullback: PullbackSettings,
}

/// Rate of `ε⁻¹(h_{ω,ε} − h_ω) → ĥ_ω` and statistical stability at one anchor.
pub fn response_validate(
    cc: &Cocycle<'_>,
    omega: BasePoint,
    eps_grid: &[f64],
    settings: ResponseSettings,
) -> Result<ResponseValidation> {
    let eps0 = cc.params.eps0();
    if eps_grid.iter().any(|e| *e == 0.0 || e.abs() >= eps0) {
        return Err(Error::InvalidArgument("eps grid must lie in (-eps0, eps0) without 0".into()));
    }
    let mut mags: Vec<f64> = eps_grid.iter().map(|e| e.abs()).collect();
    mags.sort_by(f64::total_cmp);
    mags.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    if mags.len() < 4 {
        return Err(Error::InvalidArgument("eps grid needs at least 4 distinct magnitudes".into()));
    }
    let series = response_density(cc, omega, settings.k, settings.pullback)?;
    let h0 = cc.equivariant_density(omega, settings.pullback, 0.0)?;
    let mut points: Vec<ResponsePoint> = map_indexed(eps_grid.len(), |i| {
        let eps = eps_grid[i];
        let he = cc.equivariant_density(omega, settings.pullback, eps)?;
        let quotient = he.h.add_scaled(-1.0, &h0.h)?.scaled(1.0 / eps);
        Ok(ResponsePoint {
            eps,
            residual: l1_distance(&quotient, &series.hhat)?,
            stability: l1_distance(&he.h, &h0.h)?,
            floor: series.tail_estimate + (he.residual + h0.residual) / eps.abs(),
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let discretization = points
        .iter()
        .min_by(|a, b| a.eps.abs().total_cmp(&b.eps.abs()))
        .map(|p| p.eps.abs() * p.residual)
        .unwrap_or(0.0);
    for p in points.iter_mut() {
        p.floor += discretization / p.eps.abs();
    }
    let alpha = cc.params.alpha_upper();
    let expected_slope = 1.0 - 2.0 * alpha;
    let above: Vec<&ResponsePoint> = points.iter().filter(|p| p.residual > 3.0 * p.floor).collect();
    let residual_fit = loglog_fit(
        &above.iter().map(|p| p.eps.abs()).collect::<Vec<_>>(),
        &above.iter().map(|p| p.residual).collect::<Vec<_>>(),
        0.0,
    );
    let verdict = if cc.params.delta_vanishes() {
        if points.iter().all(|p| p.residual == 0.0) {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    } else {
        match residual_fit {
            None => Verdict::Inconclusive,
            Some(f) if f.slope >= expected_slope - 0.25 => Verdict::Pass,
            Some(_) => Verdict::Fail,
        }
    };
    let stability_fit = loglog_fit(
        &points.iter().map(|p| p.eps.abs()).collect::<Vec<_>>(),
        &points.iter().map(|p| p.stability).collect::<Vec<_>>(),
        0.0,
    );
    let stability_verdict = match stability_fit {
        None if cc.params.delta_vanishes() => Verdict::Pass,
        None => Verdict::Inconclusive,
        Some(f) if f.slope >= 0.9 => Verdict::Pass,
        Some(_) => Verdict::Fail,
    };
    Ok(ResponseValidation {
        series,
        points,
        residual_fit,
        stability_fit,
        expected_slope,
        discretization,
        verdict,
        stability_verdict,
    })
}

/// Per-anchor pieces of the derivative-of-variance formula.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorDerivative {
    pub anchor: BasePoint,
    /// Raw values of the four summands (terms 3 and 4 without the factor 2).
    pub terms: [f64; 4],
    /// `t1 + t2 + 2(t3 + t4)`
    pub value: f64,
    pub term3_by_n: Vec<f64>,
    pub term4_by_n: Vec<f64>,
    pub series_tail: f64,
    /// `‖∂L(L^j(f h))‖_{L¹}` for `j < j_max`.
    pub inner_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSettings {
    pub k: usize,
    pub n_max: usize,
    pub j_max: usize,
    pub omega_count: usize,
    pub seed: u64,
    pub pullback: PullbackSettings,
    /// Central differences use `±fd_eps` and `±2 fd_eps`.
    pub fd_eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub formula_value: f64,
    /// Averages of the four summands as written (terms 3 and 4 enter the
    /// derivative with a factor 2).
    pub term_values: [f64; 4],
    pub formula_stderr: f64,
    pub fd_value: f64,
    pub fd_eps: f64,
    pub fd_error: f64,
    pub fd_stderr: f64,
    pub agreement_gap: f64,
    pub error_budget: f64,
    pub budget_terms: BudgetTerms,
    pub verdict: Verdict,
    pub anchors: Vec<AnchorDerivative>,
    pub sigma2_plus: VarianceEstimate,
    pub sigma2_minus: VarianceEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetTerms {
    pub tail3: f64,
    pub tail4: f64,
    pub series_tail: f64,
    pub fd_error: f64,
    /// Three standard errors of the paired formula − difference quotient.
    pub mc: f64,
}

impl BudgetTerms {
    pub fn total(&self) -> f64 {
        2.0 * (self.tail3 + self.tail4) + self.series_tail + self.fd_error + self.mc
    }
}

fn anchor_derivative(
    cc: &Cocycle<'_>,
    prep: &PreparedObservable<'_>,
    omega: BasePoint,
    settings: &DerivativeSettings,
) -> Result<AnchorDerivative> {
    let grid = cc.grid;
    let n = grid.n();
    let series = response_density(cc, omega, settings.k, settings.pullback)?;
    let hhat = &series.hhat;
    let h0 = &series.h;
    let state0 = cc.base.state(omega);
    let f0 = prep.fiber(&state0, h0, None)?;
    let raw0 = prep.raw_cells(&state0, f0.c);
    let t1 = hhat.pair_with(&f0.square_cells);
    let l_term = hhat.pair_with(&raw0);
    let t2 = -2.0 * l_term * h0.pair_with(&f0.cells);

    let mut h = h0.values().to_vec();
    let mut v3: Vec<f64> = (0..n)
        .map(|i| -l_term * h[i] + f0.cells[i] * hhat.values()[i])
        .collect();
    let mut u: Vec<f64> = (0..n).map(|i| f0.cells[i] * h[i]).collect();
    let mut acc = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut term3_by_n = Vec::with_capacity(settings.n_max);
    let mut term4_by_n = Vec::with_capacity(settings.n_max);
    let mut inner_norms = Vec::new();
    let widths = grid.widths();
    for step in 1..=settings.n_max {
        let j = step - 1;
        let point = cc.base.advance(omega, j as i64);
        let param = cc.parameter(point, 0.0)?;
        let op = cc.source.operator(param, grid)?;
        // A_step = L_j(A_{step−1}) + δ_j ∂L_j(u_j)
        op.apply_values(&acc, &mut scratch);
        core::mem::swap(&mut acc, &mut scratch);
        if j < settings.j_max {
            let delta = cc.params.delta_at(cc.base, point);
            if delta != 0.0 {
                ParameterDerivative::new(param, grid)?.apply_values(grid, &u, &mut w);
                inner_norms.push(pairwise_sum(
                    &w.iter().zip(widths).map(|(a, b)| a.abs() * b).collect::<Vec<_>>(),
                ));
                for (a, b) in acc.iter_mut().zip(&w) {
                    *a += delta * b;
                }
            } else {
                inner_norms.push(0.0);
            }
        }
        op.apply_values(&u, &mut scratch);
        core::mem::swap(&mut u, &mut scratch);
        op.apply_values(&v3, &mut scratch);
        core::mem::swap(&mut v3, &mut scratch);
        op.apply_values(&h, &mut scratch);
        core::mem::swap(&mut h, &mut scratch);
        let hn = GridFunction::from_parts(grid.clone(), h.clone(), Tag::Signed);
        let target = cc.base.advance(omega, step as i64);
        let fnn = prep.fiber(&cc.base.state(target), &hn, None)?;
        let dot = |v: &[f64]| pairwise_sum(&(0..n).map(|i| v[i] * fnn.cells[i] * widths[i]).collect::<Vec<_>>());
        term3_by_n.push(dot(&v3));
        term4_by_n.push(dot(&acc));
    }
    let t3 = pairwise_sum(&term3_by_n);
    let t4 = pairwise_sum(&term4_by_n);
    let sup_f = f0.cells.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(AnchorDerivative {
        anchor: omega,
        terms: [t1, t2, t3, t4],
        value: t1 + t2 + 2.0 * (t3 + t4),
        term3_by_n,
        term4_by_n,
        series_tail: series.tail_estimate * sup_f * sup_f * (1.0 + 2.0 * settings.n_max as f64),
        inner_norms,
    })
}

fn mean_abs_by_n(rows: &[Vec<f64>]) -> Vec<f64> {
    let len = rows.first().map(Vec::len).unwrap_or(0);
    let count = rows.len().max(1) as f64;
    let mut out = vec![0.0; len + 1];
    for (n, slot) in out.iter_mut().enumerate().skip(1) {
        *slot = rows.iter().map(|r| r[n - 1].abs()).sum::<f64>() / count;
    }
    out
}

/// `dΣ²_ε/dε` at 0 from the explicit four-term formula, compared with a
/// paired central difference of Green–Kubo variances.
pub fn variance_derivative(
    cc: &Cocycle<'_>,
    obs: &ObservableProcess,
    settings: &DerivativeSettings,
) -> Result<DerivativeReport> {
    let alpha = cc.params.alpha_upper();
    let regime_ok = cc.params.differentiable_range()
        || obs
            .gamma_obs()
            .map(|g| cc.params.special_differentiable_range(g.min(alpha)))
            .unwrap_or(false);
    if !regime_ok {
        return Err(Error::Regime(format!(
            "variance derivative needs alpha < 1/5 (or a special observable with alpha < (1+eta)/5); alpha = {alpha}"
        )));
    }
    if settings.n_max < 1 || settings.k < 1 {
        return Err(Error::InvalidArgument("n_max and K must be positive".into()));
    }
    let fd_eps = settings.fd_eps;
    if !(fd_eps > 0.0 && 2.0 * fd_eps < cc.params.eps0() * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "fd_eps = {fd_eps} needs 0 < 2 fd_eps <= eps0 = {}",
            cc.params.eps0()
        )));
    }
    let gk = GreenKuboSettings {
        n_max: settings.n_max,
        omega_count: settings.omega_count,
        seed: settings.seed,
        pullback: settings.pullback,
    };
    let anchors = cc.base.sample_omegas(gk.omega_count, gk.seed, 0);
    let prep = PreparedObservable::new(obs, cc.grid);
    let rows: Vec<AnchorDerivative> = map_indexed(anchors.len(), |i| anchor_derivative(cc, &prep, anchors[i], settings))
        .into_iter()
        .collect::<Result<_>>()?;

    let plus = green_kubo_at(cc, obs, fd_eps, &anchors, gk.n_max, gk.pullback)?;
    let minus = green_kubo_at(cc, obs, -fd_eps, &anchors, gk.n_max, gk.pullback)?;
    let plus2 = green_kubo_at(cc, obs, 2.0 * fd_eps, &anchors, gk.n_max, gk.pullback)?;
    let minus2 = green_kubo_at(cc, obs, -2.0 * fd_eps, &anchors, gk.n_max, gk.pullback)?;
    let fd1: Vec<f64> = plus.per_anchor.iter().zip(&minus.per_anchor).map(|(a, b)| (a - b) / (2.0 * fd_eps)).collect();
    let fd2: Vec<f64> = plus2.per_anchor.iter().zip(&minus2.per_anchor).map(|(a, b)| (a - b) / (4.0 * fd_eps)).collect();
    let (fd_value, fd_stderr) = mean_and_stderr(&fd1);
    let (fd_value2, _) = mean_and_stderr(&fd2);
    // Central differences carry an O(ε²) error; doubling ε quadruples it.
    let fd_error = (fd_value2 - fd_value).abs() / 3.0;

    let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let (formula_value, formula_stderr) = mean_and_stderr(&values);
    let mut term_values = [0.0; 4];
    for (t, slot) in term_values.iter_mut().enumerate() {
        *slot = pairwise_sum(&rows.iter().map(|r| r.terms[t]).collect::<Vec<_>>()) / rows.len().max(1) as f64;
    }
    let paired: Vec<f64> = values.iter().zip(&fd1).map(|(a, b)| a - b).collect();
    let (_, paired_stderr) = mean_and_stderr(&paired);

    let n_max = settings.n_max;
    let e3 = obs.decay_exponent(alpha);
    let e4 = 1.0 - (1.0 - alpha) / (2.0 * alpha);
    let m3 = mean_abs_by_n(&rows.iter().map(|r| r.term3_by_n.clone()).collect::<Vec<_>>());
    let m4 = mean_abs_by_n(&rows.iter().map(|r| r.term4_by_n.clone()).collect::<Vec<_>>());
    let lo = (n_max / 4).max(1);
    let tail3 = envelope_constant(&m3, lo, n_max, e3) * power_tail_sum(n_max, e3);
    let tail4 = envelope_constant(&m4, lo, n_max, e4) * power_tail_sum(n_max, e4);
    let series_tail = rows.iter().map(|r| r.series_tail).fold(0.0, f64::max);
    let budget_terms = BudgetTerms {
        tail3,
        tail4,
        series_tail,
        fd_error,
        mc: 3.0 * paired_stderr,
    };
    let error_budget = budget_terms.total();
    let agreement_gap = (formula_value - fd_value).abs();
    let verdict = if !error_budget.is_finite() {
        Verdict::Inconclusive
    } else if agreement_gap <= error_budget {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(DerivativeReport {
        formula_value,
        term_values,
        formula_stderr,
        fd_value,
        fd_eps,
        fd_error,
        fd_stderr,
        agreement_gap,
        error_budget,
        budget_terms,
        verdict,
        anchors: rows,
        sigma2_plus: plus,
        sigma2_minus: minus,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastDecayReport {
    pub profile: DecayProfile,
    /// `−1/α + γ/α`
    pub expected_slope: f64,
    /// `expected_slope + 0.2`
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Zero-mean test function `x^{−γ} − 1/(1 − γ)` with exact cell averages.
pub fn singular_test_function(grid: &alloc::sync::Arc<GradedGrid>, gamma: f64) -> Result<GridFunction> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain {
            what: "singular test exponent",
            value: gamma,
        });
    }
    let c = 1.0 / (1.0 - gamma);
    Ok(GridFunction::from_antiderivative(grid.clone(), |x| {
        crate::math::pow_nonneg(x, 1.0 - gamma) * c - c * x
    }))
}

/// Decay of `‖L^n_ω ψ‖_{L¹}` for `∫ψ = 0`, `|ψ| ≤ C₀x^{−γ}`.
pub fn fast_decay_check(
    cc: &Cocycle<'_>,
    psi: &GridFunction,
    gamma: f64,
    omega: BasePoint,
    n_max: usize,
) -> Result<FastDecayReport> {
    let mass = crate::grid::integrate(psi);
    if mass.abs() > 1e-10 * psi.l1_norm().max(1.0) {
        return Err(Error::InvalidArgument(format!("psi must have zero mean, got {mass:e}")));
    }
    let alpha = cc.params.alpha_upper();
    let profile = cc.decay_of(omega, psi, n_max, 0.0)?;
    let expected_slope = -1.0 / alpha + gamma / alpha;
    let threshold = expected_slope + 0.2;
    let verdict = match profile.slope() {
        None if psi.l1_norm() == 0.0 => Verdict::Pass,
        None => Verdict::Inconclusive,
        Some(s) if s <= threshold => Verdict::Pass,
        Some(_) => Verdict::Fail,
    };
    Ok(FastDecayReport {
        profile,
        expected_slope,
        threshold,
        verdict,
    })
}

/// Frozen special constants are only needed when `F_ω` depends on `h_ω`.
pub fn requires_frozen_constants(obs: &ObservableProcess) -> bool {
    obs.is_special()
}

#[doc(hidden)]
pub fn _anchor_correlations_for_tests(
    cc: &Cocycle<'_>,
    obs: &ObservableProcess,
    omega: BasePoint,
    n_max: usize,
    pullback: PullbackSettings,
) -> Result<(f64, Vec<f64>)> {
    let prep = PreparedObservable::new(obs, cc.grid);
    let d = cc.equivariant_density(omega, pullback, 0.0)?;
    let frozen = if obs.is_special() {
        Some(frozen_constants(cc, &prep, omega, &d.h, n_max)?)
    } else {
        None
    };
    let r = anchor_correlations(cc, &prep, &d, n_max, 0.0, frozen.as_deref())?;
    Ok((r.term0, r.correlations))
}
