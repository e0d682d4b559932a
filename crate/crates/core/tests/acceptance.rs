//! Acceptance criteria 1–11, one verdict line each.
//!
//! Run everything with `cargo test --release -p qlsv-core --test acceptance`,
//! or pick criteria by number: `... --test acceptance -- 1 7 11`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use qlsv_core::base::{BasePoint, BaseSystem, ParamExpr, ParameterProcess};
use qlsv_core::grid::{l1_distance, make_grid, GridFunction};
use qlsv_core::lsv::MapParameter;
use qlsv_core::profile::{Profile, Smooth};
use qlsv_core::response::{
    cone_decompose, fast_decay_check, response_density, response_validate, singular_test_function,
    variance_derivative, DerivativeSettings, ResponseSettings, _anchor_correlations_for_tests,
};
use qlsv_core::stats::{
    birkhoff_clt, green_kubo_variance, variance_continuity_experiment, CltSettings, GreenKuboSettings,
    ObservableProcess,
};
use qlsv_core::transfer::{
    cone_check, generic_decay_exponent, Cocycle, ConeKind, ConeParams, MemoryCache, PullbackSettings,
    TransferOperator,
};
use qlsv_core::Verdict;

use common::{dense_apply, dense_fixed_point, dense_kernel, l1, TestRng};

// Tolerances.
const C1_SIGMA2: f64 = 0.5;
const C1_TOL: f64 = 1e-3;
const C1_CORR: f64 = 1e-4;
const C1_SECONDS: f64 = 30.0;
const CLT_TRIALS: usize = 10_000;
const CLT_STEPS: usize = 10_000;
const CLT_ANCHORS: usize = 5;
const CLT_REQUIRED: usize = 4;
const C4_SLACK: f64 = 0.15;
const C4_FAST_SLACK: f64 = 0.2;
const C5_SLOPE: f64 = 0.9;
const C6_SLOPE_TOL: f64 = 0.25;
const C6_RATIO: f64 = 4.0;
const C6_UNIFORMITY: f64 = 3.0;
const C7_ABS: f64 = 1e-3;
const C10_MARGIN: f64 = -1e-6;
const C11_ENTRY: f64 = 1e-9;
const C11_RESIDUAL_FACTOR: f64 = 2.0;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

type Criterion = fn() -> Outcome;

fn golden() -> BaseSystem {
    BaseSystem::golden_rotation()
}

fn cos_obs() -> ObservableProcess {
    ObservableProcess::fixed(Profile::cos2pi())
}

/// Doubling map: `L₀ cos(2πx) = 0`, so the variance is `∫cos² = 1/2`.
fn c1() -> Outcome {
    let t = Instant::now();
    let base = golden();
    let grid = make_grid(4096, 3.0).unwrap();
    let params = ParameterProcess::doubling();
    let cache = MemoryCache::new(16);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let obs = cos_obs();
    let s = GreenKuboSettings {
        n_max: 64,
        omega_count: 8,
        seed: 1,
        pullback: PullbackSettings::fixed(64),
    };
    let v = green_kubo_variance(&cc, &obs, 0.0, &s).unwrap();
    let mut max_corr = 0.0f64;
    for &om in &v.anchors {
        let (_, corr) = _anchor_correlations_for_tests(&cc, &obs, om, 64, s.pullback).unwrap();
        max_corr = corr.iter().fold(max_corr, |m, c| m.max(c.abs()));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = (v.sigma2 - C1_SIGMA2).abs() <= C1_TOL && max_corr < C1_CORR && secs < C1_SECONDS;
    Outcome::new(
        pass,
        format!("sigma2 = {:.7}, max |C_n| = {max_corr:.2e}, {secs:.1} s", v.sigma2),
    )
}

fn clt_run(cc: &Cocycle<'_>, obs: &ObservableProcess, gk: &GreenKuboSettings, pullback: PullbackSettings) -> Outcome {
    let v = green_kubo_variance(cc, obs, 0.0, gk).unwrap();
    let anchors = cc.base.sample_omegas(CLT_ANCHORS, 7, 0);
    let mut passed = 0;
    let mut stats = Vec::new();
    for (i, om) in anchors.into_iter().enumerate() {
        let r = birkhoff_clt(
            cc,
            obs,
            om,
            &v,
            &CltSettings {
                n: CLT_STEPS,
                trials: CLT_TRIALS,
                eps: 0.0,
                seed: 11 + i as u64,
                pullback,
            },
        )
        .unwrap();
        passed += r.pass as usize;
        stats.push(format!("{:.4}", r.ks_stat));
    }
    let crit = 1.36 / (CLT_TRIALS as f64).sqrt();
    Outcome::new(
        passed >= CLT_REQUIRED && !v.is_degenerate(),
        format!(
            "sigma2 = {:.4} (tail {:.1e}), KS [{}] vs {crit:.4}, {passed}/{CLT_ANCHORS} pass",
            v.sigma2,
            v.tail_bound,
            stats.join(", ")
        ),
    )
}

/// Case (i): α = 0.3, `F = cos 2πx`.
fn c2() -> Outcome {
    let base = golden();
    let grid = make_grid(2048, 3.0).unwrap();
    let params =
        ParameterProcess::new(&base, ParamExpr::sin(0.2, 0.1), ParamExpr::Const(0.0), 0.1, 0.3, 0.0).unwrap();
    let cache = MemoryCache::new(256);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let gk = GreenKuboSettings {
        n_max: 512,
        omega_count: 16,
        seed: 1,
        pullback: PullbackSettings::default(),
    };
    clt_run(&cc, &cos_obs(), &gk, PullbackSettings::default())
}

/// Case (ii): α = 0.6, `F = x^0.3 − c_ω x` vanishing at the neutral point.
fn c3() -> Outcome {
    let base = golden();
    let grid = make_grid(2048, 3.0).unwrap();
    let params =
        ParameterProcess::new(&base, ParamExpr::sin(0.5, 0.1), ParamExpr::Const(0.0), 0.4, 0.6, 0.0).unwrap();
    let cache = MemoryCache::new(256);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let obs = ObservableProcess::special(Profile::monomial(0.3), Profile::identity(), 0.3).unwrap();
    let pullback = PullbackSettings {
        min_depth: 2000,
        max_depth: 8000,
        target: 1e-4,
    };
    let gk = GreenKuboSettings {
        n_max: 512,
        omega_count: 16,
        seed: 1,
        pullback,
    };
    clt_run(&cc, &obs, &gk, pullback)
}

fn alpha45(base: &BaseSystem, delta: ParamExpr, eps0: f64) -> ParameterProcess {
    ParameterProcess::new(base, ParamExpr::sin(0.35, 0.05), delta, 0.25, 0.45, eps0).unwrap()
}

/// α = 0.45: generic decay and the faster decay of a singular zero-mean input.
fn c4() -> Outcome {
    let base = golden();
    let grid = make_grid(2048, 3.0).unwrap();
    let params =
        ParameterProcess::new(&base, ParamExpr::sin(0.4, 0.05), ParamExpr::Const(0.0), 0.35, 0.45, 0.0).unwrap();
    let alpha = params.alpha_upper();
    let cache = MemoryCache::new(256);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let om = base.sample_omegas(1, 3, 0)[0];
    let t = Instant::now();
    let h = cc.equivariant_density(om, PullbackSettings::default(), 0.0).unwrap();
    let profile = cc.decay_profile(om, &Profile::cos2pi(), &h.h, 2000, 0.0).unwrap();
    let t_generic = t.elapsed().as_secs_f64();
    let slope = profile.slope().unwrap_or(f64::NAN);
    let limit = generic_decay_exponent(alpha) + C4_SLACK;
    let gamma = alpha / 2.0;
    let t = Instant::now();
    let psi = singular_test_function(&grid, gamma).unwrap();
    let fast = fast_decay_check(&cc, &psi, gamma, om, 2000).unwrap();
    let t_fast = t.elapsed().as_secs_f64();
    let fast_slope = fast.profile.slope().unwrap_or(f64::NAN);
    let fast_limit = -1.0 / alpha + gamma / alpha + C4_FAST_SLACK;
    let pass = slope <= limit && fast_slope <= fast_limit && t_generic < 300.0 && t_fast < 300.0;
    Outcome::new(
        pass,
        format!(
            "slope {slope:.3} <= {limit:.3}; singular slope {fast_slope:.3} <= {fast_limit:.3} ({t_generic:.0} s, {t_fast:.0} s)"
        ),
    )
}

fn alpha3_response() -> (BaseSystem, ParameterProcess) {
    let base = golden();
    let params =
        ParameterProcess::new(&base, ParamExpr::sin(0.155, 0.04), ParamExpr::Const(1.0), 0.01, 0.3, 0.105).unwrap();
    (base, params)
}

fn response_eps_grid() -> Vec<f64> {
    let mut eps: Vec<f64> = (0..9).map(|i| 10f64.powf(-3.0 + 0.25 * i as f64)).collect();
    eps.push(-0.1);
    eps.push(-(10f64.powf(-2.5)));
    eps
}

fn run_response(grid_n: usize) -> qlsv_core::response::ResponseValidation {
    let (base, params) = alpha3_response();
    let grid = make_grid(grid_n, 3.0).unwrap();
    let cache = MemoryCache::new(256);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    response_validate(
        &cc,
        BasePoint::rotation(0.3),
        &response_eps_grid(),
        ResponseSettings {
            k: 512,
            pullback: PullbackSettings::default(),
        },
    )
    .unwrap()
}

/// `‖h_{ω,ε} − h_ω‖₁` is linear in `ε`.
fn c5() -> Outcome {
    let v = run_response(2048);
    let slope = v.stability_fit.map(|f| f.slope).unwrap_or(f64::NAN);
    Outcome::new(slope >= C5_SLOPE, format!("stability slope {slope:.3} >= {C5_SLOPE}"))
}

/// Rate of the difference quotient toward `ĥ_ω` and uniformity of `‖ĥ_ω‖₁`.
fn c6() -> Outcome {
    let v = run_response(2048);
    let slope = v.residual_fit.map(|f| f.slope).unwrap_or(f64::NAN);
    let min_slope = v.expected_slope - C6_SLOPE_TOL;
    let r = |e: f64| {
        v.points
            .iter()
            .find(|p| (p.eps - e).abs() <= 1e-12 * e.abs())
            .map(|p| p.residual)
            .unwrap()
    };
    let small = 10f64.powf(-2.5);
    let ratio_plus = r(0.1) / r(small);
    let ratio_minus = r(-0.1) / r(-small);
    let ratios_ok = ratio_plus >= C6_RATIO && ratio_minus >= C6_RATIO;

    let (base, params) = alpha3_response();
    let grid = make_grid(2048, 3.0).unwrap();
    let cache = MemoryCache::new(256);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let norms: Vec<f64> = base
        .sample_omegas(16, 9, 0)
        .into_iter()
        .map(|om| {
            response_density(&cc, om, 512, PullbackSettings::default())
                .unwrap()
                .hhat
                .l1_norm()
        })
        .collect();
    let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().copied().fold(0.0, f64::max);
    let uniform = hi <= C6_UNIFORMITY * lo;
    Outcome::new(
        slope >= min_slope && ratios_ok && uniform,
        format!(
            "slope {slope:.3} >= {min_slope:.2}; r(0.1)/r(10^-2.5) = {ratio_plus:.1} (+), {ratio_minus:.1} (-); |hhat| in [{lo:.3}, {hi:.3}]"
        ),
    )
}

/// Constant `β = 0.25`: `ĥ` against a Richardson-extrapolated central difference.
fn c7() -> Outcome {
    let base = golden();
    let grid = make_grid(4096, 3.0).unwrap();
    let params =
        ParameterProcess::new(&base, ParamExpr::Const(0.25), ParamExpr::Const(1.0), 0.15, 0.35, 0.1).unwrap();
    let cache = MemoryCache::new(64);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let om = BasePoint::rotation(0.0);
    let pb = PullbackSettings::default();
    let series = response_density(&cc, om, 512, pb).unwrap();
    let h = |e: f64| cc.equivariant_density(om, pb, e).unwrap().h;
    let central = |e: f64| h(e).add_scaled(-1.0, &h(-e)).unwrap().scaled(0.5 / e);
    let (d1, d2) = (central(0.02), central(0.04));
    let rich = d1.scaled(4.0 / 3.0).add_scaled(-1.0 / 3.0, &d2).unwrap();
    let gap = l1_distance(&series.hhat, &rich).unwrap();
    let budget = series.tail_estimate + C7_ABS;
    Outcome::new(
        gap <= budget,
        format!("gap {gap:.2e} <= tail {:.2e} + {C7_ABS:.0e}", series.tail_estimate),
    )
}

/// α = 0.45: `|Σ²_ε − Σ²_0|` shrinks with `|ε|` and stays inside the budget.
fn c8() -> Outcome {
    let base = golden();
    let grid = make_grid(2048, 3.0).unwrap();
    let params = alpha45(&base, ParamExpr::Const(1.0), 0.05);
    let cache = MemoryCache::new(512);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let s = GreenKuboSettings {
        n_max: 512,
        omega_count: 16,
        seed: 3,
        pullback: PullbackSettings {
            min_depth: 256,
            max_depth: 4096,
            target: 1e-6,
        },
    };
    let mags = [0.01, 0.02, 0.04];
    let grid_eps: Vec<f64> = mags.iter().flat_map(|m| [-m, *m]).collect();
    let r = variance_continuity_experiment(&cc, &cos_obs(), &grid_eps, &s).unwrap();
    let z = &r.sigma2_zero;
    let point = |e: f64| r.points.iter().find(|p| p.eps == e).unwrap();
    let mut monotone = true;
    for sign in [1.0, -1.0] {
        let ds: Vec<(f64, f64)> = mags.iter().map(|m| (point(sign * m).diff.abs(), point(sign * m).diff_stderr)).collect();
        for w in ds.windows(2) {
            let ((a, sa), (b, sb)) = (w[0], w[1]);
            if a >= b + 2.0 * (sa * sa + sb * sb).sqrt() {
                monotone = false;
            }
        }
        monotone &= ds[0].0 < ds[2].0;
    }
    // Modulus `C|ε|^κ` with κ at least one tenth, calibrated on the largest |ε|.
    let kappa = r.modulus.map(|f| f.slope).unwrap_or(f64::NAN);
    let kappa_used = kappa.clamp(0.1, 1.0);
    let c_hat = r
        .points
        .iter()
        .filter(|p| p.eps.abs() == 0.04)
        .map(|p| p.diff.abs() / 0.04f64.powf(kappa_used))
        .fold(0.0, f64::max);
    let mut inside = true;
    for p in &r.points {
        let budget = 2.0 * (p.estimate.tail_bound + z.tail_bound + 3.0 * p.diff_stderr)
            + c_hat * p.eps.abs().powf(kappa_used);
        inside &= p.diff.abs() <= budget;
    }
    let diffs: Vec<String> = r.points.iter().map(|p| format!("{:+.2}:{:.3e}", p.eps, p.diff)).collect();
    Outcome::new(
        monotone && inside && kappa >= 0.1,
        format!(
            "sigma2_0 = {:.4}, diffs [{}], modulus exponent {kappa:.2}",
            z.sigma2,
            diffs.join(", ")
        ),
    )
}

fn derivative_settings() -> DerivativeSettings {
    DerivativeSettings {
        k: 256,
        n_max: 128,
        j_max: 128,
        omega_count: 16,
        seed: 5,
        pullback: PullbackSettings {
            min_depth: 256,
            max_depth: 4096,
            target: 1e-7,
        },
        fd_eps: 0.01,
    }
}

/// α = 0.18: explicit derivative formula against finite differences, and the
/// unperturbed run.
fn c9() -> Outcome {
    let t = Instant::now();
    let base = golden();
    let grid = make_grid(2048, 3.0).unwrap();
    let params =
        ParameterProcess::new(&base, ParamExpr::sin(0.12, 0.04), ParamExpr::sin(0.5, 0.4), 0.06, 0.18, 0.02).unwrap();
    let cache = MemoryCache::new(1024);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let r = variance_derivative(&cc, &cos_obs(), &derivative_settings()).unwrap();
    let zero_params = params.with_delta(&base, ParamExpr::Const(0.0)).unwrap();
    let cz = Cocycle::new(&base, &zero_params, &grid, &cache);
    let z = variance_derivative(&cz, &cos_obs(), &derivative_settings()).unwrap();
    let zero_ok = z.formula_value.abs() <= 3.0 * z.formula_stderr.max(f64::MIN_POSITIVE)
        && z.fd_value.abs() <= 3.0 * z.fd_stderr.max(f64::MIN_POSITIVE);
    let b = r.budget_terms;
    Outcome::new(
        r.verdict == Verdict::Pass && zero_ok,
        format!(
            "formula {:.5}, fd {:.5}, gap {:.2e} <= budget {:.2e} (tail3 {:.1e}, tail4 {:.1e}, series {:.1e}, fd {:.1e}, mc {:.1e}); delta = 0: {:.1e}, {:.1e}; {:.0} s",
            r.formula_value,
            r.fd_value,
            r.agreement_gap,
            r.error_budget,
            b.tail3,
            b.tail4,
            b.series_tail,
            b.fd_error,
            b.mc,
            z.formula_value,
            z.fd_value,
            t.elapsed().as_secs_f64()
        ),
    )
}

/// Cone invariance under single steps and iterates, and the auxiliary
/// decomposition of `φh` into two cone members.
fn c10() -> Outcome {
    let grid = make_grid(1024, 3.0).unwrap();
    let mut rng = TestRng(12345);
    let mut worst = f64::INFINITY;
    let mut failures = 0usize;
    let mut pairs = 0usize;
    for alpha in [0.2, 0.3, 0.4, 0.5, 0.7] {
        let cone = ConeParams::calibrated(alpha);
        for _ in 0..80 {
            let s1 = alpha * rng.next_f64();
            let s2 = alpha * rng.next_f64();
            let c: Vec<f64> = (0..4).map(|_| rng.next_f64()).collect();
            let f = GridFunction::from_antiderivative(grid.clone(), |x| {
                c[0] * x + c[1] * x.powf(1.0 - s1) / (1.0 - s1) + c[2] * x.powf(1.0 - s2) / (1.0 - s2)
                    + c[3] * (x - x * x / 4.0)
            });
            let beta = 0.05 + (alpha - 0.05) * rng.next_f64();
            let op = TransferOperator::build(MapParameter::new(beta).unwrap(), grid.clone()).unwrap();
            let start = cone_check(&f, &cone, ConeKind::Both);
            let mut g = f;
            let mut ok = start.worst_margin() >= C10_MARGIN;
            for _ in 0..20 {
                g = op.apply(&g).unwrap();
                let m = cone_check(&g, &cone, ConeKind::Both).worst_margin();
                worst = worst.min(m);
                ok &= m >= C10_MARGIN;
            }
            pairs += 1;
            failures += !ok as usize;
        }
    }
    let cone = ConeParams::calibrated(0.4);
    let phis: [Profile; 5] = [
        Profile::cos2pi(),
        Profile::identity(),
        Profile::monomial(2.0),
        Profile::Sin { amp: 1.0, freq: 1.0 },
        Profile::Cos { amp: 0.5, freq: 2.0 },
    ];
    let mut decomp_fail = 0usize;
    let mut decomp_worst = f64::INFINITY;
    for phi in &phis {
        for s in [0.0, 0.1, 0.2, 0.4] {
            let h = GridFunction::from_antiderivative(grid.clone(), |x| x.powf(1.0 - s) / (1.0 - s))
                .into_density()
                .unwrap();
            let d = cone_decompose(phi as &dyn Smooth, &h, &cone).unwrap();
            let m = d.report1.worst_margin().min(d.report2.worst_margin());
            decomp_worst = decomp_worst.min(m);
            decomp_fail += (m < C10_MARGIN) as usize;
        }
    }
    Outcome::new(
        failures == 0 && decomp_fail == 0,
        format!(
            "{}/{pairs} pairs invariant over 20 steps (worst margin {worst:.1e}); {}/20 decompositions (worst {decomp_worst:.2})",
            pairs - failures,
            20 - decomp_fail
        ),
    )
}

/// Sparse Ulam kernel and pullback against dense brute force at N = 128.
fn c11() -> Outcome {
    let grid = make_grid(128, 3.0).unwrap();
    let n = grid.n();
    let mut max_entry = 0.0f64;
    for gamma in [0.1, 0.25, 0.5, 0.8] {
        let dense = dense_kernel(gamma, &grid);
        let op = TransferOperator::build(MapParameter::new(gamma).unwrap(), grid.clone()).unwrap();
        let mut sparse = vec![vec![0.0; n]; n];
        for (i, j, w) in op.triplets() {
            sparse[i as usize][j as usize] += w;
        }
        for i in 0..n {
            for j in 0..n {
                max_entry = max_entry.max((sparse[i][j] - dense[i][j]).abs());
            }
        }
    }
    let base = golden();
    let params =
        ParameterProcess::new(&base, ParamExpr::Const(0.25), ParamExpr::Const(0.0), 0.25, 0.25, 0.0).unwrap();
    let cache = MemoryCache::new(4);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let dense = dense_kernel(0.25, &grid);
    let fixed = dense_fixed_point(&dense, &grid, 1e-15, 1_000_000);
    let fixed_residual = l1(&grid, &dense_apply(&dense, &grid, &fixed), &fixed);
    // At a moderate depth the error is the sum of all later one-step
    // residuals, about residual / (1 − ρ); it is reported but not tested.
    let om = BasePoint::rotation(0.0);
    let shallow = cc.pullback(om, 200, 0.0).unwrap();
    let shallow_ratio = l1(&grid, shallow.h.values(), &fixed) / shallow.residual;
    let settings = PullbackSettings {
        min_depth: 200,
        max_depth: 12_800,
        target: 1e-14,
    };
    let d = cc.equivariant_density(om, settings, 0.0).unwrap();
    let dist = l1(&grid, d.h.values(), &fixed);
    let roundoff = n as f64 * f64::EPSILON;
    let pass = max_entry <= C11_ENTRY && dist <= C11_RESIDUAL_FACTOR * d.residual + fixed_residual + roundoff;
    Outcome::new(
        pass,
        format!(
            "max kernel entry diff {max_entry:.1e}; |pullback - dense| = {dist:.1e} vs residual {:.1e} + roundoff {roundoff:.1e} (depth {}); error/residual at depth 200 = {shallow_ratio:.0}",
            d.residual, d.pullback_depth
        ),
    )
}

const CRITERIA: [(u32, &str, Criterion); 11] = [
    (1, "doubling-map variance oracle", c1),
    (2, "quenched CLT, generic observable", c2),
    (3, "quenched CLT, vanishing observable", c3),
    (4, "polynomial decay rates", c4),
    (5, "statistical stability", c5),
    (6, "linear response rate", c6),
    (7, "autonomous response oracle", c7),
    (8, "variance continuity", c8),
    (9, "variance differentiability", c9),
    (10, "cone invariance", c10),
    (11, "dense oracle equivalence", c11),
];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (k, name, _) in CRITERIA {
            println!("criterion {k}: {name}: test");
        }
        return ExitCode::SUCCESS;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<u32> = filters
        .iter()
        .filter_map(|a| a.trim_start_matches('c').parse().ok())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (k, name, run) in CRITERIA {
        if !filters.is_empty() && !selected.contains(&k) {
            continue;
        }
        let t = Instant::now();
        let out = run();
        ran += 1;
        failed += !out.pass as usize;
        println!(
            "criterion {k:>2} {}: {name}: {} [{:.1} s]",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
