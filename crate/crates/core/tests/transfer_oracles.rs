//! Transfer operators and cocycles against brute-force references.

mod common;

use qlsv_core::base::{BasePoint, BaseSystem, ParamExpr, ParameterProcess};
use qlsv_core::grid::{cell_averages, integrate, l1_distance, make_grid, GridFunction, Tag};
use qlsv_core::lsv::MapParameter;
use qlsv_core::profile::Profile;
use qlsv_core::transfer::{
    cone_check, Cocycle, ConeCondition, ConeKind, ConeParams, MemoryCache, PullbackSettings, TransferOperator,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{dense_fixed_point, dense_kernel, map_point, TestRng};

fn random_process(base: &BaseSystem) -> ParameterProcess {
    ParameterProcess::new(base, ParamExpr::sin(0.25, 0.05), ParamExpr::Const(0.0), 0.2, 0.3, 0.0).unwrap()
}

fn constant_process(base: &BaseSystem, gamma: f64) -> ParameterProcess {
    ParameterProcess::new(base, ParamExpr::Const(gamma), ParamExpr::Const(0.0), gamma, gamma, 0.0).unwrap()
}

#[test]
fn fixed_density_matches_dense_power_iteration() {
    let grid = make_grid(512, 3.0).unwrap();
    let dense = dense_kernel(0.25, &grid);
    let fixed = dense_fixed_point(&dense, &grid, 1e-14, 200_000);
    assert!(fixed.iter().all(|v| *v > 0.0));
    assert!(fixed.windows(2).all(|w| w[0] >= w[1]));

    let base = BaseSystem::golden_rotation();
    let params = constant_process(&base, 0.25);
    let cache = MemoryCache::new(4);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let settings = PullbackSettings {
        min_depth: 500,
        max_depth: 64_000,
        target: 1e-14,
    };
    let d = cc.equivariant_density(BasePoint::rotation(0.0), settings, 0.0).unwrap();
    assert!(common::l1(&grid, d.h.values(), &fixed) < 1e-11);
    assert!(d.min_value > 0.0);
}

#[test]
fn doubling_pullback_is_exactly_lebesgue() {
    let base = BaseSystem::golden_rotation();
    let params = ParameterProcess::doubling();
    let cache = MemoryCache::new(4);
    // Dyadic nodes make every preimage overlap exact.
    let grid = make_grid(256, 1.0).unwrap();
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let d = cc.pullback(BasePoint::rotation(0.4), 12, 0.0).unwrap();
    assert!(d.h.values().iter().all(|v| *v == 1.0));
    assert_eq!(d.residual, 0.0);
    let grid = make_grid(256, 3.0).unwrap();
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let d = cc.pullback(BasePoint::rotation(0.4), 12, 0.0).unwrap();
    assert!(d.h.values().iter().all(|v| (v - 1.0).abs() <= 1e-12));
}

#[test]
fn pullback_densities_are_equivariant() {
    let base = BaseSystem::golden_rotation();
    let params = random_process(&base);
    let grid = make_grid(1024, 3.0).unwrap();
    let cache = MemoryCache::new(64);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    for om in base.sample_omegas(4, 2, 0) {
        let pb = PullbackSettings::fixed(400);
        let a = cc.equivariant_density(om, pb, 0.0).unwrap();
        let next = base.advance(om, 1);
        let b = cc.equivariant_density(next, pb, 0.0).unwrap();
        let pushed = cc.operator(om, 0.0).unwrap().apply(&a.h).unwrap();
        let dist = l1_distance(&pushed, &b.h).unwrap();
        assert!(dist <= 3.0 * (a.residual + b.residual), "{dist:e} vs {:e}", a.residual + b.residual);
    }
}

#[test]
fn compositions_conserve_mass_and_positivity() {
    let base = BaseSystem::golden_rotation();
    let params = random_process(&base);
    let grid = make_grid(512, 3.0).unwrap();
    let cache = MemoryCache::new(64);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let mut rng = TestRng(3);
    let f = GridFunction::new(grid.clone(), (0..512).map(|_| rng.next_f64()).collect(), Tag::Signed).unwrap();
    let m0 = integrate(&f);
    let om = BasePoint::rotation(0.2);
    let mut g = f.clone();
    for n in 1..=50 {
        g = cc.operator(base.advance(om, n - 1), 0.0).unwrap().apply(&g).unwrap();
        assert!((integrate(&g) - m0).abs() <= 1e-10);
        assert!(g.values().iter().all(|v| *v >= 0.0));
    }
    let composed = cc.compose_along(om, 50, &f, 0.0).unwrap();
    assert_eq!(composed.values(), g.values());
}

/// `|∫ L f · φ − ∫ f · φ∘T|` on the grid.
fn duality_error(n: usize) -> f64 {
    let grid = make_grid(n, 2.0).unwrap();
    let gamma = 0.3;
    let op = TransferOperator::build(MapParameter::new(gamma).unwrap(), grid.clone()).unwrap();
    let f = GridFunction::from_fn(grid.clone(), |x| 1.0 + x + 0.5 * (3.0 * x).sin());
    let phi = |x: f64| (2.0 * std::f64::consts::PI * x).cos() + x * x;
    let lhs = op.apply(&f).unwrap().pair_with(&cell_averages(&grid, phi));
    let rhs = f.pair_with(&cell_averages(&grid, |x| phi(map_point(gamma, x))));
    (lhs - rhs).abs()
}

#[test]
fn duality_converges_at_first_order() {
    // The constant oscillates with how preimage nodes fall on the grid, so
    // the check is a uniform bound on N·err plus an overall drop.
    let ns = [256usize, 512, 1024, 2048, 4096];
    let errs: Vec<f64> = ns.iter().map(|&n| duality_error(n)).collect();
    for (n, e) in ns.iter().zip(&errs) {
        assert!(*n as f64 * e <= 0.2, "{errs:?}");
    }
    assert!(errs[4] < errs[0] / 4.0, "{errs:?}");
}

#[test]
fn normalized_operator_is_markov_and_dual() {
    let base = BaseSystem::golden_rotation();
    let params = random_process(&base);
    let grid = make_grid(512, 3.0).unwrap();
    let cache = MemoryCache::new(64);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let om = BasePoint::rotation(0.7);
    let h = cc.equivariant_density(om, PullbackSettings::default(), 0.0).unwrap().h;
    for n in [1usize, 3, 8] {
        let target = cc.compose_along(om, n, &h, 0.0).unwrap();
        let one = GridFunction::constant(grid.clone(), 1.0);
        let out = cc.normalized_apply(om, &h, &target, &one, n, 0.0, 1e-3).unwrap();
        assert!(out.values().iter().all(|v| (v - 1.0).abs() <= 1e-8));

        let psi = GridFunction::from_fn(grid.clone(), |x| (6.0 * x).sin());
        let mean = h.pair_with(psi.values());
        let psi = psi.add_scaled(-mean, &one).unwrap();
        let out = cc.normalized_apply(om, &h, &target, &psi, n, 0.0, 1e-3).unwrap();
        assert!(target.pair_with(out.values()).abs() <= 1e-12);
    }
    // n = 1 unrolled by hand.
    let target = cc.compose_along(om, 1, &h, 0.0).unwrap();
    let psi = GridFunction::from_fn(grid.clone(), |x| x * x);
    let out = cc.normalized_apply(om, &h, &target, &psi, 1, 0.0, 1e-3).unwrap();
    let pushed = cc.operator(om, 0.0).unwrap().apply(&psi.mul_cells(h.values())).unwrap();
    for ((o, p), t) in out.values().iter().zip(pushed.values()).zip(target.values()) {
        assert_eq!(*o, p / t);
    }
    // The guard refuses densities below rho.
    assert!(cc.normalized_apply(om, &h, &target, &psi, 1, 0.0, 1e9).is_err());
}

#[test]
fn cone_membership_examples() {
    let grid = make_grid(1024, 3.0).unwrap();
    let one = GridFunction::constant(grid.clone(), 1.0);
    for a in [1.5, 3.0, 10.0] {
        let cone = ConeParams { a, ..ConeParams::calibrated(0.3) };
        assert!(cone_check(&one, &cone, ConeKind::Star).member);
    }
    let x = GridFunction::from_fn(grid.clone(), |x| x);
    let r = cone_check(&x, &ConeParams::calibrated(0.3), ConeKind::Star);
    assert!(!r.member);
    assert!(r.violations.iter().any(|v| v.condition == ConeCondition::Decreasing));

    let base = BaseSystem::golden_rotation();
    let params = random_process(&base);
    let cache = MemoryCache::new(64);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let cone = ConeParams::calibrated(0.3);
    for om in base.sample_omegas(4, 8, 0) {
        let h = cc.equivariant_density(om, PullbackSettings::default(), 0.0).unwrap().h;
        let r = cone_check(&h, &cone, ConeKind::Both);
        assert!(r.member && r.worst_margin() > 0.0, "{:?}", r.violations);
    }
}

#[test]
fn decay_profile_examples() {
    let base = BaseSystem::golden_rotation();
    let params = random_process(&base);
    let grid = make_grid(512, 3.0).unwrap();
    let cache = MemoryCache::new(64);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let om = BasePoint::rotation(0.1);
    let h = cc.equivariant_density(om, PullbackSettings::default(), 0.0).unwrap().h;
    let p = cc.decay_profile(om, &Profile::Const(2.5), &h, 32, 0.0).unwrap();
    assert!(p.norms.iter().all(|v| *v <= 1e-13));

    // Doubling kills cos(2πx): exactly on dyadic uniform grids, at first
    // order on graded ones where cells do not nest under the branches.
    let doubling = ParameterProcess::doubling();
    let first_step = |n: usize, p: f64| {
        let grid = make_grid(n, p).unwrap();
        let cc = Cocycle::new(&base, &doubling, &grid, &cache);
        let h = GridFunction::lebesgue(grid.clone());
        cc.decay_profile(om, &Profile::cos2pi(), &h, 16, 0.0).unwrap().norms[1]
    };
    for n in [128usize, 256, 512] {
        assert!(first_step(n, 1.0) <= 1e-14);
    }
    let errs: Vec<f64> = [128usize, 256, 512].iter().map(|&n| first_step(n, 3.0)).collect();
    for w in errs.windows(2) {
        assert!(w[1] < 0.6 * w[0], "{errs:?}");
    }
    assert!(errs[2] * 512.0 < 1.0);
}

/// `ℙ(τ ≥ n)` by direct orbit simulation with its own random stream.
fn brute_force_tail(gammas: &[f64], start: impl Fn(f64) -> f64, trials: usize, seed: u64) -> Vec<f64> {
    let n_max = gammas.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; n_max + 1];
    for _ in 0..trials {
        let mut x = start(rng.gen::<f64>());
        let mut survived = 0;
        for (k, g) in gammas.iter().enumerate() {
            x = map_point(*g, x);
            if x >= 0.5 {
                break;
            }
            survived = k + 1;
        }
        // survived steps without entering: τ ≥ n for n ≤ survived + 1
        for c in counts.iter_mut().take((survived + 1).min(n_max) + 1) {
            *c += 1;
        }
    }
    counts.iter().map(|c| *c as f64 / trials as f64).collect()
}

#[test]
fn entry_time_tail_matches_direct_simulation() {
    let base = BaseSystem::golden_rotation();
    let params = random_process(&base);
    let grid = make_grid(1024, 3.0).unwrap();
    let cache = MemoryCache::new(128);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let om = BasePoint::rotation(0.35);
    let n_max = 40;
    let trials = 40_000;
    let gammas: Vec<f64> = (0..n_max)
        .map(|k| cc.parameter(base.advance(om, k as i64), 0.0).unwrap().gamma())
        .collect();

    let right = GridFunction::from_fn(grid.clone(), |x| if x >= 0.5 { 2.0 } else { 0.0 });
    let t = cc.entry_time_tail(om, &right, n_max, trials, 9, 0.0).unwrap();
    assert_eq!(t.tail[0], 1.0);
    assert_eq!(t.tail[1], 1.0);
    // Half of [1/2, 1] maps into the left half.
    assert!((t.tail[2] - 0.5).abs() < 4.0 * (0.25 / trials as f64).sqrt());
    let brute = brute_force_tail(&gammas, |u| 0.5 + 0.5 * u, trials, 77);
    for (n, (&a, &b)) in t.tail.iter().zip(&brute).enumerate().take(n_max + 1) {
        let se = ((a * (1.0 - a) + b * (1.0 - b)) / trials as f64).sqrt();
        assert!((a - b).abs() <= 4.0 * se + 1e-12, "n = {n}: {a} vs {b}");
    }

    let leb = GridFunction::lebesgue(grid.clone());
    let t = cc.entry_time_tail(om, &leb, n_max, trials, 10, 0.0).unwrap();
    let brute = brute_force_tail(&gammas, |u| u, trials, 78);
    for (n, (&a, &b)) in t.tail.iter().zip(&brute).enumerate().take(n_max + 1) {
        let se = ((a * (1.0 - a) + b * (1.0 - b)) / trials as f64).sqrt();
        assert!((a - b).abs() <= 4.0 * se + 1e-12, "n = {n}: {a} vs {b}");
    }
}

#[test]
fn entry_time_tail_of_a_single_map_decays_like_a_power() {
    let base = BaseSystem::golden_rotation();
    let gamma = 0.5;
    let params = constant_process(&base, gamma);
    let grid = make_grid(1024, 3.0).unwrap();
    let cache = MemoryCache::new(4);
    let cc = Cocycle::new(&base, &params, &grid, &cache);
    let leb = GridFunction::lebesgue(grid.clone());
    let t = cc.entry_time_tail(BasePoint::rotation(0.0), &leb, 400, 200_000, 4, 0.0).unwrap();
    // Lebesgue mass left of the n-th preimage of 1/2 scales like n^{-1/γ}.
    let slope = t.fit.unwrap().slope;
    assert!((slope + 1.0 / gamma).abs() < 0.35, "{slope}");
}

#[test]
fn graded_quadrature_converges_at_first_order() {
    let al = 0.45;
    let p = 1.0 / (1.0 - al) + 0.5;
    let integral = |n: usize| integrate(&GridFunction::from_fn(make_grid(n, p).unwrap(), |x| x.powf(-al)));
    let v: Vec<f64> = [256usize, 512, 1024, 2048].iter().map(|&n| integral(n)).collect();
    let exact = 1.0 / (1.0 - al);
    for w in v.windows(2) {
        assert!((w[0] - w[1]).abs() <= 10.0 / 256.0);
    }
    let d: Vec<f64> = v.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
    assert!((d[0] / d[1]).log2() >= 1.0 && (d[1] / d[2]).log2() >= 1.0, "{d:?}");
    assert!((v[3] - exact).abs() < 1e-3);
}
