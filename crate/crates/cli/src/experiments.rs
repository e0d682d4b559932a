//! One runner per experiment kind. Runners return their output files and a
//! verdict; they never touch the filesystem except through the cache.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde_json::{json, Value};

use qlsv_core::base::BasePoint;
use qlsv_core::fit::LogLogFit;
use qlsv_core::grid::GridFunction;
use qlsv_core::response::{
    response_validate, variance_derivative, DerivativeSettings, ResponseSettings,
};
use qlsv_core::stats::{
    birkhoff_clt, clt_verdict, green_kubo_variance, variance_continuity_experiment, CltSettings,
    GreenKuboSettings, PreparedObservable, VarianceEstimate,
};
use qlsv_core::transfer::{cone_check, Cocycle, ConeKind, ConeParams, DecayProfile};
use qlsv_core::Verdict;

use crate::cache::DiskCache;
use crate::config::{Experiment, Kind};
use crate::error::CliResult;

/// Tolerance on the generic decay slope.
const DECAY_SLACK: f64 = 0.15;
/// Tolerance on decay slopes of special observables and on entry-time tails.
const FAST_SLACK: f64 = 0.2;
/// Fraction of CLT anchors that must pass.
const CLT_PASS_FRACTION: f64 = 0.8;

pub struct Outcome {
    pub verdict: Verdict,
    /// Verdict with qualifiers, e.g. `pass(unit-mass)`.
    pub label: String,
    /// `(file name, contents)`; `summary.json` is added by the caller.
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Value,
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> Vec<u8> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s.into_bytes()
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("report serializes");
    b.push(b'\n');
    b
}

fn fit_json(fit: &Option<LogLogFit>) -> Value {
    match fit {
        Some(f) => json!({"slope": f.slope, "intercept": f.intercept, "stderr": f.stderr, "points": f.points}),
        None => Value::Null,
    }
}

fn anchor_json(omega: &BasePoint) -> Value {
    json!({"anchor": omega.anchor, "path": omega.path, "index": omega.index})
}

fn variance_json(v: &VarianceEstimate) -> Value {
    json!({
        "eps": v.eps,
        "sigma2": v.sigma2,
        "term0": v.term0,
        "n_max": v.n_max,
        "tail_bound": v.tail_bound,
        "mc_stderr": v.mc_stderr,
        "envelope": v.envelope,
        "decay_exponent": v.decay_exponent,
        "max_residual": v.max_residual,
        "min_density": v.min_density,
        "per_anchor": v.per_anchor,
    })
}

fn variance_row(v: &VarianceEstimate) -> String {
    format!("{},{},{},{}", v.eps, v.sigma2, v.tail_bound, v.mc_stderr)
}

const VARIANCE_HEADER: &str = "eps,sigma2,tail_bound,mc_stderr";

fn slope_verdict(slope: Option<f64>, threshold: f64) -> Verdict {
    match slope {
        None => Verdict::Inconclusive,
        Some(s) if s <= threshold => Verdict::Pass,
        Some(_) => Verdict::Fail,
    }
}

fn decay_csv(p: &DecayProfile) -> Vec<u8> {
    csv("n,norm", p.norms.iter().enumerate().map(|(n, v)| format!("{n},{v}")))
}

struct Ctx<'a> {
    exp: &'a Experiment,
    cache: &'a DiskCache,
    cc: Cocycle<'a>,
    process_key: String,
}

impl Ctx<'_> {
    fn knobs(&self) -> &crate::config::ExperimentSection {
        &self.exp.raw.experiment
    }

    fn eps(&self) -> f64 {
        self.knobs().eps.unwrap_or(0.0)
    }

    fn anchors(&self, count: usize) -> Vec<BasePoint> {
        self.exp.base.sample_omegas(count, self.exp.seed, 0)
    }

    fn alpha(&self) -> f64 {
        self.exp.params.alpha_upper()
    }

    fn gk_settings(&self) -> GreenKuboSettings {
        GreenKuboSettings {
            n_max: self.knobs().n_max.unwrap_or(512),
            omega_count: self.knobs().omega_count.unwrap_or(16),
            seed: self.exp.seed,
            pullback: self.exp.pullback,
        }
    }

    fn densities(&self, anchors: &[BasePoint], eps: f64) -> qlsv_core::Result<Vec<qlsv_core::transfer::EquivariantDensity>> {
        anchors
            .par_iter()
            .map(|om| self.cache.density(&self.cc, &self.process_key, *om, self.exp.pullback, eps))
            .collect()
    }
}

pub fn run(exp: &Experiment, cache: &DiskCache) -> CliResult<Outcome> {
    let ctx = Ctx {
        exp,
        cache,
        cc: Cocycle::new(&exp.base, &exp.params, &exp.grid, cache),
        process_key: exp.process_key(),
    };
    let out = match exp.kind {
        Kind::Density => density(&ctx)?,
        Kind::Cones => cones(&ctx)?,
        Kind::Decay => decay(&ctx, false)?,
        Kind::Special => decay(&ctx, true)?,
        Kind::Entrytime => entry_time(&ctx)?,
        Kind::Clt => clt(&ctx)?,
        Kind::Variance => variance(&ctx)?,
        Kind::Continuity => continuity(&ctx)?,
        Kind::Response => response(&ctx)?,
        Kind::Diffvar => diffvar(&ctx)?,
    };
    Ok(out)
}

fn simple(verdict: Verdict, files: Vec<(String, Vec<u8>)>, summary: Value) -> Outcome {
    Outcome {
        verdict,
        label: verdict.as_str().to_string(),
        files,
        summary,
    }
}

fn density(ctx: &Ctx<'_>) -> CliResult<Outcome> {
    let anchors = ctx.anchors(ctx.knobs().omega_count.unwrap_or(1));
    let eps = ctx.eps();
    let dens = ctx.densities(&anchors, eps)?;
    let grid = &ctx.exp.grid;
    let nodes = grid.nodes();
    let mut rows = Vec::with_capacity(anchors.len() * grid.n());
    for (a, d) in dens.iter().enumerate() {
        for (i, v) in d.h.values().iter().enumerate() {
            rows.push(format!("{a},{i},{},{},{v}", nodes[i], nodes[i + 1]));
        }
    }
    let target = ctx.exp.pullback.target;
    let converged = dens.iter().all(|d| d.residual <= target);
    let verdict = if converged { Verdict::Pass } else { Verdict::Inconclusive };
    let summary = json!({
        "eps": eps,
        "residual_target": target,
        "anchors": dens.iter().map(|d| json!({
            "omega": anchor_json(&d.omega_anchor),
            "pullback_depth": d.pullback_depth,
            "residual": d.residual,
            "min_value": d.min_value,
            "mass_drift": d.mass_drift,
        })).collect::<Vec<_>>(),
    });
    Ok(simple(
        verdict,
        vec![("density.csv".into(), csv("anchor,cell,x_left,x_right,value", rows))],
        summary,
    ))
}

fn cones(ctx: &Ctx<'_>) -> CliResult<Outcome> {
    let anchors = ctx.anchors(ctx.knobs().omega_count.unwrap_or(4));
    let dens = ctx.densities(&anchors, ctx.eps())?;
    let cone = ConeParams::calibrated(ctx.alpha().max(0.05));
    let mut rows = Vec::new();
    let mut members = 0;
    let mut worst = f64::INFINITY;
    for (a, d) in dens.iter().enumerate() {
        let r = cone_check(&d.h, &cone, ConeKind::Both);
        members += r.member as usize;
        worst = worst.min(r.worst_margin());
        for m in &r.margins {
            rows.push(format!("{a},{},{},{}", m.condition.as_str(), m.margin, m.location));
        }
    }
    let verdict = if members == dens.len() { Verdict::Pass } else { Verdict::Fail };
    let summary = json!({
        "cone": {"a": cone.a, "alpha": cone.alpha, "b1": cone.b1, "b2": cone.b2, "slack": cone.slack},
        "members": members,
        "anchors": dens.len(),
        "worst_margin": worst,
        "max_residual": dens.iter().map(|d| d.residual).fold(0.0, f64::max),
    });
    Ok(simple(
        verdict,
        vec![("cones.csv".into(), csv("anchor,condition,margin,location", rows))],
        summary,
    ))
}

/// Decay of `‖L^n(φ₀ h)‖` for the configured observable; `special` demands the
/// faster rate of observables vanishing at 0.
fn decay(ctx: &Ctx<'_>, special: bool) -> CliResult<Outcome> {
    let omega = ctx.anchors(1)[0];
    let eps = ctx.eps();
    let n_max = ctx.knobs().n_max.unwrap_or(1000);
    let d = ctx.cache.density(&ctx.cc, &ctx.process_key, omega, ctx.exp.pullback, eps)?;
    let obs = &ctx.exp.observable;
    let prep = PreparedObservable::new(obs, &ctx.exp.grid);
    let fiber = prep.fiber(&ctx.exp.base.state(omega), &d.h, None)?;
    let start: Vec<f64> = fiber.cells.iter().zip(d.h.values()).map(|(f, h)| f * h).collect();
    let start = GridFunction::new(ctx.exp.grid.clone(), start, qlsv_core::grid::Tag::Signed)?;
    let profile = ctx.cc.decay_of(omega, &start, n_max, eps)?;
    let alpha = ctx.alpha();
    let expected = obs.decay_exponent(alpha);
    let slack = if special || obs.is_special() { FAST_SLACK } else { DECAY_SLACK };
    let threshold = expected + slack;
    let verdict = if profile.norms[0] == 0.0 {
        Verdict::Pass
    } else {
        slope_verdict(profile.slope(), threshold)
    };
    let summary = json!({
        "omega": anchor_json(&omega),
        "eps": eps,
        "n_max": n_max,
        "fit": fit_json(&profile.fit),
        "fit_range": [profile.fit_range.0, profile.fit_range.1],
        "expected_slope": expected,
        "threshold": threshold,
        "special_constant": fiber.c,
        "density_residual": d.residual,
    });
    Ok(simple(verdict, vec![("decay_profile.csv".into(), decay_csv(&profile))], summary))
}

fn entry_time(ctx: &Ctx<'_>) -> CliResult<Outcome> {
    let omega = ctx.anchors(1)[0];
    let n_max = ctx.knobs().n_max.unwrap_or(1000);
    let trials = ctx.knobs().trials.unwrap_or(10_000);
    let nu = GridFunction::lebesgue(ctx.exp.grid.clone());
    let tail = ctx.cc.entry_time_tail(omega, &nu, n_max, trials, ctx.exp.seed, ctx.eps())?;
    // Lebesgue lies in the cone with γ = 0, so the tail is at most C n^{−1/α}.
    let bound = -1.0 / ctx.alpha();
    let threshold = bound + FAST_SLACK;
    let verdict = match tail.fit {
        None => Verdict::Inconclusive,
        Some(f) if f.slope <= threshold => Verdict::Pass,
        Some(f) if f.slope - 2.0 * f.stderr <= threshold => Verdict::Inconclusive,
        Some(_) => Verdict::Fail,
    };
    let summary = json!({
        "omega": anchor_json(&omega),
        "trials": trials,
        "n_max": n_max,
        "fit": fit_json(&tail.fit),
        "bound_exponent": bound,
        "threshold": threshold,
    });
    let rows = tail.tail.iter().enumerate().map(|(n, t)| format!("{n},{t}"));
    Ok(simple(verdict, vec![("entry_time.csv".into(), csv("n,tail", rows))], summary))
}

fn clt(ctx: &Ctx<'_>) -> CliResult<Outcome> {
    let obs = &ctx.exp.observable;
    let eps = ctx.eps();
    let variance = green_kubo_variance(&ctx.cc, obs, eps, &ctx.gk_settings())?;
    let count = ctx.knobs().anchors.unwrap_or(5);
    let anchors = ctx.exp.base.sample_omegas(count, ctx.exp.seed.wrapping_add(1), 0);
    let settings = |i: usize| CltSettings {
        n: ctx.knobs().n.unwrap_or(10_000),
        trials: ctx.knobs().trials.unwrap_or(10_000),
        eps,
        seed: ctx.exp.seed.wrapping_add(1000 + i as u64),
        pullback: ctx.exp.pullback,
    };
    let reports = anchors
        .iter()
        .enumerate()
        .map(|(i, om)| birkhoff_clt(&ctx.cc, obs, *om, &variance, &settings(i)))
        .collect::<qlsv_core::Result<Vec<_>>>()?;
    let required = ((CLT_PASS_FRACTION * count as f64).ceil() as usize).max(1);
    let verdict = clt_verdict(&reports, required);
    let label = if verdict == Verdict::Pass && reports.iter().all(|r| r.degenerate) {
        "pass(unit-mass)".to_string()
    } else {
        verdict.as_str().to_string()
    };
    let mut samples = String::from("anchor,trial,sum\n");
    for (a, r) in reports.iter().enumerate() {
        for (t, s) in r.samples.iter().enumerate() {
            let _ = writeln!(samples, "{a},{t},{s}");
        }
    }
    let summary = json!({
        "variance": variance_json(&variance),
        "required_passes": required,
        "anchors": reports.iter().map(|r| json!({
            "omega": anchor_json(&r.anchor),
            "n": r.n,
            "trials": r.trials,
            "ks_stat": r.ks_stat,
            "ks_critical": r.ks_critical,
            "verdict": r.verdict_label(),
            "sample_mean": r.sample_mean,
            "sample_variance": r.sample_variance,
            "density_residual": r.density_residual,
        })).collect::<Vec<_>>(),
    });
    Ok(Outcome {
        verdict,
        label,
        files: vec![
            ("clt_samples.csv".into(), samples.into_bytes()),
            ("variance_curve.csv".into(), csv(VARIANCE_HEADER, [variance_row(&variance)])),
        ],
        summary,
    })
}

fn variance(ctx: &Ctx<'_>) -> CliResult<Outcome> {
    let eps_grid = ctx.knobs().eps_grid.clone().unwrap_or_else(|| vec![ctx.eps()]);
    let settings = ctx.gk_settings();
    let estimates = eps_grid
        .iter()
        .map(|&e| green_kubo_variance(&ctx.cc, &ctx.exp.observable, e, &settings))
        .collect::<qlsv_core::Result<Vec<_>>>()?;
    let verdict = if estimates.iter().all(VarianceEstimate::consistent_sign) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let summary = json!({"estimates": estimates.iter().map(variance_json).collect::<Vec<_>>()});
    Ok(simple(
        verdict,
        vec![("variance_curve.csv".into(), csv(VARIANCE_HEADER, estimates.iter().map(variance_row)))],
        summary,
    ))
}

fn continuity(ctx: &Ctx<'_>) -> CliResult<Outcome> {
    let eps0 = ctx.exp.params.eps0();
    let eps_grid = ctx
        .knobs()
        .eps_grid
        .clone()
        .unwrap_or_else(|| [-0.75, -0.5, -0.25, 0.25, 0.5, 0.75].iter().map(|f| f * eps0).collect());
    let report = variance_continuity_experiment(&ctx.cc, &ctx.exp.observable, &eps_grid, &ctx.gk_settings())?;
    // The modulus of continuity must be a positive power of |ε|.
    let verdict = match report.modulus {
        None => Verdict::Inconclusive,
        Some(f) if f.slope - 2.0 * f.stderr > 0.0 => Verdict::Pass,
        Some(f) if f.slope + 2.0 * f.stderr < 0.0 => Verdict::Fail,
        Some(_) => Verdict::Inconclusive,
    };
    let mut rows = vec![variance_row(&report.sigma2_zero)];
    rows.extend(report.points.iter().filter(|p| p.eps != 0.0).map(|p| variance_row(&p.estimate)));
    let summary = json!({
        "sigma2_zero": variance_json(&report.sigma2_zero),
        "points": report.points.iter().map(|p| json!({
            "eps": p.eps, "sigma2": p.estimate.sigma2, "diff": p.diff, "diff_stderr": p.diff_stderr,
            "tail_bound": p.estimate.tail_bound,
        })).collect::<Vec<_>>(),
        "max_abs_diff": report.max_abs_diff,
        "modulus": fit_json(&report.modulus),
        "expected_exponent": report.expected_exponent,
    });
    Ok(simple(verdict, vec![("variance_curve.csv".into(), csv(VARIANCE_HEADER, rows))], summary))
}

fn response(ctx: &Ctx<'_>) -> CliResult<Outcome> {
    let eps0 = ctx.exp.params.eps0();
    let eps_grid = ctx.knobs().eps_grid.clone().unwrap_or_else(|| {
        [0.9, 0.5, 0.25, 0.1, -0.1, -0.25, -0.5, -0.9].iter().map(|f| f * eps0).collect()
    });
    let omega = ctx.anchors(1)[0];
    let settings = ResponseSettings {
        k: ctx.knobs().k.unwrap_or(512),
        pullback: ctx.exp.pullback,
    };
    let v = response_validate(&ctx.cc, omega, &eps_grid, settings)?;
    let rows = v.points.iter().map(|p| format!("{},{},{},{}", p.eps, p.residual, p.stability, p.floor));
    let summary = json!({
        "omega": anchor_json(&omega),
        "K": v.series.k,
        "hhat_l1": v.series.hhat.l1_norm(),
        "tail_estimate": v.series.tail_estimate,
        "convergence_warning": v.series.convergence_warning,
        "density_residual": v.series.residual,
        "residual_fit": fit_json(&v.residual_fit),
        "stability_fit": fit_json(&v.stability_fit),
        "expected_slope": v.expected_slope,
        "discretization": v.discretization,
        "stability_verdict": v.stability_verdict.as_str(),
    });
    Ok(simple(
        v.verdict,
        vec![("response_curve.csv".into(), csv("eps,residual,stability,floor", rows))],
        summary,
    ))
}

fn diffvar(ctx: &Ctx<'_>) -> CliResult<Outcome> {
    let n_max = ctx.knobs().n_max.unwrap_or(128);
    let settings = DerivativeSettings {
        k: ctx.knobs().k.unwrap_or(256),
        n_max,
        j_max: ctx.knobs().j_max.unwrap_or(n_max),
        omega_count: ctx.knobs().omega_count.unwrap_or(16),
        seed: ctx.exp.seed,
        pullback: ctx.exp.pullback,
        fd_eps: ctx.knobs().fd_eps.unwrap_or(ctx.exp.params.eps0() / 4.0),
    };
    let r = variance_derivative(&ctx.cc, &ctx.exp.observable, &settings)?;
    let b = &r.budget_terms;
    let report = json!({
        "formula_value": r.formula_value,
        "term_values": r.term_values,
        "formula_stderr": r.formula_stderr,
        "fd_value": r.fd_value,
        "fd_eps": r.fd_eps,
        "fd_error": r.fd_error,
        "fd_stderr": r.fd_stderr,
        "agreement_gap": r.agreement_gap,
        "error_budget": r.error_budget,
        "budget_terms": {
            "tail3": b.tail3, "tail4": b.tail4, "series_tail": b.series_tail,
            "fd_error": b.fd_error, "mc": b.mc, "total": b.total(),
        },
        "verdict": r.verdict.as_str(),
        "sigma2_plus": variance_json(&r.sigma2_plus),
        "sigma2_minus": variance_json(&r.sigma2_minus),
        "anchors": r.anchors.iter().map(|a| json!({
            "omega": anchor_json(&a.anchor), "terms": a.terms, "value": a.value, "series_tail": a.series_tail,
        })).collect::<Vec<_>>(),
    });
    let summary = json!({
        "formula_value": r.formula_value,
        "fd_value": r.fd_value,
        "agreement_gap": r.agreement_gap,
        "error_budget": r.error_budget,
    });
    Ok(simple(r.verdict, vec![("derivative_report.json".into(), json_bytes(&report))], summary))
}

/// `summary.json` contents: kind, verdict and the runner's details.
pub fn summary_file(kind: Kind, outcome: &Outcome) -> Vec<u8> {
    json_bytes(&json!({
        "kind": kind.as_str(),
        "verdict": outcome.label,
        "details": outcome.summary,
    }))
}
