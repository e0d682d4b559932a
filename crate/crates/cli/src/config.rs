//! Experiment configuration: TOML schema, validation and regime gates.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use qlsv_core::base::{BaseSystem, ParamExpr, ParameterProcess};
use qlsv_core::grid::{make_grid, GradedGrid};
use qlsv_core::profile::Profile;
use qlsv_core::stats::ObservableProcess;
use qlsv_core::transfer::PullbackSettings;

use crate::error::{CliError, CliResult};
use crate::expr::{parse_param_expr, parse_profile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Density,
    Cones,
    Decay,
    Entrytime,
    Clt,
    Variance,
    Continuity,
    Response,
    Diffvar,
    Special,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Density => "density",
            Kind::Cones => "cones",
            Kind::Decay => "decay",
            Kind::Entrytime => "entrytime",
            Kind::Clt => "clt",
            Kind::Variance => "variance",
            Kind::Continuity => "continuity",
            Kind::Response => "response",
            Kind::Diffvar => "diffvar",
            Kind::Special => "special",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSection {
    pub kind: String,
    pub angle: Option<f64>,
    pub law: Option<Vec<f64>>,
    pub kernel: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub beta_expr: String,
    #[serde(default = "zero_expr")]
    pub delta_expr: String,
    pub alpha_lower: Option<f64>,
    pub alpha_upper: Option<f64>,
    #[serde(default)]
    pub eps0: f64,
}

fn zero_expr() -> String {
    "const(0)".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RngSection {
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default = "default_grading")]
    pub p: f64,
}

fn default_grading() -> f64 {
    3.0
}

/// Either `f` (the same observable on every fiber) or the special pair
/// `u`, `g` with the vanishing order `gamma_obs` of `u` at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ObservableSection {
    pub f: Option<String>,
    pub u: Option<String>,
    pub g: Option<String>,
    pub gamma_obs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: Kind,
    /// Birkhoff sum length.
    pub n: Option<usize>,
    pub trials: Option<usize>,
    pub n_max: Option<usize>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub eps_grid: Option<Vec<f64>>,
    pub omega_count: Option<usize>,
    /// Perturbation size for single-`ε` experiments.
    pub eps: Option<f64>,
    /// Number of anchors tested by the CLT experiment.
    pub anchors: Option<usize>,
    pub j_max: Option<usize>,
    pub fd_eps: Option<f64>,
    pub pullback_depth: Option<usize>,
    pub pullback_max_depth: Option<usize>,
    pub pullback_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DirSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub base: BaseSection,
    pub params: ParamsSection,
    #[serde(default)]
    pub rng: RngSection,
    pub grid: GridSection,
    #[serde(default)]
    pub observable: ObservableSection,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub cache: DirSection,
    #[serde(default)]
    pub out: DirSection,
}

impl RawConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

/// Fully resolved experiment inputs.
pub struct Experiment {
    pub raw: RawConfig,
    pub kind: Kind,
    pub seed: u64,
    pub base: BaseSystem,
    pub params: ParameterProcess,
    pub grid: Arc<GradedGrid>,
    pub observable: ObservableProcess,
    pub pullback: PullbackSettings,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

fn config_err(e: qlsv_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn build_base(s: &BaseSection, seed: u64) -> CliResult<BaseSystem> {
    let unused = |field: &str, present: bool| {
        if present {
            Err(CliError::Config(format!("base.{field} does not apply to base.kind = {:?}", s.kind)))
        } else {
            Ok(())
        }
    };
    match s.kind.as_str() {
        "rotation" => {
            unused("law", s.law.is_some())?;
            unused("kernel", s.kernel.is_some())?;
            match s.angle {
                Some(a) => BaseSystem::rotation(a).map_err(config_err),
                None => Ok(BaseSystem::golden_rotation()),
            }
        }
        "iid" => {
            unused("angle", s.angle.is_some())?;
            unused("kernel", s.kernel.is_some())?;
            let law = s.law.clone().ok_or_else(|| CliError::Config("base.law is required for iid".into()))?;
            BaseSystem::iid(law, seed).map_err(config_err)
        }
        "markov" => {
            unused("angle", s.angle.is_some())?;
            unused("law", s.law.is_some())?;
            let kernel =
                s.kernel.clone().ok_or_else(|| CliError::Config("base.kernel is required for markov".into()))?;
            BaseSystem::markov(kernel, seed).map_err(config_err)
        }
        other => Err(CliError::Config(format!(
            "base.kind must be rotation, iid or markov, got {other:?}"
        ))),
    }
}

fn build_params(s: &ParamsSection, base: &BaseSystem) -> CliResult<ParameterProcess> {
    let beta = parse_param_expr(&s.beta_expr)?;
    let delta = parse_param_expr(&s.delta_expr)?;
    // β ≡ 0 selects the doubling map, which admits no perturbation.
    if beta.is_zero() {
        if !delta.is_zero() || s.eps0 != 0.0 {
            return Err(CliError::Config("beta = 0 (doubling map) requires delta = 0 and eps0 = 0".into()));
        }
        return Ok(ParameterProcess::doubling());
    }
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| CliError::Config(format!("params.{name} is required")));
    ParameterProcess::new(
        base,
        beta,
        delta,
        need(s.alpha_lower, "alpha_lower")?,
        need(s.alpha_upper, "alpha_upper")?,
        s.eps0,
    )
    .map_err(config_err)
}

fn build_observable(s: &ObservableSection) -> CliResult<ObservableProcess> {
    match (&s.f, &s.u) {
        (Some(_), Some(_)) => Err(CliError::Config("observable: give either f or (u, g, gamma_obs), not both".into())),
        (Some(f), None) => {
            if s.g.is_some() || s.gamma_obs.is_some() {
                return Err(CliError::Config("observable.g and gamma_obs only apply with u".into()));
            }
            Ok(ObservableProcess::fixed(parse_profile(f)?))
        }
        (None, Some(u)) => {
            let g = s.g.as_deref().ok_or_else(|| CliError::Config("observable.g is required with u".into()))?;
            let gamma = s
                .gamma_obs
                .ok_or_else(|| CliError::Config("observable.gamma_obs is required with u".into()))?;
            ObservableProcess::special(parse_profile(u)?, parse_profile(g)?, gamma).map_err(config_err)
        }
        (None, None) => {
            if s.g.is_some() || s.gamma_obs.is_some() {
                return Err(CliError::Config("observable.g and gamma_obs only apply with u".into()));
            }
            Ok(ObservableProcess::fixed(Profile::cos2pi()))
        }
    }
}

/// Regime gates, checked before any computation.
fn check_gates(kind: Kind, params: &ParameterProcess, obs: &ObservableProcess) -> CliResult<()> {
    let alpha = params.alpha_upper();
    match kind {
        Kind::Clt => {
            let special_ok = obs.gamma_obs().is_some_and(|g| g > 2.0 * alpha - 1.0);
            if !params.clt_range() && !special_ok {
                return Err(CliError::Gate(format!(
                    "clt needs alpha < 1/2, or a special observable with gamma_obs > 2 alpha - 1; alpha = {alpha}"
                )));
            }
        }
        Kind::Diffvar => {
            let special_ok = obs
                .gamma_obs()
                .is_some_and(|g| params.special_differentiable_range(g.min(alpha)));
            if !params.differentiable_range() && !special_ok {
                return Err(CliError::Gate(format!(
                    "diffvar needs alpha < 1/5, or a special observable with alpha < (1 + eta)/5; alpha = {alpha}"
                )));
            }
            if params.is_boundary() {
                return Err(CliError::Gate("diffvar needs a perturbable process, not the doubling map".into()));
            }
        }
        Kind::Special => {
            if !obs.is_special() {
                return Err(CliError::Gate("special needs observable.u, g and gamma_obs".into()));
            }
            if params.is_boundary() {
                return Err(CliError::Gate("special needs alpha > 0".into()));
            }
        }
        Kind::Response | Kind::Continuity => {
            if params.is_boundary() || params.eps0() <= 0.0 {
                return Err(CliError::Gate(format!("{} needs a perturbation with eps0 > 0", kind.as_str())));
            }
        }
        Kind::Decay | Kind::Entrytime => {
            if params.is_boundary() {
                return Err(CliError::Gate(format!("{} needs alpha > 0", kind.as_str())));
            }
        }
        Kind::Density | Kind::Cones | Kind::Variance => {}
    }
    Ok(())
}

fn check_knobs(kind: Kind, e: &ExperimentSection, params: &ParameterProcess) -> CliResult<()> {
    let positive = |v: Option<usize>, name: &str| match v {
        Some(0) => Err(CliError::Config(format!("experiment.{name} must be positive"))),
        _ => Ok(()),
    };
    positive(e.n, "n")?;
    positive(e.trials, "trials")?;
    positive(e.k, "K")?;
    positive(e.omega_count, "omega_count")?;
    positive(e.anchors, "anchors")?;
    positive(e.pullback_depth, "pullback_depth")?;
    if let (Some(lo), Some(hi)) = (e.pullback_depth, e.pullback_max_depth) {
        if hi < lo {
            return Err(CliError::Config("experiment.pullback_max_depth is below pullback_depth".into()));
        }
    }
    if let Some(n) = e.n_max {
        if n < 16 {
            return Err(CliError::Config("experiment.n_max must be at least 16".into()));
        }
    }
    let eps0 = params.eps0();
    let inside = |eps: f64| eps == 0.0 || eps.abs() < eps0;
    if let Some(eps) = e.eps {
        if !inside(eps) {
            return Err(CliError::Config(format!("experiment.eps = {eps} is outside (-eps0, eps0)")));
        }
    }
    if let Some(grid) = &e.eps_grid {
        if let Some(bad) = grid.iter().find(|v| !v.is_finite() || !inside(**v)) {
            return Err(CliError::Config(format!("experiment.eps_grid entry {bad} is outside (-eps0, eps0)")));
        }
        if kind == Kind::Response {
            if grid.contains(&0.0) {
                return Err(CliError::Config("response eps_grid must not contain 0".into()));
            }
            let mut mags: Vec<f64> = grid.iter().map(|e| e.abs()).collect();
            mags.sort_by(f64::total_cmp);
            mags.dedup();
            if mags.len() < 4 {
                return Err(CliError::Config("response eps_grid needs at least 4 distinct magnitudes".into()));
            }
        }
    }
    if let Some(fd) = e.fd_eps {
        if !(fd > 0.0 && 2.0 * fd <= eps0) {
            return Err(CliError::Config(format!("experiment.fd_eps must satisfy 0 < 2 fd_eps <= eps0, got {fd}")));
        }
    }
    if kind == Kind::Diffvar && e.fd_eps.is_none() && eps0 <= 0.0 {
        return Err(CliError::Config("diffvar needs eps0 > 0".into()));
    }
    Ok(())
}

impl Experiment {
    /// Applies the command-line overrides, then validates everything.
    pub fn resolve(
        mut raw: RawConfig,
        seed: Option<u64>,
        out: Option<PathBuf>,
        cache: Option<PathBuf>,
    ) -> CliResult<Self> {
        if let Some(s) = seed {
            raw.rng.seed = s;
        }
        if out.is_some() {
            raw.out.dir = out;
        }
        if cache.is_some() {
            raw.cache.dir = cache;
        }
        let seed = raw.rng.seed;
        let base = build_base(&raw.base, seed)?;
        let params = build_params(&raw.params, &base)?;
        let grid = make_grid(raw.grid.n, raw.grid.p).map_err(config_err)?;
        let observable = build_observable(&raw.observable)?;
        let kind = raw.experiment.kind;
        check_gates(kind, &params, &observable)?;
        check_knobs(kind, &raw.experiment, &params)?;
        let e = &raw.experiment;
        let defaults = PullbackSettings::default();
        let min_depth = e.pullback_depth.unwrap_or(defaults.min_depth);
        let pullback = PullbackSettings {
            min_depth,
            max_depth: e.pullback_max_depth.unwrap_or(min_depth.max(defaults.max_depth)),
            target: e.pullback_target.unwrap_or(defaults.target),
        };
        let out_dir = raw.out.dir.clone().unwrap_or_else(|| PathBuf::from("out"));
        let cache_dir = raw.cache.dir.clone();
        Ok(Self {
            raw,
            kind,
            seed,
            base,
            params,
            grid,
            observable,
            pullback,
            out_dir,
            cache_dir,
        })
    }

    /// SHA-256 of the effective configuration (after overrides), as JSON.
    /// Output and cache locations do not affect the numbers, so they are left out.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut canonical = self.raw.clone();
        canonical.out.dir = None;
        canonical.cache.dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// A parameter process with a description stable enough for cache keys.
    pub fn process_key(&self) -> String {
        let p = &self.raw.params;
        format!(
            "{:?}|{:?}|{:?}|{:?}|{}|{}|{}",
            self.base.kind(),
            self.base.seed(),
            parse_param_expr(&p.beta_expr).unwrap_or(ParamExpr::Const(f64::NAN)),
            parse_param_expr(&p.delta_expr).unwrap_or(ParamExpr::Const(f64::NAN)),
            self.params.alpha_lower(),
            self.params.alpha_upper(),
            self.params.eps0()
        )
    }
}
