//! Flat `key = value` run configuration with dotted sections.
//!
//! Lists and matrices are written as bracketed row-major lists, for example
//! `domain.holonomy = [[2.0, 0.0], [0.0, 0.5]]`. `#` starts a comment. Every
//! key is optional except `experiment`; [`emit_config`] writes every key
//! explicitly in a fixed order, which is the canonical form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use bundleflow_core::flow::Schedule;
use bundleflow_core::{BaseDomain, FunctionalKind, Mat, SolitonKind, SolitonSpec, StepControl};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("{}`{key}`: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid { line: Option<usize>, key: String, message: String },
    #[error("override `{0}` is not of the form KEY=VALUE")]
    BadOverride(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Flow,
    Stability,
    Monotonicity,
    Blowdown,
    Conservation,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Flow => "flow",
            Experiment::Stability => "stability",
            Experiment::Monotonicity => "monotonicity",
            Experiment::Blowdown => "blowdown",
            Experiment::Conservation => "conservation",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "flow" => Experiment::Flow,
            "stability" => Experiment::Stability,
            "monotonicity" => Experiment::Monotonicity,
            "blowdown" => Experiment::Blowdown,
            "conservation" => Experiment::Conservation,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainModeName {
    Grid,
    Homogeneous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainConfig {
    pub mode: DomainModeName,
    pub sizes: Vec<usize>,
    pub periods: Vec<f64>,
    pub holonomy: Option<Mat>,
    /// Reference curvature κ̂ of a homogeneous base.
    pub curvature: f64,
    pub stencil_order: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialKind {
    Soliton,
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialConfig {
    pub kind: InitialKind,
    pub soliton: SolitonKind,
    pub generator: Vec<f64>,
    pub euler_density: f64,
    pub t: f64,
    /// Amplitude of the seeded fiber perturbation (`0` for none).
    pub epsilon: f64,
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    pub horizon: f64,
    pub functional: FunctionalKind,
    pub blowup_time: Option<f64>,
    pub scales: Vec<f64>,
    pub checkpoints_per_log_unit: f64,
    pub samples_per_log_unit: f64,
    /// Extra stop times; flow runs land exactly on them.
    pub stops: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub domain: DomainConfig,
    pub fiber_dim: usize,
    pub initial: InitialConfig,
    pub control: StepControl,
    pub run: RunSection,
    pub output_dir: PathBuf,
}

const KEYS: &[&str] = &[
    "experiment",
    "seed",
    "domain.mode",
    "domain.sizes",
    "domain.periods",
    "domain.holonomy",
    "domain.curvature",
    "domain.stencil_order",
    "fiber.dim",
    "initial.kind",
    "initial.soliton",
    "initial.generator",
    "initial.euler_density",
    "initial.t",
    "initial.epsilon",
    "initial.path",
    "control.safety",
    "control.dt_min",
    "control.max_rejects",
    "control.dt_max",
    "run.horizon",
    "run.functional",
    "run.blowup_time",
    "run.scales",
    "run.checkpoints_per_log_unit",
    "run.samples_per_log_unit",
    "run.stops",
    "output.dir",
];

/// Raw entries with the line each came from (`0` for overrides).
type Entries = BTreeMap<String, (usize, String)>;

fn tokenize(text: &str) -> Result<Entries, ConfigError> {
    let mut out = Entries::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line, key: key.to_string() });
        }
        if out.insert(key.to_string(), (line, value.trim().to_string())).is_some() {
            return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
        }
    }
    Ok(out)
}

/// Parses configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_with_overrides(text, &[])
}

/// Parses configuration text, then applies `KEY=VALUE` overrides.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut entries = tokenize(text)?;
    for o in overrides {
        let (key, value) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line: 0, key: key.to_string() });
        }
        entries.insert(key.to_string(), (0, value.trim().to_string()));
    }
    build(&entries)
}

struct Reader<'a> {
    entries: &'a Entries,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<(Option<usize>, &str)> {
        self.entries.get(key).map(|(l, v)| ((*l > 0).then_some(*l), v.as_str()))
    }

    fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { line: self.raw(key).and_then(|r| r.0), key: key.to_string(), message: message.into() }
    }

    fn get<T>(&self, key: &str, default: T, parse: impl Fn(&str) -> Option<T>) -> Result<T, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some((_, v)) => parse(v).ok_or_else(|| self.invalid(key, format!("cannot parse `{v}`"))),
        }
    }

    fn float(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.get(key, default, |v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
    }

    fn opt_float(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key, None, |v| if v == "none" { Some(None) } else { v.parse::<f64>().ok().filter(|x| x.is_finite()).map(Some) })
    }

    fn list(&self, key: &str, default: Vec<f64>) -> Result<Vec<f64>, ConfigError> {
        self.get(key, default, |v| {
            serde_json::from_str::<Vec<f64>>(v).ok().filter(|l| l.iter().all(|x| x.is_finite()))
        })
    }
}

fn parse_matrix(v: &str) -> Option<Option<Mat>> {
    if v == "none" {
        return Some(None);
    }
    let rows: Vec<Vec<f64>> = serde_json::from_str(v).ok()?;
    let n = rows.len();
    if n == 0 || n > 3 || rows.iter().any(|r| r.len() != n || r.iter().any(|x| !x.is_finite())) {
        return None;
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Some(Some(Mat::from_row_major(n, n, &flat)))
}

fn build(entries: &Entries) -> Result<RunConfig, ConfigError> {
    let r = Reader { entries };
    let experiment = match r.raw("experiment") {
        None => return Err(ConfigError::Invalid { line: None, key: "experiment".into(), message: "missing".into() }),
        Some((_, v)) => Experiment::parse(v).ok_or_else(|| r.invalid("experiment", format!("unknown experiment `{v}`")))?,
    };
    let seed = r.get("seed", 1u64, |v| v.parse().ok())?;
    let mode = r.get("domain.mode", DomainModeName::Grid, |v| match v {
        "grid" => Some(DomainModeName::Grid),
        "homogeneous" => Some(DomainModeName::Homogeneous),
        _ => None,
    })?;
    let sizes = r.get("domain.sizes", vec![64usize], |v| serde_json::from_str::<Vec<usize>>(v).ok())?;
    let periods = r.list("domain.periods", vec![4.0; sizes.len()])?;
    let holonomy = r.get("domain.holonomy", None, parse_matrix)?;
    let curvature = r.float("domain.curvature", 0.0)?;
    let stencil_order = r.get("domain.stencil_order", 4usize, |v| v.parse().ok())?;
    let fiber_dim = r.get("fiber.dim", 1usize, |v| v.parse().ok())?;
    let kind = r.get("initial.kind", InitialKind::Soliton, |v| match v {
        "soliton" => Some(InitialKind::Soliton),
        "checkpoint" => Some(InitialKind::Checkpoint),
        _ => None,
    })?;
    let soliton = r.get("initial.soliton", SolitonKind::Flat, SolitonKind::parse)?;
    let generator = r.list("initial.generator", vec![1.0, -1.0])?;
    let euler_density = r.float("initial.euler_density", 1.0)?;
    let t = r.float("initial.t", 1.0)?;
    let epsilon = r.float("initial.epsilon", 0.0)?;
    let path = r.get("initial.path", None, |v| Some(if v == "none" { None } else { Some(PathBuf::from(v)) }))?;
    let defaults = StepControl::default();
    let control = StepControl {
        safety: r.float("control.safety", defaults.safety)?,
        dt_min: r.float("control.dt_min", defaults.dt_min)?,
        max_rejects: r.get("control.max_rejects", defaults.max_rejects, |v| v.parse().ok())?,
        dt_max: r.opt_float("control.dt_max")?,
    };
    let schedule = Schedule::default();
    let run = RunSection {
        horizon: r.float("run.horizon", 4.0)?,
        functional: r.get("run.functional", FunctionalKind::WPlus, FunctionalKind::parse)?,
        blowup_time: r.opt_float("run.blowup_time")?,
        scales: r.list("run.scales", vec![1.0, 4.0, 16.0, 64.0])?,
        checkpoints_per_log_unit: r.float("run.checkpoints_per_log_unit", schedule.per_log_unit)?,
        samples_per_log_unit: r.float("run.samples_per_log_unit", 4.0)?,
        stops: r.list("run.stops", Vec::new())?,
    };
    let output_dir = PathBuf::from(r.get("output.dir", "out".to_string(), |v| Some(v.to_string()))?);
    let cfg = RunConfig {
        experiment,
        seed,
        domain: DomainConfig { mode, sizes, periods, holonomy, curvature, stencil_order },
        fiber_dim,
        initial: InitialConfig { kind, soliton, generator, euler_density, t, epsilon, path },
        control,
        run,
        output_dir,
    };
    validate(&cfg, &r)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig, r: &Reader) -> Result<(), ConfigError> {
    if let Some(rho) = cfg.domain.holonomy {
        let det = rho.det();
        if !((det.abs() - 1.0).abs() <= 1e-12) {
            return Err(r.invalid("domain.holonomy", format!("|det| must be 1 within 1e-12, got {det}")));
        }
    }
    if cfg.domain.mode == DomainModeName::Grid && cfg.domain.sizes.len() != cfg.domain.periods.len() {
        return Err(r.invalid("domain.periods", "needs one period per grid axis"));
    }
    if cfg.initial.kind == InitialKind::Checkpoint {
        match &cfg.initial.path {
            None => return Err(r.invalid("initial.path", "a checkpoint initial state needs a path")),
            Some(p) if !p.exists() => return Err(r.invalid("initial.path", format!("{} does not exist", p.display()))),
            _ => {}
        }
    }
    cfg.control.check().map_err(|e| r.invalid("control.safety", e.to_string()))?;
    if !(cfg.initial.t > 0.0) {
        return Err(r.invalid("initial.t", "must be positive"));
    }
    if !(cfg.run.horizon > 0.0) {
        return Err(r.invalid("run.horizon", "must be positive"));
    }
    if !(cfg.run.checkpoints_per_log_unit > 0.0 && cfg.run.samples_per_log_unit > 0.0) {
        return Err(r.invalid("run.samples_per_log_unit", "sampling densities must be positive"));
    }
    if cfg.initial.kind == InitialKind::Soliton {
        let spec = soliton_spec(cfg).map_err(|e| r.invalid("initial.soliton", e.to_string()))?;
        let domain = spec.domain().map_err(|e| r.invalid("domain.sizes", e.to_string()))?;
        let matches = match (cfg.domain.holonomy, domain.holonomy) {
            (None, _) => true,
            (Some(given), Some(derived)) => {
                given.rows() == derived.rows() && (given - derived).max_abs() <= 1e-12 * (1.0 + derived.max_abs())
            }
            (Some(_), None) => false,
        };
        if !matches {
            return Err(r.invalid("domain.holonomy", "does not match the holonomy implied by the soliton"));
        }
    } else {
        build_domain(cfg).map_err(|e| r.invalid("domain.sizes", e.to_string()))?;
    }
    Ok(())
}

/// Soliton spec described by the domain and initial sections.
pub fn soliton_spec(cfg: &RunConfig) -> bundleflow_core::Result<SolitonSpec> {
    let d = &cfg.domain;
    let spec = match cfg.initial.soliton {
        SolitonKind::Flat => SolitonSpec::flat(&d.sizes, &d.periods, cfg.fiber_dim),
        SolitonKind::Sol | SolitonKind::GeneralizedSol => {
            let size = d.sizes.first().copied().unwrap_or(0);
            let period = d.periods.first().copied().unwrap_or(0.0);
            SolitonSpec::sol(size, period, &cfg.initial.generator)
        }
        SolitonKind::Nil => {
            let mut s = SolitonSpec::nil(d.sizes.first().copied().unwrap_or(0), 1.0, cfg.initial.euler_density);
            s.sizes = d.sizes.clone();
            s.periods = d.periods.clone();
            s
        }
        SolitonKind::H2xr => SolitonSpec::h2xr(d.curvature),
        SolitonKind::H3 => SolitonSpec::h3(d.curvature),
    }
    .with_stencil_order(d.stencil_order);
    spec.check()?;
    Ok(spec)
}

/// Domain described by the domain section alone.
pub fn build_domain(cfg: &RunConfig) -> bundleflow_core::Result<BaseDomain> {
    let d = &cfg.domain;
    match d.mode {
        DomainModeName::Homogeneous => BaseDomain::homogeneous(d.sizes.len().max(2), d.curvature),
        DomainModeName::Grid => {
            let mut dom = BaseDomain::grid(&d.sizes, &d.periods)?.with_stencil_order(d.stencil_order)?;
            if let Some(rho) = d.holonomy {
                dom = dom.with_holonomy(rho)?;
            }
            Ok(dom)
        }
    }
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

fn float_list(xs: &[f64]) -> String {
    format!("[{}]", xs.iter().map(|x| float(*x)).collect::<Vec<_>>().join(", "))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".to_string(), float)
}

/// Canonical text: every key, fixed order, floats in round-trip precision.
pub fn emit_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    let d = &cfg.domain;
    put("experiment", cfg.experiment.name().into());
    put("seed", cfg.seed.to_string());
    put("domain.mode", match d.mode {
        DomainModeName::Grid => "grid".into(),
        DomainModeName::Homogeneous => "homogeneous".into(),
    });
    put("domain.sizes", format!("[{}]", d.sizes.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")));
    put("domain.periods", float_list(&d.periods));
    put("domain.holonomy", match d.holonomy {
        None => "none".into(),
        Some(m) => {
            let rows: Vec<String> =
                (0..m.rows()).map(|i| float_list(&(0..m.cols()).map(|j| m[(i, j)]).collect::<Vec<_>>())).collect();
            format!("[{}]", rows.join(", "))
        }
    });
    put("domain.curvature", float(d.curvature));
    put("domain.stencil_order", d.stencil_order.to_string());
    put("fiber.dim", cfg.fiber_dim.to_string());
    let i = &cfg.initial;
    put("initial.kind", match i.kind {
        InitialKind::Soliton => "soliton".into(),
        InitialKind::Checkpoint => "checkpoint".into(),
    });
    put("initial.soliton", i.soliton.name().into());
    put("initial.generator", float_list(&i.generator));
    put("initial.euler_density", float(i.euler_density));
    put("initial.t", float(i.t));
    put("initial.epsilon", float(i.epsilon));
    put("initial.path", i.path.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string()));
    put("control.safety", float(cfg.control.safety));
    put("control.dt_min", float(cfg.control.dt_min));
    put("control.max_rejects", cfg.control.max_rejects.to_string());
    put("control.dt_max", opt(cfg.control.dt_max));
    let r = &cfg.run;
    put("run.horizon", float(r.horizon));
    put("run.functional", r.functional.name().into());
    put("run.blowup_time", opt(r.blowup_time));
    put("run.scales", float_list(&r.scales));
    put("run.checkpoints_per_log_unit", float(r.checkpoints_per_log_unit));
    put("run.samples_per_log_unit", float(r.samples_per_log_unit));
    put("run.stops", float_list(&r.stops));
    put("output.dir", cfg.output_dir.display().to_string());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_is_fully_defaulted() {
        let cfg = parse_config("experiment = stability\ninitial.soliton = sol\nfiber.dim = 2\ndomain.sizes = [64]\ndomain.periods = [4.0]\n").unwrap();
        assert_eq!(cfg.control, StepControl::default());
        assert_eq!(cfg.run.scales, vec![1.0, 4.0, 16.0, 64.0]);
        assert_eq!(cfg.initial.generator, vec![1.0, -1.0]);
        let text = emit_config(&cfg);
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_names_the_line() {
        let err = parse_config("experiment = flow\n\ndomain.colour = red\n").unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey { line: 3, key: "domain.colour".into() });
    }

    #[test]
    fn determinant_two_is_rejected() {
        let text = "experiment = flow\nfiber.dim = 2\ndomain.sizes = [16]\ndomain.periods = [1.0]\ndomain.holonomy = [[2.0, 0.0], [0.0, 1.0]]\n";
        match parse_config(text).unwrap_err() {
            ConfigError::Invalid { line, key, .. } => {
                assert_eq!(line, Some(5));
                assert_eq!(key, "domain.holonomy");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overrides_replace_values() {
        let cfg = parse_with_overrides("experiment = flow\n", &["run.horizon=2.5".into()]).unwrap();
        assert_eq!(cfg.run.horizon, 2.5);
        assert!(parse_with_overrides("experiment = flow\n", &["nonsense".into()]).is_err());
    }
}
