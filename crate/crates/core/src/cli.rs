//! Command-line front end: `validate`, `run` and `probe` over a plain-text
//! configuration of dotted `key = value` lines.
//!
//! Model keys are `a`, `b`, `sigma`, `tau`, `t0`, `T`, `gamma.kind`,
//! `gamma.params`, `initial.kind` and `initial.params`; see the README for
//! the experiment keys and their defaults.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{laplace_transform, lp_constant, neg_moment, CirParams, MomentValue};
use crate::experiments::{
    comparison_census, fit_rate, mean_consistency_check, modulus_scaling, positivity_census,
    strong_error_study, survival_probability, CensusScheme, ErrorTable, ExperimentError, MeanCheck,
    ModulusTable, PositivityCensus, RateFit, RateVariant,
};
use crate::model::{
    validate, ConditionReport, GammaSpec, InitialSegmentSpec, ModelError, ModelSpec, TimeGrid,
};
use crate::montecarlo::Estimate;
use crate::scheme::BaselineKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const THREADS_ENV: &str = "DELAY_CIR_THREADS";

pub const ERRORS_HEADER: &str = "delta,p,grid_error,uniform_error,std_err,n_paths";
pub const RATEFIT_HEADER: &str = "p,variant,slope,intercept,r_squared";
pub const MEAN_HEADER: &str = "t,mc_mean,oracle_mean,z";
pub const CENSUS_HEADER: &str = "scheme,fraction_nonpositive,n_paths";
pub const COMPARISON_HEADER: &str = "violations,pairs,n_paths";
pub const MODULUS_HEADER: &str = "delta,p,modulus,std_err,n_paths";
pub const SURVIVAL_HEADER: &str = "n,delta,estimate,std_err,n_paths";
pub const PROBE_HEADER: &str = "quantity,argument,t,value";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: String, reason: String },
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{0}")]
    Analytics(String),
    #[error("output: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    StrongRate,
    MeanCheck,
    Comparison,
    Positivity,
    Modulus,
    Survival,
    AnalyticsProbe,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        Ok(match s {
            "strong_rate" => ExperimentKind::StrongRate,
            "mean_check" => ExperimentKind::MeanCheck,
            "comparison" => ExperimentKind::Comparison,
            "positivity" => ExperimentKind::Positivity,
            "modulus" => ExperimentKind::Modulus,
            "survival" => ExperimentKind::Survival,
            "analytics_probe" => ExperimentKind::AnalyticsProbe,
            other => return Err(ConfigError::UnknownExperiment(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::StrongRate => "strong_rate",
            ExperimentKind::MeanCheck => "mean_check",
            ExperimentKind::Comparison => "comparison",
            ExperimentKind::Positivity => "positivity",
            ExperimentKind::Modulus => "modulus",
            ExperimentKind::Survival => "survival",
            ExperimentKind::AnalyticsProbe => "analytics_probe",
        }
    }
}

/// A fully validated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// Steps per delay window for single-grid experiments.
    pub n: usize,
    pub n_list: Vec<usize>,
    pub n_ref: usize,
    pub n_paths: usize,
    pub p_list: Vec<f64>,
    /// Times for `mean_check`; empty means five evenly spaced grid times.
    pub checkpoints: Vec<f64>,
    pub schemes: Vec<CensusScheme>,
    /// Modulus windows in grid steps.
    pub windows: Vec<usize>,
    pub probe_u: Vec<f64>,
    pub probe_p: Vec<f64>,
    pub probe_t: Option<f64>,
    pub out: Option<PathBuf>,
    /// Normalized `key = value` lines after defaults and overrides.
    pub echo: String,
}

const KNOWN_KEYS: &[&str] = &[
    "a",
    "b",
    "sigma",
    "tau",
    "t0",
    "T",
    "gamma.kind",
    "gamma.params",
    "initial.kind",
    "initial.params",
    "experiment",
    "seed",
    "N",
    "N_list",
    "N_ref",
    "n_paths",
    "p_list",
    "checkpoints",
    "schemes",
    "windows",
    "probe.u",
    "probe.p",
    "probe.t",
    "out",
];

/// Raw `key = value` pairs; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(&format!("line {}", line_no + 1), "expected `key = value`"))?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(bad(key, "unknown key"));
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(bad(key, "given twice"));
            }
        }
        Ok(ConfigMap { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str, ConfigError> {
        self.raw(key)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    fn number(&self, key: &str, default: Option<f64>) -> Result<f64, ConfigError> {
        match (self.raw(key), default) {
            (Some(v), _) => parse_f64(key, v),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(ConfigError::MissingKey(key.to_string())),
        }
    }

    fn positive(&self, key: &str, default: Option<f64>) -> Result<f64, ConfigError> {
        let v = self.number(key, default)?;
        if !(v > 0.0) {
            return Err(bad(key, "must be positive"));
        }
        Ok(v)
    }

    fn count(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse_count(key, v),
        }
    }

    fn list<T>(
        &self,
        key: &str,
        default: Vec<T>,
        item: impl Fn(&str, &str) -> Result<T, ConfigError>,
    ) -> Result<Vec<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => {
                let items = split_list(v)
                    .map(|s| item(key, s))
                    .collect::<Result<Vec<_>, _>>()?;
                if items.is_empty() {
                    return Err(bad(key, "empty list"));
                }
                Ok(items)
            }
        }
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v
        .parse()
        .map_err(|_| bad(key, format!("`{v}` is not a number")))?;
    if !x.is_finite() {
        return Err(bad(key, "must be finite"));
    }
    Ok(x)
}

fn parse_count(key: &str, v: &str) -> Result<usize, ConfigError> {
    match v.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(bad(key, format!("`{v}` is not a positive integer"))),
    }
}

fn parse_gamma(map: &ConfigMap) -> Result<GammaSpec, ConfigError> {
    let kind = map.raw("gamma.kind").unwrap_or("constant");
    let params = map.list("gamma.params", Vec::new(), parse_f64)?;
    let expect = |n: usize| {
        if params.len() == n {
            Ok(())
        } else {
            Err(bad("gamma.params", format!("`{kind}` takes {n} values")))
        }
    };
    Ok(match kind {
        "constant" => {
            expect(1)?;
            GammaSpec::Constant { level: params[0] }
        }
        "affine" => {
            expect(2)?;
            GammaSpec::Affine {
                level: params[0],
                slope: params[1],
            }
        }
        "sinusoid" => {
            expect(3)?;
            GammaSpec::Sinusoid {
                level: params[0],
                amplitude: params[1],
                angular_frequency: params[2],
            }
        }
        other => {
            return Err(bad(
                "gamma.kind",
                format!("`{other}` is not constant, affine or sinusoid"),
            ))
        }
    })
}

fn parse_initial(map: &ConfigMap) -> Result<InitialSegmentSpec, ConfigError> {
    let kind = map.raw("initial.kind").unwrap_or("constant");
    let params = map.list("initial.params", Vec::new(), parse_f64)?;
    Ok(match kind {
        "constant" if params.len() == 1 => InitialSegmentSpec::Constant { level: params[0] },
        "lognormal" if params.len() == 2 => InitialSegmentSpec::LogNormal {
            median: params[0],
            log_sd: params[1],
        },
        "table" if params.len() >= 4 && params.len() % 2 == 0 => InitialSegmentSpec::Table {
            points: params.chunks_exact(2).map(|c| (c[0], c[1])).collect(),
        },
        "constant" | "lognormal" | "table" => {
            return Err(bad(
                "initial.params",
                "constant takes 1 value, lognormal 2 (median, log_sd), table an even count of t, value pairs",
            ))
        }
        other => {
            return Err(bad(
                "initial.kind",
                format!("`{other}` is not constant, table or lognormal"),
            ))
        }
    })
}

fn model_error_key(e: &ModelError) -> &'static str {
    match e {
        ModelError::NonPositiveParameter { name, .. } => match *name {
            "horizon" => "T",
            "a" => "a",
            "b" => "b",
            "sigma" => "sigma",
            "tau" => "tau",
            _ => "model",
        },
        ModelError::HorizonBeforeStart { .. } => "T",
        ModelError::GammaNotPositive { .. } => "gamma.params",
        ModelError::InvalidSegment(_) => "initial.params",
        _ => "model",
    }
}

/// The model keys of a configuration.
pub fn parse_model(map: &ConfigMap) -> Result<ModelSpec, ConfigError> {
    map.required("gamma.params")?;
    map.required("initial.params")?;
    let model = ModelSpec {
        a: map.positive("a", None)?,
        b: {
            let b = map.number("b", Some(0.0))?;
            if b < 0.0 {
                return Err(bad("b", "must be nonnegative"));
            }
            b
        },
        sigma: map.positive("sigma", None)?,
        tau: map.positive("tau", None)?,
        t0: map.number("t0", Some(0.0))?,
        horizon: map.number("T", None)?,
        gamma: parse_gamma(map)?,
        initial: parse_initial(map)?,
    };
    validate(&model).map_err(|e| bad(model_error_key(&e), e.to_string()))?;
    TimeGrid::new(model.t0, model.tau, model.horizon, 1)
        .map_err(|_| bad("T", "T - t0 must be a multiple of tau"))?;
    Ok(model)
}

fn parse_scheme(key: &str, v: &str) -> Result<CensusScheme, ConfigError> {
    Ok(match v {
        "implicit" => CensusScheme::Implicit,
        "truncated" => CensusScheme::Baseline(BaselineKind::TruncatedEuler),
        "symmetrized" => CensusScheme::Baseline(BaselineKind::SymmetrizedEuler),
        "small_tau_proxy" => CensusScheme::Baseline(BaselineKind::SmallTauProxy),
        other => return Err(bad(key, format!("unknown scheme `{other}`"))),
    })
}

fn render_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Validates a parsed configuration; `seed_override` replaces the file's seed.
pub fn build_run_config(
    mut map: ConfigMap,
    seed_override: Option<u64>,
) -> Result<RunConfig, ConfigError> {
    if let Some(seed) = seed_override {
        map.set("seed", seed.to_string());
    }
    let model = parse_model(&map)?;
    let experiment = ExperimentKind::parse(map.required("experiment")?)?;
    let seed_raw = map.required("seed")?;
    let seed: u64 = seed_raw
        .parse()
        .map_err(|_| bad("seed", format!("`{seed_raw}` is not an unsigned integer")))?;

    let n = map.count("N", 64)?;
    let n_list = map.list("N_list", vec![8, 16, 32, 64, 128], parse_count)?;
    let n_ref = map.count("N_ref", 1024)?;
    let n_max = *n_list.iter().max().expect("non-empty");
    if n_ref % n_max != 0 || n_list.iter().any(|m| n_ref % m != 0) {
        return Err(bad("N_ref", "must be nested"));
    }
    let n_paths = map.count("n_paths", 1000)?;
    let p_list = map.list("p_list", vec![1.0], parse_f64)?;
    if let Some(p) = p_list.iter().find(|p| !(**p >= 1.0)) {
        return Err(bad("p_list", format!("orders must be >= 1, got {p}")));
    }
    let checkpoints = map.list("checkpoints", Vec::new(), parse_f64)?;
    let default_schemes = if model.b == 0.0 {
        vec!["implicit", "truncated", "symmetrized"]
    } else {
        vec!["implicit", "truncated"]
    };
    let schemes = map.list(
        "schemes",
        default_schemes
            .iter()
            .map(|s| parse_scheme("schemes", s))
            .collect::<Result<_, _>>()?,
        parse_scheme,
    )?;
    let windows = map.list("windows", vec![1, 2, 4, 8, 16], parse_count)?;
    let probe_u = map.list("probe.u", vec![0.5, 1.0, 2.0], parse_f64)?;
    let probe_p = map.list("probe.p", vec![0.5, 1.0], parse_f64)?;
    let probe_t = map
        .raw("probe.t")
        .map(|v| parse_f64("probe.t", v))
        .transpose()?;
    let out = map.raw("out").map(PathBuf::from);

    let mut normalized = map.clone();
    normalized.set("N", n.to_string());
    normalized.set("N_list", render_list(&n_list));
    normalized.set("N_ref", n_ref.to_string());
    normalized.set("n_paths", n_paths.to_string());
    normalized.set("p_list", render_list(&p_list));
    normalized.set(
        "schemes",
        schemes
            .iter()
            .map(|s| s.name())
            .collect::<Vec<_>>()
            .join(","),
    );
    normalized.set("windows", render_list(&windows));
    normalized.set("b", model.b.to_string());
    normalized.set("t0", model.t0.to_string());
    normalized.set("gamma.kind", map.raw("gamma.kind").unwrap_or("constant"));
    normalized.set(
        "initial.kind",
        map.raw("initial.kind").unwrap_or("constant"),
    );
    normalized.entries.remove("out");
    let echo = normalized
        .entries
        .iter()
        .fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k} = {v}");
            s
        });

    Ok(RunConfig {
        model,
        experiment,
        seed,
        n,
        n_list,
        n_ref,
        n_paths,
        p_list,
        checkpoints,
        schemes,
        windows,
        probe_u,
        probe_p,
        probe_t,
        out,
        echo,
    })
}

fn read_config(path: &Path) -> Result<ConfigMap, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    ConfigMap::parse(&text)
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    build_run_config(read_config(path)?, None)
}

/// Round-trip float rendering with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn errors_csv(table: &ErrorTable) -> String {
    let mut s = format!("{ERRORS_HEADER}\n");
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_f64(r.delta),
            fmt_f64(r.p),
            fmt_f64(r.grid_error),
            fmt_f64(r.uniform_error),
            fmt_f64(r.std_err),
            r.n_paths
        );
    }
    s
}

fn ratefit_line(s: &mut String, p: f64, variant: &str, slope: f64, intercept: f64, r_squared: f64) {
    let _ = writeln!(
        s,
        "{},{},{},{},{}",
        fmt_f64(p),
        variant,
        fmt_f64(slope),
        fmt_f64(intercept),
        fmt_f64(r_squared)
    );
}

pub fn ratefit_csv(fits: &[RateFit]) -> String {
    let mut s = format!("{RATEFIT_HEADER}\n");
    for f in fits {
        ratefit_line(
            &mut s,
            f.p,
            f.variant.name(),
            f.slope,
            f.intercept,
            f.r_squared,
        );
    }
    s
}

pub fn mean_csv(check: &MeanCheck) -> String {
    let mut s = format!("{MEAN_HEADER}\n");
    for c in &check.checkpoints {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_f64(c.t),
            fmt_f64(c.estimate.mean),
            fmt_f64(c.oracle),
            fmt_f64(c.z)
        );
    }
    s
}

pub fn census_csv(rows: &[PositivityCensus]) -> String {
    let mut s = format!("{CENSUS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{}",
            r.scheme.name(),
            fmt_f64(r.fraction_nonpositive),
            r.n_paths
        );
    }
    s
}

pub fn modulus_csv(table: &ModulusTable) -> String {
    let mut s = format!("{MODULUS_HEADER}\n");
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_f64(r.delta),
            fmt_f64(table.p),
            fmt_f64(r.moment.mean),
            fmt_f64(r.moment.std_err),
            r.moment.n
        );
    }
    s
}

pub fn survival_csv(rows: &[(usize, f64, Estimate)]) -> String {
    let mut s = format!("{SURVIVAL_HEADER}\n");
    for (n, delta, e) in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            n,
            fmt_f64(*delta),
            fmt_f64(e.mean),
            fmt_f64(e.std_err),
            e.n
        );
    }
    s
}

/// One analytic evaluation from [`probe_rows`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub quantity: &'static str,
    pub argument: f64,
    pub t: f64,
    pub value: f64,
}

/// Classical CIR parameters of a model with `b = 0`, constant `gamma` and a
/// constant initial segment.
pub fn classical_params(model: &ModelSpec) -> Result<CirParams, ConfigError> {
    let gamma = match model.gamma {
        GammaSpec::Constant { level } => level,
        _ => return Err(bad("gamma.kind", "analytic probes need a constant gamma")),
    };
    let x0 = match model.initial {
        InitialSegmentSpec::Constant { level } => level,
        _ => {
            return Err(bad(
                "initial.kind",
                "analytic probes need a constant initial segment",
            ))
        }
    };
    if model.b != 0.0 {
        return Err(bad("b", "analytic probes need b = 0"));
    }
    CirParams::new(model.a, gamma, model.sigma, x0, model.t0)
        .map_err(|e| bad("model", e.to_string()))
}

/// Laplace transform at each `u`, negative moment and `L_p` at each `p`, and
/// the mean, all at time `t`.
pub fn probe_rows(
    params: &CirParams,
    us: &[f64],
    ps: &[f64],
    t: f64,
) -> Result<Vec<ProbeRow>, RunError> {
    let a = |e: crate::analytics::AnalyticsError| RunError::Analytics(e.to_string());
    let mut rows = Vec::new();
    for &u in us {
        rows.push(ProbeRow {
            quantity: "laplace",
            argument: u,
            t,
            value: laplace_transform(params, u, t).map_err(a)?,
        });
    }
    let g = params.feller_ratio();
    for &p in ps {
        let m = neg_moment(params, p, t).map_err(a)?;
        rows.push(ProbeRow {
            quantity: "neg_moment",
            argument: p,
            t,
            value: match m.value {
                MomentValue::Finite(v) => v,
                MomentValue::Infinite => f64::INFINITY,
            },
        });
        if let Ok(l) = lp_constant(g, p, true) {
            rows.push(ProbeRow {
                quantity: "lp_constant",
                argument: p,
                t,
                value: l,
            });
        }
    }
    rows.push(ProbeRow {
        quantity: "mean",
        argument: 0.0,
        t,
        value: params.mean(t),
    });
    Ok(rows)
}

pub fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut s = format!("{PROBE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.quantity,
            fmt_f64(r.argument),
            fmt_f64(r.t),
            fmt_f64(r.value)
        );
    }
    s
}

fn even_checkpoints(grid: &TimeGrid) -> Vec<f64> {
    let k = grid.k_max();
    (1..=5).map(|i| grid.time(((i * k) / 5) as isize)).collect()
}

/// Runs the configured experiment and returns `(file name, contents)` pairs.
pub fn execute(config: &RunConfig) -> Result<Vec<(String, String)>, RunError> {
    let m = &config.model;
    let grid = || TimeGrid::new(m.t0, m.tau, m.horizon, config.n).map_err(ExperimentError::from);
    let mut files = Vec::new();
    match config.experiment {
        ExperimentKind::StrongRate => {
            let table = strong_error_study(
                m,
                &config.n_list,
                config.n_ref,
                config.n_paths,
                &config.p_list,
                config.seed,
            )?;
            let mut fits = Vec::new();
            for &p in &config.p_list {
                if table.rows.iter().filter(|r| r.p == p).count() >= 3 {
                    fits.push(fit_rate(&table, p, RateVariant::PlainDelta)?);
                    fits.push(fit_rate(&table, p, RateVariant::DeltaLogDelta)?);
                }
            }
            files.push(("errors.csv".into(), errors_csv(&table)));
            files.push(("ratefit.csv".into(), ratefit_csv(&fits)));
        }
        ExperimentKind::MeanCheck => {
            let g = grid()?;
            let points = if config.checkpoints.is_empty() {
                even_checkpoints(&g)
            } else {
                config.checkpoints.clone()
            };
            let check = mean_consistency_check(m, &g, config.n_paths, &points, config.seed)?;
            files.push(("mean.csv".into(), mean_csv(&check)));
        }
        ExperimentKind::Comparison => {
            let g = grid()?;
            let gamma_inf = m
                .gamma
                .bounds(m.t0, m.horizon)
                .map_err(ExperimentError::from)?
                .inf;
            let lower = ModelSpec {
                b: 0.0,
                gamma: GammaSpec::Constant { level: gamma_inf },
                ..m.clone()
            };
            let c = comparison_census(m, &lower, g.n(), config.n_paths, config.seed)?;
            files.push((
                "comparison.csv".into(),
                format!(
                    "{COMPARISON_HEADER}\n{},{},{}\n",
                    c.violations, c.pairs, config.n_paths
                ),
            ));
        }
        ExperimentKind::Positivity => {
            let g = grid()?;
            let rows = config
                .schemes
                .iter()
                .map(|&s| positivity_census(s, m, &g, config.n_paths, config.seed))
                .collect::<Result<Vec<_>, _>>()?;
            files.push(("census.csv".into(), census_csv(&rows)));
        }
        ExperimentKind::Modulus => {
            let g = grid()?;
            let p = config.p_list[0];
            let table = modulus_scaling(m, &g, config.n_paths, &config.windows, p, config.seed)?;
            files.push(("modulus.csv".into(), modulus_csv(&table)));
            if let Some((slope, intercept, r2)) = table.fit {
                let mut s = format!("{RATEFIT_HEADER}\n");
                ratefit_line(&mut s, p, "sqrt_delta_log_delta", slope, intercept, r2);
                files.push(("ratefit.csv".into(), s));
            }
        }
        ExperimentKind::Survival => {
            let mut rows = Vec::new();
            for n in [config.n, 2 * config.n] {
                let g = TimeGrid::new(m.t0, m.tau, m.horizon, n).map_err(ExperimentError::from)?;
                rows.push((
                    n,
                    g.delta(),
                    survival_probability(m, &g, config.n_paths, config.seed)?,
                ));
            }
            files.push(("survival.csv".into(), survival_csv(&rows)));
        }
        ExperimentKind::AnalyticsProbe => {
            let params = classical_params(m)?;
            let t = config.probe_t.unwrap_or(m.horizon);
            let rows = probe_rows(&params, &config.probe_u, &config.probe_p, t)?;
            files.push(("probe.csv".into(), probe_csv(&rows)));
        }
    }
    Ok(files)
}

pub fn config_hash(echo: &str) -> String {
    Sha256::digest(echo.as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<(), RunError> {
    let io = |e: std::io::Error| RunError::Io(format!("{}: {e}", dir.join(name).display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(dir.join(name)).map_err(|e| io(e.error))?;
    Ok(())
}

/// Executes `config` and writes its CSVs plus `manifest.txt` into `out`.
/// Nothing is written unless the experiment succeeds.
pub fn run_to_dir(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    let start = Instant::now();
    let files = execute(config)?;
    let elapsed = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(out).map_err(|e| RunError::Io(format!("{}: {e}", out.display())))?;
    let hash = config_hash(&config.echo);
    let mut manifest = String::new();
    let _ = writeln!(manifest, "tool = delay-cir {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "experiment = {}", config.experiment.name());
    let _ = writeln!(manifest, "config_sha256 = {hash}");
    let _ = writeln!(manifest, "wall_time_s = {elapsed:.3}");
    let _ = writeln!(
        manifest,
        "files = {}",
        files
            .iter()
            .map(|(n, _)| n.as_str())
            .collect::<Vec<_>>()
            .join(",")
    );
    manifest.push_str("\n[config]\n");
    manifest.push_str(&config.echo);
    let mut written = Vec::new();
    for (name, contents) in files
        .iter()
        .chain(std::iter::once(&("manifest.txt".to_string(), manifest)))
    {
        write_atomic(out, name, contents)?;
        written.push(out.join(name));
    }
    Ok(written)
}

pub fn render_report(r: &ConditionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "feller_ok = {}", r.feller_ok);
    let _ = writeln!(s, "strong_feller_ok = {}", r.strong_feller_ok);
    let _ = writeln!(s, "scheme_positive_ok = {}", r.scheme_positive_ok);
    let _ = writeln!(s, "feller_ratio = {}", fmt_f64(r.feller_ratio));
    let _ = writeln!(s, "nu = {}", fmt_f64(r.nu));
    let _ = writeln!(s, "m = {}", r.m);
    let _ = writeln!(s, "p_max = {}", fmt_f64(r.p_max));
    let _ = writeln!(s, "gamma_inf = {}", fmt_f64(r.gamma.inf));
    let _ = writeln!(s, "gamma_sup = {}", fmt_f64(r.gamma.sup));
    let _ = writeln!(s, "gamma_holder = {}", fmt_f64(r.gamma.holder));
    let _ = writeln!(s, "a_under_star = {}", fmt_f64(r.a_under_star));
    s
}

#[derive(Debug, Parser)]
#[command(
    name = "delay-cir",
    version,
    about = "Simulate and verify the fixed-delay CIR process"
)]
pub struct Cli {
    /// Worker threads; falls back to DELAY_CIR_THREADS. Never changes results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the condition report of the configured model.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the configured experiment and write CSVs and a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out` in the config, default `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate the classical CIR formulas for the configured parameters.
    Probe {
        #[arg(long)]
        config: PathBuf,
        /// Time of evaluation; defaults to T.
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0])]
        u: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0])]
        p: Vec<f64>,
    },
}

fn configure_threads(flag: Option<usize>) -> Result<(), ConfigError> {
    let count = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(parse_count(THREADS_ENV, v.trim())?),
            Err(_) => None,
        },
    };
    if let Some(n) = count {
        if n == 0 {
            return Err(bad("--threads", "must be positive"));
        }
        // A second initialisation in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn dispatch(cli: Cli, stdout: &mut dyn std::io::Write) -> Result<(), RunError> {
    configure_threads(cli.threads)?;
    let io = |e: std::io::Error| RunError::Io(e.to_string());
    match cli.command {
        Command::Validate { config } => {
            let model = parse_model(&read_config(&config)?)?;
            let report = validate(&model).map_err(|e| bad(model_error_key(&e), e.to_string()))?;
            stdout
                .write_all(render_report(&report).as_bytes())
                .map_err(io)?;
        }
        Command::Run { config, out, seed } => {
            let rc = build_run_config(read_config(&config)?, seed)?;
            let dir = out
                .or_else(|| rc.out.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            for path in run_to_dir(&rc, &dir)? {
                writeln!(stdout, "wrote {}", path.display()).map_err(io)?;
            }
        }
        Command::Probe { config, t, u, p } => {
            let model = parse_model(&read_config(&config)?)?;
            let params = classical_params(&model)?;
            let rows = probe_rows(&params, &u, &p, t.unwrap_or(model.horizon))?;
            stdout.write_all(probe_csv(&rows).as_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors are reported as one line on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, &mut std::io::stdout().lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("delay-cir: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
experiment = strong_rate
seed = 7
a = 1
sigma = 0.25
tau = 0.5
T = 1.5
gamma.params = 1
initial.params = 1
";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = build_run_config(ConfigMap::parse(MINIMAL).unwrap(), None).unwrap();
        assert_eq!(
            c.model,
            ModelSpec::classical(1.0, 1.0, 0.25, 1.0, 0.5, 0.0, 1.5)
        );
        assert_eq!(c.n_list, vec![8, 16, 32, 64, 128]);
        assert_eq!(c.n_ref, 1024);
        assert_eq!(c.n, 64);
        assert_eq!(c.n_paths, 1000);
        assert_eq!(c.p_list, vec![1.0]);
        assert_eq!(c.seed, 7);
        assert_eq!(c.experiment, ExperimentKind::StrongRate);
        assert!(c.echo.contains("N_ref = 1024\n"));
    }

    #[test]
    fn config_errors_name_the_key() {
        let with = |extra: &str| {
            build_run_config(
                ConfigMap::parse(&format!("{MINIMAL}{extra}")).unwrap(),
                None,
            )
        };
        let err = build_run_config(
            ConfigMap::parse(&MINIMAL.replace("sigma = 0.25", "sigma = -1")).unwrap(),
            None,
        )
        .unwrap_err();
        assert_eq!(err, bad("sigma", "must be positive"));
        assert_eq!(
            with("N_list = 8,16\nN_ref = 24\n").unwrap_err(),
            bad("N_ref", "must be nested")
        );
        let err = build_run_config(
            ConfigMap::parse(&MINIMAL.replace("seed = 7\n", "")).unwrap(),
            None,
        )
        .unwrap_err();
        assert_eq!(err, ConfigError::MissingKey("seed".into()));
        let err = build_run_config(
            ConfigMap::parse(&MINIMAL.replace("strong_rate", "weak_rate")).unwrap(),
            None,
        )
        .unwrap_err();
        assert_eq!(err, ConfigError::UnknownExperiment("weak_rate".into()));
        assert!(matches!(
            ConfigMap::parse("colour = red"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(
            matches!(with("gamma.kind = sinusoid\n"), Err(ConfigError::BadValue { key, .. }) if key == "gamma.params")
        );
        let misaligned = build_run_config(
            ConfigMap::parse(&MINIMAL.replace("T = 1.5", "T = 1.3")).unwrap(),
            None,
        );
        assert!(matches!(misaligned, Err(ConfigError::BadValue { key, .. }) if key == "T"));
    }

    #[test]
    fn seed_override_and_family_parsing() {
        let text = format!(
            "{}gamma.kind = sinusoid\ninitial.kind = table\n",
            MINIMAL
                .replace("gamma.params = 1", "gamma.params = 1, 0.2, 3")
                .replace("initial.params = 1", "initial.params = -0.5 1.0 0 1.5")
        );
        let c = build_run_config(ConfigMap::parse(&text).unwrap(), Some(99)).unwrap();
        assert_eq!(c.seed, 99);
        assert_eq!(
            c.model.gamma,
            GammaSpec::Sinusoid {
                level: 1.0,
                amplitude: 0.2,
                angular_frequency: 3.0
            }
        );
        assert_eq!(
            c.model.initial,
            InitialSegmentSpec::Table {
                points: vec![(-0.5, 1.0), (0.0, 1.5)]
            }
        );
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2.454_733_752_418_872_8, 1e-300, 123456.789] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn hash_is_stable_hex() {
        let h = config_hash("a = 1\n");
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash("a = 1\n"));
        assert_ne!(h, config_hash("a = 2\n"));
    }

    #[test]
    fn probe_rows_cover_each_quantity() {
        let p = CirParams::new(1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let rows = probe_rows(&p, &[0.0, 1.0], &[0.5, 2.0], 1.0).unwrap();
        assert_eq!(rows[0].value, 1.0);
        assert!(rows
            .iter()
            .any(|r| r.quantity == "neg_moment" && r.value.is_infinite()));
        assert!(rows
            .iter()
            .any(|r| r.quantity == "lp_constant" && r.argument == 0.5));
        assert!(probe_csv(&rows).starts_with(PROBE_HEADER));
    }
}
