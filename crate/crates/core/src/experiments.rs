//! Monte Carlo studies built on the implicit scheme: strong error tables and
//! rate fits, mean and comparison checks, positivity censuses, modulus of
//! continuity scaling and survival probabilities.
//!
//! Every estimator is a deterministic function of its inputs and seed.

use std::collections::VecDeque;

use thiserror::Error;

use crate::analytics::{mean_delay_curve, AnalyticsError, MeanMethod};
use crate::model::{ModelError, ModelSpec, TimeGrid};
use crate::montecarlo::{jackknife_lp_norm, map_paths, Estimate, PathSampler};
use crate::noise::{generate, sample_segment, NoiseError};
use crate::scheme::{
    simulate_small_tau_proxy, simulate_symmetrized_euler, simulate_truncated_euler,
    square_and_interpolate, BaselineKind, ImplicitScheme, PathX, SchemeError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("moment order p = {p} must lie in [1, {p_max})")]
    PRequestedTooLarge { p: f64, p_max: f64 },
    #[error("strong Feller condition fails (2 a gamma_inf / sigma^2 = {ratio})")]
    StrongConditionViolated { ratio: f64 },
    #[error("N = {n} does not divide the reference N = {n_ref}")]
    NotNested { n: usize, n_ref: usize },
    #[error("rate fit needs at least 3 rows, found {found}")]
    InsufficientRows { found: usize },
    #[error(
        "rate fit needs positive errors and 0 < delta < 1, got error {error} at delta {delta}"
    )]
    UnfittableRow { delta: f64, error: f64 },
    #[error("models are not comparable: {0}")]
    IncomparableModels(String),
    #[error("checkpoint t = {t} is not a grid time in [t0, T]")]
    CheckpointOffGrid { t: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

/// One row of a strong error table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub n: usize,
    pub delta: f64,
    pub p: f64,
    /// `E[max_k |x_ref(t_k) - x_k|^p]^{1/p}` over coarse grid points.
    pub grid_error: f64,
    /// `E[sup_t |X_ref(t) - X(t)|^p]^{1/p}` for the interpolants.
    pub uniform_error: f64,
    /// Jackknife standard error of `grid_error`.
    pub std_err: f64,
    /// Jackknife standard error of `uniform_error`.
    pub uniform_std_err: f64,
    pub n_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub n_ref: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateVariant {
    /// `log(grid_error)` against `log(delta)`.
    PlainDelta,
    /// `log(uniform_error)` against `log(delta |log delta|)`.
    DeltaLogDelta,
}

impl RateVariant {
    pub fn name(&self) -> &'static str {
        match self {
            RateVariant::PlainDelta => "plain_delta",
            RateVariant::DeltaLogDelta => "delta_log_delta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub p: f64,
    pub variant: RateVariant,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

fn check_p_range(model: &ModelSpec, p_list: &[f64]) -> Result<(), ExperimentError> {
    let report = model.validate()?;
    if !report.strong_feller_ok {
        return Err(ExperimentError::StrongConditionViolated {
            ratio: report.feller_ratio,
        });
    }
    if p_list.is_empty() {
        return Err(ExperimentError::InvalidArgument("empty p list".into()));
    }
    for &p in p_list {
        if !(p >= 1.0 && p < report.p_max) {
            return Err(ExperimentError::PRequestedTooLarge {
                p,
                p_max: report.p_max,
            });
        }
    }
    Ok(())
}

/// Strong error of the implicit scheme at each `N` against the same scheme
/// at `n_ref`, all driven by one Brownian path per sample.
pub fn strong_error_study(
    model: &ModelSpec,
    n_list: &[usize],
    n_ref: usize,
    n_paths: usize,
    p_list: &[f64],
    seed: u64,
) -> Result<ErrorTable, ExperimentError> {
    check_p_range(model, p_list)?;
    if n_paths == 0 {
        return Err(ExperimentError::InvalidArgument(
            "n_paths must be positive".into(),
        ));
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns.is_empty() || ns[0] == 0 {
        return Err(ExperimentError::InvalidArgument(
            "N list must hold positive values".into(),
        ));
    }
    for &n in &ns {
        if !n_ref.is_multiple_of(n) {
            return Err(ExperimentError::NotNested { n, n_ref });
        }
    }
    let fine = TimeGrid::new(model.t0, model.tau, model.horizon, n_ref)?;
    let reference = ImplicitScheme::new(model, &fine)?;
    let coarse: Vec<(TimeGrid, ImplicitScheme)> = ns
        .iter()
        .map(|&n| {
            let g = TimeGrid::new(model.t0, model.tau, model.horizon, n)?;
            Ok((g, ImplicitScheme::new(model, &g)?))
        })
        .collect::<Result<_, ExperimentError>>()?;

    let per_path: Vec<Vec<(f64, f64)>> = map_paths(n_paths, |path| {
        let noise = generate(seed, path, &fine);
        let seg = sample_segment(&model.initial, &fine, seed, path)?;
        let x_ref = square_and_interpolate(&reference.run(noise.increments(), &seg.values)?);
        coarse
            .iter()
            .map(|(g, scheme)| {
                let r = n_ref / g.n();
                let seg = sample_segment(&model.initial, g, seed, path)?;
                let x = square_and_interpolate(&scheme.run(&noise.on_grid(g)?, &seg.values)?);
                let mut grid_err = 0.0f64;
                let mut uniform_err = 0.0f64;
                for k in 0..g.k_max() as isize {
                    let base = k * r as isize;
                    for j in 0..r {
                        let diff = (x_ref.at(base + j as isize) - x.at_fraction(k, j, r)).abs();
                        uniform_err = uniform_err.max(diff);
                    }
                    grid_err = grid_err.max((x_ref.at(base) - x.at(k)).abs());
                }
                let last = g.k_max() as isize;
                let end = (x_ref.at(last * r as isize) - x.at(last)).abs();
                Ok((grid_err.max(end), uniform_err.max(end)))
            })
            .collect::<Result<Vec<_>, ExperimentError>>()
    })?;

    let mut rows = Vec::with_capacity(p_list.len() * ns.len());
    for &p in p_list {
        for (i, (g, _)) in coarse.iter().enumerate() {
            let grid_errs: Vec<f64> = per_path.iter().map(|v| v[i].0).collect();
            let uni_errs: Vec<f64> = per_path.iter().map(|v| v[i].1).collect();
            let ge = jackknife_lp_norm(&grid_errs, p);
            let ue = jackknife_lp_norm(&uni_errs, p);
            rows.push(ErrorRow {
                n: g.n(),
                delta: g.delta(),
                p,
                grid_error: ge.mean,
                uniform_error: ue.mean,
                std_err: ge.std_err,
                uniform_std_err: ue.std_err,
                n_paths,
            });
        }
    }
    Ok(ErrorTable { rows, n_ref, seed })
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    (slope, intercept, r_squared)
}

/// Log-log fit of the error rows at order `p`.
pub fn fit_rate(
    table: &ErrorTable,
    p: f64,
    variant: RateVariant,
) -> Result<RateFit, ExperimentError> {
    let rows: Vec<&ErrorRow> = table.rows.iter().filter(|r| r.p == p).collect();
    if rows.len() < 3 {
        return Err(ExperimentError::InsufficientRows { found: rows.len() });
    }
    let mut xs = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    for r in rows {
        let error = match variant {
            RateVariant::PlainDelta => r.grid_error,
            RateVariant::DeltaLogDelta => r.uniform_error,
        };
        if !(error > 0.0) || !(r.delta > 0.0 && r.delta < 1.0) {
            return Err(ExperimentError::UnfittableRow {
                delta: r.delta,
                error,
            });
        }
        xs.push(match variant {
            RateVariant::PlainDelta => r.delta.ln(),
            RateVariant::DeltaLogDelta => (r.delta * r.delta.ln().abs()).ln(),
        });
        ys.push(error.ln());
    }
    let (slope, intercept, r_squared) = least_squares(&xs, &ys);
    Ok(RateFit {
        p,
        variant,
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCheckpoint {
    pub t: f64,
    pub estimate: Estimate,
    pub oracle: f64,
    /// `(estimate - oracle) / std_err`.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanCheck {
    pub checkpoints: Vec<MeanCheckpoint>,
    pub method: MeanMethod,
}

fn grid_index(grid: &TimeGrid, t: f64) -> Result<usize, ExperimentError> {
    let u = (t - grid.t0()) / grid.delta();
    let k = u.round();
    if (u - k).abs() > 1e-9 * k.abs().max(1.0) || k < 0.0 || k > grid.k_max() as f64 {
        return Err(ExperimentError::CheckpointOffGrid { t });
    }
    Ok(k as usize)
}

/// Monte Carlo mean of `x_k` at the checkpoints against [`mean_delay_curve`].
///
/// The scheme's mean carries an `O(Delta)` bias, so the check is meaningful
/// at fine grids only.
pub fn mean_consistency_check(
    model: &ModelSpec,
    grid: &TimeGrid,
    n_paths: usize,
    checkpoints: &[f64],
    seed: u64,
) -> Result<MeanCheck, ExperimentError> {
    let indices: Vec<usize> = checkpoints
        .iter()
        .map(|&t| grid_index(grid, t))
        .collect::<Result<_, _>>()?;
    let curve = mean_delay_curve(model, grid, |t| model.initial.mean_at(t))?;
    let sampler = PathSampler::new(model, grid, seed)?;
    let values: Vec<Vec<f64>> = map_paths(n_paths, |path| {
        let s = sampler.sample(path)?;
        Ok::<_, SchemeError>(indices.iter().map(|&k| s.x.at(k as isize)).collect())
    })?;
    let checkpoints = indices
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let column: Vec<f64> = values.iter().map(|v| v[i]).collect();
            let estimate = Estimate::from_samples(&column);
            let oracle = curve.means[k];
            MeanCheckpoint {
                t: curve.times[k],
                estimate,
                oracle,
                z: (estimate.mean - oracle) / estimate.std_err,
            }
        })
        .collect();
    Ok(MeanCheck {
        checkpoints,
        method: curve.method,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComparisonCensus {
    /// Pairs `(path, k)` with `y_upper(t_k) < y_lower(t_k)`.
    pub violations: usize,
    pub pairs: usize,
}

fn comparable(
    upper: &ModelSpec,
    lower: &ModelSpec,
    grid: &TimeGrid,
) -> Result<(), ExperimentError> {
    let same = |name: &str, u: f64, l: f64| {
        if u == l {
            Ok(())
        } else {
            Err(ExperimentError::IncomparableModels(format!(
                "{name} differs ({u} vs {l})"
            )))
        }
    };
    same("a", upper.a, lower.a)?;
    same("sigma", upper.sigma, lower.sigma)?;
    same("tau", upper.tau, lower.tau)?;
    same("t0", upper.t0, lower.t0)?;
    same("horizon", upper.horizon, lower.horizon)?;
    if upper.initial != lower.initial {
        return Err(ExperimentError::IncomparableModels(
            "initial segments differ".into(),
        ));
    }
    if !(lower.b >= 0.0 && upper.b >= lower.b) {
        return Err(ExperimentError::IncomparableModels(format!(
            "need b_upper >= b_lower >= 0, got {} and {}",
            upper.b, lower.b
        )));
    }
    for k in 0..=grid.k_max() as isize {
        let t = grid.time(k);
        let (gu, gl) = (upper.gamma_at(t)?, lower.gamma_at(t)?);
        if gu < gl {
            return Err(ExperimentError::IncomparableModels(format!(
                "gamma_upper({t}) = {gu} < gamma_lower({t}) = {gl}"
            )));
        }
    }
    Ok(())
}

/// Counts grid points where the upper model's path falls below the lower
/// model's path when both share noise and initial segment.
pub fn comparison_census(
    upper: &ModelSpec,
    lower: &ModelSpec,
    n: usize,
    n_paths: usize,
    seed: u64,
) -> Result<ComparisonCensus, ExperimentError> {
    let grid = TimeGrid::new(upper.t0, upper.tau, upper.horizon, n)?;
    comparable(upper, lower, &grid)?;
    let su = PathSampler::new(upper, &grid, seed)?;
    let sl = PathSampler::new(lower, &grid, seed)?;
    let counts = map_paths(n_paths, |path| {
        let (u, l) = (su.sample(path)?, sl.sample(path)?);
        let v = (1..=grid.k_max() as isize)
            .filter(|&k| u.y.at(k) < l.y.at(k))
            .count();
        Ok::<_, SchemeError>(v)
    })?;
    Ok(ComparisonCensus {
        violations: counts.iter().sum(),
        pairs: n_paths * grid.k_max(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CensusScheme {
    Implicit,
    Baseline(BaselineKind),
}

impl CensusScheme {
    pub fn name(&self) -> &'static str {
        match self {
            CensusScheme::Implicit => "implicit",
            CensusScheme::Baseline(kind) => kind.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityCensus {
    pub scheme: CensusScheme,
    /// Fraction of paths with some `x_k <= 0`, `k = 1 ..= K`.
    pub fraction_nonpositive: f64,
    pub n_paths: usize,
}

pub fn positivity_census(
    scheme: CensusScheme,
    model: &ModelSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PositivityCensus, ExperimentError> {
    if n_paths == 0 {
        return Err(ExperimentError::InvalidArgument(
            "n_paths must be positive".into(),
        ));
    }
    let implicit = match scheme {
        CensusScheme::Implicit => Some(ImplicitScheme::new(model, grid)?),
        _ => None,
    };
    let hits = map_paths(n_paths, |path| {
        let noise = generate(seed, path, grid);
        let seg = sample_segment(&model.initial, grid, seed, path)?;
        let incs = noise.increments();
        let bad = match (&implicit, scheme) {
            (Some(s), _) => {
                let x = square_and_interpolate(&s.run(incs, &seg.values)?);
                x.forward_values()[1..].iter().any(|v| *v <= 0.0)
            }
            (None, CensusScheme::Baseline(kind)) => {
                let out = match kind {
                    BaselineKind::TruncatedEuler => {
                        simulate_truncated_euler(model, grid, incs, &seg)?
                    }
                    BaselineKind::SymmetrizedEuler => {
                        simulate_symmetrized_euler(model, grid, incs, &seg)?
                    }
                    BaselineKind::SmallTauProxy => {
                        simulate_small_tau_proxy(model, grid, incs, &seg)?
                    }
                };
                out.nonpositive > 0
            }
            (None, CensusScheme::Implicit) => unreachable!(),
        };
        Ok::<_, SchemeError>(bad as usize)
    })?;
    Ok(PositivityCensus {
        scheme,
        fraction_nonpositive: hits.iter().sum::<usize>() as f64 / n_paths as f64,
        n_paths,
    })
}

/// `max |x_i - x_j|` over `|i - j| <= window`, by monotone deques.
pub fn sliding_modulus(x: &[f64], window: usize) -> f64 {
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut best = 0.0f64;
    for (i, &v) in x.iter().enumerate() {
        while maxq.back().is_some_and(|&j| x[j] <= v) {
            maxq.pop_back();
        }
        maxq.push_back(i);
        while minq.back().is_some_and(|&j| x[j] >= v) {
            minq.pop_back();
        }
        minq.push_back(i);
        while maxq.front().is_some_and(|&j| j + window < i) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&j| j + window < i) {
            minq.pop_front();
        }
        best = best.max(x[maxq[0]] - x[minq[0]]);
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusRow {
    pub delta: f64,
    /// `E[w(delta)^p]^{1/p}` with its jackknife standard error.
    pub moment: Estimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulusTable {
    pub p: f64,
    pub rows: Vec<ModulusRow>,
    /// Slope, intercept and `r^2` of `log E[w]` against `log (delta |log delta|)^{1/2}`,
    /// over rows with `delta < 1`, when at least 3 exist.
    pub fit: Option<(f64, f64, f64)>,
}

/// Empirical modulus of continuity of the interpolated paths on `[t0, T]`.
/// `windows` lists each `delta` as a multiple of the grid step; for such
/// `delta` the supremum of the piecewise-linear path is attained at nodes.
pub fn modulus_scaling(
    model: &ModelSpec,
    grid: &TimeGrid,
    n_paths: usize,
    windows: &[usize],
    p: f64,
    seed: u64,
) -> Result<ModulusTable, ExperimentError> {
    if windows.iter().any(|&m| m == 0 || m > grid.k_max()) {
        return Err(ExperimentError::InvalidArgument(format!(
            "windows must lie in 1..={}",
            grid.k_max()
        )));
    }
    if !(p >= 1.0) {
        return Err(ExperimentError::InvalidArgument(format!(
            "p = {p} must be >= 1"
        )));
    }
    let sampler = PathSampler::new(model, grid, seed)?;
    let per_path: Vec<Vec<f64>> = map_paths(n_paths, |path| {
        let s = sampler.sample(path)?;
        let x = s.x.forward_values();
        Ok::<_, SchemeError>(windows.iter().map(|&m| sliding_modulus(x, m)).collect())
    })?;
    let rows: Vec<ModulusRow> = windows
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let column: Vec<f64> = per_path.iter().map(|v| v[i]).collect();
            ModulusRow {
                delta: m as f64 * grid.delta(),
                moment: jackknife_lp_norm(&column, p),
            }
        })
        .collect();
    let usable: Vec<&ModulusRow> = rows
        .iter()
        .filter(|r| r.delta < 1.0 && r.moment.mean > 0.0)
        .collect();
    let fit = (usable.len() >= 3).then(|| {
        let xs: Vec<f64> = usable
            .iter()
            .map(|r| 0.5 * (r.delta * r.delta.ln().abs()).ln())
            .collect();
        let ys: Vec<f64> = usable.iter().map(|r| r.moment.mean.ln()).collect();
        least_squares(&xs, &ys)
    });
    Ok(ModulusTable { p, rows, fit })
}

/// `E[exp(-int_{t0}^{T} X(u) du)]` with the integral taken over the interpolant.
pub fn survival_probability(
    model: &ModelSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Estimate, ExperimentError> {
    let sampler = PathSampler::new(model, grid, seed)?;
    Ok(sampler.estimate(n_paths, |s| path_survival(&s.x))?)
}

/// `exp(-int_{t0}^{T} X(u) du)` for one path.
pub fn path_survival(x: &PathX) -> f64 {
    (-x.integral()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GammaSpec, InitialSegmentSpec};
    use approx::assert_relative_eq;

    fn delay_model() -> ModelSpec {
        ModelSpec {
            b: 0.2,
            ..ModelSpec::classical(1.0, 1.0, 0.25, 1.0, 0.5, 0.0, 1.5)
        }
    }

    fn synthetic(errors: impl Fn(f64) -> f64) -> ErrorTable {
        let rows = [8usize, 16, 32, 64, 128]
            .iter()
            .map(|&n| {
                let delta = 0.5 / n as f64;
                ErrorRow {
                    n,
                    delta,
                    p: 1.0,
                    grid_error: errors(delta),
                    uniform_error: errors(delta),
                    std_err: 0.0,
                    uniform_std_err: 0.0,
                    n_paths: 1,
                }
            })
            .collect();
        ErrorTable {
            rows,
            n_ref: 1024,
            seed: 0,
        }
    }

    #[test]
    fn fit_on_exact_power_laws() {
        let f = fit_rate(&synthetic(|d| 3.0 * d.sqrt()), 1.0, RateVariant::PlainDelta).unwrap();
        assert_relative_eq!(f.slope, 0.5, epsilon = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 3f64.ln(), epsilon = 1e-12);
        let f = fit_rate(&synthetic(|d| 0.7 * d), 1.0, RateVariant::PlainDelta).unwrap();
        assert_relative_eq!(f.slope, 1.0, epsilon = 1e-12);
        let f = fit_rate(
            &synthetic(|d| 2.0 * (d * d.ln().abs()).sqrt()),
            1.0,
            RateVariant::DeltaLogDelta,
        )
        .unwrap();
        assert_relative_eq!(f.slope, 0.5, epsilon = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_rejects_bad_tables() {
        let mut t = synthetic(|d| d);
        t.rows.truncate(2);
        assert!(matches!(
            fit_rate(&t, 1.0, RateVariant::PlainDelta),
            Err(ExperimentError::InsufficientRows { found: 2 })
        ));
        let t = synthetic(|_| 0.0);
        assert!(matches!(
            fit_rate(&t, 1.0, RateVariant::PlainDelta),
            Err(ExperimentError::UnfittableRow { .. })
        ));
        assert!(matches!(
            fit_rate(&synthetic(|d| d), 2.0, RateVariant::PlainDelta),
            Err(ExperimentError::InsufficientRows { found: 0 })
        ));
    }

    #[test]
    fn self_comparison_is_zero() {
        let t = strong_error_study(&delay_model(), &[64], 64, 20, &[1.0], 1).unwrap();
        assert_eq!(t.rows[0].grid_error, 0.0);
        assert_eq!(t.rows[0].uniform_error, 0.0);
    }

    #[test]
    fn error_table_shape_and_trend() {
        let t = strong_error_study(&delay_model(), &[32, 8, 16], 256, 400, &[1.0, 2.0], 9).unwrap();
        assert_eq!(t.rows.len(), 6);
        for p in [1.0, 2.0] {
            let rows: Vec<&ErrorRow> = t.rows.iter().filter(|r| r.p == p).collect();
            assert_eq!(
                rows.iter().map(|r| r.n).collect::<Vec<_>>(),
                vec![8, 16, 32]
            );
            for w in rows.windows(2) {
                assert!(w[1].delta < w[0].delta);
                assert!(w[1].grid_error <= w[0].grid_error + w[0].std_err);
                assert!(w[1].uniform_error <= w[0].uniform_error + w[0].uniform_std_err);
            }
            for r in &rows {
                assert!(r.std_err > 0.0);
                assert!(r.grid_error <= r.uniform_error);
            }
        }
        let again =
            strong_error_study(&delay_model(), &[8, 16, 32], 256, 400, &[1.0, 2.0], 9).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn error_study_preconditions() {
        let m = delay_model();
        let p_max = m.validate().unwrap().p_max;
        assert!(matches!(
            strong_error_study(&m, &[8], 64, 10, &[p_max], 0),
            Err(ExperimentError::PRequestedTooLarge { .. })
        ));
        assert!(matches!(
            strong_error_study(&m, &[8, 24], 64, 10, &[1.0], 0),
            Err(ExperimentError::NotNested { n: 24, n_ref: 64 })
        ));
        let weak = ModelSpec { sigma: 2.0, ..m };
        assert!(matches!(
            strong_error_study(&weak, &[8], 64, 10, &[1.0], 0),
            Err(ExperimentError::StrongConditionViolated { .. })
        ));
    }

    #[test]
    fn jackknife_shrinks_with_paths() {
        let m = delay_model();
        let small = strong_error_study(&m, &[8], 64, 500, &[1.0], 5).unwrap();
        let large = strong_error_study(&m, &[8], 64, 2000, &[1.0], 5).unwrap();
        let ratio = small.rows[0].std_err / large.rows[0].std_err;
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn deterministic_run_tracks_the_skeleton_ode() {
        // With dW = 0 the scheme solves x' = a (gamma - sigma^2 / (4a) - x) + b x(t - tau).
        let m = ModelSpec {
            b: 0.5,
            ..ModelSpec::classical(1.0, 1.0, 0.5, 1.0, 0.5, 0.0, 1.5)
        };
        let skeleton = ModelSpec {
            gamma: GammaSpec::constant(1.0 - 0.25 * 0.25),
            ..m.clone()
        };
        let gap = |n: usize| {
            let grid = TimeGrid::new(0.0, 0.5, 1.5, n).unwrap();
            let scheme = ImplicitScheme::new(&m, &grid).unwrap();
            let y = scheme
                .run(&vec![0.0; grid.k_max()], &vec![1.0; n + 1])
                .unwrap();
            let ode = mean_delay_curve(&skeleton, &grid, |_| 1.0).unwrap();
            (0..=grid.k_max())
                .map(|k| (y.at(k as isize).powi(2) - ode.means[k]).abs())
                .fold(0.0, f64::max)
        };
        let (g1, g2, g3) = (gap(16), gap(32), gap(64));
        assert!(g1 < 0.05);
        for ratio in [g1 / g2, g2 / g3] {
            assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn mean_check_classical() {
        let m = ModelSpec::classical(1.0, 1.0, 0.5, 0.5, 1.0, 0.0, 1.0);
        let grid = TimeGrid::new(0.0, 1.0, 1.0, 64).unwrap();
        let c = mean_consistency_check(&m, &grid, 4000, &[0.25, 0.5, 1.0], 2).unwrap();
        assert_eq!(c.method, MeanMethod::ClosedForm);
        for cp in &c.checkpoints {
            assert!(cp.z.abs() <= 3.0, "{cp:?}");
        }
        assert!(matches!(
            mean_consistency_check(&m, &grid, 10, &[0.3], 2),
            Err(ExperimentError::CheckpointOffGrid { .. })
        ));
    }

    #[test]
    fn comparison_of_delay_and_classical() {
        let lower = ModelSpec::classical(1.0, 1.0, 0.5, 0.5, 0.5, 0.0, 1.5);
        let upper = ModelSpec {
            b: 0.5,
            gamma: GammaSpec::Sinusoid {
                level: 1.2,
                amplitude: 0.2,
                angular_frequency: 3.0,
            },
            ..lower.clone()
        };
        assert_eq!(
            comparison_census(&lower, &lower, 16, 50, 1)
                .unwrap()
                .violations,
            0
        );
        let c = comparison_census(&upper, &lower, 16, 300, 1).unwrap();
        assert_eq!(c.violations, 0);
        assert_eq!(c.pairs, 300 * 48);
        assert!(matches!(
            comparison_census(&lower, &upper, 16, 10, 1),
            Err(ExperimentError::IncomparableModels(_))
        ));
        let other_seg = ModelSpec {
            initial: InitialSegmentSpec::constant(0.6),
            ..upper.clone()
        };
        assert!(comparison_census(&other_seg, &lower, 16, 10, 1).is_err());
    }

    #[test]
    fn positivity_by_scheme() {
        let m = ModelSpec::classical(1.0, 0.3, 0.7, 0.05, 1.0, 0.0, 1.0);
        let grid = TimeGrid::new(0.0, 1.0, 1.0, 10).unwrap();
        let imp = positivity_census(CensusScheme::Implicit, &m, &grid, 2000, 4).unwrap();
        assert_eq!(imp.fraction_nonpositive, 0.0);
        let sym = positivity_census(
            CensusScheme::Baseline(BaselineKind::SymmetrizedEuler),
            &m,
            &grid,
            2000,
            4,
        )
        .unwrap();
        assert_eq!(sym.fraction_nonpositive, 0.0);
        let te = positivity_census(
            CensusScheme::Baseline(BaselineKind::TruncatedEuler),
            &m,
            &grid,
            2000,
            4,
        )
        .unwrap();
        assert!(te.fraction_nonpositive > 0.0);
        assert_eq!(te.scheme.name(), "truncated");
    }

    #[test]
    fn sliding_modulus_matches_brute_force() {
        let x: Vec<f64> = (0..200)
            .map(|i| ((i * 7919) % 101) as f64 * 0.01 + (i as f64 * 0.1).sin())
            .collect();
        for w in [1, 2, 5, 17, 199] {
            let mut brute = 0.0f64;
            for i in 0..x.len() {
                for j in i..x.len().min(i + w + 1) {
                    brute = brute.max((x[i] - x[j]).abs());
                }
            }
            assert_eq!(sliding_modulus(&x, w), brute);
        }
    }

    #[test]
    fn modulus_table_properties() {
        let m = delay_model();
        let grid = TimeGrid::new(0.0, 0.5, 1.5, 64).unwrap();
        let t = modulus_scaling(&m, &grid, 200, &[1, 2, 4, 8, 16, grid.k_max()], 1.0, 3).unwrap();
        for w in t.rows.windows(2) {
            assert!(w[1].moment.mean >= w[0].moment.mean);
        }
        // Whole interval: the modulus is the range of each path.
        let sampler = PathSampler::new(&m, &grid, 3).unwrap();
        let ranges: Vec<f64> = (0..200)
            .map(|p| {
                let s = sampler.sample(p).unwrap();
                let v = s.x.forward_values();
                v.iter().cloned().fold(f64::MIN, f64::max)
                    - v.iter().cloned().fold(f64::MAX, f64::min)
            })
            .collect();
        assert_relative_eq!(
            t.rows[5].moment.mean,
            Estimate::from_samples(&ranges).mean,
            max_relative = 1e-12
        );
        assert!(t.fit.is_some());
    }

    #[test]
    fn survival_of_deterministic_and_ordered_models() {
        // With dW = 0 and gamma = c + sigma^2 / (4a) the scheme sits at x = c.
        let c = 0.8;
        let frozen = ModelSpec::classical(1.0, c + 0.25 * 0.25, 0.5, c, 0.5, 0.0, 1.5);
        let grid = TimeGrid::new(0.0, 0.5, 1.5, 32).unwrap();
        let y = ImplicitScheme::new(&frozen, &grid)
            .unwrap()
            .run(&vec![0.0; grid.k_max()], &vec![c; 33])
            .unwrap();
        let x = square_and_interpolate(&y);
        assert!((path_survival(&x) - (-c * 1.5f64).exp()).abs() < 1e-10);

        let flat = ModelSpec::classical(1.0, 0.8, 0.5, 0.8, 0.5, 0.0, 1.5);
        let high = ModelSpec {
            gamma: GammaSpec::constant(1.6),
            ..flat.clone()
        };
        let lo = survival_probability(&flat, &grid, 4000, 8).unwrap();
        let hi = survival_probability(&high, &grid, 4000, 8).unwrap();
        assert!(lo.mean - hi.mean > 3.0 * lo.std_err.hypot(hi.std_err));
    }
}
