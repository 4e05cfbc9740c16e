//! Drift-implicit Euler scheme for `Y = sqrt(X)` and the comparison schemes.
//!
//! On the grid `t_k = t0 + k Delta`, `Delta = tau / N`, the scheme reads
//!
//! ```text
//! y_{k+1} = y_k + (a_under(t_{k+1}) / y_{k+1} - a_bar y_{k+1}) Delta
//!               + b_bar y_{k+1-N}^2 / y_{k+1} Delta + sigma_bar dW_k
//! ```
//!
//! Multiplying through by `y_{k+1}` gives the quadratic
//! `(1 + a_bar Delta) y^2 - s y - c Delta = 0` with `s = y_k + sigma_bar dW_k`
//! and `c = a_under(t_{k+1}) + b_bar y_{k+1-N}^2`, whose positive root is the
//! update. `X` is approximated by `x_k = y_k^2` and its piecewise-linear
//! interpolant.

use thiserror::Error;

use crate::model::{ModelError, ModelSpec, TimeGrid};
use crate::noise::{CoupledNoise, NoiseError, SegmentDraw};

/// Residual tolerance of the implicit relation, relative to `1 + y_{k+1}`.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemeError {
    #[error("non-positive forcing a_under + b_bar z^2 = {forcing} at step {k}")]
    NonPositiveForcing { k: isize, forcing: f64 },
    #[error("the symmetrized scheme is defined for b = 0 only, got b = {b}")]
    DelayNotSupported { b: f64 },
    #[error("the small-delay proxy needs b < a, got a = {a}, b = {b}")]
    ProxyRequiresBLessThanA { a: f64, b: f64 },
    #[error("expected {expected} increments for the grid, got {got}")]
    IncrementCount { expected: usize, got: usize },
    #[error("time {t} is not a point of the noise grid")]
    UnresolvableTime { t: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Constant coefficients of the implicit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub a_bar: f64,
    pub b_bar: f64,
    pub sigma_bar: f64,
}

impl StepCoefficients {
    pub fn of(model: &ModelSpec) -> Self {
        StepCoefficients {
            a_bar: model.a_bar(),
            b_bar: model.b_bar(),
            sigma_bar: model.sigma_bar(),
        }
    }
}

/// Positive root of `d y^2 - s y - c h = 0` for `d > 0`, `c h >= 0`.
///
/// For `s < 0` the conjugate form `2 c h / (sqrt(s^2 + 4 d c h) - s)` avoids
/// cancellation.
#[inline]
pub fn positive_root(s: f64, c: f64, d: f64, h: f64) -> f64 {
    let disc = (s * s + 4.0 * d * c * h).sqrt();
    if s >= 0.0 {
        (s + disc) / (2.0 * d)
    } else {
        2.0 * c * h / (disc - s)
    }
}

/// One step of the implicit scheme over a step of length `delta`.
pub fn implicit_step(
    y_prev: f64,
    z_delay: f64,
    a_under: f64,
    coeffs: &StepCoefficients,
    delta: f64,
    dw: f64,
) -> Result<f64, SchemeError> {
    let forcing = a_under + coeffs.b_bar * z_delay * z_delay;
    if !(forcing > 0.0) {
        return Err(SchemeError::NonPositiveForcing { k: 0, forcing });
    }
    Ok(positive_root(
        y_prev + coeffs.sigma_bar * dw,
        forcing,
        1.0 + coeffs.a_bar * delta,
        delta,
    ))
}

/// Residual of the implicit relation at one step.
#[inline]
pub fn step_residual(
    y_prev: f64,
    y_next: f64,
    z_delay: f64,
    a_under: f64,
    coeffs: &StepCoefficients,
    delta: f64,
    dw: f64,
) -> f64 {
    let drift =
        a_under / y_next - coeffs.a_bar * y_next + coeffs.b_bar * z_delay * z_delay / y_next;
    (y_next - y_prev - drift * delta - coeffs.sigma_bar * dw).abs()
}

/// Deterministic `O(sqrt(Delta))` distortion of the initial segment:
/// `x_k = X0(t_k) (1 + relative_scale sqrt(Delta))` for `k <= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPerturbation {
    pub relative_scale: f64,
}

/// Implicit scheme with its time-dependent coefficients precomputed on a grid.
#[derive(Debug, Clone)]
pub struct ImplicitScheme {
    grid: TimeGrid,
    coeffs: StepCoefficients,
    /// `a_under(t_{k+1})` for `k = 0 .. K`.
    a_under: Vec<f64>,
}

impl ImplicitScheme {
    pub fn new(model: &ModelSpec, grid: &TimeGrid) -> Result<Self, SchemeError> {
        model.check_hard_invariants()?;
        Ok(Self::with_coefficients(
            model,
            grid,
            StepCoefficients::of(model),
        ))
    }

    /// Scheme for the `tau = 0` substitute
    /// `dV = (a - b)[(a / (a - b)) gamma(t) - V] dt + sigma sqrt(V) dW`.
    pub fn small_tau_proxy(model: &ModelSpec, grid: &TimeGrid) -> Result<Self, SchemeError> {
        model.check_hard_invariants()?;
        if !(model.b < model.a) {
            return Err(SchemeError::ProxyRequiresBLessThanA {
                a: model.a,
                b: model.b,
            });
        }
        let coeffs = StepCoefficients {
            a_bar: 0.5 * (model.a - model.b),
            b_bar: 0.0,
            sigma_bar: model.sigma_bar(),
        };
        Ok(Self::with_coefficients(model, grid, coeffs))
    }

    fn with_coefficients(model: &ModelSpec, grid: &TimeGrid, coeffs: StepCoefficients) -> Self {
        let a_under = (1..=grid.k_max() as isize)
            .map(|k| model.a_under_at(grid.time(k)))
            .collect();
        ImplicitScheme {
            grid: *grid,
            coeffs,
            a_under,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn coefficients(&self) -> &StepCoefficients {
        &self.coeffs
    }

    /// `a_under(t_k)` for `k >= 1`.
    pub fn a_under(&self, k: isize) -> f64 {
        self.a_under[(k - 1) as usize]
    }

    /// Runs the recursion from `x_k` on `k = -N ..= 0`.
    pub fn run(&self, increments: &[f64], segment_x: &[f64]) -> Result<PathY, SchemeError> {
        let grid = &self.grid;
        if increments.len() != grid.k_max() {
            return Err(SchemeError::IncrementCount {
                expected: grid.k_max(),
                got: increments.len(),
            });
        }
        let n = grid.n();
        debug_assert_eq!(segment_x.len(), n + 1);
        let delta = grid.delta();
        let d = 1.0 + self.coeffs.a_bar * delta;
        let mut y = Vec::with_capacity(grid.len());
        y.extend(segment_x.iter().map(|x| x.sqrt()));
        for (k, (&dw, &a_under)) in increments.iter().zip(&self.a_under).enumerate() {
            // Storage slot of y_k is k + N, so y_{k+1-N} sits at slot k + 1.
            let z = y[k + 1];
            let forcing = a_under + self.coeffs.b_bar * z * z;
            if !(forcing > 0.0) {
                return Err(SchemeError::NonPositiveForcing {
                    k: k as isize,
                    forcing,
                });
            }
            let s = y[k + n] + self.coeffs.sigma_bar * dw;
            y.push(positive_root(s, forcing, d, delta));
        }
        Ok(PathY { y, grid: *grid })
    }
}

/// Scheme output `y_k`, `k = -N ..= K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathY {
    y: Vec<f64>,
    grid: TimeGrid,
}

impl PathY {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn at(&self, k: isize) -> f64 {
        self.y[self.grid.slot(k)]
    }

    /// Largest step residual divided by `1 + y_{k+1}`.
    pub fn max_scaled_residual(&self, scheme: &ImplicitScheme, increments: &[f64]) -> f64 {
        let delta = self.grid.delta();
        let n = self.grid.n() as isize;
        (0..self.grid.k_max() as isize)
            .map(|k| {
                let next = self.at(k + 1);
                step_residual(
                    self.at(k),
                    next,
                    self.at(k + 1 - n),
                    scheme.a_under(k + 1),
                    scheme.coefficients(),
                    delta,
                    increments[k as usize],
                ) / (1.0 + next)
            })
            .fold(0.0, f64::max)
    }
}

/// `x_k` on `k = -N ..= 0` for the scheme's start, optionally perturbed.
pub fn segment_start(
    grid: &TimeGrid,
    segment: &SegmentDraw,
    perturbation: Option<SegmentPerturbation>,
) -> Vec<f64> {
    match perturbation {
        None => segment.values.clone(),
        Some(p) => {
            let factor = 1.0 + p.relative_scale * grid.delta().sqrt();
            segment.values.iter().map(|x| x * factor).collect()
        }
    }
}

/// Simulates `y_k` on `grid` driven by `increments` (already on `grid`).
pub fn simulate_y(
    model: &ModelSpec,
    grid: &TimeGrid,
    increments: &[f64],
    segment: &SegmentDraw,
    perturbation: Option<SegmentPerturbation>,
) -> Result<PathY, SchemeError> {
    let start = segment_start(grid, segment, perturbation);
    if start.iter().any(|x| !(*x > 0.0)) {
        return Err(SchemeError::Noise(NoiseError::NonPositiveSample {
            k: 0,
            value: start.iter().cloned().fold(f64::INFINITY, f64::min),
        }));
    }
    ImplicitScheme::new(model, grid)?.run(increments, &start)
}

/// Solution of the implicit relation at a time `t` strictly inside a cell,
/// using the Brownian value available on the noise grid.
///
/// At `t = t_{k+1}` this reproduces `y_{k+1}` bit for bit. The delayed term
/// `Y(t - tau)` is itself a diffusive value one window earlier, or the square
/// root of the initial segment for `t - tau <= t0`.
pub fn diffusive_value(
    path: &PathY,
    model: &ModelSpec,
    segment: &SegmentDraw,
    noise: &CoupledNoise,
    t: f64,
) -> Result<f64, SchemeError> {
    let fine = noise.grid();
    let coarse = path.grid();
    let r = fine.refinement_of(coarse).ok_or(NoiseError::NotNested {
        r: fine.n() / coarse.n().max(1),
        n_fine: fine.n(),
    })?;
    let j_real = (t - fine.t0()) / fine.delta();
    let j = j_real.round();
    if (j_real - j).abs() > 1e-9 * j.abs().max(1.0) || j < 1.0 || j > fine.k_max() as f64 {
        return Err(SchemeError::UnresolvableTime { t });
    }
    let coeffs = StepCoefficients::of(model);
    diffusive_at(path, model, segment, noise, &coeffs, r, j as isize)
}

fn diffusive_at(
    path: &PathY,
    model: &ModelSpec,
    segment: &SegmentDraw,
    noise: &CoupledNoise,
    coeffs: &StepCoefficients,
    r: usize,
    j: isize,
) -> Result<f64, SchemeError> {
    let fine = noise.grid();
    let coarse = path.grid();
    let r_i = r as isize;
    if j.rem_euclid(r_i) == 0 && j <= 0 {
        return Ok(path.at(j / r_i));
    }
    if j <= 0 {
        return Ok(segment.profile.value_at(fine.time(j)).sqrt());
    }
    let k = (j - 1).div_euclid(r_i);
    let offset = j - k * r_i;
    let at_node = offset == r_i;
    let (t, h) = if at_node {
        (coarse.time(k + 1), coarse.delta())
    } else {
        (fine.time(j), coarse.delta() * offset as f64 / r as f64)
    };
    let dw = noise.brownian_difference((k * r_i) as usize, j as usize);
    let z = diffusive_at(
        path,
        model,
        segment,
        noise,
        coeffs,
        r,
        j - fine.n() as isize,
    )?;
    implicit_step(path.at(k), z, model.a_under_at(t), coeffs, h, dw).map_err(|e| match e {
        SchemeError::NonPositiveForcing { forcing, .. } => {
            SchemeError::NonPositiveForcing { k, forcing }
        }
        other => other,
    })
}

/// `x_k = y_k^2` with its piecewise-linear interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct PathX {
    x: Vec<f64>,
    grid: TimeGrid,
}

impl PathX {
    pub fn from_values(x: Vec<f64>, grid: TimeGrid) -> Self {
        assert_eq!(x.len(), grid.len());
        PathX { x, grid }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    /// Values on `k = 0 ..= K`.
    pub fn forward_values(&self) -> &[f64] {
        &self.x[self.grid.n()..]
    }

    pub fn at(&self, k: isize) -> f64 {
        self.x[self.grid.slot(k)]
    }

    /// Interpolant at `t_k + (num / den) Delta`, `0 <= num <= den`.
    #[inline]
    pub fn at_fraction(&self, k: isize, num: usize, den: usize) -> f64 {
        if num == 0 {
            return self.at(k);
        }
        if num == den {
            return self.at(k + 1);
        }
        let (lo, hi) = (self.at(k), self.at(k + 1));
        lo + (num as f64 / den as f64) * (hi - lo)
    }

    /// `X_hat(t)` for `t` in `[t0 - tau, T]`.
    pub fn eval(&self, t: f64) -> f64 {
        let g = &self.grid;
        let u = ((t - g.t0()) / g.delta()).clamp(-(g.n() as f64), g.k_max() as f64);
        let mut k = u.floor() as isize;
        if k == g.k_max() as isize {
            k -= 1;
        }
        let (lo, hi) = (self.at(k), self.at(k + 1));
        lo + (t - g.time(k)) * (hi - lo) / g.delta()
    }

    /// Trapezoidal integral of the interpolant over `[t0, T]`, which is exact for it.
    pub fn integral(&self) -> f64 {
        let v = self.forward_values();
        let inner: f64 = v[1..v.len() - 1].iter().sum();
        self.grid.delta() * (0.5 * (v[0] + v[v.len() - 1]) + inner)
    }
}

pub fn square_and_interpolate(path: &PathY) -> PathX {
    PathX {
        x: path.values().iter().map(|y| y * y).collect(),
        grid: *path.grid(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    TruncatedEuler,
    SymmetrizedEuler,
    SmallTauProxy,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::TruncatedEuler => "truncated",
            BaselineKind::SymmetrizedEuler => "symmetrized",
            BaselineKind::SmallTauProxy => "small_tau_proxy",
        }
    }
}

/// Output of a comparison scheme on `k = -N ..= K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePathX {
    pub path: PathX,
    pub kind: BaselineKind,
    /// Number of `k` in `1 ..= K` with `x_k <= 0`.
    pub nonpositive: usize,
}

impl BaselinePathX {
    fn new(x: Vec<f64>, grid: TimeGrid, kind: BaselineKind) -> Self {
        let nonpositive = x[grid.n() + 1..].iter().filter(|v| **v <= 0.0).count();
        BaselinePathX {
            path: PathX::from_values(x, grid),
            kind,
            nonpositive,
        }
    }
}

fn check_increments(grid: &TimeGrid, increments: &[f64]) -> Result<(), SchemeError> {
    if increments.len() != grid.k_max() {
        return Err(SchemeError::IncrementCount {
            expected: grid.k_max(),
            got: increments.len(),
        });
    }
    Ok(())
}

/// Explicit Euler on `X` with the square root taken of the positive part;
/// drift and `gamma` are evaluated at the left endpoint.
pub fn simulate_truncated_euler(
    model: &ModelSpec,
    grid: &TimeGrid,
    increments: &[f64],
    segment: &SegmentDraw,
) -> Result<BaselinePathX, SchemeError> {
    model.check_hard_invariants()?;
    check_increments(grid, increments)?;
    let n = grid.n();
    let delta = grid.delta();
    let mut x = segment.values.clone();
    for (k, &dw) in increments.iter().enumerate() {
        let xk = x[k + n];
        let gamma = model.gamma.value_after(grid.time(k as isize) - model.t0);
        let drift = model.a * (gamma - xk) + model.b * x[k];
        x.push(xk + drift * delta + model.sigma * xk.max(0.0).sqrt() * dw);
    }
    Ok(BaselinePathX::new(x, *grid, BaselineKind::TruncatedEuler))
}

/// Reflected Euler scheme `x_{k+1} = |x_k + a(gamma(t_k) - x_k) Delta + sigma sqrt(x_k) dW_k|`.
pub fn simulate_symmetrized_euler(
    model: &ModelSpec,
    grid: &TimeGrid,
    increments: &[f64],
    segment: &SegmentDraw,
) -> Result<BaselinePathX, SchemeError> {
    model.check_hard_invariants()?;
    if model.b != 0.0 {
        return Err(SchemeError::DelayNotSupported { b: model.b });
    }
    check_increments(grid, increments)?;
    let n = grid.n();
    let delta = grid.delta();
    let mut x = segment.values.clone();
    for (k, &dw) in increments.iter().enumerate() {
        let xk = x[k + n];
        let gamma = model.gamma.value_after(grid.time(k as isize) - model.t0);
        x.push((xk + model.a * (gamma - xk) * delta + model.sigma * xk.sqrt() * dw).abs());
    }
    Ok(BaselinePathX::new(x, *grid, BaselineKind::SymmetrizedEuler))
}

/// Implicit scheme for the `tau = 0` substitute, started from `X0(t0)`.
/// Slots `k < 0` repeat the initial segment and play no role in the recursion.
pub fn simulate_small_tau_proxy(
    model: &ModelSpec,
    grid: &TimeGrid,
    increments: &[f64],
    segment: &SegmentDraw,
) -> Result<BaselinePathX, SchemeError> {
    let scheme = ImplicitScheme::small_tau_proxy(model, grid)?;
    let y = scheme.run(increments, &segment.values)?;
    let x = square_and_interpolate(&y);
    Ok(BaselinePathX::new(x.x, *grid, BaselineKind::SmallTauProxy))
}

/// Classical drift-implicit square-root scheme for
/// `dX = (alpha - kappa X) dt + sigma sqrt(X) dW`, written in its own
/// parameterisation:
///
/// ```text
/// y_{k+1} = [y_k + sigma/2 dW + sqrt((y_k + sigma/2 dW)^2 + 2 (1 + kappa Delta / 2)(alpha - sigma^2/4) Delta)]
///           / (2 (1 + kappa Delta / 2))
/// ```
///
/// Returns `y_k` for `k = 0 ..= K`.
pub fn classical_drift_implicit(
    alpha: f64,
    kappa: f64,
    sigma: f64,
    x0: f64,
    delta: f64,
    increments: &[f64],
) -> Vec<f64> {
    let half_kappa = 1.0 + 0.5 * kappa * delta;
    let shift = 2.0 * half_kappa * (alpha - 0.25 * sigma * sigma) * delta;
    let mut y = Vec::with_capacity(increments.len() + 1);
    let mut current = x0.sqrt();
    y.push(current);
    for dw in increments {
        let s = current + 0.5 * sigma * dw;
        let root = (s * s + shift).sqrt();
        current = if s >= 0.0 {
            (s + root) / (2.0 * half_kappa)
        } else {
            // Same root, rationalised.
            shift / (2.0 * half_kappa * (root - s))
        };
        y.push(current);
    }
    y
}
