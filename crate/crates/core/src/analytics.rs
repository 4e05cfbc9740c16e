//! Closed-form results for the classical CIR process
//! `dX = a (gamma - X) dt + sigma sqrt(X) dW` and the mean of the delay model.
//!
//! With elapsed time `s = t - t0`, `g = 2 a gamma / sigma^2` and
//!
//! ```text
//! L(s)    = sigma^2 (1 - e^{-a s}) / (4 a)
//! zeta(s) = x0 e^{-a s} / L(s)
//! ```
//!
//! the Laplace transform is `E[e^{-uX}] = (2uL + 1)^{-g} exp(-u L zeta / (2uL + 1))`
//! and the negative moments are
//!
//! ```text
//! E[X^{-p}] = e^{a p s} / (Gamma(p) x0^p) int_0^{zeta/2} y^{p-1} (1 - 2y/zeta)^{g-p-1} e^{-y} dy
//! ```
//!
//! which is finite exactly when `p < g`.

use statrs::function::gamma::gamma as gamma_fn;
use thiserror::Error;

use crate::model::{ModelError, ModelSpec, TimeGrid};
use crate::montecarlo::{Estimate, PathSampler};
use crate::quadrature::{integrate, QuadratureError};
use crate::scheme::SchemeError;

/// Relative accuracy targeted by [`neg_moment`].
pub const NEG_MOMENT_REL_TOL: f64 = 1e-8;
/// Lattice intervals per grid step in [`mean_delay_curve`].
pub const MEAN_SUBSTEPS: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("CIR parameter `{name}` must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("elapsed time must be positive, got {elapsed}")]
    NonPositiveElapsed { elapsed: f64 },
    #[error("argument `{name}` = {value} is out of range")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("2 a gamma / sigma^2 = {ratio} must exceed 1")]
    FellerRatioTooSmall { ratio: f64 },
    #[error("moment order p = {p} outside the admissible range for g = {g}")]
    OrderOutOfRange { g: f64, p: f64 },
    #[error("Gamma(p) is only evaluated on (0, 50], got p = {p}")]
    GammaArgument { p: f64 },
    #[error("quadrature did not reach {NEG_MOMENT_REL_TOL:e} relative accuracy: {0}")]
    QuadratureNotConverged(QuadratureError),
    #[error("strong Feller condition sigma^2 < 2 a gamma fails (ratio {ratio})")]
    StrongFellerViolated { ratio: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

/// Classical CIR process with a deterministic start `x0` at `t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirParams {
    pub a: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub x0: f64,
    pub t0: f64,
}

impl CirParams {
    pub fn new(a: f64, gamma: f64, sigma: f64, x0: f64, t0: f64) -> Result<Self, AnalyticsError> {
        for (name, value) in [("a", a), ("gamma", gamma), ("sigma", sigma), ("x0", x0)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(AnalyticsError::NonPositiveParameter { name, value });
            }
        }
        Ok(CirParams {
            a,
            gamma,
            sigma,
            x0,
            t0,
        })
    }

    /// `g = 2 a gamma / sigma^2`.
    pub fn feller_ratio(&self) -> f64 {
        2.0 * self.a * self.gamma / (self.sigma * self.sigma)
    }

    fn elapsed(&self, t: f64) -> Result<f64, AnalyticsError> {
        let elapsed = t - self.t0;
        if !(elapsed > 0.0) {
            return Err(AnalyticsError::NonPositiveElapsed { elapsed });
        }
        Ok(elapsed)
    }

    /// `L(s) = sigma^2 (1 - e^{-a s}) / (4 a)`.
    pub fn scale(&self, elapsed: f64) -> f64 {
        self.sigma * self.sigma * (-(-self.a * elapsed).exp_m1()) / (4.0 * self.a)
    }

    /// `zeta(s) = x0 e^{-a s} / L(s)`.
    pub fn zeta(&self, elapsed: f64) -> f64 {
        self.x0 * (-self.a * elapsed).exp() / self.scale(elapsed)
    }

    /// `E[X(t)] = x0 e^{-a s} + gamma (1 - e^{-a s})`.
    pub fn mean(&self, t: f64) -> f64 {
        let decay = (-self.a * (t - self.t0)).exp();
        self.x0 * decay + self.gamma * (1.0 - decay)
    }

    /// The same process as a [`ModelSpec`] on `[t0, horizon]`, with one delay
    /// window spanning the horizon.
    pub fn as_model(&self, horizon: f64) -> ModelSpec {
        ModelSpec::classical(
            self.a,
            self.gamma,
            self.sigma,
            self.x0,
            horizon - self.t0,
            self.t0,
            horizon,
        )
    }
}

/// `E[exp(-u X(t))]`.
pub fn laplace_transform(params: &CirParams, u: f64, t: f64) -> Result<f64, AnalyticsError> {
    if !(u >= 0.0) {
        return Err(AnalyticsError::OutOfRange {
            name: "u",
            value: u,
        });
    }
    let s = params.elapsed(t)?;
    let l = params.scale(s);
    let denom = 2.0 * u * l + 1.0;
    // u L zeta = u x0 e^{-a s}; avoids 0 * inf when L underflows.
    let shift = u * params.x0 * (-params.a * s).exp();
    Ok(denom.powf(-params.feller_ratio()) * (-shift / denom).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentValue {
    Finite(f64),
    Infinite,
}

impl MomentValue {
    pub fn finite(&self) -> Option<f64> {
        match self {
            MomentValue::Finite(v) => Some(*v),
            MomentValue::Infinite => None,
        }
    }
}

/// `E[X(t)^{-p}]` with the explicit upper bound `L_p e^{a p s} / x0^p` when one applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegMomentResult {
    pub value: MomentValue,
    pub p: f64,
    pub bound: Option<f64>,
}

fn gamma_checked(p: f64) -> Result<f64, AnalyticsError> {
    if !(p > 0.0 && p <= 50.0) {
        return Err(AnalyticsError::GammaArgument { p });
    }
    Ok(gamma_fn(p))
}

/// Negative moment of order `p` at time `t`.
pub fn neg_moment(params: &CirParams, p: f64, t: f64) -> Result<NegMomentResult, AnalyticsError> {
    let g = params.feller_ratio();
    if !(g > 1.0) {
        return Err(AnalyticsError::FellerRatioTooSmall { ratio: g });
    }
    if !(p > 0.0) {
        return Err(AnalyticsError::OutOfRange {
            name: "p",
            value: p,
        });
    }
    let s = params.elapsed(t)?;
    if p >= g {
        return Ok(NegMomentResult {
            value: MomentValue::Infinite,
            p,
            bound: None,
        });
    }
    let growth = (params.a * p * s).exp() / params.x0.powf(p);
    let integral = neg_moment_integral(p, g - p - 1.0, params.zeta(s))?;
    let value = growth * integral / gamma_checked(p)?;
    let bound = lp_constant(g, p, p < 1.0).ok().map(|l| l * growth);
    Ok(NegMomentResult {
        value: MomentValue::Finite(value),
        p,
        bound,
    })
}

/// `int_0^{zeta/2} y^{p-1} (1 - 2y/zeta)^{e} e^{-y} dy` for `p > 0`, `e > -1`.
///
/// The range is split at `zeta/4`. A singular power at either end is removed
/// by the substitution `w = y^p` on the left and `v = (zeta/2 - y)^{e+1}` on
/// the right. The left half is further cut at powers of two so the adaptive
/// rule sees the `e^{-y}` scale even when `zeta` is huge.
fn neg_moment_integral(p: f64, e: f64, zeta: f64) -> Result<f64, AnalyticsError> {
    let half = 0.5 * zeta;
    let mid = 0.5 * half;
    let rel = 0.1 * NEG_MOMENT_REL_TOL;
    let run = |f: &dyn Fn(f64) -> f64, pts: &[f64]| {
        integrate(f, pts, rel, 0.0, 20_000).map_err(AnalyticsError::QuadratureNotConverged)
    };

    // Beyond y = 800 the factor e^{-y} underflows relative to anything kept.
    let left_end = mid.min(800.0);
    let mut cuts = vec![0.0];
    let mut c = 1.0;
    while c < left_end {
        cuts.push(c);
        c *= 2.0;
    }
    cuts.push(left_end);
    let outer = |y: f64| (1.0 - y / half).powf(e) * (-y).exp();
    let left = if p < 1.0 {
        let pts: Vec<f64> = cuts.iter().map(|y| y.powf(p)).collect();
        run(&|w: f64| outer(w.powf(1.0 / p)), &pts)?.value / p
    } else {
        run(&|y: f64| y.powf(p - 1.0) * outer(y), &cuts)?.value
    };

    let right = if mid > 800.0 {
        0.0
    } else if e < 0.0 {
        let inner = |y: f64| y.powf(p - 1.0) * (-y).exp();
        let k = e + 1.0;
        let upper = mid.powf(k);
        half.powf(-e) / k * run(&|v: f64| inner(half - v.powf(1.0 / k)), &[0.0, upper])?.value
    } else {
        run(&|y: f64| y.powf(p - 1.0) * outer(y), &[mid, half])?.value
    };
    Ok(left + right)
}

/// Constant `L_p` of the bound `E[X^{-p}(t)] <= L_p e^{a p s} E[X0^{-p}]`.
///
/// `L_p = 1` when `g >= 2` and `p <= g - 1`; otherwise
/// `L_p = 2^{p+1-g} (1 + 2^{p-1} p^p e^{-p} / (Gamma(p) (g - p)))`.
/// With `allow_sub_one`, orders `0 < p < 1` are accepted when `p <= g - 1`,
/// where `L_p = 1` still holds.
pub fn lp_constant(g: f64, p: f64, allow_sub_one: bool) -> Result<f64, AnalyticsError> {
    if !(g > 1.0) {
        return Err(AnalyticsError::FellerRatioTooSmall { ratio: g });
    }
    if !(p < g) || !(p > 0.0) {
        return Err(AnalyticsError::OrderOutOfRange { g, p });
    }
    if p < 1.0 {
        return if allow_sub_one && p <= g - 1.0 {
            Ok(1.0)
        } else {
            Err(AnalyticsError::OrderOutOfRange { g, p })
        };
    }
    if g >= 2.0 && p <= g - 1.0 {
        return Ok(1.0);
    }
    let tail = 2f64.powf(p - 1.0) * p.powf(p) * (-p).exp() / (gamma_checked(p)? * (g - p));
    Ok(2f64.powf(p + 1.0 - g) * (1.0 + tail))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanMethod {
    ClosedForm,
    RecursionQuadrature,
}

/// `E[X(t_k)]` on the grid points `k = 0 ..= K`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanCurve {
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub method: MeanMethod,
}

impl MeanCurve {
    pub fn at_index(&self, k: usize) -> f64 {
        self.means[k]
    }
}

/// Mean of the delay process on the grid.
///
/// Uses the closed form when `b = 0` with constant `gamma`, otherwise
/// [`mean_recursion`].
pub fn mean_delay_curve<F>(
    model: &ModelSpec,
    grid: &TimeGrid,
    segment_mean: F,
) -> Result<MeanCurve, AnalyticsError>
where
    F: Fn(f64) -> f64,
{
    model.check_hard_invariants()?;
    if let (0.0, crate::model::GammaSpec::Constant { level }) = (model.b, model.gamma) {
        let m0 = segment_mean(model.t0);
        let times: Vec<f64> = (0..=grid.k_max() as isize).map(|k| grid.time(k)).collect();
        let means = times
            .iter()
            .map(|t| level + (m0 - level) * (-model.a * (t - model.t0)).exp())
            .collect();
        return Ok(MeanCurve {
            times,
            means,
            method: MeanMethod::ClosedForm,
        });
    }
    mean_recursion(model, grid, segment_mean, MEAN_SUBSTEPS)
}

/// Advances `m(t) = E[X(t)]` with the exact one-step relation
///
/// ```text
/// m(u + h) = e^{-a h} m(u) + int_u^{u+h} e^{-a (u + h - v)} (a gamma(v) + b m(v - tau)) dv
/// ```
///
/// on a lattice of `substeps` intervals per grid step, each integral by
/// Simpson's rule. Delayed values at lattice midpoints come from the initial
/// segment mean when they fall before `t0`, otherwise from four-point
/// interpolation of already computed lattice values.
pub fn mean_recursion<F>(
    model: &ModelSpec,
    grid: &TimeGrid,
    segment_mean: F,
    substeps: usize,
) -> Result<MeanCurve, AnalyticsError>
where
    F: Fn(f64) -> f64,
{
    model.check_hard_invariants()?;
    if substeps < 2 {
        return Err(AnalyticsError::OutOfRange {
            name: "substeps",
            value: substeps as f64,
        });
    }
    let rho = grid.delta() / substeps as f64;
    let lag = grid.n() * substeps;
    let total = grid.k_max() * substeps;
    let lattice_time = |i: f64| model.t0 + i * rho;
    let (a, b) = (model.a, model.b);
    let decay_full = (-a * rho).exp();
    let decay_half = (-0.5 * a * rho).exp();

    let mut m = Vec::with_capacity(total + 1);
    m.push(segment_mean(model.t0));
    // m(t_0 + j rho - tau) for integer j.
    let delayed_node = |m: &[f64], j: isize| -> f64 {
        if j <= 0 {
            segment_mean(lattice_time(j as f64))
        } else {
            m[j as usize]
        }
    };
    for i in 0..total {
        let j = i as isize - lag as isize;
        let delayed_left = delayed_node(&m, j);
        let delayed_right = delayed_node(&m, j + 1);
        let delayed_mid = if j < 0 {
            segment_mean(lattice_time(j as f64 + 0.5))
        } else if j == 0 {
            let q = j as usize;
            (5.0 * m[q] + 15.0 * m[q + 1] - 5.0 * m[q + 2] + m[q + 3]) / 16.0
        } else {
            let q = j as usize;
            (-m[q - 1] + 9.0 * m[q] + 9.0 * m[q + 1] - m[q + 2]) / 16.0
        };
        let source = |v: f64, delayed: f64| a * model.gamma.value_after(v - model.t0) + b * delayed;
        let u = lattice_time(i as f64);
        let integral = rho / 6.0
            * (decay_full * source(u, delayed_left)
                + 4.0 * decay_half * source(u + 0.5 * rho, delayed_mid)
                + source(u + rho, delayed_right));
        let next = decay_full * m[i] + integral;
        m.push(next);
    }
    let times = (0..=grid.k_max() as isize).map(|k| grid.time(k)).collect();
    let means = (0..=grid.k_max()).map(|k| m[k * substeps]).collect();
    Ok(MeanCurve {
        times,
        means,
        method: MeanMethod::RecursionQuadrature,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finiteness {
    Finite,
}

/// Finiteness verdict for `E[(int_{t0}^{T} X^{-1} dt)^q]` with a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseIntegralReport {
    pub verdict: Finiteness,
    pub q: f64,
    pub estimate: Estimate,
}

/// Under `sigma^2 < 2 a gamma` the inverse-integral moments are finite for
/// every `q > 0`; the estimate integrates `1 / x_k` by the trapezoidal rule
/// along implicit-scheme paths with `n_steps` steps over `[t0, horizon]`.
pub fn inverse_integral_finiteness(
    params: &CirParams,
    q: f64,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<InverseIntegralReport, AnalyticsError> {
    let ratio = params.feller_ratio();
    if !(ratio > 1.0) {
        return Err(AnalyticsError::StrongFellerViolated { ratio });
    }
    if !(q > 0.0) {
        return Err(AnalyticsError::OutOfRange {
            name: "q",
            value: q,
        });
    }
    let model = params.as_model(horizon);
    let grid = TimeGrid::new(model.t0, model.tau, model.horizon, n_steps)?;
    let sampler = PathSampler::new(&model, &grid, seed)?;
    let estimate = sampler.estimate(n_paths, |path| {
        let inv = path.x.forward_values();
        let inner: f64 = inv[1..inv.len() - 1].iter().map(|x| 1.0 / x).sum();
        let integral = grid.delta() * (0.5 * (1.0 / inv[0] + 1.0 / inv[inv.len() - 1]) + inner);
        integral.powf(q)
    })?;
    Ok(InverseIntegralReport {
        verdict: Finiteness::Finite,
        q,
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GammaSpec, InitialSegmentSpec};
    use approx::assert_relative_eq;

    fn params(a: f64, gamma: f64, sigma: f64, x0: f64) -> CirParams {
        CirParams::new(a, gamma, sigma, x0, 0.0).unwrap()
    }

    #[test]
    fn laplace_examples() {
        let p = params(1.0, 1.0, 2f64.sqrt(), 1.0);
        assert_eq!(laplace_transform(&p, 0.0, 0.7).unwrap(), 1.0);
        let v = laplace_transform(&p, 1.0, 2f64.ln()).unwrap();
        // (1.5)^{-1} e^{-1/3}, evaluated at 30 digits.
        assert_relative_eq!(v, 0.477_687_540_382_526_17, max_relative = 1e-14);
        assert!(matches!(
            laplace_transform(&p, 1.0, 0.0),
            Err(AnalyticsError::NonPositiveElapsed { .. })
        ));
    }

    #[test]
    fn laplace_derivative_is_the_mean() {
        let p = params(1.3, 0.8, 0.6, 1.7);
        for t in [0.1, 0.5, 2.0] {
            let h = 1e-6;
            let slope =
                (laplace_transform(&p, h, t).unwrap() - laplace_transform(&p, 0.0, t).unwrap()) / h;
            let central = (laplace_transform(&p, 2.0 * h, t).unwrap()
                - laplace_transform(&p, 0.0, t).unwrap())
                / (2.0 * h);
            // One-sided at u = 0; Richardson-extrapolate to second order.
            let derivative = -(2.0 * slope - central);
            assert_relative_eq!(derivative, p.mean(t), max_relative = 1e-6);
        }
    }

    #[test]
    fn laplace_is_decreasing_in_u() {
        let p = params(0.7, 1.2, 0.9, 0.4);
        let mut last = 1.0;
        for i in 1..200 {
            let v = laplace_transform(&p, i as f64 * 0.05, 1.3).unwrap();
            assert!(v < last && v > 0.0);
            last = v;
        }
    }

    #[test]
    fn lp_constant_cases() {
        assert_eq!(lp_constant(3.0, 1.5, false).unwrap(), 1.0);
        // Values from 30-digit evaluation of the closed form.
        assert_relative_eq!(
            lp_constant(1.5, 1.0, false).unwrap(),
            2.454_733_752_418_872_8,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            lp_constant(2.5, 2.0, false).unwrap(),
            4.476_501_450_706_245,
            max_relative = 1e-12
        );
        assert!(matches!(
            lp_constant(2.0, 2.0, false),
            Err(AnalyticsError::OrderOutOfRange { .. })
        ));
        assert!(matches!(
            lp_constant(2.0, 0.5, false),
            Err(AnalyticsError::OrderOutOfRange { .. })
        ));
        assert_eq!(lp_constant(2.0, 0.5, true).unwrap(), 1.0);
        assert_eq!(lp_constant(1.5, 0.5, true).unwrap(), 1.0);
        assert!(lp_constant(1.4, 0.5, true).is_err());
        assert!(matches!(
            lp_constant(1.0, 0.5, true),
            Err(AnalyticsError::FellerRatioTooSmall { .. })
        ));
    }

    #[test]
    fn neg_moment_divergence_and_errors() {
        let p = params(1.0, 1.0, 1.0, 1.0);
        assert_eq!(
            neg_moment(&p, 2.0, 1.0).unwrap().value,
            MomentValue::Infinite
        );
        let edge = params(1.0, 1.0, 2f64.sqrt(), 1.0);
        assert!(matches!(
            neg_moment(&edge, 1.0, 1.0),
            Err(AnalyticsError::FellerRatioTooSmall { .. })
        ));
        // g = 1 + 1e-9 > 1 and p = 1 >= g is still a divergence.
        let g_ratio: f64 = 1.0 + 1e-9;
        let sigma = (2.0 / g_ratio).sqrt();
        let just = params(1.0, 1.0, sigma, 1.0);
        assert!(just.feller_ratio() > 1.0);
        assert_eq!(
            neg_moment(&just, 1.5, 1.0).unwrap().value,
            MomentValue::Infinite
        );
    }

    #[test]
    fn neg_moment_small_time_limit() {
        for (p, x0) in [(0.5, 1.0), (1.5, 2.0), (0.3, 0.5)] {
            let c = params(1.0, 1.0, 0.5, x0);
            let v = neg_moment(&c, p, 1e-6).unwrap().value.finite().unwrap();
            assert_relative_eq!(v, x0.powf(-p), max_relative = 1e-3);
        }
    }

    /// Direct quadrature of the Laplace-domain representation
    /// `Gamma(p)^{-1} int_0^inf u^{p-1} E[e^{-uX}] du`, with `u = e^v`. The
    /// integrand decays like `e^{p v}` on the left and `e^{-(g - p) v}` on the right.
    fn laplace_domain_oracle(c: &CirParams, p: f64, t: f64) -> f64 {
        let g = c.feller_ratio();
        let f = |v: f64| (p * v).exp() * laplace_transform(c, v.exp(), t).unwrap();
        let lo = -40.0 / p;
        let hi = 40.0 / (g - p) + 10.0;
        let pts: Vec<f64> = (0..=64).map(|i| lo + (hi - lo) * i as f64 / 64.0).collect();
        let q = integrate(f, &pts, 1e-12, 0.0, 50_000).unwrap();
        q.value / gamma_fn(p)
    }

    #[test]
    fn neg_moment_matches_laplace_domain_quadrature() {
        for &(a, gamma, sigma, x0, p, t) in &[
            (1.0, 1.0, 1.0, 1.0, 0.5, 1.0),
            (1.0, 1.0, 1.0, 1.0, 1.5, 0.5),
            (2.0, 1.0, 1.0, 0.7, 1.0, 0.3),
            (1.0, 2.0, 1.0, 1.0, 2.5, 1.0),
            (1.0, 0.8, 1.0, 1.2, 0.3, 2.0),
        ] {
            let c = params(a, gamma, sigma, x0);
            let value = neg_moment(&c, p, t).unwrap().value.finite().unwrap();
            let oracle = laplace_domain_oracle(&c, p, t);
            assert_relative_eq!(value, oracle, max_relative = 1e-7);
        }
    }

    #[test]
    fn neg_moment_respects_bound() {
        for g in [1.2f64, 1.8, 2.0, 3.0, 5.5] {
            let sigma = (2.0 / g).sqrt();
            let c = params(1.0, 1.0, sigma, 0.8);
            for p in [1.0, 0.5 * (1.0 + g), g - 0.05] {
                if p < 1.0 || p >= g {
                    continue;
                }
                for t in [0.1, 1.0, 3.0] {
                    let r = neg_moment(&c, p, t).unwrap();
                    let v = r.value.finite().unwrap();
                    assert!(
                        v <= r.bound.unwrap(),
                        "g={g} p={p} t={t}: {v} > {:?}",
                        r.bound
                    );
                }
            }
        }
    }

    #[test]
    fn mean_recursion_reproduces_closed_form() {
        let model = ModelSpec::classical(1.3, 0.9, 0.5, 0.4, 0.5, 0.0, 2.0);
        let grid = TimeGrid::new(0.0, 0.5, 2.0, 16).unwrap();
        let exact = mean_delay_curve(&model, &grid, |t| model.initial.mean_at(t)).unwrap();
        assert_eq!(exact.method, MeanMethod::ClosedForm);
        let rec =
            mean_recursion(&model, &grid, |t| model.initial.mean_at(t), MEAN_SUBSTEPS).unwrap();
        assert_eq!(rec.method, MeanMethod::RecursionQuadrature);
        for (e, r) in exact.means.iter().zip(&rec.means) {
            assert_relative_eq!(e, r, max_relative = 1e-10);
        }
        assert_eq!(exact.means[0], 0.4);
    }

    #[test]
    fn mean_with_delay_matches_method_of_steps() {
        // m' = (1 - m) + 0.5 m(t - 0.5), m = 1 on [-0.5, 0], solved piecewise in closed form.
        let model = ModelSpec {
            b: 0.5,
            ..ModelSpec::classical(1.0, 1.0, 0.5, 1.0, 0.5, 0.0, 1.0)
        };
        let grid = TimeGrid::new(0.0, 0.5, 1.0, 8).unwrap();
        let curve = mean_delay_curve(&model, &grid, |_| 1.0).unwrap();
        assert_eq!(curve.method, MeanMethod::RecursionQuadrature);
        assert_relative_eq!(
            curve.means[8],
            1.196_734_670_143_683_3,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            curve.means[16],
            1.338_611_282_022_041_3,
            max_relative = 1e-10
        );
        // First window: 3/2 - e^{-t}/2.
        for k in 0..=8 {
            let t = curve.times[k];
            assert_relative_eq!(curve.means[k], 1.5 - 0.5 * (-t).exp(), max_relative = 1e-11);
        }
    }

    #[test]
    fn mean_is_refinement_invariant_and_dominates() {
        let model = ModelSpec {
            b: 0.4,
            gamma: GammaSpec::Sinusoid {
                level: 1.0,
                amplitude: 0.3,
                angular_frequency: 4.0,
            },
            initial: InitialSegmentSpec::Table {
                points: vec![(-0.5, 0.5), (-0.25, 1.5), (0.0, 1.0)],
            },
            ..ModelSpec::classical(1.0, 1.0, 0.5, 1.0, 0.5, 0.0, 2.0)
        };
        let seg = |t: f64| model.initial.mean_at(t);
        let coarse = TimeGrid::new(0.0, 0.5, 2.0, 8).unwrap();
        let fine = TimeGrid::new(0.0, 0.5, 2.0, 16).unwrap();
        let mc = mean_delay_curve(&model, &coarse, seg).unwrap();
        let mf = mean_delay_curve(&model, &fine, seg).unwrap();
        for k in 0..=coarse.k_max() {
            assert_relative_eq!(mc.means[k], mf.means[2 * k], max_relative = 1e-8);
        }
        let no_delay = ModelSpec {
            b: 0.0,
            ..model.clone()
        };
        let base = mean_delay_curve(&no_delay, &coarse, seg).unwrap();
        for (with, without) in mc.means.iter().zip(&base.means) {
            assert!(with >= without);
        }
    }

    #[test]
    fn inverse_integral_estimates() {
        let c = params(1.0, 1.0, 0.5, 1.0);
        let one = inverse_integral_finiteness(&c, 1.0, 1.0, 64, 10_000, 3).unwrap();
        assert_eq!(one.verdict, Finiteness::Finite);
        assert!(
            one.estimate.mean > 0.0
                && one.estimate.std_err.is_finite()
                && one.estimate.std_err > 0.0
        );
        let two = inverse_integral_finiteness(&c, 2.0, 1.0, 64, 10_000, 3).unwrap();
        assert!(two.estimate.mean >= one.estimate.mean * one.estimate.mean);

        let doubled = params(1.0, 2.0, 0.5, 1.0);
        let d = inverse_integral_finiteness(&doubled, 1.0, 1.0, 64, 10_000, 4).unwrap();
        assert!(
            one.estimate.mean - d.estimate.mean
                > 3.0 * one.estimate.std_err.hypot(d.estimate.std_err)
        );

        let weak = params(1.0, 0.5, 1.0, 1.0);
        assert!(matches!(
            inverse_integral_finiteness(&weak, 1.0, 1.0, 64, 10, 0),
            Err(AnalyticsError::StrongFellerViolated { .. })
        ));
    }
}
