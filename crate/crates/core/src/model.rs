//! Fixed-delay CIR model definition.
//!
//! ```text
//! X(t)  = X0(t)                                              t0 - tau <= t <= t0
//! dX(t) = [a (gamma(t) - X(t)) + b X(t - tau)] dt + sigma sqrt(X(t)) dW(t),   t > t0
//! ```
//!
//! The scheme works on `Y = sqrt(X)`, whose drift uses the reparameterisation
//!
//! ```text
//! a_under(t) = (4 a gamma(t) - sigma^2) / 8,   a_bar = a/2,   b_bar = b/2,   sigma_bar = sigma/2
//! ```

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

/// Relative slack used when an input is expected to sit on an integer or on
/// the Feller boundary but went through a floating-point division first.
const ALIGN_TOL: f64 = 1e-9;
const FELLER_EQ_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` must be {requirement}, got {value}")]
    NonPositiveParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("horizon T = {horizon} must be after start t0 = {t0}")]
    HorizonBeforeStart { t0: f64, horizon: f64 },
    #[error("gamma must be strictly positive on [t0, T], infimum is {inf}")]
    GammaNotPositive { inf: f64 },
    #[error("time {t} outside the model domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("T - t0 = {span} is not a multiple of tau / N = {delta}")]
    GridMisaligned { span: f64, delta: f64 },
    #[error("invalid initial segment: {0}")]
    InvalidSegment(String),
}

/// Deterministic long-term level `gamma(t)`. Time enters through `t - t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSpec {
    Constant {
        level: f64,
    },
    Affine {
        level: f64,
        slope: f64,
    },
    Sinusoid {
        level: f64,
        amplitude: f64,
        angular_frequency: f64,
    },
}

/// Infimum, supremum and a Hölder-1/2 constant of `gamma` on `[t0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaBounds {
    pub inf: f64,
    pub sup: f64,
    pub holder: f64,
}

impl GammaSpec {
    pub fn constant(level: f64) -> Self {
        GammaSpec::Constant { level }
    }

    /// `gamma` after `elapsed = t - t0` time units.
    pub fn value_after(&self, elapsed: f64) -> f64 {
        match *self {
            GammaSpec::Constant { level } => level,
            GammaSpec::Affine { level, slope } => level + slope * elapsed,
            GammaSpec::Sinusoid {
                level,
                amplitude,
                angular_frequency,
            } => level + amplitude * (angular_frequency * elapsed).sin(),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            GammaSpec::Constant { .. } => 0.0,
            GammaSpec::Affine { slope, .. } => slope.abs(),
            GammaSpec::Sinusoid {
                amplitude,
                angular_frequency,
                ..
            } => (amplitude * angular_frequency).abs(),
        }
    }

    /// Exact range of the family over `[t0, T]`; the Hölder constant is
    /// `Lip * sqrt(T - t0)`.
    pub fn bounds(&self, t0: f64, horizon: f64) -> Result<GammaBounds, ModelError> {
        if !(horizon > t0) {
            return Err(ModelError::HorizonBeforeStart { t0, horizon });
        }
        let span = horizon - t0;
        let (inf, sup) = match *self {
            GammaSpec::Constant { level } => (level, level),
            GammaSpec::Affine { .. } => {
                let (l, r) = (self.value_after(0.0), self.value_after(span));
                (l.min(r), l.max(r))
            }
            GammaSpec::Sinusoid {
                level,
                amplitude,
                angular_frequency,
            } => {
                // sin(-x) = -sin(x): fold a negative frequency into the amplitude.
                let amp = amplitude * angular_frequency.signum();
                let phase = angular_frequency.abs() * span;
                let sin_max = if phase >= FRAC_PI_2 { 1.0 } else { phase.sin() };
                let sin_min = if phase >= 1.5 * PI {
                    -1.0
                } else {
                    phase.sin().min(0.0)
                };
                if amp >= 0.0 {
                    (level + amp * sin_min, level + amp * sin_max)
                } else {
                    (level + amp * sin_max, level + amp * sin_min)
                }
            }
        };
        if !(inf > 0.0) {
            return Err(ModelError::GammaNotPositive { inf });
        }
        Ok(GammaBounds {
            inf,
            sup,
            holder: self.lipschitz() * span.sqrt(),
        })
    }
}

/// Free-function form of [`GammaSpec::bounds`].
pub fn gamma_bounds(gamma: &GammaSpec, t0: f64, horizon: f64) -> Result<GammaBounds, ModelError> {
    gamma.bounds(t0, horizon)
}

/// Law of the initial segment `X0` on `[t0 - tau, t0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSegmentSpec {
    Constant {
        level: f64,
    },
    /// Piecewise-linear through `(t, value)` knots in absolute time.
    Table {
        points: Vec<(f64, f64)>,
    },
    /// A flat segment at `median * exp(log_sd * Z)`, one draw per path.
    LogNormal {
        median: f64,
        log_sd: f64,
    },
}

impl InitialSegmentSpec {
    pub fn constant(level: f64) -> Self {
        InitialSegmentSpec::Constant { level }
    }

    pub fn validate(&self, t0: f64, tau: f64) -> Result<(), ModelError> {
        match self {
            InitialSegmentSpec::Constant { level } => {
                if !(*level > 0.0) {
                    return Err(ModelError::InvalidSegment(format!(
                        "constant level must be positive, got {level}"
                    )));
                }
            }
            InitialSegmentSpec::Table { points } => {
                if points.len() < 2 {
                    return Err(ModelError::InvalidSegment(
                        "table needs at least two knots".into(),
                    ));
                }
                if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(ModelError::InvalidSegment(
                        "table times must be strictly increasing".into(),
                    ));
                }
                if let Some(&(t, v)) = points.iter().find(|(_, v)| !(*v > 0.0)) {
                    return Err(ModelError::InvalidSegment(format!(
                        "table value {v} at t = {t} is not positive"
                    )));
                }
                let slack = ALIGN_TOL * tau.max(1.0);
                let (first, last) = (points[0].0, points[points.len() - 1].0);
                if first > t0 - tau + slack || last < t0 - slack {
                    return Err(ModelError::InvalidSegment(format!(
                        "table spans [{first}, {last}] but must cover [{}, {t0}]",
                        t0 - tau
                    )));
                }
            }
            InitialSegmentSpec::LogNormal { median, log_sd } => {
                if !(*median > 0.0) || !(*log_sd >= 0.0) || !log_sd.is_finite() {
                    return Err(ModelError::InvalidSegment(format!(
                        "lognormal needs median > 0 and log_sd >= 0, got ({median}, {log_sd})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Segment value at `t` for the non-random variants.
    pub fn deterministic_value(&self, t: f64) -> Option<f64> {
        match self {
            InitialSegmentSpec::Constant { level } => Some(*level),
            InitialSegmentSpec::Table { points } => Some(interpolate_table(points, t)),
            InitialSegmentSpec::LogNormal { .. } => None,
        }
    }

    /// `E[X0(t)]`.
    pub fn mean_at(&self, t: f64) -> f64 {
        match self {
            InitialSegmentSpec::LogNormal { median, log_sd } => {
                median * (0.5 * log_sd * log_sd).exp()
            }
            other => other.deterministic_value(t).expect("deterministic variant"),
        }
    }
}

/// Linear interpolation with flat extrapolation past the end knots.
pub(crate) fn interpolate_table(points: &[(f64, f64)], t: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let hi = points.partition_point(|&(s, _)| s <= t);
    let (t_lo, v_lo) = points[hi - 1];
    let (t_hi, v_hi) = points[hi];
    v_lo + (t - t_lo) * (v_hi - v_lo) / (t_hi - t_lo)
}

/// Full parameter set of the fixed-delay CIR process.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub tau: f64,
    pub t0: f64,
    pub horizon: f64,
    pub gamma: GammaSpec,
    pub initial: InitialSegmentSpec,
}

/// Outcome of [`validate`]: which of the positivity and convergence
/// conditions hold, with the thresholds they depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    /// `sigma^2 <= 2 a gamma(t)` on `[t0, T]`.
    pub feller_ok: bool,
    /// `sigma^2 < 2 a gamma_inf`.
    pub strong_feller_ok: bool,
    /// `4 a gamma(t) > sigma^2` on `[t0, T]`, i.e. `a_under > 0` on the grid.
    pub scheme_positive_ok: bool,
    /// `2 a gamma_inf / sigma^2`.
    pub feller_ratio: f64,
    /// Upper end of the admissible moment range for the uniform error bound.
    pub p_max: f64,
    pub nu: f64,
    /// Number of delay windows `ceil((T - t0) / tau)`.
    pub m: u32,
    pub gamma: GammaBounds,
    /// `sup a_under(t)` over `[t0, T]`.
    pub a_under_star: f64,
}

impl ModelSpec {
    /// Classical CIR (`b = 0`, constant `gamma`) from a constant start.
    pub fn classical(
        a: f64,
        gamma: f64,
        sigma: f64,
        x0: f64,
        tau: f64,
        t0: f64,
        horizon: f64,
    ) -> Self {
        ModelSpec {
            a,
            b: 0.0,
            sigma,
            tau,
            t0,
            horizon,
            gamma: GammaSpec::constant(gamma),
            initial: InitialSegmentSpec::constant(x0),
        }
    }

    pub fn a_bar(&self) -> f64 {
        0.5 * self.a
    }

    pub fn b_bar(&self) -> f64 {
        0.5 * self.b
    }

    pub fn sigma_bar(&self) -> f64 {
        0.5 * self.sigma
    }

    /// `(4 a gamma(t) - sigma^2) / 8`, with `gamma` read off the analytic family.
    pub fn a_under_at(&self, t: f64) -> f64 {
        a_under(self.a, self.gamma.value_after(t - self.t0), self.sigma)
    }

    /// `gamma(t)` on `[t0 - tau, T]`.
    pub fn gamma_at(&self, t: f64) -> Result<f64, ModelError> {
        let lo = self.t0 - self.tau;
        let hi = self.horizon;
        let slack = ALIGN_TOL * (hi - lo).abs().max(1.0);
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(ModelError::OutOfDomain { t, lo, hi });
        }
        Ok(self.gamma.value_after(t - self.t0))
    }

    pub(crate) fn check_hard_invariants(&self) -> Result<(), ModelError> {
        let positive = [("a", self.a), ("sigma", self.sigma), ("tau", self.tau)];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ModelError::NonPositiveParameter {
                    name,
                    requirement: "positive",
                    value,
                });
            }
        }
        if !(self.b >= 0.0) || !self.b.is_finite() {
            return Err(ModelError::NonPositiveParameter {
                name: "b",
                requirement: "non-negative",
                value: self.b,
            });
        }
        if !(self.horizon > self.t0) {
            return Err(ModelError::HorizonBeforeStart {
                t0: self.t0,
                horizon: self.horizon,
            });
        }
        self.initial.validate(self.t0, self.tau)
    }

    pub fn validate(&self) -> Result<ConditionReport, ModelError> {
        validate(self)
    }
}

#[inline]
pub(crate) fn a_under(a: f64, gamma: f64, sigma: f64) -> f64 {
    (4.0 * a * gamma - sigma * sigma) / 8.0
}

/// `ceil(x)` that treats values within rounding noise of an integer as that integer.
fn ceil_aligned(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= ALIGN_TOL * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Checks the hard parameter invariants and reports the Feller-type conditions.
///
/// Feller failures are reported as flags rather than errors so the baseline
/// schemes can still be run on such models.
pub fn validate(spec: &ModelSpec) -> Result<ConditionReport, ModelError> {
    spec.check_hard_invariants()?;
    let gamma = spec.gamma.bounds(spec.t0, spec.horizon)?;
    let s2 = spec.sigma * spec.sigma;
    let feller_ratio = 2.0 * spec.a * gamma.inf / s2;
    let m = ceil_aligned((spec.horizon - spec.t0) / spec.tau);
    Ok(ConditionReport {
        // Non-strict inequality; the slack absorbs e.g. sigma = sqrt(2) squaring to 2 + 4e-16.
        feller_ok: feller_ratio >= 1.0 - FELLER_EQ_TOL,
        strong_feller_ok: feller_ratio > 1.0,
        scheme_positive_ok: 4.0 * spec.a * gamma.inf > s2,
        feller_ratio,
        p_max: feller_ratio * 2.0 / (1.0 + m),
        nu: feller_ratio - 1.0,
        m: m as u32,
        gamma,
        a_under_star: a_under(spec.a, gamma.sup, spec.sigma),
    })
}

/// Uniform grid `t_k = t0 + k * tau / N`, `k = -N ..= K`, with `t_K = T`.
///
/// Times are always recomputed from the integer index, so the delayed point
/// of `t_{k+1}` is the index `k + 1 - N` with no floating-point lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    tau: f64,
    n: usize,
    k_max: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, tau: f64, horizon: f64, n: usize) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::NonPositiveParameter {
                name: "N",
                requirement: "a positive integer",
                value: 0.0,
            });
        }
        if !(tau > 0.0) {
            return Err(ModelError::NonPositiveParameter {
                name: "tau",
                requirement: "positive",
                value: tau,
            });
        }
        if !(horizon > t0) {
            return Err(ModelError::HorizonBeforeStart { t0, horizon });
        }
        let span = horizon - t0;
        let steps = span * n as f64 / tau;
        let k = steps.round();
        if k < 1.0 || (steps - k).abs() > ALIGN_TOL * k.max(1.0) {
            return Err(ModelError::GridMisaligned {
                span,
                delta: tau / n as f64,
            });
        }
        Ok(TimeGrid {
            t0,
            tau,
            n,
            k_max: k as usize,
        })
    }

    /// Steps per delay window.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Index of the horizon, `t_K = T`.
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn delta(&self) -> f64 {
        self.tau / self.n as f64
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.k_max as isize)
    }

    pub fn time(&self, k: isize) -> f64 {
        self.t0 + k as f64 * self.tau / self.n as f64
    }

    /// Index `k - N` of the point one delay before `t_k`.
    pub fn delayed_index(&self, k: isize) -> isize {
        k - self.n as isize
    }

    /// Number of stored nodes, `N + K + 1`.
    pub fn len(&self) -> usize {
        self.n + self.k_max + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Storage offset of index `k` in a vector covering `-N ..= K`.
    #[inline]
    pub fn slot(&self, k: isize) -> usize {
        (k + self.n as isize) as usize
    }

    /// `r` such that this grid refines `coarse` by an integer factor.
    pub fn refinement_of(&self, coarse: &TimeGrid) -> Option<usize> {
        if self.t0 != coarse.t0 || self.tau != coarse.tau || !self.n.is_multiple_of(coarse.n) {
            return None;
        }
        let r = self.n / coarse.n;
        (coarse.k_max * r == self.k_max).then_some(r)
    }
}

/// Builds the grid with `N` steps per delay window for `spec`.
pub fn build_grid(spec: &ModelSpec, n: usize) -> Result<TimeGrid, ModelError> {
    TimeGrid::new(spec.t0, spec.tau, spec.horizon, n)
}
