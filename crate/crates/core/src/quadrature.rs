//! Globally adaptive Gauss-Kronrod (7/15) quadrature.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("adaptive quadrature stopped at {intervals} intervals with error estimate {error:e} (value {value:e})")]
    NotConverged {
        value: f64,
        error: f64,
        intervals: usize,
    },
    #[error("integrand is not finite at x = {x}")]
    NonFinite { x: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

// Kronrod abscissae and weights on [-1, 1]; every second node is a Gauss node.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Result<Segment, QuadratureError> {
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let eval = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(QuadratureError::NonFinite { x })
        }
    };
    let fc = eval(centre)?;
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (i, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let dx = half * x;
        let pair = eval(centre - dx)? + eval(centre + dx)?;
        kronrod += w * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    Ok(Segment {
        lo,
        hi,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    })
}

/// Integrates `f` over `[points[0], points[last]]`, starting from the given
/// breakpoints and bisecting the worst interval until the summed error
/// estimate is below `max(abs_tol, rel_tol |I|)`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    points: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    max_intervals: usize,
) -> Result<Quadrature, QuadratureError> {
    assert!(points.len() >= 2, "need at least one interval");
    let mut segments = Vec::with_capacity(max_intervals.min(4096));
    for w in points.windows(2) {
        if w[1] > w[0] {
            segments.push(gauss_kronrod(&f, w[0], w[1])?);
        }
    }
    loop {
        let value: f64 = segments.iter().map(|s| s.value).sum();
        let error: f64 = segments.iter().map(|s| s.error).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(Quadrature { value, error });
        }
        if segments.len() >= max_intervals {
            return Err(QuadratureError::NotConverged {
                value,
                error,
                intervals: segments.len(),
            });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.error.total_cmp(&b.1.error))
            .expect("non-empty");
        let s = segments.swap_remove(worst);
        let mid = 0.5 * (s.lo + s.hi);
        if !(mid > s.lo && mid < s.hi) {
            return Err(QuadratureError::NotConverged {
                value,
                error,
                intervals: segments.len() + 1,
            });
        }
        segments.push(gauss_kronrod(&f, s.lo, mid)?);
        segments.push(gauss_kronrod(&f, mid, s.hi)?);
    }
}
