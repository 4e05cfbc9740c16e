//! Path-parallel Monte Carlo plumbing shared by the estimators.
//!
//! Paths are simulated in parallel but collected in path order and reduced
//! sequentially with compensated summation, so every estimate is a pure
//! function of `(config, seed)` whatever the thread count.

use rayon::prelude::*;

use crate::model::{ModelSpec, TimeGrid};
use crate::noise::{generate, sample_segment, CoupledNoise, SegmentDraw};
use crate::scheme::{square_and_interpolate, ImplicitScheme, PathX, PathY, SchemeError};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl Estimate {
    /// Sample mean and `s / sqrt(n)`.
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = compensated_sum(values.iter().copied()) / n as f64;
        let std_err = if n > 1 {
            let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
            (ss / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { mean, std_err, n }
    }

    /// `|self - other| / sqrt(se1^2 + se2^2)`.
    pub fn z_against(&self, other: &Estimate) -> f64 {
        (self.mean - other.mean).abs() / self.std_err.hypot(other.std_err)
    }
}

/// `(mean |e|^p)^{1/p}` with a leave-one-out jackknife standard error.
pub fn jackknife_lp_norm(errors: &[f64], p: f64) -> Estimate {
    let n = errors.len();
    let powered: Vec<f64> = errors.iter().map(|e| e.abs().powf(p)).collect();
    let total = compensated_sum(powered.iter().copied());
    let mean = (total / n as f64).powf(1.0 / p);
    if n < 2 {
        return Estimate {
            mean,
            std_err: 0.0,
            n,
        };
    }
    let loo: Vec<f64> = powered
        .iter()
        .map(|v| ((total - v) / (n - 1) as f64).max(0.0).powf(1.0 / p))
        .collect();
    let loo_mean = compensated_sum(loo.iter().copied()) / n as f64;
    let spread = compensated_sum(loo.iter().map(|t| (t - loo_mean) * (t - loo_mean)));
    Estimate {
        mean,
        std_err: ((n - 1) as f64 / n as f64 * spread).sqrt(),
        n,
    }
}

/// Runs `f` for paths `0 .. n_paths` in parallel and returns results in path order.
pub fn map_paths<T, E, F>(n_paths: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    (0..n_paths as u64).into_par_iter().map(f).collect()
}

/// Everything needed to draw implicit-scheme paths of one model on one grid.
#[derive(Debug, Clone)]
pub struct PathSampler {
    pub model: ModelSpec,
    pub grid: TimeGrid,
    pub scheme: ImplicitScheme,
    pub seed: u64,
}

/// Inputs and outputs of one simulated path.
#[derive(Debug, Clone)]
pub struct SampledPath {
    pub noise: CoupledNoise,
    pub segment: SegmentDraw,
    pub y: PathY,
    pub x: PathX,
}

impl PathSampler {
    pub fn new(model: &ModelSpec, grid: &TimeGrid, seed: u64) -> Result<Self, SchemeError> {
        Ok(PathSampler {
            model: model.clone(),
            grid: *grid,
            scheme: ImplicitScheme::new(model, grid)?,
            seed,
        })
    }

    pub fn sample(&self, path_index: u64) -> Result<SampledPath, SchemeError> {
        let noise = generate(self.seed, path_index, &self.grid);
        let segment = sample_segment(&self.model.initial, &self.grid, self.seed, path_index)?;
        let y = self.scheme.run(noise.increments(), &segment.values)?;
        let x = square_and_interpolate(&y);
        Ok(SampledPath {
            noise,
            segment,
            y,
            x,
        })
    }

    /// Maps every path to a scalar and returns the sample estimate.
    pub fn estimate<F>(&self, n_paths: usize, f: F) -> Result<Estimate, SchemeError>
    where
        F: Fn(&SampledPath) -> f64 + Sync + Send,
    {
        let values = map_paths(n_paths, |p| self.sample(p).map(|s| f(&s)))?;
        Ok(Estimate::from_samples(&values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn sample_estimate() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.std_err - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn jackknife_of_mean_matches_classical_standard_error() {
        // For p = 1 on non-negative data the jackknife reproduces s / sqrt(n).
        let data: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.1).collect();
        let jk = jackknife_lp_norm(&data, 1.0);
        let classical = Estimate::from_samples(&data);
        assert!((jk.mean - classical.mean).abs() < 1e-14);
        assert!((jk.std_err - classical.std_err).abs() < 1e-12);
    }

    #[test]
    fn map_paths_preserves_order() {
        let out: Result<Vec<u64>, ()> = map_paths(1000, |p| Ok(p * 2));
        assert_eq!(out.unwrap(), (0..1000).map(|p| p * 2).collect::<Vec<_>>());
    }
}
