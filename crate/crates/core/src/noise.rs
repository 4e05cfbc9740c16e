//! Reproducible Brownian increments and initial-segment draws.
//!
//! Every variate is addressed by `(seed, tag, path_index, step)` through a
//! ChaCha20 block counter, so any increment can be regenerated without its
//! predecessors and separate tags never share keystream. Increments are drawn
//! on the finest grid of an experiment and summed down to coarser nested
//! grids, which couples every discretisation to the same Brownian path.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use statrs::function::erf::erfc_inv;
use thiserror::Error;

use crate::model::{interpolate_table, InitialSegmentSpec, TimeGrid};

const TAG_INCREMENTS: u64 = 0x6477_5f69_6e63; // "dw_inc"
const TAG_SEGMENT: u64 = 0x7365_676d_656e; // "segmen"

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("refinement factor {r} does not divide the fine resolution {n_fine}")]
    NotNested { r: usize, n_fine: usize },
    #[error("initial segment sample {value} at index {k} is not positive")]
    NonPositiveSample { k: isize, value: f64 },
}

/// Counter-addressed stream of uniforms in the open interval `(0, 1)`.
#[derive(Clone)]
pub struct UniformStream {
    rng: ChaCha20Rng,
}

impl UniformStream {
    pub fn new(seed: u64, tag: u64, path_index: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&tag.to_le_bytes());
        key[16..].copy_from_slice(b"delay-cir/stream");
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(path_index);
        UniformStream { rng }
    }

    /// Jumps to the variate with index `step`.
    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(2 * step as u128);
    }

    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        std_normal_quantile(self.next_uniform())
    }
}

#[inline]
pub fn std_normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Fine-grid Brownian increments of one path over `[t0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledNoise {
    seed: u64,
    path_index: u64,
    grid: TimeGrid,
    increments: Vec<f64>,
}

impl CoupledNoise {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_fine(&self) -> usize {
        self.grid.n()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Increments aggregated by factor `r`.
    pub fn coarsen(&self, r: usize) -> Result<Vec<f64>, NoiseError> {
        if r == 0 || !self.grid.n().is_multiple_of(r) {
            return Err(NoiseError::NotNested {
                r,
                n_fine: self.grid.n(),
            });
        }
        Ok(coarsen_increments(&self.increments, r))
    }

    /// Increments on `coarse`, which must be nested in the noise grid.
    pub fn on_grid(&self, coarse: &TimeGrid) -> Result<Vec<f64>, NoiseError> {
        match self.grid.refinement_of(coarse) {
            Some(r) => self.coarsen(r),
            None => Err(NoiseError::NotNested {
                r: if coarse.n() == 0 {
                    0
                } else {
                    self.grid.n() / coarse.n().max(1)
                },
                n_fine: self.grid.n(),
            }),
        }
    }

    /// `W(t_j) - W(t_i)` on the fine grid, `0 <= i <= j <= K`.
    pub fn brownian_difference(&self, i: usize, j: usize) -> f64 {
        self.increments[i..j].iter().sum()
    }
}

/// Left-to-right sums of consecutive blocks of `r` increments.
pub fn coarsen_increments(fine: &[f64], r: usize) -> Vec<f64> {
    fine.chunks_exact(r).map(|c| c.iter().sum()).collect()
}

/// Generates `(T - t0) N_fine / tau` increments, each `Normal(0, Delta_fine)`.
pub fn generate(seed: u64, path_index: u64, grid_fine: &TimeGrid) -> CoupledNoise {
    let scale = grid_fine.delta().sqrt();
    let mut stream = UniformStream::new(seed, TAG_INCREMENTS, path_index);
    let increments = (0..grid_fine.k_max())
        .map(|_| scale * stream.next_normal())
        .collect();
    CoupledNoise {
        seed,
        path_index,
        grid: *grid_fine,
        increments,
    }
}

/// Single increment `step` of the stream that [`generate`] would produce.
pub fn increment_at(seed: u64, path_index: u64, grid_fine: &TimeGrid, step: usize) -> f64 {
    let mut stream = UniformStream::new(seed, TAG_INCREMENTS, path_index);
    stream.seek(step as u64);
    grid_fine.delta().sqrt() * stream.next_normal()
}

/// Continuous-time description of a realised initial segment.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentProfile {
    Flat(f64),
    Table(Vec<(f64, f64)>),
}

impl SegmentProfile {
    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            SegmentProfile::Flat(v) => *v,
            SegmentProfile::Table(points) => interpolate_table(points, t),
        }
    }
}

/// One realisation of `X0` at the grid points `k = -N ..= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDraw {
    pub values: Vec<f64>,
    pub profile: SegmentProfile,
}

impl SegmentDraw {
    /// Value at grid index `k` in `-N ..= 0`.
    pub fn at(&self, grid: &TimeGrid, k: isize) -> f64 {
        self.values[grid.slot(k)]
    }
}

/// Draws the initial segment for one path from its own substream.
pub fn sample_segment(
    spec: &InitialSegmentSpec,
    grid: &TimeGrid,
    seed: u64,
    path_index: u64,
) -> Result<SegmentDraw, NoiseError> {
    let profile = match spec {
        InitialSegmentSpec::Constant { level } => SegmentProfile::Flat(*level),
        InitialSegmentSpec::Table { points } => SegmentProfile::Table(points.clone()),
        InitialSegmentSpec::LogNormal { median, log_sd } => {
            let z = UniformStream::new(seed, TAG_SEGMENT, path_index).next_normal();
            SegmentProfile::Flat(median * (log_sd * z).exp())
        }
    };
    let n = grid.n() as isize;
    let values: Vec<f64> = (-n..=0).map(|k| profile.value_at(grid.time(k))).collect();
    if let Some((i, &value)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(NoiseError::NonPositiveSample {
            k: i as isize - n,
            value,
        });
    }
    Ok(SegmentDraw { values, profile })
}
