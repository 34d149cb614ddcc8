use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::UncertaintyMatrix;
use crate::error::{Error, Result};
use crate::gaussian::CovarianceMatrix;

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;
const MIN_SAMPLES: usize = 100;
const MIN_RESAMPLES: usize = 100;
const CHUNK: usize = 8;

/// Digitized I/Q time series, interleaved per sample as
/// `(I_0, Q_0, ..., I_{N-1}, Q_{N-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub n_modes: usize,
    pub sample_rate_hz: f64,
    /// Segment start offsets followed by the total sample count.
    pub segment_boundaries: Vec<usize>,
    pub mode_frequencies_hz: Vec<f64>,
    pub samples: Vec<f64>,
}

impl MeasurementRecord {
    pub fn new(
        n_modes: usize,
        sample_rate_hz: f64,
        segment_boundaries: Vec<usize>,
        mode_frequencies_hz: Vec<f64>,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidArgument("record needs at least one mode".into()));
        }
        if !samples.len().is_multiple_of(2 * n_modes) {
            return Err(Error::DimensionMismatch(format!(
                "{} values is not a whole number of {}-mode samples",
                samples.len(),
                n_modes
            )));
        }
        if mode_frequencies_hz.len() != n_modes {
            return Err(Error::DimensionMismatch(format!(
                "{} mode frequencies for {n_modes} modes",
                mode_frequencies_hz.len()
            )));
        }
        let n_samples = samples.len() / (2 * n_modes);
        let record = Self {
            n_modes,
            sample_rate_hz,
            segment_boundaries,
            mode_frequencies_hz,
            samples,
        };
        let b = &record.segment_boundaries;
        if b.len() < 2 || b[0] != 0 || b[b.len() - 1] != n_samples || b.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "segment boundaries must rise strictly from 0 to {n_samples}, got {b:?}"
            )));
        }
        Ok(record)
    }

    /// Record with `segments` near-equal segments.
    pub fn with_equal_segments(
        n_modes: usize,
        sample_rate_hz: f64,
        segments: usize,
        mode_frequencies_hz: Vec<f64>,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if segments == 0 {
            return Err(Error::InvalidArgument("segment count must be positive".into()));
        }
        let n_samples = samples.len() / (2 * n_modes.max(1));
        let boundaries = (0..=segments).map(|k| k * n_samples / segments).collect();
        Self::new(n_modes, sample_rate_hz, boundaries, mode_frequencies_hz, samples)
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len() / (2 * self.n_modes)
    }

    pub fn n_segments(&self) -> usize {
        self.segment_boundaries.len() - 1
    }

    /// Copy of segment `k` as a single-segment record.
    pub fn segment(&self, k: usize) -> Result<Self> {
        if k >= self.n_segments() {
            return Err(Error::InvalidArgument(format!(
                "segment {k} out of range ({} segments)",
                self.n_segments()
            )));
        }
        let width = 2 * self.n_modes;
        let (a, b) = (self.segment_boundaries[k], self.segment_boundaries[k + 1]);
        Self::new(
            self.n_modes,
            self.sample_rate_hz,
            vec![0, b - a],
            self.mode_frequencies_hz.clone(),
            self.samples[a * width..b * width].to_vec(),
        )
    }

    /// Re-cut into `segments` near-equal segments.
    pub fn resegment(&self, segments: usize) -> Result<Self> {
        Self::with_equal_segments(
            self.n_modes,
            self.sample_rate_hz,
            segments,
            self.mode_frequencies_hz.clone(),
            self.samples.clone(),
        )
    }

    /// Samples as an `n_samples x 2N` matrix with xxpp columns.
    pub fn quadrature_matrix(&self) -> DMatrix<f64> {
        let n = self.n_modes;
        let width = 2 * n;
        DMatrix::from_fn(self.n_samples(), width, |s, col| {
            let (mode, quad) = if col < n { (col, 0) } else { (col - n, 1) };
            self.samples[s * width + 2 * mode + quad]
        })
    }
}

fn weighted_covariance(x: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let n = x.nrows();
    let total: f64 = weights.iter().sum();
    let w = DVector::from_column_slice(weights);
    let mean = x.tr_mul(&w) / total;
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut scaled = centered.clone();
    for (mut row, wi) in scaled.row_iter_mut().zip(weights) {
        row *= *wi;
    }
    let cov = centered.tr_mul(&scaled) / (n as f64 - 1.0);
    (&cov + cov.transpose()) * 0.5
}

/// Unbiased sample covariance of the quadratures (xxpp, `V^2`).
pub fn sample_covariance(record: &MeasurementRecord) -> Result<CovarianceMatrix<f64>> {
    if record.n_samples() < 2 {
        return Err(Error::InsufficientData("covariance needs at least two samples".into()));
    }
    let x = record.quadrature_matrix();
    CovarianceMatrix::symmetrize(weighted_covariance(&x, &vec![1.0; x.nrows()]))
}

/// Sample covariance together with elementwise bootstrap standard errors.
///
/// Each of the `resamples` replicates draws whole time samples with
/// replacement, using the same indices for every mode so cross-correlations
/// survive. Replicate `b` uses ChaCha stream `b` of `seed`, so the result is
/// bit-reproducible whatever the thread count.
pub fn bootstrap_covariance(
    record: &MeasurementRecord,
    resamples: usize,
    seed: u64,
) -> Result<(CovarianceMatrix<f64>, UncertaintyMatrix<f64>)> {
    let n = record.n_samples();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "bootstrap needs at least {MIN_SAMPLES} samples per mode, got {n}"
        )));
    }
    if resamples < MIN_RESAMPLES {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least {MIN_RESAMPLES} resamples, got {resamples}"
        )));
    }
    let x = record.quadrature_matrix();
    let full = weighted_covariance(&x, &vec![1.0; n]);
    let dim = full.nrows();

    let chunks: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..resamples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut sum = DMatrix::zeros(dim, dim);
            let mut sum_sq = DMatrix::zeros(dim, dim);
            let mut counts = vec![0.0; n];
            for b in chunk * CHUNK..((chunk + 1) * CHUNK).min(resamples) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                counts.iter_mut().for_each(|c| *c = 0.0);
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1.0;
                }
                let d = weighted_covariance(&x, &counts) - &full;
                sum_sq += d.component_mul(&d);
                sum += d;
            }
            (sum, sum_sq)
        })
        .collect();

    let mut sum = DMatrix::zeros(dim, dim);
    let mut sum_sq = DMatrix::zeros(dim, dim);
    for (s, q) in chunks {
        sum += s;
        sum_sq += q;
    }
    let b = resamples as f64;
    let sigma = DMatrix::from_fn(dim, dim, |r, c| {
        let mean = sum[(r, c)] / b;
        ((sum_sq[(r, c)] - b * mean * mean) / (b - 1.0)).max(0.0).sqrt()
    });
    Ok((CovarianceMatrix::symmetrize(full)?, UncertaintyMatrix::new(sigma)?))
}
