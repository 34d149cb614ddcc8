//! From measured voltage covariances to physical quantum covariance matrices.
//!
//! The amplification chain acts on the state as `V_meas = T V T^T + N` with
//! `T = (+) sqrt(G_n) I` and `N = (+) (G_n - 1)(2 nbar_n + 1) I`. The routines
//! here normalize raw `V^2` covariances, invert that channel, propagate
//! calibration and sampling uncertainties, and project the result onto the
//! set of physical states.

mod bootstrap;
mod projection;

pub use bootstrap::{bootstrap_covariance, sample_covariance, MeasurementRecord, DEFAULT_BOOTSTRAP_RESAMPLES};
pub use projection::{project_physical, weighted_max_deviation, Projection, ProjectionOptions};

use nalgebra::DMatrix;

use crate::calibration::CalibrationEntry;
use crate::error::{Error, Result};
use crate::gaussian::CovarianceMatrix;
use crate::scalar::Real;

/// Default line impedance (Ohm).
pub const DEFAULT_IMPEDANCE: f64 = 50.0;
/// Default measurement bandwidth (Hz).
pub const DEFAULT_BANDWIDTH: f64 = 1e3;

/// Unnormalized covariance of the measured voltages, in `V^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCovariance {
    pub data: DMatrix<f64>,
    /// Per-mode frequency (Hz); both quadratures of a mode share it.
    pub frequencies: Vec<f64>,
    pub bandwidth: f64,
    pub impedance: f64,
}

impl RawCovariance {
    pub fn new(data: DMatrix<f64>, frequencies: Vec<f64>, bandwidth: f64, impedance: f64) -> Result<Self> {
        let raw = Self {
            data,
            frequencies,
            bandwidth,
            impedance,
        };
        raw.validate()?;
        Ok(raw)
    }

    pub fn n_modes(&self) -> usize {
        self.frequencies.len()
    }

    fn validate(&self) -> Result<()> {
        let dim = 2 * self.frequencies.len();
        if self.data.nrows() != dim || self.data.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "raw covariance is {}x{} but {} frequencies were given",
                self.data.nrows(),
                self.data.ncols(),
                self.frequencies.len()
            )));
        }
        if let Some(f) = self.frequencies.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidArgument(format!("mode frequency must be positive, got {f}")));
        }
        if !(self.bandwidth > 0.0) || !(self.impedance > 0.0) {
            return Err(Error::InvalidArgument("bandwidth and impedance must be positive".into()));
        }
        if (0..dim).any(|i| !(self.data[(i, i)] > 0.0)) {
            return Err(Error::InvalidArgument("raw covariance needs a positive diagonal".into()));
        }
        Ok(())
    }

    /// Per-element normalization factor `sqrt(f_n f_m) Z_c h B / 2`.
    pub fn normalization(&self) -> DMatrix<f64> {
        let n = self.n_modes();
        let h = crate::calibration::PLANCK;
        DMatrix::from_fn(2 * n, 2 * n, |r, c| {
            0.5 * (self.frequencies[r % n] * self.frequencies[c % n]).sqrt() * self.impedance * h * self.bandwidth
        })
    }
}

/// Elementwise standard deviations matching a covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMatrix<T: Real> {
    n_modes: usize,
    sigma: DMatrix<T>,
}

impl<T: Real> UncertaintyMatrix<T> {
    /// Wraps `sigma`; entries must be finite and non-negative. Strict
    /// positivity is required only where a routine divides by it.
    pub fn new(sigma: DMatrix<T>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() || !sigma.nrows().is_multiple_of(2) || sigma.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "uncertainty matrix must be square with even size, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if sigma.iter().any(|s| !(*s >= T::zero()) || !s.is_finite()) {
            return Err(Error::InvalidArgument("uncertainties must be finite and non-negative".into()));
        }
        Ok(Self {
            n_modes: sigma.nrows() / 2,
            sigma,
        })
    }

    pub fn uniform(n_modes: usize, value: T) -> Result<Self> {
        Self::new(DMatrix::from_element(2 * n_modes, 2 * n_modes, value))
    }

    pub fn zeros(n_modes: usize) -> Result<Self> {
        Self::uniform(n_modes, T::zero())
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.sigma
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.sigma[(row, col)]
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.sigma.iter().all(|s| *s > T::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.sigma.iter().all(|s| *s == T::zero())
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            n_modes: self.n_modes,
            sigma: &self.sigma * factor,
        }
    }

    /// Restriction to the given mode positions, like [`crate::gaussian::partial_trace`].
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        let n = self.n_modes;
        if let Some(&bad) = keep.iter().find(|&&k| k >= n) {
            return Err(Error::InvalidArgument(format!("mode position {bad} out of range for {n} modes")));
        }
        let k = keep.len();
        let index = |i: usize| if i < k { keep[i] } else { n + keep[i - k] };
        Self::new(DMatrix::from_fn(2 * k, 2 * k, |r, c| self.sigma[(index(r), index(c))]))
    }

    /// Uncertainties after rotating mode `i` by `angles[i]`, propagated
    /// linearly assuming independent element errors.
    pub fn rotate(&self, angles: &[T]) -> Result<Self> {
        let n = self.n_modes;
        if angles.len() != n {
            return Err(Error::DimensionMismatch(format!("{} angles for {n} modes", angles.len())));
        }
        let mut var = self.sigma.map(|s| s * s);
        for (i, &theta) in angles.iter().enumerate() {
            let (s, c) = theta.sin_cos();
            let (c2, s2) = (c * c, s * s);
            let (xi, pi) = (i, n + i);
            for col in 0..2 * n {
                let (a, b) = (var[(xi, col)], var[(pi, col)]);
                var[(xi, col)] = c2 * a + s2 * b;
                var[(pi, col)] = s2 * a + c2 * b;
            }
            for row in 0..2 * n {
                let (a, b) = (var[(row, xi)], var[(row, pi)]);
                var[(row, xi)] = c2 * a + s2 * b;
                var[(row, pi)] = s2 * a + c2 * b;
            }
        }
        Self::new(var.map(|v| v.sqrt()))
    }
}

/// Converts a raw `V^2` covariance into vacuum units:
/// `V_nm = C_nm / (sqrt(f_n f_m) Z_c h B / 2)`.
pub fn normalize_covariance(raw: &RawCovariance) -> Result<CovarianceMatrix<f64>> {
    raw.validate()?;
    CovarianceMatrix::symmetrize(raw.data.component_div(&raw.normalization()))
}

/// Applies the same normalization to raw `V^2` uncertainties.
pub fn normalize_uncertainty(raw: &RawCovariance, sigma_raw: &DMatrix<f64>) -> Result<UncertaintyMatrix<f64>> {
    raw.validate()?;
    if sigma_raw.shape() != raw.data.shape() {
        return Err(Error::DimensionMismatch("uncertainty and covariance shapes differ".into()));
    }
    UncertaintyMatrix::new(sigma_raw.component_div(&raw.normalization()))
}

/// Inverse of [`normalize_covariance`]: vacuum units back to `V^2`.
pub fn denormalize_covariance(
    v: &CovarianceMatrix<f64>,
    frequencies: &[f64],
    bandwidth: f64,
    impedance: f64,
) -> Result<RawCovariance> {
    if frequencies.len() != v.n_modes() {
        return Err(Error::DimensionMismatch(format!(
            "{} frequencies for {} modes",
            frequencies.len(),
            v.n_modes()
        )));
    }
    let probe = RawCovariance {
        data: DMatrix::identity(v.dim(), v.dim()),
        frequencies: frequencies.to_vec(),
        bandwidth,
        impedance,
    };
    probe.validate()?;
    let data = v.matrix().component_mul(&probe.normalization());
    RawCovariance::new(data, frequencies.to_vec(), bandwidth, impedance)
}

fn check_table<T: Real>(n_modes: usize, table: &[CalibrationEntry]) -> Result<()> {
    if table.len() != n_modes {
        return Err(Error::DimensionMismatch(format!(
            "{} calibration entries for {n_modes} modes",
            table.len()
        )));
    }
    for e in table {
        if !(e.gain >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mode {}: gain {} must be at least 1 to invert the amplifier channel",
                e.mode_index, e.gain
            )));
        }
        if !(e.added_photons >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mode {}: added photons must be non-negative",
                e.mode_index
            )));
        }
    }
    let _ = T::zero();
    Ok(())
}

fn channel<T: Real>(n_modes: usize, table: &[CalibrationEntry]) -> (Vec<T>, Vec<T>) {
    let idx = |i: usize| i % n_modes;
    let gains = (0..2 * n_modes).map(|i| T::lit(table[idx(i)].gain)).collect();
    let noise = (0..2 * n_modes)
        .map(|i| {
            let e = &table[idx(i)];
            T::lit((e.gain - 1.0) * (2.0 * e.added_photons + 1.0))
        })
        .collect();
    (gains, noise)
}

/// Forward amplifier channel `T V T^T + N`; `table[i]` belongs to mode position `i`.
pub fn amplify<T: Real>(v: &CovarianceMatrix<T>, table: &[CalibrationEntry]) -> Result<CovarianceMatrix<T>> {
    check_table::<T>(v.n_modes(), table)?;
    let (gains, noise) = channel::<T>(v.n_modes(), table);
    let dim = v.dim();
    let mut out = DMatrix::from_fn(dim, dim, |r, c| (gains[r] * gains[c]).sqrt() * v.get(r, c));
    for i in 0..dim {
        out[(i, i)] += noise[i];
    }
    Ok(CovarianceMatrix::from_parts_unchecked(v.n_modes(), out))
}

/// Inverse channel `T^-1 (V_meas - N) T^-T`.
pub fn deamplify<T: Real>(v_meas: &CovarianceMatrix<T>, table: &[CalibrationEntry]) -> Result<CovarianceMatrix<T>> {
    check_table::<T>(v_meas.n_modes(), table)?;
    let (gains, noise) = channel::<T>(v_meas.n_modes(), table);
    let dim = v_meas.dim();
    let out = DMatrix::from_fn(dim, dim, |r, c| {
        let shifted = if r == c { v_meas.get(r, c) - noise[r] } else { v_meas.get(r, c) };
        shifted / (gains[r] * gains[c]).sqrt()
    });
    Ok(CovarianceMatrix::from_parts_unchecked(v_meas.n_modes(), out))
}

/// Uncertainty of the deamplified matrix together with a flag telling
/// whether any diagonal variance had to be clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedErrors<T: Real> {
    pub sigma: UncertaintyMatrix<T>,
    /// Diagonal positions where the covariance term drove the variance
    /// negative and it was replaced by the sum of the squared terms.
    pub clamped: Vec<usize>,
}

/// Large-gain error propagation through the inverse channel.
///
/// Diagonal elements:
/// `(s_G V_nn / G^2)^2 + (2 s_nbar)^2 + 4 V_nn s_Gnbar / G^2 + (s_V / G)^2`.
/// Off-diagonal elements between different modes:
/// `(s_Gn V_nm / (2 sqrt(G_n^3 G_m)))^2 + (s_Gm V_nm / (2 sqrt(G_m^3 G_n)))^2 + (s_V / sqrt(G_n G_m))^2`.
/// The x-p element of a single mode depends on one gain only:
/// `(s_G V / G^2)^2 + (s_V / G)^2`.
pub fn propagate_errors<T: Real>(
    v_meas: &CovarianceMatrix<T>,
    sigma_meas: &UncertaintyMatrix<T>,
    table: &[CalibrationEntry],
) -> Result<PropagatedErrors<T>> {
    let n = v_meas.n_modes();
    if sigma_meas.n_modes() != n {
        return Err(Error::DimensionMismatch(format!(
            "uncertainty matrix has {} modes, covariance has {n}",
            sigma_meas.n_modes()
        )));
    }
    check_table::<T>(n, table)?;
    let dim = 2 * n;
    let mut clamped = Vec::new();
    let mut sigma = DMatrix::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            let (a, b) = (&table[r % n], &table[c % n]);
            let v = v_meas.get(r, c).to_f64_lossy();
            let s_v = sigma_meas.get(r, c).to_f64_lossy();
            let var = if r == c {
                let g2 = a.gain * a.gain;
                let squares = (a.sigma_gain() * v / g2).powi(2)
                    + (2.0 * a.sigma_added_photons()).powi(2)
                    + (s_v / a.gain).powi(2);
                let total = squares + 4.0 * v * a.cov_gain_added_photons() / g2;
                if total < 0.0 {
                    clamped.push(r);
                    squares
                } else {
                    total
                }
            } else if r % n == c % n {
                // x and p of one mode share a single gain error
                (a.sigma_gain() * v / (a.gain * a.gain)).powi(2) + (s_v / a.gain).powi(2)
            } else {
                (a.sigma_gain() * v / (2.0 * (a.gain.powi(3) * b.gain).sqrt())).powi(2)
                    + (b.sigma_gain() * v / (2.0 * (b.gain.powi(3) * a.gain).sqrt())).powi(2)
                    + (s_v / (a.gain * b.gain).sqrt()).powi(2)
            };
            sigma[(r, c)] = T::lit(var.sqrt());
        }
    }
    if !clamped.is_empty() {
        log::warn!(
            "error propagation: negative variance on {} diagonal element(s), clamped to the squared terms",
            clamped.len()
        );
    }
    Ok(PropagatedErrors {
        sigma: UncertaintyMatrix::new(sigma)?,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::vacuum;
    use crate::random::random_physical;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entry(i: i64, gain: f64, nbar: f64) -> CalibrationEntry {
        CalibrationEntry::exact(i, 4.2e9, gain, nbar)
    }

    #[test]
    fn vacuum_level_normalizes_to_one() {
        let h = crate::calibration::PLANCK;
        let f = [4.1e9, 4.3e9];
        let mut data = DMatrix::zeros(4, 4);
        for i in 0..4 {
            data[(i, i)] = 0.5 * h * f[i % 2] * 50.0 * 1e3;
        }
        let raw = RawCovariance::new(data.clone(), f.to_vec(), 1e3, 50.0).unwrap();
        let v = normalize_covariance(&raw).unwrap();
        assert!((v.matrix() - DMatrix::<f64>::identity(4, 4)).norm() < 1e-12);
        let quad = RawCovariance::new(data * 4.0, f.to_vec(), 1e3, 50.0).unwrap();
        assert!((normalize_covariance(&quad).unwrap().matrix() - DMatrix::<f64>::identity(4, 4) * 4.0).norm() < 1e-12);
        let back = denormalize_covariance(&v, &f, 1e3, 50.0).unwrap();
        assert!((back.data - raw.data).norm() < 1e-40);
        assert!(RawCovariance::new(DMatrix::identity(4, 4), vec![0.0, 1e9], 1e3, 50.0).is_err());
    }

    #[test]
    fn single_mode_roundtrip() {
        let table = [entry(0, 100.0, 10.0)];
        let noise = 21.0;
        let meas = CovarianceMatrix::<f64>::scaled_identity(1, 100.0 * (1.0 + noise) - noise).unwrap();
        let v = deamplify(&meas, &table).unwrap();
        assert!((v.matrix() - DMatrix::<f64>::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn unit_gain_is_identity_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_physical::<f64, _>(2, 0.5, 0.5, &mut rng);
        let table = [entry(0, 1.0, 3.0), entry(1, 1.0, 7.0)];
        assert_eq!(deamplify(&v, &table).unwrap(), v);
        assert!(deamplify(&v, &[entry(0, 0.5, 1.0), entry(1, 2.0, 1.0)]).is_err());
        assert!(deamplify(&v, &table[..1]).is_err());
    }

    #[test]
    fn zero_calibration_error_leaves_measurement_branch() {
        let table = [entry(0, 1e4, 5.0), entry(1, 4e4, 8.0)];
        let v = amplify(&vacuum::<f64>(2).unwrap(), &table).unwrap();
        let sigma = UncertaintyMatrix::uniform(2, 3.0).unwrap();
        let out = propagate_errors(&v, &sigma, &table).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expected = 3.0 / (table[r % 2].gain * table[c % 2].gain).sqrt();
                assert!((out.sigma.get(r, c) - expected).abs() < 1e-15 * 1e3);
            }
        }
        assert!(out.clamped.is_empty());
    }

    #[test]
    fn off_diagonal_depends_only_on_gain_errors() {
        let mut table = [entry(0, 1e4, 5.0), entry(1, 4e4, 8.0)];
        table[0].covariance = [[100.0, 0.0], [0.0, 0.0]];
        table[1].covariance = [[400.0, 0.0], [0.0, 0.0]];
        let v = CovarianceMatrix::from_row_slice(2, &[
            5e4, 2e4, 0.0, 0.0, //
            2e4, 9e4, 0.0, 0.0, //
            0.0, 0.0, 5e4, -2e4, //
            0.0, 0.0, -2e4, 9e4,
        ])
        .unwrap();
        let out = propagate_errors(&v, &UncertaintyMatrix::zeros(2).unwrap(), &table).unwrap();
        let (g0, g1) = (1e4f64, 4e4f64);
        let expected = ((10.0 * 2e4 / (2.0 * (g0.powi(3) * g1).sqrt())).powi(2)
            + (20.0 * 2e4 / (2.0 * (g1.powi(3) * g0).sqrt())).powi(2))
        .sqrt();
        assert!((out.sigma.get(0, 1) - expected).abs() < 1e-12 * expected);
        assert_eq!(out.sigma.get(0, 2), 0.0);
    }

    #[test]
    fn negative_cross_term_is_clamped() {
        let mut table = [entry(0, 1e4, 5.0)];
        // correlation beyond -1: only reachable with an inconsistent table
        table[0].covariance = [[1e6, -5000.0], [-5000.0, 1.0]];
        let v = CovarianceMatrix::<f64>::scaled_identity(1, 1e6).unwrap();
        let out = propagate_errors(&v, &UncertaintyMatrix::zeros(1).unwrap(), &table).unwrap();
        assert_eq!(out.clamped, vec![0, 1]);
        let squares = (1e3 * 1e6 / 1e8f64).powi(2) + 4.0;
        assert!((out.sigma.get(0, 0) - squares.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn uncertainty_rotation_by_quarter_turn_swaps_blocks() {
        let sigma = UncertaintyMatrix::new(DMatrix::from_fn(4, 4, |r, c| (1 + r * 4 + c) as f64)).unwrap();
        let rotated = sigma.rotate(&[std::f64::consts::FRAC_PI_2, 0.0]).unwrap();
        assert!((rotated.get(0, 0) - sigma.get(2, 2)).abs() < 1e-12);
        assert!((rotated.get(2, 1) - sigma.get(0, 1)).abs() < 1e-12);
        let restricted = sigma.restrict(&[1]).unwrap();
        assert_eq!(restricted.get(0, 1), sigma.get(1, 3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn deamplify_inverts_amplify(
            seed in any::<u64>(),
            n in 1usize..5,
            log_gain in proptest::collection::vec(1.0f64..7.0, 5),
            nbar in proptest::collection::vec(0.0f64..100.0, 5),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_physical::<f64, _>(n, 0.8, 1.0, &mut rng);
            let table: Vec<_> = (0..n).map(|i| entry(i as i64, 10f64.powf(log_gain[i]), nbar[i])).collect();
            let back = deamplify(&amplify(&v, &table).unwrap(), &table).unwrap();
            let err = (back.matrix() - v.matrix()).norm() / v.matrix().norm();
            prop_assert!(err < 1e-9, "relative error {err:e}");
        }
    }
}
