//! Planck-spectroscopy calibration of the amplification chain.
//!
//! A matched resistor at temperature `T` emits `P = (h f / 2) coth(h f / 2 k T)`
//! per unit bandwidth. After a chain of gain `G` and added noise `nbar`, the
//! voltage variance in bandwidth `B` across `R` is
//! `<V^2> = 4 B G h f R [coth(h f / 2 k T) / 2 + (1 + 2 nbar) / 2]`.
//! Fitting this against temperature yields `G`, `nbar` and their covariance.
//!
//! This module works in `f64` only: the physical constants and the tiny
//! voltage variances are outside what `f32` fits resolve reliably.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

/// Planck constant (J s), exact SI value.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant (J/K), exact SI value.
pub const BOLTZMANN: f64 = 1.380_649e-23;

const MAX_ITERATIONS: usize = 200;
const MAX_HALVINGS: usize = 40;

fn coth(x: f64) -> f64 {
    1.0 / x.tanh()
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {value}")))
    }
}

/// Noise power spectral density of a matched resistor (W/Hz).
pub fn planck_psd(frequency: f64, temperature: f64) -> Result<f64> {
    check_positive("frequency", frequency)?;
    check_positive("temperature", temperature)?;
    let quantum = PLANCK * frequency / 2.0;
    Ok(quantum * coth(quantum / (BOLTZMANN * temperature)))
}

/// Photon-number bracket `coth(h f / 2 k T) / 2 + (1 + 2 nbar) / 2`.
fn photon_bracket(frequency: f64, temperature: f64, added_photons: f64) -> f64 {
    let x = PLANCK * frequency / (2.0 * BOLTZMANN * temperature);
    0.5 * coth(x) + 0.5 * (1.0 + 2.0 * added_photons)
}

/// Expected voltage variance (V^2) at the chain output.
pub fn expected_variance(
    frequency: f64,
    temperature: f64,
    gain: f64,
    added_photons: f64,
    bandwidth: f64,
    impedance: f64,
) -> Result<f64> {
    check_positive("frequency", frequency)?;
    check_positive("temperature", temperature)?;
    check_positive("gain", gain)?;
    check_positive("bandwidth", bandwidth)?;
    check_positive("impedance", impedance)?;
    if !(added_photons >= 0.0) {
        return Err(Error::InvalidArgument(format!("added photons must be non-negative, got {added_photons}")));
    }
    Ok(4.0 * bandwidth * gain * PLANCK * frequency * impedance * photon_bracket(frequency, temperature, added_photons))
}

/// Noise-versus-temperature data at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanckSweep {
    /// Hz.
    pub frequency: f64,
    /// K, strictly positive and ascending.
    pub temperatures: Vec<f64>,
    /// Measured `<V^2>` in V^2.
    pub variances: Vec<f64>,
    /// Optional inverse-variance weights, one per point.
    pub weights: Option<Vec<f64>>,
    /// Measurement bandwidth (Hz).
    pub bandwidth: f64,
    /// Source resistance (Ohm).
    pub impedance: f64,
}

impl PlanckSweep {
    pub fn new(
        frequency: f64,
        temperatures: Vec<f64>,
        variances: Vec<f64>,
        weights: Option<Vec<f64>>,
        bandwidth: f64,
        impedance: f64,
    ) -> Result<Self> {
        check_positive("frequency", frequency)?;
        check_positive("bandwidth", bandwidth)?;
        check_positive("impedance", impedance)?;
        if temperatures.len() != variances.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} temperatures but {} variances",
                temperatures.len(),
                variances.len()
            )));
        }
        if let Some(w) = &weights {
            if w.len() != temperatures.len() || w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidArgument("weights must be positive, one per point".into()));
            }
        }
        if temperatures.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidArgument("temperatures must be strictly positive".into()));
        }
        if temperatures.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("temperatures must be strictly ascending".into()));
        }
        if variances.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("variances must be finite".into()));
        }
        Ok(Self {
            frequency,
            temperatures,
            variances,
            weights,
            bandwidth,
            impedance,
        })
    }

    pub fn len(&self) -> usize {
        self.temperatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperatures.is_empty()
    }
}

/// Gain, added noise and their 2x2 parameter covariance at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationEntry {
    pub mode_index: i64,
    pub frequency: f64,
    pub gain: f64,
    pub added_photons: f64,
    /// `[[var G, cov(G, nbar)], [cov(G, nbar), var nbar]]`.
    pub covariance: [[f64; 2]; 2],
}

impl CalibrationEntry {
    pub fn exact(mode_index: i64, frequency: f64, gain: f64, added_photons: f64) -> Self {
        Self {
            mode_index,
            frequency,
            gain,
            added_photons,
            covariance: [[0.0; 2]; 2],
        }
    }

    pub fn sigma_gain(&self) -> f64 {
        self.covariance[0][0].max(0.0).sqrt()
    }

    pub fn sigma_added_photons(&self) -> f64 {
        self.covariance[1][1].max(0.0).sqrt()
    }

    pub fn cov_gain_added_photons(&self) -> f64 {
        self.covariance[0][1]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0) {
            return Err(Error::InvalidArgument(format!("mode {}: gain must be positive", self.mode_index)));
        }
        if !(self.added_photons >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mode {}: added photons must be non-negative",
                self.mode_index
            )));
        }
        let c = &self.covariance;
        if (c[0][1] - c[1][0]).abs() > 1e-12 * (c[0][0].abs() + c[1][1].abs()).max(f64::MIN_POSITIVE)
            || c[0][0] < 0.0
            || c[1][1] < 0.0
            || c[0][1] * c[0][1] > c[0][0] * c[1][1] * (1.0 + 1e-9)
        {
            return Err(Error::InvalidArgument(format!(
                "mode {}: parameter covariance must be symmetric positive semidefinite",
                self.mode_index
            )));
        }
        Ok(())
    }
}

/// One calibration entry per analyzed comb mode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationTable {
    pub entries: Vec<CalibrationEntry>,
}

impl CalibrationTable {
    pub fn new(entries: Vec<CalibrationEntry>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            e.validate()?;
            if !seen.insert(e.mode_index) {
                return Err(Error::InvalidArgument(format!("duplicate calibration for mode {}", e.mode_index)));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, mode_index: i64) -> Option<&CalibrationEntry> {
        self.entries.iter().find(|e| e.mode_index == mode_index)
    }

    /// Entries for `modes`, in that order.
    pub fn select(&self, modes: &[i64]) -> Result<Vec<CalibrationEntry>> {
        modes
            .iter()
            .map(|&m| {
                self.get(m)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("no calibration entry for mode {m}")))
            })
            .collect()
    }
}

/// Result of [`fit_calibration`] with fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFit {
    pub entry: CalibrationEntry,
    pub iterations: usize,
    /// Weighted residual sum of squares in units of `(4 B h f R)^2`.
    pub residual_sum_squares: f64,
    /// Residuals `measured - model` in V^2.
    pub residuals: Vec<f64>,
}

struct Problem {
    brackets: Vec<f64>,
    targets: Vec<f64>,
    weights: Vec<f64>,
}

impl Problem {
    fn model(&self, i: usize, gain: f64, nbar: f64) -> f64 {
        gain * (self.brackets[i] + nbar)
    }

    fn rss(&self, gain: f64, nbar: f64) -> f64 {
        (0..self.targets.len())
            .map(|i| self.weights[i] * (self.targets[i] - self.model(i, gain, nbar)).powi(2))
            .sum()
    }

    /// Normal matrix `J^T W J` and gradient term `J^T W r` at `(gain, nbar)`.
    fn normal_equations(&self, gain: f64, nbar: f64) -> (Matrix2<f64>, Vector2<f64>) {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for i in 0..self.targets.len() {
            let j = Vector2::new(self.brackets[i] + nbar, gain);
            let r = self.targets[i] - self.model(i, gain, nbar);
            jtj += j * j.transpose() * self.weights[i];
            jtr += j * (r * self.weights[i]);
        }
        (jtj, jtr)
    }
}

/// Initial guess: `G` from the classical-regime slope `d<V^2>/dT = 4 B G R k`,
/// `nbar` from the low-temperature plateau `4 B G h f R (1 + nbar)`.
fn initial_guess(sweep: &PlanckSweep, problem: &Problem) -> (f64, f64) {
    let hf_over_k = PLANCK * sweep.frequency / BOLTZMANN;
    let classical: Vec<usize> = (0..sweep.len()).filter(|&i| sweep.temperatures[i] > hf_over_k).collect();
    let slope = if classical.len() >= 2 {
        let t: Vec<f64> = classical.iter().map(|&i| sweep.temperatures[i]).collect();
        let y: Vec<f64> = classical.iter().map(|&i| problem.targets[i]).collect();
        linear_slope(&t, &y) * hf_over_k
    } else {
        let x = problem.brackets.clone();
        linear_slope(&x, &problem.targets)
    };
    let gain = if slope > 0.0 && slope.is_finite() { slope } else { 1.0 };
    let plateau = problem.targets[0];
    let nbar = (plateau / gain - 1.0).max(0.0);
    (gain, nbar)
}

fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Weighted least-squares fit of `(G, nbar)` by damped Gauss-Newton with
/// step halving. The parameter covariance is the inverse normal matrix at the
/// optimum scaled by the residual variance `RSS / (n - 2)`.
pub fn fit_calibration(sweep: &PlanckSweep, mode_index: i64) -> Result<CalibrationFit> {
    if sweep.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "Planck fit needs at least 4 temperatures, got {}",
            sweep.len()
        )));
    }
    let (t_lo, t_hi) = (sweep.temperatures[0], sweep.temperatures[sweep.len() - 1]);
    if t_hi < 3.0 * t_lo {
        return Err(Error::InsufficientData(format!(
            "temperatures must span a factor of 3, got {t_lo} K to {t_hi} K"
        )));
    }

    // Work in units of 4 B h f R so the model is G * (bracket + nbar).
    let scale = 4.0 * sweep.bandwidth * PLANCK * sweep.frequency * sweep.impedance;
    let problem = Problem {
        brackets: sweep
            .temperatures
            .iter()
            .map(|&t| photon_bracket(sweep.frequency, t, 0.0))
            .collect(),
        targets: sweep.variances.iter().map(|v| v / scale).collect(),
        weights: match &sweep.weights {
            Some(w) => w.iter().map(|x| x * scale * scale).collect(),
            None => vec![1.0; sweep.len()],
        },
    };
    // normalize weights so they average to one
    let mean_w = problem.weights.iter().sum::<f64>() / sweep.len() as f64;
    let problem = Problem {
        weights: problem.weights.iter().map(|w| w / mean_w).collect(),
        ..problem
    };

    let (mut gain, mut nbar) = initial_guess(sweep, &problem);
    let mut rss = problem.rss(gain, nbar);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = problem.normal_equations(gain, nbar);
        let Some(step) = jtj.try_inverse().map(|inv| inv * jtr) else {
            return Err(Error::FitFailed(format!(
                "singular normal matrix at {} Hz (degenerate data)",
                sweep.frequency
            )));
        };
        let mut damping = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let (g, n) = (gain + damping * step[0], nbar + damping * step[1]);
            let trial = problem.rss(g, n);
            if g > 0.0 && trial <= rss {
                let small_step = (damping * step[0]).abs() <= 1e-13 * g.abs()
                    && (damping * step[1]).abs() <= 1e-13 * (n.abs() + 1.0);
                gain = g;
                nbar = n;
                let improvement = rss - trial;
                rss = trial;
                accepted = true;
                if small_step || improvement <= 1e-15 * rss.max(f64::MIN_POSITIVE) {
                    converged = true;
                }
                break;
            }
            damping *= 0.5;
        }
        if !accepted || converged {
            // no descent direction left: stationary point
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailed(format!(
            "no convergence after {MAX_ITERATIONS} iterations at {} Hz",
            sweep.frequency
        )));
    }
    if !(gain > 0.0) || !(nbar >= 0.0) || !gain.is_finite() || !nbar.is_finite() {
        return Err(Error::FitFailed(format!(
            "fit landed on unphysical parameters G = {gain:e}, nbar = {nbar:e} at {} Hz",
            sweep.frequency
        )));
    }

    let (jtj, _) = problem.normal_equations(gain, nbar);
    let correlation = jtj[(0, 1)] / (jtj[(0, 0)] * jtj[(1, 1)]).sqrt();
    if !(1.0 - correlation.abs() > 1e-12) {
        return Err(Error::FitFailed(format!(
            "gain and added noise are not separately identifiable at {} Hz (no temperature dependence resolved)",
            sweep.frequency
        )));
    }
    let inv = jtj
        .try_inverse()
        .ok_or_else(|| Error::FitFailed("singular normal matrix at optimum".into()))?;
    let dof = (sweep.len() - 2) as f64;
    let residual_variance = rss / dof;
    let cov = inv * residual_variance;
    let entry = CalibrationEntry {
        mode_index,
        frequency: sweep.frequency,
        gain,
        added_photons: nbar,
        covariance: [[cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)])], [0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]]],
    };
    let residuals = (0..sweep.len())
        .map(|i| (problem.targets[i] - problem.model(i, gain, nbar)) * scale)
        .collect();
    Ok(CalibrationFit {
        entry,
        iterations,
        residual_sum_squares: rss,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const B: f64 = 1e3;
    const R: f64 = 50.0;

    fn temperatures(n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.01 + (1.25 - 0.01) * i as f64 / (n - 1) as f64).collect()
    }

    fn synthetic(f: f64, gain: f64, nbar: f64, noise: f64, seed: u64) -> PlanckSweep {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 1.0).unwrap();
        let ts = temperatures(20);
        let vs = ts
            .iter()
            .map(|&t| expected_variance(f, t, gain, nbar, B, R).unwrap() * (1.0 + noise * dist.sample(&mut rng)))
            .collect();
        PlanckSweep::new(f, ts, vs, None, B, R).unwrap()
    }

    #[test]
    fn psd_limits() {
        let f = 4.19e9;
        let cold = planck_psd(f, 1e-4).unwrap();
        assert!((cold - PLANCK * f / 2.0).abs() / cold < 1e-12);
        assert!((cold - 1.388e-24).abs() < 1e-27);
        let t_unit = PLANCK * f / (2.0 * BOLTZMANN);
        let at_one = planck_psd(f, t_unit).unwrap();
        assert!((at_one / (PLANCK * f / 2.0) - 1.0f64 / 1.0f64.tanh()).abs() < 1e-12);
        assert!((at_one / (PLANCK * f / 2.0) - 1.3130352854993312).abs() < 1e-12);
        let hot = planck_psd(f, 1.25).unwrap();
        assert!((hot / (BOLTZMANN * 1.25) - 1.0).abs() < 0.01);
        assert!(planck_psd(0.0, 1.0).is_err());
        assert!(planck_psd(1e9, -1.0).is_err());
    }

    #[test]
    fn variance_limits_and_monotonicity() {
        let f = 4.3e9;
        let base = 4.0 * B * 1e5 * PLANCK * f * R;
        let cold = expected_variance(f, 1e-4, 1e5, 0.0, B, R).unwrap();
        assert!((cold / base - 1.0).abs() < 1e-12);
        let doubled = expected_variance(f, 0.3, 2e5, 3.0, B, R).unwrap();
        assert!((doubled / expected_variance(f, 0.3, 1e5, 3.0, B, R).unwrap() - 2.0).abs() < 1e-14);
        let mut prev = 0.0;
        for t in temperatures(30) {
            let v = expected_variance(f, t, 1e5, 3.0, B, R).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(
            expected_variance(f, 0.2, 1e5, 4.0, B, R).unwrap() > expected_variance(f, 0.2, 1e5, 3.0, B, R).unwrap()
        );
        assert!(expected_variance(f, 0.2, 1e5, -1.0, B, R).is_err());
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let sweep = synthetic(4.19e9, 5e5, 15.0, 0.0, 1);
        let fit = fit_calibration(&sweep, 0).unwrap();
        assert!((fit.entry.gain / 5e5 - 1.0).abs() < 1e-8, "{:?}", fit.entry);
        assert!((fit.entry.added_photons / 15.0 - 1.0).abs() < 1e-8);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-9 * sweep.variances[0]));
    }

    #[test]
    fn noisy_fit_recovers_parameters() {
        let sweep = synthetic(4.19e9, 5e5, 15.0, 0.01, 2);
        let fit = fit_calibration(&sweep, 3).unwrap();
        let e = fit.entry;
        assert_eq!(e.mode_index, 3);
        assert!((e.gain / 5e5 - 1.0).abs() < 0.02, "G = {}", e.gain);
        assert!((e.added_photons / 15.0 - 1.0).abs() < 0.02, "nbar = {}", e.added_photons);
        let c = e.covariance;
        assert!(c[0][0] > 0.0 && c[1][1] > 0.0);
        assert!(c[0][1].abs() <= e.sigma_gain() * e.sigma_added_photons() * (1.0 + 1e-12));
    }

    #[test]
    fn flat_data_does_not_crash() {
        let ts = temperatures(20);
        let vs = vec![1e-12; 20];
        let sweep = PlanckSweep::new(4.2e9, ts, vs, None, B, R).unwrap();
        match fit_calibration(&sweep, 0) {
            Err(Error::FitFailed(_)) => {}
            Ok(fit) => assert!(fit.entry.sigma_added_photons() > fit.entry.added_photons * 0.1),
            Err(other) => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn preconditions_are_enforced() {
        let short = PlanckSweep::new(4e9, vec![0.1, 0.2, 0.3], vec![1.0; 3], None, B, R).unwrap();
        assert!(matches!(fit_calibration(&short, 0), Err(Error::InsufficientData(_))));
        let narrow = PlanckSweep::new(4e9, vec![0.1, 0.12, 0.14, 0.16], vec![1.0; 4], None, B, R).unwrap();
        assert!(matches!(fit_calibration(&narrow, 0), Err(Error::InsufficientData(_))));
        assert!(PlanckSweep::new(4e9, vec![0.2, 0.1], vec![1.0; 2], None, B, R).is_err());
    }

    #[test]
    fn weighted_fit_uses_weights() {
        let clean = synthetic(4.3e9, 2e5, 8.0, 0.0, 0);
        let weights = clean.variances.iter().map(|v| 1.0 / (0.01 * v).powi(2)).collect();
        let sweep = PlanckSweep { weights: Some(weights), ..clean };
        let fit = fit_calibration(&sweep, 0).unwrap();
        assert!((fit.entry.gain / 2e5 - 1.0).abs() < 1e-8);
    }
}
