//! Frequency-domain input-output model of a flux-pumped parametric resonator.
//!
//! For every comb mode `n` the Langevin equation reads
//! `chi_n^-1 a_n - sum_p mu_p a^dag_{idler_p(n)} = -sqrt(kappa) a_in,n` with
//! `chi_n = 1 / (kappa/2 - i (w_n - w_r))`. Stacking `(a, a^dag)` gives
//! `M a = -sqrt(kappa) a_in`, hence `a_out = a_in + sqrt(kappa) a = S a_in`
//! with `S = I - kappa M^-1`. Conjugating `S` with
//! `K = [[I, I], [-iI, iI]]` yields the real quadrature map `A`, and
//! `V_out = A V_in A^T`.

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::comb::CombSpec;
use crate::error::{Error, Result};
use crate::gaussian::{symmetric_part, vacuum, CovarianceMatrix};
use crate::scalar::Real;

/// Condition number of `M` above which the solve is refused.
pub const MAX_CONDITION_NUMBER: f64 = 1e10;

/// Relative imaginary residue tolerated in `K S K^-1`.
pub const QUADRATURE_RESIDUE_TOLERANCE: f64 = 1e-9;

/// One pump tone at `2 w_r + detuning` with effective amplitude `mu` (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pump<T: Real> {
    pub mu: Complex<T>,
    pub detuning: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PumpConfig<T: Real> {
    /// Renormalized resonance (rad/s).
    pub omega_r: T,
    /// External decay rate (rad/s).
    pub kappa: T,
    pub pumps: Vec<Pump<T>>,
}

impl<T: Real> PumpConfig<T> {
    pub fn new(omega_r: T, kappa: T, pumps: Vec<Pump<T>>) -> Result<Self> {
        let config = Self { omega_r, kappa, pumps };
        config.validate()?;
        Ok(config)
    }

    /// Two tones at `2 w_r -+ big_delta / 2`.
    pub fn bichromatic(omega_r: T, kappa: T, mu1: Complex<T>, mu2: Complex<T>, big_delta: T) -> Result<Self> {
        let half = big_delta * T::lit(0.5);
        Self::new(
            omega_r,
            kappa,
            vec![
                Pump { mu: mu1, detuning: -half },
                Pump { mu: mu2, detuning: half },
            ],
        )
    }

    /// One tone at `2 w_r + detuning`.
    pub fn monochromatic(omega_r: T, kappa: T, mu: Complex<T>, detuning: T) -> Result<Self> {
        Self::new(omega_r, kappa, vec![Pump { mu, detuning }])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > T::zero()) {
            return Err(Error::InvalidArgument(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.omega_r > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "resonance frequency must be positive, got {}",
                self.omega_r
            )));
        }
        for p in &self.pumps {
            if p.detuning.abs() > self.omega_r * T::lit(0.1) {
                log::warn!(
                    "pump detuning {} rad/s exceeds a tenth of the resonance; the rotating-wave model is questionable",
                    p.detuning
                );
            }
        }
        Ok(())
    }

    pub fn pump_frequency(&self, index: usize) -> T {
        T::lit(2.0) * self.omega_r + self.pumps[index].detuning
    }

    /// Comb matching the pumps. Two pumps fix centre and spacing; one pump
    /// fixes the centre at half its frequency and needs `spacing`.
    pub fn comb_spec(&self, window: ModeWindow, spacing: Option<T>) -> Result<CombSpec<T>> {
        match (self.pumps.len(), spacing) {
            (2, None) => {
                let (a, b) = (self.pump_frequency(0), self.pump_frequency(1));
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                CombSpec::from_pumps(lo, hi, window.half_width)
            }
            (0, None) => CombSpec::new(self.omega_r, self.kappa * T::lit(0.01), window.half_width),
            (_, Some(delta)) => {
                let sum = (0..self.pumps.len()).fold(T::zero(), |acc, i| acc + self.pump_frequency(i));
                let centre = if self.pumps.is_empty() {
                    self.omega_r
                } else {
                    sum / T::lit(2.0 * self.pumps.len() as f64)
                };
                CombSpec::new(centre, delta, window.half_width)
            }
            (n, None) => Err(Error::InvalidArgument(format!(
                "a comb spacing is required for {n} pump tone(s)"
            ))),
        }
    }

    /// Index offset `k` with `w_p = 2 w_0 + k delta`; the idler of mode `n` is `k - n`.
    pub fn idler_offset(&self, spec: &CombSpec<T>, index: usize) -> Result<i64> {
        let k = (self.pump_frequency(index) - T::lit(2.0) * spec.omega_0) / spec.delta;
        let rounded = k.round();
        if (k - rounded).abs() > T::lit(1e-6) {
            return Err(Error::InvalidArgument(format!(
                "pump {} does not map comb modes onto the comb (offset {k} spacings)",
                index + 1
            )));
        }
        Ok(rounded.to_f64_lossy() as i64)
    }
}

/// Truncation of the infinite comb to indices `-half_width ..= half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeWindow {
    pub half_width: usize,
}

impl ModeWindow {
    pub fn new(half_width: usize) -> Result<Self> {
        if half_width < 2 {
            return Err(Error::InvalidArgument(format!("window half-width must be at least 2, got {half_width}")));
        }
        Ok(Self { half_width })
    }

    pub fn n_modes(&self) -> usize {
        2 * self.half_width + 1
    }
}

/// `chi_n = 1 / (kappa/2 - i (w_n - w_r))`.
pub fn susceptibility<T: Real>(config: &PumpConfig<T>, spec: &CombSpec<T>, n: i64) -> Complex<T> {
    inverse_susceptibility(config, spec, n).inv()
}

fn inverse_susceptibility<T: Real>(config: &PumpConfig<T>, spec: &CombSpec<T>, n: i64) -> Complex<T> {
    Complex::new(config.kappa * T::lit(0.5), -(spec.frequency(n) - config.omega_r))
}

/// Mode-coupling matrix `M` over the basis `(a_{-W..W}, a^dag_{-W..W})`.
/// Couplings to idlers outside the window are dropped.
pub fn build_mode_matrix<T: Real>(config: &PumpConfig<T>, spec: &CombSpec<T>) -> Result<DMatrix<Complex<T>>> {
    let n_modes = spec.n_modes();
    let offsets: Vec<i64> = (0..config.pumps.len())
        .map(|p| config.idler_offset(spec, p))
        .collect::<Result<_>>()?;
    let mut m = DMatrix::from_element(2 * n_modes, 2 * n_modes, Complex::new(T::zero(), T::zero()));
    for (row, n) in spec.indices().enumerate() {
        let inv_chi = inverse_susceptibility(config, spec, n);
        m[(row, row)] = inv_chi;
        m[(n_modes + row, n_modes + row)] = inv_chi.conj();
        for (pump, &k) in config.pumps.iter().zip(&offsets) {
            if let Some(col) = spec.position(k - n) {
                m[(row, n_modes + col)] -= pump.mu;
                m[(n_modes + row, col)] -= pump.mu.conj();
            }
        }
    }
    Ok(m)
}

/// Smallest and largest singular values of `M`.
pub fn singular_value_range<T: Real>(m: &DMatrix<Complex<T>>) -> (T, T) {
    let sv = m.clone().singular_values();
    let lo = sv.iter().copied().fold(T::lit(f64::INFINITY), |a, b| if b < a { b } else { a });
    let hi = sv.iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a });
    (lo, hi)
}

/// Smallest real part among the eigenvalues of `M`. The linear system is
/// stable (below threshold) iff this is positive, since `da/dt = -M a + ...`.
pub fn stability_margin<T: Real>(m: &DMatrix<Complex<T>>) -> T {
    let schur = m.clone().schur();
    let t = schur.unpack().1;
    (0..t.nrows())
        .map(|i| t[(i, i)].re)
        .fold(T::lit(f64::INFINITY), |a, b| if b < a { b } else { a })
}

/// `S = I - kappa M^-1`, refusing unstable or ill-conditioned `M`.
pub fn scattering_matrix<T: Real>(m: &DMatrix<Complex<T>>, kappa: T) -> Result<DMatrix<Complex<T>>> {
    let (lo, hi) = singular_value_range(m);
    let condition = if lo > T::zero() { hi / lo } else { T::lit(f64::INFINITY) };
    if !(condition < T::lit(MAX_CONDITION_NUMBER)) {
        return Err(Error::AboveThreshold {
            smallest_singular_value: lo.to_f64_lossy(),
            condition: condition.to_f64_lossy(),
        });
    }
    let margin = stability_margin(m);
    if !(margin > T::zero()) {
        return Err(Error::Unstable {
            growth_rate: (-margin).to_f64_lossy(),
        });
    }
    let inverse = m.clone().lu().try_inverse().ok_or(Error::AboveThreshold {
        smallest_singular_value: lo.to_f64_lossy(),
        condition: condition.to_f64_lossy(),
    })?;
    let dim = m.nrows();
    let kappa = Complex::new(kappa, T::zero());
    Ok(DMatrix::identity(dim, dim) - inverse * kappa)
}

/// Real quadrature map `A = K S K^-1`.
pub fn quadrature_transform<T: Real>(s: &DMatrix<Complex<T>>) -> Result<DMatrix<T>> {
    let dim = s.nrows();
    if !dim.is_multiple_of(2) || s.ncols() != dim {
        return Err(Error::DimensionMismatch(format!("scattering matrix is {}x{}", dim, s.ncols())));
    }
    let n = dim / 2;
    let zero = Complex::new(T::zero(), T::zero());
    let one = Complex::new(T::one(), T::zero());
    let i = Complex::new(T::zero(), T::one());
    let half = T::lit(0.5);
    let mut k = DMatrix::from_element(dim, dim, zero);
    let mut k_inv = DMatrix::from_element(dim, dim, zero);
    for j in 0..n {
        k[(j, j)] = one;
        k[(j, n + j)] = one;
        k[(n + j, j)] = -i;
        k[(n + j, n + j)] = i;
        k_inv[(j, j)] = one * half;
        k_inv[(j, n + j)] = i * half;
        k_inv[(n + j, j)] = one * half;
        k_inv[(n + j, n + j)] = -i * half;
    }
    let a = k * s * k_inv;
    let scale = a.iter().map(|z| z.norm_sqr()).fold(T::zero(), |acc, x| acc + x).sqrt();
    let residue = a.iter().map(|z| z.im.abs()).fold(T::zero(), |acc, x| if x > acc { x } else { acc });
    let tol = T::lit(QUADRATURE_RESIDUE_TOLERANCE).max(T::lit(1e3) * <T as Real>::epsilon());
    if residue > tol * scale.max(T::one()) {
        return Err(Error::ConjugationSymmetry {
            residue: residue.to_f64_lossy(),
        });
    }
    Ok(a.map(|z| z.re))
}

/// Full chain `config -> M -> S -> A`.
pub fn symplectic_map<T: Real>(config: &PumpConfig<T>, spec: &CombSpec<T>) -> Result<DMatrix<T>> {
    let m = build_mode_matrix(config, spec)?;
    let s = scattering_matrix(&m, config.kappa)?;
    quadrature_transform(&s)
}

/// `V_out = A V_in A^T`, symmetrized.
pub fn output_covariance<T: Real>(
    config: &PumpConfig<T>,
    spec: &CombSpec<T>,
    v_in: &CovarianceMatrix<T>,
) -> Result<CovarianceMatrix<T>> {
    if v_in.n_modes() != spec.n_modes() {
        return Err(Error::DimensionMismatch(format!(
            "input state has {} modes, window has {}",
            v_in.n_modes(),
            spec.n_modes()
        )));
    }
    let a = symplectic_map(config, spec)?;
    let v = &a * v_in.matrix() * a.transpose();
    CovarianceMatrix::symmetrize(symmetric_part(v))
}

/// Output state for vacuum input.
pub fn simulate<T: Real>(config: &PumpConfig<T>, spec: &CombSpec<T>) -> Result<CovarianceMatrix<T>> {
    output_covariance(config, spec, &vacuum(spec.n_modes())?)
}

/// Positions in the window of the comb indices `indices`.
pub fn positions<T: Real>(spec: &CombSpec<T>, indices: &[i64]) -> Result<Vec<usize>> {
    indices
        .iter()
        .map(|&n| {
            spec.position(n)
                .ok_or_else(|| Error::InvalidArgument(format!("mode {n} outside the simulated window")))
        })
        .collect()
}
