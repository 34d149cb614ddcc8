//! Covariance-matrix algebra for multimode Gaussian states.
//!
//! Quadratures are ordered `r = (x_1, ..., x_N, p_1, ..., p_N)` and the vacuum
//! has unit variance per quadrature, so `vacuum(n)` is the identity. A state
//! is physical when `V >= 0` and `V - i*Omega >= 0`; the Hermitian condition
//! is evaluated through its real embedding `[[V, Omega], [-Omega, V]]`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative Frobenius asymmetry above which a matrix is rejected.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Tolerance used when pairing the doubled moduli of `i*Omega*V`.
pub const SYMPLECTIC_PAIRING_TOLERANCE: f64 = 1e-8;

fn symmetry_tolerance<T: Real>() -> T {
    let floor = T::lit(SYMMETRY_TOLERANCE);
    let machine = T::lit(64.0) * <T as Real>::epsilon();
    if machine > floor {
        machine
    } else {
        floor
    }
}

/// Relative Frobenius norm of the antisymmetric part, `|M - M^T| / |M|`.
pub fn relative_asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let norm = m.norm();
    if norm == T::zero() {
        return T::zero();
    }
    (m - m.transpose()).norm() / norm
}

/// Symmetric `2N x 2N` covariance matrix in xxpp ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix<T: Real> {
    n_modes: usize,
    data: DMatrix<T>,
}

impl<T: Real> CovarianceMatrix<T> {
    /// Wraps `data`, rejecting non-square, odd-sized or asymmetric input.
    pub fn new(data: DMatrix<T>) -> Result<Self> {
        let n_modes = check_shape(&data)?;
        let asymmetry = relative_asymmetry(&data);
        let tolerance = symmetry_tolerance::<T>();
        if !(asymmetry <= tolerance) {
            return Err(Error::NotSymmetric {
                asymmetry: asymmetry.to_f64_lossy(),
                tolerance: tolerance.to_f64_lossy(),
            });
        }
        Ok(Self { n_modes, data })
    }

    /// Averages `data` with its transpose. This is the only route that
    /// accepts asymmetric input.
    pub fn symmetrize(data: DMatrix<T>) -> Result<Self> {
        let n_modes = check_shape(&data)?;
        let data = (&data + data.transpose()) * T::lit(0.5);
        Ok(Self { n_modes, data })
    }

    /// Builds from a row-major slice of `4 N^2` entries.
    pub fn from_row_slice(n_modes: usize, values: &[T]) -> Result<Self> {
        let dim = 2 * n_modes;
        if n_modes == 0 || values.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for {} modes, got {}",
                dim * dim,
                n_modes,
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, values))
    }

    /// `scale * I`; a thermal state with mean photon number `(scale - 1) / 2`.
    pub fn scaled_identity(n_modes: usize, scale: T) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidArgument("mode count must be at least 1".into()));
        }
        let dim = 2 * n_modes;
        Ok(Self {
            n_modes,
            data: DMatrix::identity(dim, dim) * scale,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dim(&self) -> usize {
        2 * self.n_modes
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[(row, col)]
    }

    /// Position-position block `V^{xx}` (the "II" block).
    pub fn xx_block(&self) -> DMatrix<T> {
        let n = self.n_modes;
        self.data.view((0, 0), (n, n)).into_owned()
    }

    /// Momentum-momentum block `V^{pp}` (the "QQ" block).
    pub fn pp_block(&self) -> DMatrix<T> {
        let n = self.n_modes;
        self.data.view((n, n), (n, n)).into_owned()
    }

    /// Cross block `V^{xp}`.
    pub fn xp_block(&self) -> DMatrix<T> {
        let n = self.n_modes;
        self.data.view((0, n), (n, n)).into_owned()
    }

    /// Frobenius norm of the full xp cross block.
    pub fn xp_norm(&self) -> T {
        self.data.view((0, self.n_modes), (self.n_modes, self.n_modes)).norm()
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<T> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                out.push(self.data[(r, c)]);
            }
        }
        out
    }

    /// Converts the scalar type through `f64`.
    pub fn cast<U: Real>(&self) -> CovarianceMatrix<U> {
        CovarianceMatrix {
            n_modes: self.n_modes,
            data: self.data.map(|v| U::lit(v.to_f64_lossy())),
        }
    }

    /// Real embedding `[[V, Omega], [-Omega, V]]` of the Hermitian matrix `V - i Omega`.
    pub fn uncertainty_embedding(&self) -> DMatrix<T> {
        uncertainty_embedding(&self.data)
    }

    pub(crate) fn from_parts_unchecked(n_modes: usize, data: DMatrix<T>) -> Self {
        debug_assert_eq!(data.nrows(), 2 * n_modes);
        Self { n_modes, data }
    }
}

fn check_shape<T: Real>(data: &DMatrix<T>) -> Result<usize> {
    let (rows, cols) = data.shape();
    if rows != cols {
        return Err(Error::DimensionMismatch(format!("matrix is {rows}x{cols}, not square")));
    }
    if rows == 0 || rows % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "covariance dimension {rows} is not a positive even number"
        )));
    }
    Ok(rows / 2)
}

/// The canonical symplectic form `Omega = [[0, I], [-I, 0]]` in xxpp ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymplecticForm {
    pub n_modes: usize,
}

impl SymplecticForm {
    pub fn new(n_modes: usize) -> Self {
        Self { n_modes }
    }

    pub fn matrix<T: Real>(&self) -> DMatrix<T> {
        let n = self.n_modes;
        let mut omega = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            omega[(i, n + i)] = T::one();
            omega[(n + i, i)] = -T::one();
        }
        omega
    }
}

pub(crate) fn uncertainty_embedding<T: Real>(v: &DMatrix<T>) -> DMatrix<T> {
    let dim = v.nrows();
    let omega = SymplecticForm::new(dim / 2).matrix::<T>();
    let mut e = DMatrix::zeros(2 * dim, 2 * dim);
    e.view_mut((0, 0), (dim, dim)).copy_from(v);
    e.view_mut((dim, dim), (dim, dim)).copy_from(v);
    e.view_mut((0, dim), (dim, dim)).copy_from(&omega);
    e.view_mut((dim, 0), (dim, dim)).copy_from(&(-omega));
    e
}

/// Outcome of [`check_physical`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalityReport<T: Real> {
    pub is_psd: bool,
    pub satisfies_uncertainty: bool,
    pub min_eig_v: T,
    /// Smallest eigenvalue of `[[V, Omega], [-Omega, V]]`, equal to that of `V - i Omega`.
    pub min_eig_embedding: T,
    /// Ascending symplectic eigenvalues, one per mode.
    pub symplectic_eigenvalues: Vec<T>,
}

impl<T: Real> PhysicalityReport<T> {
    pub fn is_physical(&self) -> bool {
        self.is_psd && self.satisfies_uncertainty
    }

    pub fn min_symplectic_eigenvalue(&self) -> T {
        self.symplectic_eigenvalues[0]
    }
}

pub fn min_symmetric_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap_or_else(|| T::lit(f64::MAX)), |a, b| if b < a { b } else { a })
}

/// Evaluates `V >= 0` and `V - i Omega >= 0` with absolute tolerance `tol`.
pub fn check_physical<T: Real>(v: &CovarianceMatrix<T>, tol: T) -> PhysicalityReport<T> {
    let min_eig_v = min_symmetric_eigenvalue(v.matrix());
    let min_eig_embedding = min_symmetric_eigenvalue(&v.uncertainty_embedding());
    PhysicalityReport {
        is_psd: min_eig_v >= -tol,
        satisfies_uncertainty: min_eig_embedding >= -tol,
        min_eig_v,
        min_eig_embedding,
        symplectic_eigenvalues: symplectic_eigenvalues(v),
    }
}

/// Symplectic eigenvalues: moduli of the eigenvalues of `i Omega V`, which
/// come in `+-nu` pairs. Returned ascending, one per mode.
pub fn symplectic_eigenvalues<T: Real>(v: &CovarianceMatrix<T>) -> Vec<T> {
    let omega = SymplecticForm::new(v.n_modes()).matrix::<T>();
    let product = omega * v.matrix();
    let mut moduli: Vec<T> = product
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re * z.re + z.im * z.im).sqrt())
        .collect();
    moduli.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pair_tol = T::lit(SYMPLECTIC_PAIRING_TOLERANCE);
    moduli
        .chunks(2)
        .map(|pair| {
            let (a, b) = (pair[0], pair[pair.len() - 1]);
            let scale = if b > T::one() { b } else { T::one() };
            if (b - a).abs() > pair_tol * scale {
                log::debug!("symplectic eigenvalue pair ({a:e}, {b:e}) split beyond pairing tolerance");
            }
            (a + b) * T::lit(0.5)
        })
        .collect()
}

/// Eigenvalues of the Hermitian matrix `V - i Omega`, computed with a complex
/// eigensolver. Used to cross-check the real embedding.
pub fn uncertainty_eigenvalues_hermitian<T: Real>(v: &CovarianceMatrix<T>) -> Vec<T> {
    let omega = SymplecticForm::new(v.n_modes()).matrix::<T>();
    let dim = v.dim();
    let h = DMatrix::from_fn(dim, dim, |r, c| Complex::new(v.get(r, c), -omega[(r, c)]));
    let mut eig: Vec<T> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    eig
}

/// Vacuum covariance `I_{2n}`.
pub fn vacuum<T: Real>(n_modes: usize) -> Result<CovarianceMatrix<T>> {
    CovarianceMatrix::scaled_identity(n_modes, T::one())
}

/// Purity `Tr rho^2 = 1 / sqrt(det V)`.
pub fn purity<T: Real>(v: &CovarianceMatrix<T>) -> Result<T> {
    let chol = v
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Unphysical("covariance matrix is not positive definite".into()))?;
    // sqrt(det V) = prod L_ii; accumulate in log space to avoid overflow
    let l = chol.l_dirty();
    let mut log_sqrt_det = T::zero();
    for i in 0..v.dim() {
        log_sqrt_det += l[(i, i)].ln();
    }
    Ok((-log_sqrt_det).exp())
}

/// Reduced state on `keep` (mode positions, in the given order).
pub fn partial_trace<T: Real>(v: &CovarianceMatrix<T>, keep: &[usize]) -> Result<CovarianceMatrix<T>> {
    if keep.is_empty() {
        return Err(Error::InvalidArgument("partial trace needs at least one kept mode".into()));
    }
    let n = v.n_modes();
    let mut seen = vec![false; n];
    for &k in keep {
        if k >= n {
            return Err(Error::InvalidArgument(format!("mode {k} out of range for {n} modes")));
        }
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::InvalidArgument(format!("mode {k} listed twice")));
        }
    }
    let m = keep.len();
    let index: Vec<usize> = keep.iter().copied().chain(keep.iter().map(|&k| n + k)).collect();
    let data = DMatrix::from_fn(2 * m, 2 * m, |r, c| v.get(index[r], index[c]));
    Ok(CovarianceMatrix::from_parts_unchecked(m, data))
}

/// Applies `R = (+)_i [[cos t_i, sin t_i], [-sin t_i, cos t_i]]` on `(x_i, p_i)`: `V -> R V R^T`.
pub fn local_rotate<T: Real>(v: &CovarianceMatrix<T>, angles: &[T]) -> Result<CovarianceMatrix<T>> {
    let n = v.n_modes();
    if angles.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} rotation angles for {} modes",
            angles.len(),
            n
        )));
    }
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    for (i, &theta) in angles.iter().enumerate() {
        let (s, c) = theta.sin_cos();
        r[(i, i)] = c;
        r[(i, n + i)] = s;
        r[(n + i, i)] = -s;
        r[(n + i, n + i)] = c;
    }
    let data = &r * v.matrix() * r.transpose();
    Ok(CovarianceMatrix::from_parts_unchecked(n, symmetric_part(data)))
}

pub(crate) fn symmetric_part<T: Real>(m: DMatrix<T>) -> DMatrix<T> {
    (&m + m.transpose()) * T::lit(0.5)
}

/// Rotates mode `i` of a raw xxpp matrix in place (rows then columns).
fn rotate_mode_in_place<T: Real>(m: &mut DMatrix<T>, n: usize, i: usize, theta: T) {
    let (s, c) = theta.sin_cos();
    let (xi, pi) = (i, n + i);
    for col in 0..2 * n {
        let (a, b) = (m[(xi, col)], m[(pi, col)]);
        m[(xi, col)] = c * a + s * b;
        m[(pi, col)] = -s * a + c * b;
    }
    for row in 0..2 * n {
        let (a, b) = (m[(row, xi)], m[(row, pi)]);
        m[(row, xi)] = c * a + s * b;
        m[(row, pi)] = -s * a + c * b;
    }
}

fn xp_norm_sq<T: Real>(m: &DMatrix<T>, n: usize) -> T {
    m.view((0, n), (n, n)).norm_squared()
}

const GRID_POINTS: usize = 48;

/// Minimizes `f` over one period `[-pi/2, pi/2)`: coarse grid, then golden-section refinement.
fn golden_section_periodic<T: Real, F: Fn(T) -> T>(f: F) -> (T, T) {
    let half_pi = T::frac_pi_2();
    let step = T::pi() / T::lit(GRID_POINTS as f64);
    let mut best = (T::zero(), f(T::zero()));
    for k in 0..GRID_POINTS {
        let theta = -half_pi + step * T::lit(k as f64);
        let value = f(theta);
        if value < best.1 {
            best = (theta, value);
        }
    }
    let inv_phi = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let (mut a, mut b) = (best.0 - step, best.0 + step);
    let mut c = b - (b - a) * inv_phi;
    let mut d = a + (b - a) * inv_phi;
    let (mut fc, mut fd) = (f(c), f(d));
    let tol = T::lit(1e-14).max(T::lit(16.0) * <T as Real>::epsilon());
    for _ in 0..200 {
        if (b - a).abs() < tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * inv_phi;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * inv_phi;
            fd = f(d);
        }
    }
    let mid = (a + b) * T::lit(0.5);
    let fm = f(mid);
    if fm < best.1 {
        (mid, fm)
    } else {
        best
    }
}

/// Coordinate descent over per-mode rotation angles minimizing the Frobenius
/// norm of the xp cross block. Stops when a sweep improves the norm by less
/// than `tol` or after `max_sweeps`. Returns the rotated state and the total
/// angle applied to each mode.
pub fn minimize_iq_correlations<T: Real>(
    v: &CovarianceMatrix<T>,
    max_sweeps: usize,
    tol: T,
) -> (CovarianceMatrix<T>, Vec<T>) {
    let n = v.n_modes();
    let mut m = v.matrix().clone();
    let mut angles = vec![T::zero(); n];
    let mut current = xp_norm_sq(&m, n).sqrt();
    for _ in 0..max_sweeps {
        let before = current;
        for i in 0..n {
            let base = m.clone();
            let (theta, value) = golden_section_periodic(|t| {
                let mut trial = base.clone();
                rotate_mode_in_place(&mut trial, n, i, t);
                xp_norm_sq(&trial, n)
            });
            if value.sqrt() < current && theta != T::zero() {
                rotate_mode_in_place(&mut m, n, i, theta);
                angles[i] += theta;
                current = xp_norm_sq(&m, n).sqrt();
            }
        }
        if before - current < tol {
            break;
        }
    }
    let m = symmetric_part(m);
    (CovarianceMatrix::from_parts_unchecked(n, m), angles)
}

/// Mixes each system mode with the matching ancilla mode on a beam splitter
/// of transmittivity `eta = cos^2(theta)` and returns the transmitted modes.
pub fn beam_splitter_mix<T: Real>(
    v_sys: &CovarianceMatrix<T>,
    eta: T,
    v_anc: &CovarianceMatrix<T>,
) -> Result<CovarianceMatrix<T>> {
    if !(eta >= T::zero() && eta <= T::one()) {
        return Err(Error::InvalidArgument(format!("transmittivity {eta} outside [0, 1]")));
    }
    if v_sys.n_modes() != v_anc.n_modes() {
        return Err(Error::DimensionMismatch(format!(
            "system has {} modes, ancilla has {}",
            v_sys.n_modes(),
            v_anc.n_modes()
        )));
    }
    let dim = v_sys.dim();
    let cos = eta.sqrt();
    let sin = (T::one() - eta).sqrt();

    let mut joint = DMatrix::zeros(2 * dim, 2 * dim);
    joint.view_mut((0, 0), (dim, dim)).copy_from(v_sys.matrix());
    joint.view_mut((dim, dim), (dim, dim)).copy_from(v_anc.matrix());

    let eye = DMatrix::<T>::identity(dim, dim);
    let mut s = DMatrix::zeros(2 * dim, 2 * dim);
    s.view_mut((0, 0), (dim, dim)).copy_from(&(&eye * cos));
    s.view_mut((0, dim), (dim, dim)).copy_from(&(&eye * sin));
    s.view_mut((dim, 0), (dim, dim)).copy_from(&(&eye * -sin));
    s.view_mut((dim, dim), (dim, dim)).copy_from(&(&eye * cos));

    let out = &s * joint * s.transpose();
    let transmitted = out.view((0, 0), (dim, dim)).into_owned();
    Ok(CovarianceMatrix::from_parts_unchecked(v_sys.n_modes(), symmetric_part(transmitted)))
}
