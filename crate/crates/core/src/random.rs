//! Random symplectic maps and physical Gaussian states.

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gaussian::{symmetric_part, CovarianceMatrix};
use crate::scalar::Real;

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Haar-distributed real orthogonal `n x n` matrix.
pub fn random_orthogonal<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<T> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| normal(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q.map(T::lit)
}

/// Haar-distributed `n x n` unitary.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<Complex<f64>> {
    let g = DMatrix::from_fn(n, n, |_, _| Complex::new(normal(rng), normal(rng)));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Passive (orthogonal symplectic) map of a unitary `U` acting on `a`:
/// `[[Re U, -Im U], [Im U, Re U]]` in xxpp ordering.
pub fn passive_symplectic<T: Real>(u: &DMatrix<Complex<f64>>) -> DMatrix<T> {
    let n = u.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let z = u[(r % n, c % n)];
        let v = match (r < n, c < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        };
        T::lit(v)
    })
}

/// Single-mode squeezers `diag(e^{r_i}, e^{-r_i})`.
pub fn squeezer<T: Real>(log_gains: &[f64]) -> DMatrix<T> {
    let n = log_gains.len();
    let mut z = DMatrix::zeros(2 * n, 2 * n);
    for (i, &r) in log_gains.iter().enumerate() {
        z[(i, i)] = T::lit(r.exp());
        z[(n + i, n + i)] = T::lit((-r).exp());
    }
    z
}

/// Random symplectic `O_1 Z O_2` with squeezing parameters drawn from `[-max_squeeze, max_squeeze]`.
pub fn random_symplectic<T: Real, R: Rng + ?Sized>(n: usize, max_squeeze: f64, rng: &mut R) -> DMatrix<T> {
    let o1 = passive_symplectic::<T>(&random_unitary(n, rng));
    let o2 = passive_symplectic::<T>(&random_unitary(n, rng));
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(-max_squeeze..=max_squeeze)).collect();
    o1 * squeezer::<T>(&r) * o2
}

/// Random physical state `S D S^T` with thermal symplectic eigenvalues in `[1, max_thermal]`.
pub fn random_physical<T: Real, R: Rng + ?Sized>(
    n: usize,
    max_squeeze: f64,
    max_thermal: f64,
    rng: &mut R,
) -> CovarianceMatrix<T> {
    let s = random_symplectic::<T, R>(n, max_squeeze, rng);
    let d = thermal_diagonal::<T, R>(n, max_thermal, rng);
    let v = &s * d * s.transpose();
    CovarianceMatrix::symmetrize(symmetric_part(v)).expect("square even-sized matrix")
}

/// Random physical state whose xp cross block vanishes identically: built
/// from real orthogonal mode mixers and quadrature-aligned squeezers.
pub fn random_iq_free_physical<T: Real, R: Rng + ?Sized>(
    n: usize,
    max_squeeze: f64,
    max_thermal: f64,
    rng: &mut R,
) -> CovarianceMatrix<T> {
    let real_mixer = |rng: &mut R| {
        let o = random_orthogonal::<f64, R>(n, rng);
        passive_symplectic::<T>(&o.map(|x| Complex::new(x, 0.0)))
    };
    let o1 = real_mixer(rng);
    let o2 = real_mixer(rng);
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(-max_squeeze..=max_squeeze)).collect();
    let s = o1 * squeezer::<T>(&r) * o2;
    let d = thermal_diagonal::<T, R>(n, max_thermal, rng);
    let mut v = &s * d * s.transpose();
    // exact zeros in the xp block
    for i in 0..n {
        for j in 0..n {
            v[(i, n + j)] = T::zero();
            v[(n + j, i)] = T::zero();
        }
    }
    CovarianceMatrix::symmetrize(v).expect("square even-sized matrix")
}

fn thermal_diagonal<T: Real, R: Rng + ?Sized>(n: usize, max_thermal: f64, rng: &mut R) -> DMatrix<T> {
    let mut d = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let nu = if max_thermal > 1.0 { rng.random_range(1.0..=max_thermal) } else { 1.0 };
        d[(i, i)] = T::lit(nu);
        d[(n + i, n + i)] = T::lit(nu);
    }
    d
}

/// `n_samples` zero-mean Gaussian draws with covariance `cov` (xxpp),
/// interleaved per sample as `(I_0, Q_0, ..., I_{N-1}, Q_{N-1})` like a
/// digitizer record.
pub fn gaussian_samples<R: Rng + ?Sized>(cov: &DMatrix<f64>, n_samples: usize, rng: &mut R) -> Result<Vec<f64>> {
    let dim = cov.nrows();
    if !dim.is_multiple_of(2) || cov.ncols() != dim {
        return Err(Error::DimensionMismatch(format!("covariance is {}x{}", dim, cov.ncols())));
    }
    let n = dim / 2;
    let l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Unphysical("sampling covariance is not positive definite".into()))?
        .unpack();
    let mut out = Vec::with_capacity(n_samples * dim);
    let mut z = nalgebra::DVector::zeros(dim);
    for _ in 0..n_samples {
        z.iter_mut().for_each(|x| *x = normal(rng));
        let s = &l * &z;
        for m in 0..n {
            out.push(s[m]);
            out.push(s[n + m]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{check_physical, SymplecticForm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_symplectic_preserves_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..6 {
            let s = random_symplectic::<f64, _>(n, 0.8, &mut rng);
            let omega = SymplecticForm::new(n).matrix::<f64>();
            assert!((&s * &omega * s.transpose() - &omega).norm() < 1e-10);
        }
    }

    #[test]
    fn random_states_are_physical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..6 {
            let v = random_physical::<f64, _>(n, 0.7, 3.0, &mut rng);
            assert!(check_physical(&v, 1e-9).is_physical());
            let w = random_iq_free_physical::<f64, _>(n, 0.7, 3.0, &mut rng);
            assert!(check_physical(&w, 1e-9).is_physical());
            assert_eq!(w.xp_norm(), 0.0);
        }
    }

    #[test]
    fn samples_follow_covariance() {
        use crate::reconstruction::{sample_covariance, MeasurementRecord};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_physical::<f64, _>(2, 0.5, 1.5, &mut rng);
        let samples = gaussian_samples(v.matrix(), 200_000, &mut rng).unwrap();
        let record = MeasurementRecord::with_equal_segments(2, 1e6, 1, vec![1.0, 2.0], samples).unwrap();
        let c = sample_covariance(&record).unwrap();
        assert!((c.matrix() - v.matrix()).abs().max() < 0.03 * v.matrix().abs().max());
        assert!(gaussian_samples(&DMatrix::from_element(2, 2, 1.0), 1, &mut rng).is_err());
    }
}
