//! Weighted Chebyshev projection onto physical covariance matrices.
//!
//! Solves `min_V max_nm |V'_nm - V_nm| / sigma_nm` subject to
//! `V - i Omega >= 0` by bisection on the objective `t`. Feasibility at a
//! given `t` is decided by Dykstra's alternating projections between the
//! box `|V - V'| <= t sigma` (lifted to Hermitian matrices `V - i Omega`)
//! and the positive semidefinite cone. Near the optimum the two sets meet
//! almost tangentially and Dykstra stalls, so a level it cannot certify is
//! retried by projected ascent on the smallest eigenvalue of `V - i Omega`
//! over the box.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;

use super::UncertaintyMatrix;
use crate::error::{Error, Result};
use crate::gaussian::{CovarianceMatrix, SymplecticForm};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    /// Smallest eigenvalue of `V - i Omega` accepted as feasible.
    pub feasibility_tolerance: f64,
    /// Eigenvalue floor of the cone used inside the alternating projections.
    pub cone_margin: f64,
    pub max_iterations: usize,
    /// Frobenius change between iterates below which a run has converged.
    pub convergence: f64,
    /// Bisection stops once `(hi - lo) <= relative_width * hi`.
    pub relative_width: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            feasibility_tolerance: 1e-7,
            cone_margin: 1e-9,
            max_iterations: 5000,
            convergence: 1e-9,
            relative_width: 2.5e-4,
        }
    }
}

/// Output of [`project_physical`].
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T: Real> {
    pub covariance: CovarianceMatrix<T>,
    /// Achieved `max |V' - V| / sigma`.
    pub objective: T,
    /// Initial bisection bound, feasible by construction.
    pub upper_bound: T,
    pub bisection_steps: usize,
    pub iterations: usize,
}

/// `max_nm |a_nm - b_nm| / sigma_nm`.
pub fn weighted_max_deviation<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, sigma: &DMatrix<T>) -> T {
    a.iter()
        .zip(b.iter())
        .zip(sigma.iter())
        .map(|((x, y), s)| (*x - *y).abs() / *s)
        .fold(T::zero(), |m, v| if v > m { v } else { m })
}

type Herm<T> = DMatrix<Complex<T>>;

fn lift<T: Real>(v: &DMatrix<T>, omega: &DMatrix<T>) -> Herm<T> {
    DMatrix::from_fn(v.nrows(), v.ncols(), |r, c| Complex::new(v[(r, c)], -omega[(r, c)]))
}

fn min_eigenvalue<T: Real>(h: &Herm<T>) -> T {
    h.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(T::lit(f64::INFINITY), |a, b| if b < a { b } else { a })
}

fn project_cone<T: Real>(h: Herm<T>, margin: T) -> Herm<T> {
    let eig = SymmetricEigen::new(h);
    let clamped = eig.eigenvalues.map(|l| Complex::new(if l > margin { l } else { margin }, T::zero()));
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (mut col, l) in scaled.column_iter_mut().zip(clamped.iter()) {
        col *= *l;
    }
    let out = scaled * u.adjoint();
    (&out + out.adjoint()) * Complex::new(T::lit(0.5), T::zero())
}

struct Feasibility<'a, T: Real> {
    target: &'a DMatrix<T>,
    sigma: &'a DMatrix<T>,
    omega: &'a DMatrix<T>,
    options: &'a ProjectionOptions,
}

impl<T: Real> Feasibility<'_, T> {
    fn project_box(&self, h: &Herm<T>, t: T) -> DMatrix<T> {
        let dim = self.target.nrows();
        let re = DMatrix::from_fn(dim, dim, |r, c| (h[(r, c)].re + h[(c, r)].re) * T::lit(0.5));
        self.clamp(&re, t)
    }

    fn clamp(&self, v: &DMatrix<T>, t: T) -> DMatrix<T> {
        DMatrix::from_fn(v.nrows(), v.ncols(), |r, c| {
            let width = t * self.sigma[(r, c)].min(self.sigma[(c, r)]);
            let centre = self.target[(r, c)];
            v[(r, c)].clamp(centre - width, centre + width)
        })
    }

    /// Projected ascent on a soft minimum of the eigenvalues of `V - i Omega`
    /// inside the box at level `t`, sharpening the soft minimum in stages.
    /// The step is preconditioned by `sigma^2` so wide box directions move
    /// first. Returns the first iterate whose smallest eigenvalue reaches `-tol`.
    fn ascend(&self, t: T, start: DMatrix<T>, tol: T, iterations: &mut usize) -> Option<DMatrix<T>> {
        let precondition = self.sigma.component_mul(self.sigma);
        let mut v = start;
        for temperature in ASCENT_TEMPERATURES {
            let temperature = T::lit(temperature);
            let mut step = T::one();
            let (mut f, mut lambda, mut g) = soft_min(&v, self.omega, temperature);
            for _ in 0..ASCENT_STEPS {
                if lambda >= -tol {
                    return Some(v);
                }
                let mut moved = false;
                for _ in 0..40 {
                    *iterations += 1;
                    let trial = self.clamp(&(&v + g.component_mul(&precondition) * step), t);
                    let (ft, lt, gt) = soft_min(&trial, self.omega, temperature);
                    if ft > f {
                        (v, f, lambda, g) = (trial, ft, lt, gt);
                        step *= T::lit(2.0);
                        moved = true;
                        break;
                    }
                    step *= T::lit(0.5);
                }
                if !moved {
                    break;
                }
            }
            if lambda >= -tol {
                return Some(v);
            }
        }
        None
    }

    /// Runs Dykstra's algorithm at level `t`. Each checked box iterate is
    /// repaired by lifting its diagonal onto the cone; the level counts as
    /// feasible once such a repaired point stays within `t + slack`.
    fn run(&self, t: T, slack: T, iterations: &mut usize) -> Option<(DMatrix<T>, T)> {
        let margin = T::lit(self.options.cone_margin);
        let scale = self.target.norm().max(T::one());
        let floor = T::lit(64.0) * <T as Real>::epsilon() * scale;
        let convergence = (T::lit(self.options.convergence) * scale).max(floor);
        let dim = self.target.nrows();
        let zero = Herm::<T>::zeros(dim, dim);

        let mut y = self.project_box(&lift(self.target, self.omega), t);
        let mut p = zero.clone();
        let mut q = zero;
        for k in 0..self.options.max_iterations {
            *iterations += 1;
            let y_lift = lift(&y, self.omega);
            let a = project_cone(&y_lift + &p, margin);
            p = &y_lift + &p - &a;
            let next = self.project_box(&(&a + &q), t);
            q = &a + &q - lift(&next, self.omega);
            let step = (&next - &y).norm();
            y = next;
            if step < convergence || k % 16 == 15 {
                let candidate = repaired(&y, self.omega);
                let objective = weighted_max_deviation(&candidate, self.target, self.sigma);
                if objective <= t + slack {
                    return Some((candidate, objective));
                }
                if step < convergence {
                    break;
                }
            }
        }
        let tol = T::lit(self.options.feasibility_tolerance);
        let candidate = repaired(&self.ascend(t, y, tol, iterations)?, self.omega);
        let objective = weighted_max_deviation(&candidate, self.target, self.sigma);
        Some((candidate, objective))
    }
}

const ASCENT_TEMPERATURES: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
const ASCENT_STEPS: usize = 400;

/// Soft minimum `l - T ln sum exp(-(l_k - l) / T)` of the eigenvalues of
/// `V - i Omega`, the plain minimum `l`, and the gradient of the soft
/// minimum with respect to `V`.
fn soft_min<T: Real>(v: &DMatrix<T>, omega: &DMatrix<T>, temperature: T) -> (T, T, DMatrix<T>) {
    let eig = SymmetricEigen::new(lift(v, omega));
    let lmin = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(T::lit(f64::INFINITY), |a, b| if b < a { b } else { a });
    let weights: Vec<T> = eig.eigenvalues.iter().map(|&l| (-(l - lmin) / temperature).exp()).collect();
    let total = weights.iter().fold(T::zero(), |a, &w| a + w);
    let dim = v.nrows();
    let mut grad = DMatrix::<T>::zeros(dim, dim);
    for (k, &w) in weights.iter().enumerate() {
        let u = eig.eigenvectors.column(k);
        let w = w / total;
        for r in 0..dim {
            for c in 0..dim {
                grad[(r, c)] += w * (u[r] * u[c].conj()).re;
            }
        }
    }
    (lmin - temperature * total.ln(), lmin, grad)
}

/// `y` with its diagonal raised just enough for `y - i Omega >= 0`.
fn repaired<T: Real>(y: &DMatrix<T>, omega: &DMatrix<T>) -> DMatrix<T> {
    let lambda = min_eigenvalue(&lift(y, omega));
    let mut out = y.clone();
    if lambda < T::zero() {
        for i in 0..out.nrows() {
            out[(i, i)] -= lambda;
        }
    }
    out
}

/// Nearest physical covariance matrix to `v_prime` in the `sigma`-weighted
/// max norm. The returned matrix satisfies `V - i Omega >= 0`; the reported
/// objective is the one actually achieved by it.
pub fn project_physical<T: Real>(
    v_prime: &CovarianceMatrix<T>,
    sigma: &UncertaintyMatrix<T>,
    options: &ProjectionOptions,
) -> Result<Projection<T>> {
    let n = v_prime.n_modes();
    if sigma.n_modes() != n {
        return Err(Error::DimensionMismatch(format!(
            "uncertainty matrix has {} modes, covariance has {n}",
            sigma.n_modes()
        )));
    }
    if !sigma.is_strictly_positive() {
        return Err(Error::InvalidArgument("projection needs strictly positive uncertainties".into()));
    }
    let omega = SymplecticForm::new(n).matrix::<T>();
    let target = v_prime.matrix();
    let s = sigma.matrix();
    let dim = v_prime.dim();
    let tol = T::lit(options.feasibility_tolerance);

    let lambda = min_eigenvalue(&lift(target, &omega));
    if !lambda.is_finite() {
        return Err(Error::ProjectionInfeasible { bound: f64::NAN });
    }
    if lambda >= -tol {
        return Ok(Projection {
            covariance: v_prime.clone(),
            objective: T::zero(),
            upper_bound: T::zero(),
            bisection_steps: 0,
            iterations: 0,
        });
    }

    // V' + c I is feasible, with deviation only on the diagonal.
    let shift = -lambda + T::lit(options.cone_margin).max(tol);
    let min_diag_sigma = (0..dim)
        .map(|i| s[(i, i)])
        .fold(T::lit(f64::INFINITY), |a, b| if b < a { b } else { a });
    let upper_bound = shift / min_diag_sigma;
    let mut best = target + DMatrix::<T>::identity(dim, dim) * shift;

    let problem = Feasibility {
        target,
        sigma: s,
        omega: &omega,
        options,
    };
    let (mut lo, mut hi) = (T::zero(), upper_bound);
    let width = T::lit(options.relative_width);
    let mut steps = 0;
    let mut iterations = 0;
    while hi - lo > width * hi {
        steps += 1;
        let mid = (lo + hi) * T::lit(0.5);
        let slack = (width * mid * T::lit(0.5)).max(tol);
        match problem.run(mid, slack, &mut iterations) {
            Some((y, objective)) => {
                hi = if objective < mid { objective } else { mid };
                best = y;
            }
            None => lo = mid,
        }
    }

    let best = repaired(&best, &omega);
    let best = (&best + best.transpose()) * T::lit(0.5);
    let objective = weighted_max_deviation(&best, target, s);
    log::debug!("projection: objective {objective:e} after {steps} bisection steps, {iterations} iterations");
    Ok(Projection {
        covariance: CovarianceMatrix::new(best)?,
        objective,
        upper_bound,
        bisection_steps: steps,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::check_physical;
    use crate::random::random_physical;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn physical_input_is_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_physical::<f64, _>(2, 0.5, 0.3, &mut rng);
        let p = project_physical(&v, &UncertaintyMatrix::uniform(2, 0.1).unwrap(), &Default::default()).unwrap();
        assert_eq!(p.covariance, v);
        assert_eq!(p.objective, 0.0);
    }

    #[test]
    fn sub_vacuum_identity_is_lifted() {
        let v = CovarianceMatrix::<f64>::scaled_identity(1, 0.9).unwrap();
        let p = project_physical(&v, &UncertaintyMatrix::uniform(1, 1.0).unwrap(), &Default::default()).unwrap();
        assert!((p.objective - 0.1).abs() < 1e-3, "objective {}", p.objective);
        assert!(check_physical(&p.covariance, 1e-7).is_physical());
        assert!((p.covariance.matrix() - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-3);
    }

    #[test]
    fn output_is_physical_for_perturbed_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let n = rng.random_range(1..4);
            let v = random_physical::<f64, _>(n, 0.6, 0.2, &mut rng);
            let noise = DMatrix::from_fn(2 * n, 2 * n, |_, _| rng.random_range(-0.3..0.3));
            let perturbed = CovarianceMatrix::symmetrize(v.matrix() + noise).unwrap();
            let sigma = UncertaintyMatrix::new(DMatrix::from_fn(2 * n, 2 * n, |r, c| 0.05 + 0.01 * (r + c) as f64))
                .unwrap();
            let p = project_physical(&perturbed, &sigma, &Default::default()).unwrap();
            let report = check_physical(&p.covariance, 1e-7);
            assert!(report.is_physical(), "{report:?}");
            assert!(report.min_symplectic_eigenvalue() >= 1.0 - 1e-6);
            assert!(p.objective <= p.upper_bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn f32_projection_runs() {
        let v = CovarianceMatrix::<f32>::scaled_identity(1, 0.8).unwrap();
        let p = project_physical(&v, &UncertaintyMatrix::uniform(1, 1.0f32).unwrap(), &Default::default()).unwrap();
        assert!((p.objective - 0.2).abs() < 1e-3);
    }
}
