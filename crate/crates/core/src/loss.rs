//! Pure-loss channel sweeps: mix each mode with vacuum at transmittivity
//! `eta` and follow purity and the bipartition statistic as `eta` drops.

use rayon::prelude::*;

use crate::entanglement::{test_full_inseparability, MAX_EXHAUSTIVE_MODES};
use crate::error::{Error, Result};
use crate::gaussian::{
    beam_splitter_mix, check_physical, minimize_iq_correlations, partial_trace, purity, vacuum, CovarianceMatrix,
};
use crate::reconstruction::UncertaintyMatrix;
use crate::scalar::Real;

pub const DEFAULT_ETA_POINTS: usize = 101;
const IQ_SWEEPS: usize = 50;

/// `eta V + (1 - eta) I`, computed as a beam splitter with a vacuum ancilla.
pub fn apply_loss<T: Real>(v: &CovarianceMatrix<T>, eta: T) -> Result<CovarianceMatrix<T>> {
    beam_splitter_mix(v, eta, &vacuum(v.n_modes())?)
}

/// `points` uniformly spaced transmittivities from 0 to 1 inclusive.
pub fn eta_grid<T: Real>(points: usize) -> Result<Vec<T>> {
    if points < 2 {
        return Err(Error::InvalidArgument(format!("eta grid needs at least 2 points, got {points}")));
    }
    Ok((0..points)
        .map(|k| T::lit(k as f64) / T::lit((points - 1) as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSweepResult<T: Real> {
    pub etas: Vec<T>,
    /// Purity of the reduced state on the tested modes.
    pub purities: Vec<T>,
    /// Largest minimized statistic over all bipartitions of the tested
    /// modes. Negative means every bipartition is entangled; zero is the
    /// separable boundary reached by vacuum.
    pub margins: Vec<T>,
    /// Tested mode positions, ascending.
    pub modes: Vec<usize>,
    /// Local rotation applied to each tested mode before the sweep.
    pub rotation_angles: Vec<T>,
}

/// Sweeps `etas` over the state restricted to `modes`. The reduced state is
/// first rotated locally to remove IQ cross-correlations; the loss channel
/// commutes with such rotations, so this does not change the physics.
pub fn loss_sweep<T: Real>(v_ideal: &CovarianceMatrix<T>, etas: &[T], modes: &[usize]) -> Result<LossSweepResult<T>> {
    if etas.is_empty() {
        return Err(Error::InvalidArgument("eta sweep needs at least one point".into()));
    }
    if let Some(bad) = etas.iter().find(|e| !(**e >= T::zero() && **e <= T::one())) {
        return Err(Error::InvalidArgument(format!("transmittivity {bad} outside [0, 1]")));
    }
    if modes.len() > MAX_EXHAUSTIVE_MODES {
        return Err(Error::InvalidArgument(format!(
            "loss sweep tests at most {MAX_EXHAUSTIVE_MODES} modes, got {}",
            modes.len()
        )));
    }
    let report = check_physical(v_ideal, T::lit(1e-7));
    if !report.is_physical() {
        return Err(Error::Unphysical(format!(
            "loss sweep needs a physical input (min eigenvalue of V - i Omega = {:e})",
            report.min_eig_embedding
        )));
    }
    let mut sorted = modes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != modes.len() || sorted.len() < 2 {
        return Err(Error::InvalidArgument("loss sweep needs at least two distinct modes".into()));
    }
    let reduced = partial_trace(v_ideal, &sorted)?;
    let tol = <T as Real>::epsilon() * T::lit(16.0) * reduced.matrix().norm();
    let (rotated, angles) = minimize_iq_correlations(&reduced, IQ_SWEEPS, tol);
    let k = sorted.len();
    let positions: Vec<usize> = (0..k).collect();
    let zero_sigma = UncertaintyMatrix::zeros(k)?;

    let points: Vec<(T, T)> = etas
        .par_iter()
        .map(|&eta| {
            let lossy = apply_loss(&rotated, eta)?;
            let p = purity(&lossy)?;
            let sweep = test_full_inseparability(&lossy, &zero_sigma, &positions)?;
            Ok((p, sweep.max_statistic))
        })
        .collect::<Result<_>>()?;
    Ok(LossSweepResult {
        etas: etas.to_vec(),
        purities: points.iter().map(|p| p.0).collect(),
        margins: points.iter().map(|p| p.1).collect(),
        modes: sorted,
        rotation_angles: angles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::random_physical;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_physical::<f64, _>(3, 0.7, 2.0, &mut rng);
        assert!((apply_loss(&v, 1.0).unwrap().matrix() - v.matrix()).abs().max() < 1e-12);
        assert_eq!(apply_loss(&v, 0.0).unwrap().matrix(), &DMatrix::<f64>::identity(6, 6));
        assert!(apply_loss(&v, 1.5).is_err());
        let expected = v.matrix() * 0.3 + DMatrix::<f64>::identity(6, 6) * 0.7;
        assert!((apply_loss(&v, 0.3).unwrap().matrix() - expected).abs().max() < 1e-12);
    }

    #[test]
    fn vacuum_sweep_is_flat() {
        let v = vacuum::<f64>(3).unwrap();
        let r = loss_sweep(&v, &eta_grid(11).unwrap(), &[0, 1, 2]).unwrap();
        assert!(r.purities.iter().all(|p| (p - 1.0).abs() < 1e-12));
        assert!(r.margins.iter().all(|m| *m > -1e-12));
    }

    #[test]
    fn grid_and_domain() {
        let g = eta_grid::<f64>(DEFAULT_ETA_POINTS).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!((g[0], g[100]), (0.0, 1.0));
        assert!((g[37] - 0.37).abs() < 1e-15);
        assert!(eta_grid::<f64>(1).is_err());
        let v = vacuum::<f64>(2).unwrap();
        assert!(loss_sweep(&v, &[0.5, -0.1], &[0, 1]).is_err());
        assert!(loss_sweep(&v, &[0.5], &[0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn losses_compose(seed in any::<u64>(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_physical::<f64, _>(2, 0.8, 2.0, &mut rng);
            let twice = apply_loss(&apply_loss(&v, a).unwrap(), b).unwrap();
            let once = apply_loss(&v, a * b).unwrap();
            prop_assert!((twice.matrix() - once.matrix()).abs().max() < 1e-10);
        }

        #[test]
        fn loss_preserves_physicality(seed in any::<u64>(), eta in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_physical::<f64, _>(3, 1.0, 3.0, &mut rng);
            prop_assert!(check_physical(&apply_loss(&v, eta).unwrap(), 1e-9).is_physical());
        }
    }
}
