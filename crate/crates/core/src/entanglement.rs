//! Bipartite separability tests on Gaussian covariance matrices.
//!
//! For a bipartition `I|J` of the modes, every separable state satisfies
//! `E = h^T V_xx h + g^T V_pp g - 2|<h_I, g_I>| - 2|<h_J, g_J>| >= 0`
//! for all real vectors `h`, `g`. Writing `-2|a| = min_s (-2 s a)` turns the
//! minimization over the unit sphere `|h|^2 + |g|^2 = 1` into four symmetric
//! eigenvalue problems, one per sign pair.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{partial_trace, CovarianceMatrix};
use crate::reconstruction::UncertaintyMatrix;
use crate::scalar::Real;

/// Largest mode count swept exhaustively.
pub const MAX_EXHAUSTIVE_MODES: usize = 24;
/// Largest mode count representable by a bipartition mask.
pub const MAX_MODES: usize = 64;
/// Allowed `|V_xp|_F / |V|_F` for the test to apply.
pub const IQ_TOLERANCE: f64 = 1e-3;
/// With uncertainties available, an xp block whose RMS in units of its own
/// standard deviation is at most this is treated as measurement noise.
pub const IQ_NOISE_RMS: f64 = 2.0;

/// Split of `n_modes` mode positions into `I` (bits set in `mask`) and `J`.
/// Canonical form keeps position 0 in `I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bipartition {
    n_modes: usize,
    mask: u64,
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl Bipartition {
    pub fn new(n_modes: usize, mask: u64) -> Result<Self> {
        if !(2..=MAX_MODES).contains(&n_modes) {
            return Err(Error::InvalidArgument(format!(
                "bipartitions need between 2 and {MAX_MODES} modes, got {n_modes}"
            )));
        }
        let full = full_mask(n_modes);
        if mask & !full != 0 {
            return Err(Error::InvalidArgument(format!("mask {mask:#x} has bits beyond {n_modes} modes")));
        }
        let mask = if mask & 1 == 0 { !mask & full } else { mask };
        if mask == full {
            return Err(Error::InvalidArgument("both sides of a bipartition must be nonempty".into()));
        }
        Ok(Self { n_modes, mask })
    }

    /// Bipartition with the given positions on one side.
    pub fn from_set(n_modes: usize, side: &[usize]) -> Result<Self> {
        let mut mask = 0u64;
        for &i in side {
            if i >= n_modes {
                return Err(Error::InvalidArgument(format!("position {i} out of range for {n_modes} modes")));
            }
            mask |= 1 << i;
        }
        Self::new(n_modes, mask)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Canonical bitmask of `I` over the sorted mode positions.
    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn in_first(&self, position: usize) -> bool {
        self.mask >> position & 1 == 1
    }

    pub fn set_i(&self) -> Vec<usize> {
        (0..self.n_modes).filter(|&i| self.in_first(i)).collect()
    }

    pub fn set_j(&self) -> Vec<usize> {
        (0..self.n_modes).filter(|&i| !self.in_first(i)).collect()
    }

    /// Label such as `{-2,0}|{2}` using the given mode indices.
    pub fn label(&self, mode_indices: &[i64]) -> String {
        let fmt = |set: Vec<usize>| {
            set.iter()
                .map(|&p| mode_indices.get(p).map_or(p.to_string(), |m| m.to_string()))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!("{{{}}}|{{{}}}", fmt(self.set_i()), fmt(self.set_j()))
    }
}

/// Number of canonical bipartitions of `n` modes, `2^(n-1) - 1`.
pub fn bipartition_count(n: usize) -> Result<u64> {
    if !(2..=MAX_MODES).contains(&n) {
        return Err(Error::InvalidArgument(format!("bipartitions need between 2 and {MAX_MODES} modes, got {n}")));
    }
    Ok(full_mask(n - 1))
}

/// Lazy iterator over canonical bipartitions in increasing mask order.
#[derive(Debug, Clone)]
pub struct Bipartitions {
    n_modes: usize,
    next: u64,
    end: u64,
}

impl Iterator for Bipartitions {
    type Item = Bipartition;

    fn next(&mut self) -> Option<Bipartition> {
        if self.next >= self.end {
            return None;
        }
        let k = self.next;
        self.next += 1;
        Some(Bipartition {
            n_modes: self.n_modes,
            mask: k << 1 | 1,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = usize::try_from(self.end - self.next).ok();
        (left.unwrap_or(usize::MAX), left)
    }
}

/// All `2^(n-1) - 1` canonical bipartitions of `n` modes.
pub fn enumerate_bipartitions(n: usize) -> Result<Bipartitions> {
    let count = bipartition_count(n)?;
    Ok(Bipartitions {
        n_modes: n,
        next: 0,
        end: count,
    })
}

/// `count` distinct canonical bipartitions drawn uniformly, sorted by mask.
pub fn sample_bipartitions(n: usize, count: usize, seed: u64) -> Result<Vec<Bipartition>> {
    let total = bipartition_count(n)?;
    if count as u64 >= total {
        return Ok(enumerate_bipartitions(n)?.collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < count {
        picked.insert(rng.random_range(0..total));
    }
    Ok(picked
        .into_iter()
        .map(|k| Bipartition {
            n_modes: n,
            mask: k << 1 | 1,
        })
        .collect())
}

/// Minimized statistic for one bipartition.
#[derive(Debug, Clone, PartialEq)]
pub struct SvlReport<T: Real> {
    pub partition: Bipartition,
    pub e: T,
    pub de: T,
    /// `e / de`; `-inf`/`+inf` when `de == 0`.
    pub sigma_ratio: T,
    pub h: Vec<T>,
    pub g: Vec<T>,
    /// Set when `de == 0` and `sigma_ratio` is a sentinel.
    pub zero_uncertainty: bool,
}

fn ratio_or_sentinel<T: Real>(e: T, de: T) -> (T, bool) {
    if de > T::zero() {
        (e / de, false)
    } else if e < T::zero() {
        (T::lit(f64::NEG_INFINITY), true)
    } else {
        (T::lit(f64::INFINITY), true)
    }
}

impl<T: Real> SvlReport<T> {
    pub fn with_uncertainty(mut self, de: T) -> Self {
        let (ratio, zero) = ratio_or_sentinel(self.e, de);
        self.de = de;
        self.sigma_ratio = ratio;
        self.zero_uncertainty = zero;
        self
    }
}

fn iq_relative<T: Real>(v: &CovarianceMatrix<T>) -> T {
    let total = v.matrix().norm();
    if total > T::zero() {
        v.xp_norm() / total
    } else {
        T::zero()
    }
}

fn check_iq<T: Real>(v: &CovarianceMatrix<T>) -> Result<()> {
    let relative = iq_relative(v);
    if relative >= T::lit(IQ_TOLERANCE) {
        return Err(Error::IqCorrelated {
            relative: relative.to_f64_lossy(),
        });
    }
    Ok(())
}

/// RMS of `V_xp / sigma_xp`, or `None` if some xp uncertainty is zero.
fn iq_noise_rms<T: Real>(v: &CovarianceMatrix<T>, sigma: &UncertaintyMatrix<T>) -> Option<T> {
    let n = v.n_modes();
    let mut sum = T::zero();
    for i in 0..n {
        for j in 0..n {
            let s = sigma.get(i, n + j);
            if !(s > T::zero()) {
                return None;
            }
            let z = v.get(i, n + j) / s;
            sum += z * z;
        }
    }
    Some((sum / T::lit((n * n) as f64)).sqrt())
}

/// IQ precondition for a state with uncertainties: either the xp block is
/// small outright, or it is consistent with pure measurement noise.
fn check_iq_with_sigma<T: Real>(v: &CovarianceMatrix<T>, sigma: &UncertaintyMatrix<T>) -> Result<()> {
    if iq_relative(v) < T::lit(IQ_TOLERANCE) {
        return Ok(());
    }
    match iq_noise_rms(v, sigma) {
        Some(rms) if rms <= T::lit(IQ_NOISE_RMS) => {
            log::debug!("xp block at noise level (rms {rms} sigma)");
            Ok(())
        }
        _ => check_iq(v),
    }
}

/// Quadrature blocks of a matrix that passed the IQ precondition.
struct Blocks<T: Real> {
    xx: DMatrix<T>,
    pp: DMatrix<T>,
}

impl<T: Real> Blocks<T> {
    fn new(v: &CovarianceMatrix<T>) -> Result<Self> {
        check_iq(v)?;
        Ok(Self::unchecked(v))
    }

    fn unchecked(v: &CovarianceMatrix<T>) -> Self {
        Self {
            xx: v.xx_block(),
            pp: v.pp_block(),
        }
    }

    fn minimize(&self, partition: Bipartition) -> Result<SvlReport<T>> {
        let n = self.xx.nrows();
        if partition.n_modes() != n {
            return Err(Error::DimensionMismatch(format!(
                "bipartition of {} modes applied to {n}-mode state",
                partition.n_modes()
            )));
        }
        let mut q = DMatrix::zeros(2 * n, 2 * n);
        q.view_mut((0, 0), (n, n)).copy_from(&self.xx);
        q.view_mut((n, n), (n, n)).copy_from(&self.pp);
        let mut lowest: [Option<(T, Vec<T>)>; 4] = Default::default();
        for (slot, (s1, s2)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].into_iter().enumerate() {
            for i in 0..n {
                let s = if partition.in_first(i) { s1 } else { s2 };
                q[(i, n + i)] = T::lit(-s);
                q[(n + i, i)] = T::lit(-s);
            }
            let eig = SymmetricEigen::new(q.clone());
            let (k, value) = eig
                .eigenvalues
                .iter()
                .copied()
                .enumerate()
                .fold((0, T::lit(f64::INFINITY)), |best, (k, v)| if v < best.1 { (k, v) } else { best });
            lowest[slot] = Some((value, eig.eigenvectors.column(k).iter().copied().collect()));
        }
        let values: Vec<T> = lowest.iter().map(|x| x.as_ref().expect("filled").0).collect();
        let scale = self.xx.norm() + self.pp.norm() + T::one();
        // (s1, s2) and (-s1, -s2) are related by g -> -g
        debug_assert!((values[0] - values[3]).abs() <= T::lit(1e-6) * scale);
        debug_assert!((values[1] - values[2]).abs() <= T::lit(1e-6) * scale);
        let best = (0..4)
            .min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal))
            .expect("four candidates");
        let (e, z) = lowest[best].take().expect("filled");
        let (h, g) = (z[..n].to_vec(), z[n..].to_vec());
        Ok(SvlReport {
            partition,
            e,
            de: T::zero(),
            sigma_ratio: ratio_or_sentinel(e, T::zero()).0,
            h,
            g,
            zero_uncertainty: true,
        })
    }
}

/// Global minimum of the statistic over the unit sphere, with its minimizer.
/// The returned report carries no uncertainty yet (`de = 0`).
pub fn svl_statistic<T: Real>(v: &CovarianceMatrix<T>, partition: Bipartition) -> Result<SvlReport<T>> {
    Blocks::new(v)?.minimize(partition)
}

/// The statistic at arbitrary `(h, g)`.
pub fn svl_value<T: Real>(v: &CovarianceMatrix<T>, partition: Bipartition, h: &[T], g: &[T]) -> Result<T> {
    let n = v.n_modes();
    if h.len() != n || g.len() != n || partition.n_modes() != n {
        return Err(Error::DimensionMismatch("h, g and bipartition must match the mode count".into()));
    }
    let hv = nalgebra::DVector::from_column_slice(h);
    let gv = nalgebra::DVector::from_column_slice(g);
    let quad = (hv.transpose() * v.xx_block() * &hv)[(0, 0)] + (gv.transpose() * v.pp_block() * &gv)[(0, 0)];
    let (mut dot_i, mut dot_j) = (T::zero(), T::zero());
    for i in 0..n {
        if partition.in_first(i) {
            dot_i += h[i] * g[i];
        } else {
            dot_j += h[i] * g[i];
        }
    }
    Ok(quad - T::lit(2.0) * (dot_i.abs() + dot_j.abs()))
}

/// `sqrt(sum_ab (s_xx)_ab^2 h_a^2 h_b^2 + (s_pp)_ab^2 g_a^2 g_b^2)`.
pub fn svl_uncertainty_at<T: Real>(h: &[T], g: &[T], sigma_xx: &DMatrix<T>, sigma_pp: &DMatrix<T>) -> Result<T> {
    let n = h.len();
    if g.len() != n || sigma_xx.shape() != (n, n) || sigma_pp.shape() != (n, n) {
        return Err(Error::DimensionMismatch("uncertainty blocks must match the minimizer length".into()));
    }
    let mut total = T::zero();
    for a in 0..n {
        for b in 0..n {
            total += (sigma_xx[(a, b)] * h[a] * h[b]).powi(2) + (sigma_pp[(a, b)] * g[a] * g[b]).powi(2);
        }
    }
    Ok(total.sqrt())
}

/// Uncertainty of the statistic at the report's minimizer.
pub fn svl_uncertainty<T: Real>(report: &SvlReport<T>, sigma_xx: &DMatrix<T>, sigma_pp: &DMatrix<T>) -> Result<T> {
    svl_uncertainty_at(&report.h, &report.g, sigma_xx, sigma_pp)
}

fn sigma_blocks<T: Real>(sigma: &UncertaintyMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let n = sigma.n_modes();
    let m = sigma.matrix();
    (m.view((0, 0), (n, n)).into_owned(), m.view((n, n), (n, n)).into_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Every tested bipartition violates the separability bound.
    FullyInseparable,
    NotCertified,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::FullyInseparable => "fully inseparable",
            Verdict::NotCertified => "not certified",
        }
    }
}

/// Results of a bipartition sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct InseparabilityReport<T: Real> {
    /// Tested mode positions, ascending.
    pub modes: Vec<usize>,
    pub results: Vec<SvlReport<T>>,
    /// False when bipartitions were sampled rather than enumerated.
    pub exhaustive: bool,
    /// `min over bipartitions of -sigma_ratio`: the state violates every
    /// tested bound by at least this many standard deviations.
    pub significance: T,
    /// `max over bipartitions of E`; negative when every bound is violated.
    pub max_statistic: T,
    pub min_abs_sigma: T,
    pub verdict: Verdict,
}

fn summarize<T: Real>(modes: Vec<usize>, results: Vec<SvlReport<T>>, exhaustive: bool, scale: T) -> InseparabilityReport<T> {
    let significance = results
        .iter()
        .map(|r| -r.sigma_ratio)
        .fold(T::lit(f64::INFINITY), |a, b| if b < a { b } else { a });
    let max_statistic = results
        .iter()
        .map(|r| r.e)
        .fold(T::lit(f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
    let min_abs_sigma = results
        .iter()
        .map(|r| r.sigma_ratio.abs())
        .fold(T::lit(f64::INFINITY), |a, b| if b < a { b } else { a });
    let floor = T::lit(1e-10) * scale;
    let verdict = if !results.is_empty() && max_statistic < -floor && significance > T::zero() {
        Verdict::FullyInseparable
    } else {
        Verdict::NotCertified
    };
    InseparabilityReport {
        modes,
        results,
        exhaustive,
        significance,
        max_statistic,
        min_abs_sigma,
        verdict,
    }
}

fn prepare<T: Real>(
    v: &CovarianceMatrix<T>,
    sigma: &UncertaintyMatrix<T>,
    modes: &[usize],
) -> Result<(Vec<usize>, Blocks<T>, DMatrix<T>, DMatrix<T>, T)> {
    if sigma.n_modes() != v.n_modes() {
        return Err(Error::DimensionMismatch(format!(
            "uncertainty matrix has {} modes, covariance has {}",
            sigma.n_modes(),
            v.n_modes()
        )));
    }
    if modes.len() < 2 {
        return Err(Error::InvalidArgument("the bipartition test needs at least two modes".into()));
    }
    let mut sorted = modes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != modes.len() {
        return Err(Error::InvalidArgument("mode subset contains duplicates".into()));
    }
    let reduced = partial_trace(v, &sorted)?;
    let scale = reduced.matrix().norm();
    let sigma = sigma.restrict(&sorted)?;
    check_iq_with_sigma(&reduced, &sigma)?;
    let blocks = Blocks::unchecked(&reduced);
    let (sxx, spp) = sigma_blocks(&sigma);
    Ok((sorted, blocks, sxx, spp, scale))
}

fn sweep<T: Real>(
    blocks: &Blocks<T>,
    sxx: &DMatrix<T>,
    spp: &DMatrix<T>,
    partitions: Vec<Bipartition>,
) -> Result<Vec<SvlReport<T>>> {
    partitions
        .into_par_iter()
        .map(|p| {
            let report = blocks.minimize(p)?;
            let de = svl_uncertainty(&report, sxx, spp)?;
            Ok(report.with_uncertainty(de))
        })
        .collect()
}

/// Runs the test on every canonical bipartition of the state restricted to
/// `modes` (positions). Bitmasks refer to the ascending order of `modes`.
pub fn test_full_inseparability<T: Real>(
    v: &CovarianceMatrix<T>,
    sigma: &UncertaintyMatrix<T>,
    modes: &[usize],
) -> Result<InseparabilityReport<T>> {
    if modes.len() > MAX_EXHAUSTIVE_MODES {
        return Err(Error::InvalidArgument(format!(
            "exhaustive sweep supports at most {MAX_EXHAUSTIVE_MODES} modes; use the sampled sweep for {}",
            modes.len()
        )));
    }
    let (sorted, blocks, sxx, spp, scale) = prepare(v, sigma, modes)?;
    let partitions = enumerate_bipartitions(sorted.len())?.collect();
    let results = sweep(&blocks, &sxx, &spp, partitions)?;
    Ok(summarize(sorted, results, true, scale))
}

/// Like [`test_full_inseparability`] on `count` uniformly sampled
/// bipartitions; the report is marked non-exhaustive unless every
/// bipartition happened to be covered.
pub fn test_sampled_inseparability<T: Real>(
    v: &CovarianceMatrix<T>,
    sigma: &UncertaintyMatrix<T>,
    modes: &[usize],
    count: usize,
    seed: u64,
) -> Result<InseparabilityReport<T>> {
    let (sorted, blocks, sxx, spp, scale) = prepare(v, sigma, modes)?;
    let partitions = sample_bipartitions(sorted.len(), count, seed)?;
    let exhaustive = partitions.len() as u64 == bipartition_count(sorted.len())?;
    let results = sweep(&blocks, &sxx, &spp, partitions)?;
    Ok(summarize(sorted, results, exhaustive, scale))
}

/// Inverse-variance weighted combination of one bipartition over segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combined<T: Real> {
    pub e: T,
    pub de: T,
    pub sigma_ratio: T,
    pub zero_uncertainty: bool,
}

/// `E_w = sum w_k E_k / sum w_k`, `dE_w = 1 / sqrt(sum w_k)`, `w_k = 1 / dE_k^2`.
/// Segments with `dE = 0` dominate: their mean is returned with `dE = 0`.
pub fn combine_segments<T: Real>(results: &[(T, T)]) -> Result<Combined<T>> {
    if results.is_empty() {
        return Err(Error::InsufficientData("no segments to combine".into()));
    }
    if let Some((e, de)) = results.iter().find(|(e, de)| !e.is_finite() || !(*de >= T::zero())) {
        return Err(Error::InvalidArgument(format!("invalid segment result ({e}, {de})")));
    }
    let exact: Vec<T> = results.iter().filter(|(_, de)| *de == T::zero()).map(|(e, _)| *e).collect();
    if !exact.is_empty() {
        let e = exact.iter().fold(T::zero(), |a, b| a + *b) / T::lit(exact.len() as f64);
        let (sigma_ratio, _) = ratio_or_sentinel(e, T::zero());
        return Ok(Combined {
            e,
            de: T::zero(),
            sigma_ratio,
            zero_uncertainty: true,
        });
    }
    let (mut sum_w, mut sum_we) = (T::zero(), T::zero());
    for (e, de) in results {
        let w = T::one() / (*de * *de);
        sum_w += w;
        sum_we += w * *e;
    }
    let e = sum_we / sum_w;
    let de = T::one() / sum_w.sqrt();
    Ok(Combined {
        e,
        de,
        sigma_ratio: e / de,
        zero_uncertainty: false,
    })
}

/// Per-bipartition combination of sweeps over several segments.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedInseparability<T: Real> {
    pub modes: Vec<usize>,
    pub partitions: Vec<Bipartition>,
    pub combined: Vec<Combined<T>>,
    pub significance: T,
    pub max_statistic: T,
    pub min_abs_sigma: T,
    pub verdict: Verdict,
}

/// Combines segment sweeps that share modes and bipartition order.
pub fn combine_reports<T: Real>(reports: &[InseparabilityReport<T>]) -> Result<CombinedInseparability<T>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InsufficientData("no segment reports to combine".into()))?;
    for r in reports {
        if r.modes != first.modes
            || r.results.len() != first.results.len()
            || r.results.iter().zip(&first.results).any(|(a, b)| a.partition != b.partition)
        {
            return Err(Error::DimensionMismatch("segment reports cover different bipartitions".into()));
        }
    }
    let mut combined = Vec::with_capacity(first.results.len());
    for k in 0..first.results.len() {
        let pairs: Vec<(T, T)> = reports.iter().map(|r| (r.results[k].e, r.results[k].de)).collect();
        combined.push(combine_segments(&pairs)?);
    }
    let significance = combined
        .iter()
        .map(|c| -c.sigma_ratio)
        .fold(T::lit(f64::INFINITY), |a, b| if b < a { b } else { a });
    let max_statistic = combined
        .iter()
        .map(|c| c.e)
        .fold(T::lit(f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
    let min_abs_sigma = combined
        .iter()
        .map(|c| c.sigma_ratio.abs())
        .fold(T::lit(f64::INFINITY), |a, b| if b < a { b } else { a });
    let verdict = if max_statistic < T::zero() && significance > T::zero() {
        Verdict::FullyInseparable
    } else {
        Verdict::NotCertified
    };
    Ok(CombinedInseparability {
        modes: first.modes.clone(),
        partitions: first.results.iter().map(|r| r.partition).collect(),
        combined,
        significance,
        max_statistic,
        min_abs_sigma,
        verdict,
    })
}
