use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use combent::calibration::{fit_calibration, CalibrationFit, CalibrationTable};
use combent::comb::{correlation_graph_with_offsets, CorrelationGraph};
use combent::entanglement::{
    combine_reports, test_full_inseparability, test_sampled_inseparability, InseparabilityReport,
    MAX_EXHAUSTIVE_MODES,
};
use combent::gaussian::{check_physical, minimize_iq_correlations, partial_trace, purity, CovarianceMatrix};
use combent::io::{
    format_float, read_json, read_planck_csv, read_record, relative_to, to_json_bytes, write_atomic,
    CalibrationManifest, CalibrationTableDoc, EdgeDoc, GraphDoc, MatrixDoc, PumpConfigDoc,
};
use combent::jpa::{build_mode_matrix, simulate, singular_value_range, stability_margin, PumpConfig};
use combent::loss::loss_sweep;
use combent::reconstruction::{
    bootstrap_covariance, deamplify, normalize_covariance, normalize_uncertainty, project_physical,
    propagate_errors, ProjectionOptions, RawCovariance, UncertaintyMatrix, DEFAULT_BANDWIDTH, DEFAULT_IMPEDANCE,
};
use combent::comb::CombSpec;
use combent::Error;

use crate::error::{usage, CliResult};
use crate::select::{select_modes, ModeSelection};

const TAU: f64 = 2.0 * std::f64::consts::PI;
const IQ_SWEEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Output directory plus the list of files written so far.
pub struct Output {
    dir: PathBuf,
    format: Format,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn new(dir: PathBuf, format: Format) -> Self {
        Self {
            dir,
            format,
            written: Vec::new(),
        }
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    fn json<S: Serialize>(&mut self, name: &str, value: &S) -> CliResult<()> {
        let bytes = to_json_bytes(value)?;
        self.bytes(name, &bytes)
    }

    /// CSV tables are only emitted with `--format csv`.
    fn csv(&mut self, name: &str, text: impl FnOnce() -> String) -> CliResult<()> {
        if self.format == Format::Csv {
            self.bytes(name, text().as_bytes())?;
        }
        Ok(())
    }

    fn matrix(&mut self, stem: &str, doc: &MatrixDoc) -> CliResult<()> {
        self.json(&format!("{stem}.json"), doc)?;
        self.csv(&format!("{stem}.csv"), || {
            let mut s = String::new();
            for row in &doc.matrix {
                let cells: Vec<String> = row.iter().map(|x| format_float(*x)).collect();
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            s
        })
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn csv_float(x: f64) -> String {
    if x.is_finite() {
        format_float(x)
    } else {
        String::new()
    }
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_pump_config(path: &Path) -> CliResult<(PumpConfig<f64>, CombSpec<f64>, CorrelationGraph)> {
    let doc: PumpConfigDoc = read_json(path)?;
    let config = doc.pump_config()?;
    let spec = config.comb_spec(doc.window()?, doc.spacing())?;
    let offsets = (0..config.pumps.len())
        .map(|p| config.idler_offset(&spec, p))
        .collect::<combent::Result<Vec<_>>>()?;
    let graph = correlation_graph_with_offsets(&spec, &offsets);
    Ok((config, spec, graph))
}

#[derive(Serialize)]
struct SimulationReport {
    n_modes: usize,
    mode_indices: Vec<i64>,
    frequencies_hz: Vec<f64>,
    smallest_singular_value: f64,
    largest_singular_value: f64,
    condition_number: f64,
    /// Slowest decay rate of the linear system, Hz.
    stability_margin_hz: f64,
    min_symplectic_eigenvalue: f64,
    purity: f64,
    edges: usize,
    components: usize,
    /// Largest |V_ij| between modes of different graph components.
    cross_component_max: f64,
    truncated_couplings: usize,
    dropped: Vec<EdgeDoc>,
}

pub fn cmd_simulate(out: &mut Output, config_path: &Path) -> CliResult<()> {
    let (config, spec, graph) = load_pump_config(config_path)?;
    let m = build_mode_matrix(&config, &spec)?;
    let (lo, hi) = singular_value_range(&m);
    let margin = stability_margin(&m);
    let v = simulate(&config, &spec)?;
    let indices: Vec<i64> = spec.indices().collect();
    let n = indices.len();

    let components = graph.components();
    let component_of: Vec<usize> = indices
        .iter()
        .map(|i| components.iter().position(|c| c.contains(i)).unwrap_or(usize::MAX))
        .collect();
    let mut cross = 0.0f64;
    for r in 0..2 * n {
        for c in 0..2 * n {
            if component_of[r % n] != component_of[c % n] {
                cross = cross.max(v.get(r, c).abs());
            }
        }
    }
    let report = SimulationReport {
        n_modes: n,
        mode_indices: indices.clone(),
        frequencies_hz: indices.iter().map(|&i| spec.frequency(i) / TAU).collect(),
        smallest_singular_value: lo,
        largest_singular_value: hi,
        condition_number: hi / lo,
        stability_margin_hz: margin / TAU,
        min_symplectic_eigenvalue: check_physical(&v, 1e-9).min_symplectic_eigenvalue(),
        purity: purity(&v)?,
        edges: graph.edges.len(),
        components: components.len(),
        cross_component_max: cross,
        truncated_couplings: graph.truncated(),
        dropped: graph.dropped.iter().map(EdgeDoc::from).collect(),
    };
    out.matrix("covariance", &MatrixDoc::from_covariance(&v, Some(&indices)))?;
    out.bytes("graph.dot", graph.to_dot().as_bytes())?;
    out.json("simulation_report.json", &report)
}

pub fn cmd_graph(out: &mut Output, config_path: &Path) -> CliResult<()> {
    let (_, _, graph) = load_pump_config(config_path)?;
    let doc = GraphDoc::from(&graph);
    out.json("graph.json", &doc)?;
    out.bytes("graph.dot", graph.to_dot().as_bytes())?;
    out.csv("graph_edges.csv", || {
        let mut s = String::from("a,b,pump\n");
        for e in &graph.edges {
            let _ = writeln!(s, "{},{},{}", e.a, e.b, e.pump);
        }
        s
    })
}

#[derive(Serialize)]
struct FitDiagnostics {
    mode_index: i64,
    frequency_hz: f64,
    points: usize,
    gain: f64,
    added_photons: f64,
    sigma_gain: f64,
    sigma_added_photons: f64,
    correlation: f64,
    iterations: usize,
    residual_sum_squares: f64,
}

pub fn cmd_calibrate(out: &mut Output, manifest_path: &Path) -> CliResult<()> {
    let manifest: CalibrationManifest = read_json(manifest_path)?;
    if manifest.sweeps.is_empty() {
        return usage(format!("{}: no sweeps listed", manifest_path.display()));
    }
    let sweeps = manifest
        .sweeps
        .iter()
        .map(|s| {
            read_planck_csv(
                &relative_to(manifest_path, &s.file),
                s.frequency_hz,
                manifest.bandwidth_hz,
                manifest.impedance_ohm,
            )
        })
        .collect::<combent::Result<Vec<_>>>()?;
    let fits: Vec<CalibrationFit> = manifest
        .sweeps
        .par_iter()
        .zip(&sweeps)
        .map(|(r, sweep)| {
            fit_calibration(sweep, r.mode_index).map_err(|e| match e {
                Error::FitFailed(msg) => {
                    Error::FitFailed(format!("mode {} at {} Hz: {msg}", r.mode_index, r.frequency_hz))
                }
                other => other,
            })
        })
        .collect::<combent::Result<_>>()?;
    let table = CalibrationTable::new(fits.iter().map(|f| f.entry).collect())?;
    let diagnostics: Vec<FitDiagnostics> = fits
        .iter()
        .zip(&sweeps)
        .map(|(f, s)| {
            let e = &f.entry;
            FitDiagnostics {
                mode_index: e.mode_index,
                frequency_hz: e.frequency,
                points: s.len(),
                gain: e.gain,
                added_photons: e.added_photons,
                sigma_gain: e.sigma_gain(),
                sigma_added_photons: e.sigma_added_photons(),
                correlation: e.cov_gain_added_photons() / (e.sigma_gain() * e.sigma_added_photons()),
                iterations: f.iterations,
                residual_sum_squares: f.residual_sum_squares,
            }
        })
        .collect();
    out.json("calibration.json", &CalibrationTableDoc::from(&table))?;
    out.json("calibration_fits.json", &diagnostics)?;
    out.csv("calibration_fits.csv", || {
        let mut s = String::from(
            "mode_index,frequency_hz,points,gain,added_photons,sigma_gain,sigma_added_photons,correlation,iterations,residual_sum_squares\n",
        );
        for d in &diagnostics {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                d.mode_index,
                format_float(d.frequency_hz),
                d.points,
                format_float(d.gain),
                format_float(d.added_photons),
                format_float(d.sigma_gain),
                format_float(d.sigma_added_photons),
                csv_float(d.correlation),
                d.iterations,
                format_float(d.residual_sum_squares)
            );
        }
        s
    })
}

fn default_bandwidth() -> f64 {
    DEFAULT_BANDWIDTH
}

fn default_impedance() -> f64 {
    DEFAULT_IMPEDANCE
}

/// Input document of `reconstruct`. Paths are relative to the document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    pub record: String,
    pub calibration: String,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default = "default_impedance")]
    pub impedance_ohm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSummary {
    pub index: usize,
    pub first_sample: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub objective: f64,
    pub upper_bound: f64,
    pub bisection_steps: usize,
    pub min_symplectic_eigenvalue: f64,
    pub purity: f64,
    /// Diagonal positions whose propagated variance was clamped.
    pub clamped: Vec<usize>,
    pub covariance: String,
    pub sigma: String,
}

/// `reconstruction.json`, also the input of `analyze --reconstruction`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionSummary {
    pub record_sha256: String,
    pub calibration_sha256: String,
    pub n_modes: usize,
    pub mode_indices: Vec<i64>,
    pub bootstrap_resamples: usize,
    pub segments: Vec<SegmentSummary>,
}

/// Seed of segment `k`'s bootstrap stream family.
pub fn segment_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn cmd_reconstruct(
    out: &mut Output,
    config_path: &Path,
    segments: Option<usize>,
    resamples: usize,
    seed: u64,
) -> CliResult<()> {
    let config: ReconstructConfig = read_json(config_path)?;
    let record_path = relative_to(config_path, &config.record);
    let calibration_path = relative_to(config_path, &config.calibration);
    let (record, manifest) = read_record(&record_path)?;
    let table = read_json::<CalibrationTableDoc>(&calibration_path)?.table()?;
    let n = record.n_modes;
    let indices = manifest.mode_indices.clone().unwrap_or_else(|| (0..n as i64).collect());
    let entries = table.select(&indices)?;
    for (e, f) in entries.iter().zip(&record.mode_frequencies_hz) {
        if (e.frequency - f).abs() > 1e-6 * f.abs() {
            log::warn!(
                "mode {}: calibration at {} Hz but record at {} Hz",
                e.mode_index,
                e.frequency,
                f
            );
        }
    }
    let record = match segments {
        Some(0) => return usage("--segments must be positive"),
        Some(k) => record.resegment(k)?,
        None if record.n_segments() > 1 => record,
        None => record.resegment(crate::DEFAULT_SEGMENTS)?,
    };

    let options = ProjectionOptions::default();
    let results = (0..record.n_segments())
        .into_par_iter()
        .map(|k| {
            let segment = record.segment(k)?;
            let seed_k = segment_seed(seed, k);
            let (c_raw, s_raw) = bootstrap_covariance(&segment, resamples, seed_k)?;
            let raw = RawCovariance::new(
                c_raw.into_matrix(),
                record.mode_frequencies_hz.clone(),
                config.bandwidth_hz,
                config.impedance_ohm,
            )?;
            let v_meas = normalize_covariance(&raw)?;
            let s_meas = normalize_uncertainty(&raw, s_raw.matrix())?;
            let v_prime = deamplify(&v_meas, &entries)?;
            let propagated = propagate_errors(&v_meas, &s_meas, &entries)?;
            let projection = project_physical(&v_prime, &propagated.sigma, &options)?;
            Ok((k, seed_k, segment.n_samples(), projection, propagated))
        })
        .collect::<combent::Result<Vec<_>>>()?;

    let mut summaries = Vec::with_capacity(results.len());
    for (k, seed_k, n_samples, projection, propagated) in results {
        let v = &projection.covariance;
        let cov_stem = format!("segment_{k}_covariance");
        let sigma_stem = format!("segment_{k}_sigma");
        out.matrix(&cov_stem, &MatrixDoc::from_covariance(v, Some(&indices)))?;
        out.matrix(&sigma_stem, &MatrixDoc::from_uncertainty(&propagated.sigma, Some(&indices)))?;
        if !propagated.clamped.is_empty() {
            log::warn!("segment {k}: clamped negative variances at {:?}", propagated.clamped);
        }
        summaries.push(SegmentSummary {
            index: k,
            first_sample: record.segment_boundaries[k],
            n_samples,
            seed: seed_k,
            objective: projection.objective,
            upper_bound: projection.upper_bound,
            bisection_steps: projection.bisection_steps,
            min_symplectic_eigenvalue: check_physical(v, 1e-9).min_symplectic_eigenvalue(),
            purity: purity(v)?,
            clamped: propagated.clamped,
            covariance: format!("{cov_stem}.json"),
            sigma: format!("{sigma_stem}.json"),
        });
    }
    let summary = ReconstructionSummary {
        record_sha256: sha256_file(&record_path.with_extension("bin"))
            .or_else(|_| sha256_file(&record_path))?,
        calibration_sha256: sha256_file(&calibration_path)?,
        n_modes: n,
        mode_indices: indices,
        bootstrap_resamples: resamples,
        segments: summaries,
    };
    out.json("reconstruction.json", &summary)?;
    out.csv("reconstruction.csv", || {
        let mut s = String::from("segment,first_sample,n_samples,objective,min_symplectic_eigenvalue,purity\n");
        for g in &summary.segments {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                g.index,
                g.first_sample,
                g.n_samples,
                format_float(g.objective),
                format_float(g.min_symplectic_eigenvalue),
                format_float(g.purity)
            );
        }
        s
    })
}

/// One segment's covariance and uncertainty.
pub struct SegmentInput {
    pub covariance: CovarianceMatrix<f64>,
    pub sigma: UncertaintyMatrix<f64>,
    pub indices: Vec<i64>,
}

pub enum AnalyzeInput {
    Reconstruction(PathBuf),
    Files { covariances: Vec<PathBuf>, sigmas: Vec<PathBuf> },
}

fn load_matrix_pair(cov: &Path, sigma: Option<&Path>) -> CliResult<SegmentInput> {
    let doc: MatrixDoc = read_json(cov)?;
    let covariance = doc.covariance()?;
    let sigma = match sigma {
        Some(p) => {
            let s: MatrixDoc = read_json(p)?;
            if s.mode_indices.is_some() && s.mode_indices != doc.mode_indices {
                return usage(format!("{} and {} list different modes", cov.display(), p.display()));
            }
            s.uncertainty()?
        }
        None => UncertaintyMatrix::zeros(covariance.n_modes())?,
    };
    Ok(SegmentInput {
        covariance,
        sigma,
        indices: doc.indices(),
    })
}

fn load_segments(input: &AnalyzeInput) -> CliResult<Vec<SegmentInput>> {
    let segments = match input {
        AnalyzeInput::Reconstruction(path) => {
            let summary: ReconstructionSummary = read_json(path)?;
            summary
                .segments
                .iter()
                .map(|s| {
                    load_matrix_pair(
                        &relative_to(path, &s.covariance),
                        Some(&relative_to(path, &s.sigma)),
                    )
                })
                .collect::<CliResult<Vec<_>>>()?
        }
        AnalyzeInput::Files { covariances, sigmas } => {
            if !sigmas.is_empty() && sigmas.len() != covariances.len() {
                return usage(format!(
                    "{} covariance files but {} uncertainty files",
                    covariances.len(),
                    sigmas.len()
                ));
            }
            covariances
                .iter()
                .enumerate()
                .map(|(k, c)| load_matrix_pair(c, sigmas.get(k).map(PathBuf::as_path)))
                .collect::<CliResult<Vec<_>>>()?
        }
    };
    if segments.is_empty() {
        return usage("no input covariance matrices");
    }
    if segments.iter().any(|s| s.indices != segments[0].indices) {
        return usage("input segments list different modes");
    }
    Ok(segments)
}

/// Reduced, optionally IQ-rotated state on the selected positions.
fn reduce(
    seg: &SegmentInput,
    positions: &[usize],
    rotate: bool,
) -> CliResult<(CovarianceMatrix<f64>, UncertaintyMatrix<f64>, Vec<f64>)> {
    let v = partial_trace(&seg.covariance, positions)?;
    let s = seg.sigma.restrict(positions)?;
    if !rotate {
        let k = positions.len();
        return Ok((v, s, vec![0.0; k]));
    }
    let tol = f64::EPSILON * 16.0 * v.matrix().norm();
    let (rotated, angles) = minimize_iq_correlations(&v, IQ_SWEEPS, tol);
    let s = s.rotate(&angles)?;
    Ok((rotated, s, angles))
}

#[derive(Serialize)]
struct SegmentStatistic {
    e: f64,
    de: f64,
}

#[derive(Serialize)]
struct BipartitionRow {
    mask: u64,
    label: String,
    e: f64,
    de: f64,
    /// `E / dE`; null when `dE = 0`.
    sigma_ratio: Option<f64>,
    zero_uncertainty: bool,
    segments: Vec<SegmentStatistic>,
}

#[derive(Serialize)]
struct SegmentVerdict {
    segment: usize,
    verdict: &'static str,
    max_statistic: f64,
    significance: Option<f64>,
    rotation_angles: Vec<f64>,
    xp_relative_norm: f64,
}

#[derive(Serialize)]
struct VerdictDoc {
    modes: Vec<i64>,
    segments: usize,
    exhaustive: bool,
    rotated: bool,
    verdict: &'static str,
    /// Smallest `-E_w / dE_w` over bipartitions, null when every `dE_w = 0`.
    significance: Option<f64>,
    max_statistic: f64,
    min_abs_sigma: Option<f64>,
    per_segment: Vec<SegmentVerdict>,
    bipartitions: Vec<BipartitionRow>,
}

pub struct AnalyzeOptions {
    pub selection: ModeSelection,
    pub rotate: bool,
    /// Sample this many bipartitions instead of enumerating all of them.
    pub samples: Option<usize>,
    pub seed: u64,
}

pub fn cmd_analyze(out: &mut Output, input: &AnalyzeInput, opts: &AnalyzeOptions) -> CliResult<()> {
    let segments = load_segments(input)?;
    let indices = &segments[0].indices;
    let positions = select_modes(indices, &opts.selection)?;
    if positions.len() < 2 {
        return usage("the bipartition test needs at least two modes");
    }
    let k = positions.len();
    if k > MAX_EXHAUSTIVE_MODES && opts.samples.is_none() {
        return usage(format!(
            "{k} modes exceed the exhaustive limit of {MAX_EXHAUSTIVE_MODES}; pass --samples"
        ));
    }
    let modes: Vec<i64> = positions.iter().map(|&p| indices[p]).collect();
    let all: Vec<usize> = (0..k).collect();

    let mut reports: Vec<InseparabilityReport<f64>> = Vec::with_capacity(segments.len());
    let mut per_segment = Vec::with_capacity(segments.len());
    for (s, seg) in segments.iter().enumerate() {
        let (v, sigma, angles) = reduce(seg, &positions, opts.rotate)?;
        let report = match opts.samples {
            None => test_full_inseparability(&v, &sigma, &all)?,
            Some(count) => test_sampled_inseparability(&v, &sigma, &all, count, opts.seed)?,
        };
        per_segment.push(SegmentVerdict {
            segment: s,
            verdict: report.verdict.label(),
            max_statistic: report.max_statistic,
            significance: finite(report.significance),
            rotation_angles: angles,
            xp_relative_norm: v.xp_norm() / v.matrix().norm(),
        });
        reports.push(report);
    }
    let combined = combine_reports(&reports)?;
    let rows: Vec<BipartitionRow> = combined
        .partitions
        .iter()
        .zip(&combined.combined)
        .enumerate()
        .map(|(i, (p, c))| BipartitionRow {
            mask: p.mask(),
            label: p.label(&modes),
            e: c.e,
            de: c.de,
            sigma_ratio: finite(c.sigma_ratio),
            zero_uncertainty: c.zero_uncertainty,
            segments: reports
                .iter()
                .map(|r| SegmentStatistic {
                    e: r.results[i].e,
                    de: r.results[i].de,
                })
                .collect(),
        })
        .collect();
    let doc = VerdictDoc {
        modes,
        segments: segments.len(),
        exhaustive: reports[0].exhaustive,
        rotated: opts.rotate,
        verdict: combined.verdict.label(),
        significance: finite(combined.significance),
        max_statistic: combined.max_statistic,
        min_abs_sigma: finite(combined.min_abs_sigma),
        per_segment,
        bipartitions: rows,
    };
    out.json("verdict.json", &doc)?;
    out.csv("bipartitions.csv", || {
        let mut s = String::from("mask,label,E,dE,sigma_ratio,zero_uncertainty\n");
        for r in &doc.bipartitions {
            let _ = writeln!(
                s,
                "{},\"{}\",{},{},{},{}",
                r.mask,
                r.label,
                format_float(r.e),
                format_float(r.de),
                r.sigma_ratio.map(format_float).unwrap_or_default(),
                r.zero_uncertainty
            );
        }
        s
    })
}

#[derive(Serialize)]
struct LossSweepDoc {
    input_sha256: String,
    modes: Vec<i64>,
    rotation_angles: Vec<f64>,
    etas: Vec<f64>,
    purities: Vec<f64>,
    /// Largest bipartition statistic; negative means every bipartition is entangled.
    margins: Vec<f64>,
}

pub struct LossOptions {
    pub selection: ModeSelection,
    pub points: usize,
    pub eta_min: f64,
    pub eta_max: f64,
}

pub fn cmd_loss_sweep(out: &mut Output, covariance_path: &Path, opts: &LossOptions) -> CliResult<()> {
    if !(0.0..=1.0).contains(&opts.eta_min) || !(0.0..=1.0).contains(&opts.eta_max) || opts.eta_min >= opts.eta_max {
        return usage(format!(
            "need 0 <= eta-min < eta-max <= 1, got [{}, {}]",
            opts.eta_min, opts.eta_max
        ));
    }
    if opts.points < 2 {
        return usage("--points must be at least 2");
    }
    let doc: MatrixDoc = read_json(covariance_path)?;
    let v = doc.covariance()?;
    let indices = doc.indices();
    let positions = select_modes(&indices, &opts.selection)?;
    let span = opts.eta_max - opts.eta_min;
    let last = (opts.points - 1) as f64;
    let etas: Vec<f64> = (0..opts.points)
        .map(|k| if k + 1 == opts.points { opts.eta_max } else { opts.eta_min + span * k as f64 / last })
        .collect();
    let result = loss_sweep(&v, &etas, &positions)?;
    let sweep = LossSweepDoc {
        input_sha256: sha256_file(covariance_path)?,
        modes: result.modes.iter().map(|&p| indices[p]).collect(),
        rotation_angles: result.rotation_angles,
        etas: result.etas,
        purities: result.purities,
        margins: result.margins,
    };
    out.json("loss_sweep.json", &sweep)?;
    out.csv("loss_sweep.csv", || {
        let mut s = String::from("eta,purity,margin\n");
        for i in 0..sweep.etas.len() {
            let _ = writeln!(
                s,
                "{},{},{}",
                format_float(sweep.etas[i]),
                format_float(sweep.purities[i]),
                format_float(sweep.margins[i])
            );
        }
        s
    })
}
