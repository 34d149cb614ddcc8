//! File formats: JSON documents for configs and results, CSV for plot-ready
//! tables, little-endian `f64` streams for raw samples.
//!
//! Every document rejects unknown keys. Floats are written by serde_json in
//! shortest round-trip form, and CSV cells use 17 significant digits, so
//! re-running a computation reproduces files byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationEntry, CalibrationTable, PlanckSweep};
use crate::comb::{CorrelationGraph, Edge};
use crate::error::{Error, Result};
use crate::gaussian::CovarianceMatrix;
use crate::jpa::{ModeWindow, Pump, PumpConfig};
use crate::reconstruction::{MeasurementRecord, UncertaintyMatrix};

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn to_json_bytes<S: Serialize>(value: &S) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

/// `{:.16e}`: 17 significant digits, exact round trip.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Resolves `file` relative to the directory of `base`.
pub fn relative_to(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Format(format!("matrix must be square, got {n} rows of unequal length")));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

/// Covariance or uncertainty matrix document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub n_modes: usize,
    /// Always `"xxpp"`.
    pub ordering: String,
    /// Comb index of each mode position, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_indices: Option<Vec<i64>>,
    pub matrix: Vec<Vec<f64>>,
}

impl MatrixDoc {
    fn new(m: &DMatrix<f64>, mode_indices: Option<&[i64]>) -> Self {
        Self {
            n_modes: m.nrows() / 2,
            ordering: "xxpp".into(),
            mode_indices: mode_indices.map(<[i64]>::to_vec),
            matrix: rows(m),
        }
    }

    fn data(&self) -> Result<DMatrix<f64>> {
        if self.ordering != "xxpp" {
            return Err(Error::Format(format!("unsupported ordering {:?}, expected \"xxpp\"", self.ordering)));
        }
        let m = from_rows(&self.matrix)?;
        if m.nrows() != 2 * self.n_modes {
            return Err(Error::Format(format!(
                "matrix is {0}x{0} but n_modes is {1}",
                m.nrows(),
                self.n_modes
            )));
        }
        if let Some(idx) = &self.mode_indices {
            if idx.len() != self.n_modes {
                return Err(Error::Format(format!("{} mode indices for {} modes", idx.len(), self.n_modes)));
            }
        }
        Ok(m)
    }

    pub fn from_covariance(v: &CovarianceMatrix<f64>, mode_indices: Option<&[i64]>) -> Self {
        Self::new(v.matrix(), mode_indices)
    }

    pub fn from_uncertainty(s: &UncertaintyMatrix<f64>, mode_indices: Option<&[i64]>) -> Self {
        Self::new(s.matrix(), mode_indices)
    }

    pub fn covariance(&self) -> Result<CovarianceMatrix<f64>> {
        CovarianceMatrix::new(self.data()?)
    }

    pub fn uncertainty(&self) -> Result<UncertaintyMatrix<f64>> {
        UncertaintyMatrix::new(self.data()?)
    }

    /// Stored indices, or `0..n` positions.
    pub fn indices(&self) -> Vec<i64> {
        self.mode_indices
            .clone()
            .unwrap_or_else(|| (0..self.n_modes as i64).collect())
    }
}

/// Matrix as CSV rows, no header.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in m.row_iter() {
        let cells: Vec<String> = r.iter().map(|x| format_float(*x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("row {}: {e}", i + 1)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    from_rows(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexDoc {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpDoc {
    /// Effective pump amplitude, `mu / 2 pi` in Hz.
    pub mu_hz: ComplexDoc,
    /// Pump frequency minus twice the resonance, Hz.
    pub detuning_hz: f64,
}

/// Simulation config. All rates are ordinary frequencies (Hz); angular
/// values are `2 pi` times these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpConfigDoc {
    pub resonance_hz: f64,
    pub kappa_hz: f64,
    pub pumps: Vec<PumpDoc>,
    /// Comb window `-half_width ..= half_width`.
    pub half_width: usize,
    /// Required unless exactly two pumps fix the comb.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comb_spacing_hz: Option<f64>,
}

impl PumpConfigDoc {
    pub fn pump_config(&self) -> Result<PumpConfig<f64>> {
        PumpConfig::new(
            TAU * self.resonance_hz,
            TAU * self.kappa_hz,
            self.pumps
                .iter()
                .map(|p| Pump {
                    mu: Complex::new(TAU * p.mu_hz.re, TAU * p.mu_hz.im),
                    detuning: TAU * p.detuning_hz,
                })
                .collect(),
        )
    }

    pub fn window(&self) -> Result<ModeWindow> {
        ModeWindow::new(self.half_width)
    }

    pub fn spacing(&self) -> Option<f64> {
        self.comb_spacing_hz.map(|d| TAU * d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub a: i64,
    pub b: i64,
    pub pump: u8,
}

impl From<&Edge> for EdgeDoc {
    fn from(e: &Edge) -> Self {
        Self {
            a: e.a,
            b: e.b,
            pump: e.pump,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub vertices: Vec<i64>,
    pub edges: Vec<EdgeDoc>,
    pub dropped: Vec<EdgeDoc>,
    pub components: Vec<Vec<i64>>,
}

impl From<&CorrelationGraph> for GraphDoc {
    fn from(g: &CorrelationGraph) -> Self {
        Self {
            vertices: g.vertices.clone(),
            edges: g.edges.iter().map(EdgeDoc::from).collect(),
            dropped: g.dropped.iter().map(EdgeDoc::from).collect(),
            components: g.components(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationEntryDoc {
    pub mode_index: i64,
    pub frequency_hz: f64,
    pub gain: f64,
    pub added_photons: f64,
    pub covariance: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTableDoc {
    pub entries: Vec<CalibrationEntryDoc>,
}

impl From<&CalibrationTable> for CalibrationTableDoc {
    fn from(t: &CalibrationTable) -> Self {
        Self {
            entries: t
                .entries
                .iter()
                .map(|e| CalibrationEntryDoc {
                    mode_index: e.mode_index,
                    frequency_hz: e.frequency,
                    gain: e.gain,
                    added_photons: e.added_photons,
                    covariance: e.covariance,
                })
                .collect(),
        }
    }
}

impl CalibrationTableDoc {
    pub fn table(&self) -> Result<CalibrationTable> {
        CalibrationTable::new(
            self.entries
                .iter()
                .map(|e| CalibrationEntry {
                    mode_index: e.mode_index,
                    frequency: e.frequency_hz,
                    gain: e.gain,
                    added_photons: e.added_photons,
                    covariance: e.covariance,
                })
                .collect(),
        )
    }
}

/// Calibration manifest: one CSV per frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationManifest {
    pub bandwidth_hz: f64,
    pub impedance_ohm: f64,
    pub sweeps: Vec<SweepRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRef {
    pub mode_index: i64,
    pub frequency_hz: f64,
    /// CSV path, relative to the manifest.
    pub file: String,
}

/// Reads a sweep CSV with header `temperature_K,variance_V2[,weight]`.
pub fn read_planck_csv(path: &Path, frequency: f64, bandwidth: f64, impedance: f64) -> Result<PlanckSweep> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?
        .split(',')
        .map(str::trim)
        .collect();
    let weighted = match header.as_slice() {
        ["temperature_K", "variance_V2"] => false,
        ["temperature_K", "variance_V2", "weight"] => true,
        other => {
            return Err(Error::Format(format!(
                "{}: expected header temperature_K,variance_V2[,weight], got {}",
                path.display(),
                other.join(",")
            )))
        }
    };
    let (mut t, mut v, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let cells: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 2)))?;
        if cells.len() != header.len() {
            return Err(Error::Format(format!("{} line {}: wrong column count", path.display(), i + 2)));
        }
        t.push(cells[0]);
        v.push(cells[1]);
        if weighted {
            w.push(cells[2]);
        }
    }
    PlanckSweep::new(frequency, t, v, weighted.then_some(w), bandwidth, impedance)
}

pub fn planck_csv(sweep: &PlanckSweep) -> String {
    let mut out = String::from(if sweep.weights.is_some() {
        "temperature_K,variance_V2,weight\n"
    } else {
        "temperature_K,variance_V2\n"
    });
    for i in 0..sweep.len() {
        let _ = write!(out, "{},{}", format_float(sweep.temperatures[i]), format_float(sweep.variances[i]));
        if let Some(w) = &sweep.weights {
            let _ = write!(out, ",{}", format_float(w[i]));
        }
        out.push('\n');
    }
    out
}

/// Sidecar manifest of a binary sample stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordManifest {
    pub n_modes: usize,
    pub n_samples: usize,
    pub sample_rate_hz: f64,
    pub segment_boundaries: Vec<usize>,
    pub mode_frequencies_hz: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_indices: Option<Vec<i64>>,
    /// Binary file relative to the manifest; defaults to the manifest's
    /// name with a `.bin` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<String>,
}

pub fn read_record(manifest_path: &Path) -> Result<(MeasurementRecord, RecordManifest)> {
    let manifest: RecordManifest = read_json(manifest_path)?;
    let data_path = match &manifest.data_file {
        Some(f) => relative_to(manifest_path, f),
        None => manifest_path.with_extension("bin"),
    };
    let bytes = read_file(&data_path)?;
    let expected = manifest.n_samples * manifest.n_modes * 2 * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes for {} samples of {} modes, found {}",
            data_path.display(),
            manifest.n_samples,
            manifest.n_modes,
            bytes.len()
        )));
    }
    let samples = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let record = MeasurementRecord::new(
        manifest.n_modes,
        manifest.sample_rate_hz,
        manifest.segment_boundaries.clone(),
        manifest.mode_frequencies_hz.clone(),
        samples,
    )?;
    Ok((record, manifest))
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn write_record(manifest_path: &Path, record: &MeasurementRecord, mode_indices: Option<&[i64]>) -> Result<()> {
    let data_path = manifest_path.with_extension("bin");
    let mut bytes = Vec::with_capacity(record.samples.len() * 8);
    for x in &record.samples {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    write_atomic(&data_path, &bytes)?;
    let manifest = RecordManifest {
        n_modes: record.n_modes,
        n_samples: record.n_samples(),
        sample_rate_hz: record.sample_rate_hz,
        segment_boundaries: record.segment_boundaries.clone(),
        mode_frequencies_hz: record.mode_frequencies_hz.clone(),
        mode_indices: mode_indices.map(<[i64]>::to_vec),
        data_file: data_path.file_name().map(|n| n.to_string_lossy().into_owned()),
    };
    write_json(manifest_path, &manifest)
}
