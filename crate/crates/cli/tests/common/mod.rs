#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use combent::calibration::{expected_variance, CalibrationEntry, CalibrationTable, PlanckSweep};
use combent::gaussian::CovarianceMatrix;
use combent::io::{
    planck_csv, write_atomic, write_json, write_record, CalibrationManifest, CalibrationTableDoc, ComplexDoc,
    PumpConfigDoc, PumpDoc, SweepRef,
};
use combent::random::gaussian_samples;
use combent::reconstruction::{amplify, denormalize_covariance, MeasurementRecord};

pub const KAPPA_HZ: f64 = 124e6;
pub const BIG_DELTA_HZ: f64 = 9.2e6;
pub const RESONANCE_HZ: f64 = 4.2e9;
pub const BANDWIDTH_HZ: f64 = 1e3;
pub const IMPEDANCE_OHM: f64 = 50.0;

pub fn combent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_combent"))
        .args(args)
        .output()
        .expect("combent binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Bichromatic config with the measured linewidth and pump separation.
pub fn bichromatic(mu_over_kappa: f64, half_width: usize) -> PumpConfigDoc {
    let mu = ComplexDoc {
        re: mu_over_kappa * KAPPA_HZ,
        im: 0.0,
    };
    PumpConfigDoc {
        resonance_hz: RESONANCE_HZ,
        kappa_hz: KAPPA_HZ,
        pumps: vec![
            PumpDoc {
                mu_hz: mu,
                detuning_hz: -BIG_DELTA_HZ / 2.0,
            },
            PumpDoc {
                mu_hz: mu,
                detuning_hz: BIG_DELTA_HZ / 2.0,
            },
        ],
        half_width,
        comb_spacing_hz: None,
    }
}

/// Comb frequency of mode `n` for [`bichromatic`] configs.
pub fn comb_frequency(n: i64) -> f64 {
    RESONANCE_HZ + n as f64 * BIG_DELTA_HZ / 4.0
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Synthetic Planck sweep: 20 temperatures from 10 mK to 1.25 K,
/// multiplicative Gaussian noise of relative size `noise`.
pub fn planck_sweep(frequency: f64, gain: f64, nbar: f64, noise: f64, rng: &mut ChaCha8Rng) -> PlanckSweep {
    let temps: Vec<f64> = (0..20).map(|i| 0.010 * (125.0f64).powf(i as f64 / 19.0)).collect();
    let vars = temps
        .iter()
        .map(|&t| {
            expected_variance(frequency, t, gain, nbar, BANDWIDTH_HZ, IMPEDANCE_OHM).unwrap() * (1.0 + noise * normal(rng))
        })
        .collect();
    PlanckSweep::new(frequency, temps, vars, None, BANDWIDTH_HZ, IMPEDANCE_OHM).unwrap()
}

/// Writes a calibration manifest with one noisy sweep per mode.
pub fn write_calibration_inputs(dir: &Path, modes: &[(i64, f64, f64, f64)], seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sweeps = Vec::new();
    for &(n, f, g, nbar) in modes {
        let sweep = planck_sweep(f, g, nbar, 0.01, &mut rng);
        let file = format!("sweep_{n}.csv");
        write_atomic(&dir.join(&file), planck_csv(&sweep).as_bytes()).unwrap();
        sweeps.push(SweepRef {
            mode_index: n,
            frequency_hz: f,
            file,
        });
    }
    let manifest = dir.join("calibration_manifest.json");
    write_json(
        &manifest,
        &CalibrationManifest {
            bandwidth_hz: BANDWIDTH_HZ,
            impedance_ohm: IMPEDANCE_OHM,
            sweeps,
        },
    )
    .unwrap();
    manifest
}

/// Table with relative gain uncertainty `rel_g`, absolute `sigma_nbar`, correlation `rho`.
pub fn synthetic_table(modes: &[i64], gains: &[f64], nbars: &[f64], rel_g: f64, sigma_nbar: f64, rho: f64) -> CalibrationTable {
    let entries = modes
        .iter()
        .zip(gains.iter().zip(nbars))
        .map(|(&n, (&g, &nb))| {
            let sg = rel_g * g;
            CalibrationEntry {
                mode_index: n,
                frequency: comb_frequency(n),
                gain: g,
                added_photons: nb,
                covariance: [[sg * sg, rho * sg * sigma_nbar], [rho * sg * sigma_nbar, sigma_nbar * sigma_nbar]],
            }
        })
        .collect();
    CalibrationTable::new(entries).unwrap()
}

pub fn write_table(path: &Path, table: &CalibrationTable) {
    write_json(path, &CalibrationTableDoc::from(table)).unwrap();
}

/// Actual channel: the table's values perturbed by one draw from their covariance.
pub fn perturbed_channel(table: &CalibrationTable, rng: &mut ChaCha8Rng) -> Vec<CalibrationEntry> {
    table
        .entries
        .iter()
        .map(|e| {
            let c = e.covariance;
            let l00 = c[0][0].sqrt();
            let l10 = if l00 > 0.0 { c[1][0] / l00 } else { 0.0 };
            let l11 = (c[1][1] - l10 * l10).max(0.0).sqrt();
            let (z0, z1) = (normal(rng), normal(rng));
            let mut out = CalibrationEntry::exact(e.mode_index, e.frequency, e.gain + l00 * z0, e.added_photons + l10 * z0 + l11 * z1);
            out.covariance = [[0.0; 2]; 2];
            out
        })
        .collect()
}

/// Digitizer record of `v_true` sent through `channel`, written as
/// `<dir>/record.json` + `record.bin` with a single segment.
pub fn write_synthetic_record(
    dir: &Path,
    v_true: &CovarianceMatrix<f64>,
    channel: &[CalibrationEntry],
    indices: &[i64],
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> PathBuf {
    let v_meas = amplify(v_true, channel).unwrap();
    let freqs: Vec<f64> = indices.iter().map(|&n| comb_frequency(n)).collect();
    let raw = denormalize_covariance(&v_meas, &freqs, BANDWIDTH_HZ, IMPEDANCE_OHM).unwrap();
    let samples = gaussian_samples(&raw.data, n_samples, rng).unwrap();
    let record = MeasurementRecord::with_equal_segments(indices.len(), 10e6, 1, freqs, samples).unwrap();
    let manifest = dir.join("record.json");
    write_record(&manifest, &record, Some(indices)).unwrap();
    manifest
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}
