//! CSV and JSON artifacts.
//!
//! Numbers are written in Rust's shortest round-trip form so reruns are
//! byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::dfield::DiffusionField;
use crate::observables::{DecayCurve, FitResult};
use crate::solver::PolarizationField;

#[derive(Debug, Error)]
#[error("{path}: {source}")]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

fn write(path: &Path, contents: &str) -> Result<(), OutputError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| OutputError {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| OutputError {
        path: path.to_path_buf(),
        source,
    })
}

pub fn dfield_csv(field: &DiffusionField) -> String {
    let mut s = String::from("x_nm,y_nm,D_nm2_per_s\n");
    for ((_, _, x, y), d) in field.mesh.nodes().zip(&field.values) {
        let _ = writeln!(s, "{x},{y},{d}");
    }
    s
}

pub fn snapshot_csv(field: &PolarizationField) -> String {
    let mut s = String::from("x_nm,y_nm,Iz\n");
    for ((_, _, x, y), v) in field.mesh.nodes().zip(&field.values) {
        let _ = writeln!(s, "{x},{y},{v}");
    }
    s
}

pub fn decay_csv(samples: &[(f64, f64)]) -> String {
    let mut s = String::from("t_s,hz_norm\n");
    for (t, h) in samples {
        let _ = writeln!(s, "{t},{h}");
    }
    s
}

pub fn write_dfield(path: &Path, field: &DiffusionField) -> Result<(), OutputError> {
    write(path, &dfield_csv(field))
}

pub fn write_snapshot(path: &Path, field: &PolarizationField) -> Result<(), OutputError> {
    write(path, &snapshot_csv(field))
}

pub fn write_decay(path: &Path, curve: &DecayCurve) -> Result<(), OutputError> {
    write(path, &decay_csv(&curve.samples))
}

pub fn write_fit(path: &Path, fit: &FitResult) -> Result<(), OutputError> {
    write_json(path, fit)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), OutputError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), OutputError> {
    write(path, text)
}

/// Quantities computed during a run, recorded next to the config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub background_d_nm2_per_s: Option<f64>,
    pub center_d_nm2_per_s: Option<f64>,
    pub max_d_nm2_per_s: Option<f64>,
    #[serde(rename = "sum_A_ueV")]
    pub sum_a_uev: f64,
    #[serde(rename = "A0_rad_per_s")]
    pub a0_rad_per_s: f64,
    pub stability_dt_s: Option<f64>,
    pub dt_s: Option<f64>,
    pub steps: Option<u64>,
    pub final_time_s: Option<f64>,
    pub total_drift: Option<f64>,
    pub half_decay_s: Option<f64>,
    #[serde(rename = "D_eff_nm2_per_s")]
    pub d_eff_nm2_per_s: Option<f64>,
}

/// Everything needed to reproduce a run. `config` is fully materialized and
/// loads back through [`crate::config::load_config`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub scenario: Option<String>,
    pub run: Option<String>,
    pub config: RunConfig,
    pub derived: Derived,
    pub warnings: Vec<String>,
    pub threads: usize,
    pub seed: Option<u64>,
    pub elapsed_s: f64,
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            scenario: None,
            run: None,
            config: config.materialized(),
            derived: Derived::default(),
            warnings: Vec::new(),
            threads: rayon::current_num_threads(),
            seed: None,
            elapsed_s: 0.0,
        }
    }
}
