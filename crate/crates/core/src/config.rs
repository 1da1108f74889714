//! JSON run configuration.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "system": {
//!     "A": [[1.2, 1.0], [0.0, 1.1]],
//!     "C": [[1, 0]],
//!     "Q": [[1, 0.5], [0.5, 2]],
//!     "R": 1,
//!     "Sigma0": [[1, 0.5], [0.5, 2]]
//!   },
//!   "channel": { "p1": 0.9, "p2": 0.6 },
//!   "p": 0.51, "M": 10, "epsilon": 1e-6, "seed": 42, "T": 200, "runs": 200
//! }
//! ```
//!
//! Matrices are row-major: nested rows, a flat list (one row), or a bare
//! number (1×1). Everything after `channel` is optional.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;
use serde_path_to_error::Segment;

use crate::channel::ChannelParams;
use crate::linmodel::{validate_system, LinearSystem};
use crate::montecarlo::PhaseCriteria;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum MatrixSpec {
    Scalar(f64),
    Row(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSpec {
    #[serde(rename = "A")]
    a: MatrixSpec,
    #[serde(rename = "C")]
    c: MatrixSpec,
    #[serde(rename = "Q")]
    q: MatrixSpec,
    #[serde(rename = "R")]
    r: MatrixSpec,
    #[serde(rename = "Sigma0")]
    sigma0: MatrixSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSpec {
    p1: f64,
    p2: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: Option<u32>,
    system: SystemSpec,
    channel: ChannelSpec,
    p: Option<f64>,
    #[serde(rename = "M")]
    secrecy_floor: Option<f64>,
    epsilon: Option<f64>,
    seed: Option<u64>,
    #[serde(rename = "T")]
    steps: Option<usize>,
    runs: Option<usize>,
    #[serde(rename = "M_grid")]
    m_grid: Option<Vec<f64>>,
    output: Option<PathBuf>,
    criteria: Option<PhaseCriteria>,
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: LinearSystem,
    pub channel: ChannelParams,
    pub p: Option<f64>,
    pub secrecy_floor: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub runs: Option<usize>,
    pub m_grid: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
    pub criteria: PhaseCriteria,
    /// Non-fatal findings from system validation.
    pub warnings: Vec<String>,
}

fn config_error(pointer: &str, message: impl Into<String>) -> Error {
    Error::Config { pointer: pointer.to_string(), message: message.into() }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

fn to_matrix(spec: &MatrixSpec, pointer: &str) -> Result<DMatrix<f64>> {
    let m = match spec {
        MatrixSpec::Scalar(v) => DMatrix::from_element(1, 1, *v),
        MatrixSpec::Row(row) => {
            if row.is_empty() {
                return Err(config_error(pointer, "matrix must not be empty"));
            }
            DMatrix::from_row_slice(1, row.len(), row)
        }
        MatrixSpec::Rows(rows) => {
            let ncols = rows.first().map_or(0, Vec::len);
            if ncols == 0 {
                return Err(config_error(pointer, "matrix must not be empty"));
            }
            if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
                return Err(config_error(
                    &format!("{pointer}/{i}"),
                    format!("row has {} entries, expected {ncols}", rows[i].len()),
                ));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            DMatrix::from_row_slice(rows.len(), ncols, &flat)
        }
    };
    if m.iter().any(|v| !v.is_finite()) {
        return Err(config_error(pointer, "entries must be finite"));
    }
    Ok(m)
}

fn check_probability(pointer: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(config_error(pointer, format!("must lie in [0, 1], got {v}")));
    }
    Ok(())
}

fn check_positive(pointer: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x > 0.0) || !x.is_finite() => {
            Err(config_error(pointer, format!("must be positive and finite, got {x}")))
        }
        _ => Ok(()),
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| config_error(&json_pointer(e.path()), e.inner().to_string()))?;

    if let Some(v) = raw.schema_version {
        if v != SCHEMA_VERSION {
            return Err(config_error(
                "/schema_version",
                format!("unsupported schema version {v}, expected {SCHEMA_VERSION}"),
            ));
        }
    }
    check_probability("/channel/p1", raw.channel.p1)?;
    check_probability("/channel/p2", raw.channel.p2)?;
    if let Some(p) = raw.p {
        check_probability("/p", p)?;
    }
    check_positive("/M", raw.secrecy_floor)?;
    check_positive("/epsilon", raw.epsilon)?;
    if let Some(grid) = &raw.m_grid {
        if grid.is_empty() {
            return Err(config_error("/M_grid", "must not be empty"));
        }
        for (i, m) in grid.iter().enumerate() {
            check_positive(&format!("/M_grid/{i}"), Some(*m))?;
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_error("/M_grid", "must be strictly increasing"));
        }
    }
    if raw.runs == Some(0) {
        return Err(config_error("/runs", "must be at least 1"));
    }

    let s = &raw.system;
    let system = LinearSystem::new(
        to_matrix(&s.a, "/system/A")?,
        to_matrix(&s.c, "/system/C")?,
        to_matrix(&s.q, "/system/Q")?,
        to_matrix(&s.r, "/system/R")?,
        to_matrix(&s.sigma0, "/system/Sigma0")?,
    )?;
    let report = validate_system(&system);
    if !report.ok {
        return Err(Error::Validation(Box::new(report)));
    }

    Ok(RunConfig {
        system,
        channel: ChannelParams::new(raw.channel.p1, raw.channel.p2)?,
        p: raw.p,
        secrecy_floor: raw.secrecy_floor,
        epsilon: raw.epsilon,
        seed: raw.seed,
        steps: raw.steps,
        runs: raw.runs,
        m_grid: raw.m_grid,
        output: raw.output,
        criteria: raw.criteria.unwrap_or_default(),
        warnings: report.warnings,
    })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
