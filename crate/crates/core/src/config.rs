//! Run configuration: strict JSON parsing and fail-fast validation.

use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;

use crate::cell::MIN_CELL_GRID;
use crate::coefficients::Phi2Variant;
use crate::oracle::MIN_INTERVALS;
use crate::params::{FluidParams, ParamError};
use crate::reynolds::{MacroDomain, MIN_MACRO_GRID};
use crate::roughness::{RoughnessError, RoughnessProfile};

pub const DEFAULT_ORACLE_M: usize = 2048;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{key} {message}")]
    Validation { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
pub enum Phi2Choice {
    #[default]
    #[serde(rename = "auto")]
    Auto,
    A1,
    A2,
}

impl Phi2Choice {
    pub fn fixed(self) -> Option<Phi2Variant> {
        match self {
            Self::Auto => None,
            Self::A1 => Some(Phi2Variant::A1),
            Self::A2 => Some(Phi2Variant::A2),
        }
    }
}

impl std::str::FromStr for Phi2Choice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Self::Auto),
            "a1" => Ok(Self::A1),
            "a2" => Ok(Self::A2),
            _ => Err(format!("expected auto, A1 or A2, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub fluid: FluidParams,
    pub roughness: RoughnessProfile,
    pub cell_n: usize,
    pub domain: MacroDomain,
    pub oracle_m: usize,
    pub output_dir: Option<PathBuf>,
    pub formats: Vec<OutputFormat>,
    pub phi2: Phi2Choice,
}

impl RunConfig {
    pub fn writes(&self, format: OutputFormat) -> bool {
        self.formats.contains(&format)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    fluid: RawFluid,
    roughness: RawRoughness,
    cell: RawCell,
    #[serde(rename = "macro")]
    domain: MacroDomain,
    #[serde(default)]
    oracle: Option<RawOracle>,
    #[serde(default)]
    output: Option<RawOutput>,
    #[serde(default)]
    flags: Option<RawFlags>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFluid {
    #[serde(rename = "N2")]
    n2: f64,
    #[serde(rename = "Rc")]
    rc: f64,
    alpha: f64,
    beta: f64,
    s: [f64; 2],
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawRoughness {
    Cosine {
        h0: f64,
        amplitude: [f64; 2],
        #[serde(default)]
        phase: [f64; 2],
    },
    Sampled {
        n: usize,
        values: Vec<f64>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    n: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    #[serde(rename = "M")]
    m: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(default)]
    directory: Option<PathBuf>,
    #[serde(default)]
    formats: Option<Vec<OutputFormat>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlags {
    #[serde(default)]
    phi2_variant: Phi2Choice,
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            return ConfigError::Parse {
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            };
        }
        let message = inner.to_string();
        // "unknown field `x`, expected ..." names the offending key itself
        if let Some(name) = message
            .strip_prefix("unknown field `")
            .and_then(|rest| rest.split('`').next())
        {
            // the path may or may not already end in the unknown key
            let key = if path == "." {
                name.to_string()
            } else if path == name || path.ends_with(&format!(".{name}")) {
                path
            } else {
                format!("{path}.{name}")
            };
            return ConfigError::invalid(key, "is not a recognised key");
        }
        let message = message
            .split(" at line ")
            .next()
            .unwrap_or(&message)
            .to_string();
        ConfigError::invalid(path, message)
    })?;
    de.end().map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate(raw)
}

fn validate(raw: RawConfig) -> Result<RunConfig, ConfigError> {
    let f = raw.fluid;
    let fluid = FluidParams::new(f.n2, f.rc, f.alpha, f.beta, f.s);
    fluid.check_ranges().map_err(|e| match e {
        ParamError::Range {
            name, constraint, ..
        } => ConfigError::invalid(format!("fluid.{name}"), constraint),
        other => ConfigError::invalid("fluid", other.to_string()),
    })?;

    let roughness = match raw.roughness {
        RawRoughness::Cosine {
            h0,
            amplitude,
            phase,
        } => RoughnessProfile::cosine(h0, amplitude, phase),
        RawRoughness::Sampled { n, values } => RoughnessProfile::sampled(n, values),
    }
    .map_err(|e| {
        let key = match e {
            RoughnessError::Shape { .. } => "roughness.values",
            _ => "roughness",
        };
        ConfigError::invalid(key, e.to_string())
    })?;

    if raw.cell.n < MIN_CELL_GRID {
        return Err(ConfigError::invalid(
            "cell.n",
            format!("must be >= {MIN_CELL_GRID}"),
        ));
    }
    let d = raw.domain;
    for (key, v) in [("macro.Lx", d.lx), ("macro.Ly", d.ly)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(ConfigError::invalid(key, "must be > 0"));
        }
    }
    for (key, v) in [("macro.mx", d.mx), ("macro.my", d.my)] {
        if v < MIN_MACRO_GRID {
            return Err(ConfigError::invalid(
                key,
                format!("must be >= {MIN_MACRO_GRID}"),
            ));
        }
    }
    let oracle_m = raw.oracle.map_or(DEFAULT_ORACLE_M, |o| o.m);
    if oracle_m < MIN_INTERVALS {
        return Err(ConfigError::invalid(
            "oracle.M",
            format!("must be >= {MIN_INTERVALS}"),
        ));
    }
    let (output_dir, formats) = match raw.output {
        Some(o) => (
            o.directory,
            o.formats
                .unwrap_or_else(|| vec![OutputFormat::Csv, OutputFormat::Json]),
        ),
        None => (None, vec![OutputFormat::Csv, OutputFormat::Json]),
    };
    Ok(RunConfig {
        fluid,
        roughness,
        cell_n: raw.cell.n,
        domain: d,
        oracle_m,
        output_dir,
        formats,
        phi2: raw.flags.map(|f| f.phi2_variant).unwrap_or_default(),
    })
}
