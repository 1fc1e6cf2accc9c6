//! Run-configuration and result serialization: strict TOML configs,
//! JSON photocount records, CSV time series, and the JSON run manifest.
//!
//! All parsers work on strings and reject unknown keys and out-of-bound
//! values; file handling lives in the CLI. Floats are written with 17
//! significant digits so every numeric round-trips bit-exactly.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::jumps::PhotocountRecord;
use crate::params::SystemParams;

/// Complex number as paired re/im fields.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ComplexSpec {
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl From<ComplexSpec> for C64 {
    fn from(s: ComplexSpec) -> C64 {
        C64::new(s.re, s.im)
    }
}

impl From<C64> for ComplexSpec {
    fn from(z: C64) -> ComplexSpec {
        ComplexSpec { re: z.re, im: z.im }
    }
}

fn default_gamma() -> f64 {
    1.0
}

fn default_tol() -> f64 {
    1e-8
}

/// Physical-parameter block of a run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub g: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub drive: f64,
    #[serde(default)]
    pub beta: ComplexSpec,
    /// Fock truncation; omitted means the margin rule picks it.
    #[serde(default)]
    pub n_fock: Option<usize>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl ParamsConfig {
    pub fn build(&self) -> Result<SystemParams> {
        let beta: C64 = self.beta.into();
        match self.n_fock {
            Some(nf) => SystemParams::new(self.g, self.gamma, self.drive, beta, nf, self.tol),
            None => SystemParams::auto(self.g, self.gamma, self.drive, beta, self.tol),
        }
    }
}

/// Initial-state selector for evolution commands.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    Steady,
    VacuumGround,
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    pub t_total: f64,
    pub dt: f64,
    #[serde(default = "default_rho0")]
    pub rho0: InitialState,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub estimate_error: bool,
}

fn default_rho0() -> InitialState {
    InitialState::Steady
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub n_traj: usize,
    pub seed: u64,
    pub dt: f64,
    pub t_total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalConfig {
    /// Inline record labels (1 or 2 per count).
    #[serde(default)]
    pub record: Option<Vec<u8>>,
    /// Path to a JSON record file, relative to the config.
    #[serde(default)]
    pub record_file: Option<String>,
    pub dt_total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Check names; empty means the full battery.
    #[serde(default)]
    pub checks: Vec<String>,
    /// Optional residual-tolerance override applied to every check.
    #[serde(default)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmeRunConfig {
    pub phi: f64,
    pub eta: f64,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub t_total: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default = "default_format")]
    pub format: OutputFormat,
}

fn default_out_dir() -> String {
    "out".into()
}

fn default_format() -> OutputFormat {
    OutputFormat::Csv
}

/// A full run configuration: physical parameters plus per-command
/// sections. Unknown keys anywhere are a parse error.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsConfig,
    #[serde(default)]
    pub evolve: Option<EvolveConfig>,
    #[serde(default)]
    pub sample: Option<SampleConfig>,
    #[serde(default)]
    pub conditional: Option<ConditionalConfig>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
    #[serde(default)]
    pub sme: Option<SmeRunConfig>,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

/// Parse and validate a TOML run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| SimError::Config(format!("config parse: {e}")))?;
    validate_config(&cfg)?;
    Ok(cfg)
}

fn finite_positive(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() || x <= 0.0 {
        return Err(SimError::Config(format!(
            "{name} must be finite and > 0, got {x}"
        )));
    }
    Ok(())
}

fn finite(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(SimError::Config(format!("{name} must be finite, got {x}")));
    }
    Ok(())
}

pub fn validate_config(cfg: &RunConfig) -> Result<()> {
    finite("params.g", cfg.params.g)?;
    finite_positive("params.gamma", cfg.params.gamma)?;
    finite("params.drive", cfg.params.drive)?;
    finite("params.beta.re", cfg.params.beta.re)?;
    finite("params.beta.im", cfg.params.beta.im)?;
    finite_positive("params.tol", cfg.params.tol)?;
    if let Some(nf) = cfg.params.n_fock {
        if nf < 2 {
            return Err(SimError::Config("params.n_fock must be >= 2".into()));
        }
    }
    if let Some(ev) = &cfg.evolve {
        finite_positive("evolve.t_total", ev.t_total.max(f64::MIN_POSITIVE))?;
        finite_positive("evolve.dt", ev.dt)?;
        if ev.t_total < 0.0 {
            return Err(SimError::Config("evolve.t_total must be >= 0".into()));
        }
    }
    if let Some(sm) = &cfg.sample {
        finite_positive("sample.dt", sm.dt)?;
        finite_positive("sample.t_total", sm.t_total)?;
        if sm.n_traj == 0 {
            return Err(SimError::Config("sample.n_traj must be >= 1".into()));
        }
    }
    if let Some(cd) = &cfg.conditional {
        finite_positive("conditional.dt_total", cd.dt_total)?;
        match (&cd.record, &cd.record_file) {
            (None, None) => {
                return Err(SimError::Config(
                    "conditional needs either record or record_file".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(SimError::Config(
                    "conditional.record and record_file are mutually exclusive".into(),
                ))
            }
            _ => {}
        }
        if let Some(rec) = &cd.record {
            if rec.iter().any(|&k| k != 1 && k != 2) {
                return Err(SimError::Config(
                    "conditional.record labels must be 1 or 2".into(),
                ));
            }
        }
    }
    if let Some(sme) = &cfg.sme {
        finite("sme.phi", sme.phi)?;
        if !(sme.eta > 0.0 && sme.eta <= 1.0) {
            return Err(SimError::Config(format!(
                "sme.eta must lie in (0, 1], got {}",
                sme.eta
            )));
        }
        finite_positive("sme.dt", sme.dt)?;
        finite_positive("sme.t_total", sme.t_total)?;
        if sme.n_traj == 0 {
            return Err(SimError::Config("sme.n_traj must be >= 1".into()));
        }
    }
    if let Some(v) = &cfg.verify {
        if let Some(tol) = v.tolerance {
            // zero is allowed: it forces every check to fail, which is
            // useful for exercising the failure path
            if !tol.is_finite() || tol < 0.0 {
                return Err(SimError::Config(format!(
                    "verify.tolerance must be finite and >= 0, got {tol}"
                )));
            }
        }
    }
    Ok(())
}

/// One detector click in a serialized record.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    pub k: u8,
    pub t: f64,
}

/// Serialize a photocount record as a JSON array of {k, t}.
pub fn record_to_json(record: &PhotocountRecord) -> Result<String> {
    let entries: Vec<RecordEntry> = match &record.times {
        Some(times) => record
            .labels
            .iter()
            .zip(times)
            .map(|(&k, &t)| RecordEntry { k, t })
            .collect(),
        None => {
            return Err(SimError::Config(
                "record has no jump times to serialize".into(),
            ))
        }
    };
    serde_json::to_string_pretty(&entries)
        .map_err(|e| SimError::Config(format!("record serialize: {e}")))
}

/// Parse a record file; `dt_total` comes from the surrounding config.
pub fn record_from_json(text: &str, dt_total: f64) -> Result<PhotocountRecord> {
    let entries: Vec<RecordEntry> =
        serde_json::from_str(text).map_err(|e| SimError::Config(format!("record parse: {e}")))?;
    for e in &entries {
        if !e.t.is_finite() {
            return Err(SimError::Config("record time must be finite".into()));
        }
    }
    let labels = entries.iter().map(|e| e.k).collect();
    let times = entries.iter().map(|e| e.t).collect();
    PhotocountRecord::with_times(labels, dt_total, times)
}

/// Format a float with 17 significant digits (bit-exact round trip).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A named-column numeric table with CSV encode/decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(columns: Vec<String>) -> Self {
        Series {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                out.push_str(&fmt_f64(*v));
                first = false;
            }
            out.push('\n');
        }
        out
    }

    /// Strict CSV parse: consistent width, finite floats, nonempty header.
    pub fn from_csv(text: &str) -> Result<Series> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| SimError::Config("empty CSV".into()))?;
        let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        if columns.is_empty() || columns.iter().any(|c| c.is_empty()) {
            return Err(SimError::Config("malformed CSV header".into()));
        }
        let mut rows = Vec::new();
        for (li, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut row = Vec::with_capacity(columns.len());
            for field in line.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| SimError::Config(format!("CSV row {}: {e}", li + 2)))?;
                if !v.is_finite() {
                    return Err(SimError::Config(format!(
                        "CSV row {}: non-finite value",
                        li + 2
                    )));
                }
                row.push(v);
            }
            if row.len() != columns.len() {
                return Err(SimError::Config(format!(
                    "CSV row {}: expected {} fields, got {}",
                    li + 2,
                    columns.len(),
                    row.len()
                )));
            }
            rows.push(row);
        }
        Ok(Series { columns, rows })
    }
}

/// JSON run manifest: full configuration echo plus provenance and
/// truncation diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub crate_version: String,
    pub effective_seed: Option<u64>,
    pub n_fock_effective: usize,
    pub coherent_leakage: f64,
    pub config: RunConfig,
    /// Wall-clock stamp; excluded from determinism comparisons.
    pub timestamp_unix: Option<u64>,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| SimError::Config(format!("manifest serialize: {e}")))
    }

    pub fn from_json(text: &str) -> Result<RunManifest> {
        serde_json::from_str(text).map_err(|e| SimError::Config(format!("manifest parse: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
[params]
g = 10.0
gamma = 1.0
drive = 3.0
beta = { re = 0.0, im = 0.5 }
n_fock = 256
tol = 1e-8

[evolve]
t_total = 1.0
dt = 0.002
rho0 = "steady"

[output]
dir = "runs/demo"
format = "csv"
"#;

    #[test]
    fn parses_good_config() {
        let cfg = parse_config(GOOD).unwrap();
        assert_eq!(cfg.params.n_fock, Some(256));
        let p = cfg.params.build().unwrap();
        assert_eq!(p.n_fock, 256);
        assert!(cfg.evolve.is_some());
        assert_eq!(cfg.output.unwrap().format, OutputFormat::Csv);
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = GOOD.replace("[evolve]", "[evolve]\ntypo_field = 1.0");
        assert!(matches!(parse_config(&bad), Err(SimError::Config(_))));
        let bad2 = GOOD.replace("g = 10.0", "g = 10.0\ncoupling = 2.0");
        assert!(matches!(parse_config(&bad2), Err(SimError::Config(_))));
    }

    #[test]
    fn rejects_out_of_bound_values() {
        let bad = GOOD.replace("gamma = 1.0", "gamma = -1.0");
        assert!(parse_config(&bad).is_err());
        let bad = GOOD.replace("dt = 0.002", "dt = 0.0");
        assert!(parse_config(&bad).is_err());
    }

    #[test]
    fn conditional_needs_exactly_one_source() {
        let base = r#"
[params]
g = 2.0
drive = 1.0

[conditional]
dt_total = 0.5
"#;
        assert!(parse_config(base).is_err());
        let with_rec = base.replace("dt_total = 0.5", "dt_total = 0.5\nrecord = [1, 2]");
        assert!(parse_config(&with_rec).is_ok());
        let both = base.replace(
            "dt_total = 0.5",
            "dt_total = 0.5\nrecord = [1]\nrecord_file = \"r.json\"",
        );
        assert!(parse_config(&both).is_err());
        let bad_label = base.replace("dt_total = 0.5", "dt_total = 0.5\nrecord = [1, 3]");
        assert!(parse_config(&bad_label).is_err());
    }

    #[test]
    fn record_json_roundtrip() {
        let rec =
            PhotocountRecord::with_times(vec![1, 2, 2], 1.0, vec![0.1, 0.4, 0.85]).unwrap();
        let text = record_to_json(&rec).unwrap();
        let back = record_from_json(&text, 1.0).unwrap();
        assert_eq!(rec, back);
        // labels-only records cannot serialize
        let bare = PhotocountRecord::new(vec![1], 1.0).unwrap();
        assert!(record_to_json(&bare).is_err());
        // invalid times rejected on parse
        assert!(record_from_json("[{\"k\":1,\"t\":2.0}]", 1.0).is_err());
        assert!(record_from_json("[{\"k\":1,\"t\":0.2,\"x\":1}]", 1.0).is_err());
    }

    #[test]
    fn csv_roundtrip_exact() {
        let mut s = Series::new(vec!["time".into(), "re_a".into()]);
        s.push(vec![0.0, 1.0 / 3.0]);
        s.push(vec![0.1, -2.5e-9]);
        s.push(vec![0.2, f64::MIN_POSITIVE]);
        let text = s.to_csv();
        let back = Series::from_csv(&text).unwrap();
        assert_eq!(s, back);
        // and the re-encoding is byte-identical
        assert_eq!(text, back.to_csv());
    }

    #[test]
    fn csv_rejects_malformed() {
        assert!(Series::from_csv("").is_err());
        assert!(Series::from_csv("a,b\n1.0\n").is_err());
        assert!(Series::from_csv("a,b\n1.0,zzz\n").is_err());
        assert!(Series::from_csv("a,b\n1.0,inf\n").is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let cfg = parse_config(GOOD).unwrap();
        let m = RunManifest {
            command: "evolve".into(),
            crate_version: "0.1.0".into(),
            effective_seed: Some(42),
            n_fock_effective: 256,
            coherent_leakage: 1.3e-12,
            config: cfg,
            timestamp_unix: None,
        };
        let text = m.to_json().unwrap();
        let back = RunManifest::from_json(&text).unwrap();
        assert_eq!(back.command, "evolve");
        assert_eq!(back.n_fock_effective, 256);
    }
}
