//! Line-oriented `key = value` configuration with `[section]` headers.
//!
//! ```text
//! [run]
//! experiment = ks_threshold
//! seed = 7
//! out = runs/ks
//!
//! [params]
//! n = 128
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub params: BTreeMap<String, String>,
}

const RUN_KEYS: [&str; 3] = ["experiment", "seed", "out"];

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| CliError::Parse(format!("line {}: {msg}", no + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| at(format!("unterminated section header '{line}'")))?.trim();
                if name != "run" && name != "params" {
                    return Err(at(format!("unknown section '{name}'")));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| at(format!("expected key = value, got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(at("empty key".into()));
            }
            match section.as_str() {
                "run" => match k {
                    "experiment" => cfg.experiment = Some(v.to_string()),
                    "seed" => cfg.seed = Some(parse_seed(v).map_err(|e| at(e.to_string()))?),
                    "out" => cfg.output_dir = Some(PathBuf::from(v)),
                    _ => return Err(at(format!("unknown key '{k}' in [run] (expected one of {})", RUN_KEYS.join(", ")))),
                },
                "params" => {
                    if cfg.params.insert(k.to_string(), v.to_string()).is_some() {
                        return Err(at(format!("duplicate parameter '{k}'")));
                    }
                }
                _ => return Err(at(format!("key '{k}' outside of a section"))),
            }
        }
        Ok(cfg)
    }

    /// Later values win; parameters are merged key by key.
    pub fn overlay(mut self, other: ExperimentConfig) -> Self {
        if other.experiment.is_some() {
            self.experiment = other.experiment;
        }
        if other.seed.is_some() {
            self.seed = other.seed;
        }
        if other.output_dir.is_some() {
            self.output_dir = other.output_dir;
        }
        self.params.extend(other.params);
        self
    }
}

pub fn parse_seed(s: &str) -> Result<u64, CliError> {
    s.trim().parse::<u64>().map_err(|_| CliError::Parse(format!("seed '{s}' is not a 64-bit unsigned integer")))
}

/// Parses `k=v` from the command line.
pub fn parse_param(s: &str) -> Result<(String, String), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::Parse(format!("--param expects k=v, got '{s}'")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(CliError::Parse(format!("--param with empty key: '{s}'")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Float,
    Int,
    FloatList,
    Text,
}

/// Accepts plain floats and multiples of π written as `pi`, `2pi`, `0.5*pi`.
pub fn parse_float(s: &str) -> Option<f64> {
    let t = s.trim();
    if let Ok(v) = t.parse::<f64>() {
        return Some(v);
    }
    let head = t.strip_suffix("pi")?;
    let head = head.strip_suffix('*').unwrap_or(head).trim();
    if head.is_empty() {
        return Some(PI);
    }
    head.parse::<f64>().ok().map(|c| c * PI)
}

pub fn parse_list(s: &str) -> Option<Vec<f64>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(parse_float).collect()
}

pub fn check_value(kind: ParamKind, v: &str) -> bool {
    match kind {
        ParamKind::Float => parse_float(v).is_some_and(f64::is_finite),
        ParamKind::Int => v.trim().parse::<u64>().is_ok(),
        ParamKind::FloatList => parse_list(v).is_some_and(|l| l.iter().all(|x| x.is_finite())),
        ParamKind::Text => !v.trim().is_empty(),
    }
}

/// Fully resolved configuration: every declared parameter has a value.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub experiment: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub params: BTreeMap<String, String>,
}

impl Resolved {
    /// Same format as the input config, so a manifest can be fed back with `--config`.
    pub fn manifest(&self) -> String {
        let mut s = String::from("# tvstab run manifest\n[run]\n");
        let _ = writeln!(s, "experiment = {}", self.experiment);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.output_dir.display());
        s.push_str("\n[params]\n");
        for (k, v) in &self.params {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn raw(&self, key: &str) -> &str {
        self.params.get(key).map(String::as_str).unwrap_or_else(|| panic!("parameter '{key}' is not declared"))
    }

    // values were validated during resolution
    pub fn f64(&self, key: &str) -> f64 {
        parse_float(self.raw(key)).expect("validated float")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.raw(key).trim().parse().expect("validated integer")
    }

    pub fn list(&self, key: &str) -> Vec<f64> {
        parse_list(self.raw(key)).expect("validated list")
    }

    pub fn text(&self, key: &str) -> String {
        self.raw(key).trim().to_string()
    }

    pub fn flag(&self, key: &str) -> bool {
        self.usize(key) != 0
    }
}
