use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use crate::config::{check_value, ExperimentConfig, Resolved};
use crate::experiments::{registry, Check, Experiment, Outcome};
use crate::CliError;

pub const DEFAULT_SEED: u64 = 7;

/// Checks the experiment name and every parameter, filling defaults.
pub fn resolve(cfg: &ExperimentConfig) -> Result<Resolved, CliError> {
    let name = cfg.experiment.as_deref().ok_or_else(|| CliError::Parse("no experiment given (use --experiment or [run] experiment = ...)".into()))?;
    let reg = registry();
    let exp = reg.iter().find(|e| e.name == name).ok_or_else(|| CliError::Parse(format!("unknown experiment '{name}' (see --list)")))?;
    for (k, v) in &cfg.params {
        let spec = exp.param(k).ok_or_else(|| {
            let known: Vec<&str> = exp.params.iter().map(|p| p.key).collect();
            CliError::Parse(format!("unknown parameter '{k}' for {name} (known: {})", if known.is_empty() { "none".into() } else { known.join(", ") }))
        })?;
        if !check_value(spec.kind, v) {
            return Err(CliError::Parse(format!("parameter '{k}': cannot read '{v}' as {:?}", spec.kind)));
        }
    }
    let params = exp.params.iter().map(|p| (p.key.to_string(), cfg.params.get(p.key).cloned().unwrap_or_else(|| p.default.to_string()))).collect();
    let seed = cfg.seed.unwrap_or(DEFAULT_SEED);
    let output_dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{name}-{seed}")));
    Ok(Resolved { experiment: name.to_string(), seed, output_dir, params })
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub resolved: Resolved,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.first_failure().is_some() {
            1
        } else {
            0
        }
    }
}

fn summary(res: &Resolved, exp: &Experiment, out: &Outcome) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {}\n{}\nseed: {}\n", exp.name, exp.description, res.seed);
    let w = out.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
    let _ = writeln!(s, "{:<w$}  {:<6}  detail", "check", "status");
    for c in &out.checks {
        let _ = writeln!(s, "{:<w$}  {:<6}  {}", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    if !out.notes.is_empty() {
        s.push('\n');
        for (k, v) in &out.notes {
            let _ = writeln!(s, "{k}: {v}");
        }
    }
    let failed = out.checks.iter().filter(|c| !c.pass).count();
    let _ = writeln!(s, "\n{} of {} checks passed", out.checks.len() - failed, out.checks.len());
    s
}

/// Resolves, runs and writes all artifacts. Failing checks are reported in the
/// returned [`RunReport`], not as an error; see [`RunReport::exit_code`].
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let res = resolve(cfg)?;
    let reg = registry();
    let exp = reg.iter().find(|e| e.name == res.experiment).expect("resolved name");
    fs::create_dir_all(&res.output_dir)?;
    let mut files = Vec::new();
    let mut write = |name: &str, body: &str| -> Result<(), CliError> {
        let path = res.output_dir.join(name);
        fs::write(&path, body)?;
        files.push(path);
        Ok(())
    };
    write("manifest.txt", &res.manifest())?;
    let out = match (exp.run)(&res) {
        Ok(o) => o,
        // bad parameter values surface as argument errors from the library
        Err(e @ (tvstab::Error::InvalidArgument(_) | tvstab::Error::Parse(_))) => return Err(CliError::Parse(format!("{}: {e}", exp.name))),
        Err(e) => Outcome { checks: vec![Check { name: "execution".into(), pass: false, detail: e.to_string() }], ..Default::default() },
    };
    write("results.csv", &out.results)?;
    for (name, body) in &out.files {
        write(name, body)?;
    }
    write("summary.txt", &summary(&res, exp, &out))?;
    Ok(RunReport { resolved: res, checks: out.checks, files })
}
