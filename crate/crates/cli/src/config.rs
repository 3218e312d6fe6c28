//! Model files and experiment files: flat `key = value` text with `#` comments.
//!
//! A model file lists intensities as `a_<k> = <value>` plus an optional
//! `tol`. Missing indices below the largest one are zero.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qbranch::model::INTENSITY_TOL;
use qbranch::{build_model, BranchingModel, IntensityVector};

use crate::error::CliError;

/// Largest offspring index accepted in a model file.
const MAX_K: usize = 10_000;

/// Splits `text` into (line number, key, value) triples.
fn key_values(path: &Path, text: &str) -> Result<Vec<(usize, String, String)>, CliError> {
    let mut out = vec![];
    let mut seen = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::parse(path, line_no, format!("expected `key = value`, found `{line}`")));
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if key.is_empty() || value.is_empty() {
            return Err(CliError::parse(path, line_no, "empty key or value"));
        }
        if let Some(first) = seen.insert(key.clone(), line_no) {
            return Err(CliError::parse(path, line_no, format!("duplicate key `{key}` (first set on line {first})")));
        }
        out.push((line_no, key, value));
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn number<T: std::str::FromStr>(path: &Path, line: usize, key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::parse(path, line, format!("`{key}`: cannot parse `{value}`")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub intensities: Vec<f64>,
    pub tol: f64,
}

pub fn parse_model(path: &Path, text: &str) -> Result<ModelFile, CliError> {
    let mut coeffs: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let mut tol = INTENSITY_TOL;
    for (line, key, value) in key_values(path, text)? {
        if key == "tol" {
            tol = number(path, line, &key, &value)?;
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(CliError::parse(path, line, "tol must be positive"));
            }
            continue;
        }
        let k: usize = key
            .strip_prefix("a_")
            .and_then(|s| s.parse().ok())
            .filter(|&k| k <= MAX_K)
            .ok_or_else(|| CliError::parse(path, line, format!("unknown key `{key}` (expected a_<k> or tol)")))?;
        let v: f64 = number(path, line, &key, &value)?;
        if !v.is_finite() {
            return Err(CliError::parse(path, line, format!("{key} is not finite")));
        }
        coeffs.insert(k, (line, v));
    }
    let Some(&k_max) = coeffs.keys().next_back() else {
        return Err(CliError::parse(path, 0, "no intensities a_k found"));
    };
    let mut a = vec![0.0; k_max + 1];
    for (&k, &(_, v)) in &coeffs {
        a[k] = v;
    }
    Ok(ModelFile { intensities: a, tol })
}

pub fn load_model(path: &Path) -> Result<(ModelFile, BranchingModel), CliError> {
    let file = parse_model(path, &read(path)?)?;
    let model = IntensityVector::new(file.intensities.clone(), file.tol)
        .and_then(|v| build_model(v, file.tol))
        .map_err(|e| CliError::Model { path: path.to_path_buf(), source: e })?;
    Ok((file, model))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessKind {
    Q,
    Mbs,
}

impl std::str::FromStr for ProcessKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "q" | "qprocess" => Ok(Self::Q),
            "mbs" | "branching" => Ok(Self::Mbs),
            other => Err(format!("unknown process `{other}` (expected q or mbs)")),
        }
    }
}

/// Parameters shared by all commands. Fields left `None` fall back to
/// command defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub model: Option<PathBuf>,
    pub t_grid: Option<Vec<f64>>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jmax: Option<usize>,
    pub tol: Option<f64>,
    pub i0: Option<u64>,
    pub horizon: Option<f64>,
    pub process: Option<ProcessKind>,
}

pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<f64>().map_err(|_| format!("cannot parse `{x}` as a time")))
        .collect()
}

/// Parses an experiment file; relative paths are resolved against its directory.
pub fn parse_experiment(path: &Path, text: &str) -> Result<ExperimentConfig, CliError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut cfg = ExperimentConfig::default();
    for (line, key, value) in key_values(path, text)? {
        match key.as_str() {
            "model" => cfg.model = Some(base.join(&value)),
            "out" => cfg.out = Some(base.join(&value)),
            "t_grid" => cfg.t_grid = Some(parse_grid(&value).map_err(|e| CliError::parse(path, line, e))?),
            "reps" => cfg.reps = Some(number(path, line, &key, &value)?),
            "seed" => cfg.seed = Some(number(path, line, &key, &value)?),
            "jmax" => cfg.jmax = Some(number(path, line, &key, &value)?),
            "tol" => cfg.tol = Some(number(path, line, &key, &value)?),
            "i0" => cfg.i0 = Some(number(path, line, &key, &value)?),
            "horizon" => cfg.horizon = Some(number(path, line, &key, &value)?),
            "process" => cfg.process = Some(value.parse().map_err(|e: String| CliError::parse(path, line, e))?),
            _ => return Err(CliError::parse(path, line, format!("unknown key `{key}`"))),
        }
    }
    Ok(cfg)
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, CliError> {
    parse_experiment(path, &read(path)?)
}

impl ExperimentConfig {
    /// Values set in `over` win.
    pub fn merged(self, over: ExperimentConfig) -> Self {
        Self {
            model: over.model.or(self.model),
            t_grid: over.t_grid.or(self.t_grid),
            reps: over.reps.or(self.reps),
            seed: over.seed.or(self.seed),
            out: over.out.or(self.out),
            jmax: over.jmax.or(self.jmax),
            tol: over.tol.or(self.tol),
            i0: over.i0.or(self.i0),
            horizon: over.horizon.or(self.horizon),
            process: over.process.or(self.process),
        }
    }

    /// Rejects non-positive numeric parameters.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(ts) = &self.t_grid {
            if let Some(t) = ts.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
                return Err(CliError::Usage(format!("t-grid entries must be positive, got {t}")));
            }
        }
        if self.reps == Some(0) {
            return Err(CliError::Usage("reps must be positive".into()));
        }
        if self.jmax == Some(0) {
            return Err(CliError::Usage("jmax must be positive".into()));
        }
        if self.i0 == Some(0) {
            return Err(CliError::Usage("i0 must be at least 1".into()));
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(CliError::Usage(format!("tol must lie in (0, 1), got {tol}")));
            }
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::Usage(format!("horizon must be positive, got {h}")));
            }
        }
        Ok(())
    }

    pub fn model_path(&self) -> Result<&Path, CliError> {
        self.model.as_deref().ok_or_else(|| CliError::Usage("no model file given (use --model)".into()))
    }

    /// Sorted, deduplicated t-grid; an empty or missing grid is a usage error.
    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        let mut ts = self.t_grid.clone().unwrap_or_default();
        if ts.is_empty() {
            return Err(CliError::Usage("empty t-grid (use --t-grid 10,20,40)".into()));
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        Ok(ts)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage("an explicit --seed is required so the run can be reproduced".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("m.txt")
    }

    #[test]
    fn parses_model_with_comments_and_gaps() {
        let f = parse_model(p(), "# critical\na_0 = 0.5\n\na_1=-1.0 # death\na_3 = 0.25\ntol = 1e-8\n").unwrap();
        assert_eq!(f.intensities, vec![0.5, -1.0, 0.0, 0.25]);
        assert_eq!(f.tol, 1e-8);
    }

    #[test]
    fn model_errors_carry_line_numbers() {
        let e = parse_model(p(), "a_0 = 0.5\na_1 = x\n").unwrap_err();
        assert!(e.to_string().contains("m.txt:2"), "{e}");
        let e = parse_model(p(), "a_0 = 0.5\nfoo = 1\n").unwrap_err();
        assert!(e.to_string().contains("m.txt:2") && e.to_string().contains("foo"));
        let e = parse_model(p(), "a_0 = 0.5\na_0 = 0.4\n").unwrap_err();
        assert!(e.to_string().contains("duplicate"));
        assert!(parse_model(p(), "# nothing\n").is_err());
        assert!(parse_model(p(), "a_0 0.5\n").is_err());
    }

    #[test]
    fn experiment_merge_prefers_flags() {
        let file = parse_experiment(Path::new("/x/exp.cfg"), "model = m.txt\nt_grid = 40, 10,20\nseed = 4\nprocess = mbs\n").unwrap();
        assert_eq!(file.model.as_deref(), Some(Path::new("/x/m.txt")));
        let merged = file.merged(ExperimentConfig { seed: Some(9), ..Default::default() });
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.grid().unwrap(), vec![10.0, 20.0, 40.0]);
        assert_eq!(merged.process, Some(ProcessKind::Mbs));
    }

    #[test]
    fn validation() {
        let bad = ExperimentConfig { reps: Some(0), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { t_grid: Some(vec![5.0, -1.0]), ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(ExperimentConfig::default().grid().is_err());
        assert!(ExperimentConfig::default().seed().is_err());
    }
}
