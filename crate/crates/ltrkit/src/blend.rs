//! Blend spec files.
//!
//! One directive per line, `#` starts a comment:
//!
//! ```text
//! input lm scores/lambdamart.tsv
//! input lr scores/lr.tsv
//! normalize global_z
//! weight lm 0.7
//! weight lr 0.3
//! ```
//!
//! Relative paths resolve against the blend spec file's directory. Inputs without
//! a `weight` line get weight 0; `normalize` defaults to `global_z`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ltrkit_core::ensemble::Normalization;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct BlendSpec {
    pub inputs: Vec<(String, PathBuf)>,
    pub normalization: Normalization,
    pub weights: BTreeMap<String, f64>,
}

impl BlendSpec {
    pub fn parse(text: &str, base_dir: &Path) -> Result<BlendSpec> {
        let mut inputs: Vec<(String, PathBuf)> = Vec::new();
        let mut normalization = None;
        let mut weights = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| CliError::usage(format!("blend spec line {}: {msg}", no + 1));
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["input", name, path] => {
                    if inputs.iter().any(|(n, _)| n == name) {
                        return Err(bad(format!("input `{name}` declared twice")));
                    }
                    inputs.push((name.to_string(), base_dir.join(path)));
                }
                ["normalize", mode] => {
                    if normalization.is_some() {
                        return Err(bad("normalize given twice".into()));
                    }
                    normalization = Some(Normalization::parse(mode).ok_or_else(|| {
                        bad(format!("unknown normalization `{mode}` (global_z, query_z, none)"))
                    })?);
                }
                ["weight", name, value] => {
                    let w: f64 = value.parse().ok().filter(|w: &f64| w.is_finite()).ok_or_else(|| bad(format!("weight `{value}` is not a finite number")))?;
                    if weights.insert(name.to_string(), w).is_some() {
                        return Err(bad(format!("weight for `{name}` given twice")));
                    }
                }
                _ => return Err(bad(format!("cannot parse `{line}`"))),
            }
        }
        if inputs.is_empty() {
            return Err(CliError::usage("blend spec declares no inputs"));
        }
        if let Some(name) = weights.keys().find(|n| !inputs.iter().any(|(i, _)| &i == n)) {
            return Err(CliError::usage(format!("blend spec weights unknown input `{name}`")));
        }
        Ok(BlendSpec { inputs, normalization: normalization.unwrap_or_default(), weights })
    }

    pub fn load(path: &Path) -> Result<BlendSpec> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        BlendSpec::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Weights in input declaration order.
    pub fn weight_vector(&self) -> Vec<f64> {
        self.inputs.iter().map(|(n, _)| self.weights.get(n).copied().unwrap_or(0.0)).collect()
    }

    /// Renders the spec with paths as given, one directive per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, path) in &self.inputs {
            let _ = writeln!(out, "input {name} {}", path.display());
        }
        let _ = writeln!(out, "normalize {}", self.normalization.name());
        for (name, _) in &self.inputs {
            if let Some(w) = self.weights.get(name) {
                let _ = writeln!(out, "weight {name} {w}");
            }
        }
        out
    }
}
