//! Run configuration shared by every subcommand. Each command writes its
//! fully resolved configuration next to its outputs as `resolved-config.json`.

use std::fs;
use std::path::{Path, PathBuf};

use mcpm_core::analysis::{Threshold, DEFAULT_BINS};
use mcpm_core::{McpmParams, ProbeParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const RESOLVED_CONFIG: &str = "resolved-config.json";

/// Where a probe swarm starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Query {
    Token(String),
    Pos([f32; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub threshold: Threshold,
    /// In voxels of the trace lattice.
    pub assign_radius: f32,
    pub bins: usize,
    /// Rows of the rank-difference table come from the union of each
    /// metric's top `top_k`.
    pub top_k: usize,
    /// Independent probe runs averaged into one MCPM ranking.
    pub n_repeats: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            threshold: Threshold::default(),
            assign_radius: 2.0,
            bins: DEFAULT_BINS,
            top_k: 30,
            n_repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Tab-separated `surface x y z [meta]` file.
    pub points: Option<PathBuf>,
    /// word2vec text file, projected with PCA.
    pub vectors: Option<PathBuf>,
    pub pca: bool,
    pub margin: f32,
    /// Directory holding the artifacts of a previous `fit`.
    pub run_dir: Option<PathBuf>,
    pub query: Option<Query>,
    pub mcpm: McpmParams,
    pub probe: ProbeParams,
    pub analysis: AnalysisOptions,
    /// Mandatory; there is no clock-based seeding.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            points: None,
            vectors: None,
            pca: false,
            margin: 0.05,
            run_dir: None,
            query: None,
            mcpm: McpmParams::default(),
            probe: ProbeParams::default(),
            analysis: AnalysisOptions::default(),
            seed: None,
            threads: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("a seed is required (--seed or \"seed\" in the config file)".into()))
    }

    pub fn run_dir(&self) -> Result<&Path> {
        self.run_dir
            .as_deref()
            .ok_or_else(|| CliError::Config("--run is required".into()))
    }

    /// The output directory, or `default` when none was given.
    pub fn out_or(&self, default: impl Into<PathBuf>) -> PathBuf {
        self.out.clone().unwrap_or_else(|| default.into())
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.mcpm.validate()?;
        self.probe.validate()?;
        if self.analysis.n_repeats == 0 {
            return Err(CliError::Config("n_repeats must be at least 1".into()));
        }
        if !(self.analysis.assign_radius >= 0.0) {
            return Err(CliError::Config("assign_radius must be non-negative".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parses `x,y,z`.
pub fn parse_pos(s: &str) -> std::result::Result<[f32; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {s:?}"));
    }
    let mut p = [0f32; 3];
    for (slot, part) in p.iter_mut().zip(parts) {
        *slot = part.parse().map_err(|_| format!("non-numeric coordinate {part:?}"))?;
    }
    Ok(p)
}

/// Parses `auto` or a numeric tau.
pub fn parse_threshold(s: &str) -> std::result::Result<Threshold, String> {
    if s.eq_ignore_ascii_case("auto") {
        Ok(Threshold::default())
    } else {
        s.parse()
            .map(Threshold::Value)
            .map_err(|_| format!("expected \"auto\" or a number, got {s:?}"))
    }
}
