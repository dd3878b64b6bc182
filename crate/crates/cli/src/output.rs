//! Artifact writing. Everything is written from one thread, after compute.

use std::path::{Path, PathBuf};

use relsp_core::casimir::CasimirDistribution;
use relsp_core::solver::{ScfIterate, SolutionSnapshot};
use relsp_core::spectral::{Domain, ModeField};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, RunConfig};

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Io(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutputDir { root: root.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.root.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }
}

/// Provenance of a run. Equal manifests mean equal outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    /// SHA-256 of the effective config (after overrides, without `output_dir`).
    pub config_sha256: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suites: Option<Vec<String>>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub inject_bad_distribution: bool,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        let mut hashed = config.clone();
        hashed.output_dir = None;
        let digest = Sha256::digest(hashed.to_json().as_bytes());
        Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed: config.seed,
            seeds: config.seeds(),
            suites: None,
            inject_bad_distribution: false,
        }
    }
}

/// `solution.json`: the stationary state plus what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub distribution: CasimirDistribution,
    pub solution: SolutionSnapshot,
    /// Retained spectrum of `T_m + V0`.
    pub spectrum: Vec<f64>,
    /// `|Phi - H_C| / (1 + |Phi|)`
    pub relative_duality_gap: f64,
}

pub fn convergence_csv(history: &[ScfIterate]) -> String {
    let mut out = String::from("iteration,phi,residual_poisson,residual_constraint,sigma,damping\n");
    for h in history {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?}\n",
            h.iteration, h.phi, h.residual_poisson, h.residual_constraint, h.sigma, h.damping
        ));
    }
    out
}

/// Grid samples of `V0` and `n0`, one row per grid point, 17 significant digits.
pub fn profiles_csv(domain: &Domain, potential: &ModeField, density: &ModeField) -> String {
    let axes = ["x", "y", "z"];
    let mut out = axes[..domain.dim()].join(",");
    out.push_str(",V0,n0\n");
    let v = potential.to_grid();
    let n = density.to_grid();
    for (flat, (vi, ni)) in v.iter().zip(&n).enumerate() {
        for c in domain.grid_point(flat) {
            out.push_str(&format!("{c:.16e},"));
        }
        out.push_str(&format!("{vi:.16e},{ni:.16e}\n"));
    }
    out
}
