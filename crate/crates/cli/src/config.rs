//! Run configuration: one JSON document per experiment.

use std::path::{Path, PathBuf};

use relsp_core::casimir::CasimirDistribution;
use relsp_core::evolution::EvolutionConfig;
use relsp_core::experiments::ExperimentPlan;
use relsp_core::solver::SolverConfig;
use relsp_core::spectral::DomainSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_seed() -> u64 {
    1
}

fn default_sizes() -> Vec<f64> {
    vec![1e-3, 3e-3, 1e-2]
}

fn default_margin_tol() -> f64 {
    1e-6
}

/// Stability-campaign settings. Seeds default to `seed, seed + 1, seed + 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_sizes")]
    pub perturbation_sizes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub perturb_occupations: bool,
    #[serde(default = "default_margin_tol")]
    pub margin_tol: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            perturbation_sizes: default_sizes(),
            seeds: None,
            perturb_occupations: false,
            margin_tol: default_margin_tol(),
        }
    }
}

/// Starting point of `evolve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// The stationary state itself.
    Stationary,
    /// The stationary state perturbed with size `epsilon` and the run seed.
    Perturbed { epsilon: f64 },
    /// A `solution.json` written by `stationary`.
    Snapshot { path: PathBuf },
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Perturbed { epsilon: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub distribution: CasimirDistribution,
    pub solver: SolverConfig,
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks every invariant the numeric modules would check later.
    pub fn validate(&self) -> Result<(), CliError> {
        self.plan().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if let InitialState::Perturbed { epsilon } = self.initial_state {
            if !(epsilon.is_finite() && epsilon >= 0.0) {
                return Err(CliError::Config(format!("initial_state.epsilon must be nonnegative (got {epsilon})")));
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.experiment.seeds.clone().unwrap_or_else(|| (0..3).map(|i| self.seed.wrapping_add(i)).collect())
    }

    pub fn plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            domain: self.domain.clone(),
            distribution: self.distribution,
            solver: self.solver.clone(),
            perturbation_sizes: self.experiment.perturbation_sizes.clone(),
            evolution: self.evolution.clone(),
            seeds: self.seeds(),
            perturb_occupations: self.experiment.perturb_occupations,
            margin_tol: self.experiment.margin_tol,
        }
    }

    /// Desk-scale defaults: 1D box of length pi, 64 modes, Boltzmann beta = 1.
    pub fn desk(mass: f64) -> Self {
        let plan = ExperimentPlan::desk(mass);
        RunConfig {
            domain: plan.domain,
            distribution: plan.distribution,
            solver: plan.solver,
            evolution: plan.evolution,
            experiment: ExperimentSection::default(),
            initial_state: InitialState::default(),
            output_dir: None,
            seed: default_seed(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_roundtrip() {
        let c = RunConfig::desk(0.0);
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(c.seeds(), vec![1, 2, 3]);
    }

    #[test]
    fn unknown_key_rejected_with_position() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::desk(0.0).to_json()).unwrap();
        v["solver"]["tolerance"] = 1.0.into();
        let text = serde_json::to_string_pretty(&v).unwrap();
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("tolerance") && err.contains("line"), "{err}");
    }

    #[test]
    fn invariants_checked_at_parse_time() {
        let mut c = RunConfig::desk(0.0);
        c.experiment.perturbation_sizes.clear();
        assert!(RunConfig::from_json(&c.to_json()).is_err());
        let mut c = RunConfig::desk(0.0);
        c.distribution = CasimirDistribution::Boltzmann { beta: -1.0 };
        assert!(RunConfig::from_json(&c.to_json()).is_err());
        let mut c = RunConfig::desk(0.0);
        c.initial_state = InitialState::Perturbed { epsilon: -1.0 };
        assert!(RunConfig::from_json(&c.to_json()).is_err());
    }
}
