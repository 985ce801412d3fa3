//! Configuration file: one JSON object describing the trial, the numerics
//! and the simulation settings.

use std::path::Path;

use platform_trial::arm::Numerics;
use platform_trial::{DesignSpec, Shape};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub arms: Arms,
    pub effects: Effects,
    pub errors: Errors,
    pub recruitment: Recruitment,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arms {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "K_star")]
    pub k_star: usize,
    /// Control stages completed before each arm joins.
    #[serde(rename = "S")]
    pub s: Vec<usize>,
    #[serde(rename = "J_per_arm")]
    pub j_per_arm: Vec<usize>,
    pub shapes: Vec<Shape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Effects {
    pub theta_interesting: f64,
    pub theta_null: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Errors {
    pub alpha: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recruitment {
    pub rate_per_month: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub nodes_per_dim: usize,
    pub mvn_tol: f64,
    pub eps_boundary: f64,
    pub eps_n: f64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        let n = Numerics::default();
        Self { nodes_per_dim: n.nodes_per_dim, mvn_tol: n.mvn_tol, eps_boundary: n.eps_boundary, eps_n: n.eps_n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub replicates: u64,
    pub seed: u64,
    /// Control patients recruited when the late arm actually joins. Empty
    /// means a default grid over the feasible range.
    pub add_points: Vec<f64>,
    /// Deviation approaches 1, 2 and 3 to run.
    pub approaches: Vec<u8>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { replicates: 100_000, seed: 1, add_points: Vec::new(), approaches: vec![1, 2, 3] }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.spec()?;
        cfg.numerics().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.simulate.replicates == 0 {
            return Err(CliError::Config("simulate.replicates must be positive".into()));
        }
        if let Some(a) = cfg.simulate.approaches.iter().find(|a| !(1..=3).contains(*a)) {
            return Err(CliError::Config(format!("unknown approach {a}; expected 1, 2 or 3")));
        }
        Ok(cfg)
    }

    /// The design spec, with every invariant checked.
    pub fn spec(&self) -> Result<DesignSpec, CliError> {
        let a = &self.arms;
        if a.s.len() != a.k || a.j_per_arm.len() != a.k || a.shapes.len() != a.k {
            return Err(CliError::Config(format!("arms: S, J_per_arm and shapes need {} entries each", a.k)));
        }
        if !(self.errors.power > 0.0 && self.errors.power < 1.0) {
            return Err(CliError::Config("errors.power must lie in (0, 1)".into()));
        }
        let spec = DesignSpec::new(
            a.s.clone(),
            a.j_per_arm.clone(),
            a.shapes.clone(),
            self.effects.theta_interesting,
            self.effects.theta_null,
            self.effects.sigma,
            self.errors.alpha,
            1.0 - self.errors.power,
            self.recruitment.rate_per_month,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        if spec.n_initial_arms != a.k_star {
            return Err(CliError::Config(format!(
                "K_star is {} but {} arms have S = 0",
                a.k_star, spec.n_initial_arms
            )));
        }
        Ok(spec)
    }

    pub fn numerics(&self) -> Numerics {
        let n = &self.numerics;
        Numerics {
            nodes_per_dim: n.nodes_per_dim,
            mvn_tol: n.mvn_tol,
            eps_boundary: n.eps_boundary,
            eps_n: n.eps_n,
            ..Numerics::default()
        }
    }
}
