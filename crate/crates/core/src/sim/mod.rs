//! Simulation studies with known truth: data generation, an independent
//! Monte Carlo oracle for `θ(λ | x)`, and the replication loop.

mod analogue;
mod dgp;
mod study;

pub use analogue::{analogue_profiles, analogue_schema, analogue_spec, generate_analogue_data, CHARLSON, STAGES};

pub use dgp::{generate_scenario_data, true_theta_oracle, true_thetas, Subject};
pub use study::{reports_to_text, run_study, write_reports_csv, ReportRow, SimulationReport};

use serde::{Deserialize, Serialize};

use crate::cost::CostFamily;
use crate::error::{Error, Result};
use crate::formula::Formula;
use crate::nbs::QuantileMode;
use crate::pipeline::{CensoringSpec, PipelineSpec};

/// Censoring scale constants `γ` for 10%, 30% and 50% censoring, with and
/// without an effect of `X`.
pub const GAMMA_EFFECT: [(f64, f64); 3] = [(0.10, 5.119), (0.30, 4.410), (0.50, 3.960)];
pub const GAMMA_NULL: [(f64, f64); 3] = [(0.10, 5.007), (0.30, 4.315), (0.50, 3.876)];

/// Default number of oracle draws per arm.
pub const DEFAULT_N_ORACLE: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfoundingLevel {
    Low,
    Medium,
    High,
}

impl ConfoundingLevel {
    pub const ALL: [ConfoundingLevel; 3] = [ConfoundingLevel::Low, ConfoundingLevel::Medium, ConfoundingLevel::High];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "low" => Some(Self::Low),
            "medium" | "med" => Some(Self::Medium),
            "high" => Some(Self::High),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::Medium => "medium",
            Self::High => "high",
        }
    }
}

/// Unmeasured confounding by `U₁` (treatment and survival) or `U₂`
/// (treatment and cost).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum Confounding {
    #[default]
    None,
    Survival(ConfoundingLevel),
    Cost(ConfoundingLevel),
}

impl Confounding {
    /// `none`, `survival:high`, `cost:low`, ...
    pub fn label(self) -> String {
        match self {
            Confounding::None => "none".into(),
            Confounding::Survival(l) => format!("survival:{}", l.name()),
            Confounding::Cost(l) => format!("cost:{}", l.name()),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "none" {
            return Some(Confounding::None);
        }
        let (kind, level) = s.split_once(':')?;
        let level = ConfoundingLevel::parse(level)?;
        match kind {
            "survival" => Some(Confounding::Survival(level)),
            "cost" => Some(Confounding::Cost(level)),
            _ => None,
        }
    }

    /// `(γ₁, η₁, γ₂, η₂)`.
    pub fn parameters(self) -> (f64, f64, f64, f64) {
        use ConfoundingLevel::*;
        match self {
            Confounding::None => (0.0, 0.0, 0.0, 0.0),
            Confounding::Survival(Low) => (0.5, 0.05, 0.0, 0.0),
            Confounding::Survival(Medium) => (0.75, 0.15, 0.0, 0.0),
            Confounding::Survival(High) => (1.0, 0.3, 0.0, 0.0),
            Confounding::Cost(Low) => (0.0, 0.0, 0.5, 0.17),
            Confounding::Cost(Medium) => (0.0, 0.0, 0.75, 0.5),
            Confounding::Cost(High) => (0.0, 0.0, 1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub censoring_target: f64,
    pub gamma: f64,
    /// `β_x = 0.1, β_ax = 0.5` when set, both zero otherwise.
    pub effect_present: bool,
    pub confounding: Confounding,
    pub lambdas: Vec<f64>,
    pub n_sims: usize,
    /// Bootstrap replicates per simulated dataset; below 2 skips the bootstrap.
    pub n_boot: usize,
    pub m_draws: usize,
    pub n_omega: usize,
    pub n_oracle: usize,
    pub seed: u64,
}

/// Tabulated `γ` for a censoring level.
pub fn calibrated_gamma(effect_present: bool, censoring_target: f64) -> Option<f64> {
    let table = if effect_present { &GAMMA_EFFECT } else { &GAMMA_NULL };
    table
        .iter()
        .find(|(c, _)| (c - censoring_target).abs() < 1e-9)
        .map(|&(_, g)| g)
}

impl ScenarioConfig {
    pub fn new(effect_present: bool, n: usize, censoring_target: f64, seed: u64) -> Result<Self> {
        let gamma = calibrated_gamma(effect_present, censoring_target).ok_or_else(|| {
            Error::Config(format!(
                "no calibrated censoring constant for {censoring_target}; use 0.10, 0.30 or 0.50"
            ))
        })?;
        Ok(Self {
            n,
            censoring_target,
            gamma,
            effect_present,
            confounding: Confounding::None,
            lambdas: vec![2.0, 12.0],
            n_sims: 200,
            n_boot: 200,
            m_draws: 5000,
            n_omega: 30,
            n_oracle: DEFAULT_N_ORACLE,
            seed,
        })
    }

    /// Unmeasured-confounding scenario: effect of `X` present, 30% censoring, n = 5000.
    pub fn sensitivity(confounding: Confounding, seed: u64) -> Self {
        Self {
            confounding,
            ..Self::new(true, 5000, 0.30, seed).expect("tabulated censoring level")
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(Error::Config(format!("n must be at least 20, got {}", self.n)));
        }
        match calibrated_gamma(self.effect_present, self.censoring_target) {
            Some(g) if g == self.gamma => {}
            _ => {
                return Err(Error::Config(format!(
                    "gamma {} does not match censoring target {}",
                    self.gamma, self.censoring_target
                )))
            }
        }
        if self.n_sims == 0 {
            return Err(Error::Config("n_sims must be positive".into()));
        }
        if self.n_oracle == 0 {
            return Err(Error::Config("n_oracle must be positive".into()));
        }
        self.analysis_spec(self.seed).validate()
    }

    /// `(β_x, β_ax)`.
    pub fn effect(&self) -> (f64, f64) {
        if self.effect_present {
            (0.1, 0.5)
        } else {
            (0.0, 0.0)
        }
    }

    /// The analysis every replication runs. `U₁`, `U₂` are never adjusted for.
    pub fn analysis_spec(&self, seed: u64) -> PipelineSpec {
        PipelineSpec {
            survival_formula: Formula::parse("A + x + A:x + l").unwrap(),
            censoring: CensoringSpec::Cox {
                strata: vec!["A".into()],
                covariates: Formula::intercept_only(),
            },
            cost_formula: Formula::parse("A + Z").unwrap(),
            cost_family: CostFamily::LogNormal,
            probit_formula: Formula::parse("x").unwrap(),
            quantile_mode: QuantileMode::Auto,
            lambdas: self.lambdas.clone(),
            m_draws: self.m_draws,
            n_omega: self.n_omega,
            seed,
        }
    }
}
