//! End-to-end estimation of `θ(λ | x)`: outcome models, standardization,
//! placement-value regression and quadrature, for a list of `λ` values and
//! covariate profiles.

use std::collections::BTreeMap;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{fit_cost, CostFamily, CostModel};
use crate::data::{validate, Arm, ColumnKind, Dataset, Schema};
use crate::error::{Error, Result};
use crate::formula::{Allowed, Design, Formula};
use crate::nbs::{
    build_placement_values, estimate_quantiles, fit_probit, integrate_nbs, CedCurve, CedRow, NbsRegressionFit,
    OmegaGrid, PrimaryRange, QuantileKind, QuantileMode, DEFAULT_N_OMEGA,
};
use crate::rng;
use crate::standardization::{draw_arm, ArmDraws, StandardizationConfig, DEFAULT_M};
use crate::survival::{
    compute_ipcw, fit_censoring_cox, fit_censoring_km, fit_weibull, CensoringModel, IpcwWeights, WeibullFit,
};

const STANDARDIZATION_TAG: u64 = 0x5354_4400;

/// How `Ĝ` is estimated for the cost weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CensoringSpec {
    KaplanMeier,
    Cox {
        #[serde(default = "default_strata")]
        strata: Vec<String>,
        #[serde(default)]
        covariates: Formula,
    },
}

fn default_strata() -> Vec<String> {
    vec!["A".into()]
}

impl Default for CensoringSpec {
    fn default() -> Self {
        CensoringSpec::Cox {
            strata: default_strata(),
            covariates: Formula::intercept_only(),
        }
    }
}

/// Everything needed to rerun the estimator on a dataset with the same schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSpec {
    pub survival_formula: Formula,
    pub censoring: CensoringSpec,
    pub cost_formula: Formula,
    pub cost_family: CostFamily,
    /// `X` terms of the probit model; the `Φ⁻¹(ω)` term is always added.
    pub probit_formula: Formula,
    pub quantile_mode: QuantileMode,
    pub lambdas: Vec<f64>,
    pub m_draws: usize,
    pub n_omega: usize,
    pub seed: u64,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self {
            survival_formula: Formula::parse("A").unwrap(),
            censoring: CensoringSpec::default(),
            cost_formula: Formula::parse("A + Z").unwrap(),
            cost_family: CostFamily::LogNormal,
            probit_formula: Formula::intercept_only(),
            quantile_mode: QuantileMode::Auto,
            lambdas: vec![1.0],
            m_draws: DEFAULT_M,
            n_omega: DEFAULT_N_OMEGA,
            seed: 0,
        }
    }
}

impl PipelineSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() {
            return Err(Error::Config(
                "at least one willingness-to-pay value is required".into(),
            ));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::Config(format!(
                "willingness-to-pay must be positive and finite, got {l}"
            )));
        }
        if self.lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "willingness-to-pay values must be strictly increasing".into(),
            ));
        }
        if self.m_draws == 0 {
            return Err(Error::Config("M must be at least 1".into()));
        }
        if self.n_omega == 0 || self.n_omega >= self.m_draws {
            return Err(Error::Config(format!(
                "N_omega must be between 1 and M - 1 = {}, got {}",
                self.m_draws.saturating_sub(1),
                self.n_omega
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<OmegaGrid> {
        OmegaGrid::new(self.n_omega)
    }
}

/// A covariate profile `x` at which `θ(λ | x)` is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub label: String,
    /// Values in schema order; categorical columns hold level codes.
    pub x: Vec<f64>,
}

/// Parses profiles from a JSON array of objects mapping every `X` column to a
/// number (numeric columns) or a level name (categorical columns). An optional
/// `"label"` entry names the profile.
pub fn parse_profiles(json: &str, schema: &Schema) -> Result<Vec<Profile>> {
    let bad = |m: String| Error::Config(format!("profiles: {m}"));
    let value: serde_json::Value = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
    let items = value
        .as_array()
        .ok_or_else(|| bad("expected a JSON array of objects".into()))?;
    if items.is_empty() {
        return Err(bad("no profiles given".into()));
    }
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let obj = item
            .as_object()
            .ok_or_else(|| bad(format!("entry {i} is not an object")))?;
        let label_is_column = schema.x.iter().any(|c| c.name == "label");
        for key in obj.keys() {
            if !(key == "label" && !label_is_column) && !schema.x.iter().any(|c| &c.name == key) {
                return Err(bad(format!("entry {i}: {key:?} is not an effect-modifier (X) column")));
            }
        }
        let mut x = Vec::with_capacity(schema.x.len());
        let mut parts = Vec::new();
        for col in &schema.x {
            let v = obj
                .get(&col.name)
                .ok_or_else(|| bad(format!("entry {i}: missing value for {:?}", col.name)))?;
            let code = match &col.kind {
                ColumnKind::Numeric => v
                    .as_f64()
                    .filter(|f| f.is_finite())
                    .ok_or_else(|| bad(format!("entry {i}: {:?} must be a finite number", col.name)))?,
                ColumnKind::Categorical { levels } => {
                    let s = match v {
                        serde_json::Value::String(s) => s.clone(),
                        serde_json::Value::Number(n) => n.to_string(),
                        _ => return Err(bad(format!("entry {i}: {:?} must be a level name", col.name))),
                    };
                    levels
                        .iter()
                        .position(|l| *l == s)
                        .ok_or_else(|| bad(format!("entry {i}: {s:?} is not a level of {:?}", col.name)))?
                        as f64
                }
            };
            parts.push(format!("{}={}", col.name, compact(v)));
            x.push(code);
        }
        let label = match obj.get("label").filter(|_| !label_is_column) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
            None if parts.is_empty() => "all".to_string(),
            None => parts.join(","),
        };
        out.push(Profile { label, x });
    }
    Ok(out)
}

fn compact(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Fitted `f̂(Z | A, X, L)`, `f̂(Y | A, X, L, Z)` and `Ĝ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedOutcomeModels {
    pub survival: WeibullFit,
    pub censoring: CensoringModel,
    pub weights: IpcwWeights,
    pub cost: CostModel,
}

pub fn fit_outcome_models(dataset: &Dataset, spec: &PipelineSpec) -> Result<FittedOutcomeModels> {
    let violations = validate(dataset);
    if !violations.is_empty() {
        return Err(crate::data::DataError::Invalid(violations).into());
    }
    let survival = fit_weibull(dataset, &spec.survival_formula)?;
    let censoring = match &spec.censoring {
        CensoringSpec::KaplanMeier => fit_censoring_km(dataset)?,
        CensoringSpec::Cox { strata, covariates } => fit_censoring_cox(dataset, strata, covariates)?,
    };
    let weights = compute_ipcw(dataset, &censoring)?;
    let cost = fit_cost(dataset, &weights, &spec.cost_formula, spec.cost_family)?;
    Ok(FittedOutcomeModels {
        survival,
        censoring,
        weights,
        cost,
    })
}

/// Per-`λ` probit fit and `θ̂` for each profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub lambda: f64,
    pub fit: NbsRegressionFit,
    pub quantile_kind: QuantileKind,
    pub thetas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineEstimate {
    pub profiles: Vec<Profile>,
    pub per_lambda: Vec<LambdaEstimate>,
}

impl PipelineEstimate {
    pub fn lambdas(&self) -> Vec<f64> {
        self.per_lambda.iter().map(|l| l.lambda).collect()
    }

    pub fn theta(&self, lambda_index: usize, profile_index: usize) -> f64 {
        self.per_lambda[lambda_index].thetas[profile_index]
    }

    pub fn coefficient_names(&self) -> &[String] {
        &self.per_lambda[0].fit.names
    }

    /// CED rows in `(λ, profile)` order; `cis` holds optional intervals indexed the same way.
    pub fn ced_curve(&self, schema: &Schema, range: Option<PrimaryRange>, cis: Option<&[Vec<(f64, f64)>]>) -> CedCurve {
        let mut rows = Vec::new();
        for (li, l) in self.per_lambda.iter().enumerate() {
            for (pi, p) in self.profiles.iter().enumerate() {
                let ci = cis.map(|c| c[li][pi]);
                rows.push(CedRow {
                    lambda: l.lambda,
                    profile: p.label.clone(),
                    x: p.x.clone(),
                    theta: l.thetas[pi],
                    ci_lower: ci.map(|c| c.0),
                    ci_upper: ci.map(|c| c.1),
                    in_primary_range: range.is_none_or(|r| r.contains(l.lambda)),
                });
            }
        }
        CedCurve {
            x_names: schema.x.iter().map(|c| c.name.clone()).collect(),
            rows,
        }
    }
}

/// Estimates with the outcome models refitted on `dataset`.
pub fn estimate(dataset: &Dataset, spec: &PipelineSpec, profiles: &[Profile]) -> Result<PipelineEstimate> {
    spec.validate()?;
    let models = fit_outcome_models(dataset, spec)?;
    estimate_with_models(dataset, &models.survival, &models.cost, spec, profiles)
}

/// Estimates with given outcome models; `dataset` only supplies the empirical
/// distribution of `(L, X)`.
pub fn estimate_with_models(
    dataset: &Dataset,
    survival: &WeibullFit,
    cost: &CostModel,
    spec: &PipelineSpec,
    profiles: &[Profile],
) -> Result<PipelineEstimate> {
    spec.validate()?;
    let schema = dataset.schema();
    if let Some(p) = profiles.iter().find(|p| p.x.len() != schema.x.len()) {
        return Err(Error::Config(format!(
            "profile {:?} has {} values for {} X columns",
            p.label,
            p.x.len(),
            schema.x.len()
        )));
    }
    let config = StandardizationConfig::new(spec.m_draws, rng::derive_seed(spec.seed, &[STANDARDIZATION_TAG]))?;
    let draws: BTreeMap<Arm, ArmDraws> = Arm::BOTH
        .iter()
        .map(|&arm| draw_arm(dataset, survival, cost, arm, &config).map(|d| (arm, d)))
        .collect::<Result<_>>()?;
    let grid = spec.grid()?;
    let x_design = Design::build(&spec.probit_formula, schema, true, Allowed::X_ONLY)?;

    let per_lambda = spec
        .lambdas
        .par_iter()
        .map(|&lambda| {
            let at = |e: Error| Error::AtLambda {
                lambda,
                source: Box::new(e),
            };
            let control = draws[&Arm::Control].pseudo_population(lambda).map_err(at)?;
            let treated = draws[&Arm::Treated].pseudo_population(lambda).map_err(at)?;
            let quantiles = estimate_quantiles(&control, &grid, &x_design, spec.quantile_mode).map_err(at)?;
            let table = build_placement_values(&treated, &quantiles).map_err(at)?;
            let fit = fit_probit(&table, &spec.probit_formula, schema).map_err(at)?;
            debug!(
                "lambda {lambda}: probit {:?} in {} iterations",
                fit.coefficients, fit.iterations
            );
            let thetas = profiles.iter().map(|p| integrate_nbs(&fit, &p.x).theta).collect();
            Ok(LambdaEstimate {
                lambda,
                fit,
                quantile_kind: quantiles.kind,
                thetas,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PipelineEstimate {
        profiles: profiles.to_vec(),
        per_lambda,
    })
}
