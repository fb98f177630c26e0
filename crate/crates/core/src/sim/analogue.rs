//! Synthetic observational cohort with categorical effect modifiers and
//! structural zero costs, for exercising the zero-inflated analysis path.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Weibull};

use crate::cost::CostFamily;
use crate::data::{Arm, ColumnSpec, CostEffectivenessRecord, Dataset, Schema};
use crate::formula::Formula;
use crate::nbs::QuantileMode;
use crate::pipeline::{CensoringSpec, PipelineSpec, Profile};

pub const STAGES: [&str; 2] = ["I", "II"];
pub const CHARLSON: [&str; 3] = ["0", "1", "2+"];

fn expit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn analogue_schema() -> Schema {
    Schema::new(
        vec![
            ColumnSpec::categorical("stage", STAGES.map(String::from).to_vec()),
            ColumnSpec::categorical("charlson", CHARLSON.map(String::from).to_vec()),
        ],
        vec![ColumnSpec::numeric("age")],
    )
}

/// `n` subjects. Time is in years; treatment prolongs survival and adds a
/// fixed multiplicative cost.
pub fn generate_analogue_data<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Dataset {
    let records = (0..n)
        .map(|_| {
            let age: f64 = rng.sample(StandardNormal);
            let stage = if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 };
            let u: f64 = rng.random();
            let charlson = if u < 0.5 {
                0.0
            } else if u < 0.8 {
                1.0
            } else {
                2.0
            };
            let a = if rng.random::<f64>() < expit(-0.2 - 0.5 * age + 0.4 * stage - 0.3 * charlson) {
                1.0
            } else {
                0.0
            };
            let scale = (1.2 + 0.3 * a - 0.3 * stage - 0.2 * charlson - 0.2 * age + 0.2 * a * stage).exp();
            let t = Weibull::new(scale, 1.5).unwrap().sample(rng);
            let c = Weibull::new((2.2 + 0.3 * a).exp(), 1.5).unwrap().sample(rng);
            let zero = rng.random::<f64>() < expit(-1.5 - 0.3 * a + 0.4 * charlson);
            let e: f64 = rng.sample(StandardNormal);
            let y = if zero {
                0.0
            } else {
                (9.5 + 0.4 * a + 0.15 * charlson + 0.1 * age + 0.05 * t + 0.6 * e).exp()
            };
            let censored = c < t;
            CostEffectivenessRecord {
                treatment: if a == 1.0 { Arm::Treated } else { Arm::Control },
                covariate_x: vec![stage, charlson],
                confounders_l: vec![age],
                observed_time: t.min(c),
                cost: (!censored).then_some(y),
                survival_censored: censored,
                cost_censored: censored,
            }
        })
        .collect();
    Dataset::new(records, analogue_schema(), f64::INFINITY)
}

/// Correctly specified analysis of the analogue cohort over `λ` from 50k to 120k.
pub fn analogue_spec(m_draws: usize, seed: u64) -> PipelineSpec {
    PipelineSpec {
        survival_formula: Formula::parse("A + stage + charlson + age + A:stage").unwrap(),
        censoring: CensoringSpec::Cox {
            strata: vec!["A".into()],
            covariates: Formula::intercept_only(),
        },
        cost_formula: Formula::parse("A + charlson + age + Z").unwrap(),
        cost_family: CostFamily::ZeroInflated,
        probit_formula: Formula::parse("stage + charlson").unwrap(),
        quantile_mode: QuantileMode::Auto,
        lambdas: (5..=12).map(|k| k as f64 * 10_000.0).collect(),
        m_draws,
        n_omega: 30,
        seed,
    }
}

/// All six stage × Charlson profiles, as level codes.
pub fn analogue_profiles() -> Vec<Profile> {
    let mut out = Vec::new();
    for (s, sn) in STAGES.iter().enumerate() {
        for (c, cn) in CHARLSON.iter().enumerate() {
            out.push(Profile {
                label: format!("stage={sn},charlson={cn}"),
                x: vec![s as f64, c as f64],
            });
        }
    }
    out
}
