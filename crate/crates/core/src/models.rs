//! JSON document holding fitted outcome models for reuse across runs.

use serde::{Deserialize, Serialize};

use crate::cost::{CostModel, LogNormalCostFit};
use crate::data::{ColumnKind, ColumnRef, Schema, Source};
use crate::error::{Error, Result};
use crate::formula::{Design, Factor};
use crate::pipeline::FittedOutcomeModels;
use crate::survival::{CensoringKind, CensoringModel, IpcwWeights, StrataVariable, WeibullFit};

pub const FORMAT: &str = "nbs-models";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub schema: Schema,
    pub survival: WeibullFit,
    pub censoring: CensoringModel,
    pub cost: CostModel,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Document(msg.into())
}

fn check_ref(r: ColumnRef, schema: &Schema, what: &str) -> Result<()> {
    let len = match r.source {
        Source::X => schema.x.len(),
        Source::L => schema.l.len(),
    };
    if r.index >= len {
        return Err(bad(format!("{what}: column reference {r:?} outside the schema")));
    }
    Ok(())
}

fn check_design(d: &Design, schema: &Schema, what: &str) -> Result<()> {
    for col in &d.columns {
        for f in &col.factors {
            match *f {
                Factor::Treatment | Factor::Time => {}
                Factor::Numeric(r) => check_ref(r, schema, what)?,
                Factor::Level(r, code) => {
                    check_ref(r, schema, what)?;
                    match &schema.column(r).kind {
                        ColumnKind::Categorical { levels } if code < levels.len() => {}
                        _ => return Err(bad(format!("{what}: column {:?} has no level {code}", col.name))),
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_vector(v: &[f64], len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(bad(format!(
            "{what}: {} coefficients for {len} design columns",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(bad(format!("{what}: non-finite coefficient")));
    }
    Ok(())
}

fn check_lognormal(f: &LogNormalCostFit, schema: &Schema, what: &str) -> Result<()> {
    check_design(&f.design, schema, what)?;
    check_vector(&f.mean_coefficients, f.design.ncols(), what)?;
    if !(f.sigma2 > 0.0 && f.sigma2.is_finite()) {
        return Err(bad(format!("{what}: sigma2 must be positive and finite")));
    }
    Ok(())
}

impl ModelDocument {
    pub fn new(schema: Schema, survival: WeibullFit, censoring: CensoringModel, cost: CostModel) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            schema,
            survival,
            censoring,
            cost,
        }
    }

    pub fn from_fitted(schema: &Schema, models: &FittedOutcomeModels) -> Self {
        Self::new(
            schema.clone(),
            models.survival.clone(),
            models.censoring.clone(),
            models.cost.clone(),
        )
    }

    /// Structural checks so that a loaded document can be sampled from safely.
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(bad(format!("format is {:?}, expected {FORMAT:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(bad(format!("unsupported version {}", self.version)));
        }
        let s = &self.survival;
        check_design(&s.design, &self.schema, "survival")?;
        check_vector(&s.scale_coefficients, s.design.ncols(), "survival")?;
        if !(s.shape_k > 0.0 && s.shape_k.is_finite()) {
            return Err(bad("survival: shape must be positive and finite"));
        }
        let c = &self.censoring;
        if c.strata_refs.len() != c.strata_variables.len() {
            return Err(bad("censoring: strata names and references differ in length"));
        }
        for r in &c.strata_refs {
            if let StrataVariable::Column(r) = r {
                check_ref(*r, &self.schema, "censoring")?;
            }
        }
        if let Some(d) = &c.covariates {
            check_design(d, &self.schema, "censoring")?;
            if !c.eta.is_empty() {
                check_vector(&c.eta, d.ncols(), "censoring")?;
            }
        }
        for st in &c.strata {
            if st.key.len() != c.strata_refs.len() {
                return Err(bad("censoring: stratum key length mismatch"));
            }
            if st.times.len() != st.values.len() {
                return Err(bad("censoring: knot times and values differ in length"));
            }
            if st.times.windows(2).any(|w| !(w[0] <= w[1])) || st.times.iter().any(|t| !t.is_finite()) {
                return Err(bad("censoring: knot times must be finite and sorted"));
            }
            let ok = match c.kind {
                CensoringKind::KaplanMeierByArm => st.values.iter().all(|v| (0.0..=1.0).contains(v)),
                CensoringKind::StratifiedCox => st.values.iter().all(|v| *v >= 0.0 && v.is_finite()),
            };
            if !ok {
                return Err(bad("censoring: step-function values out of range"));
            }
        }
        match &self.cost {
            CostModel::LogNormal(f) => check_lognormal(f, &self.schema, "cost")?,
            CostModel::ZeroInflated(f) => {
                check_design(&f.zero_design, &self.schema, "cost zero stage")?;
                check_vector(&f.zero_logit_coefficients, f.zero_design.ncols(), "cost zero stage")?;
                check_lognormal(&f.positive_part, &self.schema, "cost positive stage")?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    /// Models ready for standardization. Weights are not stored and come back
    /// as unit weights over an empty dataset.
    pub fn into_fitted(self) -> FittedOutcomeModels {
        FittedOutcomeModels {
            survival: self.survival,
            censoring: self.censoring,
            weights: IpcwWeights {
                weights: vec![],
                horizon_tau: f64::INFINITY,
            },
            cost: self.cost,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, ColumnSpec, CostEffectivenessRecord, Dataset};
    use crate::formula::Formula;
    use crate::pipeline::{fit_outcome_models, PipelineSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset() -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let records = (0..400)
            .map(|i| {
                let a = if i % 2 == 0 { Arm::Treated } else { Arm::Control };
                let x = (i % 3) as f64;
                let t = 50.0 * (1.0 + rng.random::<f64>());
                let c = 40.0 + 200.0 * rng.random::<f64>();
                let censored = c < t;
                CostEffectivenessRecord {
                    treatment: a,
                    covariate_x: vec![x],
                    confounders_l: vec![rng.random()],
                    observed_time: t.min(c),
                    cost: (!censored).then(|| 100.0 * (1.0 + rng.random::<f64>())),
                    survival_censored: censored,
                    cost_censored: censored,
                }
            })
            .collect();
        let schema = Schema::new(
            vec![ColumnSpec::categorical("x", vec!["a".into(), "b".into(), "c".into()])],
            vec![ColumnSpec::numeric("l")],
        );
        Dataset::new(records, schema, f64::INFINITY)
    }

    #[test]
    fn round_trip() {
        let d = dataset();
        let spec = PipelineSpec {
            survival_formula: Formula::parse("A + x + l").unwrap(),
            ..PipelineSpec::default()
        };
        let fitted = fit_outcome_models(&d, &spec).unwrap();
        let doc = ModelDocument::from_fitted(d.schema(), &fitted);
        let text = doc.to_json();
        let back = ModelDocument::from_json(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn rejects_inconsistent_documents() {
        let d = dataset();
        let fitted = fit_outcome_models(&d, &PipelineSpec::default()).unwrap();
        let doc = ModelDocument::from_fitted(d.schema(), &fitted);
        let mut wrong = doc.clone();
        wrong.version = 7;
        assert!(ModelDocument::from_json(&wrong.to_json()).is_err());
        let mut wrong = doc.clone();
        wrong.survival.scale_coefficients.push(1.0);
        assert!(ModelDocument::from_json(&wrong.to_json()).is_err());
        let mut wrong = doc.clone();
        wrong.schema.x.clear();
        wrong.survival = WeibullFit::from_parts(
            Design::build(
                &Formula::parse("x").unwrap(),
                d.schema(),
                true,
                crate::formula::Allowed::ALL,
            )
            .unwrap(),
            2.0,
            vec![1.0, 0.0, 0.0],
        );
        assert!(ModelDocument::from_json(&wrong.to_json()).is_err());
        assert!(ModelDocument::from_json("{}").is_err());
        assert!(ModelDocument::from_json("[1,2").is_err());
    }
}
