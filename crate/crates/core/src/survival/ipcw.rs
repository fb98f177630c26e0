use serde::{Deserialize, Serialize};

use super::CensoringModel;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Evaluations of `Ĝ` below this floor are treated as positivity violations.
pub const POSITIVITY_FLOOR: f64 = 1e-4;

/// Inverse-probability-of-censoring weights, one per record:
/// `w_i = 1(cost observed) / Ĝ(T*_i−)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpcwWeights {
    pub weights: Vec<f64>,
    pub horizon_tau: f64,
}

impl IpcwWeights {
    /// Unit weights on observed costs, zero on censored costs.
    pub fn unweighted(dataset: &Dataset) -> Self {
        Self {
            weights: dataset
                .records()
                .iter()
                .map(|r| if r.cost_observed() { 1.0 } else { 0.0 })
                .collect(),
            horizon_tau: dataset.horizon_tau(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

pub fn compute_ipcw(dataset: &Dataset, model: &CensoringModel) -> Result<IpcwWeights> {
    let mut weights = Vec::with_capacity(dataset.len());
    let mut offending = Vec::new();
    for (i, r) in dataset.records().iter().enumerate() {
        if r.cost_censored {
            weights.push(0.0);
            continue;
        }
        let g = model.survival_before(dataset.truncated_time(i), r);
        if g < POSITIVITY_FLOOR {
            offending.push(i);
            weights.push(f64::NAN);
        } else {
            weights.push(1.0 / g);
        }
    }
    if !offending.is_empty() {
        return Err(Error::Positivity {
            threshold: POSITIVITY_FLOOR,
            records: offending,
        });
    }
    Ok(IpcwWeights {
        weights,
        horizon_tau: dataset.horizon_tau(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, CostEffectivenessRecord, Schema};
    use crate::survival::{fit_censoring_cox, fit_censoring_km};
    use crate::Formula;

    fn rec(t: f64, censored: bool, arm: Arm) -> CostEffectivenessRecord {
        CostEffectivenessRecord {
            treatment: arm,
            covariate_x: vec![],
            confounders_l: vec![],
            observed_time: t,
            cost: if censored { None } else { Some(10.0) },
            survival_censored: censored,
            cost_censored: censored,
        }
    }

    #[test]
    fn no_censoring_gives_unit_weights() {
        let d = Dataset::new(
            (0..10)
                .map(|i| rec(i as f64 + 1.0, false, Arm::from_index(i % 2).unwrap()))
                .collect(),
            Schema::default(),
            f64::INFINITY,
        );
        let w = compute_ipcw(&d, &fit_censoring_km(&d).unwrap()).unwrap();
        assert!(w.weights.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn reciprocal_and_zero_weights() {
        // Treated arm: censoring at t=1 with risk set 2 → Ĝ(t>1) = 1/2.
        let d = Dataset::new(
            vec![
                rec(1.0, true, Arm::Treated),
                rec(2.0, false, Arm::Treated),
                rec(1.0, false, Arm::Control),
            ],
            Schema::default(),
            f64::INFINITY,
        );
        let w = compute_ipcw(&d, &fit_censoring_km(&d).unwrap()).unwrap();
        assert_eq!(w.weights, vec![0.0, 2.0, 1.0]);
    }

    #[test]
    fn positivity_violation_lists_records() {
        // Treated arm: 10⁴ successive single censorings ahead of one observed
        // cost give Ĝ = 1/10001 at its time.
        let mut records: Vec<_> = (1..=10_000).map(|t| rec(t as f64, true, Arm::Treated)).collect();
        records.push(rec(20_000.0, false, Arm::Treated));
        records.push(rec(1.0, false, Arm::Control));
        let d = Dataset::new(records, Schema::default(), f64::INFINITY);
        let m = fit_censoring_km(&d).unwrap();
        match compute_ipcw(&d, &m) {
            Err(Error::Positivity { records, .. }) => assert_eq!(records, vec![10_000]),
            other => panic!("expected positivity error, got {other:?}"),
        }
    }

    #[test]
    fn horizon_truncates_evaluation_time() {
        // With τ = 1.5 the record at t = 3 is evaluated at 1.5, before the censoring at 2.
        // survival censored at 2 > τ, so its cost is complete
        let mut late = rec(2.0, true, Arm::Control);
        late.cost_censored = false;
        late.cost = Some(5.0);
        let d = Dataset::new(
            vec![
                rec(1.0, false, Arm::Control),
                rec(3.0, false, Arm::Control),
                late,
                rec(1.0, false, Arm::Treated),
            ],
            Schema::default(),
            1.5,
        );
        let m = fit_censoring_cox(&d, &["A".into()], &Formula::intercept_only()).unwrap();
        let w = compute_ipcw(&d, &m).unwrap();
        assert_eq!(w.weights[1], 1.0);
    }
}
