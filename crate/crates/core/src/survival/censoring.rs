//! Models for the censoring survivor function `G(t) = P(C ≥ t)`.
//!
//! Both estimators treat censoring as the event of interest. `Ĝ` is evaluated
//! left-continuously: only censoring events strictly before `t` count, so a
//! subject's own censoring time does not reduce its own `Ĝ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::data::{ColumnKind, ColumnRef, CostEffectivenessRecord, Dataset};
use crate::error::{Error, FitError, Result};
use crate::formula::{Allowed, Covariates, Design, Formula, INTERCEPT};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringKind {
    KaplanMeierByArm,
    StratifiedCox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrataVariable {
    Treatment,
    Column(ColumnRef),
}

impl StrataVariable {
    fn key(&self, r: &CostEffectivenessRecord) -> i64 {
        match *self {
            StrataVariable::Treatment => r.treatment.index() as i64,
            StrataVariable::Column(c) => r.covariate(c) as i64,
        }
    }
}

/// Step function for one stratum. For Kaplan–Meier `values[j]` is `Ĝ` just
/// after `times[j]`; for Cox it is the baseline cumulative hazard just after
/// `times[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringStratum {
    pub key: Vec<i64>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub n_at_risk: usize,
    /// No censoring events: `Ĝ ≡ 1`.
    pub degenerate: bool,
}

impl CensoringStratum {
    /// Index of the last knot strictly before `t`.
    fn last_before(&self, t: f64) -> Option<usize> {
        let n = self.times.partition_point(|&s| s < t);
        n.checked_sub(1)
    }

    fn last_at_or_before(&self, t: f64) -> Option<usize> {
        let n = self.times.partition_point(|&s| s <= t);
        n.checked_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringModel {
    pub kind: CensoringKind,
    pub strata_variables: Vec<String>,
    pub strata_refs: Vec<StrataVariable>,
    /// Regression covariates `W` (Cox only; no intercept).
    pub covariates: Option<Design>,
    pub eta: Vec<f64>,
    pub eta_covariance: Vec<Vec<f64>>,
    pub strata: Vec<CensoringStratum>,
}

impl CensoringModel {
    fn stratum(&self, r: &CostEffectivenessRecord) -> Option<&CensoringStratum> {
        let key: Vec<i64> = self.strata_refs.iter().map(|v| v.key(r)).collect();
        self.strata.iter().find(|s| s.key == key)
    }

    fn relative_risk(&self, r: &CostEffectivenessRecord) -> f64 {
        match &self.covariates {
            Some(d) if !self.eta.is_empty() => d.dot(&Covariates::of_record(r), &self.eta).exp(),
            _ => 1.0,
        }
    }

    fn evaluate(&self, r: &CostEffectivenessRecord, idx: Option<usize>, s: &CensoringStratum) -> f64 {
        match (self.kind, idx) {
            (_, None) => 1.0,
            (CensoringKind::KaplanMeierByArm, Some(j)) => s.values[j],
            (CensoringKind::StratifiedCox, Some(j)) => (-self.relative_risk(r) * s.values[j]).exp(),
        }
    }

    /// `Ĝ(t−)` for a subject with the covariates of `r`: probability the
    /// censoring time is at least `t`.
    pub fn survival_before(&self, t: f64, r: &CostEffectivenessRecord) -> f64 {
        match self.stratum(r) {
            Some(s) => self.evaluate(r, s.last_before(t), s),
            None => 1.0,
        }
    }

    /// Right-continuous `Ĝ(t)`.
    pub fn survival_at(&self, t: f64, r: &CostEffectivenessRecord) -> f64 {
        match self.stratum(r) {
            Some(s) => self.evaluate(r, s.last_at_or_before(t), s),
            None => 1.0,
        }
    }
}

fn group_by_strata(dataset: &Dataset, strata_refs: &[StrataVariable]) -> BTreeMap<Vec<i64>, Vec<usize>> {
    let mut groups: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.records().iter().enumerate() {
        let key = strata_refs.iter().map(|v| v.key(r)).collect();
        groups.entry(key).or_default().push(i);
    }
    groups
}

/// Per-arm product-limit estimate of `G` from `(Z, δ*)`.
pub fn fit_censoring_km(dataset: &Dataset) -> Result<CensoringModel> {
    let strata_refs = vec![StrataVariable::Treatment];
    let groups = group_by_strata(dataset, &strata_refs);
    if groups.len() < 2 {
        return Err(FitError::InsufficientData {
            model: "kaplan-meier censoring",
            reason: "both treatment arms need records".into(),
        }
        .into());
    }
    let strata = groups
        .into_iter()
        .map(|(key, rows)| {
            let mut obs: Vec<(f64, bool)> = rows
                .iter()
                .map(|&i| {
                    let r = &dataset.records()[i];
                    (r.observed_time, r.cost_censored)
                })
                .collect();
            obs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let n = obs.len();
            let mut times = Vec::new();
            let mut values = Vec::new();
            let mut g = 1.0;
            let mut i = 0;
            while i < n {
                let t = obs[i].0;
                let at_risk = n - i;
                let mut j = i;
                let mut events = 0usize;
                while j < n && obs[j].0 == t {
                    events += obs[j].1 as usize;
                    j += 1;
                }
                if events > 0 {
                    g *= 1.0 - events as f64 / at_risk as f64;
                    times.push(t);
                    values.push(g);
                }
                i = j;
            }
            CensoringStratum {
                key,
                degenerate: times.is_empty(),
                times,
                values,
                n_at_risk: n,
            }
        })
        .collect();
    Ok(CensoringModel {
        kind: CensoringKind::KaplanMeierByArm,
        strata_variables: vec!["A".into()],
        strata_refs,
        covariates: None,
        eta: vec![],
        eta_covariance: vec![],
        strata,
    })
}

/// Records of one stratum sorted by descending time.
struct StratumData {
    key: Vec<i64>,
    times: Vec<f64>,
    events: Vec<bool>,
    w: Vec<Vec<f64>>,
}

/// Breslow partial log-likelihood, score and Hessian summed over strata.
fn partial_likelihood(data: &[StratumData], eta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let q = eta.len();
    let mut ll = 0.0;
    let mut g = DVector::zeros(q);
    let mut h = DMatrix::zeros(q, q);
    for s in data {
        let n = s.times.len();
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(q);
        let mut s2 = DMatrix::zeros(q, q);
        let mut i = 0;
        while i < n {
            let t = s.times[i];
            let mut j = i;
            let mut d = 0.0;
            let mut wsum = DVector::zeros(q);
            while j < n && s.times[j] == t {
                let w = DVector::from_column_slice(&s.w[j]);
                let e = w.dot(eta).exp();
                s0 += e;
                s1 += &w * e;
                s2 += &w * w.transpose() * e;
                if s.events[j] {
                    d += 1.0;
                    wsum += &w;
                    ll += w.dot(eta);
                }
                j += 1;
            }
            if d > 0.0 {
                ll -= d * s0.ln();
                let mean = &s1 / s0;
                g += wsum - &mean * d;
                h -= (&s2 / s0 - &mean * mean.transpose()) * d;
            }
            i = j;
        }
    }
    (ll, g, h)
}

const COX_MAX_ITER: usize = 100;
const COX_GRAD_TOL: f64 = 1e-8;
const COX_FLAT_CHECK: f64 = 5.0;
const COX_ETA_BOUND: f64 = 25.0;

/// Stratified Cox model for the censoring hazard
/// `h(t | V, W) = exp(η'W) h_V(t)`, with Breslow baselines per stratum.
/// `strata` names discrete variables (`"A"` for treatment); `covariates` is
/// the regression formula for `W`.
pub fn fit_censoring_cox(dataset: &Dataset, strata: &[String], covariates: &Formula) -> Result<CensoringModel> {
    let schema = dataset.schema();
    let mut strata_refs = Vec::new();
    for name in strata {
        if name == "A" {
            strata_refs.push(StrataVariable::Treatment);
            continue;
        }
        let r = schema
            .locate(name)
            .ok_or_else(|| Error::Config(format!("unknown stratification variable {name:?}")))?;
        if matches!(schema.column(r).kind, ColumnKind::Numeric)
            && dataset.records().iter().any(|rec| rec.covariate(r).fract() != 0.0)
        {
            return Err(Error::Config(format!(
                "stratification variable {name:?} must be discrete"
            )));
        }
        strata_refs.push(StrataVariable::Column(r));
    }
    let design = Design::build(covariates, schema, false, Allowed::NO_TIME)?;
    let q = design.ncols();
    if q > 0 {
        let with_intercept = Design::build(covariates, schema, true, Allowed::NO_TIME)?;
        let rows: Vec<usize> = (0..dataset.len()).collect();
        let m = with_intercept.matrix(dataset, &rows);
        let dep = linalg::dependent_columns(&m);
        if !dep.is_empty() {
            return Err(FitError::RankDeficient {
                model: "cox censoring",
                columns: dep
                    .iter()
                    .map(|&j| with_intercept.columns[j].name.clone())
                    .filter(|n| n != INTERCEPT)
                    .collect(),
            }
            .into());
        }
    }

    let groups = group_by_strata(dataset, &strata_refs);
    let data: Vec<StratumData> = groups
        .into_iter()
        .map(|(key, mut rows)| {
            rows.sort_by(|&a, &b| {
                dataset.records()[b]
                    .observed_time
                    .total_cmp(&dataset.records()[a].observed_time)
            });
            let recs = dataset.records();
            StratumData {
                key,
                times: rows.iter().map(|&i| recs[i].observed_time).collect(),
                events: rows.iter().map(|&i| recs[i].survival_censored).collect(),
                w: rows
                    .iter()
                    .map(|&i| design.row(&Covariates::of_record(&recs[i])))
                    .collect(),
            }
        })
        .collect();

    let mut eta = DVector::zeros(q);
    let mut eta_cov = DMatrix::zeros(q, q);
    if q > 0 {
        let (mut ll, mut g, mut h) = partial_likelihood(&data, &eta);
        let mut iterations = 0;
        let mut trace = Vec::new();
        while g.amax() >= COX_GRAD_TOL {
            if iterations == COX_MAX_ITER {
                return Err(FitError::NoConvergence {
                    model: "cox censoring",
                    iterations,
                    gradient_norm: g.amax(),
                    trace: trace.join(" "),
                }
                .into());
            }
            iterations += 1;
            let neg_h = -&h;
            let dir = match linalg::solve_spd(&neg_h, &g) {
                Some(d) => d,
                None => {
                    return Err(FitError::Separation {
                        model: "cox censoring",
                        reason: "monotone partial likelihood (information singular); remove covariates that perfectly predict censoring".into(),
                    }
                    .into())
                }
            };
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..50 {
                let cand = &eta + &dir * step;
                let (cll, cg, ch) = partial_likelihood(&data, &cand);
                if cll.is_finite() && cll >= ll - 1e-12 * ll.abs().max(1.0) {
                    eta = cand;
                    ll = cll;
                    g = cg;
                    h = ch;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            trace.push(format!("[{iterations}: ll={ll:.6} |g|={:.2e}]", g.amax()));
            if !accepted {
                return Err(FitError::NoConvergence {
                    model: "cox censoring",
                    iterations,
                    gradient_norm: g.amax(),
                    trace: trace.join(" "),
                }
                .into());
            }
            if eta.amax() > COX_ETA_BOUND {
                return Err(FitError::Separation {
                    model: "cox censoring",
                    reason: format!(
                        "monotone partial likelihood (|eta| = {:.1} diverging); remove covariates that perfectly predict censoring",
                        eta.amax()
                    ),
                }
                .into());
            }
        }
        // A finite maximum falls off when the coefficients are doubled; a
        // monotone likelihood stays flat.
        if eta.amax() > COX_FLAT_CHECK {
            let (ll2, _, _) = partial_likelihood(&data, &(&eta * 2.0));
            if ll2 > ll - 1e-3 {
                return Err(FitError::Separation {
                    model: "cox censoring",
                    reason: format!(
                        "monotone partial likelihood (|eta| = {:.1} with flat likelihood); remove covariates that perfectly predict censoring",
                        eta.amax()
                    ),
                }
                .into());
            }
        }
        eta_cov = linalg::inverse_spd(&-h).ok_or_else(|| FitError::Separation {
            model: "cox censoring",
            reason: "singular information at the optimum; remove covariates".into(),
        })?;
    }

    let fitted: Vec<CensoringStratum> = data
        .into_iter()
        .map(|s| {
            // Ascending pass over distinct event times accumulating the Breslow
            // increments d / Σ_{risk set} exp(η'W).
            let n = s.times.len();
            let risk: Vec<f64> =
                s.w.iter()
                    .map(|w| DVector::from_column_slice(w).dot(&eta).exp())
                    .collect();
            // suffix sums in the descending order = risk-set sums
            let mut tail = vec![0.0; n + 1];
            for i in 0..n {
                tail[i + 1] = tail[i] + risk[i];
            }
            let mut times = Vec::new();
            let mut values = Vec::new();
            let mut cum = 0.0;
            let mut j = n;
            while j > 0 {
                let t = s.times[j - 1];
                let mut i = j;
                let mut d = 0.0;
                while i > 0 && s.times[i - 1] == t {
                    d += s.events[i - 1] as u8 as f64;
                    i -= 1;
                }
                if d > 0.0 {
                    // risk set: all records at positions < j in descending order
                    cum += d / tail[j];
                    times.push(t);
                    values.push(cum);
                }
                j = i;
            }
            CensoringStratum {
                key: s.key,
                degenerate: times.is_empty(),
                times,
                values,
                n_at_risk: n,
            }
        })
        .collect();

    Ok(CensoringModel {
        kind: CensoringKind::StratifiedCox,
        strata_variables: strata.to_vec(),
        strata_refs,
        covariates: (q > 0).then_some(design),
        eta: eta.iter().copied().collect(),
        eta_covariance: linalg::to_rows(&eta_cov),
        strata: fitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, ColumnSpec, Schema};
    use crate::rng;
    use rand::Rng;

    fn rec(t: f64, censored: bool, arm: Arm, w: f64) -> CostEffectivenessRecord {
        CostEffectivenessRecord {
            treatment: arm,
            covariate_x: vec![w],
            confounders_l: vec![],
            observed_time: t,
            cost: if censored { None } else { Some(1.0) },
            survival_censored: censored,
            cost_censored: censored,
        }
    }

    fn schema() -> Schema {
        Schema::new(vec![ColumnSpec::numeric("w")], vec![])
    }

    #[test]
    fn km_hand_computation() {
        // Censoring flags {0,1,0,1} at times {1,2,3,4} in one arm.
        // t=2: risk set {2,3,4}, one censoring → 2/3. t=4: risk set {4} → 0.
        let mut records: Vec<_> = [(1.0, false), (2.0, true), (3.0, false), (4.0, true)]
            .iter()
            .map(|&(t, c)| rec(t, c, Arm::Treated, 0.0))
            .collect();
        records.push(rec(1.0, false, Arm::Control, 0.0));
        let d = Dataset::new(records, schema(), f64::INFINITY);
        let m = fit_censoring_km(&d).unwrap();
        let probe = rec(0.0, false, Arm::Treated, 0.0);
        assert_eq!(m.survival_at(1.5, &probe), 1.0);
        assert_eq!(m.survival_before(2.0, &probe), 1.0);
        assert!((m.survival_at(2.0, &probe) - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.survival_before(4.0, &probe) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.survival_at(4.0, &probe), 0.0);
        // the control arm has no censoring events
        let control = rec(0.0, false, Arm::Control, 0.0);
        assert_eq!(m.survival_at(100.0, &control), 1.0);
        assert!(m.strata[0].degenerate);
    }

    #[test]
    fn km_all_censored_at_one() {
        let mut records: Vec<_> = (0..5).map(|_| rec(1.0, true, Arm::Treated, 0.0)).collect();
        records.push(rec(1.0, true, Arm::Control, 0.0));
        let d = Dataset::new(records, schema(), f64::INFINITY);
        let m = fit_censoring_km(&d).unwrap();
        let probe = rec(0.0, false, Arm::Treated, 0.0);
        assert_eq!(m.survival_at(1.0, &probe), 0.0);
        assert_eq!(m.survival_at(7.0, &probe), 0.0);
        assert_eq!(m.survival_before(1.0, &probe), 1.0);
    }

    #[test]
    fn cox_without_covariates_is_nelson_aalen() {
        let mut r = rng::stream(1, &[]);
        let records: Vec<_> = (0..60)
            .map(|i| {
                let arm = if i % 2 == 0 { Arm::Treated } else { Arm::Control };
                rec((r.random::<f64>() * 10.0).ceil(), r.random::<f64>() < 0.4, arm, 0.0)
            })
            .collect();
        let d = Dataset::new(records.clone(), schema(), f64::INFINITY);
        let m = fit_censoring_cox(&d, &["A".into()], &Formula::intercept_only()).unwrap();
        for arm in Arm::BOTH {
            let arm_recs: Vec<_> = records.iter().filter(|x| x.treatment == arm).collect();
            let probe = rec(0.0, false, arm, 0.0);
            for t in 1..=11 {
                let t = t as f64;
                // brute-force Nelson–Aalen with ties: Σ_{s<t} d(s)/n(s)
                let mut h = 0.0;
                for s in 1..=10 {
                    let s = s as f64;
                    if s >= t {
                        break;
                    }
                    let d_s = arm_recs
                        .iter()
                        .filter(|x| x.observed_time == s && x.survival_censored)
                        .count();
                    let n_s = arm_recs.iter().filter(|x| x.observed_time >= s).count();
                    if d_s > 0 {
                        h += d_s as f64 / n_s as f64;
                    }
                }
                assert!((m.survival_before(t, &probe) - (-h).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cox_single_record_one_step() {
        let records = vec![rec(2.0, true, Arm::Treated, 0.0)];
        let d = Dataset::new(records, schema(), f64::INFINITY);
        let m = fit_censoring_cox(&d, &["A".into()], &Formula::intercept_only()).unwrap();
        assert_eq!(m.strata.len(), 1);
        assert_eq!(m.strata[0].times, vec![2.0]);
        let probe = rec(0.0, false, Arm::Treated, 0.0);
        assert_eq!(m.survival_before(2.0, &probe), 1.0);
        assert!((m.survival_at(2.0, &probe) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn cox_recovers_covariate_effect_and_separation_is_reported() {
        let mut r = rng::stream(2, &[]);
        let records: Vec<_> = (0..3000)
            .map(|_| {
                let w: f64 = r.random::<f64>() * 2.0 - 1.0;
                let c = -r.random::<f64>().ln() / (0.8 * w).exp();
                let t = -r.random::<f64>().ln() * 1.5;
                rec(c.min(t), c < t, Arm::Treated, w)
            })
            .collect();
        let d = Dataset::new(records, schema(), f64::INFINITY);
        let m = fit_censoring_cox(&d, &["A".into()], &Formula::parse("w").unwrap()).unwrap();
        let se = m.eta_covariance[0][0].sqrt();
        assert!((m.eta[0] - 0.8).abs() < 3.0 * se, "eta {} se {se}", m.eta[0]);

        // censoring only ever happens for w > 0, and before every w <= 0 subject
        let records: Vec<_> = (0..40)
            .map(|i| {
                let w = if i % 2 == 0 { 1.0 } else { -1.0 };
                rec(
                    if w > 0.0 { 1.0 + i as f64 * 0.01 } else { 5.0 + i as f64 },
                    w > 0.0,
                    Arm::Treated,
                    w,
                )
            })
            .collect();
        let d = Dataset::new(records, schema(), f64::INFINITY);
        let err = fit_censoring_cox(&d, &["A".into()], &Formula::parse("w").unwrap()).unwrap_err();
        assert!(err.to_string().contains("remove covariates"), "{err}");
    }
}
