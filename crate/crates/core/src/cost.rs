//! Conditional cost distributions `f(Y | A, X, L, Z)` fitted with IPCW.
//!
//! Only records with an observed cost and a positive weight enter a fit. The
//! same weights are applied to both stages of the zero-inflated model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FitError, Result};
use crate::formula::{Allowed, Covariates, Design, Formula};
use crate::linalg;
use crate::survival::IpcwWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogNormalCostFit {
    pub design: Design,
    pub mean_coefficients: Vec<f64>,
    /// Variance of log cost.
    pub sigma2: f64,
    /// Leverage-adjusted (HC3) sandwich covariance of the coefficients.
    pub covariance: Vec<Vec<f64>>,
    pub n_used: usize,
    pub weight_sum: f64,
}

impl LogNormalCostFit {
    pub fn from_parts(design: Design, mean_coefficients: Vec<f64>, sigma2: f64) -> Self {
        let p = mean_coefficients.len();
        Self {
            design,
            mean_coefficients,
            sigma2,
            covariance: vec![vec![0.0; p]; p],
            n_used: 0,
            weight_sum: 0.0,
        }
    }

    pub fn mean_log(&self, c: &Covariates<'_>) -> f64 {
        self.design.dot(c, &self.mean_coefficients)
    }

    pub fn sample<R: Rng + ?Sized>(&self, c: &Covariates<'_>, rng: &mut R) -> f64 {
        let e: f64 = rng.sample(StandardNormal);
        (self.mean_log(c) + self.sigma2.sqrt() * e).exp()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.mean_coefficients.len())
            .map(|i| self.covariance[i][i].max(0.0).sqrt())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroInflatedCostFit {
    pub zero_design: Design,
    /// Logistic coefficients for `P(Y = 0 | ·)`.
    pub zero_logit_coefficients: Vec<f64>,
    pub zero_covariance: Vec<Vec<f64>>,
    pub positive_part: LogNormalCostFit,
}

impl ZeroInflatedCostFit {
    pub fn zero_probability(&self, c: &Covariates<'_>) -> f64 {
        expit(self.zero_design.dot(c, &self.zero_logit_coefficients))
    }

    pub fn sample<R: Rng + ?Sized>(&self, c: &Covariates<'_>, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u < self.zero_probability(c) {
            0.0
        } else {
            self.positive_part.sample(c, rng)
        }
    }
}

/// Either cost family, as used by standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CostModel {
    LogNormal(LogNormalCostFit),
    ZeroInflated(ZeroInflatedCostFit),
}

impl CostModel {
    pub fn sample<R: Rng + ?Sized>(&self, c: &Covariates<'_>, rng: &mut R) -> f64 {
        match self {
            CostModel::LogNormal(f) => f.sample(c, rng),
            CostModel::ZeroInflated(f) => f.sample(c, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFamily {
    #[default]
    LogNormal,
    ZeroInflated,
}

pub fn fit_cost(dataset: &Dataset, weights: &IpcwWeights, formula: &Formula, family: CostFamily) -> Result<CostModel> {
    Ok(match family {
        CostFamily::LogNormal => CostModel::LogNormal(fit_lognormal_cost(dataset, weights, formula)?),
        CostFamily::ZeroInflated => CostModel::ZeroInflated(fit_zero_inflated_cost(dataset, weights, formula)?),
    })
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rows with an observed cost and positive weight.
fn weighted_rows(dataset: &Dataset, weights: &IpcwWeights) -> Result<Vec<usize>> {
    if weights.len() != dataset.len() {
        return Err(FitError::InvalidInput(format!("{} weights for {} records", weights.len(), dataset.len())).into());
    }
    Ok((0..dataset.len())
        .filter(|&i| weights.weights[i] > 0.0 && dataset.records()[i].cost.is_some())
        .collect())
}

fn check_rank(model: &'static str, design: &Design, x: &DMatrix<f64>) -> Result<()> {
    let dep = linalg::dependent_columns(x);
    if dep.is_empty() {
        Ok(())
    } else {
        Err(FitError::RankDeficient {
            model,
            columns: dep.iter().map(|&j| design.columns[j].name.clone()).collect(),
        }
        .into())
    }
}

/// Weighted least squares on log cost.
pub fn fit_lognormal_cost(dataset: &Dataset, weights: &IpcwWeights, formula: &Formula) -> Result<LogNormalCostFit> {
    let design = Design::build(formula, dataset.schema(), true, Allowed::ALL)?;
    let rows = weighted_rows(dataset, weights)?;
    if rows.is_empty() {
        return Err(FitError::InsufficientData {
            model: "log-normal cost",
            reason: "no record has an observed cost with positive weight".into(),
        }
        .into());
    }
    if rows.iter().any(|&i| dataset.records()[i].cost.unwrap_or(0.0) <= 0.0) {
        return Err(
            FitError::InvalidInput("zero or negative costs present; use the zero-inflated cost model".into()).into(),
        );
    }
    fit_lognormal_rows(dataset, weights, design, &rows)
}

fn fit_lognormal_rows(
    dataset: &Dataset,
    weights: &IpcwWeights,
    design: Design,
    rows: &[usize],
) -> Result<LogNormalCostFit> {
    let p = design.ncols();
    if rows.len() < p + 2 {
        return Err(FitError::InsufficientData {
            model: "log-normal cost",
            reason: format!("{} usable records for {p} coefficients", rows.len()),
        }
        .into());
    }
    let x = design.matrix(dataset, rows);
    check_rank("log-normal cost", &design, &x)?;
    let y = DVector::from_iterator(
        rows.len(),
        rows.iter().map(|&i| dataset.records()[i].cost.unwrap().ln()),
    );
    let w = DVector::from_iterator(rows.len(), rows.iter().map(|&i| weights.weights[i]));

    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwy = DVector::zeros(p);
    for i in 0..rows.len() {
        let xi = x.row(i).transpose();
        xtwx += &xi * xi.transpose() * w[i];
        xtwy += &xi * (w[i] * y[i]);
    }
    let a_inv = linalg::inverse_spd(&xtwx).ok_or_else(|| FitError::RankDeficient {
        model: "log-normal cost",
        columns: vec!["(weighted cross-product singular)".into()],
    })?;
    let beta = &a_inv * xtwy;
    let resid = &y - &x * &beta;
    let wsum: f64 = w.sum();
    let rss: f64 = resid.iter().zip(w.iter()).map(|(r, w)| w * r * r).sum();
    let dof = wsum - p as f64;
    if !(dof > 0.0) {
        return Err(FitError::InsufficientData {
            model: "log-normal cost",
            reason: format!("weight sum {wsum} does not exceed {p} coefficients"),
        }
        .into());
    }
    let sigma2 = rss / dof;
    if !(sigma2 > 0.0) {
        return Err(FitError::Degenerate {
            model: "log-normal cost",
            reason: "zero residual variance".into(),
        }
        .into());
    }
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..rows.len() {
        let xi = x.row(i).transpose();
        let h = (w[i] * (xi.transpose() * &a_inv * &xi)[0]).min(1.0 - 1e-8);
        let s = w[i] * resid[i] / (1.0 - h);
        meat += &xi * xi.transpose() * (s * s);
    }
    let cov = linalg::sandwich(&a_inv, &meat);
    Ok(LogNormalCostFit {
        design,
        mean_coefficients: beta.iter().copied().collect(),
        sigma2,
        covariance: linalg::to_rows(&cov),
        n_used: rows.len(),
        weight_sum: wsum,
    })
}

const LOGIT_MAX_ITER: usize = 50;
const LOGIT_GRAD_TOL: f64 = 1e-8;
const LOGIT_COEF_BOUND: f64 = 30.0;

/// Weighted logistic regression by iteratively reweighted least squares.
/// Returns coefficients and the inverse weighted information.
pub(crate) fn weighted_logistic(
    x: &DMatrix<f64>,
    y: &[bool],
    w: &[f64],
    model: &'static str,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let p = x.ncols();
    let n = x.nrows();
    let loglik = |beta: &DVector<f64>| -> f64 {
        (0..n)
            .map(|i| {
                let eta = x.row(i).dot(&beta.transpose());
                // log(1 + e^η) computed stably
                let log1pe = if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                };
                w[i] * (if y[i] { eta } else { 0.0 } - log1pe)
            })
            .sum()
    };
    let derivs = |beta: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let mut g = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for i in 0..n {
            let xi = x.row(i).transpose();
            let mu = expit(xi.dot(beta));
            g += &xi * (w[i] * (y[i] as u8 as f64 - mu));
            info += &xi * xi.transpose() * (w[i] * mu * (1.0 - mu));
        }
        (g, info)
    };
    let wsum: f64 = w.iter().sum();
    let ybar = (0..n).filter(|&i| y[i]).map(|i| w[i]).sum::<f64>() / wsum;
    let mut beta = DVector::zeros(p);
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut ll = loglik(&beta);
    let (mut g, mut info) = derivs(&beta);
    let mut iterations = 0;
    let mut trace = Vec::new();
    while g.amax() >= LOGIT_GRAD_TOL {
        if beta.amax() > LOGIT_COEF_BOUND {
            return Err(FitError::Separation {
                model,
                reason: "perfect separation in the zero-cost logistic stage; coefficients diverge".into(),
            }
            .into());
        }
        if iterations == LOGIT_MAX_ITER {
            return Err(FitError::NoConvergence {
                model,
                iterations,
                gradient_norm: g.amax(),
                trace: trace.join(" "),
            }
            .into());
        }
        iterations += 1;
        let dir = linalg::solve_spd(&info, &g).ok_or_else(|| FitError::Separation {
            model,
            reason: "information matrix singular (quasi-complete separation)".into(),
        })?;
        let mut step = 1.0;
        loop {
            let cand = &beta + &dir * step;
            let cll = loglik(&cand);
            if cll >= ll - 1e-12 * ll.abs().max(1.0) || step < 1e-10 {
                beta = cand;
                ll = cll;
                break;
            }
            step *= 0.5;
        }
        (g, info) = derivs(&beta);
        trace.push(format!("[{iterations}: ll={ll:.6} |g|={:.2e}]", g.amax()));
    }
    let cov = linalg::inverse_spd(&info).ok_or_else(|| FitError::Separation {
        model,
        reason: "information matrix singular at the optimum".into(),
    })?;
    Ok((beta.iter().copied().collect(), cov))
}

/// Two-part model: weighted logistic regression for `1(Y = 0)` and a weighted
/// log-normal fit on the positive costs.
pub fn fit_zero_inflated_cost(
    dataset: &Dataset,
    weights: &IpcwWeights,
    formula: &Formula,
) -> Result<ZeroInflatedCostFit> {
    let design = Design::build(formula, dataset.schema(), true, Allowed::ALL)?;
    let rows = weighted_rows(dataset, weights)?;
    let cost = |i: usize| dataset.records()[i].cost.unwrap();
    let positive: Vec<usize> = rows.iter().copied().filter(|&i| cost(i) > 0.0).collect();
    if positive.len() == rows.len() {
        return Err(FitError::Degenerate {
            model: "zero-inflated cost",
            reason: "zero stage collapsed: no zero costs among weighted records; use the log-normal model".into(),
        }
        .into());
    }
    if positive.is_empty() {
        return Err(FitError::Degenerate {
            model: "zero-inflated cost",
            reason: "positive stage collapsed: every weighted cost is zero".into(),
        }
        .into());
    }
    let x = design.matrix(dataset, &rows);
    check_rank("zero-inflated cost", &design, &x)?;
    let y: Vec<bool> = rows.iter().map(|&i| cost(i) == 0.0).collect();
    let w: Vec<f64> = rows.iter().map(|&i| weights.weights[i]).collect();
    let (coef, cov) = weighted_logistic(&x, &y, &w, "zero-inflated cost (zero stage)")?;
    let positive_part = fit_lognormal_rows(dataset, weights, design.clone(), &positive)?;
    Ok(ZeroInflatedCostFit {
        zero_design: design,
        zero_logit_coefficients: coef,
        zero_covariance: linalg::to_rows(&cov),
        positive_part,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, ColumnSpec, CostEffectivenessRecord, Schema};
    use crate::rng;
    use rand::Rng;

    fn dataset(n: usize, seed: u64, zero_prob: f64) -> Dataset {
        let mut r = rng::stream(seed, &[]);
        let records = (0..n)
            .map(|i| {
                let x: f64 = r.random::<f64>() * 2.0 - 1.0;
                let t: f64 = 1.0 + r.random::<f64>() * 5.0;
                let e: f64 = r.sample(StandardNormal);
                let zero = r.random::<f64>() < zero_prob;
                CostEffectivenessRecord {
                    treatment: Arm::from_index(i % 2).unwrap(),
                    covariate_x: vec![x],
                    confounders_l: vec![],
                    observed_time: t,
                    cost: Some(if zero {
                        0.0
                    } else {
                        (2.0 + 0.3 * x + 0.1 * t + 0.5 * e).exp()
                    }),
                    survival_censored: false,
                    cost_censored: false,
                }
            })
            .collect();
        Dataset::new(
            records,
            Schema::new(vec![ColumnSpec::numeric("x")], vec![]),
            f64::INFINITY,
        )
    }

    #[test]
    fn unit_weights_equal_ordinary_least_squares() {
        let d = dataset(300, 1, 0.0);
        let f = Formula::parse("A + x + Z").unwrap();
        let fit = fit_lognormal_cost(&d, &IpcwWeights::unweighted(&d), &f).unwrap();
        // independent route: normal equations through a QR solve
        let rows: Vec<usize> = (0..d.len()).collect();
        let x = fit.design.matrix(&d, &rows);
        let y = DVector::from_iterator(d.len(), d.records().iter().map(|r| r.cost.unwrap().ln()));
        let ols = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
        for (a, b) in fit.mean_coefficients.iter().zip(ols.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let resid = &y - &x * &ols;
        assert!((fit.sigma2 - resid.norm_squared() / (d.len() - 4) as f64).abs() < 1e-12);
    }

    #[test]
    fn lognormal_errors() {
        let d = dataset(50, 2, 0.0);
        let zero = IpcwWeights {
            weights: vec![0.0; d.len()],
            horizon_tau: f64::INFINITY,
        };
        assert!(matches!(
            fit_lognormal_cost(&d, &zero, &Formula::intercept_only()),
            Err(crate::Error::Fit(FitError::InsufficientData { .. }))
        ));
        let dz = dataset(50, 2, 0.3);
        let err = fit_lognormal_cost(&dz, &IpcwWeights::unweighted(&dz), &Formula::intercept_only()).unwrap_err();
        assert!(err.to_string().contains("zero-inflated"));
        let schema = Schema::new(vec![ColumnSpec::numeric("x"), ColumnSpec::numeric("x2")], vec![]);
        let dup = Dataset::new(
            d.records()
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.covariate_x.push(r.covariate_x[0]);
                    r
                })
                .collect(),
            schema,
            f64::INFINITY,
        );
        let err =
            fit_lognormal_cost(&dup, &IpcwWeights::unweighted(&dup), &Formula::parse("x + x2").unwrap()).unwrap_err();
        assert!(matches!(err, crate::Error::Fit(FitError::RankDeficient { .. })));
    }

    #[test]
    fn zero_inflated_recovers_zero_probability() {
        // P(Y = 0) = expit(−1)
        let p0 = 1.0 / (1.0 + 1f64.exp());
        let d = dataset(5000, 3, p0);
        let f = Formula::parse("x").unwrap();
        let fit = fit_zero_inflated_cost(&d, &IpcwWeights::unweighted(&d), &f).unwrap();
        let se = fit.zero_covariance[0][0].sqrt();
        assert!((fit.zero_logit_coefficients[0] + 1.0).abs() < 2.0 * se);
        assert!(fit.zero_logit_coefficients[1].abs() < 3.0 * fit.zero_covariance[1][1].sqrt());

        // equal non-unit weights give the unweighted fit
        let two = IpcwWeights {
            weights: vec![2.0; d.len()],
            horizon_tau: f64::INFINITY,
        };
        let fit2 = fit_zero_inflated_cost(&d, &two, &f).unwrap();
        for (a, b) in fit.zero_logit_coefficients.iter().zip(&fit2.zero_logit_coefficients) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in fit
            .positive_part
            .mean_coefficients
            .iter()
            .zip(&fit2.positive_part.mean_coefficients)
        {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_inflated_degenerate_stages() {
        let d = dataset(100, 4, 0.0);
        let err = fit_zero_inflated_cost(&d, &IpcwWeights::unweighted(&d), &Formula::intercept_only()).unwrap_err();
        assert!(err.to_string().contains("zero stage collapsed"));
        let d = dataset(100, 4, 1.0);
        let err = fit_zero_inflated_cost(&d, &IpcwWeights::unweighted(&d), &Formula::intercept_only()).unwrap_err();
        assert!(err.to_string().contains("positive stage collapsed"));
    }

    #[test]
    fn separation_is_detected() {
        let mut d = dataset(200, 5, 0.0);
        let records = d
            .records()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if r.covariate_x[0] < 0.0 {
                    r.cost = Some(0.0);
                }
                r
            })
            .collect();
        d = Dataset::new(records, d.schema().clone(), f64::INFINITY);
        let err = fit_zero_inflated_cost(&d, &IpcwWeights::unweighted(&d), &Formula::parse("x").unwrap()).unwrap_err();
        assert!(matches!(err, crate::Error::Fit(FitError::Separation { .. })), "{err}");
    }

    #[test]
    fn sampling_moments() {
        let design = Design::build(&Formula::intercept_only(), &Schema::default(), true, Allowed::ALL).unwrap();
        let fit = LogNormalCostFit::from_parts(design.clone(), vec![1.0], 0.25);
        let c = Covariates::x_only(&[]);
        let mut r = rng::stream(8, &[]);
        let n = 100_000;
        let mean = (0..n).map(|_| fit.sample(&c, &mut r)).sum::<f64>() / n as f64;
        let expected = (1.0f64 + 0.125).exp();
        assert!((mean - expected).abs() < 0.01 * expected, "{mean} vs {expected}");

        let always_zero = ZeroInflatedCostFit {
            zero_design: design,
            zero_logit_coefficients: vec![1e3],
            zero_covariance: vec![vec![0.0]],
            positive_part: fit.clone(),
        };
        assert!((0..100).all(|_| always_zero.sample(&c, &mut r) == 0.0));
        let a = fit.sample(&c, &mut rng::stream(4, &[2]));
        assert_eq!(a, fit.sample(&c, &mut rng::stream(4, &[2])));
    }
}
