//! Nonparametric bootstrap of the whole pipeline.
//!
//! Each replicate resamples subjects with replacement and reruns model
//! fitting, standardization and the probit regression. Replicate `b` draws
//! from its own random stream, so results do not depend on scheduling.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::normal;
use crate::pipeline::{estimate, PipelineEstimate, PipelineSpec, Profile};
use crate::rng;

const RESAMPLE_TAG: u64 = 0x424f_4f54;
/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// `estimate ± q`, `q` the `(1 − α)` quantile of `|replicate − estimate|`.
    #[default]
    Symmetric,
    /// `estimate ± z_{1−α/2} · SE`.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub method: CiMethod,
}

impl BootstrapConfig {
    pub fn new(n_replicates: usize, seed: u64) -> Self {
        Self {
            n_replicates,
            seed,
            alpha: 0.05,
            method: CiMethod::Symmetric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replicates < 2 {
            return Err(Error::Config("the bootstrap needs at least 2 replicates".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub config: BootstrapConfig,
    pub point: PipelineEstimate,
    /// `[replicate][λ][coefficient]` over successful replicates.
    pub replicate_coefficients: Vec<Vec<Vec<f64>>>,
    /// `[replicate][λ][profile]`.
    pub replicate_thetas: Vec<Vec<Vec<f64>>>,
    pub failures: Vec<ReplicateFailure>,
}

/// Bootstrap SD of a set of draws (denominator `B − 1`).
pub fn standard_deviation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `(1 − α)` order statistic of `|draw − estimate|`.
fn symmetric_halfwidth(estimate: f64, draws: &[f64], alpha: f64) -> f64 {
    let mut d: Vec<f64> = draws.iter().map(|v| (v - estimate).abs()).collect();
    d.sort_by(|a, b| a.total_cmp(b));
    let k = ((1.0 - alpha) * d.len() as f64 - 1e-9).ceil() as usize;
    d[k.clamp(1, d.len()) - 1]
}

pub fn confidence_interval(estimate: f64, draws: &[f64], alpha: f64, method: CiMethod) -> (f64, f64) {
    let h = match method {
        CiMethod::Symmetric => symmetric_halfwidth(estimate, draws, alpha),
        CiMethod::Normal => normal::quantile(1.0 - alpha / 2.0) * standard_deviation(draws),
    };
    (estimate - h, estimate + h)
}

impl BootstrapResult {
    pub fn successful(&self) -> usize {
        self.replicate_thetas.len()
    }

    pub fn theta_draws(&self, li: usize, pi: usize) -> Vec<f64> {
        self.replicate_thetas.iter().map(|r| r[li][pi]).collect()
    }

    pub fn coefficient_draws(&self, li: usize, ci: usize) -> Vec<f64> {
        self.replicate_coefficients.iter().map(|r| r[li][ci]).collect()
    }

    pub fn theta_se(&self, li: usize, pi: usize) -> f64 {
        standard_deviation(&self.theta_draws(li, pi))
    }

    pub fn coefficient_se(&self, li: usize, ci: usize) -> f64 {
        standard_deviation(&self.coefficient_draws(li, ci))
    }

    /// Interval for `θ(λ | x)`, clipped to `[0, 1]`.
    pub fn theta_ci(&self, li: usize, pi: usize) -> (f64, f64) {
        let (lo, hi) = confidence_interval(
            self.point.theta(li, pi),
            &self.theta_draws(li, pi),
            self.config.alpha,
            self.config.method,
        );
        (lo.max(0.0), hi.min(1.0))
    }

    /// `[λ][profile]` intervals.
    pub fn theta_cis(&self) -> Vec<Vec<(f64, f64)>> {
        (0..self.point.per_lambda.len())
            .map(|li| (0..self.point.profiles.len()).map(|pi| self.theta_ci(li, pi)).collect())
            .collect()
    }

    pub fn coefficient_ci(&self, li: usize, ci: usize) -> (f64, f64) {
        confidence_interval(
            self.point.per_lambda[li].fit.coefficients[ci],
            &self.coefficient_draws(li, ci),
            self.config.alpha,
            self.config.method,
        )
    }
}

pub fn bootstrap_pipeline(
    dataset: &Dataset,
    spec: &PipelineSpec,
    profiles: &[Profile],
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    config.validate()?;
    let point = estimate(dataset, spec, profiles)?;
    let n = dataset.len();
    let outcomes: Vec<Result<PipelineEstimate>> = (0..config.n_replicates)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(config.seed, &[RESAMPLE_TAG, b as u64]);
            let rows: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut r, 0..n)).collect();
            let resampled = dataset.resample(&rows);
            let replicate_spec = PipelineSpec {
                seed: rng::derive_seed(config.seed, &[RESAMPLE_TAG, b as u64, 1]),
                ..spec.clone()
            };
            estimate(&resampled, &replicate_spec, profiles)
        })
        .collect();
    let mut failures = Vec::new();
    let mut replicate_coefficients = Vec::new();
    let mut replicate_thetas = Vec::new();
    for (b, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(est) => {
                replicate_coefficients.push(est.per_lambda.iter().map(|l| l.fit.coefficients.clone()).collect());
                replicate_thetas.push(est.per_lambda.iter().map(|l| l.thetas.clone()).collect());
            }
            Err(e) => {
                warn!("bootstrap replicate {b} failed: {e}");
                failures.push(ReplicateFailure {
                    replicate: b,
                    message: e.to_string(),
                });
            }
        }
    }
    let failed = failures.len();
    if failed as f64 > MAX_FAILURE_FRACTION * config.n_replicates as f64 || replicate_thetas.len() < 2 {
        return Err(Error::BootstrapFailures {
            failed,
            total: config.n_replicates,
            first: failures.first().map(|f| f.message.clone()).unwrap_or_default(),
        });
    }
    Ok(BootstrapResult {
        config: *config,
        point,
        replicate_coefficients,
        replicate_thetas,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub lambda: f64,
    pub coefficients: Vec<String>,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub reject: bool,
    pub method: String,
}

/// Tests `H₀: β_j = 0` for the named coefficients at the `li`-th `λ`.
///
/// One coefficient: inversion of the bootstrap interval (`method`). Several:
/// Wald statistic with the bootstrap covariance, referred to `χ²` with as many
/// degrees of freedom as coefficients.
pub fn coefficient_test(result: &BootstrapResult, li: usize, names: &[&str]) -> Result<TestResult> {
    let fit = &result.point.per_lambda[li].fit;
    let idx: Vec<usize> = names
        .iter()
        .map(|name| {
            fit.names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("no coefficient named {name:?}; have {}", fit.names.join(", "))))
        })
        .collect::<Result<_>>()?;
    if idx.is_empty() {
        return Err(Error::Config("no coefficients to test".into()));
    }
    let alpha = result.config.alpha;
    let b = result.successful() as f64;
    if idx.len() == 1 {
        let est = fit.coefficients[idx[0]];
        let draws = result.coefficient_draws(li, idx[0]);
        let (statistic, p_value, method) = match result.config.method {
            CiMethod::Symmetric => {
                let exceed = draws.iter().filter(|v| (*v - est).abs() >= est.abs()).count() as f64;
                (est, exceed / b, "symmetric bootstrap interval")
            }
            CiMethod::Normal => {
                let se = standard_deviation(&draws);
                let z = if se > 0.0 {
                    est / se
                } else if est == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                (z, 2.0 * normal::sf(z.abs()), "normal approximation")
            }
        };
        return Ok(TestResult {
            lambda: fit.lambda,
            coefficients: names.iter().map(|s| s.to_string()).collect(),
            statistic,
            df: 1,
            p_value,
            reject: p_value <= alpha,
            method: method.into(),
        });
    }

    let q = idx.len();
    let est = DVector::from_iterator(q, idx.iter().map(|&i| fit.coefficients[i]));
    let draws: Vec<Vec<f64>> = idx.iter().map(|&i| result.coefficient_draws(li, i)).collect();
    let means: Vec<f64> = draws.iter().map(|d| d.iter().sum::<f64>() / b).collect();
    let cov = DMatrix::from_fn(q, q, |r, c| {
        draws[r]
            .iter()
            .zip(&draws[c])
            .map(|(x, y)| (x - means[r]) * (y - means[c]))
            .sum::<f64>()
            / (b - 1.0)
    });
    let singular = || Error::SingularCovariance(names.join(", "));
    if !linalg::dependent_columns(&cov).is_empty() {
        return Err(singular());
    }
    let inv = linalg::inverse_spd(&cov).ok_or_else(singular)?;
    let w = (est.transpose() * inv * &est)[(0, 0)];
    let chi = ChiSquared::new(q as f64).expect("positive degrees of freedom");
    let p_value = chi.sf(w);
    Ok(TestResult {
        lambda: fit.lambda,
        coefficients: names.iter().map(|s| s.to_string()).collect(),
        statistic: w,
        df: q,
        p_value,
        reject: p_value <= alpha,
        method: "Wald chi-square with bootstrap covariance".into(),
    })
}
