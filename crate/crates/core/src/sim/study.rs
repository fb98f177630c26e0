use std::fmt::Write as _;
use std::io::Write;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate_scenario_data, true_thetas};
use super::ScenarioConfig;
use crate::data::DataError;
use crate::error::{Error, Result};
use crate::inference::{bootstrap_pipeline, coefficient_test, BootstrapConfig, CiMethod, MAX_FAILURE_FRACTION};
use crate::pipeline::{estimate, Profile};
use crate::rng;

const SIM_TAG: u64 = 0x5349_4d00;
const ORACLE_SEED_TAG: u64 = 0x4f52_0000;
const X_VALUES: [f64; 2] = [0.0, 1.0];
/// Coefficient tested for "no effect of X".
const TESTED: &str = "x";

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub lambda: f64,
    pub x: f64,
    pub true_theta: f64,
    pub mean_estimate: f64,
    pub mean_bootstrap_se: Option<f64>,
    pub empirical_se: f64,
    /// Test of the `x` coefficient at this `λ`; reported on the `x = 0` row only.
    pub rejection_rate: Option<f64>,
    pub rejection_rate_normal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: ScenarioConfig,
    pub successful: usize,
    pub failures: Vec<String>,
    pub rows: Vec<ReportRow>,
}

/// Per-replication results: `[λ][x]` estimates and SEs, `[λ]` decisions.
struct Replication {
    thetas: Vec<Vec<f64>>,
    ses: Option<Vec<Vec<f64>>>,
    reject: Option<Vec<(bool, bool)>>,
}

fn profiles() -> Vec<Profile> {
    X_VALUES
        .iter()
        .map(|&x| Profile {
            label: format!("x={x}"),
            x: vec![x],
        })
        .collect()
}

fn replicate(config: &ScenarioConfig, s: usize) -> Result<Replication> {
    let data = generate_scenario_data(config, &mut rng::stream(config.seed, &[SIM_TAG, s as u64]));
    let spec = config.analysis_spec(rng::derive_seed(config.seed, &[SIM_TAG, s as u64, 1]));
    let profiles = profiles();
    if config.n_boot < 2 {
        let est = estimate(&data, &spec, &profiles)?;
        return Ok(Replication {
            thetas: est.per_lambda.iter().map(|l| l.thetas.clone()).collect(),
            ses: None,
            reject: None,
        });
    }
    let boot = BootstrapConfig::new(config.n_boot, rng::derive_seed(config.seed, &[SIM_TAG, s as u64, 2]));
    let mut result = bootstrap_pipeline(&data, &spec, &profiles, &boot)?;
    let nl = config.lambdas.len();
    let thetas = (0..nl).map(|li| result.point.per_lambda[li].thetas.clone()).collect();
    let ses = (0..nl)
        .map(|li| (0..X_VALUES.len()).map(|pi| result.theta_se(li, pi)).collect())
        .collect();
    let mut reject = Vec::with_capacity(nl);
    for li in 0..nl {
        result.config.method = CiMethod::Symmetric;
        let sym = coefficient_test(&result, li, &[TESTED])?.reject;
        result.config.method = CiMethod::Normal;
        let norm = coefficient_test(&result, li, &[TESTED])?.reject;
        reject.push((sym, norm));
    }
    Ok(Replication {
        thetas,
        ses: Some(ses),
        reject: Some(reject),
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Generates `n_sims` datasets, runs the full analysis with bootstrap on each
/// and summarises against oracle truth.
pub fn run_study(config: &ScenarioConfig) -> Result<SimulationReport> {
    config.validate()?;
    let truth = true_thetas(
        config,
        &config.lambdas,
        &X_VALUES,
        config.n_oracle,
        rng::derive_seed(config.seed, &[ORACLE_SEED_TAG]),
    )?;
    let outcomes: Vec<Result<Replication>> = (0..config.n_sims)
        .into_par_iter()
        .map(|s| {
            let r = replicate(config, s);
            if (s + 1) % 10 == 0 {
                info!("replication {} of {}", s + 1, config.n_sims);
            }
            r
        })
        .collect();
    let mut reps = Vec::new();
    let mut failures = Vec::new();
    for (s, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => reps.push(r),
            Err(e) => {
                warn!("replication {s} failed: {e}");
                failures.push(format!("replication {s}: {e}"));
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * config.n_sims as f64 || reps.is_empty() {
        return Err(Error::StudyFailures {
            failed: failures.len(),
            total: config.n_sims,
            first: failures.first().cloned().unwrap_or_default(),
        });
    }
    let mut rows = Vec::new();
    for (li, &lambda) in config.lambdas.iter().enumerate() {
        for (xi, &x) in X_VALUES.iter().enumerate() {
            let est: Vec<f64> = reps.iter().map(|r| r.thetas[li][xi]).collect();
            let m = mean(est.iter().copied());
            let empirical_se = if est.len() > 1 {
                (est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            let boot = reps.iter().all(|r| r.ses.is_some());
            let rate = |normal: bool| {
                mean(reps.iter().map(|r| {
                    let (s, n) = r.reject.as_ref().unwrap()[li];
                    f64::from(u8::from(if normal { n } else { s }))
                }))
            };
            rows.push(ReportRow {
                lambda,
                x,
                true_theta: truth[li][xi],
                mean_estimate: m,
                mean_bootstrap_se: boot.then(|| mean(reps.iter().map(|r| r.ses.as_ref().unwrap()[li][xi]))),
                empirical_se,
                rejection_rate: (boot && xi == 0).then(|| rate(false)),
                rejection_rate_normal: (boot && xi == 0).then(|| rate(true)),
            });
        }
    }
    Ok(SimulationReport {
        config: config.clone(),
        successful: reps.len(),
        failures,
        rows,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
}

impl SimulationReport {
    pub fn row(&self, lambda: f64, x: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.lambda == lambda && r.x == x)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_reports_csv(std::slice::from_ref(self), writer)
    }

    pub fn to_text(&self) -> String {
        reports_to_text(std::slice::from_ref(self))
    }
}

/// One CSV for several scenarios, one line per `(scenario, λ, x)`.
pub fn write_reports_csv<W: Write>(reports: &[SimulationReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "effect",
        "confounding",
        "censoring",
        "n",
        "lambda",
        "x",
        "true_theta",
        "mean_estimate",
        "mean_bootstrap_se",
        "empirical_se",
        "rejection_rate",
        "rejection_rate_normal",
        "successful",
    ])
    .map_err(DataError::from)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for rep in reports {
        let c = &rep.config;
        for r in &rep.rows {
            w.write_record([
                c.effect_present.to_string(),
                c.confounding.label(),
                c.censoring_target.to_string(),
                c.n.to_string(),
                r.lambda.to_string(),
                r.x.to_string(),
                r.true_theta.to_string(),
                r.mean_estimate.to_string(),
                opt(r.mean_bootstrap_se),
                r.empirical_se.to_string(),
                opt(r.rejection_rate),
                opt(r.rejection_rate_normal),
                rep.successful.to_string(),
            ])
            .map_err(DataError::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width table with the columns of the CSV.
pub fn reports_to_text(reports: &[SimulationReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>5} {:>6} {:>6} {:>3} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8}",
        "conf", "cens", "n", "lambda", "x", "theta", "est", "se_hat", "ese", "reject", "rej_norm"
    );
    for rep in reports {
        let c = &rep.config;
        for r in &rep.rows {
            let _ = writeln!(
                s,
                "{:<14} {:>4.0}% {:>6} {:>6} {:>3} {:>7.3} {:>7.3} {:>7} {:>7.3} {:>7} {:>8}",
                c.confounding.label(),
                c.censoring_target * 100.0,
                c.n,
                r.lambda,
                r.x,
                r.true_theta,
                r.mean_estimate,
                cell(r.mean_bootstrap_se),
                r.empirical_se,
                cell(r.rejection_rate),
                cell(r.rejection_rate_normal)
            );
        }
    }
    for rep in reports {
        let c = &rep.config;
        let _ = writeln!(
            s,
            "{} / {:.0}% / n={}: {} of {} replications succeeded",
            c.confounding.label(),
            c.censoring_target * 100.0,
            c.n,
            rep.successful,
            c.n_sims
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_replication_smoke() {
        let mut c = ScenarioConfig::new(true, 300, 0.1, 11).unwrap();
        c.n_sims = 1;
        c.n_boot = 2;
        c.m_draws = 500;
        c.n_oracle = 5000;
        let r = run_study(&c).unwrap();
        assert_eq!(r.successful, 1);
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.rows[0].empirical_se, 0.0);
        assert!(r.rows[0].rejection_rate.is_some() && r.rows[1].rejection_rate.is_none());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
        assert!(r.to_text().contains("1 of 1 replications"));
    }
}
