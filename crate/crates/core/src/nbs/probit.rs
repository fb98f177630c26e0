use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{OmegaGrid, PlacementValueTable};
use crate::data::Schema;
use crate::error::{FitError, Result};
use crate::formula::{Allowed, Covariates, Design, Formula};
use crate::linalg;
use crate::normal;

/// Name of the coefficient on `Φ⁻¹(ω)`.
pub const OMEGA_TERM: &str = "qnorm(omega)";

const MAX_ITER: usize = 100;
/// Bound on the score averaged over placement rows.
const SCORE_TOL: f64 = 1e-8;
const COEF_BOUND: f64 = 25.0;

/// Probit model `P(U_ω = 1 | x) = Φ(β₀ + β_X·x + β_ω·Φ⁻¹(ω))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbsRegressionFit {
    pub design: Design,
    /// Intercept and `X` terms in design order, then the `Φ⁻¹(ω)` coefficient.
    pub coefficients: Vec<f64>,
    pub names: Vec<String>,
    pub grid: OmegaGrid,
    pub lambda: f64,
    pub iterations: usize,
    pub loglik: f64,
}

impl NbsRegressionFit {
    /// `(β₀ + β_X·x, β_ω)` at raw covariates `x`.
    pub fn linear_parts(&self, x: &[f64]) -> (f64, f64) {
        let p = self.design.ncols();
        let a = self.design.dot(&Covariates::x_only(x), &self.coefficients[..p]);
        (a, self.coefficients[p])
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }
}

/// `φ(η) / Φ(η)`, with the asymptotic expansion far in the lower tail.
fn inv_mills(eta: f64) -> f64 {
    if eta < -30.0 {
        let z2 = eta * eta;
        -eta / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2))
    } else {
        normal::pdf(eta) / normal::cdf(eta)
    }
}

fn log_cdf(eta: f64) -> f64 {
    if eta < -30.0 {
        normal::pdf(eta).ln() - (-eta).ln() + (1.0 - 1.0 / (eta * eta)).ln()
    } else {
        normal::cdf(eta).ln()
    }
}

struct Group {
    row: Vec<f64>,
    trials: f64,
    successes: f64,
}

fn loglik(groups: &[Group], beta: &DVector<f64>) -> f64 {
    groups
        .iter()
        .map(|g| {
            let eta: f64 = g.row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            g.successes * log_cdf(eta) + (g.trials - g.successes) * log_cdf(-eta)
        })
        .sum()
}

fn score_and_information(groups: &[Group], beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let p = beta.len();
    let mut g = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    for grp in groups {
        let eta: f64 = grp.row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        let l1 = inv_mills(eta);
        let l0 = inv_mills(-eta);
        let s = grp.successes * l1 - (grp.trials - grp.successes) * l0;
        let w = grp.trials * l1 * l0;
        for a in 0..p {
            g[a] += grp.row[a] * s;
            for b in 0..=a {
                info[(a, b)] += w * grp.row[a] * grp.row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    (g, info)
}

/// Binomial probit fit by Fisher scoring. Rows sharing a design row and grid
/// point are pooled into one binomial observation, which leaves the likelihood
/// unchanged.
pub fn fit_probit(table: &PlacementValueTable, formula: &Formula, schema: &Schema) -> Result<NbsRegressionFit> {
    let design = Design::build(formula, schema, true, Allowed::X_ONLY)?;
    if table.is_empty() {
        return Err(FitError::InsufficientData {
            model: "probit",
            reason: "empty placement table".into(),
        }
        .into());
    }
    let mean = table.mean_u();
    if mean == 0.0 || mean == 1.0 {
        return Err(FitError::Degenerate {
            model: "probit",
            reason: format!("placement values are all {}", mean as u8),
        }
        .into());
    }
    if table.x_dim() != schema.x.len() {
        return Err(FitError::InvalidInput(format!(
            "placement table has {} covariates, schema has {}",
            table.x_dim(),
            schema.x.len()
        ))
        .into());
    }

    let nw = table.grid.len();
    let probits: Vec<f64> = table.grid.points().iter().map(|&w| normal::quantile(w)).collect();
    let p = design.ncols() + 1;
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    let mut buf = vec![0.0; design.ncols()];
    for m in 0..table.units() {
        design.fill_row(&Covariates::x_only(table.x_row(m)), &mut buf);
        let key: Vec<u64> = buf.iter().map(|v| (v + 0.0).to_bits()).collect();
        let next = groups.len();
        let base = *index.entry(key).or_insert(next);
        if base == next {
            for &q in &probits {
                let mut row = buf.clone();
                row.push(q);
                groups.push(Group {
                    row,
                    trials: 0.0,
                    successes: 0.0,
                });
            }
        }
        for j in 0..nw {
            let g = &mut groups[base + j];
            g.trials += 1.0;
            g.successes += table.u(m, j) as u8 as f64;
        }
    }

    let x = DMatrix::from_fn(groups.len(), p, |i, j| groups[i].row[j]);
    let dep = linalg::dependent_columns(&x);
    let mut names = design.names();
    names.push(OMEGA_TERM.to_string());
    if !dep.is_empty() {
        return Err(FitError::RankDeficient {
            model: "probit",
            columns: dep.iter().map(|&j| names[j].clone()).collect(),
        }
        .into());
    }

    let total = table.len() as f64;
    let mut beta = DVector::zeros(p);
    beta[0] = normal::quantile(mean);
    let mut ll = loglik(&groups, &beta);
    let (mut g, mut info) = score_and_information(&groups, &beta);
    let mut iterations = 0;
    let mut trace = Vec::new();
    while g.amax() / total >= SCORE_TOL {
        if iterations == MAX_ITER {
            let saturated = groups.iter().any(|grp| {
                let eta: f64 = grp.row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                eta.abs() > 6.0 && (grp.successes == 0.0 || grp.successes == grp.trials)
            });
            if saturated {
                return Err(FitError::Separation {
                    model: "probit",
                    reason: "fitted probabilities saturate on groups with constant placement values".into(),
                }
                .into());
            }
            return Err(FitError::NoConvergence {
                model: "probit",
                iterations,
                gradient_norm: g.amax() / total,
                trace: trace.join(" "),
            }
            .into());
        }
        iterations += 1;
        let dir = linalg::solve_spd(&info, &g).ok_or_else(|| FitError::Separation {
            model: "probit",
            reason: "information matrix singular; placement values are separated by the covariates".into(),
        })?;
        let mut step = 1.0;
        loop {
            let cand = &beta + &dir * step;
            let cll = loglik(&groups, &cand);
            if cll >= ll - 1e-12 * ll.abs() || step < 1e-10 {
                beta = cand;
                ll = cll;
                break;
            }
            step *= 0.5;
        }
        (g, info) = score_and_information(&groups, &beta);
        trace.push(format!("[{iterations}: ll={ll:.6} |g|/n={:.2e}]", g.amax() / total));
        if beta.amax() > COEF_BOUND {
            return Err(FitError::Separation {
                model: "probit",
                reason: format!("coefficients diverging (|beta| = {:.1})", beta.amax()),
            }
            .into());
        }
    }
    // A finite maximum falls off when the coefficients are doubled; under
    // separation the likelihood keeps rising towards zero.
    if beta.amax() > 5.0 && loglik(&groups, &(&beta * 2.0)) > ll - 1e-3 {
        return Err(FitError::Separation {
            model: "probit",
            reason: format!(
                "likelihood flat at |beta| = {:.1}; placement values are separated by the covariates",
                beta.amax()
            ),
        }
        .into());
    }
    Ok(NbsRegressionFit {
        design,
        coefficients: beta.iter().copied().collect(),
        names,
        grid: table.grid.clone(),
        lambda: table.lambda,
        iterations,
        loglik: ll,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnSpec;
    use crate::rng;
    use rand::Rng;

    fn schema() -> Schema {
        Schema::new(vec![ColumnSpec::numeric("x")], vec![])
    }

    fn simulated_table(m: usize, beta: [f64; 3], seed: u64) -> PlacementValueTable {
        let grid = OmegaGrid::default();
        let probits: Vec<f64> = grid.points().iter().map(|&w| normal::quantile(w)).collect();
        let mut r = rng::stream(seed, &[]);
        let mut x = Vec::new();
        let mut u = Vec::new();
        for _ in 0..m {
            let xv = (r.random::<f64>() < 0.4) as u8 as f64;
            x.push(xv);
            for &q in &probits {
                let p = normal::cdf(beta[0] + beta[1] * xv + beta[2] * q);
                u.push(r.random::<f64>() < p);
            }
        }
        PlacementValueTable::from_parts(grid, 2.0, x, 1, u)
    }

    #[test]
    fn recovers_generating_coefficients() {
        let t = simulated_table(10_000, [0.3, 0.6, 0.9], 1);
        let fit = fit_probit(&t, &Formula::parse("x").unwrap(), &schema()).unwrap();
        for (b, truth) in fit.coefficients.iter().zip([0.3, 0.6, 0.9]) {
            assert!((b - truth).abs() < 0.05, "{:?}", fit.coefficients);
        }
        assert_eq!(fit.names, vec!["(Intercept)", "x", OMEGA_TERM]);
        assert_eq!(fit.coefficient("x"), Some(fit.coefficients[1]));
    }

    #[test]
    fn pooling_matches_row_level_likelihood() {
        // every unit distinct: groups are single rows, same optimum as pooled
        let t = simulated_table(300, [0.1, -0.4, 1.1], 2);
        let fit = fit_probit(&t, &Formula::parse("x").unwrap(), &schema()).unwrap();
        let rows: Vec<Group> = t
            .rows()
            .map(|r| Group {
                row: vec![1.0, r.covariate_x[0], r.probit_omega],
                trials: 1.0,
                successes: r.u as u8 as f64,
            })
            .collect();
        let beta = DVector::from_vec(fit.coefficients.clone());
        assert!((loglik(&rows, &beta) - fit.loglik).abs() < 1e-8 * fit.loglik.abs());
        let (g, _) = score_and_information(&rows, &beta);
        assert!(g.amax() / (t.len() as f64) < 1e-8);
    }

    #[test]
    fn constant_placements_are_degenerate() {
        let grid = OmegaGrid::new(3).unwrap();
        let t = PlacementValueTable::from_parts(grid, 1.0, vec![0.0, 1.0], 1, vec![true; 6]);
        let err = fit_probit(&t, &Formula::intercept_only(), &schema()).unwrap_err();
        assert!(matches!(err, crate::Error::Fit(FitError::Degenerate { .. })));
    }

    #[test]
    fn separated_covariate() {
        let grid = OmegaGrid::new(3).unwrap();
        let u: Vec<bool> = (0..40).flat_map(|m| [m % 2 == 0; 3]).collect();
        let x: Vec<f64> = (0..40).map(|m| (m % 2) as f64).collect();
        let t = PlacementValueTable::from_parts(grid, 1.0, x, 1, u);
        let err = fit_probit(&t, &Formula::parse("x").unwrap(), &schema()).unwrap_err();
        assert!(matches!(err, crate::Error::Fit(FitError::Separation { .. })), "{err}");
    }

    #[test]
    fn tail_helpers_are_continuous() {
        for eta in [-30.0 - 1e-9, -30.0 + 1e-9] {
            assert!((inv_mills(eta) - 30.033).abs() < 1e-2);
        }
        assert!((log_cdf(-30.0 - 1e-9) - log_cdf(-30.0 + 1e-9)).abs() < 1e-4);
    }
}
