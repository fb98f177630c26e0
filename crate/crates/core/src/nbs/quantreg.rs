//! Linear quantile regression by exact check-loss minimization.
//!
//! The minimizer is a vertex of the linear program: `p` observations with
//! zero residual. The solver walks between adjacent vertices along the `2p`
//! edges leaving the current basis, choosing the steepest descent edge and
//! stepping to the minimum along it (a weighted median of the breakpoints).
//! Every step strictly lowers the objective, so it terminates.

use nalgebra::{DMatrix, DVector};

use crate::error::{FitError, Result};
use crate::linalg;

pub fn check_loss(r: f64, tau: f64) -> f64 {
    if r >= 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantRegFit {
    pub coefficients: Vec<f64>,
    /// Observations interpolated by the fit.
    pub basis: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

fn objective(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, tau: f64) -> f64 {
    (0..y.len())
        .map(|i| check_loss(y[i] - x.row(i).dot(&beta.transpose()), tau))
        .sum()
}

/// Greedy basis from the rows with the smallest least-squares residuals.
fn initial_basis(x: &DMatrix<f64>, y: &[f64]) -> Option<Vec<usize>> {
    let (n, p) = x.shape();
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * x;
    let beta = linalg::solve_spd(&xtx, &(x.transpose() * &yv))?;
    let resid = &yv - x * beta;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| resid[a].abs().total_cmp(&resid[b].abs()));
    // orthonormalised copies of the accepted rows
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(p);
    let mut basis = Vec::with_capacity(p);
    for i in order {
        let mut v = x.row(i).transpose();
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for u in &q {
            let c = u.dot(&v);
            v -= u * c;
        }
        let norm = v.norm();
        if norm > 1e-8 * norm0 {
            q.push(v / norm);
            basis.push(i);
            if basis.len() == p {
                return Some(basis);
            }
        }
    }
    None
}

/// Minimizes `Σ ρ_τ(y_i − x_iβ)` for `τ ∈ (0, 1)`. `start` is an optional
/// basis to begin from, typically the solution at a neighbouring `τ`.
pub fn quantile_regression(x: &DMatrix<f64>, y: &[f64], tau: f64, start: Option<&[usize]>) -> Result<QuantRegFit> {
    let (n, p) = x.shape();
    if !(tau > 0.0 && tau < 1.0) {
        return Err(FitError::InvalidInput(format!("quantile level {tau} outside (0, 1)")).into());
    }
    if n < p || p == 0 {
        return Err(FitError::InsufficientData {
            model: "quantile regression",
            reason: format!("{n} observations for {p} coefficients"),
        }
        .into());
    }
    let rank_error = || FitError::RankDeficient {
        model: "quantile regression",
        columns: vec!["(design)".into()],
    };
    let basis_lu = |b: &[usize]| {
        let xh = DMatrix::from_fn(p, p, |r, c| x[(b[r], c)]);
        let lu = xh.lu();
        lu.try_inverse()
    };
    let mut basis: Vec<usize> = match start {
        Some(b) if b.len() == p && basis_lu(b).is_some() => b.to_vec(),
        _ => initial_basis(x, y).ok_or_else(rank_error)?,
    };
    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let zero_tol = 1e-12 * (1.0 + y_scale);
    let max_iter = 50 * n + 100;
    let mut in_basis = vec![false; n];
    for &b in &basis {
        in_basis[b] = true;
    }
    let mut iterations = 0;
    loop {
        let inv = basis_lu(&basis).ok_or_else(rank_error)?;
        let yh = DVector::from_fn(p, |r, _| y[basis[r]]);
        let beta = &inv * yh;
        let z = x * &inv;
        let mut r: Vec<f64> = (0..n).map(|i| y[i] - x.row(i).dot(&beta.transpose())).collect();
        for &b in &basis {
            r[b] = 0.0;
        }

        // Slope along direction (k, s) at t = 0⁺ where residual i moves by −t·s·z_ik.
        let mut best: Option<(usize, f64, f64)> = None;
        for k in 0..p {
            for s in [1.0, -1.0] {
                let mut slope = 0.0;
                let mut scale = 0.0;
                for i in 0..n {
                    let g = s * z[(i, k)];
                    scale += g.abs();
                    if in_basis[i] {
                        if i == basis[k] {
                            // residual becomes −t·s
                            slope += if s < 0.0 { tau } else { 1.0 - tau };
                        }
                    } else if r[i].abs() <= zero_tol {
                        slope += if g < 0.0 { tau * -g } else { (1.0 - tau) * g };
                    } else {
                        slope -= g * if r[i] > 0.0 { tau } else { tau - 1.0 };
                    }
                }
                if slope < -1e-11 * (1.0 + scale) && best.is_none_or(|b| slope < b.2) {
                    best = Some((k, s, slope));
                }
            }
        }
        let Some((k, s, slope0)) = best else {
            return Ok(QuantRegFit {
                objective: objective(x, y, &beta, tau),
                coefficients: beta.iter().copied().collect(),
                basis,
                iterations,
            });
        };
        if iterations == max_iter {
            return Err(FitError::NoConvergence {
                model: "quantile regression",
                iterations,
                gradient_norm: -slope0,
                trace: String::new(),
            }
            .into());
        }
        iterations += 1;

        let mut breaks: Vec<(f64, usize, f64)> = (0..n)
            .filter(|&i| !in_basis[i] && r[i].abs() > zero_tol)
            .filter_map(|i| {
                let g = s * z[(i, k)];
                let t = r[i] / g;
                (g != 0.0 && t > 0.0).then_some((t, i, g.abs()))
            })
            .collect();
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut slope = slope0;
        let mut enter = None;
        for &(_, i, g) in &breaks {
            slope += g;
            if slope >= 0.0 {
                enter = Some(i);
                break;
            }
        }
        let Some(enter) = enter else {
            return Err(FitError::Degenerate {
                model: "quantile regression",
                reason: "check loss unbounded along an edge".into(),
            }
            .into());
        };
        in_basis[basis[k]] = false;
        in_basis[enter] = true;
        basis[k] = enter;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn brute_force(x: &DMatrix<f64>, y: &[f64], tau: f64) -> f64 {
        let n = y.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let xh = DMatrix::from_row_slice(2, 2, &[x[(i, 0)], x[(i, 1)], x[(j, 0)], x[(j, 1)]]);
                if let Some(inv) = xh.try_inverse() {
                    let beta = inv * DVector::from_column_slice(&[y[i], y[j]]);
                    best = best.min(objective(x, y, &beta, tau));
                }
            }
        }
        best
    }

    #[test]
    fn matches_vertex_enumeration() {
        let mut r = rng::stream(11, &[]);
        for case in 0..200 {
            let n = 3 + case % 12;
            let x = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { r.random::<f64>() * 4.0 });
            let y: Vec<f64> = (0..n)
                .map(|i| 1.0 + x[(i, 1)] + (r.random::<f64>() - 0.5) * 3.0)
                .collect();
            let tau = [0.1, 0.25, 0.5, 0.9][case % 4];
            let fit = quantile_regression(&x, &y, tau, None).unwrap();
            let bf = brute_force(&x, &y, tau);
            assert!(
                (fit.objective - bf).abs() < 1e-9 * (1.0 + bf),
                "case {case}: {} vs {bf}",
                fit.objective
            );
        }
    }

    #[test]
    fn intercept_only_is_order_statistic() {
        let y = [5.0, 1.0, 4.0, 2.0, 3.0];
        let x = DMatrix::from_element(5, 1, 1.0);
        let fit = quantile_regression(&x, &y, 0.5, None).unwrap();
        assert_eq!(fit.coefficients, vec![3.0]);
        let fit = quantile_regression(&x, &y, 0.3, Some(&fit.basis)).unwrap();
        assert_eq!(fit.coefficients, vec![2.0]);
    }

    #[test]
    fn median_slope_under_symmetric_noise() {
        // INB = 5 + 0·x + e with e ~ N(0, 1); asymptotic variance of the median
        // fit is τ(1−τ)/f(0)² (X'X)⁻¹ with f(0) = 1/√(2π).
        let mut r = rng::stream(12, &[]);
        let n = 10_000;
        let x = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { r.random::<f64>() });
        let y: Vec<f64> = (0..n)
            .map(|_| 5.0 + r.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let fit = quantile_regression(&x, &y, 0.5, None).unwrap();
        let f0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let cov = (x.transpose() * &x).try_inverse().unwrap() * (0.25 / (f0 * f0));
        assert!(fit.coefficients[1].abs() < 2.0 * cov[(1, 1)].sqrt());
        assert!((fit.coefficients[0] - 5.0).abs() < 3.0 * cov[(0, 0)].sqrt());
    }

    #[test]
    fn collinear_design_is_rejected() {
        let x = DMatrix::from_fn(6, 2, |i, _| i as f64);
        assert!(quantile_regression(&x, &[1.0; 6], 0.5, None).is_err());
    }
}
