use std::sync::OnceLock;

use super::{NbsEstimate, NbsRegressionFit};
use crate::normal;

const NODES: usize = 64;
/// Half-width of the integration range in `s = Φ⁻¹(ω)`; the normal mass
/// outside it is below 1e-18.
const S_MAX: f64 = 9.0;

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(NODES))
}

fn panel(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let (nodes, weights) = rule();
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    nodes
        .iter()
        .zip(weights)
        .map(|(&u, &w)| {
            let s = mid + half * u;
            w * normal::cdf(a + b * s) * normal::pdf(s)
        })
        .sum::<f64>()
        * half
}

/// `∫₀¹ Φ(a + b·Φ⁻¹(ω)) dω`, evaluated as `∫ Φ(a + b s) φ(s) ds` with the
/// range split where the inner argument crosses zero.
pub fn binormal_auc(a: f64, b: f64) -> f64 {
    let split = if b != 0.0 { (-a / b).clamp(-S_MAX, S_MAX) } else { 0.0 };
    let v = panel(a, b, -S_MAX, split) + panel(a, b, split, S_MAX);
    v.clamp(0.0, 1.0)
}

/// `θ̂(λ | x) = ∫₀¹ Φ(β₀ + β_X·x + β_ω·Φ⁻¹(ω)) dω` for raw covariates `x`.
pub fn integrate_nbs(fit: &NbsRegressionFit, x_profile: &[f64]) -> NbsEstimate {
    let (a, b) = fit.linear_parts(x_profile);
    NbsEstimate {
        theta: binormal_auc(a, b),
        lambda: fit.lambda,
        x_profile: x_profile.to_vec(),
        ci: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed(a: f64, b: f64) -> f64 {
        normal::cdf(a / (1.0 + b * b).sqrt())
    }

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(64);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        // exact up to degree 127
        let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(126)).sum();
        assert!((m - 2.0 / 127.0).abs() < 1e-13);
        let (x5, _) = gauss_legendre(5);
        assert!((x5[4] - 0.906_179_845_938_664).abs() < 1e-14);
    }

    #[test]
    fn closed_form_agreement() {
        assert_eq!(binormal_auc(0.0, 1.0), 0.5);
        assert!((binormal_auc(1.0, 1.0) - 0.760_250).abs() < 1e-6);
        for a in [-3.0, -1.3, 0.0, 0.7, 3.0] {
            assert!((binormal_auc(a, 0.0) - normal::cdf(a)).abs() < 1e-14);
            for b in [-3.0, -0.4, 0.2, 1.0, 3.0] {
                assert!((binormal_auc(a, b) - closed(a, b)).abs() < 1e-10, "{a} {b}");
            }
        }
    }

    #[test]
    fn brute_force_omega_space() {
        // midpoint rule directly on ω with 10⁶ panels
        let (a, b) = (0.4, 1.7);
        let n = 1_000_000;
        let s: f64 = (0..n)
            .map(|i| normal::cdf(a + b * normal::quantile((i as f64 + 0.5) / n as f64)))
            .sum::<f64>()
            / n as f64;
        assert!((s - binormal_auc(a, b)).abs() < 1e-5);
    }

    #[test]
    fn increasing_in_intercept() {
        let mut prev = 0.0;
        for i in 0..50 {
            let v = binormal_auc(-2.5 + 0.1 * i as f64, 0.8);
            assert!(v > prev);
            prev = v;
        }
    }
}
