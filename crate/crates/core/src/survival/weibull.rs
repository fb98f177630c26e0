//! Weibull regression for right-censored survival times.
//!
//! `S(t | x) = exp(−(t / s(x))^k)` with scale `s(x) = exp(x'β)`. Fitted by
//! damped Newton iterations on `(β, log k)` with step halving.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FitError, Result};
use crate::formula::{Allowed, Covariates, Design, Formula};
use crate::linalg;

const MAX_ITER: usize = 200;
const GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullFit {
    pub design: Design,
    pub shape_k: f64,
    /// Coefficients of the log scale, one per design column.
    pub scale_coefficients: Vec<f64>,
    /// Inverse observed information over `(β..., log k)`.
    pub covariance: Vec<Vec<f64>>,
    pub loglik: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl WeibullFit {
    /// A fixed model with known parameters (no covariance).
    pub fn from_parts(design: Design, shape_k: f64, scale_coefficients: Vec<f64>) -> Self {
        let p = scale_coefficients.len() + 1;
        Self {
            design,
            shape_k,
            scale_coefficients,
            covariance: vec![vec![0.0; p]; p],
            loglik: f64::NAN,
            iterations: 0,
            gradient_norm: 0.0,
        }
    }

    pub fn scale(&self, c: &Covariates<'_>) -> f64 {
        self.design.dot(c, &self.scale_coefficients).exp()
    }

    pub fn survival(&self, t: f64, c: &Covariates<'_>) -> f64 {
        (-(t / self.scale(c)).powf(self.shape_k)).exp()
    }

    /// One survival time drawn by inversion: `s · E^{1/k}` with `E ~ Exp(1)`.
    pub fn sample<R: Rng + ?Sized>(&self, c: &Covariates<'_>, rng: &mut R) -> f64 {
        let e: f64 = rng.sample(Exp1);
        self.scale(c) * e.powf(1.0 / self.shape_k)
    }

    /// Standard errors of the scale coefficients.
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.scale_coefficients.len())
            .map(|i| self.covariance[i][i].max(0.0).sqrt())
            .collect()
    }

    /// Delta-method standard error of `k`.
    pub fn shape_se(&self) -> f64 {
        let p = self.scale_coefficients.len();
        self.shape_k * self.covariance[p][p].max(0.0).sqrt()
    }
}

/// Log-likelihood, gradient and Hessian at `params = (β, log k)`.
pub(crate) fn loglik_derivatives(
    x: &DMatrix<f64>,
    log_t: &[f64],
    events: &[bool],
    params: &DVector<f64>,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = x.ncols();
    let rho = params[p];
    let k = rho.exp();
    let beta = params.rows(0, p);
    let mut ll = 0.0;
    let mut g = DVector::zeros(p + 1);
    let mut h = DMatrix::zeros(p + 1, p + 1);
    for i in 0..x.nrows() {
        let xi = x.row(i);
        let mu = xi.dot(&beta.transpose());
        let z = k * (log_t[i] - mu);
        let ez = z.exp();
        let d = if events[i] { 1.0 } else { 0.0 };
        ll += d * (rho - log_t[i] + z) - ez;
        let r = d - ez;
        // dℓ/dβ = −k r x ; dℓ/dρ = d + r z
        for a in 0..p {
            g[a] -= k * r * xi[a];
        }
        g[p] += d + r * z;
        let cross = k * (ez * z + ez - d);
        let kk = ez * k * k;
        for a in 0..p {
            for b in 0..=a {
                h[(a, b)] -= kk * xi[a] * xi[b];
            }
            h[(p, a)] += cross * xi[a];
        }
        h[(p, p)] += z * (d - ez - ez * z);
    }
    for a in 0..=p {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
    (ll, g, h)
}

fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> DVector<f64> {
    let neg_h = -h;
    if let Some(d) = linalg::solve_spd(&neg_h, g) {
        return d;
    }
    let scale = neg_h.diagonal().abs().max().max(1.0);
    let mut ridge = 1e-8 * scale;
    loop {
        let damped = &neg_h + DMatrix::identity(g.len(), g.len()) * ridge;
        if let Some(d) = linalg::solve_spd(&damped, g) {
            return d;
        }
        ridge *= 10.0;
    }
}

/// Right-censored Weibull maximum likelihood.
pub fn fit_weibull(dataset: &Dataset, formula: &Formula) -> Result<WeibullFit> {
    let design = Design::build(formula, dataset.schema(), true, Allowed::NO_TIME)?;
    let rows: Vec<usize> = (0..dataset.len()).collect();
    let x = design.matrix(dataset, &rows);
    let mut log_t = Vec::with_capacity(rows.len());
    let mut events = Vec::with_capacity(rows.len());
    for r in dataset.records() {
        if !(r.observed_time > 0.0) {
            return Err(FitError::InvalidInput(format!(
                "Weibull regression needs positive times, got {}",
                r.observed_time
            ))
            .into());
        }
        log_t.push(r.observed_time.ln());
        events.push(r.event_observed());
    }
    let n_events = events.iter().filter(|&&e| e).count();
    if n_events < 2 {
        return Err(FitError::InsufficientData {
            model: "weibull",
            reason: format!("{n_events} uncensored events, need at least 2"),
        }
        .into());
    }
    let dep = linalg::dependent_columns(&x);
    if !dep.is_empty() {
        return Err(FitError::RankDeficient {
            model: "weibull",
            columns: dep.iter().map(|&j| design.columns[j].name.clone()).collect(),
        }
        .into());
    }

    let p = x.ncols();
    let mut params = start_values(&x, &log_t, &events);
    let (mut ll, mut g, mut h) = loglik_derivatives(&x, &log_t, &events, &params);
    let mut trace = Vec::new();
    let mut iterations = 0;
    while g.amax() >= GRAD_TOL {
        if iterations == MAX_ITER {
            return Err(FitError::NoConvergence {
                model: "weibull",
                iterations,
                gradient_norm: g.amax(),
                trace: trace.join(" "),
            }
            .into());
        }
        iterations += 1;
        let dir = newton_direction(&g, &h);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &params + &dir * step;
            let (cll, cg, ch) = loglik_derivatives(&x, &log_t, &events, &cand);
            if cll.is_finite() && cll >= ll - 1e-12 * ll.abs().max(1.0) {
                params = cand;
                ll = cll;
                g = cg;
                h = ch;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        trace.push(format!("[{iterations}: ll={ll:.6} |g|={:.2e} step={step}]", g.amax()));
        if !accepted {
            return Err(FitError::NoConvergence {
                model: "weibull",
                iterations,
                gradient_norm: g.amax(),
                trace: trace.join(" "),
            }
            .into());
        }
    }
    let info = -&h;
    let cov = linalg::inverse_spd(&info).ok_or_else(|| FitError::RankDeficient {
        model: "weibull",
        columns: vec!["(observed information not positive definite)".into()],
    })?;
    Ok(WeibullFit {
        design,
        shape_k: params[p].exp(),
        scale_coefficients: params.rows(0, p).iter().copied().collect(),
        covariance: linalg::to_rows(&cov),
        loglik: ll,
        iterations,
        gradient_norm: g.amax(),
    })
}

/// Least squares on log time, shifted and scaled by the extreme-value moments.
fn start_values(x: &DMatrix<f64>, log_t: &[f64], events: &[bool]) -> DVector<f64> {
    let p = x.ncols();
    let y = DVector::from_column_slice(log_t);
    let xtx = x.transpose() * x;
    let beta = linalg::solve_spd(&xtx, &(x.transpose() * &y)).unwrap_or_else(|| DVector::zeros(p));
    let resid = &y - x * &beta;
    let n = log_t.len() as f64;
    let sd = (resid.norm_squared() / n).sqrt().max(1e-3);
    let sigma = sd * 6f64.sqrt() / std::f64::consts::PI;
    let mut params = DVector::zeros(p + 1);
    params.rows_mut(0, p).copy_from(&beta);
    // E[log T] = μ − γ σ for the minimum extreme-value error.
    params[0] += 0.577_215_664_901_532_9 * sigma;
    let censored_share = events.iter().filter(|&&e| !e).count() as f64 / n;
    params[0] += censored_share * sigma;
    params[p] = (1.0 / sigma).ln();
    params
}
