//! Monte Carlo standardization over the empirical distribution of `(L, X)`.
//!
//! Each arm draws its own `M` baseline rows with replacement, samples
//! `z̃ ~ f̂(Z | a, x̃, l̃)` and then `ỹ ~ f̂(Y | a, x̃, l̃, z̃)`. Draws are produced in
//! fixed-size chunks, each with a random stream keyed by `(seed, arm, chunk)`,
//! so the output does not depend on the number of worker threads.
//!
//! The `(z̃, ỹ)` draws do not depend on `λ`; [`ArmDraws::pseudo_population`]
//! turns one set of draws into net benefits at any willingness-to-pay.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::formula::Covariates;
use crate::rng;
use crate::survival::WeibullFit;

pub const DEFAULT_M: usize = 10_000;
const CHUNK: usize = 1024;
const STREAM_TAG: u64 = 0x5354_414e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StandardizationConfig {
    pub m_draws: usize,
    pub seed: u64,
}

impl StandardizationConfig {
    pub fn new(m_draws: usize, seed: u64) -> Result<Self> {
        let c = Self { m_draws, seed };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_draws == 0 {
            return Err(Error::Config("M (standardization draws) must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for StandardizationConfig {
    fn default() -> Self {
        Self {
            m_draws: DEFAULT_M,
            seed: 0,
        }
    }
}

/// `m` row indices drawn uniformly with replacement; each index selects a
/// record's joint `(L, X)`.
pub fn draw_baseline<R: Rng + ?Sized>(dataset: &Dataset, m: usize, rng: &mut R) -> Vec<usize> {
    assert!(!dataset.is_empty(), "draw_baseline on an empty dataset");
    (0..m).map(|_| rng.random_range(0..dataset.len())).collect()
}

/// Simulated outcomes for one arm, before conversion to net benefits.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmDraws {
    pub arm: Arm,
    pub rows: Vec<usize>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    x: Vec<f64>,
    x_dim: usize,
}

impl ArmDraws {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn pseudo_population(&self, lambda: f64) -> Result<PseudoPopulation> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!(
                "willingness-to-pay must be positive, got {lambda}"
            )));
        }
        Ok(PseudoPopulation {
            arm: self.arm,
            lambda,
            inb: self.z.iter().zip(&self.y).map(|(z, y)| lambda * z - y).collect(),
            x: self.x.clone(),
            x_dim: self.x_dim,
        })
    }
}

/// Draws `(z̃, ỹ)` for one arm. Sampled times are capped at the dataset horizon.
pub fn draw_arm(
    dataset: &Dataset,
    survival: &WeibullFit,
    cost: &CostModel,
    arm: Arm,
    config: &StandardizationConfig,
) -> Result<ArmDraws> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("standardization needs a non-empty dataset".into()));
    }
    let m = config.m_draws;
    let tau = dataset.horizon_tau();
    let records = dataset.records();
    let chunks: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = (0..m.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(m - c * CHUNK);
            let mut r = rng::stream(config.seed, &[STREAM_TAG, arm.index() as u64, c as u64]);
            let rows = draw_baseline(dataset, len, &mut r);
            let mut z = Vec::with_capacity(len);
            let mut y = Vec::with_capacity(len);
            for &row in &rows {
                let rec = &records[row];
                let mut cov = Covariates {
                    treatment: arm.indicator(),
                    x: &rec.covariate_x,
                    l: &rec.confounders_l,
                    time: 0.0,
                };
                let t = survival.sample(&cov, &mut r).min(tau);
                cov.time = t;
                z.push(t);
                y.push(cost.sample(&cov, &mut r));
            }
            (rows, z, y)
        })
        .collect();
    let x_dim = dataset.schema().x.len();
    let mut out = ArmDraws {
        arm,
        rows: Vec::with_capacity(m),
        z: Vec::with_capacity(m),
        y: Vec::with_capacity(m),
        x: Vec::with_capacity(m * x_dim),
        x_dim,
    };
    for (rows, z, y) in chunks {
        for &row in &rows {
            out.x.extend_from_slice(&records[row].covariate_x);
        }
        out.rows.extend(rows);
        out.z.extend(z);
        out.y.extend(y);
    }
    if let Some(i) = out
        .z
        .iter()
        .zip(&out.y)
        .position(|(z, y)| !z.is_finite() || !y.is_finite())
    {
        return Err(Error::Config(format!(
            "non-finite draw at index {i} for arm {arm}: check the fitted models"
        )));
    }
    Ok(out)
}

/// Net benefits `B̃_{a,m}(λ) = λz̃_m − ỹ_m` paired with `x̃_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPopulation {
    pub arm: Arm,
    pub lambda: f64,
    pub inb: Vec<f64>,
    x: Vec<f64>,
    x_dim: usize,
}

impl PseudoPopulation {
    /// From net benefits and row-major `x̃` values.
    pub fn from_parts(arm: Arm, lambda: f64, inb: Vec<f64>, x: Vec<f64>, x_dim: usize) -> Self {
        assert_eq!(inb.len() * x_dim, x.len(), "x values do not match the draws");
        Self {
            arm,
            lambda,
            inb,
            x,
            x_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.inb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inb.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn x_row(&self, m: usize) -> &[f64] {
        &self.x[m * self.x_dim..(m + 1) * self.x_dim]
    }

    /// CSV with columns `arm, inb, <x names>`.
    pub fn write_csv<W: Write>(&self, x_names: &[String], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["arm".to_string(), "inb".to_string()];
        header.extend(x_names.iter().cloned());
        w.write_record(&header).map_err(crate::data::DataError::from)?;
        for m in 0..self.len() {
            let mut row = vec![self.arm.to_string(), self.inb[m].to_string()];
            row.extend(self.x_row(m).iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(crate::data::DataError::from)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn generate_pseudo_population(
    dataset: &Dataset,
    survival: &WeibullFit,
    cost: &CostModel,
    arm: Arm,
    config: &StandardizationConfig,
    lambda: f64,
) -> Result<PseudoPopulation> {
    draw_arm(dataset, survival, cost, arm, config)?.pseudo_population(lambda)
}
