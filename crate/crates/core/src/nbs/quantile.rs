use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::quantreg::quantile_regression;
use super::OmegaGrid;
use crate::error::{Error, FitError, Result};
use crate::formula::{Covariates, Design};
use crate::standardization::PseudoPopulation;

/// Above this many distinct design rows `Auto` switches to regression.
pub const MAX_EMPIRICAL_LEVELS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileKind {
    EmpiricalByLevel,
    LinearQuantileRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMode {
    /// Empirical when `X` takes few distinct values, regression otherwise.
    #[default]
    Auto,
    Empirical,
    Regression,
}

/// Survivor quantile `Ŝ⁻¹(ω)`: the `(1 − ω)` quantile of the empirical CDF,
/// taken as the lower order statistic `v₍⌈n(1−ω)⌉₎`. `sorted` is ascending.
pub fn survivor_quantile(sorted: &[f64], omega: f64) -> f64 {
    let n = sorted.len();
    let k = ((n as f64 * (1.0 - omega)) - 1e-9).ceil() as usize;
    sorted[k.clamp(1, n) - 1]
}

fn key(row: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 share a level
    row.iter().map(|v| (v + 0.0).to_bits()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Level {
    row: Vec<f64>,
    quantiles: Vec<f64>,
}

/// Control survivor quantiles `Ŝ⁻¹_{0|X}(ω)` on the `ω` grid. Quantiles
/// returned by [`QuantileEstimator::quantiles_at`] are non-increasing in `ω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimator {
    pub kind: QuantileKind,
    pub grid: OmegaGrid,
    pub design: Design,
    levels: Vec<Level>,
    /// Regression coefficients, one vector per grid point.
    pub coefficients: Vec<Vec<f64>>,
    #[serde(skip)]
    index: HashMap<Vec<u64>, usize>,
}

impl QuantileEstimator {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Survivor quantiles at each grid point for the design row `row`.
    pub fn quantiles_for_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            QuantileKind::EmpiricalByLevel => {
                let i = self.level_of(row).ok_or_else(|| {
                    Error::UncoveredProfile(format!(
                        "no control pseudo-units with design row {row:?} ({})",
                        self.design.names().join(", ")
                    ))
                })?;
                Ok(self.levels[i].quantiles.clone())
            }
            QuantileKind::LinearQuantileRegression => {
                let mut q: Vec<f64> = self
                    .coefficients
                    .iter()
                    .map(|b| b.iter().zip(row).map(|(b, x)| b * x).sum())
                    .collect();
                // rearrangement: survivor quantiles fall as ω rises
                q.sort_by(|a, b| b.total_cmp(a));
                Ok(q)
            }
        }
    }

    pub fn quantiles_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.quantiles_for_row(&self.design.row(&Covariates::x_only(x)))
    }

    pub(crate) fn level_of(&self, row: &[f64]) -> Option<usize> {
        if self.index.is_empty() && !self.levels.is_empty() {
            return self.levels.iter().position(|l| key(&l.row) == key(row));
        }
        self.index.get(&key(row)).copied()
    }
}

pub fn estimate_quantiles(
    control: &PseudoPopulation,
    grid: &OmegaGrid,
    design: &Design,
    mode: QuantileMode,
) -> Result<QuantileEstimator> {
    if control.is_empty() {
        return Err(Error::Config("control pseudo-population is empty".into()));
    }
    let p = design.ncols();
    let mut rows = Vec::with_capacity(control.len() * p);
    let mut buf = vec![0.0; p];
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut level_rows: Vec<Vec<f64>> = Vec::new();
    let mut members: Vec<Vec<f64>> = Vec::new();
    for m in 0..control.len() {
        design.fill_row(&Covariates::x_only(control.x_row(m)), &mut buf);
        rows.extend_from_slice(&buf);
        if level_rows.len() <= MAX_EMPIRICAL_LEVELS || mode == QuantileMode::Empirical {
            let next = level_rows.len();
            let i = *index.entry(key(&buf)).or_insert(next);
            if i == next {
                level_rows.push(buf.clone());
                members.push(Vec::new());
            }
            members[i].push(control.inb[m]);
        }
    }
    let empirical = match mode {
        QuantileMode::Empirical => true,
        QuantileMode::Regression => false,
        QuantileMode::Auto => level_rows.len() <= MAX_EMPIRICAL_LEVELS,
    };
    let omegas = grid.points();
    if empirical {
        let levels = level_rows
            .into_iter()
            .zip(members)
            .map(|(row, mut v)| {
                v.sort_by(|a, b| a.total_cmp(b));
                let quantiles = omegas.iter().map(|&w| survivor_quantile(&v, w)).collect();
                Level { row, quantiles }
            })
            .collect();
        return Ok(QuantileEstimator {
            kind: QuantileKind::EmpiricalByLevel,
            grid: grid.clone(),
            design: design.clone(),
            levels,
            coefficients: Vec::new(),
            index,
        });
    }

    let x = DMatrix::from_row_slice(control.len(), p, &rows);
    let dep = crate::linalg::dependent_columns(&x);
    if !dep.is_empty() {
        return Err(FitError::RankDeficient {
            model: "quantile regression",
            columns: dep.iter().map(|&j| design.columns[j].name.clone()).collect(),
        }
        .into());
    }
    let mut coefficients = Vec::with_capacity(omegas.len());
    let mut basis: Option<Vec<usize>> = None;
    for &w in &omegas {
        let fit = quantile_regression(&x, &control.inb, 1.0 - w, basis.as_deref())?;
        basis = Some(fit.basis);
        coefficients.push(fit.coefficients);
    }
    Ok(QuantileEstimator {
        kind: QuantileKind::LinearQuantileRegression,
        grid: grid.clone(),
        design: design.clone(),
        levels: Vec::new(),
        coefficients,
        index: HashMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, ColumnSpec, Schema};
    use crate::formula::{Allowed, Formula};
    use crate::rng;
    use rand::Rng;

    fn design(f: &str) -> Design {
        let schema = Schema::new(vec![ColumnSpec::numeric("x")], vec![]);
        Design::build(&Formula::parse(f).unwrap(), &schema, true, Allowed::X_ONLY).unwrap()
    }

    #[test]
    fn order_statistic_rule() {
        let v = [10.0, 20.0, 30.0, 40.0];
        assert_eq!(survivor_quantile(&v, 0.5), 20.0);
        assert_eq!(survivor_quantile(&v, 0.2), 40.0);
        assert_eq!(survivor_quantile(&v, 0.75), 10.0);
        assert_eq!(survivor_quantile(&v, 0.99), 10.0);
        assert_eq!(survivor_quantile(&v, 0.01), 40.0);
    }

    #[test]
    fn empirical_levels() {
        let pop = PseudoPopulation::from_parts(
            Arm::Control,
            1.0,
            vec![10.0, 1.0, 20.0, 2.0, 30.0, 3.0, 40.0, 4.0],
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
            1,
        );
        let grid = OmegaGrid::new(1).unwrap();
        let q = estimate_quantiles(&pop, &grid, &design("x"), QuantileMode::Auto).unwrap();
        assert_eq!(q.kind, QuantileKind::EmpiricalByLevel);
        assert_eq!(q.quantiles_at(&[0.0]).unwrap(), vec![20.0]);
        assert_eq!(q.quantiles_at(&[1.0]).unwrap(), vec![2.0]);
        assert!(matches!(q.quantiles_at(&[2.0]), Err(Error::UncoveredProfile(_))));

        let flat = PseudoPopulation::from_parts(Arm::Control, 1.0, vec![3.5; 20], vec![0.0; 20], 1);
        let q = estimate_quantiles(&flat, &OmegaGrid::default(), &design("x"), QuantileMode::Auto).unwrap();
        assert!(q.quantiles_at(&[0.0]).unwrap().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn regression_quantiles_are_monotone() {
        let mut r = rng::stream(5, &[]);
        let n = 2000;
        let x: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let inb: Vec<f64> = x
            .iter()
            .map(|x| 5.0 + 2.0 * x + r.sample::<f64, _>(rand_distr::StandardNormal) * (0.5 + x))
            .collect();
        let pop = PseudoPopulation::from_parts(Arm::Control, 1.0, inb, x, 1);
        let q = estimate_quantiles(&pop, &OmegaGrid::new(9).unwrap(), &design("x"), QuantileMode::Auto).unwrap();
        assert_eq!(q.kind, QuantileKind::LinearQuantileRegression);
        for xv in [0.0, 0.3, 1.0, 2.5] {
            let v = q.quantiles_at(&[xv]).unwrap();
            assert!(v.windows(2).all(|w| w[0] >= w[1]), "{v:?}");
        }
        // median at x = 0.5 near 6
        let mid = q.quantiles_at(&[0.5]).unwrap()[4];
        assert!((mid - 6.0).abs() < 0.15, "{mid}");
    }
}
