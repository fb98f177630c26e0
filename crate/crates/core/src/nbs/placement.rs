use std::collections::hash_map::Entry;
use std::collections::HashMap;

use super::{OmegaGrid, QuantileEstimator, QuantileKind};
use crate::error::{Error, Result};
use crate::formula::Covariates;
use crate::normal;
use crate::standardization::PseudoPopulation;

/// Placement indicators `U_{mω} = 1(B̃_{1,m} > Ŝ⁻¹_{0|x̃_m}(ω))` for every treated
/// pseudo-unit and grid point, stored unit-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementValueTable {
    pub grid: OmegaGrid,
    pub lambda: f64,
    x: Vec<f64>,
    x_dim: usize,
    u: Vec<bool>,
}

/// One (unit, ω) row of a [`PlacementValueTable`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementRow<'a> {
    pub unit: usize,
    pub omega: f64,
    pub u: bool,
    pub covariate_x: &'a [f64],
    pub probit_omega: f64,
}

impl PlacementValueTable {
    pub fn from_parts(grid: OmegaGrid, lambda: f64, x: Vec<f64>, x_dim: usize, u: Vec<bool>) -> Self {
        assert_eq!(u.len() % grid.len(), 0);
        assert_eq!(u.len() / grid.len() * x_dim, x.len());
        Self {
            grid,
            lambda,
            x,
            x_dim,
            u,
        }
    }

    pub fn units(&self) -> usize {
        self.u.len() / self.grid.len()
    }

    /// Number of rows, `M · N_ω`.
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn x_row(&self, m: usize) -> &[f64] {
        &self.x[m * self.x_dim..(m + 1) * self.x_dim]
    }

    pub fn u(&self, m: usize, j: usize) -> bool {
        self.u[m * self.grid.len() + j]
    }

    pub fn mean_u(&self) -> f64 {
        self.u.iter().filter(|&&u| u).count() as f64 / self.u.len() as f64
    }

    pub fn rows(&self) -> impl Iterator<Item = PlacementRow<'_>> + '_ {
        let omegas = self.grid.points();
        let probits: Vec<f64> = omegas.iter().map(|&w| normal::quantile(w)).collect();
        (0..self.len()).map(move |i| {
            let (m, j) = (i / self.grid.len(), i % self.grid.len());
            PlacementRow {
                unit: m,
                omega: omegas[j],
                u: self.u[i],
                covariate_x: self.x_row(m),
                probit_omega: probits[j],
            }
        })
    }
}

pub fn build_placement_values(
    treated: &PseudoPopulation,
    quantiles: &QuantileEstimator,
) -> Result<PlacementValueTable> {
    if treated.is_empty() {
        return Err(Error::Config("treated pseudo-population is empty".into()));
    }
    let grid = &quantiles.grid;
    let nw = grid.len();
    let design = &quantiles.design;
    let mut u = Vec::with_capacity(treated.len() * nw);
    let mut x = Vec::with_capacity(treated.len() * treated.x_dim());
    let mut row = vec![0.0; design.ncols()];
    let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
    for m in 0..treated.len() {
        let xm = treated.x_row(m);
        x.extend_from_slice(xm);
        design.fill_row(&Covariates::x_only(xm), &mut row);
        let q = match quantiles.kind {
            QuantileKind::EmpiricalByLevel => {
                let level = quantiles.level_of(&row).ok_or_else(|| {
                    Error::UncoveredProfile(format!(
                        "treated pseudo-unit {m} has x = {xm:?}, a profile absent from the control pseudo-population"
                    ))
                })?;
                match cache.entry(level) {
                    Entry::Occupied(e) => e.get().clone(),
                    Entry::Vacant(e) => e.insert(quantiles.quantiles_for_row(&row)?).clone(),
                }
            }
            QuantileKind::LinearQuantileRegression => quantiles.quantiles_for_row(&row)?,
        };
        let b = treated.inb[m];
        u.extend(q.iter().map(|&q| b > q));
    }
    Ok(PlacementValueTable {
        grid: grid.clone(),
        lambda: treated.lambda,
        x,
        x_dim: treated.x_dim(),
        u,
    })
}
