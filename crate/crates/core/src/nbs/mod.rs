//! Unconditional and covariate-conditional net benefit separation.
//!
//! Conditional estimation runs in four steps: survivor quantiles of the
//! control pseudo-population at each `ω` ([`estimate_quantiles`]), placement
//! indicators for the treated pseudo-units ([`build_placement_values`]), a
//! probit fit of those indicators on `X` and `Φ⁻¹(ω)` ([`fit_probit`]) and
//! quadrature over `ω` ([`integrate_nbs`]).

mod ced;
mod placement;
mod probit;
mod quadrature;
mod quantile;
pub mod quantreg;
mod wilcoxon;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ced::{CedCurve, CedRow, PrimaryRange};
pub use placement::{build_placement_values, PlacementRow, PlacementValueTable};
pub use probit::{fit_probit, NbsRegressionFit, OMEGA_TERM};
pub use quadrature::{binormal_auc, gauss_legendre, integrate_nbs};
pub use quantile::{estimate_quantiles, survivor_quantile, QuantileEstimator, QuantileKind, QuantileMode};
pub use wilcoxon::{brute_force_nbs, wilcoxon_nbs};

pub const DEFAULT_N_OMEGA: usize = 30;

/// `Ω = {j / (N_ω + 1) : j = 1, …, N_ω}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaGrid {
    n_omega: usize,
}

impl OmegaGrid {
    pub fn new(n_omega: usize) -> Result<Self> {
        if n_omega == 0 {
            return Err(Error::Config("N_omega must be at least 1".into()));
        }
        Ok(Self { n_omega })
    }

    pub fn len(&self) -> usize {
        self.n_omega
    }

    pub fn is_empty(&self) -> bool {
        self.n_omega == 0
    }

    pub fn point(&self, j: usize) -> f64 {
        (j + 1) as f64 / (self.n_omega + 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_omega).map(|j| self.point(j)).collect()
    }
}

impl Default for OmegaGrid {
    fn default() -> Self {
        Self {
            n_omega: DEFAULT_N_OMEGA,
        }
    }
}

/// Estimated `θ(λ | x)` for one covariate profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbsEstimate {
    pub theta: f64,
    pub lambda: f64,
    pub x_profile: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci: Option<(f64, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points() {
        let g = OmegaGrid::new(3).unwrap();
        assert_eq!(g.points(), vec![0.25, 0.5, 0.75]);
        assert_eq!(OmegaGrid::default().len(), 30);
        assert!(OmegaGrid::new(0).is_err());
        let p = OmegaGrid::new(30).unwrap().points();
        assert!(p
            .windows(2)
            .all(|w| w[0] < w[1] && ((w[1] - w[0]) - 1.0 / 31.0).abs() < 1e-15));
        assert!(p[0] > 0.0 && p[29] < 1.0);
    }
}
