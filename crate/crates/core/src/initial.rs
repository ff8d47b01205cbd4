//! Initial data used by the experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::grid::SpectralGrid;
use crate::mti::FieldState;

/// Real initial data `u(x,0) = phi1`, `u_t(x,0) = phi2 / eps^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialData {
    /// `phi1 = sech(x^2) / 2`, `phi2 = exp(-x^2) / 2` (1D accuracy tests).
    SechGauss,
    /// Two Gaussians at `y = -2, 2` for `phi1`, one centered Gaussian for `phi2` (2D dynamics).
    TwoGaussian,
    Zero,
}

impl InitialData {
    pub fn phi1(&self, x: f64, y: f64) -> f64 {
        match self {
            InitialData::SechGauss => 0.5 / (x * x).cosh(),
            InitialData::TwoGaussian => {
                (-x * x - (y + 2.0).powi(2)).exp() + (-x * x - (y - 2.0).powi(2)).exp()
            }
            InitialData::Zero => 0.0,
        }
    }

    pub fn phi2(&self, x: f64, y: f64) -> f64 {
        match self {
            InitialData::SechGauss => 0.5 * (-x * x).exp(),
            InitialData::TwoGaussian => (-x * x - y * y).exp(),
            InitialData::Zero => 0.0,
        }
    }

    /// Natural dimension of the data set (`Zero` works in either).
    pub fn dim(&self) -> Option<usize> {
        match self {
            InitialData::SechGauss => Some(1),
            InitialData::TwoGaussian => Some(2),
            InitialData::Zero => None,
        }
    }

    pub fn state(&self, grid: &SpectralGrid, eps: f64) -> Result<FieldState> {
        if !(eps > 0.0) {
            return Err(SolverError::Parameter(format!(
                "eps must be positive, got {eps}"
            )));
        }
        if let Some(d) = self.dim() {
            if d != grid.dim() {
                return Err(SolverError::GridMismatch(format!(
                    "{self:?} initial data is {d}-dimensional, grid is {}-dimensional",
                    grid.dim()
                )));
            }
        }
        let inv_eps2 = 1.0 / (eps * eps);
        Ok(FieldState {
            u: grid.sample(|x, y| self.phi1(x, y)),
            udot: grid.sample(|x, y| self.phi2(x, y) * inv_eps2),
            t: 0.0,
        })
    }
}
