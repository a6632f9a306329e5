use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which analytic likelihood the informative coordinates follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// `x ~ Normal(θ, 1)`; unit Fisher information per coordinate.
    GaussShift,
    /// `x ~ Normal(0, e^θ)`; Fisher information 1/2 per coordinate.
    GaussLogVar,
}

impl FamilyKind {
    pub fn tag(self) -> u32 {
        match self {
            FamilyKind::GaussShift => 0,
            FamilyKind::GaussLogVar => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(FamilyKind::GaussShift),
            1 => Some(FamilyKind::GaussLogVar),
            _ => None,
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyKind::GaussShift => "gauss-shift",
            FamilyKind::GaussLogVar => "gauss-log-var",
        })
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss-shift" => Ok(FamilyKind::GaussShift),
            "gauss-log-var" => Ok(FamilyKind::GaussLogVar),
            other => Err(Error::invalid_param(format!("unknown family {other:?}"))),
        }
    }
}

/// A parameterized event density with exact likelihood oracles.
///
/// Each of the `dim` informative coordinates is an independent draw from the
/// family at θ; `nuisance_dims` standard-Normal coordinates that carry no
/// information about θ are appended after them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventFamily {
    pub kind: FamilyKind,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default)]
    pub nuisance_dims: usize,
}

fn one() -> usize {
    1
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

impl EventFamily {
    pub fn new(kind: FamilyKind) -> Self {
        Self {
            kind,
            dim: 1,
            nuisance_dims: 0,
        }
    }

    pub fn with_dims(kind: FamilyKind, dim: usize, nuisance_dims: usize) -> Self {
        Self {
            kind,
            dim,
            nuisance_dims,
        }
    }

    pub fn gauss_shift() -> Self {
        Self::new(FamilyKind::GaussShift)
    }

    pub fn gauss_log_var() -> Self {
        Self::new(FamilyKind::GaussLogVar)
    }

    pub fn dim_total(&self) -> usize {
        self.dim + self.nuisance_dims
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid_param("family dim must be positive"));
        }
        Ok(())
    }

    /// Draw the informative coordinates from a standard-Normal draw `z`.
    #[inline]
    pub(crate) fn transform(&self, theta: f64, z: f64) -> f64 {
        match self.kind {
            FamilyKind::GaussShift => theta + z,
            FamilyKind::GaussLogVar => (0.5 * theta).exp() * z,
        }
    }

    /// Exact `ln p(x | θ)` over all coordinates, nuisance included.
    pub fn log_density(&self, x: &[f64], theta: f64) -> f64 {
        let (info, nuis) = x.split_at(self.dim);
        let mut lp = 0.0;
        for &v in info {
            lp += match self.kind {
                FamilyKind::GaussShift => -0.5 * (v - theta) * (v - theta) - HALF_LN_2PI,
                FamilyKind::GaussLogVar => {
                    -0.5 * v * v * (-theta).exp() - 0.5 * theta - HALF_LN_2PI
                }
            };
        }
        for &v in nuis {
            lp += -0.5 * v * v - HALF_LN_2PI;
        }
        lp
    }

    /// Exact score `∂θ ln p(x | θ)`.
    pub fn score(&self, x: &[f64], theta: f64) -> f64 {
        x[..self.dim]
            .iter()
            .map(|&v| match self.kind {
                FamilyKind::GaussShift => v - theta,
                FamilyKind::GaussLogVar => 0.5 * v * v * (-theta).exp() - 0.5,
            })
            .sum()
    }

    /// Exact per-event log-likelihood ratio `ln p(x|θ1) − ln p(x|θ0)`.
    pub fn true_llr(&self, x: &[f64], theta1: f64, theta0: f64) -> f64 {
        if theta1 == theta0 {
            return 0.0;
        }
        x[..self.dim]
            .iter()
            .map(|&v| match self.kind {
                FamilyKind::GaussShift => {
                    (theta1 - theta0) * v - 0.5 * (theta1 * theta1 - theta0 * theta0)
                }
                FamilyKind::GaussLogVar => {
                    -0.5 * (theta1 - theta0) - 0.5 * v * v * ((-theta1).exp() - (-theta0).exp())
                }
            })
            .sum()
    }

    /// Exact per-event Fisher information `I_1(θ)`.
    pub fn true_fisher(&self, _theta: f64) -> f64 {
        let per_coord = match self.kind {
            FamilyKind::GaussShift => 1.0,
            FamilyKind::GaussLogVar => 0.5,
        };
        per_coord * self.dim as f64
    }

    /// Fisher information of a bag of `n_b` i.i.d. events.
    pub fn bag_fisher(&self, theta: f64, n_b: usize) -> f64 {
        n_b as f64 * self.true_fisher(theta)
    }
}
