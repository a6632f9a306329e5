use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::bagnet::{BagModel, HeadKind, Mode};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::synthdata::{Bag, EventFamily};

/// Λ̂ of a binary classifier: the pre-sigmoid logit.
pub fn bag_llr_binary(model: &BagModel, bag: &Bag) -> Result<f64> {
    model.expect_head("binary", model.head() == HeadKind::BinarySigmoid)?;
    Ok(model.forward(bag, None, Mode::Eval)?.logits[0])
}

/// `ln p_k − ln p_k0` of a multi-class classifier, taken as a logit difference.
pub fn bag_llr_multiclass(model: &BagModel, bag: &Bag, k: usize, k0: usize) -> Result<f64> {
    let HeadKind::MultiClassSoftmax { classes } = model.head() else {
        return Err(Error::HeadMismatch {
            expected: "multiclass".into(),
            found: model.head().to_string(),
        });
    };
    for i in [k, k0] {
        if i >= classes {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: classes,
            });
        }
    }
    if k == k0 {
        return Ok(0.0);
    }
    let z = model.forward(bag, None, Mode::Eval)?.logits;
    Ok(z[k] - z[k0])
}

/// `logit(bag, θ) − logit(bag, θ0)` of a parameterized classifier.
pub fn bag_llr_pnn(model: &BagModel, bag: &Bag, theta: f64, theta0: f64) -> Result<f64> {
    model.expect_head("pnn", model.head() == HeadKind::ParamBinary)?;
    if theta == theta0 {
        return Ok(0.0);
    }
    let a = model.forward(bag, Some(theta), Mode::Eval)?.logits[0];
    let b = model.forward(bag, Some(theta0), Mode::Eval)?.logits[0];
    Ok(a - b)
}

/// `T(D) = Σ_j Λ̂(ℬ_j)`.
pub fn test_statistic(bag_llrs: &[f64]) -> Result<f64> {
    if bag_llrs.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    if let Some(v) = bag_llrs.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(format!("non-finite bag LLR {v}")));
    }
    Ok(crate::stats::pairwise_sum(bag_llrs))
}

/// Anything that can turn a set of bags into a summed LLR curve.
pub trait ProfileScorer: Sync {
    /// `Σ_bags Λ̂(ℬ | θ, θ0)` for every θ in `grid`.
    fn profile(&self, bags: &[Bag], grid: &[f64], theta0: f64) -> Result<Vec<f64>>;
}

/// Exact likelihood ratios of the generating family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleScorer {
    pub family: EventFamily,
}

impl OracleScorer {
    pub fn new(family: EventFamily) -> Self {
        Self { family }
    }

    pub fn bag_llr(&self, bag: &Bag, theta: f64, theta0: f64) -> f64 {
        bag.events
            .iter_rows()
            .map(|x| self.family.true_llr(x, theta, theta0))
            .sum()
    }
}

impl ProfileScorer for OracleScorer {
    fn profile(&self, bags: &[Bag], grid: &[f64], theta0: f64) -> Result<Vec<f64>> {
        Ok(grid
            .iter()
            .map(|&t| bags.iter().map(|b| self.bag_llr(b, t, theta0)).sum())
            .collect())
    }
}

/// The oracle with a known per-bag estimation error: every bag's curve is
/// shifted by `ε_j·(θ−θ0)/Δθ` with `ε_j ~ Normal(0, σ²)`, so one grid step
/// away from θ0 the error variance is exactly σ².
///
/// The noise for a bag is drawn from a stream keyed by the bag's contents,
/// so the result does not depend on evaluation order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyOracleScorer {
    pub oracle: OracleScorer,
    pub sigma2: f64,
    pub delta_theta: f64,
    pub seed: u64,
}

impl NoisyOracleScorer {
    pub fn new(family: EventFamily, sigma2: f64, delta_theta: f64, seed: u64) -> Result<Self> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::invalid_param(format!(
                "σ² must be ≥ 0, got {sigma2}"
            )));
        }
        if delta_theta == 0.0 || !delta_theta.is_finite() {
            return Err(Error::invalid_param("Δθ must be non-zero"));
        }
        Ok(Self {
            oracle: OracleScorer::new(family),
            sigma2,
            delta_theta,
            seed,
        })
    }

    fn epsilon(&self, bag: &Bag) -> f64 {
        if self.sigma2 == 0.0 {
            return 0.0;
        }
        let mut h = self.seed;
        for v in bag.events.as_slice() {
            h = rng::mix64(h ^ v.to_bits());
        }
        let mut r = StreamRng::seed_from_u64(h);
        Normal::new(0.0, self.sigma2.sqrt())
            .expect("σ ≥ 0")
            .sample(&mut r)
    }
}

impl ProfileScorer for NoisyOracleScorer {
    fn profile(&self, bags: &[Bag], grid: &[f64], theta0: f64) -> Result<Vec<f64>> {
        let eps: f64 = bags.iter().map(|b| self.epsilon(b)).sum();
        let mut p = self.oracle.profile(bags, grid, theta0)?;
        for (v, &t) in p.iter_mut().zip(grid) {
            *v += eps * (t - theta0) / self.delta_theta;
        }
        Ok(p)
    }
}
