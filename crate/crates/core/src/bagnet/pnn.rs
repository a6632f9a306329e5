//! Parameterized classifier: bags paired with a candidate θ.

use serde::{Deserialize, Serialize};

use super::model::{BagModel, Mode};
use super::train::BagPool;
use crate::error::{Error, Result};
use crate::rng;
use crate::synthdata::{sample_events, Bag, EventFamily};

/// Probability that `bag` was generated at `theta`.
pub fn predict_pnn(model: &BagModel, bag: &Bag, theta: f64) -> Result<f64> {
    model.expect_head("pnn", model.head().takes_theta())?;
    Ok(model.forward(bag, Some(theta), Mode::Eval)?.probs[0])
}

/// Sources of the negatives paired with θ = 0, as (θ, share of the events).
pub const ZERO_NEGATIVE_MIX: [(f64, f64); 4] = [(0.2, 0.2), (-0.2, 0.2), (0.1, 0.3), (-0.1, 0.3)];

/// Event pools for a parameterized classifier, before bagging.
#[derive(Debug, Clone, PartialEq)]
pub struct PnnTrainingSet {
    pub pools: Vec<BagPool>,
    pub theta_grid: Vec<f64>,
}

/// Event counts of one pool in a [`PnnTrainingSet`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub label: usize,
    pub theta_input: f64,
    pub theta_events: f64,
    pub events: usize,
}

impl PnnTrainingSet {
    pub fn summary(&self) -> Vec<PoolSummary> {
        self.pools
            .iter()
            .map(|p| PoolSummary {
                label: p.label,
                theta_input: p.theta_input.unwrap_or(0.0),
                theta_events: p.signal.theta,
                events: p.signal.len(),
            })
            .collect()
    }

    pub fn events_with_label(&self, label: usize) -> usize {
        self.pools
            .iter()
            .filter(|p| p.label == label)
            .map(|p| p.signal.len())
            .sum()
    }
}

fn on_grid(grid: &[f64], t: f64) -> bool {
    grid.iter().any(|g| (g - t).abs() < 1e-9)
}

/// Split `n` events over shares that sum to one; rounding leftovers go to
/// the last entry so the total is exact.
fn apportion(n: usize, shares: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = shares
        .iter()
        .map(|s| (s * n as f64).round() as usize)
        .collect();
    let assigned: usize = counts[..counts.len() - 1].iter().sum();
    *counts.last_mut().unwrap() = n.saturating_sub(assigned);
    counts
}

/// Labeled pools for every grid point θ_k:
/// positives are events drawn at θ_k paired with θ_k; for θ_k ≠ 0 the
/// negatives are events drawn at 0 paired with θ_k; for θ_k = 0 the
/// negatives are a mixture from ±0.2 (20% each) and ±0.1 (30% each) paired
/// with 0. Every pool has `events_per_class` events, so the two labels
/// balance exactly.
pub fn build_pnn_training_set(
    family: &EventFamily,
    theta_grid: &[f64],
    events_per_class: usize,
    seed: u64,
) -> Result<PnnTrainingSet> {
    for req in [0.0, 0.1, -0.1, 0.2, -0.2] {
        if !on_grid(theta_grid, req) {
            return Err(Error::InvalidGrid(format!("grid must contain {req}")));
        }
    }
    if events_per_class == 0 {
        return Err(Error::invalid_param("events_per_class must be positive"));
    }
    let mut pools = Vec::new();
    for (k, &t) in theta_grid.iter().enumerate() {
        let k = k as u64;
        let pos = sample_events(
            family,
            t,
            events_per_class,
            rng::derive_seed(seed, "pnn-positive", k),
        )?;
        pools.push(BagPool::new(pos, 1).with_theta(t));
        if t.abs() < 1e-9 {
            let shares: Vec<f64> = ZERO_NEGATIVE_MIX.iter().map(|m| m.1).collect();
            let counts = apportion(events_per_class, &shares);
            for (j, (&(src, _), &n)) in ZERO_NEGATIVE_MIX.iter().zip(&counts).enumerate() {
                let ev = sample_events(
                    family,
                    src,
                    n,
                    rng::derive_seed(seed, "pnn-zero-negative", j as u64),
                )?;
                pools.push(BagPool::new(ev, 0).with_theta(0.0));
            }
        } else {
            let neg = sample_events(
                family,
                0.0,
                events_per_class,
                rng::derive_seed(seed, "pnn-negative", k),
            )?;
            pools.push(BagPool::new(neg, 0).with_theta(t));
        }
    }
    Ok(PnnTrainingSet {
        pools,
        theta_grid: theta_grid.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagnet::{HeadKind, ModelConfig};

    fn grid() -> Vec<f64> {
        (-10..=10).map(|i| i as f64 / 10.0).collect()
    }

    #[test]
    fn zero_negative_composition() {
        let set = build_pnn_training_set(&EventFamily::gauss_shift(), &grid(), 10_000, 1).unwrap();
        let mut zero_neg: Vec<(f64, usize)> = set
            .summary()
            .into_iter()
            .filter(|s| s.label == 0 && s.theta_input == 0.0)
            .map(|s| (s.theta_events, s.events))
            .collect();
        zero_neg.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert_eq!(
            zero_neg,
            vec![(-0.2, 2000), (-0.1, 3000), (0.1, 3000), (0.2, 2000)]
        );
    }

    #[test]
    fn labels_balance_and_positives_match() {
        let set = build_pnn_training_set(&EventFamily::gauss_shift(), &grid(), 1001, 2).unwrap();
        assert_eq!(set.events_with_label(1), set.events_with_label(0));
        for s in set.summary().iter().filter(|s| s.label == 1) {
            assert_eq!(s.theta_input, s.theta_events);
        }
        for s in set
            .summary()
            .iter()
            .filter(|s| s.label == 0 && s.theta_input != 0.0)
        {
            assert_eq!(s.theta_events, 0.0);
        }
    }

    #[test]
    fn grid_must_contain_anchor_points() {
        let g = vec![-1.0, -0.5, 0.0, 0.5, 1.0];
        assert!(matches!(
            build_pnn_training_set(&EventFamily::gauss_shift(), &g, 100, 0),
            Err(Error::InvalidGrid(_))
        ));
    }

    #[test]
    fn predict_requires_param_head_and_is_half_when_untrained() {
        let fam = EventFamily::gauss_shift();
        let ev = sample_events(&fam, 0.0, 6, 0).unwrap();
        let bag = Bag::new(ev.features, 0.0).unwrap();
        let bin = BagModel::new(ModelConfig::new(1, HeadKind::BinarySigmoid), 0).unwrap();
        assert!(matches!(
            predict_pnn(&bin, &bag, 0.1),
            Err(Error::HeadMismatch { .. })
        ));

        let mut m = BagModel::new(ModelConfig::new(1, HeadKind::ParamBinary), 0).unwrap();
        m.zero_head();
        let curve: Vec<f64> = grid()
            .iter()
            .map(|&t| predict_pnn(&m, &bag, t).unwrap())
            .collect();
        assert_eq!(curve.len(), 21);
        assert!(curve.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn pnn_is_permutation_invariant() {
        let fam = EventFamily::gauss_shift();
        let ev = sample_events(&fam, 0.3, 5, 2).unwrap();
        let bag = Bag::new(ev.features, 0.3).unwrap();
        let m = BagModel::new(ModelConfig::new(1, HeadKind::ParamBinary), 3).unwrap();
        let a = predict_pnn(&m, &bag, 0.3).unwrap();
        let b = predict_pnn(&m, &bag.permuted(&[4, 2, 0, 1, 3]), 0.3).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
