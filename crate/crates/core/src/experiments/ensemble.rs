use serde::{Deserialize, Serialize};

use crate::bagnet::{BagModel, HeadKind, HeadOutput};
use crate::error::{Error, Result};
use crate::inference::{grid_index, ProfileScorer};
use crate::stats::softplus;
use crate::synthdata::Bag;

/// How member predictions are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Mean of probabilities; log-ratios are taken afterwards.
    #[default]
    Probability,
    /// Mean of log-probabilities (logits for the binary heads).
    Logit,
}

/// `ln Σ exp(v) − ln n`.
fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// A set of models with the same head and input width.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub models: Vec<BagModel>,
    pub averaging: Averaging,
}

impl Ensemble {
    pub fn new(models: Vec<BagModel>, averaging: Averaging) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::HeterogeneousEnsemble("ensemble is empty".into()))?;
        for m in &models[1..] {
            if m.config.head != first.config.head || m.config.input_dim != first.config.input_dim {
                return Err(Error::HeterogeneousEnsemble(format!(
                    "{} with input {} vs {} with input {}",
                    first.config.head, first.config.input_dim, m.config.head, m.config.input_dim
                )));
            }
        }
        Ok(Self { models, averaging })
    }

    pub fn head(&self) -> HeadKind {
        self.models[0].config.head
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Per-model logits, each `items × outputs`.
    fn member_logits(&self, items: &[(&Bag, Option<f64>)]) -> Result<Vec<Vec<f64>>> {
        self.models.iter().map(|m| m.logits_eval(items)).collect()
    }

    /// Combined log-probabilities per item: `items × outputs` for the
    /// softmax head; `(ln p, ln(1−p))` pairs for the single-logit heads.
    fn combine(&self, member: &[Vec<f64>], n_items: usize) -> Vec<f64> {
        let out = self.head().outputs();
        let m = member.len();
        let width = if out == 1 { 2 } else { out };
        let mut res = vec![0.0; n_items * width];
        let mut buf = vec![0.0; m];
        for i in 0..n_items {
            if out == 1 {
                // ln σ(z) = −softplus(−z), ln(1−σ(z)) = −softplus(z).
                for (sign, slot) in [(1.0, 0), (-1.0, 1)] {
                    for (b, z) in buf.iter_mut().zip(member) {
                        *b = -softplus(-sign * z[i]);
                    }
                    res[i * 2 + slot] = match self.averaging {
                        Averaging::Probability => log_mean_exp(&buf),
                        Averaging::Logit => buf.iter().sum::<f64>() / m as f64,
                    };
                }
            } else {
                for k in 0..out {
                    for (b, z) in buf.iter_mut().zip(member) {
                        let row = &z[i * out..(i + 1) * out];
                        *b = row[k] - log_sum_exp(row);
                    }
                    res[i * out + k] = match self.averaging {
                        Averaging::Probability => log_mean_exp(&buf),
                        Averaging::Logit => buf.iter().sum::<f64>() / m as f64,
                    };
                }
            }
        }
        res
    }

    /// Ensemble prediction for one bag. Probabilities are averaged (or
    /// log-probabilities, under [`Averaging::Logit`]) and the logits are
    /// re-derived from the average.
    pub fn predict(&self, bag: &Bag, theta: Option<f64>) -> Result<HeadOutput> {
        let items = [(bag, theta)];
        let member = self.member_logits(&items)?;
        let c = self.combine(&member, 1);
        let logits = if self.head().outputs() == 1 {
            vec![c[0] - c[1]]
        } else {
            c
        };
        Ok(HeadOutput::from_logits(self.head(), logits))
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Arithmetic ensemble mean of the head outputs for one bag.
pub fn ensemble_predict(
    models: &[BagModel],
    bag: &Bag,
    theta: Option<f64>,
    averaging: Averaging,
) -> Result<HeadOutput> {
    Ensemble::new(models.to_vec(), averaging)?.predict(bag, theta)
}

/// Ensemble profile plus the profile each member would give on its own,
/// from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberProfiles {
    pub ensemble: Vec<f64>,
    pub members: Vec<Vec<f64>>,
}

/// LLR profiles from a multi-class ensemble whose class `k` was trained on
/// events at `class_thetas[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiClassScorer {
    pub ensemble: Ensemble,
    pub class_thetas: Vec<f64>,
}

impl MultiClassScorer {
    pub fn new(ensemble: Ensemble, class_thetas: Vec<f64>) -> Result<Self> {
        match ensemble.head() {
            HeadKind::MultiClassSoftmax { classes } if classes == class_thetas.len() => Ok(Self {
                ensemble,
                class_thetas,
            }),
            h => Err(Error::HeadMismatch {
                expected: format!("multiclass({})", class_thetas.len()),
                found: h.to_string(),
            }),
        }
    }

    fn class_index(&self, grid: &[f64], theta0: f64) -> Result<(Vec<usize>, usize)> {
        let idx = grid
            .iter()
            .map(|&t| {
                grid_index(&self.class_thetas, t)
                    .ok_or_else(|| Error::InvalidGrid(format!("θ = {t} is not a trained class")))
            })
            .collect::<Result<Vec<_>>>()?;
        let k0 = grid_index(&self.class_thetas, theta0)
            .ok_or_else(|| Error::InvalidGrid(format!("θ0 = {theta0} is not a trained class")))?;
        Ok((idx, k0))
    }

    pub fn member_profiles(
        &self,
        bags: &[Bag],
        grid: &[f64],
        theta0: f64,
    ) -> Result<MemberProfiles> {
        let (idx, k0) = self.class_index(grid, theta0)?;
        let items: Vec<(&Bag, Option<f64>)> = bags.iter().map(|b| (b, None)).collect();
        let member = self.ensemble.member_logits(&items)?;
        let k = self.class_thetas.len();
        let summed = |logp: &[f64]| -> Vec<f64> {
            idx.iter()
                .map(|&c| {
                    (0..bags.len())
                        .map(|i| logp[i * k + c] - logp[i * k + k0])
                        .sum()
                })
                .collect()
        };
        let ensemble = summed(&self.ensemble.combine(&member, bags.len()));
        // Each member alone: ln p_c − ln p_k0 is a plain logit difference.
        let members = member.iter().map(|z| summed(z)).collect();
        Ok(MemberProfiles { ensemble, members })
    }
}

impl ProfileScorer for MultiClassScorer {
    fn profile(&self, bags: &[Bag], grid: &[f64], theta0: f64) -> Result<Vec<f64>> {
        Ok(self.member_profiles(bags, grid, theta0)?.ensemble)
    }
}

/// LLR profiles from a parameterized-classifier ensemble scanned over θ.
#[derive(Debug, Clone, PartialEq)]
pub struct PnnScorer {
    pub ensemble: Ensemble,
}

impl PnnScorer {
    pub fn new(ensemble: Ensemble) -> Result<Self> {
        if ensemble.head() != HeadKind::ParamBinary {
            return Err(Error::HeadMismatch {
                expected: "pnn".into(),
                found: ensemble.head().to_string(),
            });
        }
        Ok(Self { ensemble })
    }

    pub fn member_profiles(
        &self,
        bags: &[Bag],
        grid: &[f64],
        theta0: f64,
    ) -> Result<MemberProfiles> {
        let mut thetas = grid.to_vec();
        thetas.push(theta0);
        let items: Vec<(&Bag, Option<f64>)> = thetas
            .iter()
            .flat_map(|&t| bags.iter().map(move |b| (b, Some(t))))
            .collect();
        let member = self.ensemble.member_logits(&items)?;
        let nb = bags.len();
        let ref_off = grid.len() * nb;
        let comb = self.ensemble.combine(&member, items.len());
        let logit = |i: usize| comb[2 * i] - comb[2 * i + 1];
        let ensemble = (0..grid.len())
            .map(|g| {
                (0..nb)
                    .map(|j| logit(g * nb + j) - logit(ref_off + j))
                    .sum()
            })
            .collect();
        let members = member
            .iter()
            .map(|z| {
                (0..grid.len())
                    .map(|g| (0..nb).map(|j| z[g * nb + j] - z[ref_off + j]).sum())
                    .collect()
            })
            .collect();
        Ok(MemberProfiles { ensemble, members })
    }

    /// Ensemble probability for each θ in `grid` (one curve per bag).
    pub fn probability_curve(&self, bag: &Bag, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter()
            .map(|&t| Ok(self.ensemble.predict(bag, Some(t))?.probs[0]))
            .collect()
    }
}

impl ProfileScorer for PnnScorer {
    fn profile(&self, bags: &[Bag], grid: &[f64], theta0: f64) -> Result<Vec<f64>> {
        Ok(self.member_profiles(bags, grid, theta0)?.ensemble)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagnet::ModelConfig;
    use crate::inference::{bag_llr_multiclass, bag_llr_pnn};
    use crate::synthdata::{sample_events, EventFamily};

    fn bag(seed: u64) -> Bag {
        let ev = sample_events(&EventFamily::gauss_shift(), 0.1, 6, seed).unwrap();
        Bag::new(ev.features, 0.1).unwrap()
    }

    fn models(head: HeadKind, n: usize) -> Vec<BagModel> {
        (0..n)
            .map(|s| BagModel::new(ModelConfig::new(1, head), s as u64).unwrap())
            .collect()
    }

    #[test]
    fn identical_members_equal_single_model() {
        let m = models(HeadKind::MultiClassSoftmax { classes: 3 }, 1)
            .pop()
            .unwrap();
        let b = bag(0);
        let single = m.forward(&b, None, crate::bagnet::Mode::Eval).unwrap();
        for avg in [Averaging::Probability, Averaging::Logit] {
            let e = ensemble_predict(&[m.clone(), m.clone(), m.clone()], &b, None, avg).unwrap();
            for (p, q) in e.probs.iter().zip(&single.probs) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn binary_probabilities_average() {
        let mut ms = models(HeadKind::BinarySigmoid, 2);
        for (m, p) in ms.iter_mut().zip([0.4f64, 0.6]) {
            m.zero_head();
            let hb = m.layout.head_bias.start;
            m.params[hb] = (p / (1.0 - p)).ln();
        }
        let out = ensemble_predict(&ms, &bag(1), None, Averaging::Probability).unwrap();
        assert!((out.probs[0] - 0.5).abs() < 1e-12);
        assert!(out.logits[0].abs() < 1e-12);
    }

    #[test]
    fn member_order_does_not_matter() {
        let ms = models(HeadKind::MultiClassSoftmax { classes: 4 }, 3);
        let rev: Vec<BagModel> = ms.iter().rev().cloned().collect();
        let b = bag(2);
        let a = ensemble_predict(&ms, &b, None, Averaging::Probability).unwrap();
        let r = ensemble_predict(&rev, &b, None, Averaging::Probability).unwrap();
        for (x, y) in a.probs.iter().zip(&r.probs) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn heterogeneous_members_rejected() {
        let mut ms = models(HeadKind::BinarySigmoid, 1);
        ms.extend(models(HeadKind::ParamBinary, 1));
        assert!(matches!(
            Ensemble::new(ms, Averaging::Probability),
            Err(Error::HeterogeneousEnsemble(_))
        ));
        let wide = BagModel::new(ModelConfig::new(2, HeadKind::BinarySigmoid), 0).unwrap();
        let mut ms = models(HeadKind::BinarySigmoid, 1);
        ms.push(wide);
        assert!(Ensemble::new(ms, Averaging::Probability).is_err());
        assert!(Ensemble::new(vec![], Averaging::Probability).is_err());
    }

    #[test]
    fn member_profiles_match_single_model_llrs() {
        let grid = [-0.1, 0.0, 0.1];
        let bags = vec![bag(3), bag(4)];
        let ms = models(HeadKind::MultiClassSoftmax { classes: 3 }, 2);
        let s = MultiClassScorer::new(
            Ensemble::new(ms.clone(), Averaging::Probability).unwrap(),
            grid.to_vec(),
        )
        .unwrap();
        let mp = s.member_profiles(&bags, &grid, 0.0).unwrap();
        for (m, prof) in ms.iter().zip(&mp.members) {
            for (k, v) in prof.iter().enumerate() {
                let want: f64 = bags
                    .iter()
                    .map(|b| bag_llr_multiclass(m, b, k, 1).unwrap())
                    .sum();
                assert!((v - want).abs() < 1e-10);
            }
        }
        assert!(mp.ensemble[1].abs() < 1e-12);

        let ps = models(HeadKind::ParamBinary, 2);
        let s = PnnScorer::new(Ensemble::new(ps.clone(), Averaging::Logit).unwrap()).unwrap();
        let mp = s.member_profiles(&bags, &grid, 0.0).unwrap();
        for (m, prof) in ps.iter().zip(&mp.members) {
            for (g, v) in grid.iter().zip(prof) {
                let want: f64 = bags
                    .iter()
                    .map(|b| bag_llr_pnn(m, b, *g, 0.0).unwrap())
                    .sum();
                assert!((v - want).abs() < 1e-10);
            }
        }
        // Logit averaging of single-logit heads is the mean member profile.
        for g in 0..3 {
            let mean = (mp.members[0][g] + mp.members[1][g]) / 2.0;
            assert!((mp.ensemble[g] - mean).abs() < 1e-10);
        }
    }

    #[test]
    fn scorer_rejects_untrained_grid_points() {
        let ms = models(HeadKind::MultiClassSoftmax { classes: 3 }, 1);
        let s = MultiClassScorer::new(
            Ensemble::new(ms, Averaging::Probability).unwrap(),
            vec![-0.1, 0.0, 0.1],
        )
        .unwrap();
        assert!(matches!(
            s.profile(&[bag(0)], &[0.0, 0.2], 0.0),
            Err(Error::InvalidGrid(_))
        ));
    }
}
