use serde::{Deserialize, Serialize};

use super::ensemble::MemberProfiles;
use super::queue::WorkQueue;
use crate::error::{Error, Result};
use crate::inference::{llr_profile, parabola_fit, LLRProfile, ParabolaFit, ProfileScorer};
use crate::rng;
use crate::synthdata::{make_bags, sample_events, Bag, EventFamily};

/// Shared settings of a pseudo-experiment batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSpec {
    pub family: EventFamily,
    pub theta_true: f64,
    pub chunk_events: usize,
    pub n_b: usize,
    pub n_pseudo: usize,
    pub grid: Vec<f64>,
    pub theta0: f64,
    pub window: f64,
    pub seed: u64,
}

/// Outcome of one pseudo-experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkFit {
    pub chunk: usize,
    pub fit: Option<ParabolaFit>,
    pub error: Option<String>,
}

impl PseudoSpec {
    fn check(&self) -> Result<()> {
        if self.n_b == 0 || self.chunk_events < self.n_b {
            return Err(Error::invalid_param(format!(
                "chunk_events {} must be at least the bag size {}",
                self.chunk_events, self.n_b
            )));
        }
        if self.n_pseudo == 0 {
            return Err(Error::invalid_param("n_pseudo must be positive"));
        }
        Ok(())
    }

    /// The bags of chunk `i`: `floor(chunk_events / n_b)` bags drawn at
    /// θ_true from a chunk-specific stream.
    pub fn chunk_bags(&self, i: usize) -> Result<Vec<Bag>> {
        let s = rng::derive_seed(self.seed, "pseudo-chunk", i as u64);
        let ev = sample_events(&self.family, self.theta_true, self.chunk_events, s)?;
        make_bags(&ev, self.n_b, rng::derive_seed(s, "pseudo-bags", 0))
    }

    /// Information in the events a chunk actually uses.
    pub fn chunk_information(&self) -> f64 {
        let used = (self.chunk_events / self.n_b) * self.n_b;
        self.family.bag_fisher(self.theta_true, used)
    }
}

fn fit_chunk(scorer: &dyn ProfileScorer, spec: &PseudoSpec, i: usize) -> Result<ParabolaFit> {
    let bags = spec.chunk_bags(i)?;
    let profile = llr_profile(scorer, &bags, &spec.grid, spec.theta0)?;
    parabola_fit(&profile, spec.window)
}

/// Sample, bag, profile and fit `n_pseudo` independent chunks. A failing
/// chunk is reported with its index instead of aborting the batch.
pub fn run_pseudo_experiments(
    scorer: &dyn ProfileScorer,
    spec: &PseudoSpec,
    queue: &WorkQueue,
) -> Result<Vec<ChunkFit>> {
    spec.check()?;
    Ok(
        queue.map(spec.n_pseudo, |i| match fit_chunk(scorer, spec, i) {
            Ok(fit) => ChunkFit {
                chunk: i,
                fit: Some(fit),
                error: None,
            },
            Err(e) => ChunkFit {
                chunk: i,
                fit: None,
                error: Some(e.to_string()),
            },
        }),
    )
}

/// Successful fits of a batch, in chunk order.
pub fn fits(chunks: &[ChunkFit]) -> Vec<ParabolaFit> {
    chunks.iter().filter_map(|c| c.fit.clone()).collect()
}

/// A pseudo-experiment scored by an ensemble, with the fit MSE each member
/// would have had on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberChunkFit {
    pub chunk: usize,
    pub fit: Option<ParabolaFit>,
    /// `None` when any member fit failed.
    pub member_mse: Option<Vec<f64>>,
    pub error: Option<String>,
}

impl From<MemberChunkFit> for ChunkFit {
    fn from(m: MemberChunkFit) -> Self {
        ChunkFit {
            chunk: m.chunk,
            fit: m.fit,
            error: m.error,
        }
    }
}

fn fit_llr(spec: &PseudoSpec, llr: Vec<f64>, n_events: usize) -> Result<ParabolaFit> {
    let profile = LLRProfile {
        theta_grid: spec.grid.clone(),
        llr,
        theta0: spec.theta0,
        n_events_represented: n_events,
    };
    parabola_fit(&profile, spec.window)
}

/// Like [`run_pseudo_experiments`], but scores every chunk with
/// `member_profiles` and also fits each member profile.
pub fn run_member_pseudo_experiments<F>(
    member_profiles: F,
    spec: &PseudoSpec,
    queue: &WorkQueue,
) -> Result<Vec<MemberChunkFit>>
where
    F: Fn(&[Bag], &[f64], f64) -> Result<MemberProfiles> + Sync,
{
    spec.check()?;
    Ok(queue.map(spec.n_pseudo, |i| {
        let run = || -> Result<(ParabolaFit, Option<Vec<f64>>)> {
            let bags = spec.chunk_bags(i)?;
            let n_events = bags.iter().map(|b| b.len()).sum();
            let mp = member_profiles(&bags, &spec.grid, spec.theta0)?;
            let fit = fit_llr(spec, mp.ensemble, n_events)?;
            let members = mp
                .members
                .into_iter()
                .map(|llr| fit_llr(spec, llr, n_events).ok().map(|f| f.fit_mse))
                .collect();
            Ok((fit, members))
        };
        match run() {
            Ok((fit, member_mse)) => MemberChunkFit {
                chunk: i,
                fit: Some(fit),
                member_mse,
                error: None,
            },
            Err(e) => MemberChunkFit {
                chunk: i,
                fit: None,
                member_mse: None,
                error: Some(e.to_string()),
            },
        }
    }))
}

/// Mean fit MSE of the ensemble profile and of every member profile over
/// the same pseudo-experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n_pseudo: usize,
    pub ensemble_mse: f64,
    pub member_mse: Vec<f64>,
    pub median_member_mse: f64,
}

impl StabilityReport {
    pub fn ensemble_is_stabler(&self) -> bool {
        self.ensemble_mse <= self.median_member_mse
    }
}

/// Paired comparison over chunks where the ensemble and every member fit.
pub fn ensemble_stability(chunks: &[MemberChunkFit]) -> Result<StabilityReport> {
    let ok: Vec<(f64, &Vec<f64>)> = chunks
        .iter()
        .filter_map(|c| Some((c.fit.as_ref()?.fit_mse, c.member_mse.as_ref()?)))
        .collect();
    if ok.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let n = ok.len() as f64;
    let ensemble_mse = ok.iter().map(|c| c.0).sum::<f64>() / n;
    let member_mse: Vec<f64> = (0..ok[0].1.len())
        .map(|k| ok.iter().map(|c| c.1[k]).sum::<f64>() / n)
        .collect();
    Ok(StabilityReport {
        n_pseudo: ok.len(),
        ensemble_mse,
        median_member_mse: crate::stats::median(&member_mse),
        member_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{mle_fisher, theta_grid, OracleScorer};
    use crate::stats::{mean, sample_std};

    fn spec(chunk: usize, n: usize, seed: u64) -> PseudoSpec {
        PseudoSpec {
            family: EventFamily::gauss_shift(),
            theta_true: 0.0,
            chunk_events: chunk,
            n_b: 10,
            n_pseudo: n,
            grid: theta_grid(-1.0, 1.0, 0.1).unwrap(),
            theta0: 0.0,
            window: 0.4,
            seed,
        }
    }

    #[test]
    fn count_and_determinism() {
        let q = WorkQueue::new(2).unwrap();
        let o = OracleScorer::new(EventFamily::gauss_shift());
        let a = run_pseudo_experiments(&o, &spec(1000, 200, 1), &q).unwrap();
        assert_eq!(a.len(), 200);
        assert!(a.iter().all(|c| c.fit.is_some()));
        let b =
            run_pseudo_experiments(&o, &spec(1000, 200, 1), &WorkQueue::new(1).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_mle_is_unbiased_and_scales_with_chunk() {
        let q = WorkQueue::new(1).unwrap();
        let o = OracleScorer::new(EventFamily::gauss_shift());
        let h1: Vec<f64> = fits(&run_pseudo_experiments(&o, &spec(1000, 2000, 3), &q).unwrap())
            .iter()
            .map(|f| f.theta_hat)
            .collect();
        let h2: Vec<f64> = fits(&run_pseudo_experiments(&o, &spec(2000, 2000, 4), &q).unwrap())
            .iter()
            .map(|f| f.theta_hat)
            .collect();
        let se = sample_std(&h1) / (h1.len() as f64).sqrt();
        assert!(mean(&h1).abs() < 3.0 * se);
        let ratio = mle_fisher(&h1).unwrap() / mle_fisher(&h2).unwrap();
        assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn stability_pairs_chunks() {
        let chunk = |fit: Option<f64>, m: Option<Vec<f64>>| MemberChunkFit {
            chunk: 0,
            fit: fit.map(|mse| ParabolaFit {
                theta_hat: 0.0,
                i_curv: 1.0,
                offset: 0.0,
                fit_mse: mse,
                window: (-0.4, 0.4),
                n_fit_points: 9,
                status: crate::inference::FitStatus::Ok,
            }),
            member_mse: m,
            error: None,
        };
        let r = ensemble_stability(&[
            chunk(Some(1.0), Some(vec![2.0, 4.0, 0.5])),
            chunk(Some(3.0), Some(vec![2.0, 4.0, 1.5])),
            chunk(Some(100.0), None),
        ])
        .unwrap();
        assert_eq!(r.n_pseudo, 2);
        assert_eq!(r.ensemble_mse, 2.0);
        assert_eq!(r.member_mse, vec![2.0, 4.0, 1.0]);
        assert_eq!(r.median_member_mse, 2.0);
        assert!(r.ensemble_is_stabler());
        assert!(ensemble_stability(&[chunk(None, None)]).is_err());
    }

    #[test]
    fn rejects_bags_larger_than_chunks() {
        let q = WorkQueue::new(1).unwrap();
        let o = OracleScorer::new(EventFamily::gauss_shift());
        let mut s = spec(5, 3, 0);
        s.n_b = 10;
        assert!(run_pseudo_experiments(&o, &s, &q).is_err());
    }
}
