use serde::{Deserialize, Serialize};

use super::events::{EventSet, EventSource};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// A fixed-size set of events scored jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub events: Matrix,
    /// θ the signal events were generated at.
    pub theta_label: f64,
    pub n_signal: usize,
    pub n_background: usize,
}

impl Bag {
    pub fn new(events: Matrix, theta_label: f64) -> Result<Self> {
        if events.rows() == 0 {
            return Err(Error::InvalidBag("bag must hold at least one event".into()));
        }
        let n = events.rows();
        Ok(Self {
            events,
            theta_label,
            n_signal: n,
            n_background: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.events.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.events.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.events.cols()
    }

    /// The same bag with its rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Bag {
        Bag {
            events: self.events.select_rows(perm),
            ..self.clone()
        }
    }
}

/// Event indices of each bag [`make_bags`] builds from `n_events` events.
pub fn bag_indices(n_events: usize, n_b: usize, shuffle_seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_b == 0 {
        return Err(Error::invalid_param("bag size must be positive"));
    }
    if n_b > n_events {
        return Err(Error::InsufficientData {
            needed: n_b,
            available: n_events,
        });
    }
    let perm = rng::permutation(n_events, shuffle_seed, "make-bags");
    Ok(perm.chunks_exact(n_b).map(<[usize]>::to_vec).collect())
}

/// Group events into `floor(n / n_b)` disjoint bags after a seeded shuffle.
/// Leftover events are dropped.
pub fn make_bags(events: &EventSet, n_b: usize, shuffle_seed: u64) -> Result<Vec<Bag>> {
    Ok(bag_indices(events.len(), n_b, shuffle_seed)?
        .iter()
        .map(|idx| Bag {
            events: events.features.select_rows(idx),
            theta_label: events.theta,
            n_signal: n_b,
            n_background: 0,
        })
        .collect())
}

/// Background events per bag for a contamination fraction, rounded half up.
pub fn background_count(c_bkgrd: f64, n_signal_per_bag: usize) -> usize {
    // The product is nudged by a few ulps so 0.8 · 100 style inputs do not
    // round down through representation error.
    let x = c_bkgrd * n_signal_per_bag as f64;
    (x * (1.0 + 4.0 * f64::EPSILON) + 0.5).floor() as usize
}

/// Signal and background event indices of each bag [`contaminate`] builds.
pub fn contamination_indices(
    n_signal_events: usize,
    n_background_events: usize,
    c_bkgrd: f64,
    n_signal_per_bag: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if !(c_bkgrd >= 0.0 && c_bkgrd.is_finite()) {
        return Err(Error::invalid_param(format!(
            "c_bkgrd must be ≥ 0, got {c_bkgrd}"
        )));
    }
    if n_signal_per_bag == 0 {
        return Err(Error::invalid_param("n_signal_per_bag must be positive"));
    }
    let n_bkg = background_count(c_bkgrd, n_signal_per_bag);
    let n_bags = n_signal_events / n_signal_per_bag;
    if n_bags == 0 {
        return Err(Error::InsufficientData {
            needed: n_signal_per_bag,
            available: n_signal_events,
        });
    }
    if n_bags * n_bkg > n_background_events {
        return Err(Error::InsufficientData {
            needed: n_bags * n_bkg,
            available: n_background_events,
        });
    }
    let sig_perm = rng::permutation(n_signal_events, seed, "contaminate-signal");
    let bkg_perm = rng::permutation(n_background_events, seed, "contaminate-background");
    Ok((0..n_bags)
        .map(|j| {
            (
                sig_perm[j * n_signal_per_bag..(j + 1) * n_signal_per_bag].to_vec(),
                bkg_perm[j * n_bkg..(j + 1) * n_bkg].to_vec(),
            )
        })
        .collect())
}

/// Build bags of `n_signal_per_bag` signal events plus
/// `round(c_bkgrd · n_signal_per_bag)` background events, shuffled in-bag.
pub fn contaminate(
    signal: &EventSet,
    background: &EventSet,
    c_bkgrd: f64,
    n_signal_per_bag: usize,
    seed: u64,
) -> Result<Vec<Bag>> {
    if !matches!(background.source, EventSource::Background { .. }) {
        return Err(Error::invalid_param(
            "background must come from the θ-independent family",
        ));
    }
    if background.dim_total() != signal.dim_total() {
        return Err(Error::Shape {
            expected: signal.dim_total(),
            got: background.dim_total(),
        });
    }
    let idx = contamination_indices(
        signal.len(),
        background.len(),
        c_bkgrd,
        n_signal_per_bag,
        seed,
    )?;
    let n_bkg = background_count(c_bkgrd, n_signal_per_bag);
    let n_b = n_signal_per_bag + n_bkg;
    let dim = signal.dim_total();
    let bags = idx
        .iter()
        .enumerate()
        .map(|(j, (sig, bkg))| {
            let mut rows = Vec::with_capacity(n_b * dim);
            for &i in sig {
                rows.extend_from_slice(signal.features.row(i));
            }
            for &i in bkg {
                rows.extend_from_slice(background.features.row(i));
            }
            let stacked = Matrix::from_vec(n_b, dim, rows);
            let order = rng::permutation(
                n_b,
                rng::derive_seed(seed, "contaminate-order", j as u64),
                "order",
            );
            Bag {
                events: stacked.select_rows(&order),
                theta_label: signal.theta,
                n_signal: n_signal_per_bag,
                n_background: n_bkg,
            }
        })
        .collect();
    Ok(bags)
}

/// Event-level train/validation/test partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of all events held out for testing.
    pub test_frac: f64,
    /// Fraction of the remainder used for validation.
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_frac: 0.2,
            val_frac: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: EventSet,
    pub val: EventSet,
    pub test: EventSet,
}

pub fn split(events: &EventSet, spec: &SplitSpec) -> Result<Splits> {
    let in_unit = |f: f64| f > 0.0 && f < 1.0;
    if !in_unit(spec.test_frac) || !in_unit(spec.val_frac) || spec.test_frac + spec.val_frac >= 1.0
    {
        return Err(Error::InvalidSpec(format!(
            "fractions must lie in (0,1) and sum below 1: test={} val={}",
            spec.test_frac, spec.val_frac
        )));
    }
    let n = events.len();
    let n_test = (n as f64 * spec.test_frac).round() as usize;
    let rest = n - n_test;
    let n_val = (rest as f64 * spec.val_frac).round() as usize;
    let n_train = rest - n_val;
    if n_test == 0 || n_val == 0 || n_train == 0 {
        return Err(Error::InvalidSpec(format!(
            "empty split for n={n}: train={n_train} val={n_val} test={n_test}"
        )));
    }
    let perm = rng::permutation(n, spec.seed, "split");
    let (test_idx, rest_idx) = perm.split_at(n_test);
    let (val_idx, train_idx) = rest_idx.split_at(n_val);
    Ok(Splits {
        train: events.select(train_idx),
        val: events.select(val_idx),
        test: events.select(test_idx),
    })
}
