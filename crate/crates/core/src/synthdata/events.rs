use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::family::EventFamily;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// Rows generated from one derived stream. Fixed so output never depends on
/// how blocks are distributed over threads.
const BLOCK_ROWS: usize = 4096;

/// Where a set of events came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EventSource {
    Family(EventFamily),
    /// θ-independent standard-Normal events of the given width.
    Background {
        dim_total: usize,
    },
}

/// i.i.d. events drawn at a single θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSet {
    pub source: EventSource,
    pub features: Matrix,
    pub theta: f64,
    pub seed: u64,
}

impl EventSet {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim_total(&self) -> usize {
        self.features.cols()
    }

    /// Subset by row index, keeping provenance.
    pub fn select(&self, idx: &[usize]) -> EventSet {
        EventSet {
            source: self.source,
            features: self.features.select_rows(idx),
            theta: self.theta,
            seed: self.seed,
        }
    }
}

fn fill_blocks(
    rows: usize,
    cols: usize,
    seed: u64,
    tag: &str,
    f: impl Fn(usize, f64) -> f64 + Sync,
) -> Matrix {
    let mut data = vec![0.0; rows * cols];
    if cols == 0 {
        return Matrix::from_vec(rows, cols, data);
    }
    data.par_chunks_mut(BLOCK_ROWS * cols)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut rng = rng::stream(seed, tag, block as u64);
            for (i, v) in chunk.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = f(i % cols, z);
            }
        });
    Matrix::from_vec(rows, cols, data)
}

/// Draw `n` i.i.d. events from `family` at `theta`. Deterministic in `seed`.
pub fn sample_events(family: &EventFamily, theta: f64, n: usize, seed: u64) -> Result<EventSet> {
    if !theta.is_finite() {
        return Err(Error::invalid_param(format!(
            "theta must be finite, got {theta}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid_param("n must be at least 1"));
    }
    family.validate()?;
    let dim = family.dim;
    let fam = *family;
    let features = fill_blocks(n, family.dim_total(), seed, "events", move |col, z| {
        if col < dim {
            fam.transform(theta, z)
        } else {
            z
        }
    });
    Ok(EventSet {
        source: EventSource::Family(*family),
        features,
        theta,
        seed,
    })
}

/// Draw `n` θ-independent standard-Normal background events.
pub fn sample_background(dim_total: usize, n: usize, seed: u64) -> Result<EventSet> {
    if n == 0 || dim_total == 0 {
        return Err(Error::invalid_param("background needs n ≥ 1 and dim ≥ 1"));
    }
    let features = fill_blocks(n, dim_total, seed, "background", |_, z| z);
    Ok(EventSet {
        source: EventSource::Background { dim_total },
        features,
        theta: 0.0,
        seed,
    })
}
