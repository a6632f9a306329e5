use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix};
use crate::rng;
use crate::stats::{sigmoid, softmax_into};
use crate::synthdata::{Bag, EventSet};

/// Output layer of a [`BagModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HeadKind {
    /// One logit with a sigmoid.
    BinarySigmoid,
    /// `classes` logits with a softmax.
    MultiClassSoftmax { classes: usize },
    /// One logit; the candidate θ is appended to every event row.
    ParamBinary,
}

impl HeadKind {
    pub fn outputs(&self) -> usize {
        match self {
            HeadKind::BinarySigmoid | HeadKind::ParamBinary => 1,
            HeadKind::MultiClassSoftmax { classes } => *classes,
        }
    }

    /// Number of label values the head accepts.
    pub fn label_count(&self) -> usize {
        match self {
            HeadKind::BinarySigmoid | HeadKind::ParamBinary => 2,
            HeadKind::MultiClassSoftmax { classes } => *classes,
        }
    }

    pub fn tag(&self) -> u32 {
        match self {
            HeadKind::BinarySigmoid => 0,
            HeadKind::MultiClassSoftmax { .. } => 1,
            HeadKind::ParamBinary => 2,
        }
    }

    pub fn from_tag(tag: u32, classes: usize) -> Option<Self> {
        match tag {
            0 => Some(HeadKind::BinarySigmoid),
            1 => Some(HeadKind::MultiClassSoftmax { classes }),
            2 => Some(HeadKind::ParamBinary),
            _ => None,
        }
    }

    pub fn takes_theta(&self) -> bool {
        matches!(self, HeadKind::ParamBinary)
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadKind::BinarySigmoid => f.write_str("binary"),
            HeadKind::MultiClassSoftmax { classes } => write!(f, "multiclass({classes})"),
            HeadKind::ParamBinary => f.write_str("pnn"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of a raw event row.
    pub input_dim: usize,
    #[serde(default = "defaults::width")]
    pub width: usize,
    #[serde(default = "defaults::depth")]
    pub depth: usize,
    pub head: HeadKind,
    #[serde(default = "defaults::dropout")]
    pub dropout: f64,
    #[serde(default = "defaults::l2")]
    pub l2: f64,
    #[serde(default = "defaults::bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "defaults::bn_eps")]
    pub bn_eps: f64,
}

pub(crate) mod defaults {
    pub fn width() -> usize {
        64
    }
    pub fn depth() -> usize {
        3
    }
    pub fn dropout() -> f64 {
        0.1
    }
    pub fn l2() -> f64 {
        1e-3
    }
    pub fn bn_momentum() -> f64 {
        0.99
    }
    pub fn bn_eps() -> f64 {
        1e-3
    }
}

impl ModelConfig {
    pub fn new(input_dim: usize, head: HeadKind) -> Self {
        Self {
            input_dim,
            width: defaults::width(),
            depth: defaults::depth(),
            head,
            dropout: defaults::dropout(),
            l2: defaults::l2(),
            bn_momentum: defaults::bn_momentum(),
            bn_eps: defaults::bn_eps(),
        }
    }

    /// Width of a row after the optional θ column is appended.
    pub fn net_input_dim(&self) -> usize {
        self.input_dim + usize::from(self.head.takes_theta())
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.depth == 0 {
            return Err(Error::invalid_param("model dimensions must be positive"));
        }
        if let HeadKind::MultiClassSoftmax { classes } = self.head {
            if classes < 2 {
                return Err(Error::invalid_param(
                    "multi-class head needs at least 2 classes",
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid_param("dropout must lie in [0, 1)"));
        }
        if self.l2 < 0.0 {
            return Err(Error::invalid_param("l2 must be non-negative"));
        }
        Ok(())
    }
}

/// Offsets of one dense + batch-norm block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSlots {
    pub fan_in: usize,
    pub width: usize,
    pub kernel: Range<usize>,
    pub bias: Range<usize>,
    pub gamma: Range<usize>,
    pub beta: Range<usize>,
}

/// Where each tensor lives in the flat trainable-parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub hidden: Vec<DenseSlots>,
    pub head_kernel: Range<usize>,
    pub head_bias: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut off = 0;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        let mut hidden = Vec::with_capacity(cfg.depth);
        let mut fan_in = cfg.net_input_dim();
        for _ in 0..cfg.depth {
            let w = cfg.width;
            hidden.push(DenseSlots {
                fan_in,
                width: w,
                kernel: take(fan_in * w),
                bias: take(w),
                gamma: take(w),
                beta: take(w),
            });
            fan_in = w;
        }
        let out = cfg.head.outputs();
        let head_kernel = take(cfg.width * out);
        let head_bias = take(out);
        Self {
            hidden,
            head_kernel,
            head_bias,
            total: off,
        }
    }

    /// Ranges that carry the L2 penalty (dense and head kernels only).
    pub fn kernel_ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.hidden
            .iter()
            .map(|h| h.kernel.clone())
            .chain(std::iter::once(self.head_kernel.clone()))
    }
}

/// Per-feature standardization adapted from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Mean and (population) standard deviation of each column.
    pub fn fit(rows: &Matrix) -> Self {
        let d = rows.cols();
        let n = rows.rows().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }
}

/// Batch-norm moving statistics of one hidden block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Probabilities and logits for one bag.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl HeadOutput {
    pub(crate) fn from_logits(head: HeadKind, logits: Vec<f64>) -> Self {
        let probs = match head {
            HeadKind::MultiClassSoftmax { .. } => {
                let mut p = vec![0.0; logits.len()];
                softmax_into(&logits, &mut p);
                p
            }
            _ => vec![sigmoid(logits[0])],
        };
        Self { logits, probs }
    }
}

/// Whether stochastic layers and batch statistics are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Batch-norm uses statistics of the rows being processed; dropout masks
    /// are drawn from the given seed.
    Train {
        dropout_seed: u64,
    },
}

/// Embedding MLP → mean pooling over the events of a bag → output head.
#[derive(Debug, Clone, PartialEq)]
pub struct BagModel {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub norm: Normalizer,
    /// Flat trainable parameters, see [`ParamLayout`].
    pub params: Vec<f64>,
    pub running: Vec<RunningStats>,
    pub rng_seed: u64,
}

impl BagModel {
    /// Fresh model with fan-in scaled uniform kernels, zero biases, unit
    /// batch-norm scale, and an identity normalizer.
    pub fn new(config: ModelConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = rng::stream(rng_seed, "init", 0);
        let mut init_kernel = |range: Range<usize>, fan_in: usize| {
            let limit = (3.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-limit..limit);
            }
        };
        for h in &layout.hidden {
            init_kernel(h.kernel.clone(), h.fan_in);
        }
        init_kernel(layout.head_kernel.clone(), config.width);
        for h in &layout.hidden {
            params[h.gamma.clone()].fill(1.0);
        }
        let running = layout
            .hidden
            .iter()
            .map(|h| RunningStats {
                mean: vec![0.0; h.width],
                var: vec![1.0; h.width],
            })
            .collect();
        Ok(Self {
            norm: Normalizer::identity(config.net_input_dim()),
            config,
            layout,
            params,
            running,
            rng_seed,
        })
    }

    pub fn head(&self) -> HeadKind {
        self.config.head
    }

    pub fn trainable_count(&self) -> usize {
        self.layout.total
    }

    /// Trainable parameter count for the given architecture:
    /// per block `fan_in·w + w` dense plus `2w` batch-norm, then `w·K + K`.
    pub fn count_formula(
        net_input_dim: usize,
        width: usize,
        depth: usize,
        outputs: usize,
    ) -> usize {
        let first = net_input_dim * width + 3 * width;
        let rest = (depth - 1) * (width * width + 3 * width);
        first + rest + width * outputs + outputs
    }

    /// Zero the output kernel and bias, making every logit 0.
    pub fn zero_head(&mut self) {
        let l = &self.layout;
        self.params[l.head_kernel.clone()].fill(0.0);
        self.params[l.head_bias.clone()].fill(0.0);
    }

    /// Adapt the input normalizer to training events (θ column appended for
    /// the parameterized head).
    pub fn adapt_normalizer(&mut self, rows: &Matrix) -> Result<()> {
        if rows.cols() != self.config.net_input_dim() {
            return Err(Error::Shape {
                expected: self.config.net_input_dim(),
                got: rows.cols(),
            });
        }
        self.norm = Normalizer::fit(rows);
        Ok(())
    }

    /// Adapt the normalizer from event sets; `thetas` supplies the θ column
    /// values for the parameterized head.
    pub fn adapt_normalizer_from_events(
        &mut self,
        sets: &[&EventSet],
        thetas: &[f64],
    ) -> Result<()> {
        let d = self.config.input_dim;
        let mut rows = Vec::new();
        let mut n = 0;
        for ev in sets {
            if ev.dim_total() != d {
                return Err(Error::Shape {
                    expected: d,
                    got: ev.dim_total(),
                });
            }
            for (i, r) in ev.features.iter_rows().enumerate() {
                rows.extend_from_slice(r);
                if self.config.head.takes_theta() {
                    rows.push(if thetas.is_empty() {
                        0.0
                    } else {
                        thetas[i % thetas.len()]
                    });
                }
                n += 1;
            }
        }
        self.adapt_normalizer(&Matrix::from_vec(n, self.config.net_input_dim(), rows))
    }

    /// Concatenate and normalize bag rows; returns `(rows, bag offsets)`.
    pub(crate) fn assemble(&self, items: &[(&Bag, Option<f64>)]) -> Result<(Vec<f64>, Vec<usize>)> {
        let d = self.config.input_dim;
        let din = self.config.net_input_dim();
        let takes_theta = self.config.head.takes_theta();
        let total: usize = items.iter().map(|(b, _)| b.len()).sum();
        let mut x = Vec::with_capacity(total * din);
        let mut offsets = Vec::with_capacity(items.len() + 1);
        offsets.push(0);
        for (bag, theta) in items {
            if bag.is_empty() {
                return Err(Error::InvalidBag("empty bag".into()));
            }
            if bag.dim() != d {
                return Err(Error::Shape {
                    expected: d,
                    got: bag.dim(),
                });
            }
            let theta = match (takes_theta, theta) {
                (true, Some(t)) => Some(*t),
                (true, None) => {
                    return Err(Error::invalid_param("parameterized head needs a θ input"))
                }
                (false, _) => None,
            };
            for r in bag.events.iter_rows() {
                for (j, v) in r.iter().enumerate() {
                    x.push((v - self.norm.mean[j]) / self.norm.std[j]);
                }
                if let Some(t) = theta {
                    x.push((t - self.norm.mean[d]) / self.norm.std[d]);
                }
            }
            offsets.push(offsets.last().unwrap() + bag.len());
        }
        Ok((x, offsets))
    }

    /// Hidden stack in evaluation mode over `rows` normalized inputs.
    pub(crate) fn hidden_eval(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut input = x.to_vec();
        for (l, slots) in self.layout.hidden.iter().enumerate() {
            let w = slots.width;
            let mut a = vec![0.0; rows * w];
            gemm(
                rows,
                slots.fan_in,
                w,
                &input,
                &self.params[slots.kernel.clone()],
                0.0,
                &mut a,
            );
            let bias = &self.params[slots.bias.clone()];
            let gamma = &self.params[slots.gamma.clone()];
            let beta = &self.params[slots.beta.clone()];
            let rs = &self.running[l];
            // Fold bias, running stats and scale into one affine map per unit.
            let scale: Vec<f64> = (0..w)
                .map(|j| gamma[j] / (rs.var[j] + self.config.bn_eps).sqrt())
                .collect();
            let shift: Vec<f64> = (0..w)
                .map(|j| beta[j] + (bias[j] - rs.mean[j]) * scale[j])
                .collect();
            for row in a.chunks_exact_mut(w) {
                for j in 0..w {
                    row[j] = elu(row[j] * scale[j] + shift[j]);
                }
            }
            input = a;
        }
        input
    }

    /// Mean of each bag's embedding rows.
    pub(crate) fn pool_rows(emb: &[f64], width: usize, offsets: &[usize]) -> Vec<f64> {
        let bags = offsets.len() - 1;
        let mut pooled = vec![0.0; bags * width];
        for b in 0..bags {
            let (lo, hi) = (offsets[b], offsets[b + 1]);
            let out = &mut pooled[b * width..(b + 1) * width];
            for r in lo..hi {
                for (o, v) in out.iter_mut().zip(&emb[r * width..(r + 1) * width]) {
                    *o += v;
                }
            }
            let inv = 1.0 / (hi - lo) as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        pooled
    }

    pub(crate) fn head_logits(&self, pooled: &[f64], bags: usize) -> Vec<f64> {
        let out = self.config.head.outputs();
        let mut z = vec![0.0; bags * out];
        gemm(
            bags,
            self.config.width,
            out,
            pooled,
            &self.params[self.layout.head_kernel.clone()],
            0.0,
            &mut z,
        );
        let b = &self.params[self.layout.head_bias.clone()];
        for row in z.chunks_exact_mut(out) {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        z
    }

    /// Per-event embeddings after the hidden stack, `[N_B × width]`.
    pub fn embed(&self, bag: &Bag, theta: Option<f64>, mode: Mode) -> Result<Matrix> {
        let (x, offsets) = self.assemble(&[(bag, theta)])?;
        let rows = offsets[1];
        let emb = match mode {
            Mode::Eval => self.hidden_eval(&x, rows),
            Mode::Train { dropout_seed } => {
                super::backprop::hidden_train(self, &x, rows, dropout_seed).output
            }
        };
        Ok(Matrix::from_vec(rows, self.config.width, emb))
    }

    /// Forward one bag. `theta` is required for the parameterized head and
    /// ignored otherwise.
    pub fn forward(&self, bag: &Bag, theta: Option<f64>, mode: Mode) -> Result<HeadOutput> {
        let emb = self.embed(bag, theta, mode)?;
        let pooled = pool(&emb)?;
        let logits = self.head_logits(&pooled, 1);
        Ok(HeadOutput::from_logits(self.config.head, logits))
    }

    /// Evaluation-mode logits for many bags, processed in bounded chunks.
    /// Returns a `bags × outputs` row-major buffer.
    pub fn logits_eval(&self, items: &[(&Bag, Option<f64>)]) -> Result<Vec<f64>> {
        const MAX_ROWS: usize = 1 << 16;
        let out = self.config.head.outputs();
        let mut logits = Vec::with_capacity(items.len() * out);
        let mut start = 0;
        while start < items.len() {
            let mut end = start;
            let mut rows = 0;
            while end < items.len() && (end == start || rows + items[end].0.len() <= MAX_ROWS) {
                rows += items[end].0.len();
                end += 1;
            }
            let (x, offsets) = self.assemble(&items[start..end])?;
            let emb = self.hidden_eval(&x, rows);
            let pooled = Self::pool_rows(&emb, self.config.width, &offsets);
            logits.extend(self.head_logits(&pooled, end - start));
            start = end;
        }
        Ok(logits)
    }

    /// Evaluation-mode outputs for many bags.
    pub fn predict(&self, items: &[(&Bag, Option<f64>)]) -> Result<Vec<HeadOutput>> {
        let out = self.config.head.outputs();
        let z = self.logits_eval(items)?;
        Ok(z.chunks_exact(out)
            .map(|l| HeadOutput::from_logits(self.config.head, l.to_vec()))
            .collect())
    }

    pub(crate) fn expect_head(&self, want: &str, ok: bool) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::HeadMismatch {
                expected: want.into(),
                found: self.config.head.to_string(),
            })
        }
    }
}

#[inline]
pub(crate) fn elu(x: f64) -> f64 {
    // exp − 1 instead of exp_m1: the absolute error is below 1e-16 here and
    // it is several times faster.
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Arithmetic mean over the events axis.
pub fn pool(embeddings: &Matrix) -> Result<Vec<f64>> {
    if embeddings.rows() == 0 {
        return Err(Error::InvalidBag("cannot pool an empty bag".into()));
    }
    Ok(BagModel::pool_rows(
        embeddings.as_slice(),
        embeddings.cols(),
        &[0, embeddings.rows()],
    ))
}
