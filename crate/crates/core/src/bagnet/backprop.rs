//! Training-mode forward pass and hand-written reverse-mode gradients.

use rand::Rng;

use super::model::{elu, BagModel, HeadKind, RunningStats};
use crate::error::{Error, Result};
use crate::matrix::{gemm, gemm_a_bt, gemm_at_b};
use crate::rng;
use crate::stats::{softmax_into, softplus};
use crate::synthdata::Bag;

/// A bag with its training label and, for the parameterized head, the θ
/// appended to every event row.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub bag: Bag,
    pub label: usize,
    pub theta_input: Option<f64>,
}

impl Example {
    pub fn new(bag: Bag, label: usize) -> Self {
        Self {
            bag,
            label,
            theta_input: None,
        }
    }

    pub fn with_theta(bag: Bag, label: usize, theta: f64) -> Self {
        Self {
            bag,
            label,
            theta_input: Some(theta),
        }
    }
}

/// Flat gradient aligned with [`BagModel::params`].
pub type Gradient = Vec<f64>;

struct LayerCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)); empty when dropout is off.
    mask: Vec<f64>,
}

pub(crate) struct HiddenTrain {
    /// Normalized network input.
    input: Vec<f64>,
    /// Output of every hidden block after dropout; the last one is the
    /// embedding.
    outs: Vec<Vec<f64>>,
    caches: Vec<LayerCache>,
    pub(crate) batch_stats: Vec<RunningStats>,
    pub(crate) output: Vec<f64>,
}

/// Training-mode hidden stack: batch statistics over all rows, dropout masks
/// drawn from `dropout_seed`.
pub(crate) fn hidden_train(
    model: &BagModel,
    x: &[f64],
    rows: usize,
    dropout_seed: u64,
) -> HiddenTrain {
    let cfg = &model.config;
    let p = cfg.dropout;
    let keep_scale = 1.0 / (1.0 - p);
    let mut outs: Vec<Vec<f64>> = Vec::with_capacity(cfg.depth);
    let mut caches = Vec::with_capacity(cfg.depth);
    let mut batch_stats = Vec::with_capacity(cfg.depth);
    for (l, slots) in model.layout.hidden.iter().enumerate() {
        let w = slots.width;
        let input: &[f64] = if l == 0 { x } else { &outs[l - 1] };
        let mut a = vec![0.0; rows * w];
        gemm(
            rows,
            slots.fan_in,
            w,
            input,
            &model.params[slots.kernel.clone()],
            0.0,
            &mut a,
        );
        let bias = &model.params[slots.bias.clone()];
        for row in a.chunks_exact_mut(w) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        let mut mean = vec![0.0; w];
        for row in a.chunks_exact(w) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; w];
        for row in a.chunks_exact(w) {
            for j in 0..w {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.bn_eps).sqrt()).collect();

        let gamma = &model.params[slots.gamma.clone()];
        let beta = &model.params[slots.beta.clone()];
        let mut out = vec![0.0; rows * w];
        for (arow, orow) in a.chunks_exact_mut(w).zip(out.chunks_exact_mut(w)) {
            for j in 0..w {
                let xh = (arow[j] - mean[j]) * inv_std[j];
                arow[j] = xh;
                orow[j] = elu(gamma[j] * xh + beta[j]);
            }
        }
        let mut mask = Vec::new();
        if p > 0.0 {
            let mut r = rng::stream(dropout_seed, "dropout", l as u64);
            mask = (0..rows * w)
                .map(|_| {
                    if r.random::<f64>() < p {
                        0.0
                    } else {
                        keep_scale
                    }
                })
                .collect();
            for (o, m) in out.iter_mut().zip(&mask) {
                *o *= m;
            }
        }
        caches.push(LayerCache {
            xhat: a,
            inv_std,
            mask,
        });
        batch_stats.push(RunningStats { mean, var });
        outs.push(out);
    }
    let output = outs.last().cloned().unwrap_or_default();
    HiddenTrain {
        input: x.to_vec(),
        outs,
        caches,
        batch_stats,
        output,
    }
}

/// Loss, gradient and the batch-norm statistics seen during one step.
#[derive(Debug, Clone)]
pub struct LossGrad {
    /// Mean cross-entropy plus the L2 penalty.
    pub loss: f64,
    /// Mean cross-entropy alone.
    pub data_loss: f64,
    pub grad: Gradient,
    pub batch_stats: Vec<RunningStats>,
}

fn check_labels(head: HeadKind, batch: &[Example]) -> Result<()> {
    let classes = head.label_count();
    for ex in batch {
        if ex.label >= classes {
            return Err(Error::InvalidLabel {
                label: ex.label,
                classes,
            });
        }
    }
    Ok(())
}

/// Mean cross-entropy over logits `z` (`bags × outputs`) and its gradient
/// with respect to `z`.
pub(crate) fn cross_entropy(head: HeadKind, z: &[f64], labels: &[usize]) -> (f64, Vec<f64>) {
    let m = labels.len() as f64;
    let out = head.outputs();
    let mut dz = vec![0.0; z.len()];
    let mut loss = 0.0;
    match head {
        HeadKind::MultiClassSoftmax { .. } => {
            for ((zr, dr), &y) in z
                .chunks_exact(out)
                .zip(dz.chunks_exact_mut(out))
                .zip(labels)
            {
                let lse = softmax_into(zr, dr);
                loss += lse - zr[y];
                dr[y] -= 1.0;
                dr.iter_mut().for_each(|d| *d /= m);
            }
        }
        _ => {
            for ((zi, di), &y) in z.iter().zip(dz.iter_mut()).zip(labels) {
                let yf = y as f64;
                loss += softplus(*zi) - yf * zi;
                *di = (crate::stats::sigmoid(*zi) - yf) / m;
            }
        }
    }
    (loss / m, dz)
}

pub(crate) fn l2_penalty(model: &BagModel) -> f64 {
    let l2 = model.config.l2;
    if l2 == 0.0 {
        return 0.0;
    }
    l2 * model
        .layout
        .kernel_ranges()
        .map(|r| model.params[r].iter().map(|w| w * w).sum::<f64>())
        .sum::<f64>()
}

/// Mean loss (plus L2) over `batch` and its gradient with respect to every
/// trainable parameter. Batch norm uses the statistics of this batch and
/// dropout masks come from `dropout_seed`, so two calls with the same seed
/// evaluate the same deterministic function of the parameters.
pub fn loss_and_grad(model: &BagModel, batch: &[Example], dropout_seed: u64) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let head = model.config.head;
    check_labels(head, batch)?;
    let items: Vec<(&Bag, Option<f64>)> = batch.iter().map(|e| (&e.bag, e.theta_input)).collect();
    let (x, offsets) = model.assemble(&items)?;
    let rows = *offsets.last().unwrap();
    let bags = batch.len();
    let w = model.config.width;
    let out = head.outputs();

    let fwd = hidden_train(model, &x, rows, dropout_seed);
    let pooled = BagModel::pool_rows(&fwd.output, w, &offsets);
    let z = model.head_logits(&pooled, bags);
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let (data_loss, dz) = cross_entropy(head, &z, &labels);

    let layout = &model.layout;
    let mut grad = vec![0.0; layout.total];

    // Head.
    gemm_at_b(
        bags,
        w,
        out,
        &pooled,
        &dz,
        0.0,
        &mut grad[layout.head_kernel.clone()],
    );
    for row in dz.chunks_exact(out) {
        for (g, d) in grad[layout.head_bias.clone()].iter_mut().zip(row) {
            *g += d;
        }
    }
    let mut d_pooled = vec![0.0; bags * w];
    gemm_a_bt(
        bags,
        out,
        w,
        &dz,
        &model.params[layout.head_kernel.clone()],
        &mut d_pooled,
    );

    // Pooling spreads each bag's gradient evenly over its rows.
    let mut d_out = vec![0.0; rows * w];
    for b in 0..bags {
        let (lo, hi) = (offsets[b], offsets[b + 1]);
        let inv = 1.0 / (hi - lo) as f64;
        let src = &d_pooled[b * w..(b + 1) * w];
        for r in lo..hi {
            for (d, s) in d_out[r * w..(r + 1) * w].iter_mut().zip(src) {
                *d = s * inv;
            }
        }
    }

    let rf = rows as f64;
    for (l, slots) in layout.hidden.iter().enumerate().rev() {
        let cache = &fwd.caches[l];
        let gamma = &model.params[slots.gamma.clone()];
        let beta = &model.params[slots.beta.clone()];
        if !cache.mask.is_empty() {
            for (d, m) in d_out.iter_mut().zip(&cache.mask) {
                *d *= m;
            }
        }
        // ELU'(y) = elu(y) + 1 for y ≤ 0. The activation is recovered from
        // the dropped-out output; rows zeroed by the mask already carry a zero
        // gradient.
        let out_l = &fwd.outs[l];
        let mut sum_dy = vec![0.0; w];
        let mut sum_dy_xhat = vec![0.0; w];
        for (r, (drow, xrow)) in d_out
            .chunks_exact_mut(w)
            .zip(cache.xhat.chunks_exact(w))
            .enumerate()
        {
            let orow = &out_l[r * w..(r + 1) * w];
            let mrow = if cache.mask.is_empty() {
                None
            } else {
                Some(&cache.mask[r * w..(r + 1) * w])
            };
            for j in 0..w {
                let y = gamma[j] * xrow[j] + beta[j];
                if y <= 0.0 {
                    let act = match mrow {
                        None => orow[j],
                        Some(m) if m[j] != 0.0 => orow[j] / m[j],
                        Some(_) => 0.0,
                    };
                    drow[j] *= act + 1.0;
                }
                sum_dy[j] += drow[j];
                sum_dy_xhat[j] += drow[j] * xrow[j];
            }
        }
        grad[slots.gamma.clone()].copy_from_slice(&sum_dy_xhat);
        grad[slots.beta.clone()].copy_from_slice(&sum_dy);
        // dx̂ = dy·γ, so Σdx̂ = γΣdy and Σdx̂·x̂ = γΣdy·x̂.
        for (drow, xrow) in d_out.chunks_exact_mut(w).zip(cache.xhat.chunks_exact(w)) {
            for j in 0..w {
                let k = gamma[j] * cache.inv_std[j] / rf;
                drow[j] = k * (rf * drow[j] - sum_dy[j] - xrow[j] * sum_dy_xhat[j]);
            }
        }
        let input: &[f64] = if l == 0 { &fwd.input } else { &fwd.outs[l - 1] };
        gemm_at_b(
            rows,
            slots.fan_in,
            w,
            input,
            &d_out,
            0.0,
            &mut grad[slots.kernel.clone()],
        );
        let gb = &mut grad[slots.bias.clone()];
        for row in d_out.chunks_exact(w) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if l > 0 {
            let mut d_in = vec![0.0; rows * slots.fan_in];
            gemm_a_bt(
                rows,
                w,
                slots.fan_in,
                &d_out,
                &model.params[slots.kernel.clone()],
                &mut d_in,
            );
            d_out = d_in;
        }
    }

    let l2 = model.config.l2;
    if l2 != 0.0 {
        for r in layout.kernel_ranges() {
            for (g, p) in grad[r.clone()].iter_mut().zip(&model.params[r]) {
                *g += 2.0 * l2 * p;
            }
        }
    }

    Ok(LossGrad {
        loss: data_loss + l2_penalty(model),
        data_loss,
        grad,
        batch_stats: fwd.batch_stats,
    })
}

/// Evaluation-mode mean loss over `examples`, L2 penalty included.
pub fn eval_loss(model: &BagModel, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let head = model.config.head;
    check_labels(head, examples)?;
    let items: Vec<(&Bag, Option<f64>)> =
        examples.iter().map(|e| (&e.bag, e.theta_input)).collect();
    let z = model.logits_eval(&items)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    Ok(cross_entropy(head, &z, &labels).0 + l2_penalty(model))
}
