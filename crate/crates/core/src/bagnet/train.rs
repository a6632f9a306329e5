use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::backprop::{eval_loss, loss_and_grad, Example};
use super::model::{BagModel, RunningStats};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::synthdata::{contaminate, make_bags, EventSet};

/// Optimization schedule: Adam with reduce-on-plateau and early stopping on
/// validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    #[serde(default = "sd::initial_lr")]
    pub initial_lr: f64,
    #[serde(default = "sd::min_lr")]
    pub min_lr: f64,
    #[serde(default = "sd::factor")]
    pub lr_reduction_factor: f64,
    #[serde(default = "sd::patience")]
    pub patience: usize,
    /// Events per optimizer step; the bag batch size is this over N_B.
    #[serde(default = "sd::events_per_batch")]
    pub events_per_batch: usize,
    #[serde(default = "sd::yes")]
    pub dynamic_bags: bool,
    #[serde(default = "sd::max_epochs")]
    pub max_epochs: usize,
    /// Fit the input normalizer on the first epoch's training rows.
    #[serde(default = "sd::yes")]
    pub adapt_normalizer: bool,
}

mod sd {
    pub fn initial_lr() -> f64 {
        1e-3
    }
    pub fn min_lr() -> f64 {
        1e-4
    }
    pub fn factor() -> f64 {
        0.3162
    }
    pub fn patience() -> usize {
        10
    }
    pub fn events_per_batch() -> usize {
        80_000
    }
    pub fn yes() -> bool {
        true
    }
    pub fn max_epochs() -> usize {
        500
    }
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            initial_lr: sd::initial_lr(),
            min_lr: sd::min_lr(),
            lr_reduction_factor: sd::factor(),
            patience: sd::patience(),
            events_per_batch: sd::events_per_batch(),
            dynamic_bags: true,
            max_epochs: sd::max_epochs(),
            adapt_normalizer: true,
        }
    }
}

impl TrainSchedule {
    /// Bags per optimizer step, `floor(events_per_batch / n_b)` but at least 1.
    pub fn batch_size(&self, n_b: usize) -> usize {
        (self.events_per_batch / n_b.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_lr > 0.0
            && self.min_lr > 0.0
            && self.min_lr <= self.initial_lr
            && self.lr_reduction_factor > 0.0
            && self.lr_reduction_factor < 1.0
            && self.patience > 0
            && self.events_per_batch > 0
            && self.max_epochs > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid_param(format!(
                "bad training schedule {self:?}"
            )))
        }
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.val_loss.len()
    }
}

/// Supplies labeled bags for an epoch.
pub trait ExampleSource: Sync {
    fn examples(&self, epoch: usize) -> Result<Vec<Example>>;
}

impl ExampleSource for Vec<Example> {
    fn examples(&self, _epoch: usize) -> Result<Vec<Example>> {
        Ok(self.clone())
    }
}

impl ExampleSource for [Example] {
    fn examples(&self, _epoch: usize) -> Result<Vec<Example>> {
        Ok(self.to_vec())
    }
}

/// Events sharing one label (and θ input) that are cut into bags on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct BagPool {
    pub signal: EventSet,
    /// Background events mixed into each bag at `c_bkgrd` when present.
    pub background: Option<EventSet>,
    pub c_bkgrd: f64,
    pub label: usize,
    pub theta_input: Option<f64>,
}

impl BagPool {
    pub fn new(signal: EventSet, label: usize) -> Self {
        Self {
            signal,
            background: None,
            c_bkgrd: 0.0,
            label,
            theta_input: None,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta_input = Some(theta);
        self
    }

    pub fn with_background(mut self, background: EventSet, c_bkgrd: f64) -> Self {
        self.background = Some(background);
        self.c_bkgrd = c_bkgrd;
        self
    }

    fn bags(&self, n_signal_per_bag: usize, seed: u64) -> Result<Vec<Example>> {
        let bags = match &self.background {
            Some(bkg) if self.c_bkgrd > 0.0 => {
                contaminate(&self.signal, bkg, self.c_bkgrd, n_signal_per_bag, seed)?
            }
            _ => make_bags(&self.signal, n_signal_per_bag, seed)?,
        };
        Ok(bags
            .into_iter()
            .map(|bag| Example {
                bag,
                label: self.label,
                theta_input: self.theta_input,
            })
            .collect())
    }
}

/// Labeled event pools re-bagged every epoch (or once, when not dynamic).
#[derive(Debug, Clone, PartialEq)]
pub struct BagPools {
    pub pools: Vec<BagPool>,
    pub n_signal_per_bag: usize,
    pub seed: u64,
    pub dynamic: bool,
}

impl BagPools {
    pub fn new(pools: Vec<BagPool>, n_signal_per_bag: usize, seed: u64) -> Self {
        Self {
            pools,
            n_signal_per_bag,
            seed,
            dynamic: true,
        }
    }

    pub fn fixed(mut self) -> Self {
        self.dynamic = false;
        self
    }

    /// Event-level partition of every pool (signal and background alike)
    /// into a training part and a validation part.
    pub fn split(&self, val_frac: f64, seed: u64) -> Result<(BagPools, BagPools)> {
        if !(val_frac > 0.0 && val_frac < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "validation fraction {val_frac} outside (0,1)"
            )));
        }
        let cut = |ev: &EventSet, tag: &str, i: usize| -> (EventSet, EventSet) {
            let perm = rng::permutation(
                ev.len(),
                rng::derive_seed(seed, tag, i as u64),
                "pool-split",
            );
            let n_val = (ev.len() as f64 * val_frac).round() as usize;
            let (v, t) = perm.split_at(n_val);
            (ev.select(t), ev.select(v))
        };
        let mut train = Vec::with_capacity(self.pools.len());
        let mut val = Vec::with_capacity(self.pools.len());
        for (i, p) in self.pools.iter().enumerate() {
            let (st, sv) = cut(&p.signal, "split-signal", i);
            let (bt, bv) = match &p.background {
                Some(b) => {
                    let (t, v) = cut(b, "split-background", i);
                    (Some(t), Some(v))
                }
                None => (None, None),
            };
            train.push(BagPool {
                signal: st,
                background: bt,
                ..p.clone()
            });
            val.push(BagPool {
                signal: sv,
                background: bv,
                ..p.clone()
            });
        }
        let mk = |pools, tag| BagPools {
            pools,
            n_signal_per_bag: self.n_signal_per_bag,
            seed: rng::derive_seed(self.seed, tag, 0),
            dynamic: self.dynamic,
        };
        Ok((mk(train, "train"), mk(val, "val").fixed()))
    }
}

impl ExampleSource for BagPools {
    fn examples(&self, epoch: usize) -> Result<Vec<Example>> {
        let round = if self.dynamic { epoch as u64 } else { 0 };
        let base = rng::derive_seed(self.seed, "rebag", round);
        let mut out = Vec::new();
        for (i, p) in self.pools.iter().enumerate() {
            out.extend(p.bags(
                self.n_signal_per_bag,
                rng::derive_seed(base, "pool", i as u64),
            )?);
        }
        Ok(out)
    }
}

fn normalizer_rows(model: &BagModel, examples: &[Example]) -> Matrix {
    let din = model.config.net_input_dim();
    let takes_theta = model.config.head.takes_theta();
    let n: usize = examples.iter().map(|e| e.bag.len()).sum();
    let mut rows = Vec::with_capacity(n * din);
    for e in examples {
        for r in e.bag.events.iter_rows() {
            rows.extend_from_slice(r);
            if takes_theta {
                rows.push(e.theta_input.unwrap_or(0.0));
            }
        }
    }
    Matrix::from_vec(n, din, rows)
}

fn blend(running: &mut [RunningStats], batch: &[RunningStats], momentum: f64) {
    for (r, b) in running.iter_mut().zip(batch) {
        for (rm, bm) in r.mean.iter_mut().zip(&b.mean) {
            *rm = momentum * *rm + (1.0 - momentum) * bm;
        }
        for (rv, bv) in r.var.iter_mut().zip(&b.var) {
            *rv = momentum * *rv + (1.0 - momentum) * bv;
        }
    }
}

/// Train in place and restore the weights of the best validation epoch.
///
/// The learning rate is multiplied by `lr_reduction_factor` after `patience`
/// epochs without improvement (floored at `min_lr`). Once at the floor,
/// training stops when `2·patience` epochs have passed since both the best
/// epoch and the last reduction.
pub fn train(
    model: &mut BagModel,
    train_src: &dyn ExampleSource,
    val_src: &dyn ExampleSource,
    schedule: &TrainSchedule,
) -> Result<TrainHistory> {
    schedule.validate()?;
    let val = val_src.examples(0)?;
    if val.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let mut hist = TrainHistory {
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut adam = AdamState::new(model.params.len());
    let mut lr = schedule.initial_lr;
    let mut best: Option<(Vec<f64>, Vec<RunningStats>)> = None;
    let mut wait = 0;
    let mut last_reduction = 0;
    let mut step: u64 = 0;
    let seed = model.rng_seed;

    for epoch in 0..schedule.max_epochs {
        let exs = train_src.examples(epoch)?;
        if exs.is_empty() {
            return Err(Error::InsufficientData {
                needed: 1,
                available: 0,
            });
        }
        if epoch == 0 && schedule.adapt_normalizer {
            let rows = normalizer_rows(model, &exs);
            model.adapt_normalizer(&rows)?;
        }
        let n_b = exs[0].bag.len();
        let bs = schedule.batch_size(n_b);
        let order = rng::permutation(
            exs.len(),
            rng::derive_seed(seed, "batch-order", epoch as u64),
            "order",
        );
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        let diverged = |hist: &TrainHistory| Error::TrainingDiverged {
            epoch,
            history: Box::new(hist.clone()),
        };
        for chunk in order.chunks(bs) {
            let batch: Vec<Example> = chunk.iter().map(|&i| exs[i].clone()).collect();
            let lg = loss_and_grad(model, &batch, rng::derive_seed(seed, "dropout-step", step))?;
            step += 1;
            if !lg.loss.is_finite() {
                return Err(diverged(&hist));
            }
            if adam.step(&mut model.params, &lg.grad, lr).is_err() {
                return Err(diverged(&hist));
            }
            blend(
                &mut model.running,
                &lg.batch_stats,
                model.config.bn_momentum,
            );
            loss_sum += lg.loss * batch.len() as f64;
            count += batch.len();
        }
        let val_loss = eval_loss(model, &val)?;
        if !val_loss.is_finite() {
            return Err(diverged(&hist));
        }
        hist.train_loss.push(loss_sum / count as f64);
        hist.val_loss.push(val_loss);
        hist.lr.push(lr);

        if val_loss < hist.best_val_loss {
            hist.best_val_loss = val_loss;
            hist.best_epoch = epoch;
            best = Some((model.params.clone(), model.running.clone()));
            wait = 0;
        } else {
            wait += 1;
            if wait >= schedule.patience && lr > schedule.min_lr {
                lr = (lr * schedule.lr_reduction_factor).max(schedule.min_lr);
                wait = 0;
                last_reduction = epoch;
            }
        }
        let quiet = epoch - hist.best_epoch.max(last_reduction);
        if lr <= schedule.min_lr && quiet >= 2 * schedule.patience {
            hist.stopped_early = true;
            break;
        }
    }
    if let Some((params, running)) = best {
        model.params = params;
        model.running = running;
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagnet::{HeadKind, ModelConfig};
    use crate::synthdata::{sample_events, EventFamily};

    #[test]
    fn batch_size_rule() {
        let s = TrainSchedule::default();
        assert_eq!(s.batch_size(250), 320);
        assert_eq!(s.batch_size(1), 80_000);
        assert_eq!(s.batch_size(100_000), 1);
    }

    #[test]
    fn lr_steps_reach_the_floor_in_two_reductions() {
        let s = TrainSchedule::default();
        let once = s.initial_lr * s.lr_reduction_factor;
        let twice = (once * s.lr_reduction_factor).max(s.min_lr);
        assert!(once > s.min_lr);
        assert!((twice - 1e-4).abs() < 1e-7);
    }

    fn toy_pools(n: usize, seed: u64) -> BagPools {
        let fam = EventFamily::gauss_shift();
        let neg = sample_events(&fam, -2.5, n, seed).unwrap();
        let pos = sample_events(&fam, 2.5, n, seed + 1).unwrap();
        BagPools::new(vec![BagPool::new(neg, 0), BagPool::new(pos, 1)], 1, seed)
    }

    #[test]
    fn separable_toy_reaches_bayes_accuracy() {
        // Means 5 apart at unit width: the Bayes accuracy is Φ(2.5) ≈ 0.9938.
        let (tr, va) = toy_pools(4000, 3).split(0.25, 1).unwrap();
        let mut m = BagModel::new(ModelConfig::new(1, HeadKind::BinarySigmoid), 7).unwrap();
        let sched = TrainSchedule {
            events_per_batch: 256,
            max_epochs: 40,
            patience: 3,
            ..Default::default()
        };
        let hist = train(&mut m, &tr, &va, &sched).unwrap();
        assert!(hist.epochs() > 0);
        let val = va.examples(0).unwrap();
        let items: Vec<_> = val.iter().map(|e| (&e.bag, None)).collect();
        let out = m.predict(&items).unwrap();
        let correct = out
            .iter()
            .zip(&val)
            .filter(|(o, e)| usize::from(o.probs[0] > 0.5) == e.label)
            .count();
        let acc = correct as f64 / val.len() as f64;
        assert!(acc > 0.99, "accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic() {
        let (tr, va) = toy_pools(600, 5).split(0.25, 2).unwrap();
        let sched = TrainSchedule {
            events_per_batch: 128,
            max_epochs: 3,
            ..Default::default()
        };
        let run = || {
            let mut m = BagModel::new(ModelConfig::new(1, HeadKind::BinarySigmoid), 1).unwrap();
            let h = train(&mut m, &tr, &va, &sched).unwrap();
            (m, h)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn dynamic_pools_regroup_each_epoch() {
        let fam = EventFamily::gauss_shift();
        let ev = sample_events(&fam, 0.0, 100, 0).unwrap();
        let dynamic = BagPools::new(vec![BagPool::new(ev.clone(), 0)], 10, 4);
        assert_ne!(dynamic.examples(0).unwrap(), dynamic.examples(1).unwrap());
        let fixed = dynamic.clone().fixed();
        assert_eq!(fixed.examples(0).unwrap(), fixed.examples(5).unwrap());
    }

    #[test]
    fn early_stop_and_best_weights() {
        // Pure noise: validation cannot improve for long, so the schedule
        // must reduce to the floor and stop well before max_epochs.
        let fam = EventFamily::gauss_shift();
        let a = sample_events(&fam, 0.0, 400, 1).unwrap();
        let b = sample_events(&fam, 0.0, 400, 2).unwrap();
        let pools = BagPools::new(vec![BagPool::new(a, 0), BagPool::new(b, 1)], 1, 0);
        let (tr, va) = pools.split(0.5, 3).unwrap();
        let mut cfg = ModelConfig::new(1, HeadKind::BinarySigmoid);
        cfg.width = 8;
        let mut m = BagModel::new(cfg, 2).unwrap();
        let sched = TrainSchedule {
            events_per_batch: 64,
            patience: 2,
            max_epochs: 200,
            initial_lr: 1e-2,
            min_lr: 1e-3,
            ..Default::default()
        };
        let h = train(&mut m, &tr, &va, &sched).unwrap();
        assert!(h.stopped_early);
        assert!(h.epochs() < 200);
        let val = va.examples(0).unwrap();
        let restored = eval_loss(&m, &val).unwrap();
        assert!((restored - h.best_val_loss).abs() < 1e-12);
        assert_eq!(h.val_loss[h.best_epoch], h.best_val_loss);
        assert!(*h.lr.last().unwrap() <= sched.min_lr * (1.0 + 1e-12));
    }
}
