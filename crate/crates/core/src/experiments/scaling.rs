use serde::{Deserialize, Serialize};

use super::auc::roc_auc;
use super::config::{ExperimentConfig, StudyMode};
use super::ensemble::{Ensemble, MultiClassScorer, PnnScorer};
use super::pseudo::{
    ensemble_stability, fits, run_member_pseudo_experiments, run_pseudo_experiments, ChunkFit,
    MemberChunkFit, PseudoSpec, StabilityReport,
};
use super::queue::WorkQueue;
use crate::bagnet::{
    build_pnn_training_set, train, BagModel, BagPool, BagPools, HeadKind, ModelConfig,
    TrainSchedule,
};
use crate::error::{Error, Result};
use crate::inference::{
    confidence_interval, coverage, effective_fisher, fit_error_variance_model, mle_fisher_se,
    CalibrationRecord, OracleScorer, ProfileScorer,
};
use crate::rng::derive_seed;
use crate::stats::{mean, sample_std};
use crate::synthdata::{
    background_count, contaminate, make_bags, sample_background, sample_events, Bag, EventSet,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Error-variance model fitted across bag sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AnsatzKind {
    None,
    /// `σ²_ε = C·√N_B`.
    #[default]
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointStatus {
    Ok,
    /// Some models or pseudo-experiments failed; aggregates use the rest.
    Partial,
    Failed,
}

/// Test-set ROC-AUC at one (bag size, contamination) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucPoint {
    pub n_b: usize,
    pub c_bkgrd: f64,
    pub n_background: usize,
    pub auc_mean: Option<f64>,
    /// Spread across model seeds.
    pub auc_std: Option<f64>,
    pub aucs: Vec<f64>,
    /// AUC of the exact summed LLR on the same test bags.
    pub oracle_auc: Option<f64>,
    pub test_bags_per_class: usize,
    pub models_failed: usize,
    pub status: PointStatus,
    pub errors: Vec<String>,
}

/// Calibration and coverage summary at one bag size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherPoint {
    pub n_b: usize,
    pub status: PointStatus,
    pub errors: Vec<String>,
    pub models_trained: usize,
    pub models_failed: usize,
    /// Exact information in the events one pseudo-experiment uses.
    pub i_true_chunk: f64,
    pub calibration: Option<CalibrationRecord>,
    /// Mean curvature information.
    pub i_eff_uncalibrated: Option<f64>,
    /// Curvature information after calibration, i.e. `I_MLE`.
    pub i_eff_calibrated: Option<f64>,
    /// Chunk-to-chunk spread of the curvature information.
    pub i_curv_std: Option<f64>,
    pub i_mle_se: Option<f64>,
    pub coverage_uncalibrated: Option<f64>,
    pub coverage_calibrated: Option<f64>,
    pub n_holdout: usize,
    pub bias: Option<f64>,
    pub fit_mse: Option<f64>,
    pub stability: Option<StabilityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzPoint {
    pub n_b: usize,
    /// Calibrated information rescaled to a full chunk.
    pub i_eff: f64,
    /// The same quantity predicted by the fitted model.
    pub i_eff_model: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzFit {
    pub kind: AnsatzKind,
    pub c: Option<f64>,
    pub delta_theta: f64,
    pub i_event: f64,
    pub i_true_chunk: f64,
    pub points: Vec<AnsatzPoint>,
    pub error: Option<String>,
}

/// Ensemble probability against θ for one held-out bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityCurve {
    pub n_b: usize,
    pub bag: usize,
    pub probs: Vec<f64>,
}

/// Everything a study produces. The embedded config makes it self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub schema_version: u32,
    pub mode: StudyMode,
    pub config: ExperimentConfig,
    pub grid: Vec<f64>,
    pub binary: Vec<AucPoint>,
    pub fisher: Vec<FisherPoint>,
    pub oracle: Vec<FisherPoint>,
    pub ansatz: Option<AnsatzFit>,
    pub curves: Vec<ProbabilityCurve>,
    pub flags: Vec<String>,
}

impl ScalingReport {
    fn empty(config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            mode: config.experiment.mode,
            config: config.clone(),
            grid: config.grid()?,
            binary: Vec::new(),
            fisher: Vec::new(),
            oracle: Vec::new(),
            ansatz: None,
            curves: Vec::new(),
            flags: Vec::new(),
        })
    }
}

/// Run the study selected by `config.experiment.mode`.
pub fn run_study(config: &ExperimentConfig, queue: &WorkQueue) -> Result<ScalingReport> {
    match config.experiment.mode {
        StudyMode::Binary => run_binary_scaling(config, queue),
        StudyMode::MultiClass => run_multiclass_fisher_scan(config, queue),
        StudyMode::Pnn => run_pnn_scan(config, queue),
    }
}

fn expect_mode(config: &ExperimentConfig, mode: StudyMode) -> Result<()> {
    config.validate()?;
    if config.experiment.mode != mode {
        return Err(Error::Config(format!(
            "study needs mode {mode:?}, config has {:?}",
            config.experiment.mode
        )));
    }
    Ok(())
}

/// Train one model, retrying once with a derived seed. Divergence or a
/// non-finite validation loss counts as a failure.
pub fn train_with_retry(
    config: &ModelConfig,
    schedule: &TrainSchedule,
    train_src: &BagPools,
    val_src: &BagPools,
    seed: u64,
) -> std::result::Result<BagModel, String> {
    let attempt = |s: u64| -> Result<BagModel> {
        let mut model = BagModel::new(*config, s)?;
        let h = train(&mut model, train_src, val_src, schedule)?;
        if !h.best_val_loss.is_finite() {
            return Err(Error::InvalidValue(format!(
                "validation loss {}",
                h.best_val_loss
            )));
        }
        Ok(model)
    };
    match attempt(seed) {
        Ok(m) => Ok(m),
        Err(first) => attempt(derive_seed(seed, "retry", 0))
            .map_err(|second| format!("{first}; retry: {second}")),
    }
}

fn bag_sizes_with_baseline(config: &ExperimentConfig) -> Vec<usize> {
    let mut sizes = config.experiment.bag_sizes.clone();
    sizes.push(1);
    sizes.sort_unstable();
    sizes.dedup();
    sizes
}

fn sorted_bag_sizes(config: &ExperimentConfig) -> Vec<usize> {
    let mut sizes = config.experiment.bag_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
}

/// Background for `signal_events` events cut into bags of `n_signal`,
/// with a margin so an event-level split leaves enough on both sides.
fn background_for(
    c: f64,
    n_signal: usize,
    signal_events: usize,
    dim: usize,
    seed: u64,
) -> Result<Option<EventSet>> {
    let n_bkg = background_count(c, n_signal);
    if n_bkg == 0 {
        return Ok(None);
    }
    sample_background(dim, n_bkg * (signal_events / n_signal + 4), seed).map(Some)
}

fn labeled_bags(
    signal: &EventSet,
    background: Option<&EventSet>,
    c: f64,
    n_signal: usize,
    seed: u64,
) -> Result<Vec<Bag>> {
    match background {
        Some(b) => contaminate(signal, b, c, n_signal, seed),
        None => make_bags(signal, n_signal, seed),
    }
}

/// Seed shared by everything trained at one (bag size, contamination) point.
pub fn point_seed(config: &ExperimentConfig, n_b: usize, c_bkgrd: f64) -> u64 {
    let tag = match config.experiment.mode {
        StudyMode::Binary => "binary-point",
        StudyMode::MultiClass => "mc-point",
        StudyMode::Pnn => "pnn-point",
    };
    derive_seed(
        derive_seed(config.experiment.master_seed, tag, n_b as u64),
        "c-bkgrd",
        c_bkgrd.to_bits(),
    )
}

/// Initialization seed of ensemble member `m` at a point.
pub fn member_seed(config: &ExperimentConfig, n_b: usize, c_bkgrd: f64, m: usize) -> u64 {
    derive_seed(point_seed(config, n_b, c_bkgrd), "model", m as u64)
}

/// Output head the configured study trains.
pub fn study_head(config: &ExperimentConfig) -> Result<HeadKind> {
    Ok(match config.experiment.mode {
        StudyMode::Binary => HeadKind::BinarySigmoid,
        StudyMode::MultiClass => HeadKind::MultiClassSoftmax {
            classes: config.grid()?.len(),
        },
        StudyMode::Pnn => HeadKind::ParamBinary,
    })
}

/// Training and validation pools for one point of the configured study.
/// Contamination applies to binary studies only.
pub fn study_pools(
    config: &ExperimentConfig,
    n_b: usize,
    c_bkgrd: f64,
) -> Result<(BagPools, BagPools)> {
    let e = &config.experiment;
    let family = config.family();
    let pseed = point_seed(config, n_b, c_bkgrd);
    let pools = match e.mode {
        StudyMode::Binary => {
            let mut pools = Vec::with_capacity(2);
            for (k, theta) in [e.theta0, e.theta_alt].into_iter().enumerate() {
                let k64 = k as u64;
                let ev = sample_events(
                    &family,
                    theta,
                    e.events_per_class,
                    derive_seed(e.master_seed, "binary-train", k64),
                )?;
                let bkg = background_for(
                    c_bkgrd,
                    n_b,
                    ev.len(),
                    family.dim_total(),
                    derive_seed(pseed, "train-bkg", k64),
                )?;
                let pool = BagPool::new(ev, k);
                pools.push(match bkg {
                    Some(b) => pool.with_background(b, c_bkgrd),
                    None => pool,
                });
            }
            pools
        }
        StudyMode::MultiClass => config
            .grid()?
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let ev = sample_events(
                    &family,
                    t,
                    e.events_per_class,
                    derive_seed(e.master_seed, "mc-events", k as u64),
                )?;
                Ok(BagPool::new(ev, k))
            })
            .collect::<Result<_>>()?,
        StudyMode::Pnn => {
            build_pnn_training_set(
                &family,
                &config.grid()?,
                e.events_per_class,
                derive_seed(e.master_seed, "pnn-set", 0),
            )?
            .pools
        }
    };
    let mut all = BagPools::new(pools, n_b, derive_seed(pseed, "bags", 0));
    all.dynamic = config.schedule.dynamic_bags;
    all.split(config.synthdata.val_frac, derive_seed(pseed, "split", 0))
}

/// Independent test bags of a binary point with labels 0 (θ0) and 1 (θ_alt).
pub fn binary_test_bags(
    config: &ExperimentConfig,
    n_b: usize,
    c_bkgrd: f64,
) -> Result<(Vec<Bag>, Vec<u8>)> {
    let e = &config.experiment;
    let family = config.family();
    let pseed = point_seed(config, n_b, c_bkgrd);
    let n_test = e.test_events_per_class.unwrap_or_else(|| {
        ((e.events_per_class as f64 * config.synthdata.test_frac).round() as usize).max(1)
    });
    let mut bags = Vec::new();
    let mut labels = Vec::new();
    for (k, theta) in [e.theta0, e.theta_alt].into_iter().enumerate() {
        let k64 = k as u64;
        let ev = sample_events(
            &family,
            theta,
            n_test,
            derive_seed(e.master_seed, "binary-test", k64),
        )?;
        let bkg = background_for(
            c_bkgrd,
            n_b,
            ev.len(),
            family.dim_total(),
            derive_seed(pseed, "test-bkg", k64),
        )?;
        let b = labeled_bags(
            &ev,
            bkg.as_ref(),
            c_bkgrd,
            n_b,
            derive_seed(pseed, "test-bags", k64),
        )?;
        labels.extend(std::iter::repeat_n(k as u8, b.len()));
        bags.extend(b);
    }
    Ok((bags, labels))
}

/// SM-vs-alternative classifiers at every (N_B, c_bkgrd), always including
/// the single-event baseline. Each point trains `n_models` seeds on the same
/// events and reports the seed spread of the test AUC.
pub fn run_binary_scaling(config: &ExperimentConfig, queue: &WorkQueue) -> Result<ScalingReport> {
    expect_mode(config, StudyMode::Binary)?;
    let e = &config.experiment;
    let points: Vec<(usize, f64)> = bag_sizes_with_baseline(config)
        .into_iter()
        .flat_map(|n| e.background_fracs.iter().map(move |&c| (n, c)))
        .collect();
    let n_models = config.n_models();
    let model_cfg = config.model_config(HeadKind::BinarySigmoid);
    let oracle = OracleScorer::new(config.family());

    // One task per (point, model); model 0 of every point also scores the oracle.
    type TaskOut = (
        std::result::Result<f64, String>,
        Option<std::result::Result<f64, String>>,
        usize,
    );
    let tasks: Vec<TaskOut> = queue.map(points.len() * n_models, |t| {
        let (p, m) = (t / n_models, t % n_models);
        let (n_b, c) = points[p];
        let prepared =
            binary_test_bags(config, n_b, c).and_then(|t| Ok((t, study_pools(config, n_b, c)?)));
        let ((test_bags, labels), (tr, va)) = match prepared {
            Ok(x) => x,
            Err(err) => {
                return (
                    Err(err.to_string()),
                    (m == 0).then(|| Err(err.to_string())),
                    0,
                )
            }
        };
        let items: Vec<(&Bag, Option<f64>)> = test_bags.iter().map(|b| (b, None)).collect();
        let learned = train_with_retry(
            &model_cfg,
            &config.schedule,
            &tr,
            &va,
            member_seed(config, n_b, c, m),
        )
        .and_then(|model| model.logits_eval(&items).map_err(|e| e.to_string()))
        .and_then(|scores| roc_auc(&scores, &labels).map_err(|e| e.to_string()));
        let oracle_auc = (m == 0).then(|| {
            let scores: Vec<f64> = test_bags
                .iter()
                .map(|b| oracle.bag_llr(b, e.theta_alt, e.theta0))
                .collect();
            roc_auc(&scores, &labels).map_err(|e| e.to_string())
        });
        (learned, oracle_auc, labels.len() / 2)
    });

    let mut report = ScalingReport::empty(config)?;
    for (p, &(n_b, c)) in points.iter().enumerate() {
        let outs = &tasks[p * n_models..(p + 1) * n_models];
        let aucs: Vec<f64> = outs
            .iter()
            .filter_map(|o| o.0.as_ref().ok().copied())
            .collect();
        let errors: Vec<String> = outs
            .iter()
            .enumerate()
            .filter_map(|(m, o)| o.0.as_ref().err().map(|e| format!("model {m}: {e}")))
            .collect();
        let oracle_auc = match &outs[0].1 {
            Some(Ok(a)) => Some(*a),
            _ => None,
        };
        report.binary.push(AucPoint {
            n_b,
            c_bkgrd: c,
            n_background: background_count(c, n_b),
            auc_mean: (!aucs.is_empty()).then(|| mean(&aucs)),
            auc_std: (aucs.len() > 1).then(|| sample_std(&aucs)),
            test_bags_per_class: outs[0].2,
            models_failed: errors.len(),
            status: status_of(aucs.len(), errors.len()),
            oracle_auc,
            aucs,
            errors,
        });
    }
    report.flags = binary_flags(&report.binary);
    Ok(report)
}

fn status_of(ok: usize, failed: usize) -> PointStatus {
    match (ok, failed) {
        (0, _) => PointStatus::Failed,
        (_, 0) => PointStatus::Ok,
        _ => PointStatus::Partial,
    }
}

/// AUC more than 0.02 below a smaller bag size at the same contamination.
fn binary_flags(points: &[AucPoint]) -> Vec<String> {
    let mut flags = Vec::new();
    for p in points {
        if p.status == PointStatus::Failed {
            flags.push(format!("failed point N_B={} c_bkgrd={}", p.n_b, p.c_bkgrd));
        }
    }
    for a in points {
        for b in points {
            if a.c_bkgrd == b.c_bkgrd && a.n_b < b.n_b {
                if let (Some(x), Some(y)) = (a.auc_mean, b.auc_mean) {
                    if x > y + 0.02 {
                        flags.push(format!(
                            "AUC drops from {x:.4} at N_B={} to {y:.4} at N_B={} (c_bkgrd={})",
                            a.n_b, b.n_b, a.c_bkgrd
                        ));
                    }
                }
            }
        }
    }
    flags
}

fn pseudo_specs(config: &ExperimentConfig, n_b: usize) -> Result<(PseudoSpec, PseudoSpec)> {
    let e = &config.experiment;
    let base = PseudoSpec {
        family: config.family(),
        theta_true: e.theta_true,
        chunk_events: e.chunk_events,
        n_b,
        n_pseudo: e.n_pseudo,
        grid: config.grid()?,
        theta0: e.theta0,
        window: config.window(n_b),
        seed: derive_seed(e.master_seed, "calibration", n_b as u64),
    };
    let holdout = PseudoSpec {
        n_pseudo: config.n_pseudo_holdout(),
        seed: derive_seed(e.master_seed, "holdout", n_b as u64),
        ..base.clone()
    };
    Ok((base, holdout))
}

const MAX_ERRORS: usize = 10;

fn chunk_errors(label: &str, chunks: &[ChunkFit], errors: &mut Vec<String>) {
    let failed: Vec<&ChunkFit> = chunks.iter().filter(|c| c.error.is_some()).collect();
    for c in failed.iter().take(MAX_ERRORS) {
        errors.push(format!(
            "{label} chunk {}: {}",
            c.chunk,
            c.error.as_deref().unwrap_or("")
        ));
    }
    if failed.len() > MAX_ERRORS {
        errors.push(format!(
            "{label}: {} more failed chunks",
            failed.len() - MAX_ERRORS
        ));
    }
}

/// Calibrate on one batch and measure coverage on the other.
pub fn summarize_point(
    n_b: usize,
    i_true_chunk: f64,
    calibration: &[ChunkFit],
    holdout: &[ChunkFit],
    theta_true: f64,
) -> FisherPoint {
    let mut errors = Vec::new();
    chunk_errors("calibration", calibration, &mut errors);
    chunk_errors("holdout", holdout, &mut errors);
    let cal_fits = fits(calibration);
    let valid: Vec<_> = cal_fits.iter().filter(|f| f.is_valid()).collect();
    let curvs: Vec<f64> = valid.iter().map(|f| f.i_curv).collect();
    let mses: Vec<f64> = valid.iter().map(|f| f.fit_mse).collect();
    let record = CalibrationRecord::from_fits(&cal_fits, theta_true)
        .map_err(|e| errors.push(format!("calibration: {e}")))
        .ok();
    let hold: Vec<_> = fits(holdout).into_iter().filter(|f| f.is_valid()).collect();
    let cover = |f: &dyn Fn(&crate::inference::ParabolaFit) -> Result<(f64, f64)>| -> Option<f64> {
        let iv: Vec<(f64, f64)> = hold.iter().filter_map(|h| f(h).ok()).collect();
        coverage(&iv, theta_true).ok().map(|c| c.coverage)
    };
    let coverage_uncalibrated = cover(&|h| confidence_interval(h, 1.0));
    let coverage_calibrated = record.as_ref().and_then(|r| cover(&|h| r.interval(h)));
    let failed = calibration.iter().chain(holdout).any(|c| c.error.is_some());
    let status = match (&record, coverage_calibrated, failed) {
        (None, _, _) | (_, None, _) => PointStatus::Failed,
        (_, _, true) => PointStatus::Partial,
        _ => PointStatus::Ok,
    };
    FisherPoint {
        n_b,
        status,
        errors,
        models_trained: 0,
        models_failed: 0,
        i_true_chunk,
        i_eff_uncalibrated: record.as_ref().map(|r| r.i_curv_mean),
        i_eff_calibrated: record.as_ref().map(|r| r.i_mle),
        i_curv_std: (curvs.len() > 1).then(|| sample_std(&curvs)),
        i_mle_se: record.as_ref().map(|r| mle_fisher_se(r.i_mle, r.n_pseudo)),
        coverage_uncalibrated,
        coverage_calibrated,
        n_holdout: hold.len(),
        bias: record.as_ref().map(|r| r.bias_hat),
        fit_mse: (!mses.is_empty()).then(|| mean(&mses)),
        calibration: record,
        stability: None,
    }
}

/// Exact-likelihood calibration and coverage at every bag size.
pub fn oracle_points(config: &ExperimentConfig, queue: &WorkQueue) -> Result<Vec<FisherPoint>> {
    let oracle = OracleScorer::new(config.family());
    sorted_bag_sizes(config)
        .into_iter()
        .map(|n_b| scored_point(config, n_b, &oracle, queue))
        .collect()
}

fn scored_point(
    config: &ExperimentConfig,
    n_b: usize,
    scorer: &dyn ProfileScorer,
    queue: &WorkQueue,
) -> Result<FisherPoint> {
    let (cal, hold) = pseudo_specs(config, n_b)?;
    let c = run_pseudo_experiments(scorer, &cal, queue)?;
    let h = run_pseudo_experiments(scorer, &hold, queue)?;
    Ok(summarize_point(
        n_b,
        cal.chunk_information(),
        &c,
        &h,
        cal.theta_true,
    ))
}

type MemberFn<'a> =
    dyn Fn(&[Bag], &[f64], f64) -> Result<crate::experiments::MemberProfiles> + Sync + 'a;

fn learned_point(
    config: &ExperimentConfig,
    n_b: usize,
    scorer: &dyn ProfileScorer,
    members: &MemberFn<'_>,
    queue: &WorkQueue,
) -> Result<FisherPoint> {
    let (cal, hold) = pseudo_specs(config, n_b)?;
    let c: Vec<MemberChunkFit> = run_member_pseudo_experiments(members, &cal, queue)?;
    let stability = ensemble_stability(&c).ok();
    let c: Vec<ChunkFit> = c.into_iter().map(ChunkFit::from).collect();
    let h = run_pseudo_experiments(scorer, &hold, queue)?;
    let mut point = summarize_point(n_b, cal.chunk_information(), &c, &h, cal.theta_true);
    point.stability = stability;
    Ok(point)
}

fn failed_point(n_b: usize, i_true_chunk: f64, trained: usize, errors: Vec<String>) -> FisherPoint {
    FisherPoint {
        n_b,
        status: PointStatus::Failed,
        models_failed: errors.len().max(1),
        errors,
        models_trained: trained,
        i_true_chunk,
        calibration: None,
        i_eff_uncalibrated: None,
        i_eff_calibrated: None,
        i_curv_std: None,
        i_mle_se: None,
        coverage_uncalibrated: None,
        coverage_calibrated: None,
        n_holdout: 0,
        bias: None,
        fit_mse: None,
        stability: None,
    }
}

/// Per bag size: the members that trained and the errors of those that did not.
type SizeEnsembles = Vec<(usize, Vec<BagModel>, Vec<String>)>;

/// Train `n_models` per bag size, in parallel across all sizes.
fn train_ensembles(config: &ExperimentConfig, queue: &WorkQueue) -> Result<SizeEnsembles> {
    let sizes = sorted_bag_sizes(config);
    let n_models = config.n_models();
    let model_cfg = config.model_config(study_head(config)?);
    let outs: Vec<std::result::Result<BagModel, String>> = queue.map(sizes.len() * n_models, |t| {
        let (p, m) = (t / n_models, t % n_models);
        let n_b = sizes[p];
        let (tr, va) = study_pools(config, n_b, 0.0).map_err(|e| e.to_string())?;
        train_with_retry(
            &model_cfg,
            &config.schedule,
            &tr,
            &va,
            member_seed(config, n_b, 0.0, m),
        )
    });
    let mut outs = outs.into_iter();
    Ok(sizes
        .iter()
        .map(|&n_b| {
            let mut models = Vec::new();
            let mut errors = Vec::new();
            for (m, o) in outs.by_ref().take(n_models).enumerate() {
                match o {
                    Ok(model) => models.push(model),
                    Err(e) => errors.push(format!("model {m}: {e}")),
                }
            }
            (n_b, models, errors)
        })
        .collect())
}

/// Multi-class ensembles (one class per grid θ) at every bag size, with
/// calibration, held-out coverage, ensemble stability and the error-variance
/// ansatz. The exact-likelihood scorer runs the same pseudo-experiments when
/// `oracle_pass` is set.
pub fn run_multiclass_fisher_scan(
    config: &ExperimentConfig,
    queue: &WorkQueue,
) -> Result<ScalingReport> {
    expect_mode(config, StudyMode::MultiClass)?;
    let e = &config.experiment;
    let grid = config.grid()?;
    let trained = train_ensembles(config, queue)?;

    let mut report = ScalingReport::empty(config)?;
    for (n_b, models, errors) in trained {
        let i_true = pseudo_specs(config, n_b)?.0.chunk_information();
        let n_ok = models.len();
        if models.is_empty() {
            report.fisher.push(failed_point(n_b, i_true, 0, errors));
            continue;
        }
        let scorer = MultiClassScorer::new(Ensemble::new(models, e.averaging)?, grid.clone())?;
        let members = |b: &[Bag], g: &[f64], t0: f64| scorer.member_profiles(b, g, t0);
        let mut point = learned_point(config, n_b, &scorer, &members, queue)?;
        point.models_trained = n_ok;
        point.models_failed = errors.len();
        if !errors.is_empty() && point.status == PointStatus::Ok {
            point.status = PointStatus::Partial;
        }
        point.errors.splice(0..0, errors);
        report.fisher.push(point);
    }
    finish_fisher_report(config, &mut report, queue)?;
    Ok(report)
}

/// Parameterized-classifier ensembles at every bag size. Adds per-bag
/// probability curves and flags irregular curvature scaling.
pub fn run_pnn_scan(config: &ExperimentConfig, queue: &WorkQueue) -> Result<ScalingReport> {
    expect_mode(config, StudyMode::Pnn)?;
    let e = &config.experiment;
    let grid = config.grid()?;
    let trained = train_ensembles(config, queue)?;

    let mut report = ScalingReport::empty(config)?;
    for (n_b, models, errors) in trained {
        let (_, hold) = pseudo_specs(config, n_b)?;
        let i_true = hold.chunk_information();
        let n_ok = models.len();
        if models.is_empty() {
            report.fisher.push(failed_point(n_b, i_true, 0, errors));
            continue;
        }
        let scorer = PnnScorer::new(Ensemble::new(models, e.averaging)?)?;
        let members = |b: &[Bag], g: &[f64], t0: f64| scorer.member_profiles(b, g, t0);
        let mut point = learned_point(config, n_b, &scorer, &members, queue)?;
        point.models_trained = n_ok;
        point.models_failed = errors.len();
        if !errors.is_empty() && point.status == PointStatus::Ok {
            point.status = PointStatus::Partial;
        }
        point.errors.splice(0..0, errors);
        report.fisher.push(point);

        let bags = hold.chunk_bags(0)?;
        for (j, bag) in bags.iter().take(e.curves_per_point).enumerate() {
            report.curves.push(ProbabilityCurve {
                n_b,
                bag: j,
                probs: scorer.probability_curve(bag, &grid)?,
            });
        }
    }
    finish_fisher_report(config, &mut report, queue)?;
    Ok(report)
}

fn finish_fisher_report(
    config: &ExperimentConfig,
    report: &mut ScalingReport,
    queue: &WorkQueue,
) -> Result<()> {
    if config.experiment.oracle_pass {
        report.oracle = oracle_points(config, queue)?;
    }
    if config.experiment.ansatz == AnsatzKind::Sqrt {
        report.ansatz = Some(fit_ansatz(config, &report.fisher));
    }
    report.flags = fisher_flags(&report.fisher);
    Ok(())
}

/// Fit `σ²_ε = C·√N_B` to the calibrated information of every usable point.
/// Each point is rescaled to the information of a full chunk first, since
/// bag sizes that do not divide the chunk use fewer events.
pub fn fit_ansatz(config: &ExperimentConfig, points: &[FisherPoint]) -> AnsatzFit {
    let family = config.family();
    let e = &config.experiment;
    let i_event = family.true_fisher(e.theta_true);
    let i_true_chunk = e.chunk_events as f64 * i_event;
    let delta_theta = config.inference.grid_step;
    let pts: Vec<(usize, f64)> = points
        .iter()
        .filter_map(|p| {
            let used = (e.chunk_events / p.n_b) * p.n_b;
            Some((
                p.n_b,
                p.i_eff_calibrated? * e.chunk_events as f64 / used as f64,
            ))
        })
        .collect();
    let fitted = fit_error_variance_model(&pts, i_true_chunk, i_event, delta_theta);
    let c = fitted.as_ref().ok().copied();
    AnsatzFit {
        kind: AnsatzKind::Sqrt,
        c,
        delta_theta,
        i_event,
        i_true_chunk,
        points: pts
            .iter()
            .map(|&(n_b, i_eff)| AnsatzPoint {
                n_b,
                i_eff,
                i_eff_model: c.and_then(|c| {
                    let s2 = c * (n_b as f64).sqrt();
                    effective_fisher(i_true_chunk, n_b as f64 * i_event, s2, delta_theta).ok()
                }),
            })
            .collect(),
        error: fitted.err().map(|e| e.to_string()),
    }
}

/// Failed points, calibrated information that falls with bag size by more
/// than two standard errors, and curvature that collapses below a tenth of
/// its best value.
fn fisher_flags(points: &[FisherPoint]) -> Vec<String> {
    let mut flags = Vec::new();
    for p in points.iter().filter(|p| p.status == PointStatus::Failed) {
        flags.push(format!("failed point N_B={}", p.n_b));
    }
    let ok: Vec<&FisherPoint> = points
        .iter()
        .filter(|p| p.i_eff_calibrated.is_some())
        .collect();
    for w in ok.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ia, ib) = (
            a.i_eff_calibrated.unwrap_or(0.0),
            b.i_eff_calibrated.unwrap_or(0.0),
        );
        let se = a.i_mle_se.unwrap_or(0.0).hypot(b.i_mle_se.unwrap_or(0.0));
        if ib < ia - 2.0 * se {
            flags.push(format!(
                "non-monotone information: {ia:.1} at N_B={} then {ib:.1} at N_B={}",
                a.n_b, b.n_b
            ));
        }
    }
    let best = ok
        .iter()
        .filter_map(|p| p.i_eff_uncalibrated)
        .fold(0.0, f64::max);
    for p in &ok {
        if let Some(i) = p.i_eff_uncalibrated {
            if i < 0.1 * best {
                flags.push(format!(
                    "collapsed curvature at N_B={}: {i:.2} vs best {best:.2}",
                    p.n_b
                ));
            }
        }
    }
    flags
}
