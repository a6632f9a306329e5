use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use amil_core::bagnet::{train, BagModel, HeadKind, TrainHistory};
use amil_core::experiments::{
    fits, member_seed, run_pseudo_experiments, run_study, study_head, study_pools, ChunkFit,
    Ensemble, ExperimentConfig, MultiClassScorer, PnnScorer, PseudoSpec, StudyMode, WorkQueue,
};
use amil_core::inference::{
    confidence_interval, coverage, llr_profile, parabola_fit, CalibrationRecord, LLRProfile,
    NoisyOracleScorer, OracleScorer, ParabolaFit, ProfileScorer, COVERAGE_TARGET,
};
use amil_core::persistence::{
    load_checkpoint, read_document, save_checkpoint, to_canonical_json, write_document,
    write_report, RunDir, RunManifest,
};
use amil_core::rng::derive_seed;
use amil_core::synthdata::io::{load_events, save_events, write_events_csv};
use amil_core::synthdata::{
    background_count, bag_indices, contamination_indices, make_bags, sample_background,
    sample_events, EventFamily, EventSource,
};
use amil_core::Error;

use crate::{
    CalibrateArgs, Cli, CliError, Command, CoverageArgs, GenerateArgs, ScalingArgs, ScanArgs,
    ScorerArgs, TrainArgs,
};

type CliResult<T> = std::result::Result<T, CliError>;

/// Execute a parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    let queue = WorkQueue::new(cli.workers)?;
    let name = match &cli.command {
        Command::Generate(_) => "generate",
        Command::Train(_) => "train",
        Command::Scan(_) => "scan",
        Command::Calibrate(_) => "calibrate",
        Command::Coverage(_) => "coverage",
        Command::Scaling(_) => "scaling",
    };
    let run_id = cli.run_id.clone().unwrap_or_else(|| name.to_string());
    let run = RunDir::create(&cli.out.join(&run_id))?;
    let ctx = Ctx {
        run,
        run_id,
        name,
        queue,
    };
    match &cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Scan(a) => scan(&ctx, a),
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::Coverage(a) => coverage_cmd(&ctx, a),
        Command::Scaling(a) => scaling(&ctx, a),
    }
}

struct Ctx {
    run: RunDir,
    run_id: String,
    name: &'static str,
    queue: WorkQueue,
}

impl Ctx {
    fn manifest(&self, config_text: &str) -> RunManifest {
        RunManifest::new(&self.run_id, self.name, config_text)
    }

    /// Record every written file, save the manifest and list the outputs.
    fn finish(&self, manifest: &mut RunManifest, files: &[PathBuf]) -> CliResult<()> {
        for f in files {
            manifest.record(&self.run, f)?;
        }
        manifest.save(&self.run)?;
        for f in files {
            println!("wrote {}", f.display());
        }
        println!("wrote {}", self.run.manifest().display());
        Ok(())
    }

    fn write_config(&self, cfg: &ExperimentConfig) -> CliResult<(PathBuf, String)> {
        let text = cfg.to_toml_string()?;
        let path = self.run.root.join("config.toml");
        std::fs::write(&path, &text)?;
        Ok((path, text))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BagIndex {
    signal: Vec<usize>,
    background: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BagIndexFile {
    n_signal_per_bag: usize,
    n_background_per_bag: usize,
    c_bkgrd: f64,
    shuffle_seed: u64,
    bags: Vec<BagIndex>,
}

fn generate(ctx: &Ctx, a: &GenerateArgs) -> CliResult<()> {
    if a.c_bkgrd != 0.0 && a.nb.is_none() {
        return Err(CliError::config("--c-bkgrd needs --nb"));
    }
    let family = EventFamily::with_dims(a.family.into(), a.dim, a.nuisance);
    let events = sample_events(&family, a.theta, a.n, a.seed)?;
    let data = ctx.run.data();
    let mut files = vec![data.join("events.amil")];
    save_events(&events, &files[0])?;
    if a.csv {
        let p = data.join("events.csv");
        write_events_csv(&events, std::fs::File::create(&p)?)?;
        files.push(p);
    }
    let args_text = to_canonical_json(a)?;
    let mut manifest = ctx.manifest(&args_text);
    manifest.seed("events", a.seed);
    if let Some(nb) = a.nb {
        let shuffle_seed = derive_seed(a.seed, "bags", 0);
        manifest.seed("bags", shuffle_seed);
        let n_bkg = background_count(a.c_bkgrd, nb);
        let bags: Vec<BagIndex> = if n_bkg > 0 {
            let bkg_seed = derive_seed(a.seed, "background", 0);
            manifest.seed("background", bkg_seed);
            let bkg = sample_background(family.dim_total(), (a.n / nb) * n_bkg, bkg_seed)?;
            let p = data.join("background.amil");
            save_events(&bkg, &p)?;
            files.push(p);
            contamination_indices(a.n, bkg.len(), a.c_bkgrd, nb, shuffle_seed)?
                .into_iter()
                .map(|(signal, background)| BagIndex { signal, background })
                .collect()
        } else {
            bag_indices(a.n, nb, shuffle_seed)?
                .into_iter()
                .map(|signal| BagIndex {
                    signal,
                    background: Vec::new(),
                })
                .collect()
        };
        let p = data.join("bags.json");
        let index = BagIndexFile {
            n_signal_per_bag: nb,
            n_background_per_bag: n_bkg,
            c_bkgrd: a.c_bkgrd,
            shuffle_seed,
            bags,
        };
        write_document("bag-index", &index, &p)?;
        files.push(p);
    }
    let p = ctx.run.root.join("config.json");
    std::fs::write(&p, &args_text)?;
    files.push(p);
    ctx.finish(&mut manifest, &files)
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> CliResult<()> {
    let cfg = a.config.resolve(StudyMode::MultiClass)?;
    let n_b = a.nb.unwrap_or(cfg.experiment.bag_sizes[0]);
    let c = match cfg.experiment.mode {
        StudyMode::Binary => a.c_bkgrd.unwrap_or(cfg.experiment.background_fracs[0]),
        _ if a.c_bkgrd.is_some_and(|c| c != 0.0) => {
            return Err(CliError::config(
                "--c-bkgrd applies to binary training only",
            ));
        }
        _ => 0.0,
    };
    let k = a.seeds.unwrap_or_else(|| cfg.n_models());
    if k == 0 {
        return Err(CliError::config("--seeds must be positive"));
    }
    let (cfg_path, cfg_text) = ctx.write_config(&cfg)?;
    let mut manifest = ctx.manifest(&cfg_text);
    manifest.seed("master", cfg.experiment.master_seed);
    let (tr, va) = study_pools(&cfg, n_b, c)?;
    let model_cfg = cfg.model_config(study_head(&cfg)?);

    let results: Vec<(Option<BagModel>, Option<TrainHistory>, Option<String>)> =
        ctx.queue.map(k, |m| {
            let seed = member_seed(&cfg, n_b, c, m);
            let mut model = match BagModel::new(model_cfg, seed) {
                Ok(model) => model,
                Err(e) => return (None, None, Some(e.to_string())),
            };
            match train(&mut model, &tr, &va, &cfg.schedule) {
                Ok(h) => (Some(model), Some(h), None),
                Err(Error::TrainingDiverged { epoch, history }) => (
                    None,
                    Some(*history),
                    Some(format!("training diverged in epoch {epoch}")),
                ),
                Err(e) => (None, None, Some(e.to_string())),
            }
        });

    let mut files = vec![cfg_path];
    let mut failures = Vec::new();
    for (m, (model, history, err)) in results.into_iter().enumerate() {
        manifest.seed(&format!("model-{m:02}"), member_seed(&cfg, n_b, c, m));
        if let Some(h) = history {
            let p = ctx.run.reports().join(format!("history-{m:02}.json"));
            write_document("train-history", &h, &p)?;
            files.push(p);
        }
        if let Some(model) = model {
            let p = ctx.run.checkpoints().join(format!("model-{m:02}.amck"));
            save_checkpoint(&model, &p)?;
            files.push(p);
        }
        if let Some(e) = err {
            failures.push(format!("model {m}: {e}"));
        }
    }
    ctx.finish(&mut manifest, &files)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::runtime(failures.join("\n")))
    }
}

fn apply_window(cfg: ExperimentConfig, window: Option<f64>) -> CliResult<ExperimentConfig> {
    match window {
        Some(w) => Ok(cfg.with_overrides(&[("inference.window".into(), w.to_string())])?),
        None => Ok(cfg),
    }
}

/// Describes the scorer in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScorerInfo {
    kind: String,
    checkpoints: Vec<String>,
    oracle_noise: Option<f64>,
}

fn build_scorer(
    a: &ScorerArgs,
    cfg: &ExperimentConfig,
    family: EventFamily,
) -> CliResult<(Box<dyn ProfileScorer>, ScorerInfo)> {
    if a.oracle {
        let info = ScorerInfo {
            kind: "oracle".into(),
            checkpoints: Vec::new(),
            oracle_noise: a.oracle_noise,
        };
        return Ok(match a.oracle_noise {
            Some(s2) => {
                let seed = derive_seed(cfg.experiment.master_seed, "oracle-noise", 0);
                (
                    Box::new(NoisyOracleScorer::new(
                        family,
                        s2,
                        cfg.inference.grid_step,
                        seed,
                    )?),
                    info,
                )
            }
            None => (Box::new(OracleScorer::new(family)), info),
        });
    }
    if a.checkpoint.is_empty() {
        return Err(CliError::config(
            "give --oracle or at least one --checkpoint",
        ));
    }
    let models = a
        .checkpoint
        .iter()
        .map(|p| load_checkpoint(p))
        .collect::<amil_core::Result<Vec<_>>>()?;
    let ensemble = Ensemble::new(models, cfg.experiment.averaging)?;
    let info = |kind: &str| ScorerInfo {
        kind: kind.into(),
        checkpoints: a
            .checkpoint
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        oracle_noise: None,
    };
    match ensemble.head() {
        HeadKind::MultiClassSoftmax { .. } => Ok((
            Box::new(MultiClassScorer::new(ensemble, cfg.grid()?)?),
            info("multi-class"),
        )),
        HeadKind::ParamBinary => Ok((Box::new(PnnScorer::new(ensemble)?), info("pnn"))),
        HeadKind::BinarySigmoid => Err(CliError::config(
            "a binary checkpoint scores one hypothesis pair and cannot build a profile",
        )),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileDoc {
    data: String,
    n_b: usize,
    n_bags: usize,
    scorer: ScorerInfo,
    window: f64,
    profile: LLRProfile,
    fit: Option<ParabolaFit>,
    fit_error: Option<String>,
}

fn scan(ctx: &Ctx, a: &ScanArgs) -> CliResult<()> {
    let cfg = apply_window(a.config.resolve(StudyMode::MultiClass)?, a.window)?;
    let events = load_events(&a.data)?;
    let family = match events.source {
        EventSource::Family(f) => f,
        EventSource::Background { .. } => cfg.family(),
    };
    let (scorer, info) = build_scorer(&a.scorer, &cfg, family)?;
    let shuffle_seed = derive_seed(cfg.experiment.master_seed, "scan-bags", 0);
    let bags = make_bags(&events, a.nb, shuffle_seed)?;
    let grid = cfg.grid()?;
    let profile = llr_profile(scorer.as_ref(), &bags, &grid, cfg.experiment.theta0)?;
    let window = cfg.window(a.nb);
    let fitted = parabola_fit(&profile, window);

    let (cfg_path, cfg_text) = ctx.write_config(&cfg)?;
    let mut manifest = ctx.manifest(&cfg_text);
    manifest.seed("bags", shuffle_seed);
    let doc = ProfileDoc {
        data: a.data.display().to_string(),
        n_b: a.nb,
        n_bags: bags.len(),
        scorer: info,
        window,
        fit: fitted.as_ref().ok().cloned(),
        fit_error: fitted.as_ref().err().map(|e| e.to_string()),
        profile,
    };
    let json = ctx.run.reports().join("profile.json");
    write_document("profile", &doc, &json)?;
    let dat = ctx.run.plotdata().join("profile.dat");
    std::fs::write(&dat, profile_plotdata(&doc))?;
    ctx.finish(&mut manifest, &[cfg_path, json, dat])?;
    match fitted {
        Ok(f) => {
            println!(
                "theta_hat {} i_curv {} status {:?}",
                f.theta_hat, f.i_curv, f.status
            );
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

fn profile_plotdata(doc: &ProfileDoc) -> String {
    let mut s = String::from("# theta neg2_llr parabola\n");
    let neg2 = doc.profile.neg2();
    for (t, y) in doc.profile.theta_grid.iter().zip(neg2) {
        let fit = doc
            .fit
            .as_ref()
            .map(|f| (f.i_curv * (t - f.theta_hat).powi(2) + f.offset).to_string())
            .unwrap_or_else(|| "NaN".into());
        let _ = writeln!(s, "{t} {y} {fit}");
    }
    s
}

fn pseudo_spec(
    cfg: &ExperimentConfig,
    n_b: usize,
    n_pseudo: usize,
    seed: u64,
) -> CliResult<PseudoSpec> {
    Ok(PseudoSpec {
        family: cfg.family(),
        theta_true: cfg.experiment.theta_true,
        chunk_events: cfg.experiment.chunk_events,
        n_b,
        n_pseudo,
        grid: cfg.grid()?,
        theta0: cfg.experiment.theta0,
        window: cfg.window(n_b),
        seed,
    })
}

fn chunk_failures(chunks: &[ChunkFit]) -> Vec<String> {
    chunks
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| format!("chunk {}: {e}", c.chunk)))
        .collect()
}

fn fits_csv(chunks: &[ChunkFit]) -> String {
    let mut s = String::from("chunk,theta_hat,i_curv,fit_mse,status\n");
    for c in chunks {
        match &c.fit {
            Some(f) => {
                let status = format!("{:?}", f.status);
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    c.chunk, f.theta_hat, f.i_curv, f.fit_mse, status
                );
            }
            None => {
                let _ = writeln!(s, "{},,,,error", c.chunk);
            }
        }
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationDoc {
    n_b: usize,
    seed: u64,
    chunk_events: usize,
    n_pseudo: usize,
    window: f64,
    scorer: ScorerInfo,
    record: CalibrationRecord,
    failed_chunks: Vec<String>,
}

fn calibrate(ctx: &Ctx, a: &CalibrateArgs) -> CliResult<()> {
    let mut cfg = apply_window(a.config.resolve(StudyMode::MultiClass)?, a.window)?;
    if let Some(n) = a.n_pseudo {
        cfg = cfg.with_overrides(&[("experiment.n_pseudo".into(), n.to_string())])?;
    }
    let n_b = a.nb.unwrap_or(cfg.experiment.bag_sizes[0]);
    let seed = a
        .calibration_seed
        .unwrap_or_else(|| derive_seed(cfg.experiment.master_seed, "calibration", n_b as u64));
    let (scorer, info) = build_scorer(&a.scorer, &cfg, cfg.family())?;
    let spec = pseudo_spec(&cfg, n_b, cfg.experiment.n_pseudo, seed)?;
    let chunks = run_pseudo_experiments(scorer.as_ref(), &spec, &ctx.queue)?;
    let record = CalibrationRecord::from_fits(&fits(&chunks), spec.theta_true)?;

    let (cfg_path, cfg_text) = ctx.write_config(&cfg)?;
    let mut manifest = ctx.manifest(&cfg_text);
    manifest.seed("calibration", seed);
    let doc = CalibrationDoc {
        n_b,
        seed,
        chunk_events: spec.chunk_events,
        n_pseudo: spec.n_pseudo,
        window: spec.window,
        scorer: info,
        failed_chunks: chunk_failures(&chunks),
        record,
    };
    let json = ctx.run.reports().join("calibration.json");
    write_document("calibration", &doc, &json)?;
    let csv = ctx.run.reports().join("calibration_fits.csv");
    std::fs::write(&csv, fits_csv(&chunks))?;
    ctx.finish(&mut manifest, &[cfg_path, json, csv])?;
    let r = &doc.record;
    println!(
        "c_cicc {} i_mle {} i_curv_mean {} bias {} ({} fits, {} excluded)",
        r.c_cicc, r.i_mle, r.i_curv_mean, r.bias_hat, r.n_pseudo, r.n_excluded
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CoverageSummary {
    coverage: f64,
    n_intervals: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CoverageDoc {
    n_b: usize,
    seed: u64,
    calibration_seed: u64,
    n_pseudo: usize,
    target: f64,
    scorer: ScorerInfo,
    calibration: CalibrationRecord,
    uncalibrated: CoverageSummary,
    calibrated: CoverageSummary,
    failed_chunks: Vec<String>,
}

fn coverage_cmd(ctx: &Ctx, a: &CoverageArgs) -> CliResult<()> {
    let cal: CalibrationDoc = read_document("calibration", &a.calibration)?;
    let mut cfg = apply_window(a.config.resolve(StudyMode::MultiClass)?, a.window)?;
    if let Some(n) = a.n_pseudo {
        cfg = cfg.with_overrides(&[("experiment.n_pseudo_holdout".into(), n.to_string())])?;
    }
    let seed = a
        .holdout_seed
        .unwrap_or_else(|| derive_seed(cfg.experiment.master_seed, "holdout", cal.n_b as u64));
    if seed == cal.seed {
        return Err(CliError::config(format!(
            "held-out seed {seed} equals the calibration seed; coverage must use fresh pseudo-experiments"
        )));
    }
    if cfg.experiment.chunk_events != cal.chunk_events {
        return Err(CliError::config(format!(
            "calibration used {}-event chunks, config has {}",
            cal.chunk_events, cfg.experiment.chunk_events
        )));
    }
    let (scorer, info) = build_scorer(&a.scorer, &cfg, cfg.family())?;
    let spec = pseudo_spec(&cfg, cal.n_b, cfg.n_pseudo_holdout(), seed)?;
    let chunks = run_pseudo_experiments(scorer.as_ref(), &spec, &ctx.queue)?;
    let theta = spec.theta_true;

    let mut csv = String::from("chunk,theta_hat,lo_uncalibrated,hi_uncalibrated,hit_uncalibrated,lo_calibrated,hi_calibrated,hit_calibrated,target\n");
    let mut raw = Vec::new();
    let mut calibrated = Vec::new();
    for c in &chunks {
        let Some(f) = c.fit.as_ref().filter(|f| f.is_valid()) else {
            continue;
        };
        let (Ok(u), Ok(k)) = (confidence_interval(f, 1.0), cal.record.interval(f)) else {
            continue;
        };
        let hit = |(lo, hi): (f64, f64)| lo <= theta && theta <= hi;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            c.chunk,
            f.theta_hat,
            u.0,
            u.1,
            hit(u),
            k.0,
            k.1,
            hit(k),
            COVERAGE_TARGET
        );
        raw.push(u);
        calibrated.push(k);
    }
    if raw.is_empty() {
        return Err(CliError::runtime(format!(
            "none of the {} held-out pseudo-experiments gave a usable fit",
            chunks.len()
        )));
    }
    let ru = coverage(&raw, theta)?;
    let rc = coverage(&calibrated, theta)?;

    let (cfg_path, cfg_text) = ctx.write_config(&cfg)?;
    let mut manifest = ctx.manifest(&cfg_text);
    manifest.seed("calibration", cal.seed);
    manifest.seed("holdout", seed);
    let doc = CoverageDoc {
        n_b: cal.n_b,
        seed,
        calibration_seed: cal.seed,
        n_pseudo: spec.n_pseudo,
        target: COVERAGE_TARGET,
        scorer: info,
        calibration: cal.record,
        uncalibrated: CoverageSummary {
            coverage: ru.coverage,
            n_intervals: raw.len(),
        },
        calibrated: CoverageSummary {
            coverage: rc.coverage,
            n_intervals: calibrated.len(),
        },
        failed_chunks: chunk_failures(&chunks),
    };
    let json = ctx.run.reports().join("coverage.json");
    write_document("coverage", &doc, &json)?;
    let csv_path = ctx.run.reports().join("coverage.csv");
    std::fs::write(&csv_path, csv)?;
    ctx.finish(&mut manifest, &[cfg_path, json, csv_path])?;
    println!(
        "coverage uncalibrated {:.4} calibrated {:.4} target {COVERAGE_TARGET}",
        ru.coverage, rc.coverage
    );
    Ok(())
}

fn scaling(ctx: &Ctx, a: &ScalingArgs) -> CliResult<()> {
    let mut cfg = a.config.resolve(StudyMode::MultiClass)?;
    if let Some(k) = a.ansatz {
        let name = match k {
            crate::AnsatzArg::None => "none",
            crate::AnsatzArg::Sqrt => "sqrt",
        };
        cfg = cfg.with_overrides(&[("experiment.ansatz".into(), format!("\"{name}\""))])?;
    }
    let (cfg_path, cfg_text) = ctx.write_config(&cfg)?;
    let mut manifest = ctx.manifest(&cfg_text);
    manifest.seed("master", cfg.experiment.master_seed);
    let report = run_study(&cfg, &ctx.queue)?;
    let paths = write_report(&report, &ctx.run.root)?;
    let mut files = vec![cfg_path];
    files.extend(paths.all().cloned());
    ctx.finish(&mut manifest, &files)?;
    for f in &report.flags {
        println!("flag: {f}");
    }
    Ok(())
}
