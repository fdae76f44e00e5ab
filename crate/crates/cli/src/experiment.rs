//! Subcommands. Each reads the validated [`RunConfig`], writes its artifacts
//! under `output_root/name/` and never modifies its inputs.
//!
//! ```text
//! runs/<name>/
//!   config.echo            effective configuration
//!   metrics.csv            per-epoch log of `train`
//!   checkpoint.bin         model written by `train`
//!   tables/eval.csv        fold,split,images,mean_dice
//!   tables/probe.csv       repetition,level,samples,r2,mode
//!   tables/probe_summary.csv
//!   tables/sweep.csv       strategy,fold,seed,test_dice,status
//!   tables/comparison.csv  strategy,folds,mean_dice,std_dice,p_<strategy>...
//!   tables/divergence.csv  strategy,fold,phase,epoch
//!   folds/fold<k>/<strategy>/{metrics.csv,checkpoint.bin}   (sweep)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use massl_core::analysis::{
    compare_strategies, probe_r2, AnalysisError, ComparisonReport, FeatureMap, ProbeOptions, ProbeResult, ProbeSummary,
    StrategyRuns,
};
use massl_core::data::{generate_synthetic, make_splits, read_dataset, write_dataset, DataError, Sample, SplitPlan};
use massl_core::model::{read_checkpoint, write_checkpoint, CheckpointError, ModelError};
use massl_core::tensor::Graph;
use massl_core::training::{evaluate_dice, run_strategy, NoObserver, Phase, Strategy, TrainData, TrainError, TrainLog};
use massl_core::Model32;
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{what} not found: {path}")]
    MissingInput { what: &'static str, path: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{count} run(s) diverged; see {report}")]
    Diverged { count: usize, report: String },
}

impl ExperimentError {
    /// 1 for configuration problems, 2 for runtime failures and divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    let wrap = |source| ExperimentError::Write {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(wrap)?;
    }
    fs::write(path, contents).map_err(wrap)
}

fn write_echo(cfg: &RunConfig) -> Result<()> {
    write(&cfg.run_dir().join("config.echo"), cfg.echo())
}

fn load_dataset(cfg: &RunConfig) -> Result<Vec<Sample>> {
    if !cfg.data_path.exists() {
        return Err(ExperimentError::MissingInput {
            what: "dataset",
            path: cfg.data_path.display().to_string(),
        });
    }
    let samples = read_dataset(&cfg.data_path)?;
    if let Some(s) = samples.iter().find(|s| (s.height, s.width) != (cfg.height, cfg.width)) {
        return Err(ExperimentError::Read {
            path: cfg.data_path.display().to_string(),
            message: format!(
                "images are {}x{} but the config expects {}x{}",
                s.height, s.width, cfg.height, cfg.width
            ),
        });
    }
    Ok(samples)
}

fn load_model(path: &Path) -> Result<Model32> {
    if !path.exists() {
        return Err(ExperimentError::MissingInput {
            what: "checkpoint",
            path: path.display().to_string(),
        });
    }
    Ok(read_checkpoint(path)?)
}

/// Samples of one fold, by role. Unlabeled samples lose their masks unless
/// the labeled pool is deliberately reused.
pub struct FoldSets {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn plans(cfg: &RunConfig, samples: &[Sample]) -> Result<Vec<SplitPlan>> {
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    Ok(make_splits(
        &ids,
        cfg.folds,
        cfg.split_sizes(),
        cfg.split_seed,
        cfg.fully_supervised,
    )?)
}

fn fold_sets(plan: &SplitPlan, samples: &[Sample]) -> FoldSets {
    let by_id: BTreeMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let pick = |ids: &[String]| -> Vec<Sample> { ids.iter().map(|id| by_id[id.as_str()].clone()).collect() };
    let mut unlabeled = pick(&plan.unlabeled);
    if !plan.fully_supervised() {
        unlabeled = unlabeled.iter().map(Sample::without_mask).collect();
    }
    FoldSets {
        labeled: pick(&plan.labeled),
        unlabeled,
        validation: pick(&plan.validation),
        test: pick(&plan.test),
    }
}

pub fn load_fold(cfg: &RunConfig, fold: usize) -> Result<FoldSets> {
    let samples = load_dataset(cfg)?;
    let plans = plans(cfg, &samples)?;
    Ok(fold_sets(&plans[fold], &samples))
}

/// Generates the synthetic dataset at `data_path`; returns the image count.
pub fn synth(cfg: &RunConfig) -> Result<usize> {
    let samples = generate_synthetic(cfg.synth_count, cfg.height, cfg.width, cfg.synth_seed);
    if let Some(parent) = cfg.data_path.parent() {
        fs::create_dir_all(parent).map_err(|source| ExperimentError::Write {
            path: parent.display().to_string(),
            source,
        })?;
    }
    write_dataset(&cfg.data_path, &samples)?;
    log::info!("wrote {} images to {}", samples.len(), cfg.data_path.display());
    Ok(samples.len())
}

fn divergence_csv(rows: &[(Strategy, usize, Phase, usize)]) -> String {
    let mut out = String::from("strategy,fold,phase,epoch\n");
    for (s, fold, phase, epoch) in rows {
        out.push_str(&format!("{s},{fold},{phase},{epoch}\n"));
    }
    out
}

struct RunResult {
    model: Option<Model32>,
    log: TrainLog,
    test_dice: Option<f64>,
    divergence: Option<(Phase, usize)>,
}

fn train_one(cfg: &RunConfig, strategy: Strategy, seed: u64, sets: &FoldSets) -> Result<RunResult> {
    let mut train = cfg.train_config(strategy);
    train.seed = seed;
    let data = TrainData {
        labeled: &sets.labeled,
        unlabeled: &sets.unlabeled,
        validation: (!sets.validation.is_empty()).then_some(&sets.validation as _),
    };
    match run_strategy(&cfg.network(), &train, data, &mut NoObserver) {
        Ok(out) => {
            let test_dice = evaluate_dice(&out.model, &sets.test, cfg.batch_size)?;
            Ok(RunResult {
                model: Some(out.model),
                log: out.log,
                test_dice: Some(test_dice),
                divergence: None,
            })
        }
        Err(TrainError::Diverged { phase, epoch, log, .. }) => Ok(RunResult {
            model: None,
            log: *log,
            test_dice: None,
            divergence: Some((phase, epoch)),
        }),
        Err(e) => Err(e.into()),
    }
}

/// Trains `strategy` on fold `fold`; writes metrics and checkpoint.
pub fn train(cfg: &RunConfig) -> Result<f64> {
    let strategy = cfg.strategy().map_err(|m| ConfigError::Key {
        key: "strategy".into(),
        message: m,
    })?;
    let sets = load_fold(cfg, cfg.fold)?;
    let dir = cfg.run_dir();
    write_echo(cfg)?;
    log::info!(
        "training {strategy} on fold {} ({} labeled)",
        cfg.fold,
        sets.labeled.len()
    );
    let result = train_one(cfg, strategy, cfg.seed, &sets)?;
    write(&dir.join("metrics.csv"), result.log.to_csv())?;
    if let Some((phase, epoch)) = result.divergence {
        let report = dir.join("tables/divergence.csv");
        write(&report, divergence_csv(&[(strategy, cfg.fold, phase, epoch)]))?;
        return Err(ExperimentError::Diverged {
            count: 1,
            report: report.display().to_string(),
        });
    }
    let model = result.model.expect("finished run has a model");
    write_checkpoint(&dir.join("checkpoint.bin"), &model)?;
    let dice = result.test_dice.expect("finished run is evaluated");
    log::info!("{strategy} test dice {dice:.4}");
    Ok(dice)
}

/// Mean test Dice of a checkpoint (default: the run's own) on fold `fold`.
pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<f64> {
    let path = checkpoint.map_or_else(|| cfg.run_dir().join("checkpoint.bin"), Path::to_path_buf);
    let model = load_model(&path)?;
    let sets = load_fold(cfg, cfg.fold)?;
    let dice = evaluate_dice(&model, &sets.test, cfg.batch_size)?;
    write_echo(cfg)?;
    write(
        &cfg.run_dir().join("tables/eval.csv"),
        format!(
            "fold,split,images,mean_dice\n{},test,{},{dice:.9}\n",
            cfg.fold,
            sets.test.len()
        ),
    )?;
    log::info!("test dice {dice:.4} over {} images", sets.test.len());
    Ok(dice)
}

/// Encoder activations of `images` as per-level feature maps.
pub fn encoder_features(model: &Model32, images: &[Sample]) -> Result<Vec<FeatureMap>> {
    let net = model.config();
    let mut g = Graph::new();
    let p = model.bind(&mut g, |_| false);
    let values = images.iter().flat_map(|s| s.image.iter().copied()).collect();
    let x = g
        .constant(&net.input_shape(images.len()), values)
        .map_err(ModelError::from)?;
    let levels = model.encode(&mut g, &p, x)?;
    Ok(levels
        .into_iter()
        .map(|id| {
            let s = g.shape(id);
            FeatureMap {
                batch: s[0],
                channels: s[1],
                height: s[2],
                width: s[3],
                values: g.value(id).iter().map(|&v| v as f64).collect(),
            }
        })
        .collect())
}

/// Repeated linear probes on random test-image subsets of fold `fold`.
pub fn probe(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ProbeSummary> {
    let path = checkpoint.map_or_else(|| cfg.run_dir().join("checkpoint.bin"), Path::to_path_buf);
    let model = load_model(&path)?;
    let sets = load_fold(cfg, cfg.fold)?;
    let base = cfg.probe_options().map_err(|m| ConfigError::Key {
        key: "probe_mode".into(),
        message: m,
    })?;
    let count = cfg.probe_images.min(sets.test.len());
    let mut runs: Vec<ProbeResult> = Vec::new();
    let mut table = String::from("repetition,level,samples,r2,mode\n");
    for rep in 0..cfg.probe_repetitions {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.probe_seed);
        rng.set_stream(rep as u64);
        let mut chosen = sample_indices(&mut rng, sets.test.len(), count).into_vec();
        chosen.sort_unstable();
        let images: Vec<Sample> = chosen.iter().map(|&i| sets.test[i].clone()).collect();
        let masks: Vec<Vec<u8>> = images.iter().map(|s| s.mask.clone().unwrap_or_default()).collect();
        let features = encoder_features(&model, &images)?;
        let opts = ProbeOptions {
            seed: cfg.probe_seed.wrapping_add(rep as u64),
            ..base
        };
        let result = probe_r2(&features, &masks, cfg.height, cfg.width, &opts)?;
        for line in result.to_csv().lines().skip(1) {
            table.push_str(&format!("{rep},{line}\n"));
        }
        runs.push(result);
    }
    let summary = ProbeSummary::from_runs(&runs)?;
    write_echo(cfg)?;
    write(&cfg.run_dir().join("tables/probe.csv"), table)?;
    write(&cfg.run_dir().join("tables/probe_summary.csv"), summary.to_csv())?;
    Ok(summary)
}

/// Parses a sweep table into per-strategy fold scores, skipping diverged rows.
pub fn read_sweep_table(path: &Path) -> Result<Vec<StrategyRuns>> {
    let bad = |message: String| ExperimentError::Read {
        path: path.display().to_string(),
        message,
    };
    if !path.exists() {
        return Err(ExperimentError::MissingInput {
            what: "sweep table",
            path: path.display().to_string(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err(bad(format!("expected header `{SWEEP_HEADER}`")));
    }
    let mut runs: Vec<StrategyRuns> = Vec::new();
    for (n, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        let [strategy, _fold, _seed, dice, status] = cols[..] else {
            return Err(bad(format!("line {} has {} columns", n + 2, cols.len())));
        };
        if status != "ok" {
            continue;
        }
        let dice: f64 = dice
            .parse()
            .map_err(|_| bad(format!("line {}: bad dice `{dice}`", n + 2)))?;
        match runs.iter_mut().find(|r| r.strategy == strategy) {
            Some(r) => r.scores.push(dice),
            None => runs.push(StrategyRuns {
                strategy: strategy.to_string(),
                scores: vec![dice],
            }),
        }
    }
    Ok(runs)
}

/// Significance table from a sweep table (default: this run's).
pub fn compare(cfg: &RunConfig, input: Option<&Path>) -> Result<ComparisonReport> {
    let path = input.map_or_else(|| cfg.run_dir().join("tables/sweep.csv"), Path::to_path_buf);
    let runs = read_sweep_table(&path)?;
    let report = compare_strategies(&runs)?;
    write_echo(cfg)?;
    write(&cfg.run_dir().join("tables/comparison.csv"), report.to_csv())?;
    Ok(report)
}

type FoldResults = Vec<(Strategy, RunResult)>;

pub const SWEEP_HEADER: &str = "strategy,fold,seed,test_dice,status";

/// All strategies on every fold, seeded `seed + fold`.
pub fn sweep(cfg: &RunConfig) -> Result<PathBuf> {
    let samples = load_dataset(cfg)?;
    let plans = plans(cfg, &samples)?;
    let dir = cfg.run_dir();
    write_echo(cfg)?;

    let run_fold = |fold: usize| -> Result<Vec<(Strategy, RunResult)>> {
        let sets = fold_sets(&plans[fold], &samples);
        let seed = cfg.seed.wrapping_add(fold as u64);
        let mut out = Vec::new();
        for strategy in Strategy::ALL {
            log::info!("fold {fold}: {strategy}");
            let mut result = train_one(cfg, strategy, seed, &sets)?;
            let run_dir = dir.join(format!("folds/fold{fold}/{strategy}"));
            write(&run_dir.join("metrics.csv"), result.log.to_csv())?;
            if let Some(model) = result.model.take() {
                write_checkpoint(&run_dir.join("checkpoint.bin"), &model)?;
            }
            out.push((strategy, result));
        }
        Ok(out)
    };

    let threads = cfg.threads.clamp(1, cfg.folds);
    let mut per_fold: Vec<Option<Result<FoldResults>>> = (0..cfg.folds).map(|_| None).collect();
    if threads == 1 {
        for (fold, slot) in per_fold.iter_mut().enumerate() {
            *slot = Some(run_fold(fold));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let run_fold = &run_fold;
                    s.spawn(move || {
                        (w..cfg.folds)
                            .step_by(threads)
                            .map(|fold| (fold, run_fold(fold)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (fold, r) in h.join().expect("sweep worker panicked") {
                    per_fold[fold] = Some(r);
                }
            }
        });
    }

    let mut table = format!("{SWEEP_HEADER}\n");
    let mut diverged = Vec::new();
    let mut results: Vec<(usize, Strategy, RunResult)> = Vec::new();
    for (fold, r) in per_fold.into_iter().enumerate() {
        for (strategy, result) in r.expect("every fold ran")? {
            results.push((fold, strategy, result));
        }
    }
    results.sort_by_key(|(fold, s, _)| (*s, *fold));
    for (fold, strategy, result) in &results {
        let seed = cfg.seed.wrapping_add(*fold as u64);
        match (result.test_dice, result.divergence) {
            (Some(d), _) => table.push_str(&format!("{strategy},{fold},{seed},{d:.9},ok\n")),
            (None, Some((phase, epoch))) => {
                table.push_str(&format!("{strategy},{fold},{seed},,diverged\n"));
                diverged.push((*strategy, *fold, phase, epoch));
            }
            (None, None) => unreachable!("runs either finish or diverge"),
        }
    }
    let table_path = dir.join("tables/sweep.csv");
    write(&table_path, table)?;

    // Strategies with a diverged fold are left out of the significance table.
    let complete: Vec<StrategyRuns> = read_sweep_table(&table_path)?
        .into_iter()
        .filter(|r| r.scores.len() == cfg.folds)
        .collect();
    if cfg.folds >= 2 && !complete.is_empty() {
        let report = compare_strategies(&complete)?;
        write(&dir.join("tables/comparison.csv"), report.to_csv())?;
        for s in &report.summaries {
            log::info!("{:<13} dice {:.4} ± {:.4}", s.strategy, s.mean, s.std);
        }
    }
    if !diverged.is_empty() {
        let report = dir.join("tables/divergence.csv");
        write(&report, divergence_csv(&diverged))?;
        return Err(ExperimentError::Diverged {
            count: diverged.len(),
            report: report.display().to_string(),
        });
    }
    Ok(table_path)
}
