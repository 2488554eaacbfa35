//! Experiment orchestration: reserved-trial grid search, measurement trials,
//! combined strategies and the dataset x diversity x approach result cube.
//!
//! All randomness derives from `master_seed`. Trials of every approach in a
//! (dataset, diversity) cell share split and initialization seeds, so the
//! deltas against baseline are paired comparisons.

pub mod report;
mod results;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use results::{
    CellResult, DeltaRecord, GridSearchResult, MatrixResult, TrialAggregate, TrialResult, TrialsSummary,
};

use crate::analysis::{self, mean_ci95, DeltaOutcome, Sign};
use crate::datagen::Dataset;
use crate::error::{invalid, Error, Result};
use crate::neuralcore::{write_checkpoint, NetworkSpec};
use crate::seeds;
use crate::splits::{partition, sample_combination_ladder, save_split, LevelLabel, SplitBundle, SplitSizes};
use crate::training::{train_with_observer, ApproachFlags, EpochCsvWriter, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Baseline,
    LateStopping,
    TunedBn,
    InvarianceLoss,
    ThreeTogether,
    BestOfThree,
}

impl Approach {
    pub const ALL: [Approach; 6] = [
        Approach::Baseline,
        Approach::LateStopping,
        Approach::TunedBn,
        Approach::InvarianceLoss,
        Approach::ThreeTogether,
        Approach::BestOfThree,
    ];

    /// The three single approaches, in tie-breaking order.
    pub const SINGLES: [Approach; 3] = [Approach::LateStopping, Approach::TunedBn, Approach::InvarianceLoss];

    pub fn as_str(&self) -> &'static str {
        match self {
            Approach::Baseline => "baseline",
            Approach::LateStopping => "late_stopping",
            Approach::TunedBn => "tuned_bn",
            Approach::InvarianceLoss => "invariance_loss",
            Approach::ThreeTogether => "three_together",
            Approach::BestOfThree => "best_of_three",
        }
    }

    pub fn is_combined(&self) -> bool {
        matches!(self, Approach::ThreeTogether | Approach::BestOfThree)
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "baseline" => Approach::Baseline,
            "late_stopping" => Approach::LateStopping,
            "tuned_bn" => Approach::TunedBn,
            "invariance" | "invariance_loss" => Approach::InvarianceLoss,
            "three_together" => Approach::ThreeTogether,
            "best_of_three" => Approach::BestOfThree,
            other => return Err(invalid(format!("unknown approach '{other}'"))),
        })
    }
}

/// One point of a hyperparameter grid. Dimensions an approach does not tune
/// keep their base-config values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub bn_momentum: f64,
    pub lambda: f64,
    pub pair_refresh_interval: usize,
}

impl HyperParams {
    pub fn from_config(c: &TrainConfig) -> Self {
        HyperParams {
            learning_rate: c.learning_rate,
            bn_momentum: c.bn_momentum,
            lambda: c.lambda,
            pair_refresh_interval: c.pair_refresh_interval,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridChoice {
    #[default]
    Full,
    Fast,
}

impl FromStr for GridChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(GridChoice::Full),
            "fast" => Ok(GridChoice::Fast),
            other => Err(invalid(format!("unknown grid '{other}' (expected full or fast)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    pub learning_rates: Vec<f64>,
    pub bn_momenta: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub refresh_intervals: Vec<usize>,
}

impl Grids {
    pub fn full() -> Self {
        Grids {
            learning_rates: vec![0.1, 0.01, 0.001, 0.0001, 0.00001],
            bn_momenta: vec![0.01, 0.1, 0.5, 0.9, 0.99],
            lambdas: vec![1.0, 0.1, 0.01, 0.001, 0.0001],
            refresh_intervals: vec![10, 20, 50, 100],
        }
    }

    /// Desk-scale subset: fixed learning rate, three values per tuned axis.
    pub fn fast() -> Self {
        Grids {
            learning_rates: vec![0.001],
            bn_momenta: vec![0.5, 0.9, 0.99],
            lambdas: vec![1.0, 0.1, 0.01],
            refresh_intervals: vec![10],
        }
    }

    pub fn for_choice(choice: GridChoice) -> Self {
        match choice {
            GridChoice::Full => Self::full(),
            GridChoice::Fast => Self::fast(),
        }
    }

    /// Grid points of a single approach in deterministic order
    /// (learning rate outermost).
    pub fn points(&self, approach: Approach, base: &TrainConfig) -> Result<Vec<HyperParams>> {
        let b = HyperParams::from_config(base);
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            let p = HyperParams { learning_rate: lr, ..b };
            match approach {
                Approach::Baseline | Approach::LateStopping => out.push(HyperParams { lambda: 0.0, ..p }),
                Approach::TunedBn => {
                    for &m in &self.bn_momenta {
                        out.push(HyperParams {
                            bn_momentum: m,
                            lambda: 0.0,
                            ..p
                        });
                    }
                }
                Approach::InvarianceLoss => {
                    for &l in &self.lambdas {
                        for &t in &self.refresh_intervals {
                            out.push(HyperParams {
                                lambda: l,
                                pair_refresh_interval: t,
                                ..p
                            });
                        }
                    }
                }
                Approach::ThreeTogether | Approach::BestOfThree => {
                    return Err(invalid(format!(
                        "{approach} reuses the single approaches' tuned values and has no grid"
                    )))
                }
            }
        }
        if out.is_empty() {
            return Err(invalid(format!("empty grid for {approach}")));
        }
        Ok(out)
    }
}

/// Training configuration of one run of `approach` at `hp`.
pub fn approach_config(approach: Approach, hp: &HyperParams, base: &TrainConfig, seed: u64) -> TrainConfig {
    let mut c = TrainConfig {
        learning_rate: hp.learning_rate,
        seed,
        flags: ApproachFlags::default(),
        lambda: 0.0,
        restart_rule_enabled: false,
        ..base.clone()
    };
    match approach {
        Approach::Baseline => {}
        Approach::LateStopping => c.flags.late_stopping = true,
        Approach::TunedBn => {
            c.flags.tuned_bn = true;
            c.bn_momentum = hp.bn_momentum;
        }
        Approach::InvarianceLoss => {
            c.flags.invariance_loss = true;
            c.lambda = hp.lambda;
            c.pair_refresh_interval = hp.pair_refresh_interval;
        }
        Approach::ThreeTogether => {
            c.flags = ApproachFlags {
                late_stopping: true,
                tuned_bn: true,
                invariance_loss: true,
            };
            c.bn_momentum = hp.bn_momentum;
            c.lambda = hp.lambda;
            c.pair_refresh_interval = hp.pair_refresh_interval;
            c.restart_rule_enabled = true;
        }
        Approach::BestOfThree => {}
    }
    c
}

/// Everything needed to run trials on one dataset.
#[derive(Debug, Clone)]
pub struct ExperimentContext {
    pub dataset_id: String,
    /// Data of the measurement trials.
    pub dataset: Dataset,
    /// Independently generated data of the reserved tuning trial.
    pub reserved_dataset: Dataset,
    pub degrees: Vec<usize>,
    pub sizes: SplitSizes,
    pub network: NetworkSpec,
    pub base: TrainConfig,
}

/// One (dataset, diversity, approach) request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub level: LevelLabel,
    pub approach: Approach,
    pub grids: Grids,
    pub n_trials: usize,
    pub master_seed: u64,
    pub workers: usize,
}

/// Seed of measurement trial `trial`.
pub fn trial_seed(master_seed: u64, dataset_id: &str, level: LevelLabel, trial: usize) -> u64 {
    seeds::hash64(
        "trial",
        &[master_seed, seeds::name_word(dataset_id), level.index() as u64, trial as u64],
    )
}

/// Seed of the reserved tuning trial; never equal to a measurement seed.
pub fn reserved_seed(master_seed: u64, dataset_id: &str, level: LevelLabel, n_trials: usize) -> u64 {
    let measured: Vec<u64> = (0..n_trials)
        .map(|t| trial_seed(master_seed, dataset_id, level, t))
        .collect();
    let mut salt = 0u64;
    loop {
        let s = seeds::hash64(
            "reserved",
            &[master_seed, seeds::name_word(dataset_id), level.index() as u64, salt],
        );
        if !measured.contains(&s) {
            return s;
        }
        salt += 1;
    }
}

/// Effective worker count: `OODBENCH_DETERMINISTIC=1` forces one.
pub fn effective_workers(requested: usize) -> usize {
    if std::env::var("OODBENCH_DETERMINISTIC").is_ok_and(|v| v == "1") {
        1
    } else {
        requested.max(1)
    }
}

fn parallel_map<T: Send, R: Send>(workers: usize, items: Vec<T>, f: impl Fn(T) -> R + Sync + Send) -> Result<Vec<R>> {
    let workers = effective_workers(workers);
    if workers == 1 {
        return Ok(items.into_iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| items.into_par_iter().map(f).collect()))
}

/// The split a seed selects at `level` of a freshly sampled ladder.
pub fn seeded_split(
    dataset: &Dataset,
    degrees: &[usize],
    sizes: SplitSizes,
    level: LevelLabel,
    seed: u64,
) -> Result<SplitBundle> {
    let ladder = sample_combination_ladder(
        dataset.num_categories,
        dataset.num_conditions,
        degrees,
        seeds::hash64("ladder", &[seed]),
    )?;
    let lvl = ladder
        .level(level)
        .ok_or_else(|| invalid(format!("ladder has no {level} level ({} degrees)", degrees.len())))?;
    partition(
        dataset,
        &lvl.combos,
        level,
        lvl.degree,
        sizes,
        seeds::hash64("split", &[seed]),
    )
}

/// Output of one training run.
pub struct RunOutput {
    pub split: SplitBundle,
    pub outcome: TrainOutcome,
    pub checkpoint: Vec<u8>,
}

/// Trains `approach` at `hp` on the split of `seed`, streaming epoch rows to
/// `dir/epochs.csv` when a directory is given.
pub fn run_one(
    ctx: &ExperimentContext,
    dataset: &Dataset,
    level: LevelLabel,
    approach: Approach,
    hp: &HyperParams,
    seed: u64,
    dir: Option<&Path>,
) -> Result<RunOutput> {
    let split = seeded_split(dataset, &ctx.degrees, ctx.sizes, level, seed)?;
    let cfg = approach_config(approach, hp, &ctx.base, seeds::hash64("init", &[seed]));
    let outcome = match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            let mut w = EpochCsvWriter::create(&d.join("epochs.csv"))?;
            train_with_observer(&cfg, &split, &ctx.network, &mut |r| w.write(r))?
        }
        None => train_with_observer(&cfg, &split, &ctx.network, &mut |_| Ok(()))?,
    };
    let checkpoint = write_checkpoint(&outcome.params);
    Ok(RunOutput {
        split,
        outcome,
        checkpoint,
    })
}

/// Reserved-trial grid search over the approach's own dimensions.
pub fn grid_search(ctx: &ExperimentContext, plan: &ExperimentPlan) -> Result<GridSearchResult> {
    let points = plan.grids.points(plan.approach, &ctx.base)?;
    let seed = reserved_seed(plan.master_seed, &ctx.dataset_id, plan.level, plan.n_trials);
    let table: Vec<results::GridPointResult> = parallel_map(plan.workers, points, |hp| {
        match run_one(ctx, &ctx.reserved_dataset, plan.level, plan.approach, &hp, seed, None) {
            Ok(run) => {
                let last = run.outcome.records.last();
                results::GridPointResult {
                    hyper: hp,
                    ood_accuracy: last.map(|r| r.ood_accuracy),
                    ind_val_accuracy: last.map(|r| r.ind_val_accuracy),
                    error: None,
                }
            }
            Err(e) => results::GridPointResult {
                hyper: hp,
                ood_accuracy: None,
                ind_val_accuracy: None,
                error: Some(e.to_string()),
            },
        }
    })?;
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in table.iter().enumerate() {
        if let Some(acc) = p.ood_accuracy {
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((i, acc));
            }
        }
    }
    match best {
        Some((i, acc)) => Ok(GridSearchResult {
            approach: plan.approach,
            level: plan.level,
            reserved_seed: seed,
            chosen: table[i].hyper,
            chosen_ood_accuracy: acc,
            table,
        }),
        None => Err(Error::SearchFailure { table }),
    }
}

pub use results::GridPointResult;

/// Measurement trials of `approach` at fixed hyperparameters. With `out`,
/// each trial writes `trial<k>/` (epoch CSV, checkpoint, split, SI report).
pub fn run_trials(
    ctx: &ExperimentContext,
    plan: &ExperimentPlan,
    approach: Approach,
    hp: &HyperParams,
    out: Option<&Path>,
) -> Result<TrialsSummary> {
    if plan.n_trials == 0 {
        return Err(invalid("n_trials must be >= 1"));
    }
    let jobs: Vec<usize> = (0..plan.n_trials).collect();
    let trials: Vec<TrialResult> = parallel_map(plan.workers, jobs, |t| {
        let seed = trial_seed(plan.master_seed, &ctx.dataset_id, plan.level, t);
        let dir: Option<PathBuf> = out.map(|o| o.join(format!("trial{t}")));
        run_trial(ctx, plan.level, approach, hp, t, seed, dir.as_deref())
    })?;
    let ok: Vec<&TrialResult> = trials.iter().filter(|t| t.error.is_none()).collect();
    let aggregate = if ok.len() >= 2 {
        let col = |f: &dyn Fn(&TrialResult) -> f64| ok.iter().map(|t| f(t)).collect::<Vec<f64>>();
        Some(TrialAggregate {
            ood_accuracy: mean_ci95(&col(&|t| t.ood_accuracy))?,
            ind_accuracy: mean_ci95(&col(&|t| t.ind_val_accuracy))?,
            si_summary: mean_ci95(&col(&|t| t.si_summary))?,
            successes: ok.len(),
        })
    } else {
        None
    };
    Ok(TrialsSummary {
        approach,
        level: plan.level,
        hyper: *hp,
        trials,
        aggregate,
    })
}

fn run_trial(
    ctx: &ExperimentContext,
    level: LevelLabel,
    approach: Approach,
    hp: &HyperParams,
    trial: usize,
    seed: u64,
    dir: Option<&Path>,
) -> TrialResult {
    let attempt = || -> Result<TrialResult> {
        let run = run_one(ctx, &ctx.dataset, level, approach, hp, seed, dir)?;
        let report = analysis::si_report(&run.outcome.params, &run.outcome.spec, &ctx.dataset, "full_grid")?;
        let last = run
            .outcome
            .records
            .last()
            .ok_or_else(|| Error::State("training produced no epochs".into()))?;
        let hash = seeds::sha256_hex(&run.checkpoint);
        if let Some(d) = dir {
            std::fs::write(d.join("checkpoint.bin"), &run.checkpoint)?;
            std::fs::write(d.join("si_report.json"), serde_json::to_string_pretty(&report)?)?;
            save_split_record(&run.split, &ctx.degrees, d)?;
        }
        Ok(TrialResult {
            trial,
            seed,
            combos: run.split.combos.pairs.iter().copied().collect(),
            ind_val_accuracy: last.ind_val_accuracy,
            ood_accuracy: last.ood_accuracy,
            si_summary: report.summary.summary,
            epochs: run.outcome.records.len(),
            restarts: run.outcome.restarts,
            checkpoint_sha256: hash,
            error: None,
        })
    };
    attempt().unwrap_or_else(|e| TrialResult {
        trial,
        seed,
        combos: Vec::new(),
        ind_val_accuracy: 0.0,
        ood_accuracy: 0.0,
        si_summary: 0.0,
        epochs: 0,
        restarts: 0,
        checkpoint_sha256: String::new(),
        error: Some(e.to_string()),
    })
}

/// Writes only `split.json` (the item lists are reproducible from the seed).
fn save_split_record(split: &SplitBundle, degrees: &[usize], dir: &Path) -> Result<()> {
    let tmp = dir.join(".split");
    save_split(split, degrees, &tmp)?;
    std::fs::rename(tmp.join("split.json"), dir.join("split.json"))?;
    std::fs::remove_dir_all(&tmp)?;
    Ok(())
}

/// Tuned hyperparameters and reserved-trial OoD accuracy of the three singles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedSet {
    pub searches: Vec<GridSearchResult>,
}

impl TunedSet {
    pub fn get(&self, approach: Approach) -> Result<&GridSearchResult> {
        self.searches
            .iter()
            .find(|s| s.approach == approach)
            .ok_or_else(|| Error::Plan(format!("no tuned hyperparameters for {approach}")))
    }

    /// Single approach with the highest reserved-trial OoD accuracy (ties to
    /// the earlier of late stopping, tuned BN, invariance loss).
    pub fn best_single(&self) -> Result<Approach> {
        let mut best: Option<(Approach, f64)> = None;
        for a in Approach::SINGLES {
            let acc = self.get(a)?.chosen_ood_accuracy;
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((a, acc));
            }
        }
        Ok(best.expect("three singles").0)
    }

    /// Hyperparameters of the all-three run: tuned BN momentum, tuned
    /// (lambda, T) and the invariance search's learning rate.
    pub fn three_together(&self) -> Result<HyperParams> {
        let bn = self.get(Approach::TunedBn)?.chosen;
        let inv = self.get(Approach::InvarianceLoss)?.chosen;
        Ok(HyperParams {
            bn_momentum: bn.bn_momentum,
            ..inv
        })
    }
}

/// Combined strategy: resolves the approach actually trained and its
/// hyperparameters, then runs the measurement trials.
pub fn combined_run(
    ctx: &ExperimentContext,
    plan: &ExperimentPlan,
    mode: Approach,
    tuned: &TunedSet,
    out: Option<&Path>,
) -> Result<(Approach, TrialsSummary)> {
    let (trained, hp) = match mode {
        Approach::ThreeTogether => (Approach::ThreeTogether, tuned.three_together()?),
        Approach::BestOfThree => {
            let a = tuned.best_single()?;
            (a, tuned.get(a)?.chosen)
        }
        other => return Err(invalid(format!("{other} is not a combined strategy"))),
    };
    let mut summary = run_trials(ctx, plan, trained, &hp, out)?;
    summary.approach = mode;
    Ok((trained, summary))
}

/// Settings shared by every cell of a matrix run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSettings {
    pub levels: Vec<LevelLabel>,
    pub approaches: Vec<Approach>,
    pub grids: Grids,
    pub n_trials: usize,
    pub master_seed: u64,
    pub workers: usize,
    /// Skip grid search and use the base configuration's values.
    pub skip_search: bool,
}

fn tune(
    ctx: &ExperimentContext,
    plan: &ExperimentPlan,
    approach: Approach,
    skip: bool,
    out: Option<&Path>,
) -> Result<GridSearchResult> {
    let p = ExperimentPlan {
        approach,
        ..plan.clone()
    };
    let result = if skip {
        let hp = p.grids.points(approach, &ctx.base)?[0];
        let hp = HyperParams {
            learning_rate: ctx.base.learning_rate,
            ..hp
        };
        GridSearchResult {
            approach,
            level: plan.level,
            reserved_seed: reserved_seed(plan.master_seed, &ctx.dataset_id, plan.level, plan.n_trials),
            chosen: hp,
            chosen_ood_accuracy: 0.0,
            table: Vec::new(),
        }
    } else {
        grid_search(ctx, &p)?
    };
    if let Some(o) = out {
        let d = o.join(approach.as_str());
        std::fs::create_dir_all(&d)?;
        std::fs::write(d.join("grid_search.json"), serde_json::to_string_pretty(&result)?)?;
    }
    Ok(result)
}

/// Runs every (dataset, diversity, approach) cell and derives the deltas
/// against baseline. Results go to `out/<dataset>/<level>/<approach>/`.
pub fn run_matrix(
    contexts: &[ExperimentContext],
    settings: &MatrixSettings,
    out: Option<&Path>,
) -> Result<MatrixResult> {
    if settings.approaches.is_empty() || settings.levels.is_empty() || contexts.is_empty() {
        return Err(Error::Plan("matrix needs datasets, levels and approaches".into()));
    }
    if !settings.approaches.contains(&Approach::Baseline) {
        return Err(Error::Plan("the baseline approach is required for deltas".into()));
    }
    let mut cells = Vec::new();
    let mut deltas = Vec::new();
    for ctx in contexts {
        for &level in &settings.levels {
            let plan = ExperimentPlan {
                level,
                approach: Approach::Baseline,
                grids: settings.grids.clone(),
                n_trials: settings.n_trials,
                master_seed: settings.master_seed,
                workers: settings.workers,
            };
            let cell_dir = out.map(|o| o.join(&ctx.dataset_id).join(level.as_str()));
            let needs_singles = settings.approaches.iter().any(|a| a.is_combined());
            let mut searches: Vec<GridSearchResult> = Vec::new();
            let search = |a: Approach, searches: &mut Vec<GridSearchResult>| -> Result<GridSearchResult> {
                if let Some(s) = searches.iter().find(|s| s.approach == a) {
                    return Ok(s.clone());
                }
                let s = tune(ctx, &plan, a, settings.skip_search, cell_dir.as_deref())?;
                searches.push(s.clone());
                Ok(s)
            };
            if needs_singles {
                for a in Approach::SINGLES {
                    search(a, &mut searches)?;
                }
            }
            let mut cell_results: Vec<CellResult> = Vec::new();
            for &approach in &settings.approaches {
                let dir = cell_dir.as_ref().map(|d| d.join(approach.as_str()));
                let (trained, summary) = if approach.is_combined() {
                    let tuned = TunedSet {
                        searches: searches.clone(),
                    };
                    combined_run(ctx, &plan, approach, &tuned, dir.as_deref())?
                } else {
                    let s = search(approach, &mut searches)?;
                    let p = ExperimentPlan {
                        approach,
                        ..plan.clone()
                    };
                    (approach, run_trials(ctx, &p, approach, &s.chosen, dir.as_deref())?)
                };
                let agg = summary.aggregate.ok_or_else(|| {
                    let first = summary.trials.iter().find_map(|t| t.error.as_deref()).unwrap_or("none");
                    Error::Plan(format!(
                        "{}/{level}/{approach}: fewer than 2 successful trials (first error: {first})",
                        ctx.dataset_id
                    ))
                })?;
                let cell = CellResult {
                    dataset: ctx.dataset_id.clone(),
                    level,
                    approach,
                    trained_approach: trained,
                    hyper: summary.hyper,
                    aggregate: agg,
                    trials: summary.trials,
                };
                if let Some(d) = &dir {
                    std::fs::write(d.join("cell.json"), serde_json::to_string_pretty(&cell)?)?;
                }
                cell_results.push(cell);
            }
            let base = cell_results
                .iter()
                .find(|c| c.approach == Approach::Baseline)
                .ok_or_else(|| Error::Plan("missing baseline cell".into()))?
                .aggregate;
            for c in cell_results.iter().filter(|c| c.approach != Approach::Baseline) {
                let da = c.aggregate.ood_accuracy.0 - base.ood_accuracy.0;
                let ds = c.aggregate.si_summary.0 - base.si_summary.0;
                deltas.push(DeltaRecord {
                    dataset: ctx.dataset_id.clone(),
                    level,
                    approach: c.approach,
                    delta_ood_accuracy: da,
                    delta_si: ds,
                    outcome: DeltaOutcome {
                        acc: Sign::of_delta(da),
                        si: Sign::of_delta(ds),
                    },
                });
            }
            cells.extend(cell_results);
        }
    }
    let result = MatrixResult {
        settings: settings.clone(),
        cells,
        deltas,
    };
    if let Some(o) = out {
        std::fs::create_dir_all(o)?;
        std::fs::write(o.join("summary.json"), serde_json::to_string_pretty(&result)?)?;
    }
    Ok(result)
}
