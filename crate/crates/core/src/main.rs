use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oodbench::analysis::si_report;
use oodbench::config::{load_config, DataConfig, IdxSource, Overrides, RunConfig};
use oodbench::datagen::{save_dataset, Dataset};
use oodbench::experiment::{
    approach_config, grid_search, report, run_matrix, seeded_split, Approach, ExperimentPlan, GridChoice,
    HyperParams, MatrixResult,
};
use oodbench::neuralcore::{finite_difference_check, load_checkpoint, write_checkpoint, LossEval, NetworkSpec, ParamStore};
use oodbench::seeds;
use oodbench::splits::{load_split, save_split, LevelLabel, SplitBundle};
use oodbench::training::{image_batch, objective, train_with_observer, EpochCsvWriter};
use oodbench::{Error, Result};

const AFTER_HELP: &str = "\
Configuration: a JSON document with sections config_version (1), data, split,
network, train and experiment. Every key is optional; `{}` gives the defaults:
  data.grid: 9 categories x 9 conditions on a 3x3 grid, glyph 14, canvas 42,
             20 samples per combination, noise_std 0.1
  split: degrees [2, 4, 8], sizes train 270 / val 72 / ood 162, level low
  network: mini_resnet, channels 16, hidden 64, bn_epsilon 0.001
  train: learning_rate 0.001, epochs 100, late_stopping_epochs 1000,
         batch_size 32, bn_momentum 0.99, lambda 0, pair_refresh_interval 10
  experiment: n_trials 5, grid full, approaches baseline/late_stopping/
              tuned_bn/invariance_loss, levels low/medium/high, workers 1
Unknown keys are rejected. Flags override file values; the effective config
is written to every output directory as effective_config.json.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
OODBENCH_DETERMINISTIC=1 forces single-worker execution.";

#[derive(Parser)]
#[command(name = "oodbench", version, about = "Bias-controlled OoD benchmark harness", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Batch-norm momentum override.
    #[arg(long)]
    bn_momentum: Option<f64>,
    /// Diversity level override (low, medium, high).
    #[arg(long)]
    level: Option<LevelLabel>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural Grid-Positions dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Build a positions dataset from IDX image and label files.
    IngestIdx {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Number of smallest class ids kept (default: the grid's categories).
        #[arg(long)]
        classes_kept: Option<usize>,
    },
    /// Sample a combination ladder and write one InD/OoD split.
    Split {
        #[command(flatten)]
        common: Common,
        /// Stored dataset directory (default: the configured data).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one network and write epoch CSV and checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Stored split directory (default: a split from the configuration).
        #[arg(long)]
        split: Option<PathBuf>,
        /// baseline, late-stopping, tuned-bn, invariance-loss or three-together.
        #[arg(long)]
        approach: Option<Approach>,
    },
    /// Score probe-layer neurons of a checkpoint.
    AnalyzeSi {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Stored dataset directory (default: the configured data).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Network JSON (default: network.json next to the checkpoint, then the configuration).
        #[arg(long)]
        network: Option<PathBuf>,
    },
    /// Compare backprop gradients with finite differences in 64-bit mode.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Invariance weight of the checked objective (default: the configured lambda).
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Reserved-trial hyperparameter search for one approach.
    GridSearch {
        #[command(flatten)]
        common: Common,
        /// late-stopping, tuned-bn, invariance-loss or baseline.
        #[arg(long)]
        approach: Approach,
        #[arg(long)]
        grid: Option<GridChoice>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the dataset x diversity x approach matrix.
    RunMatrix {
        #[command(flatten)]
        common: Common,
        /// Run baseline plus this approach only.
        #[arg(long)]
        approach: Option<Approach>,
        #[arg(long)]
        grid: Option<GridChoice>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Emit CSV tables from a matrix summary.json.
    Report {
        #[command(flatten)]
        common: Common,
        /// summary.json written by run-matrix.
        #[arg(long)]
        input: PathBuf,
    },
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        seed: c.seed,
        bn_momentum: c.bn_momentum,
        level: c.level,
        ..Overrides::default()
    }
}

fn setup(c: &Common, extra: Overrides) -> Result<RunConfig> {
    let mut o = overrides(c);
    o.workers = extra.workers;
    o.grid = extra.grid;
    o.approach = extra.approach;
    let cfg = load_config(c.config.as_deref(), &o)?;
    cfg.write_effective(&c.out)?;
    Ok(cfg)
}

fn dataset_from(cfg: &RunConfig, dir: Option<&Path>) -> Result<Dataset> {
    match dir {
        Some(d) => DataConfig {
            dir: Some(d.to_path_buf()),
            ..cfg.data.clone()
        }
        .load(),
        None => cfg.data.load(),
    }
}

fn config_split(cfg: &RunConfig, dataset: &Dataset) -> Result<SplitBundle> {
    seeded_split(
        dataset,
        &cfg.split.degrees,
        cfg.split.sizes,
        cfg.split.level,
        cfg.split.seed,
    )
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = setup(&common, Overrides::default())?;
            let ds = cfg.data.load()?;
            save_dataset(&ds, &common.out.join("dataset"))?;
            println!(
                "wrote {} items ({} categories x {} conditions) to {}",
                ds.len(),
                ds.num_categories,
                ds.num_conditions,
                common.out.join("dataset").display()
            );
        }
        Command::IngestIdx {
            common,
            images,
            labels,
            classes_kept,
        } => {
            let o = overrides(&common);
            let mut cfg = load_config(common.config.as_deref(), &o)?;
            cfg.data.idx = Some(IdxSource {
                images,
                labels,
                classes_kept,
            });
            cfg.data.dir = None;
            cfg.write_effective(&common.out)?;
            let ds = cfg.data.load()?;
            save_dataset(&ds, &common.out.join("dataset"))?;
            println!("wrote {} items to {}", ds.len(), common.out.join("dataset").display());
        }
        Command::Split { common, data } => {
            let mut cfg = setup(&common, Overrides::default())?;
            if let Some(d) = &data {
                cfg.data.dir = Some(d.clone());
                cfg.write_effective(&common.out)?;
            }
            let ds = cfg.data.load()?;
            let bundle = config_split(&cfg, &ds)?;
            save_split(&bundle, &cfg.split.degrees, &common.out.join("split"))?;
            println!(
                "level {} (degree {}): {} InD combinations, train/val/ood {}/{}/{}",
                bundle.level,
                bundle.degree,
                bundle.combos.len(),
                bundle.train.len(),
                bundle.val.len(),
                bundle.ood.len()
            );
        }
        Command::Train {
            common,
            split,
            approach,
        } => {
            let mut cfg = load_config(common.config.as_deref(), &overrides(&common))?;
            if let Some(dir) = split {
                cfg.split.dir = Some(dir);
            }
            cfg.train = match approach {
                None => cfg.train.clone(),
                Some(Approach::BestOfThree) => {
                    return Err(Error::Config {
                        pointer: "--approach".into(),
                        msg: "best-of-three needs run-matrix (it selects among tuned approaches)".into(),
                    })
                }
                Some(a) => approach_config(a, &HyperParams::from_config(&cfg.train), &cfg.train, cfg.train.seed),
            };
            cfg.write_effective(&common.out)?;
            let bundle = match &cfg.split.dir {
                Some(dir) => load_split(dir)?.0,
                None => config_split(&cfg, &cfg.data.load()?)?,
            };
            let network = cfg.network.build(
                bundle.train.height,
                bundle.train.width,
                bundle.train.num_categories,
                cfg.train.bn_momentum,
            )?;
            let train_cfg = &cfg.train;
            let mut csv = EpochCsvWriter::create(&common.out.join("epochs.csv"))?;
            let outcome = train_with_observer(train_cfg, &bundle, &network, &mut |r| csv.write(r))?;
            let bytes = write_checkpoint(&outcome.params);
            let hash = seeds::sha256_hex(&bytes);
            std::fs::write(common.out.join("checkpoint.bin"), &bytes)?;
            std::fs::write(common.out.join("checkpoint.sha256"), format!("{hash}\n"))?;
            write_json(&common.out.join("network.json"), &outcome.spec)?;
            let last = outcome.records.last().expect("at least one epoch");
            println!(
                "epochs {} restarts {} ind_val_acc {:.4} ood_acc {:.4} checkpoint sha256 {hash}",
                outcome.records.len(),
                outcome.restarts,
                last.ind_val_accuracy,
                last.ood_accuracy
            );
        }
        Command::AnalyzeSi {
            common,
            checkpoint,
            data,
            network,
        } => {
            let cfg = setup(&common, Overrides::default())?;
            let ds = dataset_from(&cfg, data.as_deref())?;
            let sibling = checkpoint.with_file_name("network.json");
            let spec: NetworkSpec = match network.or_else(|| sibling.exists().then_some(sibling)) {
                Some(p) => serde_json::from_slice(&std::fs::read(&p)?)?,
                None => cfg.network_for(&ds)?,
            };
            let params: ParamStore<f32> = load_checkpoint(&checkpoint, &spec)?;
            let report = si_report(&params, &spec, &ds, "full_grid")?;
            write_json(&common.out.join("si_report.json"), &report)?;
            println!(
                "{} neurons ({} degenerate), layer SI summary {:.4}",
                report.neurons.len(),
                report.degenerate_count,
                report.summary.summary
            );
        }
        Command::Gradcheck {
            common,
            batch,
            step,
            tol,
            lambda,
        } => {
            let cfg = setup(&common, Overrides::default())?;
            let ds = cfg.data.load()?;
            let spec = cfg.network_for(&ds)?;
            let lambda = lambda.unwrap_or(cfg.train.lambda);
            if batch < 2 || batch > ds.len() {
                return Err(Error::InvalidArgument(format!("batch must be in [2, {}]", ds.len())));
            }
            let params = ParamStore::<f64>::init(&spec, cfg.train.seed)?;
            let stride = ds.len() / batch;
            let items: Vec<usize> = (0..batch).map(|i| i * stride).collect();
            let labels: Vec<usize> = items.iter().map(|&i| ds.items[i].category).collect();
            let paired = lambda > 0.0;
            let x = if paired {
                // Partner of each item: the next item of the same category.
                let partners: Vec<usize> = items
                    .iter()
                    .map(|&i| {
                        let c = ds.items[i].category;
                        (1..ds.len())
                            .map(|d| (i + d) % ds.len())
                            .find(|&j| ds.items[j].category == c)
                            .unwrap_or(i)
                    })
                    .collect();
                image_batch::<f64>(&ds, &[items.clone(), partners].concat())
            } else {
                image_batch::<f64>(&ds, &items)
            };
            let loss = |t: &_| -> Result<LossEval> {
                let o = objective(t, &labels, lambda, paired)?;
                Ok(LossEval {
                    loss: o.total,
                    logit_grad: o.logit_grad,
                    probe_grad: o.probe_grad,
                })
            };
            let r = finite_difference_check(&spec, &params, &x, &loss, step, tol, cfg.train.seed)?;
            let mut lines = String::from("tensor,checked,max_rel_error\n");
            for t in &r.tensors {
                lines.push_str(&format!("{},{},{:e}\n", t.name, t.checked, t.max_rel_error));
            }
            std::fs::write(common.out.join("gradcheck.csv"), &lines)?;
            print!("{lines}");
            println!(
                "max relative error {:e} (tol {:e}): {}",
                r.max_rel_error,
                r.tol,
                if r.passed { "PASS" } else { "FAIL" }
            );
            if !r.passed {
                return Err(Error::Numeric(format!(
                    "gradient check failed at {:?}",
                    r.worst
                )));
            }
        }
        Command::GridSearch {
            common,
            approach,
            grid,
            workers,
        } => {
            let cfg = setup(
                &common,
                Overrides {
                    grid,
                    workers,
                    ..Overrides::default()
                },
            )?;
            let ctx = cfg.context(&cfg.data)?;
            let plan = ExperimentPlan {
                level: cfg.split.level,
                approach,
                grids: cfg.experiment.resolved_grids(),
                n_trials: cfg.experiment.n_trials,
                master_seed: cfg.experiment.master_seed,
                workers: cfg.experiment.workers,
            };
            let result = match grid_search(&ctx, &plan) {
                Err(Error::SearchFailure { table }) => {
                    write_json(&common.out.join("grid_search_failed.json"), &table)?;
                    return Err(Error::SearchFailure { table });
                }
                r => r?,
            };
            write_json(&common.out.join("grid_search.json"), &result)?;
            let h = result.chosen;
            println!(
                "{} points; chosen lr {} bn_momentum {} lambda {} T {} (reserved-trial ood {:.4})",
                result.table.len(),
                h.learning_rate,
                h.bn_momentum,
                h.lambda,
                h.pair_refresh_interval,
                result.chosen_ood_accuracy
            );
        }
        Command::RunMatrix {
            common,
            approach,
            grid,
            workers,
        } => {
            let cfg = setup(
                &common,
                Overrides {
                    approach,
                    grid,
                    workers,
                    ..Overrides::default()
                },
            )?;
            let contexts = cfg.contexts()?;
            let m = run_matrix(&contexts, &cfg.matrix_settings(), Some(&common.out))?;
            println!(
                "{} cells, {} deltas; summary at {}",
                m.cells.len(),
                m.deltas.len(),
                common.out.join("summary.json").display()
            );
        }
        Command::Report { common, input } => {
            setup(&common, Overrides::default())?;
            let m: MatrixResult = serde_json::from_slice(&std::fs::read(&input)?)?;
            let out = &common.out;
            std::fs::write(out.join("accuracy_ci.csv"), report::accuracy_ci_csv(&m))?;
            let (scatter, r) = report::si_scatter_csv(&m)?;
            std::fs::write(out.join("si_accuracy_scatter.csv"), scatter)?;
            let r_text = r.map(|v| format!("{v:.6}")).unwrap_or_else(|| "undefined".into());
            std::fs::write(
                out.join("si_accuracy_pearson.csv"),
                format!("n,pearson_r\n{},{r_text}\n", m.cells.len()),
            )?;
            std::fs::write(out.join("strategy_wins.csv"), report::strategy_wins_csv(&m)?)?;
            std::fs::write(out.join("delta_frequencies.csv"), report::delta_frequencies_csv(&m)?)?;
            println!("wrote report tables to {} (pearson r {r_text})", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
