//! End-to-end acceptance checks, one test per criterion. Each test prints a
//! `CRITERION n: PASS|FAIL` line; `--nocapture` also shows per-run details.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oodbench::analysis::{
    delta_frequency_table, format_percent, mean_ci95, mean_pair_distance, neuron_scores, pairwise_win_counts,
    pairwise_win_counts_by_dataset, pearson, score_cells, si_report, ActivityTable, CellKey, DeltaOutcome, Sign,
};
use oodbench::datagen::idx::{read_idx, write_idx, IdxArray};
use oodbench::datagen::{generate_grid_positions, Dataset, GridSpec};
use oodbench::experiment::{
    grid_search, run_one, trial_seed, Approach, ExperimentContext, ExperimentPlan, Grids, HyperParams,
};
use oodbench::neuralcore::{
    finite_difference_check, forward, LayerSpec, LossEval, Mode, NetworkSpec, ParamStore, Tensor,
};
use oodbench::splits::{diversity, partition, sample_combination_ladder, Fraction, LevelLabel, SplitSizes};
use oodbench::training::{objective, TrainConfig};
use oodbench::Error;

/// Serializes the timed tests so their clocks do not share the CPU.
static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes to the stdout handle directly so the line survives test output capture.
fn report(n: usize, pass: bool, detail: &str) {
    let line = format!("\nCRITERION {n}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

// ---------------------------------------------------------------- 1

fn split_invariants(dataset: &Dataset, degrees: &[usize], sizes: SplitSizes, seed: u64) -> Result<(), String> {
    let n = dataset.num_conditions;
    let ladder = sample_combination_ladder(n, n, degrees, seed).map_err(|e| e.to_string())?;
    if ladder.levels.len() != degrees.len() {
        return Err("wrong number of levels".into());
    }
    let mut previous: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (level, &k) in ladder.levels.iter().zip(degrees) {
        let combos = &level.combos;
        if level.degree != k {
            return Err(format!("level degree {} != {k}", level.degree));
        }
        if diversity(combos) != Fraction::new((k * n) as u64, (n * n) as u64) || combos.len() != k * n {
            return Err(format!("diversity of k={k} is {:?}", diversity(combos)));
        }
        if !combos.covers_all() {
            return Err(format!("k={k} misses a category or condition"));
        }
        if combos.category_degrees().iter().any(|&d| d != k) || combos.condition_degrees().iter().any(|&d| d != k)
        {
            return Err(format!("k={k} is not k-regular"));
        }
        if !previous.is_subset(&combos.pairs) {
            return Err(format!("k={k} does not contain the previous level"));
        }
        previous = combos.pairs.clone();

        let split = partition(dataset, combos, level.label, k, sizes, seed).map_err(|e| e.to_string())?;
        let complement: BTreeSet<(usize, usize)> = combos.complement().into_iter().collect();
        if complement.len() + combos.len() != n * n || complement.iter().any(|p| combos.pairs.contains(p)) {
            return Err("complement overlaps the training combinations".into());
        }
        let pairs = |d: &Dataset| -> BTreeSet<(usize, usize)> {
            d.items.iter().map(|i| (i.category, i.condition)).collect()
        };
        if !pairs(&split.train).is_subset(&combos.pairs) || !pairs(&split.val).is_subset(&combos.pairs) {
            return Err("in-distribution item outside the combination set".into());
        }
        if pairs(&split.ood) != complement {
            return Err(format!("OoD labels at k={k} are not the complement"));
        }
        let all: BTreeSet<usize> = split
            .train_indices
            .iter()
            .chain(&split.val_indices)
            .chain(&split.ood_indices)
            .copied()
            .collect();
        if all.len() != sizes.train + sizes.val + sizes.ood {
            return Err("splits overlap".into());
        }
    }
    Ok(())
}

#[test]
fn criterion_1_split_invariants() {
    let _g = heavy();
    let start = Instant::now();
    let small = |n: usize, samples: usize| GridSpec {
        num_categories: n,
        num_conditions: n,
        glyph_size: 4,
        canvas_size: 12,
        samples_per_combination: samples,
        ..GridSpec::default()
    };
    let d9 = generate_grid_positions(&small(9, 20), 1).unwrap();
    let d5 = generate_grid_positions(&small(5, 40), 2).unwrap();
    let s9 = SplitSizes { train: 200, val: 40, ood: 72 };
    let s5 = SplitSizes { train: 250, val: 50, ood: 150 };
    let mut failures = Vec::new();
    for seed in 0..100u64 {
        if let Err(e) = split_invariants(&d9, &[2, 4, 8], s9, seed) {
            failures.push(format!("9x9 seed {seed}: {e}"));
        }
        if let Err(e) = split_invariants(&d5, &[2, 3, 4], s5, seed) {
            failures.push(format!("5x5 seed {seed}: {e}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 5.0;
    report(1, pass, &format!("200 ladders, {} failures, {secs:.2} s", failures.len()));
    assert!(failures.is_empty(), "{failures:?}");
    assert!(secs < 5.0, "took {secs:.2} s");
}

// ---------------------------------------------------------------- 2

fn random_batch(b: usize, shape: (usize, usize, usize), seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = shape;
    Tensor::new(vec![b, c, h, w], (0..b * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn paired_check(spec: &NetworkSpec, lambda: f64, paired: bool, seed: u64) -> (f64, bool, Vec<String>) {
    let params = ParamStore::<f64>::init(spec, seed).unwrap();
    let labels: Vec<usize> = (0..4).map(|i| i % spec.num_classes).collect();
    let b = if paired { 2 * labels.len() } else { labels.len() };
    let x = random_batch(b, spec.input, seed + 100);
    let loss = |t: &oodbench::neuralcore::ForwardTrace<f64>| {
        let o = objective(t, &labels, lambda, paired)?;
        Ok(LossEval {
            loss: o.total,
            logit_grad: o.logit_grad,
            probe_grad: o.probe_grad,
        })
    };
    let r = finite_difference_check(spec, &params, &x, &loss, 1e-4, 1e-4, seed).unwrap();
    let names = r.tensors.iter().map(|t| t.name.clone()).collect();
    (r.max_rel_error, r.passed, names)
}

#[test]
fn criterion_2_gradient_correctness() {
    let _g = heavy();
    let start = Instant::now();
    let resnet = NetworkSpec::mini_resnet((1, 6, 6), 3, 3, 5, 0.99, 1e-3);
    // Biased layers here feed no batch norm, whose centering would zero their bias gradient.
    let biased = NetworkSpec {
        input: (2, 4, 4),
        layers: vec![
            LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 1, pad: 1, bias: true },
            LayerSpec::Relu,
            LayerSpec::AvgPool { kernel: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { out: 3 },
        ],
        probe_index: 5,
        num_classes: 3,
    };
    let cases = [
        ("mini-resnet ce", &resnet, 0.0, false),
        ("mini-resnet ce+0.1*inv", &resnet, 0.1, true),
        ("conv-bias/dense ce+0.1*inv", &biased, 0.1, true),
    ];
    let mut worst: f64 = 0.0;
    let mut all = true;
    let mut tensors = BTreeSet::new();
    for (i, (name, spec, lambda, paired)) in cases.iter().enumerate() {
        let (err, ok, names) = paired_check(spec, *lambda, *paired, 7 + i as u64);
        println!("  {name}: max relative error {err:.3e}");
        worst = worst.max(err);
        all &= ok;
        tensors.extend(names);
    }
    let secs = start.elapsed().as_secs_f64();
    // Every parameterized layer kind is represented among the checked tensors.
    let joined = tensors.iter().cloned().collect::<Vec<_>>().join(" ");
    let covered = ["conv", "dense", "gamma", "beta"].iter().all(|k| joined.contains(k));
    let pass = all && covered && secs < 60.0;
    report(2, pass, &format!("max relative error {worst:.3e}, {secs:.1} s"));
    assert!(covered, "checked tensors: {joined}");
    assert!(all, "worst relative error {worst:e}");
    assert!(secs < 60.0);
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_bn_momentum() {
    let spec = NetworkSpec::mlp((1, 2, 2), 2, 3, 0.0, 1e-3);
    let base = ParamStore::<f64>::init(&spec, 3).unwrap();
    let x = random_batch(5, (1, 2, 2), 9);
    let trace = forward(&spec, &base, &x, Mode::Train).unwrap();
    let (bm, bv) = {
        let s = trace.batch_statistics();
        (s[0].0.to_vec(), s[0].1.to_vec())
    };
    let mut errs: Vec<f64> = Vec::new();

    let mut p0 = base.clone();
    p0.set_bn_momentum(0.0).unwrap();
    p0.update_running_stats(&trace).unwrap();
    let bn = p0.batch_norms()[0];
    errs.extend(bn.running_mean.iter().zip(&bm).map(|(a, b)| (a - b).abs()));
    errs.extend(bn.running_var.iter().zip(&bv).map(|(a, b)| (a - b).abs()));

    let mut p1 = base.clone();
    p1.set_bn_momentum(1.0).unwrap();
    let before = p1.batch_norms()[0].clone();
    p1.update_running_stats(&trace).unwrap();
    let after = p1.batch_norms()[0];
    errs.extend(after.running_mean.iter().zip(&before.running_mean).map(|(a, b)| (a - b).abs()));
    errs.extend(after.running_var.iter().zip(&before.running_var).map(|(a, b)| (a - b).abs()));

    let mut half = before.clone();
    half.momentum = 0.5;
    half.running_mean = vec![0.0; 3];
    half.update_running(&[2.0; 3], &[1.0; 3]).unwrap();
    errs.extend(half.running_mean.iter().map(|v| (v - 1.0).abs()));

    let worst = errs.iter().cloned().fold(0.0, f64::max);
    report(3, worst <= 1e-12, &format!("max deviation {worst:.1e}"));
    assert!(worst <= 1e-12);
}

// ---------------------------------------------------------------- 4

/// Independent transcription of the scoring rules on raw cell means
/// `means[j][c][n]`: per-neuron min-max normalization, preferred category by
/// highest mean, selectivity contrast, invariance from the preferred range.
fn oracle(means: &[Vec<Vec<f64>>]) -> Vec<(usize, f64, f64, f64)> {
    means
        .iter()
        .map(|m| {
            let flat: Vec<f64> = m.iter().flatten().copied().collect();
            let lo = flat.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = flat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let a: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|v| (v - lo) / (hi - lo)).collect()).collect();
            let row_mean = |r: &Vec<f64>| r.iter().sum::<f64>() / r.len() as f64;
            let mut pref = 0;
            for c in 0..a.len() {
                if row_mean(&a[c]) > row_mean(&a[pref]) {
                    pref = c;
                }
            }
            let hat = row_mean(&a[pref]);
            let others: Vec<f64> = (0..a.len()).filter(|&c| c != pref).flat_map(|c| a[c].clone()).collect();
            let bar = others.iter().sum::<f64>() / others.len() as f64;
            let s = (hat - bar) / (hat + bar);
            let max = a[pref].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = a[pref].iter().cloned().fold(f64::INFINITY, f64::min);
            let inv = 1.0 - (max - min);
            (pref, s, inv, (s * inv).sqrt())
        })
        .collect()
}

#[test]
fn criterion_4_si_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut mismatched_pref = 0;
    for _ in 0..1000 {
        let (j, nc, nn) = (rng.random_range(1..6), rng.random_range(2..7), rng.random_range(2..7));
        let means: Vec<Vec<Vec<f64>>> = (0..j)
            .map(|_| (0..nc).map(|_| (0..nn).map(|_| rng.random_range(-2.0..3.0)).collect()).collect())
            .collect();
        let flat: Vec<f64> = means.iter().flatten().flatten().copied().collect();
        let table = ActivityTable::from_means(&flat, j, nc, nn, vec![1; nc * nn]).unwrap();
        for (got, want) in neuron_scores(&table).iter().zip(oracle(&means)) {
            if got.preferred_category != want.0 {
                mismatched_pref += 1;
            }
            worst = worst
                .max((got.selectivity - want.1).abs())
                .max((got.invariance - want.2).abs())
                .max((got.si - want.3).abs());
        }
    }
    let hand = score_cells(&[0.8, 0.4, 0.2, 0.2], 2, 2, false);
    let hand_err = (hand.selectivity - 0.5)
        .abs()
        .max((hand.invariance - 0.6).abs())
        .max((hand.si - 0.3f64.sqrt()).abs());
    let pass = worst <= 1e-12 && mismatched_pref == 0 && hand_err <= 1e-12;
    report(4, pass, &format!("1000 tables max deviation {worst:.1e}, hand case {hand_err:.1e}"));
    assert_eq!(mismatched_pref, 0);
    assert!(worst <= 1e-12);
    assert!(hand_err <= 1e-12, "{hand:?}");
}

// ---------------------------------------------------------------- 5

/// Records with the given counts of (acc+, SI+), (acc-, SI+), (acc+, SI-), (acc-, SI-).
fn records(pp: usize, mp: usize, pm: usize, mm: usize) -> Vec<DeltaOutcome> {
    let o = |acc, si| DeltaOutcome { acc, si };
    let mut v = Vec::new();
    v.extend(std::iter::repeat_n(o(Sign::Plus, Sign::Plus), pp));
    v.extend(std::iter::repeat_n(o(Sign::Minus, Sign::Plus), mp));
    v.extend(std::iter::repeat_n(o(Sign::Plus, Sign::Minus), pm));
    v.extend(std::iter::repeat_n(o(Sign::Minus, Sign::Minus), mm));
    v
}

fn row(outcomes: &[DeltaOutcome]) -> [String; 4] {
    let t = delta_frequency_table(outcomes).unwrap();
    [
        format_percent(&t.p_acc_up),
        format_percent(&t.p_si_up),
        format_percent(&t.p_acc_up_given_si_up),
        format_percent(&t.p_acc_up_given_si_down),
    ]
}

/// Orderings per level of (best of three, three together, baseline).
fn cube() -> BTreeMap<&'static str, [[f64; 3]; 3]> {
    let (high, mid, low) = (0.9, 0.6, 0.3);
    let bt_b = [high, mid, low];
    let b_bt = [high, low, mid];
    let btb_ = [low, mid, high];
    let tbb = [mid, high, low];
    BTreeMap::from([
        ("digits", [bt_b, b_bt, b_bt]),
        ("toys", [bt_b, b_bt, btb_]),
        ("cars", [bt_b, b_bt, b_bt]),
        ("goods", [tbb, tbb, b_bt]),
    ])
}

#[test]
fn criterion_5_tabulation_fixtures() {
    let late = records(5, 1, 4, 2);
    let bn = records(8, 2, 1, 1);
    let inv = records(10, 0, 1, 1);
    let total: Vec<DeltaOutcome> = late.iter().chain(&bn).chain(&inv).copied().collect();
    let expected = [
        ("late stopping", &late, ["75.0 (9/12)", "50.0 (6/12)", "83.3 (5/6)", "66.7 (4/6)"]),
        ("tuned BN", &bn, ["75.0 (9/12)", "83.3 (10/12)", "80.0 (8/10)", "50.0 (1/2)"]),
        ("invariance loss", &inv, ["91.7 (11/12)", "83.3 (10/12)", "100.0 (10/10)", "50.0 (1/2)"]),
        ("total", &total, ["80.6 (29/36)", "72.2 (26/36)", "88.5 (23/26)", "60.0 (6/10)"]),
    ];
    let mut ok = true;
    for (name, outcomes, want) in &expected {
        let got = row(outcomes);
        println!("  {name}: {}", got.join(" | "));
        ok &= got.iter().zip(want.iter()).all(|(g, w)| g == w);
    }
    let t = delta_frequency_table(&total).unwrap();
    ok &= t.p_acc_up_given_si_up == Fraction::new(23, 26) && t.p_acc_up_given_si_down == Fraction::new(6, 10);

    let mut best = BTreeMap::new();
    let mut together = BTreeMap::new();
    let mut baseline = BTreeMap::new();
    for (ds, levels) in cube() {
        for (level, [b, t, base]) in ["low", "medium", "high"].iter().zip(levels) {
            let key: CellKey = (ds.to_string(), level.to_string());
            best.insert(key.clone(), b);
            together.insert(key.clone(), t);
            baseline.insert(key, base);
        }
    }
    let totals = [
        pairwise_win_counts(&best, &baseline).unwrap(),
        pairwise_win_counts(&together, &baseline).unwrap(),
        pairwise_win_counts(&best, &together).unwrap(),
    ];
    let shown: Vec<String> = totals.iter().map(|w| format!("{} vs {}", w.wins_a, w.wins_b)).collect();
    println!("  win totals: {}", shown.join(", "));
    ok &= shown == ["11 vs 1", "5 vs 7", "9 vs 3"] && totals.iter().all(|w| w.ties == 0);
    let (per, _) = pairwise_win_counts_by_dataset(&best, &together).unwrap();
    ok &= per["goods"].wins_a == 1 && per["goods"].wins_b == 2 && per["toys"].wins_a == 2;
    report(5, ok, "frequency rows and win-count totals");
    assert!(ok);
}

// ---------------------------------------------------------------- 6 and 7

const DESK_SEEDS: usize = 3;
const MASTER_SEED: u64 = 2024;

fn desk_context() -> &'static ExperimentContext {
    static CTX: OnceLock<ExperimentContext> = OnceLock::new();
    CTX.get_or_init(|| {
        let grid = GridSpec {
            num_categories: 5,
            num_conditions: 5,
            glyph_size: 14,
            canvas_size: 42,
            samples_per_combination: 40,
            ..GridSpec::default()
        };
        ExperimentContext {
            dataset_id: "grid_positions".into(),
            dataset: generate_grid_positions(&grid, 11).unwrap(),
            reserved_dataset: generate_grid_positions(&grid, 12).unwrap(),
            degrees: vec![2, 3, 4],
            sizes: SplitSizes { train: 250, val: 50, ood: 150 },
            network: NetworkSpec::mini_resnet((1, 42, 42), 5, 16, 64, 0.99, 1e-3),
            base: TrainConfig {
                learning_rate: 0.001,
                epochs: 60,
                bn_momentum: 0.99,
                ..TrainConfig::default()
            },
        }
    })
}

struct DeskRun {
    level: LevelLabel,
    trial: usize,
    val: f64,
    ood: f64,
    secs: f64,
    /// Held-out pair distance and full-grid SI summary, medium level only.
    probe: Option<(f64, f64)>,
}

fn held_out(val: &Dataset, ood: &Dataset) -> Dataset {
    let mut d = val.clone();
    d.items.extend(ood.items.iter().cloned());
    d
}

fn desk_run(approach: Approach, hp: &HyperParams, level: LevelLabel, trial: usize) -> DeskRun {
    let ctx = desk_context();
    let seed = trial_seed(MASTER_SEED, &ctx.dataset_id, level, trial);
    let start = Instant::now();
    let run = run_one(ctx, &ctx.dataset, level, approach, hp, seed, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let last = run.outcome.records.last().unwrap();
    let probe = (level == LevelLabel::Medium).then(|| {
        let (p, s) = (&run.outcome.params, &run.outcome.spec);
        let dist = mean_pair_distance(p, s, &held_out(&run.split.val, &run.split.ood), 5).unwrap();
        let si = si_report(p, s, &ctx.dataset, "full grid").unwrap().summary.summary;
        (dist, si)
    });
    DeskRun {
        level,
        trial,
        val: last.ind_val_accuracy,
        ood: last.ood_accuracy,
        secs,
        probe,
    }
}

/// Baseline runs for every (level, trial); shared by criteria 6 and 7.
/// Callers must hold the `HEAVY` lock.
fn baseline_runs() -> &'static [DeskRun] {
    static RUNS: OnceLock<Vec<DeskRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let hp = HyperParams::from_config(&desk_context().base);
        let mut runs = Vec::new();
        for trial in 0..DESK_SEEDS {
            for level in LevelLabel::ALL {
                let r = desk_run(Approach::Baseline, &hp, level, trial);
                println!(
                    "  baseline trial {trial} {}: val {:.3} ood {:.3} ({:.0} s)",
                    level.as_str(),
                    r.val,
                    r.ood,
                    r.secs
                );
                runs.push(r);
            }
        }
        runs
    })
}

#[test]
fn criterion_6_diversity_trend() {
    let _g = heavy();
    let runs = baseline_runs();
    let mean = |level: LevelLabel, f: &dyn Fn(&DeskRun) -> f64| {
        let v: Vec<f64> = runs.iter().filter(|r| r.level == level).map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let val: Vec<f64> = LevelLabel::ALL.iter().map(|&l| mean(l, &|r| r.val)).collect();
    let ood: Vec<f64> = LevelLabel::ALL.iter().map(|&l| mean(l, &|r| r.ood)).collect();
    let per_seed: Vec<f64> = (0..DESK_SEEDS)
        .map(|t| runs.iter().filter(|r| r.trial == t).map(|r| r.secs).sum())
        .collect();
    let val_ok = val.iter().all(|&v| v >= 0.90);
    let gap_ok = ood[0] <= val[0] - 0.15;
    let trend_ok = ood.windows(2).all(|w| w[1] >= w[0] - 0.03);
    let time_ok = per_seed.iter().all(|&s| s <= 900.0);
    let pass = val_ok && gap_ok && trend_ok && time_ok;
    report(
        6,
        pass,
        &format!(
            "val {val:.3?}, ood {ood:.3?} at k=2,3,4, per-seed time {:.0?} s",
            per_seed
        ),
    );
    assert!(val_ok, "InD validation accuracy {val:?}");
    assert!(gap_ok, "OoD {} vs InD {}", ood[0], val[0]);
    assert!(trend_ok, "OoD accuracy {ood:?}");
    assert!(time_ok, "per-seed seconds {per_seed:?}");
}

#[test]
fn criterion_7_invariance_effect() {
    let _g = heavy();
    let ctx = desk_context();
    let base = baseline_runs();
    let base_mid: Vec<&DeskRun> = base.iter().filter(|r| r.level == LevelLabel::Medium).collect();
    let mut secs: f64 = base_mid.iter().map(|r| r.secs).sum();

    let start = Instant::now();
    let plan = ExperimentPlan {
        level: LevelLabel::Medium,
        approach: Approach::InvarianceLoss,
        grids: Grids::fast(),
        n_trials: DESK_SEEDS,
        master_seed: MASTER_SEED,
        workers: 1,
    };
    let search = grid_search(ctx, &plan).unwrap();
    for p in &search.table {
        println!("  lambda {}: reserved OoD {:?}", p.hyper.lambda, p.ood_accuracy);
    }
    let hp = search.chosen;
    let tuned: Vec<DeskRun> = (0..DESK_SEEDS)
        .map(|t| desk_run(Approach::InvarianceLoss, &hp, LevelLabel::Medium, t))
        .collect();
    secs += start.elapsed().as_secs_f64();

    let mut ratios = Vec::new();
    let mut si_wins = 0;
    for (b, t) in base_mid.iter().zip(&tuned) {
        let (bd, bs) = b.probe.unwrap();
        let (td, ts) = t.probe.unwrap();
        println!(
            "  trial {}: distance {td:.4} vs {bd:.4}, SI {ts:.4} vs {bs:.4}, OoD {:.3} vs {:.3}",
            t.trial, t.ood, b.ood
        );
        ratios.push(td / bd);
        if ts > bs {
            si_wins += 1;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_ratio = {
        let td: Vec<f64> = tuned.iter().map(|r| r.probe.unwrap().0).collect();
        let bd: Vec<f64> = base_mid.iter().map(|r| r.probe.unwrap().0).collect();
        mean(&td) / mean(&bd)
    };
    let dist_ok = mean_ratio <= 0.5;
    let si_ok = si_wins >= 2;
    let time_ok = secs <= 45.0 * 60.0;
    report(
        7,
        dist_ok && si_ok && time_ok,
        &format!(
            "lambda {}, distance ratio {mean_ratio:.3} (per seed {ratios:.3?}), SI higher in {si_wins}/3, {:.0} s",
            hp.lambda, secs
        ),
    );
    assert!(dist_ok, "pair distance ratio {mean_ratio}");
    assert!(si_ok, "SI summary higher in {si_wins} of 3 seeds");
    assert!(time_ok, "took {secs:.0} s");
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_statistics() {
    let (m, hw) = mean_ci95(&[0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.37 - 2.0).collect();
    let up: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
    let down: Vec<f64> = xs.iter().map(|x| -0.5 * x + 4.0).collect();
    let r_up = pearson(&xs, &up).unwrap();
    let r_down = pearson(&xs, &down).unwrap();
    let pass = (m - 0.2).abs() < 1e-12
        && (hw - 0.5552).abs() <= 1e-3
        && (r_up - 1.0).abs() <= 1e-12
        && (r_down + 1.0).abs() <= 1e-12;
    report(8, pass, &format!("half-width {hw:.4}, r = {r_up} / {r_down}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 9

const TINY: &str = r#"{
  "data": {"grid": {"num_categories": 3, "num_conditions": 3, "cell_grid": [2, 2],
                    "glyph_size": 6, "canvas_size": 12, "samples_per_combination": 8}},
  "split": {"degrees": [1, 2], "sizes": {"train": 12, "val": 6, "ood": 9}},
  "network": {"arch": "mini_resnet", "channels": 2, "hidden": 6},
  "train": {"epochs": 3, "batch_size": 4, "late_stopping_epochs": 4, "seed": 5},
  "experiment": {"n_trials": 2, "grid": "fast", "levels": ["low", "medium"]}
}"#;

fn cli(args: &[&str], cwd: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_oodbench"))
        .env("OODBENCH_DETERMINISTIC", "1")
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Every epoch CSV and checkpoint hash below `root`, keyed by relative path.
fn artifacts(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().is_some_and(|n| n == "epochs.csv" || n == "checkpoint.bin") {
                let bytes = std::fs::read(&p).unwrap();
                let v = if p.ends_with("checkpoint.bin") {
                    oodbench::seeds::sha256_hex(&bytes).into_bytes()
                } else {
                    bytes
                };
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), v);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn criterion_9_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.json"), TINY).unwrap();
    let mut checks = 0;
    let mut same = true;
    for approach in ["baseline", "late-stopping", "tuned-bn", "invariance-loss", "three-together"] {
        for out in ["a", "b"] {
            cli(&["train", "--config", "c.json", "--out", &format!("{approach}-{out}"), "--approach", approach], p);
        }
        let (a, b) = (artifacts(&p.join(format!("{approach}-a"))), artifacts(&p.join(format!("{approach}-b"))));
        same &= a.len() == 2 && a == b;
        same &= std::fs::read(p.join(format!("{approach}-a/checkpoint.sha256"))).unwrap()
            == std::fs::read(p.join(format!("{approach}-b/checkpoint.sha256"))).unwrap();
        checks += a.len();
    }
    for out in ["m1", "m2"] {
        cli(&["run-matrix", "--config", "c.json", "--out", out, "--workers", "2"], p);
    }
    let (a, b) = (artifacts(&p.join("m1")), artifacts(&p.join("m2")));
    same &= !a.is_empty() && a == b;
    same &= std::fs::read(p.join("m1/summary.json")).unwrap() == std::fs::read(p.join("m2/summary.json")).unwrap();
    checks += a.len();
    report(9, same, &format!("{checks} artifacts compared byte for byte"));
    assert!(same);
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_idx_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut shapes: Vec<Vec<u32>> = vec![vec![0], vec![0, 28, 28], vec![0, 0, 3], vec![1], vec![1, 1, 1]];
    for _ in 0..45 {
        let rank = rng.random_range(1..=4);
        shapes.push((0..rank).map(|_| rng.random_range(0..7)).collect());
    }
    let mut exact = 0;
    for (i, dims) in shapes.iter().enumerate() {
        let n: usize = dims.iter().map(|&d| d as usize).product();
        let data: Vec<u8> = (0..n).map(|_| rng.random()).collect();
        let array = IdxArray::new(dims.clone(), data).unwrap();
        let first = dir.path().join(format!("a{i}.idx"));
        let second = dir.path().join(format!("b{i}.idx"));
        write_idx(&first, &array).unwrap();
        let loaded = read_idx(&first).unwrap();
        write_idx(&second, &loaded).unwrap();
        if loaded == array && std::fs::read(&first).unwrap() == std::fs::read(&second).unwrap() {
            exact += 1;
        }
    }
    let mut bytes = IdxArray::new(vec![2, 2], vec![1, 2, 3, 4]).unwrap().to_bytes();
    bytes[0] = 0x12;
    let bad = dir.path().join("bad.idx");
    std::fs::write(&bad, &bytes).unwrap();
    let rejected = matches!(read_idx(&bad), Err(Error::Format { .. }));
    let pass = exact == shapes.len() && rejected;
    report(10, pass, &format!("{exact}/{} files bit-exact, bad magic rejected: {rejected}", shapes.len()));
    assert_eq!(exact, shapes.len());
    assert!(rejected);
}
