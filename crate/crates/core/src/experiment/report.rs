//! Plot-ready CSV tables derived from a matrix result.

use std::collections::BTreeMap;

use super::{Approach, MatrixResult};
use crate::analysis::{
    delta_frequency_table, frequency_table_csv, pairwise_win_counts_by_dataset, pearson, CellKey, DeltaOutcome,
};
use crate::error::{Error, Result};

/// Mean and 95% half-width per cell, with the OoD change versus baseline.
pub fn accuracy_ci_csv(m: &MatrixResult) -> String {
    let mut out = String::from(
        "dataset,level,approach,trained_approach,ood_mean,ood_ci95,ind_mean,ind_ci95,si_mean,si_ci95,delta_ood_vs_baseline\n",
    );
    for c in &m.cells {
        let base = m.cell(&c.dataset, c.level, Approach::Baseline);
        let delta = base
            .map(|b| format!("{:.6}", c.aggregate.ood_accuracy.0 - b.aggregate.ood_accuracy.0))
            .unwrap_or_default();
        let a = &c.aggregate;
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{delta}\n",
            c.dataset,
            c.level,
            c.approach,
            c.trained_approach,
            a.ood_accuracy.0,
            a.ood_accuracy.1,
            a.ind_accuracy.0,
            a.ind_accuracy.1,
            a.si_summary.0,
            a.si_summary.1
        ));
    }
    out
}

/// Per-cell means of layer SI summary against OoD accuracy, and their
/// Pearson correlation (`None` when undefined).
pub fn si_scatter_csv(m: &MatrixResult) -> Result<(String, Option<f64>)> {
    let mut out = String::from("dataset,level,approach,si_summary,ood_accuracy\n");
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for c in &m.cells {
        xs.push(c.aggregate.si_summary.0);
        ys.push(c.aggregate.ood_accuracy.0);
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            c.dataset, c.level, c.approach, c.aggregate.si_summary.0, c.aggregate.ood_accuracy.0
        ));
    }
    let r = match pearson(&xs, &ys) {
        Ok(r) => Some(r),
        Err(Error::UndefinedCorrelation(_)) | Err(Error::InvalidArgument(_)) => None,
        Err(e) => return Err(e),
    };
    Ok((out, r))
}

fn ood_map(m: &MatrixResult, a: Approach) -> BTreeMap<CellKey, f64> {
    m.cells
        .iter()
        .filter(|c| c.approach == a)
        .map(|c| ((c.dataset.clone(), c.level.to_string()), c.aggregate.ood_accuracy.0))
        .collect()
}

/// Win counts of the combined-strategy comparisons whose approaches are
/// present: one row per dataset plus a `total` row.
pub fn strategy_wins_csv(m: &MatrixResult) -> Result<String> {
    let mut out = String::from("comparison,dataset,wins_a,wins_b,ties\n");
    let pairs = [
        (Approach::BestOfThree, Approach::Baseline),
        (Approach::ThreeTogether, Approach::Baseline),
        (Approach::BestOfThree, Approach::ThreeTogether),
    ];
    for (a, b) in pairs {
        let (ma, mb) = (ood_map(m, a), ood_map(m, b));
        if ma.is_empty() || mb.is_empty() {
            continue;
        }
        let (per, total) = pairwise_win_counts_by_dataset(&ma, &mb)?;
        let name = format!("{a} vs {b}");
        for (ds, w) in per.iter().map(|(d, w)| (d.as_str(), w)).chain([("total", &total)]) {
            out.push_str(&format!("{name},{ds},{},{},{}\n", w.wins_a, w.wins_b, w.ties));
        }
    }
    Ok(out)
}

/// Frequency table per approach with deltas, plus a `total` row over the
/// single approaches.
pub fn delta_frequencies_csv(m: &MatrixResult) -> Result<String> {
    let mut rows = Vec::new();
    let mut singles: Vec<DeltaOutcome> = Vec::new();
    for a in Approach::ALL.into_iter().filter(|a| *a != Approach::Baseline) {
        let outcomes: Vec<DeltaOutcome> = m.deltas.iter().filter(|d| d.approach == a).map(|d| d.outcome).collect();
        if outcomes.is_empty() {
            continue;
        }
        if Approach::SINGLES.contains(&a) {
            singles.extend(&outcomes);
        }
        rows.push((a.to_string(), delta_frequency_table(&outcomes)?));
    }
    if !singles.is_empty() {
        rows.push(("total".to_string(), delta_frequency_table(&singles)?));
    }
    Ok(frequency_table_csv(&rows))
}
