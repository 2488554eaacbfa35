//! Selectivity/invariance scoring of probe neurons and the reporting
//! statistics (confidence intervals, correlation, frequency and win tables).

mod activity;
mod scores;
mod stats;
mod tables;

use serde::Serialize;

pub use activity::{activity_table, probe_activations, ActivityAccumulator, ActivityTable};
pub use scores::{layer_si_summary, neuron_scores, score_cells, NeuronScore, SiSummary};
pub use stats::{mean_ci95, pearson, t_quantile_975};
pub use tables::{
    delta_frequency_table, format_percent, frequency_table_csv, pairwise_win_counts, pairwise_win_counts_by_dataset,
    CellKey, DeltaOutcome, FrequencyTable, Sign, WinCounts, FREQUENCY_CSV_HEADER,
};

use crate::datagen::Dataset;
use crate::error::{invalid, Result};
use crate::neuralcore::{NetworkSpec, ParamStore};
use crate::training::make_pairs;

/// Default share of neurons averaged into the layer summary.
pub const TOP_FRACTION: f64 = 0.2;

/// Per-neuron scores plus the layer summary of one probe layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiReport {
    pub probe_index: usize,
    /// Which images populated the activity table.
    pub population: String,
    pub num_items: usize,
    pub top_fraction: f64,
    pub summary: SiSummary,
    pub degenerate_count: usize,
    pub neurons: Vec<NeuronScore>,
}

/// Activity table, neuron scores and layer summary in one call.
pub fn si_report(
    params: &ParamStore<f32>,
    spec: &NetworkSpec,
    dataset: &Dataset,
    population: &str,
) -> Result<SiReport> {
    let table = activity_table(params, spec, dataset)?;
    let neurons = neuron_scores(&table);
    let si: Vec<f64> = neurons.iter().map(|s| s.si).collect();
    Ok(SiReport {
        probe_index: spec.probe_index,
        population: population.to_string(),
        num_items: dataset.len(),
        top_fraction: TOP_FRACTION,
        summary: layer_si_summary(&si, TOP_FRACTION)?,
        degenerate_count: neurons.iter().filter(|n| n.degenerate).count(),
        neurons,
    })
}

/// Mean probe-layer distance between each item and a random same-category
/// partner drawn with `seed`.
pub fn mean_pair_distance(
    params: &ParamStore<f32>,
    spec: &NetworkSpec,
    dataset: &Dataset,
    seed: u64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(invalid("pair distance needs a nonempty dataset"));
    }
    let acts = probe_activations(params, spec, dataset)?;
    let labels: Vec<usize> = dataset.items.iter().map(|i| i.category).collect();
    let pairs = make_pairs(&labels, seed)?;
    let total: f64 = pairs
        .partners
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            acts[i]
                .iter()
                .zip(&acts[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct transcription of the score definitions, written independently
    /// of `score_cells`.
    fn brute(cells: &[Vec<f64>]) -> (usize, f64, f64, f64) {
        let nc = cells.len();
        let nn = cells[0].len();
        let sums: Vec<f64> = cells.iter().map(|r| r.iter().sum()).collect();
        let mut cstar = 0;
        for c in 0..nc {
            if sums[c] > sums[cstar] {
                cstar = c;
            }
        }
        let mut hat = 0.0;
        for n in 0..nn {
            hat += cells[cstar][n];
        }
        hat /= nn as f64;
        let mut bar = 0.0;
        let mut cnt = 0.0;
        for c in 0..nc {
            for n in 0..nn {
                if c != cstar {
                    bar += cells[c][n];
                    cnt += 1.0;
                }
            }
        }
        bar /= cnt;
        let s = if hat + bar < 1e-12 { 0.0 } else { (hat - bar) / (hat + bar) };
        let mx = cells[cstar].iter().cloned().fold(f64::MIN, f64::max);
        let mn = cells[cstar].iter().cloned().fold(f64::MAX, f64::min);
        let i = 1.0 - (mx - mn);
        (cstar, s, i, (s * i).sqrt())
    }

    #[test]
    fn scores_match_brute_force_on_random_tables() {
        use rand::Rng;
        let mut rng = crate::seeds::rng(1000);
        for _ in 0..1000 {
            let nc = rng.random_range(2..6);
            let nn = rng.random_range(2..6);
            let raw: Vec<f64> = (0..nc * nn).map(|_| rng.random::<f64>()).collect();
            let table = ActivityTable::from_means(&raw, 1, nc, nn, vec![1; nc * nn]).unwrap();
            let rows: Vec<Vec<f64>> = (0..nc).map(|c| (0..nn).map(|n| table.get(0, c, n)).collect()).collect();
            let (c, s, i, si) = brute(&rows);
            let got = neuron_scores(&table)[0];
            assert_eq!(got.preferred_category, c);
            assert!((got.selectivity - s).abs() < 1e-12);
            assert!((got.invariance - i).abs() < 1e-12);
            assert!((got.si - si).abs() < 1e-12);
            assert!((got.si - (got.selectivity * got.invariance).sqrt()).abs() < 1e-12);
        }
    }
}
