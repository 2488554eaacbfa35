use serde::{Deserialize, Serialize};

use super::activity::ActivityTable;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronScore {
    pub preferred_category: usize,
    pub selectivity: f64,
    pub invariance: f64,
    pub si: f64,
    pub degenerate: bool,
}

/// Scores one neuron from its normalized `#C x #N` block (row-major by category).
pub fn score_cells(cells: &[f64], num_categories: usize, num_conditions: usize, degenerate: bool) -> NeuronScore {
    if degenerate {
        return NeuronScore {
            preferred_category: 0,
            selectivity: 0.0,
            invariance: 1.0,
            si: 0.0,
            degenerate: true,
        };
    }
    let (nc, nn) = (num_categories, num_conditions);
    let row = |c: usize| &cells[c * nn..(c + 1) * nn];
    let mut best = 0;
    let mut best_sum = row(0).iter().sum::<f64>();
    for c in 1..nc {
        let s = row(c).iter().sum::<f64>();
        if s > best_sum {
            best = c;
            best_sum = s;
        }
    }
    let pref = row(best);
    let alpha_hat = best_sum / nn as f64;
    let alpha_bar = if nc > 1 {
        let total: f64 = cells.iter().sum();
        (total - best_sum) / ((nc - 1) * nn) as f64
    } else {
        0.0
    };
    let denom = alpha_hat + alpha_bar;
    let selectivity = if denom < 1e-12 {
        0.0
    } else {
        ((alpha_hat - alpha_bar) / denom).clamp(0.0, 1.0)
    };
    let hi = pref.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = pref.iter().cloned().fold(f64::INFINITY, f64::min);
    let invariance = (1.0 - (hi - lo)).clamp(0.0, 1.0);
    NeuronScore {
        preferred_category: best,
        selectivity,
        invariance,
        si: (selectivity * invariance).sqrt(),
        degenerate: false,
    }
}

pub fn neuron_scores(table: &ActivityTable) -> Vec<NeuronScore> {
    (0..table.num_neurons)
        .map(|j| {
            score_cells(
                table.neuron(j),
                table.num_categories,
                table.num_conditions,
                table.degenerate[j],
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiSummary {
    /// Mean of the top `ceil(top_fraction * N)` SI scores.
    pub summary: f64,
    /// Smallest score inside that top group.
    pub p80: f64,
    pub top_count: usize,
}

/// Layer-level SI score: mean of the top fraction of per-neuron SI scores.
pub fn layer_si_summary(si: &[f64], top_fraction: f64) -> Result<SiSummary> {
    if si.is_empty() {
        return Err(invalid("layer summary needs at least one neuron"));
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(invalid(format!("top fraction {top_fraction} outside (0, 1]")));
    }
    let mut sorted = si.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((top_fraction * si.len() as f64 - 1e-9).ceil() as usize).clamp(1, si.len());
    let top = &sorted[..k];
    Ok(SiSummary {
        summary: top.iter().sum::<f64>() / k as f64,
        p80: top[k - 1],
        top_count: k,
    })
}
