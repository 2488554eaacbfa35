use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Approach, HyperParams, MatrixSettings};
use crate::analysis::DeltaOutcome;
use crate::splits::LevelLabel;

/// Reserved-trial outcome of one grid point.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointResult {
    pub hyper: HyperParams,
    pub ood_accuracy: Option<f64>,
    pub ind_val_accuracy: Option<f64>,
    pub error: Option<String>,
}

impl fmt::Debug for GridPointResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = &self.hyper;
        write!(
            f,
            "lr={} bn={} lambda={} T={}: ",
            h.learning_rate, h.bn_momentum, h.lambda, h.pair_refresh_interval
        )?;
        match (&self.error, self.ood_accuracy) {
            (Some(e), _) => write!(f, "failed ({e})"),
            (None, Some(a)) => write!(f, "ood={a:.4}"),
            (None, None) => write!(f, "no result"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub approach: Approach,
    pub level: LevelLabel,
    pub reserved_seed: u64,
    pub chosen: HyperParams,
    pub chosen_ood_accuracy: f64,
    pub table: Vec<GridPointResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub combos: Vec<(usize, usize)>,
    pub ind_val_accuracy: f64,
    pub ood_accuracy: f64,
    pub si_summary: f64,
    pub epochs: usize,
    pub restarts: usize,
    pub checkpoint_sha256: String,
    pub error: Option<String>,
}

/// `(mean, 95% half-width)` of each measured quantity over successful trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialAggregate {
    pub ood_accuracy: (f64, f64),
    pub ind_accuracy: (f64, f64),
    pub si_summary: (f64, f64),
    pub successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialsSummary {
    pub approach: Approach,
    pub level: LevelLabel,
    pub hyper: HyperParams,
    pub trials: Vec<TrialResult>,
    pub aggregate: Option<TrialAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub level: LevelLabel,
    pub approach: Approach,
    /// Approach whose configuration was trained (differs for best-of-three).
    pub trained_approach: Approach,
    pub hyper: HyperParams,
    pub aggregate: TrialAggregate,
    pub trials: Vec<TrialResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub dataset: String,
    pub level: LevelLabel,
    pub approach: Approach,
    pub delta_ood_accuracy: f64,
    pub delta_si: f64,
    pub outcome: DeltaOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixResult {
    pub settings: MatrixSettings,
    pub cells: Vec<CellResult>,
    pub deltas: Vec<DeltaRecord>,
}

impl MatrixResult {
    pub fn cell(&self, dataset: &str, level: LevelLabel, approach: Approach) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.dataset == dataset && c.level == level && c.approach == approach)
    }
}
