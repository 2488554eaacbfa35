use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::splits::Fraction;

/// Direction of a change versus baseline. Zero counts as `Minus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn of_delta(delta: f64) -> Sign {
        if delta > 0.0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaOutcome {
    pub acc: Sign,
    pub si: Sign,
}

/// Relative and conditional frequencies of improvement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub p_acc_up: Fraction,
    pub p_si_up: Fraction,
    pub p_acc_up_given_si_up: Fraction,
    pub p_acc_up_given_si_down: Fraction,
}

pub fn delta_frequency_table(outcomes: &[DeltaOutcome]) -> Result<FrequencyTable> {
    if outcomes.is_empty() {
        return Err(invalid("frequency table needs at least one outcome"));
    }
    let total = outcomes.len() as u64;
    let count = |f: &dyn Fn(&DeltaOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as u64;
    let acc_up = count(&|o| o.acc == Sign::Plus);
    let si_up = count(&|o| o.si == Sign::Plus);
    let both = count(&|o| o.acc == Sign::Plus && o.si == Sign::Plus);
    let acc_only = count(&|o| o.acc == Sign::Plus && o.si == Sign::Minus);
    Ok(FrequencyTable {
        p_acc_up: Fraction::new(acc_up, total),
        p_si_up: Fraction::new(si_up, total),
        p_acc_up_given_si_up: Fraction::new(both, si_up),
        p_acc_up_given_si_down: Fraction::new(acc_only, total - si_up),
    })
}

/// `"75.0 (9/12)"`, or `"undefined (0/0)"`.
pub fn format_percent(f: &Fraction) -> String {
    match f.value() {
        Some(v) => format!("{:.1} ({}/{})", 100.0 * v, f.numerator, f.denominator),
        None => format!("undefined ({}/{})", f.numerator, f.denominator),
    }
}

pub const FREQUENCY_CSV_HEADER: &str = "approach,p_acc_up,p_si_up,p_acc_up_given_si_up,p_acc_up_given_si_down";

/// CSV with one row per approach in the given order.
pub fn frequency_table_csv(rows: &[(String, FrequencyTable)]) -> String {
    let mut out = String::from(FREQUENCY_CSV_HEADER);
    out.push('\n');
    for (name, t) in rows {
        out.push_str(&format!(
            "{name},{},{},{},{}\n",
            format_percent(&t.p_acc_up),
            format_percent(&t.p_si_up),
            format_percent(&t.p_acc_up_given_si_up),
            format_percent(&t.p_acc_up_given_si_down)
        ));
    }
    out
}

/// `(dataset, diversity)` key of a result cell.
pub type CellKey = (String, String);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinCounts {
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
}

/// Strict per-cell comparison of two accuracy maps with identical keys.
pub fn pairwise_win_counts(a: &BTreeMap<CellKey, f64>, b: &BTreeMap<CellKey, f64>) -> Result<WinCounts> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(invalid("result maps do not share the same cells"));
    }
    let mut w = WinCounts::default();
    for (k, va) in a {
        let vb = b[k];
        if *va > vb {
            w.wins_a += 1;
        } else if vb > *va {
            w.wins_b += 1;
        } else {
            w.ties += 1;
        }
    }
    Ok(w)
}

/// Win counts per dataset plus the total.
pub fn pairwise_win_counts_by_dataset(
    a: &BTreeMap<CellKey, f64>,
    b: &BTreeMap<CellKey, f64>,
) -> Result<(BTreeMap<String, WinCounts>, WinCounts)> {
    let total = pairwise_win_counts(a, b)?;
    let mut per: BTreeMap<String, WinCounts> = BTreeMap::new();
    for (k, va) in a {
        let e = per.entry(k.0.clone()).or_default();
        let vb = b[k];
        if *va > vb {
            e.wins_a += 1;
        } else if vb > *va {
            e.wins_b += 1;
        } else {
            e.ties += 1;
        }
    }
    Ok((per, total))
}
