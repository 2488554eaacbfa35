//! Bias-controlled InD/OoD splits.
//!
//! A [`CombinationSet`] is the set of (category, condition) pairs seen during
//! training. Sets are built as unions of disjoint permutation matrices, so at
//! degree `k` every category and every condition appears in exactly `k` pairs
//! and the diversity is exactly `k / #N`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::{self, Dataset};
use crate::error::{invalid, Error, Result};
use crate::seeds;

/// An exact fraction that keeps its unreduced numerator and denominator
/// (tables print `9/12`, not `3/4`). Equality compares values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Fraction {
    pub numerator: u64,
    pub denominator: u64,
}

impl Fraction {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        Fraction {
            numerator,
            denominator,
        }
    }

    /// `None` for `x/0`.
    pub fn value(&self) -> Option<f64> {
        (self.denominator != 0).then(|| self.numerator as f64 / self.denominator as f64)
    }

    pub fn is_defined(&self) -> bool {
        self.denominator != 0
    }
}

impl PartialEq for Fraction {
    fn eq(&self, other: &Self) -> bool {
        if self.denominator == 0 || other.denominator == 0 {
            return self.denominator == other.denominator && self.numerator == other.numerator;
        }
        u128::from(self.numerator) * u128::from(other.denominator)
            == u128::from(other.numerator) * u128::from(self.denominator)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinationSet {
    pub pairs: BTreeSet<(usize, usize)>,
    pub num_categories: usize,
    pub num_conditions: usize,
}

impl CombinationSet {
    pub fn contains(&self, category: usize, condition: usize) -> bool {
        self.pairs.contains(&(category, condition))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.pairs.len() == self.num_categories * self.num_conditions
    }

    /// Pairs of the full grid not in the set, in lexicographic order.
    pub fn complement(&self) -> Vec<(usize, usize)> {
        (0..self.num_categories)
            .flat_map(|c| (0..self.num_conditions).map(move |n| (c, n)))
            .filter(|p| !self.pairs.contains(p))
            .collect()
    }

    pub fn category_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_categories];
        for &(c, _) in &self.pairs {
            d[c] += 1;
        }
        d
    }

    pub fn condition_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_conditions];
        for &(_, n) in &self.pairs {
            d[n] += 1;
        }
        d
    }

    /// Every category and every condition appears at least once.
    pub fn covers_all(&self) -> bool {
        self.category_degrees().iter().all(|&d| d > 0)
            && self.condition_degrees().iter().all(|&d| d > 0)
    }
}

/// `#pairs / (#C * #N)`, exact.
pub fn diversity(combos: &CombinationSet) -> Fraction {
    Fraction::new(
        combos.len() as u64,
        (combos.num_categories * combos.num_conditions) as u64,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelLabel {
    Low,
    Medium,
    High,
}

impl LevelLabel {
    pub const ALL: [LevelLabel; 3] = [LevelLabel::Low, LevelLabel::Medium, LevelLabel::High];

    pub fn as_str(&self) -> &'static str {
        match self {
            LevelLabel::Low => "low",
            LevelLabel::Medium => "medium",
            LevelLabel::High => "high",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for LevelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LevelLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(LevelLabel::Low),
            "medium" => Ok(LevelLabel::Medium),
            "high" => Ok(LevelLabel::High),
            other => Err(invalid(format!("unknown diversity level '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderLevel {
    pub label: LevelLabel,
    pub degree: usize,
    pub combos: CombinationSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinationLadder {
    pub levels: Vec<LadderLevel>,
}

impl CombinationLadder {
    pub fn level(&self, label: LevelLabel) -> Option<&LadderLevel> {
        self.levels.iter().find(|l| l.label == label)
    }
}

/// Samples nested k-regular combination sets, one per entry of `degrees`.
///
/// A random Latin square (a row, column and symbol shuffle of the cyclic
/// square) supplies `#N` mutually disjoint permutations; the level with
/// degree `k` is the union of the first `k` of them, in shuffled order.
pub fn sample_combination_ladder(
    num_categories: usize,
    num_conditions: usize,
    degrees: &[usize],
    seed: u64,
) -> Result<CombinationLadder> {
    if num_categories != num_conditions {
        return Err(invalid(format!(
            "combination ladders need a square grid, got {num_categories}x{num_conditions}"
        )));
    }
    let n = num_conditions;
    if degrees.is_empty() || degrees.len() > 3 {
        return Err(invalid("between one and three degrees are required"));
    }
    if degrees[0] == 0 {
        return Err(invalid("degrees must be at least 1"));
    }
    if degrees.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(format!("degrees {degrees:?} are not strictly increasing")));
    }
    if *degrees.last().unwrap() > n {
        return Err(invalid(format!(
            "degree {} exceeds the {n} available conditions",
            degrees.last().unwrap()
        )));
    }

    let mut rng = seeds::rng(seed);
    let mut rows: Vec<usize> = (0..n).collect();
    let mut cols: Vec<usize> = (0..n).collect();
    let mut symbols: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    cols.shuffle(&mut rng);
    symbols.shuffle(&mut rng);
    // Permutation s maps category c to condition symbols[(rows[c] + cols[s]) % n].
    let perm = |s: usize, c: usize| symbols[(rows[c] + cols[s]) % n];

    let mut levels = Vec::with_capacity(degrees.len());
    let mut pairs = BTreeSet::new();
    let mut used = 0;
    for (&k, label) in degrees.iter().zip(LevelLabel::ALL) {
        for s in used..k {
            for c in 0..n {
                pairs.insert((c, perm(s, c)));
            }
        }
        used = k;
        levels.push(LadderLevel {
            label,
            degree: k,
            combos: CombinationSet {
                pairs: pairs.clone(),
                num_categories,
                num_conditions,
            },
        });
    }
    Ok(CombinationLadder { levels })
}

/// Train / validation / OoD datasets for one combination set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: Dataset,
    pub val: Dataset,
    pub ood: Dataset,
    pub level: LevelLabel,
    pub degree: usize,
    pub combos: CombinationSet,
    pub seed: u64,
    /// Indices into the source dataset, kept for auditing disjointness.
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub ood_indices: Vec<usize>,
}

/// Splits `total` across `strata` so counts differ by at most one; the
/// strata receiving the extra item are chosen at random.
fn stratum_quotas(total: usize, strata: usize, rng: &mut seeds::Rng) -> Vec<usize> {
    if strata == 0 {
        return Vec::new();
    }
    let mut quotas = vec![total / strata; strata];
    let mut order: Vec<usize> = (0..strata).collect();
    order.shuffle(rng);
    for &s in order.iter().take(total % strata) {
        quotas[s] += 1;
    }
    quotas
}

/// Stratified sampling without replacement of the three splits.
///
/// Train and validation items come from pairs in `combos`; OoD items only
/// from the complement. Within each split per-combination counts differ by at
/// most one.
pub fn partition(
    dataset: &Dataset,
    combos: &CombinationSet,
    level: LevelLabel,
    degree: usize,
    sizes: SplitSizes,
    seed: u64,
) -> Result<SplitBundle> {
    if combos.num_categories != dataset.num_categories
        || combos.num_conditions != dataset.num_conditions
    {
        return Err(invalid("combination set and dataset disagree on the label grid"));
    }
    let mut rng = seeds::rng(seed);
    let mut strata: Vec<Vec<usize>> =
        vec![Vec::new(); dataset.num_categories * dataset.num_conditions];
    for (i, it) in dataset.items.iter().enumerate() {
        strata[it.category * dataset.num_conditions + it.condition].push(i);
    }
    for s in strata.iter_mut() {
        s.shuffle(&mut rng);
    }

    let ind: Vec<(usize, usize)> = combos.pairs.iter().copied().collect();
    let ood = combos.complement();
    if ind.is_empty() && sizes.train + sizes.val > 0 {
        return Err(Error::Capacity {
            stratum: "in-distribution (no combinations)".into(),
            requested: sizes.train + sizes.val,
            available: 0,
        });
    }
    if ood.is_empty() && sizes.ood > 0 {
        return Err(Error::Capacity {
            stratum: "out-of-distribution (complement of I is empty)".into(),
            requested: sizes.ood,
            available: 0,
        });
    }

    let train_q = stratum_quotas(sizes.train, ind.len(), &mut rng);
    let val_q = stratum_quotas(sizes.val, ind.len(), &mut rng);
    let ood_q = stratum_quotas(sizes.ood, ood.len(), &mut rng);

    let (mut train_idx, mut val_idx, mut ood_idx) = (Vec::new(), Vec::new(), Vec::new());
    for (s, &(c, n)) in ind.iter().enumerate() {
        let pool = &strata[c * dataset.num_conditions + n];
        let need = train_q[s] + val_q[s];
        if pool.len() < need {
            return Err(Error::Capacity {
                stratum: format!("in-distribution ({c}, {n})"),
                requested: need,
                available: pool.len(),
            });
        }
        train_idx.extend_from_slice(&pool[..train_q[s]]);
        val_idx.extend_from_slice(&pool[train_q[s]..need]);
    }
    for (s, &(c, n)) in ood.iter().enumerate() {
        let pool = &strata[c * dataset.num_conditions + n];
        if pool.len() < ood_q[s] {
            return Err(Error::Capacity {
                stratum: format!("out-of-distribution ({c}, {n})"),
                requested: ood_q[s],
                available: pool.len(),
            });
        }
        ood_idx.extend_from_slice(&pool[..ood_q[s]]);
    }

    Ok(SplitBundle {
        train: dataset.subset(&train_idx),
        val: dataset.subset(&val_idx),
        ood: dataset.subset(&ood_idx),
        level,
        degree,
        combos: combos.clone(),
        seed,
        train_indices: train_idx,
        val_indices: val_idx,
        ood_indices: ood_idx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub ood: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 270,
            val: 72,
            ood: 162,
        }
    }
}

/// Contents of `split.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRecord {
    pub seed: u64,
    pub degrees: Vec<usize>,
    pub level: LevelLabel,
    pub degree: usize,
    pub diversity: String,
    pub diversity_value: f64,
    pub construction: String,
    pub pairs: Vec<(usize, usize)>,
    pub train_size: usize,
    pub val_size: usize,
    pub ood_size: usize,
}

/// Writes `train/`, `val/`, `ood/` dataset directories and `split.json`.
pub fn save_split(bundle: &SplitBundle, degrees: &[usize], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    datagen::save_dataset(&bundle.train, &dir.join("train"))?;
    datagen::save_dataset(&bundle.val, &dir.join("val"))?;
    datagen::save_dataset(&bundle.ood, &dir.join("ood"))?;
    let div = diversity(&bundle.combos);
    let record = SplitRecord {
        seed: bundle.seed,
        degrees: degrees.to_vec(),
        level: bundle.level,
        degree: bundle.degree,
        diversity: div.to_string(),
        diversity_value: div.value().unwrap_or(0.0),
        construction: "union of disjoint permutation matrices (k-regular)".into(),
        pairs: bundle.combos.pairs.iter().copied().collect(),
        train_size: bundle.train.len(),
        val_size: bundle.val.len(),
        ood_size: bundle.ood.len(),
    };
    fs::write(dir.join("split.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(())
}

/// Loads a split directory written by [`save_split`]. Source indices are not
/// persisted and come back empty.
pub fn load_split(dir: &Path) -> Result<(SplitBundle, SplitRecord)> {
    let record: SplitRecord = serde_json::from_slice(&fs::read(dir.join("split.json"))?)?;
    let train = datagen::load_dataset(&dir.join("train"))?;
    let val = datagen::load_dataset(&dir.join("val"))?;
    let ood = datagen::load_dataset(&dir.join("ood"))?;
    let combos = CombinationSet {
        pairs: record.pairs.iter().copied().collect(),
        num_categories: train.num_categories,
        num_conditions: train.num_conditions,
    };
    Ok((
        SplitBundle {
            train,
            val,
            ood,
            level: record.level,
            degree: record.degree,
            combos,
            seed: record.seed,
            train_indices: Vec::new(),
            val_indices: Vec::new(),
            ood_indices: Vec::new(),
        },
        record.clone(),
    ))
}
