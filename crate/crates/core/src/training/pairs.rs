use std::collections::BTreeMap;

use rand::seq::IndexedRandom;

use crate::error::{invalid, Result};
use crate::seeds;

/// Same-category partner for every training item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndex {
    pub partners: Vec<usize>,
    /// Number of pairings drawn so far in the current run (the initial one counts).
    pub refresh_count: usize,
}

/// Draws a partner for each item uniformly among the other items of its
/// category; an item alone in its category is paired with itself.
pub fn make_pairs(labels: &[usize], seed: u64) -> Result<PairIndex> {
    if labels.is_empty() {
        return Err(invalid("cannot pair an empty training set"));
    }
    let mut by_cat: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_cat.entry(c).or_default().push(i);
    }
    let mut rng = seeds::rng(seed);
    let mut partners = Vec::with_capacity(labels.len());
    let mut others = Vec::new();
    for (i, c) in labels.iter().enumerate() {
        let members = &by_cat[c];
        if members.len() == 1 {
            partners.push(i);
            continue;
        }
        others.clear();
        others.extend(members.iter().copied().filter(|&j| j != i));
        partners.push(*others.choose(&mut rng).expect("category has other members"));
    }
    Ok(PairIndex {
        partners,
        refresh_count: 1,
    })
}
