use serde::Serialize;

use crate::datagen::Dataset;
use crate::error::{invalid, Error, Result};
use crate::neuralcore::{forward, Mode, NetworkSpec, ParamStore};
use crate::training::image_batch;

/// Per-neuron, per-(category, condition) mean activity, min-max normalized
/// per neuron. `values` is indexed `[(j * #C + c) * #N + n]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivityTable {
    pub num_neurons: usize,
    pub num_categories: usize,
    pub num_conditions: usize,
    pub values: Vec<f64>,
    pub raw_range: Vec<(f64, f64)>,
    /// Items per cell, indexed `[c * #N + n]`.
    pub counts: Vec<usize>,
    pub degenerate: Vec<bool>,
}

impl ActivityTable {
    pub fn get(&self, neuron: usize, category: usize, condition: usize) -> f64 {
        self.values[(neuron * self.num_categories + category) * self.num_conditions + condition]
    }

    /// The `#C x #N` block of one neuron.
    pub fn neuron(&self, j: usize) -> &[f64] {
        let cells = self.num_categories * self.num_conditions;
        &self.values[j * cells..(j + 1) * cells]
    }

    /// Normalizes raw cell means (same indexing as `values`).
    pub fn from_means(
        means: &[f64],
        num_neurons: usize,
        num_categories: usize,
        num_conditions: usize,
        counts: Vec<usize>,
    ) -> Result<Self> {
        let cells = num_categories * num_conditions;
        if means.len() != num_neurons * cells || counts.len() != cells {
            return Err(invalid("activity means do not match the table dimensions"));
        }
        let mut values = vec![0.0; means.len()];
        let mut raw_range = Vec::with_capacity(num_neurons);
        let mut degenerate = Vec::with_capacity(num_neurons);
        for j in 0..num_neurons {
            let block = &means[j * cells..(j + 1) * cells];
            let lo = block.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            raw_range.push((lo, hi));
            let flat = hi - lo <= 1e-12 * (1.0 + hi.abs().max(lo.abs()));
            degenerate.push(flat);
            if !flat {
                for (v, m) in values[j * cells..(j + 1) * cells].iter_mut().zip(block) {
                    *v = (m - lo) / (hi - lo);
                }
            }
        }
        Ok(ActivityTable {
            num_neurons,
            num_categories,
            num_conditions,
            values,
            raw_range,
            counts,
            degenerate,
        })
    }
}

/// Running per-cell sums. Partial accumulators over disjoint shards merge
/// into the same result regardless of order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityAccumulator {
    num_neurons: usize,
    num_categories: usize,
    num_conditions: usize,
    /// `[(c * #N + n) * neurons + j]`
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl ActivityAccumulator {
    pub fn new(num_neurons: usize, num_categories: usize, num_conditions: usize) -> Self {
        let cells = num_categories * num_conditions;
        ActivityAccumulator {
            num_neurons,
            num_categories,
            num_conditions,
            sums: vec![0.0; cells * num_neurons],
            counts: vec![0; cells],
        }
    }

    pub fn add(&mut self, category: usize, condition: usize, activations: &[f64]) -> Result<()> {
        if category >= self.num_categories || condition >= self.num_conditions {
            return Err(invalid(format!("label ({category}, {condition}) outside the table")));
        }
        if activations.len() != self.num_neurons {
            return Err(invalid(format!(
                "{} activations for {} neurons",
                activations.len(),
                self.num_neurons
            )));
        }
        let cell = category * self.num_conditions + condition;
        for (s, a) in self.sums[cell * self.num_neurons..][..self.num_neurons]
            .iter_mut()
            .zip(activations)
        {
            *s += a;
        }
        self.counts[cell] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ActivityAccumulator) -> Result<()> {
        if (self.num_neurons, self.num_categories, self.num_conditions)
            != (other.num_neurons, other.num_categories, other.num_conditions)
        {
            return Err(invalid("cannot merge accumulators of different shapes"));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<ActivityTable> {
        let missing: Vec<(usize, usize)> = (0..self.num_categories)
            .flat_map(|c| (0..self.num_conditions).map(move |n| (c, n)))
            .filter(|&(c, n)| self.counts[c * self.num_conditions + n] == 0)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Coverage { missing });
        }
        let cells = self.num_categories * self.num_conditions;
        let mut means = vec![0.0; self.num_neurons * cells];
        for cell in 0..cells {
            let cnt = self.counts[cell] as f64;
            for j in 0..self.num_neurons {
                means[j * cells + cell] = self.sums[cell * self.num_neurons + j] / cnt;
            }
        }
        ActivityTable::from_means(
            &means,
            self.num_neurons,
            self.num_categories,
            self.num_conditions,
            self.counts.clone(),
        )
    }
}

const CHUNK: usize = 128;

/// Eval-mode probe activations of every item, one row per item.
pub fn probe_activations(params: &ParamStore<f32>, spec: &NetworkSpec, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(dataset.len());
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(CHUNK) {
        let x = image_batch::<f32>(dataset, chunk);
        let trace = forward(spec, params, &x, Mode::Eval)?;
        for b in 0..chunk.len() {
            rows.push(trace.probe.item(b).iter().map(|&v| f64::from(v)).collect());
        }
    }
    Ok(rows)
}

/// Activity table of the probe layer over `dataset`, which must populate
/// every (category, condition) cell.
pub fn activity_table(params: &ParamStore<f32>, spec: &NetworkSpec, dataset: &Dataset) -> Result<ActivityTable> {
    let width = spec.probe_shape()?.len();
    let mut acc = ActivityAccumulator::new(width, dataset.num_categories, dataset.num_conditions);
    let rows = probe_activations(params, spec, dataset)?;
    for (it, row) in dataset.items.iter().zip(&rows) {
        acc.add(it.category, it.condition, row)?;
    }
    acc.finish()
}
