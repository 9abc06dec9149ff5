//! Batch evaluation of forest-weighted statistics over many query points.
//!
//! The per-input estimators evaluate weighted quantiles or weighted contrast
//! minima at `n` query points; assembling each point's weight vector from
//! scratch costs `O(k * leaf)` per point. This engine instead sorts the
//! query points along the conditioning axis and maintains one rank-indexed
//! weight accumulator incrementally: each (tree, fixed-coordinates) pair
//! contributes a step function of the axis coordinate, and only leaf
//! boundary crossings touch the accumulator. For the full-forest estimator
//! the fixed coordinates run over the shadow sample, which is what makes its
//! `n^2` weight queries affordable.
//!
//! Queries are processed in a fixed number of independent segments so that
//! results are bit-identical regardless of the number of worker threads.

use rayon::prelude::*;

use crate::forest::{Forest, WeightScheme};
use crate::{Error, Result};

const SWEEP_SEGMENTS: usize = 32;

/// How query points map onto forest cells.
pub(crate) enum SweepAxis<'a> {
    /// Forest trained on a single input; queries are values of that input.
    SingleInput,
    /// Full forest conditioned on `axis`: every query value is spliced into
    /// position `axis` of every shadow row, and weights are averaged over
    /// the shadow rows.
    Spliced { shadow_cols: &'a [Vec<f64>], axis: usize },
}

/// Rank-indexed weight accumulator for the query currently under the sweep.
pub(crate) struct Accumulator {
    /// Weight per y-rank.
    pub a: Vec<f64>,
    /// Number of active (unit, member) contributions per rank; exact, so a
    /// rank whose support vanishes is reset to exactly zero weight.
    cnt: Vec<u32>,
    bits: Vec<u64>,
    pub w_total: f64,
    pub s_total: f64,
    active: usize,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            a: vec![0.0; n],
            cnt: vec![0u32; n],
            bits: vec![0u64; n.div_ceil(64)],
            w_total: 0.0,
            s_total: 0.0,
            active: 0,
        }
    }

    #[inline]
    fn add(&mut self, rank: usize, w: f64, y: f64) {
        if self.cnt[rank] == 0 {
            self.bits[rank / 64] |= 1u64 << (rank % 64);
            self.active += 1;
        }
        self.cnt[rank] += 1;
        self.a[rank] += w;
        self.w_total += w;
        self.s_total += w * y;
    }

    #[inline]
    fn remove(&mut self, rank: usize, w: f64, y: f64) {
        self.cnt[rank] -= 1;
        if self.cnt[rank] == 0 {
            self.bits[rank / 64] &= !(1u64 << (rank % 64));
            self.active -= 1;
            // Kill the rounding residue along with the support.
            self.w_total -= self.a[rank];
            self.s_total -= self.a[rank] * y;
            self.a[rank] = 0.0;
        } else {
            self.a[rank] -= w;
            self.w_total -= w;
            self.s_total -= w * y;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.active == 0
    }

    /// Smallest active rank `>= from`, if any.
    #[inline]
    pub fn next_active(&self, from: usize) -> Option<usize> {
        if from >= self.a.len() {
            return None;
        }
        let mut w = from / 64;
        let mut cur = self.bits[w] & (!0u64 << (from % 64));
        loop {
            if cur != 0 {
                return Some(w * 64 + cur.trailing_zeros() as usize);
            }
            w += 1;
            if w >= self.bits.len() {
                return None;
            }
            cur = self.bits[w];
        }
    }
}

fn add_leaf(forest: &Forest, tree_idx: usize, leaf: u32, scheme: WeightScheme, factor: f64, acc: &mut Accumulator) {
    let tree = &forest.trees[tree_idx];
    match scheme {
        WeightScheme::Original => {
            let no = tree.leaf_no[leaf as usize];
            debug_assert!(no > 0);
            let w = factor / f64::from(no);
            for &rank in tree.members(leaf) {
                acc.add(rank as usize, w, forest.y_sorted[rank as usize]);
            }
        }
        WeightScheme::Bootstrap => {
            let nb = tree.leaf_nb[leaf as usize];
            debug_assert!(nb > 0);
            let inv = factor / f64::from(nb);
            for &rank in tree.members(leaf) {
                let c = tree.counts_by_rank[rank as usize];
                if c > 0 {
                    acc.add(rank as usize, f64::from(c) * inv, forest.y_sorted[rank as usize]);
                }
            }
        }
    }
}

fn remove_leaf(forest: &Forest, tree_idx: usize, leaf: u32, scheme: WeightScheme, factor: f64, acc: &mut Accumulator) {
    let tree = &forest.trees[tree_idx];
    match scheme {
        WeightScheme::Original => {
            let no = tree.leaf_no[leaf as usize];
            let w = factor / f64::from(no);
            for &rank in tree.members(leaf) {
                acc.remove(rank as usize, w, forest.y_sorted[rank as usize]);
            }
        }
        WeightScheme::Bootstrap => {
            let nb = tree.leaf_nb[leaf as usize];
            let inv = factor / f64::from(nb);
            for &rank in tree.members(leaf) {
                let c = tree.counts_by_rank[rank as usize];
                if c > 0 {
                    acc.remove(rank as usize, f64::from(c) * inv, forest.y_sorted[rank as usize]);
                }
            }
        }
    }
}

/// Evaluate `visitor` at every query value, in the original query order.
///
/// The visitor sees the accumulator holding this query's weights and
/// returns `None` when the support is unusable (skipped point).
pub(crate) fn sweep_eval<V>(
    forest: &Forest,
    scheme: WeightScheme,
    axis: &SweepAxis<'_>,
    eval: &[f64],
    visitor: V,
) -> Result<Vec<Option<f64>>>
where
    V: Fn(&Accumulator) -> Option<f64> + Sync,
{
    let m = eval.len();
    if m == 0 {
        return Err(Error::Config("no evaluation points".into()));
    }
    if eval.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite evaluation point".into()));
    }
    let (n_shadow, cond_axis) = match axis {
        SweepAxis::SingleInput => {
            if forest.d() != 1 {
                return Err(Error::Config(format!(
                    "single-input sweep on a forest with {} inputs",
                    forest.d()
                )));
            }
            (1usize, 0usize)
        }
        SweepAxis::Spliced { shadow_cols, axis } => {
            if shadow_cols.len() != forest.d() {
                return Err(Error::Config(format!(
                    "shadow has {} columns, forest expects {}",
                    shadow_cols.len(),
                    forest.d()
                )));
            }
            if *axis >= forest.d() {
                return Err(Error::Config(format!("axis {axis} out of range")));
            }
            let rows = shadow_cols[0].len();
            if rows == 0 || shadow_cols.iter().any(|c| c.len() != rows) {
                return Err(Error::Config("shadow columns empty or of unequal length".into()));
            }
            (rows, *axis)
        }
    };

    let mut order: Vec<u32> = (0..m as u32).collect();
    order.sort_unstable_by(|&i, &j| {
        eval[i as usize]
            .partial_cmp(&eval[j as usize])
            .unwrap()
            .then(i.cmp(&j))
    });

    let k = forest.n_trees();
    let n_units = k * n_shadow;
    let unit_factor = 1.0 / n_units as f64;

    let seg_count = SWEEP_SEGMENTS.min(m);
    let seg_results: Vec<Vec<(u32, Option<f64>)>> = (0..seg_count)
        .into_par_iter()
        .map(|seg| {
            let start = seg * m / seg_count;
            let end = (seg + 1) * m / seg_count;
            let positions = &order[start..end];
            let v_first = eval[positions[0] as usize];
            let v_last = eval[positions[positions.len() - 1] as usize];

            let mut acc = Accumulator::new(forest.n());
            let mut current_leaf = vec![0u32; n_units];
            let mut events: Vec<(f64, u32, u32)> = Vec::new();
            let mut intervals: Vec<(f64, u32)> = Vec::new();

            for unit in 0..n_units {
                let (tree_idx, shadow_row) = (unit / n_shadow, unit % n_shadow);
                intervals.clear();
                match axis {
                    SweepAxis::SingleInput => {
                        forest.trees[tree_idx].intervals_over_axis(
                            cond_axis,
                            |_| unreachable!("single-input trees split on the axis only"),
                            v_first,
                            v_last,
                            &mut intervals,
                        );
                    }
                    SweepAxis::Spliced { shadow_cols, .. } => {
                        forest.trees[tree_idx].intervals_over_axis(
                            cond_axis,
                            |f| shadow_cols[f][shadow_row],
                            v_first,
                            v_last,
                            &mut intervals,
                        );
                    }
                }
                current_leaf[unit] = intervals[0].1;
                add_leaf(forest, tree_idx, intervals[0].1, scheme, unit_factor, &mut acc);
                for j in 1..intervals.len() {
                    events.push((intervals[j - 1].0, unit as u32, intervals[j].1));
                }
            }
            events.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

            let mut out = Vec::with_capacity(positions.len());
            let mut ev = 0usize;
            for &pos in positions {
                let v = eval[pos as usize];
                while ev < events.len() && events[ev].0 < v {
                    let (_, unit, leaf_to) = events[ev];
                    let unit = unit as usize;
                    let tree_idx = unit / n_shadow;
                    remove_leaf(forest, tree_idx, current_leaf[unit], scheme, unit_factor, &mut acc);
                    add_leaf(forest, tree_idx, leaf_to, scheme, unit_factor, &mut acc);
                    current_leaf[unit] = leaf_to;
                    ev += 1;
                }
                out.push((pos, visitor(&acc)));
            }
            out
        })
        .collect();

    let mut results = vec![None; m];
    for seg in seg_results {
        for (pos, value) in seg {
            results[pos as usize] = value;
        }
    }
    Ok(results)
}
