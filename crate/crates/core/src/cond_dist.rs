//! Conditional CDF and conditional quantile estimators built on forest
//! weights, their in-leaf counterparts, and the out-of-bag variants the
//! leaf-size tuning consumes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forest::{Forest, Tree, WeightScheme};
use crate::qosa::pinball;
use crate::sweep::{sweep_eval, Accumulator, SweepAxis};
use crate::{Error, Result};

/// A quantile level in the open interval `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(value: f64) -> Result<Alpha> {
        if value.is_finite() && value > 0.0 && value < 1.0 {
            Ok(Alpha(value))
        } else {
            Err(Error::Config(format!("alpha must lie in (0, 1), got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Alpha {
    type Error = Error;
    fn try_from(value: f64) -> Result<Alpha> {
        Alpha::new(value)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// The two conditional-quantile families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuantileFamily {
    /// Quantile of the weighted empirical conditional CDF.
    WeightedCdf,
    /// Per-tree leaf quantiles averaged over trees.
    InLeaf,
}

/// A conditional-quantile estimator: family crossed with weight scheme.
/// The four combinations are exactly the four quantile-based estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CondQuantileMethod {
    pub family: QuantileFamily,
    pub scheme: WeightScheme,
}

impl CondQuantileMethod {
    pub const fn new(family: QuantileFamily, scheme: WeightScheme) -> Self {
        Self { family, scheme }
    }

    /// The weighted-CDF / original-sample method used to tune the
    /// minimum-based estimators.
    pub const fn weighted_original() -> Self {
        Self::new(QuantileFamily::WeightedCdf, WeightScheme::Original)
    }
}

/// Weighted empirical conditional CDF at `y`:
/// `sum_j w_j(x) 1{Y^j <= y}`. Right-continuous and nondecreasing in `y`.
pub fn ccdf(forest: &Forest, x: &[f64], y: f64, scheme: WeightScheme) -> Result<f64> {
    if x.len() != forest.d() {
        return Err(Error::Config(format!(
            "query has {} coordinates, forest expects {}",
            x.len(),
            forest.d()
        )));
    }
    let mut total = 0.0;
    for tree in forest.trees() {
        let leaf = tree.leaf_for(|f| x[f]);
        let members = tree.members(leaf);
        let pos = members.partition_point(|&rank| forest.y_sorted[rank as usize] <= y);
        total += match scheme {
            WeightScheme::Original => pos as f64 / f64::from(tree.leaf_no[leaf as usize]),
            WeightScheme::Bootstrap => {
                let mass = if pos == 0 {
                    0
                } else {
                    tree.count_prefix(leaf)[pos - 1]
                };
                f64::from(mass) / f64::from(tree.leaf_nb[leaf as usize])
            }
        };
    }
    Ok(total / forest.n_trees() as f64)
}

/// Conditional quantile from the weighted CDF: the smallest training
/// response whose CDF value reaches `alpha`.
pub fn cond_quantile_weighted(
    forest: &Forest,
    x: &[f64],
    alpha: Alpha,
    scheme: WeightScheme,
) -> Result<f64> {
    if x.len() != forest.d() {
        return Err(Error::Config(format!(
            "query has {} coordinates, forest expects {}",
            x.len(),
            forest.d()
        )));
    }
    let mut by_rank = vec![0.0; forest.n()];
    let factor = 1.0 / forest.n_trees() as f64;
    for tree in forest.trees() {
        let leaf = tree.leaf_for(|f| x[f]);
        forest.accumulate_leaf(tree, leaf, scheme, factor, &mut by_rank)?;
    }
    weighted_quantile_dense(forest, &by_rank, alpha.value(), None)
        .ok_or_else(|| Error::Invariant("empty weight support".into()))
}

/// Inf-form quantile of a dense rank-indexed weight vector. Tie groups of
/// equal responses count as one step. `excluded` removes one rank from the
/// support without renormalizing. Falls back to the largest support value
/// when the total mass stays below `alpha`.
pub(crate) fn weighted_quantile_dense(
    forest: &Forest,
    by_rank: &[f64],
    alpha: f64,
    excluded: Option<usize>,
) -> Option<f64> {
    let n = by_rank.len();
    let mut cum = 0.0;
    let mut last = None;
    let mut r = 0usize;
    while r < n {
        let ge = forest.group_end[r] as usize;
        let mut mass = 0.0;
        for rr in r..=ge {
            if excluded != Some(rr) {
                mass += by_rank[rr];
            }
        }
        if mass > 0.0 {
            cum += mass;
            last = Some(forest.y_sorted[r]);
            if cum >= alpha {
                return last;
            }
        }
        r = ge + 1;
    }
    last
}

/// Inf-form quantile of one leaf: the smallest member response whose
/// cumulative member mass (bootstrap counts or unit counts, tie groups
/// counted whole) reaches `alpha * N`. The cumulative mass is a monotone
/// step function of the member position, so the crossing is found by
/// bisection; it always exists because the mass reaches `N`. Returns `None`
/// for an empty leaf under the scheme.
pub(crate) fn leaf_quantile(
    forest: &Forest,
    tree: &Tree,
    leaf: u32,
    alpha: f64,
    scheme: WeightScheme,
) -> Option<f64> {
    let members = tree.members(leaf);
    let total = match scheme {
        WeightScheme::Original => tree.leaf_no[leaf as usize],
        WeightScheme::Bootstrap => tree.leaf_nb[leaf as usize],
    };
    if total == 0 {
        return None;
    }
    let total = f64::from(total);
    let prefix = tree.count_prefix(leaf);
    // Mass of responses <= the tie group of member j (global group ends
    // bound the in-leaf group since members hold ascending ranks; untied
    // responses need no search).
    let mass_at = |j: usize| -> f64 {
        let rank = members[j];
        let group_end = forest.group_end[rank as usize];
        let pos = if group_end == rank {
            j + 1
        } else {
            members.partition_point(|&r| r <= group_end)
        };
        match scheme {
            WeightScheme::Original => pos as f64,
            WeightScheme::Bootstrap => f64::from(prefix[pos - 1]),
        }
    };
    let mut lo = 0usize;
    let mut hi = members.len() - 1;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if mass_at(mid) / total >= alpha {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(forest.y_sorted[members[lo] as usize])
}

/// Conditional quantile aggregated within leaves: the average over trees of
/// each tree's leaf quantile at the query.
pub fn cond_quantile_in_leaf(
    forest: &Forest,
    x: &[f64],
    alpha: Alpha,
    scheme: WeightScheme,
) -> Result<f64> {
    if x.len() != forest.d() {
        return Err(Error::Config(format!(
            "query has {} coordinates, forest expects {}",
            x.len(),
            forest.d()
        )));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for tree in forest.trees() {
        let leaf = tree.leaf_for(|f| x[f]);
        if let Some(q) = leaf_quantile(forest, tree, leaf, alpha.value(), scheme) {
            sum += q;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Estimation("every tree's leaf was empty under the scheme".into()));
    }
    Ok(sum / used as f64)
}

/// Out-of-bag conditional quantile at training observation `m`: only trees
/// whose bootstrap omitted `m` participate. Under the weighted-CDF method
/// with original weights, observation `m` itself is removed from the weight
/// support (without renormalizing). Returns `None` when no tree is
/// out-of-bag for `m`.
pub fn oob_quantile(
    forest: &Forest,
    m: usize,
    alpha: Alpha,
    method: CondQuantileMethod,
) -> Option<f64> {
    let rank_m = forest.rank_of_row[m] as usize;
    let x_m = |f: usize| forest.x_cols[f][m];
    match method.family {
        QuantileFamily::InLeaf => {
            let mut sum = 0.0;
            let mut used = 0usize;
            for tree in forest.trees() {
                if tree.counts_by_rank[rank_m] != 0 {
                    continue;
                }
                let leaf = tree.leaf_for(x_m);
                if let Some(q) = leaf_quantile(forest, tree, leaf, alpha.value(), method.scheme) {
                    sum += q;
                    used += 1;
                }
            }
            if used == 0 {
                None
            } else {
                Some(sum / used as f64)
            }
        }
        QuantileFamily::WeightedCdf => oob_quantile_weighted(
            forest,
            m,
            rank_m,
            alpha.value(),
            method.scheme,
            &mut OobScratch::default(),
        ),
    }
}

/// Weighted-CDF OOB quantile. The restricted CDF
/// `F(t) = (1/|I|) sum_l mass_l(Y <= t) / N_l` is monotone in `t`, and each
/// leaf's mass below a rank is a prefix lookup, so the crossing response is
/// found by bisection over the ranks instead of materializing the weights.
/// Each leaf keeps a position window that narrows with the bisection, so
/// the per-leaf lookups shrink as the range tightens. `scratch` holds the
/// out-of-bag `(tree, leaf, 1/N)` triples plus the window state.
fn oob_quantile_weighted<'a>(
    forest: &'a Forest,
    m: usize,
    rank_m: usize,
    alpha: f64,
    scheme: WeightScheme,
    scratch: &mut OobScratch<'a>,
) -> Option<f64> {
    let x_m = |f: usize| forest.x_cols[f][m];
    scratch.clear();
    let mut lo_rank = usize::MAX;
    let mut hi_rank = 0usize;
    for tree in forest.trees() {
        if tree.counts_by_rank[rank_m] != 0 {
            continue;
        }
        let leaf = tree.leaf_for(x_m);
        let members = tree.members(leaf);
        lo_rank = lo_rank.min(members[0] as usize);
        hi_rank = hi_rank.max(*members.last().unwrap() as usize);
        let n_cell = match scheme {
            WeightScheme::Original => tree.leaf_no[leaf as usize],
            WeightScheme::Bootstrap => tree.leaf_nb[leaf as usize],
        };
        scratch.push(members, tree.count_prefix(leaf), 1.0 / f64::from(n_cell));
    }
    let n_leaves = scratch.members.len();
    if n_leaves == 0 {
        return None;
    }
    let inv_i = 1.0 / n_leaves as f64;
    // Observation m falls into every leaf routed at its own coordinates; its
    // own mass is removed under the original scheme ("j != m").
    let m_mass: f64 = match scheme {
        WeightScheme::Original => scratch.inv_n.iter().sum(),
        WeightScheme::Bootstrap => 0.0,
    };
    let mass_at_pins = |scr: &OobScratch<'_>| -> f64 {
        let mut mass = 0.0;
        for i in 0..n_leaves {
            let pos = scr.win_lo[i] as usize;
            mass += match scheme {
                WeightScheme::Original => pos as f64 * scr.inv_n[i],
                WeightScheme::Bootstrap => {
                    if pos == 0 {
                        0.0
                    } else {
                        f64::from(scr.prefix[i][pos - 1]) * scr.inv_n[i]
                    }
                }
            };
        }
        mass
    };
    // The crossing cannot sit below the smallest member (F is zero there,
    // since m itself is a member of every participating leaf) nor above the
    // largest.
    let not_found = hi_rank + 1;
    let mut lo = lo_rank;
    let mut hi = not_found;
    while lo < hi {
        // Once every position window is pinned the base CDF is constant over
        // the remaining ranks and one evaluation settles the range (the
        // removed-observation term is also constant when m lies below it).
        if scratch.width == 0 && (scheme == WeightScheme::Bootstrap || rank_m < lo) {
            let mut mass = mass_at_pins(scratch);
            if scheme == WeightScheme::Original && rank_m < lo {
                mass -= m_mass;
            }
            if mass * inv_i < alpha {
                lo = hi;
            }
            break;
        }
        let mid = lo + (hi - lo) / 2;
        let bound = forest.group_end[mid];
        let mut mass = 0.0;
        for i in 0..n_leaves {
            let members = scratch.members[i];
            let (w_lo, w_hi) = (scratch.win_lo[i] as usize, scratch.win_hi[i] as usize);
            let pos = w_lo + members[w_lo..w_hi].partition_point(|&rank| rank <= bound);
            scratch.pos[i] = pos as u32;
            mass += match scheme {
                WeightScheme::Original => pos as f64 * scratch.inv_n[i],
                WeightScheme::Bootstrap => {
                    if pos == 0 {
                        0.0
                    } else {
                        f64::from(scratch.prefix[i][pos - 1]) * scratch.inv_n[i]
                    }
                }
            };
        }
        if scheme == WeightScheme::Original && rank_m as u32 <= bound {
            mass -= m_mass;
        }
        if mass * inv_i >= alpha {
            hi = mid;
            scratch.win_hi.copy_from_slice(&scratch.pos);
        } else {
            lo = mid + 1;
            scratch.win_lo.copy_from_slice(&scratch.pos);
        }
        scratch.width = scratch
            .win_lo
            .iter()
            .zip(&scratch.win_hi)
            .map(|(&l, &h)| (h - l) as usize)
            .sum();
    }
    if lo < not_found {
        return Some(forest.y_sorted[lo]);
    }
    // Only reachable under the original scheme: with m removed the mass can
    // stay below alpha. Fall back to the largest supported response.
    debug_assert_eq!(scheme, WeightScheme::Original);
    let mut best: Option<u32> = None;
    for members in &scratch.members {
        let last = members.iter().rev().find(|&&rank| rank as usize != rank_m).copied();
        if let Some(rank) = last {
            best = Some(best.map_or(rank, |b: u32| b.max(rank)));
        }
    }
    best.map(|rank| forest.y_sorted[rank as usize])
}

#[derive(Default)]
struct OobScratch<'a> {
    members: Vec<&'a [u32]>,
    prefix: Vec<&'a [u32]>,
    inv_n: Vec<f64>,
    win_lo: Vec<u32>,
    win_hi: Vec<u32>,
    pos: Vec<u32>,
    width: usize,
}

impl<'a> OobScratch<'a> {
    fn clear(&mut self) {
        self.members.clear();
        self.prefix.clear();
        self.inv_n.clear();
        self.win_lo.clear();
        self.win_hi.clear();
        self.pos.clear();
        self.width = 0;
    }

    fn push(&mut self, members: &'a [u32], prefix: &'a [u32], inv_n: f64) {
        self.members.push(members);
        self.prefix.push(prefix);
        self.inv_n.push(inv_n);
        self.win_lo.push(0);
        self.win_hi.push(members.len() as u32);
        self.pos.push(0);
        self.width += members.len();
    }
}

/// Out-of-bag quantile generalization error over the whole training sample:
/// the mean pinball loss of each response against its OOB conditional
/// quantile, plus the number of observations skipped because every tree
/// kept them in-bag.
pub fn oob_error(
    forest: &Forest,
    alpha: Alpha,
    method: CondQuantileMethod,
) -> Result<(f64, usize)> {
    let n = forest.n();
    let losses: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map_init(OobScratch::default, |scratch, m| {
            let q = match method.family {
                QuantileFamily::InLeaf => oob_quantile(forest, m, alpha, method),
                QuantileFamily::WeightedCdf => oob_quantile_weighted(
                    forest,
                    m,
                    forest.rank_of_row[m] as usize,
                    alpha.value(),
                    method.scheme,
                    scratch,
                ),
            };
            q.map(|q| pinball(forest.training_output()[m], q, alpha))
        })
        .collect();
    let mut sum = 0.0;
    let mut used = 0usize;
    for loss in losses.into_iter().flatten() {
        sum += loss;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Estimation("no observation has an out-of-bag tree".into()));
    }
    Ok((sum / used as f64, n - used))
}

/// Conditional quantiles of a single-input forest at many query values.
pub(crate) fn batch_cond_quantiles(
    forest: &Forest,
    eval_x: &[f64],
    alpha: Alpha,
    method: CondQuantileMethod,
) -> Result<Vec<f64>> {
    if forest.d() != 1 {
        return Err(Error::Config(
            "quantile-based estimators expect a forest trained on a single input".into(),
        ));
    }
    match method.family {
        QuantileFamily::WeightedCdf => {
            let a = alpha.value();
            let results = sweep_eval(
                forest,
                method.scheme,
                &SweepAxis::SingleInput,
                eval_x,
                |acc: &Accumulator| sweep_quantile(forest, acc, a),
            )?;
            results
                .into_iter()
                .map(|q| q.ok_or_else(|| Error::Invariant("empty weight support".into())))
                .collect()
        }
        QuantileFamily::InLeaf => eval_x
            .iter()
            .map(|&x| cond_quantile_in_leaf(forest, &[x], alpha, method.scheme))
            .collect(),
    }
}

/// Quantile visitor over the sweep accumulator (tie groups counted whole).
pub(crate) fn sweep_quantile(forest: &Forest, acc: &Accumulator, alpha: f64) -> Option<f64> {
    let mut cum = 0.0;
    let mut r = acc.next_active(0)?;
    loop {
        let ge = forest.group_end[r] as usize;
        let y = forest.y_sorted[r];
        let mut rr = r;
        loop {
            cum += acc.a[rr];
            match acc.next_active(rr + 1) {
                Some(next) if next <= ge => rr = next,
                _ => break,
            }
        }
        if cum >= alpha {
            return Some(y);
        }
        match acc.next_active(ge + 1) {
            Some(next) => r = next,
            // Total mass below alpha: fall back to the largest support value.
            None => return Some(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SyntheticModel;
    use crate::forest::ForestParams;

    fn a(v: f64) -> Alpha {
        Alpha::new(v).unwrap()
    }

    fn expdiff_forest(n: usize, trees: usize, msl: usize, seed: u64) -> (Forest, Vec<f64>) {
        let data = SyntheticModel::ExpDiff.generate(n, seed).unwrap();
        let forest = Forest::fit_single_input(
            data.input(0),
            data.output(),
            &ForestParams::new(trees, msl, 1, seed + 1),
        )
        .unwrap();
        (forest, data.output().to_vec())
    }

    #[test]
    fn alpha_bounds_are_enforced() {
        assert!(Alpha::new(0.0).is_err());
        assert!(Alpha::new(1.0).is_err());
        assert!(Alpha::new(f64::NAN).is_err());
        assert!(Alpha::new(0.5).is_ok());
    }

    #[test]
    fn ccdf_hits_indicator_bounds() {
        let (forest, y) = expdiff_forest(200, 10, 10, 3);
        let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for scheme in [WeightScheme::Bootstrap, WeightScheme::Original] {
            assert_eq!(ccdf(&forest, &[0.5], y_min - 1.0, scheme).unwrap(), 0.0);
            assert_eq!(ccdf(&forest, &[0.5], y_max, scheme).unwrap(), 1.0);
        }
    }

    #[test]
    fn ccdf_is_monotone_in_y() {
        let (forest, _) = expdiff_forest(300, 8, 15, 7);
        for scheme in [WeightScheme::Bootstrap, WeightScheme::Original] {
            let mut prev = 0.0;
            for s in -40..=40 {
                let c = ccdf(&forest, &[1.0], s as f64 * 0.25, scheme).unwrap();
                assert!((0.0..=1.0).contains(&c));
                assert!(c >= prev, "cdf decreased at {s}");
                prev = c;
            }
        }
    }

    #[test]
    fn root_only_original_reduces_to_empirical_cdf_and_quantile() {
        let (forest, mut y) = expdiff_forest(101, 3, 101, 5);
        y.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let n = y.len();
        // Empirical CDF at an arbitrary point.
        let t = y[30] + 1e-9;
        let expected = y.iter().filter(|&&v| v <= t).count() as f64 / n as f64;
        assert!((ccdf(&forest, &[0.2], t, WeightScheme::Original).unwrap() - expected).abs() < 1e-12);
        // Median = order statistic at ceil(n/2).
        let med = y[(n as f64 * 0.5).ceil() as usize - 1];
        let q = cond_quantile_weighted(&forest, &[0.2], a(0.5), WeightScheme::Original).unwrap();
        assert_eq!(q, med);
        let q2 = cond_quantile_in_leaf(&forest, &[0.2], a(0.5), WeightScheme::Original).unwrap();
        assert_eq!(q2, med);
    }

    #[test]
    fn quantile_is_nondecreasing_in_alpha() {
        let (forest, _) = expdiff_forest(400, 12, 20, 9);
        for scheme in [WeightScheme::Bootstrap, WeightScheme::Original] {
            let mut prev = f64::NEG_INFINITY;
            for step in 1..20 {
                let q =
                    cond_quantile_weighted(&forest, &[0.7], a(step as f64 / 20.0), scheme).unwrap();
                assert!(q >= prev);
                prev = q;
            }
        }
    }

    #[test]
    fn in_leaf_equals_weighted_for_single_tree() {
        let (forest, _) = expdiff_forest(250, 1, 25, 13);
        for scheme in [WeightScheme::Bootstrap, WeightScheme::Original] {
            for &al in &[0.1, 0.5, 0.9] {
                for q in 0..10 {
                    let x = [q as f64 * 0.4];
                    let w = cond_quantile_weighted(&forest, &x, a(al), scheme).unwrap();
                    let l = cond_quantile_in_leaf(&forest, &x, a(al), scheme).unwrap();
                    assert_eq!(w, l, "alpha {al} x {x:?} {scheme:?}");
                }
            }
        }
    }

    #[test]
    fn constant_leaf_quantile_is_the_constant() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y = vec![4.0; 50];
        let forest =
            Forest::fit_single_input(&x, &y, &ForestParams::new(3, 5, 1, 2)).unwrap();
        for &al in &[0.05, 0.5, 0.95] {
            let q = cond_quantile_in_leaf(&forest, &[25.0], a(al), WeightScheme::Bootstrap).unwrap();
            assert_eq!(q, 4.0);
        }
    }

    #[test]
    fn weighted_cdf_quantile_tracks_true_conditional_law() {
        // Y | X1 = x1 is x1 - Exp(1); check the CDF estimate pointwise.
        let n = 10_000;
        let data = SyntheticModel::ExpDiff.generate(n, 17).unwrap();
        let forest = Forest::fit_single_input(
            data.input(0),
            data.output(),
            &ForestParams::new(50, 150, 1, 18),
        )
        .unwrap();
        let x1 = 1.0;
        let true_cdf = |y: f64| {
            // P(x1 - X2 <= y) = P(X2 >= x1 - y) = exp(-(x1 - y)) for y < x1.
            if y >= x1 {
                1.0
            } else {
                (-(x1 - y)).exp()
            }
        };
        let mut worst: f64 = 0.0;
        for s in -30..=10 {
            let y = s as f64 * 0.1;
            let est = ccdf(&forest, &[x1], y, WeightScheme::Original).unwrap();
            worst = worst.max((est - true_cdf(y)).abs());
        }
        assert!(worst <= 0.05, "sup distance {worst}");
    }

    #[test]
    fn batch_quantiles_match_per_query_path() {
        let (forest, _) = expdiff_forest(600, 15, 30, 21);
        let eval: Vec<f64> = (0..80).map(|i| 0.05 * i as f64).collect();
        for scheme in [WeightScheme::Bootstrap, WeightScheme::Original] {
            let method = CondQuantileMethod::new(QuantileFamily::WeightedCdf, scheme);
            let batch = batch_cond_quantiles(&forest, &eval, a(0.3), method).unwrap();
            for (i, &x) in eval.iter().enumerate() {
                let direct =
                    cond_quantile_weighted(&forest, &[x], a(0.3), scheme).unwrap();
                assert_eq!(batch[i], direct, "x {x} {scheme:?}");
            }
        }
    }

    #[test]
    fn oob_quantile_skips_fully_in_bag_observations() {
        // One tree: observations inside the bootstrap have no OOB estimate.
        let (forest, _) = expdiff_forest(60, 1, 10, 2);
        let tree = &forest.trees()[0];
        let mut skipped = 0;
        for m in 0..60 {
            let rank = forest.rank_of_row[m] as usize;
            let res = oob_quantile(&forest, m, a(0.5), CondQuantileMethod::weighted_original());
            if tree.counts_by_rank[rank] > 0 {
                assert!(res.is_none());
                skipped += 1;
            } else {
                assert!(res.is_some());
            }
        }
        assert!(skipped > 0);
    }

    #[test]
    fn oob_fast_path_matches_dense_reference() {
        let (forest, _) = expdiff_forest(500, 20, 30, 31);
        for &al in &[0.1, 0.5, 0.9] {
            for scheme in [WeightScheme::Bootstrap, WeightScheme::Original] {
                let method = CondQuantileMethod::new(QuantileFamily::WeightedCdf, scheme);
                for m in (0..500).step_by(7) {
                    let fast = oob_quantile(&forest, m, a(al), method);
                    // Dense reference: materialize the restricted weights.
                    let rank_m = forest.rank_of_row[m] as usize;
                    let oob: Vec<&Tree> = forest
                        .trees()
                        .iter()
                        .filter(|t| t.counts_by_rank[rank_m] == 0)
                        .collect();
                    if oob.is_empty() {
                        assert_eq!(fast, None, "m {m}");
                        continue;
                    }
                    let mut by_rank = vec![0.0; forest.n()];
                    let factor = 1.0 / oob.len() as f64;
                    for tree in &oob {
                        let leaf = tree.leaf_for(|f| forest.x_cols[f][m]);
                        forest
                            .accumulate_leaf(tree, leaf, scheme, factor, &mut by_rank)
                            .unwrap();
                    }
                    let excluded = matches!(scheme, WeightScheme::Original).then_some(rank_m);
                    let reference = weighted_quantile_dense(&forest, &by_rank, al, excluded);
                    if fast == reference {
                        continue;
                    }
                    // The two routes may disagree only where the CDF sits
                    // exactly at the level (rounding tips the comparison);
                    // verify the dense mass at the fast answer is at alpha.
                    let q = fast.unwrap();
                    let mass: f64 = (0..forest.n())
                        .filter(|&r| excluded != Some(r) && forest.y_sorted[r] <= q)
                        .map(|r| by_rank[r])
                        .sum();
                    assert!(
                        (mass - al).abs() < 1e-9,
                        "m {m} alpha {al} {scheme:?}: {fast:?} vs {reference:?}, mass {mass}"
                    );
                }
            }
        }
    }

    #[test]
    fn oob_skip_fraction_is_small_for_many_trees() {
        let (forest, _) = expdiff_forest(1000, 50, 20, 3);
        let (_, skipped) = oob_error(
            &forest,
            a(0.3),
            CondQuantileMethod::weighted_original(),
        )
        .unwrap();
        assert!(
            (skipped as f64) < 0.01 * 1000.0,
            "skipped {skipped} of 1000"
        );
    }

    #[test]
    fn single_oob_tree_original_excludes_the_observation() {
        // Root-only trees; pick an m left out by at least one tree.
        let (forest, _) = expdiff_forest(40, 5, 40, 6);
        let n = forest.n();
        'outer: for m in 0..n {
            let rank_m = forest.rank_of_row[m] as usize;
            let oob: Vec<usize> = (0..forest.n_trees())
                .filter(|&t| forest.trees()[t].counts_by_rank[rank_m] == 0)
                .collect();
            if oob.is_empty() {
                continue 'outer;
            }
            let q = oob_quantile(&forest, m, a(0.5), CondQuantileMethod::weighted_original())
                .unwrap();
            // Root-only trees with m excluded: uniform weights 1/n over the
            // other n-1 responses, unnormalized; quantile over that support.
            let mut others: Vec<f64> = (0..n)
                .filter(|&j| j != m)
                .map(|j| forest.training_output()[j])
                .collect();
            others.sort_by(|p, q| p.partial_cmp(q).unwrap());
            let target = 0.5 * n as f64; // alpha * n unnormalized mass steps of 1/n
            let idx = (target.ceil() as usize).min(others.len()) - 1;
            assert_eq!(q, others[idx]);
            return;
        }
        panic!("no observation was out-of-bag");
    }
}
