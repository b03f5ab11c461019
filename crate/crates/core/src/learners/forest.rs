//! Random forest of CART trees on bootstrap samples.
//!
//! Each column is pre-sorted into its unique values once per fit, so a
//! node's split search is a pass over bin counts. Splits minimize the
//! children's summed squared deviations; on a 0/1 target that is the Gini
//! criterion, so one builder serves regression and classification.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{assign_folds, CvPoint, TIE_TOL};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, streams, TaskRng};

const LEAF: u32 = u32::MAX;

/// Number of columns tried at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Mtry {
    Fixed(usize),
    Auto(MtryRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MtryRule {
    /// Chosen by k-fold cross-validation over `k, k/2, k/4, ...`.
    Cv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub ntree: usize,
    pub mtry: Mtry,
    pub nodesize: usize,
    /// Folds used when `mtry` is cross-validated.
    pub cv_folds: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            ntree: 50,
            mtry: Mtry::Auto(MtryRule::Cv),
            nodesize: 5,
            cv_folds: 5,
        }
    }
}

impl ForestParams {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.ntree == 0 {
            return Err(Error::validation("ntree must be at least 1"));
        }
        if self.nodesize == 0 {
            return Err(Error::validation("nodesize must be at least 1"));
        }
        if let Mtry::Fixed(m) = self.mtry {
            if m == 0 || m > k {
                return Err(Error::validation(format!(
                    "mtry must lie in 1..={k}, got {m}"
                )));
            }
        }
        if matches!(self.mtry, Mtry::Auto(_)) && self.cv_folds < 2 {
            return Err(Error::validation("mtry cross-validation needs at least 2 folds"));
        }
        Ok(())
    }
}

/// One tree in struct-of-arrays form; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    feature: Vec<u32>,
    threshold: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
    value: Vec<f64>,
}

impl Tree {
    fn with_root() -> Self {
        Tree {
            feature: vec![LEAF],
            threshold: vec![0.0],
            left: vec![LEAF],
            right: vec![LEAF],
            value: vec![0.0],
        }
    }

    fn push_node(&mut self) -> u32 {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(LEAF);
        self.right.push(LEAF);
        self.value.push(0.0);
        (self.feature.len() - 1) as u32
    }

    pub fn node_count(&self) -> usize {
        self.feature.len()
    }

    pub fn uses_column(&self, column: usize) -> bool {
        self.feature.iter().any(|&f| f as usize == column)
    }

    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut node = 0usize;
        while self.feature[node] != LEAF {
            let f = self.feature[node] as usize;
            node = if x[(row, f)] <= self.threshold[node] {
                self.left[node]
            } else {
                self.right[node]
            } as usize;
        }
        self.value[node]
    }

    /// Adds this tree's prediction at `x[row] + delta_j * e_column` into
    /// `acc[j]` for every sorted shift `delta_j` in `lo..hi`.
    fn accumulate_shifted(
        &self,
        x: &DMatrix<f64>,
        row: usize,
        column: usize,
        deltas: &[f64],
        node: usize,
        lo: usize,
        hi: usize,
        acc: &mut [f64],
    ) {
        if lo >= hi {
            return;
        }
        let f = self.feature[node];
        if f == LEAF {
            for a in &mut acc[lo..hi] {
                *a += self.value[node];
            }
            return;
        }
        let f = f as usize;
        let (l, r) = (self.left[node] as usize, self.right[node] as usize);
        if f != column {
            let next = if x[(row, f)] <= self.threshold[node] { l } else { r };
            self.accumulate_shifted(x, row, column, deltas, next, lo, hi, acc);
            return;
        }
        // Left while x + delta <= threshold, a prefix of the sorted shifts.
        let cut = lo + deltas[lo..hi].partition_point(|&d| x[(row, f)] + d <= self.threshold[node]);
        self.accumulate_shifted(x, row, column, deltas, l, lo, cut, acc);
        self.accumulate_shifted(x, row, column, deltas, r, cut, hi, acc);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub mtry: usize,
    pub nodesize: usize,
}

impl Forest {
    /// Mean of the tree outputs, summed in tree order.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let t = self.trees.len() as f64;
        (0..x.nrows())
            .into_par_iter()
            .map(|i| self.trees.iter().map(|tr| tr.predict_row(x, i)).sum::<f64>() / t)
            .collect()
    }

    /// Predictions with `deltas[j]` added to `column`, as a rows x shifts
    /// matrix. Each entry equals `predict` on the shifted input exactly.
    pub fn predict_shifted(&self, x: &DMatrix<f64>, column: usize, deltas: &[f64]) -> DMatrix<f64> {
        let m = deltas.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| deltas[a].total_cmp(&deltas[b]));
        let sorted: Vec<f64> = order.iter().map(|&j| deltas[j]).collect();
        let t = self.trees.len() as f64;
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![0.0; m];
                for tree in &self.trees {
                    tree.accumulate_shifted(x, i, column, &sorted, 0, 0, m, &mut acc);
                }
                acc
            })
            .collect();
        let mut out = DMatrix::zeros(x.nrows(), m);
        for (i, acc) in rows.iter().enumerate() {
            for (pos, &j) in order.iter().enumerate() {
                out[(i, j)] = acc[pos] / t;
            }
        }
        out
    }
}

/// Column values replaced by their rank among the column's unique values.
struct Binned {
    codes: Vec<Vec<u32>>,
    values: Vec<Vec<f64>>,
}

impl Binned {
    fn new(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let (codes, values) = (0..x.ncols())
            .into_par_iter()
            .map(|j| {
                let col = x.column(j);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
                let mut codes = vec![0u32; n];
                let mut values: Vec<f64> = Vec::new();
                for &i in &order {
                    if values.last() != Some(&col[i]) {
                        values.push(col[i]);
                    }
                    codes[i] = (values.len() - 1) as u32;
                }
                (codes, values)
            })
            .unzip();
        Binned { codes, values }
    }
}

struct Split {
    feature: usize,
    code: u32,
    threshold: f64,
    score: f64,
}

struct Grower<'a> {
    binned: &'a Binned,
    y: &'a [f64],
    mtry: usize,
    nodesize: usize,
    vote: bool,
    count: Vec<u32>,
    sum: Vec<f64>,
    pairs: Vec<(u32, f64)>,
}

impl Grower<'_> {
    fn leaf_value(&self, sum: f64, n: usize) -> f64 {
        let mean = sum / n as f64;
        if !self.vote {
            return mean;
        }
        if mean > 0.5 {
            1.0
        } else if mean < 0.5 {
            0.0
        } else {
            0.5
        }
    }

    /// Best threshold on one column by `S_L^2/n_L + S_R^2/n_R`.
    fn best_on(&mut self, f: usize, rows: &[u32], total: f64) -> Option<Split> {
        let values = &self.binned.values[f];
        let nb = values.len();
        if nb < 2 {
            return None;
        }
        let codes = &self.binned.codes[f];
        let n = rows.len();
        let mut best: Option<Split> = None;
        let mut consider = |prev: u32, cur: u32, nl: usize, sl: f64| {
            let nr = n - nl;
            let sr = total - sl;
            let score = sl * sl / nl as f64 + sr * sr / nr as f64;
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Split {
                    feature: f,
                    code: prev,
                    threshold: 0.5 * (values[prev as usize] + values[cur as usize]),
                    score,
                });
            }
        };
        if nb <= 2 * n {
            for &r in rows {
                let c = codes[r as usize] as usize;
                self.count[c] += 1;
                self.sum[c] += self.y[r as usize];
            }
            let (mut nl, mut sl) = (0usize, 0.0);
            let mut prev: Option<u32> = None;
            for b in 0..nb {
                if self.count[b] == 0 {
                    continue;
                }
                if let Some(p) = prev {
                    consider(p, b as u32, nl, sl);
                }
                nl += self.count[b] as usize;
                sl += self.sum[b];
                prev = Some(b as u32);
                self.count[b] = 0;
                self.sum[b] = 0.0;
            }
        } else {
            self.pairs.clear();
            self.pairs
                .extend(rows.iter().map(|&r| (codes[r as usize], self.y[r as usize])));
            self.pairs.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let (mut nl, mut sl) = (0usize, 0.0);
            let mut i = 0;
            let mut prev: Option<u32> = None;
            while i < n {
                let c = self.pairs[i].0;
                if let Some(p) = prev {
                    consider(p, c, nl, sl);
                }
                while i < n && self.pairs[i].0 == c {
                    nl += 1;
                    sl += self.pairs[i].1;
                    i += 1;
                }
                prev = Some(c);
            }
        }
        best
    }

    fn grow(&mut self, sample: &mut [u32], rng: &mut TaskRng) -> Tree {
        let k = self.binned.codes.len();
        let mut tree = Tree::with_root();
        let mut features: Vec<usize> = (0..k).collect();
        let mut stack = vec![(0u32, 0usize, sample.len())];
        while let Some((node, start, end)) = stack.pop() {
            let rows = &sample[start..end];
            let n = rows.len();
            let (mut total, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
            for &r in rows {
                let v = self.y[r as usize];
                total += v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            tree.value[node as usize] = self.leaf_value(total, n);
            if n <= self.nodesize || lo == hi {
                continue;
            }
            for i in 0..self.mtry {
                let j = rng.random_range(i..k);
                features.swap(i, j);
            }
            let mut best: Option<Split> = None;
            for &f in &features[..self.mtry] {
                if let Some(s) = self.best_on(f, rows, total) {
                    if best.as_ref().is_none_or(|b| s.score > b.score) {
                        best = Some(s);
                    }
                }
            }
            let parent = total * total / n as f64;
            let Some(split) = best.filter(|s| s.score - parent > 1e-12 * parent.abs().max(1e-300))
            else {
                continue;
            };
            let codes = &self.binned.codes[split.feature];
            let seg = &mut sample[start..end];
            let mut mid = 0;
            for i in 0..seg.len() {
                if codes[seg[i] as usize] <= split.code {
                    seg.swap(i, mid);
                    mid += 1;
                }
            }
            let (l, r) = (tree.push_node(), tree.push_node());
            let nd = node as usize;
            tree.feature[nd] = split.feature as u32;
            tree.threshold[nd] = split.threshold;
            tree.left[nd] = l;
            tree.right[nd] = r;
            stack.push((r, start + mid, end));
            stack.push((l, start, start + mid));
        }
        tree
    }
}

fn tree_rng(seed: u64, tree: usize) -> TaskRng {
    rng_from_seed(derive_seed(derive_seed(seed, streams::FOREST), tree as u64))
}

/// Bootstrap draw of `n` row indices for one tree.
fn bootstrap(n: usize, rng: &mut TaskRng) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(0..n) as u32).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestFit {
    pub forest: Forest,
    /// Out-of-bag RMSE over rows left out of at least one tree.
    pub oob_rmse: Option<f64>,
    pub mtry_profile: Vec<CvPoint>,
}

/// Fits a forest with a fixed `mtry`. With `vote`, leaves hold the majority
/// class of a 0/1 target and the forest averages the votes.
pub fn grow_forest(
    x: &DMatrix<f64>,
    y: &[f64],
    ntree: usize,
    mtry: usize,
    nodesize: usize,
    vote: bool,
    seed: u64,
) -> Result<(Forest, Option<f64>)> {
    let (n, k) = x.shape();
    if n != y.len() {
        return Err(Error::validation("forest needs matching x and y"));
    }
    if mtry == 0 || mtry > k {
        return Err(Error::validation(format!("mtry must lie in 1..={k}, got {mtry}")));
    }
    if n < 2 {
        return Err(Error::validation(format!("forest needs at least 2 rows, got {n}")));
    }
    let binned = Binned::new(x);
    let widest = binned.values.iter().map(Vec::len).max().unwrap_or(0);
    let grown: Vec<(Tree, Vec<bool>)> = (0..ntree)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let mut sample = bootstrap(n, &mut rng);
            let mut in_bag = vec![false; n];
            for &r in &sample {
                in_bag[r as usize] = true;
            }
            let mut grower = Grower {
                binned: &binned,
                y,
                mtry,
                nodesize,
                vote,
                count: vec![0; widest],
                sum: vec![0.0; widest],
                pairs: Vec::new(),
            };
            (grower.grow(&mut sample, &mut rng), in_bag)
        })
        .collect();

    let mut oob_sum = vec![0.0; n];
    let mut oob_count = vec![0u32; n];
    for (tree, in_bag) in &grown {
        for i in 0..n {
            if !in_bag[i] {
                oob_sum[i] += tree.predict_row(x, i);
                oob_count[i] += 1;
            }
        }
    }
    let (mut sse, mut m) = (0.0, 0usize);
    for i in 0..n {
        if oob_count[i] > 0 {
            sse += (y[i] - oob_sum[i] / f64::from(oob_count[i])).powi(2);
            m += 1;
        }
    }
    let oob = (m > 0).then(|| (sse / m as f64).sqrt());
    Ok((
        Forest {
            trees: grown.into_iter().map(|(t, _)| t).collect(),
            mtry,
            nodesize,
        },
        oob,
    ))
}

/// Candidate set `k, k/2, k/4, ..., 1` (integer halving, deduplicated).
pub fn mtry_candidates(k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut m = k;
    while m >= 1 {
        if out.last() != Some(&m) {
            out.push(m);
        }
        m /= 2;
    }
    out
}

/// The candidate with the lowest k-fold CV RMSE; ties go to the smaller mtry.
pub fn select_mtry(
    x: &DMatrix<f64>,
    y: &[f64],
    params: &ForestParams,
    vote: bool,
    seed: u64,
) -> Result<(usize, Vec<CvPoint>)> {
    let candidates = mtry_candidates(x.ncols());
    if candidates.len() == 1 {
        return Ok((candidates[0], vec![]));
    }
    let n = x.nrows();
    let fold = assign_folds(n, params.cv_folds, derive_seed(seed, streams::MTRY))?;
    let mut profile = Vec::with_capacity(candidates.len());
    for &m in &candidates {
        let mut total = 0.0;
        for f in 0..params.cv_folds {
            let tr: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
            let te: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
            let ytr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
            let (forest, _) = grow_forest(
                &x.select_rows(&tr),
                &ytr,
                params.ntree,
                m,
                params.nodesize,
                vote,
                derive_seed(seed, f as u64),
            )?;
            let pred = forest.predict(&x.select_rows(&te));
            let sse: f64 = te.iter().zip(&pred).map(|(&i, p)| (y[i] - p).powi(2)).sum();
            total += (sse / te.len() as f64).sqrt();
        }
        profile.push(CvPoint {
            value: m as f64,
            score: total / params.cv_folds as f64,
        });
    }
    let best = profile.iter().map(|p| p.score).fold(f64::INFINITY, f64::min);
    let pick = profile
        .iter()
        .filter(|p| p.score <= best + TIE_TOL)
        .map(|p| p.value as usize)
        .min()
        .expect("nonempty profile");
    Ok((pick, profile))
}

pub fn fit_forest(
    x: &DMatrix<f64>,
    y: &[f64],
    params: &ForestParams,
    vote: bool,
    seed: u64,
) -> Result<ForestFit> {
    params.validate(x.ncols())?;
    let (mtry, mtry_profile) = match params.mtry {
        Mtry::Fixed(m) => (m, vec![]),
        Mtry::Auto(MtryRule::Cv) => select_mtry(x, y, params, vote, seed)?,
    };
    let (forest, oob_rmse) =
        grow_forest(x, y, params.ntree, mtry, params.nodesize, vote, seed)?;
    Ok(ForestFit {
        forest,
        oob_rmse,
        mtry_profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn fixed(ntree: usize, mtry: usize, nodesize: usize) -> ForestParams {
        ForestParams {
            ntree,
            mtry: Mtry::Fixed(mtry),
            nodesize,
            cv_folds: 5,
        }
    }

    fn noise_matrix(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_response_is_reproduced() {
        let x = noise_matrix(40, 3, 1);
        let fit = fit_forest(&x, &[2.5; 40], &fixed(10, 2, 5), false, 1).unwrap();
        assert!(fit.forest.predict(&x).iter().all(|&p| p == 2.5));
        assert!(fit.forest.trees.iter().all(|t| t.node_count() == 1));
    }

    #[test]
    fn root_only_tree_predicts_bootstrap_mean() {
        let x = noise_matrix(30, 2, 2);
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let fit = fit_forest(&x, &y, &fixed(1, 2, 30), false, 7).unwrap();
        let sample = bootstrap(30, &mut tree_rng(7, 0));
        let mean = sample.iter().map(|&r| y[r as usize]).sum::<f64>() / 30.0;
        for p in fit.forest.predict(&x) {
            assert!((p - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn separating_binary_feature_is_always_used() {
        let n = 60;
        let x = DMatrix::from_fn(n, 1, |i, _| (i % 2) as f64);
        let y: Vec<f64> = (0..n).map(|i| 10.0 * (i % 2) as f64).collect();
        let fit = fit_forest(&x, &y, &fixed(50, 1, 5), false, 3).unwrap();
        assert!(fit.forest.trees.iter().all(|t| t.uses_column(0)));
        for (p, v) in fit.forest.predict(&x).iter().zip(&y) {
            assert!((p - v).abs() < 0.5);
        }
    }

    #[test]
    fn classifier_votes_on_separable_data() {
        let n = 80;
        // Classes separated by a wide gap, so every midpoint split is clean.
        let x = DMatrix::from_fn(n, 1, |i, _| if i < 40 { i as f64 } else { i as f64 + 100.0 });
        let d: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i >= 40))).collect();
        let fit = fit_forest(&x, &d, &fixed(50, 1, 5), true, 4).unwrap();
        for (p, v) in fit.forest.predict(&x).iter().zip(&d) {
            assert!((0.0..=1.0).contains(p));
            let on_side = if *v == 1.0 { *p } else { 1.0 - p };
            assert!(on_side >= 0.9, "{p} for {v}");
        }
    }

    #[test]
    fn same_seed_same_forest_and_thread_independent() {
        let x = noise_matrix(100, 4, 3);
        let y: Vec<f64> = (0..100).map(|i| x[(i, 0)] * 3.0 + x[(i, 1)]).collect();
        let a = fit_forest(&x, &y, &fixed(8, 2, 5), false, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| fit_forest(&x, &y, &fixed(8, 2, 5), false, 9).unwrap());
        assert_eq!(a.forest, b.forest);
        assert!(a.oob_rmse.unwrap() < 3.2);
    }

    #[test]
    fn shifted_predictions_equal_direct_predictions() {
        let x = noise_matrix(120, 3, 5);
        let y: Vec<f64> = (0..120).map(|i| (x[(i, 0)] * 4.0).sin() + x[(i, 2)]).collect();
        let fit = fit_forest(&x, &y, &fixed(6, 3, 3), false, 2).unwrap();
        let deltas = [0.4, 0.01, 1.0, 0.25, 0.4];
        let shifted = fit.forest.predict_shifted(&x, 0, &deltas);
        for (j, &d) in deltas.iter().enumerate() {
            let mut xs = x.clone();
            xs.column_mut(0).add_scalar_mut(d);
            let direct = fit.forest.predict(&xs);
            for i in 0..120 {
                assert_eq!(shifted[(i, j)], direct[i]);
            }
        }
    }

    #[test]
    fn candidate_set_halves() {
        assert_eq!(mtry_candidates(40), vec![40, 20, 10, 5, 2, 1]);
        assert_eq!(mtry_candidates(1), vec![1]);
        let x = noise_matrix(30, 1, 1);
        let (m, _) = select_mtry(&x, &[0.0; 30], &ForestParams::default(), false, 1).unwrap();
        assert_eq!(m, 1);
    }

    #[test]
    fn noise_response_selects_a_candidate() {
        let x = noise_matrix(100, 8, 6);
        let y: Vec<f64> = noise_matrix(100, 1, 7).iter().copied().collect();
        let params = ForestParams {
            ntree: 10,
            ..ForestParams::default()
        };
        let (m, profile) = select_mtry(&x, &y, &params, false, 3).unwrap();
        assert!(mtry_candidates(8).contains(&m));
        assert_eq!(profile.len(), mtry_candidates(8).len());
    }

    #[test]
    fn sparse_signal_prefers_wide_mtry() {
        let params = ForestParams {
            ntree: 25,
            ..ForestParams::default()
        };
        let mut wide = 0;
        for rep in 0..20 {
            let x = noise_matrix(200, 40, 100 + rep);
            let mut rng = rng_from_seed(500 + rep);
            let y: Vec<f64> = (0..200)
                .map(|i| 3.0 * x[(i, 0)] + rng.random_range(-0.3..0.3))
                .collect();
            let (m, _) = select_mtry(&x, &y, &params, false, rep).unwrap();
            if m >= 10 {
                wide += 1;
            }
        }
        assert!(wide >= 16, "{wide} of 20");
    }

    #[test]
    fn rejects_bad_params() {
        let x = noise_matrix(20, 3, 1);
        assert!(fit_forest(&x, &[0.0; 20], &fixed(5, 4, 5), false, 1).is_err());
        assert!(fit_forest(&x.rows(0, 1).into_owned(), &[0.0], &fixed(5, 2, 1), false, 1).is_err());
        assert!(fit_forest(&x, &[0.0; 20], &fixed(0, 2, 5), false, 1).is_err());
    }
}
