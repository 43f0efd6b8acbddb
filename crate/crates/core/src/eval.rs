//! Evaluation: ROC AUC, stratified cross-validated grid search, one-tailed
//! Fisher exact tests, percentile-bin overlap with a known positive set,
//! pathway enrichment scores and centered moving averages.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::LabelSet;
use crate::ndmath::Dense;
use crate::seed;
use crate::textfmt::sig9;

/// Area under the ROC curve: the fraction of (positive, negative) pairs in
/// which the positive scores higher, ties counting one half.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the concordant count plus the tie count, kept integral.
    let mut half_units: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        let (mut p, mut q) = (0u128, 0u128);
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            if labels[order[end]] {
                p += 1;
            } else {
                q += 1;
            }
            end += 1;
        }
        half_units += 2 * p * neg_below + p * q;
        neg_below += q;
        k = end;
    }
    Ok(half_units as f64 / (2 * n_pos * n_neg) as f64)
}

/// Fold index per sample, assigning shuffled positives and shuffled
/// negatives round-robin so every fold keeps both classes.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("cross-validation needs k >= 2"));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < k || neg.len() < k {
        return Err(Error::invalid(format!(
            "{} positives and {} negatives cannot fill {k} stratified folds",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = seed::rng(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold = vec![0; labels.len()];
    for (j, &i) in pos.iter().enumerate() {
        fold[i] = j % k;
    }
    for (j, &i) in neg.iter().enumerate() {
        fold[i] = j % k;
    }
    Ok(fold)
}

/// Held-out AUC per fold for one fit/predict routine.
pub fn cross_val_auc<F>(x: &Dense, y: &[bool], folds: &[usize], k: usize, fit_predict: &F) -> Result<Vec<f64>>
where
    F: Fn(&Dense, &[bool], &Dense, usize) -> Result<Vec<f64>>,
{
    if x.rows() != y.len() || folds.len() != y.len() {
        return Err(Error::Shape("rows, labels and fold ids disagree".into()));
    }
    (0..k)
        .map(|f| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
            let ytr: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let yte: Vec<bool> = test.iter().map(|&i| y[i]).collect();
            let pred = fit_predict(&x.select_rows(&train), &ytr, &x.select_rows(&test), f)?;
            auc_roc(&pred, &yte)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearchResult<P> {
    pub best_index: usize,
    pub best: P,
    pub mean_auc: Vec<f64>,
    pub fold_auc: Vec<Vec<f64>>,
}

/// Stratified k-fold grid search. `fit_predict(params, x_train, y_train,
/// x_test, fold)` returns scores for the test rows. The highest mean AUC
/// wins; earlier grid points win ties.
pub fn cross_val_grid_search<P, F>(
    x: &Dense,
    y: &[bool],
    grid: &[P],
    k: usize,
    seed: u64,
    fit_predict: F,
) -> Result<GridSearchResult<P>>
where
    P: Clone + Sync,
    F: Fn(&P, &Dense, &[bool], &Dense, usize) -> Result<Vec<f64>> + Sync,
{
    if grid.is_empty() {
        return Err(Error::invalid("empty parameter grid"));
    }
    let folds = stratified_folds(y, k, seed)?;
    let fold_auc: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|p| cross_val_auc(x, y, &folds, k, &|a, b, c, f| fit_predict(p, a, b, c, f)))
        .collect::<Result<_>>()?;
    let mean_auc: Vec<f64> = fold_auc
        .iter()
        .map(|a| a.iter().sum::<f64>() / k as f64)
        .collect();
    let mut best_index = 0;
    for (i, &m) in mean_auc.iter().enumerate() {
        if m > mean_auc[best_index] {
            best_index = i;
        }
    }
    Ok(GridSearchResult {
        best_index,
        best: grid[best_index].clone(),
        mean_auc,
        fold_auc,
    })
}

/// 2x2 table `[[a, b], [c, d]]`; `a` counts items in both the query and the
/// reference set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Result<Self> {
        if a + b + c + d == 0 {
            return Err(Error::invalid("empty contingency table"));
        }
        Ok(ContingencyTable { a, b, c, d })
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

/// `ln k!` for `k = 0..=n`.
pub fn ln_factorials(n: u64) -> Vec<f64> {
    let mut v = Vec::with_capacity(n as usize + 1);
    v.push(0.0);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += (k as f64).ln();
        v.push(acc);
    }
    v
}

fn fisher_ln_with(t: &ContingencyTable, lf: &[f64]) -> f64 {
    let n = t.total();
    let r1 = t.a + t.b;
    let c1 = t.a + t.c;
    let hi = r1.min(c1);
    if t.a == 0 || t.a + n <= r1 + c1 {
        // `a` is the smallest value the margins allow: the whole support.
        return 0.0;
    }
    let lf = |k: u64| lf[k as usize];
    let ln_pmf = |x: u64| {
        lf(r1) + lf(n - r1) + lf(c1) + lf(n - c1)
            - lf(n)
            - lf(x)
            - lf(r1 - x)
            - lf(c1 - x)
            - lf(n + x - r1 - c1)
    };
    let terms: Vec<f64> = (t.a..=hi).map(ln_pmf).collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|&l| (l - max).exp()).sum();
    (max + sum.ln()).min(0.0)
}

/// Natural log of the one-tailed Fisher p-value `P(X >= a)` with all
/// margins fixed.
pub fn fisher_exact_greater_ln(t: &ContingencyTable) -> f64 {
    fisher_ln_with(t, &ln_factorials(t.total()))
}

/// One-tailed Fisher exact test for enrichment: `P(X >= a)` under the
/// hypergeometric distribution with the table's margins. Sums in log space
/// so tails far below `1e-300` stay positive until the final exponent.
pub fn fisher_exact_greater(t: &ContingencyTable) -> f64 {
    fisher_exact_greater_ln(t).exp()
}

/// `-log10 p`, never negative.
pub fn neg_log10_from_ln(ln_p: f64) -> f64 {
    let s = -ln_p / std::f64::consts::LN_10;
    if s > 0.0 {
        s
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PercentileBin {
    /// Percent range `[lo, hi)` of the ranking covered by the bin.
    pub lo_pct: f64,
    pub hi_pct: f64,
    pub size: usize,
    pub overlap: usize,
    pub p_value: f64,
    /// `-log10 p`, useful when `p_value` underflows to zero.
    pub neg_log10_p: f64,
}

/// Sort `(id, score)` pairs by descending score, ties by ascending id.
pub fn sort_ranking(ranking: &mut [(String, f64)]) {
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Bin the ranking by score percentile and count known positives per bin.
/// Bins hold `floor(n / n_bins)` genes each, with `n_bins =
/// round(1 / bin_width)`; the last bin also takes the remainder.
pub fn percentile_overlap(
    ranking: &[(String, f64)],
    known: &LabelSet,
    bin_width: f64,
) -> Result<Vec<PercentileBin>> {
    if ranking.is_empty() {
        return Err(Error::invalid("empty ranking"));
    }
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(Error::invalid("bin width must lie in (0, 1]"));
    }
    let n_bins = (1.0 / bin_width).round() as usize;
    let n = ranking.len();
    let size = n / n_bins;
    if size == 0 {
        return Err(Error::invalid(format!("{n} genes cannot fill {n_bins} bins")));
    }
    let ranked: HashSet<&str> = ranking.iter().map(|(id, _)| id.as_str()).collect();
    if let Some(missing) = known.universe().iter().find(|id| !ranked.contains(id.as_str())) {
        return Err(Error::invalid(format!(
            "labeled id {missing:?} missing from ranking"
        )));
    }
    let mut sorted = ranking.to_vec();
    sort_ranking(&mut sorted);
    let total_known = sorted.iter().filter(|(id, _)| known.is_positive(id)).count() as u64;
    let lf = ln_factorials(n as u64);
    let mut bins = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let start = b * size;
        let end = if b + 1 == n_bins { n } else { start + size };
        let overlap = sorted[start..end]
            .iter()
            .filter(|(id, _)| known.is_positive(id))
            .count();
        let in_bin = (end - start) as u64;
        let a = overlap as u64;
        let t = ContingencyTable {
            a,
            b: in_bin - a,
            c: total_known - a,
            d: n as u64 - in_bin - (total_known - a),
        };
        let ln_p = fisher_ln_with(&t, &lf);
        bins.push(PercentileBin {
            lo_pct: 100.0 * start as f64 / n as f64,
            hi_pct: 100.0 * end as f64 / n as f64,
            size: end - start,
            overlap,
            p_value: ln_p.exp(),
            neg_log10_p: neg_log10_from_ln(ln_p),
        });
    }
    Ok(bins)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneSet {
    pub name: String,
    pub description: String,
    pub members: Vec<String>,
}

/// Named gene sets with unique names and at least one member each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneSetCollection {
    sets: Vec<GeneSet>,
}

impl GeneSetCollection {
    pub fn new(sets: Vec<GeneSet>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &sets {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::invalid(format!("duplicate gene set {:?}", s.name)));
            }
            if s.members.is_empty() {
                return Err(Error::invalid(format!("gene set {:?} is empty", s.name)));
            }
        }
        Ok(GeneSetCollection { sets })
    }

    pub fn sets(&self) -> &[GeneSet] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Read a GMT file: `name TAB description TAB member...` per line.
pub fn load_gmt(path: impl AsRef<Path>) -> Result<GeneSetCollection> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut sets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() < 3 {
            return Err(Error::parse(
                path,
                i + 1,
                "expected name, description and members",
            ));
        }
        let mut members: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for m in &cells[2..] {
            let m = m.trim();
            if !m.is_empty() && seen.insert(m) {
                members.push(m.to_string());
            }
        }
        sets.push(GeneSet {
            name: cells[0].to_string(),
            description: cells[1].to_string(),
            members,
        });
    }
    GeneSetCollection::new(sets).map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// `-log10` of the Fisher p-value for the overlap of `query` with each
/// pathway, both restricted to `universe`. Pathways with no member in the
/// universe score 0.
pub fn enrichment_scores(
    query: &[String],
    pathways: &GeneSetCollection,
    universe: &[String],
) -> Result<Vec<(String, f64)>> {
    let universe: HashSet<&str> = universe.iter().map(String::as_str).collect();
    let query: HashSet<&str> = query.iter().map(String::as_str).collect();
    if let Some(q) = query.iter().find(|q| !universe.contains(*q)) {
        return Err(Error::invalid(format!("query gene {q:?} outside the universe")));
    }
    let n = universe.len() as u64;
    let lf = ln_factorials(n);
    let mut disjoint = 0;
    let scores = pathways
        .sets()
        .iter()
        .map(|set| {
            let members: HashSet<&str> = set
                .members
                .iter()
                .map(String::as_str)
                .filter(|m| universe.contains(m))
                .collect();
            if members.is_empty() {
                disjoint += 1;
                return (set.name.clone(), 0.0);
            }
            let a = members.iter().filter(|m| query.contains(*m)).count() as u64;
            let b = query.len() as u64 - a;
            let c = members.len() as u64 - a;
            let t = ContingencyTable {
                a,
                b,
                c,
                d: n - a - b - c,
            };
            (set.name.clone(), neg_log10_from_ln(fisher_ln_with(&t, &lf)))
        })
        .collect();
    if disjoint > 0 {
        log::warn!("{disjoint} pathways share no gene with the universe; scored 0");
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub pathway: String,
    pub reference: f64,
    pub query: f64,
    pub reference_smoothed: f64,
    pub query_smoothed: f64,
}

/// Pair two score lists by pathway, order by reference score descending
/// (ties by name) and smooth both series.
pub fn enrichment_curve(
    reference: &[(String, f64)],
    query: &[(String, f64)],
    window: usize,
) -> Result<Vec<CurvePoint>> {
    let q: HashMap<&str, f64> = query.iter().map(|(n, s)| (n.as_str(), *s)).collect();
    let mut rows: Vec<(String, f64, f64)> = reference
        .iter()
        .map(|(name, r)| {
            q.get(name.as_str())
                .map(|&qs| (name.clone(), *r, qs))
                .ok_or_else(|| Error::invalid(format!("pathway {name:?} missing from query scores")))
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let rs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let qs: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let rsm = moving_average(&rs, window)?;
    let qsm = moving_average(&qs, window)?;
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (pathway, reference, query))| CurvePoint {
            pathway,
            reference,
            query,
            reference_smoothed: rsm[i],
            query_smoothed: qsm[i],
        })
        .collect())
}

pub fn curve_csv_string(curve: &[CurvePoint]) -> String {
    let mut s = String::from("rank,pathway,reference,query,reference_smoothed,query_smoothed\n");
    for (i, p) in curve.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            i + 1,
            p.pathway,
            sig9(p.reference),
            sig9(p.query),
            sig9(p.reference_smoothed),
            sig9(p.query_smoothed)
        );
    }
    s
}

/// Centered moving average. Near the ends the window shrinks symmetrically
/// to the points available on both sides.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!("window must be odd, got {window}")));
    }
    let half = window / 2;
    let n = series.len();
    Ok((0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let part = &series[i - h..=i + h];
            part.iter().sum::<f64>() / part.len() as f64
        })
        .collect())
}
