//! Solvers for the sparsest k-subgraph objective
//! `f(S) = Σ_{i,j ∈ Sᶜ} H_ij` over a symmetric nonnegative matrix `H`.
//!
//! `S` is the set of features flagged as changed; `Sᶜ` (the "kept" set) is
//! the sparse subgraph. All solvers break ties toward the smallest feature
//! index (greedy) or the lexicographically smallest kept set (exact).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    GreedyK,
    GreedyScore,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverResult {
    /// Features added to `S`, in the order they were added (ascending for the
    /// exact solver).
    pub selected: Vec<usize>,
    /// Per-feature scores, length D.
    ///
    /// * greedy-score: normalized objective decrement at the step the feature
    ///   was added;
    /// * greedy-k: raw decrement at the step the feature was added, 0 for
    ///   features never added;
    /// * exact: 1 for selected features, 0 otherwise.
    pub scores: Vec<f64>,
    /// `f` evaluated directly at the final `S`.
    pub objective: f64,
    pub method: SolverMethod,
}

impl SolverResult {
    /// Ascending complement of `selected`.
    pub fn kept(&self) -> Vec<usize> {
        let mut mask = vec![false; self.scores.len()];
        for &s in &self.selected {
            mask[s] = true;
        }
        (0..mask.len()).filter(|&d| !mask[d]).collect()
    }
}

/// Checks that `h` is square, finite, symmetric and nonnegative.
pub fn validate_weights(h: &DMatrix<f64>) -> Result<()> {
    let d = h.nrows();
    if d == 0 || h.ncols() != d {
        return Err(Error::invalid(format!(
            "matrix must be square and nonempty, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    for i in 0..d {
        for j in 0..d {
            let v = h[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::NegativeEntry { i, j, value: v });
            }
            if v != h[(j, i)] {
                return Err(Error::NotSymmetric { i, j });
            }
        }
    }
    Ok(())
}

/// `Σ_{i,j ∈ kept} H_ij`.
pub fn subset_sum(h: &DMatrix<f64>, kept: &[usize]) -> f64 {
    kept.iter().map(|&i| kept.iter().map(|&j| h[(i, j)]).sum::<f64>()).sum()
}

/// `f(S)` for a changed set `S`.
pub fn objective(h: &DMatrix<f64>, selected: &[usize]) -> f64 {
    let mut mask = vec![true; h.nrows()];
    for &s in selected {
        mask[s] = false;
    }
    let kept: Vec<usize> = (0..h.nrows()).filter(|&d| mask[d]).collect();
    subset_sum(h, &kept)
}

/// Row sums `a_d = Σ_{i ∈ Sᶜ} H_di`, maintained as features leave `Sᶜ`.
struct Bookkeeping<'a> {
    h: &'a DMatrix<f64>,
    a: Vec<f64>,
    active: Vec<bool>,
}

impl<'a> Bookkeeping<'a> {
    fn new(h: &'a DMatrix<f64>) -> Self {
        let d = h.nrows();
        let a = (0..d).map(|i| h.row(i).sum()).collect();
        Self {
            h,
            a,
            active: vec![true; d],
        }
    }

    /// `f(S) - f(S ∪ {d}) = 2 a_d - H_dd`, clamped at 0 against rounding.
    fn decrement(&self, d: usize) -> f64 {
        (2.0 * self.a[d] - self.h[(d, d)]).max(0.0)
    }

    /// Active feature with the largest decrement (i.e. the smallest
    /// `f(S ∪ {d})`); the first index wins ties.
    fn best(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for d in (0..self.a.len()).filter(|&d| self.active[d]) {
            let dec = self.decrement(d);
            if best.is_none_or(|(_, b)| dec > b) {
                best = Some((d, dec));
            }
        }
        best
    }

    fn remove(&mut self, d: usize) {
        self.active[d] = false;
        for i in 0..self.a.len() {
            if self.active[i] {
                self.a[i] -= self.h[(i, d)];
            }
        }
    }
}

/// Greedy method: adds `D - k` features to `S`, each time the one that
/// minimizes `f(S ∪ {d})`. O((D - k) D) after the O(D²) row sums.
pub fn greedy_k(h: &DMatrix<f64>, k: usize) -> Result<SolverResult> {
    validate_weights(h)?;
    let d = h.nrows();
    if k > d {
        return Err(Error::invalid(format!("k = {k} out of range 0..={d}")));
    }
    let mut book = Bookkeeping::new(h);
    let mut selected = Vec::with_capacity(d - k);
    let mut scores = vec![0.0; d];
    for _ in 0..(d - k) {
        let (best, dec) = book.best().expect("active features remain");
        scores[best] = dec;
        selected.push(best);
        book.remove(best);
    }
    let objective = objective(h, &selected);
    Ok(SolverResult {
        selected,
        scores,
        objective,
        method: SolverMethod::GreedyK,
    })
}

/// Greedy scoring method: runs all D steps and scores feature `d`, added at
/// step `i` (1-based), by `(f(S) - f(S ∪ {d})) / (D - i + 1)`.
pub fn greedy_score(h: &DMatrix<f64>) -> Result<SolverResult> {
    validate_weights(h)?;
    let d = h.nrows();
    let mut book = Bookkeeping::new(h);
    let mut selected = Vec::with_capacity(d);
    let mut scores = vec![0.0; d];
    for step in 1..=d {
        let (best, dec) = book.best().expect("active features remain");
        scores[best] = dec / (d - step + 1) as f64;
        selected.push(best);
        book.remove(best);
    }
    Ok(SolverResult {
        selected,
        scores,
        objective: 0.0,
        method: SolverMethod::GreedyScore,
    })
}

/// A set function evaluated on the kept set `Sᶜ`.
pub trait SetObjective {
    fn dim(&self) -> usize;
    fn eval(&self, kept: &[usize]) -> Result<f64>;
}

/// The quadratic objective as a [`SetObjective`], for cross-checking.
pub struct Quadratic<'a>(pub &'a DMatrix<f64>);

impl SetObjective for Quadratic<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn eval(&self, kept: &[usize]) -> Result<f64> {
        Ok(subset_sum(self.0, kept))
    }
}

/// Greedy scoring over an arbitrary set function, evaluating `f` directly at
/// every candidate. Scores can be negative when `f` is not monotone.
pub fn greedy_score_objective<F: SetObjective>(obj: &F) -> Result<SolverResult> {
    let d = obj.dim();
    if d == 0 {
        return Err(Error::invalid("objective has no features"));
    }
    let mut kept: Vec<usize> = (0..d).collect();
    let mut current = obj.eval(&kept)?;
    let mut selected = Vec::with_capacity(d);
    let mut scores = vec![0.0; d];
    for step in 1..=d {
        let mut best: Option<(usize, f64)> = None;
        for pos in 0..kept.len() {
            let trial: Vec<usize> = kept
                .iter()
                .enumerate()
                .filter(|&(p, _)| p != pos)
                .map(|(_, &v)| v)
                .collect();
            let value = obj.eval(&trial)?;
            if best.is_none_or(|(_, b)| value < b) {
                best = Some((pos, value));
            }
        }
        let (pos, value) = best.expect("kept set is nonempty");
        let feature = kept.remove(pos);
        scores[feature] = (current - value) / (d - step + 1) as f64;
        selected.push(feature);
        current = value;
    }
    Ok(SolverResult {
        selected,
        scores,
        objective: current,
        method: SolverMethod::GreedyScore,
    })
}

/// Depth-first enumeration of kept sets in lexicographic order with a lower
/// bound: the partial sum plus the cheapest marginal costs of the remaining
/// candidates (cross terms among them are nonnegative and ignored).
struct BranchAndBound<'a> {
    h: &'a DMatrix<f64>,
    k: usize,
    chosen: Vec<usize>,
    /// Marginal cost of adding candidate c: H_cc + 2 Σ_{s ∈ chosen} H_cs.
    cost: Vec<f64>,
    best: f64,
    best_set: Option<Vec<usize>>,
    scratch: Vec<Vec<f64>>,
}

impl BranchAndBound<'_> {
    fn search(&mut self, start: usize, partial: f64) {
        let d = self.h.nrows();
        let need = self.k - self.chosen.len();
        if need == 0 {
            if partial < self.best {
                self.best = partial;
                self.best_set = Some(self.chosen.clone());
            }
            return;
        }
        if d - start < need {
            return;
        }
        let depth = self.chosen.len();
        let mut buf = std::mem::take(&mut self.scratch[depth]);
        buf.clear();
        buf.extend_from_slice(&self.cost[start..]);
        let lower = if need < buf.len() {
            buf.select_nth_unstable_by(need - 1, f64::total_cmp);
            buf[..need].iter().sum::<f64>()
        } else {
            buf.iter().sum()
        };
        self.scratch[depth] = buf;
        if partial + lower >= self.best {
            return;
        }
        for c in start..=(d - need) {
            let next = partial + self.cost[c];
            if next >= self.best {
                continue;
            }
            for o in (c + 1)..d {
                self.cost[o] += 2.0 * self.h[(c, o)];
            }
            self.chosen.push(c);
            self.search(c + 1, next);
            self.chosen.pop();
            for o in (c + 1)..d {
                self.cost[o] -= 2.0 * self.h[(c, o)];
            }
        }
    }
}

/// Global minimizer of `f` over `|Sᶜ| = k`, for `D <= limit`.
pub fn exact_min(h: &DMatrix<f64>, k: usize, limit: usize) -> Result<SolverResult> {
    validate_weights(h)?;
    let d = h.nrows();
    if d > limit {
        return Err(Error::SizeLimit { dim: d, limit });
    }
    if k > d {
        return Err(Error::invalid(format!("k = {k} out of range 0..={d}")));
    }
    let kept = if k == 0 {
        Vec::new()
    } else {
        let mut bb = BranchAndBound {
            h,
            k,
            chosen: Vec::with_capacity(k),
            cost: (0..d).map(|c| h[(c, c)]).collect(),
            best: f64::INFINITY,
            best_set: None,
            scratch: vec![Vec::with_capacity(d); k + 1],
        };
        bb.search(0, 0.0);
        bb.best_set.expect("at least one subset of size k exists")
    };
    let mut in_kept = vec![false; d];
    for &c in &kept {
        in_kept[c] = true;
    }
    let selected: Vec<usize> = (0..d).filter(|&c| !in_kept[c]).collect();
    let scores = in_kept.iter().map(|&kp| if kp { 0.0 } else { 1.0 }).collect();
    let objective = subset_sum(h, &kept);
    Ok(SolverResult {
        selected,
        scores,
        objective,
        method: SolverMethod::Exact,
    })
}

/// Calls `visit` on every size-k subset of `0..d` in lexicographic order.
pub fn for_each_subset(d: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > d {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut pos = k;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if idx[pos] < d - k + pos {
                break;
            }
            if pos == 0 {
                return;
            }
        }
        idx[pos] += 1;
        for p in (pos + 1)..k {
            idx[p] = idx[p - 1] + 1;
        }
    }
}

/// Identifiability margin: the smallest excess of `f` over the reference
/// kept set `S*ᶜ` among all other kept sets of the same size. Positive iff
/// `S*` is the unique minimizer.
pub fn eta_margin(h: &DMatrix<f64>, changed: &[usize], k: usize, limit: usize) -> Result<f64> {
    validate_weights(h)?;
    let d = h.nrows();
    if d > limit {
        return Err(Error::SizeLimit { dim: d, limit });
    }
    let mut mask = vec![false; d];
    for &c in changed {
        if c >= d {
            return Err(Error::IndexOutOfRange { index: c, dim: d });
        }
        if mask[c] {
            return Err(Error::invalid(format!("feature {c} listed twice in S*")));
        }
        mask[c] = true;
    }
    let reference: Vec<usize> = (0..d).filter(|&c| !mask[c]).collect();
    if reference.len() != k {
        return Err(Error::invalid(format!(
            "|S*ᶜ| = {} does not match k = {k}",
            reference.len()
        )));
    }
    let base = subset_sum(h, &reference);
    let mut eta = f64::INFINITY;
    for_each_subset(d, k, |kept| {
        if kept != reference.as_slice() {
            eta = eta.min(subset_sum(h, kept) - base);
        }
    });
    if eta.is_infinite() {
        return Err(Error::invalid("no competing kept set exists (k = 0 or k = D)"));
    }
    Ok(eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        let d = rows.len();
        DMatrix::from_row_slice(d, d, &rows.concat())
    }

    fn three() -> DMatrix<f64> {
        m(&[&[0.0, 0.0, 0.0], &[0.0, 1.0, 1.0], &[0.0, 1.0, 1.0]])
    }

    /// Brute force over every kept set, no pruning.
    fn brute_min(h: &DMatrix<f64>, k: usize) -> (f64, Vec<usize>) {
        let mut best = (f64::INFINITY, Vec::new());
        for_each_subset(h.nrows(), k, |kept| {
            let v = subset_sum(h, kept);
            if v < best.0 {
                best = (v, kept.to_vec());
            }
        });
        best
    }

    #[test]
    fn greedy_k_examples() {
        let r = greedy_k(&DMatrix::zeros(3, 3), 2).unwrap();
        assert_eq!(r.selected, vec![0]);
        assert_eq!(r.objective, 0.0);

        let r = greedy_k(&three(), 2).unwrap();
        assert_eq!(r.selected, vec![1]);
        assert_eq!(r.objective, 1.0);
        assert_eq!(brute_min(&three(), 2).0, 1.0);

        let r = greedy_k(&three(), 3).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!(r.objective, 4.0);

        assert!(greedy_k(&three(), 4).is_err());
    }

    #[test]
    fn greedy_score_examples() {
        let r = greedy_score(&DMatrix::zeros(4, 4)).unwrap();
        assert!(r.scores.iter().all(|&s| s == 0.0));

        // f(∅) = 1. Adding feature 0 leaves Sᶜ = {1} with f = 0, adding
        // feature 1 leaves f = 1, so feature 0 goes first with (1 - 0) / 2.
        let r = greedy_score(&m(&[&[1.0, 0.0], &[0.0, 0.0]])).unwrap();
        assert_eq!(r.selected, vec![0, 1]);
        assert_eq!(r.scores, vec![0.5, 0.0]);
        let generic = greedy_score_objective(&Quadratic(&m(&[&[1.0, 0.0], &[0.0, 0.0]]))).unwrap();
        assert_eq!(generic.scores, r.scores);
    }

    #[test]
    fn exact_examples() {
        let r = exact_min(&DMatrix::zeros(5, 5), 3, DEFAULT_EXACT_LIMIT).unwrap();
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.kept(), vec![0, 1, 2]);

        let r = exact_min(&three(), 2, DEFAULT_EXACT_LIMIT).unwrap();
        assert_eq!(r.objective, 1.0);
        assert_eq!(r.kept(), vec![0, 1]);

        let big = DMatrix::zeros(26, 26);
        let err = exact_min(&big, 3, DEFAULT_EXACT_LIMIT).unwrap_err();
        assert!(err.to_string().contains("exact solver size limit"));
        assert!(err.is_limit());

        let r = exact_min(&three(), 0, DEFAULT_EXACT_LIMIT).unwrap();
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.selected, vec![0, 1, 2]);
    }

    #[test]
    fn eta_examples() {
        assert_eq!(eta_margin(&DMatrix::zeros(4, 4), &[0], 3, 25).unwrap(), 0.0);
        assert_eq!(eta_margin(&three(), &[2], 2, 25).unwrap(), 0.0);
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 0.0, 1.0]));
        assert_eq!(eta_margin(&diag, &[2], 2, 25).unwrap(), 1.0);
        assert!(eta_margin(&diag, &[2], 1, 25).is_err());
        assert!(eta_margin(&diag, &[], 3, 25).is_err());
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(matches!(
            greedy_score(&m(&[&[0.0, 1.0], &[0.5, 0.0]])),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(
            greedy_k(&m(&[&[-1.0, 0.0], &[0.0, 0.0]]), 1),
            Err(Error::NegativeEntry { .. })
        ));
    }

    #[test]
    fn subset_enumeration_counts() {
        let mut n = 0;
        let mut last: Vec<usize> = Vec::new();
        for_each_subset(7, 3, |s| {
            assert!(last.is_empty() || last.as_slice() < s);
            last = s.to_vec();
            n += 1;
        });
        assert_eq!(n, 35);
        let mut empty = 0;
        for_each_subset(4, 0, |s| {
            assert!(s.is_empty());
            empty += 1;
        });
        assert_eq!(empty, 1);
    }

    fn sym_matrix(dim: std::ops::Range<usize>) -> impl Strategy<Value = DMatrix<f64>> {
        dim.prop_flat_map(|d| {
            prop::collection::vec(0.0f64..1.0, d * d).prop_map(move |v| {
                let raw = DMatrix::from_vec(d, d, v);
                let mut h = DMatrix::zeros(d, d);
                for i in 0..d {
                    for j in i..d {
                        h[(i, j)] = raw[(i, j)];
                        h[(j, i)] = raw[(i, j)];
                    }
                }
                h
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exact_matches_brute_force(h in sym_matrix(2..11), kf in 0.0f64..1.0) {
            let k = 1 + ((h.nrows() - 1) as f64 * kf) as usize;
            let r = exact_min(&h, k, 25).unwrap();
            let (v, kept) = brute_min(&h, k);
            prop_assert!((r.objective - v).abs() < 1e-12);
            prop_assert_eq!(r.kept().len(), k);
            if (subset_sum(&h, &r.kept()) - v).abs() == 0.0 {
                prop_assert_eq!(r.kept(), kept);
            }
        }

        #[test]
        fn greedy_bookkeeping_matches_direct(h in sym_matrix(1..12), kf in 0.0f64..1.0) {
            let d = h.nrows();
            let k = (d as f64 * kf) as usize;
            let r = greedy_k(&h, k).unwrap();
            prop_assert_eq!(r.selected.len(), d - k);
            let mut seen = vec![false; d];
            for &s in &r.selected { prop_assert!(!seen[s]); seen[s] = true; }
            prop_assert!((r.objective - objective(&h, &r.selected)).abs() < 1e-12);
        }

        #[test]
        fn greedy_score_telescopes(h in sym_matrix(1..12)) {
            let d = h.nrows();
            let r = greedy_score(&h).unwrap();
            let total: f64 = r.selected.iter().enumerate()
                .map(|(pos, &f)| r.scores[f] * (d - pos) as f64)
                .sum();
            prop_assert!((total - h.sum()).abs() < 1e-9 * (1.0 + h.sum()));
            prop_assert!(r.scores.iter().all(|&s| s >= 0.0));
            let generic = greedy_score_objective(&Quadratic(&h)).unwrap();
            for (a, b) in generic.scores.iter().zip(&r.scores) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn greedy_guarantee_small(h in sym_matrix(2..9), kf in 0.0f64..1.0) {
            let d = h.nrows();
            let k = 1 + ((d - 1) as f64 * kf) as usize;
            let k = k.min(d - 1);
            let total = h.sum();
            let g = greedy_k(&h, k).unwrap();
            let e = exact_min(&h, k, 25).unwrap();
            let bound = (1.0 - (-1.0f64).exp()) * (total - e.objective);
            prop_assert!(total - g.objective >= bound - 1e-12);
        }

        #[test]
        fn positive_scaling_keeps_argmin(h in sym_matrix(2..9), c in 0.01f64..100.0) {
            let d = h.nrows();
            let k = d / 2;
            let scaled = &h * c;
            prop_assert_eq!(greedy_k(&scaled, k).unwrap().selected, greedy_k(&h, k).unwrap().selected);
            let a = exact_min(&h, k, 25).unwrap();
            let b = exact_min(&scaled, k, 25).unwrap();
            prop_assert!((b.objective - c * a.objective).abs() < 1e-9 * (1.0 + b.objective));
            prop_assert_eq!(a.kept(), b.kept());
        }

        #[test]
        fn greedy_score_is_permutation_equivariant(h in sym_matrix(2..10), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let d = h.nrows();
            let mut perm: Vec<usize> = (0..d).collect();
            perm.shuffle(&mut crate::rng::stream(seed));
            let permuted = DMatrix::from_fn(d, d, |i, j| h[(perm[i], perm[j])]);
            let a = greedy_score(&h).unwrap();
            let b = greedy_score(&permuted).unwrap();
            for (got, &src) in b.scores.iter().zip(&perm) {
                prop_assert!((got - a.scores[src]).abs() < 1e-9);
            }
        }
    }
}
