//! Gaussian baseline scorers: a combinatorial Mahalanobis-Taguchi variant
//! (`mt`), a partitioned-precision conditional score (`ide09`), and an
//! absolute covariance or precision difference matrix (`hara15`).
//!
//! All three rely on ridge-regularized precision matrices `(Σ + κI)⁻¹` with
//! κ chosen by three-fold cross-validation on held-out Gaussian likelihood.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::solvers::{greedy_score, greedy_score_objective, SetObjective, SolverResult};

/// Ridge grid: 11 log-spaced values from 1e-4 to 1e1.
pub fn kappa_grid() -> Vec<f64> {
    (0..11).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

pub const CV_FOLDS: usize = 3;

pub fn mean_vector(ds: &Dataset) -> DVector<f64> {
    let n = ds.rows() as f64;
    DVector::from_iterator(ds.cols(), ds.columns().iter().map(|c| c.iter().sum::<f64>() / n))
}

/// Maximum-likelihood (1/N) covariance, exactly symmetric.
pub fn covariance(ds: &Dataset) -> DMatrix<f64> {
    scatter_about(ds, &mean_vector(ds), None)
}

/// `1/|rows| Σ (x - center)(x - center)ᵀ` over the given rows (all rows when
/// `rows` is `None`).
fn scatter_about(ds: &Dataset, center: &DVector<f64>, rows: Option<&[usize]>) -> DMatrix<f64> {
    let d = ds.cols();
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..ds.rows()).collect();
            &all
        }
    };
    let n = rows.len() as f64;
    let cols = ds.columns();
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let s: f64 = rows
                .iter()
                .map(|&r| (cols[i][r] - center[i]) * (cols[j][r] - center[j]))
                .sum();
            out[(i, j)] = s / n;
            out[(j, i)] = s / n;
        }
    }
    out
}

fn ridge(cov: &DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
    cov + DMatrix::identity(cov.nrows(), cov.ncols()) * kappa
}

fn cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let d = m.nrows();
    Cholesky::new(m).ok_or_else(|| Error::Singular((0..d).collect()))
}

/// Symmetrized inverse via Cholesky.
fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = cholesky(m.clone())?.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Mean held-out Gaussian log-likelihood of `test` rows under
/// N(mean_train, Σ_train + κI), without the constant term.
fn heldout_loglik(ds: &Dataset, train: &[usize], test: &[usize], kappa: f64) -> Result<f64> {
    let d = ds.cols();
    let cols = ds.columns();
    let n = train.len() as f64;
    let mean = DVector::from_iterator(d, cols.iter().map(|c| train.iter().map(|&r| c[r]).sum::<f64>() / n));
    let chol = cholesky(ridge(&scatter_about(ds, &mean, Some(train)), kappa))?;
    let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let mut quad = 0.0;
    for &r in test {
        let x = DVector::from_iterator(d, cols.iter().zip(mean.iter()).map(|(c, m)| c[r] - m));
        quad += x.dot(&chol.solve(&x));
    }
    Ok(-0.5 * logdet - 0.5 * quad / test.len() as f64)
}

/// Ridge precision `(Σ̂ + κI)⁻¹` with κ picked from [`kappa_grid`] by
/// three-fold CV. Rows are shuffled with `fold_seed`, then cut into
/// contiguous folds. Ties go to the smaller κ.
pub fn estimate_precision_cv(ds: &Dataset, fold_seed: u64) -> Result<(DMatrix<f64>, f64)> {
    let n = ds.rows();
    if n < CV_FOLDS {
        return Err(Error::invalid(format!(
            "cross-validation needs at least {CV_FOLDS} rows, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(rng::derive_seed(fold_seed, &[rng::tag::FOLDS])));
    let bounds: Vec<usize> = (0..=CV_FOLDS).map(|f| f * n / CV_FOLDS).collect();

    let mut best: Option<(f64, f64)> = None;
    for kappa in kappa_grid() {
        let mut total = 0.0;
        for f in 0..CV_FOLDS {
            let test = &order[bounds[f]..bounds[f + 1]];
            let train: Vec<usize> = order[..bounds[f]]
                .iter()
                .chain(&order[bounds[f + 1]..])
                .copied()
                .collect();
            total += heldout_loglik(ds, &train, test, kappa)?;
        }
        let score = total / CV_FOLDS as f64;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((kappa, score));
        }
    }
    let (kappa, _) = best.expect("grid is nonempty");
    Ok((spd_inverse(&ridge(&covariance(ds), kappa))?, kappa))
}

/// Per-dataset Gaussian summaries shared by the baselines.
#[derive(Debug, Clone)]
pub struct GaussianSummaries {
    pub mean_p: DVector<f64>,
    pub mean_q: DVector<f64>,
    pub cov_p: DMatrix<f64>,
    pub cov_q: DMatrix<f64>,
    pub prec_p: DMatrix<f64>,
    pub prec_q: DMatrix<f64>,
    pub kappa_p: f64,
    pub kappa_q: f64,
}

impl GaussianSummaries {
    pub fn estimate(p: &Dataset, q: &Dataset, fold_seed: u64) -> Result<Self> {
        p.check_compatible(q)?;
        let (prec_p, kappa_p) = estimate_precision_cv(p, fold_seed)?;
        let (prec_q, kappa_q) = estimate_precision_cv(q, fold_seed)?;
        Ok(Self {
            mean_p: mean_vector(p),
            mean_q: mean_vector(q),
            cov_p: covariance(p),
            cov_q: covariance(q),
            prec_p,
            prec_q,
            kappa_p,
            kappa_q,
        })
    }
}

fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// MT objective on the kept set: `| |Sᶜ| - tr(Γ_Sᶜ C_Sᶜ⁻¹) |`.
pub struct MtObjective {
    gamma: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl MtObjective {
    pub fn new(gamma: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        if gamma.shape() != c.shape() || !gamma.is_square() {
            return Err(Error::invalid("Γ and C must be square and of equal size"));
        }
        Ok(Self { gamma, c })
    }
}

impl SetObjective for MtObjective {
    fn dim(&self) -> usize {
        self.c.nrows()
    }

    fn eval(&self, kept: &[usize]) -> Result<f64> {
        if kept.is_empty() {
            return Ok(0.0);
        }
        let c_sub = submatrix(&self.c, kept);
        let g_sub = submatrix(&self.gamma, kept);
        let chol = match Cholesky::new(c_sub.clone()) {
            Some(ch) => ch,
            None => {
                let jitter = 1e-10 * (1.0 + c_sub.trace().abs() / kept.len() as f64);
                Cholesky::new(ridge(&c_sub, jitter)).ok_or_else(|| Error::Singular(kept.to_vec()))?
            }
        };
        let trace = chol.solve(&g_sub).trace();
        Ok((kept.len() as f64 - trace).abs())
    }
}

/// Scores from greedy scoring of the MT objective, with `Γ` the scatter of Q
/// about P's mean and `C = Λ_P⁻¹`. Scores are reported unclamped.
pub fn mt_score(p: &Dataset, q: &Dataset, fold_seed: u64) -> Result<Vec<f64>> {
    p.check_compatible(q)?;
    let (_, kappa) = estimate_precision_cv(p, fold_seed)?;
    let gamma = scatter_about(q, &mean_vector(p), None);
    let c = ridge(&covariance(p), kappa);
    Ok(mt_score_from(gamma, c)?.scores)
}

pub fn mt_score_from(gamma: DMatrix<f64>, c: DMatrix<f64>) -> Result<SolverResult> {
    greedy_score_objective(&MtObjective::new(gamma, c)?)
}

/// Partition of a symmetric matrix with feature `d` moved last:
/// (block without d, column to d, diagonal entry at d).
fn partition(m: &DMatrix<f64>, d: usize) -> (DMatrix<f64>, DVector<f64>, f64) {
    let rest: Vec<usize> = (0..m.nrows()).filter(|&i| i != d).collect();
    let block = submatrix(m, &rest);
    let col = DVector::from_iterator(rest.len(), rest.iter().map(|&i| m[(i, d)]));
    (block, col, m[(d, d)])
}

fn ide_direction(prec_a: &DMatrix<f64>, cov_a: &DMatrix<f64>, prec_b: &DMatrix<f64>, d: usize) -> f64 {
    let (_, ell_a, lambda_a) = partition(prec_a, d);
    let (w_mat, w_vec, sigma_a) = partition(cov_a, d);
    let (_, ell_b, lambda_b) = partition(prec_b, d);
    let linear = w_vec.dot(&(&ell_b - &ell_a));
    let quad = 0.5 * (ell_b.dot(&(&w_mat * &ell_b)) / lambda_b - ell_a.dot(&(&w_mat * &ell_a)) / lambda_a);
    let log_term = 0.5 * ((lambda_a / lambda_b).ln() + sigma_a * (lambda_a - lambda_b));
    linear + quad + log_term
}

/// Idé'09 scores from two precision matrices; the covariances are their
/// exact inverses.
pub fn ide09_from_precisions(prec_p: &DMatrix<f64>, prec_q: &DMatrix<f64>) -> Result<Vec<f64>> {
    if prec_p.shape() != prec_q.shape() || !prec_p.is_square() {
        return Err(Error::invalid("precision matrices must be square and of equal size"));
    }
    let dim = prec_p.nrows();
    if dim < 2 {
        return Err(Error::invalid("Idé'09 needs at least two features"));
    }
    let cov_p = spd_inverse(prec_p)?;
    let cov_q = spd_inverse(prec_q)?;
    Ok((0..dim)
        .map(|d| {
            let pq = ide_direction(prec_p, &cov_p, prec_q, d);
            let qp = ide_direction(prec_q, &cov_q, prec_p, d);
            pq.max(qp)
        })
        .collect())
}

pub fn ide09_score(p: &Dataset, q: &Dataset, fold_seed: u64) -> Result<Vec<f64>> {
    p.check_compatible(q)?;
    let (prec_p, _) = estimate_precision_cv(p, fold_seed)?;
    let (prec_q, _) = estimate_precision_cv(q, fold_seed)?;
    ide09_from_precisions(&prec_p, &prec_q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HaraMode {
    #[default]
    Covariance,
    Precision,
}

/// Element-wise absolute difference of two symmetric matrices.
pub fn abs_difference(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    DMatrix::from_fn(d, d, |i, j| {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        (a[(r, c)] - b[(r, c)]).abs()
    })
}

pub fn hara15_matrix(p: &Dataset, q: &Dataset, mode: HaraMode, fold_seed: u64) -> Result<DMatrix<f64>> {
    p.check_compatible(q)?;
    Ok(match mode {
        HaraMode::Covariance => abs_difference(&covariance(p), &covariance(q)),
        HaraMode::Precision => {
            let (a, _) = estimate_precision_cv(p, fold_seed)?;
            let (b, _) = estimate_precision_cv(q, fold_seed)?;
            abs_difference(&a, &b)
        }
    })
}

pub fn hara15_score(p: &Dataset, q: &Dataset, mode: HaraMode, fold_seed: u64) -> Result<Vec<f64>> {
    Ok(greedy_score(&hara15_matrix(p, q, mode, fold_seed)?)?.scores)
}
