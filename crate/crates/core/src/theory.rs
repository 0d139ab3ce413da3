//! Executable checks of the consistency theory: identifiability conditions,
//! recovery under bounded perturbation, the sample-size calculator, the
//! Hoeffding bound on the angle average, and the Gaussian KL lower bound.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ks::{ks_sorted, projected_ks, ProjectionAngleSet, ProjectionScratch};
use crate::rng::{self, tag};
use crate::solvers::{eta_margin, exact_min, validate_weights, DEFAULT_EXACT_LIMIT};

/// Default positivity threshold for analytic matrices.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub s_star: Vec<usize>,
    /// Size of the kept set, `D - |S*|`.
    pub k: usize,
    /// Brute-forced margin; `None` when not requested.
    pub eta: Option<f64>,
    /// (N1) `H_dd > τ` per `d ∈ S*`. Identical to (S1).
    pub n1: Vec<bool>,
    /// (N2) some off-diagonal `H_dd' > τ`.
    pub n2: Vec<bool>,
    pub s1: Vec<bool>,
    /// (S2) every off-diagonal `H_dd' > τ`.
    pub s2: Vec<bool>,
    pub tolerance: f64,
    /// `H` vanishes outside the rows and columns of `S*`.
    pub structured: bool,
}

impl ConsistencyReport {
    pub fn necessary_holds(&self) -> bool {
        self.n1.iter().zip(&self.n2).all(|(a, b)| *a || *b)
    }

    pub fn sufficient_holds(&self) -> bool {
        self.s1.iter().zip(&self.s2).all(|(a, b)| *a || *b)
    }
}

fn changed_mask(s_star: &[usize], dim: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; dim];
    for &s in s_star {
        if s >= dim {
            return Err(Error::IndexOutOfRange { index: s, dim });
        }
        if mask[s] {
            return Err(Error::invalid(format!("feature {s} listed twice in S*")));
        }
        mask[s] = true;
    }
    if s_star.is_empty() {
        return Err(Error::invalid("S* is empty"));
    }
    Ok(mask)
}

/// Evaluates the conditions per `d ∈ S*` and the margin η by brute force
/// (D must not exceed the exact-solver limit).
pub fn check_conditions(h: &DMatrix<f64>, s_star: &[usize], tol: f64) -> Result<ConsistencyReport> {
    check_conditions_with(h, s_star, tol, Some(DEFAULT_EXACT_LIMIT))
}

/// As [`check_conditions`]; `eta_limit = None` skips η.
pub fn check_conditions_with(
    h: &DMatrix<f64>,
    s_star: &[usize],
    tol: f64,
    eta_limit: Option<usize>,
) -> Result<ConsistencyReport> {
    validate_weights(h)?;
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::invalid(format!("tolerance must be nonnegative, got {tol}")));
    }
    let dim = h.nrows();
    let mask = changed_mask(s_star, dim)?;
    let mut s_star = s_star.to_vec();
    s_star.sort_unstable();
    let k = dim - s_star.len();

    let (mut n1, mut n2, mut s2) = (Vec::new(), Vec::new(), Vec::new());
    for &d in &s_star {
        let off = (0..dim).filter(|&e| e != d).map(|e| h[(d, e)] > tol);
        n1.push(h[(d, d)] > tol);
        n2.push(off.clone().any(|x| x));
        s2.push(dim > 1 && off.clone().all(|x| x));
    }
    let structured = (0..dim).all(|i| (0..dim).all(|j| mask[i] || mask[j] || h[(i, j)] == 0.0));
    let eta = match eta_limit {
        Some(limit) if k > 0 => Some(eta_margin(h, &s_star, k, limit)?),
        _ => None,
    };
    Ok(ConsistencyReport {
        s_star,
        k,
        eta,
        s1: n1.clone(),
        n1,
        n2,
        s2,
        tolerance: tol,
        structured,
    })
}

pub const OMITTED_TERM: &str = "distribution-dependent C term omitted";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBound {
    pub n_required: u64,
    pub l_required: u64,
    pub k: usize,
    pub eta: f64,
    pub dim: usize,
    pub epsilon: f64,
    pub note: &'static str,
}

/// Closed-form sample sizes `N ≥ 8k⁴/η² ln(12D/ε)` and
/// `L ≥ 8k⁴/η² ln(3D(D−1)/ε)`, ceilinged and at least 1.
pub fn sample_bound(k: usize, eta: f64, dim: usize, epsilon: f64) -> Result<SampleBound> {
    if eta.is_nan() || eta <= 0.0 {
        return Err(Error::NotIdentifiable(eta));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if k == 0 || dim == 0 {
        return Err(Error::invalid("k and D must be positive"));
    }
    let d = dim as f64;
    let lead = 8.0 * (k as f64).powi(4) / (eta * eta);
    let ceil = |x: f64| x.ceil().max(1.0) as u64;
    let n_required = ceil(lead * (12.0 * d / epsilon).ln());
    let l_required = if dim == 1 {
        1
    } else {
        ceil(lead * (3.0 * d * (d - 1.0) / epsilon).ln())
    };
    Ok(SampleBound {
        n_required,
        l_required,
        k,
        eta,
        dim,
        epsilon,
        note: OMITTED_TERM,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryOutcome {
    pub rate: f64,
    pub successes: usize,
    pub trials: usize,
    pub eta: f64,
    /// `η / (2k²)`.
    pub radius: f64,
    /// Whether the magnitude was inside the guaranteed radius.
    pub within_guarantee: bool,
}

/// Perturbs `H` by symmetric noise uniform on `[-magnitude, magnitude]`
/// (clamped so entries stay nonnegative), solves exactly, and reports how
/// often `S*ᶜ` comes back.
pub fn recovery_trial(
    h: &DMatrix<f64>,
    s_star: &[usize],
    k: usize,
    magnitude: f64,
    trials: usize,
    seed: u64,
) -> Result<RecoveryOutcome> {
    let dim = h.nrows();
    let eta = eta_margin(h, s_star, k, DEFAULT_EXACT_LIMIT)?;
    if eta.is_nan() || eta <= 0.0 {
        return Err(Error::NotIdentifiable(eta));
    }
    if magnitude.is_nan() || magnitude < 0.0 || trials == 0 {
        return Err(Error::invalid("magnitude must be nonnegative and trials positive"));
    }
    let radius = eta / (2.0 * (k * k) as f64);
    let mask = changed_mask(s_star, dim)?;
    let reference: Vec<usize> = (0..dim).filter(|&d| !mask[d]).collect();
    let successes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(rng::derive_seed(seed, &[tag::TRIAL, t as u64]));
            let mut noisy = h.clone();
            for i in 0..dim {
                for j in i..dim {
                    let e = if magnitude > 0.0 {
                        rng.random_range(-magnitude..=magnitude)
                    } else {
                        0.0
                    };
                    let v = (h[(i, j)] + e).max(0.0);
                    noisy[(i, j)] = v;
                    noisy[(j, i)] = v;
                }
            }
            exact_min(&noisy, k, DEFAULT_EXACT_LIMIT).map(|r| r.kept() == reference)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&ok| ok)
        .count();
    Ok(RecoveryOutcome {
        rate: successes as f64 / trials as f64,
        successes,
        trials,
        eta,
        radius,
        within_guarantee: magnitude <= radius,
    })
}

/// Exact angle average `E_θ KS(p_θ, q_θ)` for θ uniform on `[0, π)`.
///
/// The projected order of the pooled sample only changes at angles where two
/// points project equally, so the KS profile is piecewise constant between
/// those critical angles. O(n² log n) breakpoints; meant for small samples.
pub fn projected_ks_expectation(p: &Dataset, q: &Dataset, i: usize, j: usize) -> Result<f64> {
    p.check_compatible(q)?;
    if i == j {
        return Err(Error::SameFeature);
    }
    let (pi, pj, qi, qj) = (p.column(i)?, p.column(j)?, q.column(i)?, q.column(j)?);
    let xs: Vec<f64> = pi.iter().chain(qi).copied().collect();
    let ys: Vec<f64> = pj.iter().chain(qj).copied().collect();
    let mut cuts = vec![0.0, PI];
    for a in 0..xs.len() {
        for b in (a + 1)..xs.len() {
            let (dx, dy) = (xs[a] - xs[b], ys[a] - ys[b]);
            if dx == 0.0 && dy == 0.0 {
                continue;
            }
            // dx cos θ + dy sin θ = 0
            let t = (-dx).atan2(dy).rem_euclid(PI);
            cuts.push(t);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut scratch = ProjectionScratch::default();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let width = w[1] - w[0];
        if width > 0.0 {
            total += width * scratch.ks_at((pi, pj), (qi, qj), 0.5 * (w[0] + w[1]));
        }
    }
    Ok(total / PI)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoeffdingCheck {
    pub exceedances: usize,
    pub sets: usize,
    pub rate: f64,
    /// `2 exp(-2 δ² L)`.
    pub bound: f64,
}

/// Draws `sets` independent angle sets of size `l` and counts how often the
/// angle average deviates from the exact expectation by more than `delta`.
pub fn hoeffding_check(
    p: &Dataset,
    q: &Dataset,
    (i, j): (usize, usize),
    l: usize,
    delta: f64,
    sets: usize,
    seed: u64,
) -> Result<HoeffdingCheck> {
    let exact = projected_ks_expectation(p, q, i, j)?;
    let exceedances = (0..sets)
        .into_par_iter()
        .map(|s| {
            let angles =
                ProjectionAngleSet::generate(rng::derive_seed(seed, &[tag::TRIAL, s as u64]), Some((i, j)), l)?;
            Ok(((projected_ks(p, q, i, j, &angles)? - exact).abs() > delta) as usize)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(HoeffdingCheck {
        exceedances,
        sets,
        rate: exceedances as f64 / sets as f64,
        bound: 2.0 * (-2.0 * delta * delta * l as f64).exp(),
    })
}

/// DKW check on one sample: how often the EDF of `n` uniform draws deviates
/// from the true CDF by more than `delta` (bound `2 exp(-2 δ² N)`).
pub fn dkw_check(n: usize, delta: f64, trials: usize, seed: u64) -> Result<HoeffdingCheck> {
    if n == 0 || trials == 0 {
        return Err(Error::invalid("n and trials must be positive"));
    }
    let exceedances = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(rng::derive_seed(seed, &[tag::TRIAL, t as u64]));
            let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            u.sort_by(f64::total_cmp);
            let nf = n as f64;
            let dev = u
                .iter()
                .enumerate()
                .map(|(r, &x)| ((r + 1) as f64 / nf - x).max(x - r as f64 / nf))
                .fold(0.0, f64::max);
            (dev > delta) as usize
        })
        .sum();
    Ok(HoeffdingCheck {
        exceedances,
        sets: trials,
        rate: exceedances as f64 / trials as f64,
        bound: 2.0 * (-2.0 * delta * delta * n as f64).exp(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlCheck {
    pub kl: f64,
    pub bound: f64,
    pub holds: bool,
}

fn check_correlation(r: f64) -> Result<()> {
    if r.is_nan() || r.abs() >= 1.0 {
        return Err(Error::invalid(format!(
            "correlation {r} is not inside (-1, 1); covariance is singular"
        )));
    }
    Ok(())
}

/// KL between standardized bivariate Gaussians with correlations `sigma`
/// (first argument) and `gamma`, in the cancellation-free form
/// `½{(σ−γ)²/(1−γ²) + u − ln(1+u)}`, `u = (γ²−σ²)/(1−γ²)`.
pub fn kl_bivariate(sigma: f64, gamma: f64) -> Result<f64> {
    check_correlation(sigma)?;
    check_correlation(gamma)?;
    let denom = 1.0 - gamma * gamma;
    let u = (gamma * gamma - sigma * sigma) / denom;
    let diff = sigma - gamma;
    Ok(0.5 * (diff * diff / denom + (u - u.ln_1p()).max(0.0)))
}

/// Checks `KL ≥ ½|σ−γ| − 1/8`.
pub fn kl_lower_bound_check(sigma: f64, gamma: f64) -> Result<KlCheck> {
    let kl = kl_bivariate(sigma, gamma)?;
    let bound = 0.5 * (sigma - gamma).abs() - 0.125;
    Ok(KlCheck {
        kl,
        bound,
        holds: kl >= bound,
    })
}

/// The 99-point correlation grid −0.98, −0.96, …, 0.98.
pub fn correlation_grid() -> Vec<f64> {
    (0..99).map(|i| -0.98 + 0.02 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlGridReport {
    pub points: usize,
    pub violations: usize,
    pub negative_kl: usize,
    /// Smallest `kl - bound` on the grid.
    pub min_slack: f64,
}

pub fn kl_grid_check() -> Result<KlGridReport> {
    let grid = correlation_grid();
    let mut report = KlGridReport {
        points: 0,
        violations: 0,
        negative_kl: 0,
        min_slack: f64::INFINITY,
    };
    for &s in &grid {
        for &g in &grid {
            let c = kl_lower_bound_check(s, g)?;
            report.points += 1;
            report.violations += (!c.holds) as usize;
            report.negative_kl += (c.kl < 0.0) as usize;
            report.min_slack = report.min_slack.min(c.kl - c.bound);
        }
    }
    Ok(report)
}

/// Fraction of `reps` generated instances where the exact minimizer over
/// `Ĥ` (with `k = D - |S*|`) differs from `S*`.
pub fn misspecification_rate<G>(generate: G, projections: usize, reps: usize, seed: u64) -> Result<f64>
where
    G: Fn(u64) -> Result<(Dataset, Dataset, Vec<usize>)> + Sync,
{
    if reps == 0 {
        return Err(Error::invalid("reps must be positive"));
    }
    let misses = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = rng::derive_seed(seed, &[tag::REPETITION, r as u64]);
            let (p, q, mut s_star) = generate(rep_seed)?;
            let m = crate::matrix::build_ks_matrix(&p, &q, projections, rng::derive_seed(rep_seed, &[tag::METHOD]))?;
            let k = m.dim() - s_star.len();
            let found = exact_min(m.entries(), k, DEFAULT_EXACT_LIMIT)?.selected;
            s_star.sort_unstable();
            Ok((found != s_star) as usize)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(misses as f64 / reps as f64)
}

/// 1-D KS of column `i` between two datasets.
pub fn column_ks(p: &Dataset, q: &Dataset, i: usize) -> Result<f64> {
    let mut a = p.column(i)?.to_vec();
    let mut b = q.column(i)?.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(ks_sorted(&a, &b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows.len(), rows.len(), &rows.concat())
    }

    #[test]
    fn identity_margin_is_zero() {
        // Every size-(D−1) kept set of I sums to D−1, so S* = {0} is not
        // uniquely identifiable even though (S1) holds.
        let r = check_conditions(&DMatrix::identity(4, 4), &[0], DEFAULT_TOLERANCE).unwrap();
        assert_eq!(r.s1, vec![true]);
        assert_eq!(r.eta, Some(0.0));
        assert!(!r.structured);
    }

    #[test]
    fn structured_identity_margin() {
        let mut h = DMatrix::zeros(4, 4);
        h[(0, 0)] = 1.0;
        let r = check_conditions(&h, &[0], DEFAULT_TOLERANCE).unwrap();
        assert!(r.structured && r.sufficient_holds());
        assert_eq!(r.eta, Some(1.0));
    }

    #[test]
    fn zero_matrix_holds_nothing() {
        let r = check_conditions(&DMatrix::zeros(3, 3), &[1], DEFAULT_TOLERANCE).unwrap();
        assert_eq!((r.n1[0], r.n2[0], r.s2[0]), (false, false, false));
        assert!(!r.necessary_holds());
        assert_eq!(r.eta, Some(0.0));
    }

    #[test]
    fn diag_margin_example() {
        let h = m(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        let r = check_conditions(&h, &[2], DEFAULT_TOLERANCE).unwrap();
        assert_eq!(r.k, 2);
        assert_eq!(r.eta, Some(1.0));
    }

    #[test]
    fn s2_requires_every_pair() {
        let h = m(&[&[0.0, 0.5, 0.5], &[0.5, 0.0, 0.0], &[0.5, 0.0, 0.0]]);
        let r = check_conditions(&h, &[0], DEFAULT_TOLERANCE).unwrap();
        assert_eq!((r.n1[0], r.n2[0], r.s2[0]), (false, true, true));
        assert!(r.eta.unwrap() > 0.0);
        let h = m(&[&[0.0, 0.5, 0.0], &[0.5, 0.0, 0.0], &[0.0, 0.0, 0.0]]);
        let r = check_conditions(&h, &[0], 0.0).unwrap();
        assert_eq!((r.n2[0], r.s2[0]), (true, false));
        assert!(r.necessary_holds() && !r.sufficient_holds());
        // Tolerance hides small entries.
        let r = check_conditions(&h, &[0], 0.6).unwrap();
        assert!(!r.necessary_holds());
    }

    #[test]
    fn check_rejects_bad_input() {
        let h = DMatrix::identity(3, 3);
        assert!(check_conditions(&h, &[3], 0.0).is_err());
        assert!(check_conditions(&h, &[], 0.0).is_err());
        assert!(check_conditions(&h, &[0], -1.0).is_err());
        let big = DMatrix::identity(30, 30);
        assert!(check_conditions(&big, &[0], 0.0).unwrap_err().is_limit());
        assert!(check_conditions_with(&big, &[0], 0.0, None).unwrap().eta.is_none());
    }

    #[test]
    fn sample_bound_example() {
        let b = sample_bound(1, 0.5, 20, 0.05).unwrap();
        assert_eq!(b.n_required, (32.0 * 4800f64.ln()).ceil() as u64);
        assert_eq!(b.n_required, 272);
        assert_eq!(b.l_required, (32.0 * 22800f64.ln()).ceil() as u64);
        assert!(matches!(sample_bound(1, 0.0, 20, 0.05), Err(Error::NotIdentifiable(_))));
        assert!(sample_bound(1, 0.5, 20, 1.0).is_err());
        assert_eq!(sample_bound(1, 0.5, 1, 0.5).unwrap().l_required, 1);
    }

    #[test]
    fn sample_bound_monotone() {
        let mut last = u64::MAX;
        for eta in [0.1, 0.2, 0.5, 1.0, 2.0] {
            let n = sample_bound(2, eta, 10, 0.1).unwrap().n_required;
            assert!(n <= last);
            last = n;
        }
        // Doubling D adds 8k⁴/η² ln 2 before ceiling.
        let a = sample_bound(1, 0.5, 20, 0.05).unwrap().n_required as f64;
        let b = sample_bound(1, 0.5, 40, 0.05).unwrap().n_required as f64;
        assert!((b - a - 32.0 * 2f64.ln()).abs() <= 1.0);
    }

    #[test]
    fn recovery_without_noise() {
        let mut h = DMatrix::zeros(5, 5);
        h[(1, 1)] = 0.8;
        h[(1, 3)] = 0.3;
        h[(3, 1)] = 0.3;
        let out = recovery_trial(&h, &[1], 4, 0.0, 5, 1).unwrap();
        assert_eq!(out.rate, 1.0);
        let out = recovery_trial(&h, &[1], 4, out.radius, 100, 2).unwrap();
        assert_eq!(out.rate, 1.0);
        assert!(out.within_guarantee);
    }

    #[test]
    fn recovery_fails_far_outside_radius() {
        // Two near-equal candidates: a large perturbation swaps the optimum.
        let h = m(&[&[0.0, 0.0, 0.0], &[0.0, 0.1, 0.0], &[0.0, 0.0, 0.11]]);
        let out = recovery_trial(&h, &[2], 2, 0.0, 1, 0).unwrap();
        assert_eq!(out.rate, 1.0);
        let far = recovery_trial(&h, &[2], 2, 10.0 * out.eta, 200, 3).unwrap();
        assert!(!far.within_guarantee);
        assert!(far.rate < 1.0);
    }

    #[test]
    fn kl_examples() {
        let c = kl_lower_bound_check(0.4, 0.4).unwrap();
        assert_eq!(c.kl, 0.0);
        assert_eq!(c.bound, -0.125);
        assert!(c.holds);
        assert!(kl_lower_bound_check(0.5, 0.3).unwrap().holds);
        assert!(kl_bivariate(1.0, 0.0).is_err());
        assert!(kl_bivariate(0.0, -1.2).is_err());
    }

    /// The textbook closed form, evaluated as printed.
    fn kl_printed(s: f64, g: f64) -> f64 {
        0.5 * ((2.0 - 2.0 * s * g) / (1.0 - g * g) - ((1.0 - s * s) / (1.0 - g * g)).ln() - 2.0)
    }

    #[test]
    fn kl_forms_agree_on_grid() {
        let grid = correlation_grid();
        assert_eq!(grid.len(), 99);
        for &s in &grid {
            for &g in &grid {
                let a = kl_bivariate(s, g).unwrap();
                assert!((a - kl_printed(s, g)).abs() < 1e-12, "{s} {g}");
            }
        }
        let r = kl_grid_check().unwrap();
        assert_eq!((r.points, r.violations, r.negative_kl), (99 * 99, 0, 0));
    }

    #[test]
    fn expectation_matches_dense_average() {
        let p = Dataset::from_rows(
            Dataset::default_names(2),
            &[vec![0.0, 1.0], vec![1.0, 0.5], vec![-0.5, 2.0]],
        )
        .unwrap();
        let q = Dataset::from_rows(Dataset::default_names(2), &[vec![0.3, -1.0], vec![2.0, 0.0]]).unwrap();
        let exact = projected_ks_expectation(&p, &q, 0, 1).unwrap();
        let n = 200_000;
        let mut scratch = ProjectionScratch::default();
        let (pi, pj, qi, qj) = (
            p.column(0).unwrap(),
            p.column(1).unwrap(),
            q.column(0).unwrap(),
            q.column(1).unwrap(),
        );
        let dense: f64 = (0..n)
            .map(|t| scratch.ks_at((pi, pj), (qi, qj), (t as f64 + 0.5) * PI / n as f64))
            .sum::<f64>()
            / n as f64;
        assert!((exact - dense).abs() < 1e-3, "{exact} {dense}");
    }

    #[test]
    fn dkw_rate_below_bound() {
        let r = dkw_check(50, 0.2, 2000, 3).unwrap();
        assert!(r.rate <= r.bound + 0.01, "{r:?}");
    }
}
