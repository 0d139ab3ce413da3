//! Empirical distribution functions, the two-sample Kolmogorov-Smirnov
//! statistic, and its projected two-dimensional variant.
//!
//! The projected statistic of a feature pair `(i, j)` averages the 1-D KS
//! statistic of `x_i cos θ + x_j sin θ` over a set of angles `θ ∈ [0, π)`.

use std::f64::consts::PI;

use rand::Rng;

use crate::data::{Dataset, Sample1D};
use crate::error::{Error, Result};
use crate::rng;

/// Fraction of sample values `<= x` (right-continuous EDF).
pub fn edf_eval(s: &Sample1D, x: f64) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::EmptySample);
    }
    if !x.is_finite() {
        return Err(Error::invalid("EDF evaluated at a non-finite point"));
    }
    let count = if s.is_sorted() {
        s.values().partition_point(|&v| v <= x)
    } else {
        s.values().iter().filter(|&&v| v <= x).count()
    };
    Ok(count as f64 / s.len() as f64)
}

/// Two-sample KS statistic `sup_x |P̂(x) - Q̂(x)|`.
pub fn ks_empirical(p: &Sample1D, q: &Sample1D) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptySample);
    }
    let ps;
    let p = if p.is_sorted() {
        p.values()
    } else {
        ps = sorted_copy(p.values());
        &ps
    };
    let qs;
    let q = if q.is_sorted() {
        q.values()
    } else {
        qs = sorted_copy(q.values());
        &qs
    };
    Ok(ks_sorted(p, q))
}

fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    out.sort_unstable_by(f64::total_cmp);
    out
}

/// Merge scan over two ascending, nonempty slices.
///
/// At each distinct value both cursors move past every element equal to it,
/// so the gap is evaluated exactly at the jump points of the pooled sample.
/// The scan runs until both slices are exhausted.
pub fn ks_sorted(p: &[f64], q: &[f64]) -> f64 {
    debug_assert!(!p.is_empty() && !q.is_empty());
    let (n, m) = (p.len(), q.len());
    let (nf, mf) = (n as f64, m as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut h = 0.0f64;
    while i < n || j < m {
        let x = match (p.get(i), q.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < n && p[i] <= x {
            i += 1;
        }
        while j < m && q[j] <= x {
            j += 1;
        }
        let gap = (i as f64 / nf - j as f64 / mf).abs();
        if gap > h {
            h = gap;
        }
    }
    h
}

/// Projection angles for the sliced statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionAngleSet {
    angles: Vec<f64>,
    seed: u64,
    pair: Option<(usize, usize)>,
}

impl ProjectionAngleSet {
    /// Draws `count` angles uniformly from `[0, π)` using a stream keyed by
    /// `seed` (and by the pair, when given).
    pub fn generate(seed: u64, pair: Option<(usize, usize)>, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("need at least one projection angle"));
        }
        let key = match pair {
            Some((i, j)) => rng::derive_seed(seed, &[rng::tag::PAIR_ANGLES, i as u64, j as u64]),
            None => rng::derive_seed(seed, &[rng::tag::SHARED_ANGLES]),
        };
        let mut stream = rng::stream(key);
        let angles = (0..count)
            .map(|_| {
                let u: f64 = stream.random();
                // u < 1 so u * π < π except for rounding at the very top
                (u * PI).min(PI.next_down())
            })
            .collect();
        Ok(Self { angles, seed, pair })
    }

    /// Wraps explicit angles; each must lie in `[0, π)`.
    pub fn from_angles(angles: Vec<f64>) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::invalid("need at least one projection angle"));
        }
        if let Some(a) = angles.iter().find(|a| !(0.0..PI).contains(*a)) {
            return Err(Error::invalid(format!("angle {a} outside [0, π)")));
        }
        Ok(Self {
            angles,
            seed: 0,
            pair: None,
        })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pair(&self) -> Option<(usize, usize)> {
        self.pair
    }
}

fn check_pair(ds: &Dataset, i: usize, j: usize) -> Result<()> {
    if i == j {
        return Err(Error::SameFeature);
    }
    for idx in [i, j] {
        if idx >= ds.cols() {
            return Err(Error::IndexOutOfRange {
                index: idx,
                dim: ds.cols(),
            });
        }
    }
    Ok(())
}

/// `x_i cos θ + x_j sin θ` for every row.
pub fn project_pair(ds: &Dataset, i: usize, j: usize, theta: f64) -> Result<Sample1D> {
    check_pair(ds, i, j)?;
    if !(0.0..PI).contains(&theta) {
        return Err(Error::invalid(format!("angle {theta} outside [0, π)")));
    }
    let mut out = Vec::with_capacity(ds.rows());
    project_into(ds.column(i)?, ds.column(j)?, theta, &mut out);
    Sample1D::new(out)
}

fn project_into(xi: &[f64], xj: &[f64], theta: f64, out: &mut Vec<f64>) {
    let (s, c) = theta.sin_cos();
    out.clear();
    out.extend(xi.iter().zip(xj).map(|(a, b)| a * c + b * s));
}

/// Reusable buffers for repeated projected-KS evaluations.
#[derive(Debug, Default)]
pub struct ProjectionScratch {
    p: Vec<f64>,
    q: Vec<f64>,
}

impl ProjectionScratch {
    /// KS statistic between the θ-projections of the given column pairs.
    pub fn ks_at(&mut self, p: (&[f64], &[f64]), q: (&[f64], &[f64]), theta: f64) -> f64 {
        project_into(p.0, p.1, theta, &mut self.p);
        project_into(q.0, q.1, theta, &mut self.q);
        self.p.sort_unstable_by(f64::total_cmp);
        self.q.sort_unstable_by(f64::total_cmp);
        ks_sorted(&self.p, &self.q)
    }
}

/// KS statistic of the pair `(i, j)` at each angle, in angle order.
pub fn projected_ks_profile(p: &Dataset, q: &Dataset, i: usize, j: usize, angles: &[f64]) -> Result<Vec<f64>> {
    check_pair(p, i, j)?;
    check_pair(q, i, j)?;
    let (pi, pj) = (p.column(i)?, p.column(j)?);
    let (qi, qj) = (q.column(i)?, q.column(j)?);
    let mut scratch = ProjectionScratch::default();
    Ok(angles.iter().map(|&t| scratch.ks_at((pi, pj), (qi, qj), t)).collect())
}

/// Sampled projected KS distance: the mean over `angles` of the 1-D KS
/// statistic between the projected columns of `p` and `q`.
pub fn projected_ks(p: &Dataset, q: &Dataset, i: usize, j: usize, angles: &ProjectionAngleSet) -> Result<f64> {
    let profile = projected_ks_profile(p, q, i, j, angles.angles())?;
    Ok(profile.iter().sum::<f64>() / profile.len() as f64)
}
