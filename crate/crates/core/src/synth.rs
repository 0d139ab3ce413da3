//! Seeded synthetic generators and perturbation injectors.
//!
//! Example 1 is a 20-dimensional Gaussian pair whose covariance differs only
//! in the row and column of the first feature. Example 2 keeps the Gaussian
//! latent structure but swaps the first feature for a mixture with different
//! component rates under P and Q. Feature indices here are zero-based, so the
//! changed feature is index 0 (named `x1`).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag, StreamRng};

pub const EXAMPLE_DIM: usize = 20;
pub const EXAMPLE1_RETRY_CAP: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    s_star: Vec<usize>,
}

impl GroundTruth {
    /// Sorted, duplicate-free, nonempty and within `0..dim`.
    pub fn new(mut s_star: Vec<usize>, dim: usize) -> Result<Self> {
        s_star.sort_unstable();
        s_star.dedup();
        if s_star.is_empty() {
            return Err(Error::invalid("ground truth must name at least one feature"));
        }
        if let Some(&bad) = s_star.iter().find(|&&s| s >= dim) {
            return Err(Error::IndexOutOfRange { index: bad, dim });
        }
        Ok(Self { s_star })
    }

    pub fn s_star(&self) -> &[usize] {
        &self.s_star
    }

    pub fn contains(&self, d: usize) -> bool {
        self.s_star.binary_search(&d).is_ok()
    }

    /// Membership mask of length `dim`.
    pub fn mask(&self, dim: usize) -> Vec<bool> {
        let mut m = vec![false; dim];
        for &s in &self.s_star {
            if s < dim {
                m[s] = true;
            }
        }
        m
    }
}

/// Zero-mean Gaussian sampler through a symmetric square root of the
/// covariance (eigenvalues clamped at 0).
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(cov: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(cov.clone());
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
        Self { factor }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// `n` draws, returned column-major.
    pub fn sample(&self, n: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut cols = vec![Vec::with_capacity(n); d];
        let mut z = DVector::zeros(d);
        for _ in 0..n {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let x = &self.factor * &z;
            for (c, v) in cols.iter_mut().zip(x.iter()) {
                c.push(*v);
            }
        }
        cols
    }
}

/// `Σ = ΘᵀΘ` with Θ uniform on (−1, 1), rescaled to unit diagonal.
pub fn random_correlation(dim: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let theta: DMatrix<f64> = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let raw = theta.transpose() * &theta;
    let scale: Vec<f64> = (0..dim).map(|i| raw[(i, i)].sqrt()).collect();
    DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            1.0
        } else {
            raw[(i, j)] / (scale[i] * scale[j])
        }
    })
}

/// The modified covariance of Example 1: `x1` is replaced by a mixture of
/// `x1` and `x2`, which touches only row/column 0.
pub fn example1_shift(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = sigma.clone();
    out[(0, 0)] = 0.49 * sigma[(0, 0)] + 0.09 * sigma[(1, 1)] + 0.21 * sigma[(0, 1)];
    for d in 1..sigma.nrows() {
        let v = 0.7 * sigma[(0, d)] + 0.3 * sigma[(1, d)];
        out[(0, d)] = v;
        out[(d, 0)] = v;
    }
    out
}

fn is_psd(m: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    eig.eigenvalues.min() >= -1e-12 * scale
}

/// `(Σ, Σ′)` for Example 1, redrawing Θ until Σ′ is positive semidefinite.
pub fn example1_covariances(seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut rng = rng::stream(rng::derive_seed(seed, &[tag::MIXING]));
    for _ in 0..EXAMPLE1_RETRY_CAP {
        let sigma = random_correlation(EXAMPLE_DIM, &mut rng);
        let shifted = example1_shift(&sigma);
        if is_psd(&shifted) {
            return Ok((sigma, shifted));
        }
    }
    Err(Error::Generator(format!(
        "no positive semidefinite covariance after {EXAMPLE1_RETRY_CAP} draws"
    )))
}

fn check_rows(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {n}")));
    }
    Ok(())
}

pub fn gen_example1(n: usize, seed: u64) -> Result<(Dataset, Dataset, GroundTruth)> {
    check_rows(n)?;
    let (sigma, shifted) = example1_covariances(seed)?;
    let names = Dataset::default_names(EXAMPLE_DIM);
    let p_cols = GaussianSampler::new(&sigma).sample(n, &mut rng::stream(rng::derive_seed(seed, &[tag::DRAW_P])));
    let q_cols = GaussianSampler::new(&shifted).sample(n, &mut rng::stream(rng::derive_seed(seed, &[tag::DRAW_Q])));
    Ok((
        Dataset::from_columns(names.clone(), p_cols)?,
        Dataset::from_columns(names, q_cols)?,
        GroundTruth::new(vec![0], EXAMPLE_DIM)?,
    ))
}

pub const EXAMPLE2_OFFSET: f64 = 4.0 / 3.0;
pub const EXAMPLE2_P_RATES: [f64; 3] = [0.5, 0.5, 0.0];
pub const EXAMPLE2_Q_RATES: [f64; 3] = [0.35, 0.35, 0.3];
const EXAMPLE2_OFFSETS: [f64; 3] = [EXAMPLE2_OFFSET, -EXAMPLE2_OFFSET, 0.0];

/// Mixture component indices for Example 2 (0: +4/3, 1: −4/3, 2: 0).
pub fn example2_components(seed: u64, draw_tag: u64, n: usize) -> Vec<usize> {
    let rates = if draw_tag == tag::DRAW_P {
        EXAMPLE2_P_RATES
    } else {
        EXAMPLE2_Q_RATES
    };
    let mut rng = rng::stream(rng::derive_seed(seed, &[draw_tag, tag::NOISE]));
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < rates[0] {
                0
            } else if u < rates[0] + rates[1] {
                1
            } else {
                2
            }
        })
        .collect()
}

pub fn gen_example2(n: usize, seed: u64) -> Result<(Dataset, Dataset, GroundTruth)> {
    check_rows(n)?;
    let sigma = random_correlation(EXAMPLE_DIM, &mut rng::stream(rng::derive_seed(seed, &[tag::MIXING])));
    let sampler = GaussianSampler::new(&sigma);
    let names = Dataset::default_names(EXAMPLE_DIM);
    let draw = |draw_tag: u64| -> Result<Dataset> {
        let mut cols = sampler.sample(n, &mut rng::stream(rng::derive_seed(seed, &[draw_tag])));
        let comps = example2_components(seed, draw_tag, n);
        for (x, c) in cols[0].iter_mut().zip(comps) {
            *x = *x / 3.0 + EXAMPLE2_OFFSETS[c];
        }
        Dataset::from_columns(names.clone(), cols)
    };
    Ok((
        draw(tag::DRAW_P)?,
        draw(tag::DRAW_Q)?,
        GroundTruth::new(vec![0], EXAMPLE_DIM)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    MeanShift,
    VarianceChange,
    CovChange,
    CovChangeConditional,
    CovChangeNoVar,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 5] = [
        Self::MeanShift,
        Self::VarianceChange,
        Self::CovChange,
        Self::CovChangeConditional,
        Self::CovChangeNoVar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MeanShift => "mean_shift",
            Self::VarianceChange => "variance_change",
            Self::CovChange => "cov_change",
            Self::CovChangeConditional => "cov_change_conditional",
            Self::CovChangeNoVar => "cov_change_no_var",
        }
    }

    pub fn needs_reference(self) -> bool {
        !matches!(self, Self::MeanShift | Self::VarianceChange)
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown perturbation kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub c: f64,
    pub targets: Vec<usize>,
    /// Reference feature per target; may be empty for mean and variance
    /// changes.
    #[serde(default)]
    pub references: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.c) {
            return Err(Error::invalid(format!("c = {} outside [0, 1]", self.c)));
        }
        if self.targets.is_empty() {
            return Err(Error::invalid("no target features"));
        }
        let mut seen = vec![false; dim];
        for &t in &self.targets {
            if t >= dim {
                return Err(Error::IndexOutOfRange { index: t, dim });
            }
            if seen[t] {
                return Err(Error::invalid(format!("target {t} listed twice")));
            }
            seen[t] = true;
        }
        if self.kind.needs_reference() && self.references.len() != self.targets.len() {
            return Err(Error::invalid(format!(
                "{} needs one reference per target ({} targets, {} references)",
                self.kind,
                self.targets.len(),
                self.references.len()
            )));
        }
        if !self.references.is_empty() && self.references.len() != self.targets.len() {
            return Err(Error::invalid("references must match targets one to one"));
        }
        for &r in &self.references {
            if r >= dim {
                return Err(Error::IndexOutOfRange { index: r, dim });
            }
            if seen[r] {
                return Err(Error::invalid(format!("feature {r} is both a target and a reference")));
            }
        }
        Ok(())
    }
}

/// Population variance.
fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// The ⌈0.25·N⌉-th smallest value.
pub fn lower_quartile(x: &[f64]) -> f64 {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (x.len() as f64 * 0.25).ceil().max(1.0) as usize;
    sorted[rank - 1]
}

/// Applies one transformation per target column; every other cell is copied
/// unchanged.
pub fn perturb(q: &Dataset, spec: &PerturbationSpec) -> Result<Dataset> {
    spec.validate(q.cols())?;
    let mut out = q.clone();
    for (slot, &i) in spec.targets.iter().enumerate() {
        let xi = q.column(i)?;
        let c = spec.c;
        let new: Vec<f64> = match spec.kind {
            PerturbationKind::MeanShift => xi.iter().map(|v| v + c).collect(),
            PerturbationKind::VarianceChange => {
                let mut rng = rng::stream(rng::derive_seed(spec.seed, &[tag::NOISE, i as u64]));
                xi.iter()
                    .map(|v| {
                        let e: f64 = rng.sample(StandardNormal);
                        v + c * e
                    })
                    .collect()
            }
            PerturbationKind::CovChange => {
                let xj = q.column(spec.references[slot])?;
                xi.iter().zip(xj).map(|(a, b)| (1.0 - c) * a + c * b).collect()
            }
            PerturbationKind::CovChangeConditional => {
                let xj = q.column(spec.references[slot])?;
                let v = lower_quartile(xj);
                xi.iter()
                    .zip(xj)
                    .map(|(&a, &b)| if b <= v { (1.0 - c) * a + c * b } else { a })
                    .collect()
            }
            PerturbationKind::CovChangeNoVar => {
                let xj = q.column(spec.references[slot])?;
                let mixed: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| (1.0 - c) * a + c * b).collect();
                let before = variance(xi);
                let after = variance(&mixed);
                let w = if after > 0.0 {
                    (before / after).sqrt()
                } else if before == 0.0 {
                    1.0
                } else {
                    return Err(Error::Generator(format!(
                        "feature {i}: mixed column is constant, variance cannot be restored"
                    )));
                };
                mixed.into_iter().map(|v| w * v).collect()
            }
        };
        out = out.with_column(i, new)?;
    }
    Ok(out)
}

pub const PROTOCOL_TARGETS: usize = 3;

/// Replays the UCI-style protocol on a real dataset: standardize, draw two
/// disjoint row subsets of size `n` as P and Q, pick random targets and
/// references, and perturb Q.
pub fn uci_protocol(
    data: &Dataset,
    n: usize,
    kind: PerturbationKind,
    c: f64,
    targets: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, GroundTruth, PerturbationSpec)> {
    let dim = data.cols();
    if targets == 0 || targets >= dim {
        return Err(Error::invalid(format!("need 1 <= targets < D = {dim}, got {targets}")));
    }
    if 2 * n > data.rows() || n < 2 {
        return Err(Error::invalid(format!(
            "cannot draw two disjoint samples of size {n} from {} rows",
            data.rows()
        )));
    }
    let mut rng = rng::stream(rng::derive_seed(seed, &[tag::PROTOCOL]));
    let std = data.standardized();
    let mut order: Vec<usize> = (0..data.rows()).collect();
    order.shuffle(&mut rng);
    let p = std.select_rows(&order[..n])?;
    let q = std.select_rows(&order[n..2 * n])?;

    let mut features = index::sample(&mut rng, dim, dim).into_vec();
    let chosen: Vec<usize> = features.drain(..targets).collect();
    let references = if kind.needs_reference() {
        (0..targets)
            .map(|_| features[rng.random_range(0..features.len())])
            .collect()
    } else {
        Vec::new()
    };
    let spec = PerturbationSpec {
        kind,
        c,
        targets: chosen.clone(),
        references,
        seed: rng::derive_seed(seed, &[tag::NOISE]),
    };
    let q = perturb(&q, &spec)?;
    Ok((p, q, GroundTruth::new(chosen, dim)?, spec))
}
