//! End-to-end feature selection: score or select features of P vs Q with the
//! KS-matrix method or one of the Gaussian baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{hara15_matrix, ide09_score, mt_score, HaraMode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::{build_ks_matrix_with, AnglePolicy, BuildOptions, EmpiricalKsMatrix};
use crate::solvers::{exact_min, greedy_k, greedy_score, SolverMethod, SolverResult, DEFAULT_EXACT_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Proposed,
    Mt,
    Ide09,
    Hara15,
}

impl Method {
    pub const ALL: [Method; 4] = [Self::Proposed, Self::Mt, Self::Ide09, Self::Hara15];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Proposed => "proposed",
            Self::Mt => "mt",
            Self::Ide09 => "ide09",
            Self::Hara15 => "hara15",
        }
    }

    /// Methods that produce a weight matrix can use every solver; the others
    /// only produce greedy scores.
    pub fn supports(self, solver: SolverMethod) -> bool {
        matches!(self, Self::Proposed | Self::Hara15) || solver == SolverMethod::GreedyScore
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectOptions {
    pub method: Method,
    pub solver: SolverMethod,
    /// Kept-set size for greedy-k and exact.
    pub k: Option<usize>,
    pub projections: usize,
    pub policy: AnglePolicy,
    pub seed: u64,
    pub exact_limit: usize,
    pub hara_mode: HaraMode,
}

impl SelectOptions {
    pub fn new(method: Method, seed: u64) -> Self {
        Self {
            method,
            solver: SolverMethod::GreedyScore,
            k: None,
            projections: 10,
            policy: AnglePolicy::PerPair,
            seed,
            exact_limit: DEFAULT_EXACT_LIMIT,
            hara_mode: HaraMode::Covariance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub names: Vec<String>,
    pub scores: Vec<f64>,
    /// Feature indices from rank 1 down.
    pub ranking: Vec<usize>,
    /// `S` chosen by greedy-k or exact; all features with a greedy-score
    /// step otherwise.
    pub selected: Vec<usize>,
    pub solver: SolverMethod,
    /// KS-matrix when the proposed method was used.
    pub matrix: Option<EmpiricalKsMatrix>,
}

impl Selection {
    /// `{d : score_d > t}`, ascending.
    pub fn above_threshold(&self, t: f64) -> Vec<usize> {
        (0..self.scores.len()).filter(|&d| self.scores[d] > t).collect()
    }

    /// 1-based rank per feature.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.scores.len()];
        for (pos, &d) in self.ranking.iter().enumerate() {
            r[d] = pos + 1;
        }
        r
    }
}

/// Scores descending, ties to the lower index.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Selected features in selection order, then the rest by index.
fn rank_by_selection(selected: &[usize], dim: usize) -> Vec<usize> {
    let mut mask = vec![false; dim];
    let mut out = selected.to_vec();
    for &s in selected {
        mask[s] = true;
    }
    out.extend((0..dim).filter(|&d| !mask[d]));
    out
}

fn solve(h: &nalgebra::DMatrix<f64>, opts: &SelectOptions) -> Result<SolverResult> {
    let need_k = || {
        opts.k
            .ok_or_else(|| Error::invalid(format!("k is required for the {:?} solver", opts.solver)))
    };
    match opts.solver {
        SolverMethod::GreedyScore => greedy_score(h),
        SolverMethod::GreedyK => greedy_k(h, need_k()?),
        SolverMethod::Exact => exact_min(h, need_k()?, opts.exact_limit),
    }
}

/// Greedy scores only; the fast path used by the experiment runner.
pub fn score_features(p: &Dataset, q: &Dataset, method: Method, projections: usize, seed: u64) -> Result<Vec<f64>> {
    let mut opts = SelectOptions::new(method, seed);
    opts.projections = projections;
    Ok(select(p, q, &opts)?.scores)
}

pub fn select(p: &Dataset, q: &Dataset, opts: &SelectOptions) -> Result<Selection> {
    p.check_compatible(q)?;
    if !opts.method.supports(opts.solver) {
        return Err(Error::invalid(format!(
            "method {} supports only the greedy-score solver",
            opts.method
        )));
    }
    let mut matrix = None;
    let (scores, selected) = match opts.method {
        Method::Proposed | Method::Hara15 => {
            let h = if opts.method == Method::Proposed {
                let build = BuildOptions {
                    projections: opts.projections,
                    master_seed: opts.seed,
                    policy: opts.policy,
                };
                let m = build_ks_matrix_with(p, q, &build)?;
                let h = m.entries().clone();
                matrix = Some(m);
                h
            } else {
                hara15_matrix(p, q, opts.hara_mode, opts.seed)?
            };
            let r = solve(&h, opts)?;
            (r.scores, r.selected)
        }
        Method::Mt => (mt_score(p, q, opts.seed)?, Vec::new()),
        Method::Ide09 => (ide09_score(p, q, opts.seed)?, Vec::new()),
    };
    let ranking = match opts.solver {
        SolverMethod::GreedyScore => rank_by_score(&scores),
        _ => rank_by_selection(&selected, scores.len()),
    };
    let selected = if opts.solver == SolverMethod::GreedyScore {
        ranking.clone()
    } else {
        selected
    };
    Ok(Selection {
        names: p.names().to_vec(),
        scores,
        ranking,
        selected,
        solver: opts.solver,
        matrix,
    })
}
