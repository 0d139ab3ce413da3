//! The empirical KS-matrix: per-feature KS statistics on the diagonal and
//! sampled projected KS distances off the diagonal.
//!
//! Each entry is an independent unit of work. Pair `(i, j)` draws its angles
//! from a stream keyed by `(master_seed, i, j)` (or by the master seed alone
//! under the shared policy), so the result is bit-identical for any number of
//! worker threads.
//!
//! # File format
//!
//! ```text
//! # ksdiff-matrix L=10 seed=42 policy=per-pair
//! x1,x2,x3
//! 0.12,0.05,0.07
//! 0.05,0.02,0.01
//! 0.07,0.01,0.03
//! ```
//!
//! The first line is metadata, the second the CSV header of feature names,
//! followed by `D` rows of `D` entries in shortest round-trip decimal form.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ks::{ks_sorted, ProjectionAngleSet, ProjectionScratch};

pub const MATRIX_MAGIC: &str = "# ksdiff-matrix";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnglePolicy {
    /// Independent angle set per pair, keyed by `(seed, i, j)`.
    #[default]
    PerPair,
    /// One angle set reused for every pair.
    Shared,
}

impl fmt::Display for AnglePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnglePolicy::PerPair => "per-pair",
            AnglePolicy::Shared => "shared",
        })
    }
}

impl FromStr for AnglePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-pair" => Ok(AnglePolicy::PerPair),
            "shared" => Ok(AnglePolicy::Shared),
            other => Err(Error::invalid(format!("unknown angle policy {other:?}"))),
        }
    }
}

/// Angle set used for the off-diagonal entry `(i, j)`, `i < j`.
pub fn pair_angles(
    master_seed: u64,
    policy: AnglePolicy,
    i: usize,
    j: usize,
    projections: usize,
) -> Result<ProjectionAngleSet> {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    match policy {
        AnglePolicy::PerPair => ProjectionAngleSet::generate(master_seed, Some((a, b)), projections),
        AnglePolicy::Shared => ProjectionAngleSet::generate(master_seed, None, projections),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalKsMatrix {
    names: Vec<String>,
    entries: DMatrix<f64>,
    projections: usize,
    master_seed: u64,
    policy: AnglePolicy,
}

impl EmpiricalKsMatrix {
    /// Validates symmetry, the `[0, 1]` range and the name count.
    pub fn from_parts(
        names: Vec<String>,
        entries: DMatrix<f64>,
        projections: usize,
        master_seed: u64,
        policy: AnglePolicy,
    ) -> Result<Self> {
        let d = entries.nrows();
        if d == 0 || entries.ncols() != d {
            return Err(Error::invalid(format!(
                "KS-matrix must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if names.len() != d {
            return Err(Error::ColumnMismatch(format!(
                "{} names for dimension {d}",
                names.len()
            )));
        }
        if projections == 0 {
            return Err(Error::invalid("L must be at least 1"));
        }
        for i in 0..d {
            for j in 0..d {
                let v = entries[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::EntryOutOfRange { i, j, value: v });
                }
                if v != entries[(j, i)] {
                    return Err(Error::NotSymmetric { i, j });
                }
            }
        }
        Ok(Self {
            names,
            entries,
            projections,
            master_seed,
            policy,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn projections(&self) -> usize {
        self.projections
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn policy(&self) -> AnglePolicy {
        self.policy
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = File::create(path)?;
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn write_to(&self, mut writer: impl Write) -> Result<()> {
        writeln!(
            writer,
            "{MATRIX_MAGIC} L={} seed={} policy={}",
            self.projections, self.master_seed, self.policy
        )?;
        let mut wtr = csv::Writer::from_writer(&mut writer);
        let io = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
        wtr.write_record(&self.names).map_err(io)?;
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim()).map(|j| self.entries[(i, j)].to_string()).collect();
            wtr.write_record(&row).map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (meta, body) = text.split_once('\n').unwrap_or((text, ""));
        let (projections, master_seed, policy) = parse_meta(meta.trim_end_matches('\r'))?;

        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let names: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse {
                line: 2,
                msg: e.to_string(),
            })?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        let d = names.len();
        if d == 0 || names.iter().all(String::is_empty) {
            return Err(Error::Parse {
                line: 2,
                msg: "missing header row".into(),
            });
        }
        let mut values = Vec::with_capacity(d * d);
        let mut rows = 0usize;
        for (r, rec) in rdr.records().enumerate() {
            // +1 for the metadata line that precedes the CSV body
            let line = r as u64 + 3;
            let rec = rec.map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            if rec.len() != d {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {d} entries, found {}", rec.len()),
                });
            }
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("entry {} is not a number: {field:?}", c + 1),
                })?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("entry out of [0,1]: {field} at column {}", c + 1),
                    });
                }
                values.push(v);
            }
            rows += 1;
        }
        if rows != d {
            return Err(Error::Parse {
                line: rows as u64 + 3,
                msg: format!("expected {d} rows, found {rows}"),
            });
        }
        let entries = DMatrix::from_row_slice(d, d, &values);
        Self::from_parts(names, entries, projections, master_seed, policy)
    }
}

fn parse_meta(line: &str) -> Result<(usize, u64, AnglePolicy)> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let rest = line
        .strip_prefix(MATRIX_MAGIC)
        .ok_or_else(|| bad(format!("expected metadata line starting with {MATRIX_MAGIC:?}")))?;
    let (mut l, mut seed, mut policy) = (None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed metadata field {field:?}")))?;
        match key {
            "L" => l = Some(value.parse::<usize>().map_err(|e| bad(format!("L: {e}")))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(format!("seed: {e}")))?),
            "policy" => policy = Some(value.parse::<AnglePolicy>().map_err(|e| bad(e.to_string()))?),
            _ => return Err(bad(format!("unknown metadata key {key:?}"))),
        }
    }
    match (l, seed, policy) {
        (Some(l), Some(s), Some(p)) => Ok((l, s, p)),
        _ => Err(bad("metadata needs L, seed and policy".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub projections: usize,
    pub master_seed: u64,
    pub policy: AnglePolicy,
}

impl BuildOptions {
    pub fn new(projections: usize, master_seed: u64) -> Self {
        Self {
            projections,
            master_seed,
            policy: AnglePolicy::PerPair,
        }
    }
}

/// Builds the matrix with per-pair angle sets. Runs on the current rayon pool.
pub fn build_ks_matrix(p: &Dataset, q: &Dataset, projections: usize, master_seed: u64) -> Result<EmpiricalKsMatrix> {
    build_ks_matrix_with(p, q, &BuildOptions::new(projections, master_seed))
}

pub fn build_ks_matrix_with(p: &Dataset, q: &Dataset, opts: &BuildOptions) -> Result<EmpiricalKsMatrix> {
    p.check_compatible(q)?;
    if opts.projections == 0 {
        return Err(Error::invalid("L must be at least 1"));
    }
    let d = p.cols();

    let units: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let shared = match opts.policy {
        AnglePolicy::Shared => Some(pair_angles(opts.master_seed, opts.policy, 0, 1, opts.projections)?),
        AnglePolicy::PerPair => None,
    };

    let values: Vec<f64> = units
        .par_iter()
        .map_init(ProjectionScratch::default, |scratch, &(i, j)| -> Result<f64> {
            if i == j {
                let mut a = p.column(i)?.to_vec();
                let mut b = q.column(i)?.to_vec();
                a.sort_unstable_by(f64::total_cmp);
                b.sort_unstable_by(f64::total_cmp);
                return Ok(ks_sorted(&a, &b));
            }
            let owned;
            let angles = match &shared {
                Some(s) => s,
                None => {
                    owned = pair_angles(opts.master_seed, opts.policy, i, j, opts.projections)?;
                    &owned
                }
            };
            let cols_p = (p.column(i)?, p.column(j)?);
            let cols_q = (q.column(i)?, q.column(j)?);
            let total: f64 = angles.angles().iter().map(|&t| scratch.ks_at(cols_p, cols_q, t)).sum();
            Ok(total / angles.len() as f64)
        })
        .collect::<Result<_>>()?;

    let mut entries = DMatrix::zeros(d, d);
    for (&(i, j), &v) in units.iter().zip(&values) {
        entries[(i, j)] = v;
        entries[(j, i)] = v;
    }
    EmpiricalKsMatrix::from_parts(
        p.names().to_vec(),
        entries,
        opts.projections,
        opts.master_seed,
        opts.policy,
    )
}
