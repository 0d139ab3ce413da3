//! AUROC scoring and the seeded multi-repetition experiment runner.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::{score_features, Method};
use crate::rng::{self, tag};
use crate::synth::{gen_example1, gen_example2, uci_protocol, GroundTruth, PerturbationKind, PROTOCOL_TARGETS};

/// Mann-Whitney AUROC: the fraction of (changed, unchanged) feature pairs
/// where the changed feature scores higher, ties counting ½.
pub fn auroc(scores: &[f64], truth: &GroundTruth) -> Result<f64> {
    let mask = truth.mask(scores.len());
    if truth.s_star().iter().any(|&s| s >= scores.len()) {
        return Err(Error::DegenerateTruth(format!(
            "S* names features beyond D = {}",
            scores.len()
        )));
    }
    let pos: Vec<f64> = (0..scores.len()).filter(|&d| mask[d]).map(|d| scores[d]).collect();
    let neg: Vec<f64> = (0..scores.len()).filter(|&d| !mask[d]).map(|d| scores[d]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::DegenerateTruth("all features positive or all negative".into()));
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let mut wins = 0.0;
    for &a in &pos {
        for &b in &neg {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorSpec {
    Example1,
    Example2,
    /// P and Q are the same standard-normal sample; S* = {0}.
    Identical {
        dim: usize,
    },
    /// Protocol replay on a real CSV: standardize, split, perturb Q.
    CsvPerturb {
        path: PathBuf,
        kind: PerturbationKind,
        c: f64,
        #[serde(default = "default_targets")]
        targets: usize,
    },
}

fn default_targets() -> usize {
    PROTOCOL_TARGETS
}

/// Source of `(P, Q, S*)` for one repetition. CSV data is loaded once.
pub enum Generator {
    Example1,
    Example2,
    Identical(usize),
    CsvPerturb {
        data: Dataset,
        kind: PerturbationKind,
        c: f64,
        targets: usize,
    },
}

impl Generator {
    pub fn from_spec(spec: &GeneratorSpec) -> Result<Self> {
        Ok(match spec {
            GeneratorSpec::Example1 => Self::Example1,
            GeneratorSpec::Example2 => Self::Example2,
            GeneratorSpec::Identical { dim } => {
                if *dim < 2 {
                    return Err(Error::invalid("identical generator needs dim >= 2"));
                }
                Self::Identical(*dim)
            }
            GeneratorSpec::CsvPerturb { path, kind, c, targets } => Self::CsvPerturb {
                data: Dataset::read_csv(path)?,
                kind: *kind,
                c: *c,
                targets: *targets,
            },
        })
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<(Dataset, Dataset, GroundTruth)> {
        match self {
            Self::Example1 => gen_example1(n, seed),
            Self::Example2 => gen_example2(n, seed),
            Self::Identical(dim) => {
                use rand::Rng;
                use rand_distr::StandardNormal;
                let mut rng = rng::stream(rng::derive_seed(seed, &[tag::DRAW_P]));
                let cols = (0..*dim)
                    .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
                    .collect();
                let p = Dataset::from_columns(Dataset::default_names(*dim), cols)?;
                Ok((p.clone(), p, GroundTruth::new(vec![0], *dim)?))
            }
            Self::CsvPerturb { data, kind, c, targets } => {
                let (p, q, truth, _) = uci_protocol(data, n, *kind, *c, *targets, seed)?;
                Ok((p, q, truth))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    pub methods: Vec<Method>,
    pub n_values: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    #[serde(default = "default_projections", rename = "L")]
    pub projections: usize,
    /// When false, runtimes are recorded as 0 so reports are byte-identical
    /// across runs.
    #[serde(default = "default_timing")]
    pub timing: bool,
}

fn default_projections() -> usize {
    10
}

fn default_timing() -> bool {
    true
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.n_values.is_empty() {
            return Err(Error::invalid("methods and n_values must be nonempty"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        if self.projections == 0 {
            return Err(Error::invalid("L must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub n: usize,
    pub rep: usize,
    pub rep_seed: u64,
    /// `None` when the method or generator failed; see `error`.
    pub auroc: Option<f64>,
    pub runtime_sec: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean_auroc: f64,
    /// Sample standard deviation (n − 1); 0 for a single repetition.
    pub std: f64,
    pub mean_runtime_sec: f64,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: Method,
    pub records: Vec<RepetitionRecord>,
    pub aggregates: Vec<Aggregate>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(n: usize, records: &[RepetitionRecord]) -> Aggregate {
    let ok: Vec<&RepetitionRecord> = records.iter().filter(|r| r.n == n && r.auroc.is_some()).collect();
    let aurocs: Vec<f64> = ok.iter().filter_map(|r| r.auroc).collect();
    let (mean_auroc, std) = mean_std(&aurocs);
    let times: Vec<f64> = ok.iter().map(|r| r.runtime_sec).collect();
    Aggregate {
        n,
        mean_auroc,
        std,
        mean_runtime_sec: mean_std(&times).0,
        completed: ok.len(),
        failed: records.iter().filter(|r| r.n == n && r.auroc.is_none()).count(),
    }
}

pub fn repetition_seed(master: u64, n: usize, rep: usize) -> u64 {
    rng::derive_seed(master, &[tag::REPETITION, n as u64, rep as u64])
}

/// Runs every (method, N, repetition). Data for a given (N, repetition) is
/// generated once and shared by all methods; repetitions run in parallel and
/// records come back ordered by method, N, repetition.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentReport>> {
    config.validate()?;
    let generator = Generator::from_spec(&config.generator)?;
    let units: Vec<(usize, usize)> = config
        .n_values
        .iter()
        .flat_map(|&n| (0..config.repetitions).map(move |r| (n, r)))
        .collect();
    let per_unit: Vec<Vec<RepetitionRecord>> = units
        .par_iter()
        .map(|&(n, rep)| {
            let rep_seed = repetition_seed(config.seed, n, rep);
            let data = generator.generate(n, rep_seed);
            config
                .methods
                .iter()
                .map(|&method| {
                    let mut record = RepetitionRecord {
                        n,
                        rep,
                        rep_seed,
                        auroc: None,
                        runtime_sec: 0.0,
                        error: None,
                    };
                    let (p, q, truth) = match &data {
                        Ok(d) => d,
                        Err(e) => {
                            record.error = Some(format!("generator: {e}"));
                            return record;
                        }
                    };
                    let method_seed = rng::derive_seed(rep_seed, &[tag::METHOD]);
                    let start = Instant::now();
                    let scores = score_features(p, q, method, config.projections, method_seed);
                    let elapsed = start.elapsed().as_secs_f64();
                    if config.timing {
                        record.runtime_sec = elapsed;
                    }
                    match scores.and_then(|s| auroc(&s, truth)) {
                        Ok(a) => record.auroc = Some(a),
                        Err(e) => record.error = Some(e.to_string()),
                    }
                    record
                })
                .collect()
        })
        .collect();

    Ok(config
        .methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let records: Vec<RepetitionRecord> = per_unit.iter().map(|recs| recs[m].clone()).collect();
            let aggregates = config.n_values.iter().map(|&n| aggregate(n, &records)).collect();
            ExperimentReport {
                method,
                records,
                aggregates,
            }
        })
        .collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `method,N,rep_seed,auroc,runtime_sec`; failed repetitions show `NA`.
pub fn write_records_csv(reports: &[ExperimentReport], mut w: impl Write) -> Result<()> {
    writeln!(w, "method,N,rep_seed,auroc,runtime_sec")?;
    for r in reports {
        for rec in &r.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.method,
                rec.n,
                rec.rep_seed,
                fmt_opt(rec.auroc),
                rec.runtime_sec
            )?;
        }
    }
    Ok(())
}

/// `method,N,mean_auroc,std`.
pub fn write_auroc_vs_n(reports: &[ExperimentReport], mut w: impl Write) -> Result<()> {
    writeln!(w, "method,N,mean_auroc,std")?;
    for r in reports {
        for a in &r.aggregates {
            writeln!(w, "{},{},{},{}", r.method, a.n, a.mean_auroc, a.std)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct AggregateBlock<'a> {
    config: &'a ExperimentConfig,
    methods: Vec<MethodAggregates<'a>>,
}

#[derive(Serialize)]
struct MethodAggregates<'a> {
    method: Method,
    aggregates: &'a [Aggregate],
}

pub fn write_aggregate_json(config: &ExperimentConfig, reports: &[ExperimentReport], mut w: impl Write) -> Result<()> {
    let block = AggregateBlock {
        config,
        methods: reports
            .iter()
            .map(|r| MethodAggregates {
                method: r.method,
                aggregates: &r.aggregates,
            })
            .collect(),
    };
    serde_json::to_writer_pretty(&mut w, &block)?;
    writeln!(w)?;
    Ok(())
}

/// Writes `report.csv`, `aggregate.json` and `auroc_vs_N.csv` into `dir`.
pub fn write_experiment_outputs(config: &ExperimentConfig, reports: &[ExperimentReport], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let open = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
        Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
    };
    let mut f = open("report.csv")?;
    write_records_csv(reports, &mut f)?;
    f.flush()?;
    let mut f = open("aggregate.json")?;
    write_aggregate_json(config, reports, &mut f)?;
    f.flush()?;
    let mut f = open("auroc_vs_N.csv")?;
    write_auroc_vs_n(reports, &mut f)?;
    f.flush()?;
    Ok(())
}
