use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ksdiff::baselines::HaraMode;
use ksdiff::eval::{run_experiment, write_experiment_outputs, ExperimentConfig};
use ksdiff::matrix::{build_ks_matrix_with, BuildOptions, MATRIX_MAGIC};
use ksdiff::nalgebra::DMatrix;
use ksdiff::solvers::{SolverMethod, DEFAULT_EXACT_LIMIT};
use ksdiff::synth::{gen_example1, gen_example2, perturb};
use ksdiff::theory::{check_conditions_with, kl_grid_check, sample_bound};
use ksdiff::{
    select, AnglePolicy, Dataset, EmpiricalKsMatrix, Error, Method, PerturbationKind, PerturbationSpec, SelectOptions,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ksdiff", version, about = "Find the features on which two samples differ")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score or select the differing features of two CSV samples.
    Select(SelectArgs),
    /// Build and save the KS-matrix of two CSV samples.
    Matrix(MatrixArgs),
    /// Inject a perturbation into a CSV sample.
    Perturb(PerturbArgs),
    /// Check identifiability conditions on a matrix.
    Check(CheckArgs),
    /// Run a seeded multi-repetition experiment from a JSON spec.
    Experiment(ExperimentArgs),
    /// Write a synthetic P/Q pair as CSV files.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct InputPair {
    #[arg(long)]
    p: PathBuf,
    #[arg(long)]
    q: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Proposed,
    Mt,
    Ide09,
    Hara15,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    GreedyScore,
    GreedyK,
    Exact,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    PerPair,
    Shared,
}

impl From<PolicyArg> for AnglePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::PerPair => AnglePolicy::PerPair,
            PolicyArg::Shared => AnglePolicy::Shared,
        }
    }
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    input: InputPair,
    #[arg(long, value_enum, default_value = "proposed")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "greedy-score")]
    solver: SolverArg,
    /// Number of features to keep (greedy-k and exact).
    #[arg(long)]
    k: Option<usize>,
    /// Projection angles per feature pair.
    #[arg(long = "L", default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    l: u64,
    #[arg(long)]
    seed: u64,
    /// Also report features whose score exceeds this value.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long, value_enum, default_value = "per-pair")]
    policy: PolicyArg,
    /// Use precision differences instead of covariance differences (hara15).
    #[arg(long)]
    precision: bool,
    #[arg(long, default_value_t = DEFAULT_EXACT_LIMIT)]
    exact_limit: usize,
}

#[derive(Args)]
struct MatrixArgs {
    #[command(flatten)]
    input: InputPair,
    #[arg(long = "L", default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    l: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "per-pair")]
    policy: PolicyArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    kind: String,
    #[arg(long)]
    c: f64,
    /// Target features, by name or zero-based index.
    #[arg(long, value_delimiter = ',', required = true)]
    targets: Vec<String>,
    /// One reference feature per target.
    #[arg(long, value_delimiter = ',')]
    references: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CheckArgs {
    /// Matrix file (ksdiff-matrix or a plain CSV with a header row).
    #[arg(long, conflicts_with_all = ["p", "q"])]
    matrix: Option<PathBuf>,
    #[arg(long, requires = "q")]
    p: Option<PathBuf>,
    #[arg(long, requires = "p")]
    q: Option<PathBuf>,
    #[arg(long = "L", default_value_t = 10)]
    l: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Changed features, by name or zero-based index.
    #[arg(long, value_delimiter = ',')]
    s_star: Vec<String>,
    /// Kept-set size; must equal D − |S*| when given.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = ksdiff::theory::DEFAULT_TOLERANCE)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_EXACT_LIMIT)]
    eta_limit: usize,
    /// Also report the sample sizes needed for this failure probability.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Run the KL lower-bound grid check instead.
    #[arg(long)]
    kl_grid: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Record runtimes as 0 so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    example: u8,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_limit() { 3 } else { 2 },
            msg: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: 2,
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        msg: msg.into(),
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || match cli.command {
        Command::Select(a) => cmd_select(a),
        Command::Matrix(a) => cmd_matrix(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Check(a) => cmd_check(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Generate(a) => cmd_generate(a),
    };
    let result = match cli.jobs {
        Some(0) => Err(usage("--jobs must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(usage(e.to_string())),
        },
        None => run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ksdiff: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn read_csv(path: &Path) -> std::result::Result<Dataset, Failure> {
    Dataset::read_csv(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_pair(input: &InputPair) -> std::result::Result<(Dataset, Dataset), Failure> {
    let p = read_csv(&input.p)?;
    let q = read_csv(&input.q)?;
    p.check_compatible(&q)?;
    Ok((p, q))
}

/// Writes to `path`, or stdout when absent.
fn with_output(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> CmdResult {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(|e| usage(format!("{}: {e}", p.display())))?);
            body(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            body(&mut w)?;
        }
    }
    Ok(())
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| usage(e.to_string()))?;
    with_output(path, |w| writeln!(w, "{text}"))
}

/// Resolves a feature token: exact name first, then zero-based index.
fn feature_index(names: &[String], token: &str) -> std::result::Result<usize, Failure> {
    if let Some(i) = names.iter().position(|n| n == token) {
        return Ok(i);
    }
    match token.parse::<usize>() {
        Ok(i) if i < names.len() => Ok(i),
        _ => Err(usage(format!("unknown feature {token:?}"))),
    }
}

fn feature_indices(names: &[String], tokens: &[String]) -> std::result::Result<Vec<usize>, Failure> {
    tokens.iter().map(|t| feature_index(names, t.trim())).collect()
}

#[derive(Serialize)]
struct FeatureRow<'a> {
    name: &'a str,
    score: f64,
    rank: usize,
}

#[derive(Serialize)]
struct SelectReport<'a> {
    method: &'static str,
    solver: SolverMethod,
    seed: u64,
    #[serde(rename = "L")]
    projections: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    features: Vec<FeatureRow<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    selected: Option<Vec<&'a str>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    above_threshold: Option<Vec<&'a str>>,
}

fn cmd_select(a: SelectArgs) -> CmdResult {
    let (p, q) = read_pair(&a.input)?;
    let method = match a.method {
        MethodArg::Proposed => Method::Proposed,
        MethodArg::Mt => Method::Mt,
        MethodArg::Ide09 => Method::Ide09,
        MethodArg::Hara15 => Method::Hara15,
    };
    let solver = match a.solver {
        SolverArg::GreedyScore => SolverMethod::GreedyScore,
        SolverArg::GreedyK => SolverMethod::GreedyK,
        SolverArg::Exact => SolverMethod::Exact,
    };
    if solver != SolverMethod::GreedyScore && a.k.is_none() {
        return Err(usage("--k is required for greedy-k and exact"));
    }
    let opts = SelectOptions {
        method,
        solver,
        k: a.k,
        projections: a.l as usize,
        policy: a.policy.into(),
        seed: a.seed,
        exact_limit: a.exact_limit,
        hara_mode: if a.precision {
            HaraMode::Precision
        } else {
            HaraMode::Covariance
        },
    };
    let sel = select(&p, &q, &opts)?;
    let ranks = sel.ranks();
    let above = a.threshold.map(|t| sel.above_threshold(t));

    if a.format == Format::Csv {
        return with_output(a.out.as_deref(), |w| {
            write!(w, "name,score,rank")?;
            if above.is_some() {
                write!(w, ",above_threshold")?;
            }
            writeln!(w)?;
            for &d in &sel.ranking {
                write!(w, "{},{},{}", sel.names[d], sel.scores[d], ranks[d])?;
                if let Some(set) = &above {
                    write!(w, ",{}", set.contains(&d))?;
                }
                writeln!(w)?;
            }
            Ok(())
        });
    }
    let names = |idx: &[usize]| idx.iter().map(|&d| sel.names[d].as_str()).collect::<Vec<_>>();
    let report = SelectReport {
        method: method.as_str(),
        solver,
        seed: a.seed,
        projections: a.l,
        k: a.k,
        features: sel
            .ranking
            .iter()
            .map(|&d| FeatureRow {
                name: &sel.names[d],
                score: sel.scores[d],
                rank: ranks[d],
            })
            .collect(),
        selected: (solver != SolverMethod::GreedyScore).then(|| names(&sel.selected)),
        threshold: a.threshold,
        above_threshold: above.as_deref().map(names),
    };
    write_json(a.out.as_deref(), &report)
}

fn cmd_matrix(a: MatrixArgs) -> CmdResult {
    let (p, q) = read_pair(&a.input)?;
    let opts = BuildOptions {
        projections: a.l as usize,
        master_seed: a.seed,
        policy: a.policy.into(),
    };
    build_ks_matrix_with(&p, &q, &opts)?.save(&a.out)?;
    Ok(())
}

fn cmd_perturb(a: PerturbArgs) -> CmdResult {
    let q = read_csv(&a.input)?;
    let kind: PerturbationKind = a.kind.parse()?;
    let spec = PerturbationSpec {
        kind,
        c: a.c,
        targets: feature_indices(q.names(), &a.targets)?,
        references: feature_indices(q.names(), &a.references)?,
        seed: a.seed,
    };
    perturb(&q, &spec)?.write_csv(&a.out)?;
    Ok(())
}

/// Either a ksdiff-matrix file or a plain square CSV with a header row.
fn load_weights(path: &Path) -> std::result::Result<(Vec<String>, DMatrix<f64>), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if text.starts_with(MATRIX_MAGIC) {
        let m = EmpiricalKsMatrix::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        return Ok((m.names().to_vec(), m.entries().clone()));
    }
    let ds = Dataset::from_csv_reader(text.as_bytes()).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if ds.rows() != ds.cols() {
        return Err(usage(format!(
            "{}: matrix is {}x{}, not square",
            path.display(),
            ds.rows(),
            ds.cols()
        )));
    }
    let d = ds.cols();
    Ok((ds.names().to_vec(), DMatrix::from_fn(d, d, |i, j| ds.value(i, j))))
}

#[derive(Serialize)]
struct CheckReport {
    names: Vec<String>,
    #[serde(flatten)]
    report: ksdiff::theory::ConsistencyReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    sample_bound: Option<ksdiff::theory::SampleBound>,
}

fn cmd_check(a: CheckArgs) -> CmdResult {
    if a.kl_grid {
        return write_json(a.out.as_deref(), &kl_grid_check()?);
    }
    let (names, h) = match (&a.matrix, &a.p, &a.q) {
        (Some(m), _, _) => load_weights(m)?,
        (None, Some(p), Some(q)) => {
            let (p, q) = read_pair(&InputPair {
                p: p.clone(),
                q: q.clone(),
            })?;
            if a.l == 0 {
                return Err(usage("--L must be at least 1"));
            }
            let m = build_ks_matrix_with(&p, &q, &BuildOptions::new(a.l, a.seed))?;
            (m.names().to_vec(), m.entries().clone())
        }
        _ => return Err(usage("give --matrix or both --p and --q")),
    };
    if a.s_star.is_empty() {
        return Err(usage("--s-star is required"));
    }
    let s_star = feature_indices(&names, &a.s_star)?;
    let expected_k = names.len().saturating_sub(s_star.len());
    if let Some(k) = a.k {
        if k != expected_k {
            return Err(usage(format!("k = {k} but D − |S*| = {expected_k}")));
        }
    }
    let report = check_conditions_with(&h, &s_star, a.tol, Some(a.eta_limit))?;
    let bound = match (a.epsilon, report.eta) {
        (Some(eps), Some(eta)) if eta > 0.0 => Some(sample_bound(report.k, eta, names.len(), eps)?),
        _ => None,
    };
    write_json(
        a.out.as_deref(),
        &CheckReport {
            names,
            report,
            sample_bound: bound,
        },
    )
}

fn cmd_experiment(a: ExperimentArgs) -> CmdResult {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| usage(format!("{}: {e}", a.spec.display())))?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", a.spec.display())))?;
    if a.no_timing {
        config.timing = false;
    }
    let reports = run_experiment(&config)?;
    write_experiment_outputs(&config, &reports, &a.out_dir)?;
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> CmdResult {
    let (p, q, truth) = if a.example == 1 {
        gen_example1(a.n, a.seed)?
    } else {
        gen_example2(a.n, a.seed)?
    };
    std::fs::create_dir_all(&a.out_dir)?;
    p.write_csv(a.out_dir.join("p.csv"))?;
    q.write_csv(a.out_dir.join("q.csv"))?;
    let names: Vec<&str> = truth.s_star().iter().map(|&d| p.names()[d].as_str()).collect();
    write_json(
        Some(&a.out_dir.join("truth.json")),
        &serde_json::json!({ "s_star": truth.s_star(), "names": names }),
    )
}
