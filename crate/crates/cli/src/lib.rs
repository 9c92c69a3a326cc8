//! Command implementations behind the `flce` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use flce::data::{quality_from_profiles, QualityMode};
use flce::engine::{self, EngineError, Method, RunConfig, RunRecord};
use flce::evaluation::{communication_ratio, euclidean_distance, kl_divergence, DistributionVectors};
use flce::io::{csv_bytes, write_atomic};
use flce::model::{gradcheck_instance, gradient_check, GradCheckOptions};
use flce::numerics::{normalize_to_simplex, SeededRng, SimplexVector};
use flce::store;
use thiserror::Error;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_GRADCHECK: i32 = 3;

/// Relative error threshold for `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_INSTANCES: u64 = 10;

pub const REPORT_DIR: &str = "report";
pub const REPORT_KL: &str = "kl_per_method.csv";
pub const REPORT_ACCURACY: &str = "accuracy_per_round.csv";
pub const REPORT_CLASSES: &str = "class_contributions.csv";
pub const REPORT_COMMUNICATION: &str = "communication.csv";

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) => CliError::config(e.to_string()),
            other => CliError::runtime(other.to_string()),
        }
    }
}

impl From<store::StoreError> for CliError {
    fn from(e: store::StoreError) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "flce", version, about = "Seeded federated-learning simulator with prototype-momentum contribution scores")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a federation and write its record directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `method` from the config file.
        #[arg(long)]
        method: Option<Method>,
        /// Overrides `seed` from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for client training; results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Score the primary result of each run against a reference distribution.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// `volume`, `diversity`, or `shapley:PATH`.
        #[arg(long)]
        reference: String,
        #[arg(long, default_value = "comparison.csv")]
        out: PathBuf,
    },
    /// Check analytic loss gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Write plot-ready CSVs for a finished run into `<run>/report/`.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Print the effective configuration.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Parses a configuration file; unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| CliError { code: e.code, message: format!("{}: {}", path.display(), e.message) })
}

pub fn config_to_toml(cfg: &RunConfig) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::config(format!("config: {e}")))
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out: dir, method, seed, threads } => {
            let mut cfg = load_config(&config)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            simulate(&cfg, &dir, threads, out)
        }
        Command::Compare { runs, reference, out: path } => compare(&runs, &reference, &path, out),
        Command::Gradcheck { seed, corrupt } => gradcheck(seed, corrupt, out),
        Command::Report { run } => report(&run, out),
        Command::PrintConfig { config } => {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => RunConfig::default(),
            };
            write!(out, "{}", config_to_toml(&cfg)?)?;
            Ok(())
        }
    }
}

pub fn simulate(cfg: &RunConfig, dir: &Path, threads: Option<usize>, out: &mut dyn Write) -> Result<(), CliError> {
    let record = match threads {
        Some(t) => engine::run_federation_with_threads(cfg, t)?,
        None => engine::run_federation(cfg)?,
    };
    store::persist_run(&record, dir)?;
    let quality = quality_from_profiles(&record.clients, record.num_classes, cfg.evaluation.quality)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let primary = record.primary();
    writeln!(out, "method {}  config {}", primary.provenance.method, record.config_hash)?;
    writeln!(out, "client  contribution  quality")?;
    for (k, (ce, q)) in primary.scores.as_slice().iter().zip(quality.shares.as_slice()).enumerate() {
        writeln!(out, "{k:>6}  {ce:>12.6}  {q:>7.4}")?;
    }
    let kl = kl_divergence(primary.scores.as_slice(), quality.shares.as_slice()).map_err(|e| CliError::runtime(e.to_string()))?;
    writeln!(out, "KL(contribution || {}) = {kl:.6}", quality_name(cfg.evaluation.quality))?;
    writeln!(
        out,
        "final accuracy {:.4}  macro-F1 {:.4}  (last {} rounds)",
        record.final_metrics.accuracy, record.final_metrics.macro_f1, record.final_window
    )?;
    Ok(())
}

fn quality_name(mode: QualityMode) -> &'static str {
    match mode {
        QualityMode::Volume => "volume",
        QualityMode::ClassDiversity => "diversity",
    }
}

/// Scores read from `path`: a run directory (its `shapley-mc` result, else
/// its primary result) or a CSV whose second column holds per-client values.
fn load_reference_scores(path: &Path) -> Result<SimplexVector, CliError> {
    if path.is_dir() {
        let record = store::load_run(path)?;
        let res = record.contribution("shapley-mc").unwrap_or_else(|| record.primary());
        return Ok(res.scores.clone());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::runtime(format!("reference {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let v: f64 = row
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::runtime(format!("reference {}: bad value on row {}", path.display(), i + 2)))?;
        values.push(v.max(0.0));
    }
    if values.is_empty() {
        return Err(CliError::runtime(format!("reference {}: no rows", path.display())));
    }
    Ok(normalize_to_simplex(&values).unwrap_or_else(|_| SimplexVector::uniform(values.len())))
}

fn reference_for(reference: &str, first: &RunRecord) -> Result<SimplexVector, CliError> {
    let mode = match reference {
        "volume" => Some(QualityMode::Volume),
        "diversity" | "class-diversity" => Some(QualityMode::ClassDiversity),
        _ => None,
    };
    if let Some(mode) = mode {
        return quality_from_profiles(&first.clients, first.num_classes, mode)
            .map(|q| q.shares)
            .map_err(|e| CliError::runtime(e.to_string()));
    }
    match reference.strip_prefix("shapley:") {
        Some(p) if !p.is_empty() => {
            let path = Path::new(p);
            if !path.exists() {
                return Err(CliError::runtime(format!("reference file {p} does not exist")));
            }
            load_reference_scores(path)
        }
        _ => Err(CliError::config(format!("--reference {reference:?}: expected volume, diversity or shapley:PATH"))),
    }
}

pub fn compare(runs: &[PathBuf], reference: &str, path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let records = runs.iter().map(store::load_run).collect::<Result<Vec<_>, _>>()?;
    let n = records[0].clients.len();
    if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.clients.len() != n) {
        return Err(CliError::runtime(format!(
            "{} has {} clients, {} has {n}",
            runs[i].display(),
            r.clients.len(),
            runs[0].display()
        )));
    }
    let reference = reference_for(reference, &records[0])?;
    if reference.len() != n {
        return Err(CliError::runtime(format!("reference has {} clients, runs have {n}", reference.len())));
    }
    let mut rows = Vec::new();
    for (dir, record) in runs.iter().zip(&records) {
        let res = record.primary();
        let kl = kl_divergence(res.scores.as_slice(), reference.as_slice()).map_err(|e| CliError::runtime(e.to_string()))?;
        let l2 = euclidean_distance(res.scores.as_slice(), reference.as_slice()).map_err(|e| CliError::runtime(e.to_string()))?;
        writeln!(out, "{:<12} KL {kl:.6}  L2 {l2:.6}  {}", res.provenance.method, dir.display())?;
        rows.push([res.provenance.method.clone(), kl.to_string(), l2.to_string(), dir.display().to_string()]);
    }
    write_atomic(path, &csv_bytes(&["method", "kl", "euclidean", "run"], rows)?)?;
    Ok(())
}

pub fn gradcheck(seed: u64, corrupt: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let start = Instant::now();
    let opts = GradCheckOptions { corrupt, ..GradCheckOptions::default() };
    let mut first_failure: Option<(u64, f64)> = None;
    let mut overall: f64 = 0.0;
    for i in 0..GRADCHECK_INSTANCES {
        let s = seed.wrapping_add(i);
        let inst = gradcheck_instance(s);
        let report = gradient_check(&inst.params, &inst.xs, &inst.labels, inst.loss, opts, &mut SeededRng::new(s).derive(&[1]))
            .map_err(|e| CliError::runtime(format!("instance seed {s}: {e}")))?;
        writeln!(
            out,
            "instance {i} seed {s}: max relative error {:.3e} ({} coordinates, {} skipped)",
            report.max_relative_error, report.checked, report.skipped
        )?;
        overall = overall.max(report.max_relative_error);
        if report.max_relative_error >= GRADCHECK_TOLERANCE && first_failure.is_none() {
            first_failure = Some((s, report.max_relative_error));
        }
    }
    writeln!(out, "max relative error {overall:.3e} in {:.2?}", start.elapsed())?;
    match first_failure {
        Some((s, e)) => Err(CliError {
            code: EXIT_GRADCHECK,
            message: format!("gradient check failed: instance seed {s} has relative error {e:.3e} >= {GRADCHECK_TOLERANCE:e}"),
        }),
        None => Ok(()),
    }
}

/// Per-class contribution `Σ_t a_t X̂[t,k,c]` for every client and class.
pub fn class_contributions(record: &RunRecord) -> Result<Vec<Vec<f64>>, CliError> {
    let (t_max, n, classes) = record.completed.dims();
    let e = &record.config.evaluation;
    let ab = DistributionVectors::from_weights(t_max, classes, &e.round_weights, &e.class_weights)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let mut out = vec![vec![0.0; classes]; n];
    for t in 0..t_max {
        let a = ab.rounds[t];
        for (k, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v += a * record.completed.get(t, k, c).unwrap_or(0.0);
            }
        }
    }
    Ok(out)
}

pub fn report(run: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    if !run.join(store::RECORD_FILE).exists() {
        return Err(CliError::runtime(format!("{}: no run record", run.display())));
    }
    let record = store::load_run(run)?;
    let dir = run.join(REPORT_DIR);
    fs::create_dir_all(&dir)?;

    let mode = record.config.evaluation.quality;
    let quality = quality_from_profiles(&record.clients, record.num_classes, mode).map_err(|e| CliError::runtime(e.to_string()))?;
    let mut kl_rows = Vec::new();
    for res in &record.contributions {
        let kl = kl_divergence(res.scores.as_slice(), quality.shares.as_slice()).map_err(|e| CliError::runtime(e.to_string()))?;
        let l2 = euclidean_distance(res.scores.as_slice(), quality.shares.as_slice()).map_err(|e| CliError::runtime(e.to_string()))?;
        kl_rows.push([res.provenance.method.clone(), quality_name(mode).to_string(), kl.to_string(), l2.to_string()]);
    }
    write_atomic(dir.join(REPORT_KL), &csv_bytes(&["method", "reference", "kl", "euclidean"], kl_rows)?)?;

    write_atomic(dir.join(REPORT_ACCURACY), &store::metrics_csv(&record)?)?;

    let per_class = class_contributions(&record)?;
    let class_rows = per_class.iter().enumerate().flat_map(|(k, row)| {
        row.iter().enumerate().map(move |(c, v)| [k.to_string(), c.to_string(), v.to_string()])
    });
    write_atomic(dir.join(REPORT_CLASSES), &csv_bytes(&["client", "class", "contribution"], class_rows)?)?;

    let p = record.prototype_floats();
    let m = record.model_config.param_count();
    write_atomic(
        dir.join(REPORT_COMMUNICATION),
        &csv_bytes(
            &["prototype_floats", "model_params", "ratio"],
            [[p.to_string(), m.to_string(), communication_ratio(p, m).to_string()]],
        )?,
    )?;
    writeln!(out, "wrote {}", dir.display())?;
    Ok(())
}
