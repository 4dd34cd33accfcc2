//! Experiment harness: config files, seeded replications and CSV metrics.
//!
//! A run expands one [`RunConfig`] into one replication per seed. Each
//! replication derives its signal, operator and noise streams from its
//! master seed, runs the chosen loop and writes `seed_<s>.csv`. Once every
//! replication finishes, `aggregate.csv` is written with the per-iteration
//! median and median absolute deviation of each column across seeds.
//!
//! Both files start with a version line (`#smp-metrics v1` or
//! `#smp-aggregate v1`) followed by a header row. Floats are written in
//! shortest round-trip scientific notation, so reruns are byte-identical
//! unless `timing` is on.

mod config;

pub use config::{parse_config, parse_seeds, ConfigError, DenoiserSpec, NoiseLevel, RunConfig, MAX_DENSE_ENTRIES};

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::linmodel::{
    gen_fijl_operator, gen_gaussian_operator, gen_signal, gen_spectral_gaussian_operator, measure, snr_to_vw,
    MeasurementModel, OperatorKind,
};
use crate::seeding;
use crate::smp::{self, MetricRow, RunRecord};
use crate::vecops::median;

pub const METRICS_VERSION: &str = "#smp-metrics v1";
pub const AGGREGATE_VERSION: &str = "#smp-aggregate v1";

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "SMP_WORKERS";

/// Per-seed CSV columns, in order.
pub const COLUMNS: [&str; 19] = [
    "t", "nmse", "alpha_est", "alpha_oracle", "alpha_err", "v_q_est", "v_q_oracle", "v_h_est", "v_h_oracle",
    "gamma", "k_t", "psi_t", "u1", "u2", "u3", "deriv_lhs", "deriv_rhs", "fallback_used", "wall_ms",
];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("model construction failed: {0}")]
    Model(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("malformed metrics file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("schemas differ: {0}")]
    SchemaMismatch(String),
}

impl BenchError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Model(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path, err: impl std::fmt::Display) -> BenchError {
    BenchError::Io { path: path.to_path_buf(), message: err.to_string() }
}

/// Draws x, A and w for master seed `seed`.
pub fn build_model(cfg: &RunConfig, seed: u64) -> Result<MeasurementModel, BenchError> {
    let model_err = |e: crate::linmodel::LinModelError| BenchError::Model(e.to_string());
    let x = gen_signal(&cfg.signal, seeding::derive_seed(seed, seeding::SIGNAL, 0)).map_err(model_err)?;
    let op_seed = seeding::derive_seed(seed, seeding::OPERATOR, 0);
    let op = match cfg.operator {
        OperatorKind::DenseGaussian => gen_gaussian_operator(cfg.m, cfg.n, op_seed),
        OperatorKind::Fijl => gen_fijl_operator(cfg.m, cfg.n, cfg.kappa, op_seed),
        OperatorKind::SpectralGaussian => gen_spectral_gaussian_operator(cfg.m, cfg.n, op_seed),
    }
    .map_err(model_err)?;
    let v_w = match cfg.noise {
        NoiseLevel::SnrDb(snr) => snr_to_vw(&x, &op, snr).map_err(model_err)?,
        NoiseLevel::Variance(v) => v,
    };
    measure(x, Arc::new(op), v_w, seeding::derive_seed(seed, seeding::NOISE, 0)).map_err(model_err)
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub path: PathBuf,
    /// Complete record, or the partial record of an aborted run.
    pub record: RunRecord,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub seeds: Vec<SeedOutcome>,
    pub aggregate_path: PathBuf,
}

impl ExperimentOutcome {
    /// 0 when every replication completed, 3 when any aborted.
    pub fn exit_code(&self) -> i32 {
        if self.seeds.iter().any(|s| s.aborted.is_some()) {
            3
        } else {
            0
        }
    }
}

/// Runs one replication without writing anything.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<(RunRecord, Option<String>), BenchError> {
    let model = build_model(cfg, seed)?;
    let denoiser = cfg.denoiser.build();
    match smp::run(&model, denoiser.as_ref(), cfg.algorithm, &cfg.run_options(seed)) {
        Ok(rec) => Ok((rec, None)),
        Err(err) => match err.partial() {
            Some(partial) => Ok((partial.clone(), Some(err.to_string()))),
            None => Err(BenchError::Config(ConfigError { line: None, message: err.to_string() })),
        },
    }
}

/// Worker count from [`WORKERS_ENV`], else the number of CPUs.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&k| k > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs every seed of `cfg` on `workers` threads and writes the CSV files
/// under `cfg.output`.
pub fn run_experiment(cfg: &RunConfig, workers: usize) -> Result<ExperimentOutcome, BenchError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output).map_err(|e| io_err(&cfg.output, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BenchError::Config(ConfigError { line: None, message: e.to_string() }))?;
    let seeds: Vec<SeedOutcome> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let (record, aborted) = run_seed(cfg, seed)?;
                let path = cfg.output.join(format!("seed_{seed}.csv"));
                fs::write(&path, metrics_csv(&record.rows)?).map_err(|e| io_err(&path, e))?;
                Ok(SeedOutcome { seed, path, record, aborted })
            })
            .collect::<Result<Vec<_>, BenchError>>()
    })?;
    let aggregate_path = cfg.output.join("aggregate.csv");
    let runs: Vec<&[MetricRow]> = seeds.iter().map(|s| s.record.rows.as_slice()).collect();
    fs::write(&aggregate_path, aggregate_csv(&runs)?).map_err(|e| io_err(&aggregate_path, e))?;
    Ok(ExperimentOutcome { seeds, aggregate_path })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

fn row_values(row: &MetricRow) -> [f64; 19] {
    [
        row.t as f64,
        row.nmse,
        row.alpha_est,
        row.alpha_oracle,
        row.alpha_err,
        row.v_q_est,
        row.v_q_oracle,
        row.v_h_est,
        row.v_h_oracle,
        row.gamma,
        row.k_t,
        row.psi_t,
        row.u1,
        row.u2,
        row.u3,
        row.deriv_lhs,
        row.deriv_rhs,
        if row.fallback_used { 1.0 } else { 0.0 },
        row.wall_ms,
    ]
}

fn finish(wtr: csv::Writer<Vec<u8>>, version: &str) -> Result<String, BenchError> {
    let body = wtr
        .into_inner()
        .map_err(|e| BenchError::Format { path: PathBuf::new(), message: e.to_string() })?;
    let body = String::from_utf8(body).expect("CSV output is UTF-8");
    Ok(format!("{version}\n{body}"))
}

fn csv_err(e: csv::Error) -> BenchError {
    BenchError::Format { path: PathBuf::new(), message: e.to_string() }
}

/// Per-seed CSV text: version line, header, one row per iteration.
pub fn metrics_csv(rows: &[MetricRow]) -> Result<String, BenchError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(COLUMNS).map_err(csv_err)?;
    for row in rows {
        let vals = row_values(row);
        let mut fields: Vec<String> = Vec::with_capacity(COLUMNS.len());
        fields.push(row.t.to_string());
        fields.extend(vals[1..17].iter().map(|&v| fmt_f64(v)));
        fields.push(u8::from(row.fallback_used).to_string());
        fields.push(fmt_f64(row.wall_ms));
        wtr.write_record(&fields).map_err(csv_err)?;
    }
    finish(wtr, METRICS_VERSION)
}

/// `median |v − median(v)|` over the finite entries.
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    median(&values.iter().map(|v| (v - m).abs()).collect::<Vec<_>>())
}

/// Aggregate CSV text over replications that may have different lengths.
/// `fallback_used` becomes the fraction of seeds that used the fallback.
pub fn aggregate_csv(runs: &[&[MetricRow]]) -> Result<String, BenchError> {
    let mut header = vec!["t".to_string(), "seeds".to_string()];
    for col in &COLUMNS[1..] {
        if *col == "fallback_used" {
            header.push("fallback_frac".into());
        } else {
            header.push(format!("{col}_median"));
            header.push(format!("{col}_mad"));
        }
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(&header).map_err(csv_err)?;
    let t_max = runs.iter().map(|r| r.len()).max().unwrap_or(0);
    for t in 0..t_max {
        let rows: Vec<[f64; 19]> = runs.iter().filter_map(|r| r.get(t)).map(row_values).collect();
        let mut fields = vec![t.to_string(), rows.len().to_string()];
        for (j, col) in COLUMNS.iter().enumerate().skip(1) {
            let column: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            if *col == "fallback_used" {
                fields.push(fmt_f64(column.iter().sum::<f64>() / column.len() as f64));
            } else {
                fields.push(fmt_f64(median(&column).unwrap_or(f64::NAN)));
                fields.push(fmt_f64(mad(&column).unwrap_or(f64::NAN)));
            }
        }
        wtr.write_record(&fields).map_err(csv_err)?;
    }
    finish(wtr, AGGREGATE_VERSION)
}

/// A metrics or aggregate file read back into columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub version: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn read_metrics(path: &Path) -> Result<MetricsTable, BenchError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let fmt_err = |message: String| BenchError::Format { path: path.to_path_buf(), message };
    let (version, body) = text.split_once('\n').ok_or_else(|| fmt_err("empty file".into()))?;
    if version != METRICS_VERSION && version != AGGREGATE_VERSION {
        return Err(fmt_err(format!("unknown version line {version:?}")));
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> =
        rdr.headers().map_err(|e| fmt_err(e.to_string()))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| fmt_err(e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| fmt_err(format!("non-numeric field {f:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(MetricsTable { version: version.to_string(), header, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub t: usize,
    /// `10·log10(nmse_a/nmse_b)`.
    pub delta_nmse_db: f64,
    /// `alpha_err_a/alpha_err_b`.
    pub alpha_err_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn max_abs_delta_db(&self) -> f64 {
        self.rows.iter().map(|r| r.delta_nmse_db.abs()).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for Comparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:>4} {:>14} {:>16}", "t", "delta_nmse_db", "alpha_err_ratio")?;
        for r in &self.rows {
            writeln!(f, "{:>4} {:>14.4} {:>16.4e}", r.t, r.delta_nmse_db, r.alpha_err_ratio)?;
        }
        write!(f, "max |delta_nmse_db| = {:.4}", self.max_abs_delta_db())
    }
}

/// Iteration-by-iteration NMSE difference and α-error ratio of two files
/// with the same schema. Rows are matched on `t`.
pub fn compare_runs(a: &Path, b: &Path) -> Result<Comparison, BenchError> {
    let ta = read_metrics(a)?;
    let tb = read_metrics(b)?;
    if ta.version != tb.version || ta.header != tb.header {
        return Err(BenchError::SchemaMismatch(format!("{} vs {}", a.display(), b.display())));
    }
    let pick = |t: &MetricsTable, names: [&str; 2]| {
        names
            .iter()
            .find_map(|n| t.column(n))
            .ok_or_else(|| BenchError::SchemaMismatch(format!("no {} column", names[0])))
    };
    let (t_a, t_b) = (pick(&ta, ["t", "t"])?, pick(&tb, ["t", "t"])?);
    let (n_a, n_b) = (pick(&ta, ["nmse", "nmse_median"])?, pick(&tb, ["nmse", "nmse_median"])?);
    let (e_a, e_b) = (pick(&ta, ["alpha_err", "alpha_err_median"])?, pick(&tb, ["alpha_err", "alpha_err_median"])?);
    let rows = t_a
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| {
            let j = t_b.iter().position(|&u| u == t)?;
            let same = |u: f64, v: f64| u == v || (u.is_nan() && v.is_nan());
            Some(ComparisonRow {
                t: t as usize,
                delta_nmse_db: if same(n_a[i], n_b[j]) { 0.0 } else { 10.0 * (n_a[i] / n_b[j]).log10() },
                alpha_err_ratio: if same(e_a[i], e_b[j]) { 1.0 } else { e_a[i] / e_b[j] },
            })
        })
        .collect();
    Ok(Comparison { rows })
}
