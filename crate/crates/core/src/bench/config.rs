use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::denoise::{linear_denoiser, CorrectionPolicy, Denoiser, SoftThreshold};
use crate::divest::{ProbeKind, RootRule};
use crate::linmodel::{OperatorKind, SignalKind, SignalSpec};
use crate::smp::{Algorithm, EstimatorChoice, RunOptions};

/// Dense Gaussian operators above this many entries are refused (8 bytes each).
pub const MAX_DENSE_ENTRIES: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line of the offending entry, when there is one.
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), message: message.into() }
    }

    fn global(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    SnrDb(f64),
    Variance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenoiserSpec {
    /// Soft thresholding at `multiplier·√v_h`.
    SoftThreshold { multiplier: f64 },
    /// `g(r) = c·r`.
    Linear { c: f64 },
}

impl DenoiserSpec {
    pub fn build(self) -> Box<dyn Denoiser> {
        match self {
            Self::SoftThreshold { multiplier } => Box::new(SoftThreshold { multiplier }),
            Self::Linear { c } => Box::new(linear_denoiser(c)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub estimator: EstimatorChoice,
    pub operator: OperatorKind,
    pub n: usize,
    pub m: usize,
    pub kappa: f64,
    pub signal: SignalSpec,
    pub noise: NoiseLevel,
    pub iterations: usize,
    pub i_cg: usize,
    pub c_policy: CorrectionPolicy,
    /// Oracle variances plus full diagnostics.
    pub oracle: bool,
    /// Full diagnostics with estimated variances.
    pub diagnostics: bool,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub denoiser: DenoiserSpec,
    pub probe: ProbeKind,
    pub trials: usize,
    pub root_rule: RootRule,
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Amp,
            estimator: EstimatorChoice::Polynomial,
            operator: OperatorKind::DenseGaussian,
            n: 1024,
            m: 512,
            kappa: 1.0,
            signal: SignalSpec::bernoulli_gaussian(1024, 0.1),
            noise: NoiseLevel::SnrDb(40.0),
            iterations: 10,
            i_cg: 5,
            c_policy: CorrectionPolicy::Vamp,
            oracle: false,
            diagnostics: false,
            seeds: vec![0],
            output: PathBuf::from("out"),
            denoiser: DenoiserSpec::SoftThreshold { multiplier: 1.5 },
            probe: ProbeKind::Rademacher,
            trials: 1,
            root_rule: RootRule::default(),
            timing: false,
        }
    }
}

impl RunConfig {
    /// Loop options for one replication with master seed `seed`.
    pub fn run_options(&self, seed: u64) -> RunOptions {
        let opts = RunOptions {
            estimator: self.estimator,
            iterations: self.iterations,
            i_cg: self.i_cg,
            c_policy: self.c_policy,
            diagnostics: self.diagnostics,
            seed,
            probe: self.probe,
            trials: self.trials,
            root_rule: self.root_rule,
            timing: self.timing,
            ..RunOptions::default()
        };
        if self.oracle {
            opts.oracle()
        } else {
            opts
        }
    }

    pub fn delta(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    /// Checks the cross-field invariants.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check().map_err(|(_, msg)| ConfigError::global(msg))
    }

    /// Like [`validate`](Self::validate), naming the key at fault.
    fn check(&self) -> Result<(), (&'static str, String)> {
        if self.m < 1 || self.m > self.n {
            return Err(("M", format!("need N ≥ M ≥ 1, got M = {}, N = {}", self.m, self.n)));
        }
        if self.iterations < 1 {
            return Err(("T", "T must be at least 1".into()));
        }
        if self.algorithm == Algorithm::CgVamp && self.i_cg < 1 {
            return Err(("i_cg", "i_cg must be at least 1".into()));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(("kappa", format!("kappa must be finite and ≥ 1, got {}", self.kappa)));
        }
        if self.operator != OperatorKind::Fijl && self.kappa != 1.0 {
            return Err(("kappa", "kappa applies to the fijl operator only".into()));
        }
        if self.operator == OperatorKind::DenseGaussian && self.m.saturating_mul(self.n) > MAX_DENSE_ENTRIES {
            return Err((
                "operator",
                format!(
                    "dense gaussian operator with {}×{} entries exceeds the {MAX_DENSE_ENTRIES}-entry limit; use spectral-gaussian",
                    self.m, self.n
                ),
            ));
        }
        if !matches!(self.signal.kind, SignalKind::FromFile(_))
            && !(self.signal.sparsity > 0.0 && self.signal.sparsity <= 1.0)
        {
            return Err(("sparsity", format!("sparsity {} outside (0, 1]", self.signal.sparsity)));
        }
        if !(self.signal.amplitude_var >= 0.0 && self.signal.amplitude_var.is_finite()) {
            return Err(("amplitude_var", "amplitude_var must be finite and nonnegative".into()));
        }
        match self.noise {
            NoiseLevel::SnrDb(s) if !s.is_finite() => return Err(("snr_db", "snr_db must be finite".into())),
            NoiseLevel::Variance(v) if !(v >= 0.0 && v.is_finite()) => {
                return Err(("v_w", "v_w must be finite and nonnegative".into()))
            }
            _ => {}
        }
        match self.denoiser {
            DenoiserSpec::SoftThreshold { multiplier } if !(multiplier >= 0.0 && multiplier.is_finite()) => {
                return Err(("threshold", "threshold must be finite and nonnegative".into()))
            }
            DenoiserSpec::Linear { c } if !c.is_finite() => return Err(("linear_c", "linear_c must be finite".into())),
            _ => {}
        }
        if self.trials < 1 {
            return Err(("trials", "trials must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(("seeds", "seeds must list at least one seed".into()));
        }
        Ok(())
    }
}

const KEYS: &[&str] = &[
    "algorithm", "estimator", "operator", "N", "M", "delta", "kappa", "signal", "signal_file", "sparsity",
    "amplitude_var", "snr_db", "v_w", "T", "i_cg", "c_policy", "oracle", "diagnostics", "seeds", "output",
    "denoiser", "threshold", "linear_c", "probe", "trials", "root_rule", "timing",
];

/// Parses a comma list (`0,1,5`) or a half-open range (`0..20`).
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad range end {b:?}"))?;
        if b <= a {
            return Err(format!("empty seed range {text}"));
        }
        return Ok((a..b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| format!("bad seed {s:?}")))
        .collect()
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected a boolean, got {other:?}")),
    }
}

/// Parses `key = value` lines (`#` starts a comment) into a validated config.
/// Unset keys keep their defaults; `M` may be given directly or as `delta·N`.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut entries: HashMap<&str, (usize, &str)> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line_no, format!("expected `key = value`, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(ConfigError::at(line_no, format!("unknown key {key:?}")));
        }
        if let Some((first, _)) = entries.insert(key, (line_no, value)) {
            return Err(ConfigError::at(line_no, format!("duplicate key {key:?} (first set on line {first})")));
        }
    }

    let mut cfg = RunConfig::default();
    let get = |key: &str| entries.get(key).copied();
    fn num<T: FromStr>(entry: (usize, &str), key: &str) -> Result<T, ConfigError> {
        entry.1.parse().map_err(|_| ConfigError::at(entry.0, format!("{key}: cannot parse {:?}", entry.1)))
    }
    fn named<T>(entry: (usize, &str), key: &str, parsed: Option<T>) -> Result<T, ConfigError> {
        parsed.ok_or_else(|| ConfigError::at(entry.0, format!("{key}: unknown value {:?}", entry.1)))
    }

    if let Some(e) = get("algorithm") {
        cfg.algorithm = named(e, "algorithm", Algorithm::parse(e.1))?;
    }
    if let Some(e) = get("estimator") {
        cfg.estimator = named(e, "estimator", EstimatorChoice::parse(e.1))?;
    }
    if let Some(e) = get("operator") {
        cfg.operator = named(e, "operator", OperatorKind::parse(e.1).ok())?;
    }
    if let Some(e) = get("N") {
        cfg.n = num(e, "N")?;
    }
    match (get("M"), get("delta")) {
        (Some(_), Some(e)) => return Err(ConfigError::at(e.0, "set M or delta, not both")),
        (Some(e), None) => cfg.m = num(e, "M")?,
        (None, Some(e)) => {
            let delta: f64 = num(e, "delta")?;
            if !(delta > 0.0 && delta <= 1.0) {
                return Err(ConfigError::at(e.0, format!("delta {delta} outside (0, 1]")));
            }
            cfg.m = (delta * cfg.n as f64).round() as usize;
        }
        (None, None) => cfg.m = cfg.n / 2,
    }
    if let Some(e) = get("kappa") {
        cfg.kappa = num(e, "kappa")?;
    }
    let signal_file = get("signal_file").map(|e| PathBuf::from(e.1));
    if let Some(e) = get("signal") {
        cfg.signal.kind = SignalKind::parse(e.1, signal_file.clone())
            .map_err(|err| ConfigError::at(e.0, format!("signal: {err}")))?;
    }
    if let (Some(e), false) = (get("signal_file"), matches!(cfg.signal.kind, SignalKind::FromFile(_))) {
        return Err(ConfigError::at(e.0, "signal_file requires signal = from-file"));
    }
    cfg.signal.n = cfg.n;
    if let Some(e) = get("sparsity") {
        cfg.signal.sparsity = num(e, "sparsity")?;
    }
    if let Some(e) = get("amplitude_var") {
        cfg.signal.amplitude_var = num(e, "amplitude_var")?;
    }
    match (get("snr_db"), get("v_w")) {
        (Some(_), Some(e)) => return Err(ConfigError::at(e.0, "set snr_db or v_w, not both")),
        (Some(e), None) => cfg.noise = NoiseLevel::SnrDb(num(e, "snr_db")?),
        (None, Some(e)) => cfg.noise = NoiseLevel::Variance(num(e, "v_w")?),
        (None, None) => {}
    }
    if let Some(e) = get("T") {
        cfg.iterations = num(e, "T")?;
    }
    if let Some(e) = get("i_cg") {
        cfg.i_cg = num(e, "i_cg")?;
    }
    if let Some(e) = get("c_policy") {
        cfg.c_policy = named(e, "c_policy", CorrectionPolicy::parse(e.1))?;
    }
    for (key, slot) in [("oracle", &mut cfg.oracle), ("diagnostics", &mut cfg.diagnostics), ("timing", &mut cfg.timing)] {
        if let Some(e) = get(key) {
            *slot = parse_bool(e.1).map_err(|m| ConfigError::at(e.0, format!("{key}: {m}")))?;
        }
    }
    if let Some(e) = get("seeds") {
        cfg.seeds = parse_seeds(e.1).map_err(|m| ConfigError::at(e.0, format!("seeds: {m}")))?;
    }
    if let Some(e) = get("output") {
        cfg.output = PathBuf::from(e.1);
    }
    let threshold = get("threshold").map(|e| num::<f64>(e, "threshold")).transpose()?;
    let linear_c = get("linear_c").map(|e| num::<f64>(e, "linear_c")).transpose()?;
    let denoiser_name = get("denoiser").map(|e| (e.0, e.1)).unwrap_or((0, "soft-threshold"));
    cfg.denoiser = match denoiser_name.1 {
        "soft-threshold" => {
            if let Some(e) = get("linear_c") {
                return Err(ConfigError::at(e.0, "linear_c requires denoiser = linear"));
            }
            DenoiserSpec::SoftThreshold { multiplier: threshold.unwrap_or(1.5) }
        }
        "linear" => {
            if let Some(e) = get("threshold") {
                return Err(ConfigError::at(e.0, "threshold requires denoiser = soft-threshold"));
            }
            DenoiserSpec::Linear { c: linear_c.unwrap_or(0.5) }
        }
        other => return Err(ConfigError::at(denoiser_name.0, format!("denoiser: unknown value {other:?}"))),
    };
    if let Some(e) = get("probe") {
        cfg.probe = named(e, "probe", ProbeKind::parse(e.1))?;
    }
    if let Some(e) = get("trials") {
        cfg.trials = num(e, "trials")?;
    }
    if let Some(e) = get("root_rule") {
        cfg.root_rule = named(e, "root_rule", RootRule::parse(e.1))?;
    }

    cfg.check().map_err(|(key, msg)| {
        // M may have come from delta.
        let line = get(key).or_else(|| (key == "M").then(|| get("delta")).flatten()).map(|e| e.0);
        ConfigError { line, message: msg }
    })?;
    Ok(cfg)
}
