//! Command-line front end: `run`, `synth`, `oracle`, `bench`.
//!
//! Exit codes: 0 success, 1 numerical failure (e.g. an oracle that does not
//! converge), 2 usage or input error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataio::{self, Dataset, Manifest, SyntheticSpec};
use crate::error::Error;
use crate::oracle::{self, DualTrajectory, RegretCurve};
use crate::params::{HyperParams, Preset};
use crate::pipeline::{self, RunReport};
use crate::simplex::ProbabilityVector;
use crate::{onlab, Result};

pub const CLI_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "onzeta", version, about = "Streaming zero-shot classification")]
pub struct CliConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify a stream and write predictions plus a run report.
    Run(RunArgs),
    /// Write a synthetic task (embeddings, proxies, labels, manifest).
    Synth(SynthArgs),
    /// Solve the offline reference problems for a task.
    Oracle(OracleArgs),
    /// Parameter sweeps and regret curves.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Task manifest (JSON). Individual paths below override its entries.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub proxies: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    /// Parameter bundle applied before individual overrides.
    #[arg(long, value_enum, default_value_t = PresetArg::Default)]
    pub preset: PresetArg,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "c-rho")]
    pub c_rho: Option<f64>,
    #[arg(long = "c-w")]
    pub c_w: Option<f64>,
    #[arg(long = "tau-t")]
    pub tau_t: Option<f64>,
    #[arg(long = "tau-i")]
    pub tau_i: Option<f64>,
    /// Declared stream length for the mixing schedule (defaults to the manifest's).
    #[arg(long = "num-samples")]
    pub num_samples: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use a constant mixing weight instead of the growing schedule.
    #[arg(long = "fixed-lambda")]
    pub fixed_lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Default,
    SmallDataset,
    SmallDatasetSaturated,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Default => Preset::Default,
            PresetArg::SmallDataset => Preset::SmallDataset,
            PresetArg::SmallDatasetSaturated => Preset::SmallDatasetSaturated,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Output directory for `predictions.jsonl` and `report.json`.
    #[arg(long, default_value = "onzeta-run")]
    pub output: PathBuf,
    /// Include the mixed distribution in every prediction record.
    #[arg(long)]
    pub emit_probs: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 4.0)]
    pub concentration: f64,
    /// Angle (radians) between each text proxy and its true centroid.
    #[arg(long = "bias-angle", default_value_t = 0.3)]
    pub bias_angle: f64,
    /// Class 0 is this many times as frequent as each other class.
    #[arg(long, default_value_t = 1.0)]
    pub skew: f64,
    /// Explicit comma-separated class prior (overrides --skew).
    #[arg(long, value_delimiter = ',')]
    pub prior: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "onzeta-synth")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleMode {
    /// Balanced relabeling of the text-space predictions.
    Labels,
    /// Balanced labels followed by the best fixed vision proxies.
    Proxy,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = OracleMode::Labels)]
    pub mode: OracleMode,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long = "tau-t", default_value_t = 0.01)]
    pub tau_t: f64,
    #[arg(long = "tau-i", default_value_t = 0.04)]
    pub tau_i: f64,
    #[arg(long, default_value_t = oracle::DEFAULT_TOL)]
    pub tol: f64,
    /// Output directory for `oracle_report.json` (and `reference_proxies.onz`).
    #[arg(long, default_value = "onzeta-oracle")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Alpha,
    Beta,
    FixedLambda,
    Epochs,
    /// Regret curves over stream prefixes.
    N,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, value_enum, default_value_t = SweepKind::Alpha)]
    pub sweep: SweepKind,
    /// Comma-separated sweep values (defaults depend on the sweep).
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[arg(long, default_value_t = oracle::DEFAULT_TOL)]
    pub tol: f64,
    /// Path of the JSON sweep report.
    #[arg(long, default_value = "onzeta-bench.json")]
    pub output: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(e) if e.is_numerical() => 1,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failed(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(m) => CliError::Usage(m),
            other => CliError::Failed(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

impl ParamArgs {
    pub fn resolve(&self, declared: Option<usize>) -> CliResult<HyperParams> {
        let mut p = Preset::from(self.preset).params();
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.alpha, self.alpha);
        set(&mut p.beta, self.beta);
        set(&mut p.c_rho, self.c_rho);
        set(&mut p.c_w, self.c_w);
        set(&mut p.tau_t, self.tau_t);
        set(&mut p.tau_i, self.tau_i);
        p.num_samples = self.num_samples.or(declared);
        if let Some(e) = self.epochs {
            p.epochs = e;
        }
        if let Some(s) = self.seed {
            p.seed = s;
        }
        p.fixed_lambda = self.fixed_lambda;
        for w in p.validate()? {
            eprintln!("warning: {w}");
        }
        Ok(p)
    }
}

impl InputArgs {
    pub fn load(&self) -> CliResult<Dataset> {
        let manifest = self.manifest.as_ref().map(Manifest::load).transpose()?;
        let pick = |flag: &Option<PathBuf>, from: Option<PathBuf>, name: &str| {
            flag.clone()
                .or(from)
                .ok_or_else(|| CliError::Usage(format!("--{name} or --manifest is required")))
        };
        let embeddings = pick(&self.embeddings, manifest.as_ref().map(|m| m.embeddings_path.clone()), "embeddings")?;
        let proxies = pick(&self.proxies, manifest.as_ref().map(|m| m.proxies_path.clone()), "proxies")?;
        let labels = self
            .labels
            .clone()
            .or_else(|| manifest.as_ref().and_then(|m| m.labels_path.clone()));
        for path in [Some(&embeddings), Some(&proxies), labels.as_ref()].into_iter().flatten() {
            if !path.exists() {
                return Err(CliError::Usage(format!("missing file {}", path.display())));
            }
        }
        let m = Manifest {
            schema_version: dataio::MANIFEST_SCHEMA_VERSION,
            embeddings_path: embeddings,
            proxies_path: proxies,
            labels_path: labels,
            class_names: manifest.as_ref().map(|m| m.class_names.clone()).unwrap_or_default(),
            n_declared: manifest.as_ref().map_or(0, |m| m.n_declared),
            notes: String::new(),
        };
        let ds = Dataset::load(&m)?;
        if ds.renormalized > 0 {
            eprintln!("warning: {} embedding rows were rescaled to unit norm on load", ds.renormalized);
        }
        Ok(ds)
    }
}

fn declared(ds: &Dataset) -> Option<usize> {
    (ds.n_declared > 0).then_some(ds.n_declared)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs the stream; writes `predictions.jsonl` and `report.json` under `--output`.
pub fn cmd_run(args: &RunArgs) -> CliResult<RunReport> {
    let ds = args.input.load()?;
    let params = args.params.resolve(declared(&ds))?;
    fs::create_dir_all(&args.output).map_err(Error::from)?;
    let mut out = BufWriter::new(File::create(args.output.join("predictions.jsonl")).map_err(Error::from)?);
    let emit = args.emit_probs;
    let report = pipeline::run_stream(&ds, &params, |record| {
        if emit {
            serde_json::to_writer(&mut out, record)?;
        } else {
            let mut slim = record.clone();
            slim.p_tilde = None;
            serde_json::to_writer(&mut out, &slim)?;
        }
        out.write_all(b"\n")?;
        Ok(())
    })?;
    out.flush().map_err(Error::from)?;
    write_json(&report, &args.output.join("report.json"))?;
    if let Some(acc) = report.accumulated_accuracy {
        println!("accumulated accuracy: {:.4}", acc);
    }
    println!("min class proportion: {:.4}", report.min_class_proportion);
    Ok(report)
}

pub fn synth_spec(args: &SynthArgs) -> CliResult<SyntheticSpec> {
    if args.classes == 0 {
        return Err(CliError::Usage("--classes must be positive".into()));
    }
    if !(args.skew > 0.0) {
        return Err(CliError::Usage("--skew must be positive".into()));
    }
    let spec = SyntheticSpec {
        classes: args.classes,
        dim: args.dim,
        samples: args.samples,
        concentration: args.concentration,
        bias_angle: args.bias_angle,
        class_prior: match &args.prior {
            Some(p) => p.clone(),
            None if args.skew == 1.0 => Vec::new(),
            None => SyntheticSpec::skewed_prior(args.classes, args.skew),
        },
        seed: args.seed,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<Manifest> {
    let spec = synth_spec(args)?;
    let data = dataio::generate_synthetic(&spec)?;
    let manifest = dataio::write_synthetic(&data, &args.output)?;
    println!(
        "wrote {} samples, {} classes to {}",
        spec.samples,
        spec.classes,
        args.output.join("manifest.json").display()
    );
    Ok(manifest)
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub schema_version: u32,
    pub mode: &'static str,
    pub alpha: f64,
    pub samples: usize,
    pub classes: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub duals: Vec<f64>,
    pub kkt: oracle::KktResiduals,
    pub duality_gap: f64,
    pub label_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proxy: Option<ProxyOracleSummary>,
}

#[derive(Debug, Serialize)]
pub struct ProxyOracleSummary {
    pub mean_loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub mean_vision_cosine: f64,
    pub reference_proxies: PathBuf,
}

fn text_predictions(ds: &Dataset, tau_t: f64) -> Result<Vec<ProbabilityVector>> {
    (0..ds.len())
        .map(|i| onlab::softmax_similarity(&ds.embeddings.row_f64(i), &ds.text_proxies, tau_t))
        .collect()
}

pub fn cmd_oracle(args: &OracleArgs) -> CliResult<OracleReport> {
    let ds = args.input.load()?;
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(CliError::Usage(format!("--alpha {} is outside [0, 1]", args.alpha)));
    }
    if !(args.tau_t > 0.0 && args.tau_i > 0.0 && args.tol > 0.0) {
        return Err(CliError::Usage("temperatures and --tol must be positive".into()));
    }
    let q = text_predictions(&ds, args.tau_t)?;
    let sol = oracle::solve_offline_labels(&q, args.alpha, args.tol)?;
    let gap = oracle::duality_gap(
        DualTrajectory::Fixed(&sol.duals),
        &sol.labels,
        &q,
        args.alpha,
        oracle::DEFAULT_DUAL_BOUND,
    )?;
    fs::create_dir_all(&args.output).map_err(Error::from)?;
    let proxy = match args.mode {
        OracleMode::Labels => None,
        OracleMode::Proxy => {
            let best = oracle::solve_offline_proxies(&ds.embeddings, &sol.labels, args.tau_i, args.tol)?;
            let path = args.output.join("reference_proxies.onz");
            dataio::write_proxies(&best.proxies, &path)?;
            Some(ProxyOracleSummary {
                mean_loss: best.mean_loss,
                grad_norm: best.grad_norm,
                iterations: best.iterations,
                mean_vision_cosine: pipeline::mean_nearest_proxy_cosine(&ds.embeddings, &best.proxies)?,
                reference_proxies: path,
            })
        }
    };
    let report = OracleReport {
        schema_version: CLI_SCHEMA_VERSION,
        mode: match args.mode {
            OracleMode::Labels => "labels",
            OracleMode::Proxy => "proxy",
        },
        alpha: args.alpha,
        samples: ds.len(),
        classes: ds.classes(),
        objective: sol.objective,
        max_violation: sol.max_violation,
        duals: sol.duals,
        kkt: sol.kkt,
        duality_gap: gap,
        label_iterations: sol.iterations,
        proxy,
    };
    write_json(&report, &args.output.join("oracle_report.json"))?;
    println!("objective {:.6e}, max KKT residual {:.3e}", report.objective, report.kkt.max());
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub accumulated_accuracy: Option<f64>,
    pub min_class_proportion: f64,
    pub mean_vision_cosine: f64,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub sweep: SweepKind,
    pub points: Vec<SweepPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_gap: Option<RegretCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proxy_regret: Option<RegretCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_proxy_grad_norm: Option<f64>,
    pub config_echo: HyperParams,
}

fn default_values(kind: SweepKind, n: usize) -> Vec<f64> {
    match kind {
        SweepKind::Alpha => vec![0.0, 0.4, 0.6, 0.8, 1.0],
        SweepKind::Beta | SweepKind::FixedLambda => vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        SweepKind::Epochs => vec![1.0, 2.0, 3.0, 4.0, 5.0],
        SweepKind::N => [100usize, 1_000, 10_000]
            .into_iter()
            .filter(|&k| k <= n)
            .map(|k| k as f64)
            .collect(),
    }
}

/// Runs every sweep point with an independent state; points run in parallel.
pub fn cmd_bench(args: &BenchArgs) -> CliResult<BenchReport> {
    let ds = args.input.load()?;
    let base = args.params.resolve(declared(&ds))?;
    let values = args
        .values
        .clone()
        .unwrap_or_else(|| default_values(args.sweep, ds.len()));
    if values.is_empty() {
        return Err(CliError::Usage("empty sweep".into()));
    }
    let mut report = BenchReport {
        schema_version: CLI_SCHEMA_VERSION,
        sweep: args.sweep,
        points: Vec::new(),
        label_gap: None,
        proxy_regret: None,
        max_proxy_grad_norm: None,
        config_echo: base.clone(),
    };
    if args.sweep == SweepKind::N {
        let checkpoints: Vec<usize> = values.iter().map(|&v| v as usize).collect();
        if checkpoints.iter().zip(&values).any(|(&k, &v)| k as f64 != v) {
            return Err(CliError::Usage("--values for an n sweep must be integers".into()));
        }
        let q = text_predictions(&ds, base.tau_t)?;
        report.label_gap = Some(oracle::label_gap_curve(
            &q,
            base.alpha,
            base.c_rho,
            &checkpoints,
            oracle::DEFAULT_DUAL_BOUND,
        )?);
        let last = *checkpoints.last().unwrap();
        let head = ds.embeddings.head(last);
        let trace = oracle::trace_online_proxies(
            &head,
            &ds.text_proxies,
            base.alpha,
            base.c_rho,
            base.c_w,
            base.tau_t,
            base.tau_i,
        )?;
        report.max_proxy_grad_norm = Some(trace.max_grad_norm);
        report.proxy_regret = Some(oracle::proxy_regret_curve(&head, &trace, base.tau_i, &checkpoints, args.tol)?);
    } else {
        let configs = values
            .iter()
            .map(|&v| {
                let mut p = base.clone();
                match args.sweep {
                    SweepKind::Alpha => p.alpha = v,
                    SweepKind::Beta => p.beta = v,
                    SweepKind::FixedLambda => p.fixed_lambda = Some(v),
                    SweepKind::Epochs => {
                        if v < 1.0 || v.fract() != 0.0 {
                            return Err(CliError::Usage(format!("epoch count {v} is not a positive integer")));
                        }
                        p.epochs = v as usize;
                    }
                    SweepKind::N => unreachable!(),
                }
                p.validate()?;
                Ok(p)
            })
            .collect::<CliResult<Vec<_>>>()?;
        report.points = configs
            .par_iter()
            .zip(&values)
            .map(|(p, &value)| {
                let r = pipeline::run_stream(&ds, p, |_| Ok(()))?;
                Ok(SweepPoint {
                    value,
                    accumulated_accuracy: r.accumulated_accuracy,
                    min_class_proportion: r.min_class_proportion,
                    mean_vision_cosine: r.mean_vision_cosine,
                })
            })
            .collect::<Result<Vec<_>>>()?;
    }
    write_json(&report, &args.output)?;
    for p in &report.points {
        println!(
            "{:>6.3}  acc {}  min-class {:.4}",
            p.value,
            p.accumulated_accuracy.map_or("n/a".into(), |a| format!("{a:.4}")),
            p.min_class_proportion
        );
    }
    if let (Some(g), Some(r)) = (&report.label_gap, &report.proxy_regret) {
        let show = |s: Option<f64>| s.map_or("n/a".to_string(), |s| format!("{s:.3}"));
        println!("label gap slope {}, proxy regret slope {}", show(g.fitted_slope), show(r.fitted_slope));
    }
    Ok(report)
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match CliConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a).map(drop),
        Command::Synth(a) => cmd_synth(a).map(drop),
        Command::Oracle(a) => cmd_oracle(a).map(drop),
        Command::Bench(a) => cmd_bench(a).map(drop),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
