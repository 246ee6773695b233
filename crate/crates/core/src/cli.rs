//! Command-line front end: argument parsing, dispatch and report output.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{config_hash, load_config, ConfigError, LoadedConfig};
use crate::estimators::{
    box_counting_dimension, sample_attractor, survey_translations, EstimatorError, SampleMethod, ScaleRange, SurveyConfig,
};
use crate::ifs::IfsError;
use crate::measures::{lyapunov_dimension, MeasureError};
use crate::pressure::{
    default_level, entropy_bound, singularity_dimension_from, LevelSpectra, PressureError, DEFAULT_SUP_SAMPLES, DEFAULT_TOL,
};
use crate::suites::run_all;
use crate::symbolic::{InfiniteWord, SymbolicError, DEFAULT_WORD_BUDGET};
use crate::systems::{builtin_text, BUILTIN};
use crate::transversality::{audit_gtc, check_theorem_conditions, AuditConfig, TransversalityError, DEFAULT_Z_SAMPLES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

const TOOL: &str = "ifsdim";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "ifsdim",
    version,
    about = "Dimension estimates and transversality checks for C1 iterated function systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Name of a shipped system, used instead of --config.
    #[arg(long, global = true, conflicts_with = "config")]
    pub system: Option<String>,
    /// Level n (pressure level, orbit length, or survey level).
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sample count: sup samples, Lyapunov draws, cloud size, MC draws or trials.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// JSON report path (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// CSV table path.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    /// Worker threads (default: logical cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Singularity dimension sₙ by pressure bisection.
    DimSing,
    /// Lyapunov dimension of the configured Bernoulli measure.
    DimLyap,
    /// Box-counting dimension of a chaos-game cloud.
    DimBox,
    /// Check the transversality hypotheses of the configured system.
    CheckGtc,
    /// Monte-Carlo audit of the transversality inequality.
    AuditGtc,
    /// Compare sₙ and box dimension over random translations.
    Survey,
    /// Run every lemma property suite.
    Props,
    /// List the shipped systems.
    Systems,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::DimSing => "dim-sing",
            Command::DimLyap => "dim-lyap",
            Command::DimBox => "dim-box",
            Command::CheckGtc => "check-gtc",
            Command::AuditGtc => "audit-gtc",
            Command::Survey => "survey",
            Command::Props => "props",
            Command::Systems => "systems",
        }
    }
}

/// An error with the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn symbolic_code(e: &SymbolicError) -> i32 {
    match e {
        SymbolicError::BudgetExceeded { .. } => EXIT_BUDGET,
        _ => EXIT_CONFIG,
    }
}

fn pressure_code(e: &PressureError) -> i32 {
    match e {
        PressureError::Budget(s) => symbolic_code(s),
        PressureError::NegativeExponent(_) | PressureError::BadTolerance(_) | PressureError::ZeroLevel => EXIT_CONFIG,
        PressureError::NegativeAtZero(_) | PressureError::NonMonotone { .. } | PressureError::BoundViolated { .. } => {
            EXIT_INVARIANT
        }
        _ => EXIT_OTHER,
    }
}

fn ifs_code(e: &IfsError) -> i32 {
    match e {
        IfsError::Eval(_) => EXIT_OTHER,
        _ => EXIT_CONFIG,
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<PressureError> for CliError {
    fn from(e: PressureError) -> Self {
        CliError::new(pressure_code(&e), e.to_string())
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        let code = match &e {
            MeasureError::Pressure(p) => pressure_code(p),
            MeasureError::Eval(_) | MeasureError::Singular(_) => EXIT_OTHER,
            _ => EXIT_CONFIG,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        let code = match &e {
            EstimatorError::Budget(s) => symbolic_code(s),
            EstimatorError::Pressure(p) => pressure_code(p),
            EstimatorError::Ifs(i) => ifs_code(i),
            EstimatorError::EmptyCloud | EstimatorError::BadScales => EXIT_CONFIG,
            EstimatorError::Escaped(_) => EXIT_INVARIANT,
            EstimatorError::Eval(_) => EXIT_OTHER,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<TransversalityError> for CliError {
    fn from(e: TransversalityError) -> Self {
        let code = match &e {
            TransversalityError::Eval(_) | TransversalityError::Matrix(_) | TransversalityError::VanishingDiagonal { .. } => {
                EXIT_OTHER
            }
            TransversalityError::Symbolic(s) => symbolic_code(s),
            TransversalityError::Ifs(i) => ifs_code(i),
            TransversalityError::IncreaseTruncation(_) => EXIT_INVARIANT,
            _ => EXIT_CONFIG,
        };
        CliError::new(code, e.to_string())
    }
}

#[derive(Serialize)]
struct Report<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_hash: Option<&'a str>,
    seed: u64,
    parameters: Value,
    result: Value,
}

/// What a command produced.
pub struct Output {
    pub json: String,
    pub csv: Option<String>,
    pub code: i32,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn load(common: &CommonArgs, required: bool) -> Result<Option<LoadedConfig>, CliError> {
    match (&common.config, &common.system) {
        (Some(path), _) => Ok(Some(load_config(path)?)),
        (None, Some(name)) => {
            if builtin_text(name).is_none() {
                return Err(ConfigError::UnknownSystem(name.clone()).into());
            }
            Ok(Some(crate::systems::load_builtin(name)?))
        }
        (None, None) if required => Err(CliError::new(EXIT_CONFIG, "--config (or --system) is required")),
        (None, None) => Ok(None),
    }
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::new(EXIT_CONFIG, format!("{name} must be positive, got {v}")))
    }
}

fn nonzero(name: &str, v: usize) -> Result<usize, CliError> {
    if v > 0 {
        Ok(v)
    } else {
        Err(CliError::new(EXIT_CONFIG, format!("{name} must be at least 1")))
    }
}

/// Runs one command and renders its outputs without touching the filesystem.
pub fn execute(command: Command, common: &CommonArgs) -> Result<Output, CliError> {
    if command == Command::Systems {
        let names: Vec<&str> = BUILTIN.iter().map(|(n, _)| *n).collect();
        let hashes: Vec<Value> = BUILTIN
            .iter()
            .map(|(n, t)| json!({"name": n, "config_hash": config_hash(t)}))
            .collect();
        let report = Report {
            tool: TOOL,
            version: VERSION,
            command: command.name(),
            config_hash: None,
            seed: 0,
            parameters: json!({}),
            result: json!({"systems": names, "hashes": hashes}),
        };
        return Ok(Output {
            json: render(&report),
            csv: None,
            code: EXIT_OK,
        });
    }

    let cfg = load(common, command != Command::Props)?;
    let run = cfg.as_ref().map(|c| c.raw.run.clone()).unwrap_or_default();
    let seed = common.seed.or(run.seed).unwrap_or(0);
    let tol = positive("tol", common.tol.or(run.tol).unwrap_or(DEFAULT_TOL))?;
    let mut csv = None;
    let mut code = EXIT_OK;

    let (parameters, result) = match command {
        Command::DimSing => {
            let cfg = cfg.as_ref().expect("loaded");
            let f = &cfg.spec;
            let samples = nonzero("samples", common.samples.or(run.sup_samples).unwrap_or(DEFAULT_SUP_SAMPLES))?;
            let n = nonzero(
                "depth",
                common.depth.or(run.depth).unwrap_or_else(|| default_level(f, samples)),
            )?;
            let table = LevelSpectra::build(f, n, samples, DEFAULT_WORD_BUDGET)?;
            let est = singularity_dimension_from(f, &table, tol)?;
            let upper = f.dim() as f64 + entropy_bound(f);
            let grid: Vec<f64> = (0..=40).map(|k| upper * k as f64 / 40.0).collect();
            let curve = table.curve(&grid)?;
            csv = Some(curve.to_csv());
            (
                json!({"depth": n, "tol": tol, "sup_samples": samples}),
                json!({
                    "estimate": to_value(&est),
                    "sup_strategy": to_value(&table.strategy()),
                    "theta": f.theta(),
                    "theta_upper": f.contraction().theta_upper,
                    "entropy_bound": entropy_bound(f),
                    "certified": est.certified,
                }),
            )
        }
        Command::DimLyap => {
            let cfg = cfg.as_ref().expect("loaded");
            let mu = cfg
                .measure
                .as_ref()
                .ok_or_else(|| CliError::new(EXIT_CONFIG, "dim-lyap needs a `measure` section in the config"))?;
            let n = nonzero("depth", common.depth.or(run.depth).unwrap_or(20))?;
            let samples = nonzero("samples", common.samples.unwrap_or(10_000))?;
            let est = lyapunov_dimension(&cfg.spec, mu, n, samples, seed, tol)?;
            (
                json!({"depth": n, "tol": tol, "samples": samples, "probabilities": mu.probabilities()}),
                json!({"estimate": to_value(&est), "entropy": crate::measures::entropy(mu), "certified": false}),
            )
        }
        Command::DimBox => {
            let cfg = cfg.as_ref().expect("loaded");
            let size = nonzero("samples", common.samples.or(run.cloud_size).unwrap_or(1_000_000))?;
            let window: ScaleRange = run.scales.map(Into::into).unwrap_or_default();
            let cloud = sample_attractor(&cfg.spec, SampleMethod::ChaosGame, size, seed)?;
            let res = box_counting_dimension(&cloud, window)?;
            let mut table = String::from("scale,count\n");
            for (s, c) in res.scales.iter().zip(&res.counts) {
                table.push_str(&format!("{s},{c}\n"));
            }
            csv = Some(table);
            (
                json!({"samples": size, "window": to_value(&window), "method": "chaos_game"}),
                json!({"box": to_value(&res), "provenance": to_value(&cloud.provenance()), "certified": false}),
            )
        }
        Command::CheckGtc => {
            let cfg = cfg.as_ref().expect("loaded");
            let grid = run.grid.unwrap_or_else(|| crate::ifs::default_grid_per_axis(cfg.spec.dim()));
            let rep = check_theorem_conditions(&cfg.spec, grid)?;
            (json!({"grid": grid}), to_value(&rep))
        }
        Command::AuditGtc => {
            let cfg = cfg.as_ref().expect("loaded");
            let fam = cfg
                .family
                .as_ref()
                .ok_or_else(|| CliError::new(EXIT_CONFIG, "audit-gtc needs a `family` section in the config"))?;
            let m = fam.param_dim();
            let pairs = match &run.pairs {
                Some(p) => p
                    .iter()
                    .map(|[a, b]| Ok((a.parse::<InfiniteWord>()?, b.parse::<InfiniteWord>()?)))
                    .collect::<Result<Vec<_>, SymbolicError>>()
                    .map_err(|e| CliError::new(EXIT_CONFIG, format!("run.pairs: {e}")))?,
                None => vec![(InfiniteWord::constant(1), InfiniteWord::constant(2))],
            };
            let config = AuditConfig {
                t0: run.t0.clone().unwrap_or_else(|| vec![0.0; m]),
                delta: common.delta.or(run.delta).unwrap_or(fam.radius() / 2.0),
                pairs,
                r_grid: run.r_grid.clone().unwrap_or_else(|| vec![0.3, 0.1, 0.03, 0.01]),
                n_mc: nonzero("samples", common.samples.or(run.n_mc).unwrap_or(100_000))?,
                seed,
                z_samples: run.z_samples.unwrap_or(DEFAULT_Z_SAMPLES),
                psi_bound: run.psi_bound.unwrap_or(0.1),
            };
            let rep = audit_gtc(fam, &config)?;
            csv = Some(rep.to_csv());
            (to_value(&config), json!({"audit": to_value(&rep), "certified": false}))
        }
        Command::Survey => {
            let cfg = cfg.as_ref().expect("loaded");
            let fam = cfg
                .family
                .as_ref()
                .ok_or_else(|| CliError::new(EXIT_CONFIG, "survey needs a `family` section in the config"))?;
            let defaults = SurveyConfig::default();
            let config = SurveyConfig {
                level: nonzero("depth", common.depth.or(run.depth).unwrap_or(defaults.level))?,
                tol,
                sup_samples: nonzero("sup_samples", run.sup_samples.unwrap_or(defaults.sup_samples))?,
                cloud_size: nonzero("samples", common.samples.or(run.cloud_size).unwrap_or(defaults.cloud_size))?,
                window: run.scales.map(Into::into).unwrap_or(defaults.window),
                agreement_tol: run.agreement_tol.unwrap_or(defaults.agreement_tol),
            };
            let n_draws = nonzero("n_draws", run.n_draws.unwrap_or(20))?;
            let table = survey_translations(fam, n_draws, &config, seed)?;
            csv = Some(table.to_csv(fam.param_dim()));
            (
                json!({"n_draws": n_draws}),
                json!({"survey": to_value(&table), "certified": false}),
            )
        }
        Command::Props => {
            let trials = nonzero("samples", common.samples.unwrap_or(1000))?;
            let rep = run_all(trials, seed);
            if !rep.pass {
                code = EXIT_INVARIANT;
            }
            csv = Some(rep.to_csv());
            (json!({"trials": trials}), to_value(&rep))
        }
        Command::Systems => unreachable!("handled above"),
    };

    let report = Report {
        tool: TOOL,
        version: VERSION,
        command: command.name(),
        config_hash: cfg.as_ref().map(|c| c.hash.as_str()),
        seed,
        parameters,
        result,
    };
    Ok(Output {
        json: render(&report),
        csv,
        code,
    })
}

fn render(report: &Report<'_>) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn write_file(path: &PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::new(EXIT_OTHER, format!("cannot write {}: {e}", path.display())))
}

/// Parses arguments, runs the command, writes outputs; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.common.threads {
        builder = builder.num_threads(nonzero("threads", k)?);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::new(EXIT_OTHER, format!("cannot start thread pool: {e}")))?;
    let out = pool.install(|| execute(cli.command, &cli.common))?;
    match &cli.common.out {
        Some(path) => write_file(path, &out.json)?,
        None => print!("{}", out.json),
    }
    if let (Some(path), Some(table)) = (&cli.common.csv, &out.csv) {
        write_file(path, table)?;
    }
    if out.code != EXIT_OK {
        eprintln!("error: {} reported a failure", cli.command.name());
    }
    Ok(out.code)
}
