//! Command-line front end: reads model files, runs the analysis pipeline and
//! prints canonical JSON or CSV.

pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};
use stokolmo::assumptions::{AssumptionReport, CheckOutcome, SampleSpec};
use stokolmo::boundary::{AnalysisConfig, Representation};
use stokolmo::classifier::{classify, Classification, VerdictKind};
use stokolmo::foodchain::{classify_food_chain, FoodChainOutcome, FoodChainParams};
use stokolmo::model::KolmogorovModel;
use stokolmo::numfmt::format_g;
use stokolmo::sde::{simulate_ensemble, simulate_path, EnsembleOptions, SimConfig};
use stokolmo::verify::{classify_path, verify_verdict, VerificationStatus, VerifyConfig};
use thiserror::Error;

use crate::report::{emit, to_canonical, RunReport, Tool, Work};

pub const THREADS_ENV: &str = "STOKOLMO_THREADS";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Model { path: String, message: String },
    #[error("{0}")]
    Simulation(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Model { .. } => "model",
            CliError::Simulation(_) => "simulation",
            CliError::Internal(_) => "internal",
        }
    }

    /// Single-line JSON diagnostic.
    pub fn diagnostic(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Io { path, .. } | CliError::Model { path, .. } = self {
            v["path"] = json!(path);
        }
        v.to_string()
    }
}

#[derive(Parser, Debug)]
#[command(name = "stokolmo", version, about = "Persistence and extinction analysis for stochastic Kolmogorov systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Report the sampled assumption checks of a model.
    Check {
        model: PathBuf,
        #[command(flatten)]
        out: OutFlags,
    },
    /// Discover boundary measures and classify the model.
    Classify {
        model: PathBuf,
        /// Budget of the Monte Carlo face measures.
        #[command(flatten)]
        run: RunFlags,
        #[command(flatten)]
        out: OutFlags,
        /// Directory for `u,p` tables of one-dimensional edge densities.
        #[arg(long)]
        densities: Option<PathBuf>,
    },
    /// Simulate paths: CSV gives the trajectory of path 0, JSON an ensemble summary.
    Simulate {
        model: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        #[command(flatten)]
        out: OutFlags,
        /// Keep every k-th step in the trajectory (default: about 10^4 rows).
        #[arg(long)]
        every: Option<String>,
    },
    /// Classify, then test the verdict against an ensemble simulation.
    Verify {
        model: PathBuf,
        /// Budget of the verification ensemble.
        #[command(flatten)]
        run: RunFlags,
        #[command(flatten)]
        out: OutFlags,
    },
    /// Classify a simple food chain from its invasion rates.
    Foodchain {
        chain: PathBuf,
        #[command(flatten)]
        out: OutFlags,
        /// Also run the general pipeline on the chain and compare survivors.
        #[arg(long)]
        cross_check: bool,
    },
}

#[derive(Args, Debug, Default)]
struct RunFlags {
    /// Initial state, comma separated.
    #[arg(long)]
    x0: Option<String>,
    /// Horizon; burn-in is a tenth of it.
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    paths: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Args, Debug)]
struct OutFlags {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

/// Parsed numeric flags together with their literal text.
struct Inputs {
    echo: Map<String, Value>,
    x0: Option<Vec<f64>>,
    sim: SimConfig,
    seed: u64,
}

fn parse_number<T: std::str::FromStr>(flag: &str, text: &str) -> Result<T, CliError> {
    text.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("--{flag}: cannot parse {text:?}")))
}

impl RunFlags {
    fn resolve(&self, mut sim: SimConfig) -> Result<Inputs, CliError> {
        let mut echo = Map::new();
        let mut x0 = None;
        if let Some(text) = &self.x0 {
            let v = text
                .split(',')
                .map(|s| parse_number::<f64>("x0", s))
                .collect::<Result<Vec<_>, _>>()?;
            echo.insert("x0".into(), json!(text));
            x0 = Some(v);
        }
        if let Some(text) = &self.t {
            sim.t_max = parse_number("t", text)?;
            sim.burn_in = sim.t_max / 10.0;
            echo.insert("t".into(), json!(text));
        }
        if let Some(text) = &self.dt {
            sim.dt = parse_number("dt", text)?;
            echo.insert("dt".into(), json!(text));
        }
        if let Some(text) = &self.paths {
            sim.n_paths = parse_number("paths", text)?;
            echo.insert("paths".into(), json!(text));
        }
        if let Some(text) = &self.seed {
            sim.seed = parse_number("seed", text)?;
            echo.insert("seed".into(), json!(text));
        }
        sim.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(Inputs {
            echo,
            x0,
            seed: sim.seed,
            sim,
        })
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn load_model(path: &Path) -> Result<KolmogorovModel, CliError> {
    KolmogorovModel::from_json_str(&read(path)?).map_err(|e| CliError::Model {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn canonical<T: Serialize>(v: &T) -> Result<String, CliError> {
    to_canonical(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn num(v: f64) -> String {
    format_g(v, 12)
}

fn write_out(text: &str, out: &OutFlags) -> Result<(), CliError> {
    match emit(text, out.out.as_deref()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe && out.out.is_none() => Ok(()),
        r => r,
    }
    .map_err(|e| CliError::Io {
        path: out.out.as_ref().map_or("<stdout>".into(), |p| p.display().to_string()),
        message: e.to_string(),
    })
}

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Inconclusive verdict or failed verification.
    Negative,
}

fn check_cmd(model_path: &Path, out: &OutFlags) -> Result<Outcome, CliError> {
    let model = load_model(model_path)?;
    let report = AssumptionReport::run(&model, &SampleSpec::default());
    let text = match out.format {
        Format::Json => canonical(&json!({
            "tool": Tool::current(),
            "model": model.to_json(),
            "assumptions": report,
        }))?,
        Format::Csv => {
            let mut s = String::from("check,status,method,reason\n");
            let rows: [(&str, &CheckOutcome); 3] = [
                ("nondegenerate", &report.nondegenerate),
                ("tightness", &report.tightness),
                ("growth", &report.growth),
            ];
            for (name, o) in rows {
                let word = |v: serde_json::Result<Value>| -> Result<String, CliError> {
                    let v = v.map_err(|e| CliError::Internal(e.to_string()))?;
                    Ok(v.as_str().unwrap_or_default().to_string())
                };
                s.push_str(&format!(
                    "{name},{},{},{}\n",
                    word(serde_json::to_value(&o.status))?,
                    word(serde_json::to_value(&o.method))?,
                    csv_field(&o.reason)
                ));
            }
            s
        }
    };
    write_out(&text, out)?;
    Ok(Outcome::Success)
}

fn run_report(
    command: &str,
    model: &KolmogorovModel,
    analysis: AnalysisConfig,
    inputs: &Inputs,
    c: Classification,
    verification: Option<(VerifyConfig, stokolmo::verify::EnsembleReport)>,
) -> RunReport {
    let boundary = c.boundary.unwrap_or_else(|| stokolmo::boundary::BoundaryAnalysis {
        table: stokolmo::boundary::InvasionRateTable::empty(),
        faces: Vec::new(),
    });
    let boundary_path_steps = boundary
        .measures()
        .iter()
        .filter_map(|m| match &m.representation {
            Representation::Empirical(e) => Some(e.config.n_paths as u64 * e.config.n_steps()),
            _ => None,
        })
        .sum();
    let verification_path_steps = verification.as_ref().map_or(0, |(_, r)| r.path_steps);
    let (verification_config, verification) = match verification {
        Some((cfg, r)) => (Some(cfg), Some(r)),
        None => (None, None),
    };
    RunReport {
        tool: Tool::current(),
        command: command.into(),
        seed: inputs.seed,
        inputs: inputs.echo.clone(),
        model: model.to_json(),
        analysis,
        assumptions: c.verdict.assumptions.clone(),
        measures: boundary.measures().into_iter().cloned().collect(),
        invasion_rates: boundary.table,
        faces: boundary.faces,
        verdict: c.verdict,
        verification_config,
        verification,
        work: Work {
            boundary_path_steps,
            verification_path_steps,
        },
    }
}

fn rate_table_csv(r: &RunReport) -> String {
    let mut s = String::from("measure,support,species,lambda,ci,low_confidence\n");
    let t = &r.invasion_rates;
    for (k, m) in t.measures.iter().enumerate() {
        for i in 0..t.lambda[k].len() {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_field(&m.label),
                csv_field(&m.support.to_string()),
                i + 1,
                num(t.lambda[k][i]),
                num(t.ci[k][i]),
                t.low_confidence[k][i]
            ));
        }
    }
    s
}

fn analysis_for(inputs: &Inputs, mc: bool) -> AnalysisConfig {
    let mut a = AnalysisConfig::default();
    if mc {
        a.mc = SimConfig {
            record_every: a.mc.record_every,
            ..inputs.sim.clone()
        };
    }
    a.mc.seed = inputs.seed;
    a
}

fn classify_cmd(model_path: &Path, run: &RunFlags, out: &OutFlags, densities: Option<&Path>) -> Result<Outcome, CliError> {
    let model = load_model(model_path)?;
    let inputs = run.resolve(AnalysisConfig::default().mc)?;
    let analysis = analysis_for(&inputs, true);
    let c = classify(&model, &analysis);
    let outcome = match c.verdict.kind {
        VerdictKind::Inconclusive { .. } => Outcome::Negative,
        _ => Outcome::Success,
    };
    let report = run_report("classify", &model, analysis, &inputs, c, None);
    if let Some(dir) = densities {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        for m in &report.measures {
            if let Representation::Density1D(d) = &m.representation {
                let name: String = m.label.chars().map(|ch| if ch.is_ascii_alphanumeric() { ch } else { '_' }).collect();
                let path = dir.join(format!("density_{name}.csv"));
                std::fs::write(&path, d.to_csv()).map_err(|e| CliError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            }
        }
    }
    let text = match out.format {
        Format::Json => canonical(&report)?,
        Format::Csv => rate_table_csv(&report),
    };
    write_out(&text, out)?;
    Ok(outcome)
}

fn start(model: &KolmogorovModel, x0: &Option<Vec<f64>>) -> Result<Vec<f64>, CliError> {
    match x0 {
        Some(x) if x.len() != model.n() => Err(CliError::Usage(format!(
            "--x0 has {} entries for a {}-species model",
            x.len(),
            model.n()
        ))),
        Some(x) => Ok(x.clone()),
        None => Ok(vec![1.0; model.n()]),
    }
}

fn simulate_cmd(model_path: &Path, run: &RunFlags, out: &OutFlags, every: Option<&str>) -> Result<Outcome, CliError> {
    let model = load_model(model_path)?;
    let mut inputs = run.resolve(SimConfig::default())?;
    let x0 = start(&model, &inputs.x0)?;
    let sim_err = |e: stokolmo::sde::SimError| CliError::Simulation(e.to_string());
    let text = match out.format {
        Format::Csv => {
            inputs.sim.record_every = match every {
                Some(text) => {
                    inputs.echo.insert("every".into(), json!(text));
                    parse_number::<usize>("every", text)?.max(1)
                }
                None => (inputs.sim.n_steps() / 10_000).max(1) as usize,
            };
            let traj = simulate_path(&model, &x0, &inputs.sim, 0).map_err(sim_err)?;
            let mut buf = Vec::new();
            traj.write_csv(&mut buf).map_err(|e| CliError::Internal(e.to_string()))?;
            String::from_utf8(buf).map_err(|e| CliError::Internal(e.to_string()))?
        }
        Format::Json => {
            let ens = simulate_ensemble(&model, &x0, &inputs.sim, &EnsembleOptions::default()).map_err(sim_err)?;
            let n = model.n();
            let classes: Vec<Value> = ens
                .paths
                .iter()
                .map(|p| {
                    let c = classify_path(&p.y_end, p.flags.blowup.is_some(), inputs.sim.extinct_log_threshold);
                    json!({ "path_id": p.path_id, "class": c, "t_end": p.t_end })
                })
                .collect();
            canonical(&json!({
                "tool": Tool::current(),
                "command": "simulate",
                "seed": inputs.seed,
                "inputs": inputs.echo,
                "model": model.to_json(),
                "config": inputs.sim,
                "x0": x0,
                "blowup_count": ens.blowup_count(),
                "exponents": (0..n).map(|i| ens.exponent(i)).collect::<Vec<_>>(),
                "mean_x": (0..n).map(|i| ens.mean_x(i)).collect::<Vec<_>>(),
                "paths": classes,
            }))?
        }
    };
    write_out(&text, out)?;
    Ok(Outcome::Success)
}

fn verify_cmd(model_path: &Path, run: &RunFlags, out: &OutFlags) -> Result<Outcome, CliError> {
    let model = load_model(model_path)?;
    let inputs = run.resolve(SimConfig::default())?;
    let x0 = start(&model, &inputs.x0)?;
    let analysis = analysis_for(&inputs, false);
    let c = classify(&model, &analysis);
    let vcfg = VerifyConfig {
        sim: inputs.sim.clone(),
        x0: Some(x0),
        ..VerifyConfig::default()
    };
    let (verification, outcome) = match c.verdict.kind {
        VerdictKind::Inconclusive { .. } => (None, Outcome::Negative),
        _ => {
            let r = verify_verdict(&model, &c.verdict, &vcfg).map_err(|e| CliError::Simulation(e.to_string()))?;
            let o = if r.status == VerificationStatus::Passed {
                Outcome::Success
            } else {
                Outcome::Negative
            };
            (Some((vcfg, r)), o)
        }
    };
    let report = run_report("verify", &model, analysis, &inputs, c, verification);
    let text = match out.format {
        Format::Json => canonical(&report)?,
        Format::Csv => {
            let mut s = String::from("check,observed,expected,tolerance,passed\n");
            for c in report.verification.iter().flat_map(|r| &r.checks) {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    csv_field(&c.name),
                    num(c.observed),
                    num(c.expected),
                    num(c.tolerance),
                    c.passed
                ));
            }
            s
        }
    };
    write_out(&text, out)?;
    Ok(outcome)
}

fn foodchain_cmd(chain_path: &Path, out: &OutFlags, cross_check: bool) -> Result<Outcome, CliError> {
    let text = read(chain_path)?;
    let model_err = |message: String| CliError::Model {
        path: chain_path.display().to_string(),
        message,
    };
    let params = FoodChainParams::from_json_str(&text).map_err(|e| model_err(e.to_string()))?;
    let analysis = AnalysisConfig::default();
    let verdict = classify_food_chain(&params, analysis.decision_tol);
    let outcome = match verdict.outcome {
        FoodChainOutcome::Inconclusive { .. } => Outcome::Negative,
        _ => Outcome::Success,
    };
    let general = if cross_check {
        let model = params.to_model().map_err(|e| model_err(e.to_string()))?;
        let c = classify(&model, &analysis);
        let survivors: Option<Vec<usize>> = match &c.verdict.kind {
            VerdictKind::Persistent { .. } => Some((1..=params.n).collect()),
            VerdictKind::Extinction { rates, .. } if rates.len() == 1 => {
                Some(rates[0].support.indices().iter().map(|i| i + 1).collect())
            }
            _ => None,
        };
        let fast: Vec<usize> = verdict.survivors().iter().map(|i| i + 1).collect();
        Some(json!({
            "kind": c.verdict.kind.name(),
            "survivors": survivors,
            "agrees": survivors.as_ref() == Some(&fast),
        }))
    } else {
        None
    };
    let text = match out.format {
        Format::Json => canonical(&json!({
            "tool": Tool::current(),
            "chain": params,
            "verdict": verdict,
            "general": general,
        }))?,
        Format::Csv => {
            let mut s = String::from("level,species,x\n");
            for e in &verdict.equilibria {
                for (k, x) in e.x.iter().enumerate() {
                    s.push_str(&format!("{},{},{}\n", e.level, k + 1, num(*x)));
                }
            }
            s
        }
    };
    write_out(&text, out)?;
    Ok(outcome)
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(text) => text
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV}: cannot parse {text:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<Outcome, CliError> {
    let pool = thread_pool()?;
    pool.install(|| match &cli.command {
        Command::Check { model, out } => check_cmd(model, out),
        Command::Classify { model, run, out, densities } => classify_cmd(model, run, out, densities.as_deref()),
        Command::Simulate { model, run, out, every } => simulate_cmd(model, run, out, every.as_deref()),
        Command::Verify { model, run, out } => verify_cmd(model, run, out),
        Command::Foodchain { chain, out, cross_check } => foodchain_cmd(chain, out, *cross_check),
    })
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 for an inconclusive verdict or failed verification, 2 on input errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.diagnostic());
            return 2;
        }
    };
    match dispatch(cli) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::Negative) => 1,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            2
        }
    }
}
