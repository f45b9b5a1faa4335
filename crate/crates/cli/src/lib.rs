//! Command-line front end: reads scenario and fit-problem JSON, dispatches to
//! `gtr-core`, and writes JSON reports or CSV tables.
//!
//! Exit codes: 0 on success, 2 for usage or input validation errors, 3 for
//! failures while running a command (I/O, evaluation).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use gtr_core::{
    analytic_effects, empirical_effects, fit, normalized_document, sequence_distribution, simulate_sequence,
    universal_average_probability, EmpiricalTable, EnsembleConfig, FitProblem, GtrError, ProbabilityTable, RunConfig,
    Scenario, ScenarioDraft, SequenceSpec,
};
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "GTR_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "gtr",
    version,
    about = "Sequential dichotomic measurements with arbitrary break densities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a scenario and print its normalized form.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact outcome probabilities of a measurement sequence.
    Compute {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        sequence: String,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo frequencies of a measurement sequence.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        sequence: String,
        #[arg(long)]
        samples: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Order and replicability effects for a pair of measurements.
    Effects {
        #[arg(long)]
        scenario: PathBuf,
        /// Two measurement ids, "A,B".
        #[arg(long)]
        pair: String,
        #[arg(long, requires = "seed")]
        samples: Option<u64>,
        #[arg(long, requires = "samples")]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Average yes-probability over random break densities.
    BornAverage {
        #[arg(long, allow_negative_numbers = true)]
        cos_theta: f64,
        #[arg(long)]
        trials: u64,
        #[arg(long)]
        max_cells: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit free parameters to target AB/BA tables.
    Fit {
        #[arg(long)]
        problem: PathBuf,
        /// Overrides "restarts" in the problem file.
        #[arg(long)]
        restarts: Option<usize>,
        /// Overrides "seed" in the problem file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => EXIT_INVALID,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Runtime(m) => m,
        }
    }
}

fn invalid(e: GtrError) -> Failure {
    Failure::Invalid(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

type Outcome<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Outcome<Scenario> {
    let text = read(path)?;
    text.parse::<ScenarioDraft>().and_then(|d| d.build()).map_err(invalid)
}

fn parse_sequence(text: &str, scenario: &Scenario) -> Outcome<SequenceSpec> {
    let seq: SequenceSpec = text.parse().map_err(invalid)?;
    seq.validate(scenario).map_err(invalid)?;
    Ok(seq)
}

fn parse_pair(text: &str) -> Outcome<(String, String)> {
    match text.split(',').map(str::trim).collect::<Vec<_>>().as_slice() {
        [a, b] if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
        _ => Err(Failure::Invalid(format!(
            "--pair expects two ids \"A,B\", got {text:?}"
        ))),
    }
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

fn table_csv(table: &ProbabilityTable) -> Outcome<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["outcome", "probability"]).map_err(runtime)?;
    for (label, p) in table.entries() {
        w.write_record([label, p.to_string()]).map_err(runtime)?;
    }
    String::from_utf8(w.into_inner().map_err(runtime)?).map_err(runtime)
}

fn empirical_csv(table: &EmpiricalTable) -> Outcome<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["outcome", "probability", "stderr"]).map_err(runtime)?;
    for (label, e) in table.estimates() {
        w.write_record([label, e.mean.to_string(), e.stderr.to_string()])
            .map_err(runtime)?;
    }
    String::from_utf8(w.into_inner().map_err(runtime)?).map_err(runtime)
}

fn to_value<T: serde::Serialize>(v: &T) -> Outcome<Value> {
    serde_json::to_value(v).map_err(runtime)
}

fn execute(command: Command) -> Outcome<(String, Option<PathBuf>)> {
    match command {
        Command::Validate { scenario, output } => {
            let s = load_scenario(&scenario)?;
            Ok((json_text(&normalized_document(&s)), output))
        }
        Command::Compute {
            scenario,
            sequence,
            format,
            output,
        } => {
            let s = load_scenario(&scenario)?;
            let seq = parse_sequence(&sequence, &s)?;
            let table = sequence_distribution(&s, &seq).map_err(runtime)?;
            let text = match format {
                Format::Json => json_text(&to_value(&table)?),
                Format::Csv => table_csv(&table)?,
            };
            Ok((text, output))
        }
        Command::Simulate {
            scenario,
            sequence,
            samples,
            seed,
            format,
            output,
        } => {
            let s = load_scenario(&scenario)?;
            let seq = parse_sequence(&sequence, &s)?;
            let config = RunConfig::new(samples, seed).map_err(invalid)?;
            let table = simulate_sequence(&s, &seq, &config).map_err(runtime)?;
            let text = match format {
                Format::Json => {
                    let mut v = to_value(&table)?;
                    v["seed"] = json!(seed);
                    json_text(&v)
                }
                Format::Csv => empirical_csv(&table)?,
            };
            Ok((text, output))
        }
        Command::Effects {
            scenario,
            pair,
            samples,
            seed,
            output,
        } => {
            let s = load_scenario(&scenario)?;
            let (a, b) = parse_pair(&pair)?;
            let report = match (samples, seed) {
                (Some(n), Some(seed)) => {
                    RunConfig::new(n, seed).map_err(invalid)?;
                    empirical_effects(&s, &a, &b, n, seed)
                }
                _ => analytic_effects(&s, &a, &b),
            }
            .map_err(|e| match e {
                GtrError::Lookup { .. } | GtrError::Structural(_) => invalid(e),
                other => runtime(other),
            })?;
            Ok((json_text(&to_value(&report)?), output))
        }
        Command::BornAverage {
            cos_theta,
            trials,
            max_cells,
            seed,
            output,
        } => {
            let config = EnsembleConfig::new(trials, max_cells, seed).map_err(invalid)?;
            if !(-1.0..=1.0).contains(&cos_theta) {
                return Err(Failure::Invalid(format!("--cos-theta {cos_theta} is outside [-1, 1]")));
            }
            let estimate = universal_average_probability(cos_theta, &config).map_err(runtime)?;
            let report = json!({
                "cos_theta": cos_theta,
                "trials": trials,
                "max_cells": max_cells,
                "seed": seed,
                "estimate": to_value(&estimate)?,
                "born": (1.0 + cos_theta) / 2.0,
            });
            Ok((json_text(&report), output))
        }
        Command::Fit {
            problem,
            restarts,
            seed,
            output,
        } => {
            let p = read(&problem)?.parse::<FitProblem>().map_err(invalid)?;
            let restarts = restarts
                .or(p.restarts)
                .ok_or_else(|| Failure::Invalid("restarts must be given by --restarts or the problem file".into()))?;
            let seed = seed
                .or(p.seed)
                .ok_or_else(|| Failure::Invalid("seed must be given by --seed or the problem file".into()))?;
            if restarts == 0 {
                return Err(Failure::Invalid("--restarts must be at least 1".into()));
            }
            let result = fit(&p.spec, &p.target_ab, &p.target_ba, restarts, seed).map_err(runtime)?;
            let mut v = to_value(&result)?;
            v["restarts"] = json!(restarts);
            v["seed"] = json!(seed);
            Ok((json_text(&v), output))
        }
    }
}

fn thread_pool() -> Outcome<Option<rayon::ThreadPool>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| Failure::Invalid(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(runtime)
}

/// Runs the CLI on `argv` (including the program name), writing the report to
/// `out` (or the `--output` file) and diagnostics to `err`. Returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = thread_pool().and_then(|pool| match pool {
        Some(pool) => pool.install(|| execute(cli.command)),
        None => execute(cli.command),
    });
    let written = result.and_then(|(text, output)| match output {
        Some(path) => {
            fs::write(&path, &text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
        }
        None => out.write_all(text.as_bytes()).map_err(runtime),
    });
    match written {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message());
            f.code()
        }
    }
}

/// Runs the CLI against the process's stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
