//! Command-line front end.
//!
//! Every experiment command writes `<command>.csv` and `<command>.manifest`
//! into the output directory (`--out`, else `$RATEALLOC_OUT_DIR`, else
//! `out`). The manifest is itself a config file naming the command;
//! `ratealloc replay <manifest>` regenerates the CSV byte for byte.
//!
//! Exit codes: 0 success, 1 selfcheck failure, 2 invalid input, 3 numeric
//! failure.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{RawConfig, Settings};
use crate::error::{Error, Result};
use crate::fairness::{adapt_weights, FairnessReport};
use crate::selfcheck::{self, SUITES};
use crate::sim::{sweep, SimStats};

/// Version of the CSV and manifest layout.
pub const ARTIFACT_VERSION: &str = "1";

pub const OUT_DIR_ENV: &str = "RATEALLOC_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_SELFCHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ratealloc", version, about = "Utility-based time sharing and power control simulator")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimal time sharing at constant power.
    TsSweep(ExperimentArgs),
    /// Gradient scheduling, with matched time-sharing rows.
    GsSweep(ExperimentArgs),
    /// Joint time sharing and power control, with matched time-sharing rows.
    Jtpc(ExperimentArgs),
    /// Quantized time sharing with limited feedback, with matched
    /// time-sharing rows.
    Qtsl(ExperimentArgs),
    /// The policy named by the `policy` key.
    Run(ExperimentArgs),
    /// Weight adaptation toward equal time-average utilities.
    Fairness(ExperimentArgs),
    /// Oracle-equivalence suites.
    Selfcheck(SelfcheckArgs),
    /// Reruns the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// TOML config file of top-level keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set frames=1000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelfcheckArgs {
    /// Run a single suite.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
    suite: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Instances per suite (default depends on the suite).
    #[arg(long)]
    instances: Option<usize>,
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
}

fn exit_code(err: &Error) -> i32 {
    match err {
        e if e.is_config() => EXIT_CONFIG,
        Error::AtFrame { source, .. } if source.is_config() => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::TsSweep(a) => experiment("ts-sweep", a),
        Command::GsSweep(a) => experiment("gs-sweep", a),
        Command::Jtpc(a) => experiment("jtpc", a),
        Command::Qtsl(a) => experiment("qtsl", a),
        Command::Run(a) => experiment("run", a),
        Command::Fairness(a) => experiment("fairness", a),
        Command::Selfcheck(a) => selfcheck(a),
        Command::Replay { manifest, out } => {
            let raw = RawConfig::load(&manifest)?;
            let Some(command) = raw.metadata("command").map(str::to_string) else {
                return Err(crate::error::ConfigError::new(
                    &manifest.display().to_string(),
                    None,
                    Some("command"),
                    "manifest does not name a command",
                )
                .into());
            };
            if !EXPERIMENTS.contains(&command.as_str()) {
                return Err(crate::error::ConfigError::new(
                    &manifest.display().to_string(),
                    None,
                    Some("command"),
                    format!("cannot replay `{command}`"),
                )
                .into());
            }
            run_experiments(&command, raw, &out_dir(out))
        }
    }
}

const EXPERIMENTS: &[&str] = &["ts-sweep", "gs-sweep", "jtpc", "qtsl", "run", "fairness"];

fn experiment(command: &str, args: ExperimentArgs) -> Result<i32> {
    let mut raw = match &args.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::empty("<defaults>"),
    };
    for s in &args.set {
        raw.set(s)?;
    }
    run_experiments(command, raw, &out_dir(args.out))
}

/// Policies evaluated per sweep point, time sharing first as the matched
/// reference.
fn policies(command: &str, settings: &Settings) -> Vec<String> {
    match command {
        "ts-sweep" => vec!["ts".into()],
        "gs-sweep" => vec!["ts".into(), "gs".into()],
        "jtpc" => vec!["ts".into(), "jtpc".into()],
        "qtsl" => vec!["ts".into(), "qtsl".into()],
        _ => vec![settings.policy.clone()],
    }
}

fn run_experiments(command: &str, raw: RawConfig, out: &Path) -> Result<i32> {
    let resolved = raw.resolved()?;
    let raw_points = resolved.expand()?;
    let points: Vec<Settings> = raw_points.iter().map(RawConfig::settings).collect::<Result<_>>()?;

    let csv_name = format!("{command}.csv");
    let csv = if command == "fairness" {
        if points.len() > 1 {
            return Err(crate::error::ConfigError::new("config", None, Some("sweep_key"), "fairness does not take a sweep").into());
        }
        match fairness_csv(&points[0]) {
            Ok(text) => text,
            Err(Error::FairnessCap { spread, report }) => {
                write_outputs(out, command, &csv_name, &fairness_table(&report)?, &resolved)?;
                return Err(Error::FairnessCap { spread, report });
            }
            Err(e) => return Err(e),
        }
    } else {
        let mut rows = Vec::new();
        for (index, (s, raw)) in points.iter().zip(&raw_points).enumerate() {
            for policy in policies(command, s) {
                let cfg = s.experiment_with(&policy);
                raw.check(&cfg)?;
                rows.push((index, policy, s, cfg));
            }
        }
        let configs: Vec<_> = rows.iter().map(|r| r.3.clone()).collect();
        let results = sweep(&configs);
        let mut failures = Vec::new();
        for ((index, policy, _, _), res) in rows.iter().zip(&results) {
            if let Err(e) = res {
                failures.push(format!("point {index} ({policy}): {e}"));
            }
        }
        if !failures.is_empty() {
            for f in &failures {
                eprintln!("error: {f}");
            }
            let first = results.into_iter().find_map(|r| r.err()).expect("a failure");
            return Err(first);
        }
        let stats: Vec<SimStats> = results.into_iter().map(|r| r.expect("checked")).collect();
        let keyed: Vec<(usize, &str, &Settings)> = rows.iter().map(|(i, p, s, _)| (*i, p.as_str(), *s)).collect();
        experiment_table(&keyed, &stats)?
    };
    write_outputs(out, command, &csv_name, &csv, &resolved)?;
    println!("wrote {}", out.join(&csv_name).display());
    Ok(EXIT_OK)
}

fn write_outputs(out: &Path, command: &str, csv_name: &str, csv: &str, resolved: &RawConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(csv_name), csv)?;
    let manifest = resolved.to_text(&[
        ("command", command.to_string()),
        ("artifact_version", ARTIFACT_VERSION.to_string()),
        ("output", csv_name.to_string()),
    ]);
    std::fs::write(out.join(format!("{command}.manifest")), manifest)?;
    Ok(())
}

fn cell(v: &[f64]) -> String {
    if v.iter().all(|x| *x == v[0]) {
        v[0].to_string()
    } else {
        v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
    }
}

/// Header: key columns, aggregate metrics, then per-user mean rate and rate
/// standard deviation for users `1..=N_max`. Cells past a row's user count
/// are empty.
pub const EXPERIMENT_COLUMNS: &[&str] = &[
    "point",
    "policy",
    "users",
    "mean_snr_db",
    "snr_gap_db",
    "concavity",
    "power_budget",
    "alpha",
    "delta",
    "slots",
    "feedback_bits",
    "frames",
    "seed",
    "taur",
    "mean_rate",
    "rate_std",
    "degenerate_frames",
];

fn to_csv(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(std::io::Error::from)?;
    for row in rows {
        w.write_record(&row).map_err(std::io::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn experiment_table(rows: &[(usize, &str, &Settings)], stats: &[SimStats]) -> Result<String> {
    let max_users = rows.iter().map(|r| r.2.users).max().unwrap_or(0);
    let mut header: Vec<String> = EXPERIMENT_COLUMNS.iter().map(|c| c.to_string()).collect();
    header.extend((1..=max_users).map(|i| format!("mean_rate_user_{i}")));
    header.extend((1..=max_users).map(|i| format!("rate_std_user_{i}")));
    let records = rows
        .iter()
        .zip(stats)
        .map(|((index, policy, s), st)| {
            let mut rec = vec![
                index.to_string(),
                policy.to_string(),
                s.users.to_string(),
                cell(&s.mean_snr_db),
                s.snr_gap_db.to_string(),
                cell(&s.concavity),
                s.power_budget.to_string(),
                s.alpha.to_string(),
                s.delta.to_string(),
                s.slots.to_string(),
                s.feedback_bits.to_string(),
                s.frames.to_string(),
                s.seed.to_string(),
                st.taur.to_string(),
                st.avg_mean_rate().to_string(),
                st.avg_rate_std().to_string(),
                st.degenerate_frames.to_string(),
            ];
            for per_user in [&st.mean_rate, &st.rate_std] {
                rec.extend((0..max_users).map(|i| per_user.get(i).map(f64::to_string).unwrap_or_default()));
            }
            rec
        })
        .collect();
    to_csv(header, records)
}

fn fairness_csv(s: &Settings) -> Result<String> {
    let cfg = s.experiment();
    let link = cfg.link()?;
    let (_, report) = adapt_weights(&cfg.model()?, &cfg.utilities()?, &link, &s.fairness())?;
    fairness_table(&report)
}

/// One row per weight iterate.
fn fairness_table(report: &FairnessReport) -> Result<String> {
    let n = report.utilities.len();
    let mut header: Vec<String> = ["iteration", "spread", "common"].iter().map(|c| c.to_string()).collect();
    header.extend((1..=n).map(|i| format!("weight_user_{i}")));
    header.extend((1..=n).map(|i| format!("utility_user_{i}")));
    let records = report
        .history
        .iter()
        .enumerate()
        .map(|(j, step)| {
            let common = step.utilities.iter().sum::<f64>() / n as f64;
            let mut rec = vec![j.to_string(), step.spread.to_string(), common.to_string()];
            rec.extend(step.weights.iter().chain(&step.utilities).map(f64::to_string));
            rec
        })
        .collect();
    to_csv(header, records)
}

fn selfcheck(args: SelfcheckArgs) -> Result<i32> {
    let suites: Vec<&str> = match &args.suite {
        Some(s) => vec![s.as_str()],
        None => SUITES.to_vec(),
    };
    let mut all_pass = true;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for suite in suites {
        let instances = args.instances.unwrap_or_else(|| selfcheck::default_instances(suite));
        let report = selfcheck::run_suite(suite, args.seed, instances)?;
        all_pass &= report.passed();
        let _ = writeln!(lock, "{report}");
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_SELFCHECK })
}
