//! `telegov`: run scenarios, sweeps, attack campaigns and theorem
//! validations; verify audit logs; release quarantined agents.
//!
//! Exit codes: 0 success, 1 threshold failure or tampered log, 2 usage,
//! configuration or I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use telegov_core::io::{reset_breaker_files, to_json_bytes, write_atomic, EscalationStateFile};
use telegov_core::model::{AgentId, FailMode};
use telegov_core::montecarlo::{run_suite, SuiteConfig};
use telegov_core::plane::audit::{verify_file, ChainReport};
use telegov_core::sim::attack::{attack_campaign, AttackKind, CampaignConfig};
use telegov_core::sim::runner::{directory, execute_run, run_scenario_with};
use telegov_core::sim::{sensitivity_sweep, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "telegov",
    version,
    about = "Governance enforcement simulator for signed multi-agent telemetry"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report path (JSON). Printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set escalation.k=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Attack {
    Forgery,
    Replay,
    Omission,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    FailClosed,
    FailOpen,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigKind {
    Scenario,
    Campaign,
    Theorems,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its metrics report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Per-run CSV table.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Directory receiving one audit log per run (`run-<i>.audit`).
        #[arg(long)]
        audit_dir: Option<PathBuf>,
        /// Escalation state of the last run, for `breaker-reset`.
        #[arg(long)]
        state_out: Option<PathBuf>,
    },
    /// Repeat a scenario across injection rates.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated injection rates.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.001,0.01,0.05,0.075,0.1"
        )]
        rates: Vec<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run an attack campaign against the trusted plane.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: Attack,
        /// Force one fail mode on every tier.
        #[arg(long, value_enum)]
        fail_mode: Option<Mode>,
    },
    /// Monte Carlo validation of the escalation, determinism and
    /// false-quarantine properties.
    ValidateTheorems {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute an audit log's Merkle chain.
    AuditVerify {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Operator release of a quarantined agent.
    BreakerReset {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        agent: String,
        #[arg(long)]
        token: String,
        /// Simulation time of the reset; defaults to the latest recorded
        /// violation of the agent.
        #[arg(long)]
        now: Option<f64>,
    },
    /// Print a default config.
    EmitConfig {
        #[arg(long, value_enum, default_value = "scenario")]
        kind: ConfigKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(String),
    Io(String),
    Threshold(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Threshold(_) => 1,
            _ => 2,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Config(m) => ("config", m),
            Failure::Io(m) => ("io", m),
            Failure::Threshold(m) => ("threshold", m),
        };
        let msg = msg
            .replace('\\', "\\\\")
            .replace('"', "\\\"")
            .replace('\n', " ");
        format!("telegov: error kind={kind} message=\"{msg}\"")
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value), Failure> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("override `{raw}` is not KEY=VALUE")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Failure::Usage(format!("override key `{key}` is malformed")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn apply_override(
    root: &mut toml::Value,
    path: &[String],
    value: toml::Value,
) -> Result<(), Failure> {
    let mut cur = root;
    for (i, k) in path.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Failure::Config(format!("`{}` is not a table", path[..i].join("."))))?;
        if i + 1 == path.len() {
            table.insert(k.clone(), value);
            return Ok(());
        }
        cur = table
            .entry(k.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Ok(())
}

/// Defaults, merged with the config file, then the overrides.
fn load<T: Serialize + DeserializeOwned + Default>(common: &Common) -> Result<T, Failure> {
    let mut value = toml::Value::try_from(T::default()).expect("defaults serialize");
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let file: toml::Value = toml::from_str(&text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        merge(&mut value, file);
    }
    for raw in &common.overrides {
        let (path, v) = parse_override(raw)?;
        apply_override(&mut value, &path, v)?;
    }
    value
        .try_into()
        .map_err(|e: toml::de::Error| Failure::Config(e.to_string()))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => write_atomic(p, bytes).map_err(|e| io_err(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| Failure::Io(e.to_string()))
        }
    }
}

fn scenario(common: &Common) -> Result<ScenarioConfig, Failure> {
    let c: ScenarioConfig = load(common)?;
    c.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(c)
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            common,
            csv,
            audit_dir,
            state_out,
        } => {
            let config = scenario(&common)?;
            let pack = telegov_core::rules::default_rule_pack();
            let report =
                run_scenario_with(&config, &pack).map_err(|e| Failure::Config(e.to_string()))?;
            if audit_dir.is_some() || state_out.is_some() {
                if let Some(dir) = &audit_dir {
                    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
                }
                let mut last = None;
                for r in 0..config.runs {
                    let out = execute_run(&config, &pack, r)
                        .map_err(|e| Failure::Config(e.to_string()))?;
                    if let Some(dir) = &audit_dir {
                        let p = dir.join(format!("run-{r}.audit"));
                        write_atomic(&p, &out.audit).map_err(|e| io_err(&p, e))?;
                    }
                    last = Some(out.states);
                }
                if let Some(p) = &state_out {
                    let baseline = directory(&config).capabilities;
                    let file = EscalationStateFile {
                        escalation: config.escalation.clone(),
                        baseline,
                        agents: last.unwrap_or_default(),
                    };
                    write_atomic(p, &to_json_bytes(&file)).map_err(|e| io_err(p, e))?;
                }
            }
            if let Some(p) = &csv {
                write_atomic(p, report.to_csv().as_bytes()).map_err(|e| io_err(p, e))?;
            }
            emit(common.out.as_deref(), &to_json_bytes(&report))
        }
        Command::Sweep { common, rates, csv } => {
            if rates.is_empty() || rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Failure::Usage("rates must lie in [0, 1]".into()));
            }
            let config = scenario(&common)?;
            let table =
                sensitivity_sweep(&config, &rates).map_err(|e| Failure::Config(e.to_string()))?;
            if let Some(p) = &csv {
                write_atomic(p, table.to_csv().as_bytes()).map_err(|e| io_err(p, e))?;
            }
            emit(common.out.as_deref(), &to_json_bytes(&table))?;
            if !table.level_strictly_increasing() {
                return Err(Failure::Threshold(
                    "average escalation level does not strictly increase with injection rate"
                        .into(),
                ));
            }
            Ok(())
        }
        Command::Attack {
            common,
            kind,
            fail_mode,
        } => {
            let campaign: CampaignConfig = load(&common)?;
            campaign
                .scenario
                .validate()
                .map_err(|e| Failure::Config(e.to_string()))?;
            let kind = match kind {
                Attack::Forgery => AttackKind::Forgery,
                Attack::Replay => AttackKind::Replay,
                Attack::Omission => AttackKind::Omission,
            };
            let mode = fail_mode.map(|m| match m {
                Mode::FailClosed => FailMode::FailClosed,
                Mode::FailOpen => FailMode::FailOpen,
            });
            let report = attack_campaign(&campaign, kind, mode)
                .map_err(|e| Failure::Config(e.to_string()))?;
            emit(common.out.as_deref(), &to_json_bytes(&report))
        }
        Command::ValidateTheorems {
            common,
            trials,
            seed,
        } => {
            let mut config: SuiteConfig = load(&common)?;
            if let Some(t) = trials {
                config.trials = t;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            if config.trials == 0 {
                return Err(Failure::Config("trials must be at least 1".into()));
            }
            let report = run_suite(&config);
            emit(common.out.as_deref(), &to_json_bytes(&report))?;
            let failed: Vec<&str> = report
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.name.as_str())
                .collect();
            if !failed.is_empty() {
                return Err(Failure::Threshold(format!(
                    "failed checks: {}",
                    failed.join(",")
                )));
            }
            Ok(())
        }
        Command::AuditVerify { log, out } => {
            let report = verify_file(&log).map_err(|e| io_err(&log, e))?;
            let line = match &report {
                ChainReport::Ok { records, root } => {
                    format!("status=ok records={records} root={root}")
                }
                ChainReport::Tampered { index, reason } => {
                    format!("status=tampered first_tampered_index={index} reason=\"{reason}\"")
                }
                ChainReport::Truncated { index, offset } => {
                    format!("status=truncated index={index} offset={offset}")
                }
                ChainReport::BadHeader { reason } => {
                    format!("status=bad_header reason=\"{reason}\"")
                }
            };
            println!("{line}");
            if let Some(p) = &out {
                write_atomic(p, &to_json_bytes(&report)).map_err(|e| io_err(p, e))?;
            }
            if report.is_ok() {
                Ok(())
            } else {
                Err(Failure::Threshold(line))
            }
        }
        Command::BreakerReset {
            state,
            log,
            agent,
            token,
            now,
        } => {
            let agent = AgentId::try_from(agent).map_err(|e| Failure::Usage(e.to_string()))?;
            if token.is_empty() {
                return Err(Failure::Usage("operator token must be non-empty".into()));
            }
            let now = match now {
                Some(t) => t,
                None => latest_violation(&state, &agent)?,
            };
            let report = reset_breaker_files(&state, &log, &agent, &token, now).map_err(|e| {
                use telegov_core::io::IoError;
                match e {
                    IoError::Io(err) => io_err(&state, err),
                    other => Failure::Config(other.to_string()),
                }
            })?;
            if !report.reset {
                eprintln!(
                    "telegov: warning kind=not_quarantined agent={}",
                    report.agent
                );
            }
            emit(None, &to_json_bytes(&report))
        }
        Command::EmitConfig { kind, out } => {
            let text = match kind {
                ConfigKind::Scenario => ScenarioConfig::default().to_toml(),
                ConfigKind::Campaign => {
                    toml::to_string_pretty(&CampaignConfig::default()).expect("defaults serialize")
                }
                ConfigKind::Theorems => {
                    toml::to_string_pretty(&SuiteConfig::default()).expect("defaults serialize")
                }
            };
            emit(out.as_deref(), text.as_bytes())
        }
    }
}

fn latest_violation(state: &Path, agent: &AgentId) -> Result<f64, Failure> {
    let bytes = std::fs::read(state).map_err(|e| io_err(state, e))?;
    let file: EscalationStateFile =
        serde_json::from_slice(&bytes).map_err(|e| Failure::Config(e.to_string()))?;
    Ok(file
        .agents
        .iter()
        .find(|s| &s.agent == agent)
        .and_then(|s| s.history.back().map(|r| r.time))
        .unwrap_or(0.0))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            let f = Failure::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", f.line());
            return ExitCode::from(f.code());
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.code())
        }
    }
}
