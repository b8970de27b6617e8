use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cal_core::cal::{analyze, solve_budget, AnalysisReport};
use cal_core::model::{load_model, ModelError, ProgramModel};
use cal_core::sim::{run_matrix_experiment, simulate, CoordinatorKind, Scenario, SimOutcome};
use cal_core::trace::{check_bounds, validate_trace, Trace};

#[derive(Parser)]
#[command(
    name = "caltool",
    version,
    about = "Consistency, availability and latency analysis for federated real-time programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Coordinator {
    Centralized,
    Decentralized,
}

impl From<Coordinator> for CoordinatorKind {
    fn from(c: Coordinator) -> Self {
        match c {
            Coordinator::Centralized => CoordinatorKind::Centralized,
            Coordinator::Decentralized => CoordinatorKind::Decentralized,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Offsets, unavailability, deadline and period verdicts for a topology.
    Analyze {
        topology: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the simulator and emit a trace.
    Simulate {
        topology: PathBuf,
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "centralized")]
        coordinator: Coordinator,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Trace file (JSON lines). Without it the trace goes to stdout and
        /// the summary to stderr.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this many consecutive seeds and print a conformance table
        /// instead of a trace.
        #[arg(long)]
        runs: Option<u64>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Validate a trace and compare it with the analytic bounds.
    CheckTrace {
        topology: PathBuf,
        trace: PathBuf,
        /// Analysis report (JSON) to check against; analyzed afresh if absent.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Latency budget of the channels into one node.
    Budget {
        topology: PathBuf,
        #[arg(long)]
        node: String,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_topology(path: &Path) -> Result<ProgramModel> {
    let text = read(path)?;
    load_model(&text).map_err(|e| match e {
        ModelError::Validation(diags) => {
            let lines: Vec<String> = diags.iter().map(|d| format!("  {d}")).collect();
            anyhow::anyhow!("{}: invalid topology\n{}", path.display(), lines.join("\n"))
        }
        other => anyhow::anyhow!("{}: {other}", path.display()),
    })
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

macro_rules! json {
    ($value:expr) => {
        serde_json::to_string_pretty(&$value).expect("serializable") + "\n"
    };
}

fn stats_csv(o: &SimOutcome) -> String {
    let mut out = String::from(
        "node,unavailability,processing_offset,reactions,stale_progressions,deadline_misses\n",
    );
    for n in &o.stats.nodes {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            n.node,
            n.unavailability,
            n.processing_offset,
            n.reactions,
            n.stale_progressions,
            n.deadline_misses
        ));
    }
    out
}

/// Ok(true) on success, Ok(false) on a failing verdict.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Analyze {
            topology,
            format,
            out,
        } => {
            let m = load_topology(&topology)?;
            let report = analyze(&m)?;
            let text = match format {
                Format::Table => report.to_table(),
                Format::Json => report.to_json() + "\n",
                Format::Csv => report.to_csv(),
            };
            emit(&text, out.as_deref())?;
            Ok(report.passes())
        }
        Command::Simulate {
            topology,
            scenario,
            coordinator,
            seed,
            out,
            runs,
            format,
        } => {
            let m = load_topology(&topology)?;
            let mut s = Scenario::from_json(&read(&scenario)?)
                .with_context(|| scenario.display().to_string())?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let kind = CoordinatorKind::from(coordinator);
            if let Some(runs) = runs {
                let scenarios: Vec<Scenario> = (0..runs)
                    .map(|k| Scenario {
                        seed: s.seed.wrapping_add(k),
                        ..s.clone()
                    })
                    .collect();
                let table = run_matrix_experiment(&m, &scenarios, kind)?;
                let text = match format {
                    Format::Json => json!(table),
                    Format::Table | Format::Csv => table.to_csv(),
                };
                emit(&text, out.as_deref())?;
                return Ok(table.conformant_count() == table.rows.len());
            }
            let outcome = simulate(&m, &s, kind)?;
            let summary = match format {
                Format::Table => outcome.summary_table(),
                Format::Json => outcome.summary_json() + "\n",
                Format::Csv => stats_csv(&outcome),
            };
            let trace = outcome.trace.to_jsonl();
            match out {
                Some(p) => {
                    emit(&trace, Some(&p))?;
                    print!("{summary}");
                }
                None => {
                    print!("{trace}");
                    eprint!("{summary}");
                }
            }
            Ok(outcome.fault_events.is_empty() && outcome.stats.unprocessed == 0)
        }
        Command::CheckTrace {
            topology,
            trace,
            report,
            format,
        } => {
            let m = load_topology(&topology)?;
            let t = Trace::from_jsonl(&read(&trace)?)
                .with_context(|| trace.display().to_string())?
                .bound_to(m.clone());
            let diagnostics = validate_trace(&t);
            if !diagnostics.is_empty() {
                for d in &diagnostics {
                    eprintln!("invalid trace: {d}");
                }
                return Ok(false);
            }
            let report: AnalysisReport = match report {
                Some(p) => serde_json::from_str(&read(&p)?)
                    .with_context(|| format!("{}: not an analysis report", p.display()))?,
                None => analyze(&m)?,
            };
            let verdict = check_bounds(&t, &report)?;
            let text = match format {
                Format::Json => json!(verdict),
                Format::Csv => {
                    let mut s = String::from("violation\n");
                    for v in &verdict.violations {
                        s.push_str(&format!("\"{v}\"\n"));
                    }
                    s
                }
                Format::Table => {
                    let mut s = String::new();
                    for v in &verdict.violations {
                        s.push_str(&format!("{v}\n"));
                    }
                    s.push_str(if verdict.pass {
                        "verdict: PASS\n"
                    } else {
                        "verdict: FAIL\n"
                    });
                    s
                }
            };
            print!("{text}");
            Ok(verdict.pass)
        }
        Command::Budget {
            topology,
            node,
            format,
        } => {
            let m = load_topology(&topology)?;
            if m.node(&node).is_none() {
                bail!("unknown node {node}");
            }
            let b = solve_budget(&m, &node)?;
            let text = match format {
                Format::Table => b.to_table(),
                Format::Json => json!(b),
                Format::Csv => b.to_csv(),
            };
            print!("{text}");
            Ok(b.feasible())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
