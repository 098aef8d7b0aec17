//! Command-line harness around `remia_core`: one subcommand per metric, each
//! writing a self-describing JSON report, plus parameter sweeps (CSV) and
//! cross-metric rank correlation over saved reports.

pub mod args;
pub mod commands;
pub mod genflag;
pub mod report;

use args::{Cli, Command, CommonArgs, DcrArgs, DomiasArgs, QualityArgs, RemiaArgs};
use report::{AuditReport, CliError};

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    if jobs == Some(0) {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn in_pool<T: Send>(common: &CommonArgs, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    thread_pool(common.jobs)?.install(f)
}

fn save(report: AuditReport, out: &std::path::Path) -> Result<String, CliError> {
    report.save(out)?;
    Ok(format!("{} -> {}", report.summary(), out.display()))
}

fn from_echo<T: serde::de::DeserializeOwned>(report: &AuditReport) -> Result<T, CliError> {
    serde_json::from_value(report.config.args.clone())
        .map_err(|e| CliError::Validation(format!("config echo does not match '{}': {e}", report.config.command)))
}

/// Executes a parsed command line; returns the one-line summary.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Remia(a) => save(in_pool(&a.common, || commands::cmd_remia(&a))?, &a.out),
        Command::Dcr(a) => save(in_pool(&a.common, || commands::cmd_dcr(&a))?, &a.out),
        Command::Domias(a) => save(in_pool(&a.common, || commands::cmd_domias(&a))?, &a.out),
        Command::Quality(a) => save(in_pool(&a.common, || commands::cmd_quality(&a))?, &a.out),
        Command::Sweep(a) => {
            let rows = in_pool(&a.common, || commands::cmd_sweep(&a))?;
            commands::write_sweep_csv(&rows, &a.out)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            Ok(format!(
                "sweep {} over {} points ({failed} failed) -> {}",
                a.metric.name(),
                rows.len(),
                a.out.display()
            ))
        }
        Command::Compare(a) => {
            let cmp = commands::cmd_compare(&a)?;
            let text = serde_json::to_string_pretty(&cmp).expect("comparison serializes") + "\n";
            match &a.out {
                Some(path) => {
                    std::fs::write(path, &text).map_err(|source| CliError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    Ok(format!("compared {} metrics -> {}", cmp.metrics.len(), path.display()))
                }
                None => Ok(text.trim_end().to_string()),
            }
        }
        Command::Rerun(a) => {
            let report = AuditReport::load(&a.report)?;
            let command = match report.config.command.as_str() {
                "remia" => Command::Remia(RemiaArgs { out: a.out, ..from_echo(&report)? }),
                "dcr" => Command::Dcr(DcrArgs { out: a.out, ..from_echo(&report)? }),
                "domias" => Command::Domias(DomiasArgs { out: a.out, ..from_echo(&report)? }),
                "quality" => Command::Quality(QualityArgs { out: a.out, ..from_echo(&report)? }),
                other => return Err(CliError::Validation(format!("cannot rerun command '{other}'"))),
            };
            run(Cli { command })
        }
    }
}
