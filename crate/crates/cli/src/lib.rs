//! Orchestration behind the `kobalab` binary: runs the construction and the
//! certification suites and writes `params.json`, `report.json`,
//! `blowup.csv` and the decay chart.

pub mod config;
pub mod output;
pub mod pipeline;

use std::path::Path;

pub use config::{Perturb, RunConfig};
pub use pipeline::{Plan, Which};

/// Failures mapped onto the exit-code contract.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("{0}")]
    Core(#[from] kobalab::Error),
    #[error("I/O error on {0}: {1}")]
    Io(String, String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Construction(_) | CliError::Core(_) => 2,
            CliError::Io(..) => 3,
        }
    }
}

/// Exit codes: every check passed / some check failed.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;

pub fn cmd_params(cfg: &RunConfig) -> Result<i32, CliError> {
    let table = pipeline::build(cfg)?;
    output::write_atomic(&cfg.out, "params.json", (table.to_json() + "\n").as_bytes())?;
    Ok(EXIT_PASS)
}

pub fn cmd_verify(cfg: &RunConfig, which: Which, plan: Plan) -> Result<i32, CliError> {
    let art = pipeline::verify(cfg, which, plan)?;
    let dir: &Path = &cfg.out;
    output::write_atomic(dir, "params.json", art.params_json.as_bytes())?;
    output::write_atomic(dir, "report.json", art.report_json.as_bytes())?;
    output::write_atomic(dir, "blowup.csv", art.blowup_csv.as_bytes())?;
    for c in art.report.rollup.checks.iter().filter(|c| !c.pass) {
        log::error!("FAILED: {}", c.name);
    }
    Ok(if art.report.rollup.pass { EXIT_PASS } else { EXIT_FAIL })
}

pub fn cmd_sweep(cfg: &RunConfig, n_list: &[usize]) -> Result<i32, CliError> {
    let rows = pipeline::sweep(cfg, n_list, Plan::default().disc_sampling)?;
    let csv = pipeline::sweep_csv(&rows, cfg.precision_bits);
    let points: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|r| (output::log10(&r.delta), output::log10(&r.bound), output::log10(&r.baseline)))
        .collect();
    output::write_atomic(&cfg.out, "decay.csv", csv.as_bytes())?;
    output::write_atomic(&cfg.out, "decay.svg", output::decay_svg(&points).as_bytes())?;
    Ok(if rows.iter().all(|r| r.pass) { EXIT_PASS } else { EXIT_FAIL })
}
