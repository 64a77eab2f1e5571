//! Experiment runners behind the `condreg` subcommands.
//!
//! Every runner turns a config into a list of records, one per
//! (configuration, seed). Independent configurations run on a rayon pool
//! capped by `jobs`; results are collected in input order, so the output
//! does not depend on the number of workers.

mod checks;
mod classify;
mod denoise;
mod lsq;

use std::fmt;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::DataError;
use crate::linalg::LinalgError;
use crate::nn::NnError;

pub use checks::{run_checks, CheckItem, CheckReport};
pub use classify::{run_classify, ClassifyConfig, ClassifyRecord};
pub use denoise::{dump_reconstructions, run_denoise, DenoiseConfig, DenoiseRecord, DenoiseRun};
pub use lsq::{run_lsq, solve_lsq, LsqConfig, LsqOutcome, LsqRecord};

/// Bumped whenever a CSV header changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Outcome of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    /// Non-finite values appeared; `step` is the 1-based optimizer step.
    Diverged {
        step: usize,
    },
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::Ok => f.write_str("ok"),
            RunStatus::Diverged { step } => write!(f, "diverged@{step}"),
        }
    }
}

/// A row type with a fixed CSV header.
pub trait CsvRecord {
    const HEADER: &'static [&'static str];

    fn fields(&self) -> Vec<String>;
}

pub fn write_csv<R: CsvRecord>(out: impl io::Write, records: &[R]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(R::HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file<R: CsvRecord>(path: &Path, records: &[R]) -> Result<(), ExperimentError> {
    write_csv(std::fs::File::create(path)?, records)
}

/// Shortest representation that parses back to the same value, in
/// exponent form for very large or very small magnitudes.
pub(crate) fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub(crate) fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>, ExperimentError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if jobs == 0 {
        return Err(ExperimentError::Config("jobs must be at least 1".into()));
    }
    if jobs == 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

pub(crate) fn require(cond: bool, msg: impl Into<String>) -> Result<(), ExperimentError> {
    if cond {
        Ok(())
    } else {
        Err(ExperimentError::Config(msg.into()))
    }
}
