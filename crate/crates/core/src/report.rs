//! The full reproduction pipeline and its output files.
//!
//! Every file is rendered in memory first; nothing touches the output
//! directory until all of them rendered cleanly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::calibrate::{calibrate, CalibrationResult};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiments::{cold_start, compare_backends_traced, sweep_backends, BackendRun, ColdStart, ComparisonReport, SweepReport};
use crate::metrics::{cdf, SweepPoint};
use crate::netmodel::PathKind;
use crate::simcore::Micros;

#[derive(Debug, Clone)]
pub struct Reproduction {
    pub seed: u64,
    pub config_digest: String,
    pub calibration: Option<CalibrationResult>,
    pub comparison: ComparisonReport,
    pub sweep: SweepReport,
    pub cold_start: Vec<ColdStart>,
}

/// Calibrate, then run the sequential comparison, the load sweep and the cold-start measurement.
pub fn reproduce(base: &RunConfig, record_trace: bool) -> Result<Reproduction> {
    let fit = calibrate(base)?;
    let cfg = fit.apply(base);
    Ok(Reproduction {
        seed: cfg.seed,
        config_digest: base.digest(),
        comparison: compare_backends_traced(&cfg, record_trace)?,
        sweep: sweep_backends(&cfg)?,
        cold_start: PathKind::ALL
            .iter()
            .map(|&b| cold_start(&cfg, b))
            .collect::<Result<_>>()?,
        calibration: Some(fit),
    })
}

pub const CDF_HEADER: &str = "latency_us,cum_frac";
pub const SWEEP_HEADER: &str = "rate_rps,p50_us,p99_us,reject_frac";

pub fn render_cdf(samples: &[Micros]) -> Result<String> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut out = format!("{CDF_HEADER}\n");
    for (v, f) in cdf(samples) {
        writeln!(out, "{v},{f}").expect("string write");
    }
    Ok(out)
}

pub fn render_sweep(points: &[SweepPoint]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut out = format!("{SWEEP_HEADER}\n");
    for p in points {
        writeln!(out, "{},{},{},{}", p.rate_rps, p.p50_us, p.p99_us, p.reject_frac).expect("string write");
    }
    Ok(out)
}

pub fn render_invocations(run: &BackendRun) -> String {
    let mut buf = Vec::new();
    crate::controlplane::write_invocation_log(&run.records, &mut buf).expect("vec write");
    String::from_utf8(buf).expect("ascii csv")
}

#[derive(Debug, Serialize)]
struct SequentialSummary<'a> {
    count: usize,
    bypass: &'a BackendRun,
    kernel: &'a BackendRun,
    reductions: crate::experiments::Reductions,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    arrivals: &'static str,
    throughput_ratio: Option<f64>,
    comparison_rate_rps: Option<f64>,
    p50_ratio: Option<f64>,
    p99_ratio: Option<f64>,
    bypass_max_unsaturated_rps: Option<f64>,
    kernel_max_unsaturated_rps: Option<f64>,
    bypass_zero_load_p50_us: Micros,
    kernel_zero_load_p50_us: Micros,
}

impl From<&SweepReport> for SweepSummary {
    fn from(s: &SweepReport) -> Self {
        SweepSummary {
            arrivals: "open-loop poisson",
            throughput_ratio: s.throughput_ratio,
            comparison_rate_rps: s.comparison_rate_rps,
            p50_ratio: s.p50_ratio,
            p99_ratio: s.p99_ratio,
            bypass_max_unsaturated_rps: s.bypass.max_unsaturated_rps,
            kernel_max_unsaturated_rps: s.kernel.max_unsaturated_rps,
            bypass_zero_load_p50_us: s.bypass.zero_load_p50_us,
            kernel_zero_load_p50_us: s.kernel.zero_load_p50_us,
        }
    }
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    seed: u64,
    config_digest: &'a str,
    /// False when the run used the configured parameters as-is.
    calibrated: bool,
    calibration: Option<&'a CalibrationResult>,
    sequential: SequentialSummary<'a>,
    sweep: SweepSummary,
    cold_start: &'a [ColdStart],
    trace_digest: Option<String>,
}

pub fn render_summary(r: &Reproduction) -> String {
    let trace_digest = match (&r.comparison.bypass.trace, &r.comparison.kernel.trace) {
        (Some(b), Some(k)) => Some(format!("{}:{}", b.digest(), k.digest())),
        _ => None,
    };
    let s = Summary {
        seed: r.seed,
        config_digest: &r.config_digest,
        calibrated: r.calibration.is_some(),
        calibration: r.calibration.as_ref(),
        sequential: SequentialSummary {
            count: r.comparison.bypass.records.len(),
            bypass: &r.comparison.bypass,
            kernel: &r.comparison.kernel,
            reductions: r.comparison.reductions,
        },
        sweep: SweepSummary::from(&r.sweep),
        cold_start: &r.cold_start,
        trace_digest,
    };
    let mut text = serde_json::to_string_pretty(&s).expect("summary serializes");
    text.push('\n');
    text
}

/// Files of a comparison run: one CDF and one invocation log per backend.
pub fn comparison_files(c: &ComparisonReport) -> Result<Vec<(String, String)>> {
    let mut files = Vec::new();
    for run in [&c.bypass, &c.kernel] {
        files.push((format!("cdf_{}.csv", run.backend), render_cdf(&run.e2e_samples())?));
        files.push((format!("invocations_{}.csv", run.backend), render_invocations(run)));
    }
    Ok(files)
}

pub fn sweep_files(s: &SweepReport) -> Result<Vec<(String, String)>> {
    [&s.bypass, &s.kernel]
        .iter()
        .map(|b| Ok((format!("sweep_{}.csv", b.backend), render_sweep(&b.points)?)))
        .collect()
}

/// Writes `cdf_<backend>.csv`, `sweep_<backend>.csv`, invocation logs and `summary.json`.
pub fn emit_reports(r: &Reproduction, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = comparison_files(&r.comparison)?;
    files.extend(sweep_files(&r.sweep)?);
    files.push(("summary.json".into(), render_summary(r)));
    write_files(dir, &files)
}

pub fn write_files(dir: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    files
        .iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
