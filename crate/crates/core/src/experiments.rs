//! Paired backend comparisons: sequential latency, load sweep, cold start.

use serde::Serialize;

use crate::config::RunConfig;
use crate::controlplane::{InvocationRecord, Platform};
use crate::error::Result;
use crate::metrics::{max_unsaturated, reduction_pct, Summary, SweepPoint};
use crate::netmodel::PathKind;
use crate::simcore::{Micros, Trace};
use crate::workload::{measure_cold_start, run_open_loop, run_sequential, zero_load_p50};

#[derive(Debug, Clone, Serialize)]
pub struct BackendRun {
    pub backend: PathKind,
    pub e2e: Summary,
    pub exec: Summary,
    #[serde(skip)]
    pub records: Vec<InvocationRecord>,
    #[serde(skip)]
    pub trace: Option<Trace>,
    #[serde(skip)]
    pub sched_trace: Vec<crate::sched::SchedTraceRow>,
}

impl BackendRun {
    pub fn e2e_samples(&self) -> Vec<Micros> {
        self.records.iter().filter_map(InvocationRecord::e2e_us).collect()
    }
}

/// `(kernel - bypass) / kernel` in percent for each statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reductions {
    pub e2e_median_pct: f64,
    pub e2e_p99_pct: f64,
    pub exec_median_pct: f64,
    pub exec_p99_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub bypass: BackendRun,
    pub kernel: BackendRun,
    pub reductions: Reductions,
}

/// Closed-loop run of the configured function on one backend.
pub fn run_backend_sequential(cfg: &RunConfig, backend: PathKind) -> Result<BackendRun> {
    run_backend_sequential_traced(cfg, backend, false)
}

/// As [`run_backend_sequential`], optionally keeping the event and scheduler traces.
pub fn run_backend_sequential_traced(cfg: &RunConfig, backend: PathKind, record: bool) -> Result<BackendRun> {
    let platform_cfg = cfg.platform_for(backend, &cfg.sequential);
    let spec = cfg.function.spec(backend);
    let mut p = Platform::new(platform_cfg, cfg.seed)?
        .with_trace(record)
        .with_sched_trace(record)
        .with_invariant_checks(cfg.check_invariants);
    p.deploy_function(spec.clone())?;
    p.run_to_idle()?;
    let records = run_sequential(&mut p, &spec.name, cfg.sequential.count)?;
    let trace = p.take_trace();
    let sched_trace = p.take_sched_trace();
    let e2e: Vec<Micros> = records.iter().filter_map(InvocationRecord::e2e_us).collect();
    let exec: Vec<Micros> = records.iter().map(|r| r.exec_us).collect();
    Ok(BackendRun {
        backend,
        e2e: Summary::of(&e2e)?,
        exec: Summary::of(&exec)?,
        records,
        trace: record.then_some(trace),
        sched_trace,
    })
}

pub fn reductions(kernel: &BackendRun, bypass: &BackendRun) -> Reductions {
    Reductions {
        e2e_median_pct: reduction_pct(kernel.e2e.p50_us, bypass.e2e.p50_us),
        e2e_p99_pct: reduction_pct(kernel.e2e.p99_us, bypass.e2e.p99_us),
        exec_median_pct: reduction_pct(kernel.exec.p50_us, bypass.exec.p50_us),
        exec_p99_pct: reduction_pct(kernel.exec.p99_us, bypass.exec.p99_us),
    }
}

/// Same seed, same function, both backends.
pub fn compare_backends(cfg: &RunConfig) -> Result<ComparisonReport> {
    compare_backends_traced(cfg, false)
}

pub fn compare_backends_traced(cfg: &RunConfig, record: bool) -> Result<ComparisonReport> {
    let bypass = run_backend_sequential_traced(cfg, PathKind::Bypass, record)?;
    let kernel = run_backend_sequential_traced(cfg, PathKind::KernelStack, record)?;
    let reductions = reductions(&kernel, &bypass);
    Ok(ComparisonReport {
        bypass,
        kernel,
        reductions,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BackendSweep {
    pub backend: PathKind,
    pub zero_load_p50_us: Micros,
    pub points: Vec<SweepPoint>,
    pub max_unsaturated_rps: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub bypass: BackendSweep,
    pub kernel: BackendSweep,
    /// bypass / kernel max unsaturated rate.
    pub throughput_ratio: Option<f64>,
    /// Kernel max unsaturated rate, where the latency ratios are taken.
    pub comparison_rate_rps: Option<f64>,
    /// kernel / bypass at the comparison rate.
    pub p50_ratio: Option<f64>,
    pub p99_ratio: Option<f64>,
}

pub fn run_backend_sweep(cfg: &RunConfig, backend: PathKind) -> Result<BackendSweep> {
    let platform_cfg = cfg.platform_for(backend, &cfg.sweep);
    let spec = cfg.function.spec(backend);
    let points = run_open_loop(&platform_cfg, &spec, &cfg.sweep, cfg.seed, cfg.check_invariants)?;
    Ok(BackendSweep {
        backend,
        zero_load_p50_us: zero_load_p50(&platform_cfg, &spec, cfg.seed)?,
        max_unsaturated_rps: max_unsaturated(&points),
        points,
    })
}

pub fn sweep_backends(cfg: &RunConfig) -> Result<SweepReport> {
    let bypass = run_backend_sweep(cfg, PathKind::Bypass)?;
    let kernel = run_backend_sweep(cfg, PathKind::KernelStack)?;
    let throughput_ratio = match (bypass.max_unsaturated_rps, kernel.max_unsaturated_rps) {
        (Some(b), Some(k)) => Some(b / k),
        _ => None,
    };
    let at = kernel.max_unsaturated_rps;
    let point = |s: &BackendSweep| at.and_then(|r| s.points.iter().find(|p| p.rate_rps == r).copied());
    let (p50_ratio, p99_ratio) = match (point(&kernel), point(&bypass)) {
        (Some(k), Some(b)) if b.p50_us > 0 && b.p99_us > 0 => (
            Some(k.p50_us as f64 / b.p50_us as f64),
            Some(k.p99_us as f64 / b.p99_us as f64),
        ),
        _ => (None, None),
    };
    Ok(SweepReport {
        bypass,
        kernel,
        throughput_ratio,
        comparison_rate_rps: at,
        p50_ratio,
        p99_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ColdStart {
    pub backend: PathKind,
    pub cold_start_us: Micros,
}

pub fn cold_start(cfg: &RunConfig, backend: PathKind) -> Result<ColdStart> {
    let mut p = Platform::new(cfg.platform_for(backend, &cfg.sequential), cfg.seed)?;
    Ok(ColdStart {
        backend,
        cold_start_us: measure_cold_start(&mut p, &cfg.function.spec(backend))?,
    })
}
