//! Load generators: closed-loop sequential invocations, open-loop Poisson
//! sweeps and cold-start timing.

use serde::{Deserialize, Serialize};

use crate::controlplane::{FunctionSpec, InvocationRecord, InvocationStatus, Lookup, Platform, PlatformConfig};
use crate::error::{Error, Result};
use crate::metrics::{percentile, SweepPoint};
use crate::simcore::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceTimeModel {
    Constant { median_us: f64 },
    Lognormal { median_us: f64, sigma: f64 },
}

impl Default for ServiceTimeModel {
    fn default() -> Self {
        ServiceTimeModel::Lognormal {
            median_us: 120.0,
            sigma: 0.25,
        }
    }
}

impl ServiceTimeModel {
    pub fn median_us(&self) -> f64 {
        match *self {
            ServiceTimeModel::Constant { median_us } | ServiceTimeModel::Lognormal { median_us, .. } => median_us,
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            ServiceTimeModel::Constant { .. } => 0.0,
            ServiceTimeModel::Lognormal { sigma, .. } => sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.median_us().is_finite() && self.median_us() > 0.0 && self.sigma().is_finite() && self.sigma() >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad service time model {self:?}")))
        }
    }

    /// Stamp this model onto a function spec.
    pub fn apply(&self, spec: FunctionSpec) -> FunctionSpec {
        FunctionSpec {
            base_service_us: self.median_us(),
            service_sigma: self.sigma(),
            ..spec
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadMode {
    SequentialClosedLoop,
    OpenLoopPoisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub mode: LoadMode,
    pub count: u64,
    pub rates: Vec<f64>,
    pub duration_us: Micros,
    pub payload_bytes: u64,
    /// Fraction of each open-loop run excluded from statistics.
    pub warmup_frac: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec::sequential(100)
    }
}

pub const DEFAULT_RATES: [f64; 16] = [
    500.0, 1_000.0, 2_000.0, 3_000.0, 4_000.0, 5_000.0, 6_000.0, 8_000.0, 10_000.0, 15_000.0, 20_000.0, 30_000.0,
    40_000.0, 50_000.0, 60_000.0, 70_000.0,
];

impl WorkloadSpec {
    pub fn sequential(count: u64) -> Self {
        WorkloadSpec {
            mode: LoadMode::SequentialClosedLoop,
            count,
            rates: Vec::new(),
            duration_us: 0,
            payload_bytes: 600,
            warmup_frac: 0.0,
        }
    }

    pub fn sweep(rates: Vec<f64>, duration_us: Micros) -> Self {
        WorkloadSpec {
            mode: LoadMode::OpenLoopPoisson,
            count: 0,
            rates,
            duration_us,
            payload_bytes: 600,
            warmup_frac: 0.1,
        }
    }

    pub fn default_sweep() -> Self {
        Self::sweep(DEFAULT_RATES.to_vec(), 500_000)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        match self.mode {
            LoadMode::SequentialClosedLoop if self.count < 1 => bad("count must be >= 1"),
            LoadMode::OpenLoopPoisson if self.rates.is_empty() => bad("rates must not be empty"),
            LoadMode::OpenLoopPoisson if self.rates.windows(2).any(|w| w[0] >= w[1]) => {
                bad("rates must be strictly increasing")
            }
            LoadMode::OpenLoopPoisson if self.rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) => {
                bad("rates must be positive")
            }
            LoadMode::OpenLoopPoisson if self.duration_us == 0 => bad("duration_us must be > 0"),
            _ if !(0.0..1.0).contains(&self.warmup_frac) => bad("warmup_frac must be in [0, 1)"),
            _ => Ok(()),
        }
    }

    pub fn warmup_us(&self) -> Micros {
        (self.duration_us as f64 * self.warmup_frac).round() as Micros
    }
}

/// Deploys `spec` and runs until its instances are live.
pub fn warm_platform(config: &PlatformConfig, spec: &FunctionSpec, seed: u64) -> Result<Platform> {
    let mut p = Platform::new(config.clone(), seed)?;
    p.deploy_function(spec.clone())?;
    p.run_to_idle()?;
    Ok(p)
}

/// Issues `count` invocations back to back; each starts when the previous one returns.
pub fn run_sequential(platform: &mut Platform, function: &str, count: u64) -> Result<Vec<InvocationRecord>> {
    let first = platform.invocations().len();
    platform.start_closed_loop(function, count)?;
    platform.run_to_idle()?;
    let records = platform.invocations()[first..].to_vec();
    if records.len() as u64 != count {
        return Err(Error::Invariant(format!("closed loop issued {} of {count}", records.len())));
    }
    if let Some(bad) = records.iter().find(|r| !r.is_ok()) {
        return Err(Error::Invariant(format!("invocation {} ended {}", bad.id, bad.status.as_str())));
    }
    Ok(records)
}

/// Median end-to-end latency of an otherwise idle platform.
pub fn zero_load_p50(config: &PlatformConfig, spec: &FunctionSpec, seed: u64) -> Result<Micros> {
    let mut p = warm_platform(config, spec, seed)?;
    let recs = run_sequential(&mut p, &spec.name, 100)?;
    let e2e: Vec<Micros> = recs.iter().filter_map(InvocationRecord::e2e_us).collect();
    percentile(&e2e, 50.0)
}

/// One open-loop run at `rate_rps` on a fresh platform.
pub fn run_rate(
    config: &PlatformConfig,
    spec: &FunctionSpec,
    workload: &WorkloadSpec,
    rate_rps: f64,
    zero_load_p50: Micros,
    seed: u64,
    check_invariants: bool,
) -> Result<SweepPoint> {
    let mut p = warm_platform(config, spec, seed)?.with_invariant_checks(check_invariants);
    let start = p.now();
    let first = p.invocations().len();
    p.start_open_loop(&spec.name, rate_rps, workload.duration_us, &format!("workload/{rate_rps}"))?;
    p.run_to_idle()?;
    let cutoff = start + workload.warmup_us();
    let measured: Vec<&InvocationRecord> = p.invocations()[first..].iter().filter(|r| r.submit_t >= cutoff).collect();
    let offered = measured.len() as u64;
    let rejected = measured
        .iter()
        .filter(|r| r.status == InvocationStatus::OverloadRejected)
        .count() as u64;
    let e2e: Vec<Micros> = measured.iter().filter(|r| r.is_ok()).filter_map(|r| r.e2e_us()).collect();
    let (p50_us, p99_us) = if e2e.is_empty() {
        (0, 0)
    } else {
        (percentile(&e2e, 50.0)?, percentile(&e2e, 99.0)?)
    };
    let reject_frac = if offered == 0 { 0.0 } else { rejected as f64 / offered as f64 };
    Ok(SweepPoint {
        rate_rps,
        p50_us,
        p99_us,
        reject_frac,
        saturated: reject_frac > 0.01 || p99_us > 50 * zero_load_p50 || e2e.is_empty(),
        completed: e2e.len() as u64,
        offered,
    })
}

/// Open-loop sweep over `workload.rates`; each rate is an independent simulation.
pub fn run_open_loop(
    config: &PlatformConfig,
    spec: &FunctionSpec,
    workload: &WorkloadSpec,
    seed: u64,
    check_invariants: bool,
) -> Result<Vec<SweepPoint>> {
    workload.validate()?;
    let z = zero_load_p50(config, spec, seed)?;
    let results: Vec<Result<SweepPoint>> = std::thread::scope(|s| {
        let handles: Vec<_> = workload
            .rates
            .iter()
            .map(|&rate| s.spawn(move || run_rate(config, spec, workload, rate, z, seed, check_invariants)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invariant("sweep worker panicked".into()))))
            .collect()
    });
    results.into_iter().collect()
}

/// Time from the deploy request until the instance can serve.
pub fn measure_cold_start(platform: &mut Platform, spec: &FunctionSpec) -> Result<Micros> {
    let t0 = platform.now();
    platform.deploy_function(spec.clone())?;
    loop {
        if let Lookup::Live(_) = platform.manager().lookup(&spec.name) {
            return Ok(platform.now() - t0);
        }
        let Some(next) = platform.next_event_time() else {
            return Err(Error::Invariant(format!("{} never became ready", spec.name)));
        };
        platform.run_until(next)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::PathKind;

    fn constant(backend: PathKind) -> FunctionSpec {
        ServiceTimeModel::Constant { median_us: 100.0 }.apply(FunctionSpec::new("aes", 1.0, backend))
    }

    #[test]
    fn closed_loop_constant_service_is_flat() {
        let mut p = warm_platform(&PlatformConfig::default(), &constant(PathKind::Bypass), 1).unwrap();
        let recs = run_sequential(&mut p, "aes", 100).unwrap();
        assert_eq!(recs.len(), 100);
        assert!(recs.iter().all(|r| r.e2e_us() == recs[0].e2e_us()));
        for w in recs.windows(2) {
            assert!(w[1].submit_t >= w[0].complete_t.unwrap());
        }
    }

    #[test]
    fn single_closed_loop_request_decomposes() {
        let mut p = warm_platform(&PlatformConfig::default(), &constant(PathKind::Bypass), 1).unwrap();
        let r = &run_sequential(&mut p, "aes", 1).unwrap()[0];
        assert_eq!(r.e2e_us().unwrap(), r.hops_us() + r.exec_us + r.queue_us);
        // an idle instance waits at most one tick for its core
        assert!(r.queue_us < p.config().scheduler.tick_us);
    }

    #[test]
    fn bypass_cold_start() {
        let mut p = Platform::new(PlatformConfig::default(), 1).unwrap();
        assert_eq!(measure_cold_start(&mut p, &constant(PathKind::Bypass)).unwrap(), 3_400);
    }

    #[test]
    fn container_cold_start_echoes_config() {
        let cfg = PlatformConfig {
            backend: PathKind::KernelStack,
            ..PlatformConfig::default()
        };
        let mut p = Platform::new(cfg, 1).unwrap();
        assert_eq!(measure_cold_start(&mut p, &constant(PathKind::KernelStack)).unwrap(), 250_000);
    }

    #[test]
    fn cold_start_is_shift_invariant() {
        let mut p = Platform::new(PlatformConfig::default(), 1).unwrap();
        p.run_until(12_345).unwrap();
        assert_eq!(measure_cold_start(&mut p, &constant(PathKind::Bypass)).unwrap(), 3_400);
    }

    #[test]
    fn saturates_above_capacity() {
        // one core at 100 us per request caps out near 10k rps
        let spec = constant(PathKind::Bypass).with_max_cores(1);
        let w = WorkloadSpec::sweep(vec![20_000.0], 200_000);
        let z = zero_load_p50(&PlatformConfig::default(), &spec, 3).unwrap();
        let pt = run_rate(&PlatformConfig::default(), &spec, &w, 20_000.0, z, 3, false).unwrap();
        assert!(pt.saturated, "{pt:?}");
    }

    #[test]
    fn light_load_matches_zero_load() {
        let spec = constant(PathKind::Bypass);
        let w = WorkloadSpec::sweep(vec![100.0], 200_000);
        let z = zero_load_p50(&PlatformConfig::default(), &spec, 3).unwrap();
        let pt = run_rate(&PlatformConfig::default(), &spec, &w, 100.0, z, 3, true).unwrap();
        assert!(!pt.saturated);
        assert_eq!(pt.p50_us, z);
    }

    #[test]
    fn workload_validation() {
        assert!(WorkloadSpec::sequential(0).validate().is_err());
        assert!(WorkloadSpec::sweep(vec![2.0, 1.0], 10).validate().is_err());
        assert!(WorkloadSpec::sweep(vec![1.0, 2.0], 10).validate().is_ok());
    }
}
