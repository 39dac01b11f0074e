//! Fits the kernel-path overhead parameters to target latency reductions.
//!
//! Coordinate search: each free parameter is nudged up and down by its step;
//! improving moves are kept, and all steps halve after a sweep with no
//! improvement. The objective is the sum of squared residuals, each scaled by
//! its tolerance band.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiments::{reductions, run_backend_sequential, BackendRun, Reductions};
use crate::netmodel::{ComputeParams, PathKind, PathParams};
use crate::simcore::Dist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    E2eMedian,
    E2eP99,
    ExecMedian,
    ExecP99,
}

impl Metric {
    pub fn of(self, r: &Reductions) -> f64 {
        match self {
            Metric::E2eMedian => r.e2e_median_pct,
            Metric::E2eP99 => r.e2e_p99_pct,
            Metric::ExecMedian => r.exec_median_pct,
            Metric::ExecP99 => r.exec_p99_pct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub metric: Metric,
    /// Reduction in percent.
    pub value: f64,
    /// Accepted deviation in percentage points.
    pub band: f64,
}

pub fn default_targets() -> Vec<Target> {
    vec![
        Target {
            metric: Metric::E2eMedian,
            value: 37.33,
            band: 10.0,
        },
        Target {
            metric: Metric::E2eP99,
            value: 63.42,
            band: 10.0,
        },
        Target {
            metric: Metric::ExecMedian,
            value: 35.3,
            band: 5.0,
        },
        Target {
            metric: Metric::ExecP99,
            value: 81.0,
            band: 10.0,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    InterruptCost,
    CtxSwitchCost,
    JitterMean,
    MuxFactor,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::InterruptCost, Param::CtxSwitchCost, Param::JitterMean, Param::MuxFactor];

    fn get(self, path: &PathParams, compute: &ComputeParams) -> f64 {
        match self {
            Param::InterruptCost => path.interrupt_cost,
            Param::CtxSwitchCost => path.ctx_switch_cost,
            Param::JitterMean => compute.jitter.mean(),
            Param::MuxFactor => compute.mux_overhead_factor,
        }
    }

    fn set(self, path: &mut PathParams, compute: &mut ComputeParams, v: f64) {
        match self {
            Param::InterruptCost => path.interrupt_cost = v,
            Param::CtxSwitchCost => path.ctx_switch_cost = v,
            Param::JitterMean => compute.jitter = compute.jitter.with_mean(v),
            Param::MuxFactor => compute.mux_overhead_factor = v,
        }
    }

    fn lower_bound(self) -> f64 {
        match self {
            Param::MuxFactor => 1.0,
            _ => 0.0,
        }
    }

    fn initial_step(self, value: f64) -> f64 {
        match self {
            Param::MuxFactor => 0.1,
            _ => (value * 0.5).max(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub targets: Vec<Target>,
    pub params: Vec<Param>,
    /// Evaluation budget.
    pub max_evaluations: usize,
    /// Search stops once every step is below this fraction of its initial size.
    pub min_step_frac: f64,
    /// Lognormal shape for the jitter while fitting; `None` keeps the configured family.
    pub jitter_sigma: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            targets: default_targets(),
            params: Param::ALL.to_vec(),
            max_evaluations: 400,
            min_step_frac: 1e-3,
            jitter_sigma: Some(1.5),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() || self.targets.iter().any(|t| !(t.band > 0.0) || !t.value.is_finite()) {
            return Err(Error::InvalidConfig("calibration targets need a value and a positive band".into()));
        }
        if self.max_evaluations == 0 || !(self.min_step_frac > 0.0) {
            return Err(Error::InvalidConfig("calibration budget and step must be positive".into()));
        }
        if let Some(s) = self.jitter_sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidConfig("jitter_sigma must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub metric: Metric,
    pub target: f64,
    pub achieved: f64,
    pub residual_pp: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub path: PathParams,
    pub compute: ComputeParams,
    pub reductions: Reductions,
    pub residuals: Vec<Residual>,
    pub objective: f64,
    pub evaluations: usize,
    /// False when the evaluation budget ran out before the steps shrank.
    pub converged: bool,
}

impl CalibrationResult {
    /// `cfg` with the fitted parameters installed.
    pub fn apply(&self, cfg: &RunConfig) -> RunConfig {
        let mut out = cfg.clone();
        out.platform.path = self.path;
        out.platform.compute = self.compute.clone();
        out
    }

    pub fn all_within_band(&self) -> bool {
        self.residuals.iter().all(|r| r.within_band)
    }
}

fn objective(targets: &[Target], r: &Reductions) -> f64 {
    targets
        .iter()
        .map(|t| ((t.metric.of(r) - t.value) / t.band).powi(2))
        .sum()
}

fn residuals(targets: &[Target], r: &Reductions) -> Vec<Residual> {
    targets
        .iter()
        .map(|t| {
            let achieved = t.metric.of(r);
            Residual {
                metric: t.metric,
                target: t.value,
                achieved,
                residual_pp: achieved - t.value,
                within_band: (achieved - t.value).abs() <= t.band,
            }
        })
        .collect()
}

struct Evaluator<'a> {
    cfg: &'a RunConfig,
    bypass: BackendRun,
    evaluations: usize,
}

impl Evaluator<'_> {
    fn eval(&mut self, path: &PathParams, compute: &ComputeParams) -> Result<Reductions> {
        self.evaluations += 1;
        let mut cfg = self.cfg.clone();
        cfg.platform.path = *path;
        cfg.platform.compute = compute.clone();
        let kernel = run_backend_sequential(&cfg, PathKind::KernelStack)?;
        Ok(reductions(&kernel, &self.bypass))
    }
}

/// Fit the configured free parameters. Deterministic for a given config.
pub fn calibrate(cfg: &RunConfig) -> Result<CalibrationResult> {
    let cal = &cfg.calibration;
    cal.validate()?;
    let mut path = cfg.platform.path;
    let mut compute = cfg.platform.compute.clone();
    if let Some(sigma) = cal.jitter_sigma {
        if cal.params.contains(&Param::JitterMean) {
            compute.jitter = Dist::lognormal_mean(compute.jitter.mean().max(1.0), sigma);
        }
    }
    // the free parameters only touch the kernel path, so one bypass run serves every evaluation
    let mut ev = Evaluator {
        cfg,
        bypass: run_backend_sequential(cfg, PathKind::Bypass)?,
        evaluations: 0,
    };
    let mut best_r = ev.eval(&path, &compute)?;
    let mut best = objective(&cal.targets, &best_r);
    let initial: Vec<f64> = cal.params.iter().map(|p| p.initial_step(p.get(&path, &compute))).collect();
    let mut steps = initial.clone();
    let mut converged = false;
    while ev.evaluations < cal.max_evaluations {
        if best == 0.0 || steps.iter().zip(&initial).all(|(s, i)| *s < i * cal.min_step_frac) {
            converged = true;
            break;
        }
        let mut improved = false;
        for (k, param) in cal.params.iter().enumerate() {
            for dir in [1.0, -1.0] {
                if ev.evaluations >= cal.max_evaluations {
                    break;
                }
                let cur = param.get(&path, &compute);
                let next = (cur + dir * steps[k]).max(param.lower_bound());
                if next == cur {
                    continue;
                }
                let (mut p2, mut c2) = (path, compute.clone());
                param.set(&mut p2, &mut c2, next);
                let r = ev.eval(&p2, &c2)?;
                let obj = objective(&cal.targets, &r);
                if obj < best {
                    (path, compute, best, best_r) = (p2, c2, obj, r);
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            steps.iter_mut().for_each(|s| *s /= 2.0);
        }
    }
    Ok(CalibrationResult {
        path,
        compute,
        residuals: residuals(&cal.targets, &best_r),
        reductions: best_r,
        objective: best,
        evaluations: ev.evaluations,
        converged,
    })
}
