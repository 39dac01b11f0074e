//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrate::CalibrationConfig;
use crate::controlplane::{FunctionSpec, PlatformConfig, ScaleMechanism};
use crate::error::{Error, Result};
use crate::netmodel::PathKind;
use crate::workload::{LoadMode, ServiceTimeModel, WorkloadSpec};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionConfig {
    pub name: String,
    pub service: ServiceTimeModel,
    pub max_cores: u32,
    pub scale_mechanism: ScaleMechanism,
}

impl Default for FunctionConfig {
    fn default() -> Self {
        FunctionConfig {
            name: "aes".into(),
            service: ServiceTimeModel::default(),
            max_cores: 8,
            scale_mechanism: ScaleMechanism::RaiseCoreCap,
        }
    }
}

impl FunctionConfig {
    pub fn spec(&self, backend: PathKind) -> FunctionSpec {
        self.service.apply(
            FunctionSpec::new(self.name.clone(), self.service.median_us(), backend)
                .with_max_cores(self.max_cores)
                .with_scale(self.scale_mechanism),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub platform: PlatformConfig,
    pub function: FunctionConfig,
    pub sequential: WorkloadSpec,
    pub sweep: WorkloadSpec,
    pub calibration: CalibrationConfig,
    /// Check conservation and allocation invariants after every event.
    pub check_invariants: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            platform: PlatformConfig::default(),
            function: FunctionConfig::default(),
            sequential: WorkloadSpec::sequential(100),
            sweep: WorkloadSpec::default_sweep(),
            calibration: CalibrationConfig::default(),
            check_invariants: false,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let invalid = |e: serde_json::Error| Error::InvalidConfig(e.to_string());
        let user: serde_json::Value = serde_json::from_str(text).map_err(invalid)?;
        // nested objects are filled from the defaults of their own field, not of their type
        let mut merged = serde_json::to_value(RunConfig::default()).map_err(invalid)?;
        overlay(&mut merged, user);
        let cfg: RunConfig = serde_json::from_value(merged).map_err(invalid)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.platform.validate()?;
        self.function.service.validate()?;
        self.function.spec(PathKind::Bypass).validate()?;
        self.sequential.validate()?;
        self.sweep.validate()?;
        if self.sequential.mode != LoadMode::SequentialClosedLoop || self.sweep.mode != LoadMode::OpenLoopPoisson {
            return Err(Error::InvalidConfig(
                "sequential must be sequential_closed_loop and sweep open_loop_poisson".into(),
            ));
        }
        self.calibration.validate()
    }

    /// Platform configuration for `backend`, with the request size taken from `workload`.
    pub fn platform_for(&self, backend: PathKind, workload: &WorkloadSpec) -> PlatformConfig {
        PlatformConfig {
            backend,
            req_bytes: workload.payload_bytes,
            ..self.platform.clone()
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::simcore::hex(&Sha256::digest(json.as_bytes()))
    }

    /// Same run with every backend-specific overhead removed.
    pub fn zero_overheads(&self) -> Self {
        RunConfig {
            platform: self.platform.zero_overheads(),
            ..self.clone()
        }
    }
}

fn overlay(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sweep_keeps_sweep_defaults() {
        let cfg = RunConfig::from_json(r#"{"sweep": {"rates": [1000, 5000]}}"#).unwrap();
        assert_eq!(cfg.sweep.mode, LoadMode::OpenLoopPoisson);
        assert_eq!(cfg.sweep.rates, vec![1000.0, 5000.0]);
        assert_eq!(cfg.sweep.duration_us, WorkloadSpec::default_sweep().duration_us);
    }

    #[test]
    fn empty_object_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig {
            seed: 7,
            ..RunConfig::default()
        };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn nested_override() {
        let cfg = RunConfig::from_json(r#"{"platform": {"path": {"wire_cost": 9.0}}, "seed": 3}"#).unwrap();
        assert_eq!(cfg.platform.path.wire_cost, 9.0);
        assert_eq!(cfg.platform.path.trap_cost, 0.5);
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::from_json(r#"{"sede": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sweep": {"rates": [3.0, 2.0]}}"#).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.digest(), RunConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
    }
}
