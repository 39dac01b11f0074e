//! Gateway, provider and function manager.
//!
//! Every invocation takes the same three RPC legs: client to gateway, gateway
//! to provider, provider to the hosting instance. The provider answers
//! endpoint lookups from a write-through cache and only asks the manager on a
//! miss.

mod manager;
mod platform;
mod provider;

use serde::{Deserialize, Serialize};

use crate::netmodel::PathKind;
use crate::sched::InstanceId;
use crate::simcore::Micros;

pub use manager::{Deployment, FunctionManager, Lookup, ManagerEffects, ManagerLimits};
pub use platform::{Payload, Platform, PlatformConfig, PlatformCounters};
pub use provider::{Provider, Resolution};

pub use crate::instance::InvocationId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMechanism {
    /// More uProcs (or container processes) inside the same instance.
    MultiProcess,
    /// Raise the per-uProc core cap.
    RaiseCoreCap,
    /// More independent instances.
    NewInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub name: String,
    /// Median uncontended compute time.
    pub base_service_us: f64,
    /// Lognormal shape of the compute time; zero means constant.
    #[serde(default)]
    pub service_sigma: f64,
    #[serde(default = "default_max_cores")]
    pub max_cores: u32,
    #[serde(default = "default_scale")]
    pub scale_mechanism: ScaleMechanism,
    #[serde(default = "default_backend")]
    pub backend: PathKind,
}

fn default_max_cores() -> u32 {
    8
}
fn default_scale() -> ScaleMechanism {
    ScaleMechanism::RaiseCoreCap
}
fn default_backend() -> PathKind {
    PathKind::Bypass
}

impl FunctionSpec {
    pub fn new(name: impl Into<String>, base_service_us: f64, backend: PathKind) -> Self {
        FunctionSpec {
            name: name.into(),
            base_service_us,
            service_sigma: 0.0,
            max_cores: default_max_cores(),
            scale_mechanism: default_scale(),
            backend,
        }
    }

    pub fn with_max_cores(mut self, max_cores: u32) -> Self {
        self.max_cores = max_cores;
        self
    }

    pub fn with_scale(mut self, mechanism: ScaleMechanism) -> Self {
        self.scale_mechanism = mechanism;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.service_sigma = sigma;
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.name.is_empty() {
            return Err(crate::Error::InvalidConfig("function name is empty".into()));
        }
        if self.max_cores < 1 {
            return Err(crate::Error::InvalidConfig(format!("{}: max_cores must be >= 1", self.name)));
        }
        if !(self.base_service_us.is_finite() && self.base_service_us > 0.0) {
            return Err(crate::Error::InvalidConfig(format!(
                "{}: base_service_us must be > 0",
                self.name
            )));
        }
        if !(self.service_sigma.is_finite() && self.service_sigma >= 0.0) {
            return Err(crate::Error::InvalidConfig(format!(
                "{}: service_sigma must be >= 0",
                self.name
            )));
        }
        Ok(())
    }
}

/// `(instance, port)` stand-in for the local IP and port of a function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub instance_id: InstanceId,
    pub port: u16,
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "inst-{}:{}", self.instance_id, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub function: String,
    pub replicas: u32,
    pub endpoint: Endpoint,
    pub instance_ids: Vec<InstanceId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvocationStatus {
    InFlight,
    Ok,
    NoSuchFunction,
    OverloadRejected,
}

impl InvocationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            InvocationStatus::InFlight => "in-flight",
            InvocationStatus::Ok => "ok",
            InvocationStatus::NoSuchFunction => "no-such-function",
            InvocationStatus::OverloadRejected => "overload-rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub id: InvocationId,
    pub function: String,
    pub submit_t: Micros,
    pub gateway_t: Option<Micros>,
    pub provider_t: Option<Micros>,
    pub instance_t: Option<Micros>,
    pub complete_t: Option<Micros>,
    pub hop_costs: Vec<Micros>,
    pub exec_us: Micros,
    pub queue_us: Micros,
    pub status: InvocationStatus,
}

impl InvocationRecord {
    pub fn new(id: InvocationId, function: &str, submit_t: Micros) -> Self {
        InvocationRecord {
            id,
            function: function.to_string(),
            submit_t,
            gateway_t: None,
            provider_t: None,
            instance_t: None,
            complete_t: None,
            hop_costs: Vec::with_capacity(3),
            exec_us: 0,
            queue_us: 0,
            status: InvocationStatus::InFlight,
        }
    }

    pub fn e2e_us(&self) -> Option<Micros> {
        self.complete_t.map(|c| c - self.submit_t)
    }

    pub fn hops_us(&self) -> Micros {
        self.hop_costs.iter().sum()
    }

    pub fn is_ok(&self) -> bool {
        self.status == InvocationStatus::Ok
    }

    /// Checks the timestamp order and the exact latency decomposition.
    pub fn check(&self) -> crate::Result<()> {
        let Some(e2e) = self.e2e_us() else {
            return Ok(());
        };
        if e2e != self.hops_us() + self.queue_us + self.exec_us {
            return Err(crate::Error::Invariant(format!(
                "invocation {}: e2e {} != hops {} + queue {} + exec {}",
                self.id,
                e2e,
                self.hops_us(),
                self.queue_us,
                self.exec_us
            )));
        }
        if self.is_ok() {
            let stamps = [
                Some(self.submit_t),
                self.gateway_t,
                self.provider_t,
                self.instance_t,
                self.complete_t,
            ];
            if stamps.iter().any(Option::is_none) || stamps.windows(2).any(|w| w[0] > w[1]) {
                return Err(crate::Error::Invariant(format!(
                    "invocation {}: timestamps out of order {:?}",
                    self.id, stamps
                )));
            }
            if self.hop_costs.len() != 3 {
                return Err(crate::Error::Invariant(format!(
                    "invocation {}: {} RPC legs",
                    self.id,
                    self.hop_costs.len()
                )));
            }
        }
        Ok(())
    }
}

pub const INVOCATION_CSV_HEADER: &str =
    "id,function,submit_us,complete_us,e2e_us,exec_us,hop1_us,hop2_us,hop3_us,queue_us,status";

pub fn write_invocation_log<W: std::io::Write>(records: &[InvocationRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{INVOCATION_CSV_HEADER}")?;
    for r in records {
        let hop = |i: usize| r.hop_costs.get(i).map(|h| h.to_string()).unwrap_or_default();
        let opt = |v: Option<Micros>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.id,
            r.function,
            r.submit_t,
            opt(r.complete_t),
            opt(r.e2e_us()),
            r.exec_us,
            hop(0),
            hop(1),
            hop(2),
            r.queue_us,
            r.status.as_str()
        )?;
    }
    Ok(())
}
