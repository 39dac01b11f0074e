//! Discrete-event model of a serverless platform running functions either in
//! containers behind the kernel network stack or in kernel-bypass instances
//! with a centralized core scheduler.
//!
//! The [`controlplane::Platform`] ties the pieces together; the
//! [`workload`] and [`experiments`] modules drive it.

pub mod calibrate;
pub mod config;
pub mod controlplane;
pub mod error;
pub mod experiments;
pub mod instance;
pub mod metrics;
pub mod netmodel;
pub mod report;
pub mod scenario;
pub mod sched;
pub mod simcore;
pub mod workload;

pub use controlplane::{FunctionSpec, InvocationRecord, InvocationStatus, Platform, PlatformConfig};
pub use error::{Error, Result};
pub use netmodel::PathKind;
pub use simcore::Micros;
