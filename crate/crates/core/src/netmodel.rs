//! Latency cost models for the two network paths and the compute-side
//! multiplexing overhead of the kernel path.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::simcore::{Dist, RngStream};

/// Network path of an instance or a link between services.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    #[serde(alias = "kernel")]
    KernelStack,
    Bypass,
}

impl PathKind {
    pub const ALL: [PathKind; 2] = [PathKind::KernelStack, PathKind::Bypass];

    /// Short lowercase label used in file names.
    pub fn label(self) -> &'static str {
        match self {
            PathKind::KernelStack => "kernel",
            PathKind::Bypass => "bypass",
        }
    }
}

impl std::fmt::Display for PathKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-packet cost terms, all in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathParams {
    pub trap_cost: f64,
    pub ctx_switch_cost: f64,
    pub interrupt_cost: f64,
    pub poll_dispatch_cost: f64,
    pub copy_cost_per_kb: f64,
    pub wire_cost: f64,
}

impl Default for PathParams {
    fn default() -> Self {
        PathParams {
            trap_cost: 0.5,
            ctx_switch_cost: 3.0,
            interrupt_cost: 2.0,
            poll_dispatch_cost: 0.2,
            copy_cost_per_kb: 0.3,
            wire_cost: 5.0,
        }
    }
}

impl PathParams {
    pub fn zeroed() -> Self {
        PathParams {
            trap_cost: 0.0,
            ctx_switch_cost: 0.0,
            interrupt_cost: 0.0,
            poll_dispatch_cost: 0.0,
            copy_cost_per_kb: 0.0,
            wire_cost: 0.0,
        }
    }

    /// Drops the path-specific overhead terms, keeping wire and copy costs.
    pub fn without_overheads(self) -> Self {
        PathParams {
            trap_cost: 0.0,
            ctx_switch_cost: 0.0,
            interrupt_cost: 0.0,
            poll_dispatch_cost: 0.0,
            ..self
        }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.trap_cost,
            self.ctx_switch_cost,
            self.interrupt_cost,
            self.poll_dispatch_cost,
            self.copy_cost_per_kb,
            self.wire_cost,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0)
    }

    /// Receive-side wakeup of a blocked kernel-stack process.
    pub fn kernel_wakeup_cost(&self) -> f64 {
        self.interrupt_cost + self.ctx_switch_cost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComputeParams {
    /// Multiplier on service time for the kernel path; at least 1.
    pub mux_overhead_factor: f64,
    /// Additive kernel-path noise in microseconds.
    pub jitter: Dist,
}

impl Default for ComputeParams {
    fn default() -> Self {
        ComputeParams {
            mux_overhead_factor: 1.546,
            jitter: Dist::exponential_mean(40.0),
        }
    }
}

impl ComputeParams {
    pub fn neutral() -> Self {
        ComputeParams {
            mux_overhead_factor: 1.0,
            jitter: Dist::constant(0.0),
        }
    }
}

pub fn one_way_packet_cost(kind: PathKind, payload_bytes: u64, params: &PathParams) -> f64 {
    let copy = params.copy_cost_per_kb * (payload_bytes as f64 / 1024.0);
    match kind {
        PathKind::KernelStack => {
            params.wire_cost
                + params.trap_cost
                + params.interrupt_cost
                + params.ctx_switch_cost
                + copy
        }
        PathKind::Bypass => params.wire_cost + params.poll_dispatch_cost + copy,
    }
}

/// Request plus response leg. Handler compute is charged by the instance model.
pub fn rpc_cost(kind: PathKind, req_bytes: u64, resp_bytes: u64, params: &PathParams) -> f64 {
    one_way_packet_cost(kind, req_bytes, params) + one_way_packet_cost(kind, resp_bytes, params)
}

/// Execution time of a request whose uncontended compute is `base` microseconds.
pub fn service_time(
    kind: PathKind,
    base: f64,
    cparams: &ComputeParams,
    rng: &mut RngStream,
) -> Result<f64> {
    match kind {
        PathKind::Bypass => Ok(base),
        PathKind::KernelStack => {
            let jitter = rng.draw(&cparams.jitter)?.max(0.0);
            Ok(base * cparams.mux_overhead_factor.max(1.0) + jitter)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::percentile;
    use crate::simcore::round_us;
    use proptest::prelude::*;

    #[test]
    fn zero_params_cost_nothing() {
        let p = PathParams::zeroed();
        for kind in PathKind::ALL {
            for bytes in [0, 1, 600, 1 << 20] {
                assert_eq!(one_way_packet_cost(kind, bytes, &p), 0.0);
            }
        }
    }

    #[test]
    fn paths_coincide_without_overheads() {
        let p = PathParams {
            trap_cost: 0.0,
            interrupt_cost: 0.0,
            ctx_switch_cost: 0.0,
            poll_dispatch_cost: 0.0,
            wire_cost: 4.0,
            copy_cost_per_kb: 1.5,
        };
        assert_eq!(
            one_way_packet_cost(PathKind::KernelStack, 600, &p),
            one_way_packet_cost(PathKind::Bypass, 600, &p)
        );
    }

    #[test]
    fn default_table_600_bytes() {
        // Evaluated by hand from the default table:
        // kernel = 5 + 0.5 + 2 + 3 + 0.3 * 600/1024, bypass = 5 + 0.2 + 0.3 * 600/1024.
        let p = PathParams::default();
        let copy = 0.3 * 600.0 / 1024.0;
        let k = one_way_packet_cost(PathKind::KernelStack, 600, &p);
        let b = one_way_packet_cost(PathKind::Bypass, 600, &p);
        assert!((k - (10.5 + copy)).abs() < 1e-12);
        assert!((b - (5.2 + copy)).abs() < 1e-12);
        assert!(k > b);
    }

    #[test]
    fn rpc_is_sum_of_legs() {
        let p = PathParams {
            wire_cost: 10.0,
            ..PathParams::zeroed()
        };
        assert_eq!(rpc_cost(PathKind::Bypass, 64, 64, &p), 20.0);
        let w = PathParams {
            wire_cost: 3.0,
            ..PathParams::zeroed()
        };
        assert_eq!(rpc_cost(PathKind::KernelStack, 0, 0, &w), 6.0);
        let d = PathParams::default();
        for kind in PathKind::ALL {
            assert_eq!(
                rpc_cost(kind, 600, 600, &d),
                2.0 * one_way_packet_cost(kind, 600, &d)
            );
        }
    }

    #[test]
    fn neutral_compute_is_identity() {
        let c = ComputeParams::neutral();
        let mut rng = RngStream::new(3, "jitter");
        for kind in PathKind::ALL {
            assert_eq!(service_time(kind, 100.0, &c, &mut rng).unwrap(), 100.0);
        }
    }

    #[test]
    fn mux_factor_reproduces_execution_median_gap() {
        let c = ComputeParams {
            mux_overhead_factor: 1.546,
            jitter: Dist::constant(0.0),
        };
        let mut rng = RngStream::new(3, "jitter");
        let k = service_time(PathKind::KernelStack, 100.0, &c, &mut rng).unwrap();
        let b = service_time(PathKind::Bypass, 100.0, &c, &mut rng).unwrap();
        assert!((k - 154.6).abs() < 1e-9);
        assert_eq!(round_us(k), 155);
        let reduction = (k - b) / k * 100.0;
        assert!((reduction - 35.3).abs() < 0.05, "{reduction}");
    }

    #[test]
    fn jitter_tail_exceeds_median() {
        let c = ComputeParams {
            mux_overhead_factor: 1.546,
            jitter: Dist::exponential_mean(40.0),
        };
        let mut rng = RngStream::new(11, "jitter");
        let samples: Vec<u64> = (0..100_000)
            .map(|_| round_us(service_time(PathKind::KernelStack, 100.0, &c, &mut rng).unwrap()))
            .collect();
        assert!(percentile(&samples, 99.0).unwrap() > percentile(&samples, 50.0).unwrap());
        assert!(samples.iter().all(|s| *s >= 100));
    }

    fn params() -> impl Strategy<Value = PathParams> {
        (0.0..20.0f64, 0.0..20.0f64, 0.0..20.0f64, 0.0..20.0f64, 0.0..5.0f64, 0.0..50.0f64).prop_map(
            |(trap, ctx, intr, poll, copy, wire)| PathParams {
                trap_cost: trap,
                ctx_switch_cost: ctx,
                interrupt_cost: intr,
                poll_dispatch_cost: poll,
                copy_cost_per_kb: copy,
                wire_cost: wire,
            },
        )
    }

    proptest! {
        #[test]
        fn kernel_dominates_when_overheads_exceed_polling(p in params(), bytes in 0u64..100_000) {
            let k = one_way_packet_cost(PathKind::KernelStack, bytes, &p);
            let b = one_way_packet_cost(PathKind::Bypass, bytes, &p);
            if p.trap_cost + p.interrupt_cost + p.ctx_switch_cost > p.poll_dispatch_cost {
                prop_assert!(k > b);
            }
        }

        #[test]
        fn costs_are_monotone(p in params(), bytes in 0u64..100_000, extra in 0u64..10_000, bump in 0.0..10.0f64) {
            for kind in PathKind::ALL {
                let base = one_way_packet_cost(kind, bytes, &p);
                prop_assert!(one_way_packet_cost(kind, bytes + extra, &p) >= base);
                let bumped = [
                    PathParams { trap_cost: p.trap_cost + bump, ..p },
                    PathParams { ctx_switch_cost: p.ctx_switch_cost + bump, ..p },
                    PathParams { interrupt_cost: p.interrupt_cost + bump, ..p },
                    PathParams { poll_dispatch_cost: p.poll_dispatch_cost + bump, ..p },
                    PathParams { copy_cost_per_kb: p.copy_cost_per_kb + bump, ..p },
                    PathParams { wire_cost: p.wire_cost + bump, ..p },
                ];
                for q in bumped {
                    prop_assert!(one_way_packet_cost(kind, bytes, &q) >= base);
                    prop_assert!(rpc_cost(kind, bytes, bytes, &q) >= rpc_cost(kind, bytes, bytes, &p));
                }
            }
        }

        #[test]
        fn zeroed_overheads_make_paths_equal(p in params(), req in 0u64..10_000, resp in 0u64..10_000, base in 0.0..1e4f64) {
            let z = p.without_overheads();
            prop_assert_eq!(one_way_packet_cost(PathKind::KernelStack, req, &z), one_way_packet_cost(PathKind::Bypass, req, &z));
            prop_assert_eq!(rpc_cost(PathKind::KernelStack, req, resp, &z), rpc_cost(PathKind::Bypass, req, resp, &z));
            let mut rng = RngStream::new(1, "j");
            let c = ComputeParams::neutral();
            prop_assert_eq!(
                service_time(PathKind::KernelStack, base, &c, &mut rng).unwrap(),
                service_time(PathKind::Bypass, base, &c, &mut rng).unwrap()
            );
        }
    }
}
