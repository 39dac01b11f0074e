use faas_bypass_sim::controlplane::{FunctionSpec, ScaleMechanism};
use faas_bypass_sim::{PathKind, Platform, PlatformConfig};
use proptest::prelude::*;

fn run(backend: PathKind, offsets: &[u64], shift: u64, seed: u64) -> (Vec<(u64, u64)>, u64, u64) {
    let mut p = Platform::new(PlatformConfig::default(), seed).unwrap().with_invariant_checks(true);
    p.deploy_function(FunctionSpec::new("f", 80.0, backend).with_scale(ScaleMechanism::NewInstance))
        .unwrap();
    p.run_to_idle().unwrap();
    let base = p.now() + shift;
    for &o in offsets {
        p.submit("f", base + o).unwrap();
    }
    p.submit("ghost", base).unwrap();
    p.run_to_idle().unwrap();
    let c = p.counters();
    let lat = p
        .invocations()
        .iter()
        .filter_map(|r| r.e2e_us().map(|e| (r.submit_t - base, e)))
        .collect();
    (lat, c.injected, c.finished())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_request_finishes_once(offsets in prop::collection::vec(0u64..5_000, 1..60), seed in any::<u64>()) {
        for backend in [PathKind::KernelStack, PathKind::Bypass] {
            let (_, injected, finished) = run(backend, &offsets, 0, seed);
            prop_assert_eq!(injected, offsets.len() as u64 + 1);
            prop_assert_eq!(finished, injected);
        }
    }

    #[test]
    fn latencies_are_invariant_under_time_shift(offsets in prop::collection::vec(0u64..5_000, 1..40), ticks in 0u64..200_000) {
        let shift = ticks * PlatformConfig::default().scheduler.tick_us;
        let a = run(PathKind::Bypass, &offsets, 0, 9);
        let b = run(PathKind::Bypass, &offsets, shift, 9);
        prop_assert_eq!(a, b);
    }
}
