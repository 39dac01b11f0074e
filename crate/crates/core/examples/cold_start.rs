//! Deploy-to-ready time for each backend, at two different deploy times.

use faas_bypass_sim::config::RunConfig;
use faas_bypass_sim::workload::measure_cold_start;
use faas_bypass_sim::{PathKind, Platform};

fn main() -> anyhow::Result<()> {
    let cfg = RunConfig::default();
    for backend in PathKind::ALL {
        for deploy_at in [0, 1_000_000] {
            let mut p = Platform::new(cfg.platform_for(backend, &cfg.sequential), cfg.seed)?;
            p.run_until(deploy_at)?;
            let us = measure_cold_start(&mut p, &cfg.function.spec(backend))?;
            println!("{backend:<7} deployed at {deploy_at:>7} us: ready after {us} us");
        }
    }
    Ok(())
}
