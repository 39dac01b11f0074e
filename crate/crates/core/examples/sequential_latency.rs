//! 100 back-to-back invocations of the AES function on each backend,
//! with the latency breakdown of both runs.

use faas_bypass_sim::config::RunConfig;
use faas_bypass_sim::experiments::compare_backends;

fn main() -> anyhow::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::default(),
    };
    let report = compare_backends(&cfg)?;
    for run in [&report.bypass, &report.kernel] {
        let hops = run.records[0].hop_costs.iter().sum::<u64>();
        println!(
            "{:<7} e2e p50 {:>5} p99 {:>5} | exec p50 {:>5} p99 {:>5} | hops {hops}",
            run.backend, run.e2e.p50_us, run.e2e.p99_us, run.exec.p50_us, run.exec.p99_us
        );
    }
    let r = report.reductions;
    println!("reduction e2e: median {:.1}% p99 {:.1}%", r.e2e_median_pct, r.e2e_p99_pct);
    println!("reduction exec: median {:.1}% p99 {:.1}%", r.exec_median_pct, r.exec_p99_pct);
    Ok(())
}
