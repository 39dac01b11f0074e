//! Open-loop Poisson sweep on both backends with the calibrated table.

use faas_bypass_sim::calibrate::calibrate;
use faas_bypass_sim::config::RunConfig;
use faas_bypass_sim::experiments::sweep_backends;

fn main() -> anyhow::Result<()> {
    let base = match std::env::args().nth(1) {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::default(),
    };
    let cfg = calibrate(&base)?.apply(&base);
    let report = sweep_backends(&cfg)?;
    for s in [&report.bypass, &report.kernel] {
        println!("{} (zero-load p50 {} us)", s.backend, s.zero_load_p50_us);
        println!("  {:>8} {:>8} {:>8} {:>8}", "rps", "p50", "p99", "reject");
        for p in &s.points {
            let flag = if p.saturated { " saturated" } else { "" };
            println!("  {:>8} {:>8} {:>8} {:>8.4}{flag}", p.rate_rps, p.p50_us, p.p99_us, p.reject_frac);
        }
    }
    println!("throughput ratio {:?}", report.throughput_ratio);
    println!(
        "at {:?} rps: p50 ratio {:?}, p99 ratio {:?}",
        report.comparison_rate_rps, report.p50_ratio, report.p99_ratio
    );
    Ok(())
}
