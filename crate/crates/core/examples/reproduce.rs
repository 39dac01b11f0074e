//! Calibrate, run every experiment and write the report files.

use faas_bypass_sim::config::RunConfig;
use faas_bypass_sim::report::{emit_reports, reproduce};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out".into());
    let r = reproduce(&RunConfig::default(), false)?;
    let red = r.comparison.reductions;
    println!(
        "sequential: e2e median -{:.1}% p99 -{:.1}%, exec median -{:.1}% p99 -{:.1}%",
        red.e2e_median_pct, red.e2e_p99_pct, red.exec_median_pct, red.exec_p99_pct
    );
    println!(
        "sweep: throughput x{:.1}, at {:?} rps p50 x{:.1} p99 x{:.1}",
        r.sweep.throughput_ratio.unwrap_or(f64::NAN),
        r.sweep.comparison_rate_rps,
        r.sweep.p50_ratio.unwrap_or(f64::NAN),
        r.sweep.p99_ratio.unwrap_or(f64::NAN)
    );
    for c in &r.cold_start {
        println!("cold start {}: {} us", c.backend, c.cold_start_us);
    }
    for p in emit_reports(&r, out.as_ref())? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
