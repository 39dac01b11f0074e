//! Fit the kernel-path overheads and print the residual per target.

use faas_bypass_sim::calibrate::calibrate;
use faas_bypass_sim::config::RunConfig;

fn main() -> anyhow::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::default(),
    };
    let fit = calibrate(&cfg)?;
    println!("evaluations {} converged {}", fit.evaluations, fit.converged);
    println!("path    {:?}", fit.path);
    println!("compute {:?}", fit.compute);
    for r in &fit.residuals {
        let mark = if r.within_band { "ok" } else { "OUT" };
        println!("{:?}: target {:.2} got {:.2} ({:+.2} pp) {mark}", r.metric, r.target, r.achieved, r.residual_pp);
    }
    Ok(())
}
