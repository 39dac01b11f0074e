//! Replay a scripted control-plane scenario and print per-invocation status.

use faas_bypass_sim::scenario::Scenario;

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/scenario.json").to_string());
    let scenario = Scenario::from_json(&std::fs::read_to_string(&path)?)?;
    let out = scenario.run()?;
    for r in &out.invocations {
        println!(
            "{:>3} {:<8} submit {:>6} e2e {:>6} {}",
            r.id,
            r.function,
            r.submit_t,
            r.e2e_us().map(|v| v.to_string()).unwrap_or_default(),
            r.status.as_str()
        );
    }
    println!("{:?}", out.counters);
    println!(
        "manager queries {}, cache hits {}, misses {}",
        out.manager_queries, out.cache_hits, out.cache_misses
    );
    for e in &out.action_errors {
        println!("action {} at {} us failed: {}", e.index, e.at_us, e.message);
    }
    Ok(())
}
