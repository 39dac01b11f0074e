//! Endpoint resolution through the provider cache: one manager query per
//! write, hits in between.

use faas_bypass_sim::controlplane::{FunctionSpec, Resolution, ScaleMechanism};
use faas_bypass_sim::{PathKind, Platform, PlatformConfig};

fn main() -> anyhow::Result<()> {
    let mut p = Platform::new(PlatformConfig::default(), 1)?;
    p.deploy_function(FunctionSpec::new("aes", 120.0, PathKind::Bypass).with_scale(ScaleMechanism::MultiProcess))?;
    p.run_to_idle()?;

    let show = |p: &mut Platform, label: &str| -> anyhow::Result<()> {
        let res = p.provider_resolve("aes")?;
        let replicas = match res {
            Resolution::Ready(rec) => rec.replicas,
            Resolution::Pending => 0,
        };
        println!(
            "{label:<16} replicas {replicas}  queries {}  hits {}",
            p.manager().query_count("aes"),
            p.provider().hits()
        );
        Ok(())
    };
    show(&mut p, "first resolve")?;
    show(&mut p, "second resolve")?;
    p.scale_function("aes", 3)?;
    show(&mut p, "after scale")?;
    match p.provider_resolve("ghost") {
        Err(e) => println!("ghost: {e} (cached entries: {})", p.provider().cache_len()),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
