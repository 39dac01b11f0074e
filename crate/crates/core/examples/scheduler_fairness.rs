//! Max-min core allocation and the cost of a scheduler tick.
//!
//! Shows three instances competing for nine cores, then that parked idle
//! instances do not make ticks more expensive.

use faas_bypass_sim::sched::{allocate_cores, CoreScheduler, InstanceSignals, SchedulerConfig};

fn main() -> anyhow::Result<()> {
    let signals: Vec<InstanceSignals> = [(1, 8, 6), (2, 2, 2), (3, 8, 8)]
        .iter()
        .map(|&(id, cap, runnable)| InstanceSignals {
            instance_id: id,
            runnable_threads: runnable,
            eventq_pending: 0,
            allocated: 0,
            cap,
        })
        .collect();
    let alloc = allocate_cores(&signals, 9);
    for s in &signals {
        println!("instance {} demand {} -> {} cores", s.instance_id, s.demand(), alloc.get(s.instance_id));
    }

    for idle in [10u64, 1000] {
        let mut sched = CoreScheduler::new(SchedulerConfig::default())?;
        for id in 0..idle + 4 {
            sched.register(id, 8);
        }
        for id in idle..idle + 4 {
            sched.update_load(id, 2, 0, 0)?;
        }
        sched.tick(0);
        let ops = sched.tick(5).allocation.tick_ops;
        println!("{idle:>4} idle + 4 active instances: {ops} ops per tick");
    }
    Ok(())
}
