//! Centralized core allocator for bypass instances.
//!
//! The scheduler owns one reserved core and hands the remaining cores to
//! instances according to their demand signals. Instances with no demand and
//! no cores are parked off the polled set, so a tick only touches instances
//! that are running or waking up.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::Micros;

pub type InstanceId = u64;

/// Fixed bookkeeping per tick.
pub const TICK_BASE_OPS: u64 = 8;
/// Bookkeeping per core that is active or changing hands during a tick.
pub const TICK_OPS_PER_CORE: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSignals {
    pub instance_id: InstanceId,
    pub runnable_threads: u32,
    pub eventq_pending: u32,
    pub allocated: u32,
    pub cap: u32,
}

impl InstanceSignals {
    /// Runnable threads plus one core's worth of wakeup for pending I/O, capped.
    pub fn demand(&self) -> u32 {
        let io = u32::from(self.eventq_pending > 0);
        self.cap.min(self.runnable_threads.saturating_add(io))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub total_cores: u32,
    pub reserved: u32,
    pub timeslice_us: Micros,
    pub tick_us: Micros,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            total_cores: 10,
            reserved: 1,
            timeslice_us: 100,
            tick_us: 5,
        }
    }
}

impl SchedulerConfig {
    pub fn usable(&self) -> u32 {
        self.total_cores.saturating_sub(self.reserved)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reserved != 1 {
            return Err(Error::InvalidConfig("scheduler reserves exactly one core".into()));
        }
        if self.usable() < 1 {
            return Err(Error::InvalidConfig(format!(
                "total_cores {} leaves no usable core",
                self.total_cores
            )));
        }
        if self.tick_us == 0 || self.timeslice_us < self.tick_us {
            return Err(Error::InvalidConfig(format!(
                "need timeslice_us ({}) >= tick_us ({}) > 0",
                self.timeslice_us, self.tick_us
            )));
        }
        Ok(())
    }

    /// First polling instant at or after `t`.
    pub fn next_tick_at(&self, t: Micros) -> Micros {
        t.div_ceil(self.tick_us) * self.tick_us
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreAllocation {
    /// `(instance, cores)` sorted by instance id.
    pub cores: Vec<(InstanceId, u32)>,
    pub tick_t: Micros,
    pub tick_ops: u64,
}

impl CoreAllocation {
    pub fn get(&self, id: InstanceId) -> u32 {
        self.cores
            .binary_search_by_key(&id, |c| c.0)
            .map_or(0, |i| self.cores[i].1)
    }

    pub fn total(&self) -> u32 {
        self.cores.iter().map(|c| c.1).sum()
    }

    fn set(&mut self, id: InstanceId, cores: u32) {
        match self.cores.binary_search_by_key(&id, |c| c.0) {
            Ok(i) => self.cores[i].1 = cores,
            Err(i) => self.cores.insert(i, (id, cores)),
        }
    }
}

/// Integer water-filling.
///
/// One core at a time goes to the instance with the smallest grant among
/// those whose demand is unmet; ties go to the lowest instance id.
pub fn allocate_cores(signals: &[InstanceSignals], usable: u32) -> CoreAllocation {
    // (id, demand, grant)
    let mut rows: Vec<(InstanceId, u32, u32)> = signals.iter().map(|s| (s.instance_id, s.demand(), 0)).collect();
    if !rows.is_sorted_by_key(|r| r.0) {
        rows.sort_unstable_by_key(|r| r.0);
    }
    let mut budget = usable;
    while budget > 0 {
        let Some(level) = rows.iter().filter(|r| r.2 < r.1).map(|r| r.2).min() else {
            break;
        };
        for r in rows.iter_mut() {
            if budget == 0 {
                break;
            }
            if r.2 == level && r.2 < r.1 {
                r.2 += 1;
                budget -= 1;
            }
        }
    }
    CoreAllocation {
        cores: rows.iter().map(|r| (r.0, r.2)).collect(),
        tick_t: 0,
        tick_ops: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedEvent {
    Grant {
        instance: InstanceId,
        cores: u32,
    },
    /// `immediate` idle cores were taken at the tick; `deferred` busy cores
    /// are handed back when their work completes or at `deadline`.
    Preempt {
        instance: InstanceId,
        immediate: u32,
        deferred: u32,
        deadline: Micros,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TickOutcome {
    pub allocation: CoreAllocation,
    pub events: Vec<SchedEvent>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Entry {
    runnable_threads: u32,
    eventq_pending: u32,
    allocated: u32,
    /// Cores currently running a request.
    busy: u32,
    cap: u32,
    pending_revoke: u32,
    revoke_deadline: Micros,
}

impl Entry {
    fn signals(&self, id: InstanceId) -> InstanceSignals {
        InstanceSignals {
            instance_id: id,
            runnable_threads: self.runnable_threads,
            eventq_pending: self.eventq_pending,
            allocated: self.allocated,
            cap: self.cap,
        }
    }

    fn parked(&self) -> bool {
        self.allocated == 0 && self.signals(0).demand() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedTraceRow {
    pub tick_us: Micros,
    pub instance_id: InstanceId,
    pub allocated: u32,
    pub demand: u32,
    pub tick_ops: u64,
}

/// Stateful scheduler: signal mirror, current grants, and the polled set.
#[derive(Debug, Clone)]
pub struct CoreScheduler {
    config: SchedulerConfig,
    entries: BTreeMap<InstanceId, Entry>,
    polled: BTreeSet<InstanceId>,
    ticks: u64,
    total_ops: u64,
    last: CoreAllocation,
    record: bool,
    trace: Vec<SchedTraceRow>,
}

impl CoreScheduler {
    pub fn new(config: SchedulerConfig) -> Result<Self> {
        config.validate()?;
        Ok(CoreScheduler {
            config,
            entries: BTreeMap::new(),
            polled: BTreeSet::new(),
            ticks: 0,
            total_ops: 0,
            last: CoreAllocation::default(),
            record: false,
            trace: Vec::new(),
        })
    }

    pub fn with_trace(mut self, record: bool) -> Self {
        self.record = record;
        self
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn usable(&self) -> u32 {
        self.config.usable()
    }

    pub fn register(&mut self, id: InstanceId, cap: u32) {
        self.entries.insert(
            id,
            Entry {
                cap: cap.max(1),
                ..Entry::default()
            },
        );
    }

    /// Drops an instance. Any cores it held return to the pool.
    pub fn unregister(&mut self, id: InstanceId) {
        self.entries.remove(&id);
        self.polled.remove(&id);
    }

    pub fn contains(&self, id: InstanceId) -> bool {
        self.entries.contains_key(&id)
    }

    fn entry_mut(&mut self, id: InstanceId) -> Result<&mut Entry> {
        self.entries.get_mut(&id).ok_or(Error::UnknownInstance(id))
    }

    pub fn set_cap(&mut self, id: InstanceId, cap: u32) -> Result<()> {
        let e = self.entry_mut(id)?;
        e.cap = cap.max(1);
        if !e.parked() {
            self.polled.insert(id);
        }
        Ok(())
    }

    /// A NIC event-queue notification for `id`. Re-registers a parked instance.
    pub fn signal_eventq(&mut self, id: InstanceId) -> Result<()> {
        let e = self.entry_mut(id)?;
        e.eventq_pending += 1;
        self.polled.insert(id);
        Ok(())
    }

    /// Instance-side view after it delivers packets or starts/finishes work.
    pub fn update_load(&mut self, id: InstanceId, runnable_threads: u32, eventq_pending: u32, busy: u32) -> Result<()> {
        let e = self.entry_mut(id)?;
        e.runnable_threads = runnable_threads;
        e.eventq_pending = eventq_pending;
        e.busy = busy;
        if !e.parked() {
            self.polled.insert(id);
        }
        Ok(())
    }

    pub fn signals(&self, id: InstanceId) -> Option<InstanceSignals> {
        self.entries.get(&id).map(|e| e.signals(id))
    }

    pub fn allocated(&self, id: InstanceId) -> u32 {
        self.entries.get(&id).map_or(0, |e| e.allocated)
    }

    /// Cores the instance may start new work on.
    pub fn admissible(&self, id: InstanceId) -> u32 {
        self.entries
            .get(&id)
            .map_or(0, |e| e.allocated.saturating_sub(e.pending_revoke))
    }

    pub fn pending_revoke(&self, id: InstanceId) -> u32 {
        self.entries.get(&id).map_or(0, |e| e.pending_revoke)
    }

    pub fn revoke_deadline(&self, id: InstanceId) -> Option<Micros> {
        self.entries
            .get(&id)
            .filter(|e| e.pending_revoke > 0)
            .map(|e| e.revoke_deadline)
    }

    /// A core of `id` went idle. Returns true if it was handed back to the pool.
    pub fn core_freed(&mut self, id: InstanceId) -> bool {
        match self.entries.get_mut(&id) {
            Some(e) if e.pending_revoke > 0 && e.allocated > 0 => {
                e.pending_revoke -= 1;
                e.allocated -= 1;
                true
            }
            _ => false,
        }
    }

    /// Forcibly take back `n` revoked cores (timeslice expiry).
    pub fn force_revoke(&mut self, id: InstanceId, n: u32) -> Result<()> {
        let e = self.entry_mut(id)?;
        let n = n.min(e.pending_revoke).min(e.allocated);
        e.pending_revoke -= n;
        e.allocated -= n;
        Ok(())
    }

    pub fn total_allocated(&self) -> u32 {
        self.entries.values().map(|e| e.allocated).sum()
    }

    pub fn polled_count(&self) -> usize {
        self.polled.len()
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn total_ops(&self) -> u64 {
        self.total_ops
    }

    pub fn last_allocation(&self) -> &CoreAllocation {
        &self.last
    }

    pub fn take_trace(&mut self) -> Vec<SchedTraceRow> {
        std::mem::take(&mut self.trace)
    }

    /// Re-read the polled instances, recompute the fair share, and move cores.
    pub fn tick(&mut self, now: Micros) -> TickOutcome {
        let usable = self.usable();
        let signals: Vec<InstanceSignals> = self
            .polled
            .iter()
            .map(|id| self.entries[id].signals(*id))
            .collect();
        let mut target = allocate_cores(&signals, usable);
        let mut events = Vec::new();
        let mut touched = 0u64;

        for s in &signals {
            let want = target.get(s.instance_id);
            let e = self.entries.get_mut(&s.instance_id).expect("polled instance registered");
            touched += u64::from(e.allocated.max(want));
            if want < e.allocated {
                let surplus = e.allocated - want;
                let idle = e.allocated.saturating_sub(e.busy);
                let immediate = surplus.min(idle);
                e.allocated -= immediate;
                let deferred = e.allocated - want;
                let newly_deferred = deferred > e.pending_revoke;
                e.pending_revoke = deferred;
                if newly_deferred {
                    e.revoke_deadline = now + self.config.timeslice_us;
                }
                if immediate > 0 || newly_deferred {
                    events.push(SchedEvent::Preempt {
                        instance: s.instance_id,
                        immediate,
                        deferred,
                        deadline: e.revoke_deadline,
                    });
                }
            } else {
                // the share grew back, so nothing is left to revoke
                e.pending_revoke = 0;
            }
        }

        let mut free = usable.saturating_sub(self.total_allocated());
        for s in &signals {
            if free == 0 {
                break;
            }
            let want = target.get(s.instance_id);
            let e = self.entries.get_mut(&s.instance_id).expect("polled instance registered");
            if want > e.allocated {
                let add = (want - e.allocated).min(free);
                e.allocated += add;
                free -= add;
                events.push(SchedEvent::Grant {
                    instance: s.instance_id,
                    cores: add,
                });
            }
        }

        let ops = TICK_BASE_OPS + TICK_OPS_PER_CORE * touched;
        self.ticks += 1;
        self.total_ops += ops;
        for s in &signals {
            let e = &self.entries[&s.instance_id];
            target.set(s.instance_id, e.allocated);
            if self.record {
                self.trace.push(SchedTraceRow {
                    tick_us: now,
                    instance_id: s.instance_id,
                    allocated: e.allocated,
                    demand: s.demand(),
                    tick_ops: ops,
                });
            }
        }
        self.polled.retain(|id| !self.entries[id].parked());
        target.tick_t = now;
        target.tick_ops = ops;
        self.last = target.clone();
        TickOutcome {
            allocation: target,
            events,
        }
    }
}

pub fn write_sched_trace<W: Write>(rows: &[SchedTraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "tick_us,instance_id,allocated,demand,tick_ops")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.tick_us, r.instance_id, r.allocated, r.demand, r.tick_ops
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(id: InstanceId, runnable: u32, cap: u32) -> InstanceSignals {
        InstanceSignals {
            instance_id: id,
            runnable_threads: runnable,
            eventq_pending: 0,
            allocated: 0,
            cap,
        }
    }

    fn grants(a: &CoreAllocation) -> Vec<u32> {
        a.cores.iter().map(|c| c.1).collect()
    }

    #[test]
    fn demand_bounded() {
        let a = allocate_cores(&[sig(1, 1, 4), sig(2, 1, 4)], 4);
        assert_eq!(grants(&a), vec![1, 1]);
        assert_eq!(a.total(), 2);
    }

    #[test]
    fn ties_broken_by_ascending_id() {
        let a = allocate_cores(&[sig(3, 2, 4), sig(1, 2, 4), sig(2, 2, 4)], 4);
        assert_eq!(a.get(1), 2);
        assert_eq!(a.get(2), 1);
        assert_eq!(a.get(3), 1);
    }

    #[test]
    fn cap_binds_before_budget() {
        let a = allocate_cores(&[sig(1, 5, 3)], 4);
        assert_eq!(grants(&a), vec![3]);
    }

    #[test]
    fn empty_signals() {
        assert!(allocate_cores(&[], 8).cores.is_empty());
    }

    #[test]
    fn demand_formula() {
        let mut s = sig(1, 0, 4);
        s.eventq_pending = 3;
        assert_eq!(s.demand(), 1);
        s.runnable_threads = 10;
        assert_eq!(s.demand(), 4);
    }

    fn sched() -> CoreScheduler {
        CoreScheduler::new(SchedulerConfig {
            total_cores: 5,
            reserved: 1,
            timeslice_us: 100,
            tick_us: 5,
        })
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(CoreScheduler::new(SchedulerConfig { total_cores: 1, ..Default::default() }).is_err());
        assert!(CoreScheduler::new(SchedulerConfig { tick_us: 0, ..Default::default() }).is_err());
        assert!(CoreScheduler::new(SchedulerConfig { tick_us: 10, timeslice_us: 5, ..Default::default() }).is_err());
        assert!(CoreScheduler::new(SchedulerConfig { reserved: 2, ..Default::default() }).is_err());
        assert_eq!(SchedulerConfig::default().usable(), 9);
    }

    #[test]
    fn tick_alignment() {
        let c = SchedulerConfig::default();
        assert_eq!(c.next_tick_at(0), 0);
        assert_eq!(c.next_tick_at(1), 5);
        assert_eq!(c.next_tick_at(5), 5);
        assert_eq!(c.next_tick_at(6), 10);
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        let mut s = sched();
        s.register(1, 4);
        s.update_load(1, 2, 0, 0).unwrap();
        let first = s.tick(0);
        assert_eq!(first.allocation.get(1), 2);
        let second = s.tick(5);
        assert!(second.events.is_empty());
        assert_eq!(second.allocation.cores, first.allocation.cores);
    }

    #[test]
    fn unknown_instance_signal_is_rejected() {
        let mut s = sched();
        assert_eq!(s.signal_eventq(42), Err(Error::UnknownInstance(42)));
    }

    #[test]
    fn signal_wakes_idle_instance_by_next_tick() {
        let mut s = sched();
        s.register(1, 2);
        assert_eq!(s.polled_count(), 0);
        s.signal_eventq(1).unwrap();
        let t = s.config().next_tick_at(3);
        assert!(t <= 3 + s.config().tick_us);
        let out = s.tick(t);
        assert_eq!(out.allocation.get(1), 1);
        assert!(matches!(out.events[..], [SchedEvent::Grant { instance: 1, cores: 1 }]));
    }

    #[test]
    fn signal_at_cap_changes_nothing() {
        let mut s = sched();
        s.register(1, 2);
        s.update_load(1, 2, 0, 2).unwrap();
        s.tick(0);
        assert_eq!(s.allocated(1), 2);
        s.signal_eventq(1).unwrap();
        let out = s.tick(5);
        assert_eq!(out.allocation.get(1), 2);
        assert!(out.events.is_empty());
    }

    #[test]
    fn three_signals_count_once_in_demand() {
        let mut s = sched();
        s.register(1, 4);
        for _ in 0..3 {
            s.signal_eventq(1).unwrap();
        }
        let sig = s.signals(1).unwrap();
        assert_eq!(sig.eventq_pending, 3);
        assert_eq!(sig.demand(), 1);
    }

    #[test]
    fn demand_drop_frees_cores_for_neighbour() {
        // usable = 4. A holds 3, B holds 1; A falls to 1 while B rises to 3.
        let mut s = sched();
        s.register(1, 4);
        s.register(2, 4);
        s.update_load(1, 3, 0, 3).unwrap();
        s.update_load(2, 1, 0, 1).unwrap();
        s.tick(0);
        assert_eq!((s.allocated(1), s.allocated(2)), (3, 1));

        s.update_load(1, 1, 0, 1).unwrap();
        s.update_load(2, 3, 0, 1).unwrap();
        let out = s.tick(5);
        assert_eq!((s.allocated(1), s.allocated(2)), (1, 3));
        assert!(out.events.contains(&SchedEvent::Preempt {
            instance: 1,
            immediate: 2,
            deferred: 0,
            deadline: 0,
        }));
        assert!(out.events.contains(&SchedEvent::Grant { instance: 2, cores: 2 }));
    }

    #[test]
    fn busy_cores_are_revoked_on_completion() {
        let mut s = sched();
        s.register(1, 4);
        s.register(2, 4);
        s.update_load(1, 4, 0, 4).unwrap();
        s.tick(0);
        assert_eq!(s.allocated(1), 4);
        s.signal_eventq(2).unwrap();
        s.update_load(2, 2, 1, 0).unwrap();
        let out = s.tick(5);
        // fair share is 2/2, but all four of A's cores are busy
        assert_eq!(s.allocated(1), 4);
        assert_eq!(s.pending_revoke(1), 2);
        assert_eq!(s.admissible(1), 2);
        assert_eq!(s.revoke_deadline(1), Some(105));
        assert!(out.events.iter().any(|e| matches!(e, SchedEvent::Preempt { instance: 1, deferred: 2, .. })));
        assert!(s.total_allocated() <= s.usable());

        assert!(s.core_freed(1));
        s.update_load(1, 3, 0, 3).unwrap();
        s.tick(10);
        assert_eq!(s.allocated(2), 1);
        s.force_revoke(1, 1).unwrap();
        s.tick(15);
        assert_eq!((s.allocated(1), s.allocated(2)), (2, 2));
    }

    #[test]
    fn idle_instances_cost_nothing_per_tick() {
        let run = |idle: u64| {
            let mut s = CoreScheduler::new(SchedulerConfig::default()).unwrap();
            for id in 0..idle {
                s.register(10_000 + id, 4);
            }
            for id in 0..4 {
                s.register(id, 4);
                s.update_load(id, 1, 0, 0).unwrap();
            }
            s.tick(0).allocation.tick_ops
        };
        assert_eq!(run(1000), run(10));
    }

    #[test]
    fn sched_trace_columns() {
        let mut s = sched().with_trace(true);
        s.register(7, 2);
        s.update_load(7, 1, 0, 0).unwrap();
        s.tick(0);
        let mut buf = Vec::new();
        write_sched_trace(&s.take_trace(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("tick_us,instance_id,allocated,demand,tick_ops\n0,7,1,1,{}\n", TICK_BASE_OPS + 1));
    }
}
