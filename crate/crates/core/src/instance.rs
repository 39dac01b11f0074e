//! Execution models for the two backends.
//!
//! A [`JunctionInstance`] hosts one or more uProcs behind a shared packet queue
//! and runs on cores granted by the central scheduler. A [`ContainerInstance`]
//! owns a fixed OS core share and pays a kernel wakeup on every delivery.
//! Both keep a single FIFO and a set of in-service slots; the platform turns
//! the returned [`Started`] records into completion events.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::netmodel::PathKind;
use crate::sched::InstanceId;
use crate::simcore::Micros;

pub type InvocationId = u64;

/// Junction instance initialisation time.
pub const JUNCTION_INIT_US: Micros = 3_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lifecycle {
    Initializing { ready_at: Micros },
    Live,
    /// No new routing; removed once empty.
    Draining,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedRequest {
    pub inv: InvocationId,
    pub arrived_at: Micros,
    /// Earliest admission time (kernel wakeup for containers).
    pub ready_at: Micros,
    /// Work left over from a preempted run.
    pub remaining_us: Option<Micros>,
    /// Junction: handed from the NIC queue to a runnable thread.
    pub delivered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InService {
    pub inv: InvocationId,
    pub started_at: Micros,
    pub ends_at: Micros,
    pub token: u64,
    pub uproc: u32,
}

/// A request placed on a core by `start_ready`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Started {
    pub inv: InvocationId,
    pub at: Micros,
    pub ends_at: Micros,
    pub token: u64,
    /// Service time of this run. Resumed runs carry only the remaining work.
    pub run_us: Micros,
    pub resumed: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InstanceCounters {
    pub enqueued: u64,
    pub completed: u64,
    pub rejected: u64,
    pub preempted: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UProc {
    pub uproc_id: u32,
    pub function: String,
    pub max_cores: u32,
    /// Requests currently running on this uProc's threads.
    pub runnable_threads: u32,
    pub retiring: bool,
}

/// FIFO plus service slots shared by both backends.
#[derive(Debug, Clone, Default)]
struct Station {
    queue: VecDeque<QueuedRequest>,
    in_service: BTreeMap<u64, InService>,
    next_token: u64,
    counters: InstanceCounters,
}

impl Station {
    fn check_conservation(&self, id: InstanceId) -> Result<()> {
        let c = &self.counters;
        let lhs = c.enqueued;
        let rhs = c.completed + self.in_service.len() as u64 + self.queue.len() as u64 + c.rejected;
        if lhs != rhs {
            return Err(Error::Invariant(format!(
                "instance {id}: enqueued {lhs} != completed {} + in-service {} + queued {} + rejected {}",
                c.completed,
                self.in_service.len(),
                self.queue.len(),
                c.rejected
            )));
        }
        Ok(())
    }

    fn push(&mut self, id: InstanceId, queue_cap: usize, req: QueuedRequest) -> Result<()> {
        self.counters.enqueued += 1;
        if self.queue.len() >= queue_cap {
            self.counters.rejected += 1;
            return Err(Error::Overloaded { instance: id, queue_cap });
        }
        self.queue.push_back(req);
        Ok(())
    }

    fn begin(
        &mut self,
        req: QueuedRequest,
        now: Micros,
        uproc: u32,
        sample: &mut dyn FnMut(InvocationId) -> Result<Micros>,
    ) -> Result<Started> {
        let (run_us, resumed) = match req.remaining_us {
            Some(left) => (left, true),
            None => (sample(req.inv)?, false),
        };
        let token = self.next_token;
        self.next_token += 1;
        let ends_at = now + run_us;
        self.in_service.insert(
            token,
            InService {
                inv: req.inv,
                started_at: now,
                ends_at,
                token,
                uproc,
            },
        );
        Ok(Started {
            inv: req.inv,
            at: now,
            ends_at,
            token,
            run_us,
            resumed,
        })
    }

    fn finish(&mut self, token: u64) -> Option<InService> {
        let done = self.in_service.remove(&token)?;
        self.counters.completed += 1;
        Some(done)
    }

    /// Pause the `n` most recently started requests; they go back to the queue head.
    fn preempt(&mut self, n: u32, now: Micros) -> Vec<InService> {
        let mut victims: Vec<InService> = self.in_service.values().copied().collect();
        victims.sort_by_key(|s| std::cmp::Reverse((s.started_at, s.token)));
        victims.truncate(n as usize);
        for v in &victims {
            self.in_service.remove(&v.token);
            self.counters.preempted += 1;
        }
        // oldest victim ends up at the very front
        for v in victims.iter() {
            self.queue.push_front(QueuedRequest {
                inv: v.inv,
                arrived_at: v.started_at,
                ready_at: now,
                remaining_us: Some(v.ends_at.saturating_sub(now)),
                delivered: true,
            });
        }
        victims
    }
}

#[derive(Debug, Clone)]
pub struct JunctionInstance {
    pub instance_id: InstanceId,
    pub function: String,
    pub uprocs: Vec<UProc>,
    pub lifecycle: Lifecycle,
    pub init_us: Micros,
    pub queue_cap: usize,
    station: Station,
    next_uproc: u32,
}

impl JunctionInstance {
    pub fn new(instance_id: InstanceId, function: &str, uprocs: u32, max_cores: u32, queue_cap: usize) -> Self {
        let mut inst = JunctionInstance {
            instance_id,
            function: function.to_string(),
            uprocs: Vec::new(),
            lifecycle: Lifecycle::Live,
            init_us: JUNCTION_INIT_US,
            queue_cap,
            station: Station::default(),
            next_uproc: 0,
        };
        for _ in 0..uprocs.max(1) {
            inst.add_uproc(max_cores);
        }
        inst
    }

    fn add_uproc(&mut self, max_cores: u32) {
        self.uprocs.push(UProc {
            uproc_id: self.next_uproc,
            function: self.function.clone(),
            max_cores: max_cores.max(1),
            runnable_threads: 0,
            retiring: false,
        });
        self.next_uproc += 1;
    }

    fn live_uprocs(&self) -> impl Iterator<Item = &UProc> {
        self.uprocs.iter().filter(|u| !u.retiring)
    }

    pub fn uproc_count(&self) -> u32 {
        self.live_uprocs().count() as u32
    }

    /// NIC queue pairs track the largest per-uProc core cap.
    pub fn queue_pairs(&self) -> u32 {
        self.live_uprocs().map(|u| u.max_cores).max().unwrap_or(1).max(1)
    }

    /// Instance-wide core cap handed to the scheduler.
    pub fn core_cap(&self) -> u32 {
        self.live_uprocs().map(|u| u.max_cores).sum::<u32>().max(1)
    }

    pub fn eventq_pending(&self) -> u32 {
        self.station.queue.iter().filter(|q| !q.delivered).count() as u32
    }

    pub fn runnable_threads(&self) -> u32 {
        self.busy() + self.station.queue.iter().filter(|q| q.delivered).count() as u32
    }

    pub fn busy(&self) -> u32 {
        self.station.in_service.len() as u32
    }

    /// Scale within the instance by adding or retiring uProcs.
    pub fn set_uprocs(&mut self, n: u32, max_cores: u32) {
        let n = n.max(1);
        while self.uproc_count() < n {
            self.add_uproc(max_cores);
        }
        while self.uproc_count() > n {
            let last = self.uprocs.iter_mut().rev().find(|u| !u.retiring).expect("live uproc");
            last.retiring = true;
        }
        self.uprocs.retain(|u| !(u.retiring && u.runnable_threads == 0));
    }

    /// Raise or lower the core cap of the (single) uProc.
    pub fn set_core_cap(&mut self, max_cores: u32) {
        for u in self.uprocs.iter_mut().filter(|u| !u.retiring) {
            u.max_cores = max_cores.max(1);
        }
    }

    /// Append to the packet queue. If `idle_core` is set a polling core takes
    /// the packet at once; otherwise it waits for the event-queue wakeup.
    pub fn enqueue(&mut self, inv: InvocationId, now: Micros, idle_core: bool) -> Result<()> {
        if !matches!(self.lifecycle, Lifecycle::Live | Lifecycle::Draining) {
            return Err(Error::InstanceNotLive(self.instance_id));
        }
        self.station.push(
            self.instance_id,
            self.queue_cap,
            QueuedRequest {
                inv,
                arrived_at: now,
                ready_at: now,
                remaining_us: None,
                delivered: idle_core,
            },
        )
    }

    /// With `admissible` cores granted, deliver pending packets and start as
    /// many queued requests as free cores and uProc threads allow.
    pub fn start_ready(
        &mut self,
        admissible: u32,
        now: Micros,
        sample: &mut dyn FnMut(InvocationId) -> Result<Micros>,
    ) -> Result<Vec<Started>> {
        if admissible > 0 {
            for q in self.station.queue.iter_mut() {
                q.delivered = true;
            }
        }
        let mut started = Vec::new();
        let limit = admissible.min(self.core_cap());
        while self.busy() < limit {
            let Some(uproc) = self
                .uprocs
                .iter()
                .position(|u| !u.retiring && u.runnable_threads < u.max_cores)
            else {
                break;
            };
            match self.station.queue.front() {
                Some(q) if q.delivered => {}
                _ => break,
            }
            let req = self.station.queue.pop_front().expect("front checked");
            let uproc_id = self.uprocs[uproc].uproc_id;
            self.uprocs[uproc].runnable_threads += 1;
            started.push(self.station.begin(req, now, uproc_id, sample)?);
        }
        Ok(started)
    }

    pub fn complete(&mut self, token: u64) -> Option<InService> {
        let done = self.station.finish(token)?;
        if let Some(u) = self.uprocs.iter_mut().find(|u| u.uproc_id == done.uproc) {
            u.runnable_threads -= 1;
        }
        self.uprocs.retain(|u| !(u.retiring && u.runnable_threads == 0));
        Some(done)
    }

    pub fn preempt(&mut self, n: u32, now: Micros) -> Vec<InService> {
        let victims = self.station.preempt(n, now);
        for v in &victims {
            if let Some(u) = self.uprocs.iter_mut().find(|u| u.uproc_id == v.uproc) {
                u.runnable_threads -= 1;
            }
        }
        victims
    }

    pub fn in_service(&self) -> impl Iterator<Item = &InService> {
        self.station.in_service.values()
    }

    pub fn queued(&self) -> usize {
        self.station.queue.len()
    }

    pub fn counters(&self) -> InstanceCounters {
        self.station.counters
    }

    pub fn check_conservation(&self) -> Result<()> {
        self.station.check_conservation(self.instance_id)?;
        for u in &self.uprocs {
            let on_uproc = self.in_service().filter(|s| s.uproc == u.uproc_id).count() as u32;
            if on_uproc != u.runnable_threads {
                return Err(Error::Invariant(format!(
                    "uproc {} of instance {}: {} threads vs {} in service",
                    u.uproc_id, self.instance_id, u.runnable_threads, on_uproc
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ContainerInstance {
    pub instance_id: InstanceId,
    pub function: String,
    pub procs: u32,
    pub cores: u32,
    pub lifecycle: Lifecycle,
    pub init_us: Micros,
    pub queue_cap: usize,
    station: Station,
}

impl ContainerInstance {
    pub fn new(instance_id: InstanceId, function: &str, procs: u32, cores: u32, init_us: Micros, queue_cap: usize) -> Self {
        ContainerInstance {
            instance_id,
            function: function.to_string(),
            procs: procs.max(1),
            cores: cores.max(1),
            lifecycle: Lifecycle::Live,
            init_us,
            queue_cap,
            station: Station::default(),
        }
    }

    pub fn busy(&self) -> u32 {
        self.station.in_service.len() as u32
    }

    /// Append to the run queue; the request is admissible after `wakeup_us`.
    pub fn enqueue(&mut self, inv: InvocationId, now: Micros, wakeup_us: Micros) -> Result<()> {
        if !matches!(self.lifecycle, Lifecycle::Live | Lifecycle::Draining) {
            return Err(Error::InstanceNotLive(self.instance_id));
        }
        self.station.push(
            self.instance_id,
            self.queue_cap,
            QueuedRequest {
                inv,
                arrived_at: now,
                ready_at: now + wakeup_us,
                remaining_us: None,
                delivered: true,
            },
        )
    }

    /// Start queued requests on free cores. Returns the started requests and,
    /// if the head is still waking up, when to try again.
    pub fn start_ready(
        &mut self,
        now: Micros,
        sample: &mut dyn FnMut(InvocationId) -> Result<Micros>,
    ) -> Result<(Vec<Started>, Option<Micros>)> {
        let mut started = Vec::new();
        while self.busy() < self.cores {
            match self.station.queue.front() {
                None => return Ok((started, None)),
                Some(q) if q.ready_at > now => return Ok((started, Some(q.ready_at))),
                Some(_) => {}
            }
            let req = self.station.queue.pop_front().expect("front checked");
            started.push(self.station.begin(req, now, 0, sample)?);
        }
        Ok((started, None))
    }

    pub fn complete(&mut self, token: u64) -> Option<InService> {
        self.station.finish(token)
    }

    pub fn queued(&self) -> usize {
        self.station.queue.len()
    }

    pub fn counters(&self) -> InstanceCounters {
        self.station.counters
    }

    pub fn check_conservation(&self) -> Result<()> {
        self.station.check_conservation(self.instance_id)?;
        if self.busy() > self.cores {
            return Err(Error::Invariant(format!(
                "container {} serves {} > {} cores",
                self.instance_id,
                self.busy(),
                self.cores
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Instance {
    Junction(JunctionInstance),
    Container(ContainerInstance),
}

impl Instance {
    pub fn id(&self) -> InstanceId {
        match self {
            Instance::Junction(j) => j.instance_id,
            Instance::Container(c) => c.instance_id,
        }
    }

    pub fn function(&self) -> &str {
        match self {
            Instance::Junction(j) => &j.function,
            Instance::Container(c) => &c.function,
        }
    }

    pub fn kind(&self) -> PathKind {
        match self {
            Instance::Junction(_) => PathKind::Bypass,
            Instance::Container(_) => PathKind::KernelStack,
        }
    }

    pub fn lifecycle(&self) -> Lifecycle {
        match self {
            Instance::Junction(j) => j.lifecycle,
            Instance::Container(c) => c.lifecycle,
        }
    }

    pub fn set_lifecycle(&mut self, l: Lifecycle) {
        match self {
            Instance::Junction(j) => j.lifecycle = l,
            Instance::Container(c) => c.lifecycle = l,
        }
    }

    pub fn is_live(&self) -> bool {
        self.lifecycle() == Lifecycle::Live
    }

    pub fn busy(&self) -> u32 {
        match self {
            Instance::Junction(j) => j.busy(),
            Instance::Container(c) => c.busy(),
        }
    }

    pub fn queued(&self) -> usize {
        match self {
            Instance::Junction(j) => j.queued(),
            Instance::Container(c) => c.queued(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.busy() == 0 && self.queued() == 0
    }

    pub fn counters(&self) -> InstanceCounters {
        match self {
            Instance::Junction(j) => j.counters(),
            Instance::Container(c) => c.counters(),
        }
    }

    pub fn complete(&mut self, token: u64) -> Option<InService> {
        match self {
            Instance::Junction(j) => j.complete(token),
            Instance::Container(c) => c.complete(token),
        }
    }

    pub fn check_conservation(&self) -> Result<()> {
        match self {
            Instance::Junction(j) => j.check_conservation(),
            Instance::Container(c) => c.check_conservation(),
        }
    }

    pub fn as_junction(&self) -> Option<&JunctionInstance> {
        match self {
            Instance::Junction(j) => Some(j),
            Instance::Container(_) => None,
        }
    }

    pub fn as_container(&self) -> Option<&ContainerInstance> {
        match self {
            Instance::Container(c) => Some(c),
            Instance::Junction(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(us: Micros) -> impl FnMut(InvocationId) -> Result<Micros> {
        move |_| Ok(us)
    }

    #[test]
    fn queue_pairs_follow_core_cap() {
        let mut j = JunctionInstance::new(1, "f", 1, 1, 16);
        assert_eq!(j.queue_pairs(), 1);
        j.set_core_cap(4);
        assert_eq!(j.queue_pairs(), 4);
        assert_eq!(j.core_cap(), 4);
        let m = JunctionInstance::new(2, "g", 3, 1, 16);
        assert_eq!(m.queue_pairs(), 1);
        assert_eq!(m.core_cap(), 3);
    }

    #[test]
    fn full_queue_rejects() {
        let mut j = JunctionInstance::new(1, "f", 1, 1, 2);
        j.enqueue(1, 0, false).unwrap();
        j.enqueue(2, 0, false).unwrap();
        assert_eq!(
            j.enqueue(3, 0, false),
            Err(Error::Overloaded { instance: 1, queue_cap: 2 })
        );
        assert_eq!(j.counters().rejected, 1);
        j.check_conservation().unwrap();

        let mut c = ContainerInstance::new(2, "f", 1, 1, 0, 1);
        c.enqueue(1, 0, 0).unwrap();
        assert!(c.enqueue(2, 0, 0).is_err());
        c.check_conservation().unwrap();
    }

    #[test]
    fn undelivered_packets_wait_for_a_core() {
        let mut j = JunctionInstance::new(1, "f", 1, 2, 16);
        j.enqueue(10, 0, false).unwrap();
        j.enqueue(11, 0, false).unwrap();
        assert_eq!(j.eventq_pending(), 2);
        assert_eq!(j.runnable_threads(), 0);
        assert!(j.start_ready(0, 0, &mut fixed(100)).unwrap().is_empty());
        let started = j.start_ready(1, 5, &mut fixed(100)).unwrap();
        assert_eq!(started.len(), 1);
        assert_eq!(started[0].ends_at, 105);
        assert_eq!(j.eventq_pending(), 0);
        assert_eq!(j.runnable_threads(), 2);
    }

    #[test]
    fn fifo_with_one_core() {
        let mut c = ContainerInstance::new(1, "f", 1, 1, 0, 16);
        c.enqueue(1, 0, 0).unwrap();
        c.enqueue(2, 0, 0).unwrap();
        let (s, _) = c.start_ready(0, &mut fixed(50)).unwrap();
        assert_eq!(s.iter().map(|x| x.inv).collect::<Vec<_>>(), vec![1]);
        c.complete(s[0].token).unwrap();
        let (s2, _) = c.start_ready(50, &mut fixed(50)).unwrap();
        assert_eq!(s2[0].inv, 2);
        assert_eq!(s2[0].ends_at, 100);
    }

    #[test]
    fn two_cores_three_requests() {
        // hand-simulated 2-server FIFO: completions at +100, +100, +200
        let mut j = JunctionInstance::new(1, "f", 1, 2, 16);
        for inv in 0..3 {
            j.enqueue(inv, 0, true).unwrap();
        }
        let mut ends: Vec<Micros> = Vec::new();
        let first = j.start_ready(2, 0, &mut fixed(100)).unwrap();
        assert_eq!(first.len(), 2);
        ends.extend(first.iter().map(|s| s.ends_at));
        j.complete(first[0].token).unwrap();
        let next = j.start_ready(2, 100, &mut fixed(100)).unwrap();
        ends.extend(next.iter().map(|s| s.ends_at));
        assert_eq!(ends, vec![100, 100, 200]);
        j.check_conservation().unwrap();
    }

    #[test]
    fn container_wakeup_delays_admission() {
        let mut c = ContainerInstance::new(1, "f", 1, 1, 0, 16);
        c.enqueue(1, 10, 5).unwrap();
        let (s, retry) = c.start_ready(10, &mut fixed(1)).unwrap();
        assert!(s.is_empty());
        assert_eq!(retry, Some(15));
        let (s, _) = c.start_ready(15, &mut fixed(1)).unwrap();
        assert_eq!(s[0].at, 15);
    }

    #[test]
    fn multiprocess_uprocs_share_the_grant() {
        let mut j = JunctionInstance::new(1, "py", 1, 1, 16);
        j.set_uprocs(3, 1);
        assert_eq!(j.uproc_count(), 3);
        for inv in 0..4 {
            j.enqueue(inv, 0, true).unwrap();
        }
        // two granted cores, three single-threaded uprocs
        let s = j.start_ready(2, 0, &mut fixed(10)).unwrap();
        assert_eq!(s.len(), 2);
        let s = j.start_ready(8, 0, &mut fixed(10)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(j.busy(), 3);
        j.check_conservation().unwrap();
    }

    #[test]
    fn retiring_uproc_drains_first() {
        let mut j = JunctionInstance::new(1, "py", 2, 1, 16);
        j.enqueue(0, 0, true).unwrap();
        j.enqueue(1, 0, true).unwrap();
        let s = j.start_ready(2, 0, &mut fixed(10)).unwrap();
        j.set_uprocs(1, 1);
        assert_eq!(j.uproc_count(), 1);
        assert_eq!(j.uprocs.len(), 2);
        j.complete(s[1].token).unwrap();
        assert_eq!(j.uprocs.len(), 1);
        j.check_conservation().unwrap();
    }

    #[test]
    fn preempted_work_resumes_with_remaining_time() {
        let mut j = JunctionInstance::new(1, "f", 1, 2, 16);
        j.enqueue(0, 0, true).unwrap();
        j.enqueue(1, 0, true).unwrap();
        let s = j.start_ready(2, 0, &mut fixed(100)).unwrap();
        let victims = j.preempt(1, 30);
        assert_eq!(victims.len(), 1);
        assert_eq!(victims[0].inv, 1);
        assert!(j.complete(s[1].token).is_none());
        let resumed = j.start_ready(2, 40, &mut fixed(999)).unwrap();
        assert_eq!(resumed[0].inv, 1);
        assert!(resumed[0].resumed);
        assert_eq!(resumed[0].ends_at, 110);
        j.check_conservation().unwrap();
    }

    #[test]
    fn not_live_rejects_enqueue() {
        let mut c = ContainerInstance::new(3, "f", 1, 1, 10, 4);
        c.lifecycle = Lifecycle::Initializing { ready_at: 10 };
        assert_eq!(c.enqueue(0, 0, 0), Err(Error::InstanceNotLive(3)));
    }
}
