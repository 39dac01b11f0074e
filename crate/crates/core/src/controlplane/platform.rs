use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::controlplane::manager::{ManagerEffects, ManagerLimits};
use crate::controlplane::{
    FunctionManager, FunctionSpec, InvocationId, InvocationRecord, InvocationStatus, Lookup, Provider,
    ReplicaRecord, Resolution,
};
use crate::error::{Error, Result};
use crate::instance::{Instance, Started, JUNCTION_INIT_US};
use crate::netmodel::{self, ComputeParams, PathKind, PathParams};
use crate::sched::{CoreScheduler, InstanceId, SchedEvent, SchedTraceRow, SchedulerConfig};
use crate::simcore::{round_us, Dist, Engine, EventKind, Micros, RngStream, Trace, TraceDetail};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    /// Path kind of the gateway, provider and every RPC leg between them.
    pub backend: PathKind,
    pub path: PathParams,
    pub compute: ComputeParams,
    pub scheduler: SchedulerConfig,
    pub junction_init_us: Micros,
    pub container_startup_us: Micros,
    /// OS core share of one container process.
    pub container_core_share: u32,
    pub queue_cap: usize,
    pub max_instances: usize,
    pub req_bytes: u64,
    pub resp_bytes: u64,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            backend: PathKind::Bypass,
            path: PathParams::default(),
            compute: ComputeParams::default(),
            scheduler: SchedulerConfig::default(),
            junction_init_us: JUNCTION_INIT_US,
            container_startup_us: 250_000,
            container_core_share: 1,
            queue_cap: 1024,
            max_instances: 1024,
            req_bytes: 600,
            resp_bytes: 600,
        }
    }
}

impl PlatformConfig {
    pub fn validate(&self) -> Result<()> {
        self.scheduler.validate()?;
        if !self.path.is_valid() {
            return Err(Error::InvalidConfig("path parameters must be finite and >= 0".into()));
        }
        if !(self.compute.mux_overhead_factor.is_finite() && self.compute.mux_overhead_factor >= 1.0) {
            return Err(Error::InvalidConfig("mux_overhead_factor must be >= 1".into()));
        }
        self.compute.jitter.validate()?;
        if self.queue_cap == 0 || self.max_instances == 0 || self.container_core_share == 0 {
            return Err(Error::InvalidConfig(
                "queue_cap, max_instances and container_core_share must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Integer cost charged for each of the three RPC legs.
    pub fn hop_us(&self) -> Micros {
        round_us(netmodel::rpc_cost(self.backend, self.req_bytes, self.resp_bytes, &self.path))
    }

    /// Same configuration with every backend-specific overhead removed.
    ///
    /// Path overheads and compute multiplexing go to zero, the scheduler polls
    /// at the clock resolution, and containers start as fast as bypass
    /// instances and get the same core share.
    pub fn zero_overheads(&self) -> Self {
        PlatformConfig {
            path: self.path.without_overheads(),
            compute: ComputeParams::neutral(),
            scheduler: SchedulerConfig {
                tick_us: 1,
                ..self.scheduler
            },
            container_core_share: u32::MAX,
            container_startup_us: self.junction_init_us,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Submit { inv: InvocationId },
    NextArrival,
    AtGateway { inv: InvocationId },
    AtProvider { inv: InvocationId },
    AtInstance { inv: InvocationId, instance: InstanceId },
    Wakeup { instance: InstanceId },
    Tick,
    RevokeDeadline { instance: InstanceId },
    Ready { instance: InstanceId },
    Done { instance: InstanceId, token: u64 },
}

impl TraceDetail for Payload {
    fn detail(&self) -> String {
        match self {
            Payload::Submit { inv } => format!("submit inv={inv}"),
            Payload::NextArrival => "arrival".into(),
            Payload::AtGateway { inv } => format!("gateway inv={inv}"),
            Payload::AtProvider { inv } => format!("provider inv={inv}"),
            Payload::AtInstance { inv, instance } => format!("instance inv={inv} inst={instance}"),
            Payload::Wakeup { instance } => format!("wakeup inst={instance}"),
            Payload::Tick => "tick".into(),
            Payload::RevokeDeadline { instance } => format!("revoke inst={instance}"),
            Payload::Ready { instance } => format!("ready inst={instance}"),
            Payload::Done { instance, token } => format!("done inst={instance} token={token}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PlatformCounters {
    pub injected: u64,
    pub ok: u64,
    pub no_such_function: u64,
    pub rejected: u64,
}

impl PlatformCounters {
    pub fn completed(&self) -> u64 {
        self.ok + self.no_such_function
    }

    pub fn finished(&self) -> u64 {
        self.completed() + self.rejected
    }
}

#[derive(Debug, Clone)]
enum Driver {
    Idle,
    Closed {
        function: String,
        remaining: u64,
    },
    Open {
        function: String,
        mean_gap_us: f64,
        next_f: f64,
        stop_at: Micros,
        rng: RngStream,
    },
}

#[derive(Debug, Clone, Copy, Default)]
struct Progress {
    waiting_since: Micros,
    queue_us: Micros,
}

/// One simulated host: gateway, provider, manager, scheduler and instances.
#[derive(Debug)]
pub struct Platform {
    config: PlatformConfig,
    seed: u64,
    engine: Engine<Payload>,
    manager: FunctionManager,
    provider: Provider,
    scheduler: CoreScheduler,
    invocations: Vec<InvocationRecord>,
    progress: Vec<Progress>,
    service_rng: RngStream,
    jitter_rng: RngStream,
    driver: Driver,
    counters: PlatformCounters,
    in_transit: u64,
    inbound: BTreeMap<InstanceId, u64>,
    tick_at: Option<Micros>,
    wakeup_at: BTreeMap<InstanceId, Micros>,
    revoke_at: BTreeMap<InstanceId, Micros>,
    hop_us: Micros,
    wakeup_us: Micros,
    check: bool,
    sched_trace: Vec<SchedTraceRow>,
}

impl Platform {
    pub fn new(config: PlatformConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let limits = ManagerLimits {
            max_instances: config.max_instances,
            junction_init_us: config.junction_init_us,
            container_startup_us: config.container_startup_us,
            container_core_share: config.container_core_share,
            queue_cap: config.queue_cap,
        };
        Ok(Platform {
            hop_us: config.hop_us(),
            wakeup_us: round_us(config.path.kernel_wakeup_cost()),
            scheduler: CoreScheduler::new(config.scheduler)?,
            manager: FunctionManager::new(limits),
            provider: Provider::new(),
            engine: Engine::new(),
            invocations: Vec::new(),
            progress: Vec::new(),
            service_rng: RngStream::new(seed, "service"),
            jitter_rng: RngStream::new(seed, "jitter"),
            driver: Driver::Idle,
            counters: PlatformCounters::default(),
            in_transit: 0,
            inbound: BTreeMap::new(),
            tick_at: None,
            wakeup_at: BTreeMap::new(),
            revoke_at: BTreeMap::new(),
            check: false,
            sched_trace: Vec::new(),
            config,
            seed,
        })
    }

    /// Record every dispatch in the trace.
    pub fn with_trace(mut self, record: bool) -> Self {
        self.engine = std::mem::take(&mut self.engine).with_recording(record);
        self
    }

    pub fn with_sched_trace(mut self, record: bool) -> Self {
        self.scheduler = self.scheduler.clone().with_trace(record);
        self
    }

    /// Verify conservation and allocation invariants after every event.
    pub fn with_invariant_checks(mut self, on: bool) -> Self {
        self.check = on;
        self
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn now(&self) -> Micros {
        self.engine.now()
    }

    pub fn manager(&self) -> &FunctionManager {
        &self.manager
    }

    pub fn provider(&self) -> &Provider {
        &self.provider
    }

    pub fn scheduler(&self) -> &CoreScheduler {
        &self.scheduler
    }

    pub fn counters(&self) -> PlatformCounters {
        self.counters
    }

    pub fn invocations(&self) -> &[InvocationRecord] {
        &self.invocations
    }

    pub fn into_invocations(self) -> Vec<InvocationRecord> {
        self.invocations
    }

    pub fn take_sched_trace(&mut self) -> Vec<SchedTraceRow> {
        self.sched_trace.extend(self.scheduler.take_trace());
        std::mem::take(&mut self.sched_trace)
    }

    pub fn next_event_time(&self) -> Option<Micros> {
        self.engine.peek_time()
    }

    pub fn events_pending(&self) -> u64 {
        self.engine.queued_count()
    }

    /// Requests currently inside the platform, counted from where they sit.
    pub fn in_flight(&self) -> u64 {
        let resident: u64 = self
            .manager
            .instances()
            .map(|i| i.busy() as u64 + i.queued() as u64)
            .sum();
        self.in_transit + self.provider.parked_count() as u64 + resident
    }

    // ---- gateway-mediated writes ----

    pub fn deploy_function(&mut self, spec: FunctionSpec) -> Result<()> {
        let name = spec.name.clone();
        let effects = self.manager.deploy(spec, self.now())?;
        self.apply_effects(&name, effects)?;
        Ok(())
    }

    pub fn scale_function(&mut self, name: &str, new_scale: u32) -> Result<Option<ReplicaRecord>> {
        let effects = self.manager.scale(name, new_scale, self.now())?;
        self.apply_effects(name, effects)?;
        Ok(match self.manager.lookup(name) {
            Lookup::Live(rec) => Some(rec),
            _ => None,
        })
    }

    pub fn remove_function(&mut self, name: &str) -> Result<()> {
        let effects = self.manager.remove(name)?;
        self.apply_effects(name, effects)?;
        for inv in self.provider.unpark(name) {
            self.finish(inv, InvocationStatus::NoSuchFunction);
        }
        Ok(())
    }

    /// Provider-side lookup, as an invocation would perform it.
    pub fn provider_resolve(&mut self, name: &str) -> Result<Resolution> {
        self.provider.resolve(name, &mut self.manager)
    }

    fn apply_effects(&mut self, name: &str, effects: ManagerEffects) -> Result<()> {
        for (id, ready_at) in &effects.initializing {
            self.engine
                .schedule(*ready_at, EventKind::InstanceReady, Payload::Ready { instance: *id })?;
        }
        for id in &effects.recapped {
            self.refresh_instance(*id)?;
        }
        for id in &effects.draining {
            self.try_reap(*id);
        }
        self.provider.on_write(name, &self.manager);
        Ok(())
    }

    fn refresh_instance(&mut self, id: InstanceId) -> Result<()> {
        match self.manager.instance(id) {
            Some(Instance::Junction(j)) if self.scheduler.contains(id) => {
                let cap = j.core_cap();
                self.scheduler.set_cap(id, cap)?;
                self.pump_junction(id)?;
                self.request_tick();
            }
            Some(Instance::Container(_)) => self.pump_container(id)?,
            _ => {}
        }
        Ok(())
    }

    fn try_reap(&mut self, id: InstanceId) {
        if self.inbound.get(&id).copied().unwrap_or(0) > 0 {
            return;
        }
        if self.manager.reap(id) {
            self.scheduler.unregister(id);
            self.inbound.remove(&id);
            self.request_tick();
        }
    }

    // ---- load ----

    fn new_invocation(&mut self, function: &str, at: Micros) -> InvocationId {
        let id = self.invocations.len() as InvocationId;
        self.invocations.push(InvocationRecord::new(id, function, at));
        self.progress.push(Progress::default());
        id
    }

    /// Queue one invocation of `function` to arrive at the gateway at `at`.
    pub fn submit(&mut self, function: &str, at: Micros) -> Result<InvocationId> {
        let id = self.new_invocation(function, at);
        self.engine
            .schedule(at, EventKind::LoadArrival, Payload::Submit { inv: id })?;
        Ok(id)
    }

    /// Closed loop: issue the next invocation only when the previous one returns.
    pub fn start_closed_loop(&mut self, function: &str, count: u64) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        self.driver = Driver::Closed {
            function: function.to_string(),
            remaining: count - 1,
        };
        self.submit(function, self.now())?;
        Ok(())
    }

    /// Open loop: Poisson arrivals at `rate_rps` from now until `now + duration_us`.
    pub fn start_open_loop(&mut self, function: &str, rate_rps: f64, duration_us: Micros, stream: &str) -> Result<()> {
        if !(rate_rps.is_finite() && rate_rps > 0.0) {
            return Err(Error::InvalidConfig(format!("offered rate {rate_rps} must be > 0")));
        }
        let start = self.now();
        let mut rng = RngStream::new(self.seed, stream);
        let mean_gap_us = 1e6 / rate_rps;
        let first = start as f64 + rng.draw(&Dist::exponential_mean(mean_gap_us))?;
        let stop_at = start + duration_us;
        let at = round_us(first);
        self.driver = Driver::Open {
            function: function.to_string(),
            mean_gap_us,
            next_f: first,
            stop_at,
            rng,
        };
        if at < stop_at {
            self.engine.schedule(at, EventKind::LoadArrival, Payload::NextArrival)?;
        }
        Ok(())
    }

    // ---- event loop ----

    /// Dispatch all events up to `t_end`.
    pub fn run_until(&mut self, t_end: Micros) -> Result<()> {
        if t_end < self.now() {
            return Err(Error::PastTimestamp {
                fire_at: t_end,
                now: self.now(),
            });
        }
        while let Some(ev) = self.engine.next_until(t_end) {
            self.handle(ev.kind, ev.payload)?;
            if self.check {
                self.check_invariants()?;
            }
        }
        self.engine.advance_idle(t_end);
        Ok(())
    }

    /// Dispatch until no events remain.
    pub fn run_to_idle(&mut self) -> Result<()> {
        while let Some(t) = self.engine.peek_time() {
            self.run_until(t)?;
        }
        Ok(())
    }

    /// Everything dispatched since the last call.
    pub fn take_trace(&mut self) -> Trace {
        self.engine.take_trace()
    }

    fn handle(&mut self, kind: EventKind, payload: Payload) -> Result<()> {
        let now = self.now();
        match payload {
            Payload::Submit { inv } => self.arrive(inv),
            Payload::NextArrival => {
                let Driver::Open {
                    function,
                    mean_gap_us,
                    next_f,
                    stop_at,
                    rng,
                } = &mut self.driver
                else {
                    return Ok(());
                };
                let function = function.clone();
                *next_f += rng.draw(&Dist::exponential_mean(*mean_gap_us))?;
                let next_at = round_us(*next_f);
                if next_at < *stop_at {
                    self.engine
                        .schedule(next_at, EventKind::LoadArrival, Payload::NextArrival)?;
                }
                let inv = self.new_invocation(&function, now);
                self.arrive(inv)
            }
            Payload::AtGateway { inv } => {
                self.in_transit -= 1;
                self.invocations[inv as usize].gateway_t = Some(now);
                self.send(inv, Payload::AtProvider { inv });
                Ok(())
            }
            Payload::AtProvider { inv } => {
                self.in_transit -= 1;
                self.invocations[inv as usize].provider_t = Some(now);
                self.dispatch_from_provider(inv)
            }
            Payload::AtInstance { inv, instance } => {
                self.in_transit -= 1;
                *self.inbound.entry(instance).or_default() -= 1;
                self.invocations[inv as usize].instance_t = Some(now);
                self.at_instance(inv, instance)
            }
            Payload::Wakeup { instance } => {
                if self.wakeup_at.get(&instance) == Some(&now) {
                    self.wakeup_at.remove(&instance);
                }
                self.pump_container(instance)
            }
            Payload::Tick => {
                if self.tick_at == Some(now) {
                    self.tick_at = None;
                }
                self.on_tick()
            }
            Payload::RevokeDeadline { instance } => {
                if self.revoke_at.get(&instance) == Some(&now) {
                    self.revoke_at.remove(&instance);
                }
                self.on_revoke_deadline(instance)
            }
            Payload::Ready { instance } => self.on_ready(instance),
            Payload::Done { instance, token } => {
                debug_assert_eq!(kind, EventKind::ServiceComplete);
                self.on_done(instance, token)
            }
        }
    }

    fn send(&mut self, inv: InvocationId, next: Payload) {
        let rec = &mut self.invocations[inv as usize];
        rec.hop_costs.push(self.hop_us);
        self.in_transit += 1;
        let kind = match next {
            Payload::AtInstance { .. } => EventKind::PacketArrival,
            _ => EventKind::RpcComplete,
        };
        self.engine.schedule_in(self.hop_us, kind, next);
    }

    fn arrive(&mut self, inv: InvocationId) -> Result<()> {
        self.counters.injected += 1;
        self.send(inv, Payload::AtGateway { inv });
        Ok(())
    }

    fn dispatch_from_provider(&mut self, inv: InvocationId) -> Result<()> {
        let name = self.invocations[inv as usize].function.clone();
        match self.provider.resolve(&name, &mut self.manager) {
            Err(Error::NoSuchFunction(_)) => {
                self.finish(inv, InvocationStatus::NoSuchFunction);
                Ok(())
            }
            Err(e) => Err(e),
            Ok(Resolution::Pending) => {
                self.progress[inv as usize].waiting_since = self.now();
                self.provider.park(&name, inv);
                Ok(())
            }
            Ok(Resolution::Ready(rec)) => {
                let instance = self.provider.pick(&rec);
                *self.inbound.entry(instance).or_default() += 1;
                self.send(inv, Payload::AtInstance { inv, instance });
                Ok(())
            }
        }
    }

    fn at_instance(&mut self, inv: InvocationId, id: InstanceId) -> Result<()> {
        let now = self.now();
        self.progress[inv as usize].waiting_since = now;
        let admissible = self.scheduler.admissible(id);
        let wakeup = self.wakeup_us;
        let enq = match self.manager.instance_mut(id) {
            Some(Instance::Junction(j)) => {
                let idle_core = admissible > j.busy();
                j.enqueue(inv, now, idle_core).map(|_| Some(idle_core))
            }
            Some(Instance::Container(c)) => c.enqueue(inv, now, wakeup).map(|_| None),
            None => return Err(Error::UnknownInstance(id)),
        };
        match enq {
            Err(Error::Overloaded { .. }) => {
                self.finish(inv, InvocationStatus::OverloadRejected);
                self.try_reap(id);
                Ok(())
            }
            Err(e) => Err(e),
            Ok(Some(idle_core)) => {
                if !idle_core {
                    self.scheduler.signal_eventq(id)?;
                    self.request_tick();
                }
                self.pump_junction(id)
            }
            Ok(None) => self.pump_container(id),
        }
    }

    fn sampler<'a>(
        spec: (f64, f64, PathKind),
        compute: &'a ComputeParams,
        service_rng: &'a mut RngStream,
        jitter_rng: &'a mut RngStream,
    ) -> impl FnMut(InvocationId) -> Result<Micros> + 'a {
        let (base, sigma, kind) = spec;
        move |_| {
            let drawn = if sigma > 0.0 {
                service_rng.draw(&Dist::lognormal_median(base, sigma))?
            } else {
                base
            };
            let t = netmodel::service_time(kind, drawn, compute, jitter_rng)?;
            Ok(round_us(t).max(1))
        }
    }

    fn spec_of(&self, id: InstanceId) -> Option<(f64, f64, PathKind)> {
        let inst = self.manager.instance(id)?;
        let dep = self.manager.deployment(inst.function());
        let (base, sigma) = dep
            .map(|d| (d.spec.base_service_us, d.spec.service_sigma))
            .unwrap_or((1.0, 0.0));
        Some((base, sigma, inst.kind()))
    }

    fn on_started(&mut self, id: InstanceId, started: Vec<Started>) {
        let now = self.now();
        for s in started {
            let p = &mut self.progress[s.inv as usize];
            p.queue_us += now - p.waiting_since;
            if !s.resumed {
                self.invocations[s.inv as usize].exec_us = s.run_us;
            }
            self.engine.schedule_in(
                s.ends_at - now,
                EventKind::ServiceComplete,
                Payload::Done {
                    instance: id,
                    token: s.token,
                },
            );
        }
    }

    fn pump_junction(&mut self, id: InstanceId) -> Result<()> {
        let Some(spec) = self.spec_of(id) else {
            return Ok(());
        };
        let now = self.now();
        let admissible = self.scheduler.admissible(id);
        let before = self.scheduler.signals(id).map(|s| s.demand());
        let Some(Instance::Junction(j)) = self.manager.instance_mut(id) else {
            return Ok(());
        };
        let started = {
            let mut sample = Self::sampler(spec, &self.config.compute, &mut self.service_rng, &mut self.jitter_rng);
            j.start_ready(admissible, now, &mut sample)?
        };
        let (runnable, pending, busy) = (j.runnable_threads(), j.eventq_pending(), j.busy());
        self.on_started(id, started);
        if self.scheduler.contains(id) {
            self.scheduler.update_load(id, runnable, pending, busy)?;
            if self.scheduler.signals(id).map(|s| s.demand()) != before {
                self.request_tick();
            }
        }
        Ok(())
    }

    fn pump_container(&mut self, id: InstanceId) -> Result<()> {
        let Some(spec) = self.spec_of(id) else {
            return Ok(());
        };
        let now = self.now();
        let Some(Instance::Container(c)) = self.manager.instance_mut(id) else {
            return Ok(());
        };
        let (started, retry) = {
            let mut sample = Self::sampler(spec, &self.config.compute, &mut self.service_rng, &mut self.jitter_rng);
            c.start_ready(now, &mut sample)?
        };
        self.on_started(id, started);
        if let Some(at) = retry {
            if self.wakeup_at.get(&id).is_none_or(|pending| *pending > at) {
                self.wakeup_at.insert(id, at);
                self.engine
                    .schedule(at, EventKind::PacketArrival, Payload::Wakeup { instance: id })?;
            }
        }
        Ok(())
    }

    fn request_tick(&mut self) {
        let at = self.scheduler.config().next_tick_at(self.now());
        if self.tick_at.is_none_or(|pending| pending > at) {
            self.tick_at = Some(at);
            self.engine
                .schedule(at, EventKind::SchedulerTick, Payload::Tick)
                .expect("tick is never in the past");
        }
    }

    fn on_tick(&mut self) -> Result<()> {
        let now = self.now();
        let outcome = self.scheduler.tick(now);
        if self.check {
            self.check_work_conservation()?;
        }
        for ev in &outcome.events {
            match *ev {
                SchedEvent::Grant { instance, .. } => self.pump_junction(instance)?,
                SchedEvent::Preempt {
                    instance,
                    deferred,
                    deadline,
                    ..
                } if deferred > 0 => {
                    if self.revoke_at.get(&instance).is_none_or(|t| *t != deadline) {
                        self.revoke_at.insert(instance, deadline);
                        self.engine.schedule(
                            deadline,
                            EventKind::SchedulerTick,
                            Payload::RevokeDeadline { instance },
                        )?;
                    }
                }
                SchedEvent::Preempt { .. } => {}
            }
        }
        Ok(())
    }

    fn on_revoke_deadline(&mut self, id: InstanceId) -> Result<()> {
        let now = self.now();
        if self.scheduler.revoke_deadline(id) != Some(now) {
            return Ok(());
        }
        let n = self.scheduler.pending_revoke(id);
        let Some(Instance::Junction(j)) = self.manager.instance_mut(id) else {
            return Ok(());
        };
        let victims = j.preempt(n, now);
        let (runnable, pending, busy) = (j.runnable_threads(), j.eventq_pending(), j.busy());
        for v in &victims {
            self.progress[v.inv as usize].waiting_since = now;
        }
        self.scheduler.force_revoke(id, victims.len() as u32)?;
        self.scheduler.update_load(id, runnable, pending, busy)?;
        self.request_tick();
        Ok(())
    }

    fn on_ready(&mut self, id: InstanceId) -> Result<()> {
        let Some(name) = self.manager.mark_ready(id) else {
            return Ok(());
        };
        if let Some(Instance::Junction(j)) = self.manager.instance(id) {
            let cap = j.core_cap();
            self.scheduler.register(id, cap);
        }
        self.provider.on_write(&name, &self.manager);
        let now = self.now();
        for inv in self.provider.unpark(&name) {
            let p = &mut self.progress[inv as usize];
            p.queue_us += now - p.waiting_since;
            self.dispatch_from_provider(inv)?;
        }
        Ok(())
    }

    fn on_done(&mut self, id: InstanceId, token: u64) -> Result<()> {
        let Some(inst) = self.manager.instance_mut(id) else {
            return Ok(());
        };
        let Some(done) = inst.complete(token) else {
            // preempted earlier; the request was re-queued
            return Ok(());
        };
        self.finish(done.inv, InvocationStatus::Ok);
        if self.scheduler.contains(id) {
            self.scheduler.core_freed(id);
            self.pump_junction(id)?;
            self.request_tick();
        } else {
            self.pump_container(id)?;
        }
        self.try_reap(id);
        Ok(())
    }

    fn finish(&mut self, inv: InvocationId, status: InvocationStatus) {
        let now = self.now();
        let rec = &mut self.invocations[inv as usize];
        rec.complete_t = Some(now);
        rec.status = status;
        rec.queue_us = self.progress[inv as usize].queue_us;
        match status {
            InvocationStatus::Ok => self.counters.ok += 1,
            InvocationStatus::NoSuchFunction => self.counters.no_such_function += 1,
            InvocationStatus::OverloadRejected => self.counters.rejected += 1,
            InvocationStatus::InFlight => unreachable!("finish with in-flight status"),
        }
        if let Driver::Closed { function, remaining } = &mut self.driver {
            if *remaining > 0 {
                *remaining -= 1;
                let function = function.clone();
                let id = self.new_invocation(&function, now);
                self.engine
                    .schedule(now, EventKind::LoadArrival, Payload::Submit { inv: id })
                    .expect("now is never in the past");
            }
        }
    }

    // ---- invariants ----

    fn check_work_conservation(&self) -> Result<()> {
        let free = self.scheduler.usable().saturating_sub(self.scheduler.total_allocated());
        if free == 0 {
            return Ok(());
        }
        for inst in self.manager.instances() {
            if let Some(s) = self.scheduler.signals(inst.id()) {
                if s.demand() > s.allocated {
                    return Err(Error::Invariant(format!(
                        "tick left {free} cores idle while instance {} wants {} and holds {}",
                        inst.id(),
                        s.demand(),
                        s.allocated
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<()> {
        let c = self.counters;
        let in_flight = self.in_flight();
        if c.injected != c.completed() + in_flight + c.rejected {
            return Err(Error::Invariant(format!(
                "injected {} != completed {} + in-flight {} + rejected {}",
                c.injected,
                c.completed(),
                in_flight,
                c.rejected
            )));
        }
        let usable = self.scheduler.usable();
        let total = self.scheduler.total_allocated();
        if total > usable {
            return Err(Error::Invariant(format!("{total} cores allocated, {usable} usable")));
        }
        for inst in self.manager.instances() {
            inst.check_conservation()?;
            if let Instance::Junction(j) = inst {
                if let Some(s) = self.scheduler.signals(j.instance_id) {
                    if j.busy() > s.allocated || s.allocated > s.cap {
                        return Err(Error::Invariant(format!(
                            "instance {} busy {} allocated {} cap {}",
                            j.instance_id,
                            j.busy(),
                            s.allocated,
                            s.cap
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Invocation-level checks over every finished record.
    pub fn check_records(&self) -> Result<()> {
        self.invocations.iter().try_for_each(InvocationRecord::check)
    }
}
