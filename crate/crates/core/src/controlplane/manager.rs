use std::collections::BTreeMap;

use crate::controlplane::{Endpoint, FunctionSpec, ReplicaRecord, ScaleMechanism};
use crate::error::{Error, Result};
use crate::instance::{ContainerInstance, Instance, JunctionInstance, Lifecycle};
use crate::netmodel::PathKind;
use crate::sched::InstanceId;
use crate::simcore::Micros;

const BASE_PORT: u16 = 31_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub spec: FunctionSpec,
    /// Instances currently serving or initialising, in creation order.
    pub instances: Vec<InstanceId>,
    /// Per-process core cap.
    pub core_cap: u32,
    /// Processes per instance.
    pub procs: u32,
}

impl Deployment {
    pub fn current_scale(&self) -> u32 {
        match self.spec.scale_mechanism {
            ScaleMechanism::MultiProcess => self.procs,
            ScaleMechanism::RaiseCoreCap => self.core_cap,
            ScaleMechanism::NewInstance => self.instances.len() as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Live(ReplicaRecord),
    /// Deployed, but no instance has finished initialising.
    Pending,
    Absent,
}

/// What a manager call changed, for the platform to act on.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManagerEffects {
    /// New instances with their ready time.
    pub initializing: Vec<(InstanceId, Micros)>,
    /// Instances whose core cap changed.
    pub recapped: Vec<InstanceId>,
    /// Instances that stopped taking new work.
    pub draining: Vec<InstanceId>,
}

impl ManagerEffects {
    pub fn is_empty(&self) -> bool {
        self.initializing.is_empty() && self.recapped.is_empty() && self.draining.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ManagerLimits {
    pub max_instances: usize,
    pub junction_init_us: Micros,
    pub container_startup_us: Micros,
    pub container_core_share: u32,
    pub queue_cap: usize,
}

/// Authoritative deployment table and instance owner.
#[derive(Debug, Clone)]
pub struct FunctionManager {
    limits: ManagerLimits,
    deployments: BTreeMap<String, Deployment>,
    instances: BTreeMap<InstanceId, Instance>,
    queries: BTreeMap<String, u64>,
    next_instance: InstanceId,
}

impl FunctionManager {
    pub fn new(limits: ManagerLimits) -> Self {
        FunctionManager {
            limits,
            deployments: BTreeMap::new(),
            instances: BTreeMap::new(),
            queries: BTreeMap::new(),
            next_instance: 1,
        }
    }

    pub fn deployment(&self, name: &str) -> Option<&Deployment> {
        self.deployments.get(name)
    }

    pub fn deployments(&self) -> impl Iterator<Item = (&String, &Deployment)> {
        self.deployments.iter()
    }

    pub fn instance(&self, id: InstanceId) -> Option<&Instance> {
        self.instances.get(&id)
    }

    pub fn instance_mut(&mut self, id: InstanceId) -> Option<&mut Instance> {
        self.instances.get_mut(&id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.instances.values()
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    /// Lookups the provider has made for `name`.
    pub fn query_count(&self, name: &str) -> u64 {
        self.queries.get(name).copied().unwrap_or(0)
    }

    pub fn total_queries(&self) -> u64 {
        self.queries.values().sum()
    }

    /// Provider-facing lookup; counted.
    pub fn query(&mut self, name: &str) -> Lookup {
        *self.queries.entry(name.to_string()).or_default() += 1;
        self.lookup(name)
    }

    /// Uncounted view of the authoritative table.
    pub fn lookup(&self, name: &str) -> Lookup {
        let Some(dep) = self.deployments.get(name) else {
            return Lookup::Absent;
        };
        let live: Vec<&Instance> = dep
            .instances
            .iter()
            .filter_map(|id| self.instances.get(id))
            .filter(|i| i.is_live())
            .collect();
        let Some(first) = live.first() else {
            return Lookup::Pending;
        };
        let replicas = live
            .iter()
            .map(|i| match i {
                Instance::Junction(j) => j.uproc_count(),
                Instance::Container(c) => c.procs,
            })
            .sum();
        Lookup::Live(ReplicaRecord {
            function: name.to_string(),
            replicas,
            endpoint: endpoint_of(first.id()),
            instance_ids: live.iter().map(|i| i.id()).collect(),
        })
    }

    fn container_cores(&self, dep: &Deployment) -> u32 {
        dep.procs.max(1) * dep.core_cap.max(1)
    }

    fn spawn(&mut self, name: &str, now: Micros) -> Result<(InstanceId, Micros)> {
        if self.instances.len() >= self.limits.max_instances {
            return Err(Error::CapacityExhausted(format!(
                "host limit of {} instances reached",
                self.limits.max_instances
            )));
        }
        let dep = &self.deployments[name];
        let id = self.next_instance;
        self.next_instance += 1;
        let (mut inst, init) = match dep.spec.backend {
            PathKind::Bypass => {
                let mut j = JunctionInstance::new(id, name, dep.procs, dep.core_cap, self.limits.queue_cap);
                j.init_us = self.limits.junction_init_us;
                (Instance::Junction(j), self.limits.junction_init_us)
            }
            PathKind::KernelStack => {
                let c = ContainerInstance::new(
                    id,
                    name,
                    dep.procs,
                    self.container_cores(dep),
                    self.limits.container_startup_us,
                    self.limits.queue_cap,
                );
                (Instance::Container(c), self.limits.container_startup_us)
            }
        };
        let ready_at = now + init;
        inst.set_lifecycle(Lifecycle::Initializing { ready_at });
        self.instances.insert(id, inst);
        self.deployments.get_mut(name).expect("deployment").instances.push(id);
        Ok((id, ready_at))
    }

    pub fn deploy(&mut self, spec: FunctionSpec, now: Micros) -> Result<ManagerEffects> {
        spec.validate()?;
        if self.deployments.contains_key(&spec.name) {
            return Err(Error::AlreadyDeployed(spec.name));
        }
        if self.instances.len() >= self.limits.max_instances {
            return Err(Error::CapacityExhausted(format!(
                "host limit of {} instances reached",
                self.limits.max_instances
            )));
        }
        let core_cap = match spec.backend {
            PathKind::Bypass => spec.max_cores,
            PathKind::KernelStack => spec.max_cores.min(self.limits.container_core_share.max(1)),
        };
        let name = spec.name.clone();
        self.deployments.insert(
            name.clone(),
            Deployment {
                spec,
                instances: Vec::new(),
                core_cap,
                procs: 1,
            },
        );
        let spawned = self.spawn(&name, now)?;
        Ok(ManagerEffects {
            initializing: vec![spawned],
            ..ManagerEffects::default()
        })
    }

    /// Marks an initialising instance live. Returns its function name.
    pub fn mark_ready(&mut self, id: InstanceId) -> Option<String> {
        let inst = self.instances.get_mut(&id)?;
        if !matches!(inst.lifecycle(), Lifecycle::Initializing { .. }) {
            return None;
        }
        inst.set_lifecycle(Lifecycle::Live);
        Some(inst.function().to_string())
    }

    pub fn scale(&mut self, name: &str, new_scale: u32, now: Micros) -> Result<ManagerEffects> {
        if new_scale < 1 {
            return Err(Error::InvalidConfig("scale must be >= 1".into()));
        }
        let dep = self
            .deployments
            .get(name)
            .ok_or_else(|| Error::NoSuchFunction(name.to_string()))?;
        let mut effects = ManagerEffects::default();
        if dep.current_scale() == new_scale {
            return Ok(effects);
        }
        match dep.spec.scale_mechanism {
            ScaleMechanism::MultiProcess => {
                let ids = dep.instances.clone();
                let dep = self.deployments.get_mut(name).expect("deployment");
                dep.procs = new_scale;
                let (procs, cap) = (dep.procs, dep.core_cap);
                for id in ids {
                    match self.instances.get_mut(&id) {
                        Some(Instance::Junction(j)) => j.set_uprocs(procs, cap),
                        Some(Instance::Container(c)) => {
                            c.procs = procs;
                            c.cores = procs * cap;
                        }
                        None => continue,
                    }
                    effects.recapped.push(id);
                }
            }
            ScaleMechanism::RaiseCoreCap => {
                let ids = dep.instances.clone();
                let dep = self.deployments.get_mut(name).expect("deployment");
                dep.core_cap = new_scale;
                let procs = dep.procs;
                for id in ids {
                    match self.instances.get_mut(&id) {
                        Some(Instance::Junction(j)) => j.set_core_cap(new_scale),
                        Some(Instance::Container(c)) => c.cores = procs * new_scale,
                        None => continue,
                    }
                    effects.recapped.push(id);
                }
            }
            ScaleMechanism::NewInstance => {
                let current = dep.instances.len() as u32;
                if new_scale > current {
                    let extra = (new_scale - current) as usize;
                    if self.instances.len() + extra > self.limits.max_instances {
                        return Err(Error::CapacityExhausted(format!(
                            "scaling {name} to {new_scale} exceeds {} instances",
                            self.limits.max_instances
                        )));
                    }
                    for _ in 0..extra {
                        effects.initializing.push(self.spawn(name, now)?);
                    }
                } else {
                    let dep = self.deployments.get_mut(name).expect("deployment");
                    let retired = dep.instances.split_off(new_scale as usize);
                    for id in retired {
                        if let Some(inst) = self.instances.get_mut(&id) {
                            inst.set_lifecycle(Lifecycle::Draining);
                        }
                        effects.draining.push(id);
                    }
                }
            }
        }
        Ok(effects)
    }

    pub fn remove(&mut self, name: &str) -> Result<ManagerEffects> {
        let dep = self
            .deployments
            .remove(name)
            .ok_or_else(|| Error::NoSuchFunction(name.to_string()))?;
        let mut effects = ManagerEffects::default();
        for id in dep.instances {
            if let Some(inst) = self.instances.get_mut(&id) {
                inst.set_lifecycle(Lifecycle::Draining);
            }
            effects.draining.push(id);
        }
        Ok(effects)
    }

    /// Destroys a draining instance once it has no work left.
    pub fn reap(&mut self, id: InstanceId) -> bool {
        match self.instances.get(&id) {
            Some(i) if i.lifecycle() == Lifecycle::Draining && i.is_empty() => {
                self.instances.remove(&id);
                true
            }
            _ => false,
        }
    }
}

pub(crate) fn endpoint_of(id: InstanceId) -> Endpoint {
    Endpoint {
        instance_id: id,
        port: BASE_PORT.wrapping_add(id as u16),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits() -> ManagerLimits {
        ManagerLimits {
            max_instances: 4,
            junction_init_us: 3_400,
            container_startup_us: 250_000,
            container_core_share: 1,
            queue_cap: 64,
        }
    }

    fn ready_all(m: &mut FunctionManager, eff: &ManagerEffects) {
        for (id, _) in &eff.initializing {
            m.mark_ready(*id);
        }
    }

    #[test]
    fn deploy_reports_init_time_per_backend() {
        let mut m = FunctionManager::new(limits());
        let eff = m.deploy(FunctionSpec::new("b", 100.0, PathKind::Bypass), 10).unwrap();
        assert_eq!(eff.initializing[0].1, 3_410);
        let eff = m.deploy(FunctionSpec::new("k", 100.0, PathKind::KernelStack), 0).unwrap();
        assert_eq!(eff.initializing[0].1, 250_000);
        assert_eq!(m.lookup("b"), Lookup::Pending);
    }

    #[test]
    fn duplicate_and_capacity_errors() {
        let mut m = FunctionManager::new(limits());
        m.deploy(FunctionSpec::new("a", 1.0, PathKind::Bypass), 0).unwrap();
        assert!(matches!(
            m.deploy(FunctionSpec::new("a", 1.0, PathKind::Bypass), 0),
            Err(Error::AlreadyDeployed(_))
        ));
        for n in ["b", "c", "d"] {
            m.deploy(FunctionSpec::new(n, 1.0, PathKind::Bypass), 0).unwrap();
        }
        assert!(matches!(
            m.deploy(FunctionSpec::new("e", 1.0, PathKind::Bypass), 0),
            Err(Error::CapacityExhausted(_))
        ));
        assert!(matches!(m.scale("a", 9, 0), Ok(_)));
    }

    #[test]
    fn multiprocess_scaling_stays_in_one_instance() {
        let mut m = FunctionManager::new(limits());
        let spec = FunctionSpec::new("py", 50.0, PathKind::Bypass)
            .with_scale(ScaleMechanism::MultiProcess)
            .with_max_cores(1);
        let eff = m.deploy(spec, 0).unwrap();
        ready_all(&mut m, &eff);
        let eff = m.scale("py", 3, 0).unwrap();
        assert!(eff.initializing.is_empty());
        let Lookup::Live(rec) = m.lookup("py") else { panic!() };
        assert_eq!(rec.replicas, 3);
        assert_eq!(rec.instance_ids.len(), 1);
        let j = m.instance(rec.instance_ids[0]).unwrap().as_junction().unwrap();
        assert_eq!(j.uproc_count(), 3);
    }

    #[test]
    fn raise_core_cap_keeps_one_replica() {
        let mut m = FunctionManager::new(limits());
        let spec = FunctionSpec::new("go", 50.0, PathKind::Bypass).with_max_cores(1);
        let eff = m.deploy(spec, 0).unwrap();
        ready_all(&mut m, &eff);
        let eff = m.scale("go", 4, 0).unwrap();
        assert_eq!(eff.recapped.len(), 1);
        let Lookup::Live(rec) = m.lookup("go") else { panic!() };
        assert_eq!(rec.replicas, 1);
        let j = m.instance(rec.instance_ids[0]).unwrap().as_junction().unwrap();
        assert_eq!(j.core_cap(), 4);
        assert_eq!(j.queue_pairs(), 4);
    }

    #[test]
    fn same_scale_is_a_no_op() {
        let mut m = FunctionManager::new(limits());
        let eff = m
            .deploy(FunctionSpec::new("x", 5.0, PathKind::Bypass).with_max_cores(2), 0)
            .unwrap();
        ready_all(&mut m, &eff);
        let before = m.lookup("x");
        assert!(m.scale("x", 2, 0).unwrap().is_empty());
        assert_eq!(m.lookup("x"), before);
    }

    #[test]
    fn new_instance_scaling_spawns_and_drains() {
        let mut m = FunctionManager::new(limits());
        let spec = FunctionSpec::new("n", 5.0, PathKind::KernelStack).with_scale(ScaleMechanism::NewInstance);
        let eff = m.deploy(spec, 0).unwrap();
        ready_all(&mut m, &eff);
        let eff = m.scale("n", 3, 100).unwrap();
        assert_eq!(eff.initializing.len(), 2);
        assert!(eff.initializing.iter().all(|(_, t)| *t == 250_100));
        let Lookup::Live(rec) = m.lookup("n") else { panic!() };
        assert_eq!(rec.replicas, 1);
        ready_all(&mut m, &eff);
        let Lookup::Live(rec) = m.lookup("n") else { panic!() };
        assert_eq!(rec.replicas, 3);
        let eff = m.scale("n", 1, 200).unwrap();
        assert_eq!(eff.draining.len(), 2);
        for id in eff.draining {
            assert!(m.reap(id));
        }
        assert_eq!(m.instance_count(), 1);
    }

    #[test]
    fn queries_are_counted_lookups_are_not() {
        let mut m = FunctionManager::new(limits());
        m.lookup("a");
        assert_eq!(m.query_count("a"), 0);
        assert_eq!(m.query("a"), Lookup::Absent);
        assert_eq!(m.query_count("a"), 1);
    }
}
