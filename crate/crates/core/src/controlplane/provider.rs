use std::collections::BTreeMap;

use crate::controlplane::{FunctionManager, Lookup, ReplicaRecord};
use crate::error::{Error, Result};
use crate::instance::InvocationId;
use crate::sched::InstanceId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Ready(ReplicaRecord),
    /// Deployment exists but is still initialising.
    Pending,
}

/// Provider-side replica cache.
///
/// Holds only the replica count and endpoint of each function. Writes that go
/// through the gateway update cached entries in place; they never insert, so
/// the first lookup after a deployment misses exactly once. Unknown names are
/// never cached.
#[derive(Debug, Clone, Default)]
pub struct Provider {
    cache: BTreeMap<String, ReplicaRecord>,
    cursor: BTreeMap<String, usize>,
    parked: BTreeMap<String, Vec<InvocationId>>,
    hits: u64,
    misses: u64,
}

impl Provider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn cached(&self, name: &str) -> Option<&ReplicaRecord> {
        self.cache.get(name)
    }

    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    pub fn resolve(&mut self, name: &str, manager: &mut FunctionManager) -> Result<Resolution> {
        if let Some(rec) = self.cache.get(name) {
            self.hits += 1;
            return Ok(Resolution::Ready(rec.clone()));
        }
        if self.parked.contains_key(name) {
            // already known to be initialising since the last write
            return Ok(Resolution::Pending);
        }
        self.misses += 1;
        match manager.query(name) {
            Lookup::Live(rec) => {
                self.cache.insert(name.to_string(), rec.clone());
                Ok(Resolution::Ready(rec))
            }
            Lookup::Pending => Ok(Resolution::Pending),
            Lookup::Absent => Err(Error::NoSuchFunction(name.to_string())),
        }
    }

    /// Round-robin over the record's instances.
    pub fn pick(&mut self, rec: &ReplicaRecord) -> InstanceId {
        let cursor = self.cursor.entry(rec.function.clone()).or_default();
        let id = rec.instance_ids[*cursor % rec.instance_ids.len()];
        *cursor = cursor.wrapping_add(1);
        id
    }

    /// Write-through after the manager applied a change to `name`.
    pub fn on_write(&mut self, name: &str, manager: &FunctionManager) {
        if !self.cache.contains_key(name) {
            return;
        }
        match manager.lookup(name) {
            Lookup::Live(rec) => {
                self.cache.insert(name.to_string(), rec);
            }
            Lookup::Pending | Lookup::Absent => {
                self.cache.remove(name);
                self.cursor.remove(name);
            }
        }
    }

    pub fn park(&mut self, name: &str, inv: InvocationId) {
        self.parked.entry(name.to_string()).or_default().push(inv);
    }

    /// Invocations waiting on `name`, in arrival order.
    pub fn unpark(&mut self, name: &str) -> Vec<InvocationId> {
        self.parked.remove(name).unwrap_or_default()
    }

    pub fn parked_count(&self) -> usize {
        self.parked.values().map(Vec::len).sum()
    }
}
