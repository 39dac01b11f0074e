//! Scripted control-plane scenarios: timed deploy, scale, invoke and remove actions.

use serde::{Deserialize, Serialize};

use crate::controlplane::{FunctionSpec, InvocationRecord, Platform, PlatformConfig, PlatformCounters};
use crate::error::{Error, Result};
use crate::simcore::Micros;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Action {
    Deploy {
        at_us: Micros,
        function: FunctionSpec,
    },
    Scale {
        at_us: Micros,
        function: String,
        scale: u32,
    },
    /// `count` invocations spaced `gap_us` apart.
    Invoke {
        at_us: Micros,
        function: String,
        #[serde(default = "one")]
        count: u64,
        #[serde(default)]
        gap_us: Micros,
    },
    Remove {
        at_us: Micros,
        function: String,
    },
}

fn one() -> u64 {
    1
}

impl Action {
    pub fn at_us(&self) -> Micros {
        match self {
            Action::Deploy { at_us, .. }
            | Action::Scale { at_us, .. }
            | Action::Invoke { at_us, .. }
            | Action::Remove { at_us, .. } => *at_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub platform: PlatformConfig,
    #[serde(default)]
    pub seed: u64,
    pub actions: Vec<Action>,
}

/// Failed control-plane writes are part of the outcome, not errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionError {
    pub index: usize,
    pub at_us: Micros,
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioOutcome {
    pub counters: PlatformCounters,
    pub manager_queries: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub action_errors: Vec<ActionError>,
    #[serde(skip)]
    pub invocations: Vec<InvocationRecord>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        s.platform.validate()?;
        Ok(s)
    }

    /// Replays the actions in time order with invariant checks on.
    pub fn run(&self) -> Result<ScenarioOutcome> {
        let mut p = Platform::new(self.platform.clone(), self.seed)?.with_invariant_checks(true);
        let mut order: Vec<usize> = (0..self.actions.len()).collect();
        order.sort_by_key(|&i| self.actions[i].at_us());
        let mut action_errors = Vec::new();
        for i in order {
            let action = &self.actions[i];
            p.run_until(action.at_us().max(p.now()))?;
            let res = match action {
                Action::Deploy { function, .. } => function.validate().and_then(|_| p.deploy_function(function.clone())),
                Action::Scale { function, scale, .. } => p.scale_function(function, *scale).map(|_| ()),
                Action::Invoke {
                    function, count, gap_us, ..
                } => (0..*count).try_for_each(|k| p.submit(function, p.now() + k * gap_us).map(|_| ())),
                Action::Remove { function, .. } => p.remove_function(function),
            };
            if let Err(e) = res {
                action_errors.push(ActionError {
                    index: i,
                    at_us: action.at_us(),
                    kind: e.kind(),
                    message: e.to_string(),
                });
            }
        }
        p.run_to_idle()?;
        p.check_records()?;
        Ok(ScenarioOutcome {
            counters: p.counters(),
            manager_queries: p.manager().total_queries(),
            cache_hits: p.provider().hits(),
            cache_misses: p.provider().misses(),
            action_errors,
            invocations: p.into_invocations(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controlplane::InvocationStatus;

    const SCRIPT: &str = r#"{
        "seed": 5,
        "actions": [
            {"op": "deploy", "at_us": 0, "function": {"name": "aes", "base_service_us": 120.0}},
            {"op": "invoke", "at_us": 10000, "function": "aes", "count": 20, "gap_us": 50},
            {"op": "invoke", "at_us": 10000, "function": "missing"},
            {"op": "scale", "at_us": 20000, "function": "aes", "scale": 2},
            {"op": "invoke", "at_us": 30000, "function": "aes", "count": 5},
            {"op": "remove", "at_us": 40000, "function": "aes"},
            {"op": "invoke", "at_us": 50000, "function": "aes"},
            {"op": "scale", "at_us": 60000, "function": "aes", "scale": 3}
        ]
    }"#;

    #[test]
    fn replays_script() {
        let out = Scenario::from_json(SCRIPT).unwrap().run().unwrap();
        assert_eq!(out.counters.injected, 27);
        assert_eq!(out.counters.ok, 25);
        assert_eq!(out.counters.no_such_function, 2);
        assert_eq!(out.action_errors.len(), 1);
        assert_eq!(out.action_errors[0].kind, "no-such-function");
        let last = out.invocations.iter().find(|r| r.submit_t == 50_000).unwrap();
        assert_eq!(last.status, InvocationStatus::NoSuchFunction);
    }

    #[test]
    fn replay_is_deterministic() {
        let s = Scenario::from_json(SCRIPT).unwrap();
        assert_eq!(s.run().unwrap().invocations, s.run().unwrap().invocations);
    }
}
