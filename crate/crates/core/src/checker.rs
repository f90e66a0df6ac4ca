//! Normative conflict detection.
//!
//! A conflict is a reachable state in which the same relativized action is
//! both obligatory and forbidden. The search is breadth-first, so every
//! reported witness is a shortest trace; ties go to the lexicographically
//! smallest event sequence.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use thiserror::Error;

use crate::ast::{Contract, Event, Span};
use crate::semantics::{explore, Model, Norm, NormState, SemanticsError, StepError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub obligation: Norm,
    pub prohibition: Norm,
    /// Trace from the initial state to a state where both norms are active.
    pub witness: Vec<Event>,
}

impl Conflict {
    pub fn key(&self) -> &Event {
        &self.obligation.event
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckStats {
    pub states: usize,
    pub transitions: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckReport {
    pub conflicts: Vec<Conflict>,
    pub stats: CheckStats,
}

impl CheckReport {
    pub fn is_conflict_free(&self) -> bool {
        self.conflicts.is_empty()
    }

    /// Distinct (pair, action) keys in conflict.
    pub fn keys(&self) -> BTreeSet<Event> {
        self.conflicts.iter().map(|c| c.key().clone()).collect()
    }

    pub fn to_json(&self, file: &str) -> Value {
        let at = |s: &Span| format!("{file}:{}:{}", s.start_line, s.start_col);
        let conflicts: Vec<Value> = self
            .conflicts
            .iter()
            .map(|c| {
                let e = c.key();
                json!({
                    "pair": [e.pair.performer.as_str(), e.pair.counterparty.as_str()],
                    "action": e.action.as_str(),
                    "obligation_at": at(&c.obligation.origin),
                    "prohibition_at": at(&c.prohibition.origin),
                    "witness": c.witness.iter().map(|w| json!({
                        "pair": [w.pair.performer.as_str(), w.pair.counterparty.as_str()],
                        "action": w.action.as_str(),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({
            "conflicts": conflicts,
            "stats": {
                "states": self.stats.states,
                "transitions": self.stats.transitions,
                "elapsed_ms": self.stats.elapsed.as_secs_f64() * 1000.0,
            }
        })
    }

    /// Human-readable report. Contains no timing, so it is line-stable.
    pub fn to_text(&self, file: &str) -> String {
        let mut out = String::new();
        for c in &self.conflicts {
            let o = &c.obligation;
            let f = &c.prohibition;
            out.push_str(&format!("conflict: {} {}\n", o.event.pair, o.event.action));
            out.push_str(&format!("  obligation  {} at {file}:{}\n", o.label(), o.origin));
            out.push_str(&format!("  prohibition {} at {file}:{}\n", f.label(), f.origin));
            if c.witness.is_empty() {
                out.push_str("  witness: (initial state)\n");
            } else {
                let w: Vec<String> = c.witness.iter().map(|e| e.to_string()).collect();
                out.push_str(&format!("  witness: {}\n", w.join(", ")));
            }
        }
        out.push_str(&format!(
            "{}: {} conflict(s); {} states, {} transitions explored\n",
            file,
            self.conflicts.len(),
            self.stats.states,
            self.stats.transitions
        ));
        out
    }
}

pub fn check_model(model: &Model) -> CheckReport {
    let start = Instant::now();
    let lts = explore(model);
    // States are stored in BFS discovery order, so the first state that
    // exhibits a collision also carries its shortest witness.
    let mut found: BTreeMap<(usize, usize), Conflict> = BTreeMap::new();
    let mut order = Vec::new();
    for (id, state) in lts.states.iter().enumerate() {
        for (o, f) in state.collisions() {
            let key = (o.node, f.node);
            if let std::collections::btree_map::Entry::Vacant(slot) = found.entry(key) {
                order.push(key);
                slot.insert(Conflict { obligation: o.clone(), prohibition: f.clone(), witness: lts.trace_to(id) });
            }
        }
    }
    CheckReport {
        conflicts: order.into_iter().map(|k| found.remove(&k).unwrap()).collect(),
        stats: CheckStats { states: lts.states.len(), transitions: lts.transitions.len(), elapsed: start.elapsed() },
    }
}

pub fn check(contract: &Contract) -> Result<CheckReport, SemanticsError> {
    Ok(check_model(&Model::new(contract)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("witness step {index}: {source}")]
    Step { index: usize, source: StepError },
    #[error("witness step {index}: event {event} is forbidden in the current state")]
    Forbidden { index: usize, event: Event },
    #[error("witness step {index}: event {event} is not performable under the contract")]
    NotPerformable { index: usize, event: Event },
}

/// Re-executes `trace` from the initial state, honouring the same
/// enabledness rule as the search.
pub fn replay(model: &Model, trace: &[Event]) -> Result<NormState, ReplayError> {
    let mut state = model.initial_state();
    for (index, e) in trace.iter().enumerate() {
        if !model.alphabet().contains(e) {
            return Err(ReplayError::NotPerformable { index, event: e.clone() });
        }
        if state.forbids(e) {
            return Err(ReplayError::Forbidden { index, event: e.clone() });
        }
        state = model.step(&state, e).map_err(|source| ReplayError::Step { index, source })?;
    }
    Ok(state)
}

/// Checks that replaying the witness reaches a state holding both norms.
pub fn witness_is_valid(model: &Model, conflict: &Conflict) -> bool {
    match replay(model, &conflict.witness) {
        Ok(state) => {
            state.active.contains_key(&conflict.obligation) && state.active.contains_key(&conflict.prohibition)
        }
        Err(_) => false,
    }
}

pub const ORACLE_EVENT_BOUND: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("{0} distinct events exceed the brute-force bound of {ORACLE_EVENT_BOUND}")]
    TooManyEvents(usize),
}

/// Exhaustive enumeration of every compliant event sequence (all
/// permutations of all subsets of the alphabet), recording each
/// obligation/prohibition collision seen along the way. Exponential; meant
/// for cross-checking `check` on small contracts.
pub fn brute_force_oracle(contract: &Contract) -> Result<BTreeSet<Event>, OracleError> {
    let model = Model::new(contract)?;
    let n = model.alphabet().len();
    if n > ORACLE_EVENT_BOUND {
        return Err(OracleError::TooManyEvents(n));
    }
    let mut out = BTreeSet::new();
    let mut used = vec![false; n];
    sequences(&model, &model.initial_state(), &mut used, &mut out);
    Ok(out)
}

fn sequences(model: &Model, state: &NormState, used: &mut Vec<bool>, out: &mut BTreeSet<Event>) {
    for (o, _) in state.collisions() {
        out.insert(o.event.clone());
    }
    for i in 0..used.len() {
        if used[i] {
            continue;
        }
        let e = &model.alphabet()[i];
        if state.forbids(e) {
            continue;
        }
        let next = model.step(state, e).expect("unfired alphabet events always step");
        used[i] = true;
        sequences(model, &next, used, out);
        used[i] = false;
    }
}
