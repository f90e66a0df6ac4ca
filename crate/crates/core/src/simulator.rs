//! In-process execution of a lowered machine: named accounts with integer
//! balances, role-checked calls, reverts and an event log.
//!
//! Guards are evaluated in emission order. A reverted call leaves the
//! world untouched apart from its entry in the call log; scripts keep
//! running past reverts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use thiserror::Error;

use crate::codegen::{Effect, MachineIR, Visibility, FINAL_STATE, INITIAL_STATE};

/// Starting balance of every bound account unless stated otherwise.
pub const DEFAULT_BALANCE: u128 = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Reverted(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub caller: String,
    pub function: String,
    pub value: u128,
    pub outcome: Outcome,
    /// Events emitted by this call (empty when reverted).
    pub events: Vec<LoggedEvent>,
}

impl CallRecord {
    pub fn is_ok(&self) -> bool {
        self.outcome == Outcome::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedEvent {
    pub sender: String,
    pub receiver: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct World {
    /// Account name to balance.
    pub accounts: BTreeMap<String, u128>,
    pub contract_balance: u128,
    pub current_state: String,
    pub flag_values: BTreeMap<String, bool>,
    pub event_log: Vec<LoggedEvent>,
    pub call_log: Vec<CallRecord>,
    /// Role name to the account it is bound to.
    pub bindings: BTreeMap<String, String>,
    pub amounts: BTreeMap<String, u128>,
}

impl World {
    pub fn total_value(&self) -> u128 {
        self.accounts.values().sum::<u128>() + self.contract_balance
    }

    /// The world with its call log cleared, for comparing everything else.
    pub fn without_calls(&self) -> World {
        World { call_log: Vec::new(), ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("no account bound to agent `{0}`")]
    MissingBinding(String),
    #[error("account `{0}` is bound to more than one role")]
    DuplicateAccount(String),
    #[error("binding for unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("missing amount for parameter `{0}`")]
    MissingAmount(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{0}` is private and cannot be called directly")]
    NotCallable(String),
    #[error("unknown account `{0}`")]
    UnknownAccount(String),
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
}

/// Deploys with every bound account holding [`DEFAULT_BALANCE`].
pub fn deploy(
    ir: &MachineIR,
    bindings: &BTreeMap<String, String>,
    amounts: &BTreeMap<String, u128>,
) -> Result<World, SimError> {
    deploy_with_balance(ir, bindings, amounts, DEFAULT_BALANCE)
}

/// `bindings` maps agent ids (`b`, `s`, ...) to account names.
pub fn deploy_with_balance(
    ir: &MachineIR,
    bindings: &BTreeMap<String, String>,
    amounts: &BTreeMap<String, u128>,
    balance: u128,
) -> Result<World, SimError> {
    for agent in bindings.keys() {
        if !ir.roles.iter().any(|r| r.agent.as_str() == agent) {
            return Err(SimError::UnknownAgent(agent.clone()));
        }
    }
    let mut by_role = BTreeMap::new();
    let mut accounts = BTreeMap::new();
    for role in &ir.roles {
        let account = bindings.get(role.agent.as_str()).ok_or_else(|| SimError::MissingBinding(role.agent.0.clone()))?;
        if accounts.insert(account.clone(), balance).is_some() {
            return Err(SimError::DuplicateAccount(account.clone()));
        }
        by_role.insert(role.name.clone(), account.clone());
    }
    let mut bound_amounts = BTreeMap::new();
    for p in ir.params.iter().filter(|p| p.kind == crate::codegen::ParamKind::Uint) {
        let v = amounts.get(&p.name).ok_or_else(|| SimError::MissingAmount(p.name.clone()))?;
        bound_amounts.insert(p.name.clone(), *v);
    }
    Ok(World {
        accounts,
        contract_balance: 0,
        current_state: INITIAL_STATE.to_string(),
        flag_values: ir.flags.iter().map(|f| (f.name.clone(), false)).collect(),
        event_log: Vec::new(),
        call_log: Vec::new(),
        bindings: by_role,
        amounts: bound_amounts,
    })
}

/// Runs one function body against `w`, recursing into private calls.
fn execute(ir: &MachineIR, w: &mut World, caller: &str, name: &str, value: u128, events: &mut Vec<LoggedEvent>) -> Result<(), String> {
    let f = ir.function(name).ok_or_else(|| format!("unknown function `{name}`"))?;
    let role = ir.role(&f.role_guard).ok_or_else(|| format!("unknown role `{}`", f.role_guard))?;
    if w.bindings.get(&role.name).map(String::as_str) != Some(caller) {
        return Err(role.message.clone());
    }
    if let Some(s) = &f.state_guard {
        if &w.current_state != s {
            return Err(ir.invalid_state_message.clone());
        }
    }
    if let Some(v) = &f.value_guard {
        if w.amounts.get(&v.param) != Some(&value) {
            return Err(v.message.clone());
        }
    }
    for c in &f.flag_preconditions {
        if w.flag_values.get(&c.flag).copied().unwrap_or(false) != c.required {
            return Err(c.message.clone());
        }
    }
    for e in &f.effects {
        match e {
            Effect::SetState(s) => w.current_state = s.clone(),
            Effect::SetFlag(x) => {
                w.flag_values.insert(x.clone(), true);
            }
            Effect::Emit { sender, receiver, message } => {
                let account = |r: &str| w.bindings.get(r).cloned().unwrap_or_else(|| r.to_string());
                events.push(LoggedEvent { sender: account(sender), receiver: account(receiver), message: message.clone() });
            }
            Effect::Call(callee) => execute(ir, w, caller, callee, 0, events)?,
            Effect::CheckFinalization => {
                if let Some(fin) = &ir.finalization {
                    let done = fin.flags.iter().all(|x| w.flag_values.get(x).copied().unwrap_or(false));
                    if w.current_state == fin.state && done {
                        w.current_state = FINAL_STATE.to_string();
                    }
                }
            }
        }
    }
    Ok(())
}

/// Performs one external call. Reverts are recorded, not returned as
/// errors; errors are reserved for calls that cannot be issued at all.
pub fn call(ir: &MachineIR, world: &World, caller: &str, function: &str, value: u128) -> Result<(World, CallRecord), SimError> {
    let f = ir.function(function).ok_or_else(|| SimError::UnknownFunction(function.to_string()))?;
    if f.visibility == Visibility::Private {
        return Err(SimError::NotCallable(function.to_string()));
    }
    let balance = *world.accounts.get(caller).ok_or_else(|| SimError::UnknownAccount(caller.to_string()))?;

    let mut next = world.clone();
    let mut events = Vec::new();
    let result = if balance < value {
        Err("insufficient funds".to_string())
    } else if value > 0 && !f.is_payable() {
        Err(format!("function {function} is not payable"))
    } else {
        execute(ir, &mut next, caller, function, value, &mut events)
    };
    let outcome = match result {
        Ok(()) => {
            next.accounts.insert(caller.to_string(), balance - value);
            next.contract_balance = next.contract_balance.checked_add(value).expect("total value fits in u128");
            next.event_log.extend(events.iter().cloned());
            Outcome::Ok
        }
        Err(msg) => {
            next = world.clone();
            events.clear();
            Outcome::Reverted(msg)
        }
    };
    let record = CallRecord { caller: caller.to_string(), function: function.to_string(), value, outcome, events };
    next.call_log.push(record.clone());
    Ok((next, record))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptCall {
    pub caller: String,
    pub function: String,
    pub value: u128,
}

impl ScriptCall {
    pub fn new(caller: &str, function: &str, value: u128) -> Self {
        ScriptCall { caller: caller.to_string(), function: function.to_string(), value }
    }
}

/// Parses `<account> <function> [value=<n>]` lines; `#` starts a comment.
pub fn parse_script(text: &str) -> Result<Vec<ScriptCall>, SimError> {
    let mut calls = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| SimError::Script { line: i + 1, message };
        let parts: Vec<&str> = line.split_whitespace().collect();
        let value = match parts.as_slice() {
            [_, _] => 0,
            [_, _, v] => {
                let n = v.strip_prefix("value=").ok_or_else(|| err(format!("expected `value=<n>`, found `{v}`")))?;
                n.parse::<u128>().map_err(|_| err(format!("invalid value `{n}`")))?
            }
            _ => return Err(err("expected `<account> <function> [value=<n>]`".into())),
        };
        calls.push(ScriptCall::new(parts[0], parts[1], value));
    }
    Ok(calls)
}

/// Folds [`call`] over the script without stopping at reverts.
pub fn run_script(ir: &MachineIR, world: World, script: &[ScriptCall]) -> Result<(World, Vec<CallRecord>), SimError> {
    let mut w = world;
    let mut records = Vec::new();
    for c in script {
        let (next, rec) = call(ir, &w, &c.caller, &c.function, c.value)?;
        w = next;
        records.push(rec);
    }
    Ok((w, records))
}

/// Byte-stable trace: one line per call with its emitted events indented,
/// then the final state, flags and balances.
pub fn render_trace(ir: &MachineIR, world: &World, records: &[CallRecord]) -> String {
    let mut o = String::new();
    for (i, r) in records.iter().enumerate() {
        let status = match &r.outcome {
            Outcome::Ok => "OK".to_string(),
            Outcome::Reverted(m) => format!("REVERT {m:?}"),
        };
        writeln!(o, "{}. {} {} value={}: {status}", i + 1, r.caller, r.function, r.value).unwrap();
        for e in &r.events {
            writeln!(o, "    {} -> {}: {:?}", e.sender, e.receiver, e.message).unwrap();
        }
    }
    writeln!(o, "state {}", world.current_state).unwrap();
    o.push_str("flags\n");
    for f in &ir.flags {
        writeln!(o, "    {} = {}", f.name, world.flag_values.get(&f.name).copied().unwrap_or(false)).unwrap();
    }
    o.push_str("balances\n");
    let bound: BTreeSet<&String> = world.accounts.keys().collect();
    for a in bound {
        writeln!(o, "    {a} {}", world.accounts[a]).unwrap();
    }
    writeln!(o, "    (contract) {}", world.contract_balance).unwrap();
    o
}
