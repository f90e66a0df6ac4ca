//! Lowering of a contract to a state-machine IR and Solidity emission.
//!
//! The main clause must be a single top-level box. Walking it yields
//! control states and functions:
//!
//! * a group holding one obligation whose own box continues the contract
//!   (or a bare box with no obligation) advances to a new state;
//! * a group holding several obligations turns each of them into a
//!   function that sets a boolean flag, and boxes guarded by those
//!   obligations become flag preconditions on everything nested inside;
//! * the last state is left through a finalization check once every leaf
//!   obligation of that state has set its flag (or directly, when the state
//!   holds a single function);
//! * every other top-level clause must be an internal rule
//!   `{x,y}[!a]*({u,v}F(b))`, which becomes a precondition on the function
//!   for `{u,v} b` requiring the flag of `{x,y} a`.
//!
//! Names, messages, payability and state names come from header
//! annotations, with generated English defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{AgentId, Annotation, Clause, ClauseKind, Contract, Event};
use crate::checker::check;
use crate::validate::{has_errors, validate};

pub const INITIAL_STATE: &str = "Created";
pub const FINAL_STATE: &str = "Finalized";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Role {
    pub name: String,
    pub agent: AgentId,
    /// Modifier name, `only` followed by the capitalized agent id.
    pub modifier: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParamKind {
    Address,
    Uint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlagDecl {
    pub name: String,
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValueGuard {
    pub param: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlagCheck {
    pub flag: String,
    pub required: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Effect {
    SetState(String),
    SetFlag(String),
    /// Sender and receiver are role names.
    Emit { sender: String, receiver: String, message: String },
    /// Invokes a private function with the same caller.
    Call(String),
    CheckFinalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Visibility {
    External,
    Private,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FunctionIR {
    pub name: String,
    pub event: Event,
    pub visibility: Visibility,
    pub role_guard: String,
    pub state_guard: Option<String>,
    pub value_guard: Option<ValueGuard>,
    pub flag_preconditions: Vec<FlagCheck>,
    pub effects: Vec<Effect>,
    /// Source clauses this function implements, rendered compactly.
    pub comments: Vec<String>,
}

impl FunctionIR {
    pub fn is_payable(&self) -> bool {
        self.value_guard.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finalization {
    pub state: String,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MachineIR {
    pub name: String,
    pub roles: Vec<Role>,
    pub states: Vec<String>,
    pub flags: Vec<FlagDecl>,
    pub functions: Vec<FunctionIR>,
    pub params: Vec<Param>,
    pub invalid_state_message: String,
    pub finalization: Option<Finalization>,
    pub warnings: Vec<String>,
}

impl MachineIR {
    pub fn function(&self, name: &str) -> Option<&FunctionIR> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn role(&self, name: &str) -> Option<&Role> {
        self.roles.iter().find(|r| r.name == name)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    /// Events performed by a successful call: the function's own event
    /// followed by those of the private functions it invokes.
    pub fn events_of(&self, name: &str) -> Vec<Event> {
        let mut out = Vec::new();
        if let Some(f) = self.function(name) {
            out.push(f.event.clone());
            for e in &f.effects {
                if let Effect::Call(callee) = e {
                    out.extend(self.events_of(callee));
                }
            }
        }
        out
    }

    /// Checks the structural invariants every emitted machine satisfies.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.states.first().map(String::as_str) != Some(INITIAL_STATE) {
            return Err(format!("states must begin with {INITIAL_STATE}"));
        }
        if self.states.last().map(String::as_str) != Some(FINAL_STATE) {
            return Err(format!("states must end with {FINAL_STATE}"));
        }
        let states: BTreeSet<&str> = self.states.iter().map(String::as_str).collect();
        let flags: BTreeSet<&str> = self.flags.iter().map(|f| f.name.as_str()).collect();
        let params: BTreeSet<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        let functions: BTreeSet<&str> = self.functions.iter().map(|f| f.name.as_str()).collect();
        if functions.len() != self.functions.len() {
            return Err("function names must be unique".into());
        }
        for f in &self.functions {
            let ctx = |what: &str, name: &str| format!("function {}: undeclared {what} `{name}`", f.name);
            if self.role(&f.role_guard).is_none() {
                return Err(ctx("role", &f.role_guard));
            }
            if let Some(s) = &f.state_guard {
                if !states.contains(s.as_str()) {
                    return Err(ctx("state", s));
                }
            }
            if let Some(v) = &f.value_guard {
                if !params.contains(v.param.as_str()) {
                    return Err(ctx("parameter", &v.param));
                }
            }
            for c in &f.flag_preconditions {
                if !flags.contains(c.flag.as_str()) {
                    return Err(ctx("flag", &c.flag));
                }
            }
            let mut set_states = 0;
            for e in &f.effects {
                match e {
                    Effect::SetState(s) => {
                        set_states += 1;
                        if !states.contains(s.as_str()) {
                            return Err(ctx("state", s));
                        }
                    }
                    Effect::SetFlag(x) if !flags.contains(x.as_str()) => return Err(ctx("flag", x)),
                    Effect::Emit { sender, receiver, .. } => {
                        for r in [sender, receiver] {
                            if self.role(r).is_none() {
                                return Err(ctx("role", r));
                            }
                        }
                    }
                    Effect::Call(x) if !functions.contains(x.as_str()) => return Err(ctx("function", x)),
                    Effect::CheckFinalization if self.finalization.is_none() => {
                        return Err(format!("function {}: finalization check without a finalization rule", f.name))
                    }
                    _ => {}
                }
            }
            if set_states > 1 {
                return Err(format!("function {}: more than one state change", f.name));
            }
        }
        if let Some(fin) = &self.finalization {
            if !states.contains(fin.state.as_str()) {
                return Err(format!("finalization: undeclared state `{}`", fin.state));
            }
            for x in &fin.flags {
                if !flags.contains(x.as_str()) {
                    return Err(format!("finalization: undeclared flag `{x}`"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LowerOptions {
    /// Lower even when the checker reports conflicts.
    pub allow_conflicts: bool,
    /// Honour `internal` annotations: the annotated function becomes private
    /// and is invoked from the function of its innermost guard, keeping its
    /// own role guard.
    pub fidelity: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LowerError {
    #[error("contract has validation errors: {0}")]
    Invalid(String),
    #[error("contract has {0} normative conflict(s); fix them or lower with --allow-conflicts")]
    Conflicts(usize),
    #[error(
        "no single root box chain: expected exactly one top-level `{{x,y}} [a](...)` clause holding the main flow \
         (found {0}); restructure the contract so the remaining top-level clauses are internal rules"
    )]
    NoRootChain(usize),
    #[error("unsupported shape: {0}")]
    Unsupported(String),
    #[error("name clash: {0}")]
    NameClash(String),
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Compact rendering used in generated comments: `{c,b}O(deliverProduct)`.
fn compact(c: &Clause) -> String {
    match &c.kind {
        ClauseKind::Obligation(e) => format!("{}O({})", e.pair, e.action),
        ClauseKind::Prohibition(e) => format!("{}F({})", e.pair, e.action),
        ClauseKind::Permission(e) => format!("{}P({})", e.pair, e.action),
        ClauseKind::Box { guard, .. } => format!("{}[{}](...)", guard.pair, guard.action),
        ClauseKind::IterBoxNeg { guard, body, positive_star } => {
            let bang = if *positive_star { "" } else { "!" };
            format!("{}[{bang}{}]*({})", guard.pair, guard.action, compact(body))
        }
        ClauseKind::And(..) => c.conjuncts().iter().map(|p| compact(p)).collect::<Vec<_>>().join(" & "),
    }
}

struct Annotations<'a>(&'a [Annotation]);

impl<'a> Annotations<'a> {
    fn contract_name(&self) -> Option<&'a str> {
        self.0.iter().find_map(|a| match a {
            Annotation::ContractName(n) => Some(n.as_str()),
            _ => None,
        })
    }
    fn invalid_state(&self) -> Option<&'a str> {
        self.0.iter().find_map(|a| match a {
            Annotation::InvalidStateMessage(m) => Some(m.as_str()),
            _ => None,
        })
    }
    fn role(&self, agent: &AgentId) -> Option<(&'a str, Option<&'a str>)> {
        self.0.iter().find_map(|a| match a {
            Annotation::Role { agent: x, name, message } if x == agent => Some((name.as_str(), message.as_deref())),
            _ => None,
        })
    }
    fn state(&self, e: &Event) -> Option<&'a str> {
        self.0.iter().find_map(|a| match a {
            Annotation::State { event, name } if event == e => Some(name.as_str()),
            _ => None,
        })
    }
    /// `Some(Some(..))` payable, `Some(None)` explicitly non-payable.
    fn payable(&self, e: &Event) -> Option<Option<(&'a str, Option<&'a str>)>> {
        self.0.iter().find_map(|a| match a {
            Annotation::Payable { event, param, message } if event == e => {
                Some(Some((param.as_str(), message.as_deref())))
            }
            Annotation::NonPayable { event } if event == e => Some(None),
            _ => None,
        })
    }
    fn function(&self, e: &Event) -> Option<&'a str> {
        self.0.iter().find_map(|a| match a {
            Annotation::Function { event, name } if event == e => Some(name.as_str()),
            _ => None,
        })
    }
    fn flag(&self, e: &Event) -> Option<(&'a str, Option<&'a str>, Option<&'a str>)> {
        self.0.iter().find_map(|a| match a {
            Annotation::Flag { event, name, set_message, require_message } if event == e => {
                Some((name.as_str(), set_message.as_deref(), require_message.as_deref()))
            }
            _ => None,
        })
    }
    fn rule(&self, e: &Event) -> Option<&'a str> {
        self.0.iter().find_map(|a| match a {
            Annotation::Rule { event, message } if event == e => Some(message.as_str()),
            _ => None,
        })
    }
    fn message(&self, e: &Event) -> Option<&'a str> {
        self.0.iter().find_map(|a| match a {
            Annotation::Message { event, text } if event == e => Some(text.as_str()),
            _ => None,
        })
    }
    fn internal(&self, e: &Event) -> bool {
        self.0.iter().any(|a| matches!(a, Annotation::Internal { event } if event == e))
    }
}

/// A function discovered while walking the main clause.
struct Draft {
    event: Event,
    comment: String,
    number: u32,
    state: String,
    /// Guard events of the enclosing flag boxes, innermost first.
    chain: Vec<Event>,
    /// Target state when this function changes the control state.
    advance: Option<String>,
    leaf: bool,
}

/// An internal rule `{x,y}[!a]*({u,v}F(b))`, or its positive-star form.
struct Rule {
    guard: Event,
    target: Event,
    positive: bool,
    comment: String,
}

/// Does the clause contain any obligation or box, i.e. anything that
/// lowers to a function?
fn productive(c: &Clause) -> bool {
    match &c.kind {
        ClauseKind::Obligation(_) | ClauseKind::Box { .. } => true,
        ClauseKind::And(..) => c.conjuncts().iter().any(|p| productive(p)),
        _ => false,
    }
}

fn box_guards(items: &[&Clause], out: &mut BTreeSet<Event>) {
    for c in items {
        if let ClauseKind::Box { guard, body } = &c.kind {
            if productive(body) {
                out.insert(guard.clone());
            }
            box_guards(&body.conjuncts(), out);
        }
    }
}

struct Walker<'a> {
    base_line: u32,
    ann: Annotations<'a>,
    states: Vec<String>,
    drafts: Vec<Draft>,
    advances: BTreeSet<String>,
}

impl<'a> Walker<'a> {
    fn number(&self, c: &Clause) -> u32 {
        if c.span.is_synthetic() || self.base_line == 0 {
            self.drafts.len() as u32 + 1
        } else {
            c.span.start_line + 1 - self.base_line
        }
    }

    fn add(&mut self, event: &Event, source: &Clause, state: &str, chain: &[Event]) -> Result<usize, LowerError> {
        if self.drafts.iter().any(|d| &d.event == event) {
            return Err(LowerError::Unsupported(format!("event {event} would be lowered to two functions")));
        }
        self.drafts.push(Draft {
            event: event.clone(),
            comment: compact(source),
            number: self.number(source),
            state: state.to_string(),
            chain: chain.to_vec(),
            advance: None,
            leaf: false,
        });
        Ok(self.drafts.len() - 1)
    }

    fn new_state(&mut self, via: &Event) -> String {
        let base = match self.ann.state(via) {
            Some(n) => n.to_string(),
            None => format!("S{}", self.states.len()),
        };
        let mut name = base.clone();
        let mut i = 2;
        while self.states.contains(&name) || name == FINAL_STATE {
            name = format!("{base}{i}");
            i += 1;
        }
        self.states.push(name.clone());
        name
    }

    fn group(
        &mut self,
        state: &str,
        items: &[&Clause],
        chain: &[Event],
        open: &BTreeSet<Event>,
    ) -> Result<(), LowerError> {
        let mut obligations = Vec::new();
        let mut boxes = Vec::new();
        for c in items {
            match &c.kind {
                ClauseKind::Obligation(e) => obligations.push((e, *c)),
                ClauseKind::Box { guard, body } => {
                    if productive(body) {
                        boxes.push((guard, body.as_ref(), *c));
                    }
                }
                ClauseKind::Permission(_) | ClauseKind::And(..) => {}
                ClauseKind::Prohibition(_) | ClauseKind::IterBoxNeg { .. } => {
                    return Err(LowerError::Unsupported(format!(
                        "{} inside the main clause; prohibitions are only lowered as top-level internal rules",
                        compact(c)
                    )))
                }
            }
        }

        let advances = boxes.len() == 1
            && open.is_empty()
            && (obligations.is_empty() || (obligations.len() == 1 && obligations[0].0 == boxes[0].0));
        if advances {
            let (guard, body, box_clause) = boxes[0];
            if self.advances.contains(state) {
                return Err(LowerError::Unsupported(format!("state {state} would advance along two paths")));
            }
            self.advances.insert(state.to_string());
            let source = obligations.first().map(|o| o.1).unwrap_or(box_clause);
            let id = self.add(guard, source, state, chain)?;
            let next = self.new_state(guard);
            self.drafts[id].advance = Some(next.clone());
            return self.group(&next, &body.conjuncts(), &[], &BTreeSet::new());
        }

        let mut guards = BTreeSet::new();
        box_guards(items, &mut guards);
        let mut open = open.clone();
        for (e, c) in &obligations {
            let id = self.add(e, c, state, chain)?;
            self.drafts[id].leaf = !guards.contains(*e);
            if guards.contains(*e) {
                open.insert((*e).clone());
            }
        }
        for (guard, body, _) in boxes {
            if !open.contains(guard) {
                return Err(LowerError::Unsupported(format!(
                    "box on {guard} has no matching obligation in state {state}"
                )));
            }
            let mut inner_chain = vec![guard.clone()];
            inner_chain.extend(chain.iter().cloned());
            let mut inner_open = open.clone();
            inner_open.remove(guard);
            self.group(state, &body.conjuncts(), &inner_chain, &inner_open)?;
        }
        Ok(())
    }
}

struct Namer {
    taken: BTreeSet<String>,
}

impl Namer {
    fn fresh(&mut self, base: &str) -> String {
        let mut name = base.to_string();
        let mut i = 2;
        while self.taken.contains(&name) {
            name = format!("{base}{i}");
            i += 1;
        }
        self.taken.insert(name.clone());
        name
    }

    fn reserve(&mut self, name: &str, what: &str) -> Result<(), LowerError> {
        if !self.taken.insert(name.to_string()) {
            return Err(LowerError::NameClash(format!("{what} `{name}` is already used")));
        }
        Ok(())
    }
}

const RESERVED: &[&str] = &["state", "checkFinalization", "atState", "ContractState", "Notify", INITIAL_STATE, FINAL_STATE];

pub fn lower(contract: &Contract, options: &LowerOptions) -> Result<MachineIR, LowerError> {
    let issues = validate(contract);
    if has_errors(&issues) {
        let msgs: Vec<String> = issues.iter().filter(|i| i.is_error()).map(|i| i.message.clone()).collect();
        return Err(LowerError::Invalid(msgs.join("; ")));
    }
    if !options.allow_conflicts {
        let report = check(contract).map_err(|e| LowerError::Invalid(e.to_string()))?;
        if !report.conflicts.is_empty() {
            return Err(LowerError::Conflicts(report.conflicts.len()));
        }
    }
    let ann = Annotations(&contract.annotations);

    let base_line = contract.body_start_line();
    let rule_comment = |c: &Clause| {
        if c.span.is_synthetic() || base_line == 0 {
            compact(c)
        } else {
            format!("{}. {}", c.span.start_line + 1 - base_line, compact(c))
        }
    };
    let mut main = Vec::new();
    let mut rules = Vec::new();
    for c in &contract.clauses {
        match &c.kind {
            ClauseKind::Box { .. } => main.push(c),
            ClauseKind::IterBoxNeg { guard, body, positive_star } => {
                for part in body.conjuncts() {
                    match &part.kind {
                        ClauseKind::Prohibition(target) => rules.push(Rule {
                            guard: guard.clone(),
                            target: target.clone(),
                            positive: *positive_star,
                            comment: rule_comment(c),
                        }),
                        ClauseKind::Permission(_) => {}
                        _ => {
                            return Err(LowerError::Unsupported(format!(
                                "{}: an internal rule body may only hold prohibitions",
                                compact(c)
                            )))
                        }
                    }
                }
            }
            _ => {
                return Err(LowerError::Unsupported(format!(
                    "top-level {} is neither the main box nor an internal rule",
                    compact(c)
                )))
            }
        }
    }
    if main.len() != 1 {
        return Err(LowerError::NoRootChain(main.len()));
    }

    let mut walker = Walker {
        base_line,
        ann: Annotations(&contract.annotations),
        states: vec![INITIAL_STATE.to_string()],
        drafts: Vec::new(),
        advances: BTreeSet::new(),
    };
    walker.group(INITIAL_STATE, &[main[0]], &[], &BTreeSet::new())?;
    let Walker { mut states, mut drafts, advances, .. } = walker;

    // The one state without an outgoing advance is left by finalization.
    let mut finalization = None;
    if let Some(terminal) = states.iter().find(|s| !advances.contains(*s)).cloned() {
        let in_terminal: Vec<usize> = (0..drafts.len()).filter(|&i| drafts[i].state == terminal).collect();
        if in_terminal.len() == 1 && drafts[in_terminal[0]].chain.is_empty() {
            drafts[in_terminal[0]].advance = Some(FINAL_STATE.to_string());
            drafts[in_terminal[0]].leaf = false;
        } else {
            finalization = Some(terminal);
        }
    }
    states.push(FINAL_STATE.to_string());

    // Roles.
    let mut namer = Namer { taken: RESERVED.iter().map(|s| s.to_string()).collect() };
    let mut roles = Vec::new();
    let mut modifiers = BTreeSet::new();
    for agent in &contract.agents {
        let (name, message) = match ann.role(agent) {
            Some((n, m)) => (n.to_string(), m.map(str::to_string)),
            None => (agent.0.clone(), None),
        };
        namer.reserve(&name, "role")?;
        let modifier = format!("only{}", capitalize(agent.as_str()));
        if !modifiers.insert(modifier.clone()) {
            return Err(LowerError::NameClash(format!("modifier `{modifier}` would be generated twice")));
        }
        let message = message.unwrap_or_else(|| format!("Only the {name} ({agent}) may call this"));
        roles.push(Role { name, agent: agent.clone(), modifier, message });
    }
    let role_of = |a: &AgentId| roles.iter().find(|r| &r.agent == a).map(|r| r.name.clone()).unwrap_or_default();

    for s in &states[1..states.len() - 1] {
        namer.reserve(s, "state")?;
    }

    // Function names: annotated names first, then defaults.
    for d in &drafts {
        if let Some(n) = ann.function(&d.event) {
            namer.reserve(n, "function")?;
        }
    }
    let mut fn_names = Vec::new();
    let mut plain_used = BTreeSet::new();
    for d in &drafts {
        let name = match ann.function(&d.event) {
            Some(n) => n.to_string(),
            None if plain_used.insert(d.event.action.0.clone()) && !namer.taken.contains(d.event.action.as_str()) => {
                namer.fresh(d.event.action.as_str())
            }
            None => namer.fresh(&format!("{}To{}", d.event.action, capitalize(&role_of(&d.event.pair.counterparty)))),
        };
        fn_names.push(name);
    }

    // Flags: one per non-advancing function, plus release events of rules
    // that have no function of their own.
    let mut flag_of: BTreeMap<Event, String> = BTreeMap::new();
    let mut flags = Vec::new();
    let mut declare_flag = |e: &Event, comment: String, namer: &mut Namer| -> Result<String, LowerError> {
        if let Some(f) = flag_of.get(e) {
            return Ok(f.clone());
        }
        let name = match ann.flag(e) {
            Some((n, _, _)) => {
                namer.reserve(n, "flag")?;
                n.to_string()
            }
            None => namer.fresh(&format!("{}Done", e.action)),
        };
        flag_of.insert(e.clone(), name.clone());
        flags.push(FlagDecl { name: name.clone(), comment });
        Ok(name)
    };
    let rule_guards: BTreeSet<&Event> = rules.iter().map(|r| &r.guard).collect();
    for d in &drafts {
        if d.advance.is_none() || rule_guards.contains(&d.event) {
            declare_flag(&d.event, d.comment.clone(), &mut namer)?;
        }
    }
    for r in &rules {
        let comment = format!("{}[{}{}]*", r.guard.pair, if r.positive { "" } else { "!" }, r.guard.action);
        declare_flag(&r.guard, comment, &mut namer)?;
    }
    let flag_of = flag_of;

    let label = |e: &Event| -> String {
        drafts
            .iter()
            .position(|d| &d.event == e)
            .map(|i| fn_names[i].clone())
            .unwrap_or_else(|| e.action.0.clone())
    };
    let require_message = |e: &Event| -> String {
        ann.flag(e)
            .and_then(|(_, _, m)| m)
            .map(str::to_string)
            .unwrap_or_else(|| format!("{} has not been performed yet", label(e)))
    };
    let set_message = |e: &Event| -> String {
        ann.flag(e)
            .and_then(|(_, m, _)| m)
            .map(str::to_string)
            .unwrap_or_else(|| format!("{} was already performed", label(e)))
    };

    // Preconditions: enclosing box guards (innermost first), pending leaves
    // of the state being left, then internal rules.
    struct Pre {
        check: FlagCheck,
        from_rule: bool,
    }
    let mut pres: Vec<Vec<Pre>> = Vec::new();
    for d in &drafts {
        let mut list: Vec<Pre> = d
            .chain
            .iter()
            .map(|g| Pre {
                check: FlagCheck { flag: flag_of[g].clone(), required: true, message: require_message(g) },
                from_rule: false,
            })
            .collect();
        if matches!(&d.advance, Some(t) if t != FINAL_STATE) {
            for leaf in drafts.iter().filter(|x| x.leaf && x.state == d.state) {
                let flag = &flag_of[&leaf.event];
                if !list.iter().any(|p| &p.check.flag == flag) {
                    list.push(Pre {
                        check: FlagCheck { flag: flag.clone(), required: true, message: require_message(&leaf.event) },
                        from_rule: false,
                    });
                }
            }
        }
        for r in rules.iter().filter(|r| r.target == d.event) {
            let flag = flag_of[&r.guard].clone();
            let message = match ann.rule(&r.guard) {
                Some(m) => m.to_string(),
                None if r.positive => {
                    format!("Internal rule: {} {} is forbidden once {} {} happened", r.target.pair, r.target.action, r.guard.pair, r.guard.action)
                }
                None => format!("Internal rule: {} {} is forbidden until {} {}", r.target.pair, r.target.action, r.guard.pair, r.guard.action),
            };
            let required = !r.positive;
            match list.iter_mut().find(|p| p.check.flag == flag && p.check.required == required) {
                Some(p) => {
                    p.check.message = message;
                    p.from_rule = true;
                }
                None => list.push(Pre { check: FlagCheck { flag, required, message }, from_rule: true }),
            }
        }
        pres.push(list);
    }

    // Drop requirements implied by another requirement of the same function:
    // a flag is only ever set after its setter's own requirements held.
    let setter: BTreeMap<&str, usize> = drafts
        .iter()
        .enumerate()
        .filter_map(|(i, d)| flag_of.get(&d.event).map(|f| (f.as_str(), i)))
        .collect();
    let implied = |flag: &str| -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![flag.to_string()];
        while let Some(f) = stack.pop() {
            if let Some(&i) = setter.get(f.as_str()) {
                for p in pres[i].iter().filter(|p| p.check.required) {
                    if seen.insert(p.check.flag.clone()) {
                        stack.push(p.check.flag.clone());
                    }
                }
            }
        }
        seen
    };
    let mut preconditions: Vec<Vec<FlagCheck>> = Vec::new();
    for list in &pres {
        let closures: Vec<BTreeSet<String>> =
            list.iter().map(|p| if p.check.required { implied(&p.check.flag) } else { BTreeSet::new() }).collect();
        let kept = list
            .iter()
            .enumerate()
            .filter(|(i, p)| {
                p.from_rule
                    || !p.check.required
                    || !closures.iter().enumerate().any(|(j, c)| j != *i && c.contains(&p.check.flag))
            })
            .map(|(_, p)| p.check.clone())
            .collect();
        preconditions.push(kept);
    }

    // Payability and amount parameters.
    let mut params: Vec<Param> =
        roles.iter().map(|r| Param { name: r.name.clone(), kind: ParamKind::Address }).collect();
    let mut value_guards = Vec::new();
    for d in &drafts {
        let performer = role_of(&d.event.pair.performer);
        let counterparty = role_of(&d.event.pair.counterparty);
        let guard = match ann.payable(&d.event) {
            Some(Some((param, msg))) => Some((param.to_string(), msg.map(str::to_string))),
            Some(None) => None,
            None => {
                let pays = d.event.action.as_str().to_lowercase().contains("pay");
                let flows = counterparty.eq_ignore_ascii_case("bank") || performer.eq_ignore_ascii_case("buyer");
                (pays && flows).then(|| (format!("{}Amount", d.event.action), None))
            }
        };
        let guard = guard.map(|(param, msg)| {
            let message = msg.unwrap_or_else(|| format!("Incorrect value for {param}"));
            ValueGuard { param, message }
        });
        if let Some(g) = &guard {
            if !params.iter().any(|p| p.name == g.param) {
                namer.reserve(&g.param, "parameter")?;
                params.push(Param { name: g.param.clone(), kind: ParamKind::Uint });
            }
        }
        value_guards.push(guard);
    }

    let finalization = finalization.map(|state| Finalization {
        flags: drafts.iter().filter(|d| d.leaf && d.state == state).map(|d| flag_of[&d.event].clone()).collect(),
        state,
    });

    let mut functions = Vec::new();
    for (i, d) in drafts.iter().enumerate() {
        let performer = role_of(&d.event.pair.performer);
        let counterparty = role_of(&d.event.pair.counterparty);
        let own_flag = flag_of.get(&d.event).cloned();
        let mut checks = preconditions[i].clone();
        let mut effects = Vec::new();
        match &d.advance {
            Some(target) => {
                effects.push(Effect::SetState(target.clone()));
                if let Some(f) = &own_flag {
                    effects.push(Effect::SetFlag(f.clone()));
                }
            }
            None => {
                let f = own_flag.clone().expect("non-advancing functions own a flag");
                checks.push(FlagCheck { flag: f.clone(), required: false, message: set_message(&d.event) });
                effects.push(Effect::SetFlag(f));
            }
        }
        let text = ann
            .message(&d.event)
            .map(str::to_string)
            .unwrap_or_else(|| format!("{} performed {} towards {}.", capitalize(&performer), d.event.action, counterparty));
        effects.push(Effect::Emit { sender: performer.clone(), receiver: counterparty, message: format!("{}. {text}", d.number) });
        if d.leaf && finalization.as_ref().is_some_and(|f| f.state == d.state) {
            effects.push(Effect::CheckFinalization);
        }
        let mut comments = vec![format!("{}. {}", d.number, d.comment)];
        for r in rules.iter().filter(|r| r.target == d.event) {
            comments.push(r.comment.clone());
        }
        functions.push(FunctionIR {
            name: fn_names[i].clone(),
            event: d.event.clone(),
            visibility: Visibility::External,
            role_guard: performer,
            state_guard: Some(d.state.clone()),
            value_guard: value_guards[i].clone(),
            flag_preconditions: checks,
            effects,
            comments,
        });
    }

    let mut warnings = Vec::new();
    if options.fidelity {
        for i in 0..drafts.len() {
            if !ann.internal(&drafts[i].event) {
                continue;
            }
            let Some(outer) = drafts[i].chain.first() else {
                warnings.push(format!(
                    "`internal` on {} ignored: the function is not nested under a box",
                    drafts[i].event
                ));
                continue;
            };
            let caller = drafts.iter().position(|d| &d.event == outer).expect("chain guards have functions");
            let callee_name = functions[i].name.clone();
            let chain_flags: BTreeSet<&String> = drafts[i].chain.iter().map(|g| &flag_of[g]).collect();
            let f = &mut functions[i];
            f.visibility = Visibility::Private;
            f.state_guard = None;
            f.flag_preconditions.retain(|c| !(c.required && chain_flags.contains(&c.flag)));
            let (callee_role, callee_mod) = (f.role_guard.clone(), role_modifier(&roles, &f.role_guard));
            let caller_fn = &mut functions[caller];
            let at = caller_fn
                .effects
                .iter()
                .position(|e| matches!(e, Effect::CheckFinalization))
                .unwrap_or(caller_fn.effects.len());
            caller_fn.effects.insert(at, Effect::Call(callee_name.clone()));
            if caller_fn.role_guard != callee_role {
                warnings.push(format!(
                    "function {callee_name} is private and guarded by {callee_mod}, but it is invoked from {} guarded by {}; \
                     the call can never succeed",
                    caller_fn.name,
                    role_modifier(&roles, &caller_fn.role_guard)
                ));
            }
        }
    }

    let ir = MachineIR {
        name: ann.contract_name().unwrap_or("GeneratedContract").to_string(),
        roles,
        states,
        flags,
        functions,
        params,
        invalid_state_message: ann.invalid_state().unwrap_or("Invalid state for this action").to_string(),
        finalization,
        warnings,
    };
    ir.check_invariants().map_err(LowerError::Unsupported)?;
    Ok(ir)
}

fn role_modifier(roles: &[Role], name: &str) -> String {
    roles.iter().find(|r| r.name == name).map(|r| r.modifier.clone()).unwrap_or_default()
}

fn sol_string(s: &str) -> String {
    let mut out = String::new();
    if !s.is_ascii() {
        out.push_str("unicode");
    }
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Deterministic Solidity rendering of the machine.
pub fn emit_solidity(ir: &MachineIR) -> String {
    let mut o = String::new();
    let role_field = |name: &str| name.to_string();
    o.push_str("// SPDX-License-Identifier: MIT\n");
    o.push_str("pragma solidity ^0.8.0;\n\n");
    writeln!(o, "contract {} {{", ir.name).unwrap();
    for p in &ir.params {
        let ty = match p.kind {
            ParamKind::Address => "address",
            ParamKind::Uint => "uint",
        };
        writeln!(o, "    {ty} public {};", p.name).unwrap();
    }
    o.push_str("\n    enum ContractState {\n");
    for (i, s) in ir.states.iter().enumerate() {
        let sep = if i + 1 < ir.states.len() { "," } else { "" };
        writeln!(o, "        {s}{sep}").unwrap();
    }
    o.push_str("    }\n    ContractState public state;\n");
    if !ir.flags.is_empty() {
        o.push('\n');
        for f in &ir.flags {
            writeln!(o, "    bool private {} = false; // {}", f.name, f.comment).unwrap();
        }
    }
    o.push_str("\n    event Notify(\n        address indexed sender,\n        address indexed receiver,\n        string message\n    );\n\n");
    for r in &ir.roles {
        writeln!(o, "    modifier {}() {{", r.modifier).unwrap();
        writeln!(o, "        require(msg.sender == {}, {});", role_field(&r.name), sol_string(&r.message)).unwrap();
        o.push_str("        _;\n    }\n");
    }
    o.push_str("\n    constructor(\n");
    for (i, p) in ir.params.iter().enumerate() {
        let ty = match p.kind {
            ParamKind::Address => "address",
            ParamKind::Uint => "uint",
        };
        let sep = if i + 1 < ir.params.len() { "," } else { "" };
        writeln!(o, "        {ty} _{}{sep}", p.name).unwrap();
    }
    o.push_str("    ) {\n");
    for p in &ir.params {
        writeln!(o, "        {0} = _{0};", p.name).unwrap();
    }
    writeln!(o, "        state = ContractState.{INITIAL_STATE};").unwrap();
    o.push_str("    }\n\n");
    o.push_str("    modifier atState(ContractState _requiredState) {\n");
    writeln!(o, "        require(state == _requiredState, {});", sol_string(&ir.invalid_state_message)).unwrap();
    o.push_str("        _;\n    }\n");

    for f in &ir.functions {
        o.push('\n');
        for c in &f.comments {
            writeln!(o, "    // {c}").unwrap();
        }
        let mut sig = format!("    function {}()", f.name);
        sig.push_str(match f.visibility {
            Visibility::External => " external",
            Visibility::Private => " private",
        });
        if f.is_payable() {
            sig.push_str(" payable");
        }
        if let Some(m) = ir.role(&f.role_guard) {
            write!(sig, " {}", m.modifier).unwrap();
        }
        if let Some(s) = &f.state_guard {
            write!(sig, " atState(ContractState.{s})").unwrap();
        }
        writeln!(o, "{sig} {{").unwrap();
        if let Some(v) = &f.value_guard {
            writeln!(o, "        require(msg.value == {}, {});", v.param, sol_string(&v.message)).unwrap();
        }
        for c in &f.flag_preconditions {
            let bang = if c.required { "" } else { "!" };
            writeln!(o, "        require({bang}{}, {});", c.flag, sol_string(&c.message)).unwrap();
        }
        for e in &f.effects {
            match e {
                Effect::SetState(s) => writeln!(o, "        state = ContractState.{s};").unwrap(),
                Effect::SetFlag(x) => writeln!(o, "        {x} = true;").unwrap(),
                Effect::Emit { sender, receiver, message } => {
                    writeln!(o, "        emit Notify({sender}, {receiver}, {});", sol_string(message)).unwrap()
                }
                Effect::Call(x) => writeln!(o, "        {x}();").unwrap(),
                Effect::CheckFinalization => o.push_str("        checkFinalization();\n"),
            }
        }
        o.push_str("    }\n");
    }

    if let Some(fin) = &ir.finalization {
        o.push_str("\n    function checkFinalization() private {\n");
        writeln!(o, "        if (state == ContractState.{}) {{", fin.state).unwrap();
        let cond = if fin.flags.is_empty() { "true".to_string() } else { fin.flags.join(" && ") };
        writeln!(o, "            if ({cond}) {{").unwrap();
        writeln!(o, "                state = ContractState.{FINAL_STATE};").unwrap();
        o.push_str("            }\n        }\n    }\n");
    }
    o.push_str("}\n");
    o
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_contract;

    fn lower_src(src: &str) -> Result<MachineIR, LowerError> {
        lower(&parse_contract(src).unwrap(), &LowerOptions::default())
    }

    #[test]
    fn minimal_chain() {
        let ir = lower_src("agents a,b; actions x,y; {a,b}[x]({a,b}O(y));").unwrap();
        assert_eq!(ir.states, vec!["Created", "S1", "Finalized"]);
        assert_eq!(ir.functions.len(), 2);
        let x = ir.function("x").unwrap();
        assert_eq!(x.state_guard.as_deref(), Some("Created"));
        assert!(x.effects.contains(&Effect::SetState("S1".into())));
        let y = ir.function("y").unwrap();
        assert_eq!(y.state_guard.as_deref(), Some("S1"));
        assert!(y.effects.contains(&Effect::SetState("Finalized".into())));
        assert!(ir.finalization.is_none());
        let sol = emit_solidity(&ir);
        assert_eq!(sol.matches("    function ").count(), 2);
        assert_eq!(sol, emit_solidity(&ir));
    }

    #[test]
    fn siblings_share_state_and_finalize_together() {
        let ir = lower_src("agents a,b; actions x,y,z; {a,b}[x]({a,b}O(y) & {b,a}O(z));").unwrap();
        assert_eq!(ir.states, vec!["Created", "S1", "Finalized"]);
        let fin = ir.finalization.as_ref().unwrap();
        assert_eq!(fin.state, "S1");
        assert_eq!(fin.flags, vec!["yDone", "zDone"]);
        for name in ["y", "z"] {
            let f = ir.function(name).unwrap();
            assert!(f.effects.contains(&Effect::CheckFinalization));
        }
    }

    #[test]
    fn conflicted_contracts_need_override() {
        let src = "agents a,b; actions x,y; {a,b}[x]({a,b}O(y)); {a,b}[!x]*({a,b}F(y));";
        assert!(lower_src(src).is_ok());
        let src = "agents a,b,c; actions x,y; {a,b}[x]({a,b}O(y)); {a,c}[!y]*({a,b}F(y));";
        assert_eq!(lower_src(src), Err(LowerError::Conflicts(1)));
        let opts = LowerOptions { allow_conflicts: true, fidelity: false };
        assert!(lower(&parse_contract(src).unwrap(), &opts).is_ok());
    }

    #[test]
    fn rules_become_flag_preconditions() {
        let src = "agents a,b; actions x,y,z; {a,b}[x]({b,a}O(z) & {b,a}[z]({a,b}O(y))); {b,a}[!z]*({a,b}F(y));";
        let ir = lower_src(src).unwrap();
        let y = ir.function("y").unwrap();
        assert_eq!(y.flag_preconditions[0].flag, "zDone");
        assert!(y.flag_preconditions[0].required);
        assert!(y.flag_preconditions[0].message.starts_with("Internal rule"));
    }

    #[test]
    fn root_must_be_a_single_box() {
        assert_eq!(lower_src("agents a,b; actions x; {a,b}O(x);"), Err(LowerError::Unsupported(
            "top-level {a,b}O(x) is neither the main box nor an internal rule".into()
        )));
        assert_eq!(
            lower_src("agents a,b; actions x,y; {a,b}[x]({a,b}O(y)); {a,b}[y]({a,b}O(x));"),
            Err(LowerError::NoRootChain(2))
        );
    }

    #[test]
    fn heuristic_payability() {
        let src = "agents b,k; actions buy,payIt; role b buyer; role k bank; {b,k}[buy]({b,k}O(payIt));";
        let ir = lower_src(src).unwrap();
        let f = ir.function("payIt").unwrap();
        assert_eq!(f.value_guard.as_ref().unwrap().param, "payItAmount");
        assert!(ir.params.iter().any(|p| p.name == "payItAmount" && p.kind == ParamKind::Uint));
        assert!(ir.function("buy").unwrap().value_guard.is_none());
    }
}
