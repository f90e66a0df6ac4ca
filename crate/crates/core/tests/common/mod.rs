//! Shared fixtures, seeded generators and independent oracles for the
//! integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rclc::ast::{ActionId, AgentId, AgentPair, Annotation, Clause, ClauseKind, Contract, Event, Span};
use rclc::codegen::{lower, LowerOptions, MachineIR, ParamKind, Visibility};
use rclc::semantics::{Model, NormKind, NormState};
use rclc::simulator::{call, deploy_with_balance, Outcome, ScriptCall, World};
use rclc::codegen::FINAL_STATE;

pub const AMOUNTS: [(&str, u128); 2] = [("paymentAmount", 100), ("shippingCosts", 10)];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn load(name: &str) -> Contract {
    rclc::parse_contract(&read_fixture(name)).unwrap_or_else(|e| panic!("{name}: {e:?}"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Accounts named after roles, with the amounts used by the purchase scripts.
pub fn purchase_world(ir: &MachineIR) -> World {
    let bindings = ir.roles.iter().map(|r| (r.agent.0.clone(), r.name.clone())).collect();
    let amounts = AMOUNTS.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    deploy_with_balance(ir, &bindings, &amounts, 1000).expect("deploy purchase contract")
}

pub fn script(lines: &[(&str, &str, u128)]) -> Vec<ScriptCall> {
    lines.iter().map(|(who, f, v)| ScriptCall::new(who, f, *v)).collect()
}

// ---------------------------------------------------------------------
// Random contracts
// ---------------------------------------------------------------------

const AGENTS: [&str; 4] = ["a", "b", "c", "d"];
const ACTIONS: [&str; 6] = ["x", "y", "z", "w", "v", "u"];
/// Less regular names for syntax-level tests; none is a keyword.
const FANCY_AGENTS: [&str; 4] = ["buyer", "s2", "_k", "Carrier"];
const FANCY_ACTIONS: [&str; 6] = ["pay", "notify_1", "deliverProduct", "q", "Y2", "z_"];

#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    pub max_agents: usize,
    pub max_actions: usize,
    /// Bound on deontic and modal clause nodes (everything except `&`).
    pub max_clauses: usize,
    pub positive_star: bool,
    pub annotations: bool,
    pub fancy_names: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_agents: 4,
            max_actions: 6,
            max_clauses: 8,
            positive_star: true,
            annotations: false,
            fancy_names: false,
        }
    }
}

struct ClauseGen<'r> {
    rng: &'r mut ChaCha8Rng,
    pool: Vec<Event>,
    positive_star: bool,
}

impl ClauseGen<'_> {
    fn event(&mut self) -> Event {
        self.pool.choose(self.rng).expect("non-empty pool").clone()
    }

    /// A clause using between 1 and `budget` nodes; returns the nodes used.
    fn clause(&mut self, budget: usize) -> (Clause, usize) {
        let roll = if budget >= 2 { self.rng.gen_range(0..13) } else { self.rng.gen_range(0..6) };
        match roll {
            0..=2 => (Clause::obligation(self.event()), 1),
            3..=4 => (Clause::prohibition(self.event()), 1),
            5 => (Clause::permission(self.event()), 1),
            6..=8 => {
                let guard = self.event();
                let (body, used) = self.clause(budget - 1);
                (Clause::boxed(guard, body), used + 1)
            }
            9..=10 => {
                let guard = self.event();
                let (body, used) = self.clause(budget - 1);
                if self.positive_star && self.rng.gen_bool(0.25) {
                    (Clause::iter_pos(guard, body), used + 1)
                } else {
                    (Clause::iter_neg(guard, body), used + 1)
                }
            }
            _ => {
                let (left, l) = self.clause(budget - 1);
                let (right, r) = self.clause(budget - l);
                (Clause::new(ClauseKind::And(Box::new(left), Box::new(right))), l + r)
            }
        }
    }
}

/// A random valid contract. Events are drawn from a small pool so that
/// collisions are common.
pub fn random_contract(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Contract {
    let (agent_names, action_names) =
        if cfg.fancy_names { (&FANCY_AGENTS, &FANCY_ACTIONS) } else { (&AGENTS, &ACTIONS) };
    let n_agents = rng.gen_range(2..=cfg.max_agents.min(4));
    let n_actions = rng.gen_range(1..=cfg.max_actions.min(6));
    let agents: Vec<&str> = agent_names[..n_agents].to_vec();
    let actions: Vec<&str> = action_names[..n_actions].to_vec();

    let pool_size = rng.gen_range(2..=8);
    let mut pool = Vec::new();
    for _ in 0..pool_size {
        let mut pair = agents.clone();
        pair.shuffle(rng);
        pool.push(Event::new(pair[0], pair[1], actions.choose(rng).unwrap()));
    }
    let mut gen = ClauseGen { rng: &mut *rng, pool, positive_star: cfg.positive_star };
    let total = gen.rng.gen_range(1..=cfg.max_clauses);
    let mut clauses = Vec::new();
    let mut left = total;
    while left > 0 {
        let (c, used) = gen.clause(left);
        clauses.push(c);
        left -= used;
        if gen.rng.gen_bool(0.3) {
            break;
        }
    }
    let mut contract = Contract::new(&agents, &actions, clauses);
    if cfg.annotations {
        contract.annotations = random_annotations(rng, &contract);
    }
    contract
}

/// Counts the deontic and modal nodes of a clause.
pub fn clause_nodes(c: &Clause) -> usize {
    let mut n = 0;
    c.walk(&mut |node| {
        if !matches!(node.kind, ClauseKind::And(..)) {
            n += 1;
        }
    });
    n
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 10] = ["Apenas o", " banco", " \"quoted\"", " back\\slash", " ção", " 42", "!", " ", "x", "é"];
    let n = rng.gen_range(0..5);
    (0..n).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

fn random_annotations(rng: &mut ChaCha8Rng, c: &Contract) -> Vec<Annotation> {
    let mut anns = Vec::new();
    let agents = &c.agents;
    let mut events = Vec::new();
    for p in agents {
        for q in agents {
            if p != q {
                for a in &c.actions {
                    events.push(Event { pair: AgentPair { performer: p.clone(), counterparty: q.clone() }, action: a.clone() });
                }
            }
        }
    }
    let pick = |rng: &mut ChaCha8Rng| events.choose(rng).unwrap().clone();
    let opt = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { Some(random_text(rng)) } else { None };
    if rng.gen_bool(0.5) {
        anns.push(Annotation::ContractName("Generated_1".into()));
    }
    if rng.gen_bool(0.3) {
        anns.push(Annotation::InvalidStateMessage(random_text(rng)));
    }
    for (i, a) in agents.iter().enumerate() {
        if rng.gen_bool(0.5) {
            anns.push(Annotation::Role { agent: a.clone(), name: format!("role{i}"), message: opt(rng) });
        }
    }
    let e = pick(rng);
    anns.push(Annotation::State { event: e, name: "S_one".into() });
    let e = pick(rng);
    if rng.gen_bool(0.5) {
        anns.push(Annotation::Payable { event: e, param: "amt".into(), message: opt(rng) });
    } else {
        anns.push(Annotation::NonPayable { event: e });
    }
    anns.push(Annotation::Function { event: pick(rng), name: "fn_x".into() });
    let set_message = opt(rng);
    let require_message = if set_message.is_some() { opt(rng) } else { None };
    anns.push(Annotation::Flag { event: pick(rng), name: "flagA".into(), set_message, require_message });
    anns.push(Annotation::Rule { event: pick(rng), message: random_text(rng) });
    anns.push(Annotation::Message { event: pick(rng), text: random_text(rng) });
    anns.push(Annotation::Internal { event: pick(rng) });
    anns.shuffle(rng);
    anns
}

// ---------------------------------------------------------------------
// Independent printer with noisy layout
// ---------------------------------------------------------------------

fn ws(rng: &mut ChaCha8Rng) -> &'static str {
    [" ", "", "  ", "\n", "\t", " // note\n", "\n\n  "].choose(rng).unwrap()
}

fn noisy_event(e: &Event, rng: &mut ChaCha8Rng) -> String {
    format!("{{{}{},{}{}}}{}", ws(rng), e.pair.performer, ws(rng), e.pair.counterparty, ws(rng))
}

fn noisy_clause(c: &Clause, rng: &mut ChaCha8Rng, out: &mut String) {
    match &c.kind {
        ClauseKind::Obligation(e) | ClauseKind::Prohibition(e) | ClauseKind::Permission(e) => {
            let op = match c.kind {
                ClauseKind::Obligation(_) => "O",
                ClauseKind::Prohibition(_) => "F",
                _ => "P",
            };
            let pre = noisy_event(e, rng);
            let (a, b) = (ws(rng), ws(rng));
            write!(out, "{pre}{op}{a}({b}{}{})", e.action, ws(rng)).unwrap();
        }
        ClauseKind::Box { guard, body } | ClauseKind::IterBoxNeg { guard, body, .. } => {
            let pre = noisy_event(guard, rng);
            let (open, close) = match c.kind {
                ClauseKind::Box { .. } => ("[", "]"),
                ClauseKind::IterBoxNeg { positive_star: true, .. } => ("[", "]*"),
                _ => ("[!", "]*"),
            };
            write!(out, "{pre}{open}{}{}{close}{}(", guard.action, ws(rng), ws(rng)).unwrap();
            out.push_str(ws(rng));
            noisy_clause(body, rng, out);
            out.push_str(ws(rng));
            out.push(')');
        }
        ClauseKind::And(l, r) => {
            noisy_clause(l, rng, out);
            let (a, b) = (ws(rng), ws(rng));
            write!(out, "{a}&{b}").unwrap();
            noisy_clause(r, rng, out);
        }
    }
}

/// Renders a contract without annotations, with random whitespace and
/// comments between tokens.
pub fn noisy_source(c: &Contract, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::from("// generated\n");
    let list = |v: Vec<&str>, rng: &mut ChaCha8Rng| {
        v.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(&format!("{},{}", ws(rng), ws(rng)))
    };
    let agents = list(c.agents.iter().map(|a| a.as_str()).collect(), rng);
    let actions = list(c.actions.iter().map(|a| a.as_str()).collect(), rng);
    writeln!(out, "agents {agents}{};{}actions {actions};", ws(rng), ws(rng)).unwrap();
    for clause in &c.clauses {
        noisy_clause(clause, rng, &mut out);
        out.push_str(ws(rng));
        out.push_str(";\n");
    }
    out
}

// ---------------------------------------------------------------------
// Denotational oracle for norm states
// ---------------------------------------------------------------------

/// Norm state projected onto source positions: what is active, pending or
/// watched, each with the release events of its enclosing scopes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Denotation {
    pub active: BTreeSet<(char, Event, Span, BTreeSet<Event>)>,
    pub pending: BTreeSet<(Event, Span, BTreeSet<Event>)>,
    pub watched: BTreeSet<(Event, bool, Span, BTreeSet<Event>)>,
}

fn denote_into(c: &Clause, fired: &BTreeSet<Event>, scope: &BTreeSet<Event>, d: &mut Denotation) {
    match &c.kind {
        ClauseKind::Obligation(e) => {
            if !fired.contains(e) {
                d.active.insert(('O', e.clone(), c.span, scope.clone()));
            }
        }
        ClauseKind::Prohibition(e) => {
            d.active.insert(('F', e.clone(), c.span, scope.clone()));
        }
        ClauseKind::Permission(_) => {}
        ClauseKind::Box { guard, body } => {
            if fired.contains(guard) {
                denote_into(body, fired, scope, d);
            } else {
                d.pending.insert((guard.clone(), c.span, scope.clone()));
            }
        }
        ClauseKind::IterBoxNeg { guard, body, positive_star: false } => {
            if !fired.contains(guard) {
                d.watched.insert((guard.clone(), false, c.span, scope.clone()));
                let mut inner = scope.clone();
                inner.insert(guard.clone());
                denote_into(body, fired, &inner, d);
            }
        }
        ClauseKind::IterBoxNeg { guard, body, positive_star: true } => {
            if fired.contains(guard) {
                denote_into(body, fired, scope, d);
            } else {
                d.watched.insert((guard.clone(), true, c.span, scope.clone()));
            }
        }
        ClauseKind::And(l, r) => {
            denote_into(l, fired, scope, d);
            denote_into(r, fired, scope, d);
        }
    }
}

/// The norm state a contract denotes once exactly `fired` has happened,
/// computed from the syntax tree without replaying any order. Anything
/// under a `[!a]*` whose `a` has fired is gone.
pub fn denote(c: &Contract, fired: &BTreeSet<Event>) -> Denotation {
    let mut d = Denotation::default();
    for clause in &c.clauses {
        denote_into(clause, fired, &BTreeSet::new(), &mut d);
    }
    let dead = |scope: &BTreeSet<Event>| scope.iter().any(|e| fired.contains(e));
    d.active.retain(|(_, _, _, s)| !dead(s));
    d.pending.retain(|(_, _, s)| !dead(s));
    d.watched.retain(|(_, _, _, s)| !dead(s));
    d
}

/// Projects an operational state onto the same shape as [`Denotation`].
pub fn project(model: &Model, st: &NormState) -> Denotation {
    let mut d = Denotation::default();
    for (n, scope) in &st.active {
        let k = if n.kind == NormKind::Obligation { 'O' } else { 'F' };
        d.active.insert((k, n.event.clone(), n.origin, scope.clone()));
    }
    for (b, scope) in &st.pending_boxes {
        d.pending.insert((b.guard.clone(), model.node_span(b.node), scope.clone()));
    }
    for (w, scope) in &st.iter_watch {
        d.watched.insert((w.guard.clone(), w.positive, model.node_span(w.node), scope.clone()));
    }
    d
}

/// Parses the canonical rendering so every node carries a real span.
pub fn with_spans(c: &Contract) -> Contract {
    rclc::parse_contract(&rclc::pretty_print(c)).expect("canonical text parses")
}

// ---------------------------------------------------------------------
// Lowerable contracts and random scripts
// ---------------------------------------------------------------------

/// Keeps the reachable state space of generated machines small.
const MACHINE_EVENTS: usize = 10;

struct MachineGen<'r> {
    rng: &'r mut ChaCha8Rng,
    agents: Vec<&'static str>,
    actions: Vec<&'static str>,
    used: BTreeSet<Event>,
}

impl MachineGen<'_> {
    fn fresh(&mut self) -> Option<Event> {
        if self.used.len() >= MACHINE_EVENTS {
            return None;
        }
        for _ in 0..40 {
            let mut pair = self.agents.clone();
            pair.shuffle(self.rng);
            let e = Event::new(pair[0], pair[1], self.actions.choose(self.rng).unwrap());
            if self.used.insert(e.clone()) {
                return Some(e);
            }
        }
        None
    }

    /// Obligations on fresh events, some of which guard a nested group.
    fn group(&mut self, depth: usize) -> String {
        let n = self.rng.gen_range(1..=3);
        let obligations: Vec<Event> = (0..n).filter_map(|_| self.fresh()).collect();
        let mut parts: Vec<String> = obligations.iter().map(|e| format!("{} O({})", e.pair, e.action)).collect();
        if depth > 0 {
            for e in &obligations {
                if self.rng.gen_bool(0.5) {
                    let inner = self.group(depth - 1);
                    parts.push(format!("{} [{}]({inner})", e.pair, e.action));
                }
            }
        }
        parts.join(" & ")
    }
}

/// Random contracts shaped for lowering: one root box over nested groups of
/// obligations, plus a few internal rules. Only contracts that lower
/// without conflicts are returned.
pub fn random_machine_contract(rng: &mut ChaCha8Rng) -> Option<(Contract, MachineIR)> {
    let n_agents = rng.gen_range(2..=4);
    let mut gen = MachineGen {
        rng: &mut *rng,
        agents: AGENTS[..n_agents].to_vec(),
        actions: ACTIONS.to_vec(),
        used: BTreeSet::new(),
    };
    let root = gen.fresh()?;
    let depth = gen.rng.gen_range(1..=3);
    let body = gen.group(depth);
    let mut src = format!("agents {};\nactions {};\n", gen.agents.join(", "), gen.actions.join(", "));
    let events: Vec<Event> = gen.used.iter().cloned().collect();
    for e in &events {
        if gen.rng.gen_bool(0.25) {
            writeln!(src, "payable {} {} = amt_{}_{};", e.pair, e.action, e.pair.performer, e.action).unwrap();
        }
    }
    writeln!(src, "{} [{}]({body});", root.pair, root.action).unwrap();
    for _ in 0..gen.rng.gen_range(0..=2) {
        let a = events.choose(gen.rng).unwrap();
        let b = events.choose(gen.rng).unwrap();
        if a != b {
            writeln!(src, "{} [!{}]*({} F({}));", a.pair, a.action, b.pair, b.action).unwrap();
        }
    }
    let contract = rclc::parse_contract(&src).ok()?;
    let ir = lower(&contract, &LowerOptions::default()).ok()?;
    Some((contract, ir))
}

/// Accounts `acct_<agent>` and a fixed amount for every parameter.
pub fn random_world(ir: &MachineIR, rng: &mut ChaCha8Rng) -> World {
    let bindings: BTreeMap<String, String> =
        ir.roles.iter().map(|r| (r.agent.0.clone(), format!("acct_{}", r.agent))).collect();
    let amounts: BTreeMap<String, u128> = ir
        .params
        .iter()
        .filter(|p| p.kind == ParamKind::Uint)
        .map(|p| (p.name.clone(), rng.gen_range(1..=120)))
        .collect();
    let balance = if rng.gen_bool(0.3) { rng.gen_range(0..150) } else { 1000 };
    deploy_with_balance(ir, &bindings, &amounts, balance).expect("deploy generated machine")
}

/// Calls that mostly pick the right caller and value, so scripts progress
/// while still exercising every revert path.
pub fn random_script(ir: &MachineIR, world: &World, rng: &mut ChaCha8Rng, len: usize) -> Vec<ScriptCall> {
    let callable: Vec<_> = ir.functions.iter().filter(|f| f.visibility == Visibility::External).collect();
    let accounts: Vec<&String> = world.accounts.keys().collect();
    (0..len)
        .map(|_| {
            let f = callable.choose(rng).unwrap();
            let caller = if rng.gen_bool(0.75) {
                world.bindings[&f.role_guard].clone()
            } else {
                accounts.choose(rng).unwrap().to_string()
            };
            let value = match &f.value_guard {
                Some(g) if rng.gen_bool(0.75) => world.amounts[&g.param],
                Some(g) => rng.gen_range(0..=world.amounts[&g.param] + 5),
                None if rng.gen_bool(0.85) => 0,
                None => rng.gen_range(1..=5),
            };
            ScriptCall::new(&caller, &f.name, value)
        })
        .collect()
}

pub fn agent(name: &str) -> AgentId {
    AgentId::new(name)
}

pub fn action(name: &str) -> ActionId {
    ActionId::new(name)
}

// ---------------------------------------------------------------------
// Property checks shared by the property suites and the acceptance run
// ---------------------------------------------------------------------

/// parse(pretty_print(c)) == c on `n` generated contracts with annotations.
pub fn round_trip_violations(n: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let cfg = GenConfig { annotations: true, fancy_names: true, ..GenConfig::default() };
    let mut bad = Vec::new();
    for i in 0..n {
        let c = random_contract(&mut r, &cfg);
        let issues = rclc::validate(&c);
        if issues.iter().any(|x| x.is_error()) {
            bad.push(format!("#{i}: generator produced an invalid contract: {issues:?}"));
            continue;
        }
        let text = rclc::pretty_print(&c);
        match rclc::parse_contract(&text) {
            Ok(back) if back == c => {
                if rclc::pretty_print(&back) != text {
                    bad.push(format!("#{i}: printing is not stable\n{text}"));
                }
            }
            Ok(_) => bad.push(format!("#{i}: re-parsed contract differs\n{text}")),
            Err(e) => bad.push(format!("#{i}: canonical text fails to parse: {e:?}\n{text}")),
        }
    }
    bad
}

/// Runs `script` call by call, checking value conservation, revert
/// atomicity and state monotonicity. Returns the final world.
pub fn checked_run(ir: &MachineIR, mut world: World, script: &[ScriptCall]) -> Result<World, String> {
    let total = world.total_value();
    for (i, c) in script.iter().enumerate() {
        let (next, rec) = call(ir, &world, &c.caller, &c.function, c.value).map_err(|e| format!("call {i}: {e}"))?;
        if next.total_value() != total {
            return Err(format!("call {i} ({}): value {} became {}", c.function, total, next.total_value()));
        }
        if next.call_log.len() != world.call_log.len() + 1 || next.call_log.last() != Some(&rec) {
            return Err(format!("call {i}: call log not extended by exactly this record"));
        }
        if let Outcome::Reverted(msg) = &rec.outcome {
            if next.without_calls() != world.without_calls() {
                return Err(format!("call {i}: revert \"{msg}\" changed the world"));
            }
        }
        let before = ir.state_index(&world.current_state).ok_or("unknown state")?;
        let after = ir.state_index(&next.current_state).ok_or("unknown state")?;
        if after < before {
            return Err(format!("call {i}: state went back from {} to {}", world.current_state, next.current_state));
        }
        world = next;
    }
    Ok(world)
}

/// Replays the successful calls as events in the transition system: each
/// must be performable, not forbidden and a valid step. At the end the
/// machine is finalized exactly when no obligation remains pending after a
/// non-empty trace.
pub fn co_simulate(contract: &Contract, ir: &MachineIR, world: &World) -> Result<(), String> {
    let model = Model::new(contract).map_err(|e| e.to_string())?;
    let mut st = model.initial_state();
    let mut events = Vec::new();
    for rec in world.call_log.iter().filter(|r| r.is_ok()) {
        let f = ir.function(&rec.function).ok_or("call to a function missing from the IR")?;
        let e = &f.event;
        if !model.alphabet().contains(e) {
            return Err(format!("{} maps to {e}, which the contract never performs", rec.function));
        }
        if st.forbids(e) {
            return Err(format!("{} succeeded although {e} is forbidden after {events:?}", rec.function));
        }
        st = model.step(&st, e).map_err(|err| format!("{}: {err}", rec.function))?;
        events.push(e.to_string());
    }
    let finalized = world.current_state == FINAL_STATE;
    let discharged = !events.is_empty() && st.obligations().next().is_none();
    if finalized != discharged {
        return Err(format!(
            "finalized={finalized} but obligations discharged={discharged} after {events:?}"
        ));
    }
    Ok(())
}

/// Conservation, atomicity and monotonicity over `n` random scripts spread
/// across the purchase fixtures and generated machines.
pub fn simulation_violations(n: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let opts = LowerOptions { allow_conflicts: true, fidelity: false };
    let fixtures: Vec<MachineIR> = ["purchase_conflicted.rcl", "purchase_fixed.rcl"]
        .iter()
        .map(|f| lower(&load(f), &opts).expect("fixture lowers"))
        .collect();
    let fidelity = lower(&load("purchase_conflicted.rcl"), &LowerOptions { allow_conflicts: true, fidelity: true })
        .expect("fixture lowers");
    let mut bad = Vec::new();
    let mut i = 0;
    while i < n {
        let ir = match i % 4 {
            0 => fixtures[0].clone(),
            1 => fixtures[1].clone(),
            2 => fidelity.clone(),
            _ => match random_machine_contract(&mut r) {
                Some((_, ir)) => ir,
                None => continue,
            },
        };
        let world = random_world(&ir, &mut r);
        let len = r.gen_range(0..=24);
        let script = random_script(&ir, &world, &mut r, len);
        if let Err(e) = checked_run(&ir, world, &script) {
            bad.push(format!("script {i} on {}: {e}", ir.name));
        }
        i += 1;
    }
    bad
}

/// Co-simulation of random scripts on the corrected purchase contract.
pub fn purchase_co_simulation_violations(n: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let contract = load("purchase_fixed.rcl");
    let ir = lower(&contract, &LowerOptions::default()).expect("corrected fixture lowers");
    let mut bad = Vec::new();
    for i in 0..n {
        let world = purchase_world(&ir);
        let len = r.gen_range(0..=40);
        let script = random_script(&ir, &world, &mut r, len);
        let outcome = checked_run(&ir, world, &script).and_then(|w| co_simulate(&contract, &ir, &w));
        if let Err(e) = outcome {
            bad.push(format!("script {i}: {e}"));
        }
    }
    bad
}
