//! Operational semantics: a finite labelled transition system over
//! relativized events.
//!
//! Each event fires at most once per trace. A state records the norms in
//! force, the boxes still waiting for their guard, the live iterated
//! guards and the set of events already fired. Norms activated inside an
//! `[!a]*` scope carry `a` as a killer event and disappear when `a` fires.
//!
//! Only events that some clause lets a party perform (obligation and
//! permission subjects, box and positive-star guards) are explored, and
//! an event is enabled only while no active prohibition forbids it.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{Clause, ClauseKind, Contract, Event, Span};
use crate::validate::{validate, ValidationIssue};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum NormKind {
    Obligation,
    Prohibition,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Norm {
    pub kind: NormKind,
    pub event: Event,
    /// Clause node that activated the norm.
    pub node: NodeId,
    pub origin: Span,
}

impl Norm {
    pub fn label(&self) -> String {
        let op = match self.kind {
            NormKind::Obligation => 'O',
            NormKind::Prohibition => 'F',
        };
        format!("{} {op}({})", self.event.pair, self.event.action)
    }
}

/// Release events of the enclosing `[!a]*` guards.
pub type Scope = BTreeSet<Event>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PendingBox {
    pub guard: Event,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct IterWatch {
    pub guard: Event,
    pub node: NodeId,
    pub positive: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct NormState {
    pub active: BTreeMap<Norm, Scope>,
    pub pending_boxes: BTreeMap<PendingBox, Scope>,
    pub iter_watch: BTreeMap<IterWatch, Scope>,
    pub fired: BTreeSet<Event>,
}

impl NormState {
    pub fn norms(&self) -> impl Iterator<Item = &Norm> {
        self.active.keys()
    }

    pub fn obligations(&self) -> impl Iterator<Item = &Norm> {
        self.norms().filter(|n| n.kind == NormKind::Obligation)
    }

    pub fn prohibitions(&self) -> impl Iterator<Item = &Norm> {
        self.norms().filter(|n| n.kind == NormKind::Prohibition)
    }

    pub fn forbids(&self, e: &Event) -> bool {
        self.prohibitions().any(|n| &n.event == e)
    }

    /// Every (obligation, prohibition) pair on the same event.
    pub fn collisions(&self) -> Vec<(&Norm, &Norm)> {
        let mut out = Vec::new();
        for o in self.obligations() {
            for f in self.prohibitions() {
                if o.event == f.event {
                    out.push((o, f));
                }
            }
        }
        out
    }

    /// Deterministic one-line encoding used to sort and dump states.
    pub fn canonical(&self) -> String {
        let mut s = String::from("fired=[");
        push_list(&mut s, self.fired.iter().map(|e| e.to_string()));
        s.push_str("] active=[");
        push_list(&mut s, self.active.keys().map(|n| format!("{}@{}", n.label(), n.origin)));
        s.push_str("] pending=[");
        push_list(&mut s, self.pending_boxes.keys().map(|b| format!("{} [{}]#{}", b.guard.pair, b.guard.action, b.node)));
        s.push_str("] watch=[");
        push_list(
            &mut s,
            self.iter_watch.keys().map(|w| {
                let bang = if w.positive { "" } else { "!" };
                format!("{} [{bang}{}]*#{}", w.guard.pair, w.guard.action, w.node)
            }),
        );
        s.push(']');
        s
    }
}

fn push_list(s: &mut String, items: impl Iterator<Item = String>) {
    for (i, item) in items.enumerate() {
        if i > 0 {
            s.push_str("; ");
        }
        s.push_str(&item);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SemanticsError {
    #[error("contract has validation errors: {}", .0.iter().map(|i| i.message.as_str()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ValidationIssue>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("event {0} has already fired")]
    Replay(Event),
    #[error("event {0} does not resolve against the contract")]
    Unresolvable(Event),
}

#[derive(Debug, Clone)]
enum NodeKind {
    Obligation(Event),
    Prohibition(Event),
    Permission,
    Box { guard: Event, body: NodeId },
    Iter { guard: Event, body: NodeId, positive: bool },
    And(Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    kind: NodeKind,
    span: Span,
}

/// A validated contract compiled into an indexed clause arena.
#[derive(Debug, Clone)]
pub struct Model {
    contract: Contract,
    nodes: Vec<Node>,
    roots: Vec<NodeId>,
    alphabet: Vec<Event>,
}

impl Model {
    pub fn new(contract: &Contract) -> Result<Self, SemanticsError> {
        let issues = validate(contract);
        if issues.iter().any(ValidationIssue::is_error) {
            return Err(SemanticsError::Invalid(issues.into_iter().filter(|i| i.is_error()).collect()));
        }
        let mut model = Model { contract: contract.clone(), nodes: Vec::new(), roots: Vec::new(), alphabet: Vec::new() };
        let mut alphabet = BTreeSet::new();
        for c in &contract.clauses {
            let id = model.compile(c, &mut alphabet);
            model.roots.push(id);
        }
        model.alphabet = alphabet.into_iter().collect();
        Ok(model)
    }

    fn compile(&mut self, c: &Clause, alphabet: &mut BTreeSet<Event>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { kind: NodeKind::Permission, span: c.span });
        let kind = match &c.kind {
            ClauseKind::Obligation(e) => {
                alphabet.insert(e.clone());
                NodeKind::Obligation(e.clone())
            }
            ClauseKind::Prohibition(e) => NodeKind::Prohibition(e.clone()),
            ClauseKind::Permission(e) => {
                alphabet.insert(e.clone());
                NodeKind::Permission
            }
            ClauseKind::Box { guard, body } => {
                alphabet.insert(guard.clone());
                NodeKind::Box { guard: guard.clone(), body: self.compile(body, alphabet) }
            }
            ClauseKind::IterBoxNeg { guard, body, positive_star } => {
                if *positive_star {
                    alphabet.insert(guard.clone());
                }
                NodeKind::Iter { guard: guard.clone(), body: self.compile(body, alphabet), positive: *positive_star }
            }
            ClauseKind::And(..) => {
                let parts = c.conjuncts().into_iter().map(|p| self.compile(p, alphabet)).collect();
                NodeKind::And(parts)
            }
        };
        self.nodes[id].kind = kind;
        id
    }

    pub fn contract(&self) -> &Contract {
        &self.contract
    }

    /// Events explored by the transition system, in lexicographic order.
    pub fn alphabet(&self) -> &[Event] {
        &self.alphabet
    }

    pub fn resolves(&self, e: &Event) -> bool {
        let c = &self.contract;
        c.has_agent(&e.pair.performer)
            && c.has_agent(&e.pair.counterparty)
            && e.pair.performer != e.pair.counterparty
            && c.has_action(&e.action)
    }

    pub fn node_span(&self, node: NodeId) -> Span {
        self.nodes[node].span
    }

    fn activate(&self, node: NodeId, scope: &Scope, st: &mut NormState) {
        let span = self.nodes[node].span;
        match &self.nodes[node].kind {
            NodeKind::Obligation(e) => {
                if !st.fired.contains(e) {
                    let norm = Norm { kind: NormKind::Obligation, event: e.clone(), node, origin: span };
                    st.active.insert(norm, scope.clone());
                }
            }
            NodeKind::Prohibition(e) => {
                let norm = Norm { kind: NormKind::Prohibition, event: e.clone(), node, origin: span };
                st.active.insert(norm, scope.clone());
            }
            NodeKind::Permission => {}
            NodeKind::Box { guard, body } => {
                if st.fired.contains(guard) {
                    self.activate(*body, scope, st);
                } else {
                    st.pending_boxes.insert(PendingBox { guard: guard.clone(), node }, scope.clone());
                }
            }
            NodeKind::Iter { guard, body, positive: false } => {
                if !st.fired.contains(guard) {
                    st.iter_watch.insert(IterWatch { guard: guard.clone(), node, positive: false }, scope.clone());
                    let mut inner = scope.clone();
                    inner.insert(guard.clone());
                    self.activate(*body, &inner, st);
                }
            }
            NodeKind::Iter { guard, body, positive: true } => {
                if st.fired.contains(guard) {
                    self.activate(*body, scope, st);
                } else {
                    st.iter_watch.insert(IterWatch { guard: guard.clone(), node, positive: true }, scope.clone());
                }
            }
            NodeKind::And(parts) => {
                for p in parts {
                    self.activate(*p, scope, st);
                }
            }
        }
    }

    pub fn initial_state(&self) -> NormState {
        let mut st = NormState::default();
        for &r in &self.roots {
            self.activate(r, &Scope::new(), &mut st);
        }
        st
    }

    pub fn step(&self, state: &NormState, event: &Event) -> Result<NormState, StepError> {
        if !self.resolves(event) {
            return Err(StepError::Unresolvable(event.clone()));
        }
        if state.fired.contains(event) {
            return Err(StepError::Replay(event.clone()));
        }
        let mut st = state.clone();
        st.fired.insert(event.clone());

        st.active.retain(|n, scope| !(n.kind == NormKind::Obligation && &n.event == event) && !scope.contains(event));
        st.pending_boxes.retain(|_, scope| !scope.contains(event));
        st.iter_watch.retain(|w, scope| !scope.contains(event) && !(!w.positive && &w.guard == event));

        let boxes: Vec<(PendingBox, Scope)> = st
            .pending_boxes
            .iter()
            .filter(|(b, _)| &b.guard == event)
            .map(|(b, s)| (b.clone(), s.clone()))
            .collect();
        let watches: Vec<(IterWatch, Scope)> = st
            .iter_watch
            .iter()
            .filter(|(w, _)| w.positive && &w.guard == event)
            .map(|(w, s)| (w.clone(), s.clone()))
            .collect();
        for (b, scope) in boxes {
            st.pending_boxes.remove(&b);
            if let NodeKind::Box { body, .. } = &self.nodes[b.node].kind {
                self.activate(*body, &scope, &mut st);
            }
        }
        for (w, scope) in watches {
            st.iter_watch.remove(&w);
            if let NodeKind::Iter { body, .. } = &self.nodes[w.node].kind {
                self.activate(*body, &scope, &mut st);
            }
        }
        Ok(st)
    }

    /// Alphabet events that have not fired and are not forbidden in `state`.
    pub fn enabled<'a>(&'a self, state: &'a NormState) -> impl Iterator<Item = &'a Event> + 'a {
        self.alphabet.iter().filter(move |e| !state.fired.contains(*e) && !state.forbids(e))
    }
}

pub fn initial_state(contract: &Contract) -> Result<NormState, SemanticsError> {
    Ok(Model::new(contract)?.initial_state())
}

#[derive(Debug, Clone)]
pub struct Lts {
    pub states: Vec<NormState>,
    pub initial: usize,
    pub transitions: Vec<(usize, Event, usize)>,
    /// BFS parent of every non-initial state: (predecessor, event).
    pub parents: Vec<Option<(usize, Event)>>,
}

impl Lts {
    /// Shortest path from the initial state, lexicographically least among
    /// equal-length paths.
    pub fn trace_to(&self, state: usize) -> Vec<Event> {
        let mut trace = Vec::new();
        let mut cur = state;
        while let Some((prev, e)) = &self.parents[cur] {
            trace.push(e.clone());
            cur = *prev;
        }
        trace.reverse();
        trace
    }

    /// Text dump with states ordered by canonical encoding and transitions
    /// sorted lexicographically.
    pub fn dump(&self) -> String {
        let (order, rank) = self.canonical_order();
        let mut out = String::new();
        writeln!(out, "states {}", self.states.len()).unwrap();
        writeln!(out, "transitions {}", self.transitions.len()).unwrap();
        writeln!(out, "initial s{}", rank[self.initial]).unwrap();
        for (i, &idx) in order.iter().enumerate() {
            writeln!(out, "s{i} {}", self.states[idx].canonical()).unwrap();
        }
        for (src, e, dst) in self.sorted_transitions(&rank) {
            writeln!(out, "s{src} -- {e} --> s{dst}").unwrap();
        }
        out
    }

    pub fn to_dot(&self) -> String {
        let (order, rank) = self.canonical_order();
        let mut out = String::from("digraph lts {\n  rankdir=LR;\n");
        for (i, &idx) in order.iter().enumerate() {
            let st = &self.states[idx];
            let mut label: Vec<String> = st.norms().map(Norm::label).collect();
            if label.is_empty() {
                label.push("-".into());
            }
            let shape = if st.collisions().is_empty() { "ellipse" } else { "doubleoctagon" };
            writeln!(out, "  s{i} [shape={shape}, label=\"s{i}\\n{}\"];", label.join("\\n")).unwrap();
        }
        for (src, e, dst) in self.sorted_transitions(&rank) {
            writeln!(out, "  s{src} -> s{dst} [label=\"{e}\"];").unwrap();
        }
        out.push_str("}\n");
        out
    }

    fn canonical_order(&self) -> (Vec<usize>, Vec<usize>) {
        let keys: Vec<String> = self.states.iter().map(NormState::canonical).collect();
        let mut order: Vec<usize> = (0..self.states.len()).collect();
        order.sort_by(|a, b| keys[*a].cmp(&keys[*b]));
        let mut rank = vec![0; order.len()];
        for (i, &idx) in order.iter().enumerate() {
            rank[idx] = i;
        }
        (order, rank)
    }

    fn sorted_transitions(&self, rank: &[usize]) -> Vec<(usize, Event, usize)> {
        let mut ts: Vec<_> = self.transitions.iter().map(|(s, e, d)| (rank[*s], e.clone(), rank[*d])).collect();
        ts.sort();
        ts
    }
}

/// Breadth-first closure of `step` over enabled events. Finite because
/// each event fires at most once.
pub fn explore(model: &Model) -> Lts {
    let init = model.initial_state();
    let mut index: HashMap<NormState, usize> = HashMap::new();
    index.insert(init.clone(), 0);
    let mut lts = Lts { states: vec![init], initial: 0, transitions: Vec::new(), parents: vec![None] };
    let mut queue = VecDeque::from([0usize]);
    while let Some(cur) = queue.pop_front() {
        let state = lts.states[cur].clone();
        for e in model.enabled(&state) {
            let next = model.step(&state, e).expect("enabled events always step");
            let id = match index.get(&next) {
                Some(&id) => id,
                None => {
                    let id = lts.states.len();
                    index.insert(next.clone(), id);
                    lts.states.push(next);
                    lts.parents.push(Some((cur, e.clone())));
                    queue.push_back(id);
                    id
                }
            };
            lts.transitions.push((cur, e.clone(), id));
        }
    }
    lts
}

pub fn enumerate_reachable(contract: &Contract) -> Result<Lts, SemanticsError> {
    Ok(explore(&Model::new(contract)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_contract;

    fn model(src: &str) -> Model {
        Model::new(&parse_contract(src).unwrap()).unwrap()
    }

    #[test]
    fn unconditional_obligation() {
        let m = model("agents a,b; actions x; {a,b}O(x);");
        let s = m.initial_state();
        assert_eq!(s.obligations().count(), 1);
        assert!(s.pending_boxes.is_empty());
        let lts = explore(&m);
        assert_eq!(lts.states.len(), 2);
        assert_eq!(lts.transitions.len(), 1);
    }

    #[test]
    fn box_waits_for_guard() {
        let m = model("agents a,b; actions x,y; {a,b}[x]({a,b}O(y));");
        let s = m.initial_state();
        assert_eq!(s.active.len(), 0);
        assert_eq!(s.pending_boxes.len(), 1);
        let s = m.step(&s, &Event::new("a", "b", "x")).unwrap();
        assert_eq!(s.obligations().next().unwrap().event, Event::new("a", "b", "y"));
    }

    #[test]
    fn frame_rule_and_replay() {
        let m = model("agents a,b; actions x,y; {a,b}[x]({a,b}O(y));");
        let s0 = m.initial_state();
        let e = Event::new("b", "a", "y");
        let s1 = m.step(&s0, &e).unwrap();
        assert_eq!(s1.active, s0.active);
        assert_eq!(s1.pending_boxes, s0.pending_boxes);
        assert_eq!(s1.fired.len(), 1);
        assert_eq!(m.step(&s1, &e), Err(StepError::Replay(e)));
        assert!(matches!(m.step(&s0, &Event::new("a", "q", "x")), Err(StepError::Unresolvable(_))));
    }

    #[test]
    fn negated_iteration_releases_on_guard() {
        let m = model("agents a,b; actions x,y; {a,b}[y]({a,b}O(x)); {a,b}[!y]*({a,b}F(x));");
        let s0 = m.initial_state();
        assert!(s0.forbids(&Event::new("a", "b", "x")));
        let s1 = m.step(&s0, &Event::new("a", "b", "y")).unwrap();
        assert!(!s1.forbids(&Event::new("a", "b", "x")));
        assert_eq!(s1.obligations().count(), 1);
        assert!(s1.iter_watch.is_empty());
    }

    #[test]
    fn positive_star_activates_after_guard() {
        let m = model("agents a,b; actions x,y; {a,b}[x]*({b,a}F(y));");
        let s0 = m.initial_state();
        assert!(s0.active.is_empty());
        let s1 = m.step(&s0, &Event::new("a", "b", "x")).unwrap();
        assert!(s1.forbids(&Event::new("b", "a", "y")));
    }

    #[test]
    fn forbidden_events_are_not_enabled() {
        let m = model("agents a,b; actions x; {a,b}O(x); {a,b}F(x);");
        let s = m.initial_state();
        assert_eq!(m.enabled(&s).count(), 0);
        assert_eq!(explore(&m).states.len(), 1);
    }

    #[test]
    fn invalid_contract_rejected() {
        let c = parse_contract("agents a,b; actions x; {a,a}O(x);").unwrap();
        assert!(Model::new(&c).is_err());
    }

    #[test]
    fn dump_is_deterministic() {
        let m = model("agents a,b; actions x,y; {a,b}[x]({a,b}O(y)); {b,a}O(x);");
        let d1 = explore(&m).dump();
        let d2 = explore(&m).dump();
        assert_eq!(d1, d2);
        // three free events: every subset is reachable
        assert!(d1.starts_with("states 8\ntransitions 12\n"), "{d1}");
    }
}
