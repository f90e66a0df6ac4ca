//! Abstract syntax for relativized contracts.
//!
//! Every clause is annotated with the agent pair `{performer,counterparty}`
//! it binds. Equality on clauses and contracts is structural: source spans
//! are ignored and conjunctions compare by their flattened conjunct lists,
//! so `(a & b) & c` equals `a & (b & c)`.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A 1-based source region. `Span::default()` (all zeros) marks a node
/// that was built in memory rather than parsed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start_line: u32,
    pub start_col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl Span {
    pub fn new(start_line: u32, start_col: u32, end_line: u32, end_col: u32) -> Self {
        Span { start_line, start_col, end_line, end_col }
    }

    pub fn is_synthetic(&self) -> bool {
        self.start_line == 0
    }

    /// Smallest span covering both `self` and `other`.
    pub fn to(self, other: Span) -> Span {
        Span {
            start_line: self.start_line,
            start_col: self.start_col,
            end_line: other.end_line,
            end_col: other.end_col,
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start_line, self.start_col)
    }
}

/// Lexical rule shared by agents, actions and annotation names.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> Self {
        AgentId(name.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl ActionId {
    pub fn new(name: impl Into<String>) -> Self {
        ActionId(name.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One-to-one relativization: `performer` acts towards `counterparty`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentPair {
    pub performer: AgentId,
    pub counterparty: AgentId,
}

impl AgentPair {
    pub fn new(performer: impl Into<String>, counterparty: impl Into<String>) -> Self {
        AgentPair {
            performer: AgentId(performer.into()),
            counterparty: AgentId(counterparty.into()),
        }
    }
}

impl fmt::Display for AgentPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{},{}}}", self.performer, self.counterparty)
    }
}

/// A relativized action occurrence `{x,y} a`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Event {
    pub pair: AgentPair,
    pub action: ActionId,
}

impl Event {
    pub fn new(performer: &str, counterparty: &str, action: &str) -> Self {
        Event {
            pair: AgentPair::new(performer, counterparty),
            action: ActionId::new(action),
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.pair, self.action)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Clause {
    pub kind: ClauseKind,
    pub span: Span,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ClauseKind {
    /// `{x,y} O(a)`
    Obligation(Event),
    /// `{x,y} F(a)`
    Prohibition(Event),
    /// `{x,y} P(a)`; parsed and printed, inert in the semantics.
    Permission(Event),
    /// `{x,y} [a](C)`
    Box { guard: Event, body: Box<Clause> },
    /// `{x,y} [!a]*(C)`, or `{x,y} [a]*(C)` when `positive_star` is set.
    IterBoxNeg { guard: Event, body: Box<Clause>, positive_star: bool },
    /// `C1 & C2`, right-nested by the parser.
    And(Box<Clause>, Box<Clause>),
}

impl Clause {
    pub fn new(kind: ClauseKind) -> Self {
        Clause { kind, span: Span::default() }
    }

    pub fn obligation(e: Event) -> Self {
        Clause::new(ClauseKind::Obligation(e))
    }

    pub fn prohibition(e: Event) -> Self {
        Clause::new(ClauseKind::Prohibition(e))
    }

    pub fn permission(e: Event) -> Self {
        Clause::new(ClauseKind::Permission(e))
    }

    pub fn boxed(guard: Event, body: Clause) -> Self {
        Clause::new(ClauseKind::Box { guard, body: Box::new(body) })
    }

    pub fn iter_neg(guard: Event, body: Clause) -> Self {
        Clause::new(ClauseKind::IterBoxNeg { guard, body: Box::new(body), positive_star: false })
    }

    pub fn iter_pos(guard: Event, body: Clause) -> Self {
        Clause::new(ClauseKind::IterBoxNeg { guard, body: Box::new(body), positive_star: true })
    }

    /// Right-nested conjunction of `items`. Panics on an empty list.
    pub fn and_all(mut items: Vec<Clause>) -> Self {
        let mut acc = items.pop().expect("and_all needs at least one clause");
        while let Some(prev) = items.pop() {
            acc = Clause::new(ClauseKind::And(Box::new(prev), Box::new(acc)));
        }
        acc
    }

    /// Conjuncts in left-to-right order, regardless of nesting shape.
    pub fn conjuncts(&self) -> Vec<&Clause> {
        let mut out = Vec::new();
        fn go<'a>(c: &'a Clause, out: &mut Vec<&'a Clause>) {
            match &c.kind {
                ClauseKind::And(l, r) => {
                    go(l, out);
                    go(r, out);
                }
                _ => out.push(c),
            }
        }
        go(self, &mut out);
        out
    }

    /// The event a non-conjunction node refers to.
    pub fn event(&self) -> Option<&Event> {
        match &self.kind {
            ClauseKind::Obligation(e) | ClauseKind::Prohibition(e) | ClauseKind::Permission(e) => Some(e),
            ClauseKind::Box { guard, .. } | ClauseKind::IterBoxNeg { guard, .. } => Some(guard),
            ClauseKind::And(..) => None,
        }
    }

    /// Pre-order walk over every node, conjunctions included.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Clause)) {
        f(self);
        match &self.kind {
            ClauseKind::Box { body, .. } | ClauseKind::IterBoxNeg { body, .. } => body.walk(f),
            ClauseKind::And(l, r) => {
                l.walk(f);
                r.walk(f);
            }
            _ => {}
        }
    }
}

impl PartialEq for Clause {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = (self.conjuncts(), other.conjuncts());
        if a.len() != b.len() {
            return false;
        }
        a.iter().zip(b.iter()).all(|(x, y)| match (&x.kind, &y.kind) {
            (ClauseKind::Obligation(p), ClauseKind::Obligation(q))
            | (ClauseKind::Prohibition(p), ClauseKind::Prohibition(q))
            | (ClauseKind::Permission(p), ClauseKind::Permission(q)) => p == q,
            (ClauseKind::Box { guard: g1, body: b1 }, ClauseKind::Box { guard: g2, body: b2 }) => {
                g1 == g2 && b1 == b2
            }
            (
                ClauseKind::IterBoxNeg { guard: g1, body: b1, positive_star: p1 },
                ClauseKind::IterBoxNeg { guard: g2, body: b2, positive_star: p2 },
            ) => g1 == g2 && p1 == p2 && b1 == b2,
            _ => false,
        })
    }
}

impl Eq for Clause {}

/// Header declarations that steer code generation. None of them affect
/// the normative semantics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Annotation {
    /// `contract Name;`
    ContractName(String),
    /// `invalid_state "msg";`
    InvalidStateMessage(String),
    /// `role b buyer "Only the buyer";`
    Role { agent: AgentId, name: String, message: Option<String> },
    /// `state {b,s} buyProduct ProductBought;`
    State { event: Event, name: String },
    /// `payable {b,k} payProduct = paymentAmount "Wrong amount";`
    Payable { event: Event, param: String, message: Option<String> },
    /// `nonpayable {x,y} a;`
    NonPayable { event: Event },
    /// `function {k,s} payProduct payProductSeller;`
    Function { event: Event, name: String },
    /// `flag {s,c} sendProduct productSent "already" "missing";`
    Flag { event: Event, name: String, set_message: Option<String>, require_message: Option<String> },
    /// `rule {s,c} payShippingCosts "message";` keyed by the rule's release event.
    Rule { event: Event, message: String },
    /// `message {b,s} buyProduct "text";`
    Message { event: Event, text: String },
    /// `internal {k,c} payShippingCosts;`
    Internal { event: Event },
}

impl Annotation {
    pub fn event(&self) -> Option<&Event> {
        match self {
            Annotation::State { event, .. }
            | Annotation::Payable { event, .. }
            | Annotation::NonPayable { event }
            | Annotation::Function { event, .. }
            | Annotation::Flag { event, .. }
            | Annotation::Rule { event, .. }
            | Annotation::Message { event, .. }
            | Annotation::Internal { event } => Some(event),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Contract {
    pub agents: Vec<AgentId>,
    pub actions: Vec<ActionId>,
    pub annotations: Vec<Annotation>,
    pub clauses: Vec<Clause>,
}

impl PartialEq for Contract {
    fn eq(&self, other: &Self) -> bool {
        self.agents == other.agents
            && self.actions == other.actions
            && self.annotations == other.annotations
            && self.clauses == other.clauses
    }
}

impl Eq for Contract {}

impl Contract {
    pub fn new(agents: &[&str], actions: &[&str], clauses: Vec<Clause>) -> Self {
        Contract {
            agents: agents.iter().map(|a| AgentId::new(*a)).collect(),
            actions: actions.iter().map(|a| ActionId::new(*a)).collect(),
            annotations: Vec::new(),
            clauses,
        }
    }

    pub fn has_agent(&self, a: &AgentId) -> bool {
        self.agents.contains(a)
    }

    pub fn has_action(&self, a: &ActionId) -> bool {
        self.actions.contains(a)
    }

    /// Line of the first top-level clause; message numbering counts from it.
    pub fn body_start_line(&self) -> u32 {
        self.clauses.first().map(|c| c.span.start_line).unwrap_or(0)
    }
}
