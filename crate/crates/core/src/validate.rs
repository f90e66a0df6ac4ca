//! Structural checks over a parsed contract.
//!
//! Issues are data: errors make the contract unusable for analysis,
//! warnings flag suspicious but well-formed text (naming mismatches,
//! positive-star guards, release events nobody performs).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::ast::{is_identifier, Annotation, Clause, ClauseKind, Contract, Event, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    /// Node path such as `clauses[0].body.and[1]`.
    pub path: String,
    pub span: Span,
    pub message: String,
}

impl ValidationIssue {
    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}: {}: {} ({})", self.span, sev, self.message, self.path)
    }
}

pub fn has_errors(issues: &[ValidationIssue]) -> bool {
    issues.iter().any(ValidationIssue::is_error)
}

struct Validator<'a> {
    contract: &'a Contract,
    issues: Vec<ValidationIssue>,
}

impl<'a> Validator<'a> {
    fn push(&mut self, severity: Severity, path: String, span: Span, message: String) {
        self.issues.push(ValidationIssue { severity, path, span, message });
    }

    fn check_event(&mut self, e: &Event, path: &str, span: Span) {
        let c = self.contract;
        for agent in [&e.pair.performer, &e.pair.counterparty] {
            if !c.has_agent(agent) {
                self.push(Severity::Error, path.to_string(), span, format!("undeclared agent `{agent}`"));
            }
        }
        if e.pair.performer == e.pair.counterparty {
            self.push(
                Severity::Error,
                path.to_string(),
                span,
                format!("performer equals counterparty in {}", e.pair),
            );
        }
        if !c.has_action(&e.action) {
            self.push(Severity::Error, path.to_string(), span, format!("undeclared action `{}`", e.action));
        }
    }

    fn clause(&mut self, clause: &Clause, path: String) {
        if let ClauseKind::And(..) = clause.kind {
            for (i, part) in clause.conjuncts().into_iter().enumerate() {
                self.clause(part, format!("{path}.and[{i}]"));
            }
            return;
        }
        if let Some(e) = clause.event() {
            self.check_event(e, &path, clause.span);
        }
        match &clause.kind {
            ClauseKind::Box { body, .. } => self.clause(body, format!("{path}.body")),
            ClauseKind::IterBoxNeg { guard, body, positive_star } => {
                if *positive_star {
                    self.push(
                        Severity::Warning,
                        path.clone(),
                        clause.span,
                        format!(
                            "positive-star guard `[{}]*`: the body comes into force once the action happens; \
                             did you mean `[!{}]*`?",
                            guard.action, guard.action
                        ),
                    );
                }
                self.clause(body, format!("{path}.body"));
            }
            _ => {}
        }
    }
}

#[derive(Default)]
struct Usage {
    /// Events some party can perform under the contract: obligation and
    /// permission subjects, box and positive-star guards.
    performed: BTreeSet<Event>,
    performed_actions: BTreeSet<String>,
    used_actions: BTreeSet<String>,
    /// `[!a]*` release guards with the span and path of their clause.
    release_guards: Vec<(Event, Span, String)>,
}

fn collect_usage(clause: &Clause, path: String, usage: &mut Usage) {
    if let ClauseKind::And(..) = clause.kind {
        for (i, part) in clause.conjuncts().into_iter().enumerate() {
            collect_usage(part, format!("{path}.and[{i}]"), usage);
        }
        return;
    }
    if let Some(e) = clause.event() {
        usage.used_actions.insert(e.action.0.clone());
    }
    match &clause.kind {
        ClauseKind::Obligation(e) | ClauseKind::Permission(e) => {
            usage.performed.insert(e.clone());
            usage.performed_actions.insert(e.action.0.clone());
        }
        ClauseKind::Prohibition(_) | ClauseKind::And(..) => {}
        ClauseKind::Box { guard, body } => {
            usage.performed.insert(guard.clone());
            usage.performed_actions.insert(guard.action.0.clone());
            collect_usage(body, format!("{path}.body"), usage);
        }
        ClauseKind::IterBoxNeg { guard, body, positive_star } => {
            if *positive_star {
                usage.performed.insert(guard.clone());
                usage.performed_actions.insert(guard.action.0.clone());
            } else {
                usage.release_guards.push((guard.clone(), clause.span, path.clone()));
            }
            collect_usage(body, format!("{path}.body"), usage);
        }
    }
}

/// Checks identifier resolution, pair well-formedness and header
/// consistency. Returns an empty list only for a fully clean contract.
pub fn validate(contract: &Contract) -> Vec<ValidationIssue> {
    let mut v = Validator { contract, issues: Vec::new() };

    if contract.agents.len() < 2 {
        v.push(Severity::Error, "agents".into(), Span::default(), "a contract needs at least two agents".into());
    }
    if contract.actions.is_empty() {
        v.push(Severity::Error, "actions".into(), Span::default(), "a contract needs at least one action".into());
    }
    let mut seen = BTreeSet::new();
    for (i, a) in contract.agents.iter().enumerate() {
        if !is_identifier(a.as_str()) {
            v.push(Severity::Error, format!("agents[{i}]"), Span::default(), format!("invalid agent name `{a}`"));
        }
        if !seen.insert(a.as_str()) {
            v.push(Severity::Error, format!("agents[{i}]"), Span::default(), format!("duplicate agent `{a}`"));
        }
    }
    let mut seen = BTreeSet::new();
    for (i, a) in contract.actions.iter().enumerate() {
        if !is_identifier(a.as_str()) {
            v.push(Severity::Error, format!("actions[{i}]"), Span::default(), format!("invalid action name `{a}`"));
        }
        if !seen.insert(a.as_str()) {
            v.push(Severity::Error, format!("actions[{i}]"), Span::default(), format!("duplicate action `{a}`"));
        }
    }

    for (i, clause) in contract.clauses.iter().enumerate() {
        v.clause(clause, format!("clauses[{i}]"));
    }

    annotations(&mut v);

    let mut usage = Usage::default();
    for (i, clause) in contract.clauses.iter().enumerate() {
        collect_usage(clause, format!("clauses[{i}]"), &mut usage);
    }
    let mut warned_actions = BTreeSet::new();
    for (guard, span, path) in &usage.release_guards {
        if !contract.has_action(&guard.action) {
            continue;
        }
        if !usage.performed_actions.contains(guard.action.as_str()) {
            if warned_actions.insert(guard.action.0.clone()) {
                v.push(
                    Severity::Warning,
                    path.clone(),
                    *span,
                    format!(
                        "action `{}` is referenced but never the subject of any box or obligation",
                        guard.action
                    ),
                );
            }
        } else if !usage.performed.contains(guard) {
            v.push(
                Severity::Warning,
                path.clone(),
                *span,
                format!(
                    "release event {guard} is never performed by any clause; the norms it guards stay in force"
                ),
            );
        }
    }
    for (i, a) in contract.actions.iter().enumerate() {
        if !usage.used_actions.contains(a.as_str()) {
            v.push(Severity::Warning, format!("actions[{i}]"), Span::default(), format!("action `{a}` is declared but never used"));
        }
    }

    v.issues
}

fn annotations(v: &mut Validator<'_>) {
    let contract = v.contract;
    // (kind, key) -> first path, to detect conflicting duplicates.
    let mut keys: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut role_names = BTreeSet::new();
    for (i, ann) in contract.annotations.iter().enumerate() {
        let path = format!("annotations[{i}]");
        let names: Vec<(&str, &str)> = match ann {
            Annotation::Role { name, .. } => vec![("role name", name)],
            Annotation::State { name, .. } => vec![("state name", name)],
            Annotation::Payable { param, .. } => vec![("parameter name", param)],
            Annotation::Function { name, .. } => vec![("function name", name)],
            Annotation::Flag { name, .. } => vec![("flag name", name)],
            _ => Vec::new(),
        };
        for (what, name) in names {
            if !is_identifier(name) {
                v.push(Severity::Error, path.clone(), Span::default(), format!("invalid {what} `{name}`"));
            }
        }
        let texts: Vec<&String> = match ann {
            Annotation::InvalidStateMessage(m) => vec![m],
            Annotation::Role { message, .. } | Annotation::Payable { message, .. } => message.iter().collect(),
            Annotation::Flag { set_message, require_message, .. } => {
                set_message.iter().chain(require_message.iter()).collect()
            }
            Annotation::Rule { message, .. } => vec![message],
            Annotation::Message { text, .. } => vec![text],
            _ => Vec::new(),
        };
        if texts.iter().any(|t| t.contains(['\n', '\r'])) {
            v.push(Severity::Error, path.clone(), Span::default(), "messages cannot span lines".into());
        }
        if let Annotation::Flag { set_message: None, require_message: Some(_), .. } = ann {
            v.push(
                Severity::Error,
                path.clone(),
                Span::default(),
                "a flag require message needs a set message before it".into(),
            );
        }
        let (kind, key) = match ann {
            Annotation::ContractName(name) => {
                if !is_identifier(name) {
                    v.push(Severity::Error, path.clone(), Span::default(), format!("invalid contract name `{name}`"));
                }
                ("contract", String::new())
            }
            Annotation::InvalidStateMessage(_) => ("invalid_state", String::new()),
            Annotation::Role { agent, name, .. } => {
                if !contract.has_agent(agent) {
                    v.push(Severity::Error, path.clone(), Span::default(), format!("role for undeclared agent `{agent}`"));
                }
                if !role_names.insert(name.clone()) {
                    v.push(Severity::Error, path.clone(), Span::default(), format!("role name `{name}` used twice"));
                }
                ("role", agent.0.clone())
            }
            Annotation::State { event, .. } => ("state", event.to_string()),
            Annotation::Payable { event, .. } | Annotation::NonPayable { event } => ("payable", event.to_string()),
            Annotation::Function { event, .. } => ("function", event.to_string()),
            Annotation::Flag { event, .. } => ("flag", event.to_string()),
            Annotation::Rule { event, .. } => ("rule", event.to_string()),
            Annotation::Message { event, .. } => ("message", event.to_string()),
            Annotation::Internal { event } => ("internal", event.to_string()),
        };
        if let Some(e) = ann.event() {
            v.check_event(e, &path, Span::default());
        }
        if let Some(first) = keys.get(&(kind.to_string(), key.clone())) {
            v.push(
                Severity::Error,
                path.clone(),
                Span::default(),
                format!("duplicate `{kind}` annotation (first at {first})"),
            );
        } else {
            keys.insert((kind.to_string(), key), path);
        }
    }
}
