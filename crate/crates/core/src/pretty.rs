//! Canonical text rendering; `parse_contract(pretty_print(c)) == c`.

use std::fmt::Write;

use crate::ast::{Annotation, Clause, ClauseKind, Contract, Event};

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

fn event(e: &Event) -> String {
    format!("{} {}", e.pair, e.action)
}

pub fn annotation(a: &Annotation) -> String {
    let opt = |m: &Option<String>| m.as_deref().map(|s| format!(" {}", quote(s))).unwrap_or_default();
    match a {
        Annotation::ContractName(n) => format!("contract {n};"),
        Annotation::InvalidStateMessage(m) => format!("invalid_state {};", quote(m)),
        Annotation::Role { agent, name, message } => format!("role {agent} {name}{};", opt(message)),
        Annotation::State { event: e, name } => format!("state {} {name};", event(e)),
        Annotation::Payable { event: e, param, message } => {
            format!("payable {} = {param}{};", event(e), opt(message))
        }
        Annotation::NonPayable { event: e } => format!("nonpayable {};", event(e)),
        Annotation::Function { event: e, name } => format!("function {} {name};", event(e)),
        Annotation::Flag { event: e, name, set_message, require_message } => {
            format!("flag {} {name}{}{};", event(e), opt(set_message), opt(require_message))
        }
        Annotation::Rule { event: e, message } => format!("rule {} {};", event(e), quote(message)),
        Annotation::Message { event: e, text } => format!("message {} {};", event(e), quote(text)),
        Annotation::Internal { event: e } => format!("internal {};", event(e)),
    }
}

fn is_leaf(c: &Clause) -> bool {
    matches!(c.kind, ClauseKind::Obligation(_) | ClauseKind::Prohibition(_) | ClauseKind::Permission(_))
}

fn clause(c: &Clause, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match &c.kind {
        ClauseKind::Obligation(e) => write!(out, "{} O({})", e.pair, e.action).unwrap(),
        ClauseKind::Prohibition(e) => write!(out, "{} F({})", e.pair, e.action).unwrap(),
        ClauseKind::Permission(e) => write!(out, "{} P({})", e.pair, e.action).unwrap(),
        ClauseKind::Box { guard, body } => {
            write!(out, "{} [{}]", guard.pair, guard.action).unwrap();
            body_block(body, indent, &pad, out);
        }
        ClauseKind::IterBoxNeg { guard, body, positive_star } => {
            let bang = if *positive_star { "" } else { "!" };
            write!(out, "{} [{bang}{}]*", guard.pair, guard.action).unwrap();
            body_block(body, indent, &pad, out);
        }
        ClauseKind::And(..) => {
            let parts = c.conjuncts();
            for (i, part) in parts.iter().enumerate() {
                if i > 0 {
                    write!(out, " &\n{pad}").unwrap();
                }
                clause(part, indent, out);
            }
        }
    }
}

fn body_block(body: &Clause, indent: usize, pad: &str, out: &mut String) {
    if is_leaf(body) {
        out.push('(');
        clause(body, indent, out);
        out.push(')');
    } else {
        write!(out, "(\n{pad}  ").unwrap();
        clause(body, indent + 1, out);
        write!(out, "\n{pad})").unwrap();
    }
}

pub fn clause_text(c: &Clause) -> String {
    let mut out = String::new();
    clause(c, 0, &mut out);
    out
}

pub fn pretty_print(contract: &Contract) -> String {
    let mut out = String::new();
    let names = |v: Vec<&str>| v.join(", ");
    writeln!(out, "agents {};", names(contract.agents.iter().map(|a| a.as_str()).collect())).unwrap();
    writeln!(out, "actions {};", names(contract.actions.iter().map(|a| a.as_str()).collect())).unwrap();
    if !contract.annotations.is_empty() {
        out.push('\n');
        for a in &contract.annotations {
            writeln!(out, "{}", annotation(a)).unwrap();
        }
    }
    if !contract.clauses.is_empty() {
        out.push('\n');
        for c in &contract.clauses {
            clause(c, 0, &mut out);
            out.push_str(";\n");
        }
    }
    out
}
