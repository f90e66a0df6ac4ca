//! Toolchain for multilateral contracts written in the Relativized
//! Contract Language: parsing, normative conflict detection, lowering to a
//! state machine, Solidity emission and in-process simulation.

pub mod ast;
pub mod checker;
pub mod cli;
pub mod codegen;
pub mod parser;
pub mod pretty;
pub mod semantics;
pub mod simulator;
pub mod validate;

pub use ast::{ActionId, AgentId, AgentPair, Annotation, Clause, ClauseKind, Contract, Event, Span};
pub use checker::{brute_force_oracle, check, CheckReport, Conflict};
pub use codegen::{emit_solidity, lower, LowerError, LowerOptions, MachineIR};
pub use parser::{parse_contract, tokenize, ParseError};
pub use pretty::pretty_print;
pub use simulator::{call, deploy, run_script, World};
pub use semantics::{enumerate_reachable, initial_state, Lts, Model, Norm, NormKind, NormState};
pub use validate::{validate, Severity, ValidationIssue};
