//! The `rclc` command line: `check`, `gen`, `sim`, `dump-ast`, `dump-lts`.
//!
//! Exit codes: 0 no conflicts, 1 conflicts found, 2 parse, validation,
//! lowering or I/O errors. `RCLC_COLOR=1` colours diagnostics.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ast::Contract;
use crate::checker::check_model;
use crate::codegen::{emit_solidity, lower, LowerError, LowerOptions};
use crate::parser::parse_contract;
use crate::semantics::{explore, Model};
use crate::simulator::{deploy_with_balance, parse_script, render_trace, run_script, DEFAULT_BALANCE};
use crate::validate::{validate, Severity};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFLICTS: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "rclc", version, about = "Relativized Contract Language toolchain")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Contract source (`.rcl`).
    pub input: PathBuf,
    /// Write the result here instead of standard output.
    #[arg(short = 'o', long = "output")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LowerFlags {
    /// Lower the contract even when the checker reports conflicts.
    #[arg(long)]
    pub allow_conflicts: bool,
    /// Honour `internal` annotations (private functions called from their guard).
    #[arg(long)]
    pub fidelity: bool,
}

impl LowerFlags {
    fn options(&self) -> LowerOptions {
        LowerOptions { allow_conflicts: self.allow_conflicts, fidelity: self.fidelity }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search the contract for normative conflicts.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Emit Solidity for a conflict-free contract.
    Gen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        lower: LowerFlags,
    },
    /// Run a call script against the lowered machine and print the trace.
    Sim {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        lower: LowerFlags,
        /// One call per line: `<account> <function> [value=<n>]`.
        #[arg(long)]
        script: PathBuf,
        /// Bind an agent to an account (default: the agent's role name).
        #[arg(long = "bind", value_name = "AGENT=ACCOUNT")]
        bind: Vec<String>,
        /// Value of an amount parameter.
        #[arg(long = "amount", value_name = "PARAM=N")]
        amount: Vec<String>,
        /// Starting balance of every account.
        #[arg(long, default_value_t = DEFAULT_BALANCE)]
        balance: u128,
    },
    /// Print the parsed contract.
    DumpAst {
        #[command(flatten)]
        common: Common,
        /// `text` prints canonical source, `json` the syntax tree.
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Print the reachable transition system.
    DumpLts {
        #[command(flatten)]
        common: Common,
        /// Graphviz output instead of the text dump.
        #[arg(long)]
        dot: bool,
    },
}

struct Diag {
    color: bool,
}

impl Diag {
    fn from_env() -> Self {
        Diag { color: std::env::var("RCLC_COLOR").map(|v| v == "1").unwrap_or(false) }
    }

    fn label(&self, sev: Severity) -> String {
        let (text, code) = match sev {
            Severity::Error => ("error", "31"),
            Severity::Warning => ("warning", "33"),
        };
        if self.color {
            format!("\x1b[1;{code}m{text}\x1b[0m")
        } else {
            text.to_string()
        }
    }

    fn error(&self, msg: &str) {
        eprintln!("{}: {msg}", self.label(Severity::Error));
    }

    /// Reports an already formatted `file:line:col: error: ...` line.
    fn located(&self, sev: Severity, file: &str, line: u32, col: u32, msg: &str) {
        eprintln!("{file}:{line}:{col}: {}: {msg}", self.label(sev));
    }
}

/// Loads, parses and validates; on failure reports and returns `Err`.
fn load(diag: &Diag, path: &Path) -> Result<(String, Contract), ()> {
    let file = path.display().to_string();
    let source = match std::fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            diag.error(&format!("{file}: no such file"));
            return Err(());
        }
        Err(e) => {
            diag.error(&format!("{file}: {e}"));
            return Err(());
        }
    };
    let contract = match parse_contract(&source) {
        Ok(c) => c,
        Err(errors) => {
            for e in errors {
                let msg = format!("expected {}, found {}", e.expected, e.found);
                diag.located(Severity::Error, &file, e.span.start_line, e.span.start_col, &msg);
            }
            return Err(());
        }
    };
    let issues = validate(&contract);
    for i in &issues {
        let msg = format!("{} ({})", i.message, i.path);
        diag.located(i.severity, &file, i.span.start_line, i.span.start_col, &msg);
    }
    if issues.iter().any(|i| i.is_error()) {
        return Err(());
    }
    Ok((file, contract))
}

fn write_out(diag: &Diag, output: &Option<PathBuf>, text: &str) -> Result<(), ()> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| diag.error(&format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| diag.error(&e.to_string()))
        }
    }
}

fn key_values<T: std::str::FromStr>(diag: &Diag, items: &[String], what: &str) -> Result<BTreeMap<String, T>, ()> {
    let mut out = BTreeMap::new();
    for item in items {
        let parsed = item.split_once('=').and_then(|(k, v)| v.parse::<T>().ok().map(|v| (k.to_string(), v)));
        match parsed {
            Some((k, v)) => {
                out.insert(k, v);
            }
            None => {
                diag.error(&format!("invalid {what} `{item}`"));
                return Err(());
            }
        }
    }
    Ok(out)
}

fn lower_or_report(diag: &Diag, file: &str, contract: &Contract, options: LowerOptions) -> Result<crate::codegen::MachineIR, i32> {
    match lower(contract, &options) {
        Ok(ir) => {
            for w in &ir.warnings {
                eprintln!("{file}: {}: {w}", diag.label(Severity::Warning));
            }
            Ok(ir)
        }
        Err(LowerError::Conflicts(_)) => {
            let model = Model::new(contract).expect("validated contract");
            eprint!("{}", check_model(&model).to_text(file));
            diag.error(&format!("{file}: refusing to lower a conflicted contract (use --allow-conflicts)"));
            Err(EXIT_CONFLICTS)
        }
        Err(e) => {
            diag.error(&format!("{file}: {e}"));
            Err(EXIT_ERROR)
        }
    }
}

fn execute(cli: Cli) -> i32 {
    let diag = Diag::from_env();
    match cli.command {
        Command::Check { common, format } => {
            let Ok((file, contract)) = load(&diag, &common.input) else { return EXIT_ERROR };
            let model = Model::new(&contract).expect("validated contract");
            let report = check_model(&model);
            let text = match format {
                Format::Text => report.to_text(&file),
                Format::Json => {
                    let mut s = serde_json::to_string_pretty(&report.to_json(&file)).expect("json");
                    s.push('\n');
                    s
                }
            };
            if write_out(&diag, &common.output, &text).is_err() {
                return EXIT_ERROR;
            }
            if report.is_conflict_free() {
                EXIT_OK
            } else {
                EXIT_CONFLICTS
            }
        }
        Command::Gen { common, lower } => {
            let Ok((file, contract)) = load(&diag, &common.input) else { return EXIT_ERROR };
            let ir = match lower_or_report(&diag, &file, &contract, lower.options()) {
                Ok(ir) => ir,
                Err(code) => return code,
            };
            match write_out(&diag, &common.output, &emit_solidity(&ir)) {
                Ok(()) => EXIT_OK,
                Err(()) => EXIT_ERROR,
            }
        }
        Command::Sim { common, lower, script, bind, amount, balance } => {
            let Ok((file, contract)) = load(&diag, &common.input) else { return EXIT_ERROR };
            let ir = match lower_or_report(&diag, &file, &contract, lower.options()) {
                Ok(ir) => ir,
                Err(code) => return code,
            };
            let Ok(binds) = key_values::<String>(&diag, &bind, "binding") else { return EXIT_ERROR };
            let Ok(amounts) = key_values::<u128>(&diag, &amount, "amount") else { return EXIT_ERROR };
            let mut bindings: BTreeMap<String, String> =
                ir.roles.iter().map(|r| (r.agent.0.clone(), r.name.clone())).collect();
            bindings.extend(binds);
            let script_text = match std::fs::read_to_string(&script) {
                Ok(s) => s,
                Err(_) => {
                    diag.error(&format!("{}: no such file", script.display()));
                    return EXIT_ERROR;
                }
            };
            let result = parse_script(&script_text)
                .and_then(|calls| Ok((deploy_with_balance(&ir, &bindings, &amounts, balance)?, calls)))
                .and_then(|(world, calls)| run_script(&ir, world, &calls));
            match result {
                Ok((world, records)) => match write_out(&diag, &common.output, &render_trace(&ir, &world, &records)) {
                    Ok(()) => EXIT_OK,
                    Err(()) => EXIT_ERROR,
                },
                Err(e) => {
                    diag.error(&format!("{}: {e}", script.display()));
                    EXIT_ERROR
                }
            }
        }
        Command::DumpAst { common, format } => {
            let Ok((_, contract)) = load(&diag, &common.input) else { return EXIT_ERROR };
            let text = match format {
                Format::Text => crate::pretty::pretty_print(&contract),
                Format::Json => serde_json::to_string_pretty(&contract).expect("json") + "\n",
            };
            match write_out(&diag, &common.output, &text) {
                Ok(()) => EXIT_OK,
                Err(()) => EXIT_ERROR,
            }
        }
        Command::DumpLts { common, dot } => {
            let Ok((_, contract)) = load(&diag, &common.input) else { return EXIT_ERROR };
            let lts = explore(&Model::new(&contract).expect("validated contract"));
            let text = if dot { lts.to_dot() } else { lts.dump() };
            match write_out(&diag, &common.output, &text) {
                Ok(()) => EXIT_OK,
                Err(()) => EXIT_ERROR,
            }
        }
    }
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
