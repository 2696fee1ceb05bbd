//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::effects::{EffectPolicy, EffectSet, Mode, PolicyError};
use crate::elaborate::capture;
use crate::eval::{run as eval_run, DEFAULT_FUEL};
use crate::harness::contexts::{ContextSpec, Grammar, DEFAULT_CONTEXT_BOUND};
use crate::harness::equiv::{check_l_equiv_with, check_state_exn_equiv_with, check_ts_equiv_with, contexts_for, Verdict};
use crate::harness::suites::{coproduct_demo, run_suite, SuiteConfig, SUITES};
use crate::labels::{two_point, Label, LabelLattice, LatticeError};
use crate::syntax::{parse_expr, parse_program, ParseError, Program, Type};
use crate::typecheck::{
    check_effect, check_pc, check_pure, infer_effect, pc_program_to_effect, pc_to_effect_type, validate_sigma, Ctx, TypeError,
    TypeErrorKind,
};

#[derive(Debug, Parser)]
#[command(name = "ifcfx", version, about = "Check, run and translate programs in the labeled calculi")]
pub struct Cli {
    /// Lattice description file (default: two-point Pub ⊑ Sec).
    #[arg(long, global = true, value_name = "FILE")]
    pub lattice: Option<PathBuf>,
    /// Policy settings such as lState=Pub,lExn=Sec; override `policy` lines in program files.
    #[arg(long, global = true, value_name = "KEY=VAL", value_delimiter = ',')]
    pub policy: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemArg {
    Pure,
    Pc,
    Effect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EquivDef {
    #[value(name = "2.1")]
    Pure,
    #[value(name = "3.2")]
    StateExn,
    #[value(name = "4.1")]
    TerminationSensitive,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Type-check a program.
    Check {
        #[arg(long, value_enum)]
        system: SystemArg,
        /// Program counter for the pc system (default: a least label).
        #[arg(long)]
        pc: Option<String>,
        /// Effect bound for the effect system, e.g. {R,W}; inferred when absent.
        #[arg(long)]
        effect: Option<String>,
        file: PathBuf,
    },
    /// Run a program.
    Eval {
        /// Initial state value.
        #[arg(long)]
        state: Option<String>,
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
        /// Value for a free variable, as NAME=VALUE.
        #[arg(long = "bind", value_name = "NAME=VALUE")]
        binds: Vec<String>,
        file: PathBuf,
    },
    /// Print the monadic translation of a program with its type and effect.
    Translate { file: PathBuf },
    /// Bounded equivalence check of two closed programs.
    Equiv {
        #[arg(long, value_enum)]
        def: EquivDef,
        #[arg(long)]
        attacker: String,
        #[arg(long, default_value_t = DEFAULT_CONTEXT_BOUND)]
        bound: usize,
        /// Fuel for each run.
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
        file1: PathBuf,
        file2: PathBuf,
    },
    /// Run a verification suite.
    Verify {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Built-in demonstrations.
    Demo {
        #[arg(value_enum)]
        which: DemoArg,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoArg {
    Coproduct,
}

/// Failures that end a command with exit code 2.
#[derive(Debug, Error)]
pub enum UsageError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error("lattice: {0}")]
    Lattice(#[from] LatticeError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("{0}")]
    Other(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Parse `args` (including the program name) and run; results go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn read(path: &Path) -> Result<String, UsageError> {
    std::fs::read_to_string(path).map_err(|source| UsageError::Io { path: path.display().to_string(), source })
}

fn load_lattice(cli: &Cli) -> Result<Arc<LabelLattice>, UsageError> {
    Ok(Arc::new(match &cli.lattice {
        Some(p) => LabelLattice::parse(&read(p)?)?,
        None => two_point(),
    }))
}

fn load_program(lat: &LabelLattice, path: &Path) -> Result<Program, UsageError> {
    parse_program(&read(path)?, Some(lat)).map_err(|source| UsageError::Parse { path: path.display().to_string(), source })
}

/// File settings first, command-line settings last so they win. A global-flow policy with
/// `lExn ⋢ lState` rejects the program: its state type cannot protect `lExn`.
fn program_policy(cli: &Cli, lat: &Arc<LabelLattice>, prog: &Program) -> Result<Result<EffectPolicy, TypeError>, UsageError> {
    let settings = prog.policy.iter().chain(&cli.policy).map(String::as_str);
    match EffectPolicy::from_settings(lat.clone(), prog.mode, settings) {
        Ok(p) => Ok(Ok(p)),
        Err(PolicyError::ExnAboveState { exn, state }) => Ok(Err(TypeError {
            kind: TypeErrorKind::ProtectionFail,
            location: prog.sigma.to_string(),
            details: format!("lExn = {exn} is not protected by the state type, since lExn ⋢ lState = {state}"),
        })),
        Err(e) => Err(e.into()),
    }
}

macro_rules! policy_or_reject {
    ($out:expr, $r:expr) => {
        match $r {
            Ok(p) => p,
            Err(e) => {
                let _ = writeln!($out, "rejected: {e}");
                return Ok(EXIT_FAIL);
            }
        }
    };
}

fn label(lat: &LabelLattice, s: &str) -> Result<Label, UsageError> {
    let l = Label::new(s);
    if lat.contains(&l) {
        Ok(l)
    } else {
        Err(UsageError::Other(format!("unknown label `{s}`")))
    }
}

/// The program in the type-and-effect system; pc annotations are translated, programs already
/// written with effect annotations are used as they are.
fn effect_form(policy: &EffectPolicy, prog: &Program) -> (Ctx, crate::syntax::Expr) {
    let ctx: Result<Vec<_>, TypeError> =
        prog.context.iter().map(|(x, t)| Ok((x.clone(), pc_to_effect_type(policy, t)?))).collect();
    match (ctx, pc_program_to_effect(policy, &prog.body)) {
        (Ok(ctx), Ok(body)) => (Ctx::from_pairs(&ctx), body),
        _ => (Ctx::from_pairs(&prog.context), prog.body.clone()),
    }
}

fn state_checked(policy: &EffectPolicy, prog: &Program) -> Result<(), TypeError> {
    if policy.mode() == Mode::StateExn {
        validate_sigma(policy, &prog.sigma)?;
    }
    Ok(())
}

fn report_type(out: &mut dyn Write, r: Result<String, TypeError>) -> Result<i32, UsageError> {
    match r {
        Ok(s) => {
            let _ = writeln!(out, "accepted: {s}");
            Ok(EXIT_OK)
        }
        Err(e) => {
            let _ = writeln!(out, "rejected: {e}");
            Ok(EXIT_FAIL)
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, UsageError> {
    let lat = load_lattice(cli)?;
    match &cli.command {
        Command::Check { system, pc, effect, file } => {
            let prog = load_program(&lat, file)?;
            let policy = policy_or_reject!(out, program_policy(cli, &lat, &prog)?);
            let result = match system {
                SystemArg::Pure => check_pure(&policy, &Ctx::from_pairs(&prog.context), &prog.body).map(|t| t.to_string()),
                SystemArg::Pc => {
                    let pc = match pc {
                        Some(s) => label(&lat, s)?,
                        None => lat.minimal_elements()[0].clone(),
                    };
                    state_checked(&policy, &prog)
                        .and_then(|_| check_pc(&policy, &prog.sigma, &Ctx::from_pairs(&prog.context), &pc, &prog.body))
                        .map(|t| format!("{t} at pc {pc}"))
                }
                SystemArg::Effect => {
                    let (ctx, body) = effect_form(&policy, &prog);
                    let sigma = &prog.sigma;
                    match effect {
                        Some(text) => {
                            let eps: EffectSet = text.parse().map_err(UsageError::Other)?;
                            state_checked(&policy, &prog)
                                .and_then(|_| check_effect(&policy, sigma, &ctx, &body, eps))
                                .map(|t| format!("{t} ! {eps}"))
                        }
                        None => state_checked(&policy, &prog)
                            .and_then(|_| infer_effect(&policy, sigma, &ctx, &body))
                            .map(|(t, eps)| format!("{t} ! {eps}")),
                    }
                }
            };
            report_type(out, result)
        }
        Command::Eval { state, fuel, binds, file } => {
            let mut prog = load_program(&lat, file)?;
            for b in binds {
                let (x, v) = b.split_once('=').ok_or_else(|| UsageError::Other(format!("expected NAME=VALUE, got `{b}`")))?;
                let v = parse_expr(v).map_err(|source| UsageError::Parse { path: "--bind".into(), source })?;
                prog.body = crate::syntax::subst(&prog.body, x.trim(), &v);
            }
            let st = match state {
                Some(s) => Some(parse_expr(s).map_err(|source| UsageError::Parse { path: "--state".into(), source })?),
                None if prog.mode == Mode::StateExn => {
                    let vals = crate::harness::contexts::enumerate_values(&prog.sigma).unwrap_or_default();
                    vals.into_iter().next()
                }
                None => None,
            };
            let (outcome, steps) = eval_run(&prog.body, st, *fuel);
            let _ = writeln!(out, "{outcome}");
            let _ = writeln!(out, "steps {steps}");
            Ok(if outcome.is_stuck() { EXIT_FAIL } else { EXIT_OK })
        }
        Command::Translate { file } => {
            let prog = load_program(&lat, file)?;
            let policy = policy_or_reject!(out, program_policy(cli, &lat, &prog)?);
            let (ctx, body) = effect_form(&policy, &prog);
            if let Err(e) = state_checked(&policy, &prog) {
                let _ = writeln!(out, "rejected: {e}");
                return Ok(EXIT_FAIL);
            }
            match crate::syntax::with_fresh_names(|| capture(&policy, &prog.sigma, &ctx, &body)) {
                Ok((term, t, eps)) => {
                    let sigma = if policy.mode() == Mode::Pnt { Type::Unit } else { prog.sigma.clone() };
                    let elab = crate::elaborate::Elab::new(&policy, &sigma);
                    let pure_t = elab.monad_type(eps, &elab.pure_type(&t));
                    let _ = writeln!(out, "{term} : {pure_t}");
                    let _ = writeln!(out, "effect {eps}");
                    Ok(EXIT_OK)
                }
                Err(e) => {
                    let _ = writeln!(out, "rejected: {e}");
                    Ok(EXIT_FAIL)
                }
            }
        }
        Command::Equiv { def, attacker, bound, fuel, file1, file2 } => {
            let p1 = load_program(&lat, file1)?;
            let p2 = load_program(&lat, file2)?;
            let policy = policy_or_reject!(out, program_policy(cli, &lat, &p1)?);
            let atk = label(&lat, attacker)?;
            let ty = |p: &Program| -> Result<Type, TypeError> {
                match def {
                    EquivDef::Pure => check_pure(&policy, &Ctx::new(), &p.body),
                    _ => {
                        let sigma = if *def == EquivDef::StateExn { p1.sigma.clone() } else { Type::Unit };
                        let mut last = None;
                        for pc in lat.minimal_elements() {
                            match check_pc(&policy, &sigma, &Ctx::new(), &pc, &p.body) {
                                Ok(t) => return Ok(t),
                                Err(e) => last = Some(e),
                            }
                        }
                        Err(last.expect("lattice is nonempty"))
                    }
                }
            };
            let (t1, t2) = match (ty(&p1), ty(&p2)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => {
                    let _ = writeln!(out, "rejected: {e}");
                    return Ok(EXIT_FAIL);
                }
            };
            if t1 != t2 {
                let _ = writeln!(out, "rejected: programs have different types `{t1}` and `{t2}`");
                return Ok(EXIT_FAIL);
            }
            let grammar = match def {
                EquivDef::Pure => Grammar::Pure,
                EquivDef::StateExn => Grammar::StateExn,
                EquivDef::TerminationSensitive => Grammar::Pnt,
            };
            let spec = ContextSpec { hole_type: t1, output_label: atk, size_bound: *bound, grammar };
            let sigma = if grammar == Grammar::StateExn { p1.sigma.clone() } else { Type::Unit };
            let cs = contexts_for(&policy, &sigma, &spec);
            let (e1, e2) = (&p1.body, &p2.body);
            let verdict = match def {
                EquivDef::Pure => check_l_equiv_with(&policy, e1, e2, &spec, &cs, *fuel),
                EquivDef::StateExn => check_state_exn_equiv_with(&policy, &sigma, e1, e2, &spec, &cs, *fuel),
                EquivDef::TerminationSensitive => check_ts_equiv_with(&policy, e1, e2, &spec, &cs, *fuel),
            };
            let _ = writeln!(out, "{verdict}");
            Ok(if matches!(verdict, Verdict::Equivalent { .. }) { EXIT_OK } else { EXIT_FAIL })
        }
        Command::Verify { suite, seed, count } => {
            let report =
                run_suite(suite, SuiteConfig { seed: *seed, count: *count }).map_err(|e| UsageError::Other(e.to_string()))?;
            let _ = write!(out, "{report}");
            Ok(if report.passed() { EXIT_OK } else { EXIT_FAIL })
        }
        Command::Demo { which: DemoArg::Coproduct } => {
            let base = match &cli.lattice {
                Some(_) => (*lat).clone(),
                None => two_point(),
            };
            let report = coproduct_demo(&base);
            let _ = write!(out, "{report}");
            Ok(if report.passed() { EXIT_OK } else { EXIT_FAIL })
        }
    }
}
