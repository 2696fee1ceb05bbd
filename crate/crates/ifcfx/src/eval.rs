//! Fuel-bounded small-step evaluation for the pure and the state/exception calculi.

use std::fmt;

use thiserror::Error;

use crate::syntax::{subst, Expr};

pub const DEFAULT_FUEL: u64 = 10_000;

/// Result of running a closed program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Val(Expr),
    /// An uncaught exception, with the final state when there is one.
    Thrown(Option<Expr>),
    ValWithState(Expr, Expr),
    Timeout,
    Stuck(String),
}

impl Outcome {
    pub fn is_timeout(&self) -> bool {
        matches!(self, Outcome::Timeout)
    }

    pub fn is_stuck(&self) -> bool {
        matches!(self, Outcome::Stuck(_))
    }

    pub fn value(&self) -> Option<&Expr> {
        match self {
            Outcome::Val(v) | Outcome::ValWithState(v, _) => Some(v),
            _ => None,
        }
    }

    pub fn final_state(&self) -> Option<&Expr> {
        match self {
            Outcome::ValWithState(_, s) => Some(s),
            Outcome::Thrown(s) => s.as_ref(),
            _ => None,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Val(v) => write!(f, "value {v}"),
            Outcome::Thrown(None) => write!(f, "thrown"),
            Outcome::Thrown(Some(s)) => write!(f, "thrown; state {s}"),
            Outcome::ValWithState(v, s) => write!(f, "value {v}; state {s}"),
            Outcome::Timeout => write!(f, "timeout"),
            Outcome::Stuck(m) => write!(f, "stuck: {m}"),
        }
    }
}

/// One machine transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    /// The expression is a value.
    Value,
    /// The expression is `T[throw]` for a throw context `T`.
    Throw,
    Next(Expr),
    Stuck(String),
}

/// An `⟨expression, state⟩` pair; the state is absent for the pure calculus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineConfig {
    pub expr: Expr,
    pub state: Option<Expr>,
}

fn sub(e: &Expr, st: &mut Option<Expr>, rebuild: impl FnOnce(Expr) -> Expr) -> Step {
    match step(e, st) {
        Step::Next(e2) => Step::Next(rebuild(e2)),
        Step::Value => Step::Stuck(format!("`{e}` is already a value")),
        other => other,
    }
}

/// One leftmost-innermost call-by-value step. `st` is the state cell, mutated by `write`.
pub fn step(e: &Expr, st: &mut Option<Expr>) -> Step {
    use Expr::*;
    if e.is_value() {
        return Step::Value;
    }
    match e {
        Var(x) => Step::Stuck(format!("free variable `{x}`")),
        Throw(_) => Step::Throw,
        Pair(a, b) => {
            if !a.is_value() {
                sub(a, st, |a2| Pair(Box::new(a2), b.clone()))
            } else {
                sub(b, st, |b2| Pair(a.clone(), Box::new(b2)))
            }
        }
        Proj(i, a) => {
            if !a.is_value() {
                return sub(a, st, |a2| Proj(*i, Box::new(a2)));
            }
            match &**a {
                Pair(x, y) => Step::Next(if *i == 1 { (**x).clone() } else { (**y).clone() }),
                other => Step::Stuck(format!("projection from `{other}`")),
            }
        }
        Inl(a, t) => sub(a, st, |a2| Inl(Box::new(a2), t.clone())),
        Inr(a, t) => sub(a, st, |a2| Inr(Box::new(a2), t.clone())),
        LabelE(l, a) => sub(a, st, |a2| LabelE(l.clone(), Box::new(a2))),
        LiftE(a) => sub(a, st, |a2| LiftE(Box::new(a2))),
        Match(s, x, l, y, r) => {
            if !s.is_value() {
                return sub(s, st, |s2| Match(Box::new(s2), x.clone(), l.clone(), y.clone(), r.clone()));
            }
            match &**s {
                Inl(v, _) => Step::Next(subst(l, x, v)),
                Inr(v, _) => Step::Next(subst(r, y, v)),
                other => Step::Stuck(format!("match on `{other}`")),
            }
        }
        App(f, a) => {
            if !f.is_value() {
                return sub(f, st, |f2| App(Box::new(f2), a.clone()));
            }
            if !a.is_value() {
                return sub(a, st, |a2| App(f.clone(), Box::new(a2)));
            }
            match &**f {
                Lam(x, _, _, body) => Step::Next(subst(body, x, a)),
                other => Step::Stuck(format!("application of `{other}`")),
            }
        }
        Unlabel(a, x, body) => {
            if !a.is_value() {
                return sub(a, st, |a2| Unlabel(Box::new(a2), x.clone(), body.clone()));
            }
            match &**a {
                LabelE(_, v) => Step::Next(subst(body, x, v)),
                other => Step::Stuck(format!("unlabel of `{other}`")),
            }
        }
        Seq(x, a, body) => {
            if !a.is_value() {
                return sub(a, st, |a2| Seq(x.clone(), Box::new(a2), body.clone()));
            }
            match &**a {
                LiftE(v) => Step::Next(subst(body, x, v)),
                other => Step::Stuck(format!("seq on `{other}`")),
            }
        }
        Let(x, a, body) => {
            if !a.is_value() {
                return sub(a, st, |a2| Let(x.clone(), Box::new(a2), body.clone()));
            }
            Step::Next(subst(body, x, a))
        }
        Fix(f, _, body) => Step::Next(subst(body, f, e)),
        Read => match st {
            Some(s) => Step::Next(s.clone()),
            None => Step::Stuck("read without a state cell".into()),
        },
        Write(a) => {
            if !a.is_value() {
                return sub(a, st, |a2| Write(Box::new(a2)));
            }
            if st.is_none() {
                return Step::Stuck("write without a state cell".into());
            }
            *st = Some((**a).clone());
            Step::Next(UnitVal)
        }
        TryCatch(a, handler) => {
            if a.is_value() {
                return Step::Next((**a).clone());
            }
            match step(a, st) {
                Step::Throw => Step::Next((**handler).clone()),
                Step::Next(a2) => Step::Next(TryCatch(Box::new(a2), handler.clone())),
                other => other,
            }
        }
        UnitVal | Lam(..) => Step::Value,
    }
}

/// One step of the pure machine; `None` when `e` is a value.
pub fn step_pure(e: &Expr) -> Result<Option<Expr>, StuckStep> {
    match step(e, &mut None) {
        Step::Value => Ok(None),
        Step::Next(e2) => Ok(Some(e2)),
        Step::Throw => Err(StuckStep("throw in the pure calculus".into())),
        Step::Stuck(m) => Err(StuckStep(m)),
    }
}

/// One step of the state machine; `None` when the expression is a value or a top-level throw.
pub fn step_state(c: &MachineConfig) -> Result<Option<MachineConfig>, StuckStep> {
    let mut st = c.state.clone();
    match step(&c.expr, &mut st) {
        Step::Value => Ok(None),
        Step::Throw => {
            if matches!(c.expr, Expr::Throw(_)) {
                Ok(None)
            } else {
                Ok(Some(MachineConfig { expr: Expr::Throw(crate::syntax::Type::Unit), state: st }))
            }
        }
        Step::Next(e2) => Ok(Some(MachineConfig { expr: e2, state: st })),
        Step::Stuck(m) => Err(StuckStep(m)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("stuck: {0}")]
pub struct StuckStep(pub String);

/// Run to a normal form or until `fuel` steps have been taken. Returns the outcome and
/// the number of steps used.
pub fn run(e: &Expr, initial_state: Option<Expr>, fuel: u64) -> (Outcome, u64) {
    let mut cur = e.clone();
    let mut st = initial_state;
    let mut steps = 0;
    loop {
        match step(&cur, &mut st) {
            Step::Value => {
                return (
                    match st {
                        Some(s) => Outcome::ValWithState(cur, s),
                        None => Outcome::Val(cur),
                    },
                    steps,
                )
            }
            Step::Throw => return (Outcome::Thrown(st), steps),
            Step::Stuck(m) => return (Outcome::Stuck(m), steps),
            Step::Next(e2) => {
                if steps == fuel {
                    return (Outcome::Timeout, steps);
                }
                steps += 1;
                cur = e2;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("values containing functions are not comparable")]
pub struct NotComparable;

/// Structural equality of first-order values; sum annotations are ignored.
pub fn value_eq(a: &Expr, b: &Expr) -> Result<bool, NotComparable> {
    use Expr::*;
    Ok(match (a, b) {
        (Lam(..), _) | (_, Lam(..)) => return Err(NotComparable),
        (UnitVal, UnitVal) => true,
        (Pair(a1, a2), Pair(b1, b2)) => {
            let first = value_eq(a1, b1)?;
            let second = value_eq(a2, b2)?;
            first && second
        }
        (Inl(x, _), Inl(y, _)) | (Inr(x, _), Inr(y, _)) | (LiftE(x), LiftE(y)) => value_eq(x, y)?,
        (LabelE(l1, x), LabelE(l2, y)) => {
            let inner = value_eq(x, y)?;
            l1 == l2 && inner
        }
        _ => {
            if contains_lambda(a) || contains_lambda(b) {
                return Err(NotComparable);
            }
            false
        }
    })
}

pub fn contains_lambda(e: &Expr) -> bool {
    match e {
        Expr::Lam(..) => true,
        Expr::Pair(a, b) => contains_lambda(a) || contains_lambda(b),
        Expr::Inl(a, _) | Expr::Inr(a, _) | Expr::LabelE(_, a) | Expr::LiftE(a) => contains_lambda(a),
        _ => false,
    }
}
