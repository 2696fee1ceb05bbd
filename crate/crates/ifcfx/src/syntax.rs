//! Shared AST for the pure, pc and type-and-effect calculi; parser, printer, substitution.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::effects::{EffectSet, Mode};
use crate::labels::{Label, LabelLattice};

pub type Name = Arc<str>;

pub fn name(s: &str) -> Name {
    Arc::from(s)
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Type {
    Unit,
    Sum(Box<Type>, Box<Type>),
    Prod(Box<Type>, Box<Type>),
    FunPure(Box<Type>, Box<Type>),
    FunPc(Box<Type>, Label, Box<Type>),
    FunEff(Box<Type>, EffectSet, Box<Type>),
    Labeled(Label, Box<Type>),
    Lift(Box<Type>),
}

impl Type {
    pub fn sum(a: Type, b: Type) -> Type {
        Type::Sum(Box::new(a), Box::new(b))
    }
    pub fn prod(a: Type, b: Type) -> Type {
        Type::Prod(Box::new(a), Box::new(b))
    }
    pub fn fun(a: Type, b: Type) -> Type {
        Type::FunPure(Box::new(a), Box::new(b))
    }
    pub fn fun_pc(a: Type, pc: Label, b: Type) -> Type {
        Type::FunPc(Box::new(a), pc, Box::new(b))
    }
    pub fn fun_eff(a: Type, eps: EffectSet, b: Type) -> Type {
        Type::FunEff(Box::new(a), eps, Box::new(b))
    }
    pub fn labeled(l: Label, t: Type) -> Type {
        Type::Labeled(l, Box::new(t))
    }
    pub fn lift(t: Type) -> Type {
        Type::Lift(Box::new(t))
    }
    /// `unit + unit`
    pub fn bool() -> Type {
        Type::sum(Type::Unit, Type::Unit)
    }

    /// No function or `Lift` anywhere inside.
    pub fn is_first_order(&self) -> bool {
        match self {
            Type::Unit => true,
            Type::Sum(a, b) | Type::Prod(a, b) => a.is_first_order() && b.is_first_order(),
            Type::Labeled(_, t) => t.is_first_order(),
            Type::FunPure(..) | Type::FunPc(..) | Type::FunEff(..) | Type::Lift(_) => false,
        }
    }

    pub fn is_function(&self) -> bool {
        matches!(self, Type::FunPure(..) | Type::FunPc(..) | Type::FunEff(..))
    }

    pub fn labels(&self, out: &mut Vec<Label>) {
        match self {
            Type::Unit => {}
            Type::Sum(a, b) | Type::Prod(a, b) | Type::FunPure(a, b) | Type::FunEff(a, _, b) => {
                a.labels(out);
                b.labels(out);
            }
            Type::FunPc(a, l, b) => {
                out.push(l.clone());
                a.labels(out);
                b.labels(out);
            }
            Type::Labeled(l, t) => {
                out.push(l.clone());
                t.labels(out);
            }
            Type::Lift(t) => t.labels(out),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Type::Unit => 1,
            Type::Sum(a, b) | Type::Prod(a, b) | Type::FunPure(a, b) | Type::FunEff(a, _, b) | Type::FunPc(a, _, b) => {
                1 + a.size() + b.size()
            }
            Type::Labeled(_, t) | Type::Lift(t) => 1 + t.size(),
        }
    }
}

/// Latent annotation on a lambda: the pc its body runs at, or its latent effect.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Latent {
    Pc(Label),
    Eff(EffectSet),
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(Name),
    UnitVal,
    Pair(Box<Expr>, Box<Expr>),
    /// Projection; the index is 1 or 2.
    Proj(u8, Box<Expr>),
    /// Annotated with the whole sum type.
    Inl(Box<Expr>, Type),
    Inr(Box<Expr>, Type),
    Match(Box<Expr>, Name, Box<Expr>, Name, Box<Expr>),
    Lam(Name, Type, Option<Latent>, Box<Expr>),
    App(Box<Expr>, Box<Expr>),
    LabelE(Label, Box<Expr>),
    Unlabel(Box<Expr>, Name, Box<Expr>),
    Read,
    Write(Box<Expr>),
    /// Annotated with the type it is used at.
    Throw(Type),
    TryCatch(Box<Expr>, Box<Expr>),
    Fix(Name, Type, Box<Expr>),
    LiftE(Box<Expr>),
    Seq(Name, Box<Expr>, Box<Expr>),
    Let(Name, Box<Expr>, Box<Expr>),
}

/// Short constructors used throughout the crate.
pub mod build {
    use super::*;

    pub fn var(x: &str) -> Expr {
        Expr::Var(name(x))
    }
    pub fn pair(a: Expr, b: Expr) -> Expr {
        Expr::Pair(Box::new(a), Box::new(b))
    }
    pub fn fst(e: Expr) -> Expr {
        Expr::Proj(1, Box::new(e))
    }
    pub fn snd(e: Expr) -> Expr {
        Expr::Proj(2, Box::new(e))
    }
    pub fn inl(e: Expr, t: Type) -> Expr {
        Expr::Inl(Box::new(e), t)
    }
    pub fn inr(e: Expr, t: Type) -> Expr {
        Expr::Inr(Box::new(e), t)
    }
    pub fn case(e: Expr, x: &str, l: Expr, y: &str, r: Expr) -> Expr {
        Expr::Match(Box::new(e), name(x), Box::new(l), name(y), Box::new(r))
    }
    pub fn lam(x: &str, t: Type, body: Expr) -> Expr {
        Expr::Lam(name(x), t, None, Box::new(body))
    }
    pub fn lam_pc(x: &str, t: Type, pc: Label, body: Expr) -> Expr {
        Expr::Lam(name(x), t, Some(Latent::Pc(pc)), Box::new(body))
    }
    pub fn app(f: Expr, a: Expr) -> Expr {
        Expr::App(Box::new(f), Box::new(a))
    }
    pub fn app2(f: Expr, a: Expr, b: Expr) -> Expr {
        app(app(f, a), b)
    }
    pub fn label(l: Label, e: Expr) -> Expr {
        Expr::LabelE(l, Box::new(e))
    }
    pub fn unlabel(e: Expr, x: &str, body: Expr) -> Expr {
        Expr::Unlabel(Box::new(e), name(x), Box::new(body))
    }
    pub fn write(e: Expr) -> Expr {
        Expr::Write(Box::new(e))
    }
    pub fn try_catch(a: Expr, b: Expr) -> Expr {
        Expr::TryCatch(Box::new(a), Box::new(b))
    }
    pub fn fix(f: &str, t: Type, body: Expr) -> Expr {
        Expr::Fix(name(f), t, Box::new(body))
    }
    pub fn lift(e: Expr) -> Expr {
        Expr::LiftE(Box::new(e))
    }
    pub fn seq(x: &str, a: Expr, b: Expr) -> Expr {
        Expr::Seq(name(x), Box::new(a), Box::new(b))
    }
    pub fn let_(x: &str, a: Expr, b: Expr) -> Expr {
        Expr::Let(name(x), Box::new(a), Box::new(b))
    }
}

impl Expr {
    /// Syntactic values: `()`, pairs/injections/labels of values, lambdas, `lift v`.
    pub fn is_value(&self) -> bool {
        match self {
            Expr::UnitVal | Expr::Lam(..) => true,
            Expr::Pair(a, b) => a.is_value() && b.is_value(),
            Expr::Inl(e, _) | Expr::Inr(e, _) | Expr::LabelE(_, e) | Expr::LiftE(e) => e.is_value(),
            _ => false,
        }
    }

    /// Number of AST nodes (types not counted).
    pub fn size(&self) -> usize {
        match self {
            Expr::Var(_) | Expr::UnitVal | Expr::Read | Expr::Throw(_) => 1,
            Expr::Proj(_, e)
            | Expr::Inl(e, _)
            | Expr::Inr(e, _)
            | Expr::Lam(_, _, _, e)
            | Expr::LabelE(_, e)
            | Expr::Write(e)
            | Expr::Fix(_, _, e)
            | Expr::LiftE(e) => 1 + e.size(),
            Expr::Pair(a, b)
            | Expr::App(a, b)
            | Expr::Unlabel(a, _, b)
            | Expr::TryCatch(a, b)
            | Expr::Seq(_, a, b)
            | Expr::Let(_, a, b) => 1 + a.size() + b.size(),
            Expr::Match(e, _, a, _, b) => 1 + e.size() + a.size() + b.size(),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
        let under = |x: &Name, e: &Expr, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>| {
            bound.push(x.clone());
            e.collect_free(bound, out);
            bound.pop();
        };
        match self {
            Expr::Var(x) => {
                if !bound.contains(x) {
                    out.insert(x.clone());
                }
            }
            Expr::UnitVal | Expr::Read | Expr::Throw(_) => {}
            Expr::Pair(a, b) | Expr::App(a, b) | Expr::TryCatch(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Expr::Proj(_, e) | Expr::Inl(e, _) | Expr::Inr(e, _) | Expr::LabelE(_, e) | Expr::Write(e) | Expr::LiftE(e) => {
                e.collect_free(bound, out)
            }
            Expr::Match(e, x, a, y, b) => {
                e.collect_free(bound, out);
                under(x, a, bound, out);
                under(y, b, bound, out);
            }
            Expr::Lam(x, _, _, e) | Expr::Fix(x, _, e) => under(x, e, bound, out),
            Expr::Unlabel(a, x, b) | Expr::Seq(x, a, b) | Expr::Let(x, a, b) => {
                a.collect_free(bound, out);
                under(x, b, bound, out);
            }
        }
    }

    pub fn labels(&self, out: &mut Vec<Label>) {
        match self {
            Expr::Var(_) | Expr::UnitVal | Expr::Read => {}
            Expr::Throw(t) => t.labels(out),
            Expr::Pair(a, b)
            | Expr::App(a, b)
            | Expr::TryCatch(a, b)
            | Expr::Unlabel(a, _, b)
            | Expr::Seq(_, a, b)
            | Expr::Let(_, a, b) => {
                a.labels(out);
                b.labels(out);
            }
            Expr::Proj(_, e) | Expr::Write(e) | Expr::LiftE(e) => e.labels(out),
            Expr::Inl(e, t) | Expr::Inr(e, t) | Expr::Fix(_, t, e) => {
                t.labels(out);
                e.labels(out);
            }
            Expr::Match(e, _, a, _, b) => {
                e.labels(out);
                a.labels(out);
                b.labels(out);
            }
            Expr::Lam(_, t, lat, e) => {
                t.labels(out);
                if let Some(Latent::Pc(l)) = lat {
                    out.push(l.clone());
                }
                e.labels(out);
            }
            Expr::LabelE(l, e) => {
                out.push(l.clone());
                e.labels(out);
            }
        }
    }
}

thread_local! {
    static FRESH: Cell<u64> = const { Cell::new(0) };
}

/// A name not produced before on this thread: the root of `base` with a counter appended.
/// Parsed names never contain `'`, so these cannot clash with source names.
pub fn fresh_name(base: &str) -> Name {
    let root = base.split('\'').next().unwrap_or("v");
    let root = if root.is_empty() { "v" } else { root };
    let n = FRESH.with(|c| {
        let n = c.get();
        c.set(n + 1);
        n
    });
    name(&format!("{root}'{n}"))
}

/// Run `f` with fresh names numbered from zero, so its output does not depend on earlier
/// work on this thread. Terms built inside should not be mixed with terms built outside.
pub fn with_fresh_names<R>(f: impl FnOnce() -> R) -> R {
    let saved = FRESH.with(|c| c.replace(0));
    let r = f();
    FRESH.with(|c| c.set(c.get().max(saved)));
    r
}

/// Capture-avoiding substitution `e[v/x]`.
pub fn subst(e: &Expr, x: &str, v: &Expr) -> Expr {
    let fv = v.free_vars();
    subst_with(e, x, v, &fv)
}

fn subst_with(e: &Expr, x: &str, v: &Expr, fv: &BTreeSet<Name>) -> Expr {
    let go = |e: &Expr| Box::new(subst_with(e, x, v, fv));
    // Substitute into a body under binder `b`; returns the (possibly renamed) binder and body.
    let bind = |b: &Name, body: &Expr| -> (Name, Box<Expr>) {
        if &**b == x {
            return (b.clone(), Box::new(body.clone()));
        }
        if fv.contains(b) && body.free_vars().contains(x) {
            let nb = fresh_name(b);
            let renamed = subst_with(body, b, &Expr::Var(nb.clone()), &BTreeSet::from([nb.clone()]));
            (nb, Box::new(subst_with(&renamed, x, v, fv)))
        } else {
            (b.clone(), Box::new(subst_with(body, x, v, fv)))
        }
    };
    match e {
        Expr::Var(y) => {
            if &**y == x {
                v.clone()
            } else {
                e.clone()
            }
        }
        Expr::UnitVal | Expr::Read | Expr::Throw(_) => e.clone(),
        Expr::Pair(a, b) => Expr::Pair(go(a), go(b)),
        Expr::Proj(i, a) => Expr::Proj(*i, go(a)),
        Expr::Inl(a, t) => Expr::Inl(go(a), t.clone()),
        Expr::Inr(a, t) => Expr::Inr(go(a), t.clone()),
        Expr::Match(s, y1, a, y2, b) => {
            let (n1, a2) = bind(y1, a);
            let (n2, b2) = bind(y2, b);
            Expr::Match(go(s), n1, a2, n2, b2)
        }
        Expr::Lam(y, t, lat, body) => {
            let (n, b2) = bind(y, body);
            Expr::Lam(n, t.clone(), lat.clone(), b2)
        }
        Expr::App(a, b) => Expr::App(go(a), go(b)),
        Expr::LabelE(l, a) => Expr::LabelE(l.clone(), go(a)),
        Expr::Unlabel(a, y, b) => {
            let (n, b2) = bind(y, b);
            Expr::Unlabel(go(a), n, b2)
        }
        Expr::Write(a) => Expr::Write(go(a)),
        Expr::TryCatch(a, b) => Expr::TryCatch(go(a), go(b)),
        Expr::Fix(f, t, body) => {
            let (n, b2) = bind(f, body);
            Expr::Fix(n, t.clone(), b2)
        }
        Expr::LiftE(a) => Expr::LiftE(go(a)),
        Expr::Seq(y, a, b) => {
            let (n, b2) = bind(y, b);
            Expr::Seq(n, go(a), b2)
        }
        Expr::Let(y, a, b) => {
            let (n, b2) = bind(y, b);
            Expr::Let(n, go(a), b2)
        }
    }
}

/// Rewrite every `let` to an application of an annotated lambda. `annotate` supplies the
/// type of the bound expression and the lambda's latent annotation; it sees the
/// *original* (sugared) `let` node and the path of binders above it.
pub fn desugar_with<F>(e: &Expr, annotate: &mut F) -> Expr
where
    F: FnMut(&Expr) -> (Type, Option<Latent>),
{
    if let Expr::Let(x, a, b) = e {
        let (t, lat) = annotate(e);
        let a2 = Box::new(desugar_with(a, annotate));
        let b2 = Box::new(desugar_with(b, annotate));
        return Expr::App(Box::new(Expr::Lam(x.clone(), t, lat, b2)), a2);
    }
    let mut go = |e: &Expr| Box::new(desugar_with(e, annotate));
    match e {
        Expr::Let(..) => unreachable!(),
        Expr::Var(_) | Expr::UnitVal | Expr::Read | Expr::Throw(_) => e.clone(),
        Expr::Pair(a, b) => Expr::Pair(go(a), go(b)),
        Expr::Proj(i, a) => Expr::Proj(*i, go(a)),
        Expr::Inl(a, t) => Expr::Inl(go(a), t.clone()),
        Expr::Inr(a, t) => Expr::Inr(go(a), t.clone()),
        Expr::Match(s, x, a, y, b) => Expr::Match(go(s), x.clone(), go(a), y.clone(), go(b)),
        Expr::Lam(x, t, lat, b) => Expr::Lam(x.clone(), t.clone(), lat.clone(), go(b)),
        Expr::App(a, b) => Expr::App(go(a), go(b)),
        Expr::LabelE(l, a) => Expr::LabelE(l.clone(), go(a)),
        Expr::Unlabel(a, x, b) => Expr::Unlabel(go(a), x.clone(), go(b)),
        Expr::Write(a) => Expr::Write(go(a)),
        Expr::TryCatch(a, b) => Expr::TryCatch(go(a), go(b)),
        Expr::Fix(f, t, b) => Expr::Fix(f.clone(), t.clone(), go(b)),
        Expr::LiftE(a) => Expr::LiftE(go(a)),
        Expr::Seq(x, a, b) => Expr::Seq(x.clone(), go(a), go(b)),
    }
}

pub fn contains_let(e: &Expr) -> bool {
    match e {
        Expr::Let(..) => true,
        Expr::Var(_) | Expr::UnitVal | Expr::Read | Expr::Throw(_) => false,
        Expr::Pair(a, b) | Expr::App(a, b) | Expr::TryCatch(a, b) | Expr::Unlabel(a, _, b) | Expr::Seq(_, a, b) => {
            contains_let(a) || contains_let(b)
        }
        Expr::Proj(_, a)
        | Expr::Inl(a, _)
        | Expr::Inr(a, _)
        | Expr::Lam(_, _, _, a)
        | Expr::LabelE(_, a)
        | Expr::Write(a)
        | Expr::Fix(_, _, a)
        | Expr::LiftE(a) => contains_let(a),
        Expr::Match(s, _, a, _, b) => contains_let(s) || contains_let(a) || contains_let(b),
    }
}

/// A whole source program.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Program {
    pub mode: Mode,
    /// Type of the state cell (state-exn mode); `unit` otherwise.
    pub sigma: Type,
    pub context: Vec<(Name, Type)>,
    pub body: Expr,
    /// Raw `KEY=VAL` policy settings found in the file, if any.
    pub policy: Vec<String>,
}

// ---------------------------------------------------------------- printing

fn write_type(t: &Type, prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let (my, paren) = match t {
        Type::FunPure(..) | Type::FunPc(..) | Type::FunEff(..) => (0, prec > 0),
        Type::Sum(..) => (1, prec > 1),
        Type::Prod(..) => (2, prec > 2),
        Type::Labeled(..) | Type::Lift(_) => (3, prec > 3),
        Type::Unit => (4, false),
    };
    let _ = my;
    if paren {
        f.write_str("(")?;
    }
    match t {
        Type::Unit => f.write_str("unit")?,
        Type::Sum(a, b) => {
            write_type(a, 2, f)?;
            f.write_str(" + ")?;
            write_type(b, 1, f)?;
        }
        Type::Prod(a, b) => {
            write_type(a, 3, f)?;
            f.write_str(" * ")?;
            write_type(b, 2, f)?;
        }
        Type::FunPure(a, b) => {
            write_type(a, 1, f)?;
            f.write_str(" -> ")?;
            write_type(b, 0, f)?;
        }
        Type::FunPc(a, pc, b) => {
            write_type(a, 1, f)?;
            write!(f, " ->[pc {pc}] ")?;
            write_type(b, 0, f)?;
        }
        Type::FunEff(a, eps, b) => {
            write_type(a, 1, f)?;
            write!(f, " ->[eff {eps}] ")?;
            write_type(b, 0, f)?;
        }
        Type::Labeled(l, t) => {
            write!(f, "L[{l}] ")?;
            write_type(t, 3, f)?;
        }
        Type::Lift(t) => {
            f.write_str("Lift ")?;
            write_type(t, 3, f)?;
        }
    }
    if paren {
        f.write_str(")")?;
    }
    Ok(())
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_type(self, 0, f)
    }
}

impl fmt::Debug for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_type(self, 0, f)
    }
}

const OPEN: u8 = 0;
const APP: u8 = 1;
const PREFIX: u8 = 2;
const ATOM: u8 = 3;

fn expr_prec(e: &Expr) -> u8 {
    match e {
        Expr::Lam(..)
        | Expr::Match(..)
        | Expr::Unlabel(..)
        | Expr::Let(..)
        | Expr::Seq(..)
        | Expr::Fix(..)
        | Expr::TryCatch(..)
        | Expr::Inl(..)
        | Expr::Inr(..)
        | Expr::Throw(_) => OPEN,
        Expr::App(..) => APP,
        Expr::Proj(..) | Expr::LabelE(..) | Expr::Write(_) | Expr::LiftE(_) => PREFIX,
        Expr::Var(_) | Expr::UnitVal | Expr::Pair(..) | Expr::Read => ATOM,
    }
}

fn write_expr(e: &Expr, prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let paren = expr_prec(e) < prec;
    if paren {
        f.write_str("(")?;
    }
    match e {
        Expr::Var(x) => f.write_str(x)?,
        Expr::UnitVal => f.write_str("()")?,
        Expr::Read => f.write_str("read")?,
        Expr::Pair(a, b) => {
            f.write_str("(")?;
            write_expr(a, OPEN, f)?;
            f.write_str(", ")?;
            write_expr(b, OPEN, f)?;
            f.write_str(")")?;
        }
        Expr::Proj(i, a) => {
            f.write_str(if *i == 1 { "fst " } else { "snd " })?;
            write_expr(a, ATOM, f)?;
        }
        Expr::LabelE(l, a) => {
            write!(f, "label[{l}] ")?;
            write_expr(a, ATOM, f)?;
        }
        Expr::Write(a) => {
            f.write_str("write ")?;
            write_expr(a, ATOM, f)?;
        }
        Expr::LiftE(a) => {
            f.write_str("lift ")?;
            write_expr(a, ATOM, f)?;
        }
        Expr::App(a, b) => {
            write_expr(a, APP, f)?;
            f.write_str(" ")?;
            write_expr(b, ATOM, f)?;
        }
        Expr::Inl(a, t) | Expr::Inr(a, t) => {
            f.write_str(if matches!(e, Expr::Inl(..)) { "inl " } else { "inr " })?;
            write_expr(a, APP, f)?;
            write!(f, " : {t}")?;
        }
        Expr::Throw(t) => write!(f, "throw : {t}")?,
        Expr::Match(s, x, a, y, b) => {
            f.write_str("match ")?;
            write_expr(s, OPEN, f)?;
            write!(f, " with inl {x} -> ")?;
            write_expr(a, OPEN, f)?;
            write!(f, " | inr {y} -> ")?;
            write_expr(b, OPEN, f)?;
        }
        Expr::Lam(x, t, lat, b) => {
            write!(f, "fun ({x}:{t}) ->")?;
            match lat {
                None => {}
                Some(Latent::Pc(l)) => write!(f, "[pc {l}]")?,
                Some(Latent::Eff(eps)) => write!(f, "[eff {eps}]")?,
            }
            f.write_str(" ")?;
            write_expr(b, OPEN, f)?;
        }
        Expr::Unlabel(a, x, b) => {
            f.write_str("unlabel ")?;
            write_expr(a, OPEN, f)?;
            write!(f, " as {x} in ")?;
            write_expr(b, OPEN, f)?;
        }
        Expr::Let(x, a, b) | Expr::Seq(x, a, b) => {
            f.write_str(if matches!(e, Expr::Let(..)) { "let " } else { "seq " })?;
            write!(f, "{x} = ")?;
            write_expr(a, OPEN, f)?;
            f.write_str(" in ")?;
            write_expr(b, OPEN, f)?;
        }
        Expr::Fix(x, t, b) => {
            write!(f, "fix {x} : {t} = ")?;
            write_expr(b, OPEN, f)?;
        }
        Expr::TryCatch(a, b) => {
            f.write_str("try ")?;
            write_expr(a, OPEN, f)?;
            f.write_str(" catch ")?;
            write_expr(b, OPEN, f)?;
        }
    }
    if paren {
        f.write_str(")")?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self, OPEN, f)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self, OPEN, f)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode {}", self.mode.keyword())?;
        if self.mode == Mode::StateExn {
            writeln!(f, "sigma {}", self.sigma)?;
        }
        if !self.policy.is_empty() {
            writeln!(f, "policy {}", self.policy.join(" "))?;
        }
        for (x, t) in &self.context {
            writeln!(f, "var {x} : {t}")?;
        }
        writeln!(f, "body {}", self.body)
    }
}

// ---------------------------------------------------------------- lexing

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown label `{0}`")]
    UnknownLabel(Label),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    /// Raw text between `[` and `]`.
    Bracket(String),
    LParen,
    RParen,
    Comma,
    Colon,
    Eq,
    Bar,
    Arrow,
    Plus,
    Star,
    Eof,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str, line0: usize) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, line0, 1);
    let err = |line, col, msg: String| ParseError::Syntax { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let adv = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => {
                adv(1, &mut i, &mut col);
                continue;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '(' => {
                out.push(Spanned { tok: Tok::LParen, line: l0, col: c0 });
                adv(1, &mut i, &mut col);
            }
            ')' => {
                out.push(Spanned { tok: Tok::RParen, line: l0, col: c0 });
                adv(1, &mut i, &mut col);
            }
            ',' => {
                out.push(Spanned { tok: Tok::Comma, line: l0, col: c0 });
                adv(1, &mut i, &mut col);
            }
            ':' => {
                out.push(Spanned { tok: Tok::Colon, line: l0, col: c0 });
                adv(1, &mut i, &mut col);
            }
            '=' => {
                out.push(Spanned { tok: Tok::Eq, line: l0, col: c0 });
                adv(1, &mut i, &mut col);
            }
            '|' => {
                out.push(Spanned { tok: Tok::Bar, line: l0, col: c0 });
                adv(1, &mut i, &mut col);
            }
            '+' => {
                out.push(Spanned { tok: Tok::Plus, line: l0, col: c0 });
                adv(1, &mut i, &mut col);
            }
            '*' => {
                out.push(Spanned { tok: Tok::Star, line: l0, col: c0 });
                adv(1, &mut i, &mut col);
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push(Spanned { tok: Tok::Arrow, line: l0, col: c0 });
                adv(2, &mut i, &mut col);
            }
            '[' => {
                let mut depth = 1;
                let mut j = i + 1;
                let mut text = String::new();
                while j < chars.len() {
                    match chars[j] {
                        '[' => depth += 1,
                        ']' => {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        '\n' => return Err(err(l0, c0, "unterminated `[`".into())),
                        _ => {}
                    }
                    text.push(chars[j]);
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(err(l0, c0, "unterminated `[`".into()));
                }
                out.push(Spanned { tok: Tok::Bracket(text.trim().to_string()), line: l0, col: c0 });
                let n = j + 1 - i;
                adv(n, &mut i, &mut col);
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_' || chars[j] == '\'') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                out.push(Spanned { tok: Tok::Ident(word), line: l0, col: c0 });
                let n = j - i;
                adv(n, &mut i, &mut col);
            }
            other => return Err(err(l0, c0, format!("unexpected character `{other}`"))),
        }
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

const KEYWORDS: &[&str] = &[
    "fun", "match", "with", "inl", "inr", "unlabel", "as", "in", "label", "read", "write", "throw", "try", "catch", "fix",
    "lift", "seq", "let", "fst", "snd", "unit", "L", "Lift",
];

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let s = &self.toks[self.pos];
        Err(ParseError::Syntax { line: s.line, col: s.col, msg: msg.into() })
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected `{kw}`, found {}", describe(self.peek())))
        }
    }

    fn expect(&mut self, t: Tok) -> Result<(), ParseError> {
        if *self.peek() == t {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected {}, found {}", describe(&t), describe(self.peek())))
        }
    }

    fn ident(&mut self) -> Result<Name, ParseError> {
        match self.peek().clone() {
            Tok::Ident(w) if !KEYWORDS.contains(&w.as_str()) => {
                self.bump();
                Ok(name(&w))
            }
            other => self.error(format!("expected identifier, found {}", describe(&other))),
        }
    }

    fn bracket(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Bracket(s) => {
                self.bump();
                Ok(s)
            }
            other => self.error(format!("expected `[...]`, found {}", describe(&other))),
        }
    }

    fn label_in_bracket(&mut self) -> Result<Label, ParseError> {
        let s = self.bracket()?;
        if s.is_empty() || s.contains(char::is_whitespace) {
            return self.error(format!("bad label `{s}`"));
        }
        Ok(Label::new(&s))
    }

    // types

    fn ty(&mut self) -> Result<Type, ParseError> {
        let lhs = self.ty_sum()?;
        if *self.peek() == Tok::Arrow {
            self.bump();
            if let Tok::Bracket(ann) = self.peek().clone() {
                self.bump();
                let rhs = self.ty()?;
                return self.annotated_arrow(lhs, &ann, rhs);
            }
            let rhs = self.ty()?;
            return Ok(Type::fun(lhs, rhs));
        }
        Ok(lhs)
    }

    fn annotated_arrow(&self, lhs: Type, ann: &str, rhs: Type) -> Result<Type, ParseError> {
        match parse_latent(ann) {
            Ok(Latent::Pc(l)) => Ok(Type::fun_pc(lhs, l, rhs)),
            Ok(Latent::Eff(e)) => Ok(Type::fun_eff(lhs, e, rhs)),
            Err(m) => self.error(m),
        }
    }

    fn ty_sum(&mut self) -> Result<Type, ParseError> {
        let lhs = self.ty_prod()?;
        if *self.peek() == Tok::Plus {
            self.bump();
            let rhs = self.ty_sum()?;
            return Ok(Type::sum(lhs, rhs));
        }
        Ok(lhs)
    }

    fn ty_prod(&mut self) -> Result<Type, ParseError> {
        let lhs = self.ty_prefix()?;
        if *self.peek() == Tok::Star {
            self.bump();
            let rhs = self.ty_prod()?;
            return Ok(Type::prod(lhs, rhs));
        }
        Ok(lhs)
    }

    fn ty_prefix(&mut self) -> Result<Type, ParseError> {
        if self.is_kw("L") {
            self.bump();
            let l = self.label_in_bracket()?;
            let t = self.ty_prefix()?;
            return Ok(Type::labeled(l, t));
        }
        if self.is_kw("Lift") {
            self.bump();
            let t = self.ty_prefix()?;
            return Ok(Type::lift(t));
        }
        if self.is_kw("unit") {
            self.bump();
            return Ok(Type::Unit);
        }
        if *self.peek() == Tok::LParen {
            self.bump();
            let t = self.ty()?;
            self.expect(Tok::RParen)?;
            return Ok(t);
        }
        self.error(format!("expected a type, found {}", describe(self.peek())))
    }

    // expressions

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let Tok::Ident(w) = self.peek().clone() else {
            return self.app();
        };
        match w.as_str() {
            "fun" => {
                self.bump();
                self.expect(Tok::LParen)?;
                let x = self.ident()?;
                self.expect(Tok::Colon)?;
                let t = self.ty()?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::Arrow)?;
                let lat = if let Tok::Bracket(ann) = self.peek().clone() {
                    self.bump();
                    match parse_latent(&ann) {
                        Ok(l) => Some(l),
                        Err(m) => return self.error(m),
                    }
                } else {
                    None
                };
                let body = self.expr()?;
                Ok(Expr::Lam(x, t, lat, Box::new(body)))
            }
            "match" => {
                self.bump();
                let s = self.expr()?;
                self.expect_kw("with")?;
                self.expect_kw("inl")?;
                let x = self.ident()?;
                self.expect(Tok::Arrow)?;
                let a = self.expr()?;
                self.expect(Tok::Bar)?;
                self.expect_kw("inr")?;
                let y = self.ident()?;
                self.expect(Tok::Arrow)?;
                let b = self.expr()?;
                Ok(Expr::Match(Box::new(s), x, Box::new(a), y, Box::new(b)))
            }
            "unlabel" => {
                self.bump();
                let a = self.expr()?;
                self.expect_kw("as")?;
                let x = self.ident()?;
                self.expect_kw("in")?;
                let b = self.expr()?;
                Ok(Expr::Unlabel(Box::new(a), x, Box::new(b)))
            }
            "let" | "seq" => {
                self.bump();
                let x = self.ident()?;
                self.expect(Tok::Eq)?;
                let a = self.expr()?;
                self.expect_kw("in")?;
                let b = self.expr()?;
                Ok(if w == "let" { Expr::Let(x, Box::new(a), Box::new(b)) } else { Expr::Seq(x, Box::new(a), Box::new(b)) })
            }
            "fix" => {
                self.bump();
                let f = self.ident()?;
                self.expect(Tok::Colon)?;
                let t = self.ty()?;
                self.expect(Tok::Eq)?;
                let b = self.expr()?;
                Ok(Expr::Fix(f, t, Box::new(b)))
            }
            "try" => {
                self.bump();
                let a = self.expr()?;
                self.expect_kw("catch")?;
                let b = self.expr()?;
                Ok(Expr::TryCatch(Box::new(a), Box::new(b)))
            }
            "inl" | "inr" => {
                self.bump();
                let a = self.app()?;
                self.expect(Tok::Colon)?;
                let t = self.ty()?;
                Ok(if w == "inl" { Expr::Inl(Box::new(a), t) } else { Expr::Inr(Box::new(a), t) })
            }
            "throw" => {
                self.bump();
                self.expect(Tok::Colon)?;
                let t = self.ty()?;
                Ok(Expr::Throw(t))
            }
            _ => self.app(),
        }
    }

    fn starts_prefix(&self) -> bool {
        match self.peek() {
            Tok::LParen => true,
            Tok::Ident(w) => {
                matches!(w.as_str(), "read" | "fst" | "snd" | "label" | "write" | "lift") || !KEYWORDS.contains(&w.as_str())
            }
            _ => false,
        }
    }

    fn app(&mut self) -> Result<Expr, ParseError> {
        let mut f = self.prefix()?;
        while self.starts_prefix() {
            let a = self.prefix()?;
            f = Expr::App(Box::new(f), Box::new(a));
        }
        Ok(f)
    }

    fn prefix(&mut self) -> Result<Expr, ParseError> {
        if let Tok::Ident(w) = self.peek().clone() {
            match w.as_str() {
                "fst" | "snd" => {
                    self.bump();
                    let e = self.prefix()?;
                    return Ok(Expr::Proj(if w == "fst" { 1 } else { 2 }, Box::new(e)));
                }
                "label" => {
                    self.bump();
                    let l = self.label_in_bracket()?;
                    let e = self.prefix()?;
                    return Ok(Expr::LabelE(l, Box::new(e)));
                }
                "write" => {
                    self.bump();
                    let e = self.prefix()?;
                    return Ok(Expr::Write(Box::new(e)));
                }
                "lift" => {
                    self.bump();
                    let e = self.prefix()?;
                    return Ok(Expr::LiftE(Box::new(e)));
                }
                _ => {}
            }
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                if *self.peek() == Tok::RParen {
                    self.bump();
                    return Ok(Expr::UnitVal);
                }
                let a = self.expr()?;
                if *self.peek() == Tok::Comma {
                    self.bump();
                    let b = self.expr()?;
                    self.expect(Tok::RParen)?;
                    return Ok(Expr::Pair(Box::new(a), Box::new(b)));
                }
                self.expect(Tok::RParen)?;
                Ok(a)
            }
            Tok::Ident(w) if w == "read" => {
                self.bump();
                Ok(Expr::Read)
            }
            Tok::Ident(_) => Ok(Expr::Var(self.ident()?)),
            other => self.error(format!("expected an expression, found {}", describe(&other))),
        }
    }

    fn eof(&self) -> Result<(), ParseError> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            self.error(format!("unexpected trailing {}", describe(self.peek())))
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(w) => format!("`{w}`"),
        Tok::Bracket(s) => format!("`[{s}]`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Colon => "`:`".into(),
        Tok::Eq => "`=`".into(),
        Tok::Bar => "`|`".into(),
        Tok::Arrow => "`->`".into(),
        Tok::Plus => "`+`".into(),
        Tok::Star => "`*`".into(),
        Tok::Eof => "end of input".into(),
    }
}

fn parse_latent(ann: &str) -> Result<Latent, String> {
    let ann = ann.trim();
    if let Some(rest) = ann.strip_prefix("pc") {
        let l = rest.trim();
        if l.is_empty() || l.contains(char::is_whitespace) {
            return Err(format!("bad pc annotation `{ann}`"));
        }
        return Ok(Latent::Pc(Label::new(l)));
    }
    if let Some(rest) = ann.strip_prefix("eff") {
        return rest.trim().parse::<EffectSet>().map(Latent::Eff);
    }
    Err(format!("arrow annotation must be `pc L` or `eff {{...}}`, got `{ann}`"))
}

fn parse_with<T>(src: &str, line0: usize, f: impl FnOnce(&mut Parser) -> Result<T, ParseError>) -> Result<T, ParseError> {
    let toks = lex(src, line0)?;
    let mut p = Parser { toks, pos: 0 };
    let v = f(&mut p)?;
    p.eof()?;
    Ok(v)
}

pub fn parse_type(src: &str) -> Result<Type, ParseError> {
    parse_with(src, 1, |p| p.ty())
}

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    parse_with(src, 1, |p| p.expr())
}

/// Reject labels not present in `lat`.
pub fn check_labels_expr(e: &Expr, lat: &LabelLattice) -> Result<(), ParseError> {
    let mut ls = Vec::new();
    e.labels(&mut ls);
    ls.into_iter().find(|l| !lat.contains(l)).map_or(Ok(()), |l| Err(ParseError::UnknownLabel(l)))
}

pub fn check_labels_type(t: &Type, lat: &LabelLattice) -> Result<(), ParseError> {
    let mut ls = Vec::new();
    t.labels(&mut ls);
    ls.into_iter().find(|l| !lat.contains(l)).map_or(Ok(()), |l| Err(ParseError::UnknownLabel(l)))
}

/// Parse a program file. Labels are resolved against `lat` when given.
pub fn parse_program(src: &str, lat: Option<&LabelLattice>) -> Result<Program, ParseError> {
    let mut mode = None;
    let mut sigma = None;
    let mut context = Vec::new();
    let mut policy = Vec::new();
    let mut body = None;
    let lines: Vec<&str> = src.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let lineno = i + 1;
        let line = lines[i].split('#').next().unwrap_or("").trim();
        i += 1;
        if line.is_empty() {
            continue;
        }
        let (word, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let err = |msg: String| ParseError::Syntax { line: lineno, col: 1, msg };
        match word {
            "mode" => mode = Some(rest.trim().parse::<Mode>().map_err(err)?),
            "sigma" => sigma = Some(parse_with(rest, lineno, |p| p.ty())?),
            "var" => {
                let (x, t) = parse_with(rest, lineno, |p| {
                    let x = p.ident()?;
                    p.expect(Tok::Colon)?;
                    Ok((x, p.ty()?))
                })?;
                context.push((x, t));
            }
            "policy" => policy.extend(rest.split_whitespace().map(String::from)),
            "body" => {
                let mut text = rest.to_string();
                for l in &lines[i..] {
                    text.push('\n');
                    text.push_str(l);
                }
                body = Some(parse_with(&text, lineno, |p| p.expr())?);
                break;
            }
            other => return Err(err(format!("unknown directive `{other}`"))),
        }
    }
    let mode = mode.unwrap_or(Mode::StateExn);
    let body = body.ok_or_else(|| ParseError::Syntax { line: lines.len().max(1), col: 1, msg: "missing `body`".into() })?;
    let prog = Program { mode, sigma: sigma.unwrap_or(Type::Unit), context, body, policy };
    if let Some(lat) = lat {
        check_labels_type(&prog.sigma, lat)?;
        for (_, t) in &prog.context {
            check_labels_type(t, lat)?;
        }
        check_labels_expr(&prog.body, lat)?;
    }
    Ok(prog)
}
