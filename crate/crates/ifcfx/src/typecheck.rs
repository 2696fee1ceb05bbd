//! Algorithmic checkers for pure DCC, the pc system and the type-and-effect system.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::effects::{EffectPolicy, EffectSet, Mode};
use crate::labels::Label;
use crate::protection::{protects, System, WrongCalculus};
use crate::syntax::{desugar_with, Expr, Latent, Name, Type};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TypeErrorKind {
    Mismatch,
    ProtectionFail,
    PcTooHigh,
    EffectCompositionFail,
    NotPointed,
    WrongCalculus,
    UnboundVar,
    StateTypeInvalid,
}

impl fmt::Display for TypeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at `{location}`: {details}")]
pub struct TypeError {
    pub kind: TypeErrorKind,
    /// The offending subterm, printed and shortened.
    pub location: String,
    pub details: String,
}

impl TypeError {
    fn new(kind: TypeErrorKind, at: &Expr, details: impl Into<String>) -> Self {
        let mut location = at.to_string();
        if location.chars().count() > 80 {
            location = location.chars().take(77).collect::<String>() + "...";
        }
        TypeError { kind, location, details: details.into() }
    }

    fn at_type(kind: TypeErrorKind, t: &Type, details: impl Into<String>) -> Self {
        TypeError { kind, location: t.to_string(), details: details.into() }
    }
}

impl From<WrongCalculus> for TypeError {
    fn from(w: WrongCalculus) -> Self {
        TypeError::at_type(TypeErrorKind::WrongCalculus, &w.ty, w.to_string())
    }
}

/// How a context entry was introduced. Recursive occurrences of a `fix`-bound name are effectful.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindKind {
    Plain,
    Rec,
}

/// Ordered typing context; later entries shadow earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ctx {
    entries: Vec<(Name, Type, BindKind)>,
}

impl Ctx {
    pub fn new() -> Self {
        Ctx::default()
    }

    pub fn from_pairs(pairs: &[(Name, Type)]) -> Self {
        Ctx { entries: pairs.iter().map(|(x, t)| (x.clone(), t.clone(), BindKind::Plain)).collect() }
    }

    pub fn push(&mut self, x: Name, t: Type, kind: BindKind) {
        self.entries.push((x, t, kind));
    }

    pub fn pop(&mut self) {
        self.entries.pop();
    }

    pub fn lookup(&self, x: &str) -> Option<(&Type, BindKind)> {
        self.entries.iter().rev().find(|(y, _, _)| &**y == x).map(|(_, t, k)| (t, *k))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Name, &Type)> {
        self.entries.iter().map(|(x, t, _)| (x, t))
    }

    pub fn map_types(&self, mut f: impl FnMut(&Type) -> Result<Type, TypeError>) -> Result<Ctx, TypeError> {
        let entries = self.entries.iter().map(|(x, t, k)| Ok((x.clone(), f(t)?, *k))).collect::<Result<Vec<_>, TypeError>>()?;
        Ok(Ctx { entries })
    }
}

/// `⊢ τ ptd`
pub fn is_pointed(t: &Type) -> Result<bool, TypeError> {
    Ok(match t {
        Type::Lift(_) => true,
        Type::Prod(a, b) => is_pointed(a)? && is_pointed(b)?,
        Type::Labeled(_, inner) => is_pointed(inner)?,
        Type::FunPure(_, b) => is_pointed(b)?,
        Type::Unit | Type::Sum(..) => false,
        Type::FunPc(..) | Type::FunEff(..) => {
            return Err(WrongCalculus { system: System::Pure, ty: t.clone() }.into());
        }
    })
}

/// `pc ↦ effect set` table used by the pc-to-effect type translation.
pub fn pc_effects(policy: &EffectPolicy, pc: &Label) -> EffectSet {
    match policy.mode() {
        Mode::StateExn => {
            if policy.leq(pc, policy.l_exn()) {
                EffectSet::RWE
            } else if policy.leq(pc, policy.l_state()) {
                EffectSet::RW
            } else {
                EffectSet::R
            }
        }
        Mode::Pnt => {
            if policy.leq(pc, policy.l_pnt()) {
                EffectSet::PNT
            } else {
                EffectSet::EMPTY
            }
        }
    }
}

/// Translate a pc-system type into the type-and-effect system.
pub fn pc_to_effect_type(policy: &EffectPolicy, t: &Type) -> Result<Type, TypeError> {
    let rec = |t: &Type| pc_to_effect_type(policy, t);
    Ok(match t {
        Type::Unit => Type::Unit,
        Type::Sum(a, b) => Type::sum(rec(a)?, rec(b)?),
        Type::Prod(a, b) => Type::prod(rec(a)?, rec(b)?),
        Type::FunPc(a, pc, b) => Type::fun_eff(rec(a)?, pc_effects(policy, pc), rec(b)?),
        Type::Labeled(l, inner) => Type::labeled(l.clone(), rec(inner)?),
        Type::FunPure(..) | Type::FunEff(..) | Type::Lift(_) => {
            return Err(WrongCalculus { system: System::Pc, ty: t.clone() }.into())
        }
    })
}

/// Rewrite a pc-system term so that every annotation is in the type-and-effect system.
/// Lambda pc annotations become their translated latent effect.
pub fn pc_program_to_effect(policy: &EffectPolicy, e: &Expr) -> Result<Expr, TypeError> {
    let ty = |t: &Type| pc_to_effect_type(policy, t);
    let go = |e: &Expr| pc_program_to_effect(policy, e).map(Box::new);
    Ok(match e {
        Expr::Var(_) | Expr::UnitVal | Expr::Read => e.clone(),
        Expr::Throw(t) => Expr::Throw(ty(t)?),
        Expr::Pair(a, b) => Expr::Pair(go(a)?, go(b)?),
        Expr::Proj(i, a) => Expr::Proj(*i, go(a)?),
        Expr::Inl(a, t) => Expr::Inl(go(a)?, ty(t)?),
        Expr::Inr(a, t) => Expr::Inr(go(a)?, ty(t)?),
        Expr::Match(s, x, a, y, b) => Expr::Match(go(s)?, x.clone(), go(a)?, y.clone(), go(b)?),
        Expr::Lam(x, t, lat, b) => {
            let lat = match lat {
                None => None,
                Some(Latent::Pc(pc)) => Some(Latent::Eff(pc_effects(policy, pc))),
                Some(Latent::Eff(_)) => {
                    return Err(TypeError::new(TypeErrorKind::WrongCalculus, e, "effect annotation in a pc program"))
                }
            };
            Expr::Lam(x.clone(), ty(t)?, lat, go(b)?)
        }
        Expr::App(a, b) => Expr::App(go(a)?, go(b)?),
        Expr::LabelE(l, a) => Expr::LabelE(l.clone(), go(a)?),
        Expr::Unlabel(a, x, b) => Expr::Unlabel(go(a)?, x.clone(), go(b)?),
        Expr::Write(a) => Expr::Write(go(a)?),
        Expr::TryCatch(a, b) => Expr::TryCatch(go(a)?, go(b)?),
        Expr::Fix(f, t, b) => Expr::Fix(f.clone(), ty(t)?, go(b)?),
        Expr::LiftE(a) => Expr::LiftE(go(a)?),
        Expr::Seq(x, a, b) => Expr::Seq(x.clone(), go(a)?, go(b)?),
        Expr::Let(x, a, b) => Expr::Let(x.clone(), go(a)?, go(b)?),
    })
}

/// Program-level check on the state type: first-order and already `ℓState`-protected.
pub fn validate_sigma(policy: &EffectPolicy, sigma: &Type) -> Result<(), TypeError> {
    if !sigma.is_first_order() {
        return Err(TypeError::at_type(TypeErrorKind::StateTypeInvalid, sigma, "state type must not contain functions"));
    }
    if !protects(policy, System::Pure, policy.l_state(), sigma)? {
        return Err(TypeError::at_type(
            TypeErrorKind::StateTypeInvalid,
            sigma,
            format!("{} does not protect the state type", policy.l_state()),
        ));
    }
    Ok(())
}

/// One checker instance; records the type and latent annotation synthesized for every `let`.
pub struct Checker<'a> {
    policy: &'a EffectPolicy,
    sigma: &'a Type,
    lets: RefCell<HashMap<usize, (Type, Option<Latent>)>>,
}

fn node_key(e: &Expr) -> usize {
    e as *const Expr as usize
}

impl<'a> Checker<'a> {
    pub fn new(policy: &'a EffectPolicy, sigma: &'a Type) -> Self {
        Checker { policy, sigma, lets: RefCell::new(HashMap::new()) }
    }

    fn leq(&self, a: &Label, b: &Label) -> bool {
        self.policy.leq(a, b)
    }

    fn well_formed(&self, system: System, t: &Type, at: &Expr) -> Result<(), TypeError> {
        let bad = |msg: String| Err(TypeError::new(TypeErrorKind::WrongCalculus, at, msg));
        let mut labels = Vec::new();
        t.labels(&mut labels);
        if let Some(l) = labels.iter().find(|l| !self.policy.lattice().contains(l)) {
            return Err(TypeError::new(TypeErrorKind::Mismatch, at, format!("unknown label `{l}`")));
        }
        fn walk(t: &Type, f: &mut dyn FnMut(&Type) -> Option<String>) -> Option<String> {
            if let Some(m) = f(t) {
                return Some(m);
            }
            match t {
                Type::Unit => None,
                Type::Sum(a, b) | Type::Prod(a, b) | Type::FunPure(a, b) | Type::FunPc(a, _, b) | Type::FunEff(a, _, b) => {
                    walk(a, f).or_else(|| walk(b, f))
                }
                Type::Labeled(_, i) | Type::Lift(i) => walk(i, f),
            }
        }
        let alphabet = self.policy.mode().alphabet();
        let problem = walk(t, &mut |t| match (system, t) {
            (System::Pure, Type::FunPc(..) | Type::FunEff(..)) => Some(format!("`{t}` is not a pure type")),
            (System::Pc, Type::FunPure(..) | Type::FunEff(..) | Type::Lift(_)) => Some(format!("`{t}` is not a pc-system type")),
            (System::Effect, Type::FunPure(..) | Type::FunPc(..) | Type::Lift(_)) => {
                Some(format!("`{t}` is not a type-and-effect type"))
            }
            (System::Effect, Type::FunEff(_, eps, _)) if !eps.is_subset(alphabet) => {
                Some(format!("effect {eps} is outside the {} alphabet", self.policy.mode().keyword()))
            }
            _ => None,
        });
        match problem {
            Some(m) => bad(m),
            None => Ok(()),
        }
    }

    fn expect_eq(&self, expected: &Type, found: &Type, at: &Expr) -> Result<(), TypeError> {
        if expected == found {
            Ok(())
        } else {
            Err(TypeError::new(TypeErrorKind::Mismatch, at, format!("expected `{expected}`, found `{found}`")))
        }
    }

    fn check_label(&self, l: &Label, at: &Expr) -> Result<(), TypeError> {
        if self.policy.lattice().contains(l) {
            Ok(())
        } else {
            Err(TypeError::new(TypeErrorKind::Mismatch, at, format!("unknown label `{l}`")))
        }
    }

    fn wrong(&self, at: &Expr, system: System) -> TypeError {
        TypeError::new(
            TypeErrorKind::WrongCalculus,
            at,
            format!("construct not available in the {system} calculus ({} mode)", self.policy.mode().keyword()),
        )
    }

    fn sum_parts<'t>(&self, t: &'t Type, at: &Expr) -> Result<(&'t Type, &'t Type), TypeError> {
        match t {
            Type::Sum(a, b) => Ok((a, b)),
            _ => Err(TypeError::new(TypeErrorKind::Mismatch, at, format!("expected a sum type, found `{t}`"))),
        }
    }

    fn protect(&self, system: System, l: &Label, t: &Type, at: &Expr) -> Result<(), TypeError> {
        if protects(self.policy, system, l, t)? {
            Ok(())
        } else {
            Err(TypeError::new(TypeErrorKind::ProtectionFail, at, format!("{l} does not protect `{t}`")))
        }
    }

    // ------------------------------------------------------------ pure

    pub fn pure(&self, ctx: &mut Ctx, e: &Expr) -> Result<Type, TypeError> {
        use TypeErrorKind as K;
        match e {
            Expr::Var(x) => ctx
                .lookup(x)
                .map(|(t, _)| t.clone())
                .ok_or_else(|| TypeError::new(K::UnboundVar, e, format!("`{x}` is not bound"))),
            Expr::UnitVal => Ok(Type::Unit),
            Expr::Pair(a, b) => Ok(Type::prod(self.pure(ctx, a)?, self.pure(ctx, b)?)),
            Expr::Proj(i, a) => match self.pure(ctx, a)? {
                Type::Prod(t1, t2) => Ok(if *i == 1 { *t1 } else { *t2 }),
                t => Err(TypeError::new(K::Mismatch, e, format!("expected a product, found `{t}`"))),
            },
            Expr::Inl(a, t) | Expr::Inr(a, t) => {
                self.well_formed(System::Pure, t, e)?;
                let (l, r) = self.sum_parts(t, e)?;
                let found = self.pure(ctx, a)?;
                self.expect_eq(if matches!(e, Expr::Inl(..)) { l } else { r }, &found, e)?;
                Ok(t.clone())
            }
            Expr::Match(s, x, a, y, b) => {
                let ts = self.pure(ctx, s)?;
                let (t1, t2) = self.sum_parts(&ts, s)?;
                ctx.push(x.clone(), t1.clone(), BindKind::Plain);
                let ta = self.pure(ctx, a);
                ctx.pop();
                ctx.push(y.clone(), t2.clone(), BindKind::Plain);
                let tb = self.pure(ctx, b);
                ctx.pop();
                let (ta, tb) = (ta?, tb?);
                self.expect_eq(&ta, &tb, e)?;
                Ok(ta)
            }
            Expr::Lam(x, t, lat, body) => {
                if lat.is_some() {
                    return Err(TypeError::new(K::WrongCalculus, e, "latent annotation on a pure lambda"));
                }
                self.well_formed(System::Pure, t, e)?;
                ctx.push(x.clone(), t.clone(), BindKind::Plain);
                let tb = self.pure(ctx, body);
                ctx.pop();
                Ok(Type::fun(t.clone(), tb?))
            }
            Expr::App(f, a) => {
                let tf = self.pure(ctx, f)?;
                let ta = self.pure(ctx, a)?;
                match tf {
                    Type::FunPure(t1, t2) => {
                        self.expect_eq(&t1, &ta, e)?;
                        Ok(*t2)
                    }
                    t => Err(TypeError::new(K::Mismatch, f, format!("expected a function, found `{t}`"))),
                }
            }
            Expr::LabelE(l, a) => {
                self.check_label(l, e)?;
                Ok(Type::labeled(l.clone(), self.pure(ctx, a)?))
            }
            Expr::Unlabel(a, x, body) => {
                let (l, t1) = match self.pure(ctx, a)? {
                    Type::Labeled(l, t1) => (l, *t1),
                    t => return Err(TypeError::new(K::Mismatch, a, format!("expected a labeled type, found `{t}`"))),
                };
                ctx.push(x.clone(), t1, BindKind::Plain);
                let t2 = self.pure(ctx, body);
                ctx.pop();
                let t2 = t2?;
                self.protect(System::Pure, &l, &t2, e)?;
                Ok(t2)
            }
            Expr::Fix(f, t, body) => {
                self.well_formed(System::Pure, t, e)?;
                ctx.push(f.clone(), t.clone(), BindKind::Plain);
                let tb = self.pure(ctx, body);
                ctx.pop();
                self.expect_eq(t, &tb?, e)?;
                if !is_pointed(t)? {
                    return Err(TypeError::new(K::NotPointed, e, format!("`{t}` is not pointed")));
                }
                Ok(t.clone())
            }
            Expr::LiftE(a) => Ok(Type::lift(self.pure(ctx, a)?)),
            Expr::Seq(x, a, body) => {
                let t1 = match self.pure(ctx, a)? {
                    Type::Lift(t1) => *t1,
                    t => return Err(TypeError::new(K::Mismatch, a, format!("expected a Lift type, found `{t}`"))),
                };
                ctx.push(x.clone(), t1, BindKind::Plain);
                let t2 = self.pure(ctx, body);
                ctx.pop();
                let t2 = t2?;
                if !is_pointed(&t2)? {
                    return Err(TypeError::new(K::NotPointed, e, format!("`{t2}` is not pointed")));
                }
                Ok(t2)
            }
            Expr::Let(x, a, body) => {
                let t1 = self.pure(ctx, a)?;
                self.lets.borrow_mut().insert(node_key(e), (t1.clone(), None));
                ctx.push(x.clone(), t1, BindKind::Plain);
                let t2 = self.pure(ctx, body);
                ctx.pop();
                t2
            }
            Expr::Read | Expr::Write(_) | Expr::Throw(_) | Expr::TryCatch(..) => Err(self.wrong(e, System::Pure)),
        }
    }

    // ------------------------------------------------------------ pc

    pub fn pc(&self, ctx: &mut Ctx, pc: &Label, e: &Expr) -> Result<Type, TypeError> {
        use TypeErrorKind as K;
        let mode = self.policy.mode();
        let too_high =
            |bound: &Label, what: &str| TypeError::new(K::PcTooHigh, e, format!("{what} needs pc ⊑ {bound}, but pc = {pc}"));
        match e {
            Expr::Var(x) => match ctx.lookup(x) {
                None => Err(TypeError::new(K::UnboundVar, e, format!("`{x}` is not bound"))),
                Some((t, BindKind::Rec)) => {
                    if !self.leq(pc, self.policy.l_pnt()) {
                        return Err(too_high(self.policy.l_pnt(), "a recursive call"));
                    }
                    Ok(t.clone())
                }
                Some((t, BindKind::Plain)) => Ok(t.clone()),
            },
            Expr::UnitVal => Ok(Type::Unit),
            Expr::Pair(a, b) => Ok(Type::prod(self.pc(ctx, pc, a)?, self.pc(ctx, pc, b)?)),
            Expr::Proj(i, a) => match self.pc(ctx, pc, a)? {
                Type::Prod(t1, t2) => Ok(if *i == 1 { *t1 } else { *t2 }),
                t => Err(TypeError::new(K::Mismatch, e, format!("expected a product, found `{t}`"))),
            },
            Expr::Inl(a, t) | Expr::Inr(a, t) => {
                self.well_formed(System::Pc, t, e)?;
                let (l, r) = self.sum_parts(t, e)?;
                let found = self.pc(ctx, pc, a)?;
                self.expect_eq(if matches!(e, Expr::Inl(..)) { l } else { r }, &found, e)?;
                Ok(t.clone())
            }
            Expr::Match(s, x, a, y, b) => {
                let ts = self.pc(ctx, pc, s)?;
                let (t1, t2) = self.sum_parts(&ts, s)?;
                ctx.push(x.clone(), t1.clone(), BindKind::Plain);
                let ta = self.pc(ctx, pc, a);
                ctx.pop();
                let ta = ta?;
                ctx.push(y.clone(), t2.clone(), BindKind::Plain);
                let tb = self.pc(ctx, pc, b);
                ctx.pop();
                self.expect_eq(&ta, &tb?, e)?;
                Ok(ta)
            }
            Expr::Lam(x, t, lat, body) => {
                self.well_formed(System::Pc, t, e)?;
                let latent = match lat {
                    Some(Latent::Pc(l)) => {
                        self.check_label(l, e)?;
                        l.clone()
                    }
                    Some(Latent::Eff(_)) => {
                        return Err(TypeError::new(K::WrongCalculus, e, "effect annotation in the pc system"))
                    }
                    None => self.greatest_pc(ctx, x, t, body)?,
                };
                ctx.push(x.clone(), t.clone(), BindKind::Plain);
                let tb = self.pc(ctx, &latent, body);
                ctx.pop();
                Ok(Type::fun_pc(t.clone(), latent, tb?))
            }
            Expr::App(f, a) => {
                let tf = self.pc(ctx, pc, f)?;
                let ta = self.pc(ctx, pc, a)?;
                match tf {
                    Type::FunPc(t1, pc2, t2) => {
                        self.expect_eq(&t1, &ta, e)?;
                        if !self.leq(pc, &pc2) {
                            return Err(too_high(&pc2, "calling this function"));
                        }
                        Ok(*t2)
                    }
                    t => Err(TypeError::new(K::Mismatch, f, format!("expected a pc function, found `{t}`"))),
                }
            }
            Expr::LabelE(l, a) => {
                self.check_label(l, e)?;
                Ok(Type::labeled(l.clone(), self.pc(ctx, pc, a)?))
            }
            Expr::Unlabel(a, x, body) => {
                let (l, t1) = match self.pc(ctx, pc, a)? {
                    Type::Labeled(l, t1) => (l, *t1),
                    t => return Err(TypeError::new(K::Mismatch, a, format!("expected a labeled type, found `{t}`"))),
                };
                let raised = self.policy.lattice().join(pc, &l).expect("labels are lattice members");
                ctx.push(x.clone(), t1, BindKind::Plain);
                let t2 = self.pc(ctx, &raised, body);
                ctx.pop();
                let t2 = t2?;
                self.protect(System::Pc, &l, &t2, e)?;
                Ok(t2)
            }
            Expr::Read if mode == Mode::StateExn => Ok(self.sigma.clone()),
            Expr::Write(a) if mode == Mode::StateExn => {
                let t = self.pc(ctx, pc, a)?;
                self.expect_eq(self.sigma, &t, e)?;
                if !self.leq(pc, self.policy.l_state()) {
                    return Err(too_high(self.policy.l_state(), "write"));
                }
                Ok(Type::Unit)
            }
            Expr::Throw(t) if mode == Mode::StateExn => {
                self.well_formed(System::Pc, t, e)?;
                if !self.leq(pc, self.policy.l_exn()) {
                    return Err(too_high(self.policy.l_exn(), "throw"));
                }
                Ok(t.clone())
            }
            Expr::TryCatch(a, b) if mode == Mode::StateExn => {
                let ta = self.pc(ctx, pc, a)?;
                let tb = self.pc(ctx, pc, b)?;
                self.expect_eq(&ta, &tb, e)?;
                self.protect(System::Pc, self.policy.l_exn(), &ta, e)?;
                Ok(ta)
            }
            Expr::Fix(f, t, body) if mode == Mode::Pnt => {
                self.well_formed(System::Pc, t, e)?;
                if !self.leq(pc, self.policy.l_pnt()) {
                    return Err(too_high(self.policy.l_pnt(), "fix"));
                }
                ctx.push(f.clone(), t.clone(), BindKind::Rec);
                let tb = self.pc(ctx, pc, body);
                ctx.pop();
                self.expect_eq(t, &tb?, e)?;
                Ok(t.clone())
            }
            Expr::Let(x, a, body) => {
                let t1 = self.pc(ctx, pc, a)?;
                self.lets.borrow_mut().insert(node_key(e), (t1.clone(), Some(Latent::Pc(pc.clone()))));
                ctx.push(x.clone(), t1, BindKind::Plain);
                let t2 = self.pc(ctx, pc, body);
                ctx.pop();
                t2
            }
            _ => Err(self.wrong(e, System::Pc)),
        }
    }

    /// The greatest pc at which an unannotated lambda body checks (a maximal one if the
    /// successful pcs have no greatest element).
    fn greatest_pc(&self, ctx: &mut Ctx, x: &Name, t: &Type, body: &Expr) -> Result<Label, TypeError> {
        let lat = self.policy.lattice();
        let mut ok = Vec::new();
        let mut first_err = None;
        for l in lat.elements() {
            ctx.push(x.clone(), t.clone(), BindKind::Plain);
            let r = self.pc(ctx, l, body);
            ctx.pop();
            match r {
                Ok(_) => ok.push(l.clone()),
                Err(err) => {
                    if first_err.is_none() || lat.minimal_elements().contains(l) {
                        first_err = Some(err);
                    }
                }
            }
        }
        if ok.is_empty() {
            return Err(first_err.expect("lattice is nonempty"));
        }
        let join = ok.iter().skip(1).fold(ok[0].clone(), |acc, l| lat.join(&acc, l).expect("members"));
        if ok.contains(&join) {
            return Ok(join);
        }
        let maximal = ok
            .iter()
            .find(|a| ok.iter().all(|b| *b == **a || !lat.leq(a, b)))
            .expect("finite nonempty set has a maximal element");
        Ok(maximal.clone())
    }

    // ------------------------------------------------------------ effects

    fn composes(&self, parts: &[EffectSet], at: &Expr) -> Result<EffectSet, TypeError> {
        let whole = EffectSet::union_all(parts);
        if self.policy.compose(parts, whole) {
            Ok(whole)
        } else {
            Err(TypeError::new(
                TypeErrorKind::EffectCompositionFail,
                at,
                format!("effects {} do not compose", parts.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ; ")),
            ))
        }
    }

    pub fn effect(&self, ctx: &mut Ctx, e: &Expr) -> Result<(Type, EffectSet), TypeError> {
        use TypeErrorKind as K;
        let mode = self.policy.mode();
        match e {
            Expr::Var(x) => match ctx.lookup(x) {
                None => Err(TypeError::new(K::UnboundVar, e, format!("`{x}` is not bound"))),
                Some((t, BindKind::Rec)) => Ok((t.clone(), EffectSet::PNT)),
                Some((t, BindKind::Plain)) => Ok((t.clone(), EffectSet::EMPTY)),
            },
            Expr::UnitVal => Ok((Type::Unit, EffectSet::EMPTY)),
            Expr::Pair(a, b) => {
                let (ta, ea) = self.effect(ctx, a)?;
                let (tb, eb) = self.effect(ctx, b)?;
                Ok((Type::prod(ta, tb), self.composes(&[ea, eb], e)?))
            }
            Expr::Proj(i, a) => match self.effect(ctx, a)? {
                (Type::Prod(t1, t2), eps) => Ok((if *i == 1 { *t1 } else { *t2 }, eps)),
                (t, _) => Err(TypeError::new(K::Mismatch, e, format!("expected a product, found `{t}`"))),
            },
            Expr::Inl(a, t) | Expr::Inr(a, t) => {
                self.well_formed(System::Effect, t, e)?;
                let (l, r) = self.sum_parts(t, e)?;
                let (found, eps) = self.effect(ctx, a)?;
                self.expect_eq(if matches!(e, Expr::Inl(..)) { l } else { r }, &found, e)?;
                Ok((t.clone(), eps))
            }
            Expr::Match(s, x, a, y, b) => {
                let (ts, es) = self.effect(ctx, s)?;
                let (t1, t2) = self.sum_parts(&ts, s)?;
                ctx.push(x.clone(), t1.clone(), BindKind::Plain);
                let ra = self.effect(ctx, a);
                ctx.pop();
                let (ta, ea) = ra?;
                ctx.push(y.clone(), t2.clone(), BindKind::Plain);
                let rb = self.effect(ctx, b);
                ctx.pop();
                let (tb, eb) = rb?;
                self.expect_eq(&ta, &tb, e)?;
                Ok((ta, self.composes(&[es, ea.union(eb)], e)?))
            }
            Expr::Lam(x, t, lat, body) => {
                self.well_formed(System::Effect, t, e)?;
                ctx.push(x.clone(), t.clone(), BindKind::Plain);
                let rb = self.effect(ctx, body);
                ctx.pop();
                let (tb, eb) = rb?;
                let latent = match lat {
                    None => eb,
                    Some(Latent::Eff(declared)) => {
                        if !declared.is_subset(mode.alphabet()) {
                            return Err(TypeError::new(
                                K::WrongCalculus,
                                e,
                                format!("effect {declared} is outside the alphabet"),
                            ));
                        }
                        if !self.policy.compose(&[eb], *declared) {
                            return Err(TypeError::new(
                                K::Mismatch,
                                e,
                                format!("body has effect {eb}, not within the declared {declared}"),
                            ));
                        }
                        *declared
                    }
                    Some(Latent::Pc(_)) => {
                        return Err(TypeError::new(K::WrongCalculus, e, "pc annotation in the type-and-effect system"))
                    }
                };
                Ok((Type::fun_eff(t.clone(), latent, tb), EffectSet::EMPTY))
            }
            Expr::App(f, a) => {
                let (tf, ef) = self.effect(ctx, f)?;
                let (ta, ea) = self.effect(ctx, a)?;
                match tf {
                    Type::FunEff(t1, el, t2) => {
                        self.expect_eq(&t1, &ta, e)?;
                        Ok((*t2, self.composes(&[ef, ea, el], e)?))
                    }
                    t => Err(TypeError::new(K::Mismatch, f, format!("expected an effectful function, found `{t}`"))),
                }
            }
            Expr::LabelE(l, a) => {
                self.check_label(l, e)?;
                let (t, eps) = self.effect(ctx, a)?;
                Ok((Type::labeled(l.clone(), t), eps))
            }
            Expr::Unlabel(a, x, body) => {
                let (l, t1, e1) = match self.effect(ctx, a)? {
                    (Type::Labeled(l, t1), e1) => (l, *t1, e1),
                    (t, _) => return Err(TypeError::new(K::Mismatch, a, format!("expected a labeled type, found `{t}`"))),
                };
                ctx.push(x.clone(), t1, BindKind::Plain);
                let rb = self.effect(ctx, body);
                ctx.pop();
                let (t2, e2) = rb?;
                self.protect(System::Effect, &l, &t2, e)?;
                let bound = self.policy.effect_label(e2);
                if !self.leq(&l, &bound) {
                    return Err(TypeError::new(
                        K::ProtectionFail,
                        e,
                        format!("{l} ⋢ {bound}, the label of the body's effect {e2}"),
                    ));
                }
                Ok((t2, self.composes(&[e1, e2], e)?))
            }
            Expr::Read if mode == Mode::StateExn => Ok((self.sigma.clone(), EffectSet::R)),
            Expr::Write(a) if mode == Mode::StateExn => {
                let (t, eps) = self.effect(ctx, a)?;
                self.expect_eq(self.sigma, &t, e)?;
                Ok((Type::Unit, self.composes(&[eps, EffectSet::W], e)?))
            }
            Expr::Throw(t) if mode == Mode::StateExn => {
                self.well_formed(System::Effect, t, e)?;
                Ok((t.clone(), EffectSet::E))
            }
            Expr::TryCatch(a, b) if mode == Mode::StateExn => {
                let (ta, ea) = self.effect(ctx, a)?;
                let (tb, eb) = self.effect(ctx, b)?;
                self.expect_eq(&ta, &tb, e)?;
                self.protect(System::Effect, self.policy.l_exn(), &ta, e)?;
                let rest = ea.minus(EffectSet::E);
                let with_e = rest.union(EffectSet::E);
                if !self.policy.compose(&[with_e, eb], with_e.union(eb)) {
                    return Err(TypeError::new(
                        K::EffectCompositionFail,
                        e,
                        format!("handler effect {eb} cannot follow a possible exception"),
                    ));
                }
                Ok((ta, rest.union(eb)))
            }
            Expr::Fix(f, t, body) if mode == Mode::Pnt => {
                self.well_formed(System::Effect, t, e)?;
                ctx.push(f.clone(), t.clone(), BindKind::Rec);
                let rb = self.effect(ctx, body);
                ctx.pop();
                let (tb, _) = rb?;
                self.expect_eq(t, &tb, e)?;
                Ok((t.clone(), EffectSet::PNT))
            }
            Expr::Let(x, a, body) => {
                let (t1, e1) = self.effect(ctx, a)?;
                ctx.push(x.clone(), t1.clone(), BindKind::Plain);
                let rb = self.effect(ctx, body);
                ctx.pop();
                let (t2, e2) = rb?;
                self.lets.borrow_mut().insert(node_key(e), (t1, Some(Latent::Eff(e2))));
                Ok((t2, self.composes(&[e1, e2], e)?))
            }
            _ => Err(self.wrong(e, System::Effect)),
        }
    }

    /// Rebuild `e` without `let`, using the annotations recorded by the last check of `e`.
    pub fn desugar_checked(&self, e: &Expr) -> Expr {
        let lets = self.lets.borrow();
        desugar_with(e, &mut |node| lets.get(&node_key(node)).cloned().expect("every let was visited by the checker"))
    }
}

pub fn check_pure(policy: &EffectPolicy, ctx: &Ctx, e: &Expr) -> Result<Type, TypeError> {
    let unit = Type::Unit;
    Checker::new(policy, &unit).pure(&mut ctx.clone(), e)
}

pub fn check_pc(policy: &EffectPolicy, sigma: &Type, ctx: &Ctx, pc: &Label, e: &Expr) -> Result<Type, TypeError> {
    if !policy.lattice().contains(pc) {
        return Err(TypeError::new(TypeErrorKind::Mismatch, e, format!("unknown pc label `{pc}`")));
    }
    Checker::new(policy, sigma).pc(&mut ctx.clone(), pc, e)
}

/// Type and principal (least) effect.
pub fn infer_effect(policy: &EffectPolicy, sigma: &Type, ctx: &Ctx, e: &Expr) -> Result<(Type, EffectSet), TypeError> {
    Checker::new(policy, sigma).effect(&mut ctx.clone(), e)
}

/// Check `e` at a given effect (Variance).
pub fn check_effect(policy: &EffectPolicy, sigma: &Type, ctx: &Ctx, e: &Expr, eps: EffectSet) -> Result<Type, TypeError> {
    let (t, min) = infer_effect(policy, sigma, ctx, e)?;
    if policy.compose(&[min], eps) {
        Ok(t)
    } else {
        Err(TypeError::new(TypeErrorKind::Mismatch, e, format!("principal effect {min} is not within {eps}")))
    }
}

/// Check `e` in `system` and return it with every `let` replaced by an annotated
/// application. `pc` is only consulted by the pc system.
pub fn desugar(policy: &EffectPolicy, sigma: &Type, system: System, ctx: &Ctx, pc: &Label, e: &Expr) -> Result<Expr, TypeError> {
    let checker = Checker::new(policy, sigma);
    let mut ctx = ctx.clone();
    match system {
        System::Pure => checker.pure(&mut ctx, e).map(|_| ()),
        System::Pc => checker.pc(&mut ctx, pc, e).map(|_| ()),
        System::Effect => checker.effect(&mut ctx, e).map(|_| ()),
    }?;
    Ok(checker.desugar_checked(e))
}
