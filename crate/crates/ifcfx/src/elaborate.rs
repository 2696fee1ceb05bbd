//! Indexed monads over pure DCC and the capture translation of effectful programs.

use thiserror::Error;

use crate::effects::{Effect, EffectPolicy, EffectSet, Mode};
use crate::labels::Label;
use crate::syntax::build::*;
use crate::syntax::{fresh_name, Expr, Latent, Name, Type};
use crate::typecheck::{check_pure, BindKind, Checker, Ctx, TypeError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElabError {
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("no coercion from {from} to {to}")]
    InvalidCoercion { from: EffectSet, to: EffectSet },
    #[error("translation produced an ill-typed term: {0}")]
    InternalIllTyped(String),
}

/// Representative effect set whose monad is used for `eps`: write implies read.
pub fn normalize(eps: EffectSet) -> EffectSet {
    if eps.contains(Effect::W) {
        eps.union(EffectSet::R)
    } else {
        eps
    }
}

/// Monad machinery for one policy and state type.
#[derive(Debug, Clone)]
pub struct Elab<'a> {
    policy: &'a EffectPolicy,
    sigma: Type,
}

fn v(n: &Name) -> Expr {
    Expr::Var(n.clone())
}

fn lam_n(x: &Name, t: Type, body: Expr) -> Expr {
    Expr::Lam(x.clone(), t, None, Box::new(body))
}

impl<'a> Elab<'a> {
    pub fn new(policy: &'a EffectPolicy, sigma: &Type) -> Self {
        Elab { policy, sigma: sigma.clone() }
    }

    pub fn policy(&self) -> &EffectPolicy {
        self.policy
    }

    pub fn sigma(&self) -> &Type {
        &self.sigma
    }

    fn l_exn(&self) -> Label {
        self.policy.l_exn().clone()
    }

    fn exn_type(&self, t: &Type) -> Type {
        Type::labeled(self.l_exn(), Type::sum(Type::Unit, t.clone()))
    }

    /// `M_ε(τ)`.
    pub fn monad_type(&self, eps: EffectSet, t: &Type) -> Type {
        let s = self.sigma.clone();
        let n = normalize(eps);
        if n == EffectSet::EMPTY {
            t.clone()
        } else if n == EffectSet::R {
            Type::fun(s, t.clone())
        } else if n == EffectSet::E {
            self.exn_type(t)
        } else if n == EffectSet::RW {
            Type::fun(s.clone(), Type::prod(t.clone(), s))
        } else if n == EffectSet::RE {
            Type::fun(s, self.exn_type(t))
        } else if n == EffectSet::RWE {
            Type::fun(s.clone(), Type::prod(self.exn_type(t), s))
        } else {
            // PNT
            Type::lift(t.clone())
        }
    }

    /// Pure counterpart of a type-and-effect type.
    pub fn pure_type(&self, t: &Type) -> Type {
        match t {
            Type::Unit => Type::Unit,
            Type::Sum(a, b) => Type::sum(self.pure_type(a), self.pure_type(b)),
            Type::Prod(a, b) => Type::prod(self.pure_type(a), self.pure_type(b)),
            Type::FunEff(a, eps, b) => Type::fun(self.pure_type(a), self.monad_type(*eps, &self.pure_type(b))),
            Type::FunPure(a, b) => Type::fun(self.pure_type(a), self.pure_type(b)),
            Type::FunPc(..) => panic!("pc types must be translated to effect types first"),
            Type::Labeled(l, i) => Type::labeled(l.clone(), self.pure_type(i)),
            Type::Lift(i) => Type::lift(self.pure_type(i)),
        }
    }

    /// Pure context for an effect-system context; recursive bindings are lifted.
    pub fn pure_ctx(&self, ctx: &Ctx) -> Ctx {
        let mut out = Ctx::new();
        for (x, t) in ctx.entries() {
            out.push(x.clone(), self.pure_type(t), BindKind::Plain);
        }
        out
    }

    fn throw_val(&self, t: &Type) -> Expr {
        label(self.l_exn(), inl(Expr::UnitVal, Type::sum(Type::Unit, t.clone())))
    }

    fn eta_e(&self, x: Expr, t: &Type) -> Expr {
        label(self.l_exn(), inr(x, Type::sum(Type::Unit, t.clone())))
    }

    /// `let (x, s') = m in body`, encoded with projections.
    fn let_pair(&self, m: Expr, x: &Name, tx: &Type, s2: &Name, body: Expr) -> Expr {
        let p = fresh_name("p");
        let pt = Type::prod(tx.clone(), self.sigma.clone());
        app(lam_n(&p, pt, app2(lam_n(x, tx.clone(), lam_n(s2, self.sigma.clone(), body)), fst(v(&p)), snd(v(&p)))), m)
    }

    /// `η_ε : τ → M_ε(τ)` as a closed term.
    pub fn eta(&self, eps: EffectSet, t: &Type) -> Expr {
        let x = fresh_name("v");
        let s = fresh_name("s");
        let n = normalize(eps);
        let sig = self.sigma.clone();
        let body = if n == EffectSet::EMPTY {
            v(&x)
        } else if n == EffectSet::R {
            lam_n(&s, sig, v(&x))
        } else if n == EffectSet::E {
            self.eta_e(v(&x), t)
        } else if n == EffectSet::RW {
            lam_n(&s, sig, pair(v(&x), v(&s)))
        } else if n == EffectSet::RE {
            lam_n(&s, sig, self.eta_e(v(&x), t))
        } else if n == EffectSet::RWE {
            lam_n(&s, sig, pair(self.eta_e(v(&x), t), v(&s)))
        } else {
            lift(v(&x))
        };
        lam_n(&x, t.clone(), body)
    }

    /// `bind_ε : M_ε(τ₁) → (τ₁ → M_ε(τ₂)) → M_ε(τ₂)` as a closed term.
    pub fn bind(&self, eps: EffectSet, t1: &Type, t2: &Type) -> Expr {
        let m = fresh_name("m");
        let f = fresh_name("f");
        let s = fresh_name("s");
        let n = normalize(eps);
        let sig = self.sigma.clone();
        let x = fresh_name("x");
        let y = fresh_name("y");
        let u = fresh_name("u");
        let body = if n == EffectSet::EMPTY {
            app(v(&f), v(&m))
        } else if n == EffectSet::R {
            lam_n(&s, sig, app2(v(&f), app(v(&m), v(&s)), v(&s)))
        } else if n == EffectSet::E {
            Expr::Unlabel(
                Box::new(v(&m)),
                x.clone(),
                Box::new(Expr::Match(
                    Box::new(v(&x)),
                    u.clone(),
                    Box::new(self.throw_val(t2)),
                    y.clone(),
                    Box::new(app(v(&f), v(&y))),
                )),
            )
        } else if n == EffectSet::RW {
            let s2 = fresh_name("s");
            lam_n(&s, sig, self.let_pair(app(v(&m), v(&s)), &x, t1, &s2, app2(v(&f), v(&x), v(&s2))))
        } else if n == EffectSet::RE {
            lam_n(
                &s,
                sig,
                Expr::Unlabel(
                    Box::new(app(v(&m), v(&s))),
                    x.clone(),
                    Box::new(Expr::Match(
                        Box::new(v(&x)),
                        u.clone(),
                        Box::new(self.throw_val(t2)),
                        y.clone(),
                        Box::new(app2(v(&f), v(&y), v(&s))),
                    )),
                ),
            )
        } else if n == EffectSet::RWE {
            let s2 = fresh_name("s");
            let z = fresh_name("z");
            let inner = Expr::Unlabel(
                Box::new(v(&x)),
                y.clone(),
                Box::new(Expr::Match(
                    Box::new(v(&y)),
                    u.clone(),
                    Box::new(pair(self.throw_val(t2), v(&s2))),
                    z.clone(),
                    Box::new(app2(v(&f), v(&z), v(&s2))),
                )),
            );
            lam_n(&s, sig, self.let_pair(app(v(&m), v(&s)), &x, &self.exn_type(t1), &s2, inner))
        } else {
            Expr::Seq(x.clone(), Box::new(v(&m)), Box::new(app(v(&f), v(&x))))
        };
        lam_n(&m, self.monad_type(eps, t1), lam_n(&f, Type::fun(t1.clone(), self.monad_type(eps, t2)), body))
    }

    /// `coerce_{ε₁⊑ε₂} : M_ε₁(τ) → M_ε₂(τ)` as a closed term.
    pub fn coerce(&self, from: EffectSet, to: EffectSet, t: &Type) -> Result<Expr, ElabError> {
        let (a, b) = (normalize(from), normalize(to));
        if !a.is_subset(b) {
            return Err(ElabError::InvalidCoercion { from, to });
        }
        let m = fresh_name("m");
        let mt = self.monad_type(a, t);
        if a == b {
            return Ok(lam_n(&m, mt, v(&m)));
        }
        if a == EffectSet::EMPTY {
            return Ok(self.eta(b, t));
        }
        let s = fresh_name("s");
        let sig = self.sigma.clone();
        let ms = app(v(&m), v(&s));
        let body = match (a, b) {
            (EffectSet::R, EffectSet::RW) => lam_n(&s, sig, pair(ms, v(&s))),
            (EffectSet::R, EffectSet::RE) => lam_n(&s, sig, self.eta_e(ms, t)),
            (EffectSet::R, EffectSet::RWE) => lam_n(&s, sig, pair(self.eta_e(ms, t), v(&s))),
            (EffectSet::E, EffectSet::RE) => lam_n(&s, sig, v(&m)),
            (EffectSet::E, EffectSet::RWE) => lam_n(&s, sig, pair(v(&m), v(&s))),
            (EffectSet::RW, EffectSet::RWE) => {
                let x = fresh_name("x");
                let s2 = fresh_name("s");
                lam_n(&s, sig, self.let_pair(ms, &x, t, &s2, pair(self.eta_e(v(&x), t), v(&s2))))
            }
            (EffectSet::RE, EffectSet::RWE) => lam_n(&s, sig, pair(ms, v(&s))),
            _ => return Err(ElabError::InvalidCoercion { from, to }),
        };
        Ok(lam_n(&m, mt, body))
    }

    /// `coerce` applied to `m`, skipping the identity.
    fn coerce_app(&self, from: EffectSet, to: EffectSet, t: &Type, m: Expr) -> Result<Expr, ElabError> {
        if normalize(from) == normalize(to) {
            Ok(m)
        } else {
            Ok(app(self.coerce(from, to, t)?, m))
        }
    }

    /// `bind_ε m (λx:τ₁. body)`
    fn bind_app(&self, eps: EffectSet, t1: &Type, t2: &Type, m: Expr, x: &Name, body: Expr) -> Expr {
        app2(self.bind(eps, t1, t2), m, lam_n(x, t1.clone(), body))
    }

    fn eta_app(&self, eps: EffectSet, t: &Type, e: Expr) -> Expr {
        if normalize(eps).is_empty() {
            e
        } else {
            app(self.eta(eps, t), e)
        }
    }

    /// Translate a checked effectful term; returns the pure term, the source type and the
    /// principal effect. The output is checked against `M_ε(⦇τ⦈)`.
    pub fn capture(&self, ctx: &Ctx, e: &Expr) -> Result<(Expr, Type, EffectSet), ElabError> {
        let checker = Checker::new(self.policy, &self.sigma);
        let (t, eps) = checker.effect(&mut ctx.clone(), e)?;
        let mut work = ctx.clone();
        let (term, t2, eps2) = self.go(&mut work, e)?;
        debug_assert_eq!((t.clone(), eps), (t2, eps2));
        let expected = self.monad_type(eps, &self.pure_type(&t));
        let pure_ctx = self.pure_ctx(ctx);
        match check_pure(self.policy, &pure_ctx, &term) {
            Ok(found) if found == expected => Ok((term, t, eps)),
            Ok(found) => Err(ElabError::InternalIllTyped(format!("expected `{expected}`, got `{found}` for `{term}`"))),
            Err(err) => Err(ElabError::InternalIllTyped(format!("{err} in `{term}`"))),
        }
    }

    fn go(&self, ctx: &mut Ctx, e: &Expr) -> Result<(Expr, Type, EffectSet), ElabError> {
        let empty = EffectSet::EMPTY;
        let pt = |t: &Type| self.pure_type(t);
        Ok(match e {
            Expr::Var(x) => {
                let (t, kind) = ctx.lookup(x).map(|(t, k)| (t.clone(), k)).expect("checked");
                let eps = if kind == BindKind::Rec { EffectSet::PNT } else { empty };
                (e.clone(), t, eps)
            }
            Expr::UnitVal => (Expr::UnitVal, Type::Unit, empty),
            Expr::Inl(a, st) | Expr::Inr(a, st) => {
                let (ta, t1, eps) = self.go(ctx, a)?;
                let ptt = pt(st);
                let mk = |x: Expr| if matches!(e, Expr::Inl(..)) { inl(x, ptt.clone()) } else { inr(x, ptt.clone()) };
                if eps.is_empty() {
                    (mk(ta), st.clone(), eps)
                } else {
                    let x = fresh_name("x");
                    let body = self.eta_app(eps, &ptt, mk(v(&x)));
                    (self.bind_app(eps, &pt(&t1), &ptt, ta, &x, body), st.clone(), eps)
                }
            }
            Expr::Proj(i, a) => {
                let (ta, t, eps) = self.go(ctx, a)?;
                let Type::Prod(t1, t2) = &t else { unreachable!("checked") };
                let ti = if *i == 1 { (**t1).clone() } else { (**t2).clone() };
                if eps.is_empty() {
                    (Expr::Proj(*i, Box::new(ta)), ti, eps)
                } else {
                    let x = fresh_name("x");
                    let body = self.eta_app(eps, &pt(&ti), Expr::Proj(*i, Box::new(v(&x))));
                    (self.bind_app(eps, &pt(&t), &pt(&ti), ta, &x, body), ti, eps)
                }
            }
            Expr::LabelE(l, a) => {
                let (ta, t, eps) = self.go(ctx, a)?;
                let lt = Type::labeled(l.clone(), t.clone());
                if eps.is_empty() {
                    (label(l.clone(), ta), lt, eps)
                } else {
                    let x = fresh_name("x");
                    let body = self.eta_app(eps, &pt(&lt), label(l.clone(), v(&x)));
                    (self.bind_app(eps, &pt(&t), &pt(&lt), ta, &x, body), lt, eps)
                }
            }
            Expr::Pair(a, b) => {
                let (ta, t1, e1) = self.go(ctx, a)?;
                let (tb, t2, e2) = self.go(ctx, b)?;
                let eps = e1.union(e2);
                let t = Type::prod(t1.clone(), t2.clone());
                if eps.is_empty() {
                    (pair(ta, tb), t, eps)
                } else {
                    let (v1, v2) = (fresh_name("v"), fresh_name("v"));
                    let inner_body = self.eta_app(eps, &pt(&t), pair(v(&v1), v(&v2)));
                    let inner = self.bind_app(eps, &pt(&t2), &pt(&t), self.coerce_app(e2, eps, &pt(&t2), tb)?, &v2, inner_body);
                    let outer = self.bind_app(eps, &pt(&t1), &pt(&t), self.coerce_app(e1, eps, &pt(&t1), ta)?, &v1, inner);
                    (outer, t, eps)
                }
            }
            Expr::Match(s, x, a, y, b) => {
                let (ts, tsum, es) = self.go(ctx, s)?;
                let Type::Sum(t1, t2) = &tsum else { unreachable!("checked") };
                ctx.push(x.clone(), (**t1).clone(), BindKind::Plain);
                let ra = self.go(ctx, a);
                ctx.pop();
                let (ta, t, ea) = ra?;
                ctx.push(y.clone(), (**t2).clone(), BindKind::Plain);
                let rb = self.go(ctx, b);
                ctx.pop();
                let (tb, _, eb) = rb?;
                let e2 = ea.union(eb);
                let eps = es.union(e2);
                let ptt = pt(&t);
                let branches = |scrut: Expr| -> Result<Expr, ElabError> {
                    Ok(Expr::Match(
                        Box::new(scrut),
                        x.clone(),
                        Box::new(self.coerce_app(ea, e2, &ptt, ta.clone())?),
                        y.clone(),
                        Box::new(self.coerce_app(eb, e2, &ptt, tb.clone())?),
                    ))
                };
                if es.is_empty() && normalize(e2) == normalize(eps) {
                    (branches(ts)?, t, eps)
                } else {
                    let z = fresh_name("z");
                    let body = self.coerce_app(e2, eps, &ptt, branches(v(&z))?)?;
                    let m = self.coerce_app(es, eps, &pt(&tsum), ts)?;
                    (self.bind_app(eps, &pt(&tsum), &ptt, m, &z, body), t, eps)
                }
            }
            Expr::Lam(x, tx, lat, body) => {
                ctx.push(x.clone(), tx.clone(), BindKind::Plain);
                let rb = self.go(ctx, body);
                ctx.pop();
                let (tb, t2, eb) = rb?;
                let latent = match lat {
                    Some(Latent::Eff(d)) => *d,
                    _ => eb,
                };
                let inner = self.coerce_app(eb, latent, &pt(&t2), tb)?;
                (lam_n(x, pt(tx), inner), Type::fun_eff(tx.clone(), latent, t2), empty)
            }
            Expr::App(f, a) => {
                let (tf, ft, ef) = self.go(ctx, f)?;
                let (ta, _, ea) = self.go(ctx, a)?;
                let Type::FunEff(t1, el, t2) = &ft else { unreachable!("checked") };
                let eps = ef.union(ea).union(*el);
                let (p1, p2) = (pt(t1), pt(t2));
                if eps.is_empty() {
                    (app(tf, ta), (**t2).clone(), eps)
                } else {
                    let g = fresh_name("g");
                    let xa = fresh_name("x");
                    let call = self.coerce_app(*el, eps, &p2, app(v(&g), v(&xa)))?;
                    let inner = self.bind_app(eps, &p1, &p2, self.coerce_app(ea, eps, &p1, ta)?, &xa, call);
                    let outer = self.bind_app(eps, &pt(&ft), &p2, self.coerce_app(ef, eps, &pt(&ft), tf)?, &g, inner);
                    (outer, (**t2).clone(), eps)
                }
            }
            Expr::Unlabel(a, x, body) => {
                let (ta, lt, e1) = self.go(ctx, a)?;
                let Type::Labeled(_, t1) = &lt else { unreachable!("checked") };
                ctx.push(x.clone(), (**t1).clone(), BindKind::Plain);
                let rb = self.go(ctx, body);
                ctx.pop();
                let (tb, t2, e2) = rb?;
                let eps = e1.union(e2);
                let p2 = pt(&t2);
                if e1.is_empty() && normalize(e2) == normalize(eps) {
                    (Expr::Unlabel(Box::new(ta), x.clone(), Box::new(tb)), t2, eps)
                } else {
                    let w = fresh_name("w");
                    let inner = self.coerce_app(e2, eps, &p2, Expr::Unlabel(Box::new(v(&w)), x.clone(), Box::new(tb)))?;
                    let m = self.coerce_app(e1, eps, &pt(&lt), ta)?;
                    (self.bind_app(eps, &pt(&lt), &p2, m, &w, inner), t2, eps)
                }
            }
            Expr::Let(x, a, body) => {
                let (ta, t1, e1) = self.go(ctx, a)?;
                ctx.push(x.clone(), t1.clone(), BindKind::Plain);
                let rb = self.go(ctx, body);
                ctx.pop();
                let (tb, t2, e2) = rb?;
                let eps = e1.union(e2);
                let p2 = pt(&t2);
                if eps.is_empty() {
                    (app(lam_n(x, pt(&t1), tb), ta), t2, eps)
                } else {
                    let inner = self.coerce_app(e2, eps, &p2, tb)?;
                    let m = self.coerce_app(e1, eps, &pt(&t1), ta)?;
                    (self.bind_app(eps, &pt(&t1), &p2, m, x, inner), t2, eps)
                }
            }
            Expr::Read => {
                let s = fresh_name("s");
                (lam_n(&s, self.sigma.clone(), v(&s)), self.sigma.clone(), EffectSet::R)
            }
            Expr::Write(a) => {
                let (ta, _, ea) = self.go(ctx, a)?;
                let eps = ea.union(EffectSet::W);
                let (x, s) = (fresh_name("x"), fresh_name("s"));
                let written = lam_n(&s, self.sigma.clone(), pair(Expr::UnitVal, v(&x)));
                let body = self.coerce_app(EffectSet::W, eps, &Type::Unit, written)?;
                let m = self.coerce_app(ea, eps, &self.sigma, ta)?;
                (self.bind_app(eps, &self.sigma, &Type::Unit, m, &x, body), Type::Unit, eps)
            }
            Expr::Throw(t) => (self.throw_val(&pt(t)), t.clone(), EffectSet::E),
            Expr::TryCatch(a, b) => self.try_catch(ctx, a, b)?,
            Expr::Fix(f, t, body) => {
                ctx.push(f.clone(), t.clone(), BindKind::Rec);
                let rb = self.go(ctx, body);
                ctx.pop();
                let (tb, _, eb) = rb?;
                let inner = self.coerce_app(eb, EffectSet::PNT, &pt(t), tb)?;
                (Expr::Fix(f.clone(), Type::lift(pt(t)), Box::new(inner)), t.clone(), EffectSet::PNT)
            }
            Expr::LiftE(_) | Expr::Seq(..) => unreachable!("rejected by the effect checker"),
        })
    }

    fn try_catch(&self, ctx: &mut Ctx, a: &Expr, b: &Expr) -> Result<(Expr, Type, EffectSet), ElabError> {
        let (ta, t, ea) = self.go(ctx, a)?;
        let (tb, _, eb) = self.go(ctx, b)?;
        let eps = ea.minus(EffectSet::E).union(eb);
        let ptt = self.pure_type(&t);
        let target = normalize(ea.union(EffectSet::E));
        let tried = self.coerce_app(ea, target, &ptt, ta)?;
        let (x, u, val) = (fresh_name("x"), fresh_name("u"), fresh_name("v"));
        let term = if target == EffectSet::E {
            Expr::Unlabel(
                Box::new(tried),
                x.clone(),
                Box::new(Expr::Match(Box::new(v(&x)), u, Box::new(tb), val.clone(), Box::new(self.eta_app(eb, &ptt, v(&val))))),
            )
        } else if target == EffectSet::RE {
            let out = eb.union(EffectSet::R);
            let s = fresh_name("s");
            let handler = app(self.coerce_app(eb, out, &ptt, tb)?, v(&s));
            let ok = app(self.eta(out, &ptt), v(&val));
            lam_n(
                &s,
                self.sigma.clone(),
                Expr::Unlabel(
                    Box::new(app(tried, v(&s))),
                    x.clone(),
                    Box::new(Expr::Match(Box::new(v(&x)), u, Box::new(handler), val.clone(), Box::new(app(ok, v(&s))))),
                ),
            )
        } else {
            let out = eb.union(EffectSet::RW);
            let (s, s2, y) = (fresh_name("s"), fresh_name("s"), fresh_name("y"));
            let handler = app(self.coerce_app(eb, out, &ptt, tb)?, v(&s2));
            let ok = app(app(self.eta(out, &ptt), v(&val)), v(&s2));
            let inner = Expr::Unlabel(
                Box::new(v(&x)),
                y.clone(),
                Box::new(Expr::Match(Box::new(v(&y)), u, Box::new(handler), val.clone(), Box::new(ok))),
            );
            lam_n(&s, self.sigma.clone(), self.let_pair(app(tried, v(&s)), &x, &self.exn_type(&ptt), &s2, inner))
        };
        Ok((term, t, eps))
    }
}

/// `map_ℓ`: a term with free `x : L[ℓ]τ_in` that unlabels `x`, runs `p` (in which `x : τ_in`)
/// and labels the result at `ℓ`.
pub fn map_label(l: &Label, p: &Expr, x: &str) -> Expr {
    let inner = fresh_name(x);
    let body = crate::syntax::subst(p, x, &Expr::Var(inner.clone()));
    Expr::Unlabel(Box::new(var(x)), inner, Box::new(label(l.clone(), body)))
}

/// Monad type for the policy's mode given a state type (`unit` in Pnt mode).
pub fn monad_type(policy: &EffectPolicy, sigma: &Type, eps: EffectSet, t: &Type) -> Type {
    Elab::new(policy, sigma).monad_type(eps, t)
}

/// Capture a term in the policy's effect system.
pub fn capture(policy: &EffectPolicy, sigma: &Type, ctx: &Ctx, e: &Expr) -> Result<(Expr, Type, EffectSet), ElabError> {
    let sigma = if policy.mode() == Mode::Pnt { Type::Unit } else { sigma.clone() };
    Elab::new(policy, &sigma).capture(ctx, e)
}
