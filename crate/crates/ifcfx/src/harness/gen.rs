//! Seeded generation of well-typed programs by building typing derivations top-down.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::effects::{EffectPolicy, Mode};
use crate::labels::Label;
use crate::protection::{protects, System};
use crate::syntax::{name, Expr, Latent, Name, Program, Type};
use crate::typecheck::{check_pc, check_pure, BindKind, Ctx};

/// Which source calculus to generate for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Calculus {
    /// Pure DCC without fixpoints.
    Pure,
    /// The pc system with state and exceptions.
    StateExn,
    /// The pc system with general recursion.
    Pnt,
}

impl Calculus {
    pub fn mode(self) -> Mode {
        match self {
            Calculus::Pnt => Mode::Pnt,
            _ => Mode::StateExn,
        }
    }

    fn system(self) -> System {
        match self {
            Calculus::Pure => System::Pure,
            _ => System::Pc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("no checker-accepted program found after {attempts} attempts")]
    GenerationExhausted { attempts: usize },
}

/// A generated program together with the pc it was derived at and its type.
#[derive(Debug, Clone)]
pub struct Generated {
    pub program: Program,
    pub pc: Label,
    pub ty: Type,
}

/// Typing rules the generator can instantiate; used as coverage keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    Var,
    Unit,
    Pair,
    Proj,
    Inl,
    Inr,
    Match,
    Lam,
    App,
    Label,
    Unlabel,
    Let,
    Read,
    Write,
    Throw,
    TryCatch,
    Fix,
}

impl Rule {
    pub const ALL: [Rule; 17] = [
        Rule::Var,
        Rule::Unit,
        Rule::Pair,
        Rule::Proj,
        Rule::Inl,
        Rule::Inr,
        Rule::Match,
        Rule::Lam,
        Rule::App,
        Rule::Label,
        Rule::Unlabel,
        Rule::Let,
        Rule::Read,
        Rule::Write,
        Rule::Throw,
        Rule::TryCatch,
        Rule::Fix,
    ];

    /// Rules that can occur in programs of `calculus`.
    pub fn available(calculus: Calculus) -> Vec<Rule> {
        Rule::ALL
            .iter()
            .copied()
            .filter(|r| match r {
                Rule::Read | Rule::Write | Rule::Throw | Rule::TryCatch => calculus == Calculus::StateExn,
                Rule::Fix => calculus == Calculus::Pnt,
                _ => true,
            })
            .collect()
    }
}

const MAX_ATTEMPTS: usize = 50;

/// Deterministic program generator for one policy.
pub struct Generator<'p> {
    policy: &'p EffectPolicy,
    calculus: Calculus,
    sigma: Type,
    rng: ChaCha8Rng,
    labels: Vec<Label>,
    coverage: BTreeMap<Rule, u64>,
    counter: usize,
}

impl<'p> Generator<'p> {
    /// `sigma` is ignored outside the state/exception calculus.
    pub fn new(policy: &'p EffectPolicy, calculus: Calculus, sigma: Type, seed: u64) -> Self {
        let sigma = if calculus == Calculus::StateExn { sigma } else { Type::Unit };
        Generator {
            policy,
            calculus,
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
            labels: policy.lattice().elements().to_vec(),
            coverage: BTreeMap::new(),
            counter: 0,
        }
    }

    pub fn calculus(&self) -> Calculus {
        self.calculus
    }

    pub fn sigma(&self) -> &Type {
        &self.sigma
    }

    pub fn coverage(&self) -> &BTreeMap<Rule, u64> {
        &self.coverage
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// The default state type: booleans at `lState`.
    pub fn default_sigma(policy: &EffectPolicy) -> Type {
        Type::labeled(policy.l_state().clone(), Type::bool())
    }

    pub fn random_label(&mut self) -> Label {
        self.labels.choose(&mut self.rng).expect("nonempty lattice").clone()
    }

    fn labels_above(&self, pc: &Label) -> Vec<Label> {
        self.labels.iter().filter(|l| self.policy.leq(pc, l)).cloned().collect()
    }

    /// A random function-free type of nesting depth at most `depth`.
    pub fn random_first_order(&mut self, depth: usize) -> Type {
        let pick = self.rng.gen_range(0..if depth > 0 { 12 } else { 10 });
        match pick {
            0 | 1 => Type::Unit,
            2..=4 => Type::bool(),
            5 if self.calculus == Calculus::StateExn => self.sigma.clone(),
            5..=8 => Type::labeled(self.random_label(), Type::bool()),
            9 => Type::labeled(self.random_label(), Type::Unit),
            10 => Type::prod(self.random_first_order(depth - 1), self.random_first_order(depth - 1)),
            _ => Type::sum(self.random_first_order(depth - 1), self.random_first_order(depth - 1)),
        }
    }

    /// A random type of the calculus; functions take and return first-order types.
    pub fn random_type(&mut self, depth: usize) -> Type {
        if self.rng.gen_ratio(1, 5) {
            let a = self.random_first_order(0);
            let b = self.random_first_order(depth);
            self.fun_type(a, b)
        } else {
            self.random_first_order(depth)
        }
    }

    fn fun_type(&mut self, a: Type, b: Type) -> Type {
        match self.calculus {
            Calculus::Pure => Type::fun(a, b),
            _ => {
                let l = self.random_label();
                Type::fun_pc(a, l, b)
            }
        }
    }

    fn fresh(&mut self, base: &str) -> Name {
        self.counter += 1;
        name(&format!("{base}{}", self.counter))
    }

    fn hit(&mut self, r: Rule) {
        *self.coverage.entry(r).or_insert(0) += 1;
    }

    fn protects(&self, l: &Label, t: &Type) -> bool {
        protects(self.policy, self.calculus.system(), l, t).unwrap_or(false)
    }

    fn split(&mut self, n: usize) -> (usize, usize) {
        if n <= 1 {
            return (1, 1);
        }
        let k = self.rng.gen_range(1..n);
        (k, n - k)
    }

    fn can_use(&self, kind: BindKind, pc: &Label) -> bool {
        kind == BindKind::Plain || self.policy.leq(pc, self.policy.l_pnt())
    }

    fn vars_of(&self, ctx: &Ctx, pc: &Label, t: &Type) -> Vec<Name> {
        let mut out: Vec<Name> = Vec::new();
        for (x, _) in ctx.entries() {
            if out.contains(x) {
                continue;
            }
            if let Some((ty, kind)) = ctx.lookup(x) {
                if ty == t && self.can_use(kind, pc) {
                    out.push(x.clone());
                }
            }
        }
        out
    }

    /// A closed value of type `t`, typeable at every pc.
    pub fn canonical_value(&mut self, t: &Type) -> Expr {
        match t {
            Type::Unit => Expr::UnitVal,
            Type::Sum(a, b) => {
                if self.rng.gen_bool(0.5) {
                    Expr::Inl(Box::new(self.canonical_value(a)), t.clone())
                } else {
                    Expr::Inr(Box::new(self.canonical_value(b)), t.clone())
                }
            }
            Type::Prod(a, b) => Expr::Pair(Box::new(self.canonical_value(a)), Box::new(self.canonical_value(b))),
            Type::Labeled(l, i) => Expr::LabelE(l.clone(), Box::new(self.canonical_value(i))),
            Type::FunPure(a, b) => {
                let x = self.fresh("x");
                Expr::Lam(x, (**a).clone(), None, Box::new(self.canonical_value(b)))
            }
            Type::FunPc(a, l, b) => {
                let x = self.fresh("x");
                Expr::Lam(x, (**a).clone(), Some(Latent::Pc(l.clone())), Box::new(self.canonical_value(b)))
            }
            Type::FunEff(a, eps, b) => {
                let x = self.fresh("x");
                Expr::Lam(x, (**a).clone(), Some(Latent::Eff(*eps)), Box::new(self.canonical_value(b)))
            }
            Type::Lift(i) => Expr::LiftE(Box::new(self.canonical_value(i))),
        }
    }

    fn leaf(&mut self, ctx: &Ctx, pc: &Label, t: &Type) -> Expr {
        let vars = self.vars_of(ctx, pc, t);
        let mut options: Vec<Rule> = Vec::new();
        if !vars.is_empty() {
            options.extend([Rule::Var, Rule::Var, Rule::Var]);
        }
        if *t == Type::Unit {
            options.push(Rule::Unit);
        }
        if self.calculus == Calculus::StateExn {
            if *t == self.sigma {
                options.extend([Rule::Read, Rule::Read]);
            }
            if self.policy.leq(pc, self.policy.l_exn()) {
                options.push(Rule::Throw);
            }
        }
        let choice = if options.is_empty() || self.rng.gen_ratio(1, 4) { None } else { options.choose(&mut self.rng).copied() };
        match choice {
            Some(Rule::Var) => {
                self.hit(Rule::Var);
                Expr::Var(vars.choose(&mut self.rng).expect("nonempty").clone())
            }
            Some(Rule::Unit) => {
                self.hit(Rule::Unit);
                Expr::UnitVal
            }
            Some(Rule::Read) => {
                self.hit(Rule::Read);
                Expr::Read
            }
            Some(Rule::Throw) => {
                self.hit(Rule::Throw);
                Expr::Throw(t.clone())
            }
            _ => self.canonical_value(t),
        }
    }

    fn weight(&self, r: Rule, ctx: &Ctx, pc: &Label, t: &Type) -> u32 {
        let se = self.calculus == Calculus::StateExn;
        match r {
            Rule::Var => {
                if self.vars_of(ctx, pc, t).is_empty() {
                    0
                } else {
                    3
                }
            }
            Rule::Unit => u32::from(*t == Type::Unit),
            Rule::Pair => 3 * u32::from(matches!(t, Type::Prod(..))),
            Rule::Proj => 1,
            Rule::Inl | Rule::Inr => 2 * u32::from(matches!(t, Type::Sum(..))),
            Rule::Match => 2,
            Rule::Lam => 4 * u32::from(matches!(t, Type::FunPure(..) | Type::FunPc(..))),
            Rule::App => 2,
            Rule::Label => 3 * u32::from(matches!(t, Type::Labeled(..))),
            Rule::Unlabel => 3,
            Rule::Let => 1,
            Rule::Read => 2 * u32::from(se && *t == self.sigma),
            Rule::Write => 2 * u32::from(se && *t == Type::Unit && self.policy.leq(pc, self.policy.l_state())),
            Rule::Throw => u32::from(se && self.policy.leq(pc, self.policy.l_exn())),
            Rule::TryCatch => 2 * u32::from(se && self.protects(self.policy.l_exn(), t)),
            Rule::Fix => {
                3 * u32::from(
                    self.calculus == Calculus::Pnt && matches!(t, Type::FunPc(..)) && self.policy.leq(pc, self.policy.l_pnt()),
                )
            }
        }
    }

    /// Build a term of type `t` at `pc` with about `size` nodes.
    pub fn expr(&mut self, ctx: &mut Ctx, pc: &Label, t: &Type, size: usize) -> Expr {
        if size <= 1 {
            return self.leaf(ctx, pc, t);
        }
        let rules = Rule::available(self.calculus);
        for _ in 0..8 {
            let weights: Vec<(Rule, u32)> = rules.iter().map(|r| (*r, self.weight(*r, ctx, pc, t))).collect();
            let total: u32 = weights.iter().map(|(_, w)| w).sum();
            if total == 0 {
                break;
            }
            let mut pick = self.rng.gen_range(0..total);
            let mut chosen = Rule::Var;
            for (r, w) in &weights {
                if pick < *w {
                    chosen = *r;
                    break;
                }
                pick -= w;
            }
            if let Some(e) = self.apply(chosen, ctx, pc, t, size) {
                self.hit(chosen);
                return e;
            }
        }
        self.leaf(ctx, pc, t)
    }

    fn under(&mut self, ctx: &mut Ctx, x: &Name, tx: &Type, kind: BindKind, pc: &Label, t: &Type, size: usize) -> Expr {
        ctx.push(x.clone(), tx.clone(), kind);
        let e = self.expr(ctx, pc, t, size);
        ctx.pop();
        e
    }

    fn apply(&mut self, rule: Rule, ctx: &mut Ctx, pc: &Label, t: &Type, size: usize) -> Option<Expr> {
        let n = size - 1;
        Some(match rule {
            Rule::Var => {
                let vars = self.vars_of(ctx, pc, t);
                Expr::Var(vars.choose(&mut self.rng)?.clone())
            }
            Rule::Unit => Expr::UnitVal,
            Rule::Pair => {
                let Type::Prod(a, b) = t else { return None };
                let (k1, k2) = self.split(n);
                let ea = self.expr(ctx, pc, a, k1);
                let eb = self.expr(ctx, pc, b, k2);
                Expr::Pair(Box::new(ea), Box::new(eb))
            }
            Rule::Proj => {
                let other = self.random_first_order(0);
                if self.rng.gen_bool(0.5) {
                    let e = self.expr(ctx, pc, &Type::prod(t.clone(), other), n);
                    Expr::Proj(1, Box::new(e))
                } else {
                    let e = self.expr(ctx, pc, &Type::prod(other, t.clone()), n);
                    Expr::Proj(2, Box::new(e))
                }
            }
            Rule::Inl | Rule::Inr => {
                let Type::Sum(a, b) = t else { return None };
                if rule == Rule::Inl {
                    Expr::Inl(Box::new(self.expr(ctx, pc, a, n)), t.clone())
                } else {
                    Expr::Inr(Box::new(self.expr(ctx, pc, b, n)), t.clone())
                }
            }
            Rule::Match => {
                let sums: Vec<Type> = ctx.entries().map(|(_, ty)| ty.clone()).filter(|ty| matches!(ty, Type::Sum(..))).collect();
                let st = if !sums.is_empty() && self.rng.gen_bool(0.5) {
                    sums.choose(&mut self.rng).expect("nonempty").clone()
                } else if self.rng.gen_ratio(3, 4) {
                    Type::bool()
                } else {
                    Type::sum(self.random_first_order(0), self.random_first_order(0))
                };
                let Type::Sum(a, b) = &st else { unreachable!() };
                let (k, rest) = self.split(n);
                let (k1, k2) = self.split(rest.max(2));
                let scrut = self.expr(ctx, pc, &st, k);
                let (x, y) = (self.fresh("x"), self.fresh("y"));
                let l = self.under(ctx, &x, a, BindKind::Plain, pc, t, k1);
                let r = self.under(ctx, &y, b, BindKind::Plain, pc, t, k2);
                Expr::Match(Box::new(scrut), x, Box::new(l), y, Box::new(r))
            }
            Rule::Lam => match t {
                Type::FunPure(a, b) => {
                    let x = self.fresh("x");
                    let body = self.under(ctx, &x, a, BindKind::Plain, pc, b, n);
                    Expr::Lam(x, (**a).clone(), None, Box::new(body))
                }
                Type::FunPc(a, l, b) => {
                    let x = self.fresh("x");
                    let body = self.under(ctx, &x, a, BindKind::Plain, l, b, n);
                    Expr::Lam(x, (**a).clone(), Some(Latent::Pc(l.clone())), Box::new(body))
                }
                _ => return None,
            },
            Rule::App => self.app(ctx, pc, t, n)?,
            Rule::Label => {
                let Type::Labeled(l, inner) = t else { return None };
                Expr::LabelE(l.clone(), Box::new(self.expr(ctx, pc, inner, n)))
            }
            Rule::Unlabel => {
                let ok: Vec<Label> = self.labels.iter().filter(|l| self.protects(l, t)).cloned().collect();
                let l = ok.choose(&mut self.rng)?.clone();
                let labeled_vars: Vec<Type> =
                    ctx.entries().map(|(_, ty)| ty.clone()).filter(|ty| matches!(ty, Type::Labeled(l2, _) if *l2 == l)).collect();
                let lt = if !labeled_vars.is_empty() && self.rng.gen_ratio(2, 3) {
                    labeled_vars.choose(&mut self.rng).expect("nonempty").clone()
                } else {
                    Type::labeled(l.clone(), self.random_first_order(0))
                };
                let Type::Labeled(_, t1) = &lt else { unreachable!() };
                let (k1, k2) = self.split(n);
                let e1 = self.expr(ctx, pc, &lt, k1);
                let raised = self.policy.lattice().join(pc, &l).expect("members");
                let x = self.fresh("x");
                let body = self.under(ctx, &x, t1, BindKind::Plain, &raised, t, k2);
                Expr::Unlabel(Box::new(e1), x, Box::new(body))
            }
            Rule::Let => {
                let t1 = self.random_type(0);
                let (k1, k2) = self.split(n);
                let e1 = self.expr(ctx, pc, &t1, k1);
                let x = self.fresh("x");
                let body = self.under(ctx, &x, &t1, BindKind::Plain, pc, t, k2);
                Expr::Let(x, Box::new(e1), Box::new(body))
            }
            Rule::Read => Expr::Read,
            Rule::Write => {
                let sigma = self.sigma.clone();
                Expr::Write(Box::new(self.expr(ctx, pc, &sigma, n)))
            }
            Rule::Throw => Expr::Throw(t.clone()),
            Rule::TryCatch => {
                let (k1, k2) = self.split(n);
                let a = self.expr(ctx, pc, t, k1);
                let b = self.expr(ctx, pc, t, k2);
                Expr::TryCatch(Box::new(a), Box::new(b))
            }
            Rule::Fix => {
                let Type::FunPc(a, l, b) = t else { return None };
                let f = self.fresh("f");
                let x = self.fresh("x");
                ctx.push(f.clone(), t.clone(), BindKind::Rec);
                let body = self.under(ctx, &x, a, BindKind::Plain, l, b, n.saturating_sub(1).max(1));
                ctx.pop();
                self.hit(Rule::Lam);
                let lam = Expr::Lam(x, (**a).clone(), Some(Latent::Pc(l.clone())), Box::new(body));
                Expr::Fix(f, t.clone(), Box::new(lam))
            }
        })
    }

    fn app(&mut self, ctx: &mut Ctx, pc: &Label, t: &Type, n: usize) -> Option<Expr> {
        // Prefer calling a function already in scope (including a recursive binder).
        let callable: Vec<(Name, Type)> = ctx
            .entries()
            .filter_map(|(x, _)| {
                let (ty, kind) = ctx.lookup(x)?;
                let fits = match ty {
                    Type::FunPure(_, b) => **b == *t,
                    Type::FunPc(_, l, b) => **b == *t && self.policy.leq(pc, l),
                    _ => false,
                };
                (fits && self.can_use(kind, pc)).then(|| (x.clone(), ty.clone()))
            })
            .collect();
        if !callable.is_empty() && self.rng.gen_ratio(2, 3) {
            let (f, ft) = callable.choose(&mut self.rng).expect("nonempty").clone();
            let a = match &ft {
                Type::FunPure(a, _) | Type::FunPc(a, _, _) => (**a).clone(),
                _ => unreachable!(),
            };
            let arg = self.expr(ctx, pc, &a, n.saturating_sub(1).max(1));
            return Some(Expr::App(Box::new(Expr::Var(f)), Box::new(arg)));
        }
        let a = self.random_first_order(0);
        let ft = match self.calculus {
            Calculus::Pure => Type::fun(a.clone(), t.clone()),
            _ => {
                let above = self.labels_above(pc);
                let l = above.choose(&mut self.rng)?.clone();
                Type::fun_pc(a.clone(), l, t.clone())
            }
        };
        let (k1, k2) = self.split(n);
        let f = self.expr(ctx, pc, &ft, k1);
        let arg = self.expr(ctx, pc, &a, k2);
        Some(Expr::App(Box::new(f), Box::new(arg)))
    }

    fn accepted(&self, gamma: &[(Name, Type)], pc: &Label, e: &Expr) -> Option<Type> {
        let ctx = Ctx::from_pairs(gamma);
        match self.calculus {
            Calculus::Pure => check_pure(self.policy, &ctx, e).ok(),
            _ => check_pc(self.policy, &self.sigma, &ctx, pc, e).ok(),
        }
    }

    fn settings(&self) -> Vec<String> {
        let p = self.policy;
        let mut out = vec![format!("lState={}", p.l_state()), format!("lExn={}", p.l_exn()), format!("lPnt={}", p.l_pnt())];
        if p.compose_mode() == crate::effects::ComposeMode::Partial {
            out.push("mode=partial".into());
        }
        out
    }

    /// A program of type `t` at `pc` over the free variables `gamma`, re-checked by the
    /// checker before it is returned.
    pub fn program_at(&mut self, gamma: &[(Name, Type)], pc: &Label, t: &Type, size: usize) -> Result<Generated, GenError> {
        for _ in 0..MAX_ATTEMPTS {
            self.counter = 0;
            let mut ctx = Ctx::from_pairs(gamma);
            let body = self.expr(&mut ctx, pc, t, size);
            if let Some(ty) = self.accepted(gamma, pc, &body) {
                if ty == *t {
                    let program = Program {
                        mode: self.calculus.mode(),
                        sigma: self.sigma.clone(),
                        context: gamma.to_vec(),
                        body,
                        policy: self.settings(),
                    };
                    return Ok(Generated { program, pc: pc.clone(), ty });
                }
            }
        }
        Err(GenError::GenerationExhausted { attempts: MAX_ATTEMPTS })
    }

    /// A program at a random pc and random type.
    pub fn program(&mut self, gamma: &[(Name, Type)], size: usize) -> Result<Generated, GenError> {
        let pc = self.random_label();
        let t = self.random_type(1);
        self.program_at(gamma, &pc, &t, size)
    }
}

/// One program from a fresh generator seeded with `seed`.
pub fn random_program(
    seed: u64,
    size: usize,
    calculus: Calculus,
    policy: &EffectPolicy,
    gamma: &[(Name, Type)],
) -> Result<Generated, GenError> {
    let sigma = Generator::default_sigma(policy);
    Generator::new(policy, calculus, sigma, seed).program(gamma, size)
}
