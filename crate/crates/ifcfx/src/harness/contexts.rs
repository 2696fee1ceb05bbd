//! Enumeration of first-order values and of bounded, well-typed program contexts.

use std::collections::HashMap;

use thiserror::Error;

use crate::effects::EffectPolicy;
use crate::labels::{Label, LabelLattice};
use crate::syntax::{name, subst, Expr, Latent, Name, Type};
use crate::typecheck::{check_pc, check_pure, Ctx};

/// Name of the hole variable in an enumerated context.
pub const HOLE: &str = "hole";

pub const DEFAULT_CONTEXT_BOUND: usize = 7;

/// Most values enumerated for a state type.
pub const MAX_STATE_VALUES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("type `{0}` has function components and cannot be enumerated")]
pub struct NotEnumerable(pub Type);

/// Every closed value of a function-free type.
pub fn enumerate_values(t: &Type) -> Result<Vec<Expr>, NotEnumerable> {
    Ok(match t {
        Type::Unit => vec![Expr::UnitVal],
        Type::Sum(a, b) => {
            let mut out: Vec<Expr> = enumerate_values(a)?.into_iter().map(|v| Expr::Inl(Box::new(v), t.clone())).collect();
            out.extend(enumerate_values(b)?.into_iter().map(|v| Expr::Inr(Box::new(v), t.clone())));
            out
        }
        Type::Prod(a, b) => {
            let (xs, ys) = (enumerate_values(a)?, enumerate_values(b)?);
            let mut out = Vec::with_capacity(xs.len() * ys.len());
            for x in &xs {
                for y in &ys {
                    out.push(Expr::Pair(Box::new(x.clone()), Box::new(y.clone())));
                }
            }
            out
        }
        Type::Labeled(l, inner) => enumerate_values(inner)?.into_iter().map(|v| Expr::LabelE(l.clone(), Box::new(v))).collect(),
        Type::Lift(inner) => enumerate_values(inner)?.into_iter().map(|v| Expr::LiftE(Box::new(v))).collect(),
        Type::FunPure(..) | Type::FunPc(..) | Type::FunEff(..) => return Err(NotEnumerable(t.clone())),
    })
}

/// Which constructs enumerated contexts may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Grammar {
    /// Pure DCC.
    Pure,
    /// The pc system with state and exceptions.
    StateExn,
    /// The pc system of the recursion calculus (contexts themselves do not recurse).
    Pnt,
}

/// What to enumerate: contexts `C` with `⊢ C[e] : L[output_label](unit + unit)` for `e` of
/// type `hole_type`, with at most `size_bound` nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSpec {
    pub hole_type: Type,
    pub output_label: Label,
    pub size_bound: usize,
    pub grammar: Grammar,
}

impl ContextSpec {
    pub fn observation_type(&self) -> Type {
        Type::labeled(self.output_label.clone(), Type::bool())
    }
}

/// Replace the hole of `ctx` by `e` (which must be closed).
pub fn plug(ctx: &Expr, e: &Expr) -> Expr {
    subst(ctx, HOLE, e)
}

fn binder(depth: usize) -> Name {
    name(&format!("c{depth}"))
}

struct Enumerator {
    grammar: Grammar,
    sigma: Type,
    pool: Vec<Type>,
    memo: HashMap<(Vec<Type>, Type, usize), Vec<Expr>>,
}

fn subterm_types(t: &Type, out: &mut Vec<Type>) {
    if !out.contains(t) {
        out.push(t.clone());
    }
    match t {
        Type::Sum(a, b) | Type::Prod(a, b) | Type::FunPure(a, b) | Type::FunPc(a, _, b) | Type::FunEff(a, _, b) => {
            subterm_types(a, out);
            subterm_types(b, out);
        }
        Type::Labeled(_, i) | Type::Lift(i) => subterm_types(i, out),
        Type::Unit => {}
    }
}

impl Enumerator {
    fn labeled_pool(&self) -> Vec<Type> {
        self.pool.iter().filter(|t| matches!(t, Type::Labeled(..))).cloned().collect()
    }

    fn sum_pool(&self) -> Vec<Type> {
        self.pool.iter().filter(|t| matches!(t, Type::Sum(..))).cloned().collect()
    }

    /// Expressions of exactly `size` nodes and type `target` in scope `env`
    /// (the hole first, then binders `c0`, `c1`, ...).
    fn exprs(&mut self, env: &[Type], target: &Type, size: usize) -> Vec<Expr> {
        if size == 0 {
            return Vec::new();
        }
        let key = (env.to_vec(), target.clone(), size);
        if let Some(hit) = self.memo.get(&key) {
            return hit.clone();
        }
        let out = self.build(env, target, size);
        self.memo.insert(key, out.clone());
        out
    }

    fn var_name(i: usize) -> Name {
        if i == 0 {
            name(HOLE)
        } else {
            binder(i - 1)
        }
    }

    fn with(env: &[Type], t: &Type) -> (Vec<Type>, Name) {
        let mut e = env.to_vec();
        e.push(t.clone());
        let n = binder(env.len() - 1);
        (e, n)
    }

    fn build(&mut self, env: &[Type], target: &Type, size: usize) -> Vec<Expr> {
        let se = self.grammar == Grammar::StateExn;
        let mut out = Vec::new();
        if size == 1 {
            for (i, t) in env.iter().enumerate() {
                if t == target {
                    out.push(Expr::Var(Self::var_name(i)));
                }
            }
            if *target == Type::Unit {
                out.push(Expr::UnitVal);
            }
            if se && *target == self.sigma {
                out.push(Expr::Read);
            }
            if se {
                out.push(Expr::Throw(target.clone()));
            }
            return out;
        }
        let n = size - 1;
        match target {
            Type::Sum(a, b) => {
                for e in self.exprs(env, a, n) {
                    out.push(Expr::Inl(Box::new(e), target.clone()));
                }
                for e in self.exprs(env, b, n) {
                    out.push(Expr::Inr(Box::new(e), target.clone()));
                }
            }
            Type::Prod(a, b) => {
                for k in 1..n {
                    let xs = self.exprs(env, a, k);
                    if xs.is_empty() {
                        continue;
                    }
                    let ys = self.exprs(env, b, n - k);
                    for x in &xs {
                        for y in &ys {
                            out.push(Expr::Pair(Box::new(x.clone()), Box::new(y.clone())));
                        }
                    }
                }
            }
            Type::Labeled(l, inner) => {
                for e in self.exprs(env, inner, n) {
                    out.push(Expr::LabelE(l.clone(), Box::new(e)));
                }
            }
            Type::FunPure(a, b) | Type::FunPc(a, _, b) => {
                let (env2, x) = Self::with(env, a);
                let latent = match target {
                    Type::FunPc(_, l, _) => Some(Latent::Pc(l.clone())),
                    _ => None,
                };
                for body in self.exprs(&env2, b, n) {
                    out.push(Expr::Lam(x.clone(), (**a).clone(), latent.clone(), Box::new(body)));
                }
            }
            _ => {}
        }
        if se && *target == Type::Unit {
            let sigma = self.sigma.clone();
            for e in self.exprs(env, &sigma, n) {
                out.push(Expr::Write(Box::new(e)));
            }
        }
        // Projections and applications of variables.
        for (i, t) in env.iter().enumerate() {
            if let Type::Prod(a, b) = t {
                if size == 2 {
                    if **a == *target {
                        out.push(Expr::Proj(1, Box::new(Expr::Var(Self::var_name(i)))));
                    }
                    if **b == *target {
                        out.push(Expr::Proj(2, Box::new(Expr::Var(Self::var_name(i)))));
                    }
                }
            }
            if let Type::FunPure(a, b) | Type::FunPc(a, _, b) = t {
                if **b == *target && n >= 2 {
                    for arg in self.exprs(env, a, n - 1) {
                        out.push(Expr::App(Box::new(Expr::Var(Self::var_name(i))), Box::new(arg)));
                    }
                }
            }
        }
        // Eliminations through pool types.
        for lt in self.labeled_pool() {
            let Type::Labeled(_, inner) = &lt else { unreachable!() };
            let (env2, x) = Self::with(env, inner);
            for k in 1..n {
                let heads = self.exprs(env, &lt, k);
                if heads.is_empty() {
                    continue;
                }
                let bodies = self.exprs(&env2, target, n - k);
                for h in &heads {
                    for body in &bodies {
                        out.push(Expr::Unlabel(Box::new(h.clone()), x.clone(), Box::new(body.clone())));
                    }
                }
            }
        }
        for st in self.sum_pool() {
            let Type::Sum(a, b) = &st else { unreachable!() };
            let (env_a, x) = Self::with(env, a);
            let (env_b, y) = Self::with(env, b);
            for k in 1..n {
                let scruts = self.exprs(env, &st, k);
                if scruts.is_empty() {
                    continue;
                }
                for j in 1..(n - k) {
                    let ls = self.exprs(&env_a, target, j);
                    if ls.is_empty() {
                        continue;
                    }
                    let rs = self.exprs(&env_b, target, n - k - j);
                    for s in &scruts {
                        for l in &ls {
                            for r in &rs {
                                out.push(Expr::Match(
                                    Box::new(s.clone()),
                                    x.clone(),
                                    Box::new(l.clone()),
                                    y.clone(),
                                    Box::new(r.clone()),
                                ));
                            }
                        }
                    }
                }
            }
        }
        for t1 in self.pool.clone() {
            let (env2, x) = Self::with(env, &t1);
            for k in 1..n {
                let firsts = self.exprs(env, &t1, k);
                if firsts.is_empty() {
                    continue;
                }
                let bodies = self.exprs(&env2, target, n - k);
                for a in &firsts {
                    for body in &bodies {
                        out.push(Expr::Let(x.clone(), Box::new(a.clone()), Box::new(body.clone())));
                    }
                }
            }
        }
        if se {
            for k in 1..n {
                let xs = self.exprs(env, target, k);
                if xs.is_empty() {
                    continue;
                }
                let ys = self.exprs(env, target, n - k);
                for a in &xs {
                    for b in &ys {
                        out.push(Expr::TryCatch(Box::new(a.clone()), Box::new(b.clone())));
                    }
                }
            }
        }
        out
    }
}

/// Types that intermediate context expressions may have.
fn type_pool(lattice: &LabelLattice, spec: &ContextSpec, sigma: &Type) -> Vec<Type> {
    let mut pool = Vec::new();
    subterm_types(&spec.hole_type, &mut pool);
    let mut extra = vec![Type::Unit, Type::bool(), spec.observation_type()];
    if spec.grammar == Grammar::StateExn {
        extra.push(sigma.clone());
    }
    for l in lattice.elements() {
        extra.push(Type::labeled(l.clone(), Type::bool()));
    }
    for t in extra {
        subterm_types(&t, &mut pool);
    }
    // Function types only enter through the hole; the pool keeps eliminable shapes.
    pool.retain(|t| !t.is_function());
    pool
}

/// Whether the closed program `p` is accepted at the context's observation type, at some
/// minimal pc in the pc grammars.
pub fn accepts(policy: &EffectPolicy, sigma: &Type, grammar: Grammar, obs: &Type, p: &Expr) -> Option<Label> {
    let ctx = Ctx::new();
    match grammar {
        Grammar::Pure => match check_pure(policy, &ctx, p) {
            Ok(t) if t == *obs => Some(policy.lattice().top()),
            _ => None,
        },
        Grammar::StateExn | Grammar::Pnt => policy
            .lattice()
            .minimal_elements()
            .into_iter()
            .find(|pc| matches!(check_pc(policy, sigma, &ctx, pc, p), Ok(t) if t == *obs)),
    }
}

/// All contexts up to the size bound that type-check with the hole as a variable of the hole
/// type. Names are canonical, so alpha-equivalent contexts appear once.
pub fn enumerate_contexts(policy: &EffectPolicy, sigma: &Type, spec: &ContextSpec) -> Vec<Expr> {
    let candidates = candidate_contexts(policy.lattice(), sigma, spec);
    filter_typed(policy, sigma, spec, candidates)
}

/// Syntactic candidates for [`enumerate_contexts`]. They depend only on the lattice, so callers
/// checking several policies over one lattice can build them once.
pub fn candidate_contexts(lattice: &LabelLattice, sigma: &Type, spec: &ContextSpec) -> Vec<Expr> {
    let sigma = grammar_sigma(sigma, spec);
    let mut en = Enumerator { grammar: spec.grammar, pool: type_pool(lattice, spec, &sigma), sigma, memo: HashMap::new() };
    let obs = spec.observation_type();
    let env = vec![spec.hole_type.clone()];
    (1..=spec.size_bound).flat_map(|size| en.exprs(&env, &obs, size)).collect()
}

/// The candidates that type-check under `policy`.
pub fn filter_typed(policy: &EffectPolicy, sigma: &Type, spec: &ContextSpec, candidates: Vec<Expr>) -> Vec<Expr> {
    let sigma = grammar_sigma(sigma, spec);
    candidates.into_iter().filter(|c| typed_with_hole(policy, &sigma, spec, c)).collect()
}

fn grammar_sigma(sigma: &Type, spec: &ContextSpec) -> Type {
    if spec.grammar == Grammar::StateExn {
        sigma.clone()
    } else {
        Type::Unit
    }
}

fn typed_with_hole(policy: &EffectPolicy, sigma: &Type, spec: &ContextSpec, c: &Expr) -> bool {
    let ctx = Ctx::from_pairs(&[(name(HOLE), spec.hole_type.clone())]);
    let obs = spec.observation_type();
    match spec.grammar {
        Grammar::Pure => matches!(check_pure(policy, &ctx, c), Ok(t) if t == obs),
        Grammar::StateExn | Grammar::Pnt => {
            policy.lattice().minimal_elements().iter().any(|pc| matches!(check_pc(policy, sigma, &ctx, pc, c), Ok(t) if t == obs))
        }
    }
}
