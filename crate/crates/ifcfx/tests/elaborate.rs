use std::sync::Arc;

use ifcfx::effects::{ComposeMode, EffectPolicy, EffectSet, Mode};
use ifcfx::elaborate::{capture, map_label, normalize, Elab, ElabError};
use ifcfx::eval::{run, value_eq, Outcome};
use ifcfx::harness::contexts::enumerate_values;
use ifcfx::harness::gen::{random_program, Calculus};
use ifcfx::harness::standard_policies;
use ifcfx::labels::{two_point, Label};
use ifcfx::syntax::build::*;
use ifcfx::syntax::{name, parse_expr, with_fresh_names, Expr, Name, Type};
use ifcfx::typecheck::{check_pc, check_pure, infer_effect, Ctx};

fn l(s: &str) -> Label {
    Label::new(s)
}

fn bool_t() -> Type {
    Type::sum(Type::Unit, Type::Unit)
}

fn policy() -> EffectPolicy {
    EffectPolicy::new(Arc::new(two_point()), Mode::StateExn, l("Pub"), l("Pub"), None, ComposeMode::GlobalFlow).unwrap()
}

fn sigma() -> Type {
    Type::labeled(l("Pub"), bool_t())
}

const NORMAL: [EffectSet; 6] = [EffectSet::EMPTY, EffectSet::R, EffectSet::E, EffectSet::RW, EffectSet::RE, EffectSet::RWE];

#[test]
fn monad_type_table() {
    let p = policy();
    let el = Elab::new(&p, &Type::Unit);
    let exn = Type::labeled(l("Pub"), Type::sum(Type::Unit, Type::Unit));
    assert_eq!(el.monad_type(EffectSet::EMPTY, &Type::Unit), Type::Unit);
    assert_eq!(el.monad_type(EffectSet::R, &Type::Unit), Type::fun(Type::Unit, Type::Unit));
    assert_eq!(el.monad_type(EffectSet::E, &Type::Unit), exn);
    assert_eq!(el.monad_type(EffectSet::RW, &Type::Unit), Type::fun(Type::Unit, Type::prod(Type::Unit, Type::Unit)));
    assert_eq!(el.monad_type(EffectSet::W, &Type::Unit), el.monad_type(EffectSet::RW, &Type::Unit));
    assert_eq!(el.monad_type(EffectSet::RE, &Type::Unit), Type::fun(Type::Unit, exn.clone()));
    assert_eq!(el.monad_type(EffectSet::RWE, &Type::Unit), Type::fun(Type::Unit, Type::prod(exn, Type::Unit)));
    let n = &standard_policies(Mode::Pnt)[0];
    assert_eq!(Elab::new(n, &Type::Unit).monad_type(EffectSet::PNT, &Type::Unit), Type::lift(Type::Unit));
    assert_eq!(normalize(EffectSet::WE), EffectSet::RWE);
}

#[test]
fn eta_exception_shape() {
    let p = policy();
    let el = Elab::new(&p, &sigma());
    let e = with_fresh_names(|| el.eta(EffectSet::E, &bool_t()));
    let Expr::Lam(x, t, None, body) = &e else { panic!("{e}") };
    assert_eq!(t, &bool_t());
    assert_eq!(**body, label(l("Pub"), inr(Expr::Var(x.clone()), Type::sum(Type::Unit, bool_t()))));
}

#[test]
fn combinators_are_well_typed() {
    let p = policy();
    let el = Elab::new(&p, &sigma());
    let types = [Type::Unit, bool_t(), Type::labeled(l("Sec"), Type::Unit)];
    let ctx = Ctx::new();
    for eps in EffectSet::RWE.subsets() {
        for a in &types {
            assert_eq!(check_pure(&p, &ctx, &el.eta(eps, a)).unwrap(), Type::fun(a.clone(), el.monad_type(eps, a)));
            for b in &types {
                let expected = Type::fun(
                    el.monad_type(eps, a),
                    Type::fun(Type::fun(a.clone(), el.monad_type(eps, b)), el.monad_type(eps, b)),
                );
                assert_eq!(check_pure(&p, &ctx, &el.bind(eps, a, b)).unwrap(), expected, "{eps}");
            }
            for to in EffectSet::RWE.subsets().into_iter().filter(|to| normalize(eps).is_subset(normalize(*to))) {
                let c = el.coerce(eps, to, a).unwrap();
                assert_eq!(check_pure(&p, &ctx, &c).unwrap(), Type::fun(el.monad_type(eps, a), el.monad_type(to, a)));
            }
        }
    }
}

#[test]
fn coercions() {
    let p = policy();
    let el = Elab::new(&p, &sigma());
    // From the empty set, coercion behaves as the unit.
    for eps in NORMAL {
        let a = el.coerce(EffectSet::EMPTY, eps, &sigma()).unwrap();
        let b = el.eta(eps, &sigma());
        for v in enumerate_values(&sigma()).unwrap() {
            assert!(same(&observe(eps, &app(a.clone(), v.clone())), &observe(eps, &app(b.clone(), v))), "{eps}");
        }
    }
    assert_eq!(
        el.coerce(EffectSet::R, EffectSet::E, &Type::Unit),
        Err(ElabError::InvalidCoercion { from: EffectSet::R, to: EffectSet::E })
    );
    assert!(el.coerce(EffectSet::W, EffectSet::R, &Type::Unit).is_err());
    // W and RW share a monad, so this is the identity.
    assert!(el.coerce(EffectSet::RW, EffectSet::W, &Type::Unit).is_ok());
}

/// Effectful bodies over a free `x : σ`, one per normalized effect.
fn bodies() -> Vec<(EffectSet, &'static str)> {
    vec![
        (EffectSet::EMPTY, "x"),
        (EffectSet::R, "read"),
        (EffectSet::E, "unlabel x as y in match y with inl _ -> throw : L[Pub] (unit + unit) | inr _ -> x"),
        (EffectSet::RW, "let _ = write x in read"),
        (EffectSet::RE, "unlabel read as y in match y with inl _ -> throw : L[Pub] (unit + unit) | inr _ -> x"),
        (
            EffectSet::RWE,
            "let _ = write x in unlabel read as y in match y with inl _ -> throw : L[Pub] (unit + unit) | inr _ -> read",
        ),
    ]
}

/// Observe a closed monadic value: apply it to each state when the monad reads.
fn observe(eps: EffectSet, m: &Expr) -> Vec<Outcome> {
    let n = normalize(eps);
    if n.is_empty() || n == EffectSet::E {
        return vec![run(m, None, 5000).0];
    }
    enumerate_values(&sigma()).unwrap().into_iter().map(|s| run(&app(m.clone(), s), None, 5000).0).collect()
}

fn same(a: &[Outcome], b: &[Outcome]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| match (x, y) {
            (Outcome::Val(u), Outcome::Val(v)) => value_eq(u, v).unwrap(),
            _ => false,
        })
}

#[test]
fn monad_laws_hold_observationally() {
    let p = policy();
    let s = sigma();
    let el = Elab::new(&p, &s);
    let gamma: Vec<(Name, Type)> = vec![(name("x"), s.clone())];
    for (eps, src) in bodies() {
        let body = parse_expr(src).unwrap();
        let (term, t, found) = capture(&p, &s, &Ctx::from_pairs(&gamma), &body).unwrap();
        assert_eq!((t, found), (s.clone(), eps), "{src}");
        let f = lam("x", s.clone(), term.clone());
        for v in enumerate_values(&s).unwrap() {
            // bind (eta v) f = f v
            let left = app2(el.bind(eps, &s, &s), app(el.eta(eps, &s), v.clone()), f.clone());
            assert!(same(&observe(eps, &left), &observe(eps, &app(f.clone(), v.clone()))), "{src}");
            // bind m eta = m
            let m = app(f.clone(), v.clone());
            let right = app2(el.bind(eps, &s, &s), m.clone(), el.eta(eps, &s));
            assert!(same(&observe(eps, &right), &observe(eps, &m)), "{src}");
        }
    }
}

#[test]
fn capture_examples() {
    let p = policy();
    let s = sigma();
    let (term, t, eps) = capture(&p, &s, &Ctx::new(), &Expr::Read).unwrap();
    assert_eq!((t, eps), (s.clone(), EffectSet::R));
    let Expr::Lam(x, ty, _, body) = &term else { panic!("{term}") };
    assert_eq!((ty, &**body), (&s, &Expr::Var(x.clone())));
    assert_eq!(capture(&p, &s, &Ctx::new(), &Expr::UnitVal).unwrap(), (Expr::UnitVal, Type::Unit, EffectSet::EMPTY));
}

#[test]
fn read_or_throw_capture_agrees_with_the_machine() {
    let p = policy();
    let s = sigma();
    let src = "unlabel x as y in match y with inl _ -> throw : L[Pub] (unit + unit) | inr _ -> read";
    let body = parse_expr(src).unwrap();
    let gamma = vec![(name("x"), s.clone())];
    let (term, t, eps) = capture(&p, &s, &Ctx::from_pairs(&gamma), &body).unwrap();
    assert_eq!(eps, EffectSet::RE);
    let pure_ctx = Ctx::from_pairs(&gamma);
    let ty = check_pure(&p, &pure_ctx, &term).unwrap();
    assert_eq!(ty, Type::fun(s.clone(), Type::labeled(l("Pub"), Type::sum(Type::Unit, t))));
    let mut checked = 0;
    for xv in enumerate_values(&s).unwrap() {
        for st in enumerate_values(&s).unwrap() {
            let closed = ifcfx::syntax::subst(&body, "x", &xv);
            let (source, _) = run(&closed, Some(st.clone()), 1000);
            let pure = app(ifcfx::syntax::subst(&term, "x", &xv), st.clone());
            let (Outcome::Val(out), _) = run(&pure, None, 10_000) else { panic!() };
            let Expr::LabelE(lab, inner) = &out else { panic!("{out}") };
            assert_eq!(lab, &l("Pub"));
            match (&source, &**inner) {
                (Outcome::Thrown(Some(s2)), Expr::Inl(u, _)) => {
                    assert_eq!(**u, Expr::UnitVal);
                    assert_eq!(s2, &st);
                }
                (Outcome::ValWithState(a, s2), Expr::Inr(b, _)) => {
                    assert!(value_eq(a, b).unwrap());
                    assert_eq!(s2, &st);
                }
                other => panic!("{other:?}"),
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 4);
}

#[test]
fn map_label_types_the_identity() {
    let p = policy();
    let ctx = Ctx::from_pairs(&[(name("x"), Type::labeled(l("Sec"), Type::Unit))]);
    let m = map_label(&l("Sec"), &var("x"), "x");
    assert_eq!(check_pure(&p, &ctx, &m).unwrap(), Type::labeled(l("Sec"), Type::Unit));
    assert_eq!(m.free_vars().into_iter().collect::<Vec<_>>(), vec![name("x")]);
}

#[test]
fn map_label_in_the_pc_system() {
    // A program at pc keeps checking at pc when its input arrives labeled at pc.
    let mut tried = 0;
    for pol in standard_policies(Mode::StateExn) {
        let s = Type::labeled(pol.l_state().clone(), bool_t());
        for seed in 0..60u64 {
            let gamma = [(name("x"), bool_t())];
            let Ok(g) = random_program(seed, 10, Calculus::StateExn, &pol, &gamma) else { continue };
            let lifted = Ctx::from_pairs(&[(name("x"), Type::labeled(g.pc.clone(), bool_t()))]);
            let m = map_label(&g.pc, &g.program.body, "x");
            let found = check_pc(&pol, &s, &lifted, &g.pc, &m).unwrap_or_else(|e| panic!("{e}: {m}"));
            assert_eq!(found, Type::labeled(g.pc.clone(), g.ty.clone()));
            tried += 1;
        }
    }
    assert!(tried > 100);
}

#[test]
fn map_label_in_the_effect_system() {
    // Accepted exactly when the label flows to the body's effect label.
    let p = policy();
    let s = sigma();
    for (eps, src) in bodies() {
        let body = parse_expr(src).unwrap();
        for x in p.lattice().elements() {
            let ctx = Ctx::from_pairs(&[(name("x"), Type::labeled(x.clone(), s.clone()))]);
            let m = map_label(x, &body, "x");
            match infer_effect(&p, &s, &ctx, &m) {
                Ok((t, found)) => {
                    assert!(p.leq(x, &p.effect_label(eps)), "{x} {src}");
                    assert_eq!((t, found), (Type::labeled(x.clone(), s.clone()), eps));
                }
                Err(_) => assert!(!p.leq(x, &p.effect_label(eps)), "{x} {src}"),
            }
        }
    }
}
