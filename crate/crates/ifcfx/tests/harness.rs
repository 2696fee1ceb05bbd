use std::collections::BTreeSet;
use std::sync::Arc;

use ifcfx::effects::{ComposeMode, EffectPolicy, EffectSet, Mode};
use ifcfx::elaborate::capture;
use ifcfx::eval::Outcome;
use ifcfx::harness::contexts::{accepts, enumerate_contexts, enumerate_values, plug, ContextSpec, Grammar, HOLE};
use ifcfx::harness::equiv::{check_l_equiv, check_state_exn_equiv, check_ts_equiv, Verdict};
use ifcfx::harness::gen::{random_program, Calculus, Generator, Rule};
use ifcfx::harness::suites::{
    check_simulation, closings, coproduct_demo, decode, galois_negative_control, ni_case, ni_negative_control, outcomes_agree,
    pcbound_suite, SuiteConfig,
};
use ifcfx::harness::{describe_policy, standard_policies};
use ifcfx::labels::{two_point, Label};
use ifcfx::syntax::build::*;
use ifcfx::syntax::{name, parse_expr, parse_program, subst, Expr, Type};
use ifcfx::typecheck::{check_pc, infer_effect, pc_program_to_effect, Ctx};

fn l(s: &str) -> Label {
    Label::new(s)
}

fn bool_t() -> Type {
    Type::sum(Type::Unit, Type::Unit)
}

fn e(src: &str) -> Expr {
    parse_expr(src).unwrap()
}

fn state_exn(st: &str, ex: &str, compose: ComposeMode) -> EffectPolicy {
    EffectPolicy::new(Arc::new(two_point()), Mode::StateExn, l(st), l(ex), None, compose).unwrap()
}

fn pnt(lp: &str) -> EffectPolicy {
    EffectPolicy::new(Arc::new(two_point()), Mode::Pnt, l("Sec"), l("Sec"), Some(l(lp)), ComposeMode::GlobalFlow).unwrap()
}

/// Number of closed values of a first-order type, by counting.
fn count(t: &Type) -> usize {
    match t {
        Type::Unit => 1,
        Type::Sum(a, b) => count(a) + count(b),
        Type::Prod(a, b) => count(a) * count(b),
        Type::Labeled(_, i) | Type::Lift(i) => count(i),
        _ => unreachable!(),
    }
}

#[test]
fn value_enumeration() {
    let ts = [
        bool_t(),
        Type::prod(bool_t(), Type::sum(Type::Unit, bool_t())),
        Type::labeled(l("Sec"), Type::sum(bool_t(), Type::prod(bool_t(), bool_t()))),
        Type::lift(Type::Unit),
    ];
    for t in ts {
        let vs = enumerate_values(&t).unwrap();
        assert_eq!(vs.len(), count(&t), "{t}");
        let distinct: BTreeSet<String> = vs.iter().map(|v| v.to_string()).collect();
        assert_eq!(distinct.len(), vs.len());
        let p = standard_policies(Mode::StateExn).remove(0);
        for v in &vs {
            assert!(v.is_value());
            assert_eq!(ifcfx::typecheck::check_pure(&p, &Ctx::new(), v).unwrap(), t);
        }
    }
    assert!(enumerate_values(&Type::fun(Type::Unit, Type::Unit)).is_err());
}

#[test]
fn enumerated_contexts_type_check() {
    let p = state_exn("Sec", "Sec", ComposeMode::GlobalFlow);
    let spec = ContextSpec {
        hole_type: Type::labeled(l("Sec"), Type::Unit),
        output_label: l("Sec"),
        size_bound: 5,
        grammar: Grammar::Pure,
    };
    let cs = enumerate_contexts(&p, &Type::Unit, &spec);
    let expected = e("unlabel hole as c0 in label[Sec] (inl () : unit + unit)");
    assert!(cs.contains(&expected), "{}", cs.len());
    for c in &cs {
        assert!(c.free_vars().iter().all(|x| &**x == HOLE), "{c}");
        let plugged = plug(c, &label(l("Sec"), Expr::UnitVal));
        assert!(plugged.free_vars().is_empty());
        assert!(accepts(&p, &Type::Unit, Grammar::Pure, &spec.observation_type(), &plugged).is_some(), "{plugged}");
    }
    // Distinct up to renaming: printing after canonical naming gives distinct strings.
    let texts: BTreeSet<String> = cs.iter().map(|c| c.to_string()).collect();
    assert_eq!(texts.len(), cs.len());
    let bigger = enumerate_contexts(&p, &Type::Unit, &ContextSpec { size_bound: 6, ..spec.clone() });
    assert!(cs.iter().all(|c| bigger.contains(c)));
}

#[test]
fn pure_equivalence() {
    let p = state_exn("Sec", "Sec", ComposeMode::GlobalFlow);
    let (a, b) = (e("label[Sec] (inl () : unit + unit)"), e("label[Sec] (inr () : unit + unit)"));
    let hole = Type::labeled(l("Sec"), bool_t());
    assert!(matches!(check_l_equiv(&p, &a, &b, &hole, &l("Pub"), 7), Verdict::Equivalent { .. }));
    let v = check_l_equiv(&p, &a, &b, &hole, &l("Sec"), 7);
    let w = v.witness().expect("a Sec observer separates the two");
    assert_ne!(w.left, w.right);
    assert!(matches!(check_l_equiv(&p, &a, &a, &hole, &l("Sec"), 5), Verdict::Equivalent { .. }));
}

#[test]
fn state_exn_equivalence() {
    let p = state_exn("Pub", "Pub", ComposeMode::GlobalFlow);
    let sigma = Type::labeled(l("Pub"), bool_t());
    let w1 = e("write (label[Pub] (inl () : unit + unit))");
    let w2 = e("write (label[Pub] (inr () : unit + unit))");
    let v = check_state_exn_equiv(&p, &sigma, &w1, &w2, &Type::Unit, &l("Pub"), 5);
    assert!(v.is_distinguished());
    // The same pair when the state is secret.
    let q = state_exn("Sec", "Sec", ComposeMode::GlobalFlow);
    let sig = Type::labeled(l("Sec"), bool_t());
    let s1 = e("write (label[Sec] (inl () : unit + unit))");
    let s2 = e("write (label[Sec] (inr () : unit + unit))");
    assert!(!check_state_exn_equiv(&q, &sig, &s1, &s2, &Type::Unit, &l("Pub"), 5).is_distinguished());
}

#[test]
fn exception_write_leak_is_observable_under_partial_policy() {
    let p = state_exn("Pub", "Sec", ComposeMode::Partial);
    let prog = parse_program(include_str!("../programs/exn_write_leak.sfl"), None).unwrap();
    let sigma = prog.sigma.clone();
    let s = label(l("Pub"), inr(Expr::UnitVal, bool_t()));
    let close = |b: Expr| subst(&subst(&prog.body, "h", &label(l("Sec"), b)), "s", &s);
    let e1 = close(inl(Expr::UnitVal, bool_t()));
    let e2 = close(inr(Expr::UnitVal, bool_t()));
    for x in [&e1, &e2] {
        check_pc(&p, &sigma, &Ctx::new(), &l("Pub"), x).unwrap();
    }
    let v = check_state_exn_equiv(&p, &sigma, &e1, &e2, &Type::Unit, &l("Pub"), 5);
    let w = v.witness().unwrap_or_else(|| panic!("{v}"));
    assert!(matches!(w.left, Outcome::Thrown(_)) || matches!(w.right, Outcome::Thrown(_)), "{w}");
}

#[test]
fn termination_sensitivity() {
    let (a, b) = (Expr::UnitVal, e("fix f : unit = f"));
    assert!(check_ts_equiv(&pnt("Pub"), &a, &b, &Type::Unit, &l("Pub"), 5).is_distinguished());
    assert!(!check_ts_equiv(&pnt("Sec"), &a, &b, &Type::Unit, &l("Pub"), 5).is_distinguished());
}

#[test]
fn negative_controls_fire() {
    for c in [Calculus::Pure, Calculus::StateExn, Calculus::Pnt] {
        let (fired, detail) = ni_negative_control(c, 7);
        assert!(fired, "{detail}");
    }
    let (fired, detail) = galois_negative_control();
    assert!(fired);
    assert!(detail.contains("W"), "{detail}");
}

#[test]
fn generator_is_deterministic() {
    for c in [Calculus::Pure, Calculus::StateExn, Calculus::Pnt] {
        for pol in standard_policies(c.mode()) {
            let gamma = [(name("h"), Type::labeled(pol.lattice().top(), bool_t()))];
            let a = random_program(7, 12, c, &pol, &gamma).map(|g| g.program.to_string());
            let b = random_program(7, 12, c, &pol, &gamma).map(|g| g.program.to_string());
            assert_eq!(a, b);
        }
    }
}

#[test]
fn generator_covers_every_rule_and_self_checks() {
    for c in [Calculus::Pure, Calculus::StateExn, Calculus::Pnt] {
        let mut hit: BTreeSet<Rule> = BTreeSet::new();
        let pols = standard_policies(c.mode());
        for i in 0..1000u64 {
            let pol = &pols[i as usize % pols.len()];
            let mut g = Generator::new(pol, c, Generator::default_sigma(pol), i);
            let gamma = [(name("h"), Type::labeled(pol.lattice().top(), bool_t()))];
            let Ok(out) = g.program(&gamma, 6 + (i % 12) as usize) else { continue };
            hit.extend(g.coverage().iter().filter(|(_, n)| **n > 0).map(|(r, _)| *r));
            if c == Calculus::StateExn {
                let sig = &out.program.sigma;
                let ctx = Ctx::from_pairs(&gamma);
                assert_eq!(check_pc(pol, sig, &ctx, &out.pc, &out.program.body).unwrap(), out.ty);
                let eff = pc_program_to_effect(pol, &out.program.body).unwrap();
                let ectx = Ctx::from_pairs(&gamma).map_types(|t| ifcfx::typecheck::pc_to_effect_type(pol, t)).unwrap();
                infer_effect(pol, sig, &ectx, &eff).unwrap_or_else(|err| panic!("{err}: {}", out.program.body));
            }
        }
        let want: BTreeSet<Rule> = Rule::available(c).into_iter().collect();
        assert_eq!(hit, want, "{c:?}");
    }
}

#[test]
fn decode_examples() {
    let p = state_exn("Pub", "Pub", ComposeMode::GlobalFlow);
    let s0 = label(l("Pub"), inl(Expr::UnitVal, bool_t()));
    let rw = e("fun (s:L[Pub] (unit + unit)) -> ((), s)");
    assert_eq!(decode(&p, EffectSet::RW, &rw, Some(&s0), 100).unwrap(), Outcome::ValWithState(Expr::UnitVal, s0.clone()));
    let thrown = e("label[Pub] (inl () : unit + unit)");
    assert_eq!(decode(&p, EffectSet::E, &thrown, None, 100).unwrap(), Outcome::Thrown(None));
    assert_eq!(decode(&p, EffectSet::E, &thrown, Some(&s0), 100).unwrap(), Outcome::Thrown(Some(s0.clone())));
    let wrong_label = e("label[Sec] (inl () : unit + unit)");
    assert!(decode(&p, EffectSet::E, &wrong_label, None, 100).is_err());
    assert!(decode(&p, EffectSet::R, &Expr::UnitVal, Some(&s0), 100).is_err());
    assert_eq!(decode(&pnt("Pub"), EffectSet::PNT, &lift(Expr::UnitVal), None, 100).unwrap(), Outcome::Val(Expr::UnitVal));

    assert!(outcomes_agree(&Outcome::Timeout, &Outcome::Timeout));
    assert!(!outcomes_agree(&Outcome::Thrown(None), &Outcome::Val(Expr::UnitVal)));
    let f = lam("x", Type::Unit, var("x"));
    assert!(outcomes_agree(&Outcome::Val(f.clone()), &Outcome::Val(f)));
}

#[test]
fn simulation_examples() {
    let p = state_exn("Pub", "Pub", ComposeMode::GlobalFlow);
    let sigma = Type::labeled(l("Pub"), bool_t());
    let gamma = vec![(name("x"), sigma.clone())];
    let body = e("unlabel x as y in match y with inl _ -> throw : L[Pub] (unit + unit) | inr _ -> read");
    assert_eq!(check_simulation(&p, &sigma, &gamma, &body, 1000), Ok(4));
    let w = e("let _ = write x in try (unlabel x as y in match y with inl _ -> throw : L[Pub] unit | inr _ -> label[Pub] ()) catch label[Pub] ()");
    assert_eq!(check_simulation(&p, &sigma, &gamma, &w, 1000), Ok(4));
    assert_eq!(closings(&gamma, 16).len(), 2);
    assert_eq!(closings(&[(name("a"), bool_t()), (name("b"), bool_t())], 3).len(), 3);
}

#[test]
fn pcbound_and_coproduct() {
    let cfg = SuiteConfig { seed: 3, count: 40 };
    for c in [Calculus::StateExn, Calculus::Pnt] {
        let r = pcbound_suite(c, cfg);
        assert!(r.passed(), "{r}");
        assert_eq!(r.len(), 40);
    }
    let r = coproduct_demo(&two_point());
    assert!(r.passed(), "{r}");
    let diamond = ifcfx::labels::LabelLattice::parse(include_str!("../lattices/diamond.lat")).unwrap();
    assert!(coproduct_demo(&diamond).passed());
}

#[test]
fn policy_description() {
    let p = state_exn("Pub", "Sec", ComposeMode::Partial);
    let d = describe_policy(&p);
    assert!(d.contains("lState=Pub") && d.contains("lExn=Sec") && d.contains("partial"), "{d}");
}

/// Pure equivalence of the captured programs at the monad type implies effectful equivalence
/// of the sources.
#[test]
fn captured_equivalence_is_consistent_with_effectful_equivalence() {
    let mut compared = 0;
    let mut captured_equal = 0;
    for i in 0..40 {
        let Ok(case) = ni_case(Calculus::StateExn, 11, i) else { continue };
        let pol = &case.policy;
        let prog = &case.r.program;
        let e1 = subst(&prog.body, "x", &case.p);
        let e2 = subst(&prog.body, "x", &case.q);
        let (Ok(f1), Ok(f2)) = (pc_program_to_effect(pol, &e1), pc_program_to_effect(pol, &e2)) else { continue };
        let (Ok((m1, _, eps1)), Ok((m2, _, eps2))) =
            (capture(pol, &prog.sigma, &Ctx::new(), &f1), capture(pol, &prog.sigma, &Ctx::new(), &f2))
        else {
            continue;
        };
        assert_eq!(eps1, eps2);
        let ty = ifcfx::elaborate::monad_type(
            pol,
            &prog.sigma,
            eps1,
            &ifcfx::elaborate::Elab::new(pol, &prog.sigma)
                .pure_type(&ifcfx::typecheck::pc_to_effect_type(pol, &case.r.ty).unwrap()),
        );
        for atk in pol.lattice().elements() {
            let pure = check_l_equiv(pol, &m1, &m2, &ty, atk, 5);
            let eff = check_state_exn_equiv(pol, &prog.sigma, &e1, &e2, &case.r.ty, atk, 5);
            if matches!(pure, Verdict::Equivalent { .. }) {
                captured_equal += 1;
                assert!(!eff.is_distinguished(), "{} atk {atk}: {eff}", prog.body);
            }
            compared += 1;
        }
    }
    assert!(compared > 40 && captured_equal > 0, "{compared} {captured_equal}");
}
