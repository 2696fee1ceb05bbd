use std::collections::BTreeSet;

use ifcfx::effects::{EffectSet, Mode};
use ifcfx::harness::gen::{random_program, Calculus};
use ifcfx::harness::standard_policies;
use ifcfx::labels::{two_point, Label, LabelLattice};
use ifcfx::protection::System;
use ifcfx::syntax::build::*;
use ifcfx::syntax::{
    contains_let, name, parse_expr, parse_program, parse_type, subst, with_fresh_names, Expr, Latent, Name, ParseError, Type,
};
use ifcfx::typecheck::{desugar, Ctx};
use proptest::prelude::*;

fn l(s: &str) -> Label {
    Label::new(s)
}

fn bool_t() -> Type {
    Type::sum(Type::Unit, Type::Unit)
}

#[test]
fn parse_examples() {
    assert_eq!(parse_expr("label[Sec] ()").unwrap(), label(l("Sec"), Expr::UnitVal));
    let leak = "unlabel h as x in match x with inl _ -> throw : L[Sec] unit | inr _ -> label[Sec] ()";
    let expected = unlabel(
        var("h"),
        "x",
        case(var("x"), "_", Expr::Throw(Type::labeled(l("Sec"), Type::Unit)), "_", label(l("Sec"), Expr::UnitVal)),
    );
    assert_eq!(parse_expr(leak).unwrap(), expected);
    let e = parse_expr("let _ = read in write s").unwrap();
    assert_eq!(e, let_("_", Expr::Read, write(var("s"))));
}

#[test]
fn print_examples() {
    assert_eq!(pair(Expr::UnitVal, Expr::UnitVal).to_string(), "((), ())");
    assert_eq!(Type::fun_eff(Type::Unit, EffectSet::RW, Type::Unit).to_string(), "unit ->[eff {R,W}] unit");
    assert_eq!(Type::lift(Type::Unit).to_string(), "Lift unit");
    assert_eq!(Type::fun_pc(Type::Unit, l("Pub"), Type::Unit).to_string(), "unit ->[pc Pub] unit");
    assert_eq!(Type::labeled(l("Sec"), bool_t()).to_string(), "L[Sec] (unit + unit)");
}

#[test]
fn type_precedence() {
    assert_eq!(parse_type("unit + unit * unit").unwrap(), Type::sum(Type::Unit, Type::prod(Type::Unit, Type::Unit)));
    assert_eq!(parse_type("unit -> unit -> unit").unwrap(), Type::fun(Type::Unit, Type::fun(Type::Unit, Type::Unit)));
    assert_eq!(parse_type("L[Pub] unit * unit").unwrap(), Type::prod(Type::labeled(l("Pub"), Type::Unit), Type::Unit));
}

#[test]
fn parse_errors_carry_positions() {
    match parse_expr("fun (x:unit) ->") {
        Err(ParseError::Syntax { line: 1, .. }) => {}
        other => panic!("{other:?}"),
    }
    match parse_program("mode state-exn\nbody\n  (fst", None) {
        Err(ParseError::Syntax { line: 3, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert!(parse_program("mode lazy\nbody ()", None).is_err());
    assert!(parse_program("mode pnt\n", None).is_err());
}

#[test]
fn unknown_labels_rejected_against_lattice() {
    let lat = two_point();
    let src = "mode state-exn\nsigma L[Pub] unit\nbody label[Top] ()";
    assert_eq!(parse_program(src, Some(&lat)), Err(ParseError::UnknownLabel(l("Top"))));
    assert!(parse_program(src, None).is_ok());
}

#[test]
fn program_file() {
    let src = "# leak\nmode state-exn\nsigma L[Pub] (unit + unit)\npolicy lState=Pub lExn=Pub\n\
               var h : L[Sec] (unit + unit)\nbody\n  unlabel h as x in\n  ()\n";
    let p = parse_program(src, Some(&two_point())).unwrap();
    assert_eq!(p.mode, Mode::StateExn);
    assert_eq!(p.sigma, Type::labeled(l("Pub"), bool_t()));
    assert_eq!(p.context, vec![(name("h"), Type::labeled(l("Sec"), bool_t()))]);
    assert_eq!(p.policy, vec!["lState=Pub", "lExn=Pub"]);
    assert_eq!(parse_program(&p.to_string(), None).unwrap(), p);
}

#[test]
fn subst_examples() {
    assert_eq!(subst(&var("x"), "x", &Expr::UnitVal), Expr::UnitVal);
    let shadow = lam("x", Type::Unit, var("x"));
    assert_eq!(subst(&shadow, "x", &Expr::UnitVal), shadow);
    let captured = subst(&lam("y", Type::Unit, var("x")), "x", &var("y"));
    let Expr::Lam(y2, _, _, body) = &captured else { panic!("{captured}") };
    assert_ne!(&**y2, "y");
    assert_eq!(**body, var("y"));
    assert_eq!(captured.free_vars(), BTreeSet::from([name("y")]));
}

#[test]
fn desugar_let() {
    let policy = standard_policies(Mode::StateExn).remove(0);
    let ctx = Ctx::new();
    let e = let_("x", Expr::UnitVal, var("x"));
    let d = desugar(&policy, &Type::Unit, System::Pure, &ctx, &policy.lattice().top(), &e).unwrap();
    assert_eq!(d, app(lam("x", Type::Unit, var("x")), Expr::UnitVal));

    let nested = parse_expr("let a = () in let b = (a, a) in match inl b : unit * unit + unit with inl p -> let c = fst p in c | inr q -> let d = q in d").unwrap();
    let d = desugar(&policy, &Type::Unit, System::Pure, &ctx, &policy.lattice().top(), &nested).unwrap();
    assert!(!contains_let(&d));
    let again = desugar(&policy, &Type::Unit, System::Pure, &ctx, &policy.lattice().top(), &nested).unwrap();
    assert_eq!(d, again);
    assert!(d.to_string().contains("fun (b:unit * unit)"));
}

#[test]
fn fresh_names_are_scoped() {
    let a = with_fresh_names(|| subst(&lam("y", Type::Unit, var("x")), "x", &var("y")));
    let b = with_fresh_names(|| subst(&lam("y", Type::Unit, var("x")), "x", &var("y")));
    assert_eq!(a, b);
}

#[test]
fn generated_programs_round_trip() {
    for calculus in [Calculus::Pure, Calculus::StateExn, Calculus::Pnt] {
        for (i, policy) in standard_policies(calculus.mode()).iter().enumerate() {
            for seed in 0..20u64 {
                let gamma = [(name("h"), Type::labeled(policy.lattice().top(), bool_t()))];
                let Ok(g) = random_program(seed * 31 + i as u64, 14, calculus, policy, &gamma) else { continue };
                let text = g.program.to_string();
                assert_eq!(parse_program(&text, Some(policy.lattice())).unwrap(), g.program, "{text}");
            }
        }
    }
}

// Arbitrary (not necessarily well-typed) syntax trees.

const NAMES: [&str; 4] = ["x", "y", "z", "_"];

fn arb_label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(l("Pub")), Just(l("Sec"))]
}

fn arb_effects() -> impl Strategy<Value = EffectSet> {
    (0u8..8).prop_map(|b| EffectSet::RWE.subsets()[b as usize])
}

fn arb_type() -> impl Strategy<Value = Type> {
    let leaf = Just(Type::Unit);
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Type::sum(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Type::prod(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Type::fun(a, b)),
            (inner.clone(), arb_label(), inner.clone()).prop_map(|(a, p, b)| Type::fun_pc(a, p, b)),
            (inner.clone(), arb_effects(), inner.clone()).prop_map(|(a, e, b)| Type::fun_eff(a, e, b)),
            (arb_label(), inner.clone()).prop_map(|(p, t)| Type::labeled(p, t)),
            inner.prop_map(Type::lift),
        ]
    })
}

fn arb_name() -> impl Strategy<Value = Name> {
    (0..NAMES.len()).prop_map(|i| name(NAMES[i]))
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0..3usize).prop_map(|i| var(NAMES[i])),
        Just(Expr::UnitVal),
        Just(Expr::Read),
        arb_type().prop_map(Expr::Throw),
    ];
    leaf.prop_recursive(5, 48, 3, |e| {
        let b = |e: &BoxedStrategy<Expr>| e.clone().prop_map(Box::new);
        let latent = prop_oneof![
            Just(None),
            arb_label().prop_map(|p| Some(Latent::Pc(p))),
            arb_effects().prop_map(|x| Some(Latent::Eff(x)))
        ];
        prop_oneof![
            (b(&e), b(&e)).prop_map(|(x, y)| Expr::Pair(x, y)),
            (1u8..3, b(&e)).prop_map(|(i, x)| Expr::Proj(i, x)),
            (b(&e), arb_type()).prop_map(|(x, t)| Expr::Inl(x, t)),
            (b(&e), arb_type()).prop_map(|(x, t)| Expr::Inr(x, t)),
            (b(&e), arb_name(), b(&e), arb_name(), b(&e)).prop_map(|(s, x, a, y, c)| Expr::Match(s, x, a, y, c)),
            (arb_name(), arb_type(), latent, b(&e)).prop_map(|(x, t, lt, body)| Expr::Lam(x, t, lt, body)),
            (b(&e), b(&e)).prop_map(|(x, y)| Expr::App(x, y)),
            (arb_label(), b(&e)).prop_map(|(p, x)| Expr::LabelE(p, x)),
            (b(&e), arb_name(), b(&e)).prop_map(|(a, x, c)| Expr::Unlabel(a, x, c)),
            b(&e).prop_map(Expr::Write),
            (b(&e), b(&e)).prop_map(|(x, y)| Expr::TryCatch(x, y)),
            (arb_name(), arb_type(), b(&e)).prop_map(|(f, t, body)| Expr::Fix(f, t, body)),
            b(&e).prop_map(Expr::LiftE),
            (arb_name(), b(&e), b(&e)).prop_map(|(x, a, c)| Expr::Seq(x, a, c)),
            (arb_name(), b(&e), b(&e)).prop_map(|(x, a, c)| Expr::Let(x, a, c)),
        ]
    })
}

fn count_free(e: &Expr, x: &str) -> bool {
    e.free_vars().contains(x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn types_round_trip(t in arb_type()) {
        prop_assert_eq!(parse_type(&t.to_string()).unwrap(), t);
    }

    #[test]
    fn exprs_round_trip(e in arb_expr()) {
        let text = e.to_string();
        prop_assert_eq!(parse_expr(&text).unwrap(), e, "{}", text);
    }

    #[test]
    fn subst_free_vars_bound(e in arb_expr(), v in arb_expr(), xi in 0..3usize) {
        let x = NAMES[xi];
        let r = subst(&e, x, &v);
        let mut allowed = e.free_vars();
        allowed.remove(x);
        if count_free(&e, x) {
            allowed.extend(v.free_vars());
        }
        prop_assert!(r.free_vars().is_subset(&allowed), "{} [{}/{}] = {}", e, v, x, r);
        if !count_free(&e, x) {
            prop_assert_eq!(r, e);
        }
    }

    #[test]
    fn subst_closed_value_removes_variable(e in arb_expr(), xi in 0..3usize) {
        let x = NAMES[xi];
        let r = subst(&e, x, &Expr::UnitVal);
        prop_assert!(!count_free(&r, x));
        prop_assert_eq!(r.size() >= e.size(), true);
    }
}

#[test]
fn labels_collected_from_terms() {
    let lat = LabelLattice::parse(include_str!("../lattices/chain3.lat")).unwrap();
    let e = parse_expr("label[Mid] (inl () : L[Low] unit + unit)").unwrap();
    let mut ls = Vec::new();
    e.labels(&mut ls);
    ls.sort();
    ls.dedup();
    assert_eq!(ls, vec![l("Low"), l("Mid")]);
    assert!(ls.iter().all(|x| lat.contains(x)));
}
