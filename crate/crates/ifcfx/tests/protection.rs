use std::sync::Arc;

use ifcfx::effects::{ComposeMode, EffectPolicy, EffectSet, Mode};
use ifcfx::elaborate::Elab;
use ifcfx::labels::{two_point, Label, LabelLattice};
use ifcfx::protection::{protects, protects_eff, protects_pc, protects_pure, System};
use ifcfx::syntax::Type;
use ifcfx::typecheck::pc_to_effect_type;
use proptest::prelude::*;

fn l(s: &str) -> Label {
    Label::new(s)
}

fn policy(st: &str, ex: &str, pnt: Option<&str>) -> EffectPolicy {
    let mode = if pnt.is_some() { Mode::Pnt } else { Mode::StateExn };
    EffectPolicy::new(Arc::new(two_point()), mode, l(st), l(ex), pnt.map(l), ComposeMode::GlobalFlow).unwrap()
}

fn diamond() -> Arc<LabelLattice> {
    Arc::new(LabelLattice::parse(include_str!("../lattices/diamond.lat")).unwrap())
}

#[test]
fn pure_examples() {
    let p = policy("Pub", "Pub", None);
    assert!(protects_pure(&p, &l("Pub"), &Type::labeled(l("Sec"), Type::Unit)).unwrap());
    assert!(!protects_pure(&p, &l("Sec"), &Type::Unit).unwrap());
    assert!(!protects_pure(&p, &l("Pub"), &Type::sum(Type::labeled(l("Pub"), Type::Unit), Type::labeled(l("Pub"), Type::Unit)))
        .unwrap());
    assert!(protects_pure(&p, &l("Sec"), &Type::fun(Type::Unit, Type::labeled(l("Sec"), Type::Unit))).unwrap());
    assert!(protects_pure(&p, &l("Sec"), &Type::labeled(l("Pub"), Type::labeled(l("Sec"), Type::Unit))).unwrap());

    let lifted = Type::lift(Type::labeled(l("Sec"), Type::Unit));
    assert!(!protects_pure(&policy("Sec", "Sec", Some("Pub")), &l("Sec"), &lifted).unwrap());
    assert!(protects_pure(&policy("Sec", "Sec", Some("Sec")), &l("Sec"), &lifted).unwrap());
}

#[test]
fn pc_examples() {
    let p = policy("Pub", "Pub", None);
    let f = |pc: &str, out: &str| Type::fun_pc(Type::Unit, l(pc), Type::labeled(l(out), Type::Unit));
    assert!(!protects_pc(&p, &l("Sec"), &f("Pub", "Sec")).unwrap());
    assert!(protects_pc(&p, &l("Pub"), &f("Sec", "Pub")).unwrap());
    for x in ["Pub", "Sec"] {
        assert!(protects_pc(&p, &l(x), &Type::labeled(l(x), Type::Unit)).unwrap());
    }
}

#[test]
fn effect_examples() {
    let p = policy("Pub", "Pub", None);
    let f = |eps: EffectSet, out: &str| Type::fun_eff(Type::Unit, eps, Type::labeled(l(out), Type::Unit));
    assert!(!protects_eff(&p, &l("Sec"), &f(EffectSet::W, "Sec")).unwrap());
    for x in ["Pub", "Sec"] {
        assert!(protects_eff(&p, &l(x), &f(EffectSet::R, x)).unwrap());
    }
    let a = Type::labeled(l("Sec"), Type::Unit);
    let b = f(EffectSet::W, "Sec");
    assert!(protects_eff(&p, &l("Sec"), &Type::prod(a.clone(), a.clone())).unwrap());
    assert!(!protects_eff(&p, &l("Sec"), &Type::prod(a, b)).unwrap());
}

#[test]
fn wrong_calculus_is_an_error() {
    let p = policy("Pub", "Pub", None);
    let pc = Type::fun_pc(Type::Unit, l("Pub"), Type::Unit);
    let eff = Type::fun_eff(Type::Unit, EffectSet::R, Type::Unit);
    let pure = Type::fun(Type::Unit, Type::Unit);
    assert!(protects_pure(&p, &l("Pub"), &pc).is_err());
    assert!(protects_pure(&p, &l("Pub"), &eff).is_err());
    assert!(protects_pc(&p, &l("Pub"), &pure).is_err());
    assert!(protects_pc(&p, &l("Pub"), &Type::lift(Type::Unit)).is_err());
    assert!(protects_eff(&p, &l("Pub"), &pc).is_err());
}

fn arb_label() -> impl Strategy<Value = Label> {
    prop::sample::select(vec![l("Bot"), l("A"), l("B"), l("Top")])
}

fn arb_type(system: System) -> BoxedStrategy<Type> {
    Just(Type::Unit)
        .prop_recursive(4, 20, 2, move |inner| {
            let fun: BoxedStrategy<Type> = match system {
                System::Pure => (inner.clone(), inner.clone()).prop_map(|(a, b)| Type::fun(a, b)).boxed(),
                System::Pc => (inner.clone(), arb_label(), inner.clone()).prop_map(|(a, pc, b)| Type::fun_pc(a, pc, b)).boxed(),
                System::Effect => (inner.clone(), 0usize..8, inner.clone())
                    .prop_map(|(a, e, b)| Type::fun_eff(a, EffectSet::RWE.subsets()[e], b))
                    .boxed(),
            };
            let lift: BoxedStrategy<Type> =
                if system == System::Pure { inner.clone().prop_map(Type::lift).boxed() } else { fun.clone() };
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Type::sum(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Type::prod(a, b)),
                fun,
                (arb_label(), inner.clone()).prop_map(|(p, t)| Type::labeled(p, t)),
                (arb_label(), inner.clone()).prop_map(|(p, t)| Type::labeled(p, t)),
                lift,
            ]
        })
        .boxed()
}

#[test]
fn translation_can_gain_protection() {
    // The pc threshold table maps a low pc to a set whose label may sit above it.
    let lat = diamond();
    let p = EffectPolicy::new(lat, Mode::StateExn, l("A"), l("A"), None, ComposeMode::GlobalFlow).unwrap();
    let t = Type::fun_pc(Type::Unit, l("Bot"), Type::labeled(l("A"), Type::Unit));
    let te = pc_to_effect_type(&p, &t).unwrap();
    assert_eq!(te, Type::fun_eff(Type::Unit, EffectSet::RWE, Type::labeled(l("A"), Type::Unit)));
    assert!(!protects_pc(&p, &l("A"), &t).unwrap());
    assert!(protects_eff(&p, &l("A"), &te).unwrap());
}

/// Every valid state/exception policy and every pnt policy over the diamond.
fn diamond_policies() -> Vec<EffectPolicy> {
    let lat = diamond();
    let mut out = Vec::new();
    for a in lat.elements() {
        for b in lat.elements() {
            if let Ok(p) = EffectPolicy::new(lat.clone(), Mode::StateExn, a.clone(), b.clone(), None, ComposeMode::GlobalFlow) {
                out.push(p);
            }
        }
        out.push(
            EffectPolicy::new(lat.clone(), Mode::Pnt, lat.top(), lat.top(), Some(a.clone()), ComposeMode::GlobalFlow).unwrap(),
        );
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn monotone_in_label(
        sys in prop::sample::select(vec![System::Pure, System::Pc, System::Effect]).prop_flat_map(|s| (Just(s), arb_type(s))),
    ) {
        let (system, t) = sys;
        for p in diamond_policies() {
            for hi in p.lattice().elements() {
                if protects(&p, system, hi, &t).unwrap() {
                    for lo in p.lattice().elements().iter().filter(|lo| p.leq(lo, hi)) {
                        prop_assert!(protects(&p, system, lo, &t).unwrap(), "{} {} {}", lo, hi, t);
                    }
                }
            }
        }
    }

    #[test]
    fn pc_translation_preserves_protection(t in arb_type(System::Pc)) {
        for p in diamond_policies() {
            let te = pc_to_effect_type(&p, &t).unwrap();
            for x in p.lattice().elements() {
                if protects_pc(&p, x, &t).unwrap() {
                    prop_assert!(protects_eff(&p, x, &te).unwrap(), "{} {} {}", x, t, te);
                }
            }
        }
    }

    #[test]
    fn protected_effects_give_protected_monads(t in arb_type(System::Effect), e in 0usize..8) {
        for p in diamond_policies() {
            let eps = if p.mode() == Mode::Pnt {
                [EffectSet::EMPTY, EffectSet::PNT][e % 2]
            } else {
                EffectSet::RWE.subsets()[e]
            };
            let t = if p.mode() == Mode::Pnt { strip_effects(&t) } else { t.clone() };
            let sigma = Type::labeled(p.l_state().clone(), Type::Unit);
            let elab = Elab::new(&p, &sigma);
            let pure = elab.monad_type(eps, &elab.pure_type(&t));
            for x in p.lattice().elements() {
                if p.leq(x, &p.effect_label(eps)) && protects_eff(&p, x, &t).unwrap() {
                    prop_assert!(protects_pure(&p, x, &pure).unwrap(), "{} {} {}", x, eps, pure);
                }
            }
        }
    }
}

/// Replace latent effects with ones from the pnt alphabet.
fn strip_effects(t: &Type) -> Type {
    match t {
        Type::Unit => Type::Unit,
        Type::Sum(a, b) => Type::sum(strip_effects(a), strip_effects(b)),
        Type::Prod(a, b) => Type::prod(strip_effects(a), strip_effects(b)),
        Type::FunEff(a, eps, b) => {
            let e = if eps.is_empty() { EffectSet::EMPTY } else { EffectSet::PNT };
            Type::fun_eff(strip_effects(a), e, strip_effects(b))
        }
        Type::Labeled(x, inner) => Type::labeled(x.clone(), strip_effects(inner)),
        other => other.clone(),
    }
}
