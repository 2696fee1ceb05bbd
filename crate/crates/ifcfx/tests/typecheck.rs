use std::sync::Arc;

use ifcfx::effects::{ComposeMode, EffectPolicy, EffectSet, Mode};
use ifcfx::harness::gen::{random_program, Calculus};
use ifcfx::harness::standard_policies;
use ifcfx::labels::{two_point, Label};
use ifcfx::syntax::{name, parse_expr, parse_program, parse_type, Program, Type};
use ifcfx::typecheck::{
    check_effect, check_pc, check_pure, infer_effect, is_pointed, pc_program_to_effect, pc_to_effect_type, validate_sigma, Ctx,
    TypeErrorKind,
};

fn l(s: &str) -> Label {
    Label::new(s)
}

fn ty(s: &str) -> Type {
    parse_type(s).unwrap()
}

fn state_exn(settings: &str) -> EffectPolicy {
    EffectPolicy::from_settings(Arc::new(two_point()), Mode::StateExn, settings.split_whitespace()).unwrap()
}

fn pnt(settings: &str) -> EffectPolicy {
    EffectPolicy::from_settings(Arc::new(two_point()), Mode::Pnt, settings.split_whitespace()).unwrap()
}

fn program(src: &str) -> Program {
    parse_program(src, Some(&two_point())).unwrap()
}

fn ctx_of(p: &Program) -> Ctx {
    Ctx::from_pairs(&p.context)
}

#[test]
fn pointed_types() {
    assert!(is_pointed(&ty("Lift unit")).unwrap());
    assert!(!is_pointed(&ty("unit")).unwrap());
    assert!(is_pointed(&ty("unit -> Lift unit")).unwrap());
    assert!(is_pointed(&ty("L[Sec] Lift unit * Lift unit")).unwrap());
    assert!(!is_pointed(&ty("Lift unit * unit")).unwrap());
    assert!(!is_pointed(&ty("Lift unit + Lift unit")).unwrap());
    assert!(is_pointed(&ty("unit ->[pc Pub] unit")).is_err());
}

#[test]
fn pure_examples() {
    let p = state_exn("");
    let empty = Ctx::new();
    assert_eq!(check_pure(&p, &empty, &parse_expr("label[Sec] ()").unwrap()).unwrap(), ty("L[Sec] unit"));
    let err = check_pure(&p, &empty, &parse_expr("unlabel (label[Sec] ()) as x in x").unwrap()).unwrap_err();
    assert_eq!(err.kind, TypeErrorKind::ProtectionFail);
    assert_eq!(check_pure(&p, &empty, &parse_expr("fix f : Lift unit = lift ()").unwrap()).unwrap(), ty("Lift unit"));
    let err = check_pure(&p, &empty, &parse_expr("fix f : unit = f").unwrap()).unwrap_err();
    assert_eq!(err.kind, TypeErrorKind::NotPointed);
    let err = check_pure(&p, &empty, &parse_expr("seq x = lift () in x").unwrap()).unwrap_err();
    assert_eq!(err.kind, TypeErrorKind::NotPointed);
    assert_eq!(check_pure(&p, &empty, &parse_expr("seq x = lift () in lift x").unwrap()).unwrap(), ty("Lift unit"));
    assert_eq!(check_pure(&p, &empty, &parse_expr("y").unwrap()).unwrap_err().kind, TypeErrorKind::UnboundVar);
    assert_eq!(check_pure(&p, &empty, &parse_expr("read").unwrap()).unwrap_err().kind, TypeErrorKind::WrongCalculus);
    assert_eq!(check_pure(&p, &empty, &parse_expr("fst ()").unwrap()).unwrap_err().kind, TypeErrorKind::Mismatch);
}

#[test]
fn exception_write_leak_needs_exn_below_state() {
    let src = include_str!("../programs/exn_write_leak.sfl");
    let prog = program(src);
    let illegal = EffectPolicy::new(Arc::new(two_point()), Mode::StateExn, l("Pub"), l("Sec"), None, ComposeMode::GlobalFlow);
    assert!(illegal.is_err());

    // Legal policy: the throw sits under a Sec pc, above lExn.
    let legal = state_exn("lState=Pub lExn=Pub");
    let err = check_pc(&legal, &prog.sigma, &ctx_of(&prog), &l("Pub"), &prog.body).unwrap_err();
    assert_eq!(err.kind, TypeErrorKind::PcTooHigh);
    let err = infer_effect(&legal, &prog.sigma, &ctx_of(&prog), &prog.body).unwrap_err();
    assert_eq!(err.kind, TypeErrorKind::ProtectionFail);
    assert!(err.location.starts_with("unlabel h"), "{err}");

    // Partial composition admits lExn above lState, and only the effect system notices.
    let partial = state_exn("lState=Pub lExn=Sec mode=partial");
    assert!(check_pc(&partial, &prog.sigma, &ctx_of(&prog), &l("Pub"), &prog.body).is_ok());
    let err = infer_effect(&partial, &prog.sigma, &ctx_of(&prog), &prog.body).unwrap_err();
    assert_eq!(err.kind, TypeErrorKind::EffectCompositionFail);

    // With h public and a legal policy the program is fine.
    let public =
        src.replace("var h : L[Sec]", "var h : L[Pub]").replace("L[Sec] unit", "L[Pub] unit").replace("label[Sec]", "label[Pub]");
    let prog = program(&public);
    assert_eq!(check_pc(&legal, &prog.sigma, &ctx_of(&prog), &l("Pub"), &prog.body).unwrap(), ty("unit"));
    let (t, eps) = infer_effect(&legal, &prog.sigma, &ctx_of(&prog), &prog.body).unwrap();
    assert_eq!((t, eps), (ty("unit"), EffectSet::WE));
}

#[test]
fn write_at_high_pc() {
    let p = state_exn("lState=Pub lExn=Pub");
    let sigma = ty("L[Pub] unit");
    let e = parse_expr("write (label[Pub] ())").unwrap();
    assert_eq!(check_pc(&p, &sigma, &Ctx::new(), &l("Sec"), &e).unwrap_err().kind, TypeErrorKind::PcTooHigh);
    assert_eq!(check_pc(&p, &sigma, &Ctx::new(), &l("Pub"), &e).unwrap(), ty("unit"));
}

#[test]
fn pc_application_premise() {
    let p = state_exn("lState=Pub lExn=Pub");
    let sigma = ty("L[Pub] unit");
    let f = parse_expr("(fun (u:unit) ->[pc Pub] write (label[Pub] ())) ()").unwrap();
    assert!(check_pc(&p, &sigma, &Ctx::new(), &l("Pub"), &f).is_ok());
    assert_eq!(check_pc(&p, &sigma, &Ctx::new(), &l("Sec"), &f).unwrap_err().kind, TypeErrorKind::PcTooHigh);
    // An unannotated lambda gets the highest pc its body allows.
    let g = parse_expr("fun (u:unit) -> read").unwrap();
    assert_eq!(check_pc(&p, &sigma, &Ctx::new(), &l("Pub"), &g).unwrap(), ty("unit ->[pc Sec] L[Pub] unit"));
    let g = parse_expr("fun (u:unit) -> write (label[Pub] ())").unwrap();
    assert_eq!(check_pc(&p, &sigma, &Ctx::new(), &l("Pub"), &g).unwrap(), ty("unit ->[pc Pub] unit"));
}

#[test]
fn try_catch_needs_protected_result() {
    let p = state_exn("lState=Pub lExn=Pub");
    let sigma = ty("L[Pub] unit");
    let ok = parse_expr("try throw : L[Pub] unit catch label[Pub] ()").unwrap();
    assert_eq!(infer_effect(&p, &sigma, &Ctx::new(), &ok).unwrap(), (ty("L[Pub] unit"), EffectSet::EMPTY));
    let bad = parse_expr("try throw : unit catch ()").unwrap();
    assert_eq!(infer_effect(&p, &sigma, &Ctx::new(), &bad).unwrap_err().kind, TypeErrorKind::ProtectionFail);
    assert_eq!(check_pc(&p, &sigma, &Ctx::new(), &l("Pub"), &bad).unwrap_err().kind, TypeErrorKind::ProtectionFail);
}

#[test]
fn effect_inference_examples() {
    let p = state_exn("lState=Pub lExn=Pub");
    let rot = program(include_str!("../programs/read_or_throw.sfl"));
    let (t, eps) = infer_effect(&p, &rot.sigma, &ctx_of(&rot), &rot.body).unwrap();
    assert_eq!(t, rot.sigma);
    assert_eq!(eps, EffectSet::RE);

    let lr = program(include_str!("../programs/labeled_read.sfl"));
    let (t, eps) = infer_effect(&p, &lr.sigma, &ctx_of(&lr), &lr.body).unwrap();
    assert_eq!(t, ty("L[Sec] L[Pub] (unit + unit)"));
    assert_eq!(eps, EffectSet::R);

    let n = pnt("lPnt=Sec");
    let e = parse_expr("fix f : unit = f").unwrap();
    assert_eq!(infer_effect(&n, &Type::Unit, &Ctx::new(), &e).unwrap(), (Type::Unit, EffectSet::PNT));
    // Any fixpoint counts as possibly diverging, even when its body is a value.
    let e = parse_expr("fix f : unit ->[eff {}] unit = fun (x:unit) ->[eff {}] x").unwrap();
    let (_, eps) = infer_effect(&n, &Type::Unit, &Ctx::new(), &e).unwrap();
    assert_eq!(eps, EffectSet::PNT);
}

#[test]
fn check_at_given_effect() {
    let p = state_exn("lState=Pub lExn=Pub");
    let sigma = ty("L[Pub] unit");
    assert_eq!(check_effect(&p, &sigma, &Ctx::new(), &parse_expr("read").unwrap(), EffectSet::RWE).unwrap(), sigma);
    let err = check_effect(&p, &sigma, &Ctx::new(), &parse_expr("read").unwrap(), EffectSet::EMPTY).unwrap_err();
    assert_eq!(err.kind, TypeErrorKind::Mismatch);
    let unit = state_exn("lState=Pub lExn=Pub");
    let e = parse_expr("write ()").unwrap();
    assert_eq!(check_effect(&unit, &Type::Unit, &Ctx::new(), &e, EffectSet::W).unwrap(), Type::Unit);
}

#[test]
fn type_translation_table() {
    let p = state_exn("lState=Pub lExn=Pub");
    assert_eq!(pc_to_effect_type(&p, &ty("unit ->[pc Pub] unit")).unwrap(), ty("unit ->[eff {R,W,E}] unit"));
    assert_eq!(pc_to_effect_type(&p, &ty("unit ->[pc Sec] unit")).unwrap(), ty("unit ->[eff {R}] unit"));
    let q = state_exn("lState=Sec lExn=Pub");
    assert_eq!(pc_to_effect_type(&q, &ty("unit ->[pc Sec] unit")).unwrap(), ty("unit ->[eff {R,W}] unit"));
    assert_eq!(pc_to_effect_type(&q, &ty("L[Sec] (unit ->[pc Pub] unit)")).unwrap(), ty("L[Sec] (unit ->[eff {R,W,E}] unit)"));
    let n = pnt("lPnt=Pub");
    assert_eq!(pc_to_effect_type(&n, &ty("unit ->[pc Sec] unit")).unwrap(), ty("unit ->[eff {}] unit"));
    assert_eq!(pc_to_effect_type(&n, &ty("unit ->[pc Pub] unit")).unwrap(), ty("unit ->[eff {PNT}] unit"));
    assert!(pc_to_effect_type(&n, &ty("unit -> unit")).is_err());
    // Under valid global-flow policies the table is gamma.
    for pol in standard_policies(Mode::StateExn).into_iter().chain(standard_policies(Mode::Pnt)) {
        for pc in pol.lattice().elements() {
            let t = Type::fun_pc(Type::Unit, pc.clone(), Type::Unit);
            assert_eq!(pc_to_effect_type(&pol, &t).unwrap(), Type::fun_eff(Type::Unit, pol.gamma(pc), Type::Unit));
        }
    }
}

#[test]
fn state_type_validation() {
    let p = state_exn("lState=Pub lExn=Pub");
    assert!(validate_sigma(&p, &ty("L[Pub] (unit + unit)")).is_ok());
    assert_eq!(validate_sigma(&p, &ty("unit + unit")).unwrap_err().kind, TypeErrorKind::StateTypeInvalid);
    assert_eq!(validate_sigma(&p, &ty("L[Pub] (unit -> unit)")).unwrap_err().kind, TypeErrorKind::StateTypeInvalid);
    let q = state_exn("lState=Sec lExn=Pub");
    assert!(validate_sigma(&q, &ty("L[Pub] unit")).is_err());
    assert!(validate_sigma(&q, &ty("L[Sec] unit * L[Sec] unit")).is_ok());
}

/// Generated pc programs for every standard policy of `calculus`.
fn corpus(calculus: Calculus, per_policy: u64) -> Vec<(EffectPolicy, Program, Label, Type)> {
    let mut out = Vec::new();
    for (i, pol) in standard_policies(calculus.mode()).into_iter().enumerate() {
        for seed in 0..per_policy {
            let gamma = [(name("h"), Type::labeled(pol.lattice().top(), Type::sum(Type::Unit, Type::Unit)))];
            if let Ok(g) = random_program(1000 * i as u64 + seed, 12, calculus, &pol, &gamma) {
                out.push((pol.clone(), g.program, g.pc, g.ty));
            }
        }
    }
    out
}

#[test]
fn pc_checking_is_closed_under_lower_pcs() {
    for calculus in [Calculus::StateExn, Calculus::Pnt] {
        let progs = corpus(calculus, 15);
        assert!(progs.len() > 100);
        for (pol, prog, pc, t) in progs {
            let ctx = ctx_of(&prog);
            assert_eq!(check_pc(&pol, &prog.sigma, &ctx, &pc, &prog.body).as_ref(), Ok(&t));
            for lower in pol.lattice().elements().iter().filter(|x| pol.leq(x, &pc)) {
                assert_eq!(check_pc(&pol, &prog.sigma, &ctx, lower, &prog.body).as_ref(), Ok(&t), "{}", prog.body);
            }
        }
    }
}

#[test]
fn principal_effect_is_least() {
    for calculus in [Calculus::StateExn, Calculus::Pnt] {
        for (pol, prog, _, t) in corpus(calculus, 10) {
            let body = pc_program_to_effect(&pol, &prog.body).unwrap();
            let ctx = Ctx::from_pairs(&prog.context).map_types(|t| pc_to_effect_type(&pol, t)).unwrap();
            let (te, min) = infer_effect(&pol, &prog.sigma, &ctx, &body).unwrap();
            assert_eq!(te, pc_to_effect_type(&pol, &t).unwrap());
            for eps in pol.mode().alphabet().subsets() {
                let accepted = check_effect(&pol, &prog.sigma, &ctx, &body, eps).is_ok();
                assert_eq!(accepted, min.is_subset(eps), "{eps} vs {min}: {body}");
            }
        }
    }
}
