//! Named verification suites over generated programs and shipped lattices.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::effects::{ComposeMode, Effect, EffectPolicy, EffectSet, Mode};
use crate::elaborate::{capture, normalize, Elab};
use crate::eval::{run, value_eq, Outcome, DEFAULT_FUEL};
use crate::harness::contexts::{candidate_contexts, enumerate_values, filter_typed, ContextSpec, Grammar, MAX_STATE_VALUES};
use crate::harness::equiv::{check_l_equiv_with, check_state_exn_equiv_with, check_ts_equiv_with, Verdict};
use crate::harness::gen::{Calculus, GenError, Generated, Generator};
use crate::harness::{describe_policy, shipped_lattices, standard_policies, Report};
use crate::labels::{coproduct_with_top, inl_label, inr_label, Label, LabelLattice};
use crate::syntax::{name, subst, Expr, Name, Program, Type};
use crate::typecheck::{
    check_effect, check_pc, check_pure, infer_effect, pc_program_to_effect, pc_to_effect_type, validate_sigma, Ctx, TypeError,
};

/// Suite names accepted by [`run_suite`].
pub const SUITES: [&str; 8] = ["ni", "lemmas", "simulation", "galois", "pcbound", "coproduct-demo", "capture", "captured-seq"];

/// Fuel for source runs inside the suites. Translated programs get [`PURE_FUEL_FACTOR`] times as much.
pub const SUITE_FUEL: u64 = 2_000;
pub const PURE_FUEL_FACTOR: u64 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Programs (or policies) per mode.
    pub count: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { seed: 1, count: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown suite `{0}`")]
pub struct UnknownSuite(pub String);

pub fn run_suite(suite: &str, cfg: SuiteConfig) -> Result<Report, UnknownSuite> {
    Ok(match suite {
        "ni" => {
            let mut r = ni_suite(Calculus::Pure, cfg);
            r.extend(ni_suite(Calculus::StateExn, cfg));
            r.extend(ni_suite(Calculus::Pnt, cfg));
            r
        }
        "lemmas" => {
            let mut r = lemma_suite(Calculus::StateExn, cfg);
            r.extend(lemma_suite(Calculus::Pnt, cfg));
            r
        }
        "simulation" => {
            let mut r = simulation_suite(Calculus::StateExn, cfg);
            r.extend(simulation_suite(Calculus::Pnt, cfg));
            r
        }
        "galois" => galois_suite(cfg),
        "pcbound" => {
            let mut r = pcbound_suite(Calculus::StateExn, cfg);
            r.extend(pcbound_suite(Calculus::Pnt, cfg));
            r
        }
        "coproduct-demo" => coproduct_demo(&crate::labels::two_point()),
        "capture" => {
            let mut r = capture_suite(Calculus::StateExn, cfg);
            r.extend(capture_suite(Calculus::Pnt, cfg));
            r
        }
        "captured-seq" => {
            let mut r = captured_seq_suite(Calculus::StateExn, cfg);
            r.extend(captured_seq_suite(Calculus::Pnt, cfg));
            r
        }
        other => return Err(UnknownSuite(other.to_string())),
    })
}

/// Per-case seed derived from the suite seed.
pub fn case_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn calc_name(c: Calculus) -> &'static str {
    match c {
        Calculus::Pure => "pure",
        Calculus::StateExn => "state-exn",
        Calculus::Pnt => "pnt",
    }
}

/// A generated program with the policy it was generated under.
#[derive(Debug, Clone)]
pub struct Sample {
    pub policy: EffectPolicy,
    pub generated: Generated,
    pub seed: u64,
    pub case: String,
}

/// The `i`-th program of a suite: standard policies are used round-robin.
pub fn sample(calculus: Calculus, seed: u64, i: usize) -> Result<Sample, GenError> {
    let policies = standard_policies(calculus.mode());
    let policy = policies[i % policies.len()].clone();
    let s = case_seed(seed, i);
    let generated = {
        let mut g = Generator::new(&policy, calculus, Generator::default_sigma(&policy), s);
        let size = g.rng().gen_range(4..=24);
        let mut gamma: Vec<(Name, Type)> = Vec::new();
        if g.rng().gen_bool(0.5) {
            let l = g.random_label();
            gamma.push((name("h"), Type::labeled(l, Type::bool())));
        }
        if g.rng().gen_ratio(1, 4) {
            gamma.push((name("b"), Type::bool()));
        }
        g.program(&gamma, size)?
    };
    Ok(Sample { policy, generated, seed: s, case: format!("{}-{i}-seed{s}", calc_name(calculus)) })
}

/// The program's context and body in the type-and-effect system.
pub fn to_effect(policy: &EffectPolicy, program: &Program) -> Result<(Vec<(Name, Type)>, Expr), TypeError> {
    let ctx = program
        .context
        .iter()
        .map(|(x, t)| Ok((x.clone(), pc_to_effect_type(policy, t)?)))
        .collect::<Result<Vec<_>, TypeError>>()?;
    Ok((ctx, pc_program_to_effect(policy, &program.body)?))
}

/// Assignments of closed values to the first-order variables of `gamma`, at most `cap`.
pub fn closings(gamma: &[(Name, Type)], cap: usize) -> Vec<Vec<(Name, Expr)>> {
    let mut out: Vec<Vec<(Name, Expr)>> = vec![Vec::new()];
    for (x, t) in gamma {
        let vals = enumerate_values(t).unwrap_or_default();
        let mut next = Vec::new();
        for partial in &out {
            for v in &vals {
                let mut p = partial.clone();
                p.push((x.clone(), v.clone()));
                next.push(p);
            }
        }
        out = next;
        out.truncate(cap);
    }
    out
}

pub fn close(e: &Expr, assignment: &[(Name, Expr)]) -> Expr {
    assignment.iter().fold(e.clone(), |acc, (x, v)| subst(&acc, x, v))
}

fn states_of(policy: &EffectPolicy, sigma: &Type) -> Vec<Option<Expr>> {
    match policy.mode() {
        Mode::StateExn => {
            enumerate_values(sigma).map(|vs| vs.into_iter().take(MAX_STATE_VALUES).map(Some).collect()).unwrap_or_default()
        }
        Mode::Pnt => vec![None],
    }
}

// ---------------------------------------------------------------- decode / simulation

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("pure result `{value}` does not have the shape of the {eps} monad")]
pub struct DecodeShapeError {
    pub eps: EffectSet,
    pub value: String,
}

/// Read the effectful outcome back from a monadic value `m` of `M_ε(τ)` run from state `s`.
pub fn decode(policy: &EffectPolicy, eps: EffectSet, m: &Expr, s: Option<&Expr>, fuel: u64) -> Result<Outcome, DecodeShapeError> {
    let bad = |v: &Expr| DecodeShapeError { eps, value: v.to_string() };
    let with_state = |v: Expr, st: Option<Expr>| match st {
        Some(st) => Outcome::ValWithState(v, st),
        None => Outcome::Val(v),
    };
    let exn = |x: &Expr, st: Option<Expr>| -> Result<Outcome, DecodeShapeError> {
        match x {
            Expr::LabelE(l, inner) if l == policy.l_exn() => match &**inner {
                Expr::Inl(u, _) if **u == Expr::UnitVal => Ok(Outcome::Thrown(st)),
                Expr::Inr(v, _) => Ok(with_state((**v).clone(), st)),
                _ => Err(bad(x)),
            },
            _ => Err(bad(x)),
        }
    };
    let n = normalize(eps);
    let applied = |m: &Expr| -> Result<Option<Expr>, DecodeShapeError> {
        let st = s.ok_or_else(|| bad(m))?;
        match run(&Expr::App(Box::new(m.clone()), Box::new(st.clone())), None, fuel).0 {
            Outcome::Val(v) => Ok(Some(v)),
            Outcome::Timeout => Ok(None),
            _ => Err(bad(m)),
        }
    };
    let st = s.cloned();
    if n.is_empty() {
        return Ok(with_state(m.clone(), st));
    }
    if n == EffectSet::PNT {
        return match m {
            Expr::LiftE(v) => Ok(with_state((**v).clone(), st)),
            _ => Err(bad(m)),
        };
    }
    if n == EffectSet::E {
        return exn(m, st);
    }
    let Some(r) = applied(m)? else { return Ok(Outcome::Timeout) };
    if n == EffectSet::R {
        Ok(with_state(r, st))
    } else if n == EffectSet::RE {
        exn(&r, st)
    } else if n == EffectSet::RW {
        match r {
            Expr::Pair(v, s2) => Ok(with_state(*v, Some(*s2))),
            other => Err(bad(&other)),
        }
    } else {
        match &r {
            Expr::Pair(x, s2) => exn(x, Some((**s2).clone())),
            other => Err(bad(other)),
        }
    }
}

/// Same observable result; function values are only compared by outcome class.
pub fn outcomes_agree(a: &Outcome, b: &Outcome) -> bool {
    use Outcome::*;
    let same = |x: &Expr, y: &Expr| value_eq(x, y).unwrap_or(true);
    let same_state = |x: &Expr, y: &Expr| value_eq(x, y).unwrap_or(false);
    match (a, b) {
        (Val(x), Val(y)) => same(x, y),
        (ValWithState(x, s), ValWithState(y, t)) => same(x, y) && same_state(s, t),
        (Thrown(None), Thrown(None)) | (Timeout, Timeout) => true,
        (Thrown(Some(s)), Thrown(Some(t))) => same_state(s, t),
        _ => false,
    }
}

/// Compare effectful evaluation of `e` with decoded evaluation of its capture, for every
/// closing of `gamma` and every state. Returns the number of (closing, state) pairs checked.
pub fn check_simulation(
    policy: &EffectPolicy,
    sigma: &Type,
    gamma: &[(Name, Type)],
    e: &Expr,
    fuel: u64,
) -> Result<usize, String> {
    let (term, _, eps) = capture(policy, sigma, &Ctx::from_pairs(gamma), e).map_err(|err| err.to_string())?;
    let mut checked = 0;
    for assignment in closings(gamma, 16) {
        let src = close(e, &assignment);
        let pure = close(&term, &assignment);
        let (pure_out, _) = run(&pure, None, fuel * PURE_FUEL_FACTOR);
        for s in states_of(policy, sigma) {
            let (source, _) = run(&src, s.clone(), fuel);
            if source.is_stuck() {
                return Err(format!("well-typed program got {source}"));
            }
            let decoded = match &pure_out {
                Outcome::Val(m) => decode(policy, eps, m, s.as_ref(), fuel * PURE_FUEL_FACTOR).map_err(|e| e.to_string())?,
                Outcome::Timeout => Outcome::Timeout,
                other => return Err(format!("translated program ended with {other}")),
            };
            if !outcomes_agree(&source, &decoded) {
                return Err(format!(
                    "closing {} from state {}: source {source}, translation {decoded}",
                    assignment.iter().map(|(x, v)| format!("{x}={v}")).collect::<Vec<_>>().join(","),
                    s.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

pub fn simulation_suite(calculus: Calculus, cfg: SuiteConfig) -> Report {
    let mut report = Report::new();
    for i in 0..cfg.count {
        let smp = match sample(calculus, cfg.seed, i) {
            Ok(s) => s,
            Err(e) => {
                report.push("simulation", format!("{}-{i}", calc_name(calculus)), false, e.to_string());
                continue;
            }
        };
        let prog = &smp.generated.program;
        let result = to_effect(&smp.policy, prog)
            .map_err(|e| e.to_string())
            .and_then(|(gamma, e)| check_simulation(&smp.policy, &prog.sigma, &gamma, &e, SUITE_FUEL));
        match result {
            Ok(n) => report.push("simulation", smp.case, true, format!("{n} runs agree")),
            Err(msg) => report.push("simulation", smp.case, false, format!("{msg}; program `{}`", prog.body)),
        }
    }
    report
}

// ---------------------------------------------------------------- capture

pub fn capture_suite(calculus: Calculus, cfg: SuiteConfig) -> Report {
    let mut report = Report::new();
    for i in 0..cfg.count {
        let smp = match sample(calculus, cfg.seed, i) {
            Ok(s) => s,
            Err(e) => {
                report.push("capture", format!("{}-{i}", calc_name(calculus)), false, e.to_string());
                continue;
            }
        };
        let prog = &smp.generated.program;
        let result = to_effect(&smp.policy, prog).map_err(|e| e.to_string()).and_then(|(gamma, e)| {
            let ctx = Ctx::from_pairs(&gamma);
            let (term, t, eps) = capture(&smp.policy, &prog.sigma, &ctx, &e).map_err(|e| e.to_string())?;
            let sigma = if smp.policy.mode() == Mode::Pnt { Type::Unit } else { prog.sigma.clone() };
            let elab = Elab::new(&smp.policy, &sigma);
            let expected = elab.monad_type(eps, &elab.pure_type(&t));
            match check_pure(&smp.policy, &elab.pure_ctx(&ctx), &term) {
                Ok(found) if found == expected => Ok(format!("{found} ! {eps}")),
                Ok(found) => Err(format!("pure type `{found}`, expected `{expected}`")),
                Err(e) => Err(format!("translation rejected: {e}")),
            }
        });
        match result {
            Ok(d) => report.push("capture", smp.case, true, d),
            Err(msg) => report.push("capture", smp.case, false, format!("{msg}; program `{}`", prog.body)),
        }
    }
    report
}

// ---------------------------------------------------------------- lemmas and pc-boundedness

/// Typing facts about one pc-well-typed sample; `Err` names the violated property.
fn lemma_case(smp: &Sample) -> Result<String, String> {
    let policy = &smp.policy;
    let prog = &smp.generated.program;
    let pc = &smp.generated.pc;
    let (gamma, e) = to_effect(policy, prog).map_err(|e| format!("conversion: {e}"))?;
    let ctx = Ctx::from_pairs(&gamma);
    let (t, eps) = infer_effect(policy, &prog.sigma, &ctx, &e).map_err(|e| format!("effect checking failed: {e}"))?;
    let expected = pc_to_effect_type(policy, &smp.generated.ty).map_err(|e| e.to_string())?;
    if t != expected {
        return Err(format!("effect type `{t}` differs from translated pc type `{expected}`"));
    }
    match policy.mode() {
        Mode::StateExn => {
            if !policy.leq(pc, policy.l_state()) && eps.contains(Effect::W) {
                return Err(format!("pc {pc} ⋢ lState but effect {eps} writes"));
            }
            if !policy.leq(pc, policy.l_exn()) && eps.contains(Effect::E) {
                return Err(format!("pc {pc} ⋢ lExn but effect {eps} throws"));
            }
        }
        Mode::Pnt => {
            if !policy.leq(pc, policy.l_pnt()) {
                if !eps.is_empty() {
                    return Err(format!("pc {pc} ⋢ lPnt but effect is {eps}"));
                }
                for assignment in closings(&gamma, 4) {
                    if run(&close(&e, &assignment), None, DEFAULT_FUEL).0.is_timeout() {
                        return Err(format!("pc {pc} ⋢ lPnt but the program did not terminate within fuel"));
                    }
                }
            }
        }
    }
    // Variance: checking at any lower pc gives the same type.
    let pc_ctx = Ctx::from_pairs(&prog.context);
    for lower in policy.lattice().elements() {
        if policy.leq(lower, pc) {
            match check_pc(policy, &prog.sigma, &pc_ctx, lower, &prog.body) {
                Ok(t2) if t2 == smp.generated.ty => {}
                other => return Err(format!("variance fails at pc {lower}: {other:?}")),
            }
        }
    }
    // Principality: every effect the program checks at contains the inferred one.
    for bound in policy.mode().alphabet().subsets() {
        if check_effect(policy, &prog.sigma, &ctx, &e, bound).is_ok() && !eps.is_subset(bound) {
            return Err(format!("checks at {bound} which does not contain the principal {eps}"));
        }
    }
    Ok(format!("pc {pc}, effect {eps}"))
}

pub fn lemma_suite(calculus: Calculus, cfg: SuiteConfig) -> Report {
    let mut report = Report::new();
    for i in 0..cfg.count {
        match sample(calculus, cfg.seed, i) {
            Ok(smp) => match lemma_case(&smp) {
                Ok(d) => report.push("lemmas", smp.case, true, d),
                Err(d) => report.push("lemmas", smp.case, false, format!("{d}; program `{}`", smp.generated.program.body)),
            },
            Err(e) => report.push("lemmas", format!("{}-{i}", calc_name(calculus)), false, e.to_string()),
        }
    }
    report
}

pub fn pcbound_suite(calculus: Calculus, cfg: SuiteConfig) -> Report {
    let mut report = Report::new();
    for i in 0..cfg.count {
        let smp = match sample(calculus, cfg.seed, i) {
            Ok(s) => s,
            Err(e) => {
                report.push("pcbound", format!("{}-{i}", calc_name(calculus)), false, e.to_string());
                continue;
            }
        };
        let policy = &smp.policy;
        let prog = &smp.generated.program;
        let pc = &smp.generated.pc;
        let result =
            to_effect(policy, prog).and_then(|(gamma, e)| infer_effect(policy, &prog.sigma, &Ctx::from_pairs(&gamma), &e));
        match result {
            Ok((_, eps)) => {
                let bound = policy.effect_label(eps);
                let ok = policy.leq(pc, &bound);
                report.push("pcbound", smp.case, ok, format!("pc {pc} ⊑ label({eps}) = {bound}: {ok}"));
            }
            Err(e) => report.push("pcbound", smp.case, false, e.to_string()),
        }
    }
    report
}

// ---------------------------------------------------------------- Galois connection

fn chain(n: usize) -> LabelLattice {
    let els: Vec<Label> = (0..n).map(|i| Label::new(&format!("c{i}"))).collect();
    let edges = els.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
    LabelLattice::from_parts(els, edges).expect("chain")
}

fn powerset(k: usize) -> LabelLattice {
    let label = |m: usize| Label::new(&format!("s{m:0k$b}"));
    let els: Vec<Label> = (0..1usize << k).map(label).collect();
    let mut edges = Vec::new();
    for a in 0..1usize << k {
        for b in 0..1usize << k {
            if a != b && a & b == a {
                edges.push((label(a), label(b)));
            }
        }
    }
    LabelLattice::from_parts(els, edges).expect("powerset")
}

fn product(m: usize, n: usize) -> LabelLattice {
    let label = |i: usize, j: usize| Label::new(&format!("p{i}_{j}"));
    let mut els = Vec::new();
    let mut edges = Vec::new();
    for i in 0..m {
        for j in 0..n {
            els.push(label(i, j));
            if i + 1 < m {
                edges.push((label(i, j), label(i + 1, j)));
            }
            if j + 1 < n {
                edges.push((label(i, j), label(i, j + 1)));
            }
        }
    }
    LabelLattice::from_parts(els, edges).expect("product")
}

/// A random valid policy over a random small lattice (at most 8 elements).
pub fn random_policy(rng: &mut ChaCha8Rng) -> EffectPolicy {
    let lat = match rng.gen_range(0..4) {
        0 => chain(rng.gen_range(1..=6)),
        1 => powerset(rng.gen_range(1..=3)),
        2 => product(rng.gen_range(2..=3), 2),
        _ => shipped_lattices().choose(rng).expect("nonempty").1.clone(),
    };
    let lat = Arc::new(lat);
    let labels = lat.elements().to_vec();
    loop {
        let mode = if rng.gen_bool(0.7) { Mode::StateExn } else { Mode::Pnt };
        let compose = if mode == Mode::StateExn && rng.gen_bool(0.3) { ComposeMode::Partial } else { ComposeMode::GlobalFlow };
        let st = labels.choose(rng).expect("nonempty").clone();
        let ex = labels.choose(rng).expect("nonempty").clone();
        let pnt = labels.choose(rng).expect("nonempty").clone();
        if let Ok(p) = EffectPolicy::new(lat.clone(), mode, st, ex, Some(pnt), compose) {
            return p;
        }
    }
}

pub fn galois_suite(cfg: SuiteConfig) -> Report {
    let mut report = Report::new();
    for (lname, lat) in shipped_lattices() {
        let lat = Arc::new(lat);
        let labels = lat.elements().to_vec();
        for mode in [Mode::StateExn, Mode::Pnt] {
            for compose in [ComposeMode::GlobalFlow, ComposeMode::Partial] {
                for st in &labels {
                    for ex in &labels {
                        for pnt in &labels {
                            if mode == Mode::Pnt && (st != ex || *st != lat.top()) {
                                continue;
                            }
                            if mode == Mode::StateExn && pnt != &lat.top() {
                                continue;
                            }
                            let Ok(p) = EffectPolicy::new(lat.clone(), mode, st.clone(), ex.clone(), Some(pnt.clone()), compose)
                            else {
                                continue;
                            };
                            let r = p.check_galois();
                            report.push(
                                "galois",
                                format!("{lname} {} {compose:?}", describe_policy(&p)),
                                r.passed(),
                                format!("{} cases, {} failures {:?}", r.cases, r.failures.len(), r.failures),
                            );
                        }
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for i in 0..cfg.count {
        let p = random_policy(&mut rng);
        let r = p.check_galois();
        report.push(
            "galois",
            format!("random-{i} {}", describe_policy(&p)),
            r.passed(),
            format!("{} cases, {} failures {:?}", r.cases, r.failures.len(), r.failures),
        );
    }
    let (passed, detail) = galois_negative_control();
    report.push("galois", "negative-control", passed, detail);
    report
}

/// A policy whose effect label for `{W}` is corrupted to top; the check must reject it.
pub fn galois_negative_control() -> (bool, String) {
    let lat = Arc::new(crate::labels::two_point());
    let publ = Label::new("Pub");
    let good = EffectPolicy::new(lat.clone(), Mode::StateExn, publ.clone(), publ, None, ComposeMode::GlobalFlow).expect("valid");
    let reference = good.clone();
    let top = lat.top();
    let bad = good.with_effect_labels(move |eps| if eps == EffectSet::W { top.clone() } else { reference.effect_label(eps) });
    let r = bad.check_galois();
    match r.failures.first() {
        Some((l, eps)) => (true, format!("corrupted policy rejected; witness ℓ={l}, ε={eps}")),
        None => (false, "corrupted policy passed the Galois check".into()),
    }
}

// ---------------------------------------------------------------- coproduct

/// Build the coproduct-with-top lattice over `base`, and check a write at `pc = inl(lState)`
/// whose effect label `inr(lState)` is incomparable with the pc.
pub fn coproduct_demo(base: &LabelLattice) -> Report {
    let mut report = Report::new();
    let suite = "coproduct-demo";
    let lat = Arc::new(coproduct_with_top(base));
    report.push(suite, "semilattice", true, format!("{} elements, top {}", lat.len(), lat.top()));
    let base_bottom = base.minimal_elements().into_iter().next().expect("nonempty");
    let base_policy = EffectPolicy::new(
        Arc::new(base.clone()),
        Mode::StateExn,
        base_bottom.clone(),
        base_bottom.clone(),
        None,
        ComposeMode::GlobalFlow,
    )
    .expect("valid");
    let l_state = inl_label(base_policy.l_state());
    let l_exn = inl_label(base_policy.l_exn());
    let bp = base_policy.clone();
    let policy = EffectPolicy::new(lat.clone(), Mode::StateExn, l_state.clone(), l_exn, None, ComposeMode::GlobalFlow)
        .expect("valid")
        .with_effect_labels(move |eps| inr_label(&bp.effect_label(eps)));
    let sigma = Type::labeled(l_state.clone(), Type::bool());
    let write =
        |l: &Label| Expr::Write(Box::new(Expr::LabelE(l.clone(), Box::new(Expr::Inl(Box::new(Expr::UnitVal), Type::bool())))));
    let program = write(&l_state);
    let pc = l_state.clone();
    let accepted = validate_sigma(&policy, &sigma).is_ok() && check_pc(&policy, &sigma, &Ctx::new(), &pc, &program).is_ok();
    report.push(suite, "witness-accepted", accepted, format!("`{program}` at pc {pc}"));
    match infer_effect(&policy, &sigma, &Ctx::new(), &program) {
        Ok((_, eps)) => {
            let el = policy.effect_label(eps);
            let up = lat.leq(&pc, &el);
            let down = lat.leq(&el, &pc);
            report.push(suite, "pc-below-effect-label", !up, format!("{pc} ⊑ label({eps}) = {el}: {up}"));
            report.push(suite, "effect-label-below-pc", !down, format!("{el} ⊑ {pc}: {down}"));
        }
        Err(e) => report.push(suite, "effect", false, e.to_string()),
    }
    // Contrast: the same program under the base policy is pc-bounded.
    let base_sigma = Type::labeled(base_policy.l_state().clone(), Type::bool());
    let base_prog = write(base_policy.l_state());
    let contrast = check_pc(&base_policy, &base_sigma, &Ctx::new(), &base_bottom, &base_prog)
        .and_then(|_| infer_effect(&base_policy, &base_sigma, &Ctx::new(), &base_prog));
    match contrast {
        Ok((_, eps)) => {
            let el = base_policy.effect_label(eps);
            let ok = base_policy.leq(&base_bottom, &el);
            report.push(suite, "standard-policy-bounded", ok, format!("{base_bottom} ⊑ label({eps}) = {el}: {ok}"));
        }
        Err(e) => report.push(suite, "standard-policy-bounded", false, e.to_string()),
    }
    report
}

// ---------------------------------------------------------------- noninterference

/// Small first-in-first-out map; context sets are large, so only a few are kept.
struct Bounded<K, V> {
    cap: usize,
    order: VecDeque<K>,
    map: HashMap<K, V>,
}

impl<K: Clone + Eq + std::hash::Hash, V: Clone> Bounded<K, V> {
    fn new(cap: usize) -> Self {
        Bounded { cap, order: VecDeque::new(), map: HashMap::new() }
    }

    fn get_or_insert_with(&mut self, key: K, make: impl FnOnce() -> V) -> V {
        if let Some(v) = self.map.get(&key) {
            return v.clone();
        }
        if self.order.len() == self.cap {
            if let Some(old) = self.order.pop_front() {
                self.map.remove(&old);
            }
        }
        let v = make();
        self.order.push_back(key.clone());
        self.map.insert(key, v.clone());
        v
    }
}

/// Contexts cached by policy, hole type and attacker; the untyped candidates are shared by
/// all policies over one lattice.
struct ContextCache {
    candidates: Bounded<(String, String), Arc<Vec<Expr>>>,
    typed: Bounded<(usize, String), Arc<Vec<Expr>>>,
}

impl Default for ContextCache {
    fn default() -> Self {
        ContextCache { candidates: Bounded::new(4), typed: Bounded::new(12) }
    }
}

impl ContextCache {
    fn get(&mut self, policy_id: usize, policy: &EffectPolicy, sigma: &Type, spec: &ContextSpec) -> Arc<Vec<Expr>> {
        let shape = format!("{} {} {:?} {} {sigma}", spec.hole_type, spec.output_label, spec.grammar, spec.size_bound);
        let candidates = &mut self.candidates;
        self.typed.get_or_insert_with((policy_id, shape.clone()), || {
            let lattice: Vec<&str> = policy.lattice().elements().iter().map(|l| l.name()).collect();
            let cands = candidates
                .get_or_insert_with((lattice.join(","), shape), || Arc::new(candidate_contexts(policy.lattice(), sigma, spec)));
            Arc::new(filter_typed(policy, sigma, spec, cands.to_vec()))
        })
    }
}

/// One NI instance: program `r` with free `x : τ₁` (where `ℓ ◁ τ₁`), two inputs, and the
/// attackers that must not separate `r[p/x]` from `r[q/x]`.
#[derive(Debug, Clone)]
pub struct NiCase {
    pub policy_id: usize,
    pub policy: EffectPolicy,
    pub secret: Label,
    pub r: Generated,
    pub p: Expr,
    pub q: Expr,
    pub attackers: Vec<Label>,
    pub case: String,
}

pub fn ni_case(calculus: Calculus, seed: u64, i: usize) -> Result<NiCase, GenError> {
    let mode = calculus.mode();
    let policies = standard_policies(mode);
    let policy_id = i % policies.len();
    let policy = policies[policy_id].clone();
    let s = case_seed(seed, i);
    let lat = policy.lattice();
    let minimal = lat.minimal_elements();
    let candidates: Vec<Label> = lat.elements().iter().filter(|l| !minimal.contains(l)).cloned().collect();
    let mut g = Generator::new(&policy, calculus, Generator::default_sigma(&policy), s);
    let secret = candidates.choose(g.rng()).expect("lattice has a non-minimal element").clone();
    let hole_t = Type::labeled(secret.clone(), Type::bool());
    let x = name("x");
    let p = Expr::LabelE(secret.clone(), Box::new(Expr::Inl(Box::new(Expr::UnitVal), Type::bool())));
    let q = Expr::LabelE(secret.clone(), Box::new(Expr::Inr(Box::new(Expr::UnitVal), Type::bool())));
    let pc = if g.rng().gen_ratio(2, 3) { minimal[0].clone() } else { g.random_label() };
    let mut targets = vec![Type::bool(), Type::Unit, Type::labeled(g.random_label(), Type::bool())];
    if calculus == Calculus::StateExn {
        targets.push(g.sigma().clone());
    }
    let target = targets.choose(g.rng()).expect("nonempty").clone();
    let size = g.rng().gen_range(4..=16);
    let r = g.program_at(&[(x, hole_t)], &pc, &target, size)?;
    let attackers = lat.elements().iter().filter(|a| !lat.leq(&secret, a)).cloned().collect();
    Ok(NiCase { policy_id, policy, secret, r, p, q, attackers, case: format!("{}-{i}-seed{s}", calc_name(calculus)) })
}

/// Fuel for runs inside equivalence checks.
pub const NI_FUEL: u64 = 1_000;

fn grammar_of(c: Calculus) -> Grammar {
    match c {
        Calculus::Pure => Grammar::Pure,
        Calculus::StateExn => Grammar::StateExn,
        Calculus::Pnt => Grammar::Pnt,
    }
}

pub fn ni_suite(calculus: Calculus, cfg: SuiteConfig) -> Report {
    ni_suite_bounded(calculus, cfg, crate::harness::contexts::DEFAULT_CONTEXT_BOUND)
}

pub fn ni_suite_bounded(calculus: Calculus, cfg: SuiteConfig, bound: usize) -> Report {
    let mut report = Report::new();
    let mut cache = ContextCache::default();
    for i in 0..cfg.count {
        let case = match ni_case(calculus, cfg.seed, i) {
            Ok(c) => c,
            Err(e) => {
                report.push("ni", format!("{}-{i}", calc_name(calculus)), false, e.to_string());
                continue;
            }
        };
        let prog = &case.r.program;
        let e1 = subst(&prog.body, "x", &case.p);
        let e2 = subst(&prog.body, "x", &case.q);
        for atk in &case.attackers {
            let spec = ContextSpec {
                hole_type: case.r.ty.clone(),
                output_label: atk.clone(),
                size_bound: bound,
                grammar: grammar_of(calculus),
            };
            let cs = cache.get(case.policy_id, &case.policy, &prog.sigma, &spec);
            let verdict = match calculus {
                Calculus::Pure => check_l_equiv_with(&case.policy, &e1, &e2, &spec, &cs, NI_FUEL),
                Calculus::StateExn => check_state_exn_equiv_with(&case.policy, &prog.sigma, &e1, &e2, &spec, &cs, NI_FUEL),
                Calculus::Pnt => check_ts_equiv_with(&case.policy, &e1, &e2, &spec, &cs, NI_FUEL),
            };
            let passed = !matches!(verdict, Verdict::Distinguished(_));
            let mut detail = format!("secret {} attacker {atk}: {verdict}", case.secret);
            if !passed {
                detail.push_str(&format!("; r = `{}`; policy {}", prog.body, describe_policy(&case.policy)));
            }
            report.push("ni", format!("{} atk={atk}", case.case), passed, detail);
        }
    }
    let (passed, detail) = ni_negative_control(calculus, bound);
    report.push("ni", format!("{}-negative-control", calc_name(calculus)), passed, detail);
    report
}

/// Two well-typed programs that a `Pub` attacker can tell apart; the checker must say so.
pub fn ni_negative_control(calculus: Calculus, bound: usize) -> (bool, String) {
    let lat = Arc::new(crate::labels::two_point());
    let publ = Label::new("Pub");
    let top = lat.top();
    let t = |text: &str| crate::syntax::parse_expr(text).expect("control program parses");
    let verdict = match calculus {
        Calculus::Pure => {
            let policy = EffectPolicy::new(lat, Mode::StateExn, top.clone(), top, None, ComposeMode::GlobalFlow).expect("valid");
            crate::harness::equiv::check_l_equiv(
                &policy,
                &t("inl () : unit + unit"),
                &t("inr () : unit + unit"),
                &Type::bool(),
                &publ,
                bound,
            )
        }
        Calculus::StateExn => {
            let policy =
                EffectPolicy::new(lat, Mode::StateExn, publ.clone(), publ.clone(), None, ComposeMode::GlobalFlow).expect("valid");
            let sigma = Type::labeled(publ.clone(), Type::bool());
            crate::harness::equiv::check_state_exn_equiv(
                &policy,
                &sigma,
                &t("write (label[Pub] (inl () : unit + unit))"),
                &t("write (label[Pub] (inr () : unit + unit))"),
                &Type::Unit,
                &publ,
                bound,
            )
        }
        Calculus::Pnt => {
            let policy =
                EffectPolicy::new(lat, Mode::Pnt, top.clone(), top, Some(publ.clone()), ComposeMode::GlobalFlow).expect("valid");
            crate::harness::equiv::check_ts_equiv(&policy, &t("()"), &t("fix f : unit = f"), &Type::Unit, &publ, bound)
        }
    };
    (verdict.is_distinguished(), verdict.to_string())
}

// ---------------------------------------------------------------- captured sequencing

/// Both elaboration paths for `let x = p₁ in p₂`, as closed pure terms with their effect.
pub struct SeqPair {
    pub direct: Expr,
    pub composed: Expr,
    pub eps: EffectSet,
    pub result_type: Type,
    pub sigma: Type,
}

fn seq_pair(policy: &EffectPolicy, calculus: Calculus, seed: u64) -> Result<SeqPair, String> {
    let mut g = Generator::new(policy, calculus, Generator::default_sigma(policy), seed);
    let sigma = g.sigma().clone();
    let pc = policy.lattice().minimal_elements()[0].clone();
    let t1 = g.random_first_order(1);
    let t2 = g.random_first_order(1);
    let s1 = g.rng().gen_range(2..=12);
    let s2 = g.rng().gen_range(2..=12);
    let p1 = g.program_at(&[], &pc, &t1, s1).map_err(|e| e.to_string())?;
    let x = name("x");
    let p2 = g.program_at(&[(x.clone(), t1.clone())], &pc, &t2, s2).map_err(|e| e.to_string())?;
    let (_, e1) = to_effect(policy, &p1.program).map_err(|e| e.to_string())?;
    let (gamma2, e2) = to_effect(policy, &p2.program).map_err(|e| e.to_string())?;
    let et1 = pc_to_effect_type(policy, &t1).map_err(|e| e.to_string())?;
    let et2 = pc_to_effect_type(policy, &t2).map_err(|e| e.to_string())?;
    let elab_sigma = if calculus == Calculus::Pnt { Type::Unit } else { sigma };
    let elab = Elab::new(policy, &elab_sigma);
    let (m1, _, eps1) = elab.capture(&Ctx::new(), &e1).map_err(|e| e.to_string())?;
    let (m2, _, eps2) = elab.capture(&Ctx::from_pairs(&gamma2), &e2).map_err(|e| e.to_string())?;
    let eps = eps1.union(eps2);
    if !policy.compose(&[eps1, eps2], eps) {
        return Err(format!("effects {eps1} and {eps2} do not compose"));
    }
    let let_term = Expr::Let(x.clone(), Box::new(e1), Box::new(e2));
    let (direct, _, eps_direct) = elab.capture(&Ctx::new(), &let_term).map_err(|e| e.to_string())?;
    if eps_direct != eps {
        return Err(format!("let has effect {eps_direct}, expected {eps}"));
    }
    let (pt1, pt2) = (elab.pure_type(&et1), elab.pure_type(&et2));
    let c1 = Expr::App(Box::new(elab.coerce(eps1, eps, &pt1).map_err(|e| e.to_string())?), Box::new(m1));
    let c2 = Expr::App(Box::new(elab.coerce(eps2, eps, &pt2).map_err(|e| e.to_string())?), Box::new(m2));
    let k = Expr::Lam(x, pt1.clone(), None, Box::new(c2));
    let composed = Expr::App(Box::new(Expr::App(Box::new(elab.bind(eps, &pt1, &pt2)), Box::new(c1))), Box::new(k));
    Ok(SeqPair { direct, composed, eps, result_type: pt2, sigma: elab_sigma })
}

/// Run a closed monadic term from every state (or once when it does not read the state).
fn observe(m: &Expr, eps: EffectSet, states: &[Expr], fuel: u64) -> Vec<Outcome> {
    if normalize(eps).contains(Effect::R) {
        states.iter().map(|s| run(&Expr::App(Box::new(m.clone()), Box::new(s.clone())), None, fuel).0).collect()
    } else {
        vec![run(m, None, fuel).0]
    }
}

pub fn captured_seq_suite(calculus: Calculus, cfg: SuiteConfig) -> Report {
    let mut report = Report::new();
    let policies = standard_policies(calculus.mode());
    for i in 0..cfg.count {
        let policy = &policies[i % policies.len()];
        let s = case_seed(cfg.seed, i);
        let case = format!("{}-{i}-seed{s}", calc_name(calculus));
        let pair = match seq_pair(policy, calculus, s) {
            Ok(p) => p,
            Err(msg) => {
                report.push("captured-seq", case, false, msg);
                continue;
            }
        };
        let states = enumerate_values(&pair.sigma).unwrap_or_default();
        let fuel = SUITE_FUEL * PURE_FUEL_FACTOR;
        let a = observe(&pair.direct, pair.eps, &states, fuel);
        let b = observe(&pair.composed, pair.eps, &states, fuel);
        let agree = a.iter().zip(&b).all(|(x, y)| match (x, y) {
            (Outcome::Val(u), Outcome::Val(v)) => value_eq(u, v).unwrap_or(true),
            (Outcome::Timeout, Outcome::Timeout) => true,
            _ => false,
        });
        let detail = if agree {
            format!("{} runs agree at {} ! {}", a.len(), pair.result_type, pair.eps)
        } else {
            format!(
                "direct {:?} vs composed {:?}",
                a.iter().map(|o| o.to_string()).collect::<Vec<_>>(),
                b.iter().map(|o| o.to_string()).collect::<Vec<_>>()
            )
        };
        report.push("captured-seq", case, agree, detail);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_cache_evicts_oldest() {
        let mut c: Bounded<u8, u8> = Bounded::new(2);
        assert_eq!(c.get_or_insert_with(1, || 10), 10);
        assert_eq!(c.get_or_insert_with(2, || 20), 20);
        assert_eq!(c.get_or_insert_with(1, || 99), 10);
        assert_eq!(c.get_or_insert_with(3, || 30), 30);
        assert_eq!(c.get_or_insert_with(1, || 11), 11);
        assert_eq!(c.map.len(), 2);
    }

    #[test]
    fn case_seeds_differ() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|i| case_seed(1, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
