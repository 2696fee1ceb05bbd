//! Bounded checkers for ℓ-equivalence: plain, state-and-exception, and termination-sensitive.

use std::fmt;

use crate::effects::EffectPolicy;
use crate::eval::{run, value_eq, Outcome, DEFAULT_FUEL};
use crate::harness::contexts::{accepts, enumerate_contexts, enumerate_values, plug, ContextSpec, Grammar};
use crate::labels::Label;
use crate::syntax::{Expr, Type};

/// A context that separates two programs, with what each side produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub context: Expr,
    pub state: Option<Expr>,
    pub left: Outcome,
    pub right: Outcome,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "context `{}`", self.context)?;
        if let Some(s) = &self.state {
            write!(f, " from state `{s}`")?;
        }
        write!(f, ": {} vs {}", self.left, self.right)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// No enumerated context separates the programs. `timeouts` counts runs cut off by fuel;
    /// when it is nonzero the verdict rests on fuel-bounded divergence evidence.
    Equivalent {
        contexts: usize,
        bound: usize,
        timeouts: usize,
    },
    Distinguished(Box<Witness>),
    /// Nothing separated the programs, but some runs were cut off and could not be compared.
    Inconclusive {
        contexts: usize,
        bound: usize,
        timeouts: usize,
    },
}

impl Verdict {
    pub fn is_distinguished(&self) -> bool {
        matches!(self, Verdict::Distinguished(_))
    }

    pub fn witness(&self) -> Option<&Witness> {
        match self {
            Verdict::Distinguished(w) => Some(w),
            _ => None,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Equivalent { contexts, bound, timeouts: 0 } => {
                write!(f, "equivalent ({contexts} contexts, size <= {bound})")
            }
            Verdict::Equivalent { contexts, bound, timeouts } => {
                write!(f, "equivalent ({contexts} contexts, size <= {bound}; {timeouts} runs hit fuel)")
            }
            Verdict::Distinguished(w) => write!(f, "distinguished by {w}"),
            Verdict::Inconclusive { contexts, bound, timeouts } => {
                write!(f, "inconclusive ({contexts} contexts, size <= {bound}; {timeouts} runs hit fuel)")
            }
        }
    }
}

/// What an attacker sees of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Observer {
    /// Values of terminating runs.
    Values,
    /// Output and/or final state, by the attacker's clearance.
    StateExn { output: bool, state: bool },
    /// Values plus whether the run terminated.
    TerminationSensitive,
}

enum Cmp {
    Same,
    Differ,
    /// The comparison needs a run that was cut off.
    Unknown,
}

fn same_value(a: &Expr, b: &Expr) -> bool {
    value_eq(a, b).unwrap_or(false)
}

fn compare(obs: Observer, a: &Outcome, b: &Outcome) -> Cmp {
    use Outcome::*;
    if let (Stuck(_), _) | (_, Stuck(_)) = (a, b) {
        return if a == b { Cmp::Same } else { Cmp::Differ };
    }
    match obs {
        Observer::Values => match (a, b) {
            (Val(x), Val(y)) => bool_cmp(same_value(x, y)),
            _ => Cmp::Unknown,
        },
        Observer::TerminationSensitive => match (a, b) {
            (Val(x), Val(y)) => bool_cmp(same_value(x, y)),
            (Timeout, Timeout) => Cmp::Same,
            _ => Cmp::Differ,
        },
        Observer::StateExn { output, state } => {
            if a.is_timeout() || b.is_timeout() {
                return Cmp::Unknown;
            }
            if output {
                let same_out = match (a, b) {
                    (ValWithState(x, _), ValWithState(y, _)) => same_value(x, y),
                    (Thrown(_), Thrown(_)) => true,
                    _ => false,
                };
                if !same_out {
                    return Cmp::Differ;
                }
            }
            if state {
                let same_state = match (a.final_state(), b.final_state()) {
                    (Some(x), Some(y)) => same_value(x, y),
                    _ => false,
                };
                if !same_state {
                    return Cmp::Differ;
                }
            }
            Cmp::Same
        }
    }
}

fn bool_cmp(b: bool) -> Cmp {
    if b {
        Cmp::Same
    } else {
        Cmp::Differ
    }
}

/// Shared driver: plug both programs into every context, run them from every state, compare.
fn check(
    policy: &EffectPolicy,
    sigma: &Type,
    e1: &Expr,
    e2: &Expr,
    spec: &ContextSpec,
    contexts: &[Expr],
    obs: Observer,
    fuel: u64,
) -> Verdict {
    let states: Vec<Option<Expr>> = if spec.grammar == Grammar::StateExn {
        enumerate_values(sigma).map(|vs| vs.into_iter().map(Some).collect()).unwrap_or_default()
    } else {
        vec![None]
    };
    let obs_ty = spec.observation_type();
    let mut tried = 0;
    let mut timeouts = 0;
    let mut unknown = false;
    for c in contexts {
        let (p1, p2) = (plug(c, e1), plug(c, e2));
        if accepts(policy, sigma, spec.grammar, &obs_ty, &p1).is_none()
            || accepts(policy, sigma, spec.grammar, &obs_ty, &p2).is_none()
        {
            continue;
        }
        tried += 1;
        for s in &states {
            let (o1, _) = run(&p1, s.clone(), fuel);
            let (o2, _) = run(&p2, s.clone(), fuel);
            timeouts += usize::from(o1.is_timeout()) + usize::from(o2.is_timeout());
            match compare(obs, &o1, &o2) {
                Cmp::Same => {}
                Cmp::Unknown => unknown = true,
                Cmp::Differ => {
                    return Verdict::Distinguished(Box::new(Witness {
                        context: c.clone(),
                        state: s.clone(),
                        left: o1,
                        right: o2,
                    }))
                }
            }
        }
    }
    if unknown {
        Verdict::Inconclusive { contexts: tried, bound: spec.size_bound, timeouts }
    } else {
        Verdict::Equivalent { contexts: tried, bound: spec.size_bound, timeouts }
    }
}

/// Contexts for an equivalence check; callers checking many program pairs at one hole type
/// can enumerate once and use the `_with` variants.
pub fn contexts_for(policy: &EffectPolicy, sigma: &Type, spec: &ContextSpec) -> Vec<Expr> {
    enumerate_contexts(policy, sigma, spec)
}

fn spec(hole_type: &Type, atk: &Label, bound: usize, grammar: Grammar) -> ContextSpec {
    ContextSpec { hole_type: hole_type.clone(), output_label: atk.clone(), size_bound: bound, grammar }
}

/// Pure-calculus ℓ-equivalence of closed programs of type `hole_type`.
pub fn check_l_equiv(policy: &EffectPolicy, e1: &Expr, e2: &Expr, hole_type: &Type, atk: &Label, bound: usize) -> Verdict {
    let spec = spec(hole_type, atk, bound, Grammar::Pure);
    let cs = contexts_for(policy, &Type::Unit, &spec);
    check_l_equiv_with(policy, e1, e2, &spec, &cs, DEFAULT_FUEL)
}

pub fn check_l_equiv_with(
    policy: &EffectPolicy,
    e1: &Expr,
    e2: &Expr,
    spec: &ContextSpec,
    contexts: &[Expr],
    fuel: u64,
) -> Verdict {
    check(policy, &Type::Unit, e1, e2, spec, contexts, Observer::Values, fuel)
}

/// State-and-exception ℓ-equivalence: outputs are compared when `lExn ⊑ ℓ_Atk`, final states
/// when `lState ⊑ ℓ_Atk`, over every value of `sigma`.
pub fn check_state_exn_equiv(
    policy: &EffectPolicy,
    sigma: &Type,
    e1: &Expr,
    e2: &Expr,
    hole_type: &Type,
    atk: &Label,
    bound: usize,
) -> Verdict {
    let spec = spec(hole_type, atk, bound, Grammar::StateExn);
    let cs = contexts_for(policy, sigma, &spec);
    check_state_exn_equiv_with(policy, sigma, e1, e2, &spec, &cs, DEFAULT_FUEL)
}

pub fn check_state_exn_equiv_with(
    policy: &EffectPolicy,
    sigma: &Type,
    e1: &Expr,
    e2: &Expr,
    spec: &ContextSpec,
    contexts: &[Expr],
    fuel: u64,
) -> Verdict {
    let atk = &spec.output_label;
    let obs = Observer::StateExn { output: policy.leq(policy.l_exn(), atk), state: policy.leq(policy.l_state(), atk) };
    check(policy, sigma, e1, e2, spec, contexts, obs, fuel)
}

/// Termination-sensitive ℓ-equivalence for attackers that can see `lPnt`; others get the
/// termination-insensitive comparison.
pub fn check_ts_equiv(policy: &EffectPolicy, e1: &Expr, e2: &Expr, hole_type: &Type, atk: &Label, bound: usize) -> Verdict {
    let spec = spec(hole_type, atk, bound, Grammar::Pnt);
    let cs = contexts_for(policy, &Type::Unit, &spec);
    check_ts_equiv_with(policy, e1, e2, &spec, &cs, DEFAULT_FUEL)
}

pub fn check_ts_equiv_with(
    policy: &EffectPolicy,
    e1: &Expr,
    e2: &Expr,
    spec: &ContextSpec,
    contexts: &[Expr],
    fuel: u64,
) -> Verdict {
    let obs = if policy.leq(policy.l_pnt(), &spec.output_label) { Observer::TerminationSensitive } else { Observer::Values };
    check(policy, &Type::Unit, e1, e2, spec, contexts, obs, fuel)
}
